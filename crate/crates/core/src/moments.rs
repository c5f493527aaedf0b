//! Geometric, central and differential moments as pixel-center sums.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::diffops::{DerivativeStack, Jet};
use crate::field::pixel_center;
use crate::raster::Raster;
use crate::sum::CompensatedSum;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Centroid {
    pub x: f64,
    pub y: f64,
}

impl From<Centroid> for (f64, f64) {
    fn from(c: Centroid) -> Self {
        (c.x, c.y)
    }
}

/// Sums `row_terms(row)` (one partial vector per row) in a fixed row order.
pub(crate) fn reduce_rows<F>(height: usize, width: usize, row_terms: F) -> Vec<f64>
where
    F: Fn(usize) -> Vec<CompensatedSum> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    let partials: Vec<Vec<CompensatedSum>> = {
        use rayon::prelude::*;
        // Small images are not worth the fork.
        if height * width < 4096 {
            (0..height).map(&row_terms).collect()
        } else {
            (0..height).into_par_iter().map(&row_terms).collect()
        }
    };
    #[cfg(not(feature = "parallel"))]
    let partials: Vec<Vec<CompensatedSum>> = {
        let _ = width;
        (0..height).map(&row_terms).collect()
    };
    let len = partials.first().map_or(0, Vec::len);
    let mut totals = vec![CompensatedSum::new(); len];
    for row in &partials {
        for (total, part) in totals.iter_mut().zip(row) {
            total.add(part.value());
        }
    }
    totals.iter().map(CompensatedSum::value).collect()
}

/// Raw geometric moment `m_pq`.
pub fn geometric_moment(raster: &Raster, p: u32, q: u32) -> f64 {
    let w = raster.width();
    reduce_rows(raster.height(), w, |row| {
        let y = pixel_center(row);
        let mut acc = CompensatedSum::new();
        for col in 0..w {
            let f = raster.get(col, row);
            if f != 0.0 {
                acc.add(pixel_center(col).powi(p as i32) * y.powi(q as i32) * f);
            }
        }
        vec![acc]
    })[0]
}

pub fn centroid(raster: &Raster) -> Result<Centroid> {
    let m00 = geometric_moment(raster, 0, 0);
    if m00 <= 0.0 {
        return Err(Error::ZeroMass);
    }
    Ok(Centroid {
        x: geometric_moment(raster, 1, 0) / m00,
        y: geometric_moment(raster, 0, 1) / m00,
    })
}

/// Central moment `u_pq` about the intensity centroid.
pub fn central_moment(raster: &Raster, p: u32, q: u32) -> Result<f64> {
    let c = centroid(raster)?;
    Ok(central_moment_about(raster, c, p, q))
}

fn central_moment_about(raster: &Raster, c: Centroid, p: u32, q: u32) -> f64 {
    let w = raster.width();
    reduce_rows(raster.height(), w, |row| {
        let y = pixel_center(row) - c.y;
        let mut acc = CompensatedSum::new();
        for col in 0..w {
            let f = raster.get(col, row);
            if f != 0.0 {
                acc.add((pixel_center(col) - c.x).powi(p as i32) * y.powi(q as i32) * f);
            }
        }
        vec![acc]
    })[0]
}

/// Central moments up to a fixed order, plus `m00` and the centroid.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTable {
    m00: f64,
    centroid: Centroid,
    max_order: u32,
    // Indexed [p][q].
    central: Vec<Vec<f64>>,
}

impl MomentTable {
    pub const DEFAULT_ORDER: u32 = 3;

    pub fn new(raster: &Raster) -> Result<Self> {
        Self::with_order(raster, Self::DEFAULT_ORDER)
    }

    pub fn with_order(raster: &Raster, max_order: u32) -> Result<Self> {
        let m00 = geometric_moment(raster, 0, 0);
        if m00 <= 0.0 {
            return Err(Error::ZeroMass);
        }
        let c = centroid(raster)?;
        let orders: Vec<(u32, u32)> = (0..=max_order)
            .flat_map(|p| (0..=max_order - p).map(move |q| (p, q)))
            .collect();
        let w = raster.width();
        let sums = reduce_rows(raster.height(), w, |row| {
            let y = pixel_center(row) - c.y;
            let mut acc = vec![CompensatedSum::new(); orders.len()];
            for col in 0..w {
                let f = raster.get(col, row);
                if f == 0.0 {
                    continue;
                }
                let x = pixel_center(col) - c.x;
                for (slot, &(p, q)) in acc.iter_mut().zip(&orders) {
                    slot.add(x.powi(p as i32) * y.powi(q as i32) * f);
                }
            }
            acc
        });
        let n = max_order as usize + 1;
        let mut central = vec![vec![f64::NAN; n]; n];
        for (&(p, q), v) in orders.iter().zip(sums) {
            central[p as usize][q as usize] = v;
        }
        Ok(Self {
            m00,
            centroid: c,
            max_order,
            central,
        })
    }

    pub fn m00(&self) -> f64 {
        self.m00
    }

    pub fn centroid(&self) -> Centroid {
        self.centroid
    }

    pub fn max_order(&self) -> u32 {
        self.max_order
    }

    /// `u_pq`; panics if `p + q` exceeds the table order.
    pub fn u(&self, p: u32, q: u32) -> f64 {
        assert!(
            p + q <= self.max_order,
            "u{p}{q} beyond table order {}",
            self.max_order
        );
        self.central[p as usize][q as usize]
    }
}

/// Indices of a differential moment: coordinate powers `p, q`, first-derivative
/// powers `m` (fx), `n` (fy) and second-derivative powers `r` (fxx), `s` (fyy),
/// `t` (fxy).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DmKey {
    pub p: u8,
    pub q: u8,
    pub m: u8,
    pub n: u8,
    pub r: u8,
    pub s: u8,
    pub t: u8,
}

impl DmKey {
    pub const MASS: DmKey = DmKey::first(0, 0, 0, 0);

    pub const fn first(p: u8, q: u8, m: u8, n: u8) -> Self {
        Self {
            p,
            q,
            m,
            n,
            r: 0,
            s: 0,
            t: 0,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub const fn second(p: u8, q: u8, m: u8, n: u8, r: u8, s: u8, t: u8) -> Self {
        Self {
            p,
            q,
            m,
            n,
            r,
            s,
            t,
        }
    }

    pub fn is_first_order(&self) -> bool {
        self.r == 0 && self.s == 0 && self.t == 0
    }

    /// Total power of derivative factors.
    pub fn derivative_degree(&self) -> u32 {
        (self.m + self.n + self.r + self.s + self.t) as u32
    }

    #[inline]
    pub fn integrand(&self, x: f64, y: f64, f: f64, j: &Jet) -> f64 {
        let mut v = f;
        for (base, exp) in [
            (x, self.p),
            (y, self.q),
            (j.fx, self.m),
            (j.fy, self.n),
            (j.fxx, self.r),
            (j.fyy, self.s),
            (j.fxy, self.t),
        ] {
            match exp {
                0 => {}
                1 => v *= base,
                2 => v *= base * base,
                e => v *= base.powi(e as i32),
            }
        }
        v
    }
}

impl std::fmt::Display for DmKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_first_order() {
            write!(f, "D{}{}_{}{}", self.p, self.q, self.m, self.n)
        } else {
            write!(
                f,
                "D{}{}_{}{}{}{}{}",
                self.p, self.q, self.m, self.n, self.r, self.s, self.t
            )
        }
    }
}

impl std::str::FromStr for DmKey {
    type Err = Error;

    /// Accepts `p,q,m,n` or `p,q,m,n,r,s,t`.
    fn from_str(s: &str) -> Result<Self> {
        let v = s
            .split(',')
            .map(|t| t.trim().parse::<u8>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::InvalidConfig(format!("bad DM key {s:?}: {e}")))?;
        match v[..] {
            [p, q, m, n] => Ok(DmKey::first(p, q, m, n)),
            [p, q, m, n, r, s, t] => Ok(DmKey::second(p, q, m, n, r, s, t)),
            _ => Err(Error::InvalidConfig(format!(
                "DM key needs 4 or 7 indices, got {s:?}"
            ))),
        }
    }
}

fn check_stack(raster: &Raster, stack: &DerivativeStack) -> Result<()> {
    if stack.width() != raster.width() || stack.height() != raster.height() {
        return Err(Error::InvalidRaster(format!(
            "derivative stack is {}x{} but raster is {}x{}",
            stack.width(),
            stack.height(),
            raster.width(),
            raster.height()
        )));
    }
    Ok(())
}

fn dm_sums(raster: &Raster, stack: &DerivativeStack, c: Centroid, keys: &[DmKey]) -> Vec<f64> {
    let w = raster.width();
    reduce_rows(raster.height(), w, |row| {
        let y = pixel_center(row) - c.y;
        let mut acc = vec![CompensatedSum::new(); keys.len()];
        for col in 0..w {
            let f = raster.get(col, row);
            if f == 0.0 {
                continue;
            }
            let x = pixel_center(col) - c.x;
            let jet = stack.jet(row * w + col);
            for (slot, key) in acc.iter_mut().zip(keys) {
                slot.add(key.integrand(x, y, f, &jet));
            }
        }
        acc
    })
}

/// First-order differential moment `D^{pq}_{mn}`.
pub fn dm_first(raster: &Raster, stack: &DerivativeStack, key: DmKey) -> Result<f64> {
    if !key.is_first_order() {
        return Err(Error::InvalidConfig(format!(
            "{key} is not a first-order DM"
        )));
    }
    dm_second(raster, stack, key)
}

/// Second-order differential moment `D^{pq}_{mnrst}` (first-order keys allowed).
pub fn dm_second(raster: &Raster, stack: &DerivativeStack, key: DmKey) -> Result<f64> {
    check_stack(raster, stack)?;
    let c = centroid(raster)?;
    Ok(dm_sums(raster, stack, c, &[key])[0])
}

/// Differential moments of one raster. Keys given at construction are summed
/// in a single pass; anything else is computed on demand.
#[derive(Debug, Clone)]
pub struct DmTable<'a> {
    raster: &'a Raster,
    stack: &'a DerivativeStack,
    centroid: Centroid,
    cache: HashMap<DmKey, f64>,
}

impl<'a> DmTable<'a> {
    pub fn new(raster: &'a Raster, stack: &'a DerivativeStack, keys: &[DmKey]) -> Result<Self> {
        check_stack(raster, stack)?;
        let centroid = centroid(raster)?;
        let mut unique: Vec<DmKey> = keys.to_vec();
        unique.push(DmKey::MASS);
        unique.sort();
        unique.dedup();
        let values = dm_sums(raster, stack, centroid, &unique);
        Ok(Self {
            raster,
            stack,
            centroid,
            cache: unique.into_iter().zip(values).collect(),
        })
    }

    pub fn centroid(&self) -> Centroid {
        self.centroid
    }

    pub fn stack(&self) -> &DerivativeStack {
        self.stack
    }

    pub fn raster(&self) -> &Raster {
        self.raster
    }

    /// `D^{00}_{00}`, which equals `m00`.
    pub fn mass(&self) -> f64 {
        self.cache[&DmKey::MASS]
    }

    pub fn cached_keys(&self) -> impl Iterator<Item = &DmKey> {
        self.cache.keys()
    }

    pub fn get(&self, key: DmKey) -> f64 {
        match self.cache.get(&key) {
            Some(v) => *v,
            None => dm_sums(self.raster, self.stack, self.centroid, &[key])[0],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffops::{derivative_stack, DiffConfig};
    use crate::raster::{generate_synthetic, SyntheticSpec};

    fn blob() -> Raster {
        generate_synthetic(&SyntheticSpec::random_blobs(48, 40, 3, 3)).unwrap()
    }

    fn three_pixels() -> Raster {
        // Pixels at (0,0), (1,0), (0,1) relative to a common origin.
        let mut v = vec![0.0; 16];
        v[4 + 1] = 1.0;
        v[4 + 2] = 1.0;
        v[2 * 4 + 1] = 1.0;
        Raster::new(4, 4, v).unwrap()
    }

    #[test]
    fn constant_raster_mass() {
        let r = Raster::new(7, 5, vec![1.0; 35]).unwrap();
        assert_eq!(geometric_moment(&r, 0, 0), 35.0);
    }

    #[test]
    fn single_pixel_first_moments() {
        let mut v = vec![0.0; 8];
        v[2] = 1.0;
        let r = Raster::new(4, 2, v).unwrap();
        assert_eq!(geometric_moment(&r, 1, 0), 2.5);
        assert_eq!(geometric_moment(&r, 0, 1), 0.5);
    }

    #[test]
    fn mass_is_sum_of_intensities() {
        let r = blob();
        let direct: f64 = r.intensities().iter().sum();
        assert!((geometric_moment(&r, 0, 0) - direct).abs() <= 1e-12 * direct);
    }

    #[test]
    fn first_central_moments_vanish() {
        let r = blob();
        let t = MomentTable::new(&r).unwrap();
        assert!(t.u(1, 0).abs() / t.u(0, 0) <= 1e-12);
        assert!(t.u(0, 1).abs() / t.u(0, 0) <= 1e-12);
        assert_eq!(t.u(0, 0), t.m00());
    }

    #[test]
    fn three_pixel_second_moments() {
        let t = MomentTable::new(&three_pixels()).unwrap();
        assert!((t.u(2, 0) - 2.0 / 3.0).abs() < 1e-14);
        assert!((t.u(0, 2) - 2.0 / 3.0).abs() < 1e-14);
        assert!((t.u(1, 1) + 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn odd_moments_vanish_for_mirrored_blob() {
        let r = Raster::from_fn(41, 33, |x, y| {
            let dx = x - 20.5;
            let dy = y - 16.5;
            (-(dx * dx) / 40.0 - dy * dy / 25.0).exp() * (1.0 + 0.3 * (dy / 5.0).tanh())
        })
        .unwrap();
        let t = MomentTable::new(&r).unwrap();
        let scale = t.u(2, 0).abs().powf(1.5);
        assert!(t.u(3, 0).abs() <= 1e-10 * scale);
        assert!(t.u(1, 1).abs() <= 1e-10 * t.u(2, 0));
    }

    #[test]
    fn central_matches_binomial_expansion_of_raw() {
        let r = blob();
        let t = MomentTable::new(&r).unwrap();
        let (xb, yb) = (t.centroid().x, t.centroid().y);
        let m = |p, q| geometric_moment(&r, p, q);
        let binom = |n: u32, k: u32| -> f64 {
            (1..=k).fold(1.0, |acc, i| acc * (n + 1 - i) as f64 / i as f64)
        };
        for p in 0..=3u32 {
            for q in 0..=3 - p {
                let mut expanded = 0.0;
                for i in 0..=p {
                    for j in 0..=q {
                        expanded += binom(p, i)
                            * binom(q, j)
                            * (-xb).powi((p - i) as i32)
                            * (-yb).powi((q - j) as i32)
                            * m(i, j);
                    }
                }
                let u = t.u(p, q);
                let scale = m(0, 0) * (xb.abs() + yb.abs()).powi((p + q) as i32);
                assert!(
                    (u - expanded).abs() <= 1e-10 * scale.max(u.abs()),
                    "u{p}{q}"
                );
            }
        }
    }

    #[test]
    fn zero_raster_has_no_centroid() {
        let r = Raster::new(3, 3, vec![0.0; 9]).unwrap();
        assert!(matches!(centroid(&r), Err(Error::ZeroMass)));
        assert!(MomentTable::new(&r).is_err());
    }

    #[test]
    fn dm_degenerates_to_moments() {
        let r = blob();
        let s = derivative_stack(&r, &DiffConfig::default()).unwrap();
        let t = MomentTable::new(&r).unwrap();
        assert_eq!(dm_first(&r, &s, DmKey::MASS).unwrap(), t.m00());
        for p in 0..=3u8 {
            for q in 0..=3 - p {
                let d = dm_second(&r, &s, DmKey::first(p, q, 0, 0)).unwrap();
                let u = t.u(p as u32, q as u32);
                assert!((d - u).abs() <= 1e-12 * u.abs().max(t.m00()), "D{p}{q}");
            }
        }
    }

    #[test]
    fn dm_on_constant_raster() {
        let r = Raster::new(16, 12, vec![0.5; 192]).unwrap();
        let s = derivative_stack(&r, &DiffConfig::default()).unwrap();
        for key in [
            DmKey::first(1, 0, 1, 0),
            DmKey::first(0, 2, 0, 1),
            DmKey::first(0, 0, 1, 1),
        ] {
            assert!(dm_first(&r, &s, key).unwrap().abs() <= 1e-12);
        }
        let a = dm_second(&r, &s, DmKey::second(0, 0, 0, 0, 1, 1, 0)).unwrap();
        let b = dm_second(&r, &s, DmKey::second(0, 0, 0, 0, 0, 0, 2)).unwrap();
        assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn dm_matches_direct_loops() {
        let r = blob();
        let s = derivative_stack(&r, &DiffConfig::default()).unwrap();
        let (w, h) = (r.width(), r.height());
        // Independent path: explicit double loop with naive centroid.
        let (mut m00, mut m10, mut m01) = (0.0, 0.0, 0.0);
        for i in 0..h {
            for j in 0..w {
                let f = r.get(j, i);
                m00 += f;
                m10 += (j as f64 + 0.5) * f;
                m01 += (i as f64 + 0.5) * f;
            }
        }
        let (xb, _yb) = (m10 / m00, m01 / m00);
        let (mut d1010, mut d00110) = (0.0, 0.0);
        for i in 0..h {
            for j in 0..w {
                let f = r.get(j, i);
                d1010 += (j as f64 + 0.5 - xb) * s.fx.get(j, i) * f;
                d00110 += s.fxx.get(j, i) * s.fyy.get(j, i) * f;
            }
        }
        let got = dm_first(&r, &s, DmKey::first(1, 0, 1, 0)).unwrap();
        assert!((got - d1010).abs() <= 1e-12 * d1010.abs());
        let got = dm_second(&r, &s, DmKey::second(0, 0, 0, 0, 1, 1, 0)).unwrap();
        assert!((got - d00110).abs() <= 1e-12 * d00110.abs());
    }

    #[test]
    fn dm_first_rejects_second_order_keys() {
        let r = blob();
        let s = derivative_stack(&r, &DiffConfig::default()).unwrap();
        assert!(dm_first(&r, &s, DmKey::second(0, 0, 0, 0, 1, 0, 0)).is_err());
    }

    #[test]
    fn intensity_scaling_homogeneity() {
        let r = blob();
        let lambda = 1.7;
        let r2 = r.scaled(lambda).unwrap();
        let cfg = DiffConfig::default();
        let (s, s2) = (
            derivative_stack(&r, &cfg).unwrap(),
            derivative_stack(&r2, &cfg).unwrap(),
        );
        for key in [
            DmKey::first(2, 1, 0, 1),
            DmKey::first(1, 1, 1, 0),
            DmKey::second(0, 2, 1, 0, 0, 0, 0),
            DmKey::second(1, 1, 1, 1, 0, 0, 1),
            DmKey::second(0, 0, 0, 2, 1, 0, 0),
        ] {
            let a = dm_second(&r, &s, key).unwrap();
            let b = dm_second(&r2, &s2, key).unwrap();
            let want = a * lambda.powi(1 + key.derivative_degree() as i32);
            assert!((b - want).abs() <= 1e-10 * want.abs(), "{key}");
        }
    }

    #[test]
    fn table_caches_and_computes_on_demand() {
        let r = blob();
        let s = derivative_stack(&r, &DiffConfig::default()).unwrap();
        let key = DmKey::first(2, 1, 0, 1);
        let t = DmTable::new(&r, &s, &[key]).unwrap();
        assert_eq!(t.get(key), dm_first(&r, &s, key).unwrap());
        let other = DmKey::first(3, 0, 1, 0);
        assert_eq!(t.get(other), dm_first(&r, &s, other).unwrap());
        assert!((t.mass() - geometric_moment(&r, 0, 0)).abs() <= 1e-12 * t.mass());
    }

    #[test]
    fn key_parsing() {
        assert_eq!(
            "1,0,1,0".parse::<DmKey>().unwrap(),
            DmKey::first(1, 0, 1, 0)
        );
        assert_eq!(
            "0,0,0,0,1,1,0".parse::<DmKey>().unwrap(),
            DmKey::second(0, 0, 0, 0, 1, 1, 0)
        );
        assert!("1,2".parse::<DmKey>().is_err());
        assert_eq!(DmKey::second(0, 2, 1, 0, 0, 0, 0).to_string(), "D02_10");
        assert_eq!(DmKey::second(0, 0, 0, 0, 1, 1, 0).to_string(), "D00_00110");
    }
}
