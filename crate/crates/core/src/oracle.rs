//! Brute-force evaluation of Core and DCore integrals as literal N-fold sums
//! over pixel tuples.
//!
//! Nothing here touches moment tables: each tuple of active pixels contributes
//! `prod S(i, j) * prod f_i * prod ADI1_i^{k_i}` with centroid-centered
//! coordinates. Agreement with the closed forms in [`crate::invariants`]
//! therefore certifies both the expansions and their coefficients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffops::{derivative_stack, DerivativeStack, DiffConfig};
use crate::field::pixel_center;
use crate::invariants::{
    ami2_numerator, ami7_numerator, awmi1_numerator, awmi2, awmi2_from_fields, required_dm_keys,
    InvariantId,
};
use crate::moments::{centroid, DmTable, MomentTable};
use crate::raster::Raster;
use crate::sum::CompensatedSum;
use crate::{Error, Result};

/// Default cap on enumerated tuples.
pub const TUPLE_BUDGET: f64 = 1e8;

/// Centered determinant `S(i, j)` of points `i < j` (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PrimitiveRef {
    i: usize,
    j: usize,
}

impl PrimitiveRef {
    pub fn new(i: usize, j: usize) -> Result<Self> {
        if i == 0 || i >= j {
            return Err(Error::InvalidCore(format!(
                "primitive ({i}, {j}) needs 1 <= i < j"
            )));
        }
        Ok(Self { i, j })
    }

    pub fn points(&self) -> (usize, usize) {
        (self.i, self.j)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreSpec {
    points: usize,
    primitives: Vec<PrimitiveRef>,
}

impl CoreSpec {
    /// `pairs` are 1-based point indices.
    pub fn new(points: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        if points == 0 {
            return Err(Error::InvalidCore("core needs at least one point".into()));
        }
        let primitives = pairs
            .iter()
            .map(|&(i, j)| PrimitiveRef::new(i, j))
            .collect::<Result<Vec<_>>>()?;
        if let Some(p) = primitives.iter().find(|p| p.j > points) {
            return Err(Error::InvalidCore(format!(
                "primitive ({}, {}) refers past point {points}",
                p.i, p.j
            )));
        }
        let spec = Self { points, primitives };
        if let Some(lonely) = (1..=points).find(|&i| spec.degree(i) == 0) {
            return Err(Error::InvalidCore(format!(
                "point {lonely} appears in no primitive"
            )));
        }
        Ok(spec)
    }

    pub fn points(&self) -> usize {
        self.points
    }

    /// Number of primitives `m`.
    pub fn order(&self) -> usize {
        self.primitives.len()
    }

    /// Number of primitives containing point `i` (1-based).
    pub fn degree(&self, i: usize) -> usize {
        self.primitives
            .iter()
            .filter(|p| p.i == i || p.j == i)
            .count()
    }

    pub fn primitives(&self) -> &[PrimitiveRef] {
        &self.primitives
    }

    /// Applies a point relabeling `perm[old - 1] = new` to every primitive,
    /// returning the relabeled core and the sign picked up by reordering
    /// each primitive to `i < j`.
    pub fn relabeled(&self, perm: &[usize]) -> Result<(CoreSpec, f64)> {
        if perm.len() != self.points {
            return Err(Error::InvalidCore("permutation length mismatch".into()));
        }
        let mut sign = 1.0;
        let pairs: Vec<(usize, usize)> = self
            .primitives
            .iter()
            .map(|p| {
                let (a, b) = (perm[p.i - 1], perm[p.j - 1]);
                if a > b {
                    sign = -sign;
                    (b, a)
                } else {
                    (a, b)
                }
            })
            .collect();
        Ok((CoreSpec::new(self.points, &pairs)?, sign))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DCoreSpec {
    pub core: CoreSpec,
    /// ADI1 exponent per point.
    pub k: Vec<u32>,
}

impl DCoreSpec {
    pub fn new(core: CoreSpec, k: Vec<u32>) -> Result<Self> {
        if k.len() != core.points() {
            return Err(Error::InvalidCore(format!(
                "{} ADI exponents for {} points",
                k.len(),
                core.points()
            )));
        }
        Ok(Self { core, k })
    }
}

/// Oracle result with the sum of absolute tuple contributions, the natural
/// scale for judging cancellation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoreSum {
    pub value: f64,
    pub magnitude: f64,
}

#[derive(Clone, Copy)]
struct Point {
    x: f64,
    y: f64,
    f: f64,
    adi1: f64,
}

fn active_points(raster: &Raster, stack: Option<&DerivativeStack>) -> Result<Vec<Point>> {
    let c = centroid(raster)?;
    let w = raster.width();
    let mut pts = Vec::new();
    for (idx, &f) in raster.intensities().iter().enumerate() {
        if f == 0.0 {
            continue;
        }
        let x = pixel_center(idx % w) - c.x;
        let y = pixel_center(idx / w) - c.y;
        let adi1 = match stack {
            Some(s) => x * s.fx.as_slice()[idx] + y * s.fy.as_slice()[idx],
            None => 0.0,
        };
        pts.push(Point { x, y, f, adi1 });
    }
    Ok(pts)
}

fn tuple_sum(points: &[Point], spec: &CoreSpec, k: &[u32]) -> Result<CoreSum> {
    let n = spec.points();
    let tuples = (points.len() as f64).powi(n as i32);
    if tuples > TUPLE_BUDGET {
        return Err(Error::TupleBudget {
            tuples,
            budget: TUPLE_BUDGET,
        });
    }
    // Per-slot weights f * ADI1^k.
    let weights: Vec<Vec<f64>> = k
        .iter()
        .map(|&kk| {
            points
                .iter()
                .map(|p| p.f * p.adi1.powi(kk as i32))
                .collect()
        })
        .collect();
    let prims: Vec<(usize, usize)> = spec
        .primitives()
        .iter()
        .map(|p| (p.i - 1, p.j - 1))
        .collect();

    let outer = |first: usize| -> (f64, f64) {
        let mut acc = CompensatedSum::new();
        let mut mag = 0.0;
        let mut idx = vec![0usize; n];
        idx[0] = first;
        loop {
            let mut v = 1.0;
            for (slot, &p) in idx.iter().enumerate() {
                v *= weights[slot][p];
            }
            if v != 0.0 {
                for &(a, b) in &prims {
                    let (pa, pb) = (&points[idx[a]], &points[idx[b]]);
                    v *= pa.x * pb.y - pb.x * pa.y;
                }
                acc.add(v);
                mag += v.abs();
            }
            // Odometer over slots 1..n.
            let mut slot = n;
            loop {
                if slot == 1 {
                    return (acc.value(), mag);
                }
                slot -= 1;
                idx[slot] += 1;
                if idx[slot] < points.len() {
                    break;
                }
                idx[slot] = 0;
            }
        }
    };
    #[cfg(feature = "parallel")]
    let partials: Vec<(f64, f64)> = {
        use rayon::prelude::*;
        (0..points.len()).into_par_iter().map(outer).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let partials: Vec<(f64, f64)> = (0..points.len()).map(outer).collect();
    let mut total = CompensatedSum::new();
    let mut magnitude = 0.0;
    for (v, m) in partials {
        total.add(v);
        magnitude += m;
    }
    Ok(CoreSum {
        value: total.value(),
        magnitude,
    })
}

/// `I(Core)`: sum over all N-tuples of pixels of `prod S * prod f`.
pub fn eval_core(raster: &Raster, spec: &CoreSpec) -> Result<CoreSum> {
    let pts = active_points(raster, None)?;
    tuple_sum(&pts, spec, &vec![0; spec.points()])
}

/// `I(DCore)`: like [`eval_core`] with each point additionally weighted by
/// `(x_i fx_i + y_i fy_i)^{k_i}`.
pub fn eval_dcore(raster: &Raster, stack: &DerivativeStack, spec: &DCoreSpec) -> Result<CoreSum> {
    if stack.width() != raster.width() || stack.height() != raster.height() {
        return Err(Error::InvalidRaster(
            "derivative stack does not match raster".into(),
        ));
    }
    let pts = active_points(raster, Some(stack))?;
    tuple_sum(&pts, &spec.core, &spec.k)
}

fn core(points: usize, pairs: &[(usize, usize)]) -> CoreSpec {
    CoreSpec::new(points, pairs).expect("static core is valid")
}

/// Cores of the seven low-order AMIs, `AMI1..AMI7`.
pub fn ami_core(index: usize) -> Option<CoreSpec> {
    Some(match index {
        1 => core(2, &[(1, 2)]),
        2 => core(2, &[(1, 2), (1, 2)]),
        3 => core(2, &[(1, 2), (1, 2), (1, 2)]),
        4 => core(3, &[(1, 2), (1, 3)]),
        5 => core(3, &[(1, 2), (1, 3), (1, 3)]),
        6 => core(3, &[(1, 2), (1, 3), (2, 3)]),
        7 => core(3, &[(1, 2), (1, 3), (2, 3), (2, 3)]),
        _ => return None,
    })
}

/// The eight listed DCores, `DCore1..DCore8`.
pub fn dcore(index: usize) -> Option<DCoreSpec> {
    let (c, k) = match index {
        1 => (core(2, &[(1, 2), (1, 2)]), vec![1, 0]),
        2 => (core(2, &[(1, 2), (1, 2)]), vec![1, 1]),
        3 => (core(3, &[(1, 2), (1, 3)]), vec![0, 1, 1]),
        4 => (core(3, &[(1, 2), (1, 3)]), vec![1, 1, 1]),
        5 => (core(3, &[(1, 2), (1, 3), (1, 3)]), vec![0, 1, 0]),
        6 => (core(3, &[(1, 2), (1, 3), (1, 3)]), vec![0, 0, 1]),
        7 => (core(3, &[(1, 2), (1, 3), (1, 3)]), vec![0, 1, 1]),
        8 => (core(3, &[(1, 2), (1, 3), (2, 3), (2, 3)]), vec![1, 0, 0]),
        _ => return None,
    };
    Some(DCoreSpec::new(c, k).expect("static dcore is valid"))
}

/// The DCore whose expansion an invariant's closed form implements.
///
/// AWMI1_6 shares AWMI1_3's expansion, so it is checked against DCore3;
/// `dcore(6)` itself integrates to zero.
pub fn dcore_for(id: InvariantId) -> Option<DCoreSpec> {
    let index = match id {
        InvariantId::Awmi1_1 => 1,
        InvariantId::Awmi1_2 => 2,
        InvariantId::Awmi1_3 | InvariantId::Awmi1_6 => 3,
        InvariantId::Awmi1_4 => 4,
        InvariantId::Awmi1_5 => 5,
        InvariantId::Awmi1_7 => 7,
        InvariantId::Awmi1_8 => 8,
        _ => return None,
    };
    dcore(index)
}

/// What `verify_expansion` checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerifyTarget {
    /// Closed form against its Core/DCore sum (AWMI2: DM expansion against
    /// integrated ADI fields).
    Invariant(InvariantId),
    /// One of the vanishing cores AMI1, AMI3, AMI6.
    ZeroCore(usize),
}

impl VerifyTarget {
    pub fn name(&self) -> String {
        match self {
            VerifyTarget::Invariant(id) => id.name().to_string(),
            VerifyTarget::ZeroCore(i) => format!("AMI{i}"),
        }
    }

    pub fn tolerance(&self) -> f64 {
        match self {
            VerifyTarget::Invariant(InvariantId::Awmi2) => 1e-10,
            VerifyTarget::Invariant(id) => match id.core_shape() {
                Some((2, _)) => 1e-9,
                _ => 1e-6,
            },
            VerifyTarget::ZeroCore(_) => 1e-9,
        }
    }
}

impl std::str::FromStr for VerifyTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "AMI1" => Ok(VerifyTarget::ZeroCore(1)),
            "AMI3" => Ok(VerifyTarget::ZeroCore(3)),
            "AMI6" => Ok(VerifyTarget::ZeroCore(6)),
            other => other.parse().map(VerifyTarget::Invariant),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub width: usize,
    pub height: usize,
    pub closed_form: f64,
    pub oracle: f64,
    /// Relative deviation; for zero cores `|oracle| / magnitude`.
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub target: String,
    pub seed: u64,
    pub tolerance: f64,
    pub max_deviation: f64,
    pub passed: bool,
    pub trials: Vec<TrialResult>,
}

/// Random raster of 9..=16 by 9..=12 pixels with roughly a quarter of the
/// pixels black.
pub fn random_tiny_raster(rng: &mut impl Rng) -> Raster {
    let w = rng.random_range(9..=16);
    let h = rng.random_range(9..=12);
    let data = (0..w * h)
        .map(|_| {
            if rng.random_bool(0.25) {
                0.0
            } else {
                rng.random_range(0.05..1.0)
            }
        })
        .collect();
    Raster::new(w, h, data).expect("valid random raster")
}

fn relative(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn run_trial(target: VerifyTarget, raster: &Raster, diff: &DiffConfig) -> Result<TrialResult> {
    let (closed_form, oracle, deviation) = match target {
        VerifyTarget::ZeroCore(i) => {
            let spec = ami_core(i).ok_or_else(|| Error::InvalidCore(format!("no AMI{i}")))?;
            let sum = eval_core(raster, &spec)?;
            let dev = if sum.magnitude == 0.0 {
                0.0
            } else {
                sum.value.abs() / sum.magnitude
            };
            (0.0, sum.value, dev)
        }
        VerifyTarget::Invariant(id @ (InvariantId::Ami2 | InvariantId::Ami7)) => {
            let m = MomentTable::new(raster)?;
            let (closed, spec) = if id == InvariantId::Ami2 {
                (ami2_numerator(&m), ami_core(2))
            } else {
                (ami7_numerator(&m), ami_core(7))
            };
            let sum = eval_core(raster, &spec.expect("static core"))?;
            (closed, sum.value, relative(closed, sum.value))
        }
        VerifyTarget::Invariant(InvariantId::Awmi2) => {
            let stack = derivative_stack(raster, diff)?;
            let dms = DmTable::new(raster, &stack, &required_dm_keys())?;
            let c = dms.centroid();
            let closed = awmi2(&dms).unwrap_or(f64::NAN);
            let direct = awmi2_from_fields(raster, &stack, (c.x, c.y)).unwrap_or(f64::NAN);
            (closed, direct, relative(closed, direct))
        }
        VerifyTarget::Invariant(id) => {
            let stack = derivative_stack(raster, diff)?;
            let dms = DmTable::new(raster, &stack, &required_dm_keys())?;
            let closed = awmi1_numerator(id, &dms);
            let spec = dcore_for(id).expect("AWMI1 has a dcore");
            let sum = eval_dcore(raster, &stack, &spec)?;
            (closed, sum.value, relative(closed, sum.value))
        }
    };
    Ok(TrialResult {
        width: raster.width(),
        height: raster.height(),
        closed_form,
        oracle,
        deviation,
    })
}

/// Runs `trials` random tiny rasters through the closed form and the oracle.
/// Deterministic in `seed`.
pub fn verify_expansion(target: VerifyTarget, trials: usize, seed: u64) -> Result<VerifyReport> {
    verify_expansion_with(target, trials, seed, &DiffConfig::default())
}

pub fn verify_expansion_with(
    target: VerifyTarget,
    trials: usize,
    seed: u64,
    diff: &DiffConfig,
) -> Result<VerifyReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut results = Vec::with_capacity(trials);
    for _ in 0..trials {
        let raster = random_tiny_raster(&mut rng);
        results.push(run_trial(target, &raster, diff)?);
    }
    let max_deviation = results
        .iter()
        .map(|t| {
            if t.deviation.is_nan() {
                f64::INFINITY
            } else {
                t.deviation
            }
        })
        .fold(0.0, f64::max);
    let tolerance = target.tolerance();
    Ok(VerifyReport {
        target: target.name(),
        seed,
        tolerance,
        max_deviation,
        passed: max_deviation <= tolerance,
        trials: results,
    })
}
