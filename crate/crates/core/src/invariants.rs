//! Closed-form affine moment invariants (AMI2, AMI7) and affine weighted
//! moment invariants (AWMI1_1..AWMI1_8, AWMI2).
//!
//! Every AWMI1 numerator is a polynomial in first-order differential moments
//! `D^{pq}_{mn}` obtained by expanding a DCore: a product of centered 2x2
//! determinants over `N` points times ADI1 factors `x_i fx_i + y_i fy_i`.
//! The value is the numerator divided by `(D^{00}_{00})^{N+m}`, `m` being the
//! number of determinants. The term tables below are the full expansions; the
//! [`crate::oracle`] module evaluates the same DCores by brute force.
//!
//! AWMI1_6 is defined with the same expansion as AWMI1_3 (and therefore always
//! returns the identical value). Its nominal DCore, `(12)(13)^2` weighted by
//! ADI1 at point 3, expands into terms that all contain `D^{10}_{00}` or
//! `D^{01}_{00}` and so vanishes identically.

use serde::{Deserialize, Serialize};

use crate::diffops::{adi_fields, derivative_stack, DerivativeStack, DiffConfig};
use crate::moments::{DmKey, DmTable, MomentTable};
use crate::raster::Raster;
use crate::sum::CompensatedSum;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InvariantId {
    #[serde(rename = "AMI2")]
    Ami2,
    #[serde(rename = "AMI7")]
    Ami7,
    #[serde(rename = "AWMI1_1")]
    Awmi1_1,
    #[serde(rename = "AWMI1_2")]
    Awmi1_2,
    #[serde(rename = "AWMI1_3")]
    Awmi1_3,
    #[serde(rename = "AWMI1_4")]
    Awmi1_4,
    #[serde(rename = "AWMI1_5")]
    Awmi1_5,
    #[serde(rename = "AWMI1_6")]
    Awmi1_6,
    #[serde(rename = "AWMI1_7")]
    Awmi1_7,
    #[serde(rename = "AWMI1_8")]
    Awmi1_8,
    #[serde(rename = "AWMI2")]
    Awmi2,
}

impl InvariantId {
    pub const ALL: [InvariantId; 11] = [
        InvariantId::Ami2,
        InvariantId::Ami7,
        InvariantId::Awmi1_1,
        InvariantId::Awmi1_2,
        InvariantId::Awmi1_3,
        InvariantId::Awmi1_4,
        InvariantId::Awmi1_5,
        InvariantId::Awmi1_6,
        InvariantId::Awmi1_7,
        InvariantId::Awmi1_8,
        InvariantId::Awmi2,
    ];

    pub const AWMI1: [InvariantId; 8] = [
        InvariantId::Awmi1_1,
        InvariantId::Awmi1_2,
        InvariantId::Awmi1_3,
        InvariantId::Awmi1_4,
        InvariantId::Awmi1_5,
        InvariantId::Awmi1_6,
        InvariantId::Awmi1_7,
        InvariantId::Awmi1_8,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            InvariantId::Ami2 => "AMI2",
            InvariantId::Ami7 => "AMI7",
            InvariantId::Awmi1_1 => "AWMI1_1",
            InvariantId::Awmi1_2 => "AWMI1_2",
            InvariantId::Awmi1_3 => "AWMI1_3",
            InvariantId::Awmi1_4 => "AWMI1_4",
            InvariantId::Awmi1_5 => "AWMI1_5",
            InvariantId::Awmi1_6 => "AWMI1_6",
            InvariantId::Awmi1_7 => "AWMI1_7",
            InvariantId::Awmi1_8 => "AWMI1_8",
            InvariantId::Awmi2 => "AWMI2",
        }
    }

    /// Point count `N` and determinant count `m` of the Core/DCore; `None`
    /// for AWMI2, which is a self-normalizing ratio.
    pub fn core_shape(&self) -> Option<(u32, u32)> {
        Some(match self {
            InvariantId::Ami2 => (2, 2),
            InvariantId::Ami7 => (3, 4),
            InvariantId::Awmi1_1 | InvariantId::Awmi1_2 => (2, 2),
            InvariantId::Awmi1_3 | InvariantId::Awmi1_4 | InvariantId::Awmi1_6 => (3, 2),
            InvariantId::Awmi1_5 | InvariantId::Awmi1_7 => (3, 3),
            InvariantId::Awmi1_8 => (3, 4),
            InvariantId::Awmi2 => return None,
        })
    }

    /// Power `N + m` of the mass in the denominator.
    pub fn normalization_exponent(&self) -> Option<i32> {
        self.core_shape().map(|(n, m)| (n + m) as i32)
    }

    pub fn is_awmi(&self) -> bool {
        !matches!(self, InvariantId::Ami2 | InvariantId::Ami7)
    }

    fn terms(&self) -> Option<&'static [Term]> {
        match self {
            InvariantId::Awmi1_1 => Some(AWMI1_1_TERMS),
            InvariantId::Awmi1_2 => Some(AWMI1_2_TERMS),
            InvariantId::Awmi1_3 | InvariantId::Awmi1_6 => Some(AWMI1_3_TERMS),
            InvariantId::Awmi1_4 => Some(AWMI1_4_TERMS),
            InvariantId::Awmi1_5 => Some(AWMI1_5_TERMS),
            InvariantId::Awmi1_7 => Some(AWMI1_7_TERMS),
            InvariantId::Awmi1_8 => Some(AWMI1_8_TERMS),
            _ => None,
        }
    }
}

impl std::fmt::Display for InvariantId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for InvariantId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let wanted = s.trim().to_ascii_uppercase();
        InvariantId::ALL
            .into_iter()
            .find(|id| id.name() == wanted)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown invariant {s:?}")))
    }
}

/// `coef * prod(D[factor])`.
#[derive(Debug, Clone, Copy)]
struct Term {
    coef: f64,
    factors: &'static [DmKey],
}

impl Term {
    const fn new(coef: f64, factors: &'static [DmKey]) -> Self {
        Self { coef, factors }
    }
}

const fn d(p: u8, q: u8, m: u8, n: u8) -> DmKey {
    DmKey::first(p, q, m, n)
}

// (x1y2 - x2y1)^2 ADI1(1)
const AWMI1_1_TERMS: &[Term] = &[
    Term::new(1.0, &[d(0, 2, 0, 0), d(2, 1, 0, 1)]),
    Term::new(1.0, &[d(0, 2, 0, 0), d(3, 0, 1, 0)]),
    Term::new(1.0, &[d(0, 3, 0, 1), d(2, 0, 0, 0)]),
    Term::new(-2.0, &[d(1, 1, 0, 0), d(1, 2, 0, 1)]),
    Term::new(-2.0, &[d(1, 1, 0, 0), d(2, 1, 1, 0)]),
    Term::new(1.0, &[d(1, 2, 1, 0), d(2, 0, 0, 0)]),
];

// (x1y2 - x2y1)^2 ADI1(1) ADI1(2)
const AWMI1_2_TERMS: &[Term] = &[
    Term::new(2.0, &[d(0, 3, 0, 1), d(2, 1, 0, 1)]),
    Term::new(2.0, &[d(0, 3, 0, 1), d(3, 0, 1, 0)]),
    Term::new(-2.0, &[d(1, 2, 0, 1), d(1, 2, 0, 1)]),
    Term::new(-4.0, &[d(1, 2, 0, 1), d(2, 1, 1, 0)]),
    Term::new(2.0, &[d(1, 2, 1, 0), d(2, 1, 0, 1)]),
    Term::new(2.0, &[d(1, 2, 1, 0), d(3, 0, 1, 0)]),
    Term::new(-2.0, &[d(2, 1, 1, 0), d(2, 1, 1, 0)]),
];

// (x1y2 - x2y1)(x1y3 - x3y1) ADI1(2) ADI1(3)
const AWMI1_3_TERMS: &[Term] = &[
    Term::new(1.0, &[d(0, 2, 0, 0), d(1, 1, 0, 1), d(1, 1, 0, 1)]),
    Term::new(2.0, &[d(0, 2, 0, 0), d(1, 1, 0, 1), d(2, 0, 1, 0)]),
    Term::new(1.0, &[d(0, 2, 0, 0), d(2, 0, 1, 0), d(2, 0, 1, 0)]),
    Term::new(1.0, &[d(0, 2, 0, 1), d(0, 2, 0, 1), d(2, 0, 0, 0)]),
    Term::new(-2.0, &[d(0, 2, 0, 1), d(1, 1, 0, 0), d(1, 1, 0, 1)]),
    Term::new(-2.0, &[d(0, 2, 0, 1), d(1, 1, 0, 0), d(2, 0, 1, 0)]),
    Term::new(2.0, &[d(0, 2, 0, 1), d(1, 1, 1, 0), d(2, 0, 0, 0)]),
    Term::new(-2.0, &[d(1, 1, 0, 0), d(1, 1, 0, 1), d(1, 1, 1, 0)]),
    Term::new(-2.0, &[d(1, 1, 0, 0), d(1, 1, 1, 0), d(2, 0, 1, 0)]),
    Term::new(1.0, &[d(1, 1, 1, 0), d(1, 1, 1, 0), d(2, 0, 0, 0)]),
];

// (x1y2 - x2y1)(x1y3 - x3y1) ADI1(1) ADI1(2) ADI1(3)
const AWMI1_4_TERMS: &[Term] = &[
    Term::new(1.0, &[d(0, 2, 0, 1), d(0, 2, 0, 1), d(2, 1, 0, 1)]),
    Term::new(1.0, &[d(0, 2, 0, 1), d(0, 2, 0, 1), d(3, 0, 1, 0)]),
    Term::new(-2.0, &[d(0, 2, 0, 1), d(1, 1, 0, 1), d(1, 2, 0, 1)]),
    Term::new(-2.0, &[d(0, 2, 0, 1), d(1, 1, 0, 1), d(2, 1, 1, 0)]),
    Term::new(2.0, &[d(0, 2, 0, 1), d(1, 1, 1, 0), d(2, 1, 0, 1)]),
    Term::new(2.0, &[d(0, 2, 0, 1), d(1, 1, 1, 0), d(3, 0, 1, 0)]),
    Term::new(-2.0, &[d(0, 2, 0, 1), d(1, 2, 0, 1), d(2, 0, 1, 0)]),
    Term::new(-2.0, &[d(0, 2, 0, 1), d(2, 0, 1, 0), d(2, 1, 1, 0)]),
    Term::new(1.0, &[d(0, 3, 0, 1), d(1, 1, 0, 1), d(1, 1, 0, 1)]),
    Term::new(2.0, &[d(0, 3, 0, 1), d(1, 1, 0, 1), d(2, 0, 1, 0)]),
    Term::new(1.0, &[d(0, 3, 0, 1), d(2, 0, 1, 0), d(2, 0, 1, 0)]),
    Term::new(1.0, &[d(1, 1, 0, 1), d(1, 1, 0, 1), d(1, 2, 1, 0)]),
    Term::new(-2.0, &[d(1, 1, 0, 1), d(1, 1, 1, 0), d(1, 2, 0, 1)]),
    Term::new(-2.0, &[d(1, 1, 0, 1), d(1, 1, 1, 0), d(2, 1, 1, 0)]),
    Term::new(2.0, &[d(1, 1, 0, 1), d(1, 2, 1, 0), d(2, 0, 1, 0)]),
    Term::new(1.0, &[d(1, 1, 1, 0), d(1, 1, 1, 0), d(2, 1, 0, 1)]),
    Term::new(1.0, &[d(1, 1, 1, 0), d(1, 1, 1, 0), d(3, 0, 1, 0)]),
    Term::new(-2.0, &[d(1, 1, 1, 0), d(1, 2, 0, 1), d(2, 0, 1, 0)]),
    Term::new(-2.0, &[d(1, 1, 1, 0), d(2, 0, 1, 0), d(2, 1, 1, 0)]),
    Term::new(1.0, &[d(1, 2, 1, 0), d(2, 0, 1, 0), d(2, 0, 1, 0)]),
];

// (x1y2 - x2y1)(x1y3 - x3y1)^2 ADI1(2)
const AWMI1_5_TERMS: &[Term] = &[
    Term::new(1.0, &[d(0, 2, 0, 0), d(0, 2, 0, 1), d(3, 0, 0, 0)]),
    Term::new(-1.0, &[d(0, 2, 0, 0), d(1, 1, 0, 1), d(2, 1, 0, 0)]),
    Term::new(1.0, &[d(0, 2, 0, 0), d(1, 1, 1, 0), d(3, 0, 0, 0)]),
    Term::new(-1.0, &[d(0, 2, 0, 0), d(2, 0, 1, 0), d(2, 1, 0, 0)]),
    Term::new(-2.0, &[d(0, 2, 0, 1), d(1, 1, 0, 0), d(2, 1, 0, 0)]),
    Term::new(1.0, &[d(0, 2, 0, 1), d(1, 2, 0, 0), d(2, 0, 0, 0)]),
    Term::new(-1.0, &[d(0, 3, 0, 0), d(1, 1, 0, 1), d(2, 0, 0, 0)]),
    Term::new(-1.0, &[d(0, 3, 0, 0), d(2, 0, 0, 0), d(2, 0, 1, 0)]),
    Term::new(2.0, &[d(1, 1, 0, 0), d(1, 1, 0, 1), d(1, 2, 0, 0)]),
    Term::new(-2.0, &[d(1, 1, 0, 0), d(1, 1, 1, 0), d(2, 1, 0, 0)]),
    Term::new(2.0, &[d(1, 1, 0, 0), d(1, 2, 0, 0), d(2, 0, 1, 0)]),
    Term::new(1.0, &[d(1, 1, 1, 0), d(1, 2, 0, 0), d(2, 0, 0, 0)]),
];

// (x1y2 - x2y1)(x1y3 - x3y1)^2 ADI1(2) ADI1(3)
const AWMI1_7_TERMS: &[Term] = &[
    Term::new(1.0, &[d(0, 2, 0, 1), d(0, 3, 0, 1), d(3, 0, 0, 0)]),
    Term::new(1.0, &[d(0, 2, 0, 1), d(1, 2, 0, 0), d(2, 1, 0, 1)]),
    Term::new(1.0, &[d(0, 2, 0, 1), d(1, 2, 0, 0), d(3, 0, 1, 0)]),
    Term::new(-2.0, &[d(0, 2, 0, 1), d(1, 2, 0, 1), d(2, 1, 0, 0)]),
    Term::new(1.0, &[d(0, 2, 0, 1), d(1, 2, 1, 0), d(3, 0, 0, 0)]),
    Term::new(-2.0, &[d(0, 2, 0, 1), d(2, 1, 0, 0), d(2, 1, 1, 0)]),
    Term::new(-1.0, &[d(0, 3, 0, 0), d(1, 1, 0, 1), d(2, 1, 0, 1)]),
    Term::new(-1.0, &[d(0, 3, 0, 0), d(1, 1, 0, 1), d(3, 0, 1, 0)]),
    Term::new(-1.0, &[d(0, 3, 0, 0), d(2, 0, 1, 0), d(2, 1, 0, 1)]),
    Term::new(-1.0, &[d(0, 3, 0, 0), d(2, 0, 1, 0), d(3, 0, 1, 0)]),
    Term::new(-1.0, &[d(0, 3, 0, 1), d(1, 1, 0, 1), d(2, 1, 0, 0)]),
    Term::new(1.0, &[d(0, 3, 0, 1), d(1, 1, 1, 0), d(3, 0, 0, 0)]),
    Term::new(-1.0, &[d(0, 3, 0, 1), d(2, 0, 1, 0), d(2, 1, 0, 0)]),
    Term::new(2.0, &[d(1, 1, 0, 1), d(1, 2, 0, 0), d(1, 2, 0, 1)]),
    Term::new(2.0, &[d(1, 1, 0, 1), d(1, 2, 0, 0), d(2, 1, 1, 0)]),
    Term::new(-1.0, &[d(1, 1, 0, 1), d(1, 2, 1, 0), d(2, 1, 0, 0)]),
    Term::new(1.0, &[d(1, 1, 1, 0), d(1, 2, 0, 0), d(2, 1, 0, 1)]),
    Term::new(1.0, &[d(1, 1, 1, 0), d(1, 2, 0, 0), d(3, 0, 1, 0)]),
    Term::new(-2.0, &[d(1, 1, 1, 0), d(1, 2, 0, 1), d(2, 1, 0, 0)]),
    Term::new(1.0, &[d(1, 1, 1, 0), d(1, 2, 1, 0), d(3, 0, 0, 0)]),
    Term::new(-2.0, &[d(1, 1, 1, 0), d(2, 1, 0, 0), d(2, 1, 1, 0)]),
    Term::new(2.0, &[d(1, 2, 0, 0), d(1, 2, 0, 1), d(2, 0, 1, 0)]),
    Term::new(2.0, &[d(1, 2, 0, 0), d(2, 0, 1, 0), d(2, 1, 1, 0)]),
    Term::new(-1.0, &[d(1, 2, 1, 0), d(2, 0, 1, 0), d(2, 1, 0, 0)]),
];

// (x1y2 - x2y1)(x1y3 - x3y1)(x2y3 - x3y2)^2 ADI1(1)
const AWMI1_8_TERMS: &[Term] = &[
    Term::new(-2.0, &[d(0, 3, 0, 0), d(1, 2, 0, 1), d(3, 0, 0, 0)]),
    Term::new(2.0, &[d(0, 3, 0, 0), d(2, 1, 0, 0), d(2, 1, 0, 1)]),
    Term::new(2.0, &[d(0, 3, 0, 0), d(2, 1, 0, 0), d(3, 0, 1, 0)]),
    Term::new(-2.0, &[d(0, 3, 0, 0), d(2, 1, 1, 0), d(3, 0, 0, 0)]),
    Term::new(2.0, &[d(0, 3, 0, 1), d(1, 2, 0, 0), d(3, 0, 0, 0)]),
    Term::new(-2.0, &[d(0, 3, 0, 1), d(2, 1, 0, 0), d(2, 1, 0, 0)]),
    Term::new(-2.0, &[d(1, 2, 0, 0), d(1, 2, 0, 0), d(2, 1, 0, 1)]),
    Term::new(-2.0, &[d(1, 2, 0, 0), d(1, 2, 0, 0), d(3, 0, 1, 0)]),
    Term::new(2.0, &[d(1, 2, 0, 0), d(1, 2, 0, 1), d(2, 1, 0, 0)]),
    Term::new(2.0, &[d(1, 2, 0, 0), d(1, 2, 1, 0), d(3, 0, 0, 0)]),
    Term::new(2.0, &[d(1, 2, 0, 0), d(2, 1, 0, 0), d(2, 1, 1, 0)]),
    Term::new(-2.0, &[d(1, 2, 1, 0), d(2, 1, 0, 0), d(2, 1, 0, 0)]),
];
const AWMI2_NUMERATOR: [(f64, DmKey); 2] = [
    (1.0, DmKey::second(0, 0, 0, 0, 1, 1, 0)),
    (-1.0, DmKey::second(0, 0, 0, 0, 0, 0, 2)),
];

const AWMI2_DENOMINATOR: [(f64, DmKey); 3] = [
    (1.0, DmKey::second(0, 0, 0, 2, 1, 0, 0)),
    (-2.0, DmKey::second(0, 0, 1, 1, 0, 0, 1)),
    (1.0, DmKey::second(0, 0, 2, 0, 0, 1, 0)),
];

/// Every DM key any closed form here needs, including `D^{00}_{00}`.
pub fn required_dm_keys() -> Vec<DmKey> {
    let mut keys: Vec<DmKey> = InvariantId::AWMI1
        .iter()
        .filter_map(|id| id.terms())
        .flat_map(|terms| terms.iter().flat_map(|t| t.factors.iter().copied()))
        .chain(AWMI2_NUMERATOR.iter().map(|(_, k)| *k))
        .chain(AWMI2_DENOMINATOR.iter().map(|(_, k)| *k))
        .chain(std::iter::once(DmKey::MASS))
        .collect();
    keys.sort();
    keys.dedup();
    keys
}

fn normalize(numerator: f64, base: f64, exponent: i32) -> Result<f64> {
    if base <= 0.0 || !base.is_finite() {
        return Err(Error::NonPositiveNormalization(base));
    }
    Ok(numerator / base.powi(exponent))
}

/// `2 u20 u02 - 2 u11^2`.
pub fn ami2_numerator(m: &MomentTable) -> f64 {
    2.0 * m.u(0, 2) * m.u(2, 0) - 2.0 * m.u(1, 1) * m.u(1, 1)
}

pub fn ami2(m: &MomentTable) -> Result<f64> {
    normalize(ami2_numerator(m), m.u(0, 0), 4)
}

pub fn ami7_numerator(m: &MomentTable) -> f64 {
    let u = |p, q| m.u(p, q);
    2.0 * u(0, 2) * u(1, 2) * u(3, 0)
        - 2.0 * u(0, 2) * u(2, 1) * u(2, 1)
        - 2.0 * u(0, 3) * u(1, 1) * u(3, 0)
        + 2.0 * u(0, 3) * u(2, 0) * u(2, 1)
        + 2.0 * u(1, 1) * u(1, 2) * u(2, 1)
        - 2.0 * u(1, 2) * u(1, 2) * u(2, 0)
}

pub fn ami7(m: &MomentTable) -> Result<f64> {
    normalize(ami7_numerator(m), m.u(0, 0), 7)
}

/// Un-normalized AWMI1 polynomial. Panics for ids that are not AWMI1.
pub fn awmi1_numerator(id: InvariantId, dms: &DmTable) -> f64 {
    let terms = id
        .terms()
        .unwrap_or_else(|| panic!("{id} has no differential-moment expansion"));
    terms
        .iter()
        .map(|t| t.coef * t.factors.iter().map(|k| dms.get(*k)).product::<f64>())
        .collect::<CompensatedSum>()
        .value()
}

pub fn awmi1(id: InvariantId, dms: &DmTable) -> Result<f64> {
    if id.terms().is_none() {
        return Err(Error::InvalidConfig(format!(
            "{id} is not an AWMI1 invariant"
        )));
    }
    let exponent = id.normalization_exponent().expect("AWMI1 has a core");
    normalize(awmi1_numerator(id, dms), dms.mass(), exponent)
}

/// Numerator and denominator of AWMI2 with the magnitude used by the
/// degeneracy guard.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioParts {
    pub numerator: f64,
    pub denominator: f64,
    pub denominator_scale: f64,
}

impl RatioParts {
    const RELATIVE_GUARD: f64 = 1e-12;

    /// `None` when the denominator is lost in cancellation or the image has
    /// no second-order structure at all.
    pub fn ratio(&self, mass: f64) -> Option<f64> {
        let floor = Self::RELATIVE_GUARD * (self.denominator_scale + Self::RELATIVE_GUARD * mass);
        if self.denominator.abs() <= floor {
            return None;
        }
        let v = self.numerator / self.denominator;
        v.is_finite().then_some(v)
    }
}

pub fn awmi2_parts(dms: &DmTable) -> RatioParts {
    let num = AWMI2_NUMERATOR
        .iter()
        .map(|(c, k)| c * dms.get(*k))
        .collect::<CompensatedSum>()
        .value();
    let den_terms: Vec<f64> = AWMI2_DENOMINATOR
        .iter()
        .map(|(c, k)| c * dms.get(*k))
        .collect();
    RatioParts {
        numerator: num,
        denominator: den_terms
            .iter()
            .copied()
            .collect::<CompensatedSum>()
            .value(),
        denominator_scale: den_terms.iter().map(|v| v.abs()).sum(),
    }
}

/// `(D_00110 - D_00002) / (D_02100 - 2 D_11001 + D_20010)`; `None` if undefined.
pub fn awmi2(dms: &DmTable) -> Option<f64> {
    awmi2_parts(dms).ratio(dms.mass())
}

/// AWMI2 as the ratio of the integrated ADI4 and ADI5 fields. Independent of
/// the DM expansion; used to cross-check [`awmi2`].
pub fn awmi2_from_fields(
    raster: &Raster,
    stack: &DerivativeStack,
    centroid: (f64, f64),
) -> Option<f64> {
    let adi = adi_fields(stack, centroid);
    let f = raster.intensities();
    let integrate = |field: &crate::Field| -> (f64, f64) {
        let mut acc = CompensatedSum::new();
        let mut mag = 0.0;
        for (a, v) in field.as_slice().iter().zip(f) {
            acc.add(a * v);
            mag += (a * v).abs();
        }
        (acc.value(), mag)
    };
    let (num, _) = integrate(&adi.adi4);
    let (den, den_mag) = integrate(&adi.adi5);
    let mass: f64 = f.iter().sum();
    RatioParts {
        numerator: num,
        denominator: den,
        denominator_scale: den_mag,
    }
    .ratio(mass)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub ids: Vec<InvariantId>,
    pub diff: DiffConfig,
}

impl FeatureConfig {
    /// AWMI1_1..AWMI1_8 and AWMI2.
    pub fn awmi() -> Self {
        let mut ids = InvariantId::AWMI1.to_vec();
        ids.push(InvariantId::Awmi2);
        Self {
            ids,
            diff: DiffConfig::default(),
        }
    }

    pub fn ami() -> Self {
        Self {
            ids: vec![InvariantId::Ami2, InvariantId::Ami7],
            diff: DiffConfig::default(),
        }
    }

    pub fn both() -> Self {
        let mut cfg = Self::awmi();
        cfg.ids.extend([InvariantId::Ami2, InvariantId::Ami7]);
        cfg
    }

    pub fn with_diff(mut self, diff: DiffConfig) -> Self {
        self.diff = diff;
        self
    }

    fn needs_derivatives(&self) -> bool {
        self.ids.iter().any(InvariantId::is_awmi)
    }
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self::awmi()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureEntry {
    pub id: InvariantId,
    /// `None` marks an undefined value (for example a zero AWMI2 denominator).
    pub value: Option<f64>,
}

/// Invariant values of one image in configuration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub entries: Vec<FeatureEntry>,
    pub diff: DiffConfig,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: InvariantId) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.id == id)
            .and_then(|e| e.value)
    }

    pub fn values(&self) -> impl Iterator<Item = Option<f64>> + '_ {
        self.entries.iter().map(|e| e.value)
    }

    pub fn ids(&self) -> impl Iterator<Item = InvariantId> + '_ {
        self.entries.iter().map(|e| e.id)
    }

    /// `sign(v) * ln(1 + |v| / scale)` per component, for retrieval over
    /// components spanning many decades.
    pub fn signed_log(&self, scale: f64) -> FeatureVector {
        FeatureVector {
            entries: self
                .entries
                .iter()
                .map(|e| FeatureEntry {
                    id: e.id,
                    value: e.value.map(|v| v.signum() * (v.abs() / scale).ln_1p()),
                })
                .collect(),
            diff: self.diff,
        }
    }
}

/// Computes the configured invariants, building the derivative stack and the
/// differential-moment table at most once.
pub fn feature_vector(raster: &Raster, config: &FeatureConfig) -> Result<FeatureVector> {
    let moments = MomentTable::new(raster)?;
    let stack = if config.needs_derivatives() {
        Some(derivative_stack(raster, &config.diff)?)
    } else {
        None
    };
    let dms = match &stack {
        Some(s) => Some(DmTable::new(raster, s, &required_dm_keys())?),
        None => None,
    };
    let finite = |v: f64| v.is_finite().then_some(v);
    let entries = config
        .ids
        .iter()
        .map(|&id| {
            let value = match id {
                InvariantId::Ami2 => ami2(&moments).ok().and_then(finite),
                InvariantId::Ami7 => ami7(&moments).ok().and_then(finite),
                InvariantId::Awmi2 => awmi2(dms.as_ref().expect("stack built")),
                _ => awmi1(id, dms.as_ref().expect("stack built"))
                    .ok()
                    .and_then(finite),
            };
            FeatureEntry { id, value }
        })
        .collect();
    Ok(FeatureVector {
        entries,
        diff: config.diff,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{generate_synthetic, warp_affine, AffineParams, SyntheticSpec};

    fn blob(seed: u64) -> Raster {
        generate_synthetic(&SyntheticSpec::random_blobs(64, 56, 3, seed)).unwrap()
    }

    fn pixels(points: &[(usize, usize)], w: usize, h: usize) -> Raster {
        let mut v = vec![0.0; w * h];
        for &(c, r) in points {
            v[r * w + c] = 1.0;
        }
        Raster::new(w, h, v).unwrap()
    }

    #[test]
    fn ami2_three_pixels() {
        let m = MomentTable::new(&pixels(&[(1, 1), (2, 1), (1, 2)], 4, 4)).unwrap();
        assert!((ami2_numerator(&m) - 2.0 / 3.0).abs() < 1e-14);
        assert!((ami2(&m).unwrap() - 2.0 / 243.0).abs() < 1e-15);
    }

    #[test]
    fn ami2_collinear_points_vanish() {
        let m = MomentTable::new(&pixels(&[(1, 1), (3, 3)], 5, 5)).unwrap();
        assert!(ami2(&m).unwrap().abs() < 1e-15);
    }

    #[test]
    fn ami7_vanishes_for_centrally_symmetric_images() {
        let r = Raster::from_fn(40, 40, |x, y| {
            let (dx, dy) = (x - 20.0, y - 20.0);
            (-(dx * dx + 0.5 * dx * dy + 2.0 * dy * dy) / 60.0).exp()
        })
        .unwrap();
        let m = MomentTable::new(&r).unwrap();
        let scale = 2.0 * m.u(0, 2) * m.u(2, 0).powf(2.0) / m.u(0, 0).powi(7);
        assert!(ami7(&m).unwrap().abs() <= 1e-10 * scale.abs());
    }

    #[test]
    fn awmi1_6_is_awmi1_3() {
        let r = blob(4);
        let s = derivative_stack(&r, &DiffConfig::default()).unwrap();
        let t = DmTable::new(&r, &s, &required_dm_keys()).unwrap();
        assert_eq!(
            awmi1(InvariantId::Awmi1_3, &t).unwrap().to_bits(),
            awmi1(InvariantId::Awmi1_6, &t).unwrap().to_bits()
        );
    }

    #[test]
    fn constant_raster_awmi() {
        let r = Raster::new(20, 20, vec![0.8; 400]).unwrap();
        let v = feature_vector(&r, &FeatureConfig::awmi()).unwrap();
        for e in &v.entries[..8] {
            assert!(e.value.unwrap().abs() < 1e-20, "{}: {:?}", e.id, e.value);
        }
        assert_eq!(v.get(InvariantId::Awmi2), None);
        assert_eq!(v.entries[8].value, None);
    }

    #[test]
    fn awmi2_routes_agree() {
        let r = blob(9);
        let s = derivative_stack(&r, &DiffConfig::default()).unwrap();
        let t = DmTable::new(&r, &s, &required_dm_keys()).unwrap();
        let expansion = awmi2(&t).unwrap();
        let c = t.centroid();
        let direct = awmi2_from_fields(&r, &s, (c.x, c.y)).unwrap();
        assert!((expansion - direct).abs() <= 1e-10 * direct.abs());
    }

    #[test]
    fn default_vector_layout() {
        let v = feature_vector(&blob(1), &FeatureConfig::default()).unwrap();
        let names: Vec<_> = v.ids().map(|id| id.name()).collect();
        assert_eq!(
            names,
            [
                "AWMI1_1", "AWMI1_2", "AWMI1_3", "AWMI1_4", "AWMI1_5", "AWMI1_6", "AWMI1_7",
                "AWMI1_8", "AWMI2"
            ]
        );
    }

    #[test]
    fn ami_only_vector_matches_direct_calls() {
        let r = blob(2);
        let v = feature_vector(&r, &FeatureConfig::ami()).unwrap();
        let m = MomentTable::new(&r).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(
            v.entries[0].value.unwrap().to_bits(),
            ami2(&m).unwrap().to_bits()
        );
        assert_eq!(
            v.entries[1].value.unwrap().to_bits(),
            ami7(&m).unwrap().to_bits()
        );
    }

    #[test]
    fn identity_warp_gives_identical_vector() {
        let r = blob(3);
        let w = warp_affine(&r, &AffineParams::IDENTITY, r.width(), r.height()).unwrap();
        let a = feature_vector(&r, &FeatureConfig::both()).unwrap();
        let b = feature_vector(&w, &FeatureConfig::both()).unwrap();
        for (x, y) in a.values().zip(b.values()) {
            let (x, y) = (x.unwrap(), y.unwrap());
            assert!((x - y).abs() <= 1e-12 * x.abs());
        }
    }

    #[test]
    fn zero_mass_fails() {
        let r = Raster::new(12, 12, vec![0.0; 144]).unwrap();
        assert!(matches!(
            feature_vector(&r, &FeatureConfig::both()),
            Err(Error::ZeroMass)
        ));
    }

    #[test]
    fn normalization_exponents() {
        let exps: Vec<i32> = InvariantId::ALL
            .iter()
            .filter_map(|id| id.normalization_exponent())
            .collect();
        assert_eq!(exps, [4, 7, 4, 4, 5, 5, 6, 5, 6, 7]);
        assert_eq!(InvariantId::Awmi2.normalization_exponent(), None);
    }

    #[test]
    fn id_round_trip() {
        for id in InvariantId::ALL {
            assert_eq!(id.name().parse::<InvariantId>().unwrap(), id);
        }
        assert_eq!(
            "awmi1_4".parse::<InvariantId>().unwrap(),
            InvariantId::Awmi1_4
        );
        assert!("AMI3".parse::<InvariantId>().is_err());
    }

    #[test]
    fn required_keys_cover_expansions() {
        let keys = required_dm_keys();
        assert!(keys.contains(&DmKey::MASS));
        assert!(keys.contains(&DmKey::second(0, 0, 1, 1, 0, 0, 1)));
        assert_eq!(keys.iter().filter(|k| !k.is_first_order()).count(), 5);
    }
}
