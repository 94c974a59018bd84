//! Scalar two-eigenvalue stability model.
//!
//! A point `(jg, jh)` pairs an eigenvalue of the recall Jacobian with one of
//! the sublayer Jacobian sharing its eigenvector. Internal recall is stable
//! when `|1 + jg·jh| < 1`, external recall when `|(1 + jh)·jg| < 1`.

mod anisotropy;
mod plot;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::linalg::{eigenvalues, DenseMatrix};

pub use anisotropy::{
    anisotropy_metrics, anisotropy_sample, run_anisotropy, AnisotropyMetrics, AnisotropySample,
    AnisotropyStats, VariantStats, DEFAULT_METRIC_EPS,
};
pub use plot::{stability_grid, stability_svg, GridSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Internal,
    External,
}

impl Variant {
    pub const ALL: [Variant; 2] = [Self::Internal, Self::External];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Internal => "internal",
            Self::External => "external",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = ScalarError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "internal" => Ok(Self::Internal),
            "external" => Ok(Self::External),
            _ => Err(ScalarError::BadVariant(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarPoint {
    pub jg: f64,
    pub jh: f64,
}

impl ScalarPoint {
    pub fn new(jg: f64, jh: f64) -> Self {
        Self { jg, jh }
    }

    pub fn distance(self, other: Self) -> f64 {
        (self.jg - other.jg).hypot(self.jh - other.jh)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScalarError {
    #[error("unknown variant `{0}`")]
    BadVariant(String),
    #[error("point is not finite")]
    NonFinite,
    #[error("projection failed; best candidate ({}, {})", best.jg, best.jh)]
    Projection { best: ScalarPoint },
}

/// The quantity whose magnitude must stay below 1.
pub fn region_expression(variant: Variant, p: ScalarPoint) -> f64 {
    match variant {
        Variant::Internal => (1.0 + p.jg * p.jh).abs(),
        Variant::External => ((1.0 + p.jh) * p.jg).abs(),
    }
}

/// Membership in the open stability region.
pub fn region_member(variant: Variant, p: ScalarPoint) -> bool {
    region_expression(variant, p) < 1.0
}

/// Slack for treating a point as already in the closed region.
const CLOSURE_SLACK: f64 = 1e-12;

/// Nearest point of `{(x, v) : x·v = s}` to `(px, pv)`.
///
/// Stationary points satisfy `x⁴ − px·x³ + s·pv·x − s² = 0`; every real root
/// is polished by Newton's method and the closest is kept.
fn nearest_on_hyperbola(px: f64, pv: f64, s: f64) -> Option<(f64, f64)> {
    let c = [-s * s, s * pv, 0.0, -px];
    let poly = |x: f64| (((x - px) * x) * x + s * pv) * x - s * s;
    let dpoly = |x: f64| ((4.0 * x - 3.0 * px) * x) * x + s * pv;
    // Companion matrix of the monic quartic.
    let comp = DenseMatrix::from_fn(4, 4, |i, j| {
        if j == 3 {
            -c[i]
        } else if i == j + 1 {
            1.0
        } else {
            0.0
        }
    });
    let scale = 1.0 + px.abs() + pv.abs() + s.abs();
    let mut best: Option<(f64, f64, f64)> = None;
    for root in eigenvalues(&comp).ok()? {
        if root.im.abs() > 1e-6 * scale {
            continue;
        }
        let mut x = root.re;
        for _ in 0..50 {
            let dp = dpoly(x);
            if dp == 0.0 {
                break;
            }
            let step = poly(x) / dp;
            x -= step;
            if step.abs() <= 1e-15 * x.abs().max(1e-300) {
                break;
            }
        }
        if x == 0.0 || !x.is_finite() {
            continue;
        }
        let v = s / x;
        let dist = (x - px).hypot(v - pv);
        if best.is_none_or(|b| dist < b.2) {
            best = Some((x, v, dist));
        }
    }
    best.map(|(x, v, _)| (x, v))
}

/// Euclidean projection onto the closed stability region. Points already in
/// the closure are returned unchanged.
pub fn project_to_region(variant: Variant, p: ScalarPoint) -> Result<ScalarPoint, ScalarError> {
    if !(p.jg.is_finite() && p.jh.is_finite()) {
        return Err(ScalarError::NonFinite);
    }
    if region_expression(variant, p) <= 1.0 + CLOSURE_SLACK {
        return Ok(p);
    }
    match variant {
        Variant::Internal => {
            let prod = p.jg * p.jh;
            if prod > 0.0 {
                // The closed region contains both axes.
                Ok(if p.jg.abs() <= p.jh.abs() {
                    ScalarPoint::new(0.0, p.jh)
                } else {
                    ScalarPoint::new(p.jg, 0.0)
                })
            } else {
                nearest_on_hyperbola(p.jg, p.jh, -2.0)
                    .map(|(x, y)| ScalarPoint::new(x, y))
                    .ok_or(ScalarError::Projection {
                        best: ScalarPoint::new(0.0, 0.0),
                    })
            }
        }
        Variant::External => {
            let u = 1.0 + p.jh;
            let s = (p.jg * u).signum();
            nearest_on_hyperbola(p.jg, u, s)
                .map(|(x, u)| ScalarPoint::new(x, u - 1.0))
                .ok_or(ScalarError::Projection {
                    best: ScalarPoint::new(0.0, p.jh),
                })
        }
    }
}
