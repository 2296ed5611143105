//! Epanechnikov kernel and its moment-corrected boundary variant.
//!
//! The boundary kernel `(a + b·u)·K(u)·1{u ≥ u_min}` restores the zeroth and
//! first moments of `K` when its support is cut at `u_min`, which is what a
//! local-constant smoother needs to stay first-order unbiased next to a
//! support boundary. The weights are signed; they are never clipped.

use crate::error::{Error, Result};

/// `0.75·(1 − u²)` on `[-1, 1]`, zero elsewhere.
#[inline]
pub fn epanechnikov(u: f64) -> f64 {
    if u.abs() <= 1.0 {
        0.75 * (1.0 - u * u)
    } else {
        0.0
    }
}

/// Distribution function of the Epanechnikov kernel.
pub fn kernel_cdf(t: f64) -> f64 {
    let t = t.clamp(-1.0, 1.0);
    (0.5 + 0.75 * (t - t * t * t / 3.0)).clamp(0.0, 1.0)
}

/// Level and slope coefficients of the boundary kernel truncated at `u_min`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryCoefficients {
    pub u_min: f64,
    pub a: f64,
    pub b: f64,
}

impl BoundaryCoefficients {
    /// Coefficients that leave the base kernel unchanged.
    pub const FULL_SUPPORT: BoundaryCoefficients = BoundaryCoefficients {
        u_min: -1.0,
        a: 1.0,
        b: 0.0,
    };
}

/// Truncated moments `(A0, A1, A2)` of `K` over `[u_min, ∞)` together with
/// `A0·A2 − A1²`.
///
/// Written in `t = 1 − u_min` so that nothing cancels as the truncation point
/// approaches the right edge of the support (all four vanish like powers of
/// `t`).
pub(crate) fn truncated_moments(u_min: f64) -> (f64, f64, f64, f64) {
    let t = 1.0 - u_min.max(-1.0);
    let t2 = t * t;
    let a0 = 0.75 * t2 * (1.0 - t / 3.0);
    let a1 = 0.1875 * t2 * (2.0 - t) * (2.0 - t);
    let a2 = 0.75 * t2 * (1.0 - t * (5.0 / 3.0 - t * (1.0 - t / 5.0)));
    let det = t2 * t2 * t2 * (40.0 - 24.0 * t + 3.0 * t2) / 1280.0;
    (a0, a1, a2, det)
}

pub fn boundary_coefficients(u_min: f64) -> Result<BoundaryCoefficients> {
    if !u_min.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "truncation point must be finite, got {u_min}"
        )));
    }
    if u_min >= 1.0 {
        return Err(Error::DegenerateTruncation { u_min });
    }
    if u_min <= -1.0 {
        return Ok(BoundaryCoefficients { u_min, ..BoundaryCoefficients::FULL_SUPPORT });
    }
    let (_, a1, a2, det) = truncated_moments(u_min);
    Ok(BoundaryCoefficients {
        u_min,
        a: a2 / det,
        b: -a1 / det,
    })
}

#[inline]
pub fn boundary_kernel(u: f64, coeffs: &BoundaryCoefficients) -> f64 {
    if u < coeffs.u_min {
        0.0
    } else {
        (coeffs.a + coeffs.b * u) * epanechnikov(u)
    }
}
