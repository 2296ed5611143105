//! Kernel smoothers: marginal density, Nadaraya–Watson means (interior and
//! boundary-corrected) and the conditional density of the period-one running
//! variable given the period-zero one.
//!
//! These are the direct, one-point-at-a-time forms. The counterfactual
//! estimator evaluates the same sums on grids through a scatter pass, and its
//! tests check it against these functions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{boundary_coefficients, boundary_kernel, epanechnikov};
use crate::panel::{sample_sd, Group, PanelDataset};

/// Smoothing scales: `h` along the period-zero running variable, `b` along
/// the period-one running variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bandwidths {
    pub h: f64,
    pub b: f64,
}

impl Bandwidths {
    pub fn new(h: f64, b: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite() && b > 0.0 && b.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "bandwidths must be positive and finite, got h={h}, b={b}"
            )));
        }
        Ok(Bandwidths { h, b })
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Bandwidths { h: self.h * factor, b: self.b * factor }
    }
}

/// `constant · n^(−exponent) · scale`.
pub fn bandwidth(n: usize, exponent: f64, constant: f64, scale: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidParameter("sample size must be positive".into()));
    }
    if !(exponent > 0.0 && exponent < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "bandwidth exponent must lie in (0, 1), got {exponent}"
        )));
    }
    if !(constant > 0.0 && constant.is_finite()) || !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "bandwidth constant and scale must be positive, got {constant}, {scale}"
        )));
    }
    Ok(constant * (n as f64).powf(-exponent) * scale)
}

/// Where the `σ_R` factor of a bandwidth rule comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum ScaleSource {
    /// `h` scales with sd(R₀ | z=1), `b` with sd(R₁ | z=1).
    #[default]
    PerSubsample,
    /// Both scale with the sd of every running-variable value in the panel.
    Pooled,
    Fixed(f64),
}

/// `h = constant · n^(−exponent) · σ`, with `n` the total number of units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthRule {
    pub constant: f64,
    pub exponent: f64,
    pub scale: ScaleSource,
}

impl BandwidthRule {
    pub fn new(constant: f64, exponent: f64) -> Self {
        BandwidthRule { constant, exponent, scale: ScaleSource::PerSubsample }
    }

    pub fn resolve(&self, data: &PanelDataset) -> Result<Bandwidths> {
        let n = data.len();
        let (sh, sb) = match self.scale {
            ScaleSource::PerSubsample => {
                let sh = sample_sd(data.group(Group::Exposed).map(|u| u.r0));
                let sb = sample_sd(data.group(Group::Exposed).map(|u| u.r1));
                match (sh, sb) {
                    (Some(sh), Some(sb)) => (sh, sb),
                    _ => return Err(Error::EmptySample("need at least 2 z=1 units for a bandwidth scale")),
                }
            }
            ScaleSource::Pooled => {
                let s = sample_sd(data.units().iter().flat_map(|u| [u.r0, u.r1]))
                    .ok_or(Error::EmptySample("need at least 2 values for a bandwidth scale"))?;
                (s, s)
            }
            ScaleSource::Fixed(s) => (s, s),
        };
        Bandwidths::new(
            bandwidth(n, self.exponent, self.constant, sh)?,
            bandwidth(n, self.exponent, self.constant, sb)?,
        )
    }
}

fn check_bandwidth(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("bandwidth must be positive, got {h}")))
    }
}

fn check_paired(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch { left: xs.len(), right: ys.len() });
    }
    if xs.is_empty() {
        return Err(Error::EmptySample("no observations"));
    }
    Ok(())
}

/// Kernel density estimate `(1/(n·h))·Σ K((pᵢ − x)/h)`.
pub fn kde(points: &[f64], h: f64, x: f64) -> Result<f64> {
    check_bandwidth(h)?;
    if points.is_empty() {
        return Err(Error::EmptySample("density sample is empty"));
    }
    let s: f64 = points.iter().map(|&p| epanechnikov((p - x) / h)).sum();
    Ok(s / (points.len() as f64 * h))
}

/// Nadaraya–Watson estimate of `E[y | x]`.
pub fn nw_mean(xs: &[f64], ys: &[f64], h: f64, x: f64) -> Result<f64> {
    check_bandwidth(h)?;
    check_paired(xs, ys)?;
    let (mut num, mut den) = (0.0, 0.0);
    for (&xi, &yi) in xs.iter().zip(ys) {
        let w = epanechnikov((xi - x) / h);
        num += w * yi;
        den += w;
    }
    if den == 0.0 {
        return Err(Error::EmptyWindow { at: x });
    }
    Ok(num / den)
}

/// Conditional density of `y` given `x`:
/// `Σ (1/b)·K((yᵢ − y)/b)·K((xᵢ − x)/h) / Σ K((xᵢ − x)/h)`.
pub fn cond_density(x_pts: &[f64], y_pts: &[f64], bw: Bandwidths, y: f64, x: f64) -> Result<f64> {
    check_bandwidth(bw.h)?;
    check_bandwidth(bw.b)?;
    check_paired(x_pts, y_pts)?;
    let (mut num, mut den) = (0.0, 0.0);
    for (&xi, &yi) in x_pts.iter().zip(y_pts) {
        let w = epanechnikov((xi - x) / bw.h);
        if w > 0.0 {
            num += w * epanechnikov((yi - y) / bw.b);
            den += w;
        }
    }
    if den == 0.0 {
        return Err(Error::EmptyWindow { at: x });
    }
    Ok(num / (den * bw.b))
}

/// Nadaraya–Watson mean on the treated side of a cutoff `c`.
///
/// Within `tau·b` of the cutoff the kernel is replaced by the boundary kernel
/// truncated at `(c − r)/b`; further in it is the plain interior estimate.
/// `xs` is expected to hold only values `≥ c`.
pub fn boundary_nw_mean(xs: &[f64], ys: &[f64], b: f64, tau: f64, c: f64, r: f64) -> Result<f64> {
    check_bandwidth(b)?;
    check_paired(xs, ys)?;
    if !(tau >= 0.0) {
        return Err(Error::InvalidParameter(format!("tau must be nonnegative, got {tau}")));
    }
    if r < c {
        return Err(Error::InvalidParameter(format!(
            "evaluation point {r} lies below the cutoff {c}"
        )));
    }
    if r - c >= tau * b {
        return nw_mean(xs, ys, b, r);
    }
    boundary_weighted_mean(xs, ys, b, c, r)
}

/// Ratio estimate with the boundary kernel truncated at `(c − r)/b`, for any
/// `r` within one bandwidth of usable support (including `r < c`, which
/// extrapolates from the observations just above the cutoff).
pub(crate) fn boundary_weighted_mean(xs: &[f64], ys: &[f64], b: f64, c: f64, r: f64) -> Result<f64> {
    let coeffs = boundary_coefficients((c - r) / b)?;
    let (mut num, mut den, mut any) = (0.0, 0.0, false);
    for (&xi, &yi) in xs.iter().zip(ys) {
        let u = (xi - r) / b;
        if u.abs() <= 1.0 && u >= coeffs.u_min {
            let w = boundary_kernel(u, &coeffs);
            num += w * yi;
            den += w;
            any = true;
        }
    }
    if !any {
        return Err(Error::EmptyWindow { at: r });
    }
    if !(den > 0.0) {
        return Err(Error::DegenerateWeights { at: r, sum: den });
    }
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::composite_simpson;
    use proptest::prelude::*;

    #[test]
    fn bandwidth_examples() {
        let h = bandwidth(1000, 0.28, std::f64::consts::FRAC_1_SQRT_2, 1.0).unwrap();
        assert!((h - 0.102_208_03).abs() < 1e-8, "{h}");
        assert_eq!(bandwidth(1, 0.3, 1.0, 5.0).unwrap(), 5.0);
        let h = bandwidth(2000, 0.32, std::f64::consts::SQRT_2, 2.0).unwrap();
        assert!((h - 0.2482).abs() < 5e-4, "{h}");
        assert!(bandwidth(100, 1.0, 1.0, 1.0).is_err());
        assert!(bandwidth(100, 0.3, -1.0, 1.0).is_err());
        assert!(bandwidth(0, 0.3, 1.0, 1.0).is_err());
    }

    #[test]
    fn kde_examples() {
        assert_eq!(kde(&[5.0], 1.0, 5.0).unwrap(), 0.75);
        assert_eq!(kde(&[4.0, 6.0], 2.0, 5.0).unwrap(), 0.28125);
        assert_eq!(kde(&[0.0], 1.0, 5.0).unwrap(), 0.0);
        assert!(matches!(kde(&[], 1.0, 0.0), Err(Error::EmptySample(_))));
    }

    #[test]
    fn nw_examples() {
        let xs = [1.0, 2.5, 3.0, 4.2];
        assert!((nw_mean(&xs, &[7.0; 4], 1.3, 2.7).unwrap() - 7.0).abs() < 1e-12);
        assert_eq!(nw_mean(&[4.0, 6.0], &[10.0, 20.0], 2.0, 5.0).unwrap(), 15.0);
        assert_eq!(nw_mean(&[4.0, 6.0], &[10.0, 20.0], 1.5, 4.0).unwrap(), 10.0);
        assert!(matches!(
            nw_mean(&[4.0, 6.0], &[10.0, 20.0], 0.5, 5.0),
            Err(Error::EmptyWindow { .. })
        ));
        assert!(matches!(
            nw_mean(&[4.0], &[10.0, 20.0], 0.5, 5.0),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn cond_density_examples() {
        let bw = Bandwidths::new(1.0, 1.0).unwrap();
        assert_eq!(cond_density(&[3.0], &[8.0], bw, 8.0, 3.0).unwrap(), 0.75);
        assert_eq!(cond_density(&[0.0, 0.0], &[0.0, 2.0], bw, 1.0, 0.0).unwrap(), 0.0);
        assert!(cond_density(&[0.0], &[0.0], bw, 0.0, 5.0).is_err());
    }

    #[test]
    fn cond_density_integrates_to_one() {
        let xs: Vec<f64> = (0..60).map(|i| (i as f64 * 0.37).sin() * 4.0).collect();
        let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| x + (i as f64 * 1.3).cos()).collect();
        let bw = Bandwidths::new(0.8, 0.6).unwrap();
        for &x in &[-3.0, -1.0, 0.0, 2.5] {
            let total = composite_simpson(|y| cond_density(&xs, &ys, bw, y, x).unwrap(), -8.0, 8.0, 4000);
            assert!((total - 1.0).abs() < 1e-3, "x={x}: {total}");
        }
    }

    #[test]
    fn kde_integrates_to_one() {
        let pts: Vec<f64> = (0..40).map(|i| (i as f64).sqrt() * 1.7).collect();
        let h = 0.9;
        let lo = pts[0] - h;
        let hi = pts[pts.len() - 1] + h;
        let total = composite_simpson(|x| kde(&pts, h, x).unwrap(), lo, hi, 6000);
        assert!((total - 1.0).abs() < 1e-3, "{total}");
    }

    #[test]
    fn boundary_mean_examples() {
        let xs: Vec<f64> = (0..50).map(|i| 10.0 + i as f64 * 0.1).collect();
        let ys = vec![3.5; xs.len()];
        for &r in &[10.0, 10.2, 11.0, 13.0] {
            let m = boundary_nw_mean(&xs, &ys, 0.5, 1.0, 10.0, r).unwrap();
            assert!((m - 3.5).abs() < 1e-12, "r={r}: {m}");
        }
        assert_eq!(boundary_nw_mean(&[10.0], &[4.0], 0.5, 1.0, 10.0, 10.0).unwrap(), 4.0);
        assert!(boundary_nw_mean(&[10.0], &[4.0], 0.5, 1.0, 10.0, 9.0).is_err());
    }

    #[test]
    fn boundary_mean_removes_first_order_bias_for_linear_means() {
        // Dense design: the boundary-corrected estimate reproduces a line
        // exactly up to the discreteness of the design, while the plain
        // one-sided average is off by O(b).
        let c = 0.0;
        let xs: Vec<f64> = (0..20001).map(|i| i as f64 * 1e-4).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 1.5 + 2.0 * x).collect();
        let b = 0.1;
        for &r in &[0.0, 0.02, 0.05, 0.09] {
            let m = boundary_nw_mean(&xs, &ys, b, 1.0, c, r).unwrap();
            assert!((m - (1.5 + 2.0 * r)).abs() < 1e-4, "r={r}: {m}");
        }
        let naive = nw_mean(&xs, &ys, b, 0.0).unwrap();
        assert!((naive - 1.5).abs() > 0.05);
    }

    proptest! {
        #[test]
        fn nw_stays_within_window_range(
            pts in proptest::collection::vec((0.0f64..10.0, -5.0f64..5.0), 1..40),
            x in 0.0f64..10.0,
            h in 0.2f64..3.0,
        ) {
            let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            if let Ok(m) = nw_mean(&xs, &ys, h, x) {
                let window: Vec<f64> = xs.iter().zip(&ys)
                    .filter(|(xi, _)| ((*xi - x) / h).abs() < 1.0)
                    .map(|(_, y)| *y)
                    .collect();
                let lo = window.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = window.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(m >= lo - 1e-9 && m <= hi + 1e-9);
            }
        }

        #[test]
        fn tau_zero_is_interior_estimate(
            pts in proptest::collection::vec((0.0f64..10.0, -5.0f64..5.0), 1..40),
            r in 0.0f64..10.0,
            b in 0.2f64..3.0,
        ) {
            let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            let bd = boundary_nw_mean(&xs, &ys, b, 0.0, 0.0, r);
            let nw = nw_mean(&xs, &ys, b, r);
            if let (Ok(a), Ok(n)) = (bd, nw) {
                prop_assert_eq!(a, n);
            }
        }
    }
}
