//! Balanced-group bootstrap for the ATT estimators.
//!
//! Each replicate resamples the z=0 and z=1 strata separately, keeping both
//! group sizes, and re-estimates with the full-sample bandwidths and grids.
//! Replicate `b` draws from an RNG stream keyed on `(seed, b, attempt)`
//! only, so results do not depend on how replicates are scheduled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::counterfactual::{att_pair, CfEstimator, CutoffConfig, EstimatorOptions, Grids, PreparedSample};
use crate::error::{Error, Result};
use crate::panel::{Group, PanelDataset, Unit};
use crate::smoothers::Bandwidths;

/// Attempts per replicate before it counts as failed.
pub const MAX_ATTEMPTS: u64 = 3;
/// Largest tolerated share of failed replicates.
pub const MAX_FAILURE_RATE: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CiMethod {
    /// `[θ̂ − q_{1−α/2}(Δ*), θ̂ − q_{α/2}(Δ*)]` with `Δ* = θ* − θ̂`.
    #[default]
    Basic,
    /// `θ̂ ± q_{1−α/2}(|Δ*|)`.
    Symmetric,
    /// `θ̂ ± z_{1−α/2}·sd(θ*)`.
    T,
}

impl std::str::FromStr for CiMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "basic" => Ok(CiMethod::Basic),
            "symmetric" => Ok(CiMethod::Symmetric),
            "t" => Ok(CiMethod::T),
            other => Err(Error::Config(format!("unknown CI method `{other}` (basic, symmetric, t)"))),
        }
    }
}

impl std::fmt::Display for CiMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CiMethod::Basic => "basic",
            CiMethod::Symmetric => "symmetric",
            CiMethod::T => "t",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub seed: u64,
    pub alpha: f64,
    pub ci_method: CiMethod,
    pub bias_reduce: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig { replicates: 200, seed: 0, alpha: 0.05, ci_method: CiMethod::Basic, bias_reduce: true }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates < 50 {
            return Err(Error::InvalidParameter(format!(
                "need at least 50 bootstrap replicates, got {}",
                self.replicates
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(Error::InvalidParameter(format!("alpha must lie in (0, 0.5), got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// Successful replicate estimates, in replicate order.
    pub draws: Vec<f64>,
    pub point: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub sd_star: f64,
    pub method: CiMethod,
    pub alpha: f64,
    /// Replicates that needed more than one attempt.
    pub redrawn: usize,
    /// Replicates that failed every attempt.
    pub failed: usize,
}

impl BootstrapResult {
    /// Interval for another method from the same draws.
    pub fn interval(&self, method: CiMethod) -> (f64, f64) {
        confidence_interval(self.point, &self.draws, method, self.alpha)
    }
}

/// Resamples `n₀` control and `n₁` exposed units with replacement, each
/// from its own stratum; records are copied whole.
pub fn resample_balanced<R: Rng + ?Sized>(data: &PanelDataset, rng: &mut R) -> PanelDataset {
    let control: Vec<&Unit> = data.group(Group::Control).collect();
    let exposed: Vec<&Unit> = data.group(Group::Exposed).collect();
    let mut units = Vec::with_capacity(data.len());
    for stratum in [&control, &exposed] {
        for _ in 0..stratum.len() {
            units.push(*stratum[rng.random_range(0..stratum.len())]);
        }
    }
    PanelDataset::from_parts(units, data.ids().clone()).expect("resample of a valid panel is valid")
}

/// Independent stream for replicate `index`, attempt `attempt`.
pub fn replicate_rng(seed: u64, index: u64, attempt: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_mul(MAX_ATTEMPTS + 1).wrapping_add(attempt));
    rng
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    debug_assert!(n > 0);
    let pos = p.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sample_sd(xs: &[f64]) -> f64 {
    crate::panel::sample_sd(xs.iter().copied()).unwrap_or(0.0)
}

pub fn confidence_interval(point: f64, draws: &[f64], method: CiMethod, alpha: f64) -> (f64, f64) {
    match method {
        CiMethod::Basic => {
            let mut d: Vec<f64> = draws.iter().map(|x| x - point).collect();
            d.sort_by(f64::total_cmp);
            (point - quantile_sorted(&d, 1.0 - alpha / 2.0), point - quantile_sorted(&d, alpha / 2.0))
        }
        CiMethod::Symmetric => {
            let mut d: Vec<f64> = draws.iter().map(|x| (x - point).abs()).collect();
            d.sort_by(f64::total_cmp);
            let q = quantile_sorted(&d, 1.0 - alpha / 2.0);
            (point - q, point + q)
        }
        CiMethod::T => {
            let z = Normal::standard().inverse_cdf(1.0 - alpha / 2.0);
            let half = z * sample_sd(draws);
            (point - half, point + half)
        }
    }
}

fn estimate(
    data: &PanelDataset,
    bw: Bandwidths,
    cut: CutoffConfig,
    grids: Grids,
    opts: EstimatorOptions,
    bias_reduce: bool,
) -> Result<f64> {
    let sample = PreparedSample::new(data, cut.c)?;
    if bias_reduce {
        Ok(att_pair(&sample, bw, cut, grids, opts)?.1.att)
    } else {
        Ok(CfEstimator::new(&sample, bw, cut, grids, opts)?.att()?.att)
    }
}

/// Bootstrap distribution and confidence interval of the (optionally
/// bias-reduced) ATT. Bandwidths and grids stay at their full-sample values.
pub fn bootstrap_att(
    data: &PanelDataset,
    bw: Bandwidths,
    cut: CutoffConfig,
    grids: Grids,
    opts: EstimatorOptions,
    cfg: &BootstrapConfig,
) -> Result<BootstrapResult> {
    cfg.validate()?;
    let point = estimate(data, bw, cut, grids, opts, cfg.bias_reduce)?;

    let outcomes: Vec<(Option<f64>, bool)> = (0..cfg.replicates as u64)
        .into_par_iter()
        .map(|index| {
            for attempt in 0..MAX_ATTEMPTS {
                let mut rng = replicate_rng(cfg.seed, index, attempt);
                let resampled = resample_balanced(data, &mut rng);
                if let Ok(v) = estimate(&resampled, bw, cut, grids, opts, cfg.bias_reduce) {
                    if v.is_finite() {
                        return (Some(v), attempt > 0);
                    }
                }
            }
            (None, true)
        })
        .collect();

    let draws: Vec<f64> = outcomes.iter().filter_map(|o| o.0).collect();
    let failed = cfg.replicates - draws.len();
    let redrawn = outcomes.iter().filter(|o| o.0.is_some() && o.1).count();
    if failed as f64 > MAX_FAILURE_RATE * cfg.replicates as f64 || draws.len() < 2 {
        return Err(Error::ReplicateFailures { failed, total: cfg.replicates });
    }
    let (ci_lo, ci_hi) = confidence_interval(point, &draws, cfg.ci_method, cfg.alpha);
    Ok(BootstrapResult {
        sd_star: sample_sd(&draws),
        draws,
        point,
        ci_lo,
        ci_hi,
        method: cfg.ci_method,
        alpha: cfg.alpha,
        redrawn,
        failed,
    })
}
