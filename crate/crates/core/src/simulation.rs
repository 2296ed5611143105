//! Simulation design with a distorted running variable, its oracle ATT, and
//! the Monte Carlo harness behind the bias and coverage tables.
//!
//! Control units (z=0) draw `R₀ ~ TN(50, 20²; [20, 80])` and drift by
//! `N(1, 2²)`; exposed units (z=1) draw `R₀ ~ TN(60, 15²; [20, 80])` and
//! shift by `N(2, 1)` once the policy is in place. The untreated period-one
//! outcome of an exposed unit follows the control trend evaluated along the
//! control drift, so conditional parallel trends hold by construction.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::counterfactual::{att_pair, CutoffConfig, EstimatorOptions, Grids, PreparedSample, MIN_MASS};
use crate::error::{Error, Result};
use crate::inference::{bootstrap_att, BootstrapConfig, CiMethod};
use crate::panel::{Group, PanelDataset, Unit};
use crate::smoothers::{BandwidthRule, ScaleSource};

pub const DEFAULT_ORACLE_DRAWS: usize = 10_000_000;
const ORACLE_CHUNK: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub n: usize,
    pub share_z1: f64,
    pub cutoff: f64,
    pub cf_cutoff: f64,
    pub outcome_noise_sd: f64,
    pub seed: u64,
    /// Exposed units keep their untreated outcome above the cutoff.
    pub null_effect: bool,
}

impl Default for DgpConfig {
    fn default() -> Self {
        DgpConfig {
            n: 1000,
            share_z1: 0.5,
            cutoff: 60.0,
            cf_cutoff: 63.0,
            outcome_noise_sd: 1.0,
            seed: 0,
            null_effect: false,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 100 {
            return Err(Error::InvalidParameter(format!("simulation needs n ≥ 100, got {}", self.n)));
        }
        if !(self.share_z1 > 0.0 && self.share_z1 < 1.0) {
            return Err(Error::InvalidParameter(format!("share_z1 must lie in (0, 1), got {}", self.share_z1)));
        }
        if !(self.outcome_noise_sd >= 0.0 && self.outcome_noise_sd.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "outcome noise sd must be nonnegative, got {}",
                self.outcome_noise_sd
            )));
        }
        if !(self.cutoff.is_finite() && self.cf_cutoff.is_finite()) {
            return Err(Error::InvalidParameter("cutoffs must be finite".into()));
        }
        Ok(())
    }

    /// `(n₀, n₁)`; each group gets at least two units.
    pub fn group_sizes(&self) -> (usize, usize) {
        let n1 = ((self.n as f64 * self.share_z1).round() as usize).clamp(2, self.n - 2);
        (self.n - n1, n1)
    }

    pub fn cutoffs(&self) -> Result<CutoffConfig> {
        CutoffConfig::new(self.cutoff, self.cf_cutoff)
    }
}

fn bump(r: f64) -> f64 {
    (-(r - 50.0).powi(2) / 200.0).exp()
}

/// Untreated mean of control units in both periods.
pub fn base_mean(r: f64) -> f64 {
    5.0 * (r + 1.0).ln() + 15.0 * bump(r)
}

/// Period-one shift of the untreated outcome.
pub fn trend(r: f64) -> f64 {
    2.0 * (3.0 * (PI / 60.0 * (r - 50.0)).cos().powi(2) + 1.0)
}

/// Period-zero mean of exposed units.
pub fn exposed_base_mean(r: f64) -> f64 {
    6.0 * (r + 1.0).ln() + 11.0 * bump(r)
}

/// Treated period-one mean at the distorted running variable.
pub fn treated_mean(r: f64) -> f64 {
    6.5 * (r + 1.0).ln() + 13.0 * bump(r) + 7.0 * (PI / 60.0 * (r - 60.0)).cos().powi(2) + 3.0
}

/// Untreated period-one mean of an exposed unit with period-zero value `r0`
/// whose untreated running variable drifts to `r0 + drift`.
pub fn untreated_exposed_mean(r0: f64, drift: f64) -> f64 {
    let r = r0 + drift;
    exposed_base_mean(r0) + base_mean(r) + trend(r) - base_mean(r0)
}

const CONTROL_R0: (f64, f64) = (50.0, 20.0);
const EXPOSED_R0: (f64, f64) = (60.0, 15.0);
const SUPPORT: (f64, f64) = (20.0, 80.0);
const CONTROL_DRIFT: (f64, f64) = (1.0, 2.0);
const EXPOSED_SHIFT: (f64, f64) = (2.0, 1.0);

fn normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, sd: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    mean + sd * z
}

/// Draw from `N(mean, sd²)` conditioned on `[lo, hi]` by inverting the CDF.
pub fn trunc_normal<R: Rng + ?Sized>(mean: f64, sd: f64, lo: f64, hi: f64, rng: &mut R) -> f64 {
    debug_assert!(lo < hi && sd > 0.0);
    let std = Normal::standard();
    let (pa, pb) = (std.cdf((lo - mean) / sd), std.cdf((hi - mean) / sd));
    let u: f64 = rng.random();
    let p = (pa + u * (pb - pa)).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
    (mean + sd * std.inverse_cdf(p)).clamp(lo, hi)
}

/// A simulated panel together with the latent untreated period-one outcome
/// of every exposed unit.
#[derive(Debug, Clone, PartialEq)]
pub struct SimDataset {
    panel: PanelDataset,
    /// Aligned with `panel.units()`; `None` for control units.
    pub y1_untreated: Vec<Option<f64>>,
}

impl SimDataset {
    /// The observable panel; the latent column is not part of it.
    pub fn observable(&self) -> &PanelDataset {
        &self.panel
    }

    pub fn into_observable(self) -> PanelDataset {
        self.panel
    }
}

/// Draws `n₀` control units followed by `n₁` exposed units.
pub fn gen_dataset<R: Rng + ?Sized>(cfg: &DgpConfig, rng: &mut R) -> Result<SimDataset> {
    cfg.validate()?;
    let (n0, n1) = cfg.group_sizes();
    let sd = cfg.outcome_noise_sd;
    let mut units = Vec::with_capacity(cfg.n);
    let mut latent = Vec::with_capacity(cfg.n);
    for _ in 0..n0 {
        let r0 = trunc_normal(CONTROL_R0.0, CONTROL_R0.1, SUPPORT.0, SUPPORT.1, rng);
        let r1 = r0 + normal(rng, CONTROL_DRIFT.0, CONTROL_DRIFT.1);
        let y0 = base_mean(r0) + normal(rng, 0.0, sd);
        let y1 = base_mean(r1) + trend(r1) + normal(rng, 0.0, sd);
        units.push(Unit { label: 0, z: Group::Control, r0, r1, y0, y1 });
        latent.push(None);
    }
    for _ in 0..n1 {
        let r0 = trunc_normal(EXPOSED_R0.0, EXPOSED_R0.1, SUPPORT.0, SUPPORT.1, rng);
        let r1 = r0 + normal(rng, EXPOSED_SHIFT.0, EXPOSED_SHIFT.1);
        let drift = normal(rng, CONTROL_DRIFT.0, CONTROL_DRIFT.1);
        let y0 = exposed_base_mean(r0) + normal(rng, 0.0, sd);
        let eps = normal(rng, 0.0, sd);
        let untreated = untreated_exposed_mean(r0, drift) + eps;
        let y1 = if r1 >= cfg.cutoff && !cfg.null_effect { treated_mean(r1) + eps } else { untreated };
        units.push(Unit { label: 0, z: Group::Exposed, r0, r1, y0, y1 });
        latent.push(Some(untreated));
    }
    Ok(SimDataset { panel: PanelDataset::from_units(units)?, y1_untreated: latent })
}

/// `gen_dataset` with an RNG seeded from `cfg.seed`.
pub fn simulate(cfg: &DgpConfig) -> Result<SimDataset> {
    gen_dataset(cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed))
}

/// Stream `index` of the generator keyed on `seed`.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// SplitMix64 finalizer, used to derive independent seeds.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Monte Carlo value of the true counterfactual ATT: the mean of
/// `Y¹ − Y⁰` over exposed draws with `R₁ ≥ c_cf`, using exact conditional
/// means. Chunks draw from fixed streams, so the result is reproducible.
pub fn true_att_oracle(cfg: &DgpConfig, draws: usize) -> Result<f64> {
    if draws < 1_000_000 {
        return Err(Error::InvalidParameter(format!("oracle needs at least 10^6 draws, got {draws}")));
    }
    let chunks = draws.div_ceil(ORACLE_CHUNK);
    let (sum, count) = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(cfg.seed, k as u64);
            let len = ORACLE_CHUNK.min(draws - k * ORACLE_CHUNK);
            let (mut sum, mut count) = (0.0, 0usize);
            for _ in 0..len {
                let r0 = trunc_normal(EXPOSED_R0.0, EXPOSED_R0.1, SUPPORT.0, SUPPORT.1, &mut rng);
                let r1 = r0 + normal(&mut rng, EXPOSED_SHIFT.0, EXPOSED_SHIFT.1);
                let drift = normal(&mut rng, CONTROL_DRIFT.0, CONTROL_DRIFT.1);
                if r1 >= cfg.cf_cutoff {
                    if !cfg.null_effect {
                        sum += treated_mean(r1) - untreated_exposed_mean(r0, drift);
                    }
                    count += 1;
                }
            }
            (sum, count)
        })
        .reduce(|| (0.0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let mass = count as f64 / draws as f64;
    if count == 0 || mass < MIN_MASS {
        return Err(Error::ZeroMass { cutoff: cfg.cf_cutoff, mass });
    }
    Ok(sum / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableKind {
    Bias,
    Coverage,
}

impl std::str::FromStr for TableKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bias" => Ok(TableKind::Bias),
            "coverage" => Ok(TableKind::Coverage),
            other => Err(Error::Config(format!("unknown table `{other}` (bias, coverage)"))),
        }
    }
}

/// Settings shared by both Monte Carlo tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McSettings {
    pub reps: usize,
    pub grid_points: usize,
    pub scale: ScaleSource,
    pub options: EstimatorOptions,
    pub oracle_draws: usize,
}

impl Default for McSettings {
    fn default() -> Self {
        McSettings {
            reps: 200,
            grid_points: crate::counterfactual::DEFAULT_GRID_NODES,
            scale: ScaleSource::PerSubsample,
            options: EstimatorOptions::default(),
            oracle_draws: DEFAULT_ORACLE_DRAWS,
        }
    }
}

/// One row of a Monte Carlo table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McCell {
    pub constant: f64,
    pub exponent: f64,
    pub variant: String,
    /// Mean estimate over successful replications.
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub coverage: Option<f64>,
    pub reps: usize,
    pub failures: usize,
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub table: TableKind,
    pub dgp: DgpConfig,
    pub settings: McSettings,
    pub bootstrap: Option<BootstrapConfig>,
    pub truth: f64,
    pub cells: Vec<McCell>,
}

impl McReport {
    pub fn cell(&self, constant: f64, exponent: f64, variant: &str) -> Option<&McCell> {
        self.cells.iter().find(|c| c.constant == constant && c.exponent == exponent && c.variant == variant)
    }

    /// Comma-separated table, numbers at six significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("constant,exponent,variant,mean,sd,coverage,reps,failures\n");
        let opt = |v: Option<f64>| v.map(sig6).unwrap_or_default();
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                sig6(c.constant),
                sig6(c.exponent),
                c.variant,
                opt(c.mean),
                opt(c.sd),
                opt(c.coverage),
                c.reps,
                c.failures
            ));
        }
        out
    }
}

/// Formats `x` with six significant digits.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    if (-5..=14).contains(&mag) {
        let decimals = (5 - mag).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        format!("{x:.5e}")
    }
}

fn mean_sd(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    (Some(mean), crate::panel::sample_sd(xs.iter().copied()))
}

fn replicate_dataset(dgp: &DgpConfig, rep: usize) -> Result<PanelDataset> {
    Ok(gen_dataset(dgp, &mut stream_rng(dgp.seed, rep as u64))?.into_observable())
}

/// Original and two-scale estimates at one bandwidth cell. Both scales use
/// grids covering the coarser bandwidths.
fn estimate_cell(
    data: &PanelDataset,
    sample: &PreparedSample,
    rule: BandwidthRule,
    cut: CutoffConfig,
    settings: &McSettings,
) -> Result<(f64, f64, crate::smoothers::Bandwidths, Grids)> {
    let bw = rule.resolve(data)?;
    let grids = Grids::covering(data, bw.scaled(std::f64::consts::SQRT_2), &cut, settings.grid_points)?;
    let (orig, br) = att_pair(sample, bw, cut, grids, settings.options)?;
    Ok((orig.att, br.att, bw, grids))
}

fn cell_from(constant: f64, exponent: f64, variant: &str, values: &[f64], reps: usize, errors: &[String]) -> McCell {
    let (mean, sd) = mean_sd(values);
    McCell {
        constant,
        exponent,
        variant: variant.into(),
        mean,
        sd,
        coverage: None,
        reps,
        failures: reps - values.len(),
        diagnostic: errors.first().cloned(),
    }
}

/// Mean original and bias-reduced estimates for every `(constant, exponent)`
/// cell over `settings.reps` fresh datasets. Every cell sees the same
/// datasets.
pub fn mc_bias_table(dgp: &DgpConfig, settings: &McSettings, exponents: &[f64], constants: &[f64]) -> Result<McReport> {
    dgp.validate()?;
    if settings.reps < 2 {
        return Err(Error::InvalidParameter("Monte Carlo tables need at least 2 replications".into()));
    }
    let cut = dgp.cutoffs()?;
    let truth = true_att_oracle(dgp, settings.oracle_draws)?;
    let cells: Vec<(f64, f64)> =
        constants.iter().flat_map(|&k| exponents.iter().map(move |&x| (k, x))).collect();

    let per_rep: Vec<Vec<Result<(f64, f64), String>>> = (0..settings.reps)
        .into_par_iter()
        .map(|rep| {
            let prepared = replicate_dataset(dgp, rep)
                .and_then(|data| PreparedSample::new(&data, cut.c).map(|s| (data, s)));
            cells
                .iter()
                .map(|&(k, x)| {
                    let (data, sample) = prepared.as_ref().map_err(|e| e.to_string())?;
                    let rule = BandwidthRule { constant: k, exponent: x, scale: settings.scale };
                    estimate_cell(data, sample, rule, cut, settings)
                        .map(|(o, b, _, _)| (o, b))
                        .map_err(|e| format!("replication {rep}: {e}"))
                })
                .collect()
        })
        .collect();

    let mut out = Vec::with_capacity(2 * cells.len());
    for (ci, &(k, x)) in cells.iter().enumerate() {
        let mut orig = Vec::new();
        let mut br = Vec::new();
        let mut errors = Vec::new();
        for rep in &per_rep {
            match &rep[ci] {
                Ok((o, b)) => {
                    orig.push(*o);
                    br.push(*b);
                }
                Err(e) => errors.push(e.clone()),
            }
        }
        out.push(cell_from(k, x, "original", &orig, settings.reps, &errors));
        out.push(cell_from(k, x, "bias-reduced", &br, settings.reps, &errors));
    }
    Ok(McReport { table: TableKind::Bias, dgp: *dgp, settings: *settings, bootstrap: None, truth, cells: out })
}

/// Empirical coverage of bootstrap intervals for the estimator selected by
/// `boot.bias_reduce`, one cell per `(exponent, interval)`. The
/// `basic-oracle-bias-removed` rows shift every basic interval by the Monte
/// Carlo bias of the point estimate before checking coverage.
pub fn mc_coverage_table(
    dgp: &DgpConfig,
    settings: &McSettings,
    boot: &BootstrapConfig,
    exponents: &[f64],
    constant: f64,
) -> Result<McReport> {
    dgp.validate()?;
    boot.validate()?;
    if settings.reps < 2 {
        return Err(Error::InvalidParameter("Monte Carlo tables need at least 2 replications".into()));
    }
    let cut = dgp.cutoffs()?;
    let truth = true_att_oracle(dgp, settings.oracle_draws)?;

    type Interval = (f64, f64);
    let per_rep: Vec<Vec<Result<(f64, Interval, Interval), String>>> = (0..settings.reps)
        .into_par_iter()
        .map(|rep| {
            let data = replicate_dataset(dgp, rep);
            exponents
                .iter()
                .enumerate()
                .map(|(xi, &x)| {
                    let data = data.as_ref().map_err(|e| e.to_string())?;
                    let rule = BandwidthRule { constant, exponent: x, scale: settings.scale };
                    let run = || -> Result<_> {
                        let bw = rule.resolve(data)?;
                        let grids =
                            Grids::covering(data, bw.scaled(std::f64::consts::SQRT_2), &cut, settings.grid_points)?;
                        let cfg = BootstrapConfig {
                            seed: derive_seed(boot.seed, (rep * exponents.len() + xi) as u64),
                            ci_method: CiMethod::Basic,
                            ..*boot
                        };
                        let res = bootstrap_att(data, bw, cut, grids, settings.options, &cfg)?;
                        Ok((res.point, res.interval(CiMethod::Basic), res.interval(CiMethod::T)))
                    };
                    run().map_err(|e| format!("replication {rep}: {e}"))
                })
                .collect()
        })
        .collect();

    let variant = if boot.bias_reduce { "bias-reduced" } else { "original" };
    let mut cells = Vec::new();
    for (xi, &x) in exponents.iter().enumerate() {
        let ok: Vec<&(f64, Interval, Interval)> = per_rep.iter().filter_map(|r| r[xi].as_ref().ok()).collect();
        let errors: Vec<String> = per_rep.iter().filter_map(|r| r[xi].as_ref().err().cloned()).collect();
        let points: Vec<f64> = ok.iter().map(|o| o.0).collect();
        let (mean, sd) = mean_sd(&points);
        let bias = mean.map(|m| m - truth).unwrap_or(0.0);
        let rate = |covered: usize| if ok.is_empty() { None } else { Some(covered as f64 / ok.len() as f64) };
        let basic = ok.iter().filter(|o| o.1 .0 <= truth && truth <= o.1 .1).count();
        let t = ok.iter().filter(|o| o.2 .0 <= truth && truth <= o.2 .1).count();
        let removed = ok.iter().filter(|o| o.1 .0 - bias <= truth && truth <= o.1 .1 - bias).count();
        for (name, covered) in [("basic", basic), ("t", t), ("basic-oracle-bias-removed", removed)] {
            cells.push(McCell {
                constant,
                exponent: x,
                variant: format!("{variant}/{name}"),
                mean,
                sd,
                coverage: rate(covered),
                reps: settings.reps,
                failures: settings.reps - ok.len(),
                diagnostic: errors.first().cloned(),
            });
        }
    }
    Ok(McReport { table: TableKind::Coverage, dgp: *dgp, settings: *settings, bootstrap: Some(*boot), truth, cells })
}
