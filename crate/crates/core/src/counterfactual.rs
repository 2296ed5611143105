//! Counterfactual running-variable density, local total policy effect and
//! the ATT plug-in estimator.
//!
//! All smoothers are evaluated once on the integration grids. The
//! counterfactual density
//!
//! ```text
//! f_cf(r) = ∫ f_{1|0}(r − Δc | r₀ − Δc) · f₀(r₀) dr₀
//! ```
//!
//! is a double sum over units and r₀-nodes; exchanging the order gives
//! `f_cf(r) = (1/b) Σᵢ αᵢ K((R₁ᵢ + Δc − r)/b)` with per-unit weights
//! `αᵢ = Σⱼ wⱼ f₀(xⱼ) K((R₀ᵢ + Δc − xⱼ)/h) / Dⱼ`, where `Dⱼ` is the
//! conditioning denominator of `f_{1|0}` at `xⱼ − Δc`. The untreated-outcome
//! integral is the same sum with `(ĝ + m̂₀)(xⱼ)` folded into `βᵢ`. The
//! result is the trapezoid rule on the r₀ grid, not an approximation of it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{trapezoid, Grid};
use crate::kernels::epanechnikov;
use crate::panel::{Group, PanelDataset};
use crate::smoothers::{boundary_nw_mean, boundary_weighted_mean, Bandwidths};

/// Smallest counterfactual density `total_effect` will divide by.
pub const MIN_DENSITY: f64 = 1e-10;
/// Below this the counterfactually treated mass is treated as zero.
pub const MIN_MASS: f64 = 1e-8;
pub const DEFAULT_GRID_NODES: usize = 400;

/// Actual and counterfactual cutoffs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffConfig {
    pub c: f64,
    pub c_cf: f64,
    pub delta_c: f64,
}

impl CutoffConfig {
    /// Cutoffs with `c_cf ≥ c`, the range the identification argument covers.
    pub fn new(c: f64, c_cf: f64) -> Result<Self> {
        let cut = Self::allowing_below(c, c_cf)?;
        if cut.delta_c < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "counterfactual cutoff {c_cf} lies below the actual cutoff {c}"
            )));
        }
        Ok(cut)
    }

    /// Same formulas with `c_cf < c` permitted. Results for such cutoffs are
    /// extrapolations and should be labelled as such.
    pub fn allowing_below(c: f64, c_cf: f64) -> Result<Self> {
        if !(c.is_finite() && c_cf.is_finite()) {
            return Err(Error::InvalidParameter("cutoffs must be finite".into()));
        }
        Ok(CutoffConfig { c, c_cf, delta_c: c_cf - c })
    }

    pub fn is_extrapolated(&self) -> bool {
        self.delta_c < 0.0
    }
}

/// Integration grids along the period-zero (`r0`) and period-one (`r`)
/// running variables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grids {
    pub r0: Grid,
    pub r: Grid,
}

impl Grids {
    /// Grids spanning the z=1 sample ranges extended by one bandwidth; the
    /// `r` grid is shifted by `Δc`.
    pub fn covering(data: &PanelDataset, bw: Bandwidths, cut: &CutoffConfig, nodes: usize) -> Result<Self> {
        let (mut r0_lo, mut r0_hi) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut r1_lo, mut r1_hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for u in data.group(Group::Exposed) {
            r0_lo = r0_lo.min(u.r0);
            r0_hi = r0_hi.max(u.r0);
            r1_lo = r1_lo.min(u.r1);
            r1_hi = r1_hi.max(u.r1);
        }
        Ok(Grids {
            r0: Grid::new(r0_lo - bw.h, r0_hi + bw.h, nodes)?,
            r: Grid::new(r1_lo + cut.delta_c - bw.b, r1_hi + cut.delta_c + bw.b, nodes)?,
        })
    }
}

/// Tuning knobs of the plug-in estimator that are not bandwidths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorOptions {
    /// Width of the boundary region of m̂₁, in units of `b`.
    pub tau: f64,
    /// Largest share of supported r₀-nodes whose shifted conditioning point
    /// may fall outside the data before the estimate is refused.
    pub max_uncovered_fraction: f64,
    /// Largest share of counterfactually treated mass that may sit where m̂₁
    /// has no observations.
    pub max_excluded_mass: f64,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        EstimatorOptions { tau: 1.0, max_uncovered_fraction: 0.5, max_excluded_mass: 0.05 }
    }
}

/// `f̂_cf` tabulated on the `r` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfDensity {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl CfDensity {
    pub fn total_mass(&self) -> f64 {
        self.grid.trapezoid(&self.values)
    }

    pub fn mass_above(&self, c_cf: f64) -> Result<f64> {
        mass_above(self, c_cf)
    }
}

/// Trapezoid mass of `fcf` above `c_cf` (linear interpolation inside the
/// cell containing the cutoff), clamped to `(0, 1]`.
pub fn mass_above(fcf: &CfDensity, c_cf: f64) -> Result<f64> {
    let g = &fcf.grid;
    let v = &fcf.values;
    let mass = if c_cf <= g.lo {
        g.trapezoid(v)
    } else if c_cf >= g.hi {
        0.0
    } else {
        let k = (((c_cf - g.lo) / g.spacing()).floor() as usize).min(g.m - 2);
        let (x0, x1) = (g.node(k), g.node(k + 1));
        let t = (c_cf - x0) / (x1 - x0);
        let at_cut = v[k] + t * (v[k + 1] - v[k]);
        let mut m = 0.5 * (x1 - c_cf) * (at_cut + v[k + 1]);
        for j in k + 1..g.m - 1 {
            m += 0.5 * (g.node(j + 1) - g.node(j)) * (v[j] + v[j + 1]);
        }
        m
    };
    if !(mass >= MIN_MASS) {
        return Err(Error::ZeroMass { cutoff: c_cf, mass });
    }
    Ok(mass.min(1.0))
}

/// Plug-in estimate of the counterfactual ATT.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttEstimate {
    pub att: f64,
    pub c_cf: f64,
    pub mass_above: f64,
    pub bias_reduced: bool,
    pub bandwidths_used: Bandwidths,
    /// Counterfactual mass dropped where m̂₁ had an empty window.
    pub excluded_mass: f64,
    pub warnings: Vec<String>,
}

/// Sorted per-group views of a panel, shared by every bandwidth an estimate
/// is computed at.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    c: f64,
    n_exposed: usize,
    // z=1, sorted by r1
    exposed_r0: Vec<f64>,
    exposed_y0: Vec<f64>,
    exposed_r1: Vec<f64>,
    // z=0
    control_r0: Vec<f64>,
    control_dy: Vec<f64>,
    // z=1 with r1 ≥ c, sorted by r1
    treated_r1: Vec<f64>,
    treated_y1: Vec<f64>,
}

impl PreparedSample {
    pub fn new(data: &PanelDataset, c: f64) -> Result<Self> {
        let mut exposed: Vec<_> = data.group(Group::Exposed).copied().collect();
        if exposed.len() < 2 {
            return Err(Error::EmptySample("estimation needs at least 2 z=1 units"));
        }
        if data.count(Group::Control) < 2 {
            return Err(Error::EmptySample("estimation needs at least 2 z=0 units"));
        }
        exposed.sort_by(|a, b| a.r1.total_cmp(&b.r1));
        let treated: Vec<_> = exposed.iter().filter(|u| u.r1 >= c).collect();
        if treated.is_empty() {
            return Err(Error::EmptySample("no z=1 unit at or above the cutoff"));
        }
        Ok(PreparedSample {
            c,
            n_exposed: exposed.len(),
            exposed_r0: exposed.iter().map(|u| u.r0).collect(),
            exposed_y0: exposed.iter().map(|u| u.y0).collect(),
            exposed_r1: exposed.iter().map(|u| u.r1).collect(),
            control_r0: data.group(Group::Control).map(|u| u.r0).collect(),
            control_dy: data.group(Group::Control).map(|u| u.outcome_change()).collect(),
            treated_r1: treated.iter().map(|u| u.r1).collect(),
            treated_y1: treated.iter().map(|u| u.y1).collect(),
        })
    }

    pub fn cutoff(&self) -> f64 {
        self.c
    }
}

/// One fitted estimator: smoothers cached on the grids for fixed bandwidths
/// and cutoffs.
#[derive(Debug, Clone)]
pub struct CfEstimator<'a> {
    sample: &'a PreparedSample,
    bw: Bandwidths,
    cut: CutoffConfig,
    grids: Grids,
    opts: EstimatorOptions,
    // per z=1 unit, aligned with sample.exposed_r1
    alpha: Vec<f64>,
    beta: Vec<f64>,
    fcf: Vec<f64>,
    untreated: Vec<f64>,
    uncovered: usize,
    supported: usize,
}

impl<'a> CfEstimator<'a> {
    pub fn new(
        sample: &'a PreparedSample,
        bw: Bandwidths,
        cut: CutoffConfig,
        grids: Grids,
        opts: EstimatorOptions,
    ) -> Result<Self> {
        let bw = Bandwidths::new(bw.h, bw.b)?;
        if sample.c != cut.c {
            return Err(Error::InvalidParameter(format!(
                "sample prepared for cutoff {} but estimator asked for {}",
                sample.c, cut.c
            )));
        }
        if !(opts.tau >= 0.0) {
            return Err(Error::InvalidParameter(format!("tau must be nonnegative, got {}", opts.tau)));
        }
        let (h, b, dc) = (bw.h, bw.b, cut.delta_c);
        let g0 = &grids.r0;
        let m0 = g0.m;

        let mut f0_sum = vec![0.0; m0];
        let mut y0_sum = vec![0.0; m0];
        let mut cond_sum = vec![0.0; m0];
        for (&r0, &y0) in sample.exposed_r0.iter().zip(&sample.exposed_y0) {
            for j in g0.window(r0, h) {
                let w = epanechnikov((r0 - g0.node(j)) / h);
                f0_sum[j] += w;
                y0_sum[j] += w * y0;
            }
            let shifted = r0 + dc;
            for j in g0.window(shifted, h) {
                cond_sum[j] += epanechnikov((shifted - g0.node(j)) / h);
            }
        }
        let mut g_sum = vec![0.0; m0];
        let mut dy_sum = vec![0.0; m0];
        for (&r0, &dy) in sample.control_r0.iter().zip(&sample.control_dy) {
            for j in g0.window(r0, h) {
                let w = epanechnikov((r0 - g0.node(j)) / h);
                g_sum[j] += w;
                dy_sum[j] += w * dy;
            }
        }

        // ω_j = w_j f̂₀(x_j) / D_j and μ_j = ĝ(x_j) + m̂₀(x_j)
        let f0_norm = 1.0 / (sample.n_exposed as f64 * h);
        let mut omega = vec![0.0; m0];
        let mut mu = vec![0.0; m0];
        let (mut supported, mut uncovered) = (0usize, 0usize);
        for j in 0..m0 {
            if f0_sum[j] <= 0.0 {
                continue;
            }
            supported += 1;
            if cond_sum[j] > 0.0 && g_sum[j] > 0.0 {
                omega[j] = g0.weight(j) * f0_sum[j] * f0_norm / cond_sum[j];
                mu[j] = dy_sum[j] / g_sum[j] + y0_sum[j] / f0_sum[j];
            } else {
                uncovered += 1;
            }
        }
        if supported == 0 {
            return Err(Error::EmptySample("r0 grid does not meet the z=1 sample"));
        }
        if uncovered as f64 > opts.max_uncovered_fraction * supported as f64 {
            return Err(Error::GridCoverage { uncovered, total: supported });
        }

        let n1 = sample.n_exposed;
        let mut alpha = vec![0.0; n1];
        let mut beta = vec![0.0; n1];
        for i in 0..n1 {
            let shifted = sample.exposed_r0[i] + dc;
            let (mut a, mut bb) = (0.0, 0.0);
            for j in g0.window(shifted, h) {
                let k = omega[j] * epanechnikov((shifted - g0.node(j)) / h);
                a += k;
                bb += k * mu[j];
            }
            alpha[i] = a;
            beta[i] = bb;
        }

        let gr = &grids.r;
        let mut fcf = vec![0.0; gr.m];
        let mut untreated = vec![0.0; gr.m];
        for i in 0..n1 {
            if alpha[i] == 0.0 {
                continue;
            }
            let center = sample.exposed_r1[i] + dc;
            for k in gr.window(center, b) {
                let w = epanechnikov((center - gr.node(k)) / b) / b;
                fcf[k] += alpha[i] * w;
                untreated[k] += beta[i] * w;
            }
        }

        Ok(CfEstimator { sample, bw, cut, grids, opts, alpha, beta, fcf, untreated, uncovered, supported })
    }

    pub fn bandwidths(&self) -> Bandwidths {
        self.bw
    }

    pub fn cutoffs(&self) -> CutoffConfig {
        self.cut
    }

    pub fn grids(&self) -> &Grids {
        &self.grids
    }

    pub fn density(&self) -> CfDensity {
        CfDensity { grid: self.grids.r, values: self.fcf.clone() }
    }

    /// `(uncovered, supported)` r₀-node counts.
    pub fn coverage(&self) -> (usize, usize) {
        (self.uncovered, self.supported)
    }

    /// `f̂_cf(r)` and `∫ (ĝ + m̂₀)(r₀)·f̂_{1|0}(r − Δc | r₀ − Δc)·f̂₀(r₀) dr₀`
    /// at an arbitrary point.
    pub fn density_terms_at(&self, r: f64) -> (f64, f64) {
        let (b, dc) = (self.bw.b, self.cut.delta_c);
        let r1 = &self.sample.exposed_r1;
        let lo = r1.partition_point(|&x| x + dc <= r - b);
        let hi = r1.partition_point(|&x| x + dc < r + b);
        let (mut f, mut n) = (0.0, 0.0);
        for i in lo..hi {
            let w = epanechnikov((r1[i] + dc - r) / b) / b;
            f += self.alpha[i] * w;
            n += self.beta[i] * w;
        }
        (f, n)
    }

    pub fn density_at(&self, r: f64) -> f64 {
        self.density_terms_at(r).0
    }

    /// m̂₁(r): boundary-corrected mean of treated period-one outcomes.
    pub fn treated_mean(&self, r: f64) -> Result<f64> {
        let b = self.bw.b;
        let xs = &self.sample.treated_r1;
        let lo = xs.partition_point(|&x| x < r - b);
        let hi = xs.partition_point(|&x| x <= r + b);
        if lo == hi {
            return Err(Error::EmptyWindow { at: r });
        }
        let ys = &self.sample.treated_y1[lo..hi];
        if r < self.sample.c && self.cut.is_extrapolated() {
            return boundary_weighted_mean(&xs[lo..hi], ys, b, self.sample.c, r);
        }
        boundary_nw_mean(&xs[lo..hi], ys, b, self.opts.tau, self.sample.c, r)
    }

    /// T̂(c_cf, r), the local total policy effect at `r ≥ c_cf`.
    pub fn total_effect(&self, r: f64) -> Result<f64> {
        if r < self.cut.c_cf {
            return Err(Error::InvalidParameter(format!(
                "total effect needs r ≥ c_cf = {}, got {r}",
                self.cut.c_cf
            )));
        }
        let (f, n) = self.density_terms_at(r);
        if !(f >= MIN_DENSITY) {
            return Err(Error::DensityTooSmall { at: r, value: f });
        }
        Ok(self.treated_mean(r)? - n / f)
    }

    /// T̂ at the `r` nodes at or above `c_cf` where it is defined.
    pub fn total_effect_curve(&self) -> Vec<(f64, f64)> {
        self.grids
            .r
            .nodes()
            .filter(|&r| r >= self.cut.c_cf)
            .filter_map(|r| self.total_effect(r).ok().map(|t| (r, t)))
            .collect()
    }

    pub fn att(&self) -> Result<AttEstimate> {
        let c_cf = self.cut.c_cf;
        let gr = &self.grids.r;
        if c_cf >= gr.hi {
            return Err(Error::ZeroMass { cutoff: c_cf, mass: 0.0 });
        }
        let mut xs = Vec::with_capacity(gr.m + 1);
        let mut dens = Vec::with_capacity(gr.m + 1);
        let mut untreated = Vec::with_capacity(gr.m + 1);
        if c_cf > gr.lo {
            let (f, n) = self.density_terms_at(c_cf);
            xs.push(c_cf);
            dens.push(f);
            untreated.push(n);
        }
        for k in 0..gr.m {
            let r = gr.node(k);
            if r > c_cf || (r == c_cf && xs.is_empty()) {
                xs.push(r);
                dens.push(self.fcf[k]);
                untreated.push(self.untreated[k]);
            }
        }

        let mut treated = vec![0.0; xs.len()];
        let mut excluded = vec![0.0; xs.len()];
        let mut first_failure = None;
        for (p, &r) in xs.iter().enumerate() {
            if dens[p] == 0.0 {
                continue;
            }
            match self.treated_mean(r) {
                Ok(m) => treated[p] = m * dens[p],
                Err(e) if e.is_local_failure() => {
                    excluded[p] = dens[p];
                    dens[p] = 0.0;
                    untreated[p] = 0.0;
                    first_failure.get_or_insert(e);
                }
                Err(e) => return Err(e),
            }
        }

        let mass = trapezoid(&xs, &dens);
        let excluded_mass = trapezoid(&xs, &excluded);
        if excluded_mass > self.opts.max_excluded_mass * (mass + excluded_mass) {
            return Err(first_failure.expect("excluded mass implies a failure"));
        }
        if !(mass >= MIN_MASS) {
            return Err(Error::ZeroMass { cutoff: c_cf, mass });
        }
        let numerator = trapezoid(&xs, &treated) - trapezoid(&xs, &untreated);

        let mut warnings = Vec::new();
        let total = self.grids.r.trapezoid(&self.fcf);
        if !(0.95..=1.05).contains(&total) {
            warnings.push(format!("counterfactual density integrates to {total:.4} over the r grid"));
        }
        if self.uncovered > 0 {
            warnings.push(format!(
                "{} of {} r0 nodes have no data at the shifted conditioning point",
                self.uncovered, self.supported
            ));
        }
        if excluded_mass > 0.0 {
            warnings.push(format!(
                "treated mean undefined on part of the support; excluded mass {excluded_mass:.3e}"
            ));
        }
        if self.cut.is_extrapolated() {
            warnings.push("counterfactual cutoff below the actual cutoff: extrapolated".into());
        }

        Ok(AttEstimate {
            att: numerator / mass,
            c_cf,
            mass_above: mass.min(1.0),
            bias_reduced: false,
            bandwidths_used: self.bw,
            excluded_mass,
            warnings,
        })
    }
}

/// `2·fine − coarse`, the two-scale combination of estimates at `h` and `√2·h`.
pub fn combine_two_scale(fine: &AttEstimate, coarse: &AttEstimate) -> AttEstimate {
    let mut warnings = fine.warnings.clone();
    for w in &coarse.warnings {
        if !warnings.contains(w) {
            warnings.push(w.clone());
        }
    }
    AttEstimate {
        att: 2.0 * fine.att - coarse.att,
        c_cf: fine.c_cf,
        mass_above: fine.mass_above,
        bias_reduced: true,
        bandwidths_used: fine.bandwidths_used,
        excluded_mass: fine.excluded_mass.max(coarse.excluded_mass),
        warnings,
    }
}

/// Original and two-scale bias-reduced estimates from one prepared sample.
pub fn att_pair(
    sample: &PreparedSample,
    bw: Bandwidths,
    cut: CutoffConfig,
    grids: Grids,
    opts: EstimatorOptions,
) -> Result<(AttEstimate, AttEstimate)> {
    let fine = CfEstimator::new(sample, bw, cut, grids, opts)?.att()?;
    let coarse = CfEstimator::new(sample, bw.scaled(std::f64::consts::SQRT_2), cut, grids, opts)?.att()?;
    let br = combine_two_scale(&fine, &coarse);
    Ok((fine, br))
}

pub fn cf_density(data: &PanelDataset, bw: Bandwidths, cut: CutoffConfig, grids: Grids) -> Result<CfDensity> {
    let sample = PreparedSample::new(data, cut.c)?;
    Ok(CfEstimator::new(&sample, bw, cut, grids, EstimatorOptions::default())?.density())
}

pub fn total_effect(data: &PanelDataset, bw: Bandwidths, cut: CutoffConfig, grids: Grids, r: f64) -> Result<f64> {
    let sample = PreparedSample::new(data, cut.c)?;
    CfEstimator::new(&sample, bw, cut, grids, EstimatorOptions::default())?.total_effect(r)
}

pub fn att(data: &PanelDataset, bw: Bandwidths, cut: CutoffConfig, grids: Grids) -> Result<AttEstimate> {
    let sample = PreparedSample::new(data, cut.c)?;
    CfEstimator::new(&sample, bw, cut, grids, EstimatorOptions::default())?.att()
}

pub fn att_bias_reduced(data: &PanelDataset, bw: Bandwidths, cut: CutoffConfig, grids: Grids) -> Result<AttEstimate> {
    let sample = PreparedSample::new(data, cut.c)?;
    Ok(att_pair(&sample, bw, cut, grids, EstimatorOptions::default())?.1)
}
