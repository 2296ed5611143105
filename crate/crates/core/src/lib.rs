//! Counterfactual total policy effects in regression-discontinuity designs
//! where units move their running variable in response to the policy.
//!
//! The estimator combines kernel smoothers of a two-period, two-group panel:
//! the untreated outcome trend from the never-exposed group, the law of the
//! distorted running variable from the exposed group, and boundary-corrected
//! treated outcomes above the cutoff. Shifting the distortion law rigidly to
//! a counterfactual cutoff yields the effect the policy would have had there.
//!
//! Modules, bottom-up: [`kernels`], [`smoothers`], [`counterfactual`],
//! [`inference`], [`simulation`], [`io`] and the [`cli`] front end.

// `!(x >= min)` rejects NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod counterfactual;
pub mod error;
pub mod grid;
pub mod inference;
pub mod io;
pub mod kernels;
pub mod panel;
pub mod simulation;
pub mod smoothers;

#[cfg(test)]
mod testutil;

pub use counterfactual::{
    att, att_bias_reduced, att_pair, cf_density, mass_above, total_effect, AttEstimate, CfDensity, CfEstimator,
    CutoffConfig, EstimatorOptions, Grids, PreparedSample,
};
pub use error::{Error, ErrorClass, Result};
pub use grid::Grid;
pub use inference::{bootstrap_att, resample_balanced, BootstrapConfig, BootstrapResult, CiMethod};
pub use panel::{Group, PanelDataset, Unit};
pub use smoothers::{BandwidthRule, Bandwidths, ScaleSource};
