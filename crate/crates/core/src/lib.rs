//! Bayesian synthetic control with a soft simplex constraint.
//!
//! The treated unit's pre-treatment outcomes are regressed on the control
//! units with a spike-and-slab prior whose slab is centred on a point of the
//! probability simplex. Posterior draws of the weights give a counterfactual
//! for the post-treatment period and hence the average treatment effect on
//! the treated.
//!
//! ```no_run
//! use bvss::{load_panel, run_chain, att_from_draws, Hyperparams};
//!
//! let panel = load_panel("panel.csv", 33)?;
//! let out = run_chain(&panel, &Hyperparams::default(), 1000, 500, 7)?;
//! let att = att_from_draws(&out, &panel, 0.95, true)?;
//! println!("ATT {:.3} ({:.3}, {:.3})", att.mean, att.ci_lo, att.ci_hi);
//! # Ok::<(), bvss::BvssError>(())
//! ```

pub mod baselines;
pub mod cli;
pub mod error;
pub mod inference;
pub mod linalg;
pub mod model;
pub mod panel;
pub mod sampler;
pub mod simgen;
pub mod special;
mod truncnorm;

pub use error::{BvssError, Result};

pub use inference::{att_from_draws, counterfactual_path, diagnostics, inclusion_probs, AttSummary};
pub use model::{ChainState, Hyperparams};
pub use panel::{load_panel, PanelData};
pub use sampler::{run_chain, run_chain_with, ChainConfig, SamplerOutput};
