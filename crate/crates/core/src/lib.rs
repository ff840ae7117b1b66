//! Softmax-contaminated mixture of experts.
//!
//! A frozen pre-trained expert is fine-tuned by a single Gaussian prompt
//! expert through an input-dependent logistic gate. This crate evaluates the
//! model, samples from it, fits the prompt and gate by EM, measures parameter
//! and density discrepancies, runs numerical identifiability checks and drives
//! the convergence-rate experiments behind the `cmoe` binary.

// `!(a > b)` is used on purpose so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod estimator;
pub mod experiments;
pub mod identifiability;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod quadrature;
pub mod sampler;
pub mod seed;

pub use error::{Error, Result};
pub use estimator::{e_step, em_fit, log_likelihood, m_step, EmConfig, FitResult, ParamBox};
pub use model::{
    component_density, conditional_mean, expert_mean, expert_mean_grad, expert_mean_hess,
    gating_weight, log_density_grad, mixture_density, Activation, ExpertMean, Family, ModelSpec,
    PretrainedSpec, PromptParams,
};
pub use sampler::{make_truth, sample, Dataset, Scenario, ScenarioTag};
