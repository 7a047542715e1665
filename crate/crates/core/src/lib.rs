//! Bayesian functional optimisation.
//!
//! The decision variable is a function `g: [0,1]^m -> R`, represented by its
//! values on a uniform cell-centred grid ([`GridFunction`]). The objective is
//! modelled by a Gaussian process whose covariance acts on the L2 distance
//! between functions. Search proceeds over a sequence of low-dimensional
//! affine subspaces `b_s + span(h_s^0, .., h_s^{d-1})`, where the basis
//! functions are prior draws from a second, user-chosen covariance and the
//! bias `b_s` is the best function found so far. Each subspace is searched
//! with GP-UCB.
//!
//! Modules:
//!
//! * [`gridfn`]: grid functions, quadrature norms and distances.
//! * [`kernels`]: scalar covariances on the domain, functional covariances
//!   on grid functions.
//! * [`gp`]: GP regression, prior sampling, likelihood-based tuning.
//! * [`acquisition`]: GP-UCB and its maximisation over subspace coordinates.
//! * [`optimizer`]: the subspace-sequence optimiser and its baselines, all
//!   exposed as ask/tell sessions.
//! * [`objectives`]: benchmark objectives and a Monte-Carlo geometric check.
//! * [`harness`]: config files, the benchmark runner, CSV output and the
//!   file-based ask/tell workflow.

pub mod acquisition;
pub mod error;
pub mod gp;
pub mod gridfn;
pub mod harness;
pub mod kernels;
pub mod objectives;
pub mod optimizer;

pub use acquisition::{AcqSearchConfig, UcbSchedule};
pub use error::{Error, Result};
pub use gp::{GpModel, Observation, Posterior};
pub use gridfn::{GridFunction, GridSpec};
pub use kernels::{Covariance, FunctionalKernelSpec, Metric, ScalarKernelSpec, ScalarKind};
pub use objectives::{EffectiveDimObjective, MatchingObjective, Objective};
pub use optimizer::{Algorithm, OptConfig, RunRecord, RunResult, Session, Subspace};
