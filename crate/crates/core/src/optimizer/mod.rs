//! Optimisers over grid functions.
//!
//! Every optimiser is an ask/tell [`Session`]: `ask` proposes the next
//! function, `tell` records its measured value. The in-process runners
//! ([`run_s3bfo`] and friends) simply alternate the two against an
//! [`Objective`], so a session driven from outside sees exactly the same
//! sequence of proposals.

mod linebo;
mod random;
mod s3bfo;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{self, AcqSearchConfig, SubspaceEvaluator};
use crate::error::{Error, Result};
use crate::gp::{self, GpModel, Observation};
use crate::gridfn::{self, GridFunction, GridSpec};
use crate::kernels::{FunctionalKernelSpec, ScalarKernelSpec};
use crate::objectives::Objective;

pub use linebo::{bernstein_basis, LineBoSession, BERNSTEIN_ORDER};
pub use random::RandomSearchSession;
pub use s3bfo::S3bfoSession;

/// Affine search space `b + span(h^0, .., h^{d-1})` of outer iteration `s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subspace {
    index: usize,
    bias: GridFunction,
    basis: Vec<GridFunction>,
}

impl Subspace {
    pub fn new(index: usize, bias: GridFunction, basis: Vec<GridFunction>) -> Result<Self> {
        if basis.is_empty() {
            return Err(Error::Input("a subspace needs at least one basis function".into()));
        }
        for h in &basis {
            bias.check_same_grid(h)?;
        }
        Ok(Subspace { index, bias, basis })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn bias(&self) -> &GridFunction {
        &self.bias
    }

    pub fn basis(&self) -> &[GridFunction] {
        &self.basis
    }

    pub fn project(&self, lambda: &[f64]) -> Result<GridFunction> {
        gridfn::linear_combine(&self.bias, &self.basis, lambda)
    }

    /// [`Subspace::project`] followed by radial projection onto `‖g‖ ≤ l_max`.
    pub fn project_capped(&self, lambda: &[f64], l_max: f64) -> Result<GridFunction> {
        Ok(self.project(lambda)?.clamp_norm(l_max))
    }

    /// `H_ij = ⟨h^i, h^j⟩`.
    pub fn gram(&self) -> Result<DMatrix<f64>> {
        gridfn::l2_gram(&self.basis)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Termination {
    FixedBudget,
    /// Stop an inner loop once the regret bound drops below `epsilon`
    /// (or after `T` steps, whichever comes first).
    SimpleRegret { epsilon: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum LengthscaleMode {
    Fixed,
    /// Re-selected by marginal likelihood over `candidates` after every
    /// observation.
    MaxLikelihood { candidates: Vec<f64> },
}

/// Settings shared by all optimisers.
#[derive(Clone, Debug, PartialEq)]
pub struct OptConfig {
    pub grid: GridSpec,
    /// Covariance of the subspace basis draws.
    pub kappa: ScalarKernelSpec,
    /// Covariance of the objective model; its lengthscale is the starting
    /// value under [`LengthscaleMode::MaxLikelihood`].
    pub model_kernel: FunctionalKernelSpec,
    pub lengthscale: LengthscaleMode,
    /// Observation noise variance assumed by the model.
    pub noise_var: f64,
    pub delta: f64,
    pub search: AcqSearchConfig,
    pub d: usize,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub n_init: usize,
    pub termination: Termination,
    pub seed: u64,
}

impl OptConfig {
    /// One-dimensional setup with 100 grid points, SE(0.3) basis draws,
    /// `d = 1`, `S = 4`, `T = 30` and 5 initial points per subspace.
    pub fn protocol() -> Self {
        OptConfig {
            grid: GridSpec::unit_interval(100).expect("valid grid"),
            kappa: ScalarKernelSpec::se(0.3).expect("valid kernel"),
            model_kernel: FunctionalKernelSpec::l2(ScalarKernelSpec::se(1.0).expect("valid kernel"))
                .expect("stationary"),
            lengthscale: LengthscaleMode::MaxLikelihood {
                candidates: gp::log_grid(1e-2, 10.0, 17).expect("valid grid"),
            },
            noise_var: 1e-4,
            delta: 0.1,
            search: AcqSearchConfig::default(),
            d: 1,
            outer_iters: 4,
            inner_iters: 30,
            n_init: 5,
            termination: Termination::FixedBudget,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.outer_iters == 0 || self.inner_iters == 0 || self.n_init == 0 {
            return Err(Error::Input("d, S, T and n_init must all be at least 1".into()));
        }
        if let Termination::SimpleRegret { epsilon } = self.termination {
            if !(epsilon > 0.0) {
                return Err(Error::Input("regret threshold epsilon must be positive".into()));
            }
        }
        if let LengthscaleMode::MaxLikelihood { candidates } = &self.lengthscale {
            if candidates.is_empty() || candidates.iter().any(|c| !(*c > 0.0)) {
                return Err(Error::Input("lengthscale candidates must be positive and nonempty".into()));
            }
        }
        if !(self.noise_var > 0.0) {
            return Err(Error::Input("noise variance must be positive".into()));
        }
        self.search.validate()?;
        acquisition::UcbSchedule::new(self.delta, self.d)?;
        Ok(())
    }

    /// Evaluations per outer iteration under a fixed budget.
    pub fn evals_per_outer(&self) -> usize {
        self.n_init + self.inner_iters
    }

    /// Total evaluations under a fixed budget (an upper bound otherwise).
    pub fn budget(&self) -> usize {
        self.outer_iters * self.evals_per_outer()
    }

    fn opt_rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    /// Generator used for objective noise in the in-process runners; a
    /// separate stream from the optimiser's own.
    pub fn noise_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1);
        rng
    }
}

/// One evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub eval_index: usize,
    /// Outer iteration.
    pub s: usize,
    /// Inner iteration; −1 for initial-design points.
    pub t: i64,
    pub lambda: Vec<f64>,
    pub y: f64,
    /// Running maximum of `y`.
    pub best_y: f64,
    #[serde(default)]
    pub aux: BTreeMap<String, f64>,
}

/// A proposal awaiting its measurement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub s: usize,
    pub t: i64,
    pub lambda: Vec<f64>,
    pub point: GridFunction,
}

/// An ask/tell optimiser.
pub trait Session: Send {
    /// Proposes the next function to evaluate.
    fn ask(&mut self) -> Result<Suggestion>;

    /// Records the value of the pending suggestion.
    fn tell(&mut self, y: f64, aux: BTreeMap<String, f64>) -> Result<&RunRecord>;

    fn pending(&self) -> Option<&Suggestion>;

    fn is_finished(&self) -> bool;

    fn trace(&self) -> &[RunRecord];

    /// Best observed function and value; `None` before the first `tell`.
    fn best(&self) -> Option<(GridFunction, f64)>;

    /// Serialisable state from which [`Algorithm::restore`] rebuilds an
    /// identical session.
    fn snapshot(&self) -> Result<serde_json::Value>;
}

/// Generator state stored as seed plus position in the ChaCha stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngCursor {
    pub seed: u64,
    pub word_pos: u128,
}

impl RngCursor {
    fn capture(seed: u64, rng: &ChaCha8Rng) -> Self {
        RngCursor {
            seed,
            word_pos: rng.get_word_pos(),
        }
    }

    fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Trace bookkeeping shared by the sessions.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub(crate) struct Ledger {
    history: Vec<Observation<GridFunction>>,
    trace: Vec<RunRecord>,
    incumbent: Option<usize>,
}

impl Ledger {
    fn record(
        &mut self,
        suggestion: Suggestion,
        y: f64,
        aux: BTreeMap<String, f64>,
    ) -> Result<&RunRecord> {
        let obs = Observation::new(suggestion.point, y)?;
        let idx = self.trace.len();
        // Earliest evaluation wins ties.
        if self.incumbent.is_none_or(|i| y > self.trace[i].y) {
            self.incumbent = Some(idx);
        }
        let inc = self.incumbent.expect("set above");
        let best_y = if inc == idx { y } else { self.trace[inc].y };
        let mut aux = aux;
        let incumbent_aux: Vec<(String, f64)> = if self.incumbent == Some(idx) {
            aux.iter().map(|(k, v)| (format!("incumbent_{k}"), *v)).collect()
        } else {
            let prev = &self.trace[self.incumbent.unwrap()].aux;
            prev.iter()
                .filter(|(k, _)| !k.starts_with("incumbent_"))
                .map(|(k, v)| (format!("incumbent_{k}"), *v))
                .collect()
        };
        aux.extend(incumbent_aux);
        self.history.push(obs);
        self.trace.push(RunRecord {
            eval_index: idx,
            s: suggestion.s,
            t: suggestion.t,
            lambda: suggestion.lambda,
            y,
            best_y,
            aux,
        });
        Ok(self.trace.last().expect("just pushed"))
    }

    fn annotate_last(&mut self, key: &str, value: f64) {
        if let Some(r) = self.trace.last_mut() {
            r.aux.insert(key.to_string(), value);
        }
    }

    fn best(&self) -> Option<(GridFunction, f64)> {
        self.incumbent
            .map(|i| (self.history[i].point.clone(), self.history[i].y))
    }

    fn incumbent_index(&self) -> Option<usize> {
        self.incumbent
    }

    /// Best function so far, or the zero function before any observation.
    fn incumbent_point(&self, spec: GridSpec) -> GridFunction {
        self.best().map(|(g, _)| g).unwrap_or_else(|| GridFunction::zeros(spec))
    }
}

/// Fits the objective model on `data`, re-selecting the lengthscale first
/// when configured to. Returns the model and the lengthscale used.
pub(crate) fn fit_model<P: Clone, K: crate::kernels::Covariance<P>>(
    template: &K,
    mode: &LengthscaleMode,
    noise_var: f64,
    data: &[Observation<P>],
) -> Result<GpModel<P, K>> {
    let kernel = match mode {
        LengthscaleMode::MaxLikelihood { candidates } if !data.is_empty() => {
            gp::tune_lengthscale(data, template, noise_var, candidates)?.0
        }
        _ => template.clone(),
    };
    GpModel::fit(kernel, noise_var, data.to_vec())
}

/// `err(g*) = μ(g*) + σ(g*) − min_{g ∈ U} (μ(g) − σ(g))`, the inner-loop
/// stopping statistic. The minimum is found with the acquisition search.
pub fn simple_regret_err<R: rand::Rng + ?Sized>(
    model: &GpModel<GridFunction, FunctionalKernelSpec>,
    subspace: &Subspace,
    incumbent: &GridFunction,
    search: &AcqSearchConfig,
    rng: &mut R,
) -> Result<f64> {
    let inc = model.posterior(incumbent)?;
    let ev = SubspaceEvaluator::new(model, subspace, search.l_max)?;
    let opt = acquisition::maximise_coords(
        |l| {
            let p = ev.posterior(l);
            p.std_dev() - p.mean
        },
        &search.symmetric_bounds(subspace.dim()),
        search,
        rng,
    )?;
    Ok(inc.mean + inc.std_dev() + opt.value)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    S3bfo,
    LineBoBernstein,
    FixedSubspace,
    RandomSearch,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::S3bfo,
        Algorithm::LineBoBernstein,
        Algorithm::FixedSubspace,
        Algorithm::RandomSearch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::S3bfo => "s3bfo",
            Algorithm::LineBoBernstein => "linebo_bernstein",
            Algorithm::FixedSubspace => "fixed_subspace",
            Algorithm::RandomSearch => "random_search",
        }
    }

    /// Fresh session for this algorithm.
    pub fn open(self, cfg: &OptConfig) -> Result<Box<dyn Session>> {
        Ok(match self {
            Algorithm::S3bfo => Box::new(S3bfoSession::new(cfg.clone())?),
            Algorithm::FixedSubspace => Box::new(S3bfoSession::new(fixed_subspace_config(cfg))?),
            Algorithm::LineBoBernstein => Box::new(LineBoSession::new(cfg.clone())?),
            Algorithm::RandomSearch => Box::new(RandomSearchSession::new(cfg.clone())?),
        })
    }

    /// Session rebuilt from [`Session::snapshot`] output.
    pub fn restore(self, cfg: &OptConfig, snapshot: serde_json::Value) -> Result<Box<dyn Session>> {
        Ok(match self {
            Algorithm::S3bfo => Box::new(S3bfoSession::restore(cfg.clone(), snapshot)?),
            Algorithm::FixedSubspace => {
                Box::new(S3bfoSession::restore(fixed_subspace_config(cfg), snapshot)?)
            }
            Algorithm::LineBoBernstein => Box::new(LineBoSession::restore(cfg.clone(), snapshot)?),
            Algorithm::RandomSearch => Box::new(RandomSearchSession::restore(cfg.clone(), snapshot)?),
        })
    }

    pub fn run(self, objective: &dyn Objective, cfg: &OptConfig) -> Result<RunResult> {
        let mut session = self.open(cfg)?;
        drive(session.as_mut(), objective, &mut cfg.noise_rng())
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s.trim())
            .ok_or_else(|| Error::Input(format!("unknown algorithm `{s}`")))
    }
}

fn fixed_subspace_config(cfg: &OptConfig) -> OptConfig {
    OptConfig {
        outer_iters: 1,
        ..cfg.clone()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RunStatus {
    Completed,
    /// The objective returned a non-finite value at this evaluation.
    Aborted { eval_index: usize, value: f64 },
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub best: Option<(GridFunction, f64)>,
    pub trace: Vec<RunRecord>,
    pub status: RunStatus,
}

/// Alternates ask/tell against `objective` until the session finishes.
///
/// A non-finite objective value stops the run; the trace then ends with a
/// diagnostic record carrying the offending value and `aux["aborted"] = 1`.
pub fn drive(
    session: &mut dyn Session,
    objective: &dyn Objective,
    noise_rng: &mut ChaCha8Rng,
) -> Result<RunResult> {
    while !session.is_finished() {
        let suggestion = session.ask()?;
        let y = objective.evaluate(&suggestion.point, noise_rng)?;
        if !y.is_finite() {
            let mut trace = session.trace().to_vec();
            let eval_index = trace.len();
            trace.push(RunRecord {
                eval_index,
                s: suggestion.s,
                t: suggestion.t,
                lambda: suggestion.lambda,
                y,
                best_y: trace.last().map_or(f64::NEG_INFINITY, |r| r.best_y),
                aux: BTreeMap::from([("aborted".to_string(), 1.0)]),
            });
            return Ok(RunResult {
                best: session.best(),
                trace,
                status: RunStatus::Aborted { eval_index, value: y },
            });
        }
        let aux = objective.diagnostics(&suggestion.point)?;
        session.tell(y, aux)?;
    }
    Ok(RunResult {
        best: session.best(),
        trace: session.trace().to_vec(),
        status: RunStatus::Completed,
    })
}

pub fn run_s3bfo(objective: &dyn Objective, cfg: &OptConfig) -> Result<RunResult> {
    Algorithm::S3bfo.run(objective, cfg)
}

/// A single subspace searched for `n_init + T` evaluations.
pub fn run_fixed_subspace(objective: &dyn Objective, cfg: &OptConfig) -> Result<RunResult> {
    Algorithm::FixedSubspace.run(objective, cfg)
}

pub fn run_linebo_bernstein(objective: &dyn Objective, cfg: &OptConfig) -> Result<RunResult> {
    Algorithm::LineBoBernstein.run(objective, cfg)
}

pub fn run_random_search(objective: &dyn Objective, cfg: &OptConfig) -> Result<RunResult> {
    Algorithm::RandomSearch.run(objective, cfg)
}
