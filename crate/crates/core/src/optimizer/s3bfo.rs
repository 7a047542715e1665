use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    fit_model, simple_regret_err, Ledger, OptConfig, RngCursor, RunRecord, Session, Subspace,
    Suggestion, Termination,
};
use crate::acquisition::{self, UcbSchedule};
use crate::error::{Error, Result};
use crate::gp::{GpModel, GridSampler};
use crate::gridfn::GridFunction;
use crate::kernels::{Covariance, FunctionalKernelSpec};

type Model = GpModel<GridFunction, FunctionalKernelSpec>;

/// Persisted part of an S³-BFO run.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct State {
    rng: RngCursor,
    ledger: Ledger,
    subspace: Option<Subspace>,
    /// Initial-design coordinates of the current subspace not yet asked.
    init_queue: VecDeque<Vec<f64>>,
    /// Inner steps completed in the current subspace.
    inner_done: usize,
    /// Set once the current subspace's inner loop has terminated.
    subspace_done: bool,
    /// Evaluations in `ledger` made before the current subspace was opened.
    subspace_start: usize,
    pending: Option<Suggestion>,
    lengthscale: f64,
}

/// Sequential subspace search: a GP-UCB search along random
/// `d`-dimensional affine subspaces, each centred on the incumbent.
pub struct S3bfoSession {
    cfg: OptConfig,
    schedule: UcbSchedule,
    sampler: GridSampler,
    rng: ChaCha8Rng,
    state: State,
    model: Option<Model>,
}

impl S3bfoSession {
    pub fn new(cfg: OptConfig) -> Result<Self> {
        cfg.validate()?;
        let rng = cfg.opt_rng();
        let state = State {
            rng: RngCursor::capture(cfg.seed, &rng),
            ledger: Ledger::default(),
            subspace: None,
            init_queue: VecDeque::new(),
            inner_done: 0,
            subspace_done: true,
            subspace_start: 0,
            pending: None,
            lengthscale: cfg.model_kernel.lengthscale(),
        };
        Self::assemble(cfg, state)
    }

    pub fn restore(cfg: OptConfig, snapshot: serde_json::Value) -> Result<Self> {
        cfg.validate()?;
        let state: State = serde_json::from_value(snapshot)
            .map_err(|e| Error::Protocol(format!("unreadable optimiser state: {e}")))?;
        if state.rng.seed != cfg.seed {
            return Err(Error::Protocol("state was created with a different seed".into()));
        }
        Self::assemble(cfg, state)
    }

    fn assemble(cfg: OptConfig, state: State) -> Result<Self> {
        let schedule = UcbSchedule::new(cfg.delta, cfg.d)?;
        let sampler = GridSampler::new(&cfg.kappa, cfg.grid)?;
        Ok(S3bfoSession {
            rng: state.rng.restore(),
            cfg,
            schedule,
            sampler,
            state,
            model: None,
        })
    }

    pub fn config(&self) -> &OptConfig {
        &self.cfg
    }

    pub fn subspace(&self) -> Option<&Subspace> {
        self.state.subspace.as_ref()
    }

    /// Observations made before the current subspace was opened.
    pub fn earlier_observations(&self) -> &[crate::gp::Observation<GridFunction>] {
        &self.state.ledger.history[..self.state.subspace_start]
    }

    /// Observations made inside the current subspace.
    pub fn current_observations(&self) -> &[crate::gp::Observation<GridFunction>] {
        &self.state.ledger.history[self.state.subspace_start..]
    }

    /// Model over every observation so far, rebuilt on demand.
    pub fn model(&mut self) -> Result<&Model> {
        if self.model.is_none() {
            let model = fit_model(
                &self.cfg.model_kernel,
                &self.cfg.lengthscale,
                self.cfg.noise_var,
                &self.state.ledger.history,
            )?;
            self.state.lengthscale = model.kernel().lengthscale();
            self.model = Some(model);
        }
        Ok(self.model.as_ref().expect("just built"))
    }

    fn outer_index(&self) -> Option<usize> {
        self.state.subspace.as_ref().map(Subspace::index)
    }

    fn open_subspace(&mut self) -> Result<()> {
        let index = self.outer_index().map_or(0, |s| s + 1);
        let bias = self.state.ledger.incumbent_point(self.cfg.grid);
        let basis: Vec<GridFunction> =
            (0..self.cfg.d).map(|_| self.sampler.sample(&mut self.rng)).collect();
        let subspace = Subspace::new(index, bias, basis)?;
        self.state.init_queue = (0..self.cfg.n_init)
            .map(|_| (0..self.cfg.d).map(|_| self.rng.sample(StandardNormal)).collect())
            .collect();
        self.state.subspace = Some(subspace);
        self.state.inner_done = 0;
        self.state.subspace_done = false;
        self.state.subspace_start = self.state.ledger.history.len();
        Ok(())
    }

    fn save_rng(&mut self) {
        self.state.rng = RngCursor::capture(self.cfg.seed, &self.rng);
    }

    /// Decides whether the inner loop stops after the step just recorded.
    /// Returns the regret statistic when it was computed.
    fn check_termination(&mut self) -> Result<Option<f64>> {
        let mut err = None;
        if let Termination::SimpleRegret { epsilon } = self.cfg.termination {
            if self.state.inner_done > 0 {
                let incumbent = self.state.ledger.incumbent_point(self.cfg.grid);
                let subspace = self.state.subspace.clone().expect("subspace open");
                let search = self.cfg.search.clone();
                self.model()?;
                let model = self.model.as_ref().expect("built");
                let e = simple_regret_err(model, &subspace, &incumbent, &search, &mut self.rng)?;
                if e < epsilon {
                    self.state.subspace_done = true;
                }
                err = Some(e);
            }
        }
        if self.state.inner_done >= self.cfg.inner_iters {
            self.state.subspace_done = true;
        }
        Ok(err)
    }
}

impl Session for S3bfoSession {
    fn ask(&mut self) -> Result<Suggestion> {
        if let Some(p) = &self.state.pending {
            return Ok(p.clone());
        }
        if self.is_finished() {
            return Err(Error::Protocol("optimiser budget exhausted".into()));
        }
        if self.state.subspace_done {
            self.open_subspace()?;
        }
        let subspace = self.state.subspace.clone().expect("subspace open");
        let suggestion = if let Some(lambda) = self.state.init_queue.front().cloned() {
            Suggestion {
                s: subspace.index(),
                t: -1,
                point: subspace.project_capped(&lambda, self.cfg.search.l_max)?,
                lambda,
            }
        } else {
            let t = self.state.inner_done;
            let search = self.cfg.search.clone();
            self.model()?;
            let model = self.model.as_ref().expect("built");
            let acq = acquisition::maximise(model, &subspace, &self.schedule, &search, t + 1, &mut self.rng)?;
            Suggestion {
                s: subspace.index(),
                t: t as i64,
                lambda: acq.lambda,
                point: acq.point,
            }
        };
        self.state.pending = Some(suggestion.clone());
        self.save_rng();
        Ok(suggestion)
    }

    fn tell(&mut self, y: f64, aux: BTreeMap<String, f64>) -> Result<&RunRecord> {
        let suggestion = self
            .state
            .pending
            .take()
            .ok_or_else(|| Error::Protocol("tell without a pending suggestion".into()))?;
        if !y.is_finite() {
            self.state.pending = Some(suggestion);
            return Err(Error::Input(format!("observed value must be finite, got {y}")));
        }
        if suggestion.t < 0 {
            self.state.init_queue.pop_front();
        } else {
            self.state.inner_done += 1;
        }
        self.state.ledger.record(suggestion, y, aux)?;
        self.model = None;
        if let Some(err) = self.check_termination()? {
            self.state.ledger.annotate_last("regret_err", err);
        }
        self.save_rng();
        Ok(self.state.ledger.trace.last().expect("recorded"))
    }

    fn pending(&self) -> Option<&Suggestion> {
        self.state.pending.as_ref()
    }

    fn is_finished(&self) -> bool {
        self.state.pending.is_none()
            && self.state.subspace_done
            && self.outer_index().is_some_and(|s| s + 1 >= self.cfg.outer_iters)
    }

    fn trace(&self) -> &[RunRecord] {
        &self.state.ledger.trace
    }

    fn best(&self) -> Option<(GridFunction, f64)> {
        self.state.ledger.best()
    }

    fn snapshot(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(&self.state)?)
    }
}
