use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Ledger, OptConfig, RngCursor, RunRecord, Session, Subspace, Suggestion};
use crate::error::{Error, Result};
use crate::gp::GridSampler;
use crate::gridfn::GridFunction;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct State {
    rng: RngCursor,
    ledger: Ledger,
    pending: Option<Suggestion>,
}

/// `g = Σ_j λ_j h^j` with fresh prior draws `h^j` and `λ ~ N(0, I)` at each
/// step, over the same number of evaluations as the subspace search.
pub struct RandomSearchSession {
    cfg: OptConfig,
    sampler: GridSampler,
    rng: ChaCha8Rng,
    state: State,
}

impl RandomSearchSession {
    pub fn new(cfg: OptConfig) -> Result<Self> {
        cfg.validate()?;
        let rng = cfg.opt_rng();
        let state = State {
            rng: RngCursor::capture(cfg.seed, &rng),
            ledger: Ledger::default(),
            pending: None,
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
        Ok(RandomSearchSession {
            sampler: GridSampler::new(&cfg.kappa, cfg.grid)?,
            rng: state.rng.restore(),
            cfg,
            state,
        })
    }
}

impl Session for RandomSearchSession {
    fn ask(&mut self) -> Result<Suggestion> {
        if let Some(p) = &self.state.pending {
            return Ok(p.clone());
        }
        if self.is_finished() {
            return Err(Error::Protocol("optimiser budget exhausted".into()));
        }
        let i = self.state.ledger.trace.len();
        let per = self.cfg.evals_per_outer();
        let basis: Vec<GridFunction> =
            (0..self.cfg.d).map(|_| self.sampler.sample(&mut self.rng)).collect();
        let lambda: Vec<f64> = (0..self.cfg.d).map(|_| self.rng.sample(StandardNormal)).collect();
        let subspace = Subspace::new(i / per, GridFunction::zeros(self.cfg.grid), basis)?;
        let suggestion = Suggestion {
            s: i / per,
            t: ((i % per) as i64 - self.cfg.n_init as i64).max(-1),
            point: subspace.project_capped(&lambda, self.cfg.search.l_max)?,
            lambda,
        };
        self.state.pending = Some(suggestion.clone());
        self.state.rng = RngCursor::capture(self.cfg.seed, &self.rng);
        Ok(suggestion)
    }

    fn tell(&mut self, y: f64, aux: BTreeMap<String, f64>) -> Result<&RunRecord> {
        if !y.is_finite() {
            return Err(Error::Input(format!("observed value must be finite, got {y}")));
        }
        let suggestion = self
            .state
            .pending
            .take()
            .ok_or_else(|| Error::Protocol("tell without a pending suggestion".into()))?;
        self.state.ledger.record(suggestion, y, aux)
    }

    fn pending(&self) -> Option<&Suggestion> {
        self.state.pending.as_ref()
    }

    fn is_finished(&self) -> bool {
        self.state.pending.is_none() && self.state.ledger.trace.len() >= self.cfg.budget()
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
