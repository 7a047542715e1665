use std::collections::{BTreeMap, VecDeque};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{fit_model, Ledger, OptConfig, RngCursor, RunRecord, Session, Suggestion};
use crate::acquisition::{self, ucb_value, UcbSchedule};
use crate::error::{Error, Result};
use crate::gp::Observation;
use crate::gridfn::{GridFunction, GridSpec};
use crate::kernels::ScalarKernelSpec;

pub const BERNSTEIN_ORDER: usize = 10;

/// `B_{k,n}(x) = C(n,k) x^k (1 − x)^{n−k}` for `k = 0..=n`, sampled on a
/// one-dimensional grid.
pub fn bernstein_basis(order: usize, spec: GridSpec) -> Result<Vec<GridFunction>> {
    if spec.dim() != 1 {
        return Err(Error::Input("Bernstein basis needs a one-dimensional grid".into()));
    }
    let xs: Vec<f64> = spec.points().into_iter().map(|p| p[0]).collect();
    (0..=order)
        .map(|k| {
            let c = binomial(order, k);
            let n = order as i32;
            let k = k as i32;
            GridFunction::new(
                spec,
                xs.iter().map(|&x| c * x.powi(k) * (1.0 - x).powi(n - k)).collect(),
            )
        })
        .collect()
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Weights of the function at coordinate `alpha` on the current line.
fn on_line(origin: &[f64], dir: &[f64], alpha: f64) -> Vec<f64> {
    origin.iter().zip(dir).map(|(o, u)| o + alpha * u).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Line {
    index: usize,
    origin: Vec<f64>,
    dir: Vec<f64>,
    /// Feasible coordinate interval.
    bounds: (f64, f64),
    /// Observations on this line, keyed by coordinate. The origin's value is
    /// included when the origin has been evaluated before.
    data: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct State {
    rng: RngCursor,
    ledger: Ledger,
    line: Option<Line>,
    init_queue: VecDeque<f64>,
    inner_done: usize,
    pending: Option<Suggestion>,
    /// Coordinate of the pending suggestion on the current line.
    pending_alpha: Option<f64>,
}

/// Line search in the weight space of an order-10 Bernstein expansion:
/// GP-UCB along a random direction through the incumbent weights, one line
/// per outer iteration.
pub struct LineBoSession {
    cfg: OptConfig,
    schedule: UcbSchedule,
    basis: Vec<GridFunction>,
    /// L2 Gram matrix of `basis`; `‖Σ w_k B_k‖² = wᵀ G w`.
    gram: DMatrix<f64>,
    line_kernel: ScalarKernelSpec,
    rng: ChaCha8Rng,
    state: State,
}

impl LineBoSession {
    pub fn new(cfg: OptConfig) -> Result<Self> {
        cfg.validate()?;
        let rng = cfg.opt_rng();
        let state = State {
            rng: RngCursor::capture(cfg.seed, &rng),
            ledger: Ledger::default(),
            line: None,
            init_queue: VecDeque::new(),
            inner_done: 0,
            pending: None,
            pending_alpha: None,
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
        let basis = bernstein_basis(BERNSTEIN_ORDER, cfg.grid)?;
        let gram = crate::gridfn::l2_gram(&basis)?;
        let base = cfg.model_kernel.base();
        let line_kernel = ScalarKernelSpec::new(
            crate::kernels::ScalarKind::SquaredExponential,
            base.lengthscale(),
            base.variance(),
        )?;
        Ok(LineBoSession {
            schedule: UcbSchedule::new(cfg.delta, 1)?,
            rng: state.rng.restore(),
            cfg,
            basis,
            gram,
            line_kernel,
            state,
        })
    }

    fn function(&self, w: &[f64]) -> Result<GridFunction> {
        crate::gridfn::linear_combine(&GridFunction::zeros(self.cfg.grid), &self.basis, w)
    }

    fn incumbent_weights(&self) -> Vec<f64> {
        match self.state.ledger.incumbent_index() {
            Some(i) => self.state.ledger.trace[i].lambda.clone(),
            None => vec![0.0; BERNSTEIN_ORDER + 1],
        }
    }

    /// Interval of `α` with `‖g(origin + α·dir)‖ ≤ l_max`.
    fn feasible(&self, origin: &[f64], dir: &[f64]) -> (f64, f64) {
        let o = DVector::from_column_slice(origin);
        let u = DVector::from_column_slice(dir);
        let gu = &self.gram * &u;
        let a = u.dot(&gu);
        let b = o.dot(&gu);
        let c = o.dot(&(&self.gram * &o)) - self.cfg.search.l_max.powi(2);
        // a α² + 2 b α + c ≤ 0; the origin is feasible so c ≤ 0.
        let disc = (b * b - a * c).max(0.0).sqrt();
        ((-b - disc) / a, (-b + disc) / a)
    }

    fn open_line(&mut self) -> Result<()> {
        let index = self.state.line.as_ref().map_or(0, |l| l.index + 1);
        let origin = self.incumbent_weights();
        let dir = loop {
            let v: Vec<f64> = (0..=BERNSTEIN_ORDER).map(|_| self.rng.sample(StandardNormal)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-12 {
                break v.into_iter().map(|x| x / n).collect::<Vec<_>>();
            }
        };
        let bounds = self.feasible(&origin, &dir);
        let data = match self.state.ledger.incumbent_index() {
            Some(i) => vec![(0.0, self.state.ledger.trace[i].y)],
            None => Vec::new(),
        };
        self.state.init_queue = (0..self.cfg.n_init)
            .map(|_| self.rng.random_range(bounds.0..=bounds.1))
            .collect();
        self.state.inner_done = 0;
        self.state.line = Some(Line {
            index,
            origin,
            dir,
            bounds,
            data,
        });
        Ok(())
    }

    fn line_done(&self) -> bool {
        self.state.line.is_none()
            || (self.state.init_queue.is_empty() && self.state.inner_done >= self.cfg.inner_iters)
    }

    fn suggest_alpha(&mut self) -> Result<f64> {
        let line = self.state.line.as_ref().expect("line open");
        let data: Vec<Observation<Vec<f64>>> = line
            .data
            .iter()
            .map(|&(a, y)| Observation::new(vec![a], y))
            .collect::<Result<_>>()?;
        let model = fit_model(&self.line_kernel, &self.cfg.lengthscale, self.cfg.noise_var, &data)?;
        let beta = self.schedule.beta(self.state.inner_done + 1);
        let bounds = [line.bounds];
        let opt = acquisition::maximise_coords(
            |l| match model.posterior(&vec![l[0]]) {
                Ok(p) => ucb_value(p.mean, p.variance, beta),
                Err(_) => f64::NAN,
            },
            &bounds,
            &self.cfg.search,
            &mut self.rng,
        )?;
        Ok(opt.lambda[0])
    }
}

impl Session for LineBoSession {
    fn ask(&mut self) -> Result<Suggestion> {
        if let Some(p) = &self.state.pending {
            return Ok(p.clone());
        }
        if self.is_finished() {
            return Err(Error::Protocol("optimiser budget exhausted".into()));
        }
        if self.line_done() {
            self.open_line()?;
        }
        let (alpha, t) = match self.state.init_queue.front() {
            Some(&a) => (a, -1),
            None => (self.suggest_alpha()?, self.state.inner_done as i64),
        };
        let line = self.state.line.as_ref().expect("line open");
        let w = on_line(&line.origin, &line.dir, alpha);
        let suggestion = Suggestion {
            s: line.index,
            t,
            point: self.function(&w)?,
            lambda: w,
        };
        self.state.pending = Some(suggestion.clone());
        self.state.pending_alpha = Some(alpha);
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
        let alpha = self.state.pending_alpha.take().expect("set with pending");
        if suggestion.t < 0 {
            self.state.init_queue.pop_front();
        } else {
            self.state.inner_done += 1;
        }
        self.state.line.as_mut().expect("line open").data.push((alpha, y));
        self.state.ledger.record(suggestion, y, aux)
    }

    fn pending(&self) -> Option<&Suggestion> {
        self.state.pending.as_ref()
    }

    fn is_finished(&self) -> bool {
        self.state.pending.is_none()
            && self.state.line.as_ref().is_some_and(|l| l.index + 1 >= self.cfg.outer_iters)
            && self.line_done()
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
