//! GP-UCB acquisition and its maximisation over subspace coordinates.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::gp::{GpModel, Posterior};
use crate::gridfn::GridFunction;
use crate::kernels::FunctionalKernelSpec;
use crate::optimizer::Subspace;

/// Golden-section iterations per coordinate line search.
const GOLDEN_ITERS: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BetaMode {
    /// `β_t = 2 log(t^{d/2+2} π² / (3δ))`.
    SrinivasTheorem2,
}

/// Exploration schedule `β_t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UcbSchedule {
    delta: f64,
    dim: usize,
    mode: BetaMode,
}

impl UcbSchedule {
    pub fn new(delta: f64, dim: usize) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Input(format!("delta must lie in (0,1), got {delta}")));
        }
        if dim == 0 {
            return Err(Error::Input("schedule dimension must be positive".into()));
        }
        Ok(UcbSchedule {
            delta,
            dim,
            mode: BetaMode::SrinivasTheorem2,
        })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> BetaMode {
        self.mode
    }

    /// `β_t` for iteration `t ≥ 1` (values below 1 are treated as 1).
    pub fn beta(&self, t: usize) -> f64 {
        let t = t.max(1) as f64;
        match self.mode {
            BetaMode::SrinivasTheorem2 => {
                let pi2 = std::f64::consts::PI.powi(2);
                let power = self.dim as f64 / 2.0 + 2.0;
                2.0 * (power * t.ln() + (pi2 / (3.0 * self.delta)).ln())
            }
        }
    }
}

#[inline]
pub fn ucb_value(mean: f64, variance: f64, beta: f64) -> f64 {
    mean + beta.sqrt() * variance.max(0.0).sqrt()
}

/// Multistart coordinate search settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AcqSearchConfig {
    pub restarts: usize,
    /// Maximum number of coordinate line searches per restart.
    pub local_steps: usize,
    /// Coordinates are searched in `[-lambda_box, lambda_box]`.
    pub lambda_box: f64,
    /// Radius of the admissible ball `‖g‖ ≤ l_max`.
    pub l_max: f64,
    /// Points of the coarse scan that brackets each line search.
    pub scan_points: usize,
}

impl Default for AcqSearchConfig {
    fn default() -> Self {
        AcqSearchConfig {
            restarts: 8,
            local_steps: 40,
            lambda_box: 4.0,
            l_max: 10.0,
            scan_points: 32,
        }
    }
}

impl AcqSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 || self.local_steps == 0 {
            return Err(Error::Input("restarts and local_steps must be positive".into()));
        }
        if !(self.lambda_box > 0.0 && self.lambda_box.is_finite()) {
            return Err(Error::Input("lambda_box must be positive".into()));
        }
        if !(self.l_max > 0.0) {
            return Err(Error::Input("l_max must be positive".into()));
        }
        if self.scan_points < 2 {
            return Err(Error::Input("scan_points must be at least 2".into()));
        }
        Ok(())
    }

    pub fn symmetric_bounds(&self, d: usize) -> Vec<(f64, f64)> {
        vec![(-self.lambda_box, self.lambda_box); d]
    }
}

/// Result of a coordinate-space search.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordOptimum {
    pub lambda: Vec<f64>,
    pub value: f64,
    /// Best score among the restart seeds before refinement.
    pub best_seed_value: f64,
}

#[inline]
fn finite_or_neg_inf(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

/// Maximises `score` on a box by multistart round-robin coordinate search.
///
/// Each restart draws a uniform seed in `bounds`. A line search on one
/// coordinate scans `scan_points` values across the full bound, then runs
/// golden-section refinement inside the bracket of the best scan point. A
/// move is taken only if it improves the score, so the result is never
/// worse than its seed. Restarts stop early once a full round over all
/// coordinates fails to improve. Ties between restarts go to the earlier one.
pub fn maximise_coords<R, F>(
    mut score: F,
    bounds: &[(f64, f64)],
    cfg: &AcqSearchConfig,
    rng: &mut R,
) -> Result<CoordOptimum>
where
    R: Rng + ?Sized,
    F: FnMut(&[f64]) -> f64,
{
    cfg.validate()?;
    let d = bounds.len();
    if d == 0 {
        return Err(Error::Input("cannot search a zero-dimensional subspace".into()));
    }
    if bounds.iter().any(|&(lo, hi)| !(lo <= hi) || !lo.is_finite() || !hi.is_finite()) {
        return Err(Error::Input(format!("invalid search bounds {bounds:?}")));
    }
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut best_seed = f64::NEG_INFINITY;
    for _ in 0..cfg.restarts {
        let mut x: Vec<f64> = bounds
            .iter()
            .map(|&(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
            .collect();
        let mut fx = finite_or_neg_inf(score(&x));
        best_seed = best_seed.max(fx);
        let mut stale = 0;
        for step in 0..cfg.local_steps {
            let j = step % d;
            let improved = line_search(&mut score, &mut x, &mut fx, j, bounds[j], cfg.scan_points);
            stale = if improved { 0 } else { stale + 1 };
            if stale >= d {
                break;
            }
        }
        if best.as_ref().is_none_or(|(_, bv)| fx > *bv) {
            best = Some((x, fx));
        }
    }
    let (lambda, value) = best.expect("at least one restart");
    Ok(CoordOptimum {
        lambda,
        value,
        best_seed_value: best_seed,
    })
}

fn line_search<F: FnMut(&[f64]) -> f64>(
    score: &mut F,
    x: &mut [f64],
    fx: &mut f64,
    j: usize,
    (lo, hi): (f64, f64),
    scan_points: usize,
) -> bool {
    let original = x[j];
    let mut eval = |x: &mut [f64], v: f64| {
        x[j] = v;
        finite_or_neg_inf(score(x))
    };
    let mut best_v = original;
    let mut best_f = *fx;
    let step = (hi - lo) / (scan_points - 1) as f64;
    let mut scan_best = (lo, f64::NEG_INFINITY, 0usize);
    for k in 0..scan_points {
        let v = if k + 1 == scan_points { hi } else { lo + step * k as f64 };
        let f = eval(x, v);
        if f > scan_best.1 {
            scan_best = (v, f, k);
        }
    }
    if scan_best.1 > best_f {
        best_v = scan_best.0;
        best_f = scan_best.1;
    }
    if step > 0.0 {
        let k = scan_best.2;
        let mut a = if k == 0 { lo } else { lo + step * (k - 1) as f64 };
        let mut b = if k + 1 >= scan_points { hi } else { (lo + step * (k + 1) as f64).min(hi) };
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - inv_phi * (b - a);
        let mut e = a + inv_phi * (b - a);
        let mut fc = eval(x, c);
        let mut fe = eval(x, e);
        for _ in 0..GOLDEN_ITERS {
            if fc > best_f {
                best_v = c;
                best_f = fc;
            }
            if fe > best_f {
                best_v = e;
                best_f = fe;
            }
            if fc >= fe {
                b = e;
                e = c;
                fe = fc;
                c = b - inv_phi * (b - a);
                fc = eval(x, c);
            } else {
                a = c;
                c = e;
                fc = fe;
                e = a + inv_phi * (b - a);
                fe = eval(x, e);
            }
        }
        if fc > best_f {
            best_v = c;
            best_f = fc;
        }
        if fe > best_f {
            best_v = e;
            best_f = fe;
        }
    }
    if best_f > *fx {
        x[j] = best_v;
        *fx = best_f;
        true
    } else {
        x[j] = original;
        false
    }
}

/// Posterior of the functional GP along a subspace, with the radial
/// projection onto `‖g‖ ≤ l_max` applied before evaluation.
///
/// Every inner product between the bias, basis and the model's data is
/// computed once, so distances to the data cost `O(n·d + d²)` per query
/// instead of `O(n·N)`.
pub struct SubspaceEvaluator<'a> {
    model: &'a GpModel<GridFunction, FunctionalKernelSpec>,
    subspace: &'a Subspace,
    l_max: f64,
    prior_var: f64,
    l2: Quadratic,
    metric: Quadratic,
    /// `⟨b, g_i⟩_M` for each datum `g_i`.
    data_bias: Vec<f64>,
    /// Row `i` holds `⟨h^j, g_i⟩_M`.
    data_basis: DMatrix<f64>,
    data_sq: Vec<f64>,
}

/// `‖b + Hλ‖²` expanded as `c + 2 λᵀu + λᵀGλ`.
struct Quadratic {
    c: f64,
    u: Vec<f64>,
    gram: DMatrix<f64>,
}

impl Quadratic {
    fn build(
        subspace: &Subspace,
        inner: &dyn Fn(&GridFunction, &GridFunction) -> Result<f64>,
    ) -> Result<Self> {
        let b = subspace.bias();
        let basis = subspace.basis();
        let d = basis.len();
        let mut gram = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in i..d {
                let v = inner(&basis[i], &basis[j])?;
                gram[(i, j)] = v;
                gram[(j, i)] = v;
            }
        }
        Ok(Quadratic {
            c: inner(b, b)?,
            u: basis.iter().map(|h| inner(h, b)).collect::<Result<_>>()?,
            gram,
        })
    }

    fn eval(&self, lambda: &[f64]) -> f64 {
        let d = lambda.len();
        let mut s = self.c;
        for i in 0..d {
            s += 2.0 * lambda[i] * self.u[i];
            let mut row = 0.0;
            for j in 0..d {
                row += self.gram[(i, j)] * lambda[j];
            }
            s += lambda[i] * row;
        }
        s.max(0.0)
    }
}

impl<'a> SubspaceEvaluator<'a> {
    pub fn new(
        model: &'a GpModel<GridFunction, FunctionalKernelSpec>,
        subspace: &'a Subspace,
        l_max: f64,
    ) -> Result<Self> {
        let kernel = model.kernel();
        let metric_inner = |a: &GridFunction, b: &GridFunction| kernel.inner(a, b);
        let l2_inner = |a: &GridFunction, b: &GridFunction| a.inner(b);
        let metric = Quadratic::build(subspace, &metric_inner)?;
        let l2 = match kernel.metric() {
            crate::kernels::Metric::L2Grid => Quadratic {
                c: metric.c,
                u: metric.u.clone(),
                gram: metric.gram.clone(),
            },
            crate::kernels::Metric::Rkhs(_) => Quadratic::build(subspace, &l2_inner)?,
        };
        let n = model.len();
        let d = subspace.dim();
        let mut data_bias = Vec::with_capacity(n);
        let mut data_sq = Vec::with_capacity(n);
        let mut data_basis = DMatrix::zeros(n, d);
        for (i, obs) in model.data().iter().enumerate() {
            data_bias.push(kernel.inner(subspace.bias(), &obs.point)?);
            data_sq.push(kernel.inner(&obs.point, &obs.point)?);
            for (j, h) in subspace.basis().iter().enumerate() {
                data_basis[(i, j)] = kernel.inner(h, &obs.point)?;
            }
        }
        Ok(SubspaceEvaluator {
            model,
            subspace,
            l_max,
            prior_var: kernel.eval_sq_dist(0.0),
            l2,
            metric,
            data_bias,
            data_basis,
            data_sq,
        })
    }

    pub fn subspace(&self) -> &Subspace {
        self.subspace
    }

    /// Radial factor applied to `b + Hλ`.
    fn scale(&self, lambda: &[f64]) -> f64 {
        let norm = self.l2.eval(lambda).sqrt();
        if norm > self.l_max {
            self.l_max / norm
        } else {
            1.0
        }
    }

    /// Squared metric distances from the projected point to each datum.
    pub fn sq_dists(&self, lambda: &[f64]) -> Vec<f64> {
        let s = self.scale(lambda);
        let g_sq = self.metric.eval(lambda);
        (0..self.data_sq.len())
            .map(|i| {
                let mut cross = self.data_bias[i];
                for (j, l) in lambda.iter().enumerate() {
                    cross += l * self.data_basis[(i, j)];
                }
                (s * s * g_sq - 2.0 * s * cross + self.data_sq[i]).max(0.0)
            })
            .collect()
    }

    pub fn posterior(&self, lambda: &[f64]) -> Posterior {
        let kernel = self.model.kernel();
        let k: Vec<f64> = self
            .sq_dists(lambda)
            .into_iter()
            .map(|r2| kernel.eval_sq_dist(r2))
            .collect();
        self.model.posterior_from_cross(&k, self.prior_var)
    }

    /// The admissible grid function at coordinates `lambda`.
    pub fn point(&self, lambda: &[f64]) -> Result<GridFunction> {
        self.subspace.project_capped(lambda, self.l_max)
    }
}

/// Acquisition maximiser output.
#[derive(Clone, Debug, PartialEq)]
pub struct Acquired {
    pub lambda: Vec<f64>,
    pub point: GridFunction,
    pub value: f64,
}

/// Maximises GP-UCB over the coordinates of `subspace`. `t` is the
/// iteration index used by the `β_t` schedule.
pub fn maximise<R: Rng + ?Sized>(
    model: &GpModel<GridFunction, FunctionalKernelSpec>,
    subspace: &Subspace,
    schedule: &UcbSchedule,
    search: &AcqSearchConfig,
    t: usize,
    rng: &mut R,
) -> Result<Acquired> {
    let d = subspace.dim();
    if d == 0 {
        return Err(Error::Input("subspace dimension must be at least 1".into()));
    }
    let beta = schedule.beta(t);
    let ev = SubspaceEvaluator::new(model, subspace, search.l_max)?;
    let opt = maximise_coords(
        |l| {
            let p = ev.posterior(l);
            ucb_value(p.mean, p.variance, beta)
        },
        &search.symmetric_bounds(d),
        search,
        rng,
    )?;
    Ok(Acquired {
        point: ev.point(&opt.lambda)?,
        lambda: opt.lambda,
        value: opt.value,
    })
}
