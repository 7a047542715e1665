//! Covariance functions.
//!
//! Two roles: a scalar kernel `κ` on points of the domain, used to draw the
//! basis functions spanning each search subspace; and a functional kernel
//! `K` on grid functions, used to model the objective. `K` is a stationary
//! profile evaluated on a squared function-space distance.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gridfn::{self, GridFunction, GridSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScalarKind {
    SquaredExponential,
    Matern12,
    Matern32,
    Linear,
}

impl ScalarKind {
    pub fn is_stationary(self) -> bool {
        !matches!(self, ScalarKind::Linear)
    }
}

impl FromStr for ScalarKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "se" | "squared_exponential" | "rbf" => Ok(ScalarKind::SquaredExponential),
            "matern12" | "matern1/2" => Ok(ScalarKind::Matern12),
            "matern32" | "matern3/2" => Ok(ScalarKind::Matern32),
            "linear" => Ok(ScalarKind::Linear),
            other => Err(Error::Input(format!("unknown kernel kind `{other}`"))),
        }
    }
}

impl fmt::Display for ScalarKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScalarKind::SquaredExponential => "se",
            ScalarKind::Matern12 => "matern12",
            ScalarKind::Matern32 => "matern32",
            ScalarKind::Linear => "linear",
        })
    }
}

/// Kernel on points of `R^m`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalarKernelSpec {
    kind: ScalarKind,
    lengthscale: f64,
    variance: f64,
}

impl ScalarKernelSpec {
    pub fn new(kind: ScalarKind, lengthscale: f64, variance: f64) -> Result<Self> {
        if !(lengthscale > 0.0 && lengthscale.is_finite()) {
            return Err(Error::Input(format!("lengthscale must be positive, got {lengthscale}")));
        }
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::Input(format!("variance must be positive, got {variance}")));
        }
        Ok(ScalarKernelSpec {
            kind,
            lengthscale,
            variance,
        })
    }

    /// Unit-variance squared exponential.
    pub fn se(lengthscale: f64) -> Result<Self> {
        Self::new(ScalarKind::SquaredExponential, lengthscale, 1.0)
    }

    pub fn kind(&self) -> ScalarKind {
        self.kind
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    /// Stationary profile as a function of squared distance. `None` for the
    /// linear kernel.
    #[inline]
    pub fn from_sq_dist(&self, r2: f64) -> Option<f64> {
        let r2 = r2.max(0.0);
        let l = self.lengthscale;
        let v = match self.kind {
            ScalarKind::SquaredExponential => (-r2 / (2.0 * l * l)).exp(),
            ScalarKind::Matern12 => (-r2.sqrt() / l).exp(),
            ScalarKind::Matern32 => {
                let z = 3f64.sqrt() * r2.sqrt() / l;
                (1.0 + z) * (-z).exp()
            }
            ScalarKind::Linear => return None,
        };
        Some(self.variance * v)
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), y.len());
        match self.kind {
            ScalarKind::Linear => {
                self.variance * x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>()
            }
            _ => {
                let r2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                self.from_sq_dist(r2).unwrap_or(f64::NAN)
            }
        }
    }

    /// Gram matrix `κ(c^i, c^j)` over every point of a grid.
    pub fn grid_gram(&self, spec: &GridSpec) -> DMatrix<f64> {
        let pts = spec.points();
        let n = pts.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = self.eval(&pts[i], &pts[j]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }
}

/// How the distance between two grid functions is measured.
#[derive(Clone, Debug)]
pub enum Metric {
    /// Histogram L2 distance on function values.
    L2Grid,
    /// RKHS distance; values are coefficient vectors against this Gram
    /// matrix of the scalar kernel on the grid.
    Rkhs(Arc<DMatrix<f64>>),
}

impl PartialEq for Metric {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Metric::L2Grid, Metric::L2Grid) => true,
            (Metric::Rkhs(a), Metric::Rkhs(b)) => Arc::ptr_eq(a, b) || a == b,
            _ => false,
        }
    }
}

/// Kernel on grid functions: a stationary profile on a function distance.
#[derive(Clone, Debug, PartialEq)]
pub struct FunctionalKernelSpec {
    base: ScalarKernelSpec,
    metric: Metric,
}

impl FunctionalKernelSpec {
    pub fn new(base: ScalarKernelSpec, metric: Metric) -> Result<Self> {
        if !base.kind.is_stationary() {
            return Err(Error::Input(format!(
                "functional kernels need a distance-based profile, not `{}`",
                base.kind
            )));
        }
        if let Metric::Rkhs(gram) = &metric {
            validate_psd(gram)?;
        }
        Ok(FunctionalKernelSpec { base, metric })
    }

    pub fn l2(base: ScalarKernelSpec) -> Result<Self> {
        Self::new(base, Metric::L2Grid)
    }

    /// RKHS metric built from `kappa` on the points of `spec`.
    pub fn rkhs(base: ScalarKernelSpec, kappa: &ScalarKernelSpec, spec: &GridSpec) -> Result<Self> {
        Self::new(base, Metric::Rkhs(Arc::new(kappa.grid_gram(spec))))
    }

    pub fn base(&self) -> &ScalarKernelSpec {
        &self.base
    }

    pub fn metric(&self) -> &Metric {
        &self.metric
    }

    pub fn sq_dist(&self, g: &GridFunction, h: &GridFunction) -> Result<f64> {
        match &self.metric {
            Metric::L2Grid => gridfn::l2_dist_sq(g, h),
            Metric::Rkhs(gram) => {
                g.check_same_grid(h)?;
                gridfn::rkhs_dist_sq(g.values(), h.values(), gram)
            }
        }
    }

    /// Inner product inducing [`FunctionalKernelSpec::sq_dist`].
    pub fn inner(&self, g: &GridFunction, h: &GridFunction) -> Result<f64> {
        match &self.metric {
            Metric::L2Grid => g.inner(h),
            Metric::Rkhs(gram) => {
                g.check_same_grid(h)?;
                if gram.nrows() != g.len() {
                    return Err(Error::Shape(format!(
                        "RKHS Gram is {}x{} but functions have {} values",
                        gram.nrows(),
                        gram.ncols(),
                        g.len()
                    )));
                }
                let a = DVector::from_column_slice(g.values());
                let b = DVector::from_column_slice(h.values());
                Ok(a.dot(&(gram.as_ref() * b)))
            }
        }
    }

    #[inline]
    pub fn eval_sq_dist(&self, r2: f64) -> f64 {
        self.base
            .from_sq_dist(r2)
            .expect("functional kernel profiles are stationary")
    }

    pub fn eval(&self, g: &GridFunction, h: &GridFunction) -> Result<f64> {
        Ok(self.eval_sq_dist(self.sq_dist(g, h)?))
    }
}

fn validate_psd(gram: &DMatrix<f64>) -> Result<()> {
    if gram.nrows() != gram.ncols() || gram.nrows() == 0 {
        return Err(Error::Shape("RKHS Gram matrix must be square and nonempty".into()));
    }
    let scale = gram.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut m = gram.clone();
    for i in 0..m.nrows() {
        m[(i, i)] += 1e-8 * scale;
    }
    m.cholesky()
        .map(|_| ())
        .ok_or_else(|| Error::Numerical("RKHS Gram matrix is not positive semidefinite".into()))
}

/// Covariance between two points of type `P`, with a tunable lengthscale.
pub trait Covariance<P>: Clone {
    fn cov(&self, a: &P, b: &P) -> Result<f64>;

    fn lengthscale(&self) -> f64;

    fn with_lengthscale(&self, lengthscale: f64) -> Result<Self>;

    /// Gram matrices of `points` for each candidate lengthscale.
    fn lengthscale_grams(&self, points: &[P], candidates: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        candidates
            .iter()
            .map(|&l| gram_matrix(&self.with_lengthscale(l)?, points))
            .collect()
    }
}

/// `M_ij = k(p_i, p_j)`, upper triangle computed and mirrored.
pub fn gram_matrix<P, K: Covariance<P>>(kernel: &K, points: &[P]) -> Result<DMatrix<f64>> {
    if points.is_empty() {
        return Err(Error::Input("Gram matrix of an empty point list".into()));
    }
    let n = points.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = kernel.cov(&points[i], &points[j])?;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

fn grams_from_sq_dists(
    n: usize,
    sq: &[f64],
    base: &ScalarKernelSpec,
    candidates: &[f64],
) -> Result<Vec<DMatrix<f64>>> {
    candidates
        .iter()
        .map(|&l| {
            let k = ScalarKernelSpec::new(base.kind, l, base.variance)?;
            Ok(DMatrix::from_fn(n, n, |i, j| {
                k.from_sq_dist(sq[i * n + j]).unwrap_or(f64::NAN)
            }))
        })
        .collect()
}

impl Covariance<GridFunction> for FunctionalKernelSpec {
    fn cov(&self, a: &GridFunction, b: &GridFunction) -> Result<f64> {
        self.eval(a, b)
    }

    fn lengthscale(&self) -> f64 {
        self.base.lengthscale
    }

    fn with_lengthscale(&self, lengthscale: f64) -> Result<Self> {
        Ok(FunctionalKernelSpec {
            base: ScalarKernelSpec::new(self.base.kind, lengthscale, self.base.variance)?,
            metric: self.metric.clone(),
        })
    }

    fn lengthscale_grams(
        &self,
        points: &[GridFunction],
        candidates: &[f64],
    ) -> Result<Vec<DMatrix<f64>>> {
        let n = points.len();
        let mut sq = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = self.sq_dist(&points[i], &points[j])?;
                sq[i * n + j] = d;
                sq[j * n + i] = d;
            }
        }
        grams_from_sq_dists(n, &sq, &self.base, candidates)
    }
}

impl Covariance<Vec<f64>> for ScalarKernelSpec {
    fn cov(&self, a: &Vec<f64>, b: &Vec<f64>) -> Result<f64> {
        if a.len() != b.len() {
            return Err(Error::Shape(format!(
                "points of dimension {} and {}",
                a.len(),
                b.len()
            )));
        }
        Ok(self.eval(a, b))
    }

    fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    fn with_lengthscale(&self, lengthscale: f64) -> Result<Self> {
        ScalarKernelSpec::new(self.kind, lengthscale, self.variance)
    }

    fn lengthscale_grams(&self, points: &[Vec<f64>], candidates: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        if !self.kind.is_stationary() {
            return candidates
                .iter()
                .map(|&l| gram_matrix(&self.with_lengthscale(l)?, points))
                .collect();
        }
        let n = points.len();
        let mut sq = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                if points[i].len() != points[j].len() {
                    return Err(Error::Shape("points of different dimension".into()));
                }
                let d: f64 = points[i]
                    .iter()
                    .zip(&points[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                sq[i * n + j] = d;
                sq[j * n + i] = d;
            }
        }
        grams_from_sq_dists(n, &sq, self, candidates)
    }
}
