//! Gaussian-process regression over arbitrary point types.
//!
//! A [`GpModel`] holds its data together with the Cholesky factor of
//! `K(D,D) + σ²I` and the solved weights, so posterior queries cost one
//! triangular solve.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridfn::{GridFunction, GridSpec};
use crate::kernels::{gram_matrix, Covariance, ScalarKernelSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation<P> {
    pub point: P,
    pub y: f64,
}

impl<P> Observation<P> {
    pub fn new(point: P, y: f64) -> Result<Self> {
        if !y.is_finite() {
            return Err(Error::Input(format!("observation value must be finite, got {y}")));
        }
        Ok(Observation { point, y })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Posterior {
    pub mean: f64,
    pub variance: f64,
}

impl Posterior {
    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }
}

#[derive(Clone, Debug)]
pub struct GpModel<P, K> {
    kernel: K,
    noise_var: f64,
    data: Vec<Observation<P>>,
    chol: DMatrix<f64>,
    alpha: DVector<f64>,
}

impl<P: Clone, K: Covariance<P>> GpModel<P, K> {
    /// Model with no data.
    pub fn new(kernel: K, noise_var: f64) -> Result<Self> {
        check_noise(noise_var)?;
        Ok(GpModel {
            kernel,
            noise_var,
            data: Vec::new(),
            chol: DMatrix::zeros(0, 0),
            alpha: DVector::zeros(0),
        })
    }

    /// Factorises the full dataset from scratch.
    pub fn fit(kernel: K, noise_var: f64, data: Vec<Observation<P>>) -> Result<Self> {
        check_noise(noise_var)?;
        if data.is_empty() {
            return Self::new(kernel, noise_var);
        }
        let points: Vec<P> = data.iter().map(|o| o.point.clone()).collect();
        let gram = gram_matrix(&kernel, &points)?;
        Self::from_gram(kernel, noise_var, data, gram)
    }

    fn from_gram(
        kernel: K,
        noise_var: f64,
        data: Vec<Observation<P>>,
        mut gram: DMatrix<f64>,
    ) -> Result<Self> {
        for i in 0..gram.nrows() {
            gram[(i, i)] += noise_var;
        }
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::Numerical("regularised Gram matrix is not positive definite".into()))?
            .unpack();
        let y = DVector::from_iterator(data.len(), data.iter().map(|o| o.y));
        let alpha = back_substitute(&chol, &forward_substitute(&chol, y.as_slice()));
        Ok(GpModel {
            kernel,
            noise_var,
            data,
            chol,
            alpha: DVector::from_vec(alpha),
        })
    }

    pub fn kernel(&self) -> &K {
        &self.kernel
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn data(&self) -> &[Observation<P>] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Lower Cholesky factor of `K(D,D) + σ²I`.
    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// Returns a new model with `obs` appended, extending the factor by one
    /// row instead of refactorising.
    pub fn condition(&self, obs: Observation<P>) -> Result<Self> {
        if !obs.y.is_finite() {
            return Err(Error::Input("observation value must be finite".into()));
        }
        let n = self.data.len();
        let k = self.cross_cov(&obs.point)?;
        let kxx = self.kernel.cov(&obs.point, &obs.point)? + self.noise_var;
        let l = forward_substitute(&self.chol, &k);
        let d2 = kxx - l.iter().map(|v| v * v).sum::<f64>();
        if !(d2 > 1e-14 * kxx) {
            return Err(Error::Numerical(format!(
                "Cholesky extension broke down (pivot {d2:e}); add jitter and retry"
            )));
        }
        let mut chol = DMatrix::zeros(n + 1, n + 1);
        chol.view_mut((0, 0), (n, n)).copy_from(&self.chol);
        for (j, v) in l.iter().enumerate() {
            chol[(n, j)] = *v;
        }
        chol[(n, n)] = d2.sqrt();
        let mut data = self.data.clone();
        data.push(obs);
        let y: Vec<f64> = data.iter().map(|o| o.y).collect();
        let alpha = back_substitute(&chol, &forward_substitute(&chol, &y));
        Ok(GpModel {
            kernel: self.kernel.clone(),
            noise_var: self.noise_var,
            data,
            chol,
            alpha: DVector::from_vec(alpha),
        })
    }

    /// `k(D, p)`.
    pub fn cross_cov(&self, p: &P) -> Result<Vec<f64>> {
        self.data.iter().map(|o| self.kernel.cov(&o.point, p)).collect()
    }

    pub fn posterior(&self, p: &P) -> Result<Posterior> {
        let k = self.cross_cov(p)?;
        let prior = self.kernel.cov(p, p)?;
        Ok(self.posterior_from_cross(&k, prior))
    }

    /// Posterior from a precomputed cross-covariance vector and prior
    /// variance; the fast path used by acquisition search.
    pub fn posterior_from_cross(&self, k: &[f64], prior_var: f64) -> Posterior {
        debug_assert_eq!(k.len(), self.data.len());
        let mean: f64 = k.iter().zip(self.alpha.iter()).map(|(a, b)| a * b).sum();
        let v = forward_substitute(&self.chol, k);
        let variance = (prior_var - v.iter().map(|x| x * x).sum::<f64>()).max(0.0);
        Posterior { mean, variance }
    }

    /// Posterior mean of the values at the given points; cheaper than
    /// [`GpModel::posterior`] when only the mean is needed.
    pub fn posterior_mean_from_cross(&self, k: &[f64]) -> f64 {
        k.iter().zip(self.alpha.iter()).map(|(a, b)| a * b).sum()
    }

    /// Posterior covariance `K_D(a, b)`.
    pub fn posterior_cov(&self, a: &P, b: &P) -> Result<f64> {
        let prior = self.kernel.cov(a, b)?;
        if self.data.is_empty() {
            return Ok(prior);
        }
        let va = forward_substitute(&self.chol, &self.cross_cov(a)?);
        let vb = forward_substitute(&self.chol, &self.cross_cov(b)?);
        Ok(prior - va.iter().zip(&vb).map(|(x, y)| x * y).sum::<f64>())
    }

    /// `log p(y | D) = −½ yᵀα − Σ log L_ii − (n/2) log 2π`.
    pub fn log_marginal_likelihood(&self) -> Result<f64> {
        if self.data.is_empty() {
            return Err(Error::Input("log marginal likelihood of an empty dataset".into()));
        }
        let n = self.data.len() as f64;
        let fit: f64 = self
            .data
            .iter()
            .zip(self.alpha.iter())
            .map(|(o, a)| o.y * a)
            .sum();
        let logdet: f64 = self.chol.diagonal().iter().map(|d| d.ln()).sum();
        Ok(-0.5 * fit - logdet - 0.5 * n * (2.0 * std::f64::consts::PI).ln())
    }
}

fn check_noise(noise_var: f64) -> Result<()> {
    if !(noise_var > 0.0 && noise_var.is_finite()) {
        return Err(Error::Input(format!("noise variance must be positive, got {noise_var}")));
    }
    Ok(())
}

/// Solves `L x = b` for lower-triangular `L`.
pub(crate) fn forward_substitute(l: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    debug_assert_eq!(l.nrows(), n);
    let mut x = b.to_vec();
    for j in 0..n {
        x[j] /= l[(j, j)];
        let xj = x[j];
        let col = l.column(j);
        for i in (j + 1)..n {
            x[i] -= col[i] * xj;
        }
    }
    x
}

/// Solves `Lᵀ x = b` for lower-triangular `L`.
pub(crate) fn back_substitute(l: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        let col = l.column(i);
        let mut s = x[i];
        for k in (i + 1)..n {
            s -= col[k] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// `n` log-spaced values from `min` to `max` inclusive.
pub fn log_grid(min: f64, max: f64, n: usize) -> Result<Vec<f64>> {
    if !(min > 0.0 && max >= min) || n == 0 {
        return Err(Error::Input(format!(
            "log grid needs 0 < min <= max and n >= 1, got [{min}, {max}] x {n}"
        )));
    }
    if n == 1 {
        return Ok(vec![min]);
    }
    let (a, b) = (min.ln(), max.ln());
    Ok((0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect())
}

/// Picks the candidate lengthscale maximising the log marginal likelihood,
/// preferring the larger lengthscale on exact ties. Returns the tuned kernel
/// and its likelihood.
pub fn tune_lengthscale<P: Clone, K: Covariance<P>>(
    data: &[Observation<P>],
    template: &K,
    noise_var: f64,
    candidates: &[f64],
) -> Result<(K, f64)> {
    if data.is_empty() {
        return Err(Error::Input("lengthscale tuning needs data".into()));
    }
    if candidates.is_empty() {
        return Err(Error::Input("lengthscale tuning needs candidates".into()));
    }
    check_noise(noise_var)?;
    let points: Vec<P> = data.iter().map(|o| o.point.clone()).collect();
    let grams = template.lengthscale_grams(&points, candidates)?;
    let mut best: Option<(f64, f64)> = None;
    for (&l, gram) in candidates.iter().zip(grams) {
        let Ok(model) = GpModel::from_gram(template.with_lengthscale(l)?, noise_var, data.to_vec(), gram)
        else {
            continue;
        };
        let lml = model.log_marginal_likelihood()?;
        if !lml.is_finite() {
            continue;
        }
        let better = match best {
            None => true,
            Some((bl, bv)) => lml > bv || (lml == bv && l > bl),
        };
        if better {
            best = Some((l, lml));
        }
    }
    let (l, lml) = best.ok_or_else(|| Error::Numerical("every candidate lengthscale failed".into()))?;
    Ok((template.with_lengthscale(l)?, lml))
}

/// Draws prior samples `N(0, κ(c, c) + jitter·I)` on a fixed grid, reusing
/// one factorisation.
#[derive(Clone, Debug)]
pub struct GridSampler {
    spec: GridSpec,
    chol: DMatrix<f64>,
    jitter: f64,
}

impl GridSampler {
    pub fn new(kernel: &ScalarKernelSpec, spec: GridSpec) -> Result<Self> {
        let gram = kernel.grid_gram(&spec);
        let base = kernel.variance();
        let mut jitter = 1e-10 * base;
        loop {
            let mut m = gram.clone();
            for i in 0..m.nrows() {
                m[(i, i)] += jitter;
            }
            if let Some(c) = m.cholesky() {
                return Ok(GridSampler {
                    spec,
                    chol: c.unpack(),
                    jitter,
                });
            }
            jitter *= 100.0;
            if jitter > 1e-6 * base * (1.0 + 1e-9) {
                return Err(Error::Numerical(
                    "grid Gram matrix not factorisable with jitter up to 1e-6".into(),
                ));
            }
        }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    /// Jitter that made the Gram matrix factorisable.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> GridFunction {
        let n = self.spec.len();
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let mut values = vec![0.0; n];
        for j in 0..n {
            let zj = z[j];
            let col = self.chol.column(j);
            for i in j..n {
                values[i] += col[i] * zj;
            }
        }
        GridFunction::new(self.spec, values).expect("prior draw is finite")
    }
}

pub fn sample_on_grid<R: Rng + ?Sized>(
    kernel: &ScalarKernelSpec,
    spec: GridSpec,
    rng: &mut R,
) -> Result<GridFunction> {
    Ok(GridSampler::new(kernel, spec)?.sample(rng))
}

/// Outcome of comparing the joint posterior against the biased-prior form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EquivalenceReport {
    pub max_mean_diff: f64,
    pub max_var_diff: f64,
    pub holds: bool,
}

/// Checks that conditioning `GP(0, K)` on `earlier ∪ current` matches
/// conditioning `GP(μ_earlier, K_earlier)` on `current` alone, at `probes`.
pub fn biased_posterior_equivalence_check<P: Clone, K: Covariance<P>>(
    kernel: &K,
    noise_var: f64,
    earlier: &[Observation<P>],
    current: &[Observation<P>],
    probes: &[P],
    tol: f64,
) -> Result<EquivalenceReport> {
    let mut all = earlier.to_vec();
    all.extend_from_slice(current);
    let joint = GpModel::fit(kernel.clone(), noise_var, all)?;
    let prior = GpModel::fit(kernel.clone(), noise_var, earlier.to_vec())?;

    let m = current.len();
    let mut report = EquivalenceReport {
        max_mean_diff: 0.0,
        max_var_diff: 0.0,
        holds: true,
    };
    if m == 0 {
        for p in probes {
            let a = joint.posterior(p)?;
            let b = prior.posterior(p)?;
            report.max_mean_diff = report.max_mean_diff.max((a.mean - b.mean).abs());
            report.max_var_diff = report.max_var_diff.max((a.variance - b.variance).abs());
        }
        report.holds = report.max_mean_diff <= tol && report.max_var_diff <= tol;
        return Ok(report);
    }

    let mut biased = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let v = prior.posterior_cov(&current[i].point, &current[j].point)?;
            biased[(i, j)] = v;
            biased[(j, i)] = v;
        }
        biased[(i, i)] += noise_var;
    }
    let resid = DVector::from_iterator(
        m,
        current
            .iter()
            .map(|o| prior.posterior(&o.point).map(|p| o.y - p.mean))
            .collect::<Result<Vec<_>>>()?,
    );
    let lu = biased.lu();
    let weights = lu
        .solve(&resid)
        .ok_or_else(|| Error::Numerical("biased Gram matrix is singular".into()))?;
    for p in probes {
        let kp = DVector::from_iterator(
            m,
            current
                .iter()
                .map(|o| prior.posterior_cov(p, &o.point))
                .collect::<Result<Vec<_>>>()?,
        );
        let base = prior.posterior(p)?;
        let mean = base.mean + kp.dot(&weights);
        let solved = lu
            .solve(&kp)
            .ok_or_else(|| Error::Numerical("biased Gram matrix is singular".into()))?;
        let var = prior.posterior_cov(p, p)? - kp.dot(&solved);
        let joint_p = joint.posterior(p)?;
        report.max_mean_diff = report.max_mean_diff.max((mean - joint_p.mean).abs());
        report.max_var_diff = report.max_var_diff.max((var.max(0.0) - joint_p.variance).abs());
    }
    report.holds = report.max_mean_diff <= tol && report.max_var_diff <= tol;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{FunctionalKernelSpec, ScalarKind};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    type FnModel = GpModel<GridFunction, FunctionalKernelSpec>;

    fn spec() -> GridSpec {
        GridSpec::unit_interval(40).unwrap()
    }

    fn kernel(l: f64) -> FunctionalKernelSpec {
        FunctionalKernelSpec::l2(ScalarKernelSpec::se(l).unwrap()).unwrap()
    }

    fn random_data(n: usize, rng: &mut ChaCha8Rng) -> Vec<Observation<GridFunction>> {
        (0..n)
            .map(|_| {
                let v = (0..spec().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let g = GridFunction::new(spec(), v).unwrap();
                Observation::new(g, rng.random_range(-2.0..2.0)).unwrap()
            })
            .collect()
    }

    fn probe(rng: &mut ChaCha8Rng) -> GridFunction {
        let v = (0..spec().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        GridFunction::new(spec(), v).unwrap()
    }

    /// Posterior via an explicit inverse of `K + σ²I`.
    fn dense_oracle(
        k: &FunctionalKernelSpec,
        noise: f64,
        data: &[Observation<GridFunction>],
        g: &GridFunction,
    ) -> (f64, f64) {
        let n = data.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = k.eval(&data[i].point, &data[j].point).unwrap();
            }
            m[(i, i)] += noise;
        }
        let inv = m.try_inverse().unwrap();
        let kv = DVector::from_iterator(n, data.iter().map(|o| k.eval(&o.point, g).unwrap()));
        let y = DVector::from_iterator(n, data.iter().map(|o| o.y));
        let mean = kv.dot(&(&inv * y));
        let var = k.eval(g, g).unwrap() - kv.dot(&(&inv * &kv));
        (mean, var)
    }

    #[test]
    fn empty_model_is_prior() {
        let m = FnModel::new(kernel(0.5), 0.01).unwrap();
        let p = m.posterior(&GridFunction::constant(spec(), 0.3)).unwrap();
        assert_eq!(p.mean, 0.0);
        assert_eq!(p.variance, 1.0);
        assert!(m.log_marginal_likelihood().is_err());
        assert!(FnModel::new(kernel(0.5), 0.0).is_err());
    }

    #[test]
    fn single_observation_closed_form() {
        let g0 = GridFunction::constant(spec(), 0.5);
        let m = FnModel::fit(kernel(1.0), 0.01, vec![Observation::new(g0.clone(), 2.0).unwrap()]).unwrap();
        let p = m.posterior(&g0).unwrap();
        // 1x1 inverse: mean = y K/(K+σ²), var = K − K²/(K+σ²).
        let (k00, s2, y0) = (1.0, 0.01, 2.0);
        assert_relative_eq!(p.mean, y0 * k00 / (k00 + s2), epsilon = 1e-14);
        assert_relative_eq!(p.variance, k00 - k00 * k00 / (k00 + s2), epsilon = 1e-14);
        assert_relative_eq!(p.mean, 1.980198, epsilon = 1e-6);
        assert_relative_eq!(p.variance, 0.009901, epsilon = 1e-6);
    }

    #[test]
    fn matches_dense_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let data = random_data(6, &mut rng);
        let k = kernel(0.7);
        let m = FnModel::fit(k.clone(), 0.05, data.clone()).unwrap();
        for _ in 0..10 {
            let g = probe(&mut rng);
            let p = m.posterior(&g).unwrap();
            let (mean, var) = dense_oracle(&k, 0.05, &data, &g);
            assert!((p.mean - mean).abs() < 1e-8);
            assert!((p.variance - var.max(0.0)).abs() < 1e-8);
        }
        for o in &data {
            let p = m.posterior(&o.point).unwrap();
            assert!(p.variance <= 1.0 + 1e-8);
        }
    }

    #[test]
    fn factor_reconstructs_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = random_data(8, &mut rng);
        let k = kernel(0.4);
        let m = FnModel::fit(k.clone(), 0.01, data.clone()).unwrap();
        let pts: Vec<GridFunction> = data.iter().map(|o| o.point.clone()).collect();
        let mut gram = gram_matrix(&k, &pts).unwrap();
        for i in 0..8 {
            gram[(i, i)] += 0.01;
        }
        let rec = m.chol() * m.chol().transpose();
        assert!((rec - &gram).norm() / gram.norm() < 1e-8);
    }

    #[test]
    fn condition_matches_rebuild() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data = random_data(30, &mut rng);
        let k = kernel(0.6);
        let empty = FnModel::new(k.clone(), 0.02).unwrap();
        let one = empty.condition(data[0].clone()).unwrap();
        let rebuilt = FnModel::fit(k.clone(), 0.02, vec![data[0].clone()]).unwrap();
        assert!((one.chol() - rebuilt.chol()).amax() < 1e-12);
        assert_eq!(empty.len(), 0);

        let probes: Vec<GridFunction> = (0..10).map(|_| probe(&mut rng)).collect();
        let mut chained = empty;
        for n in 0..data.len() {
            chained = chained.condition(data[n].clone()).unwrap();
            let fresh = FnModel::fit(k.clone(), 0.02, data[..=n].to_vec()).unwrap();
            for g in &probes {
                let a = chained.posterior(g).unwrap();
                let b = fresh.posterior(g).unwrap();
                assert!((a.mean - b.mean).abs() < 1e-8);
                assert!((a.variance - b.variance).abs() < 1e-8);
            }
        }

        // Two observations added in either order give the same posterior.
        let base = FnModel::fit(k.clone(), 0.02, data[..5].to_vec()).unwrap();
        let ab = base.condition(data[5].clone()).unwrap().condition(data[6].clone()).unwrap();
        let ba = base.condition(data[6].clone()).unwrap().condition(data[5].clone()).unwrap();
        for g in &probes {
            let (a, b) = (ab.posterior(g).unwrap(), ba.posterior(g).unwrap());
            assert!((a.mean - b.mean).abs() < 1e-8 && (a.variance - b.variance).abs() < 1e-8);
        }
    }

    #[test]
    fn duplicate_observation_barely_moves_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data = random_data(5, &mut rng);
        let noise = 1e-4;
        let m = FnModel::fit(kernel(0.5), noise, data.clone()).unwrap();
        let target = &data[2];
        let before = m.posterior(&target.point).unwrap().mean;
        let after = m
            .condition(Observation::new(target.point.clone(), before).unwrap())
            .unwrap()
            .posterior(&target.point)
            .unwrap()
            .mean;
        assert!((after - before).abs() < 10.0 * noise);
    }

    #[test]
    fn log_likelihood_examples() {
        let g = GridFunction::zeros(spec());
        // K00 + σ² = 1: variance 0.99 plus noise 0.01.
        let k = FunctionalKernelSpec::l2(ScalarKernelSpec::new(ScalarKind::SquaredExponential, 1.0, 0.99).unwrap())
            .unwrap();
        let m0 = FnModel::fit(k.clone(), 0.01, vec![Observation::new(g.clone(), 0.0).unwrap()]).unwrap();
        let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert_relative_eq!(m0.log_marginal_likelihood().unwrap(), -half_log_2pi, epsilon = 1e-12);
        assert_relative_eq!(m0.log_marginal_likelihood().unwrap(), -0.918939, epsilon = 1e-6);
        let m1 = FnModel::fit(k, 0.01, vec![Observation::new(g, 1.0).unwrap()]).unwrap();
        assert_relative_eq!(m1.log_marginal_likelihood().unwrap(), -0.5 - half_log_2pi, epsilon = 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let data = random_data(6, &mut rng);
        let kk = kernel(0.8);
        let m = FnModel::fit(kk.clone(), 0.03, data.clone()).unwrap();
        let pts: Vec<GridFunction> = data.iter().map(|o| o.point.clone()).collect();
        let mut c = gram_matrix(&kk, &pts).unwrap();
        for i in 0..6 {
            c[(i, i)] += 0.03;
        }
        let y = DVector::from_iterator(6, data.iter().map(|o| o.y));
        let det = c.determinant();
        let oracle = -0.5 * y.dot(&(c.try_inverse().unwrap() * &y))
            - 0.5 * det.ln()
            - 3.0 * (2.0 * std::f64::consts::PI).ln();
        assert!((m.log_marginal_likelihood().unwrap() - oracle).abs() < 1e-8);
    }

    #[test]
    fn posterior_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let data = random_data(8, &mut rng);
        let k = kernel(0.5);
        let m = FnModel::fit(k.clone(), 1e-8, data.clone()).unwrap();
        for o in &data {
            assert!((m.posterior(&o.point).unwrap().mean - o.y).abs() < 1e-3);
        }
        let mut shuffled = data.clone();
        shuffled.reverse();
        shuffled.swap(1, 5);
        let a = FnModel::fit(k.clone(), 0.01, data).unwrap();
        let b = FnModel::fit(k, 0.01, shuffled).unwrap();
        for _ in 0..10 {
            let g = probe(&mut rng);
            let (pa, pb) = (a.posterior(&g).unwrap(), b.posterior(&g).unwrap());
            assert!((pa.mean - pb.mean).abs() < 1e-8);
            assert!((pa.variance - pb.variance).abs() < 1e-8);
            assert!(pa.variance <= 1.0 + 1e-8);
        }
    }

    #[test]
    fn sampler_is_deterministic_and_prior_shaped() {
        let spec = GridSpec::unit_interval(100).unwrap();
        let se = ScalarKernelSpec::se(0.3).unwrap();
        let a = sample_on_grid(&se, spec, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = sample_on_grid(&se, spec, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
        let sampler = GridSampler::new(&ScalarKernelSpec::se(1.0).unwrap(), spec).unwrap();
        assert!(sampler.jitter() <= 1e-6);
    }

    #[test]
    fn tuning_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let data = random_data(5, &mut rng);
        let (k, _) = tune_lengthscale(&data, &kernel(1.0), 0.01, &[0.37]).unwrap();
        assert_eq!(k.lengthscale(), 0.37);
        assert!(tune_lengthscale(&data, &kernel(1.0), 0.01, &[]).is_err());
        assert!(tune_lengthscale::<GridFunction, _>(&[], &kernel(1.0), 0.01, &[1.0]).is_err());

        let cands = log_grid(1e-2, 10.0, 17).unwrap();
        assert_eq!(cands.len(), 17);
        assert_relative_eq!(cands[0], 1e-2, epsilon = 1e-15);
        assert_relative_eq!(cands[16], 10.0, epsilon = 1e-12);
        let (best, lml) = tune_lengthscale(&data, &kernel(1.0), 0.01, &cands).unwrap();
        for &c in &cands {
            let m = FnModel::fit(kernel(c), 0.01, data.clone()).unwrap();
            assert!(m.log_marginal_likelihood().unwrap() <= lml + 1e-9);
        }
        let direct = FnModel::fit(best, 0.01, data).unwrap();
        assert_relative_eq!(direct.log_marginal_likelihood().unwrap(), lml, epsilon = 1e-9);
    }

    #[test]
    fn tuning_recovers_generating_lengthscale() {
        // 30 scalar inputs with targets drawn from an SE(0.3) prior.
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let xs: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64 / 29.0]).collect();
        let truth = ScalarKernelSpec::se(0.3).unwrap();
        let mut c = gram_matrix(&truth, &xs).unwrap();
        for i in 0..30 {
            c[(i, i)] += 1e-4;
        }
        let l = c.cholesky().unwrap().unpack();
        let z = DVector::from_iterator(30, (0..30).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let y = l * z;
        let data: Vec<Observation<Vec<f64>>> = xs
            .iter()
            .zip(y.iter())
            .map(|(x, &y)| Observation::new(x.clone(), y).unwrap())
            .collect();
        let cands = log_grid(1e-2, 10.0, 17).unwrap();
        let (chosen, _) = tune_lengthscale(&data, &truth, 1e-4, &cands).unwrap();
        // Exhaustive fine scan of the likelihood as the oracle.
        let fine = log_grid(1e-2, 10.0, 2001).unwrap();
        let mut arg = fine[0];
        let mut top = f64::NEG_INFINITY;
        for &f in &fine {
            let m = GpModel::fit(truth.with_lengthscale(f).unwrap(), 1e-4, data.clone()).unwrap();
            let v = m.log_marginal_likelihood().unwrap();
            if v > top {
                top = v;
                arg = f;
            }
        }
        let step = (cands[1] / cands[0]).ln();
        assert!((chosen.lengthscale().ln() - arg.ln()).abs() <= step + 1e-12);
    }

    #[test]
    fn biased_prior_equivalence() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let k = kernel(0.6);
        let probes: Vec<GridFunction> = (0..10).map(|_| probe(&mut rng)).collect();
        let current = random_data(3, &mut rng);
        let r = biased_posterior_equivalence_check(&k, 0.01, &[], &current, &probes, 1e-6).unwrap();
        assert!(r.holds && r.max_mean_diff < 1e-12);

        let earlier = random_data(4, &mut rng);
        let r = biased_posterior_equivalence_check(&k, 0.01, &earlier, &current, &probes, 1e-6).unwrap();
        assert!(r.holds, "{r:?}");

        let kappa = ScalarKernelSpec::se(0.2).unwrap();
        let rk = FunctionalKernelSpec::rkhs(ScalarKernelSpec::se(3.0).unwrap(), &kappa, &spec()).unwrap();
        let r = biased_posterior_equivalence_check(&rk, 0.01, &earlier, &current, &probes, 1e-6).unwrap();
        assert!(r.holds, "{r:?}");
    }
}
