//! Benchmark objectives and the subspace/ball intersection estimator.

use std::collections::BTreeMap;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gp::GridSampler;
use crate::gridfn::{self, GridFunction, GridSpec};
use crate::kernels::ScalarKernelSpec;

/// A noisy functional to be maximised. Noise is drawn from the supplied
/// generator so simulated and externally measured values share one path.
pub trait Objective: Send + Sync {
    fn evaluate(&self, g: &GridFunction, rng: &mut dyn RngCore) -> Result<f64>;

    /// Noise-free side information recorded alongside each evaluation.
    fn diagnostics(&self, _g: &GridFunction) -> Result<BTreeMap<String, f64>> {
        Ok(BTreeMap::new())
    }
}

/// Stream reserved for drawing objectives. Optimisers use stream 0 and
/// objective noise stream 1, so a target never coincides with an
/// optimiser's own prior draws when the seeds happen to match.
pub const TARGET_STREAM: u64 = 2;

fn target_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(TARGET_STREAM);
    rng
}

/// Blind function matching: `f(g) = −‖g − q‖ + ε`.
#[derive(Clone, Debug)]
pub struct MatchingObjective {
    target: GridFunction,
    noise: f64,
}

impl MatchingObjective {
    pub fn new(target: GridFunction, noise: f64) -> Result<Self> {
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(Error::Input(format!("noise level must be nonnegative, got {noise}")));
        }
        Ok(MatchingObjective { target, noise })
    }

    /// Target drawn from `GP(0, kernel)` on `spec` with its own seed.
    pub fn from_prior(kernel: &ScalarKernelSpec, spec: GridSpec, seed: u64, noise: f64) -> Result<Self> {
        let sampler = GridSampler::new(kernel, spec)?;
        let target = sampler.sample(&mut target_rng(seed));
        Self::new(target, noise)
    }

    pub fn target(&self) -> &GridFunction {
        &self.target
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn gap(&self, g: &GridFunction) -> Result<f64> {
        Ok(gridfn::l2_dist_sq(g, &self.target)?.sqrt())
    }
}

impl Objective for MatchingObjective {
    fn evaluate(&self, g: &GridFunction, rng: &mut dyn RngCore) -> Result<f64> {
        let gap = self.gap(g)?;
        let z: f64 = rng.sample(StandardNormal);
        Ok(-gap + self.noise * z)
    }

    fn diagnostics(&self, g: &GridFunction) -> Result<BTreeMap<String, f64>> {
        Ok(BTreeMap::from([("l2_gap".to_string(), self.gap(g)?)]))
    }
}

/// `f(g) = −Σ_i (⟨g, e^i⟩ − c_i)² + ε` over orthonormal directions `e^i`;
/// invariant to every component of `g` orthogonal to their span.
#[derive(Clone, Debug)]
pub struct EffectiveDimObjective {
    directions: Vec<GridFunction>,
    targets: Vec<f64>,
    noise: f64,
}

impl EffectiveDimObjective {
    pub fn new(directions: Vec<GridFunction>, targets: Vec<f64>, noise: f64) -> Result<Self> {
        if directions.is_empty() || directions.len() != targets.len() {
            return Err(Error::Shape(format!(
                "{} directions and {} targets",
                directions.len(),
                targets.len()
            )));
        }
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(Error::Input(format!("noise level must be nonnegative, got {noise}")));
        }
        for i in 0..directions.len() {
            for j in 0..directions.len() {
                let ip = directions[i].inner(&directions[j])?;
                let want = if i == j { 1.0 } else { 0.0 };
                if (ip - want).abs() > 1e-8 {
                    return Err(Error::Input(format!(
                        "directions {i} and {j} are not orthonormal (inner product {ip})"
                    )));
                }
            }
        }
        Ok(EffectiveDimObjective {
            directions,
            targets,
            noise,
        })
    }

    /// Directions from Gram–Schmidt over `d_e` prior draws; targets
    /// `c_i ~ N(0, 1)`.
    pub fn from_prior(
        kernel: &ScalarKernelSpec,
        spec: GridSpec,
        d_e: usize,
        seed: u64,
        noise: f64,
    ) -> Result<Self> {
        if d_e == 0 {
            return Err(Error::Input("effective dimension must be positive".into()));
        }
        let sampler = GridSampler::new(kernel, spec)?;
        let mut rng = target_rng(seed);
        let mut directions: Vec<GridFunction> = Vec::with_capacity(d_e);
        while directions.len() < d_e {
            let mut v = sampler.sample(&mut rng);
            // Two passes of modified Gram–Schmidt.
            for _ in 0..2 {
                for e in &directions {
                    let p = v.inner(e)?;
                    v = v.sub(&e.scaled(p))?;
                }
            }
            let n = v.l2_norm();
            if n > 1e-6 {
                directions.push(v.scaled(1.0 / n));
            }
        }
        let targets = (0..d_e).map(|_| rng.sample(StandardNormal)).collect();
        Self::new(directions, targets, noise)
    }

    pub fn d_e(&self) -> usize {
        self.directions.len()
    }

    pub fn directions(&self) -> &[GridFunction] {
        &self.directions
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// The maximiser `Σ c_i e^i` (value 0).
    pub fn optimum(&self) -> Result<GridFunction> {
        let zero = GridFunction::zeros(*self.directions[0].spec());
        gridfn::linear_combine(&zero, &self.directions, &self.targets)
    }

    pub fn noiseless(&self, g: &GridFunction) -> Result<f64> {
        let mut s = 0.0;
        for (e, c) in self.directions.iter().zip(&self.targets) {
            let r = g.inner(e)? - c;
            s += r * r;
        }
        Ok(-s)
    }
}

impl Objective for EffectiveDimObjective {
    fn evaluate(&self, g: &GridFunction, rng: &mut dyn RngCore) -> Result<f64> {
        let f = self.noiseless(g)?;
        let z: f64 = rng.sample(StandardNormal);
        Ok(f + self.noise * z)
    }

    fn diagnostics(&self, g: &GridFunction) -> Result<BTreeMap<String, f64>> {
        Ok(BTreeMap::from([("f_true".to_string(), self.noiseless(g)?)]))
    }
}

/// Monte-Carlo estimate of an intersection probability.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntersectionEstimate {
    pub probability: f64,
    pub stderr: f64,
    pub trials: usize,
}

const TRIALS_PER_STREAM: usize = 4096;

/// Probability that a random `d`-dimensional affine subspace of `R^{d_e}`
/// passes within `beta` of the origin. The basis vectors are standard
/// normal and the offset is uniform in the unit ball; the distance is the
/// norm of the offset's residual after projecting onto the span.
///
/// Trials are split into fixed-size chunks, each with its own ChaCha
/// stream derived from `seed`, so the estimate does not depend on the
/// thread count.
pub fn lemma1_intersection_estimate(
    d: usize,
    d_e: usize,
    beta: f64,
    trials: usize,
    seed: u64,
) -> Result<IntersectionEstimate> {
    if d_e == 0 || d > d_e {
        return Err(Error::Input(format!("need 0 <= d <= d_e and d_e >= 1, got d={d}, d_e={d_e}")));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::Input(format!("beta must lie in (0, 1], got {beta}")));
    }
    if trials == 0 {
        return Err(Error::Input("trials must be positive".into()));
    }
    let chunks = trials.div_ceil(TRIALS_PER_STREAM);
    let hits: usize = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let n = TRIALS_PER_STREAM.min(trials - c * TRIALS_PER_STREAM);
            (0..n)
                .filter(|_| offset_distance(d, d_e, &mut rng) <= beta)
                .count()
        })
        .sum();
    let p = hits as f64 / trials as f64;
    Ok(IntersectionEstimate {
        probability: p,
        stderr: (p * (1.0 - p) / trials as f64).sqrt(),
        trials,
    })
}

fn offset_distance<R: Rng>(d: usize, d_e: usize, rng: &mut R) -> f64 {
    let mut b: Vec<f64> = (0..d_e).map(|_| rng.sample(StandardNormal)).collect();
    let norm = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let radius = rng.random::<f64>().powf(1.0 / d_e as f64);
    for x in &mut b {
        *x *= radius / norm;
    }
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d);
    for _ in 0..d {
        let mut u: Vec<f64> = (0..d_e).map(|_| rng.sample(StandardNormal)).collect();
        for q in &basis {
            let p: f64 = u.iter().zip(q).map(|(a, b)| a * b).sum();
            for (x, y) in u.iter_mut().zip(q) {
                *x -= p * y;
            }
        }
        let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in &mut u {
            *x /= n;
        }
        basis.push(u);
    }
    for q in &basis {
        let p: f64 = b.iter().zip(q).map(|(a, b)| a * b).sum();
        for (x, y) in b.iter_mut().zip(q) {
            *x -= p * y;
        }
    }
    b.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spec() -> GridSpec {
        GridSpec::unit_interval(100).unwrap()
    }

    #[test]
    fn matching_examples() {
        let q = GridFunction::constant(spec(), 1.0);
        let obj = MatchingObjective::new(q.clone(), 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(obj.evaluate(&q, &mut rng).unwrap(), 0.0);
        assert_eq!(obj.evaluate(&GridFunction::zeros(spec()), &mut rng).unwrap(), -1.0);
        assert_eq!(obj.diagnostics(&GridFunction::zeros(spec())).unwrap()["l2_gap"], 1.0);
        assert!(MatchingObjective::new(q, -0.1).is_err());
    }

    #[test]
    fn matching_optimum_is_unique() {
        let obj = MatchingObjective::from_prior(&ScalarKernelSpec::se(0.3).unwrap(), spec(), 4, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let v: Vec<f64> = obj
                .target()
                .values()
                .iter()
                .map(|x| x + rng.random_range(-0.1..0.1))
                .collect();
            let g = GridFunction::new(spec(), v).unwrap();
            assert!(obj.evaluate(&g, &mut rng).unwrap() < 0.0);
        }
    }

    #[test]
    fn effdim_examples() {
        let kernel = ScalarKernelSpec::se(0.3).unwrap();
        let obj = EffectiveDimObjective::from_prior(&kernel, spec(), 2, 8, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(obj.evaluate(&obj.optimum().unwrap(), &mut rng).unwrap().abs() < 1e-12);

        let fixed =
            EffectiveDimObjective::new(obj.directions().to_vec(), vec![1.0, -1.0], 0.0).unwrap();
        let v = fixed.evaluate(&fixed.directions()[0], &mut rng).unwrap();
        // (1 − 1)² + (0 + 1)² = 1
        assert_relative_eq!(v, -1.0, epsilon = 1e-10);

        let not_orthonormal = vec![GridFunction::constant(spec(), 2.0)];
        assert!(EffectiveDimObjective::new(not_orthonormal, vec![0.0], 0.0).is_err());
    }

    #[test]
    fn effdim_ignores_orthogonal_complement() {
        let kernel = ScalarKernelSpec::se(0.2).unwrap();
        let obj = EffectiveDimObjective::from_prior(&kernel, spec(), 3, 2, 0.0).unwrap();
        let sampler = GridSampler::new(&kernel, spec()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = sampler.sample(&mut rng);
        let base = obj.noiseless(&g).unwrap();
        for _ in 0..20 {
            let mut perp = sampler.sample(&mut rng);
            for e in obj.directions() {
                perp = perp.sub(&e.scaled(perp.inner(e).unwrap())).unwrap();
            }
            let moved = obj.noiseless(&g.add(&perp).unwrap()).unwrap();
            assert!((moved - base).abs() < 1e-8);
        }
    }

    #[test]
    fn intersection_examples() {
        let full = lemma1_intersection_estimate(3, 3, 0.1, 2000, 1).unwrap();
        assert_eq!(full.probability, 1.0);
        let point = lemma1_intersection_estimate(0, 1, 0.5, 100_000, 2).unwrap();
        assert!((point.probability - 0.5).abs() <= 3.0 * point.stderr);
        assert!(lemma1_intersection_estimate(2, 1, 0.5, 10, 0).is_err());
        assert!(lemma1_intersection_estimate(0, 1, 0.0, 10, 0).is_err());
        assert!(lemma1_intersection_estimate(0, 1, 0.5, 0, 0).is_err());
        let a = lemma1_intersection_estimate(1, 2, 0.3, 10_000, 5).unwrap();
        let b = lemma1_intersection_estimate(1, 2, 0.3, 10_000, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn intersection_monotone_in_beta_and_d() {
        let trials = 40_000;
        let mut prev = 0.0;
        for beta in [0.1, 0.2, 0.4, 0.8] {
            let e = lemma1_intersection_estimate(1, 3, beta, trials, 7).unwrap();
            assert!(e.probability + 3.0 * e.stderr >= prev);
            prev = e.probability;
        }
        let mut prev = 0.0;
        for d in 0..=3 {
            let e = lemma1_intersection_estimate(d, 3, 0.3, trials, 9).unwrap();
            assert!(e.probability + 3.0 * e.stderr >= prev);
            prev = e.probability;
        }
    }
}
