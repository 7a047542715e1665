use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::acquisition::AcqSearchConfig;
use crate::error::{Error, Result};
use crate::gp;
use crate::gridfn::GridSpec;
use crate::kernels::{FunctionalKernelSpec, ScalarKernelSpec, ScalarKind};
use crate::objectives::{EffectiveDimObjective, MatchingObjective, Objective};
use crate::optimizer::{Algorithm, LengthscaleMode, OptConfig, Termination};

/// Every key accepted in a config file.
pub const KNOWN_KEYS: &[&str] = &[
    "grid.dim",
    "grid.points_per_axis",
    "kappa.kind",
    "kappa.lengthscale",
    "kappa.variance",
    "K.kind",
    "K.metric",
    "K.lengthscale",
    "K.variance",
    "noise.sigma",
    "mle.grid_min",
    "mle.grid_max",
    "mle.grid_points",
    "acq.delta",
    "acq.restarts",
    "acq.local_steps",
    "acq.lambda_box",
    "acq.scan_points",
    "opt.l_max",
    "opt.algorithm",
    "opt.d",
    "opt.S",
    "opt.T",
    "opt.n_init",
    "opt.termination",
    "opt.epsilon",
    "opt.seed",
    "objective.kind",
    "objective.target_kernel",
    "objective.target_lengthscale",
    "objective.target_seed",
    "objective.noise",
    "objective.d_e",
    "bench.repeats",
    "bench.base_seed",
    "bench.algorithms",
    "bench.output",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObjectiveKind {
    Match,
    EffDim,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveConfig {
    pub kind: ObjectiveKind,
    pub target_kernel: ScalarKernelSpec,
    pub target_seed: u64,
    pub noise: f64,
    pub d_e: usize,
}

impl ObjectiveConfig {
    /// Objective for repeat `repeat`; each repeat gets its own target,
    /// seeded by `target_seed + repeat`.
    pub fn build(&self, grid: GridSpec, repeat: u64) -> Result<Box<dyn Objective>> {
        let seed = self.target_seed.wrapping_add(repeat);
        Ok(match self.kind {
            ObjectiveKind::Match => Box::new(self.matching(grid, repeat)?),
            ObjectiveKind::EffDim => Box::new(EffectiveDimObjective::from_prior(
                &self.target_kernel,
                grid,
                self.d_e,
                seed,
                self.noise,
            )?),
        })
    }

    pub fn matching(&self, grid: GridSpec, repeat: u64) -> Result<MatchingObjective> {
        MatchingObjective::from_prior(
            &self.target_kernel,
            grid,
            self.target_seed.wrapping_add(repeat),
            self.noise,
        )
    }
}

/// Parsed config file.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub opt: OptConfig,
    pub algorithm: Algorithm,
    pub objective: ObjectiveConfig,
    pub repeats: usize,
    pub base_seed: u64,
    pub algorithms: Vec<Algorithm>,
    pub output: String,
    /// The key/value pairs as given, after validation.
    entries: BTreeMap<String, String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::from_entries(BTreeMap::new()).expect("defaults are valid")
    }
}

struct Reader {
    entries: BTreeMap<String, String>,
}

impl Reader {
    fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| Error::config(key, format!("cannot parse `{v}`: {e}"))),
        }
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }
}

fn scalar_kind(key: &str, v: &str) -> Result<ScalarKind> {
    v.parse().map_err(|e: Error| Error::config(key, e.to_string()))
}

fn at(key: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| Error::config(key, e.to_string())
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        text.parse()
    }

    /// Builds a config from key/value pairs; missing keys take defaults.
    pub fn from_entries(entries: BTreeMap<String, String>) -> Result<Self> {
        for key in entries.keys() {
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::config(key.clone(), "unknown key"));
            }
        }
        let r = Reader { entries };
        let protocol = OptConfig::protocol();

        let grid = GridSpec::new(r.get("grid.dim", 1usize)?, r.get("grid.points_per_axis", 100usize)?)
            .map_err(at("grid.points_per_axis"))?;

        let kappa_kind = scalar_kind("kappa.kind", r.raw("kappa.kind").unwrap_or("se"))?;
        let kappa = ScalarKernelSpec::new(
            kappa_kind,
            r.get("kappa.lengthscale", 0.3)?,
            r.get("kappa.variance", 1.0)?,
        )
        .map_err(at("kappa.lengthscale"))?;

        let k_kind = scalar_kind("K.kind", r.raw("K.kind").unwrap_or("se"))?;
        let (k_len, lengthscale) = match r.raw("K.lengthscale").unwrap_or("mle") {
            "mle" => {
                let candidates = gp::log_grid(
                    r.get("mle.grid_min", 1e-2)?,
                    r.get("mle.grid_max", 10.0)?,
                    r.get("mle.grid_points", 17usize)?,
                )
                .map_err(at("mle.grid_points"))?;
                (1.0, LengthscaleMode::MaxLikelihood { candidates })
            }
            _ => (r.get("K.lengthscale", 1.0)?, LengthscaleMode::Fixed),
        };
        let k_base = ScalarKernelSpec::new(k_kind, k_len, r.get("K.variance", 1.0)?).map_err(at("K.kind"))?;
        let model_kernel = match r.raw("K.metric").unwrap_or("l2") {
            "l2" => FunctionalKernelSpec::l2(k_base),
            "rkhs" => FunctionalKernelSpec::rkhs(k_base, &kappa, &grid),
            other => return Err(Error::config("K.metric", format!("expected l2 or rkhs, got `{other}`"))),
        }
        .map_err(at("K.kind"))?;

        let sigma: f64 = r.get("noise.sigma", 0.01)?;
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::config("noise.sigma", "must be positive"));
        }

        let search = AcqSearchConfig {
            restarts: r.get("acq.restarts", protocol.search.restarts)?,
            local_steps: r.get("acq.local_steps", protocol.search.local_steps)?,
            lambda_box: r.get("acq.lambda_box", protocol.search.lambda_box)?,
            l_max: r.get("opt.l_max", protocol.search.l_max)?,
            scan_points: r.get("acq.scan_points", protocol.search.scan_points)?,
        };

        let termination = match r.raw("opt.termination").unwrap_or("budget") {
            "budget" => Termination::FixedBudget,
            "regret" => Termination::SimpleRegret {
                epsilon: r.get("opt.epsilon", 1e-2)?,
            },
            other => {
                return Err(Error::config("opt.termination", format!("expected budget or regret, got `{other}`")))
            }
        };

        let opt = OptConfig {
            grid,
            kappa,
            model_kernel,
            lengthscale,
            noise_var: sigma * sigma,
            delta: r.get("acq.delta", protocol.delta)?,
            search,
            d: r.get("opt.d", protocol.d)?,
            outer_iters: r.get("opt.S", protocol.outer_iters)?,
            inner_iters: r.get("opt.T", protocol.inner_iters)?,
            n_init: r.get("opt.n_init", protocol.n_init)?,
            termination,
            seed: r.get("opt.seed", 0u64)?,
        };
        for (key, v) in [
            ("opt.d", opt.d),
            ("opt.S", opt.outer_iters),
            ("opt.T", opt.inner_iters),
            ("opt.n_init", opt.n_init),
        ] {
            if v == 0 {
                return Err(Error::config(key, "must be at least 1"));
            }
        }
        if let Termination::SimpleRegret { epsilon } = opt.termination {
            if !(epsilon > 0.0) {
                return Err(Error::config("opt.epsilon", "must be positive"));
            }
        }
        crate::acquisition::UcbSchedule::new(opt.delta, opt.d).map_err(at("acq.delta"))?;
        let sc = &opt.search;
        for (key, ok) in [
            ("acq.restarts", sc.restarts > 0),
            ("acq.local_steps", sc.local_steps > 0),
            ("acq.lambda_box", sc.lambda_box > 0.0 && sc.lambda_box.is_finite()),
            ("opt.l_max", sc.l_max > 0.0),
            ("acq.scan_points", sc.scan_points >= 2),
        ] {
            if !ok {
                return Err(Error::config(key, "out of range"));
            }
        }
        opt.validate().map_err(at("opt"))?;

        let algorithm: Algorithm = r
            .raw("opt.algorithm")
            .unwrap_or("s3bfo")
            .parse()
            .map_err(at("opt.algorithm"))?;

        let kind = match r.raw("objective.kind").unwrap_or("match") {
            "match" => ObjectiveKind::Match,
            "effdim" => ObjectiveKind::EffDim,
            other => return Err(Error::config("objective.kind", format!("expected match or effdim, got `{other}`"))),
        };
        let target_kind = scalar_kind(
            "objective.target_kernel",
            r.raw("objective.target_kernel").unwrap_or(r.raw("kappa.kind").unwrap_or("se")),
        )?;
        let target_kernel = ScalarKernelSpec::new(
            target_kind,
            r.get("objective.target_lengthscale", kappa.lengthscale())?,
            1.0,
        )
        .map_err(at("objective.target_lengthscale"))?;
        let noise: f64 = r.get("objective.noise", 0.01)?;
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(Error::config("objective.noise", "must be nonnegative"));
        }
        let d_e: usize = r.get("objective.d_e", 2)?;
        if d_e == 0 {
            return Err(Error::config("objective.d_e", "must be positive"));
        }
        let objective = ObjectiveConfig {
            kind,
            target_kernel,
            target_seed: r.get("objective.target_seed", 0u64)?,
            noise,
            d_e,
        };

        let repeats: usize = r.get("bench.repeats", 5)?;
        if repeats == 0 {
            return Err(Error::config("bench.repeats", "must be at least 1"));
        }
        let algorithms = match r.raw("bench.algorithms") {
            None => vec![algorithm],
            Some(list) => list
                .split(',')
                .map(|a| a.parse().map_err(at("bench.algorithms")))
                .collect::<Result<Vec<Algorithm>>>()?,
        };
        if algorithms.is_empty() {
            return Err(Error::config("bench.algorithms", "must name at least one algorithm"));
        }
        Ok(ExperimentConfig {
            base_seed: r.get("bench.base_seed", opt.seed)?,
            opt,
            algorithm,
            objective,
            repeats,
            algorithms,
            output: r.raw("bench.output").unwrap_or("bench_out").to_string(),
            entries: r.entries,
        })
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    /// The entries as config-file text, one `key = value` per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Returns a copy with `key` set to `value`, revalidated.
    pub fn with(&self, key: &str, value: impl ToString) -> Result<Self> {
        let mut entries = self.entries.clone();
        entries.insert(key.to_string(), value.to_string());
        Self::from_entries(entries)
    }
}

impl FromStr for ExperimentConfig {
    type Err = Error;

    /// `key = value` lines; `#` starts a comment; blank lines are ignored.
    fn from_str(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::config(line, format!("line {}: expected `key = value`", n + 1)));
            };
            let (k, v) = (k.trim(), v.trim());
            if entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::config(k, format!("line {}: duplicate key", n + 1)));
            }
        }
        Self::from_entries(entries)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_protocol() {
        let c = ExperimentConfig::default();
        assert_eq!(c.opt, OptConfig::protocol());
        assert_eq!(c.algorithm, Algorithm::S3bfo);
        assert_eq!(c.repeats, 5);
        assert_eq!(c.objective.target_kernel, ScalarKernelSpec::se(0.3).unwrap());
        assert_eq!(c.opt.budget(), 140);
    }

    #[test]
    fn parses_keys_and_comments() {
        let text = "# protocol\nopt.S = 2 # outer\n\nopt.T=3\nK.lengthscale = 0.5\nnoise.sigma = 0.1\n\
                    opt.termination = regret\nopt.epsilon = 0.2\nbench.algorithms = s3bfo, random_search\n\
                    K.metric = rkhs\nkappa.kind = matern32\n";
        let c: ExperimentConfig = text.parse().unwrap();
        assert_eq!(c.opt.outer_iters, 2);
        assert_eq!(c.opt.inner_iters, 3);
        assert_eq!(c.opt.lengthscale, LengthscaleMode::Fixed);
        assert_eq!(c.opt.model_kernel.base().lengthscale(), 0.5);
        assert!((c.opt.noise_var - 0.01).abs() < 1e-15);
        assert_eq!(c.opt.termination, Termination::SimpleRegret { epsilon: 0.2 });
        assert_eq!(c.algorithms, vec![Algorithm::S3bfo, Algorithm::RandomSearch]);
        assert_eq!(c.objective.target_kernel.kind(), ScalarKind::Matern32);
        let again: ExperimentConfig = c.to_text().parse().unwrap();
        assert_eq!(again, c);
    }

    fn config_key(text: &str) -> String {
        match text.parse::<ExperimentConfig>() {
            Err(Error::Config { key, .. }) => key,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn errors_name_the_key() {
        assert_eq!(config_key("opt.bogus = 1"), "opt.bogus");
        assert_eq!(config_key("opt.d = x"), "opt.d");
        assert_eq!(config_key("opt.d = 0"), "opt.d");
        assert_eq!(config_key("acq.delta = 1.5"), "acq.delta");
        assert_eq!(config_key("opt.algorithm = rembo"), "opt.algorithm");
        assert_eq!(config_key("K.metric = sobolev"), "K.metric");
        assert_eq!(config_key("K.kind = linear"), "K.kind");
        assert_eq!(config_key("noise.sigma = 0"), "noise.sigma");
        assert_eq!(config_key("bench.repeats = 0"), "bench.repeats");
        assert_eq!(config_key("opt.S = 1\nopt.S = 2"), "opt.S");
        assert_eq!(config_key("just words"), "just words");
        assert_eq!(config_key("opt.termination = regret\nopt.epsilon = -1"), "opt.epsilon");
    }
}
