use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::gridfn::GridFunction;
use crate::optimizer::{RunRecord, Session, Suggestion};

const FORMAT: &str = "funcbo-asktell/1";

#[derive(Serialize, Deserialize)]
struct StateFile {
    format: String,
    config: BTreeMap<String, String>,
    session: serde_json::Value,
}

/// An optimiser session persisted between `suggest` and `tell` calls.
pub struct AskTellState {
    config: ExperimentConfig,
    session: Box<dyn Session>,
}

impl AskTellState {
    /// Fresh session for `config.algorithm` seeded with `opt.seed`.
    pub fn create(config: ExperimentConfig) -> Result<Self> {
        let session = config.algorithm.open(&config.opt)?;
        Ok(AskTellState { config, session })
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Protocol(format!("{} does not exist; start a session with `suggest`", path.display())));
        }
        let text = fs::read_to_string(path)?;
        let file: StateFile = serde_json::from_str(&text)
            .map_err(|e| Error::Protocol(format!("{}: not a state file: {e}", path.display())))?;
        if file.format != FORMAT {
            return Err(Error::Protocol(format!("unsupported state format `{}`", file.format)));
        }
        let config = ExperimentConfig::from_entries(file.config)?;
        let session = config.algorithm.restore(&config.opt, file.session)?;
        Ok(AskTellState { config, session })
    }

    /// Writes via a sibling temporary file so a failed write never leaves a
    /// truncated state behind.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = StateFile {
            format: FORMAT.into(),
            config: self.config.entries().clone(),
            session: self.session.snapshot()?,
        };
        let mut name = path.file_name().unwrap_or_default().to_os_string();
        name.push(".tmp");
        let tmp = path.with_file_name(name);
        fs::write(&tmp, serde_json::to_vec_pretty(&file)?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn session(&self) -> &dyn Session {
        self.session.as_ref()
    }

    pub fn trace(&self) -> &[RunRecord] {
        self.session.trace()
    }

    /// Next query; errors if a suggestion is already waiting for its value.
    pub fn suggest(&mut self) -> Result<Suggestion> {
        if self.session.pending().is_some() {
            return Err(Error::Protocol(
                "a suggestion is already pending; run `tell` with its value first".into(),
            ));
        }
        self.session.ask()
    }

    pub fn tell(&mut self, y: f64) -> Result<RunRecord> {
        if self.session.pending().is_none() {
            return Err(Error::Protocol("no pending suggestion; run `suggest` first".into()));
        }
        self.session.tell(y, BTreeMap::new()).cloned()
    }

    /// Best function so far, or the zero function before any observation.
    pub fn incumbent(&self) -> GridFunction {
        self.session
            .best()
            .map(|(g, _)| g)
            .unwrap_or_else(|| GridFunction::zeros(self.config.opt.grid))
    }
}

/// Loads the state at `state_path` (creating it from `config` when the file
/// does not exist yet), writes the next query to `out` and saves.
pub fn suggest(state_path: &Path, out: &Path, config: Option<&Path>) -> Result<Suggestion> {
    let mut state = if state_path.exists() {
        if config.is_some() {
            return Err(Error::Protocol(format!(
                "{} already exists; --config only applies to a new state",
                state_path.display()
            )));
        }
        AskTellState::load(state_path)?
    } else {
        let Some(config) = config else {
            return Err(Error::Protocol(format!(
                "{} does not exist; pass --config to start a new session",
                state_path.display()
            )));
        };
        AskTellState::create(ExperimentConfig::load(config)?)?
    };
    let suggestion = state.suggest()?;
    suggestion.point.write_csv(BufWriter::new(File::create(out)?))?;
    state.save(state_path)?;
    Ok(suggestion)
}

pub fn tell(state_path: &Path, y: f64) -> Result<RunRecord> {
    let mut state = AskTellState::load(state_path)?;
    let record = state.tell(y)?;
    state.save(state_path)?;
    Ok(record)
}

/// Writes the incumbent function (zero before any observation).
pub fn export_function(state_path: &Path, out: &Path) -> Result<GridFunction> {
    let state = AskTellState::load(state_path)?;
    let g = state.incumbent();
    g.write_csv(BufWriter::new(File::create(out)?))?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::Objective;

    fn setup(extra: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        fs::write(
            &cfg,
            format!("grid.points_per_axis = 25\nopt.S = 2\nopt.T = 3\nopt.n_init = 2\n{extra}"),
        )
        .unwrap();
        (dir, cfg)
    }

    #[test]
    fn first_suggestion_is_first_initial_point() {
        let (dir, cfg) = setup("");
        let state = dir.path().join("state.json");
        let out = dir.path().join("g.csv");
        let s = suggest(&state, &out, Some(&cfg)).unwrap();
        assert_eq!(s.t, -1);
        assert_eq!(s.s, 0);
        let mut reference = crate::optimizer::Algorithm::S3bfo
            .open(&ExperimentConfig::load(&cfg).unwrap().opt)
            .unwrap();
        assert_eq!(reference.ask().unwrap(), s);
        assert_eq!(GridFunction::read_csv(File::open(&out).unwrap()).unwrap(), s.point);
    }

    #[test]
    fn protocol_guards() {
        let (dir, cfg) = setup("");
        let state = dir.path().join("state.json");
        let out = dir.path().join("g.csv");
        assert!(matches!(suggest(&state, &out, None), Err(Error::Protocol(_))));
        suggest(&state, &out, Some(&cfg)).unwrap();
        assert!(matches!(suggest(&state, &out, None), Err(Error::Protocol(_))));
        assert!(matches!(suggest(&state, &out, Some(&cfg)), Err(Error::Protocol(_))));
        assert!(matches!(tell(&state, f64::INFINITY), Err(Error::Input(_))));
        let r = tell(&state, -2.0).unwrap();
        assert_eq!(r.eval_index, 0);
        assert_eq!(r.best_y, -2.0);
        assert!(matches!(tell(&state, -1.0), Err(Error::Protocol(_))));
        suggest(&state, &out, None).unwrap();
        let r = tell(&state, -1.0).unwrap();
        assert_eq!(r.best_y, -1.0);
        assert_eq!(AskTellState::load(&state).unwrap().trace().len(), 2);
    }

    #[test]
    fn export_before_and_after() {
        let (dir, cfg) = setup("opt.algorithm = random_search");
        let state_path = dir.path().join("state.json");
        let out = dir.path().join("g.csv");
        let best = dir.path().join("best.csv");
        let state = AskTellState::create(ExperimentConfig::load(&cfg).unwrap()).unwrap();
        state.save(&state_path).unwrap();
        let zero = export_function(&state_path, &best).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));
        let mut ys = Vec::new();
        for i in 0..4 {
            suggest(&state_path, &out, None).unwrap();
            let y = [-3.0, -1.0, -1.0, -2.0][i];
            tell(&state_path, y).unwrap();
            ys.push(GridFunction::read_csv(File::open(&out).unwrap()).unwrap());
        }
        let g = export_function(&state_path, &best).unwrap();
        // Earliest of the tied maxima.
        assert_eq!(g, ys[1]);
        assert_eq!(GridFunction::read_csv(File::open(&best).unwrap()).unwrap(), g);
    }

    #[test]
    fn file_driven_run_matches_in_process() {
        for alg in ["s3bfo", "linebo_bernstein", "random_search"] {
            let (dir, cfg_path) = setup(&format!("opt.algorithm = {alg}\nobjective.noise = 0.05"));
            let cfg = ExperimentConfig::load(&cfg_path).unwrap();
            let obj = cfg.objective.matching(cfg.opt.grid, 0).unwrap();
            let reference = cfg.algorithm.run(&obj, &cfg.opt).unwrap().trace;
            let state = dir.path().join("state.json");
            let out = dir.path().join("g.csv");
            let mut rng = cfg.opt.noise_rng();
            let mut first = true;
            loop {
                let loaded = if first { None } else { Some(AskTellState::load(&state).unwrap()) };
                if loaded.as_ref().is_some_and(|s| s.session().is_finished()) {
                    break;
                }
                suggest(&state, &out, first.then_some(cfg_path.as_path())).unwrap();
                first = false;
                let g = GridFunction::read_csv(File::open(&out).unwrap()).unwrap();
                tell(&state, obj.evaluate(&g, &mut rng).unwrap()).unwrap();
            }
            let trace = AskTellState::load(&state).unwrap().trace().to_vec();
            assert_eq!(trace.len(), reference.len());
            for (a, b) in trace.iter().zip(&reference) {
                assert_eq!((a.eval_index, a.s, a.t, &a.lambda, a.y, a.best_y), (b.eval_index, b.s, b.t, &b.lambda, b.y, b.best_y));
            }
        }
    }
}
