use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn funcbo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_funcbo")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn write_cfg(dir: &Path, body: &str) -> String {
    let path = dir.join("run.cfg");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const SMALL: &str = "grid.points_per_axis = 20\nopt.S = 2\nopt.T = 2\nopt.n_init = 2\nbench.repeats = 2\n";

#[test]
fn bench_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), &format!("{SMALL}bench.algorithms = s3bfo,random_search\n"));
    let out = dir.path().join("out");
    let o = funcbo(&["bench", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 2 * 2 * 8);
    assert!(trace.starts_with("algorithm,repeat,eval_index,s,t,y,best_y,"));
    assert!(out.join("summary.csv").exists());
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("s3bfo: evals=8"));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "opt.nonsense = 3\n");
    let o = funcbo(&["bench", "--config", &cfg]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("opt.nonsense"));
}

#[test]
fn ask_tell_cycle_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), SMALL);
    let state = dir.path().join("state.json");
    let state = state.to_str().unwrap();
    let g = dir.path().join("g.csv");
    let g = g.to_str().unwrap();

    assert_eq!(code(&funcbo(&["tell", "--state", state, "--y", "1"])), 3);
    let o = funcbo(&["suggest", "--state", state, "--out", g, "--config", &cfg]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8(o.stdout).unwrap().starts_with("s=0 t=-1"));
    assert_eq!(code(&funcbo(&["suggest", "--state", state, "--out", g])), 3);
    let o = funcbo(&["tell", "--state", state, "--y", "-0.75"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8(o.stdout).unwrap().contains("best_y=-0.75"));
    assert_eq!(code(&funcbo(&["tell", "--state", state, "--y", "-0.5"])), 3);
    assert_eq!(code(&funcbo(&["suggest", "--state", state, "--out", g])), 0);
    assert_eq!(code(&funcbo(&["tell", "--state", state, "--y", "NaN"])), 1);
    assert_eq!(code(&funcbo(&["tell", "--state", state, "--y", "-0.5"])), 0);

    let best = dir.path().join("best.csv");
    let o = funcbo(&["export", "--state", state, "--out", best.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let text = fs::read_to_string(&best).unwrap();
    assert_eq!(text.lines().next().unwrap(), "x0,value");
    assert_eq!(text.lines().count(), 21);
}

#[test]
fn verify_lemma1_prints_estimate() {
    let o = funcbo(&["verify-lemma1", "--d", "1", "--de", "1", "--beta", "0.3", "--trials", "1000"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8(o.stdout).unwrap().starts_with("probability=1 "));
    let o = funcbo(&["verify-lemma1", "--d", "3", "--de", "1", "--beta", "0.3", "--trials", "10"]);
    assert_eq!(code(&o), 1);
}
