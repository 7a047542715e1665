use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::{ExperimentConfig, ObjectiveKind};
use crate::error::{Error, Result};
use crate::gridfn::{parse_f64, GridFunction};
use crate::optimizer::{Algorithm, OptConfig, RunRecord, RunResult};

/// One trace line: a record tagged with its algorithm and repeat.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub algorithm: Algorithm,
    pub repeat: usize,
    pub record: RunRecord,
}

/// Per-evaluation order statistics across repeats.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub algorithm: Algorithm,
    pub eval_index: usize,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug)]
pub struct BenchOutcome {
    pub trace: Vec<TraceRow>,
    pub summary: Vec<SummaryRow>,
    /// `(algorithm, repeat, result)` in output order.
    pub runs: Vec<(Algorithm, usize, RunResult)>,
    pub files: Vec<PathBuf>,
}

const FIXED_COLUMNS: [&str; 7] = ["algorithm", "repeat", "eval_index", "s", "t", "y", "best_y"];

/// Runs every (algorithm, repeat) cell and writes `trace.csv`,
/// `summary.csv`, `best_<algorithm>_r<repeat>.csv` and, for matching
/// objectives, `target_r<repeat>.csv` into `out_dir`.
pub fn run_bench(cfg: &ExperimentConfig, out_dir: &Path) -> Result<BenchOutcome> {
    let cells: Vec<(Algorithm, usize)> = cfg
        .algorithms
        .iter()
        .flat_map(|&a| (0..cfg.repeats).map(move |r| (a, r)))
        .collect();
    let runs = cells
        .par_iter()
        .map(|&(alg, repeat)| {
            let opt = OptConfig {
                seed: cfg.base_seed.wrapping_add(repeat as u64),
                ..cfg.opt.clone()
            };
            let objective = cfg.objective.build(opt.grid, repeat as u64)?;
            Ok((alg, repeat, alg.run(objective.as_ref(), &opt)?))
        })
        .collect::<Result<Vec<_>>>()?;

    let trace: Vec<TraceRow> = runs
        .iter()
        .flat_map(|(alg, repeat, result)| {
            result.trace.iter().map(move |record| TraceRow {
                algorithm: *alg,
                repeat: *repeat,
                record: record.clone(),
            })
        })
        .collect();
    let metric = match cfg.objective.kind {
        ObjectiveKind::Match => Some("l2_gap"),
        ObjectiveKind::EffDim => None,
    };
    let summary = summarise(&trace, metric);

    fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();
    let path = out_dir.join("trace.csv");
    write_trace_csv(BufWriter::new(File::create(&path)?), &trace)?;
    files.push(path);
    let path = out_dir.join("summary.csv");
    write_summary_csv(BufWriter::new(File::create(&path)?), &summary)?;
    files.push(path);
    for (alg, repeat, result) in &runs {
        let best = match &result.best {
            Some((g, _)) => g.clone(),
            None => GridFunction::zeros(cfg.opt.grid),
        };
        let path = out_dir.join(format!("best_{}_r{repeat}.csv", alg.name()));
        best.write_csv(BufWriter::new(File::create(&path)?))?;
        files.push(path);
    }
    if cfg.objective.kind == ObjectiveKind::Match {
        for repeat in 0..cfg.repeats {
            let obj = cfg.objective.matching(cfg.opt.grid, repeat as u64)?;
            let path = out_dir.join(format!("target_r{repeat}.csv"));
            obj.target().write_csv(BufWriter::new(File::create(&path)?))?;
            files.push(path);
        }
    }
    Ok(BenchOutcome {
        trace,
        summary,
        runs,
        files,
    })
}

/// Summary of the best-so-far metric: the running minimum of `aux[metric]`
/// when given, otherwise `best_y`. Records lacking the metric carry the
/// previous value forward.
pub fn summarise(trace: &[TraceRow], metric: Option<&str>) -> Vec<SummaryRow> {
    let mut curves: BTreeMap<(Algorithm, usize), Vec<f64>> = BTreeMap::new();
    for row in trace {
        let curve = curves.entry((row.algorithm, row.repeat)).or_default();
        let prev = curve.last().copied();
        let v = match metric {
            None => row.record.best_y,
            Some(key) => match (row.record.aux.get(key), prev) {
                (Some(&v), Some(p)) => v.min(p),
                (Some(&v), None) => v,
                (None, Some(p)) => p,
                (None, None) => f64::NAN,
            },
        };
        curve.push(v);
    }
    let mut by_alg: BTreeMap<Algorithm, Vec<&Vec<f64>>> = BTreeMap::new();
    for ((alg, _), curve) in &curves {
        by_alg.entry(*alg).or_default().push(curve);
    }
    let mut out = Vec::new();
    for (alg, curves) in by_alg {
        let len = curves.iter().map(|c| c.len()).max().unwrap_or(0);
        for i in 0..len {
            let mut vals: Vec<f64> = curves.iter().filter_map(|c| c.get(i).copied()).collect();
            vals.sort_by(f64::total_cmp);
            out.push(SummaryRow {
                algorithm: alg,
                eval_index: i,
                median: median_sorted(&vals),
                min: vals[0],
                max: vals[vals.len() - 1],
            });
        }
    }
    out
}

fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn aux_columns(trace: &[TraceRow]) -> Vec<String> {
    trace
        .iter()
        .flat_map(|r| r.record.aux.keys().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Columns `algorithm,repeat,eval_index,s,t,y,best_y`, then one column per
/// auxiliary key (sorted; empty where absent) and `lambda` with coordinates
/// joined by `;`.
pub fn write_trace_csv<W: Write>(writer: W, trace: &[TraceRow]) -> Result<()> {
    let aux = aux_columns(trace);
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(aux.iter().cloned());
    header.push("lambda".into());
    w.write_record(&header)?;
    for row in trace {
        let r = &row.record;
        let mut fields = vec![
            row.algorithm.name().to_string(),
            row.repeat.to_string(),
            r.eval_index.to_string(),
            r.s.to_string(),
            r.t.to_string(),
            r.y.to_string(),
            r.best_y.to_string(),
        ];
        fields.extend(aux.iter().map(|k| r.aux.get(k).map_or(String::new(), f64::to_string)));
        fields.push(r.lambda.iter().map(f64::to_string).collect::<Vec<_>>().join(";"));
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_usize(s: &str) -> Result<usize> {
    s.trim().parse().map_err(|_| Error::Parse(format!("invalid integer `{s}`")))
}

pub fn read_trace_csv<R: Read>(reader: R) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers()?.clone();
    let n = header.len();
    if n < FIXED_COLUMNS.len() + 1
        || header.iter().take(7).ne(FIXED_COLUMNS.iter().copied())
        || &header[n - 1] != "lambda"
    {
        return Err(Error::Parse("not a trace file: unexpected header".into()));
    }
    let aux: Vec<String> = header.iter().skip(7).take(n - 8).map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let lambda = if rec[n - 1].is_empty() {
            Vec::new()
        } else {
            rec[n - 1].split(';').map(parse_f64).collect::<Result<_>>()?
        };
        let mut aux_map = BTreeMap::new();
        for (k, v) in aux.iter().zip(rec.iter().skip(7)) {
            if !v.is_empty() {
                aux_map.insert(k.clone(), parse_f64(v)?);
            }
        }
        rows.push(TraceRow {
            algorithm: rec[0].parse()?,
            repeat: parse_usize(&rec[1])?,
            record: RunRecord {
                eval_index: parse_usize(&rec[2])?,
                s: parse_usize(&rec[3])?,
                t: rec[4].trim().parse().map_err(|_| Error::Parse(format!("invalid t `{}`", &rec[4])))?,
                y: parse_f64(&rec[5])?,
                best_y: parse_f64(&rec[6])?,
                aux: aux_map,
                lambda,
            },
        });
    }
    Ok(rows)
}

pub fn write_summary_csv<W: Write>(writer: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["algorithm", "eval_index", "median", "min", "max"])?;
    for r in rows {
        w.write_record([
            r.algorithm.name().to_string(),
            r.eval_index.to_string(),
            r.median.to_string(),
            r.min.to_string(),
            r.max.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary_csv<R: Read>(reader: R) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_reader(reader);
    if r.headers()?.iter().ne(["algorithm", "eval_index", "median", "min", "max"]) {
        return Err(Error::Parse("not a summary file: unexpected header".into()));
    }
    r.records()
        .map(|rec| {
            let rec = rec?;
            Ok(SummaryRow {
                algorithm: rec[0].parse()?,
                eval_index: parse_usize(&rec[1])?,
                median: parse_f64(&rec[2])?,
                min: parse_f64(&rec[3])?,
                max: parse_f64(&rec[4])?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(extra: &str) -> ExperimentConfig {
        format!(
            "grid.points_per_axis = 30\nopt.S = 2\nopt.T = 3\nopt.n_init = 2\nbench.repeats = 2\n{extra}"
        )
        .parse()
        .unwrap()
    }

    #[test]
    fn random_search_budget_ten_gives_ten_rows() {
        let cfg = tiny("bench.algorithms = random_search")
            .with("bench.repeats", 1)
            .unwrap()
            .with("opt.S", 1)
            .unwrap()
            .with("opt.T", 5)
            .unwrap()
            .with("opt.n_init", 5)
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = run_bench(&cfg, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
        assert_eq!(text.lines().count(), 11);
        assert_eq!(out.trace.len(), 10);
    }

    #[test]
    fn summary_bounds_and_length() {
        let cfg = tiny("bench.algorithms = s3bfo,linebo_bernstein,random_search,fixed_subspace");
        let dir = tempfile::tempdir().unwrap();
        let out = run_bench(&cfg, dir.path()).unwrap();
        for alg in &cfg.algorithms {
            let rows: Vec<_> = out.summary.iter().filter(|r| r.algorithm == *alg).collect();
            let budget = if *alg == Algorithm::FixedSubspace { 5 } else { 10 };
            assert_eq!(rows.len(), budget, "{alg}");
            for w in rows.windows(2) {
                assert!(w[1].median <= w[0].median);
            }
        }
        for r in &out.summary {
            assert!(r.min <= r.median && r.median <= r.max);
        }
        for name in ["trace.csv", "summary.csv", "best_s3bfo_r1.csv", "target_r0.csv"] {
            assert!(dir.path().join(name).exists(), "{name}");
        }
    }

    #[test]
    fn reruns_match_byte_for_byte() {
        let cfg = tiny("bench.algorithms = s3bfo,random_search\nobjective.kind = effdim");
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let out_a = run_bench(&cfg, a.path()).unwrap();
        let out_b = run_bench(&cfg, b.path()).unwrap();
        assert_eq!(out_a.files.len(), out_b.files.len());
        for f in &out_a.files {
            let name = f.file_name().unwrap();
            assert_eq!(fs::read(f).unwrap(), fs::read(b.path().join(name)).unwrap());
        }
    }

    #[test]
    fn csv_round_trips() {
        let cfg = tiny("bench.algorithms = s3bfo,linebo_bernstein");
        let dir = tempfile::tempdir().unwrap();
        let out = run_bench(&cfg, dir.path()).unwrap();
        let trace = read_trace_csv(File::open(dir.path().join("trace.csv")).unwrap()).unwrap();
        assert_eq!(trace, out.trace);
        let summary = read_summary_csv(File::open(dir.path().join("summary.csv")).unwrap()).unwrap();
        assert_eq!(summary, out.summary);
        let (_, _, first) = &out.runs[0];
        let best = GridFunction::read_csv(File::open(dir.path().join("best_s3bfo_r0.csv")).unwrap()).unwrap();
        assert_eq!(best, first.best.as_ref().unwrap().0);
    }

    #[test]
    fn exported_best_reproduces_final_gap() {
        let cfg = tiny("bench.algorithms = s3bfo");
        let dir = tempfile::tempdir().unwrap();
        let out = run_bench(&cfg, dir.path()).unwrap();
        for repeat in 0..2 {
            let best = GridFunction::read_csv(
                File::open(dir.path().join(format!("best_s3bfo_r{repeat}.csv"))).unwrap(),
            )
            .unwrap();
            let target =
                GridFunction::read_csv(File::open(dir.path().join(format!("target_r{repeat}.csv"))).unwrap())
                    .unwrap();
            let gap = crate::gridfn::l2_dist_sq(&best, &target).unwrap().sqrt();
            let last = &out.runs[repeat].2.trace.last().unwrap().aux;
            assert!((gap - last["incumbent_l2_gap"]).abs() < 1e-9);
        }
    }

    #[test]
    fn unwritable_output_is_io_error() {
        let cfg = tiny("bench.algorithms = random_search").with("bench.repeats", 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        assert!(matches!(run_bench(&cfg, &blocker.join("sub")), Err(Error::Io(_))));
    }

    #[test]
    fn summary_statistics_by_hand() {
        let mk = |repeat, i, gap: f64| TraceRow {
            algorithm: Algorithm::RandomSearch,
            repeat,
            record: RunRecord {
                eval_index: i,
                s: 0,
                t: -1,
                lambda: vec![],
                y: -gap,
                best_y: -gap,
                aux: BTreeMap::from([("l2_gap".to_string(), gap)]),
            },
        };
        let trace = vec![mk(0, 0, 3.0), mk(0, 1, 4.0), mk(1, 0, 1.0), mk(1, 1, 0.5)];
        let s = summarise(&trace, Some("l2_gap"));
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].median, s[0].min, s[0].max), (2.0, 1.0, 3.0));
        assert_eq!((s[1].median, s[1].min, s[1].max), (1.75, 0.5, 3.0));
    }
}
