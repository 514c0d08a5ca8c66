//! Run manifests and results summarization.
//!
//! Every CLI run writes a `*.run.json` manifest (tool version, arguments,
//! seeds, input fingerprints, output files) so any result can be
//! reproduced from its manifest alone. `summarize_results` walks a
//! results tree and condenses recognized artifacts into plot-ready CSVs:
//! run inventory, search convergence curves, sweep trajectories, and
//! training losses.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metaheuristics::convergence_iteration;
use crate::util::fmt_f64;

pub const RUN_MANIFEST_VERSION: u32 = 1;
pub const RUN_MANIFEST_SUFFIX: &str = ".run.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub tool_version: String,
    pub subcommand: String,
    /// Flag -> rendered value, seeds included.
    pub args: BTreeMap<String, String>,
    /// Input label -> fingerprint or path.
    pub inputs: BTreeMap<String, String>,
    /// Files written by the run, relative to the manifest's directory.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(subcommand: &str) -> RunManifest {
        RunManifest {
            version: RUN_MANIFEST_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: subcommand.to_string(),
            args: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn arg(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.args.insert(key.to_string(), value.to_string());
        self
    }

    pub fn input(&mut self, label: &str, value: impl ToString) -> &mut Self {
        self.inputs.insert(label.to_string(), value.to_string());
        self
    }

    pub fn fingerprint(&mut self, label: &str, fp: u64) -> &mut Self {
        self.input(label, format!("{fp:016x}"))
    }

    pub fn output(&mut self, file: impl ToString) -> &mut Self {
        self.outputs.push(file.to_string());
        self
    }

    /// Write `<dir>/<subcommand>.run.json`, returning the path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("{}{RUN_MANIFEST_SUFFIX}", self.subcommand));
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::validation(format!("manifest serialization failed: {e}")))?;
        std::fs::write(&path, json + "\n")?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<RunManifest> {
        let text = std::fs::read_to_string(path)?;
        let m: RunManifest = serde_json::from_str(&text)
            .map_err(|e| Error::validation(format!("{}: invalid run manifest: {e}", path.display())))?;
        if m.version != RUN_MANIFEST_VERSION {
            return Err(Error::validation(format!(
                "{}: unsupported run manifest version {}",
                path.display(),
                m.version
            )));
        }
        Ok(m)
    }
}

// ---------------------------------------------------------------------------
// Results summarization
// ---------------------------------------------------------------------------

/// Training history as written by the train subcommands.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainHistoryFile {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub best_val: f64,
}

#[derive(Debug, Default, PartialEq)]
pub struct ReportSummary {
    pub runs: usize,
    pub trajectories: usize,
    pub histories: usize,
    pub trainings: usize,
    /// Files that looked like artifacts but could not be parsed.
    pub skipped: Vec<String>,
    /// Summary CSVs written to the output directory.
    pub written: Vec<PathBuf>,
}

fn walk_sorted(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> =
        std::fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            walk_sorted(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Parse a `<name>.history.csv` written by the search subcommands:
/// header `iteration,best_fitness`, one row per iteration.
fn parse_history(text: &str) -> Option<Vec<f64>> {
    let mut lines = text.lines();
    if lines.next()?.trim() != "iteration,best_fitness" {
        return None;
    }
    let mut vals = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (it, best) = line.split_once(',')?;
        if it.trim().parse::<usize>().ok()? != i {
            return None;
        }
        vals.push(best.trim().parse::<f64>().ok()?);
    }
    if vals.is_empty() {
        None
    } else {
        Some(vals)
    }
}

/// Parse a `<name>.trajectory.csv` sweep: `step,constraint,objective,...`
/// where the objective column may be empty when not annotated.
fn parse_trajectory(text: &str) -> Option<Vec<(f64, Option<f64>)>> {
    let mut lines = text.lines();
    if !lines.next()?.starts_with("step,constraint,objective") {
        return None;
    }
    let mut rows = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split(',');
        let _step = cols.next()?;
        let constraint = cols.next()?.trim().parse::<f64>().ok()?;
        let obj = match cols.next()? {
            "" => None,
            v => Some(v.trim().parse::<f64>().ok()?),
        };
        rows.push((constraint, obj));
    }
    if rows.is_empty() {
        None
    } else {
        Some(rows)
    }
}

/// Condense every recognized artifact under `results` into summary CSVs
/// in `out`. Errors with "nothing to report" when no artifact is found.
pub fn summarize_results(results: &Path, out: &Path) -> Result<ReportSummary> {
    if !results.is_dir() {
        return Err(Error::invalid_argument(format!(
            "results directory '{}' does not exist",
            results.display()
        )));
    }
    let mut files = Vec::new();
    walk_sorted(results, &mut files)?;

    let mut summary = ReportSummary::default();
    let mut runs_csv = String::from("manifest,subcommand,tool_version,args,outputs\n");
    let mut traj_csv = String::from("file,steps,start_constraint,end_constraint,final_objective\n");
    let mut conv_csv = String::from("file,iterations,final_best,iters_to_90pct\n");
    let mut train_csv = String::from("file,epochs,best_epoch,best_val,final_train\n");

    for path in &files {
        let name = file_name(path);
        if name.ends_with(RUN_MANIFEST_SUFFIX) {
            match RunManifest::load(path) {
                Ok(m) => {
                    let args: Vec<String> =
                        m.args.iter().map(|(k, v)| format!("{k}={v}")).collect();
                    runs_csv.push_str(&format!(
                        "{},{},{},{},{}\n",
                        csv_field(&name),
                        csv_field(&m.subcommand),
                        csv_field(&m.tool_version),
                        csv_field(&args.join(" ")),
                        m.outputs.len()
                    ));
                    summary.runs += 1;
                }
                Err(_) => summary.skipped.push(name),
            }
        } else if name.ends_with(".trajectory.csv") {
            let text = std::fs::read_to_string(path)?;
            match parse_trajectory(&text) {
                Some(rows) => {
                    let last_obj =
                        rows.last().and_then(|r| r.1).map(|v| fmt_f64(v)).unwrap_or_default();
                    traj_csv.push_str(&format!(
                        "{},{},{},{},{}\n",
                        csv_field(&name),
                        rows.len(),
                        fmt_f64(rows[0].0),
                        fmt_f64(rows[rows.len() - 1].0),
                        last_obj
                    ));
                    summary.trajectories += 1;
                }
                None => summary.skipped.push(name),
            }
        } else if name.ends_with(".history.csv") {
            let text = std::fs::read_to_string(path)?;
            match parse_history(&text) {
                Some(vals) => {
                    conv_csv.push_str(&format!(
                        "{},{},{},{}\n",
                        csv_field(&name),
                        vals.len(),
                        fmt_f64(*vals.last().expect("non-empty")),
                        convergence_iteration(&vals, 0.9).map(|i| i.to_string()).unwrap_or_default()
                    ));
                    summary.histories += 1;
                }
                None => summary.skipped.push(name),
            }
        } else if name.ends_with(".train.json") {
            let text = std::fs::read_to_string(path)?;
            match serde_json::from_str::<TrainHistoryFile>(&text) {
                Ok(h) if !h.train_loss.is_empty() => {
                    train_csv.push_str(&format!(
                        "{},{},{},{},{}\n",
                        csv_field(&name),
                        h.train_loss.len(),
                        h.best_epoch,
                        fmt_f64(h.best_val),
                        fmt_f64(*h.train_loss.last().expect("non-empty"))
                    ));
                    summary.trainings += 1;
                }
                _ => summary.skipped.push(name),
            }
        }
    }

    if summary.runs + summary.trajectories + summary.histories + summary.trainings == 0 {
        return Err(Error::validation(format!(
            "nothing to report in '{}'",
            results.display()
        )));
    }

    std::fs::create_dir_all(out)?;
    let mut write = |file: &str, content: &str, count: usize| -> Result<()> {
        if count > 0 {
            let p = out.join(file);
            std::fs::write(&p, content)?;
            summary.written.push(p);
        }
        Ok(())
    };
    write("runs.csv", &runs_csv, summary.runs)?;
    write("trajectories.csv", &traj_csv, summary.trajectories)?;
    write("convergence.csv", &conv_csv, summary.histories)?;
    write("training.csv", &train_csv, summary.trainings)?;
    Ok(summary)
}
