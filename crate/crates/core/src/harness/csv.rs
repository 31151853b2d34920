//! CSV telemetry. Floats use Rust's shortest round-trip `{:e}` form, so
//! reading a file back reproduces every value bit for bit. Missing gap or
//! variance values are written as empty fields.
//!
//! Layout under the output directory:
//!
//! ```text
//! runs/<method>_lam<λ>_p<param>_s<seed>.csv   one per run
//! runs.csv                                     every run with its final gap
//! index.csv                                    one winner per (method, λ)
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{HarnessError, ResultTable};
use crate::optimizer::EpochRecord;

pub const RUN_HEADER: &str = "epoch,wall_time_sec,fval,gap,variance,step_size,grad_evals";
const INDEX_HEADER: &str = "dataset,model,lambda,method,param,final_gap,run_files";
const RUNS_HEADER: &str = "method,lambda,param,seed,diverged,final_gap,run_file";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

/// Text of one run's CSV.
pub fn run_csv_string(records: &[EpochRecord]) -> String {
    let mut s = String::with_capacity(64 * (records.len() + 1));
    s.push_str(RUN_HEADER);
    s.push('\n');
    for r in records {
        writeln!(
            s,
            "{},{:e},{:e},{},{},{:e},{}",
            r.epoch,
            r.wall_time_sec,
            r.fval,
            opt(r.gap),
            opt(r.variance),
            r.step_size,
            r.grad_evals
        )
        .unwrap();
    }
    s
}

/// Writes run CSVs, `runs.csv` and `index.csv`. Returns the index path.
pub fn emit_csv(table: &ResultTable, dir: &Path) -> Result<PathBuf, HarnessError> {
    if table.rows.is_empty() {
        return Err(HarnessError::Config("result table is empty".into()));
    }
    let runs_dir = dir.join("runs");
    fs::create_dir_all(&runs_dir)?;

    let mut runs = String::from(RUNS_HEADER);
    runs.push('\n');
    for row in &table.rows {
        let file = row.file_name();
        fs::write(runs_dir.join(&file), run_csv_string(&row.records))?;
        writeln!(
            runs,
            "{},{:e},{:e},{},{},{:e},runs/{}",
            row.method.name(),
            row.lambda,
            row.param,
            row.seed,
            row.diverged,
            row.final_gap(),
            file
        )
        .unwrap();
    }
    fs::write(dir.join("runs.csv"), runs)?;

    let mut index = String::from(INDEX_HEADER);
    index.push('\n');
    for w in &table.winners {
        let files: Vec<String> = table
            .winner_rows(w.method, w.lambda)
            .iter()
            .map(|r| format!("runs/{}", r.file_name()))
            .collect();
        writeln!(
            index,
            "{},{},{:e},{},{:e},{:e},{}",
            table.dataset,
            table.model.name(),
            w.lambda,
            w.method.name(),
            w.param,
            w.final_gap,
            files.join(";")
        )
        .unwrap();
    }
    let path = dir.join("index.csv");
    fs::write(&path, index)?;
    Ok(path)
}

fn csv_err(path: &Path, line: usize, msg: impl Into<String>) -> HarnessError {
    HarnessError::Csv { path: path.to_path_buf(), line, msg: msg.into() }
}

/// Parses one run CSV back into records.
pub fn read_run_csv(path: &Path) -> Result<Vec<EpochRecord>, HarnessError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == RUN_HEADER => {}
        _ => return Err(csv_err(path, 1, "missing or unexpected header")),
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let ln = i + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(csv_err(path, ln, format!("expected 7 fields, found {}", f.len())));
        }
        let float = |s: &str| s.parse::<f64>().map_err(|_| csv_err(path, ln, format!("bad number '{s}'")));
        let optf = |s: &str| if s.is_empty() { Ok(None) } else { float(s).map(Some) };
        let int = |s: &str| s.parse::<u64>().map_err(|_| csv_err(path, ln, format!("bad integer '{s}'")));
        out.push(EpochRecord {
            epoch: int(f[0])? as usize,
            wall_time_sec: float(f[1])?,
            fval: float(f[2])?,
            gap: optf(f[3])?,
            variance: optf(f[4])?,
            step_size: float(f[5])?,
            grad_evals: int(f[6])?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub dataset: String,
    pub model: String,
    pub lambda: f64,
    pub method: String,
    pub param: f64,
    pub final_gap: f64,
    /// Relative to the directory holding `index.csv`.
    pub run_files: Vec<PathBuf>,
}

/// Reads `<dir>/index.csv`.
pub fn read_index(dir: &Path) -> Result<Vec<IndexEntry>, HarnessError> {
    let path = dir.join("index.csv");
    let text = fs::read_to_string(&path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == INDEX_HEADER => {}
        _ => return Err(csv_err(&path, 1, "missing or unexpected header")),
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let ln = i + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(csv_err(&path, ln, format!("expected 7 fields, found {}", f.len())));
        }
        let float = |s: &str| s.parse::<f64>().map_err(|_| csv_err(&path, ln, format!("bad number '{s}'")));
        out.push(IndexEntry {
            dataset: f[0].to_string(),
            model: f[1].to_string(),
            lambda: float(f[2])?,
            method: f[3].to_string(),
            param: float(f[4])?,
            final_gap: float(f[5])?,
            run_files: f[6].split(';').filter(|s| !s.is_empty()).map(PathBuf::from).collect(),
        });
    }
    Ok(out)
}
