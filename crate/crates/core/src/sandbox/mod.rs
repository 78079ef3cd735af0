//! Isolated execution of candidate programs.
//!
//! Each execution runs the configured interpreter in a fresh child process,
//! in its own process group, under an address-space rlimit and a wall-clock
//! deadline. The feature table travels through a temporary CSV file carrying
//! a hidden row-id column, and comes back the same way. Every failure mode
//! becomes a [`Disqualification`]; nothing a program does can surface as an
//! error in the caller.

use std::collections::HashSet;
use std::fs;
use std::io::Read;
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::Path;
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ColumnKind, Table};
use crate::program::FeatureProgram;

/// Reserved name of the row-index column added to interchange files.
pub const ROW_ID_COLUMN: &str = "__llmfe_row_id__";

/// Bound on how far past the deadline a timed-out execution may return.
pub const TIMEOUT_GRACE: Duration = Duration::from_secs(2);

const HARNESS: &str = include_str!("harness.py");
const POLL_INTERVAL: Duration = Duration::from_millis(5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionLimits {
    pub wall_time: Duration,
    /// Address-space limit in bytes.
    pub memory: u64,
}

impl ExecutionLimits {
    pub fn new(wall_time: Duration, memory: u64) -> Self {
        assert!(!wall_time.is_zero() && memory > 0, "limits must be strictly positive");
        Self { wall_time, memory }
    }
}

impl Default for ExecutionLimits {
    fn default() -> Self {
        Self { wall_time: Duration::from_secs(30), memory: 2 * 1024 * 1024 * 1024 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisqualifyReason {
    Timeout,
    MemoryExceeded,
    RuntimeError,
    ContractViolation,
}

impl std::fmt::Display for DisqualifyReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::Timeout => "timeout",
            Self::MemoryExceeded => "memory_exceeded",
            Self::RuntimeError => "runtime_error",
            Self::ContractViolation => "contract_violation",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Disqualification {
    pub reason: DisqualifyReason,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExecutionStatus {
    Ok(Table),
    Disqualified(Disqualification),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionOutcome {
    pub status: ExecutionStatus,
    pub elapsed: Duration,
}

impl ExecutionOutcome {
    pub fn table(&self) -> Option<&Table> {
        match &self.status {
            ExecutionStatus::Ok(t) => Some(t),
            ExecutionStatus::Disqualified(_) => None,
        }
    }

    pub fn disqualification(&self) -> Option<&Disqualification> {
        match &self.status {
            ExecutionStatus::Ok(_) => None,
            ExecutionStatus::Disqualified(d) => Some(d),
        }
    }

    fn disqualified(reason: DisqualifyReason, detail: impl Into<String>, elapsed: Duration) -> Self {
        Self {
            status: ExecutionStatus::Disqualified(Disqualification { reason, detail: detail.into() }),
            elapsed,
        }
    }
}

/// Structural problems with a program's output table.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("expected {expected} rows, got {actual}")]
    RowCount { expected: usize, actual: usize },
    #[error("rows were reordered or replaced")]
    RowOrder,
    #[error("output has no feature columns")]
    NoColumns,
    #[error("duplicate column `{0}`")]
    DuplicateColumns(String),
    #[error("column `{0}` is named like the label")]
    LabelColumn(String),
    #[error("malformed output: {0}")]
    Malformed(String),
}

/// Checks an output table against the input it was produced from.
///
/// When `output` carries the hidden row-id column, the ids must read exactly
/// `0..n` in order; the column is stripped from the returned table.
pub fn validate_output(input: &Table, output: &Table, label: Option<&str>) -> Result<Table, Violation> {
    let expected = input.n_rows();
    if output.n_rows() != expected {
        return Err(Violation::RowCount { expected, actual: output.n_rows() });
    }
    let id_col = output.names().iter().position(|n| n == ROW_ID_COLUMN);
    if let Some(j) = id_col {
        let in_order = output
            .column(j)
            .iter()
            .enumerate()
            .all(|(i, v)| v.trim().parse::<f64>().ok() == Some(i as f64));
        if !in_order {
            return Err(Violation::RowOrder);
        }
    }
    let keep: Vec<usize> = (0..output.n_cols()).filter(|&j| Some(j) != id_col).collect();
    if keep.is_empty() {
        return Err(Violation::NoColumns);
    }
    let mut seen = HashSet::new();
    for &j in &keep {
        let name = &output.names()[j];
        if !seen.insert(name.as_str()) {
            return Err(Violation::DuplicateColumns(name.clone()));
        }
        if let Some(label) = label {
            if name.trim().eq_ignore_ascii_case(label.trim()) {
                return Err(Violation::LabelColumn(name.clone()));
            }
        }
    }
    let names = keep.iter().map(|&j| output.names()[j].clone()).collect();
    let kinds = keep.iter().map(|&j| output.kinds()[j]).collect();
    let columns = keep.iter().map(|&j| output.column(j).to_vec()).collect();
    Table::with_kinds(names, kinds, columns).map_err(|e| Violation::Malformed(e.to_string()))
}

/// Runs programs in child processes of a configured interpreter.
#[derive(Debug, Clone)]
pub struct Sandbox {
    interpreter: String,
    limits: ExecutionLimits,
    label: Option<String>,
}

impl Default for Sandbox {
    fn default() -> Self {
        Self::new("python3", ExecutionLimits::default())
    }
}

impl Sandbox {
    pub fn new(interpreter: impl Into<String>, limits: ExecutionLimits) -> Self {
        Self { interpreter: interpreter.into(), limits, label: None }
    }

    /// Name that no output column may take.
    pub fn protect_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn limits(&self) -> ExecutionLimits {
        self.limits
    }

    pub fn interpreter(&self) -> &str {
        &self.interpreter
    }

    pub fn execute(&self, program: &FeatureProgram, features: &Table) -> ExecutionOutcome {
        self.execute_with(program, features, &self.limits)
    }

    pub fn execute_with(
        &self,
        program: &FeatureProgram,
        features: &Table,
        limits: &ExecutionLimits,
    ) -> ExecutionOutcome {
        let start = Instant::now();
        let dir = match tempfile::Builder::new().prefix("llmfe-exec-").tempdir() {
            Ok(d) => d,
            Err(e) => {
                return ExecutionOutcome::disqualified(
                    DisqualifyReason::RuntimeError,
                    format!("cannot create scratch directory: {e}"),
                    start.elapsed(),
                )
            }
        };
        match self.run_child(program, features, limits, dir.path(), start) {
            Ok(outcome) => outcome,
            Err(detail) => {
                ExecutionOutcome::disqualified(DisqualifyReason::RuntimeError, detail, start.elapsed())
            }
        }
    }

    fn run_child(
        &self,
        program: &FeatureProgram,
        features: &Table,
        limits: &ExecutionLimits,
        dir: &Path,
        start: Instant,
    ) -> Result<ExecutionOutcome, String> {
        let harness = dir.join("harness.py");
        let source = dir.join("program.py");
        let input = dir.join("input.csv");
        let output = dir.join("output.csv");
        let stderr_path = dir.join("stderr.txt");
        fs::write(&harness, HARNESS).map_err(|e| e.to_string())?;
        fs::write(&source, &program.source).map_err(|e| e.to_string())?;
        write_interchange(&input, features).map_err(|e| e.to_string())?;
        let categorical = serde_json::to_string(&features.categorical_names()).map_err(|e| e.to_string())?;
        let stderr_file = fs::File::create(&stderr_path).map_err(|e| e.to_string())?;

        let memory = limits.memory;
        let mut cmd = Command::new(&self.interpreter);
        cmd.arg(&harness)
            .arg(&source)
            .arg(&input)
            .arg(&output)
            .arg(&program.function_name)
            .arg(&categorical)
            .current_dir(dir)
            .env("OPENBLAS_NUM_THREADS", "1")
            .env("OMP_NUM_THREADS", "1")
            .env("MKL_NUM_THREADS", "1")
            .env("PYTHONDONTWRITEBYTECODE", "1")
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::from(stderr_file))
            .process_group(0);
        // SAFETY: only async-signal-safe libc calls between fork and exec.
        unsafe {
            cmd.pre_exec(move || {
                let as_limit = libc::rlimit { rlim_cur: memory as libc::rlim_t, rlim_max: memory as libc::rlim_t };
                if libc::setrlimit(libc::RLIMIT_AS, &as_limit) != 0 {
                    return Err(std::io::Error::last_os_error());
                }
                let no_core = libc::rlimit { rlim_cur: 0, rlim_max: 0 };
                libc::setrlimit(libc::RLIMIT_CORE, &no_core);
                Ok(())
            });
        }
        let mut child = cmd.spawn().map_err(|e| format!("cannot start `{}`: {e}", self.interpreter))?;
        let pgid = child.id() as libc::pid_t;
        let deadline = start + limits.wall_time;

        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break status,
                Ok(None) => {}
                Err(e) => {
                    kill_group(pgid);
                    let _ = child.wait();
                    return Err(format!("lost track of child: {e}"));
                }
            }
            if Instant::now() >= deadline {
                kill_group(pgid);
                let _ = child.wait();
                return Ok(ExecutionOutcome::disqualified(
                    DisqualifyReason::Timeout,
                    format!("exceeded {:?} wall-clock limit", limits.wall_time),
                    start.elapsed(),
                ));
            }
            thread::sleep(POLL_INTERVAL);
        };
        // Reap anything the program left running in its group.
        kill_group(pgid);
        let elapsed = start.elapsed();

        let stderr = read_tail(&stderr_path);
        let reason_line = stderr
            .lines()
            .rev()
            .find_map(|l| l.strip_prefix("LLMFE: "))
            .unwrap_or("")
            .to_string();
        let memory_hint = stderr.contains("MemoryError")
            || stderr.contains("Cannot allocate memory")
            || stderr.contains("out of memory");

        match status.code() {
            Some(0) => {}
            Some(11) => return Ok(ExecutionOutcome::disqualified(DisqualifyReason::MemoryExceeded, reason_line, elapsed)),
            Some(12) => {
                return Ok(ExecutionOutcome::disqualified(DisqualifyReason::ContractViolation, reason_line, elapsed))
            }
            Some(code) => {
                let reason = if memory_hint { DisqualifyReason::MemoryExceeded } else { DisqualifyReason::RuntimeError };
                let detail = if reason_line.is_empty() { format!("exit status {code}") } else { reason_line };
                return Ok(ExecutionOutcome::disqualified(reason, detail, elapsed));
            }
            None => {
                let signal = status.signal().unwrap_or(0);
                let reason = if memory_hint || signal == libc::SIGKILL {
                    DisqualifyReason::MemoryExceeded
                } else {
                    DisqualifyReason::RuntimeError
                };
                return Ok(ExecutionOutcome::disqualified(reason, format!("killed by signal {signal}"), elapsed));
            }
        }

        let raw = match read_interchange(&output, features) {
            Ok(t) => t,
            Err(e) => {
                return Ok(ExecutionOutcome::disqualified(
                    DisqualifyReason::RuntimeError,
                    format!("no readable output: {e}"),
                    elapsed,
                ))
            }
        };
        Ok(match validate_output(features, &raw, self.label.as_deref()) {
            Ok(table) => ExecutionOutcome { status: ExecutionStatus::Ok(table), elapsed },
            Err(v) => ExecutionOutcome::disqualified(DisqualifyReason::ContractViolation, v.to_string(), elapsed),
        })
    }
}

fn kill_group(pgid: libc::pid_t) {
    // SAFETY: plain syscall; a stale group id only yields ESRCH.
    unsafe {
        libc::killpg(pgid, libc::SIGKILL);
    }
}

fn read_tail(path: &Path) -> String {
    let mut buf = Vec::new();
    if let Ok(mut f) = fs::File::open(path) {
        let _ = f.read_to_end(&mut buf);
    }
    let start = buf.len().saturating_sub(8192);
    String::from_utf8_lossy(&buf[start..]).into_owned()
}

/// Writes `table` with a leading row-id column.
pub fn write_interchange(path: &Path, table: &Table) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![ROW_ID_COLUMN.to_string()];
    header.extend(table.names().iter().cloned());
    w.write_record(&header)?;
    for i in 0..table.n_rows() {
        let mut record = vec![i.to_string()];
        record.extend(table.row(i).into_iter().map(str::to_string));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an interchange file verbatim. Columns named like input columns keep
/// the input's kind; new columns have their kind inferred.
pub fn read_interchange(path: &Path, input: &Table) -> Result<Table, String> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(|e| e.to_string())?;
    let names: Vec<String> = r.headers().map_err(|e| e.to_string())?.iter().map(str::to_string).collect();
    let mut columns: Vec<Vec<String>> = vec![Vec::new(); names.len()];
    for rec in r.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        for (j, v) in rec.iter().enumerate() {
            columns[j].push(v.to_string());
        }
    }
    let forced: HashSet<String> = names
        .iter()
        .filter(|n| input.kind_of(n) == Some(ColumnKind::Categorical))
        .cloned()
        .collect();
    Table::from_columns(names, columns, &forced).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(names: &[&str], rows: &[&[&str]]) -> Table {
        let columns = (0..names.len()).map(|j| rows.iter().map(|r| r[j].to_string()).collect()).collect();
        Table::from_columns(names.iter().map(|s| s.to_string()).collect(), columns, &HashSet::new()).unwrap()
    }

    #[test]
    fn augmentation_is_valid() {
        let input = table(&["a"], &[&["1"], &["2"]]);
        let output = table(&[ROW_ID_COLUMN, "a", "b"], &[&["0", "1", "0.5"], &["1", "2", "1.5"]]);
        let cleaned = validate_output(&input, &output, Some("y")).unwrap();
        assert_eq!(cleaned.names(), &["a", "b"]);
    }

    #[test]
    fn duplicate_columns_rejected() {
        let input = table(&["a"], &[&["1"]]);
        let output = table(&["a", "a"], &[&["1", "1"]]);
        assert_eq!(validate_output(&input, &output, None), Err(Violation::DuplicateColumns("a".into())));
    }

    #[test]
    fn permuted_rows_rejected() {
        let input = table(&["a"], &[&["1"], &["2"], &["3"]]);
        let output = table(&[ROW_ID_COLUMN, "a"], &[&["0", "1"], &["2", "3"], &["1", "2"]]);
        assert_eq!(validate_output(&input, &output, None), Err(Violation::RowOrder));
    }

    #[test]
    fn dropped_rows_rejected() {
        let input = table(&["a"], &[&["1"], &["2"]]);
        let output = table(&["a"], &[&["1"]]);
        assert_eq!(validate_output(&input, &output, None), Err(Violation::RowCount { expected: 2, actual: 1 }));
    }

    #[test]
    fn label_named_column_rejected() {
        let input = table(&["a"], &[&["1"]]);
        let output = table(&["a", "Class"], &[&["1", "0"]]);
        assert!(matches!(validate_output(&input, &output, Some("class")), Err(Violation::LabelColumn(_))));
    }

    #[test]
    fn id_column_alone_is_no_columns() {
        let input = table(&["a"], &[&["1"]]);
        let output = table(&[ROW_ID_COLUMN], &[&["0"]]);
        assert_eq!(validate_output(&input, &output, None), Err(Violation::NoColumns));
    }

    #[test]
    fn missing_interpreter_disqualifies() {
        let sb = Sandbox::new("/nonexistent/python", ExecutionLimits::default());
        let out = sb.execute(&FeatureProgram::identity_seed(), &table(&["a"], &[&["1"]]));
        assert_eq!(out.disqualification().unwrap().reason, DisqualifyReason::RuntimeError);
    }
}
