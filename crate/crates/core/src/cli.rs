//! Commands behind the `llmfe` binary: `run`, `ablate`, `noise-sweep` and `report`.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::backend::Backend;
use crate::config::{parse_ablation, ConfigError, RunConfig};
use crate::dataset::{inject_noise, load_dataset, ColumnKind, Dataset, DatasetError};
use crate::prompt::PromptTemplates;
use crate::search::{
    run_split_with, IterationRecord, ProtocolSummary, SearchConfig, SearchError, SearchResult, SplitRecord,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_UNREACHABLE: i32 = 3;

pub const SUMMARY_FILE: &str = "summary.csv";
pub const TRACE_FILE: &str = "trace.jsonl";
pub const PROMPTS_FILE: &str = "prompts.jsonl";
pub const TIMINGS_FILE: &str = "timings.csv";
pub const BEST_PROGRAM_FILE: &str = "best_program.txt";
pub const SNAPSHOT_FILE: &str = "buffer_snapshot.txt";
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.txt";

const SUMMARY_HEADER: [&str; 15] = [
    "dataset",
    "n_rows",
    "n_features",
    "metric",
    "ablation",
    "split",
    "split_seed",
    "search_seed",
    "base",
    "llmfe",
    "seed_validation_score",
    "best_validation_score",
    "samples_used",
    "ensemble_size",
    "ensemble_survivors",
];

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{0}")]
    Precondition(String),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed results in {path}: {reason}")]
    MalformedResults { path: String, reason: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Dataset(_) | CliError::Precondition(_) => EXIT_CONFIG,
            CliError::Search(SearchError::Config(_)) => EXIT_CONFIG,
            CliError::Search(e) if e.is_unreachable() => EXIT_UNREACHABLE,
            _ => EXIT_FAILURE,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.display().to_string(), source }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(io_err(path))
}

/// Everything a finished (or aborted) protocol run produced.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub output_dir: PathBuf,
    pub summary: Option<ProtocolSummary>,
    pub results: Vec<SearchResult>,
}

/// Loads the dataset and builds a fresh backend and templates for `cfg`.
pub fn prepare(cfg: &RunConfig) -> Result<(Dataset, SearchConfig), CliError> {
    let search = cfg.search_config()?;
    cfg.backend_config()?;
    let ds = load_dataset(&cfg.dataset_path, &cfg.metadata_path)?;
    Ok((ds, search))
}

fn templates(cfg: &RunConfig) -> Result<PromptTemplates, CliError> {
    match &cfg.templates_dir {
        Some(dir) => PromptTemplates::load_dir(dir).map_err(|e| CliError::Precondition(e.to_string())),
        None => Ok(PromptTemplates::default()),
    }
}

fn backend(cfg: &RunConfig) -> Result<Arc<dyn Backend>, CliError> {
    cfg.backend_config()?
        .build()
        .map_err(|e| CliError::Config(ConfigError::Invalid { key: "backend", reason: e.to_string() }))
}

struct Writer {
    dir: PathBuf,
}

impl Writer {
    fn create(dir: &Path, cfg: &RunConfig) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let w = Self { dir: dir.to_path_buf() };
        write_file(&w.dir.join(RESOLVED_CONFIG_FILE), &cfg.to_toml())?;
        Ok(w)
    }

    /// Rewrites every per-split artifact from `results`.
    fn flush(&self, results: &[SearchResult]) -> Result<(), CliError> {
        let mut trace = String::new();
        let mut prompts = String::new();
        let mut timings = String::from("split,iteration,index,elapsed_secs\n");
        let mut best = String::new();
        for (split, r) in results.iter().enumerate() {
            for line in r.trace_lines(split) {
                trace.push_str(&serde_json::to_string(&line).expect("trace line serializes"));
                trace.push('\n');
            }
            for it in &r.trace {
                prompts.push_str(&serde_json::to_string(&PromptLine::new(split, it)).expect("prompt serializes"));
                prompts.push('\n');
            }
            let mut elapsed = r.timings.iter();
            for it in &r.trace {
                for c in &it.candidates {
                    if let Some(t) = elapsed.next() {
                        let _ = writeln!(timings, "{split},{},{},{:.6}", it.iteration, c.index, t.as_secs_f64());
                    }
                }
            }
            let _ = writeln!(best, "# split {split}: validation score {}", r.best_score);
            best.push_str(r.best_program.source.trim_end());
            best.push_str("\n\n");
        }
        let snapshots: Vec<_> = results.iter().map(|r| &r.buffer).collect();
        write_file(&self.dir.join(TRACE_FILE), &trace)?;
        write_file(&self.dir.join(PROMPTS_FILE), &prompts)?;
        write_file(&self.dir.join(TIMINGS_FILE), &timings)?;
        write_file(&self.dir.join(BEST_PROGRAM_FILE), &best)?;
        write_file(&self.dir.join(SNAPSHOT_FILE), &(serde_json::to_string_pretty(&snapshots).expect("buffers serialize") + "\n"))
    }

    fn summary(&self, summary: &ProtocolSummary) -> Result<(), CliError> {
        write_file(&self.dir.join(SUMMARY_FILE), &summary_csv(summary))
    }
}

#[derive(Serialize)]
struct PromptLine<'a> {
    split: usize,
    iteration: usize,
    island: usize,
    variant: crate::prompt::InstructionVariant,
    demonstrations: &'a [crate::search::DemoRef],
    prompt: &'a str,
}

impl<'a> PromptLine<'a> {
    fn new(split: usize, it: &'a IterationRecord) -> Self {
        Self { split, iteration: it.iteration, island: it.island, variant: it.variant, demonstrations: &it.demonstrations, prompt: &it.prompt }
    }
}

pub fn summary_csv(s: &ProtocolSummary) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_HEADER).expect("in-memory write");
    let fixed = [s.dataset.clone(), s.n_rows.to_string(), s.n_features.to_string(), s.metric.clone(), s.ablation.clone()];
    for r in &s.records {
        let mut row = fixed.to_vec();
        row.extend([
            r.split.to_string(),
            r.split_seed.to_string(),
            r.search_seed.to_string(),
            r.base.to_string(),
            r.llmfe.to_string(),
            r.seed_validation_score.to_string(),
            r.best_validation_score.to_string(),
            r.samples_used.to_string(),
            r.ensemble_size.to_string(),
            r.ensemble_survivors.to_string(),
        ]);
        w.write_record(&row).expect("in-memory write");
    }
    for (label, base, llmfe) in [("mean", s.base_mean, s.llmfe_mean), ("std", s.base_std, s.llmfe_std)] {
        let mut row = fixed.to_vec();
        row.extend([label.to_string(), String::new(), String::new(), base.to_string(), llmfe.to_string()]);
        row.extend(std::iter::repeat_n(String::new(), 5));
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

/// Runs the multi-split protocol on `ds` and writes all artifacts to `out`.
/// Artifacts of completed splits are flushed before an error is returned.
pub fn run_to_dir(cfg: &RunConfig, ds: &Dataset, search: &SearchConfig, out: &Path) -> Result<RunArtifacts, CliError> {
    let templates = templates(cfg)?;
    let backend = backend(cfg)?;
    let writer = Writer::create(out, cfg)?;
    let mut results = Vec::new();
    let mut records: Vec<SplitRecord> = Vec::new();
    for i in 0..cfg.n_splits {
        match run_split_with(search, ds, backend.clone(), &templates, i) {
            Ok((result, record)) => {
                results.push(result);
                records.push(record);
                writer.flush(&results)?;
            }
            Err(e) => {
                if let SearchError::Backend { partial, .. } = &e {
                    results.push((**partial).clone());
                }
                writer.flush(&results)?;
                return Err(e.into());
            }
        }
    }
    let metric = results[0].metric.name();
    let summary = ProtocolSummary::from_records(search, ds, metric, records);
    writer.summary(&summary)?;
    Ok(RunArtifacts { output_dir: out.to_path_buf(), summary: Some(summary), results })
}

/// `run`: one protocol into `output_dir`.
pub fn cmd_run(cfg: &RunConfig) -> Result<RunArtifacts, CliError> {
    let (ds, search) = prepare(cfg)?;
    run_to_dir(cfg, &ds, &search, &cfg.output_dir)
}

/// `ablate`: one protocol per entry of `ablations`, each in its own subdirectory.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<Vec<(String, ProtocolSummary)>, CliError> {
    let (ds, _) = prepare(cfg)?;
    let mut cells = Vec::new();
    for name in &cfg.ablations {
        let flags = parse_ablation(name)?;
        let cell_cfg = RunConfig { ablation: flags.label(), ..cfg.clone() };
        cells.push((flags.label(), cell_cfg.search_config()?, cell_cfg));
    }
    let summaries = run_cells(cfg, &ds, cells)?;
    let mut table = String::from("ablation,base_mean,base_std,llmfe_mean,llmfe_std\n");
    for (label, s) in &summaries {
        let _ = writeln!(table, "{label},{},{},{},{}", s.base_mean, s.base_std, s.llmfe_mean, s.llmfe_std);
    }
    write_file(&cfg.output_dir.join("ablation.csv"), &table)?;
    Ok(summaries)
}

/// `noise-sweep`: one protocol per sigma on noise-injected copies of the data.
pub fn cmd_noise_sweep(cfg: &RunConfig) -> Result<Vec<(f64, ProtocolSummary)>, CliError> {
    let (ds, search) = prepare(cfg)?;
    if !ds.task_kind().is_classification() {
        return Err(CliError::Precondition("noise sweeps need a classification dataset".into()));
    }
    if !ds.features.kinds().contains(&ColumnKind::Numeric) {
        return Err(CliError::Precondition("noise sweeps need at least one numeric feature".into()));
    }
    if cfg.noise_sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(CliError::Config(ConfigError::Invalid { key: "noise_sigmas", reason: "sigmas must be >= 0".into() }));
    }
    let cells: Vec<(String, SearchConfig, RunConfig)> =
        cfg.noise_sigmas.iter().map(|s| (format!("sigma_{s}"), search.clone(), cfg.clone())).collect();
    let noisy: Vec<Dataset> = cfg.noise_sigmas.iter().map(|&s| inject_noise(&ds, s, cfg.split_seed)).collect();
    let summaries = run_cells_on(cfg, &noisy, cells)?;
    let mut table = String::from("sigma,base_mean,base_std,llmfe_mean,llmfe_std\n");
    let out: Vec<(f64, ProtocolSummary)> = cfg.noise_sigmas.iter().copied().zip(summaries.into_iter().map(|(_, s)| s)).collect();
    for (sigma, s) in &out {
        let _ = writeln!(table, "{sigma},{},{},{},{}", s.base_mean, s.base_std, s.llmfe_mean, s.llmfe_std);
    }
    write_file(&cfg.output_dir.join("noise_sweep.csv"), &table)?;
    Ok(out)
}

fn run_cells(
    cfg: &RunConfig,
    ds: &Dataset,
    cells: Vec<(String, SearchConfig, RunConfig)>,
) -> Result<Vec<(String, ProtocolSummary)>, CliError> {
    let copies = vec![ds.clone(); cells.len()];
    run_cells_on(cfg, &copies, cells)
}

fn run_cells_on(
    cfg: &RunConfig,
    datasets: &[Dataset],
    cells: Vec<(String, SearchConfig, RunConfig)>,
) -> Result<Vec<(String, ProtocolSummary)>, CliError> {
    let one = |(label, search, cell_cfg): &(String, SearchConfig, RunConfig), ds: &Dataset| {
        let dir = cfg.output_dir.join(label);
        run_to_dir(cell_cfg, ds, search, &dir)
            .map(|a| (label.clone(), a.summary.expect("completed runs have a summary")))
    };
    let results: Vec<Result<(String, ProtocolSummary), CliError>> = if cfg.parallel_cells {
        std::thread::scope(|s| {
            let handles: Vec<_> = cells.iter().zip(datasets).map(|(c, ds)| s.spawn(move || one(c, ds))).collect();
            handles.into_iter().map(|h| h.join().expect("cell thread panicked")).collect()
        })
    } else {
        cells.iter().zip(datasets).map(|(c, ds)| one(c, ds)).collect()
    };
    results.into_iter().collect()
}

/// One parsed `summary.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub dataset: String,
    pub n_rows: usize,
    pub n_features: usize,
    pub metric: String,
    pub ablation: String,
    pub base: Vec<f64>,
    pub llmfe: Vec<f64>,
    pub base_mean: f64,
    pub base_std: f64,
    pub llmfe_mean: f64,
    pub llmfe_std: f64,
}

impl ResultRow {
    fn maximize(&self) -> bool {
        self.metric != "n_rmse"
    }
}

pub fn read_summary(dir: &Path) -> Result<ResultRow, CliError> {
    let path = dir.join(SUMMARY_FILE);
    let bad = |reason: String| CliError::MalformedResults { path: path.display().to_string(), reason };
    let mut reader = csv::Reader::from_path(&path).map_err(|e| bad(e.to_string()))?;
    let header = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != SUMMARY_HEADER {
        return Err(bad("unexpected header".into()));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("not a number: `{s}`")));
    let mut row: Option<ResultRow> = None;
    let (mut mean, mut std) = (None, None);
    for rec in reader.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let r = row.get_or_insert_with(|| ResultRow {
            dataset: rec[0].to_string(),
            n_rows: rec[1].parse().unwrap_or(0),
            n_features: rec[2].parse().unwrap_or(0),
            metric: rec[3].to_string(),
            ablation: rec[4].to_string(),
            base: vec![],
            llmfe: vec![],
            base_mean: f64::NAN,
            base_std: f64::NAN,
            llmfe_mean: f64::NAN,
            llmfe_std: f64::NAN,
        });
        match &rec[5] {
            "mean" => mean = Some((num(&rec[8])?, num(&rec[9])?)),
            "std" => std = Some((num(&rec[8])?, num(&rec[9])?)),
            _ => {
                r.base.push(num(&rec[8])?);
                r.llmfe.push(num(&rec[9])?);
            }
        }
    }
    let mut row = row.ok_or_else(|| bad("no records".into()))?;
    if row.base.is_empty() {
        return Err(bad("no per-split records".into()));
    }
    let (bm, bs) = crate::search::summarize(&row.base);
    let (lm, ls) = crate::search::summarize(&row.llmfe);
    let (mean, std) = (mean.ok_or_else(|| bad("missing mean row".into()))?, std.ok_or_else(|| bad("missing std row".into()))?);
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + b.abs());
    if !(close(mean.0, bm) && close(mean.1, lm) && close(std.0, bs) && close(std.1, ls)) {
        return Err(bad("aggregate rows disagree with the per-split records".into()));
    }
    (row.base_mean, row.base_std, row.llmfe_mean, row.llmfe_std) = (bm, bs, lm, ls);
    Ok(row)
}

/// Average ranks (1 = best) of `(base, llmfe)` across rows; ties share the mean rank.
pub fn mean_ranks(rows: &[ResultRow]) -> (f64, f64) {
    let mut totals = (0.0, 0.0);
    for r in rows {
        let (b, l) = (r.base_mean, r.llmfe_mean);
        let better_llmfe = if r.maximize() { l > b } else { l < b };
        let (rb, rl) = if b == l { (1.5, 1.5) } else if better_llmfe { (2.0, 1.0) } else { (1.0, 2.0) };
        totals.0 += rb;
        totals.1 += rl;
    }
    let n = rows.len().max(1) as f64;
    (totals.0 / n, totals.1 / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
}

pub fn cmd_report(dirs: &[PathBuf], format: ReportFormat) -> Result<String, CliError> {
    if dirs.is_empty() {
        return Err(CliError::Precondition("report needs at least one result directory".into()));
    }
    let rows = dirs.iter().map(|d| read_summary(d)).collect::<Result<Vec<_>, _>>()?;
    let (rank_base, rank_llmfe) = mean_ranks(&rows);
    let pm = |m: f64, s: f64| format!("{m:.4} ± {s:.4}");
    let header = ["dataset", "ablation", "metric", "n", "p", "base", "llm-fe"];
    let mut cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.dataset.clone(),
                r.ablation.clone(),
                r.metric.clone(),
                r.n_rows.to_string(),
                r.n_features.to_string(),
                pm(r.base_mean, r.base_std),
                pm(r.llmfe_mean, r.llmfe_std),
            ]
        })
        .collect();
    let rank_row = |a: &str, b: &str| vec!["mean rank".into(), String::new(), String::new(), String::new(), String::new(), a.to_string(), b.to_string()];
    Ok(match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["dataset", "ablation", "metric", "n", "p", "base_mean", "base_std", "llmfe_mean", "llmfe_std"]).expect("in-memory");
            for r in &rows {
                w.write_record([
                    r.dataset.clone(),
                    r.ablation.clone(),
                    r.metric.clone(),
                    r.n_rows.to_string(),
                    r.n_features.to_string(),
                    r.base_mean.to_string(),
                    r.base_std.to_string(),
                    r.llmfe_mean.to_string(),
                    r.llmfe_std.to_string(),
                ])
                .expect("in-memory");
            }
            w.write_record(["mean rank", "", "", "", "", &rank_base.to_string(), "", &rank_llmfe.to_string(), ""]).expect("in-memory");
            String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
        }
        ReportFormat::Text => {
            cells.push(rank_row(&format!("{rank_base:.2}"), &format!("{rank_llmfe:.2}")));
            let widths: Vec<usize> = (0..header.len())
                .map(|j| cells.iter().map(|r| r[j].chars().count()).chain([header[j].len()]).max().unwrap_or(0))
                .collect();
            let line = |row: Vec<String>| {
                row.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect::<Vec<_>>().join("  ").trim_end().to_string()
            };
            let mut out = line(header.map(String::from).to_vec()) + "\n";
            out += &(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  ") + "\n");
            for row in cells {
                out += &(line(row) + "\n");
            }
            out
        }
    })
}

/// Prints an error and maps it to the process exit code.
pub fn report_error(e: &CliError) -> i32 {
    let _ = writeln!(std::io::stderr(), "llmfe: {e}");
    e.exit_code()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(dataset: &str, base: f64, llmfe: f64, metric: &str) -> ResultRow {
        ResultRow {
            dataset: dataset.into(),
            n_rows: 10,
            n_features: 2,
            metric: metric.into(),
            ablation: "none".into(),
            base: vec![base],
            llmfe: vec![llmfe],
            base_mean: base,
            base_std: 0.0,
            llmfe_mean: llmfe,
            llmfe_std: 0.0,
        }
    }

    #[test]
    fn ranks() {
        let rows = [row("a", 0.8, 0.9, "accuracy"), row("b", 0.5, 0.4, "n_rmse")];
        assert_eq!(mean_ranks(&rows), (2.0, 1.0));
        let rows = [row("a", 0.8, 0.8, "accuracy"), row("b", 0.9, 0.8, "accuracy")];
        assert_eq!(mean_ranks(&rows), (1.25, 1.75));
    }

    #[test]
    fn summary_round_trip_and_tamper_detection() {
        let records = (0..3)
            .map(|i| SplitRecord {
                split: i,
                split_seed: i as u64,
                search_seed: i as u64,
                base: 0.8 + 0.01 * i as f64,
                llmfe: 0.9 + 0.013 * i as f64,
                seed_validation_score: 0.8,
                best_validation_score: 0.95,
                samples_used: 20,
                ensemble_size: 3,
                ensemble_survivors: 3,
            })
            .collect::<Vec<_>>();
        let (bm, bs) = crate::search::summarize(&records.iter().map(|r| r.base).collect::<Vec<_>>());
        let (lm, ls) = crate::search::summarize(&records.iter().map(|r| r.llmfe).collect::<Vec<_>>());
        let s = ProtocolSummary {
            dataset: "d".into(),
            n_rows: 100,
            n_features: 4,
            metric: "accuracy".into(),
            ablation: "none".into(),
            records,
            base_mean: bm,
            base_std: bs,
            llmfe_mean: lm,
            llmfe_std: ls,
        };
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(SUMMARY_FILE), summary_csv(&s)).unwrap();
        let r = read_summary(dir.path()).unwrap();
        assert_eq!(r.base, s.records.iter().map(|x| x.base).collect::<Vec<_>>());
        assert_eq!((r.base_mean, r.base_std, r.llmfe_mean, r.llmfe_std), (bm, bs, lm, ls));

        let tampered = summary_csv(&s).replacen("0.81", "0.99", 1);
        fs::write(dir.path().join(SUMMARY_FILE), tampered).unwrap();
        assert!(matches!(read_summary(dir.path()), Err(CliError::MalformedResults { .. })));
        assert!(matches!(read_summary(Path::new("/nonexistent")), Err(CliError::MalformedResults { .. })));
    }
}
