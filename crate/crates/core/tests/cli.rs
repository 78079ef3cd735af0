//! The `llmfe` binary end to end, driven by the scripted proposer.

use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use llmfe::cli::{self, ReportFormat, EXIT_CONFIG, EXIT_OK, EXIT_UNREACHABLE};
use llmfe::synthetic::{balance_metadata, BALANCE_FEATURES};

fn data(file: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data").join(file)
}

/// Writes a small run config into `dir` and returns its path.
fn config(dir: &Path, extra: &str) -> PathBuf {
    let extra = if extra.contains("n_splits") { extra.to_string() } else { format!("n_splits = 1\n{extra}") };
    let text = format!(
        "dataset_path = {:?}\nmetadata_path = {:?}\noutput_dir = \"out\"\nbackend = \"scripted_mock\"\nscript_path = {:?}\n\
         sample_budget = 3\n{extra}",
        data("balance_scale.csv"),
        data("balance_scale.json"),
        data("balance_scale_script.json"),
    );
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

fn llmfe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_llmfe")).args(args).output().expect("binary runs")
}

fn run(cfg: &Path, overrides: &[&str]) -> Output {
    let mut args = vec!["run", cfg.to_str().unwrap()];
    args.extend_from_slice(overrides);
    llmfe(&args)
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn run_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "n_splits = 2\n");
    let out = run(&cfg, &["--search-seed", "7"]);
    assert_eq!(code(&out), EXIT_OK, "{}", stderr(&out));
    let dir = tmp.path().join("out");
    for file in [
        cli::SUMMARY_FILE,
        cli::TRACE_FILE,
        cli::PROMPTS_FILE,
        cli::TIMINGS_FILE,
        cli::BEST_PROGRAM_FILE,
        cli::SNAPSHOT_FILE,
        cli::RESOLVED_CONFIG_FILE,
    ] {
        assert!(dir.join(file).is_file(), "missing {file}");
    }
    let resolved = fs::read_to_string(dir.join(cli::RESOLVED_CONFIG_FILE)).unwrap();
    assert!(resolved.contains("search_seed = 7"), "{resolved}");
    assert!(resolved.contains("sample_budget = 3"));

    let row = cli::read_summary(&dir).unwrap();
    assert_eq!((row.dataset.as_str(), row.n_rows, row.n_features), ("balance-scale", 625, 4));
    assert_eq!(row.base.len(), 2);
    assert!(row.base.iter().chain(&row.llmfe).all(|v| (0.0..=1.0).contains(v)));

    let trace = fs::read_to_string(dir.join(cli::TRACE_FILE)).unwrap();
    let lines: Vec<serde_json::Value> = trace.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 6, "one line per completion, 3 per split");
    assert!(lines.iter().all(|l| l.get("elapsed").is_none() && l["status"].is_string()));
    let snapshots: Vec<serde_json::Value> = serde_json::from_str(&fs::read_to_string(dir.join(cli::SNAPSHOT_FILE)).unwrap()).unwrap();
    assert_eq!(snapshots.len(), 2);
    let best = fs::read_to_string(dir.join(cli::BEST_PROGRAM_FILE)).unwrap();
    assert_eq!(best.matches("def modify_features_v").count(), 2);
}

#[test]
fn flags_override_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "split_seed = 3\nsearch_seed = 4\n");
    let out = run(&cfg, &["--split-seed=11", "--output-dir", tmp.path().join("elsewhere").to_str().unwrap()]);
    assert_eq!(code(&out), EXIT_OK, "{}", stderr(&out));
    let resolved = fs::read_to_string(tmp.path().join("elsewhere").join(cli::RESOLVED_CONFIG_FILE)).unwrap();
    assert!(resolved.contains("split_seed = 11"));
    assert!(resolved.contains("search_seed = 4"));
    assert!(resolved.contains("batch_size = 3"), "defaults fill the rest");
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn missing_dataset_exits_with_config_error_and_no_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "");
    let out = run(&cfg, &["--dataset-path", tmp.path().join("absent.csv").to_str().unwrap()]);
    assert_eq!(code(&out), EXIT_CONFIG, "{}", stderr(&out));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn malformed_config_exits_with_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "islands = 0\n");
    assert_eq!(code(&run(&cfg, &[])), EXIT_CONFIG);
    assert_eq!(code(&run(&config(tmp.path(), ""), &["--no-such-key", "1"])), EXIT_CONFIG);
    assert_eq!(code(&run(&config(tmp.path(), ""), &["--iterations", "9"])), EXIT_CONFIG, "9 iterations of 3 exceed a budget of 3");
}

#[test]
fn anonymized_prompts_show_only_generic_names() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "");
    let out = run(&cfg, &["--ablation", "no_domain_knowledge"]);
    assert_eq!(code(&out), EXIT_OK, "{}", stderr(&out));
    let prompts = fs::read_to_string(tmp.path().join("out").join(cli::PROMPTS_FILE)).unwrap();
    assert!(!prompts.is_empty());
    let meta = balance_metadata();
    for line in prompts.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let prompt = v["prompt"].as_str().unwrap();
        for name in BALANCE_FEATURES {
            assert!(!prompt.contains(name), "{name} leaked");
        }
        for text in meta.features.values().chain([&meta.task_description]) {
            assert!(!prompt.contains(text.as_str()), "{text} leaked");
        }
        for c in ["C1", "C2", "C3", "C4"] {
            assert!(prompt.contains(c));
        }
    }
}

#[test]
fn report_over_two_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for (dir, seed) in [(&a, "0"), (&b, "1")] {
        let out = run(&cfg, &["--output-dir", dir.to_str().unwrap(), "--split-seed", seed]);
        assert_eq!(code(&out), EXIT_OK, "{}", stderr(&out));
    }
    let out = llmfe(&["report", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert_eq!(code(&out), EXIT_OK, "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5, "header, rule, two rows, rank line:\n{text}");
    assert!(lines[2].starts_with("balance-scale") && lines[3].starts_with("balance-scale"));
    assert!(lines[4].starts_with("mean rank"));

    let csv = cli::cmd_report(&[a.clone(), b.clone()], ReportFormat::Csv).unwrap();
    let mut reader = csv::Reader::from_reader(csv.as_bytes());
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3);
    for (row, dir) in rows.iter().zip([&a, &b]) {
        let parsed = cli::read_summary(dir).unwrap();
        assert_eq!(row[5].parse::<f64>().unwrap(), parsed.base_mean);
        assert_eq!(row[7].parse::<f64>().unwrap(), parsed.llmfe_mean);
    }

    fs::write(b.join(cli::SUMMARY_FILE), "dataset\nbroken\n").unwrap();
    let out = llmfe(&["report", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert_ne!(code(&out), EXIT_OK);
    assert!(stderr(&out).contains("malformed"));
}

#[test]
fn unreachable_endpoint_exits_3_with_partial_artifacts() {
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let tmp = tempfile::tempdir().unwrap();
    let text = format!(
        "dataset_path = {:?}\nmetadata_path = {:?}\noutput_dir = \"out\"\nbackend = \"http_chat\"\n\
         endpoint = \"http://127.0.0.1:{port}/v1/chat/completions\"\nmodel_name = \"test\"\nrequest_timeout_secs = 2\n",
        data("balance_scale.csv"),
        data("balance_scale.json"),
    );
    let cfg = tmp.path().join("http.toml");
    fs::write(&cfg, text).unwrap();
    let out = run(&cfg, &[]);
    assert_eq!(code(&out), EXIT_UNREACHABLE, "{}", stderr(&out));
    let dir = tmp.path().join("out");
    for file in [cli::RESOLVED_CONFIG_FILE, cli::TRACE_FILE, cli::SNAPSHOT_FILE, cli::BEST_PROGRAM_FILE] {
        assert!(dir.join(file).is_file(), "missing {file}");
    }
    assert!(!dir.join(cli::SUMMARY_FILE).exists());
    let snapshot = fs::read_to_string(dir.join(cli::SNAPSHOT_FILE)).unwrap();
    assert!(snapshot.contains("def modify_features_v0"), "the seed survives in the buffer");
}

#[test]
fn noise_sweep_table_and_zero_noise_identity() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "n_splits = 2\nparallel_cells = true\n");
    let out = llmfe(&["noise-sweep", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), EXIT_OK, "{}", stderr(&out));
    let dir = tmp.path().join("out");
    let table = fs::read_to_string(dir.join("noise_sweep.csv")).unwrap();
    let rows: Vec<Vec<f64>> =
        table.lines().skip(1).map(|l| l.split(',').map(|c| c.parse().unwrap()).collect()).collect();
    assert_eq!(rows.iter().map(|r| r[0]).collect::<Vec<_>>(), vec![0.0, 0.01, 0.05, 0.1]);
    assert!(rows[3][1] <= rows[0][1], "noise cannot help the base model: {table}");

    let plain = tmp.path().join("plain");
    let out = run(&cfg, &["--output-dir", plain.to_str().unwrap()]);
    assert_eq!(code(&out), EXIT_OK, "{}", stderr(&out));
    assert_eq!(
        fs::read_to_string(dir.join("sigma_0").join(cli::SUMMARY_FILE)).unwrap(),
        fs::read_to_string(plain.join(cli::SUMMARY_FILE)).unwrap()
    );
    assert_eq!(
        fs::read_to_string(dir.join("sigma_0").join(cli::TRACE_FILE)).unwrap(),
        fs::read_to_string(plain.join(cli::TRACE_FILE)).unwrap()
    );
}

#[test]
fn ablate_writes_one_directory_per_setting() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "ablations = [\"none\", \"no_data_examples\"]\n");
    let out = llmfe(&["ablate", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), EXIT_OK, "{}", stderr(&out));
    let dir = tmp.path().join("out");
    let table = fs::read_to_string(dir.join("ablation.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    for label in ["none", "no_data_examples"] {
        assert_eq!(cli::read_summary(&dir.join(label)).unwrap().ablation, label);
    }
    let prompts = fs::read_to_string(dir.join("no_data_examples").join(cli::PROMPTS_FILE)).unwrap();
    assert!(!prompts.contains("Then Result is"));
}
