use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use llmfe::cli::{self, ReportFormat, EXIT_OK};
use llmfe::config::RunConfig;

#[derive(Parser)]
#[command(name = "llmfe", version, about = "Evolutionary feature engineering with a language-model proposer")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the multi-split protocol once.
    Run(ConfigArgs),
    /// Run the protocol once per entry of `ablations`.
    Ablate(ConfigArgs),
    /// Run the protocol once per entry of `noise_sigmas`.
    NoiseSweep(ConfigArgs),
    /// Compare result directories.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// TOML run configuration.
    config: PathBuf,
    /// `--key value` pairs overriding the file.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let code = match args.command {
        Command::Report { dirs, format } => {
            let format = match format {
                Format::Text => ReportFormat::Text,
                Format::Csv => ReportFormat::Csv,
            };
            match cli::cmd_report(&dirs, format) {
                Ok(table) => {
                    print!("{table}");
                    EXIT_OK
                }
                Err(e) => cli::report_error(&e),
            }
        }
        Command::Run(a) => with_config(&a, |cfg| {
            let art = cli::cmd_run(cfg)?;
            if let Some(s) = art.summary {
                println!("{}: base {:.4} ± {:.4}, llm-fe {:.4} ± {:.4} ({})", s.dataset, s.base_mean, s.base_std, s.llmfe_mean, s.llmfe_std, s.metric);
            }
            Ok(())
        }),
        Command::Ablate(a) => with_config(&a, |cfg| {
            for (label, s) in cli::cmd_ablate(cfg)? {
                println!("{label}: base {:.4} ± {:.4}, llm-fe {:.4} ± {:.4}", s.base_mean, s.base_std, s.llmfe_mean, s.llmfe_std);
            }
            Ok(())
        }),
        Command::NoiseSweep(a) => with_config(&a, |cfg| {
            for (sigma, s) in cli::cmd_noise_sweep(cfg)? {
                println!("sigma {sigma}: base {:.4} ± {:.4}, llm-fe {:.4} ± {:.4}", s.base_mean, s.base_std, s.llmfe_mean, s.llmfe_std);
            }
            Ok(())
        }),
    };
    ExitCode::from(code as u8)
}

fn with_config(a: &ConfigArgs, f: impl FnOnce(&RunConfig) -> Result<(), cli::CliError>) -> i32 {
    match RunConfig::load(Some(&a.config), &a.overrides).map_err(cli::CliError::from).and_then(|cfg| f(&cfg)) {
        Ok(()) => EXIT_OK,
        Err(e) => cli::report_error(&e),
    }
}
