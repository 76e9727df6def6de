//! Command-line front end: `gen`, `run` and `score`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use jfalc_core::io;
use jfalc_core::metrics::{clustering_accuracy_masked, matched_mse, to_db};

use crate::config::{Experiment, ExperimentConfig, Format};
use crate::report;
use crate::runner::{instance, run_experiment};
use crate::HarnessError;

#[derive(Debug, Parser)]
#[command(
    name = "jfalc",
    version,
    about = "Seeded experiments for joint factorization and latent clustering"
)]
pub struct Cli {
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Monte-Carlo trials per point (overrides the config).
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    /// Worker threads (overrides the config).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output file (`run`) or directory (`gen`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write one synthetic instance in the plain-text formats.
    Gen {
        /// TOML experiment config.
        config: Option<PathBuf>,
        /// Built-in experiment to use instead of a config file.
        #[arg(long, value_enum)]
        preset: Option<Experiment>,
        /// Index of the sweep point.
        #[arg(long, default_value_t = 0)]
        point: usize,
        /// Trial index; selects the instance seed.
        #[arg(long, default_value_t = 0)]
        trial: usize,
    },
    /// Run an experiment and emit per-trial results and aggregates.
    Run {
        /// TOML experiment config.
        config: Option<PathBuf>,
        /// Built-in experiment to use instead of a config file.
        #[arg(long, value_enum)]
        preset: Option<Experiment>,
        /// Output format (overrides the config).
        #[arg(long, value_enum)]
        format: Option<Format>,
        /// Record wall-clock runtimes (output is then not reproducible).
        #[arg(long)]
        timing: bool,
        /// Print the resolved config as TOML and exit.
        #[arg(long)]
        print_config: bool,
    },
    /// Score predicted labels (and optionally a factor estimate) against truth.
    Score {
        /// True labels, one per line.
        #[arg(long)]
        truth: PathBuf,
        /// Predicted labels, one per line.
        #[arg(long)]
        pred: PathBuf,
        /// 0/1 per point; points marked 1 are not scored.
        #[arg(long)]
        exclude: Option<PathBuf>,
        /// True factor matrix.
        #[arg(long, requires = "factor")]
        truth_factor: Option<PathBuf>,
        /// Estimated factor matrix, matched up to column permutation and scaling.
        #[arg(long, requires = "truth_factor")]
        factor: Option<PathBuf>,
    },
}

fn core_err(e: jfalc_core::Error) -> HarnessError {
    match e {
        jfalc_core::Error::Io { .. } => HarnessError::Runtime(e.to_string()),
        _ => HarnessError::Validation(e.to_string()),
    }
}

fn load(
    config: Option<&Path>,
    preset: Option<Experiment>,
) -> Result<ExperimentConfig, HarnessError> {
    match (config, preset) {
        (Some(_), Some(_)) => Err(HarnessError::Validation(
            "give either a config file or --preset, not both".into(),
        )),
        (None, None) => Err(HarnessError::Validation(
            "a config file or --preset is required".into(),
        )),
        (None, Some(p)) => Ok(ExperimentConfig::preset(p)),
        (Some(path), None) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                HarnessError::Validation(format!("cannot read {}: {e}", path.display()))
            })?;
            ExperimentConfig::from_toml(&text)
        }
    }
}

fn apply_globals(cli: &Cli, cfg: &mut ExperimentConfig) {
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.trials {
        cfg.trials = t;
    }
    if let Some(j) = cli.jobs {
        cfg.parallelism = j;
    }
}

fn emit(stdout: &mut dyn std::io::Write, text: &str) -> Result<(), HarnessError> {
    stdout
        .write_all(text.as_bytes())
        .map_err(|e| HarnessError::Runtime(format!("stdout: {e}")))
}

fn execute(cli: &Cli, stdout: &mut dyn std::io::Write) -> Result<(), HarnessError> {
    match &cli.command {
        Command::Gen {
            config,
            preset,
            point,
            trial,
        } => {
            let mut cfg = load(config.as_deref(), *preset)?;
            apply_globals(cli, &mut cfg);
            let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("instance"));
            let (synth, truth) = instance(&cfg, *point, *trial)?;
            synth.validate().map_err(core_err)?;
            let files = io::write_ground_truth(&dir, &truth)
                .map_err(|e| HarnessError::Runtime(e.to_string()))?;
            let params = toml::to_string(&synth).expect("synth serializes");
            report::write_file(&dir.join("params.toml"), &params)?;
            emit(
                stdout,
                &format!("wrote {} files to {}\n", files.len() + 1, dir.display()),
            )
        }
        Command::Run {
            config,
            preset,
            format,
            timing,
            print_config,
        } => {
            let mut cfg = load(config.as_deref(), *preset)?;
            apply_globals(cli, &mut cfg);
            if let Some(f) = format {
                cfg.output.format = *f;
            }
            if let Some(p) = &cli.out {
                cfg.output.path = Some(p.clone());
            }
            cfg.timing |= *timing;
            if *print_config {
                return emit(stdout, &cfg.to_toml());
            }
            let rep = run_experiment(&cfg)?;
            match (cfg.output.format, &cfg.output.path) {
                (Format::Json, None) => emit(stdout, &report::to_json(&rep)),
                (Format::Json, Some(p)) => report::write_file(p, &report::to_json(&rep)),
                (Format::Csv, None) => emit(stdout, &report::aggregates_csv(&rep)),
                (Format::Csv, Some(p)) => {
                    report::write_file(p, &report::aggregates_csv(&rep))?;
                    report::write_file(&report::trials_path(p), &report::trials_csv(&rep))
                }
            }
        }
        Command::Score {
            truth,
            pred,
            exclude,
            truth_factor,
            factor,
        } => {
            let t = io::read_labels(truth).map_err(core_err)?;
            let p = io::read_labels(pred).map_err(core_err)?;
            let excluded = match exclude {
                Some(path) => io::read_labels(path)
                    .map_err(core_err)?
                    .into_iter()
                    .map(|v| v != 0)
                    .collect(),
                None => vec![false; t.len()],
            };
            let accuracy = clustering_accuracy_masked(&t, &p, &excluded).map_err(core_err)?;
            let mut out = serde_json::json!({ "accuracy": accuracy });
            if let (Some(tf), Some(ef)) = (truth_factor, factor) {
                let w = io::read_matrix(tf).map_err(core_err)?;
                let e = io::read_matrix(ef).map_err(core_err)?;
                let mse = matched_mse(&w, &e).map_err(core_err)?;
                out["mse_linear"] = mse.into();
                out["mse_db"] = to_db(mse).into();
            }
            emit(stdout, &format!("{out}\n"))
        }
    }
}

/// Parses `args` and runs the command; returns the process exit code
/// (0 success, 1 validation error, 2 runtime failure).
pub fn main_with<I, T>(
    args: I,
    stdout: &mut dyn std::io::Write,
    stderr: &mut dyn std::io::Write,
) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = stderr.write_all(text.as_bytes());
                1
            } else {
                let _ = stdout.write_all(text.as_bytes());
                0
            };
        }
    };
    match execute(&cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = main_with(
            std::iter::once("jfalc").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn help_succeeds_and_bad_usage_is_a_validation_error() {
        assert_eq!(run(&["--help"]).0, 0);
        assert_eq!(run(&["frobnicate"]).0, 1);
        assert_eq!(run(&["run"]).0, 1);
        assert_eq!(run(&["run", "--preset", "table9"]).0, 1);
        assert_eq!(run(&["run", "--preset", "custom"]).0, 1);
    }

    #[test]
    fn print_config_applies_global_flags() {
        let (code, out, _) = run(&[
            "run",
            "--preset",
            "table6",
            "--trials",
            "3",
            "--seed",
            "9",
            "--print-config",
        ]);
        assert_eq!(code, 0);
        let cfg = ExperimentConfig::from_toml(&out).unwrap();
        assert_eq!(
            (cfg.trials, cfg.seed, cfg.experiment),
            (3, 9, Experiment::Table6)
        );
    }
}
