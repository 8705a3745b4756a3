use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use slscom_core::config::{ExperimentConfig, Mode};
use slscom_core::error::{Error, Result};
use slscom_core::eval::{self, emit_report, evaluate_checkpoint, finetune_only, load_run, pretrain_only, run_experiment, sweep};

/// Self-supervised semantic communication experiments.
#[derive(Parser)]
#[command(name = "slscom", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Self-supervised pre-training of the semantic encoder (first training repetition).
    Pretrain(Common),
    /// Fine-tune every training repetition and save checkpoints, without testing.
    Finetune(Common),
    /// Full run (pre-train if needed, fine-tune, test), or test a saved checkpoint.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Fine-tuned checkpoint to test instead of training.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Every mode at every labeled-set size, followed by tables and plots.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated modes.
        #[arg(long, value_delimiter = ',', default_value = "slscom,rscom")]
        modes: Vec<Mode>,
        /// Comma-separated labeled-set sizes.
        #[arg(long = "label-counts", value_delimiter = ',', default_value = "500,2000")]
        label_counts: Vec<usize>,
    },
    /// Tables and plots from finished run directories.
    Report {
        /// Run directories holding `runs.csv`.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// Config file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Preset used when no config file is given.
    #[arg(long, default_value = "desk")]
    preset: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "repeats-train")]
    repeats_train: Option<usize>,
    #[arg(long = "repeats-test")]
    repeats_test: Option<usize>,
    /// Output directory (defaults to the config's output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Config overrides as `--key value` pairs, e.g. `--mode rscom --labels 2000`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

impl Common {
    /// Known flags may also appear among the overrides, since everything after the
    /// first unknown flag is captured there.
    fn config(&self) -> Result<(ExperimentConfig, PathBuf)> {
        self.config_with(&[]).map(|(cfg, out, _)| (cfg, out))
    }

    /// Like `config`, but pairs whose key is in `extra` belong to the subcommand and are
    /// returned instead of applied.
    fn config_with(&self, extra: &[&str]) -> Result<(ExperimentConfig, PathBuf, Vec<(String, String)>)> {
        let mut pairs = vec![];
        let mut it = self.overrides.iter();
        while let Some(flag) = it.next() {
            let key = flag
                .strip_prefix("--")
                .ok_or_else(|| Error::UnknownKey(flag.clone()))?
                .replace('-', "_");
            let value = it.next().ok_or_else(|| Error::BadValue {
                key: key.clone(),
                value: String::new(),
                reason: "missing value".into(),
            })?;
            pairs.push((key, value.clone()));
        }
        let take = |name: &str| pairs.iter().rev().find(|(k, _)| k == name).map(|(_, v)| v.clone());
        let config = take("config").map(PathBuf::from).or_else(|| self.config.clone());
        let mut cfg = match &config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::from_preset(&take("preset").unwrap_or_else(|| self.preset.clone()))?,
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(r) = self.repeats_train {
            cfg.repeats_train = r;
        }
        if let Some(r) = self.repeats_test {
            cfg.repeats_test = r;
        }
        let mut rest = vec![];
        for (k, v) in &pairs {
            if extra.contains(&k.as_str()) {
                rest.push((k.clone(), v.clone()));
            } else if !matches!(k.as_str(), "config" | "out") && !(k == "preset" && config.is_none()) {
                cfg.set(k, v)?;
            }
        }
        let out = take("out").map(PathBuf::from).or_else(|| self.out.clone()).unwrap_or_else(|| cfg.output_dir.clone());
        Ok((cfg, out, rest))
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pretrain(c) => {
            let (cfg, out) = c.config()?;
            let trace = pretrain_only(&cfg, &out)?;
            if let (Some(first), Some(last)) = (trace.first(), trace.last()) {
                println!("L_c {:.4} -> {:.4} over {} steps", first.l_c, last.l_c, trace.len());
            }
            println!("encoder written to {}", out.join("pretrain_encoder.ckpt").display());
        }
        Command::Finetune(c) => {
            let (cfg, out) = c.config()?;
            for (t, o) in finetune_only(&cfg, &out)?.iter().enumerate() {
                let best = o.best_epoch.checked_sub(1).and_then(|e| o.val_acc.get(e)).copied().unwrap_or(0.0);
                println!("repetition {t}: best epoch {} (validation top-1 {best:.4})", o.best_epoch);
            }
        }
        Command::Evaluate { common, checkpoint } => {
            let (cfg, out) = common.config()?;
            let report = match checkpoint {
                Some(p) => evaluate_checkpoint(&cfg, &p, Some(&out))?,
                None => run_experiment(&cfg, Some(&out))?,
            };
            print_aggregate(&report.aggregate());
        }
        Command::Sweep { common, mut modes, mut label_counts } => {
            let (cfg, out, rest) = common.config_with(&["modes", "label_counts"])?;
            for (k, v) in rest {
                let bad = |reason: String| Error::BadValue {
                    key: k.clone(),
                    value: v.clone(),
                    reason,
                };
                if k == "modes" {
                    modes = v.split(',').map(|m| m.trim().parse::<Mode>().map_err(|e| bad(e.to_string()))).collect::<Result<_>>()?;
                } else {
                    label_counts = v.split(',').map(|n| n.trim().parse::<usize>().map_err(|e| bad(e.to_string()))).collect::<Result<_>>()?;
                }
            }
            let reports = sweep(&cfg, &modes, &label_counts, Some(&out))?;
            for r in &reports {
                print_aggregate(&r.aggregate());
            }
        }
        Command::Report { runs, out } => {
            let reports = runs.iter().map(|d| load_run(d)).collect::<Result<Vec<_>>>()?;
            let files = emit_report(&reports, &out)?;
            println!("{}", files.labels_table.display());
            println!("{}", files.snr_table.display());
            for p in files.plots {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn print_aggregate(rows: &[eval::AggregateRow]) {
    for r in rows {
        println!(
            "{:<10} labels={:<6} train_snr={:<5} test_snr={:<5} top1={:.4} +- {:.4} ({} runs)",
            r.mode.to_string(),
            r.labels,
            r.train_snr,
            r.test_snr,
            r.mean_top1,
            r.std_top1,
            r.runs
        );
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {e}", e.class_name());
            ExitCode::FAILURE
        }
    }
}
