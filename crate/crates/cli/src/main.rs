mod logging;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use mcmi_core::data::{load_dataset, make_mixture, sample_dataset, save_dataset, LabeledDataset, SplitDataset, StoredData};
use mcmi_core::experiments::{config_schema, run_experiment, ExperimentConfig, Profile};
use mcmi_core::metrics::{evaluate, CSV_COLUMNS};
use mcmi_core::nn::checkpoint;
use mcmi_core::seeds::derive_seed;
use mcmi_core::train::{distill_student, finetune_mcmi, train_teacher_mll, DistillMode, TargetProvider, Telemetry, TrainConfig};
use mcmi_core::{Error, Result};

/// Teacher training by maximum conditional mutual information, and
/// distillation experiments on synthetic Gaussian mixtures.
#[derive(Parser, Debug)]
#[command(name = "mcmi", version)]
struct Cli {
    /// Raise stderr verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ProfileArg {
    Full,
    Smoke,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// Experiment config document (JSON). A summary.json from an earlier run
    /// is accepted and replays its recorded config.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one config key with a dotted path, e.g. `--set pretrain.epochs=5`.
    /// Values are parsed as JSON when possible. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Override the master seed all randomness derives from.
    #[arg(long, value_name = "S")]
    seed: Option<u64>,
    /// Defaults to start from before the file and overrides are applied.
    #[arg(long, value_enum, default_value = "full")]
    profile: ProfileArg,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Validation,
    Test,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    /// Pure soft-target cross entropy.
    Soft,
    /// Hinton KD: alpha T^2 KL + (1 - alpha) CE.
    Hinton,
    /// CE + gamma T^2 KL.
    Combined,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a Gaussian-mixture dataset (first delta_mu of the config) and write data.bin.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Train a teacher by maximum log-likelihood; writes teacher.ckpt and telemetry.csv.
    TrainTeacher {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Dataset file with a train/validation/test split.
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        /// Output directory.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Fine-tune a teacher with the CMI term and frozen class centroids; writes mcmi.ckpt.
    FinetuneMcmi {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Pretrained teacher checkpoint.
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
        /// Dataset file with a train/validation/test split.
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        /// Weight of the CMI term; defaults to the config's lambda_star.
        #[arg(long)]
        lambda: Option<f64>,
        /// Output directory.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Train a student against one-hot labels, a teacher, or the Bayes posterior; writes student.ckpt.
    Distill {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Dataset file with a train/validation/test split.
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        /// Teacher checkpoint supplying soft targets.
        #[arg(long, value_name = "PATH", conflicts_with = "oracle")]
        teacher: Option<PathBuf>,
        /// Use the dataset's Bayes posterior as targets.
        #[arg(long)]
        oracle: bool,
        /// Teacher temperature.
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        /// Student loss.
        #[arg(long, value_enum, default_value = "soft")]
        mode: ModeArg,
        /// KL weight for hinton mode.
        #[arg(long, default_value_t = 0.9)]
        alpha: f64,
        /// KL weight for combined mode.
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        /// Student temperature for hinton and combined modes.
        #[arg(long, default_value_t = 4.0)]
        student_temperature: f64,
        /// Output directory.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Print one metrics row for a model on a dataset.
    Eval {
        /// Model checkpoint.
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
        /// Dataset file.
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        /// Softmax temperature.
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        /// Split to evaluate when the file holds a train/validation/test split.
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Run an experiment scenario; writes cells.csv, summary.json and series CSVs.
    RunExperiment {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Maximum number of cells run in parallel.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Print the JSON schema of experiment config documents.
    Schema,
    /// Print the fully resolved experiment config.
    ShowConfig {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn invalid(key: &str, reason: impl Into<String>) -> Error {
    Error::InvalidConfig {
        key: key.to_string(),
        reason: reason.into(),
    }
}

fn require_file(flag: &str, path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(invalid(flag, format!("{} does not exist", path.display())))
    }
}

fn resolve_config(args: &ConfigArgs) -> Result<ExperimentConfig> {
    let profile = match args.profile {
        ProfileArg::Full => Profile::Full,
        ProfileArg::Smoke => Profile::Smoke,
    };
    let file = match &args.config {
        Some(path) => {
            require_file("--config", path)?;
            let text = fs::read_to_string(path)?;
            let mut doc: Value =
                serde_json::from_str(&text).map_err(|e| invalid("--config", format!("not valid JSON: {e}")))?;
            if let Some(recorded) = doc.get_mut("provenance").and_then(|p| p.get_mut("config")) {
                doc = recorded.take();
            }
            Some(doc)
        }
        None => None,
    };
    let mut overrides = args.overrides.clone();
    if let Some(seed) = args.seed {
        overrides.push(format!("master_seed={seed}"));
    }
    ExperimentConfig::resolve(profile, file, &overrides)
}

fn prepare_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    logging::attach_sidecar(&out.join("mcmi.log"))?;
    Ok(())
}

fn load_split(path: &Path) -> Result<(SplitDataset, Option<mcmi_core::data::GaussianMixtureSpec>)> {
    require_file("--data", path)?;
    let (header, data) = load_dataset(path)?;
    match data {
        StoredData::Split(split) => Ok((split, header.mixture())),
        StoredData::Single(_) => Err(invalid("--data", "needs a file with a train/validation/test split")),
    }
}

fn load_model(flag: &str, path: &Path) -> Result<checkpoint::Checkpoint> {
    require_file(flag, path)?;
    checkpoint::load(path)
}

fn with_seed(base: &TrainConfig, master: u64, purpose: &str) -> TrainConfig {
    TrainConfig {
        seed: derive_seed(master, purpose),
        ..base.clone()
    }
}

fn write_run(
    out: &Path,
    name: &str,
    params: &mcmi_core::nn::MlpParameters,
    seed: u64,
    telemetry: &Telemetry,
    test: &LabeledDataset,
    extra: Value,
) -> Result<()> {
    checkpoint::save(&out.join(format!("{name}.ckpt")), params, seed)?;
    fs::write(out.join("telemetry.csv"), telemetry.to_csv(seed)?)?;
    let test_metrics = evaluate(params, test, 1.0, None)?;
    let mut summary = json!({
        "model": format!("{name}.ckpt"),
        "seed": seed,
        "final_epoch": telemetry.last(),
        "test": test_metrics,
    });
    if let (Value::Object(s), Value::Object(e)) = (&mut summary, extra) {
        s.extend(e);
    }
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    fs::write(out.join("summary.json"), text)?;
    log::info!("{name}: test accuracy {:.4}", test_metrics.accuracy);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { cfg, out } => {
            let cfg = resolve_config(&cfg)?;
            prepare_out(&out)?;
            let delta = cfg.delta_mu[0];
            let mix = make_mixture(
                cfg.num_classes,
                cfg.dim,
                delta,
                cfg.sigma,
                derive_seed(cfg.master_seed, "means"),
            )?;
            let split = sample_dataset(&mix, cfg.n, cfg.split, derive_seed(cfg.master_seed, "samples"))?;
            let path = out.join("data.bin");
            save_dataset(&path, &StoredData::Split(split), Some(&mix))?;
            log::info!("wrote {}", path.display());
        }
        Command::TrainTeacher { cfg, data, out } => {
            let cfg = resolve_config(&cfg)?;
            let (split, _) = load_split(&data)?;
            prepare_out(&out)?;
            let train_cfg = TrainConfig {
                log_every: 1,
                ..with_seed(&cfg.pretrain, cfg.master_seed, "teacher")
            };
            let (params, telemetry) = train_teacher_mll(&split, &cfg.teacher_spec(), &train_cfg)?;
            write_run(&out, "teacher", &params, train_cfg.seed, &telemetry, &split.test, json!({ "config": cfg }))?;
        }
        Command::FinetuneMcmi {
            cfg,
            model,
            data,
            lambda,
            out,
        } => {
            let cfg = resolve_config(&cfg)?;
            let pretrained = load_model("--model", &model)?;
            let (split, _) = load_split(&data)?;
            prepare_out(&out)?;
            let lambda = lambda.unwrap_or(cfg.lambda_star);
            let train_cfg = TrainConfig {
                log_every: 1,
                ..with_seed(&cfg.finetune, cfg.master_seed, "finetune")
            };
            let ft = finetune_mcmi(&pretrained.params, &split.train, Some(&split.validation), lambda, &train_cfg)?;
            let extra = json!({
                "config": cfg,
                "lambda": lambda,
                "centroid_fingerprint": ft.centroids.fingerprint(),
            });
            write_run(&out, "mcmi", &ft.params, train_cfg.seed, &ft.telemetry, &split.test, extra)?;
        }
        Command::Distill {
            cfg,
            data,
            teacher,
            oracle,
            temperature,
            mode,
            alpha,
            gamma,
            student_temperature,
            out,
        } => {
            let cfg = resolve_config(&cfg)?;
            let (split, mixture) = load_split(&data)?;
            let provider = match (teacher, oracle) {
                (Some(path), _) => TargetProvider::teacher(load_model("--teacher", &path)?.params, temperature)
                    .map_err(|_| invalid("--temperature", "must be a positive finite number"))?,
                (None, true) => TargetProvider::BcpdOracle(
                    mixture.ok_or_else(|| invalid("--oracle", "the dataset file records no mixture means"))?,
                ),
                (None, false) => TargetProvider::OneHot,
            };
            let mode = match mode {
                ModeArg::Soft => DistillMode::SoftTarget,
                ModeArg::Hinton => DistillMode::Hinton {
                    alpha,
                    student_temperature,
                },
                ModeArg::Combined => DistillMode::Combined {
                    gamma,
                    student_temperature,
                },
            };
            prepare_out(&out)?;
            let train_cfg = TrainConfig {
                log_every: 1,
                ..with_seed(&cfg.student, cfg.master_seed, "student")
            };
            let (params, telemetry) = distill_student(&split, &cfg.student_spec(), &provider, &train_cfg, mode)?;
            write_run(&out, "student", &params, train_cfg.seed, &telemetry, &split.test, json!({ "config": cfg, "mode": mode }))?;
        }
        Command::Eval {
            model,
            data,
            temperature,
            split,
        } => {
            if !(temperature > 0.0) || !temperature.is_finite() {
                return Err(invalid("--temperature", "must be a positive finite number"));
            }
            let ckpt = load_model("--model", &model)?;
            require_file("--data", &data)?;
            let (header, stored) = load_dataset(&data)?;
            let (name, ds) = match (&stored, split) {
                (StoredData::Single(ds), _) => ("all", ds),
                (StoredData::Split(s), SplitArg::Train) => ("train", &s.train),
                (StoredData::Split(s), SplitArg::Validation) => ("validation", &s.validation),
                (StoredData::Split(s), SplitArg::Test) => ("test", &s.test),
            };
            let record = evaluate(&ckpt.params, ds, temperature, header.mixture().as_ref())?;
            println!("{}", CSV_COLUMNS.join(","));
            println!("{}", record.csv_row(name, ckpt.seed).join(","));
        }
        Command::RunExperiment { cfg, out, workers } => {
            let cfg = resolve_config(&cfg)?;
            if workers == 0 {
                return Err(invalid("--workers", "must be at least 1"));
            }
            prepare_out(&out)?;
            log::info!("running {} over seeds {:?}", cfg.scenario.name(), cfg.seeds);
            let report = run_experiment(&cfg, workers)?;
            report.write(&out)?;
            let failed = report.failed_cells().count();
            if failed > 0 {
                log::warn!("{failed} cell(s) failed; see cells.csv");
            }
        }
        Command::Schema => {
            println!("{}", serde_json::to_string_pretty(&config_schema())?);
        }
        Command::ShowConfig { cfg } => {
            println!("{}", serde_json::to_string_pretty(&resolve_config(&cfg)?)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    logging::init(cli.verbose);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            log::logger().flush();
            if e.is_validation() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
