//! Teacher training, MCMI fine-tuning with frozen centroids, and student
//! distillation, all driven by one mini-batch SGD loop.

mod config;
mod targets;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, SplitDataset};
use crate::error::{Error, Result};
use crate::metrics::{class_centroids, evaluate, predict_probs, ClassCentroids, MetricsRecord, CSV_COLUMNS};
use crate::nn::loss::{HeadRef, HeadScratch};
use crate::nn::{sgd_step, BatchWorkspace, MlpParameters, MlpSpec, OptimizerState, ParamGrads, Regularizer};
use crate::seeds::derive_seed;

pub use config::TrainConfig;
pub use targets::{make_target, TargetProvider};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryEntry {
    pub epoch: usize,
    pub lr: f64,
    /// Mean training loss over the epoch's mini-batches.
    pub loss: f64,
    pub train: MetricsRecord,
    pub eval: Option<MetricsRecord>,
    /// Fingerprint of the frozen centroids, for MCMI fine-tuning runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centroid_fingerprint: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub entries: Vec<TelemetryEntry>,
}

impl Telemetry {
    pub fn last(&self) -> Option<&TelemetryEntry> {
        self.entries.last()
    }

    pub fn train_series(&self, f: impl Fn(&MetricsRecord) -> f64) -> Vec<f64> {
        self.entries.iter().map(|e| f(&e.train)).collect()
    }

    /// One row per logged epoch and split: `epoch, lr, loss` followed by
    /// the metrics columns, with `run_id` naming the split.
    pub fn to_csv(&self, seed: u64) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["epoch", "lr", "loss"];
        header.extend(CSV_COLUMNS);
        w.write_record(&header)?;
        for e in &self.entries {
            let lead = [e.epoch.to_string(), e.lr.to_string(), e.loss.to_string()];
            let splits = std::iter::once(("train", &e.train)).chain(e.eval.as_ref().map(|r| ("validation", r)));
            for (name, record) in splits {
                w.write_record(lead.iter().cloned().chain(record.csv_row(name, seed)))?;
            }
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

/// Per-sample objective over a fixed training set.
enum Objective<'a> {
    OneHot,
    /// Row-major `(N, C)` targets aligned with the training rows.
    SoftTargets(&'a [f64]),
    Mcmi {
        lambda: f64,
        centroids: &'a ClassCentroids,
    },
    Hinton {
        teacher: &'a [f64],
        alpha: f64,
        temperature: f64,
    },
    Combined {
        teacher: &'a [f64],
        gamma: f64,
        temperature: f64,
    },
    Regularized(Regularizer),
}

impl Objective<'_> {
    fn head(&self, row: usize, label: usize, c: usize) -> HeadRef<'_> {
        fn slice(t: &[f64], row: usize, c: usize) -> &[f64] {
            &t[row * c..(row + 1) * c]
        }
        match *self {
            Objective::OneHot => HeadRef::OneHot(label),
            Objective::SoftTargets(t) => HeadRef::SoftTarget(slice(t, row, c)),
            Objective::Mcmi { lambda, centroids } => HeadRef::Mcmi {
                lambda,
                centroid: centroids.row(label),
                label,
            },
            Objective::Hinton {
                teacher,
                alpha,
                temperature,
            } => HeadRef::Hinton {
                teacher: slice(teacher, row, c),
                label,
                alpha,
                temperature,
            },
            Objective::Combined {
                teacher,
                gamma,
                temperature,
            } => HeadRef::Combined {
                teacher: slice(teacher, row, c),
                label,
                gamma,
                temperature,
            },
            Objective::Regularized(Regularizer::LabelSmoothing(epsilon)) => {
                HeadRef::LabelSmoothing { epsilon, label }
            }
            Objective::Regularized(Regularizer::Entropy(beta)) => HeadRef::Entropy { beta, label },
        }
    }
}

fn check_compatible(params: &MlpParameters, ds: &LabeledDataset) -> Result<()> {
    if params.input_dim() != ds.dim() {
        return Err(Error::DimensionMismatch {
            context: "model input vs dataset",
            expected: params.input_dim(),
            actual: ds.dim(),
        });
    }
    if params.num_classes() != ds.num_classes() {
        return Err(Error::DimensionMismatch {
            context: "model classes vs dataset",
            expected: params.num_classes(),
            actual: ds.num_classes(),
        });
    }
    if ds.is_empty() {
        return Err(Error::EmptyDataset("training set"));
    }
    Ok(())
}

/// Mini-batch SGD on `objective`. Shuffling draws from a stream seeded by
/// `cfg.seed`, so a run is fully determined by its inputs.
fn run_sgd(
    params: &mut MlpParameters,
    train: &LabeledDataset,
    eval_set: Option<&LabeledDataset>,
    cfg: &TrainConfig,
    objective: &Objective<'_>,
    fingerprint: Option<&str>,
) -> Result<Telemetry> {
    cfg.validate()?;
    check_compatible(params, train)?;
    let n = train.len();
    let d = train.dim();
    let c = train.num_classes();
    let batch = cfg.batch_size.min(n);

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "shuffle"));
    let mut order: Vec<usize> = (0..n).collect();
    let mut ws = BatchWorkspace::new(params, batch);
    let mut grads = ParamGrads::zeros_like(params);
    let mut opt = OptimizerState::new(params, cfg.momentum, cfg.lr0);
    let mut scratch = HeadScratch::new(c);
    let mut xb = vec![0.0; batch * d];
    let mut dz = vec![0.0; batch * c];
    let mut telemetry = Telemetry::default();

    for epoch in 0..cfg.epochs {
        opt.lr = cfg.lr_at(epoch);
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for idx in order.chunks(batch) {
            let rows = idx.len();
            for (dst, &i) in xb.chunks_exact_mut(d).zip(idx) {
                dst.copy_from_slice(train.row(i));
            }
            let logits = params.forward_batch(&xb[..rows * d], rows, &mut ws);
            let scale = 1.0 / rows as f64;
            let mut batch_loss = 0.0;
            for ((z, g), &i) in logits.chunks_exact(c).zip(dz.chunks_exact_mut(c)).zip(idx) {
                let head = objective.head(i, train.labels()[i], c);
                batch_loss += head.apply(z, g, &mut scratch);
                g.iter_mut().for_each(|v| *v *= scale);
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    loss: batch_loss,
                });
            }
            epoch_loss += batch_loss;
            params.backward_batch(&mut ws, &dz[..rows * c], &mut grads);
            sgd_step(params, &grads, &mut opt);
        }
        if !params.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: f64::NAN,
            });
        }
        let last = epoch + 1 == cfg.epochs;
        if last || (epoch + 1) % cfg.log_every == 0 {
            telemetry.entries.push(TelemetryEntry {
                epoch,
                lr: opt.lr,
                loss: epoch_loss / n as f64,
                train: evaluate(params, train, 1.0, None)?,
                eval: match eval_set {
                    Some(ds) if !ds.is_empty() => Some(evaluate(params, ds, 1.0, None)?),
                    _ => None,
                },
                centroid_fingerprint: fingerprint.map(str::to_owned),
            });
        }
    }
    Ok(telemetry)
}

fn fresh_params(spec: &MlpSpec, cfg: &TrainConfig) -> Result<MlpParameters> {
    MlpParameters::init(spec, derive_seed(cfg.seed, "init"))
}

/// Trains a teacher from scratch by minimizing one-hot cross entropy.
pub fn train_teacher_mll(split: &SplitDataset, spec: &MlpSpec, cfg: &TrainConfig) -> Result<(MlpParameters, Telemetry)> {
    let mut params = fresh_params(spec, cfg)?;
    let telemetry = run_sgd(
        &mut params,
        &split.train,
        Some(&split.validation),
        cfg,
        &Objective::OneHot,
        None,
    )?;
    Ok((params, telemetry))
}

/// Continues one-hot cross-entropy training from existing parameters.
pub fn continue_mll(
    pretrained: &MlpParameters,
    train: &LabeledDataset,
    eval_set: Option<&LabeledDataset>,
    cfg: &TrainConfig,
) -> Result<(MlpParameters, Telemetry)> {
    let mut params = pretrained.clone();
    let telemetry = run_sgd(&mut params, train, eval_set, cfg, &Objective::OneHot, None)?;
    Ok((params, telemetry))
}

#[derive(Debug, Clone)]
pub struct McmiFinetune {
    pub params: MlpParameters,
    pub telemetry: Telemetry,
    /// Centroids of the pretrained model, held fixed throughout.
    pub centroids: ClassCentroids,
}

/// MCMI fine-tuning: freeze the pretrained model's class centroids on
/// `train` (temperature 1), then minimize `-ln P[y] - lambda KL(P || Q^y)`.
pub fn finetune_mcmi(
    pretrained: &MlpParameters,
    train: &LabeledDataset,
    eval_set: Option<&LabeledDataset>,
    lambda: f64,
    cfg: &TrainConfig,
) -> Result<McmiFinetune> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::config("lambda", "must be finite and non-negative"));
    }
    check_compatible(pretrained, train)?;
    let probs = predict_probs(pretrained, train, 1.0)?;
    let centroids = class_centroids(&probs, train.labels(), train.num_classes())?;
    for y in 0..centroids.num_classes() {
        if centroids.is_present(y) {
            centroids.check_nondegenerate(y)?;
        }
    }
    let fingerprint = centroids.fingerprint();
    let mut params = pretrained.clone();
    let telemetry = run_sgd(
        &mut params,
        train,
        eval_set,
        cfg,
        &Objective::Mcmi {
            lambda,
            centroids: &centroids,
        },
        Some(&fingerprint),
    )?;
    debug_assert_eq!(centroids.fingerprint(), fingerprint);
    Ok(McmiFinetune {
        params,
        telemetry,
        centroids,
    })
}

/// Fine-tunes with a label-smoothing or entropy-regularized head.
pub fn finetune_regularized(
    pretrained: &MlpParameters,
    train: &LabeledDataset,
    eval_set: Option<&LabeledDataset>,
    regularizer: Regularizer,
    cfg: &TrainConfig,
) -> Result<(MlpParameters, Telemetry)> {
    crate::nn::loss_head_for_regularizer(regularizer, 0, train.num_classes())?;
    let mut params = pretrained.clone();
    let telemetry = run_sgd(
        &mut params,
        train,
        eval_set,
        cfg,
        &Objective::Regularized(regularizer),
        None,
    )?;
    Ok((params, telemetry))
}

/// How a student consumes its targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistillMode {
    /// Pure soft-target cross entropy against the provider.
    SoftTarget,
    /// `alpha T^2 KL(p^t || p^s_T) + (1 - alpha) CE`; the teacher side is
    /// softened by the provider's own temperature, the student side by
    /// `student_temperature`.
    Hinton { alpha: f64, student_temperature: f64 },
    /// `CE + gamma T^2 KL(p^t || p^s_T)`.
    Combined { gamma: f64, student_temperature: f64 },
}

/// Trains a fresh student on `split.train` against `provider`.
pub fn distill_student(
    split: &SplitDataset,
    spec: &MlpSpec,
    provider: &TargetProvider,
    cfg: &TrainConfig,
    mode: DistillMode,
) -> Result<(MlpParameters, Telemetry)> {
    if provider.is_one_hot() && mode != DistillMode::SoftTarget {
        return Err(Error::config(
            "distill.mode",
            "KD losses need a soft-target provider, not one-hot labels",
        ));
    }
    let mut params = fresh_params(spec, cfg)?;
    check_compatible(&params, &split.train)?;
    let targets;
    let objective = match (provider, mode) {
        (TargetProvider::OneHot, _) => Objective::OneHot,
        (_, DistillMode::SoftTarget) => {
            targets = provider.targets_for(&split.train)?;
            Objective::SoftTargets(&targets)
        }
        (_, DistillMode::Hinton { alpha, student_temperature }) => {
            if !(0.0..=1.0).contains(&alpha) {
                return Err(Error::config("alpha", "must lie in [0, 1]"));
            }
            if !(student_temperature > 0.0) {
                return Err(Error::config("student_temperature", "must be positive"));
            }
            targets = provider.targets_for(&split.train)?;
            Objective::Hinton {
                teacher: &targets,
                alpha,
                temperature: student_temperature,
            }
        }
        (_, DistillMode::Combined { gamma, student_temperature }) => {
            if !(gamma >= 0.0) {
                return Err(Error::config("gamma", "must be non-negative"));
            }
            if !(student_temperature > 0.0) {
                return Err(Error::config("student_temperature", "must be positive"));
            }
            targets = provider.targets_for(&split.train)?;
            Objective::Combined {
                teacher: &targets,
                gamma,
                temperature: student_temperature,
            }
        }
    };
    let telemetry = run_sgd(
        &mut params,
        &split.train,
        Some(&split.validation),
        cfg,
        &objective,
        None,
    )?;
    Ok((params, telemetry))
}
