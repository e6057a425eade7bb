use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::data::{drop_classes, make_mixture, sample_dataset, subsample_per_class, GaussianMixtureSpec, SplitDataset};
use crate::error::{Error, Result};
use crate::experiments::config::{ExperimentConfig, Scenario};
use crate::experiments::report::{CellRecord, Report, Series, SeriesRow};
use crate::metrics::{evaluate, pdist, MetricsRecord};
use crate::nn::{MlpParameters, MlpSpec, Regularizer};
use crate::seeds::derive_seed;
use crate::train::{
    distill_student, finetune_mcmi, finetune_regularized, train_teacher_mll, DistillMode, TargetProvider, TrainConfig,
};

/// One independent unit of work.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Cell {
    Delta { delta: f64, seed: u64 },
    Seed(u64),
    Width { width: usize, seed: u64 },
}

impl Cell {
    fn seed(&self) -> u64 {
        match *self {
            Cell::Delta { seed, .. } | Cell::Seed(seed) | Cell::Width { seed, .. } => seed,
        }
    }
}

#[derive(Default)]
struct CellOutput {
    records: Vec<CellRecord>,
    series: Vec<(&'static str, SeriesRow)>,
}

impl CellOutput {
    fn record(&mut self, setting: String, seed: u64, metrics: impl IntoIterator<Item = (&'static str, f64)>) {
        self.records.push(CellRecord::ok(setting, seed, metrics));
    }

    fn row(&mut self, series: &'static str, label: impl Into<String>, seed: u64, values: Vec<f64>) {
        self.series.push((
            series,
            SeriesRow {
                label: label.into(),
                seed,
                values,
            },
        ));
    }
}

struct Runner<'a> {
    cfg: &'a ExperimentConfig,
}

fn fmt_set(set: &[usize]) -> String {
    set.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")
}

/// Teacher pair shared by several scenarios.
struct Teachers {
    mll: MlpParameters,
    mcmi: MlpParameters,
}

impl<'a> Runner<'a> {
    fn data_key(&self, delta: f64, seed: u64) -> String {
        format!("delta={delta}/seed={seed}")
    }

    fn sub_seed(&self, key: &str, purpose: &str) -> u64 {
        derive_seed(derive_seed(self.cfg.master_seed, key), purpose)
    }

    fn data(&self, delta: f64, seed: u64) -> Result<(GaussianMixtureSpec, SplitDataset)> {
        let key = self.data_key(delta, seed);
        let c = self.cfg;
        let mix = make_mixture(c.num_classes, c.dim, delta, c.sigma, self.sub_seed(&key, "means"))?;
        let split = sample_dataset(&mix, c.n, c.split, self.sub_seed(&key, "samples"))?;
        Ok((mix, split))
    }

    /// `base` with a derived seed and telemetry only after the last epoch.
    fn train_cfg(&self, base: &TrainConfig, key: &str, purpose: &str) -> TrainConfig {
        TrainConfig {
            seed: self.sub_seed(key, purpose),
            log_every: base.epochs,
            ..base.clone()
        }
    }

    fn teachers(&self, key: &str, split: &SplitDataset) -> Result<Teachers> {
        let (mll, _) = train_teacher_mll(split, &self.cfg.teacher_spec(), &self.train_cfg(&self.cfg.pretrain, key, "teacher"))?;
        let mcmi = finetune_mcmi(
            &mll,
            &split.train,
            None,
            self.cfg.lambda_star,
            &self.train_cfg(&self.cfg.finetune, key, "finetune"),
        )?
        .params;
        Ok(Teachers { mll, mcmi })
    }

    fn student(
        &self,
        key: &str,
        split: &SplitDataset,
        provider: &TargetProvider,
        mode: DistillMode,
    ) -> Result<MlpParameters> {
        let cfg = self.train_cfg(&self.cfg.student, key, "student");
        Ok(distill_student(split, &self.cfg.student_spec(), provider, &cfg, mode)?.0)
    }

    fn teacher_metrics(&self, model: &MlpParameters, split: &SplitDataset, mix: &GaussianMixtureSpec) -> Result<[(&'static str, f64); 4]> {
        let train = evaluate(model, &split.train, 1.0, Some(mix))?;
        let test = evaluate(model, &split.test, 1.0, None)?;
        Ok([
            ("accuracy", test.accuracy),
            ("cmi_emp", train.cmi_emp),
            ("ll_emp", train.ll_emp),
            ("pdist", train.pdist.unwrap_or(f64::NAN)),
        ])
    }

    fn cells(&self) -> Vec<Cell> {
        let c = self.cfg;
        match c.scenario {
            Scenario::TargetComparison => c
                .delta_mu
                .iter()
                .flat_map(|&delta| c.seeds.iter().map(move |&seed| Cell::Delta { delta, seed }))
                .collect(),
            Scenario::Trajectory => c
                .widths
                .iter()
                .flat_map(|&width| c.seeds.iter().map(move |&seed| Cell::Width { width, seed }))
                .collect(),
            _ => c.seeds.iter().map(|&s| Cell::Seed(s)).collect(),
        }
    }

    /// Settings a cell reports, so a failed cell can be marked under each.
    fn settings(&self, cell: Cell) -> Vec<String> {
        let c = self.cfg;
        match (c.scenario, cell) {
            (Scenario::TargetComparison, Cell::Delta { delta, .. }) => {
                ["teacher_mll", "teacher_mcmi", "gt", "mcmi", "mll", "onehot"]
                    .iter()
                    .map(|s| format!("delta={delta}/{s}"))
                    .collect()
            }
            (Scenario::LambdaSweep, _) => c.lambdas.iter().map(|l| format!("lambda={l}")).collect(),
            (Scenario::ZeroShot, _) => c
                .dropped_classes
                .iter()
                .flat_map(|set| ["onehot", "mll", "mcmi"].map(|arm| format!("drop={}/{arm}", fmt_set(set))))
                .collect(),
            (Scenario::FewShot, _) => c
                .few_shot_alphas
                .iter()
                .flat_map(|a| ["mll", "mcmi"].map(|arm| format!("alpha={a}/{arm}")))
                .collect(),
            (Scenario::TemperatureSweep, _) => {
                let mut out = Vec::new();
                for arm in ["mll", "mcmi"] {
                    for t in &c.cmi_temperatures {
                        out.push(format!("cmi/{arm}/T={t}"));
                    }
                }
                for tt in &c.teacher_temperatures {
                    for ts in &c.student_temperatures {
                        for arm in ["mll", "mcmi"] {
                            out.push(format!("Tt={tt}/Ts={ts}/{arm}"));
                        }
                    }
                }
                out
            }
            (Scenario::Trajectory, Cell::Width { width, .. }) => vec![format!("width={width}")],
            (Scenario::RegularizerComparison, _) => ["mll", "mcmi", "label_smoothing", "entropy"]
                .iter()
                .map(|s| format!("teacher/{s}"))
                .collect(),
            _ => unreachable!("cell shape follows the scenario"),
        }
    }

    fn run_cell(&self, cell: Cell) -> Result<CellOutput> {
        log::info!("{} cell {:?}", self.cfg.scenario.name(), cell);
        match (self.cfg.scenario, cell) {
            (Scenario::TargetComparison, Cell::Delta { delta, seed }) => self.target_comparison(delta, seed),
            (Scenario::LambdaSweep, Cell::Seed(seed)) => self.lambda_sweep(seed),
            (Scenario::ZeroShot, Cell::Seed(seed)) => self.zero_shot(seed),
            (Scenario::FewShot, Cell::Seed(seed)) => self.few_shot(seed),
            (Scenario::TemperatureSweep, Cell::Seed(seed)) => self.temperature_sweep(seed),
            (Scenario::Trajectory, Cell::Width { width, seed }) => self.trajectory(width, seed),
            (Scenario::RegularizerComparison, Cell::Seed(seed)) => self.regularizer_comparison(seed),
            _ => unreachable!("cell shape follows the scenario"),
        }
    }

    fn target_comparison(&self, delta: f64, seed: u64) -> Result<CellOutput> {
        let key = self.data_key(delta, seed);
        let (mix, split) = self.data(delta, seed)?;
        let teachers = self.teachers(&key, &split)?;
        let mut out = CellOutput::default();
        out.record(format!("delta={delta}/teacher_mll"), seed, self.teacher_metrics(&teachers.mll, &split, &mix)?);
        out.record(format!("delta={delta}/teacher_mcmi"), seed, self.teacher_metrics(&teachers.mcmi, &split, &mix)?);

        let bcpd = mix.bcpd_batch(split.train.inputs());
        let providers = [
            ("gt", TargetProvider::BcpdOracle(mix.clone())),
            ("mcmi", TargetProvider::teacher(teachers.mcmi, 1.0)?),
            ("mll", TargetProvider::teacher(teachers.mll, 1.0)?),
            ("onehot", TargetProvider::OneHot),
        ];
        for (name, provider) in &providers {
            let targets = provider.targets_for(&split.train)?;
            let target_pdist = pdist(&targets, &bcpd, self.cfg.num_classes)?;
            let student = self.student(&key, &split, provider, DistillMode::SoftTarget)?;
            let test = evaluate(&student, &split.test, 1.0, None)?;
            out.record(
                format!("delta={delta}/{name}"),
                seed,
                [
                    ("accuracy", test.accuracy),
                    ("pdist", target_pdist),
                    ("ll_emp", test.ll_emp),
                    ("cmi_emp", test.cmi_emp),
                ],
            );
        }
        Ok(out)
    }

    fn lambda_sweep(&self, seed: u64) -> Result<CellOutput> {
        let delta = self.cfg.delta_mu[0];
        let key = self.data_key(delta, seed);
        let (mix, split) = self.data(delta, seed)?;
        let (mll, _) = train_teacher_mll(&split, &self.cfg.teacher_spec(), &self.train_cfg(&self.cfg.pretrain, &key, "teacher"))?;
        let mut out = CellOutput::default();
        for &lambda in &self.cfg.lambdas {
            let teacher = finetune_mcmi(&mll, &split.train, None, lambda, &self.train_cfg(&self.cfg.finetune, &key, "finetune"))?.params;
            let [acc, cmi, ll, pd] = self.teacher_metrics(&teacher, &split, &mix)?;
            let provider = TargetProvider::teacher(teacher, 1.0)?;
            let student = self.student(&key, &split, &provider, DistillMode::SoftTarget)?;
            let test = evaluate(&student, &split.test, 1.0, None)?;
            out.record(
                format!("lambda={lambda}"),
                seed,
                [
                    ("teacher_accuracy", acc.1),
                    ("teacher_cmi", cmi.1),
                    ("teacher_ll", ll.1),
                    ("teacher_pdist", pd.1),
                    ("student_accuracy", test.accuracy),
                ],
            );
        }
        Ok(out)
    }

    fn zero_shot(&self, seed: u64) -> Result<CellOutput> {
        let delta = self.cfg.delta_mu[0];
        let key = self.data_key(delta, seed);
        let (_, split) = self.data(delta, seed)?;
        let teachers = self.teachers(&key, &split)?;
        let providers = [
            ("onehot", TargetProvider::OneHot),
            ("mll", TargetProvider::teacher(teachers.mll, 1.0)?),
            ("mcmi", TargetProvider::teacher(teachers.mcmi, 1.0)?),
        ];
        let mut out = CellOutput::default();
        for set in &self.cfg.dropped_classes {
            let dropped: BTreeSet<usize> = set.iter().copied().collect();
            let preserved: Vec<usize> = (0..self.cfg.num_classes).filter(|c| !dropped.contains(c)).collect();
            let reduced = SplitDataset {
                train: drop_classes(&split.train, &dropped)?,
                validation: drop_classes(&split.validation, &dropped)?,
                test: split.test.clone(),
            };
            for (arm, provider) in &providers {
                let setting = format!("drop={}/{arm}", fmt_set(set));
                let student = self.student(&key, &reduced, provider, DistillMode::SoftTarget)?;
                let test = evaluate(&student, &split.test, 1.0, None)?;
                out.record(
                    setting.clone(),
                    seed,
                    [
                        ("accuracy", test.accuracy),
                        ("dropped_accuracy", test.accuracy_on(set)),
                        ("preserved_accuracy", test.accuracy_on(&preserved)),
                    ],
                );
                for (i, row) in test.confusion.iter().enumerate() {
                    for (j, &rate) in row.iter().enumerate() {
                        out.row("confusion", setting.clone(), seed, vec![i as f64, j as f64, rate]);
                    }
                }
            }
        }
        Ok(out)
    }

    fn few_shot(&self, seed: u64) -> Result<CellOutput> {
        let delta = self.cfg.delta_mu[0];
        let key = self.data_key(delta, seed);
        let (_, split) = self.data(delta, seed)?;
        let teachers = self.teachers(&key, &split)?;
        let providers = [
            ("mll", TargetProvider::teacher(teachers.mll, 1.0)?),
            ("mcmi", TargetProvider::teacher(teachers.mcmi, 1.0)?),
        ];
        let mut out = CellOutput::default();
        for &alpha in &self.cfg.few_shot_alphas {
            // Both arms train on this one subset.
            let subset = SplitDataset {
                train: subsample_per_class(&split.train, alpha, self.sub_seed(&key, &format!("subsample/alpha={alpha}")))?,
                ..split.clone()
            };
            let checksum = subset.train.checksum();
            for (arm, provider) in &providers {
                let student = self.student(&key, &subset, provider, DistillMode::SoftTarget)?;
                let test = evaluate(&student, &split.test, 1.0, None)?;
                out.record(
                    format!("alpha={alpha}/{arm}"),
                    seed,
                    [("accuracy", test.accuracy), ("train_size", subset.train.len() as f64)],
                );
                let prefix = u64::from_str_radix(&checksum[..12], 16).expect("hex digest") as f64;
                out.row("subsets", format!("alpha={alpha}/{arm}"), seed, vec![subset.train.len() as f64, prefix]);
            }
        }
        Ok(out)
    }

    fn temperature_sweep(&self, seed: u64) -> Result<CellOutput> {
        let c = self.cfg;
        let delta = c.delta_mu[0];
        let key = self.data_key(delta, seed);
        let (_, split) = self.data(delta, seed)?;
        let teachers = self.teachers(&key, &split)?;
        let arms = [("mll", &teachers.mll), ("mcmi", &teachers.mcmi)];
        let mut out = CellOutput::default();
        for (arm, teacher) in arms {
            for &t in &c.cmi_temperatures {
                let r = evaluate(teacher, &split.train, t, None)?;
                out.record(
                    format!("cmi/{arm}/T={t}"),
                    seed,
                    [("cmi_emp", r.cmi_emp), ("ll_emp", r.ll_emp), ("mean_entropy", r.mean_entropy)],
                );
                out.row("cmi_vs_T", arm, seed, vec![t, r.cmi_emp, r.ll_emp, r.mean_entropy]);
            }
        }
        for &tt in &c.teacher_temperatures {
            for &ts in &c.student_temperatures {
                for (arm, teacher) in arms {
                    let provider = TargetProvider::teacher(teacher.clone(), tt)?;
                    let mode = DistillMode::Hinton {
                        alpha: c.kd_alpha,
                        student_temperature: ts,
                    };
                    let student = self.student(&key, &split, &provider, mode)?;
                    let test = evaluate(&student, &split.test, 1.0, None)?;
                    out.record(format!("Tt={tt}/Ts={ts}/{arm}"), seed, [("accuracy", test.accuracy)]);
                    out.row("student_acc_vs_T", arm, seed, vec![tt, ts, test.accuracy]);
                }
            }
        }
        Ok(out)
    }

    fn trajectory(&self, width: usize, seed: u64) -> Result<CellOutput> {
        let c = self.cfg;
        let delta = c.delta_mu[0];
        let key = self.data_key(delta, seed);
        let (_, split) = self.data(delta, seed)?;
        let spec = MlpSpec::new(c.dim, vec![width; c.teacher_hidden.len()], c.num_classes)?;
        let cfg = TrainConfig {
            epochs: c.trajectory_epochs,
            log_every: 1,
            ..self.train_cfg(&c.pretrain, &key, &format!("trajectory/width={width}"))
        };
        let (model, telemetry) = train_teacher_mll(&split, &spec, &cfg)?;
        let label = format!("width={width}");
        let mut out = CellOutput::default();
        for e in &telemetry.entries {
            let val = e.eval.as_ref().map_or(f64::NAN, |r| r.accuracy);
            out.row(
                "trajectory",
                label.clone(),
                seed,
                vec![e.epoch as f64, e.train.cmi_emp, e.train.ll_emp, e.train.accuracy, val],
            );
        }
        let cmi = telemetry.train_series(|r| r.cmi_emp);
        let ll = telemetry.train_series(|r| r.ll_emp);
        let (peak_epoch, peak_cmi) = cmi
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
        let test = evaluate(&model, &split.test, 1.0, None)?;
        out.record(
            label,
            seed,
            [
                ("final_cmi", *cmi.last().expect("at least one epoch")),
                ("peak_cmi", peak_cmi),
                ("peak_epoch", telemetry.entries[peak_epoch].epoch as f64),
                ("final_ll", *ll.last().expect("at least one epoch")),
                ("max_ll", ll.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
                ("test_accuracy", test.accuracy),
            ],
        );
        Ok(out)
    }

    fn regularizer_comparison(&self, seed: u64) -> Result<CellOutput> {
        let c = self.cfg;
        let delta = c.delta_mu[0];
        let key = self.data_key(delta, seed);
        let (_, split) = self.data(delta, seed)?;
        let (mll, _) = train_teacher_mll(&split, &c.teacher_spec(), &self.train_cfg(&c.pretrain, &key, "teacher"))?;
        let ft = self.train_cfg(&c.finetune, &key, "finetune");
        let mcmi = finetune_mcmi(&mll, &split.train, None, c.lambda_star, &ft)?.params;
        let ls = finetune_regularized(&mll, &split.train, None, Regularizer::LabelSmoothing(c.label_smoothing), &ft)?.0;
        let ent = finetune_regularized(&mll, &split.train, None, Regularizer::Entropy(c.entropy_beta), &ft)?.0;
        let mut out = CellOutput::default();
        for (name, model) in [("mll", &mll), ("mcmi", &mcmi), ("label_smoothing", &ls), ("entropy", &ent)] {
            let train: MetricsRecord = evaluate(model, &split.train, 1.0, None)?;
            let test = evaluate(model, &split.test, 1.0, None)?;
            out.record(
                format!("teacher/{name}"),
                seed,
                [
                    ("cmi_emp", train.cmi_emp),
                    ("ll_emp", train.ll_emp),
                    ("mean_entropy", train.mean_entropy),
                    ("accuracy", test.accuracy),
                ],
            );
        }
        Ok(out)
    }
}

fn series_layout(name: &str) -> (&'static str, &'static [&'static str]) {
    match name {
        "confusion" => ("setting", &["true_class", "predicted_class", "rate"]),
        "subsets" => ("setting", &["train_size", "checksum_prefix"]),
        "cmi_vs_T" => ("teacher", &["T", "cmi_emp", "ll_emp", "mean_entropy"]),
        "student_acc_vs_T" => ("teacher", &["T_teacher", "T_student", "accuracy"]),
        "trajectory" => ("model", &["epoch", "cmi_emp", "ll_emp", "train_accuracy", "validation_accuracy"]),
        other => unreachable!("unknown series {other}"),
    }
}

/// Runs every cell of `cfg`'s scenario on up to `workers` threads. A cell
/// that errors is reported as failed under each of its settings; the run
/// itself only errors on configuration problems.
pub fn run_experiment(cfg: &ExperimentConfig, workers: usize) -> Result<Report> {
    cfg.validate()?;
    let runner = Runner { cfg };
    let cells = runner.cells();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::config("workers", e.to_string()))?;
    let outputs: Vec<(Cell, Result<CellOutput>)> =
        pool.install(|| cells.par_iter().map(|&cell| (cell, runner.run_cell(cell))).collect());

    let mut records = Vec::new();
    let mut series: BTreeMap<String, Series> = BTreeMap::new();
    for (cell, output) in outputs {
        match output {
            Ok(out) => {
                records.extend(out.records);
                for (name, row) in out.series {
                    let (label_column, columns) = series_layout(name);
                    series
                        .entry(name.to_string())
                        .or_insert_with(|| Series {
                            label_column: label_column.to_string(),
                            columns: columns.iter().map(|c| c.to_string()).collect(),
                            rows: Vec::new(),
                        })
                        .rows
                        .push(row);
                }
            }
            Err(e) => {
                log::warn!("cell {cell:?} failed: {e}");
                for setting in runner.settings(cell) {
                    records.push(CellRecord::failed(setting, cell.seed(), e.to_string()));
                }
            }
        }
    }
    Ok(Report::assemble(cfg, records, series))
}

pub fn run_target_comparison(cfg: &ExperimentConfig, workers: usize) -> Result<Report> {
    run_scenario(cfg, Scenario::TargetComparison, workers)
}

pub fn run_lambda_sweep(cfg: &ExperimentConfig, workers: usize) -> Result<Report> {
    run_scenario(cfg, Scenario::LambdaSweep, workers)
}

pub fn run_zero_shot(cfg: &ExperimentConfig, workers: usize) -> Result<Report> {
    run_scenario(cfg, Scenario::ZeroShot, workers)
}

pub fn run_few_shot(cfg: &ExperimentConfig, workers: usize) -> Result<Report> {
    run_scenario(cfg, Scenario::FewShot, workers)
}

pub fn run_temperature_sweep(cfg: &ExperimentConfig, workers: usize) -> Result<Report> {
    run_scenario(cfg, Scenario::TemperatureSweep, workers)
}

pub fn run_trajectory(cfg: &ExperimentConfig, workers: usize) -> Result<Report> {
    run_scenario(cfg, Scenario::Trajectory, workers)
}

pub fn run_regularizer_comparison(cfg: &ExperimentConfig, workers: usize) -> Result<Report> {
    run_scenario(cfg, Scenario::RegularizerComparison, workers)
}

fn run_scenario(cfg: &ExperimentConfig, scenario: Scenario, workers: usize) -> Result<Report> {
    let cfg = ExperimentConfig {
        scenario,
        ..cfg.clone()
    };
    run_experiment(&cfg, workers)
}
