use std::collections::BTreeMap;

use mcmi_core::experiments::{
    aggregate, config_schema, run_experiment, run_few_shot, run_lambda_sweep, run_target_comparison,
    run_temperature_sweep, run_trajectory, run_zero_shot, CellStatus, ExperimentConfig, Scenario,
};
use mcmi_core::train::TrainConfig;

fn tiny(scenario: Scenario) -> ExperimentConfig {
    let train = TrainConfig {
        epochs: 2,
        batch_size: 16,
        lr0: 0.01,
        ..TrainConfig::default()
    };
    ExperimentConfig {
        scenario,
        num_classes: 3,
        dim: 4,
        sigma: 1.0,
        delta_mu: vec![1.0, 2.0],
        n: 300,
        teacher_hidden: vec![8],
        student_hidden: vec![6],
        finetune: TrainConfig::finetune_from(&train),
        student: train.clone(),
        pretrain: train,
        lambdas: vec![0.0, 0.1, 0.2],
        cmi_temperatures: vec![1.0, 2.0],
        teacher_temperatures: vec![1.0, 4.0],
        student_temperatures: vec![1.0],
        dropped_classes: vec![vec![2]],
        few_shot_alphas: vec![20.0, 100.0],
        trajectory_epochs: 6,
        widths: vec![4, 8],
        seeds: vec![0, 1],
        ..ExperimentConfig::default()
    }
}

fn settings(report: &mcmi_core::experiments::Report) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for c in &report.cells {
        if !out.contains(&c.setting) {
            out.push(c.setting.clone());
        }
    }
    out
}

#[test]
fn target_comparison_reports_every_column() {
    let report = run_target_comparison(&tiny(Scenario::TargetComparison), 1).unwrap();
    assert_eq!(report.cells.len(), 2 * 6 * 2);
    assert_eq!(
        settings(&report)[..6],
        ["delta=1/teacher_mll", "delta=1/teacher_mcmi", "delta=1/gt", "delta=1/mcmi", "delta=1/mll", "delta=1/onehot"]
    );
    assert_eq!(report.mean_of("delta=1/gt", "pdist"), Some(0.0));
    for a in &report.aggregates {
        assert_eq!(a.count + a.failed, 2);
    }
}

#[test]
fn zero_lambda_mcmi_column_matches_mll() {
    let cfg = ExperimentConfig {
        lambda_star: 0.0,
        finetune: TrainConfig {
            epochs: 1,
            lr0: 1e-12,
            ..tiny(Scenario::TargetComparison).finetune
        },
        ..tiny(Scenario::TargetComparison)
    };
    let report = run_experiment(&cfg, 1).unwrap();
    let mcmi = report.mean_of("delta=1/mcmi", "accuracy").unwrap();
    let mll = report.mean_of("delta=1/mll", "accuracy").unwrap();
    assert!((mcmi - mll).abs() < 0.02, "{mcmi} vs {mll}");
}

#[test]
fn lambda_sweep_has_one_row_per_lambda_and_a_best_lambda() {
    let report = run_lambda_sweep(&tiny(Scenario::LambdaSweep), 1).unwrap();
    assert_eq!(settings(&report), ["lambda=0", "lambda=0.1", "lambda=0.2"]);
    assert!([0.0, 0.1, 0.2].contains(&report.derived["lambda_star"]));

    let single = ExperimentConfig {
        lambdas: vec![0.05],
        ..tiny(Scenario::LambdaSweep)
    };
    let report = run_lambda_sweep(&single, 1).unwrap();
    assert_eq!(report.derived["lambda_star"], 0.05);
}

#[test]
fn zero_shot_one_hot_student_never_predicts_dropped_classes() {
    let report = run_zero_shot(&tiny(Scenario::ZeroShot), 1).unwrap();
    assert_eq!(report.mean_of("drop=2/onehot", "dropped_accuracy"), Some(0.0));
    assert!(report.mean_of("drop=2/mcmi", "preserved_accuracy").is_some());
    assert_eq!(report.series["confusion"].rows.len(), 2 * 3 * 9);
}

#[test]
fn few_shot_arms_share_their_subsets() {
    let report = run_few_shot(&tiny(Scenario::FewShot), 1).unwrap();
    let rows = &report.series["subsets"].rows;
    for alpha in ["20", "100"] {
        for seed in [0, 1] {
            let pick = |arm: &str| {
                rows.iter()
                    .find(|r| r.label == format!("alpha={alpha}/{arm}") && r.seed == seed)
                    .unwrap()
                    .values
                    .clone()
            };
            assert_eq!(pick("mll"), pick("mcmi"));
        }
    }
    assert_eq!(report.mean_of("alpha=100/mll", "train_size"), Some(270.0));
    assert!(report.mean_of("alpha=20/mll", "train_size").unwrap() < 60.0);
}

#[test]
fn temperature_sweep_emits_curves() {
    let report = run_temperature_sweep(&tiny(Scenario::TemperatureSweep), 1).unwrap();
    assert_eq!(report.series["cmi_vs_T"].rows.len(), 2 * 2 * 2);
    assert_eq!(report.series["student_acc_vs_T"].rows.len(), 2 * 2 * 2);
    assert!(report.mean_of("Tt=4/Ts=1/mcmi", "accuracy").is_some());
}

#[test]
fn trajectory_logs_every_epoch() {
    let report = run_trajectory(&tiny(Scenario::Trajectory), 1).unwrap();
    assert_eq!(report.series["trajectory"].rows.len(), 2 * 2 * 6);
    let peak = report.mean_of("width=8", "peak_cmi").unwrap();
    let last = report.mean_of("width=8", "final_cmi").unwrap();
    assert!(peak >= last);
    let short = ExperimentConfig {
        trajectory_epochs: 5,
        ..tiny(Scenario::Trajectory)
    };
    assert!(run_trajectory(&short, 1).unwrap_err().is_validation());
}

#[test]
fn diverging_cells_are_marked_not_dropped() {
    let mut cfg = tiny(Scenario::LambdaSweep);
    cfg.finetune.lr0 = 1e9;
    let report = run_experiment(&cfg, 1).unwrap();
    assert_eq!(report.cells.len(), 3 * 2);
    assert!(report.cells.iter().all(|c| matches!(c.status, CellStatus::Failed(_))));
    let agg = report.aggregate_for("lambda=0.1", "student_accuracy");
    assert!(agg.is_none() || agg.unwrap().mean.is_none());
    let csv = String::from_utf8(report.cells_csv().unwrap()).unwrap();
    assert_eq!(csv.matches("failed: training diverged").count(), 6);
}

#[test]
fn reruns_and_worker_counts_give_identical_files() {
    let cfg = tiny(Scenario::TargetComparison);
    let a = run_experiment(&cfg, 1).unwrap();
    let b = run_experiment(&cfg, 3).unwrap();
    assert_eq!(a.cells_csv().unwrap(), b.cells_csv().unwrap());
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    a.write(dir_a.path()).unwrap();
    b.write(dir_b.path()).unwrap();
    for f in ["cells.csv", "summary.json"] {
        assert_eq!(
            std::fs::read(dir_a.path().join(f)).unwrap(),
            std::fs::read(dir_b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn adding_a_seed_leaves_other_cells_alone() {
    let base = tiny(Scenario::LambdaSweep);
    let more = ExperimentConfig {
        seeds: vec![0, 1, 7],
        ..base.clone()
    };
    let a = run_experiment(&base, 1).unwrap();
    let b = run_experiment(&more, 1).unwrap();
    let of = |r: &mcmi_core::experiments::Report, seed| {
        r.cells.iter().filter(|c| c.seed == seed).cloned().collect::<Vec<_>>()
    };
    assert_eq!(of(&a, 0), of(&b, 0));
    assert_eq!(of(&a, 1), of(&b, 1));
}

#[test]
fn pooling_split_runs_equals_the_joint_run() {
    let joint = run_experiment(&tiny(Scenario::FewShot), 1).unwrap();
    let part = |seeds: Vec<u64>| {
        run_experiment(
            &ExperimentConfig {
                seeds,
                ..tiny(Scenario::FewShot)
            },
            1,
        )
        .unwrap()
    };
    let pooled = aggregate(&[part(vec![0]), part(vec![1])]).unwrap();
    assert_eq!(pooled, joint);
}

#[test]
fn published_schema_matches_the_config_type() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../schemas/experiment.schema.json");
    let published: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(published, config_schema());
}

#[test]
fn shipped_configs_resolve() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");
    let mut seen = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        let cfg = ExperimentConfig::resolve(Default::default(), Some(doc), &[]).unwrap();
        seen.insert(cfg.scenario, path);
    }
    for s in Scenario::ALL {
        assert!(seen.contains_key(&s), "no config for {}", s.name());
    }
}
