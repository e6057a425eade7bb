use std::collections::BTreeSet;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::MlpSpec;
use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    TargetComparison,
    LambdaSweep,
    ZeroShot,
    FewShot,
    TemperatureSweep,
    Trajectory,
    RegularizerComparison,
}

impl Scenario {
    pub const ALL: [Scenario; 7] = [
        Scenario::TargetComparison,
        Scenario::LambdaSweep,
        Scenario::ZeroShot,
        Scenario::FewShot,
        Scenario::TemperatureSweep,
        Scenario::Trajectory,
        Scenario::RegularizerComparison,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::TargetComparison => "target_comparison",
            Scenario::LambdaSweep => "lambda_sweep",
            Scenario::ZeroShot => "zero_shot",
            Scenario::FewShot => "few_shot",
            Scenario::TemperatureSweep => "temperature_sweep",
            Scenario::Trajectory => "trajectory",
            Scenario::RegularizerComparison => "regularizer_comparison",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// The synthetic-task recipe at full size: N = 100k, 100 epochs.
    #[default]
    Full,
    /// N = 20k and 30 epochs, for CI.
    Smoke,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Profile::Full),
            "smoke" => Ok(Profile::Smoke),
            other => Err(Error::config("profile", format!("unknown profile {other:?}, expected full or smoke"))),
        }
    }
}

/// One experiment document. Every field has a default, so a file only
/// needs the keys it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub num_classes: usize,
    pub dim: usize,
    pub sigma: f64,
    /// Mean spacing values; scenarios other than target comparison use the first.
    pub delta_mu: Vec<f64>,
    /// Total samples before splitting.
    pub n: usize,
    /// Train / validation / test ratios.
    pub split: [f64; 3],
    pub teacher_hidden: Vec<usize>,
    pub student_hidden: Vec<usize>,
    /// Teacher pretraining. The `seed` field of each train config is
    /// replaced by a derived sub-seed.
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub student: TrainConfig,
    /// Weight of the CMI term for the MCMI teacher outside the lambda sweep.
    pub lambda_star: f64,
    pub lambdas: Vec<f64>,
    /// Temperatures at which teacher CMI is reported.
    pub cmi_temperatures: Vec<f64>,
    /// Teacher temperatures of the KD grid.
    pub teacher_temperatures: Vec<f64>,
    /// Student temperatures of the KD grid.
    pub student_temperatures: Vec<f64>,
    /// Weight of the KL term in grid distillation.
    pub kd_alpha: f64,
    pub dropped_classes: Vec<Vec<usize>>,
    /// Per-class retention percentages for few-shot students.
    pub few_shot_alphas: Vec<f64>,
    pub trajectory_epochs: usize,
    /// Hidden widths swept by the trajectory scenario.
    pub widths: Vec<usize>,
    pub label_smoothing: f64,
    pub entropy_beta: f64,
    pub seeds: Vec<u64>,
    pub master_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let pretrain = TrainConfig::default();
        ExperimentConfig {
            scenario: Scenario::TargetComparison,
            num_classes: 10,
            dim: 30,
            sigma: 4.0,
            delta_mu: vec![0.5, 1.0, 2.0, 4.0],
            n: 100_000,
            split: [0.9, 0.05, 0.05],
            teacher_hidden: vec![128, 128],
            student_hidden: vec![128, 128],
            finetune: TrainConfig::finetune_from(&pretrain),
            student: pretrain.clone(),
            pretrain,
            lambda_star: 0.15,
            lambdas: vec![0.0, 0.005, 0.01, 0.05, 0.1, 0.15, 0.2, 0.25],
            cmi_temperatures: (1..=8).map(f64::from).collect(),
            teacher_temperatures: (1..=8).map(f64::from).collect(),
            student_temperatures: vec![1.0, 2.0, 4.0],
            kd_alpha: 0.9,
            dropped_classes: vec![vec![0, 1], vec![0, 1, 2, 3, 4]],
            few_shot_alphas: vec![5.0, 10.0, 15.0, 25.0, 35.0, 50.0, 75.0],
            trajectory_epochs: 300,
            widths: vec![32, 128, 512],
            label_smoothing: 0.1,
            entropy_beta: 0.1,
            seeds: vec![0, 1, 2, 3, 4],
            master_seed: 0,
        }
    }
}

fn key_error(key: &str, reason: impl Into<String>) -> Error {
    Error::InvalidConfig {
        key: key.to_string(),
        reason: reason.into(),
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Applies `key.path=value` to `doc`. The value is read as JSON when it
/// parses, otherwise as a bare string.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| key_error(assignment, "override must look like key=value"))?;
    let key = key.trim();
    let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    let mut slot = &mut *doc;
    for part in key.split('.') {
        slot = match slot {
            Value::Object(map) => map.get_mut(part).ok_or_else(|| key_error(key, "no such key"))?,
            Value::Array(items) => {
                let i: usize = part.parse().map_err(|_| key_error(key, "expected an array index"))?;
                items.get_mut(i).ok_or_else(|| key_error(key, "array index out of range"))?
            }
            _ => return Err(key_error(key, "no such key")),
        };
    }
    *slot = value;
    Ok(())
}

impl ExperimentConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let mut cfg = ExperimentConfig::default();
        if profile == Profile::Smoke {
            cfg.n = 20_000;
            cfg.pretrain.epochs = 30;
            cfg.student.epochs = 30;
        }
        cfg
    }

    /// Builds a config from profile defaults, then the file document, then
    /// `key=value` overrides, and validates the result.
    pub fn resolve(profile: Profile, file: Option<Value>, overrides: &[String]) -> Result<Self> {
        let mut doc = serde_json::to_value(ExperimentConfig::for_profile(profile))?;
        if let Some(file) = file {
            if !file.is_object() {
                return Err(key_error("<root>", "config document must be a JSON object"));
            }
            merge(&mut doc, file);
        }
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(doc).map_err(|e| {
            let path = e.path().to_string();
            key_error(&path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(key_error("seeds", "must not be empty"));
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return Err(key_error("seeds", "must not repeat"));
        }
        if self.num_classes < 2 {
            return Err(key_error("num_classes", "must be at least 2"));
        }
        if self.dim == 0 {
            return Err(key_error("dim", "must be at least 1"));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(key_error("sigma", "must be positive"));
        }
        if self.delta_mu.is_empty() {
            return Err(key_error("delta_mu", "must not be empty"));
        }
        if self.delta_mu.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
            return Err(key_error("delta_mu", "entries must be finite and non-negative"));
        }
        if self.n == 0 {
            return Err(key_error("n", "must be at least 1"));
        }
        if self.split.iter().any(|r| !(*r >= 0.0)) || self.split[0] <= 0.0 {
            return Err(key_error("split", "ratios must be non-negative with a positive train share"));
        }
        if self.split[2] <= 0.0 {
            return Err(key_error("split", "the test share must be positive"));
        }
        for (key, hidden) in [("teacher_hidden", &self.teacher_hidden), ("student_hidden", &self.student_hidden)] {
            MlpSpec::new(self.dim, hidden.clone(), self.num_classes).map_err(|e| key_error(key, e.to_string()))?;
        }
        for (key, cfg) in [("pretrain", &self.pretrain), ("finetune", &self.finetune), ("student", &self.student)] {
            cfg.validate().map_err(|e| match e {
                Error::InvalidConfig { key: inner, reason } => key_error(&format!("{key}.{inner}"), reason),
                other => other,
            })?;
        }
        if !(self.lambda_star >= 0.0) || !self.lambda_star.is_finite() {
            return Err(key_error("lambda_star", "must be finite and non-negative"));
        }
        let positive = |key: &str, values: &[f64]| -> Result<()> {
            if values.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
                return Err(key_error(key, "entries must be positive and finite"));
            }
            Ok(())
        };
        positive("cmi_temperatures", &self.cmi_temperatures)?;
        positive("teacher_temperatures", &self.teacher_temperatures)?;
        positive("student_temperatures", &self.student_temperatures)?;
        if !(0.0..=1.0).contains(&self.kd_alpha) {
            return Err(key_error("kd_alpha", "must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(key_error("label_smoothing", "must lie in [0, 1)"));
        }
        if !(self.entropy_beta >= 0.0) || !self.entropy_beta.is_finite() {
            return Err(key_error("entropy_beta", "must be finite and non-negative"));
        }

        match self.scenario {
            Scenario::TargetComparison | Scenario::RegularizerComparison => {}
            Scenario::LambdaSweep => {
                if self.lambdas.is_empty() {
                    return Err(key_error("lambdas", "must not be empty"));
                }
                if self.lambdas.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
                    return Err(key_error("lambdas", "entries must be finite and non-negative"));
                }
            }
            Scenario::ZeroShot => {
                if self.dropped_classes.is_empty() {
                    return Err(key_error("dropped_classes", "must not be empty"));
                }
                for set in &self.dropped_classes {
                    let unique: BTreeSet<_> = set.iter().collect();
                    if set.is_empty() || unique.len() != set.len() {
                        return Err(key_error("dropped_classes", "each set must be non-empty without repeats"));
                    }
                    if set.iter().any(|&c| c >= self.num_classes) {
                        return Err(key_error("dropped_classes", "class index out of range"));
                    }
                    if set.len() >= self.num_classes {
                        return Err(key_error("dropped_classes", "cannot drop every class"));
                    }
                }
            }
            Scenario::FewShot => {
                if self.few_shot_alphas.is_empty()
                    || self.few_shot_alphas.iter().any(|a| !(*a > 0.0 && *a <= 100.0))
                {
                    return Err(key_error("few_shot_alphas", "entries must lie in (0, 100]"));
                }
            }
            Scenario::TemperatureSweep => {
                if self.cmi_temperatures.is_empty() || self.teacher_temperatures.is_empty() {
                    return Err(key_error("teacher_temperatures", "must not be empty"));
                }
            }
            Scenario::Trajectory => {
                if self.trajectory_epochs < 3 * self.pretrain.epochs {
                    return Err(key_error(
                        "trajectory_epochs",
                        format!("must be at least three times pretrain.epochs ({})", self.pretrain.epochs),
                    ));
                }
                if self.widths.is_empty() || self.widths.contains(&0) {
                    return Err(key_error("widths", "entries must be positive"));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    /// Hash of everything except the seed list, so runs over disjoint seed
    /// subsets of the same setting can be pooled.
    pub fn setting_hash(&self) -> String {
        ExperimentConfig {
            seeds: Vec::new(),
            ..self.clone()
        }
        .hash()
    }

    pub fn teacher_spec(&self) -> MlpSpec {
        MlpSpec::new(self.dim, self.teacher_hidden.clone(), self.num_classes).expect("validated")
    }

    pub fn student_spec(&self) -> MlpSpec {
        MlpSpec::new(self.dim, self.student_hidden.clone(), self.num_classes).expect("validated")
    }
}

/// JSON schema of the experiment document.
pub fn config_schema() -> Value {
    serde_json::to_value(schemars::schema_for!(ExperimentConfig)).expect("schema serializes")
}
