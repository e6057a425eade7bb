//! Scalar diagnostics of a classifier on a labelled set.

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::data::{GaussianMixtureSpec, LabeledDataset};
use crate::error::{Error, Result};
use crate::metrics::centroids::{check_predictions, class_centroids, ClassCentroids};
use crate::nn::MlpParameters;
use crate::simplex::{argmax, entropy_slice, floored_ln, kl_slice, softmax_into, CompensatedSum};

/// Empirical CMI: `(1/N) sum_j KL(P_j || Q^{y_j})`, normalized by the global
/// sample count.
pub fn cmi_emp(probs: &[f64], labels: &[usize], centroids: &ClassCentroids) -> Result<f64> {
    let c = centroids.num_classes();
    check_predictions(probs, labels, c)?;
    let mut acc = CompensatedSum::default();
    for (p, &y) in probs.chunks_exact(c).zip(labels) {
        acc.add(kl_slice(p, centroids.row(y)));
    }
    Ok(acc.value() / labels.len() as f64)
}

/// Empirical log-likelihood `(1/N) sum_n ln P_n[y_n]`.
pub fn ll_emp(probs: &[f64], labels: &[usize], num_classes: usize) -> Result<f64> {
    check_predictions(probs, labels, num_classes)?;
    let mut acc = CompensatedSum::default();
    for (p, &y) in probs.chunks_exact(num_classes).zip(labels) {
        acc.add(floored_ln(p[y]));
    }
    Ok(acc.value() / labels.len() as f64)
}

/// Empirical risk `(1/N) sum_n H(target_n, P_n)` against arbitrary targets.
pub fn empirical_risk(targets: &[f64], probs: &[f64], num_classes: usize) -> Result<f64> {
    if targets.len() != probs.len() || probs.len() % num_classes != 0 || probs.is_empty() {
        return Err(Error::DimensionMismatch {
            context: "risk targets",
            expected: probs.len(),
            actual: targets.len(),
        });
    }
    let mut acc = CompensatedSum::default();
    for (t, p) in targets.chunks_exact(num_classes).zip(probs.chunks_exact(num_classes)) {
        acc.add(crate::simplex::cross_entropy_slice(t, p));
    }
    Ok(acc.value() / (probs.len() / num_classes) as f64)
}

/// Mean per-sample Euclidean distance `||P^tar_x - P*_x||_2`.
pub fn pdist(targets: &[f64], bcpd: &[f64], num_classes: usize) -> Result<f64> {
    if targets.len() != bcpd.len() || targets.is_empty() || targets.len() % num_classes != 0 {
        return Err(Error::DimensionMismatch {
            context: "pdist",
            expected: bcpd.len(),
            actual: targets.len(),
        });
    }
    let mut acc = CompensatedSum::default();
    for (t, b) in targets.chunks_exact(num_classes).zip(bcpd.chunks_exact(num_classes)) {
        acc.add(t.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt());
    }
    Ok(acc.value() / (targets.len() / num_classes) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub temperature: f64,
    pub accuracy: f64,
    pub error_rate: f64,
    pub ll_emp: f64,
    pub cmi_emp: f64,
    pub risk_emp: f64,
    pub pdist: Option<f64>,
    /// Mean entropy of the prediction vectors.
    pub mean_entropy: f64,
    /// Row `k` is the distribution of predictions for true class `k`.
    pub confusion: Vec<Vec<f64>>,
    pub class_counts: Vec<usize>,
    pub n: usize,
}

static EVALUATIONS: AtomicUsize = AtomicUsize::new(0);
static BOUND_VIOLATIONS: AtomicUsize = AtomicUsize::new(0);

/// `(records built, records with error_rate > C * risk_emp)` in this process.
pub fn error_bound_tally() -> (usize, usize) {
    (
        EVALUATIONS.load(Ordering::Relaxed),
        BOUND_VIOLATIONS.load(Ordering::Relaxed),
    )
}

pub const CSV_COLUMNS: [&str; 11] = [
    "run_id",
    "seed",
    "T",
    "accuracy",
    "error",
    "ll_emp",
    "cmi_emp",
    "risk_emp",
    "pdist",
    "mean_entropy",
    "n",
];

impl MetricsRecord {
    pub fn num_classes(&self) -> usize {
        self.class_counts.len()
    }

    /// `error_rate <= C * risk_emp`.
    pub fn error_bound_holds(&self) -> bool {
        self.error_rate <= self.num_classes() as f64 * self.risk_emp
    }

    /// Accuracy restricted to samples whose true class is in `classes`.
    pub fn accuracy_on(&self, classes: &[usize]) -> f64 {
        let (mut hit, mut total) = (0.0, 0usize);
        for &k in classes {
            hit += self.confusion[k][k] * self.class_counts[k] as f64;
            total += self.class_counts[k];
        }
        if total == 0 {
            f64::NAN
        } else {
            hit / total as f64
        }
    }

    pub fn csv_row(&self, run_id: &str, seed: u64) -> Vec<String> {
        vec![
            run_id.to_string(),
            seed.to_string(),
            self.temperature.to_string(),
            self.accuracy.to_string(),
            self.error_rate.to_string(),
            self.ll_emp.to_string(),
            self.cmi_emp.to_string(),
            self.risk_emp.to_string(),
            self.pdist.map(|v| v.to_string()).unwrap_or_default(),
            self.mean_entropy.to_string(),
            self.n.to_string(),
        ]
    }
}

/// Builds a record from row-major `(N, C)` predictions already taken at
/// `temperature`. Centroids for the CMI term are recomputed from these
/// predictions. `bcpd`, when given, fills `pdist`.
pub fn evaluate_probs(
    probs: &[f64],
    labels: &[usize],
    num_classes: usize,
    temperature: f64,
    bcpd: Option<&[f64]>,
) -> Result<MetricsRecord> {
    check_predictions(probs, labels, num_classes)?;
    let n = labels.len();
    let centroids = class_centroids(probs, labels, num_classes)?;
    let cmi = cmi_emp(probs, labels, &centroids)?;
    let ll = ll_emp(probs, labels, num_classes)?;

    let mut hits = 0usize;
    let mut counts = vec![0usize; num_classes];
    let mut confusion = vec![vec![0.0; num_classes]; num_classes];
    let mut entropy = CompensatedSum::default();
    for (p, &y) in probs.chunks_exact(num_classes).zip(labels) {
        let pred = argmax(p);
        hits += usize::from(pred == y);
        counts[y] += 1;
        confusion[y][pred] += 1.0;
        entropy.add(entropy_slice(p));
    }
    for (row, &count) in confusion.iter_mut().zip(&counts) {
        if count > 0 {
            row.iter_mut().for_each(|v| *v /= count as f64);
        }
    }
    let accuracy = hits as f64 / n as f64;
    let record = MetricsRecord {
        temperature,
        accuracy,
        error_rate: (n - hits) as f64 / n as f64,
        ll_emp: ll,
        cmi_emp: cmi,
        risk_emp: -ll,
        pdist: bcpd.map(|b| pdist(probs, b, num_classes)).transpose()?,
        mean_entropy: entropy.value() / n as f64,
        confusion,
        class_counts: counts,
        n,
    };
    EVALUATIONS.fetch_add(1, Ordering::Relaxed);
    if !record.error_bound_holds() {
        BOUND_VIOLATIONS.fetch_add(1, Ordering::Relaxed);
    }
    Ok(record)
}

/// Softmax predictions of `params` at `temperature`, row-major `(N, C)`.
pub fn predict_probs(params: &MlpParameters, ds: &LabeledDataset, temperature: f64) -> Result<Vec<f64>> {
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
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::config("temperature", "must be a positive finite number"));
    }
    let c = params.num_classes();
    let mut probs = params.predict_logits(ds.inputs(), ds.len())?;
    let mut scratch = vec![0.0; c];
    for row in probs.chunks_exact_mut(c) {
        scratch.copy_from_slice(row);
        softmax_into(&scratch, temperature, row);
    }
    Ok(probs)
}

/// Evaluates `params` on `ds` at softmax temperature `temperature`.
pub fn evaluate(
    params: &MlpParameters,
    ds: &LabeledDataset,
    temperature: f64,
    oracle: Option<&GaussianMixtureSpec>,
) -> Result<MetricsRecord> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset("evaluate"));
    }
    let probs = predict_probs(params, ds, temperature)?;
    let bcpd = oracle.map(|o| o.bcpd_batch(ds.inputs()));
    evaluate_probs(&probs, ds.labels(), ds.num_classes(), temperature, bcpd.as_deref())
}
