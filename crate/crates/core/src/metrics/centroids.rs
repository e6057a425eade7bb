use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::simplex::{CompensatedSum, ProbVec};

/// Per-class mean prediction `Q^y`. Classes with no samples carry a uniform
/// placeholder row and a zero count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCentroids {
    num_classes: usize,
    /// Row-major `(C, C)`.
    rows: Vec<f64>,
    counts: Vec<usize>,
}

impl ClassCentroids {
    pub fn from_rows(rows: Vec<ProbVec>, counts: Vec<usize>) -> Result<Self> {
        let c = rows.len();
        if counts.len() != c {
            return Err(Error::DimensionMismatch {
                context: "centroid counts",
                expected: c,
                actual: counts.len(),
            });
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != c) {
            return Err(Error::DimensionMismatch {
                context: "centroid row",
                expected: c,
                actual: bad.len(),
            });
        }
        Ok(ClassCentroids {
            num_classes: c,
            rows: rows.into_iter().flat_map(ProbVec::into_inner).collect(),
            counts,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn row(&self, class: usize) -> &[f64] {
        &self.rows[class * self.num_classes..(class + 1) * self.num_classes]
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn is_present(&self, class: usize) -> bool {
        self.counts[class] > 0
    }

    pub fn check_nondegenerate(&self, class: usize) -> Result<()> {
        match self.row(class).iter().position(|&q| q <= 0.0) {
            Some(index) => Err(Error::DegenerateCentroid { label: class, index }),
            None => Ok(()),
        }
    }

    /// SHA-256 of the exact bit patterns of every row and count.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.rows {
            h.update(v.to_bits().to_le_bytes());
        }
        for &c in &self.counts {
            h.update((c as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// `Q^y = mean of P_x over samples labelled y`, from row-major `(N, C)` predictions.
pub fn class_centroids(probs: &[f64], labels: &[usize], num_classes: usize) -> Result<ClassCentroids> {
    check_predictions(probs, labels, num_classes)?;
    let mut sums = vec![CompensatedSum::default(); num_classes * num_classes];
    let mut counts = vec![0usize; num_classes];
    for (p, &y) in probs.chunks_exact(num_classes).zip(labels) {
        counts[y] += 1;
        for (s, &v) in sums[y * num_classes..(y + 1) * num_classes].iter_mut().zip(p) {
            s.add(v);
        }
    }
    let mut rows = Vec::with_capacity(num_classes * num_classes);
    for (y, &count) in counts.iter().enumerate() {
        if count == 0 {
            rows.extend(std::iter::repeat_n(1.0 / num_classes as f64, num_classes));
        } else {
            rows.extend(
                sums[y * num_classes..(y + 1) * num_classes]
                    .iter()
                    .map(|s| s.value() / count as f64),
            );
        }
    }
    // Second pass: add the mean residual, so rows of identical predictions
    // reproduce that prediction bit for bit.
    let mut residuals = vec![CompensatedSum::default(); num_classes * num_classes];
    for (p, &y) in probs.chunks_exact(num_classes).zip(labels) {
        let row = y * num_classes..(y + 1) * num_classes;
        for ((r, &v), &m) in residuals[row.clone()].iter_mut().zip(p).zip(&rows[row]) {
            r.add(v - m);
        }
    }
    for (i, r) in residuals.iter().enumerate() {
        let count = counts[i / num_classes];
        if count > 0 {
            rows[i] += r.value() / count as f64;
        }
    }
    Ok(ClassCentroids {
        num_classes,
        rows,
        counts,
    })
}

pub(crate) fn check_predictions(probs: &[f64], labels: &[usize], num_classes: usize) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::EmptyDataset("predictions"));
    }
    if probs.len() != labels.len() * num_classes {
        return Err(Error::DimensionMismatch {
            context: "predictions",
            expected: labels.len() * num_classes,
            actual: probs.len(),
        });
    }
    if let Some(bad) = labels.iter().find(|&&y| y >= num_classes) {
        return Err(Error::config("labels", format!("label {bad} is not below {num_classes}")));
    }
    Ok(())
}
