use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::data::mixture::GaussianMixtureSpec;
use crate::error::{Error, Result};

/// Row-major inputs with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    inputs: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    num_classes: usize,
}

impl LabeledDataset {
    /// Split parts may legitimately be empty; everything that consumes a
    /// dataset rejects the empty case itself.
    pub fn new(inputs: Vec<f64>, labels: Vec<usize>, dim: usize, num_classes: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("dim", "must be positive"));
        }
        if inputs.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch {
                context: "dataset rows",
                expected: labels.len() * dim,
                actual: inputs.len(),
            });
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::config("labels", format!("label {bad} is not below {num_classes}")));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset inputs"));
        }
        Ok(LabeledDataset {
            inputs,
            labels,
            dim,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> LabeledDataset {
        let mut inputs = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            inputs.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        LabeledDataset {
            inputs,
            labels,
            dim: self.dim,
            num_classes: self.num_classes,
        }
    }

    /// SHA-256 over the little-endian input and label bytes.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.inputs {
            h.update(v.to_le_bytes());
        }
        for &y in &self.labels {
            h.update((y as u32).to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: LabeledDataset,
    pub validation: LabeledDataset,
    pub test: LabeledDataset,
}

impl SplitDataset {
    pub fn parts(&self) -> [&LabeledDataset; 3] {
        [&self.train, &self.validation, &self.test]
    }
}

/// Split sizes for `n` rows: train and validation are rounded, test takes the rest.
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    if ratios.iter().any(|r| !(*r >= 0.0)) {
        return Err(Error::config("split", "ratios must be non-negative"));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::config("split", format!("ratios sum to {total}, not 1")));
    }
    let train = ((ratios[0] * n as f64).round() as usize).min(n);
    let val = ((ratios[1] * n as f64).round() as usize).min(n - train);
    Ok([train, val, n - train - val])
}

/// Draws `n` labelled points (`y` uniform, `x ~ N(mu_y, sigma^2 I)`) and
/// partitions them, in draw order, into train/validation/test.
pub fn sample_dataset(spec: &GaussianMixtureSpec, n: usize, ratios: [f64; 3], seed: u64) -> Result<SplitDataset> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::config("num_samples", "must be positive"));
    }
    let sizes = split_sizes(n, ratios)?;
    if n < spec.num_classes {
        log::warn!(
            "{n} samples cannot cover all {} classes",
            spec.num_classes
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let y = rng.random_range(0..spec.num_classes);
        for &m in spec.mean(y) {
            let noise: f64 = rng.sample(StandardNormal);
            inputs.push(m + spec.sigma * noise);
        }
        labels.push(y);
    }
    let all = LabeledDataset::new(inputs, labels, spec.dim, spec.num_classes)?;
    let idx: Vec<usize> = (0..n).collect();
    let (a, rest) = idx.split_at(sizes[0]);
    let (b, c) = rest.split_at(sizes[1]);
    Ok(SplitDataset {
        train: all.select(a),
        validation: all.select(b),
        test: all.select(c),
    })
}

/// Removes every sample whose label is in `dropped`. Labels keep their
/// original numbering and the class count is unchanged.
pub fn drop_classes(ds: &LabeledDataset, dropped: &BTreeSet<usize>) -> Result<LabeledDataset> {
    if let Some(bad) = dropped.iter().find(|&&c| c >= ds.num_classes) {
        return Err(Error::config("dropped_classes", format!("class {bad} does not exist")));
    }
    if dropped.len() == ds.num_classes {
        return Err(Error::config("dropped_classes", "cannot drop every class"));
    }
    let keep: Vec<usize> = (0..ds.len())
        .filter(|&i| !dropped.contains(&ds.labels[i]))
        .collect();
    Ok(ds.select(&keep))
}

/// Keeps `round(alpha% * count)` uniformly chosen samples of every class,
/// preserving the original row order.
pub fn subsample_per_class(ds: &LabeledDataset, alpha_percent: f64, seed: u64) -> Result<LabeledDataset> {
    if !(alpha_percent > 0.0 && alpha_percent <= 100.0) {
        return Err(Error::config("alpha", "must lie in (0, 100]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes];
    for (i, &y) in ds.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut keep = Vec::new();
    for (class, mut members) in by_class.into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let k = (alpha_percent / 100.0 * members.len() as f64).round() as usize;
        if k == 0 {
            return Err(Error::SubsampleTooSmall {
                class,
                count: members.len(),
                alpha: alpha_percent,
            });
        }
        members.shuffle(&mut rng);
        keep.extend_from_slice(&members[..k]);
    }
    keep.sort_unstable();
    Ok(ds.select(&keep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::mixture::make_mixture;

    fn toy(n: usize, c: usize) -> LabeledDataset {
        let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
        let inputs: Vec<f64> = (0..n).map(|i| i as f64).collect();
        LabeledDataset::new(inputs, labels, 1, c).unwrap()
    }

    #[test]
    fn a6_split_sizes() {
        assert_eq!(split_sizes(100_000, [0.9, 0.05, 0.05]).unwrap(), [90_000, 5_000, 5_000]);
        assert!(split_sizes(10, [0.5, 0.6, 0.0]).is_err());
        assert!(split_sizes(10, [1.2, -0.2, 0.0]).is_err());
    }

    #[test]
    fn tiny_dataset_bookkeeping() {
        let spec = make_mixture(10, 3, 1.0, 1.0, 0).unwrap();
        let split = sample_dataset(&spec, 10, [0.9, 0.05, 0.05], 1).unwrap();
        let total: usize = split.parts().iter().map(|p| p.len()).sum();
        assert_eq!(total, 10);
        for part in split.parts() {
            assert_eq!(part.class_counts().iter().sum::<usize>(), part.len());
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let spec = make_mixture(3, 4, 1.0, 2.0, 0).unwrap();
        let a = sample_dataset(&spec, 200, [0.5, 0.25, 0.25], 9).unwrap();
        let b = sample_dataset(&spec, 200, [0.5, 0.25, 0.25], 9).unwrap();
        let c = sample_dataset(&spec, 200, [0.5, 0.25, 0.25], 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.train.checksum(), c.train.checksum());
    }

    #[test]
    fn drop_nothing_and_something() {
        let ds = toy(1000, 10);
        assert_eq!(drop_classes(&ds, &BTreeSet::new()).unwrap(), ds);
        let dropped: BTreeSet<usize> = [0, 1].into();
        let kept = drop_classes(&ds, &dropped).unwrap();
        assert_eq!(kept.len(), 800);
        assert_eq!(kept.num_classes(), 10);
        assert!(kept.labels().iter().all(|y| *y >= 2));
        assert!(drop_classes(&ds, &(0..10).collect()).is_err());
        assert!(drop_classes(&ds, &[10].into()).is_err());
    }

    #[test]
    fn drop_composes_over_disjoint_sets() {
        let ds = toy(300, 6);
        let a: BTreeSet<usize> = [1, 4].into();
        let b: BTreeSet<usize> = [0].into();
        let twice = drop_classes(&drop_classes(&ds, &a).unwrap(), &b).unwrap();
        let once = drop_classes(&ds, &a.union(&b).copied().collect()).unwrap();
        assert_eq!(twice, once);
    }

    #[test]
    fn subsample_sizes_and_seeds() {
        let ds = toy(90_000, 10);
        let full = subsample_per_class(&ds, 100.0, 0).unwrap();
        assert_eq!(full, ds);

        let five = subsample_per_class(&ds, 5.0, 1).unwrap();
        assert_eq!(five.len(), 4500);
        assert!(five.class_counts().iter().all(|&c| c == 450));

        let other = subsample_per_class(&ds, 5.0, 2).unwrap();
        assert_eq!(other.class_counts(), five.class_counts());
        assert_ne!(other, five);
    }

    #[test]
    fn subsample_too_small_is_an_error() {
        let ds = toy(20, 10);
        assert!(matches!(
            subsample_per_class(&ds, 10.0, 0),
            Err(Error::SubsampleTooSmall { .. })
        ));
        assert!(subsample_per_class(&ds, 0.0, 0).is_err());
        assert!(subsample_per_class(&ds, 101.0, 0).is_err());
    }

    #[test]
    fn class_means_match_spec() {
        let spec = make_mixture(10, 30, 1.0, 4.0, 5).unwrap();
        let split = sample_dataset(&spec, 100_000, [1.0, 0.0, 0.0], 6).unwrap();
        let ds = &split.train;
        let counts = ds.class_counts();
        let mut sums = vec![0.0; 10 * 30];
        for i in 0..ds.len() {
            let y = ds.labels()[i];
            for (s, v) in sums[y * 30..(y + 1) * 30].iter_mut().zip(ds.row(i)) {
                *s += v;
            }
        }
        for k in 0..10 {
            let tol = 3.0 * spec.sigma / (counts[k] as f64).sqrt();
            // 300 coordinates at 3 sigma: allow the handful expected outside
            let outside = (0..30)
                .filter(|&j| (sums[k * 30 + j] / counts[k] as f64 - spec.mean(k)[j]).abs() > tol)
                .count();
            assert!(outside <= 2, "class {k}: {outside} coordinates outside 3 sigma");
        }
    }
}
