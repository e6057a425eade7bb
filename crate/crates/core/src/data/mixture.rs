//! Isotropic Gaussian class-conditional mixtures with a uniform prior.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simplex::ProbVec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixtureSpec {
    pub num_classes: usize,
    pub dim: usize,
    /// Row-major `(num_classes, dim)` class means.
    pub means: Vec<f64>,
    pub sigma: f64,
    pub delta_mu: f64,
    pub seed: u64,
}

/// Draws every mean coordinate uniformly from `{-delta_mu, 0, +delta_mu}`.
pub fn make_mixture(
    num_classes: usize,
    dim: usize,
    delta_mu: f64,
    sigma: f64,
    seed: u64,
) -> Result<GaussianMixtureSpec> {
    if num_classes < 2 {
        return Err(Error::config("num_classes", "must be at least 2"));
    }
    if dim == 0 {
        return Err(Error::config("dim", "must be positive"));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::config("sigma", "must be positive and finite"));
    }
    if !(delta_mu >= 0.0) || !delta_mu.is_finite() {
        return Err(Error::config("delta_mu", "must be non-negative and finite"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let levels = [-delta_mu, 0.0, delta_mu];
    let means = (0..num_classes * dim)
        .map(|_| levels[rng.random_range(0..3)])
        .collect();
    Ok(GaussianMixtureSpec {
        num_classes,
        dim,
        means,
        sigma,
        delta_mu,
        seed,
    })
}

impl GaussianMixtureSpec {
    pub fn mean(&self, class: usize) -> &[f64] {
        &self.means[class * self.dim..(class + 1) * self.dim]
    }

    /// All classes share one mean, so the Bayes rule is a coin toss.
    pub fn is_degenerate(&self) -> bool {
        (1..self.num_classes).all(|k| self.mean(k) == self.mean(0))
    }

    pub fn validate(&self) -> Result<()> {
        if self.means.len() != self.num_classes * self.dim {
            return Err(Error::config("means", "length must be num_classes * dim"));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::config("sigma", "must be positive"));
        }
        Ok(())
    }

    /// Writes the exact class posterior `P*(k | x)` into `out`.
    pub fn bcpd_into(&self, x: &[f64], out: &mut [f64]) {
        let scale = 1.0 / (2.0 * self.sigma * self.sigma);
        for (k, o) in out.iter_mut().enumerate() {
            let d2: f64 = self.mean(k).iter().zip(x).map(|(m, v)| (v - m) * (v - m)).sum();
            *o = -d2 * scale;
        }
        let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for o in out.iter_mut() {
            *o = (*o - max).exp();
            total += *o;
        }
        for o in out.iter_mut() {
            *o /= total;
        }
    }

    /// Posteriors for `rows` row-major inputs, flattened `(rows, num_classes)`.
    pub fn bcpd_batch(&self, inputs: &[f64]) -> Vec<f64> {
        let rows = inputs.len() / self.dim;
        let mut out = vec![0.0; rows * self.num_classes];
        for (x, o) in inputs
            .chunks_exact(self.dim)
            .zip(out.chunks_exact_mut(self.num_classes))
        {
            self.bcpd_into(x, o);
        }
        out
    }
}

/// `P*(k | x) ∝ exp(-||x - mu_k||^2 / (2 sigma^2))`.
pub fn bcpd(spec: &GaussianMixtureSpec, x: &[f64]) -> Result<ProbVec> {
    if x.len() != spec.dim {
        return Err(Error::DimensionMismatch {
            context: "bcpd input",
            expected: spec.dim,
            actual: x.len(),
        });
    }
    let mut out = vec![0.0; spec.num_classes];
    spec.bcpd_into(x, &mut out);
    Ok(ProbVec::from_raw(out))
}
