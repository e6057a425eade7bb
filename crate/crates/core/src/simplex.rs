//! Points on the probability simplex and the divergences between them.
//!
//! All logarithms are natural. Probabilities are floored at [`PROB_FLOOR`]
//! inside every logarithm; `0 * ln 0` is taken as `0`.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PROB_FLOOR: f64 = 1e-12;

/// Tolerance on `sum(p) == 1` accepted by [`ProbVec::new`].
pub const SIMPLEX_TOL: f64 = 1e-9;

/// A probability vector over `C` classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVec(Vec<f64>);

impl ProbVec {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::config("probability vector", "empty"));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::config(
                "probability vector",
                "entries must be finite and non-negative",
            ));
        }
        let total = neumaier_sum(values.iter().copied());
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::config(
                "probability vector",
                format!("entries sum to {total}, not 1"),
            ));
        }
        Ok(ProbVec(values))
    }

    /// Wraps values the caller already knows to lie on the simplex.
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        debug_assert!((values.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        ProbVec(values)
    }

    pub fn uniform(num_classes: usize) -> Self {
        ProbVec(vec![1.0 / num_classes as f64; num_classes])
    }

    pub fn one_hot(num_classes: usize, label: usize) -> Self {
        let mut v = vec![0.0; num_classes];
        v[label] = 1.0;
        ProbVec(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn entropy(&self) -> f64 {
        entropy_slice(&self.0)
    }
}

impl Deref for ProbVec {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for ProbVec {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        ProbVec::new(v)
    }
}

impl From<ProbVec> for Vec<f64> {
    fn from(p: ProbVec) -> Vec<f64> {
        p.0
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Temperature softmax `exp(z_i/T) / sum_j exp(z_j/T)`, max-shifted.
pub fn softmax_t(logits: &[f64], temperature: f64) -> Result<ProbVec> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::config("temperature", "must be a positive finite number"));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, temperature, &mut out);
    Ok(ProbVec(out))
}

/// Unchecked hot-path softmax. `out` must have the same length as `logits`.
#[inline]
pub fn softmax_into(logits: &[f64], temperature: f64, out: &mut [f64]) {
    let inv_t = 1.0 / temperature;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = ((z - max) * inv_t).exp();
        total += *o;
    }
    let inv = 1.0 / total;
    for o in out.iter_mut() {
        *o *= inv;
    }
}

#[inline]
pub(crate) fn floored_ln(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

fn check_len(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            context: "probability vectors",
            expected: p.len(),
            actual: q.len(),
        });
    }
    Ok(())
}

/// `KL(p || q)` in nats.
pub fn kl_div(p: &[f64], q: &[f64]) -> Result<f64> {
    check_len(p, q)?;
    Ok(kl_slice(p, q))
}

/// `H(p, q) = -sum p_i ln q_i` in nats.
pub fn cross_entropy(p: &[f64], q: &[f64]) -> Result<f64> {
    check_len(p, q)?;
    Ok(cross_entropy_slice(p, q))
}

#[inline]
pub(crate) fn kl_slice(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            acc += pi * (floored_ln(pi) - floored_ln(qi));
        }
    }
    // rounding can push the sum a hair below zero
    acc.max(0.0)
}

#[inline]
pub(crate) fn cross_entropy_slice(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            acc -= pi * floored_ln(qi);
        }
    }
    acc
}

#[inline]
pub(crate) fn entropy_slice(p: &[f64]) -> f64 {
    cross_entropy_slice(p, p)
}

/// Neumaier compensated summation.
pub fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = CompensatedSum::default();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

#[derive(Debug, Default, Clone, Copy)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    #[inline]
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_of_constant_logits_is_uniform() {
        for t in [0.5, 1.0, 7.0] {
            let p = softmax_t(&[3.0; 4], t).unwrap();
            for v in p.iter() {
                assert!((v - 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn softmax_two_logits_closed_form() {
        // e / (1 + e)
        let p = softmax_t(&[1.0, 0.0], 1.0).unwrap();
        assert!((p[0] - 0.7310585786300049).abs() < 1e-15);
        assert!((p[1] - 0.2689414213699951).abs() < 1e-15);
    }

    #[test]
    fn softmax_high_temperature_is_near_uniform() {
        let p = softmax_t(&[10.0, -3.0, 2.5, 0.0], 1e6).unwrap();
        for v in p.iter() {
            assert!((v - 0.25).abs() < 1e-5);
        }
    }

    #[test]
    fn softmax_rejects_bad_input() {
        assert!(softmax_t(&[1.0, f64::NAN], 1.0).is_err());
        assert!(softmax_t(&[1.0, 0.0], 0.0).is_err());
        assert!(softmax_t(&[1.0, 0.0], -1.0).is_err());
    }

    #[test]
    fn kl_known_values() {
        let p = [0.3, 0.2, 0.5];
        assert_eq!(kl_div(&p, &p).unwrap(), 0.0);
        assert!((kl_div(&[1.0, 0.0], &[0.5, 0.5]).unwrap() - 2f64.ln()).abs() < 1e-15);
        // 0.8 ln(8/7) + 0.2 ln(2/3)
        let kl = kl_div(&[0.8, 0.2], &[0.7, 0.3]).unwrap();
        assert!((kl - 0.025_732_092_477_985_22).abs() < 1e-12, "{kl}");
        assert!(kl_div(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn cross_entropy_known_values() {
        let q = [0.1, 0.6, 0.3];
        assert!((cross_entropy(&[0.0, 1.0, 0.0], &q).unwrap() + 0.6f64.ln()).abs() < 1e-15);
        let u = [0.2; 5];
        assert!((cross_entropy(&u, &u).unwrap() - 5f64.ln()).abs() < 1e-14);
        let h = cross_entropy(&[0.8, 0.2], &[0.7, 0.3]).unwrap();
        assert!((h - 0.526_134_516_016_173_1).abs() < 1e-12, "{h}");
    }

    #[test]
    fn probvec_validation() {
        assert!(ProbVec::new(vec![0.5, 0.5]).is_ok());
        assert!(ProbVec::new(vec![0.5, 0.6]).is_err());
        assert!(ProbVec::new(vec![1.5, -0.5]).is_err());
        assert!(ProbVec::new(vec![]).is_err());
        let json = serde_json::to_string(&ProbVec::one_hot(3, 1)).unwrap();
        assert_eq!(json, "[0.0,1.0,0.0]");
        assert!(serde_json::from_str::<ProbVec>("[0.2,0.2]").is_err());
    }

    #[test]
    fn argmax_ties_pick_lowest_index() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[1.0, 1.0]), 0);
    }

    fn logits() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-50.0f64..50.0, 2..12)
    }

    proptest! {
        #[test]
        fn softmax_lies_on_simplex(z in logits(), log_t in -3.0f64..6.0) {
            let p = softmax_t(&z, 10f64.powf(log_t)).unwrap();
            prop_assert!(ProbVec::new(p.into_inner()).is_ok());
        }

        #[test]
        fn entropy_grows_with_temperature(z in logits(), t in 0.05f64..20.0, dt in 0.0f64..20.0) {
            let lo = softmax_t(&z, t).unwrap().entropy();
            let hi = softmax_t(&z, t + dt).unwrap().entropy();
            prop_assert!(hi >= lo - 1e-12);
        }

        #[test]
        fn argmax_is_temperature_invariant(z in logits(), log_t in -3.0f64..6.0) {
            let p = softmax_t(&z, 10f64.powf(log_t)).unwrap();
            // large temperatures can merge near-ties into exact ties; only
            // check when the logit gap survives rounding
            let top = argmax(&z);
            let gap = z.iter().enumerate().filter(|(i, _)| *i != top)
                .map(|(_, v)| z[top] - v).fold(f64::INFINITY, f64::min);
            prop_assume!(gap / 10f64.powf(log_t) > 1e-12);
            prop_assert_eq!(p.argmax(), top);
        }

        #[test]
        fn cross_entropy_decomposes(a in prop::collection::vec(0.01f64..1.0, 4), b in prop::collection::vec(0.01f64..1.0, 4)) {
            let sa: f64 = a.iter().sum();
            let sb: f64 = b.iter().sum();
            let p: Vec<f64> = a.iter().map(|v| v / sa).collect();
            let q: Vec<f64> = b.iter().map(|v| v / sb).collect();
            let lhs = cross_entropy(&p, &q).unwrap();
            let rhs = entropy_slice(&p) + kl_div(&p, &q).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
