//! Per-sample loss heads on logits, each with its exact logit gradient.
//!
//! Every head returns a loss to minimize. The MCMI objective
//! `ln P[y] + lambda * KL(P || Q^y)` is maximized by minimizing its negation.

use crate::error::{Error, Result};
use crate::metrics::ClassCentroids;
use crate::simplex::{floored_ln, softmax_into, ProbVec};

#[derive(Debug, Clone, PartialEq)]
pub enum LossHead {
    /// `-sum_i t_i ln P_i` against an arbitrary target distribution.
    SoftTargetCe { target: ProbVec },
    /// `-ln P[y] - lambda * KL(P || Q^y)` with frozen centroids.
    Mcmi {
        lambda: f64,
        centroids: ClassCentroids,
        label: usize,
    },
    /// `alpha * T^2 * KL(p^t_T || p^s_T) + (1 - alpha) * CE(e(y), p^s_1)`.
    HintonKd {
        teacher_probs_at_t: ProbVec,
        label: usize,
        alpha: f64,
        temperature: f64,
    },
    /// `CE(e(y), p^s_1) + gamma * T^2 * KL(p^t_T || p^s_T)`.
    CombinedKd {
        teacher_probs_at_t: ProbVec,
        label: usize,
        gamma: f64,
        temperature: f64,
    },
    /// Cross entropy against `(1 - eps) e(y) + eps / C`.
    LabelSmoothing { epsilon: f64, label: usize },
    /// `-ln P[y] - beta * H(P)`.
    EntropyReg { beta: f64, label: usize },
}

impl LossHead {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let check_label = |label: usize| {
            if label >= num_classes {
                Err(Error::config("label", format!("{label} is not below {num_classes}")))
            } else {
                Ok(())
            }
        };
        let check_len = |p: &ProbVec| {
            if p.len() != num_classes {
                Err(Error::DimensionMismatch {
                    context: "loss head target",
                    expected: num_classes,
                    actual: p.len(),
                })
            } else {
                Ok(())
            }
        };
        match self {
            LossHead::SoftTargetCe { target } => check_len(target),
            LossHead::Mcmi {
                lambda,
                centroids,
                label,
            } => {
                check_label(*label)?;
                if !(*lambda >= 0.0) || !lambda.is_finite() {
                    return Err(Error::config("lambda", "must be finite and non-negative"));
                }
                if centroids.num_classes() != num_classes {
                    return Err(Error::DimensionMismatch {
                        context: "centroids",
                        expected: num_classes,
                        actual: centroids.num_classes(),
                    });
                }
                centroids.check_nondegenerate(*label)
            }
            LossHead::HintonKd {
                teacher_probs_at_t,
                label,
                alpha,
                temperature,
            } => {
                check_label(*label)?;
                check_len(teacher_probs_at_t)?;
                if !(0.0..=1.0).contains(alpha) {
                    return Err(Error::config("alpha", "must lie in [0, 1]"));
                }
                check_temperature(*temperature)
            }
            LossHead::CombinedKd {
                teacher_probs_at_t,
                label,
                gamma,
                temperature,
            } => {
                check_label(*label)?;
                check_len(teacher_probs_at_t)?;
                if !(*gamma >= 0.0) || !gamma.is_finite() {
                    return Err(Error::config("gamma", "must be finite and non-negative"));
                }
                check_temperature(*temperature)
            }
            LossHead::LabelSmoothing { epsilon, label } => {
                check_label(*label)?;
                if !(0.0..1.0).contains(epsilon) {
                    return Err(Error::config("epsilon", "must lie in [0, 1)"));
                }
                Ok(())
            }
            LossHead::EntropyReg { beta, label } => {
                check_label(*label)?;
                if !(*beta >= 0.0) || !beta.is_finite() {
                    return Err(Error::config("beta", "must be finite and non-negative"));
                }
                Ok(())
            }
        }
    }

    pub(crate) fn view(&self) -> HeadRef<'_> {
        match self {
            LossHead::SoftTargetCe { target } => HeadRef::SoftTarget(target),
            LossHead::Mcmi {
                lambda,
                centroids,
                label,
            } => HeadRef::Mcmi {
                lambda: *lambda,
                centroid: centroids.row(*label),
                label: *label,
            },
            LossHead::HintonKd {
                teacher_probs_at_t,
                label,
                alpha,
                temperature,
            } => HeadRef::Hinton {
                teacher: teacher_probs_at_t,
                label: *label,
                alpha: *alpha,
                temperature: *temperature,
            },
            LossHead::CombinedKd {
                teacher_probs_at_t,
                label,
                gamma,
                temperature,
            } => HeadRef::Combined {
                teacher: teacher_probs_at_t,
                label: *label,
                gamma: *gamma,
                temperature: *temperature,
            },
            LossHead::LabelSmoothing { epsilon, label } => HeadRef::LabelSmoothing {
                epsilon: *epsilon,
                label: *label,
            },
            LossHead::EntropyReg { beta, label } => HeadRef::Entropy {
                beta: *beta,
                label: *label,
            },
        }
    }

    /// Loss in nats and its gradient with respect to the logits.
    pub fn loss_and_logit_grad(&self, logits: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.validate(logits.len())?;
        if logits.iter().any(|z| !z.is_finite()) {
            return Err(Error::NonFinite("logits"));
        }
        let mut scratch = HeadScratch::new(logits.len());
        let mut dz = vec![0.0; logits.len()];
        let loss = self.view().apply(logits, &mut dz, &mut scratch);
        Ok((loss, dz))
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::config("temperature", "must be a positive finite number"));
    }
    Ok(())
}

/// Borrowed, pre-validated form of [`LossHead`] used inside training loops.
#[derive(Debug, Clone, Copy)]
pub(crate) enum HeadRef<'a> {
    OneHot(usize),
    SoftTarget(&'a [f64]),
    Mcmi {
        lambda: f64,
        centroid: &'a [f64],
        label: usize,
    },
    Hinton {
        teacher: &'a [f64],
        label: usize,
        alpha: f64,
        temperature: f64,
    },
    Combined {
        teacher: &'a [f64],
        label: usize,
        gamma: f64,
        temperature: f64,
    },
    LabelSmoothing {
        epsilon: f64,
        label: usize,
    },
    Entropy {
        beta: f64,
        label: usize,
    },
}

pub(crate) struct HeadScratch {
    probs: Vec<f64>,
    probs_t: Vec<f64>,
}

impl HeadScratch {
    pub(crate) fn new(num_classes: usize) -> Self {
        HeadScratch {
            probs: vec![0.0; num_classes],
            probs_t: vec![0.0; num_classes],
        }
    }
}

impl HeadRef<'_> {
    /// Writes `d loss / d z` into `dz` and returns the loss.
    pub(crate) fn apply(&self, z: &[f64], dz: &mut [f64], s: &mut HeadScratch) -> f64 {
        let p = &mut s.probs;
        softmax_into(z, 1.0, p);
        match *self {
            HeadRef::OneHot(label) => {
                dz.copy_from_slice(p);
                dz[label] -= 1.0;
                -floored_ln(p[label])
            }
            HeadRef::SoftTarget(target) => soft_target(p, target, dz),
            HeadRef::Mcmi {
                lambda,
                centroid,
                label,
            } => {
                dz.copy_from_slice(p);
                dz[label] -= 1.0;
                let nll = -floored_ln(p[label]);
                if lambda == 0.0 {
                    return nll;
                }
                // d KL(P||Q) / dz_j = P_j (ln(P_j / Q_j) - KL)
                let mut kl = 0.0;
                for (&pi, &qi) in p.iter().zip(centroid) {
                    if pi > 0.0 {
                        kl += pi * (floored_ln(pi) - floored_ln(qi));
                    }
                }
                for ((d, &pi), &qi) in dz.iter_mut().zip(p.iter()).zip(centroid) {
                    if pi > 0.0 {
                        *d -= lambda * pi * (floored_ln(pi) - floored_ln(qi) - kl);
                    }
                }
                nll - lambda * kl
            }
            HeadRef::Hinton {
                teacher,
                label,
                alpha,
                temperature,
            } => {
                let pt = &mut s.probs_t;
                softmax_into(z, temperature, pt);
                // d/dz of T^2 KL(p^t || p^s_T) is T (p^s_T - p^t)
                let mut kl = 0.0;
                for (d, ((&pi, &qi), &ti)) in dz.iter_mut().zip(p.iter().zip(pt.iter()).zip(teacher)) {
                    if ti > 0.0 {
                        kl += ti * (floored_ln(ti) - floored_ln(qi));
                    }
                    *d = alpha * temperature * (qi - ti) + (1.0 - alpha) * pi;
                }
                dz[label] -= 1.0 - alpha;
                alpha * temperature * temperature * kl - (1.0 - alpha) * floored_ln(p[label])
            }
            HeadRef::Combined {
                teacher,
                label,
                gamma,
                temperature,
            } => {
                let pt = &mut s.probs_t;
                softmax_into(z, temperature, pt);
                let mut kl = 0.0;
                for (d, ((&pi, &qi), &ti)) in dz.iter_mut().zip(p.iter().zip(pt.iter()).zip(teacher)) {
                    if ti > 0.0 {
                        kl += ti * (floored_ln(ti) - floored_ln(qi));
                    }
                    *d = pi + gamma * temperature * (qi - ti);
                }
                dz[label] -= 1.0;
                -floored_ln(p[label]) + gamma * temperature * temperature * kl
            }
            HeadRef::LabelSmoothing { epsilon, label } => {
                let c = z.len() as f64;
                let t = &mut s.probs_t;
                t.fill(epsilon / c);
                t[label] += 1.0 - epsilon;
                soft_target(p, t, dz)
            }
            HeadRef::Entropy { beta, label } => {
                let mut h = 0.0;
                for &pi in p.iter() {
                    if pi > 0.0 {
                        h -= pi * floored_ln(pi);
                    }
                }
                // d H / dz_j = -P_j (ln P_j + H)
                for (d, &pi) in dz.iter_mut().zip(p.iter()) {
                    *d = pi;
                    if pi > 0.0 {
                        *d += beta * pi * (floored_ln(pi) + h);
                    }
                }
                dz[label] -= 1.0;
                -floored_ln(p[label]) - beta * h
            }
        }
    }
}

fn soft_target(p: &[f64], target: &[f64], dz: &mut [f64]) -> f64 {
    let mut loss = 0.0;
    for ((d, &pi), &ti) in dz.iter_mut().zip(p).zip(target) {
        *d = pi - ti;
        if ti > 0.0 {
            loss -= ti * floored_ln(pi);
        }
    }
    loss
}

/// Label-smoothing and entropy-regularized heads for the regularizer comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularizer {
    LabelSmoothing(f64),
    Entropy(f64),
}

pub fn loss_head_for_regularizer(kind: Regularizer, label: usize, num_classes: usize) -> Result<LossHead> {
    let head = match kind {
        Regularizer::LabelSmoothing(epsilon) => LossHead::LabelSmoothing { epsilon, label },
        Regularizer::Entropy(beta) => LossHead::EntropyReg { beta, label },
    };
    head.validate(num_classes)?;
    Ok(head)
}
