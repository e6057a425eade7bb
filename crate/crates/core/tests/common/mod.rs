#![allow(dead_code)]

use mcmi_core::metrics::ClassCentroids;
use mcmi_core::nn::{LossHead, MlpParameters, MlpSpec};
use mcmi_core::simplex::{softmax_t, ProbVec};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const HEAD_KINDS: usize = 6;

pub fn random_probs(rng: &mut ChaCha8Rng, c: usize) -> ProbVec {
    let z: Vec<f64> = (0..c).map(|_| { let v: f64 = StandardNormal.sample(&mut *rng); 2.0 * v }).collect::<Vec<f64>>();
    softmax_t(&z, 1.0).unwrap()
}

/// Random small network, input, and loss head of kind `kind % HEAD_KINDS`.
pub fn random_case(rng: &mut ChaCha8Rng, kind: usize) -> (MlpParameters, Vec<f64>, LossHead) {
    let c = rng.random_range(2..=6);
    let d = rng.random_range(1..=5);
    let depth = rng.random_range(1..=2);
    let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(2..=7)).collect();
    let spec = MlpSpec::new(d, hidden, c).unwrap();
    let mut params = MlpParameters::init(&spec, rng.random()).unwrap();
    // Random biases keep every pre-activation off the ReLU kink at 0.
    for layer in params.layers_mut() {
        for b in &mut layer.bias {
            let v: f64 = StandardNormal.sample(&mut *rng);
            *b = 0.5 * v;
        }
    }
    let x: Vec<f64> = (0..d).map(|_| -> f64 { StandardNormal.sample(&mut *rng) }).collect();
    let label = rng.random_range(0..c);
    let head = match kind % HEAD_KINDS {
        0 => LossHead::SoftTargetCe {
            target: random_probs(rng, c),
        },
        1 => {
            let rows = (0..c).map(|_| random_probs(rng, c)).collect();
            LossHead::Mcmi {
                lambda: rng.random_range(0.0..0.5),
                centroids: ClassCentroids::from_rows(rows, vec![1; c]).unwrap(),
                label,
            }
        }
        2 => LossHead::HintonKd {
            teacher_probs_at_t: random_probs(rng, c),
            label,
            alpha: rng.random_range(0.0..=1.0),
            temperature: rng.random_range(0.5..8.0),
        },
        3 => LossHead::CombinedKd {
            teacher_probs_at_t: random_probs(rng, c),
            label,
            gamma: rng.random_range(0.0..2.0),
            temperature: rng.random_range(0.5..8.0),
        },
        4 => LossHead::LabelSmoothing {
            epsilon: rng.random_range(0.0..0.99),
            label,
        },
        _ => LossHead::EntropyReg {
            beta: rng.random_range(0.0..1.0),
            label,
        },
    };
    (params, x, head)
}
