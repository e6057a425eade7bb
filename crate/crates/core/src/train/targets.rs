use crate::data::{GaussianMixtureSpec, LabeledDataset};
use crate::error::{Error, Result};
use crate::metrics::predict_probs;
use crate::nn::MlpParameters;
use crate::simplex::{softmax_t, ProbVec};

/// Source of the per-sample target distribution a student is trained against.
#[derive(Debug, Clone)]
pub enum TargetProvider {
    OneHot,
    TeacherProbs {
        teacher: MlpParameters,
        temperature: f64,
    },
    BcpdOracle(GaussianMixtureSpec),
}

impl TargetProvider {
    pub fn teacher(teacher: MlpParameters, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::config("temperature", "must be a positive finite number"));
        }
        Ok(TargetProvider::TeacherProbs {
            teacher,
            temperature,
        })
    }

    pub fn is_one_hot(&self) -> bool {
        matches!(self, TargetProvider::OneHot)
    }

    fn check(&self, dim: usize, num_classes: usize) -> Result<()> {
        let (d, c) = match self {
            TargetProvider::OneHot => return Ok(()),
            TargetProvider::TeacherProbs { teacher, .. } => (teacher.input_dim(), teacher.num_classes()),
            TargetProvider::BcpdOracle(spec) => (spec.dim, spec.num_classes),
        };
        if d != dim {
            return Err(Error::DimensionMismatch {
                context: "target provider input",
                expected: d,
                actual: dim,
            });
        }
        if c != num_classes {
            return Err(Error::DimensionMismatch {
                context: "target provider classes",
                expected: c,
                actual: num_classes,
            });
        }
        Ok(())
    }

    /// Targets for every row of `ds`, row-major `(N, C)`.
    pub fn targets_for(&self, ds: &LabeledDataset) -> Result<Vec<f64>> {
        self.check(ds.dim(), ds.num_classes())?;
        let c = ds.num_classes();
        Ok(match self {
            TargetProvider::OneHot => {
                let mut out = vec![0.0; ds.len() * c];
                for (row, &y) in out.chunks_exact_mut(c).zip(ds.labels()) {
                    row[y] = 1.0;
                }
                out
            }
            TargetProvider::TeacherProbs {
                teacher,
                temperature,
            } => predict_probs(teacher, ds, *temperature)?,
            TargetProvider::BcpdOracle(spec) => spec.bcpd_batch(ds.inputs()),
        })
    }
}

/// `e(y)`, the teacher's softened prediction, or the Bayes posterior at `x`.
pub fn make_target(provider: &TargetProvider, x: &[f64], label: usize, num_classes: usize) -> Result<ProbVec> {
    provider.check(x.len(), num_classes)?;
    if label >= num_classes {
        return Err(Error::config("label", format!("{label} is not below {num_classes}")));
    }
    match provider {
        TargetProvider::OneHot => Ok(ProbVec::one_hot(num_classes, label)),
        TargetProvider::TeacherProbs {
            teacher,
            temperature,
        } => {
            let (z, _) = teacher.forward(x)?;
            softmax_t(&z, *temperature)
        }
        TargetProvider::BcpdOracle(spec) => crate::data::bcpd(spec, x),
    }
}
