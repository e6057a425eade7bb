//! Empirical log-likelihood, CMI, risk, accuracy/confusion and distance to
//! the Bayes posterior.

mod centroids;
mod record;

pub use crate::simplex::{cross_entropy, kl_div};
pub use centroids::{class_centroids, ClassCentroids};
pub use record::{
    cmi_emp, empirical_risk, error_bound_tally, evaluate, evaluate_probs, ll_emp, pdist, predict_probs,
    MetricsRecord, CSV_COLUMNS,
};
