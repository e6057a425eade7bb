//! Synthetic Gaussian-mixture data and the dataset surgeries used by the
//! zero-shot and few-shot protocols.

pub mod dataset;
pub mod io;
pub mod mixture;

pub use dataset::{drop_classes, sample_dataset, split_sizes, subsample_per_class, LabeledDataset, SplitDataset};
pub use io::{load_dataset, save_dataset, DatasetHeader, StoredData};
pub use mixture::{bcpd, make_mixture, GaussianMixtureSpec};
