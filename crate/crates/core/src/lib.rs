//! Kernelized covariance descriptors for skeleton action recognition.
//!
//! A trial (joints × frames) becomes a symmetric positive definite matrix
//! built from a kernel evaluated against probe vectors and centered over
//! time. Descriptors are compared under the log-Euclidean metric and
//! classified with a one-vs-one SVM.

pub mod classifier;
pub mod container;
pub mod dataset;
pub mod descriptor;
pub mod envelope;
pub mod error;
pub mod features;
pub mod linalg;
pub mod pipeline;
pub mod rand_features;
pub mod selfcheck;
pub mod synthetic;

pub use container::Provenance;
pub use dataset::{Assignment, DatasetProfile, LoadedDataset, Split, SplitRule, TrialIndex};
pub use descriptor::store::{DescriptorRecord, DescriptorSet};
pub use descriptor::{describe, DescriptorConfig, KernelSpec, SpdDescriptor, TrialMatrix};
pub use error::{Error, Result};
pub use features::{FeatureConfig, Normalization, SkeletonTrial};
pub use linalg::{EigenDecomposition, Matrix, SymMatrix};
pub use classifier::{
    cross_validate, gram_rows, log_euclidean_gram, median_heuristic_gamma, svm_predict, svm_train, CvGrid, CvReport, FoldPlan, GramMatrix,
    LogEuclideanKernel, ModelFile, SvmModel,
};
pub use pipeline::{trial_descriptor, PipelineConfig};
