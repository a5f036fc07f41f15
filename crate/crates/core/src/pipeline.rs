//! Trial → descriptor pipeline: missing-frame repair, normalization,
//! feature assembly, kernelized covariance and regularized log.

use rayon::prelude::*;

use crate::descriptor::{describe, DescriptorConfig, SpdDescriptor};
use crate::error::Result;
use crate::features::{assemble_trial_matrix, clean_missing, FeatureConfig, SkeletonTrial};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PipelineConfig {
    pub features: FeatureConfig,
    pub descriptor: DescriptorConfig,
}

pub fn trial_descriptor(trial: &SkeletonTrial, cfg: &PipelineConfig) -> Result<SpdDescriptor> {
    let clean = clean_missing(trial)?;
    let x = assemble_trial_matrix(&clean, &cfg.features)?;
    Ok(describe(&x, &cfg.descriptor)?.with_identity(trial.trial_id.clone(), trial.label))
}

/// Descriptors for every trial, in input order. Per-trial failures are
/// returned in place so callers can decide whether to skip or abort.
pub fn extract_all(trials: &[&SkeletonTrial], cfg: &PipelineConfig) -> Vec<Result<SpdDescriptor>> {
    trials.par_iter().map(|t| trial_descriptor(t, cfg)).collect()
}

/// Like [`extract_all`] but fails on the first (lowest-index) error.
pub fn extract_all_strict(trials: &[&SkeletonTrial], cfg: &PipelineConfig) -> Result<Vec<SpdDescriptor>> {
    extract_all(trials, cfg).into_iter().collect()
}
