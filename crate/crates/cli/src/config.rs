//! Effective configuration: command-line flags over the TOML file over
//! built-in defaults.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use kcov::classifier::{CvGrid, LogKernelFamily, DEFAULT_FOLDS};
use kcov::descriptor::DEFAULT_EPS_SCALE;
use kcov::{DescriptorConfig, FeatureConfig, KernelSpec, Normalization, PipelineConfig, Provenance};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputFormat {
    Msr3d,
    Canonical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizeArg {
    None,
    Center,
    CenterScale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelArg {
    Linear,
    Poly,
    Expdot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LogKernelArg {
    Gaussian,
    Linear,
}

/// Flags shared by every subcommand. All optional so that the config file
/// can fill the gaps.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML file with default values for the flags below.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub dataset_profile: Option<PathBuf>,
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<InputFormat>,
    /// Comma-separated subset of pos,vel,acc (pos is mandatory).
    #[arg(long, global = true)]
    pub features: Option<String>,
    #[arg(long, global = true, value_enum)]
    pub normalize: Option<NormalizeArg>,
    #[arg(long, global = true, value_enum)]
    pub kernel: Option<KernelArg>,
    #[arg(long, global = true)]
    pub sigma: Option<f64>,
    #[arg(long, global = true)]
    pub degree: Option<u32>,
    #[arg(long, global = true)]
    pub offset: Option<f64>,
    /// Probe count; defaults to the data dimension.
    #[arg(long, global = true)]
    pub probes: Option<usize>,
    #[arg(long, global = true)]
    pub eps_scale: Option<f64>,
    #[arg(long, global = true, value_enum)]
    pub log_kernel: Option<LogKernelArg>,
    /// Gaussian log-Euclidean bandwidth; the median heuristic when unset.
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    #[arg(long, global = true)]
    pub svm_c: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, env = "KCOV_THREADS")]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

/// On-disk shape of `--config`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub dataset_profile: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub format: Option<InputFormat>,
    pub features: Option<String>,
    pub normalize: Option<NormalizeArg>,
    pub kernel: Option<KernelArg>,
    pub sigma: Option<f64>,
    pub degree: Option<u32>,
    pub offset: Option<f64>,
    pub probes: Option<usize>,
    pub eps_scale: Option<f64>,
    pub log_kernel: Option<LogKernelArg>,
    pub gamma: Option<f64>,
    pub svm_c: Option<f64>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    #[serde(default)]
    pub cv: CvFileConfig,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvFileConfig {
    pub sigmas: Option<Vec<f64>>,
    pub gammas: Option<Vec<f64>>,
    pub cs: Option<Vec<f64>>,
    pub folds: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone)]
pub struct Effective {
    pub dataset_profile: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub format: InputFormat,
    pub features: String,
    pub normalize: NormalizeArg,
    pub kernel: KernelSpec,
    pub probes: Option<usize>,
    pub eps_scale: f64,
    pub log_kernel: LogKernelFamily,
    pub gamma: Option<f64>,
    pub svm_c: f64,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub cv: CvFileConfig,
}

pub const DEFAULT_SVM_C: f64 = 10.0;

fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

impl Effective {
    pub fn resolve(args: &CommonArgs) -> Result<Self, CliError> {
        let file = match &args.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let kernel = match pick(args.kernel, file.kernel, KernelArg::Expdot) {
            KernelArg::Linear => Ok(KernelSpec::Linear),
            KernelArg::Poly => KernelSpec::polynomial(
                pick(args.degree, file.degree, 2),
                pick(args.offset, file.offset, 1.0),
            ),
            KernelArg::Expdot => KernelSpec::exp_dot(pick(args.sigma, file.sigma, 1.0)),
        }
        .map_err(|e| CliError::Config(e.to_string()))?;
        let eps_scale = pick(args.eps_scale, file.eps_scale, DEFAULT_EPS_SCALE);
        if !(eps_scale > 0.0) || !eps_scale.is_finite() {
            return Err(CliError::Config(format!("--eps-scale must be positive, got {eps_scale}")));
        }
        let svm_c = pick(args.svm_c, file.svm_c, DEFAULT_SVM_C);
        if !(svm_c > 0.0) || !svm_c.is_finite() {
            return Err(CliError::Config(format!("--svm-c must be positive, got {svm_c}")));
        }
        let gamma = args.gamma.or(file.gamma);
        if let Some(g) = gamma {
            if !(g > 0.0) || !g.is_finite() {
                return Err(CliError::Config(format!("--gamma must be positive, got {g}")));
            }
        }
        if args.probes.or(file.probes) == Some(0) {
            return Err(CliError::Config("--probes must be at least 1".into()));
        }
        let features = pick(args.features.clone(), file.features, "pos,vel,acc".into());
        parse_features(&features)?;
        let eff = Effective {
            dataset_profile: args.dataset_profile.clone().or(file.dataset_profile),
            input: args.input.clone().or(file.input),
            format: pick(args.format, file.format, InputFormat::Canonical),
            features,
            normalize: pick(args.normalize, file.normalize, NormalizeArg::CenterScale),
            kernel,
            probes: args.probes.or(file.probes),
            eps_scale,
            log_kernel: match pick(args.log_kernel, file.log_kernel, LogKernelArg::Gaussian) {
                LogKernelArg::Gaussian => LogKernelFamily::Gaussian,
                LogKernelArg::Linear => LogKernelFamily::Linear,
            },
            gamma,
            svm_c,
            seed: args.seed.or(file.seed),
            threads: args.threads.or(file.threads),
            out: args.out.clone(),
            cv: file.cv,
        };
        Ok(eff)
    }

    pub fn input(&self) -> Result<&Path, CliError> {
        self.input
            .as_deref()
            .ok_or_else(|| CliError::Config("--input is required".into()))
    }

    pub fn pipeline(&self, root_joint_index: usize) -> PipelineConfig {
        let (vel, acc) = parse_features(&self.features).expect("validated in resolve");
        PipelineConfig {
            features: FeatureConfig {
                use_velocity: vel,
                use_acceleration: acc,
                normalization: match self.normalize {
                    NormalizeArg::None => Normalization::None,
                    NormalizeArg::Center => Normalization::CenterRoot,
                    NormalizeArg::CenterScale => Normalization::CenterRootScale,
                },
                root_joint_index,
            },
            descriptor: DescriptorConfig {
                kernel: self.kernel,
                probes: self.probes,
                eps_scale: self.eps_scale,
            },
        }
    }

    pub fn cv_grid(&self) -> CvGrid {
        let d = CvGrid::default();
        CvGrid {
            sigmas: self.cv.sigmas.clone().unwrap_or(d.sigmas),
            gammas: self.cv.gammas.clone().unwrap_or(d.gammas),
            cs: self.cv.cs.clone().unwrap_or(d.cs),
        }
    }

    pub fn cv_folds(&self) -> usize {
        self.cv.folds.unwrap_or(DEFAULT_FOLDS)
    }

    /// Keys that describe how descriptors were produced. A model only
    /// applies to descriptors whose values match.
    pub fn descriptor_provenance(&self, prov: &mut Provenance, root_joint_index: usize) {
        prov.set("features", &self.features)
            .set("normalize", format!("{:?}", self.normalize).to_lowercase())
            .set("root_joint", root_joint_index)
            .set("kernel", self.kernel)
            .set("probes", self.probes.map_or("dim".to_string(), |m| m.to_string()))
            .set("eps_scale", self.eps_scale)
            .set("seed", self.seed.unwrap_or(0));
    }
}

pub const DESCRIPTOR_KEYS: &[&str] = &["features", "normalize", "root_joint", "kernel", "probes", "eps_scale", "dataset"];

/// `(velocity, acceleration)` from a `pos,vel,acc` list.
pub fn parse_features(s: &str) -> Result<(bool, bool), CliError> {
    let (mut pos, mut vel, mut acc) = (false, false, false);
    for part in s.split(',').map(str::trim) {
        match part {
            "pos" => pos = true,
            "vel" => vel = true,
            "acc" => acc = true,
            other => return Err(CliError::Config(format!("unknown feature {other:?}; expected pos, vel or acc"))),
        }
    }
    if !pos {
        return Err(CliError::Config("features must include pos".into()));
    }
    Ok((vel, acc))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_override_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kcov.toml");
        std::fs::write(&path, "kernel = \"poly\"\ndegree = 3\nsvm_c = 5.0\n[cv]\nfolds = 3\n").unwrap();
        let args = CommonArgs {
            config: Some(path),
            svm_c: Some(7.0),
            ..Default::default()
        };
        let eff = Effective::resolve(&args).unwrap();
        assert_eq!(eff.kernel, KernelSpec::Polynomial { degree: 3, offset: 1.0 });
        assert_eq!(eff.svm_c, 7.0);
        assert_eq!(eff.cv_folds(), 3);
        assert_eq!(eff.eps_scale, DEFAULT_EPS_SCALE);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kcov.toml");
        std::fs::write(&path, "kernal = \"poly\"\n").unwrap();
        let args = CommonArgs { config: Some(path), ..Default::default() };
        assert!(matches!(Effective::resolve(&args), Err(CliError::Config(_))));
    }

    #[test]
    fn feature_lists() {
        assert_eq!(parse_features("pos").unwrap(), (false, false));
        assert_eq!(parse_features("pos, vel,acc").unwrap(), (true, true));
        assert!(parse_features("vel").is_err());
        assert!(parse_features("pos,jerk").is_err());
    }
}
