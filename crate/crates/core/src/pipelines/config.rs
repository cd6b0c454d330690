//! Flat TOML configuration files, one key set per pipeline. Relative paths
//! resolve against the directory holding the configuration file.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::attribution::{ClassificationConfig, OneClassConfig, SingleInstanceConfig};
use super::detection::DetectionConfig;
use super::membership::AuditConfig;
use super::robustness::SamplingShiftConfig;
use super::verification::{PowerSweep, POWER_SWEEP_SIZES};
use crate::corpus::ModelId;
use crate::error::{Error, Result};
use crate::hyptest::{DEFAULT_ALPHA, DEFAULT_PERMUTATIONS, DEFAULT_REPEATS, DEFAULT_TRIALS};
use crate::learners::{SoftmaxHyper, DEFAULT_NU};
use crate::metrics::config_digest;
use crate::scoring::MembershipMethod;

/// A parsed configuration with its digest and base directory.
#[derive(Debug, Clone)]
pub struct Loaded<T> {
    pub config: T,
    pub digest: String,
    pub base: PathBuf,
}

impl<T> Loaded<T> {
    pub fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }
}

pub fn parse_config<T: DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text)
        .map_err(|e| Error::Config(e.message().to_string() + &span_note(text, e.span())))
}

fn span_note(text: &str, span: Option<std::ops::Range<usize>>) -> String {
    span.map(|s| format!(" (line {})", text[..s.start].lines().count().max(1)))
        .unwrap_or_default()
}

pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<Loaded<T>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    Ok(Loaded {
        config: parse_config(&text)?,
        digest: config_digest(&text),
        base: path.parent().map(Path::to_path_buf).unwrap_or_default(),
    })
}

/// Optional optimizer keys shared by the classifier pipelines.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct HyperKeys {
    pub learning_rate: Option<f64>,
    pub l2_lambda: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
}

impl HyperKeys {
    pub fn resolve(&self, seed: u64) -> SoftmaxHyper {
        let d = SoftmaxHyper::default();
        SoftmaxHyper {
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            l2_lambda: self.l2_lambda.unwrap_or(d.l2_lambda),
            epochs: self.epochs.unwrap_or(d.epochs),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditFile {
    pub method: MembershipMethod,
    pub target_model: ModelId,
    pub reference_model: Option<ModelId>,
    pub logprobs: PathBuf,
    pub labels: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

impl AuditFile {
    pub fn audit(&self) -> AuditConfig {
        AuditConfig {
            method: self.method,
            target_model: self.target_model.clone(),
            reference_model: self.reference_model.clone(),
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectFile {
    pub snippets: PathBuf,
    pub train_embeddings: PathBuf,
    pub test_embeddings: PathBuf,
    #[serde(default = "yes")]
    pub cross_generator: bool,
    pub learning_rate: Option<f64>,
    pub l2_lambda: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

fn yes() -> bool {
    true
}

impl DetectFile {
    pub fn detection(&self) -> DetectionConfig {
        let keys = HyperKeys {
            learning_rate: self.learning_rate,
            l2_lambda: self.l2_lambda,
            epochs: self.epochs,
            batch_size: self.batch_size,
        };
        DetectionConfig {
            hyper: keys.resolve(self.seed),
            cross_generator: self.cross_generator,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyFile {
    pub snippets: PathBuf,
    pub train_embeddings: PathBuf,
    pub test_embeddings: PathBuf,
    pub models: Option<Vec<ModelId>>,
    pub learning_rate: Option<f64>,
    pub l2_lambda: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl ClassifyFile {
    pub fn classification(&self) -> ClassificationConfig {
        let keys = HyperKeys {
            learning_rate: self.learning_rate,
            l2_lambda: self.l2_lambda,
            epochs: self.epochs,
            batch_size: self.batch_size,
        };
        ClassificationConfig {
            models: self.models.clone(),
            hyper: keys.resolve(self.seed),
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SingleMethod {
    Likelihood,
    Oneclass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SingleFile {
    pub method: Option<SingleMethod>,
    pub target_model: ModelId,
    pub snippets: PathBuf,
    /// Likelihood method: log-probs of the test snippets under the target.
    pub logprobs: Option<PathBuf>,
    /// One-class method: target-only training embeddings and a mixed test set.
    pub train_embeddings: Option<PathBuf>,
    pub test_embeddings: Option<PathBuf>,
    pub nu: Option<f64>,
    pub gamma: Option<f64>,
    pub target_fpr: Option<f64>,
    pub calibration_fraction: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl SingleFile {
    pub fn single(&self) -> SingleInstanceConfig {
        let d = SingleInstanceConfig::default();
        SingleInstanceConfig {
            target_fpr: self.target_fpr.unwrap_or(d.target_fpr),
            calibration_fraction: self.calibration_fraction.unwrap_or(d.calibration_fraction),
            seed: self.seed,
        }
    }

    pub fn oneclass(&self) -> OneClassConfig {
        OneClassConfig {
            nu: self.nu.unwrap_or(DEFAULT_NU),
            gamma: self.gamma,
            single: self.single(),
        }
    }

    pub fn require<'a>(&self, value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
        value
            .as_deref()
            .ok_or_else(|| Error::Config(format!("key `{key}` is required for this method")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyFile {
    pub claimed_model: ModelId,
    pub candidates: PathBuf,
    pub reference: PathBuf,
    pub n: Option<usize>,
    pub m: Option<usize>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_permutations")]
    pub permutations: usize,
    #[serde(default)]
    pub power_sweep: bool,
    pub sweep_sizes: Option<Vec<usize>>,
    pub trials: Option<usize>,
    pub repeats: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_permutations() -> usize {
    DEFAULT_PERMUTATIONS
}

impl VerifyFile {
    pub fn sweep(&self) -> Option<PowerSweep> {
        self.power_sweep.then(|| PowerSweep {
            sizes: self
                .sweep_sizes
                .clone()
                .unwrap_or_else(|| POWER_SWEEP_SIZES.to_vec()),
            trials: self.trials.unwrap_or(DEFAULT_TRIALS),
            repeats: self.repeats.unwrap_or(DEFAULT_REPEATS),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingShiftFile {
    pub vocab_size: Option<usize>,
    pub length: Option<usize>,
    pub generators: Option<usize>,
    pub fingerprint_epsilon: Option<f64>,
    pub per_class: Option<usize>,
    pub train_temperature: Option<f64>,
    pub train_nucleus_p: Option<f64>,
    pub temperatures: Option<Vec<f64>>,
    pub nucleus_ps: Option<Vec<f64>>,
    pub learning_rate: Option<f64>,
    pub l2_lambda: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl SamplingShiftFile {
    pub fn sampling_shift(&self) -> SamplingShiftConfig {
        let d = SamplingShiftConfig::default();
        let keys = HyperKeys {
            learning_rate: self.learning_rate,
            l2_lambda: self.l2_lambda,
            epochs: self.epochs,
            batch_size: self.batch_size,
        };
        SamplingShiftConfig {
            vocab_size: self.vocab_size.unwrap_or(d.vocab_size),
            length: self.length.unwrap_or(d.length),
            generators: self.generators.unwrap_or(d.generators),
            fingerprint_epsilon: self.fingerprint_epsilon.unwrap_or(d.fingerprint_epsilon),
            per_class: self.per_class.unwrap_or(d.per_class),
            train_temperature: self.train_temperature.unwrap_or(d.train_temperature),
            train_nucleus_p: self.train_nucleus_p.unwrap_or(d.train_nucleus_p),
            temperatures: self.temperatures.clone().unwrap_or(d.temperatures),
            nucleus_ps: self.nucleus_ps.clone().unwrap_or(d.nucleus_ps),
            hyper: keys.resolve(self.seed),
            seed: self.seed,
        }
    }
}
