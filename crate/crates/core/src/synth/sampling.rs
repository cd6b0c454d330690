use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::bigram::BigramLm;
use crate::corpus::{ModelId, TokenSequence};
use crate::error::{Error, Result};
use crate::scoring::LanguageModel;

/// Sampling temperature used by default for generated snippets.
pub const DEFAULT_TEMPERATURE: f64 = 0.2;
/// Nucleus mass used by default for generated snippets.
pub const DEFAULT_NUCLEUS_P: f64 = 0.95;

/// A toy code generator: a base bigram model with a model-specific logit
/// perturbation, sampled with temperature and nucleus truncation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPlgSpec {
    pub model_id: ModelId,
    pub base: BigramLm,
    pub fingerprint_epsilon: f64,
    pub temperature: f64,
    pub nucleus_p: f64,
}

impl ToyPlgSpec {
    pub fn new(model_id: ModelId, base: BigramLm, fingerprint_epsilon: f64) -> Self {
        ToyPlgSpec {
            model_id,
            base,
            fingerprint_epsilon,
            temperature: DEFAULT_TEMPERATURE,
            nucleus_p: DEFAULT_NUCLEUS_P,
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Argument(format!(
                "temperature {} must be positive",
                self.temperature
            )));
        }
        if !(self.nucleus_p > 0.0 && self.nucleus_p <= 1.0) {
            return Err(Error::Argument(format!(
                "nucleus p = {} outside (0, 1]",
                self.nucleus_p
            )));
        }
        if !(self.fingerprint_epsilon >= 0.0 && self.fingerprint_epsilon.is_finite()) {
            return Err(Error::Argument("fingerprint epsilon must be >= 0".into()));
        }
        Ok(())
    }
}

/// Stable 64-bit FNV-1a, used to seed per-model fingerprints.
pub(crate) fn stable_hash(text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// `softmax(logits / temperature)`; `-inf` logits get zero mass.
pub fn tempered_softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logits
        .iter()
        .map(|&l| {
            if l == f64::NEG_INFINITY {
                0.0
            } else {
                ((l - max) / temperature).exp()
            }
        })
        .collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    probs
}

/// Keeps the smallest set of highest-probability tokens whose mass reaches
/// `p` and renormalizes. Ties in probability are broken by lower token id.
pub fn nucleus_filter(probs: &[f64], p: f64) -> Vec<f64> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut kept = vec![0.0; probs.len()];
    let mut mass = 0.0;
    for &tok in &order {
        if probs[tok] <= 0.0 {
            break;
        }
        kept[tok] = probs[tok];
        mass += probs[tok];
        if mass >= p {
            break;
        }
    }
    kept.iter_mut().for_each(|v| *v /= mass);
    kept
}

fn draw_index(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// A generator with its fingerprint applied, ready to sample.
#[derive(Debug, Clone)]
pub struct ToyPlg {
    spec: ToyPlgSpec,
    /// Perturbed log-probabilities: start row, then `V` transition rows.
    logits: Vec<Vec<f64>>,
}

impl ToyPlg {
    pub fn new(spec: ToyPlgSpec) -> Result<Self> {
        spec.check()?;
        let v = spec.base.vocab_size;
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(spec.model_id.as_str()));
        let eps = spec.fingerprint_epsilon;
        let mut perturb = |row: &[f64]| -> Vec<f64> {
            let logits: Vec<f64> = row
                .iter()
                .map(|&p| {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    p.ln() + eps * noise
                })
                .collect();
            // Renormalize onto the simplex, in log space.
            let probs = tempered_softmax(&logits, 1.0);
            probs.iter().map(|p| p.ln()).collect()
        };
        let mut logits = vec![perturb(&spec.base.start)];
        for a in 0..v {
            logits.push(perturb(spec.base.row(a)));
        }
        Ok(ToyPlg { spec, logits })
    }

    pub fn spec(&self) -> &ToyPlgSpec {
        &self.spec
    }

    pub fn with_sampling(&self, temperature: f64, nucleus_p: f64) -> Result<Self> {
        let spec = ToyPlgSpec {
            temperature,
            nucleus_p,
            ..self.spec.clone()
        };
        spec.check()?;
        Ok(ToyPlg {
            spec,
            logits: self.logits.clone(),
        })
    }

    /// The fingerprinted distribution before temperature and truncation.
    pub fn perturbed_distribution(&self, prev: Option<usize>) -> Vec<f64> {
        tempered_softmax(self.row_logits(prev), 1.0)
    }

    fn row_logits(&self, prev: Option<usize>) -> &[f64] {
        &self.logits[prev.map_or(0, |p| p + 1)]
    }

    /// The distribution tokens are actually drawn from.
    pub fn sampling_distribution(&self, prev: Option<usize>) -> Vec<f64> {
        let tempered = tempered_softmax(self.row_logits(prev), self.spec.temperature);
        nucleus_filter(&tempered, self.spec.nucleus_p)
    }

    pub fn sample(&self, length: usize, seed: u64) -> Result<TokenSequence> {
        if length < 1 {
            return Err(Error::Argument("sequence length must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tokens = Vec::with_capacity(length);
        let mut prev = None;
        for _ in 0..length {
            let tok = draw_index(&self.sampling_distribution(prev), &mut rng);
            tokens.push(tok);
            prev = Some(tok);
        }
        TokenSequence::new(self.spec.base.vocab_size, tokens)
    }
}

impl LanguageModel for ToyPlg {
    fn vocab_size(&self) -> usize {
        self.spec.base.vocab_size
    }

    /// Log-probability under the sampling distribution.
    fn conditional_log_prob(&self, context: &[usize], token: usize) -> f64 {
        self.sampling_distribution(context.last().copied())[token].ln()
    }
}

/// Samples one sequence; see [`ToyPlg`] for repeated use.
pub fn sample_sequence(spec: &ToyPlgSpec, length: usize, seed: u64) -> Result<TokenSequence> {
    ToyPlg::new(spec.clone())?.sample(length, seed)
}
