use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{EmbeddingRecord, ModelId, Origin, TokenSequence};
use crate::error::{Error, Result};
use crate::hyptest::SampleSource;
use crate::scoring::LanguageModel;
use crate::stats::{derive_seed, normal_cdf};

/// Extractor id stamped on simulated embeddings.
pub const SYNTHETIC_EXTRACTOR: &str = "synthetic-encoder";

/// Prompt-dependent component: a mixture of offsets shared by every author.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptMixture {
    pub weights: Vec<f64>,
    pub centers: Vec<Vec<f64>>,
}

impl PromptMixture {
    pub fn single(dimension: usize) -> Self {
        PromptMixture {
            weights: vec![1.0],
            centers: vec![vec![0.0; dimension]],
        }
    }
}

/// Gaussian feature-space model of human and generated snippets:
/// `prompt offset + author mean + shared neural shift (models only) + noise`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSourceSpec {
    pub dimension: usize,
    pub human_mean: Vec<f64>,
    pub model_means: BTreeMap<ModelId, Vec<f64>>,
    pub shared_neural_shift: Vec<f64>,
    pub noise_scale: f64,
    pub prompts: PromptMixture,
}

impl EmbeddingSourceSpec {
    pub fn validate(&self) -> Result<()> {
        let d = self.dimension;
        if d == 0 {
            return Err(Error::field("dimension", "must be positive"));
        }
        if !(self.noise_scale > 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::field("noise_scale", "must be positive and finite"));
        }
        let finite_d = |v: &[f64]| v.len() == d && v.iter().all(|x| x.is_finite());
        if !finite_d(&self.human_mean) {
            return Err(Error::field(
                "human_mean",
                format!("must hold {d} finite values"),
            ));
        }
        if !finite_d(&self.shared_neural_shift) {
            return Err(Error::field(
                "shared_neural_shift",
                format!("must hold {d} finite values"),
            ));
        }
        if let Some((id, _)) = self.model_means.iter().find(|(_, m)| !finite_d(m)) {
            return Err(Error::field(
                "model_means",
                format!("mean of `{id}` is malformed"),
            ));
        }
        let p = &self.prompts;
        if p.weights.is_empty()
            || p.weights.len() != p.centers.len()
            || p.weights.iter().any(|w| w.is_nan() || *w < 0.0)
            || p.weights.iter().sum::<f64>() <= 0.0
            || !p.centers.iter().all(|c| finite_d(c))
        {
            return Err(Error::field("prompts", "malformed prompt mixture"));
        }
        Ok(())
    }

    /// Mean of an author's vectors before the prompt offset.
    pub fn author_mean(&self, origin: &Origin) -> Result<Vec<f64>> {
        match origin {
            Origin::Human => Ok(self.human_mean.clone()),
            Origin::Model(id) => {
                let m = self
                    .model_means
                    .get(id)
                    .ok_or_else(|| Error::Data(format!("no embedding source for model `{id}`")))?;
                Ok(m.iter()
                    .zip(&self.shared_neural_shift)
                    .map(|(a, b)| a + b)
                    .collect())
            }
            Origin::Unknown => Err(Error::Argument("cannot sample an unknown origin".into())),
        }
    }

    /// Expected vector, averaging over prompts.
    pub fn expected_vector(&self, origin: &Origin) -> Result<Vec<f64>> {
        let mut mean = self.author_mean(origin)?;
        let total: f64 = self.prompts.weights.iter().sum();
        for (w, c) in self.prompts.weights.iter().zip(&self.prompts.centers) {
            for (m, x) in mean.iter_mut().zip(c) {
                *m += w / total * x;
            }
        }
        Ok(mean)
    }
}

fn pick_prompt(weights: &[f64], rng: &mut impl Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// One simulated feature vector for an author; a pure function of the seed.
pub fn sample_vector(spec: &EmbeddingSourceSpec, origin: &Origin, seed: u64) -> Result<Vec<f64>> {
    spec.validate()?;
    Ok(draw_vector(spec, origin, seed)?.1)
}

/// Like [`sample_vector`] but also reports which prompt cluster was drawn.
/// Assumes a validated spec.
pub(crate) fn draw_vector(
    spec: &EmbeddingSourceSpec,
    origin: &Origin,
    seed: u64,
) -> Result<(usize, Vec<f64>)> {
    let mean = spec.author_mean(origin)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cluster = pick_prompt(&spec.prompts.weights, &mut rng);
    let prompt = &spec.prompts.centers[cluster];
    let v = mean
        .iter()
        .zip(prompt)
        .map(|(m, p)| {
            let z: f64 = StandardNormal.sample(&mut rng);
            m + p + spec.noise_scale * z
        })
        .collect();
    Ok((cluster, v))
}

pub fn sample_embedding(
    spec: &EmbeddingSourceSpec,
    snippet_id: &str,
    origin: &Origin,
    seed: u64,
) -> Result<EmbeddingRecord> {
    Ok(EmbeddingRecord {
        snippet_id: snippet_id.to_string(),
        extractor_id: ModelId::new(SYNTHETIC_EXTRACTOR)?,
        vector: sample_vector(spec, origin, seed)?,
    })
}

/// Draws fresh vectors of one author, for power analysis.
#[derive(Debug, Clone)]
pub struct AuthorSource {
    spec: EmbeddingSourceSpec,
    origin: Origin,
}

impl AuthorSource {
    pub fn new(spec: EmbeddingSourceSpec, origin: Origin) -> Result<Self> {
        spec.validate()?;
        spec.author_mean(&origin)?;
        Ok(AuthorSource { spec, origin })
    }
}

impl SampleSource for AuthorSource {
    fn draw(&self, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        (0..n)
            .map(|i| Ok(draw_vector(&self.spec, &self.origin, derive_seed(seed, &[i as u64]))?.1))
            .collect()
    }
}

/// Uniform scalar quantizer: two open tail bins plus equal-width interior
/// bins on `[low, high]`. Turns a feature vector into a token sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantizer {
    pub low: f64,
    pub high: f64,
    pub bins: usize,
}

impl Quantizer {
    pub fn new(low: f64, high: f64, bins: usize) -> Result<Self> {
        if bins < 3 || low.is_nan() || high.is_nan() || low >= high {
            return Err(Error::Argument(
                "quantizer needs >= 3 bins and low < high".into(),
            ));
        }
        Ok(Quantizer { low, high, bins })
    }

    fn width(&self) -> f64 {
        (self.high - self.low) / (self.bins - 2) as f64
    }

    pub fn token(&self, value: f64) -> usize {
        if value < self.low {
            0
        } else if value >= self.high {
            self.bins - 1
        } else {
            (1 + ((value - self.low) / self.width()) as usize).min(self.bins - 2)
        }
    }

    /// `(lower, upper)` edges of a bin, with infinite tails.
    pub fn edges(&self, token: usize) -> (f64, f64) {
        let w = self.width();
        let lo = if token == 0 {
            f64::NEG_INFINITY
        } else {
            self.low + (token - 1) as f64 * w
        };
        let hi = if token == self.bins - 1 {
            f64::INFINITY
        } else {
            self.low + token as f64 * w
        };
        (lo, hi)
    }

    pub fn encode(&self, vector: &[f64]) -> Result<TokenSequence> {
        TokenSequence::new(self.bins, vector.iter().map(|&v| self.token(v)).collect())
    }
}

/// Smallest bin probability kept, so log-probabilities stay finite.
const MIN_BIN_PROB: f64 = 1e-300;

/// Position-wise language model over quantized coordinates: token `i` is the
/// bin of coordinate `i` under the author's per-coordinate Gaussian mixture.
#[derive(Debug, Clone)]
pub struct QuantizedSourceLm {
    quantizer: Quantizer,
    /// Per coordinate: (weight, mean) components of the marginal.
    components: Vec<Vec<(f64, f64)>>,
    noise_scale: f64,
}

impl QuantizedSourceLm {
    pub fn new(spec: &EmbeddingSourceSpec, origin: &Origin, quantizer: Quantizer) -> Result<Self> {
        spec.validate()?;
        let mean = spec.author_mean(origin)?;
        let total: f64 = spec.prompts.weights.iter().sum();
        let components = (0..spec.dimension)
            .map(|j| {
                spec.prompts
                    .weights
                    .iter()
                    .zip(&spec.prompts.centers)
                    .map(|(w, c)| (w / total, mean[j] + c[j]))
                    .collect()
            })
            .collect();
        Ok(QuantizedSourceLm {
            quantizer,
            components,
            noise_scale: spec.noise_scale,
        })
    }

    pub fn bin_prob(&self, position: usize, token: usize) -> f64 {
        let (lo, hi) = self.quantizer.edges(token);
        let mass: f64 = self.components[position]
            .iter()
            .map(|&(w, mu)| {
                let zl = (lo - mu) / self.noise_scale;
                let zh = (hi - mu) / self.noise_scale;
                // Integrate from the nearer tail to keep precision.
                let p = if zl > 0.0 {
                    normal_cdf(-zl) - normal_cdf(-zh)
                } else {
                    normal_cdf(zh) - normal_cdf(zl)
                };
                w * p
            })
            .sum();
        mass.max(MIN_BIN_PROB)
    }

    /// Log-probability of every token of an encoded vector.
    pub fn token_log_probs(&self, seq: &TokenSequence) -> Result<Vec<f64>> {
        if seq.len() != self.components.len() {
            return Err(Error::Argument(format!(
                "sequence length {} does not match dimension {}",
                seq.len(),
                self.components.len()
            )));
        }
        Ok(seq
            .tokens
            .iter()
            .enumerate()
            .map(|(i, &t)| self.bin_prob(i, t).ln().min(0.0))
            .collect())
    }
}

impl LanguageModel for QuantizedSourceLm {
    fn vocab_size(&self) -> usize {
        self.quantizer.bins
    }

    fn conditional_log_prob(&self, context: &[usize], token: usize) -> f64 {
        let pos = context.len();
        if pos >= self.components.len() {
            return f64::NEG_INFINITY;
        }
        self.bin_prob(pos, token).ln().min(0.0)
    }
}

/// Mean vectors at the vertices of a scaled simplex: `count` points in
/// `dimension` coordinates, every pair exactly `distance` apart.
pub fn simplex_means(count: usize, dimension: usize, distance: f64) -> Result<Vec<Vec<f64>>> {
    if count > dimension {
        return Err(Error::Argument(format!(
            "{count} equidistant means need dimension >= {count} (got {dimension})"
        )));
    }
    let scale = distance / std::f64::consts::SQRT_2;
    Ok((0..count)
        .map(|k| {
            let mut v = vec![0.0; dimension];
            v[k] = scale;
            v
        })
        .collect())
}

/// Deterministic random direction of unit length.
pub fn random_unit(dimension: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    loop {
        let v: Vec<f64> = (0..dimension).map(|_| normal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            return v.iter().map(|x| x / norm).collect();
        }
    }
}
