use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::TokenSequence;
use crate::error::{Error, Result};
use crate::scoring::LanguageModel;

/// First-order Markov language model over `vocab_size` tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BigramLm {
    pub vocab_size: usize,
    pub start: Vec<f64>,
    /// Row-major `V x V`; row `a` is the distribution of the token after `a`.
    pub transitions: Vec<f64>,
    pub smoothing: f64,
}

fn normalize(row: &mut [f64]) {
    let total: f64 = row.iter().sum();
    if total > 0.0 {
        row.iter_mut().for_each(|v| *v /= total);
    } else {
        // A never-seen context with no smoothing: fall back to uniform.
        let u = 1.0 / row.len() as f64;
        row.iter_mut().for_each(|v| *v = u);
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    row.iter_mut().for_each(|v| *v = (*v - max).exp());
    normalize(row);
}

impl BigramLm {
    pub fn row(&self, prev: usize) -> &[f64] {
        &self.transitions[prev * self.vocab_size..(prev + 1) * self.vocab_size]
    }

    /// Next-token distribution given an optional previous token.
    pub fn next_distribution(&self, prev: Option<usize>) -> &[f64] {
        match prev {
            None => &self.start,
            Some(p) => self.row(p),
        }
    }

    /// A model with softmax-of-Gaussian rows; `peakedness` scales the logits,
    /// so larger values give lower-entropy rows.
    pub fn random(vocab_size: usize, peakedness: f64, seed: u64) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::Argument("vocabulary must be non-empty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw_row = |len: usize| -> Vec<f64> {
            let mut row: Vec<f64> = (0..len)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    peakedness * z
                })
                .collect();
            softmax_in_place(&mut row);
            row
        };
        let start = draw_row(vocab_size);
        let transitions = (0..vocab_size).flat_map(|_| draw_row(vocab_size)).collect();
        Ok(BigramLm {
            vocab_size,
            start,
            transitions,
            smoothing: 0.0,
        })
    }

    /// Row-wise convex combination `(1 - weight) * self + weight * other`.
    pub fn blend(&self, other: &BigramLm, weight: f64) -> Result<Self> {
        if self.vocab_size != other.vocab_size {
            return Err(Error::Argument(
                "cannot blend models with different vocabularies".into(),
            ));
        }
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::Argument(format!(
                "blend weight {weight} outside [0, 1]"
            )));
        }
        let mix = |a: &[f64], b: &[f64]| -> Vec<f64> {
            a.iter()
                .zip(b)
                .map(|(x, y)| (1.0 - weight) * x + weight * y)
                .collect()
        };
        Ok(BigramLm {
            vocab_size: self.vocab_size,
            start: mix(&self.start, &other.start),
            transitions: mix(&self.transitions, &other.transitions),
            smoothing: self.smoothing,
        })
    }
}

impl LanguageModel for BigramLm {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn conditional_log_prob(&self, context: &[usize], token: usize) -> f64 {
        self.next_distribution(context.last().copied())[token].ln()
    }
}

/// Maximum-likelihood bigram counts with additive smoothing `alpha`.
pub fn fit_bigram(corpus: &[TokenSequence], alpha: f64) -> Result<BigramLm> {
    let first = corpus
        .first()
        .ok_or_else(|| Error::Argument("cannot fit a bigram model to an empty corpus".into()))?;
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Argument(format!(
            "smoothing alpha = {alpha} must be >= 0"
        )));
    }
    let v = first.vocab_size;
    if let Some(bad) = corpus.iter().find(|s| s.vocab_size != v) {
        return Err(Error::Argument(format!(
            "corpus mixes vocabularies {v} and {}",
            bad.vocab_size
        )));
    }
    let mut start = vec![alpha; v];
    let mut transitions = vec![alpha; v * v];
    for seq in corpus {
        start[seq.tokens[0]] += 1.0;
        for w in seq.tokens.windows(2) {
            transitions[w[0] * v + w[1]] += 1.0;
        }
    }
    normalize(&mut start);
    transitions.chunks_mut(v).for_each(normalize);
    Ok(BigramLm {
        vocab_size: v,
        start,
        transitions,
        smoothing: alpha,
    })
}
