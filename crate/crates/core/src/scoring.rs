//! Sequence likelihood, perplexity and membership-inference statistics.
//!
//! Membership scores are oriented so that a higher value means "more likely a
//! training member"; one ROC routine then serves every method.

use serde::{Deserialize, Serialize};

use crate::corpus::TokenSequence;
use crate::error::{Error, Result};

/// An autoregressive model over a finite vocabulary.
pub trait LanguageModel {
    fn vocab_size(&self) -> usize;

    /// Natural-log probability of `token` following `context`.
    /// Returns `f64::NEG_INFINITY` when the model rules the token out.
    fn conditional_log_prob(&self, context: &[usize], token: usize) -> f64;
}

/// Log-probabilities of each token of `seq` given its prefix.
pub fn token_log_probs<M: LanguageModel + ?Sized>(lm: &M, seq: &TokenSequence) -> Vec<f64> {
    (0..seq.tokens.len())
        .map(|i| lm.conditional_log_prob(&seq.tokens[..i], seq.tokens[i]))
        .collect()
}

/// Chain-rule log-probability of the whole sequence.
///
/// An impossible sequence (some observed token has probability zero) yields
/// `f64::NEG_INFINITY`.
pub fn sequence_log_prob<M: LanguageModel + ?Sized>(lm: &M, seq: &TokenSequence) -> Result<f64> {
    if lm.vocab_size() != seq.vocab_size {
        return Err(Error::Argument(format!(
            "model vocabulary {} differs from sequence vocabulary {}",
            lm.vocab_size(),
            seq.vocab_size
        )));
    }
    let mut total = 0.0;
    for lp in token_log_probs(lm, seq) {
        if lp == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        total += lp;
    }
    Ok(total)
}

fn check_logprobs(logprobs: &[f64]) -> Result<()> {
    if logprobs.is_empty() {
        return Err(Error::Argument("log-probability list is empty".into()));
    }
    if let Some((i, v)) = logprobs
        .iter()
        .enumerate()
        .find(|(_, v)| v.is_nan() || **v > 0.0)
    {
        return Err(Error::field(
            "token_logprobs",
            format!("entry {i} = {v} is not a log-probability"),
        ));
    }
    Ok(())
}

/// Mean per-token log-probability; `-inf` if any token is impossible.
pub fn mean_log_prob(logprobs: &[f64]) -> Result<f64> {
    check_logprobs(logprobs)?;
    Ok(logprobs.iter().sum::<f64>() / logprobs.len() as f64)
}

/// `exp(-mean(logprobs))`, always `>= 1`; `+inf` for impossible sequences.
pub fn perplexity(logprobs: &[f64]) -> Result<f64> {
    Ok((-mean_log_prob(logprobs)?).exp())
}

/// `L(x) = ln(PPL_target / PPL_reference)`.
///
/// Members tend to have low target perplexity, so `-L(x)` is the oriented
/// membership score.
pub fn lrt_statistic(ppl_target: f64, ppl_reference: f64) -> Result<f64> {
    for (name, v) in [("ppl_target", ppl_target), ("ppl_reference", ppl_reference)] {
        if !v.is_finite() || v < 1.0 {
            return Err(Error::Argument(format!(
                "{name} = {v} must be finite and >= 1"
            )));
        }
    }
    Ok(ppl_target.ln() - ppl_reference.ln())
}

/// LOSS membership score: the mean token log-probability under the target.
pub fn loss_score(logprobs: &[f64]) -> Result<f64> {
    mean_log_prob(logprobs)
}

/// LRT membership score computed from raw log-probabilities, staying in log
/// space. Impossible target sequences score `-inf`; sequences impossible only
/// under the reference score `+inf`.
pub fn lrt_score(target_logprobs: &[f64], reference_logprobs: &[f64]) -> Result<f64> {
    let t = mean_log_prob(target_logprobs)?;
    let r = mean_log_prob(reference_logprobs)?;
    Ok(match (t.is_finite(), r.is_finite()) {
        (false, _) => f64::NEG_INFINITY,
        (true, false) => f64::INFINITY,
        // -L(x) = ln PPL_ref - ln PPL_target = t - r
        (true, true) => t - r,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MembershipMethod {
    Loss,
    Lrt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipScore {
    pub snippet_id: String,
    pub method: MembershipMethod,
    pub value: f64,
}
