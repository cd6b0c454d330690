use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::detection::{check_disjoint, fit, vectors};
use super::membership::{logprob_index, require_logprobs};
use crate::corpus::{
    join, CodeSnippet, EmbeddingRecord, LabelTask, LogProbRecord, ModelId, Origin,
};
use crate::error::{Error, Result};
use crate::hyptest::pooled_bandwidth;
use crate::kernel::KernelSpec;
use crate::learners::{
    calibrate_threshold, train_ocsvm, OneClassSvmModel, SoftmaxClassifier, SoftmaxHyper, DEFAULT_NU,
};
use crate::metrics::EvalReport;
use crate::scoring::perplexity;
use crate::stats::derive_seed;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassificationConfig {
    /// Class order; `None` sorts the generator ids found in training data.
    pub models: Option<Vec<ModelId>>,
    pub hyper: SoftmaxHyper,
    pub seed: u64,
}

/// K-way generator attribution. Also returns the trained classifier.
pub fn run_attribution_classification(
    snippets: &[CodeSnippet],
    train: &[EmbeddingRecord],
    test: &[EmbeddingRecord],
    config: &ClassificationConfig,
    config_digest: &str,
) -> Result<(EvalReport, SoftmaxClassifier)> {
    check_disjoint(train, test)?;
    let task = LabelTask::ByModel(config.models.clone());
    let train_set = join(snippets, train, &task)?;
    // Test labels follow the training class order.
    let order = train_set
        .class_names
        .iter()
        .map(ModelId::new)
        .collect::<Result<Vec<_>>>()?;
    if order.len() < 2 {
        return Err(Error::Training(
            "attribution needs at least two generators".into(),
        ));
    }
    let test_set = join(snippets, test, &LabelTask::ByModel(Some(order)))?;
    let hyper = SoftmaxHyper {
        seed: derive_seed(config.seed, &[1]),
        ..config.hyper
    };
    let clf = fit(&train_set, hyper, derive_seed(config.seed, &[0]))?;
    let predicted: Vec<usize> = clf
        .predict_batch(&vectors(&test_set))?
        .into_iter()
        .map(|(_, l)| l)
        .collect();
    let report = EvalReport::new("attr-classify", config_digest, config.seed)
        .with_predictions(
            &test_set.labels(),
            &predicted,
            train_set.class_names.clone(),
        )?
        .extra("final_training_loss", clf.loss_history.last().copied())?;
    Ok((report, clf))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingleInstanceConfig {
    pub target_fpr: f64,
    /// Share of non-target scores held out to calibrate the threshold.
    pub calibration_fraction: f64,
    pub seed: u64,
}

impl Default for SingleInstanceConfig {
    fn default() -> Self {
        SingleInstanceConfig {
            target_fpr: 0.05,
            calibration_fraction: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibratedOutcome {
    pub threshold: f64,
    pub target_fpr: f64,
    pub calibration_fpr: f64,
    /// Rates on the evaluation split at the calibrated threshold.
    pub tpr: f64,
    pub fpr: f64,
}

/// Positive iff the snippet's origin is the target; `Unknown` is dropped.
fn target_flags<'a>(
    snippets: &'a [CodeSnippet],
    ids: impl Iterator<Item = &'a str>,
    target: &ModelId,
) -> Result<Vec<bool>> {
    let origin_of: BTreeMap<&str, &Origin> = snippets
        .iter()
        .map(|s| (s.snippet_id.as_str(), &s.origin))
        .collect();
    let mut missing = Vec::new();
    let mut flags = Vec::new();
    for id in ids {
        match origin_of.get(id) {
            Some(Origin::Model(m)) => flags.push(m == target),
            Some(_) => flags.push(false),
            None => missing.push(id.to_string()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Join { missing });
    }
    Ok(flags)
}

/// Calibrates on a seeded share of the negatives and reports the ROC and
/// operating point on the rest.
fn single_instance_report(
    task: &str,
    scores: &[f64],
    is_target: &[bool],
    config: &SingleInstanceConfig,
    config_digest: &str,
) -> Result<EvalReport> {
    if !(config.calibration_fraction > 0.0 && config.calibration_fraction < 1.0) {
        return Err(Error::Config(
            "calibration_fraction must lie in (0, 1)".into(),
        ));
    }
    let mut negatives: Vec<usize> = (0..scores.len()).filter(|&i| !is_target[i]).collect();
    let positives: Vec<usize> = (0..scores.len()).filter(|&i| is_target[i]).collect();
    if positives.is_empty() || negatives.len() < 2 {
        return Err(Error::Data(
            "need target snippets and at least two non-target snippets".into(),
        ));
    }
    negatives.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
        config.seed,
        &[7],
    )));
    let cut = ((negatives.len() as f64 * config.calibration_fraction).round() as usize)
        .clamp(1, negatives.len() - 1);
    let (calib, held) = negatives.split_at(cut);
    let calib_scores: Vec<f64> = calib.iter().map(|&i| scores[i]).collect();
    let threshold = calibrate_threshold(&calib_scores, config.target_fpr)?;

    let eval: Vec<usize> = positives.iter().chain(held).copied().collect();
    let eval_scores: Vec<f64> = eval.iter().map(|&i| scores[i]).collect();
    let eval_truth: Vec<bool> = eval.iter().map(|&i| is_target[i]).collect();
    let rate = |set: &[usize]| {
        set.iter()
            .filter(|&&i| threshold.is_positive(scores[i]))
            .count() as f64
            / set.len() as f64
    };
    let outcome = CalibratedOutcome {
        threshold: threshold.threshold,
        target_fpr: config.target_fpr,
        calibration_fpr: threshold.achieved_fpr,
        tpr: rate(&positives),
        fpr: rate(held),
    };
    EvalReport::new(task, config_digest, config.seed)
        .with_scores(&eval_scores, &eval_truth)?
        .extra("calibrated", outcome)?
        .extra("target_count", positives.len())?
        .extra("non_target_eval_count", held.len())
}

/// Scores every attributable snippet by `-PPL` under the target model.
pub fn run_likelihood_attribution(
    target: &ModelId,
    snippets: &[CodeSnippet],
    logprobs: &[LogProbRecord],
    config: &SingleInstanceConfig,
    config_digest: &str,
) -> Result<EvalReport> {
    let ids: Vec<&str> = snippets
        .iter()
        .filter(|s| s.origin != Origin::Unknown)
        .map(|s| s.snippet_id.as_str())
        .collect();
    let index = logprob_index(logprobs)?;
    let records = require_logprobs(&index, target, &ids)?;
    // Unlabeled scoring pass.
    let scores: Vec<f64> = records
        .iter()
        .map(|lp| perplexity(lp).map(|p| -p))
        .collect::<Result<_>>()?;
    let flags = target_flags(snippets, ids.iter().copied(), target)?;
    single_instance_report(
        &format!("attr-single/likelihood/{target}"),
        &scores,
        &flags,
        config,
        config_digest,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneClassConfig {
    pub nu: f64,
    /// Kernel bandwidth; `None` uses the median heuristic on the training set.
    pub gamma: Option<f64>,
    pub single: SingleInstanceConfig,
}

impl Default for OneClassConfig {
    fn default() -> Self {
        OneClassConfig {
            nu: DEFAULT_NU,
            gamma: None,
            single: SingleInstanceConfig::default(),
        }
    }
}

/// Fits a one-class SVM to the target's training embeddings and scores the
/// mixed test set by its decision value.
pub fn run_oneclass_attribution(
    target: &ModelId,
    snippets: &[CodeSnippet],
    train: &[EmbeddingRecord],
    test: &[EmbeddingRecord],
    config: &OneClassConfig,
    config_digest: &str,
) -> Result<(EvalReport, OneClassSvmModel)> {
    check_disjoint(train, test)?;
    let train_flags = target_flags(
        snippets,
        train.iter().map(|r| r.snippet_id.as_str()),
        target,
    )?;
    if let Some(i) = train_flags.iter().position(|f| !f) {
        return Err(Error::Data(format!(
            "one-class training snippet `{}` is not from `{target}`",
            train[i].snippet_id
        )));
    }
    let xs: Vec<Vec<f64>> = train.iter().map(|r| r.vector.clone()).collect();
    let kernel = match config.gamma {
        Some(g) => KernelSpec::gaussian(g)?,
        None => pooled_bandwidth(&xs, &[])?,
    };
    let model = train_ocsvm(&xs, config.nu, kernel)?;
    let test: Vec<&EmbeddingRecord> = {
        let known: BTreeMap<&str, &Origin> = snippets
            .iter()
            .map(|s| (s.snippet_id.as_str(), &s.origin))
            .collect();
        test.iter()
            .filter(|r| {
                known
                    .get(r.snippet_id.as_str())
                    .is_none_or(|o| **o != Origin::Unknown)
            })
            .collect()
    };
    let scores =
        model.decision_batch(&test.iter().map(|r| r.vector.clone()).collect::<Vec<_>>())?;
    let flags = target_flags(snippets, test.iter().map(|r| r.snippet_id.as_str()), target)?;
    let report = single_instance_report(
        &format!("attr-single/oneclass/{target}"),
        &scores,
        &flags,
        &config.single,
        config_digest,
    )?
    .extra("nu", config.nu)?
    .extra("gamma", kernel.gamma)?
    .extra("support_vectors", model.alphas.len())?;
    Ok((report, model))
}
