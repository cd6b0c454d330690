use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{LogProbRecord, MembershipLabel, ModelId};
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::scoring::{loss_score, lrt_score, MembershipMethod, MembershipScore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub method: MembershipMethod,
    pub target_model: ModelId,
    #[serde(default)]
    pub reference_model: Option<ModelId>,
    #[serde(default)]
    pub seed: u64,
}

impl AuditConfig {
    pub fn validate(&self) -> Result<()> {
        match (self.method, &self.reference_model) {
            (MembershipMethod::Lrt, None) => {
                Err(Error::Config("LRT needs a reference_model".into()))
            }
            (MembershipMethod::Lrt, Some(r)) if *r == self.target_model => Err(Error::Config(
                "reference_model must differ from target_model".into(),
            )),
            (MembershipMethod::Loss, Some(_)) => {
                Err(Error::Config("LOSS takes no reference_model".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Log-prob records keyed by model, then snippet.
pub(crate) fn logprob_index(
    records: &[LogProbRecord],
) -> Result<BTreeMap<&ModelId, BTreeMap<&str, &[f64]>>> {
    let mut out: BTreeMap<&ModelId, BTreeMap<&str, &[f64]>> = BTreeMap::new();
    for r in records {
        let per_model = out.entry(&r.model_id).or_default();
        if per_model.insert(&r.snippet_id, &r.token_logprobs).is_some() {
            return Err(Error::Validation {
                line: None,
                field: "snippet_id".into(),
                reason: format!(
                    "duplicate log-prob record for `{}` under `{}`",
                    r.snippet_id, r.model_id
                ),
            });
        }
    }
    Ok(out)
}

/// Looks up every id under one model, failing with the full list of gaps.
pub(crate) fn require_logprobs<'a>(
    index: &BTreeMap<&ModelId, BTreeMap<&str, &'a [f64]>>,
    model: &ModelId,
    ids: &[&str],
) -> Result<Vec<&'a [f64]>> {
    let empty = BTreeMap::new();
    let per_model = index.get(model).unwrap_or(&empty);
    let missing: Vec<&str> = ids
        .iter()
        .copied()
        .filter(|id| !per_model.contains_key(id))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "no log-probs under `{model}` for snippets: {}",
            missing.join(", ")
        )));
    }
    Ok(ids.iter().map(|id| per_model[id]).collect())
}

/// Oriented membership scores (higher means more likely a member) for the
/// given snippets. Sees no labels.
pub fn membership_scores(
    config: &AuditConfig,
    logprobs: &[LogProbRecord],
    snippet_ids: &[&str],
) -> Result<Vec<MembershipScore>> {
    config.validate()?;
    let index = logprob_index(logprobs)?;
    let target = require_logprobs(&index, &config.target_model, snippet_ids)?;
    let values: Vec<f64> = match (&config.method, &config.reference_model) {
        (MembershipMethod::Loss, _) => target
            .iter()
            .map(|t| loss_score(t))
            .collect::<Result<_>>()?,
        (MembershipMethod::Lrt, Some(r)) => {
            let reference = require_logprobs(&index, r, snippet_ids)?;
            target
                .iter()
                .zip(&reference)
                .map(|(t, r)| lrt_score(t, r))
                .collect::<Result<_>>()?
        }
        (MembershipMethod::Lrt, None) => unreachable!("validated above"),
    };
    Ok(snippet_ids
        .iter()
        .zip(values)
        .map(|(id, value)| MembershipScore {
            snippet_id: id.to_string(),
            method: config.method,
            value,
        })
        .collect())
}

/// Scores every labeled snippet and reports AUC, ROC and TPR at fixed FPRs.
pub fn run_membership_audit(
    config: &AuditConfig,
    logprobs: &[LogProbRecord],
    labels: &[MembershipLabel],
    config_digest: &str,
) -> Result<EvalReport> {
    let mut seen = BTreeSet::new();
    if let Some(dup) = labels.iter().find(|l| !seen.insert(l.snippet_id.as_str())) {
        return Err(Error::Validation {
            line: None,
            field: "snippet_id".into(),
            reason: format!("duplicate membership label for `{}`", dup.snippet_id),
        });
    }
    let ids: Vec<&str> = labels.iter().map(|l| l.snippet_id.as_str()).collect();
    let scores = membership_scores(config, logprobs, &ids)?;
    let values: Vec<f64> = scores.iter().map(|s| s.value).collect();
    let truth: Vec<bool> = labels.iter().map(|l| l.member).collect();
    let task = match config.method {
        MembershipMethod::Loss => "membership/LOSS".to_string(),
        MembershipMethod::Lrt => format!(
            "membership/LRT vs {}",
            config.reference_model.as_ref().map_or("", ModelId::as_str)
        ),
    };
    EvalReport::new(task, config_digest, config.seed)
        .with_scores(&values, &truth)?
        .extra("members", truth.iter().filter(|m| **m).count())?
        .extra("non_members", truth.iter().filter(|m| !**m).count())
}
