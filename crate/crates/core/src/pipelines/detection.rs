use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{
    balance_classes, join, CodeSnippet, EmbeddingRecord, LabelTask, LabeledDataset, ModelId, Origin,
};
use crate::error::{Error, Result};
use crate::learners::{train_softmax, SoftmaxClassifier, SoftmaxHyper};
use crate::metrics::{auc, EvalReport, Grid};
use crate::stats::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    pub hyper: SoftmaxHyper,
    /// Also train one detector per generator and test it on every other.
    pub cross_generator: bool,
    pub seed: u64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            hyper: SoftmaxHyper::default(),
            cross_generator: true,
            seed: 0,
        }
    }
}

pub(crate) fn check_disjoint(train: &[EmbeddingRecord], test: &[EmbeddingRecord]) -> Result<()> {
    let train_ids: BTreeSet<&str> = train.iter().map(|r| r.snippet_id.as_str()).collect();
    let shared: Vec<&str> = test
        .iter()
        .map(|r| r.snippet_id.as_str())
        .filter(|id| train_ids.contains(id))
        .collect();
    if !shared.is_empty() {
        return Err(Error::Config(format!(
            "train and test share snippet ids: {}",
            shared.join(", ")
        )));
    }
    Ok(())
}

pub(crate) fn vectors(data: &LabeledDataset<EmbeddingRecord>) -> Vec<Vec<f64>> {
    data.features()
        .into_iter()
        .map(|e| e.vector.clone())
        .collect()
}

pub(crate) fn fit(
    data: &LabeledDataset<EmbeddingRecord>,
    hyper: SoftmaxHyper,
    seed: u64,
) -> Result<SoftmaxClassifier> {
    let balanced = balance_classes(data, seed);
    train_softmax(
        &vectors(&balanced),
        &balanced.labels(),
        balanced.class_count,
        hyper,
    )
}

/// Probability of the "model" class for each example, computed without labels.
fn neural_scores(
    clf: &SoftmaxClassifier,
    data: &LabeledDataset<EmbeddingRecord>,
) -> Result<Vec<f64>> {
    Ok(clf
        .predict_batch(&vectors(data))?
        .into_iter()
        .map(|(p, _)| p[1])
        .collect())
}

fn origins(snippets: &[CodeSnippet]) -> BTreeMap<&str, &Origin> {
    snippets
        .iter()
        .map(|s| (s.snippet_id.as_str(), &s.origin))
        .collect()
}

/// Keeps human examples plus those from one generator.
fn restrict(
    data: &LabeledDataset<EmbeddingRecord>,
    origin_of: &BTreeMap<&str, &Origin>,
    generator: &ModelId,
) -> LabeledDataset<EmbeddingRecord> {
    data.filter(|e| match origin_of.get(e.features.snippet_id.as_str()) {
        Some(Origin::Human) => true,
        Some(Origin::Model(m)) => m == generator,
        _ => false,
    })
}

fn generators(
    data: &LabeledDataset<EmbeddingRecord>,
    origin_of: &BTreeMap<&str, &Origin>,
) -> BTreeSet<ModelId> {
    data.examples
        .iter()
        .filter_map(|e| {
            origin_of
                .get(e.features.snippet_id.as_str())
                .and_then(|o| o.model().cloned())
        })
        .collect()
}

/// Human-vs-model detector trained on `train` embeddings and scored on
/// `test`; the report's AUC treats "model" as the positive class.
pub fn run_detection(
    snippets: &[CodeSnippet],
    train: &[EmbeddingRecord],
    test: &[EmbeddingRecord],
    config: &DetectionConfig,
    config_digest: &str,
) -> Result<EvalReport> {
    check_disjoint(train, test)?;
    let train_set = join(snippets, train, &LabelTask::HumanVsModel)?;
    let test_set = join(snippets, test, &LabelTask::HumanVsModel)?;
    if train_set.class_counts().contains(&0) {
        return Err(Error::Training(
            "detection training needs both human and model snippets".into(),
        ));
    }
    let hyper = SoftmaxHyper {
        seed: derive_seed(config.seed, &[1]),
        ..config.hyper
    };
    let clf = fit(&train_set, hyper, derive_seed(config.seed, &[0]))?;
    let scores = neural_scores(&clf, &test_set)?;
    let truth: Vec<bool> = test_set.labels().iter().map(|&l| l == 1).collect();
    let mut report = EvalReport::new("detect", config_digest, config.seed)
        .with_scores(&scores, &truth)?
        .extra("final_training_loss", clf.loss_history.last().copied())?;

    let origin_of = origins(snippets);
    let train_gens = generators(&train_set, &origin_of);
    let test_gens: Vec<ModelId> = generators(&test_set, &origin_of).into_iter().collect();
    if config.cross_generator && train_gens.len() > 1 {
        let mut values = Vec::new();
        for (k, g) in train_gens.iter().enumerate() {
            let sub = restrict(&train_set, &origin_of, g);
            let hyper = SoftmaxHyper {
                seed: derive_seed(config.seed, &[2, k as u64, 1]),
                ..config.hyper
            };
            let clf = fit(&sub, hyper, derive_seed(config.seed, &[2, k as u64, 0]))?;
            let mut row = Vec::new();
            for h in &test_gens {
                let eval = restrict(&test_set, &origin_of, h);
                let truth: Vec<bool> = eval.labels().iter().map(|&l| l == 1).collect();
                row.push(auc(&neural_scores(&clf, &eval)?, &truth)?);
            }
            values.push(row);
        }
        report = report.extra(
            "cross_generator",
            Grid {
                rows: train_gens.iter().map(ToString::to_string).collect(),
                columns: test_gens.iter().map(ToString::to_string).collect(),
                values,
            },
        )?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{detection_world, EmbeddingBenchmarkConfig};

    fn data(
        shift: f64,
        fingerprint: f64,
        seed: u64,
    ) -> (Vec<CodeSnippet>, Vec<EmbeddingRecord>, Vec<EmbeddingRecord>) {
        let cfg = EmbeddingBenchmarkConfig::default();
        let world = detection_world(3, shift, fingerprint, &cfg, seed).unwrap();
        let mut authors = vec![Origin::Human];
        authors.extend(world.origins());
        let train = world
            .simulate(&authors, 300, "train", derive_seed(seed, &[1]))
            .unwrap();
        let test = world
            .simulate(&authors, 300, "test", derive_seed(seed, &[2]))
            .unwrap();
        let mut snippets = train.snippets;
        snippets.extend(test.snippets);
        (snippets, train.embeddings, test.embeddings)
    }

    #[test]
    fn strong_shift_is_detected() {
        let (s, tr, te) = data(5.0, 1.0, 1);
        let r = run_detection(&s, &tr, &te, &DetectionConfig::default(), "d").unwrap();
        assert!(r.auc.unwrap() >= 0.99, "{:?}", r.auc);
        let grid: Grid = serde_json::from_value(r.extras["cross_generator"].clone()).unwrap();
        for row in &grid.values {
            for v in row {
                assert!(*v >= r.auc.unwrap() - 0.15);
            }
        }
    }

    #[test]
    fn no_shift_is_chance() {
        let (s, tr, te) = data(0.0, 0.0, 2);
        let cfg = DetectionConfig {
            cross_generator: false,
            ..DetectionConfig::default()
        };
        let r = run_detection(&s, &tr, &te, &cfg, "d").unwrap();
        assert!((r.auc.unwrap() - 0.5).abs() <= 0.05, "{:?}", r.auc);
    }

    #[test]
    fn shared_ids_are_a_config_error() {
        let (s, tr, _) = data(1.0, 1.0, 3);
        let err = run_detection(&s, &tr, &tr[..5], &DetectionConfig::default(), "d").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
