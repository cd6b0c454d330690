//! Ranking and classification metrics, and the report document every
//! pipeline emits.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// False-positive rates reported by default.
pub const REPORTED_FPRS: [f64; 2] = [0.01, 0.05];

fn check_scores(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::Argument(format!("score {i} is NaN")));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Argument("both classes must be present".into()));
    }
    Ok((pos, neg))
}

/// Indices sorted by descending score; equal scores stay adjacent.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// Mann-Whitney AUC with midranks for ties. Positives are `true`.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_scores(scores, labels)?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their mean.
        let mid = (i + j + 2) as f64 / 2.0;
        rank_sum += mid * idx[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// ROC points `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, one per distinct score.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    let (pos, neg) = check_scores(scores, labels)?;
    let idx = descending(scores);
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if labels[idx[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(points)
}

/// Trapezoidal area under a ROC curve.
pub fn trapezoid_area(roc: &[(f64, f64)]) -> f64 {
    roc.windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

/// Largest TPR over operating points whose FPR does not exceed `target`.
pub fn tpr_at_fpr(scores: &[f64], labels: &[bool], target: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::Argument(format!(
            "target FPR {target} outside [0, 1]"
        )));
    }
    Ok(tpr_at_fpr_on_roc(&roc_curve(scores, labels)?, target))
}

pub(crate) fn tpr_at_fpr_on_roc(roc: &[(f64, f64)], target: f64) -> f64 {
    roc.iter()
        .filter(|(f, _)| *f <= target + 1e-12)
        .map(|(_, t)| *t)
        .fold(0.0, f64::max)
}

/// Rows are true classes, columns predictions.
pub fn confusion_matrix(
    truth: &[usize],
    predicted: &[usize],
    classes: usize,
) -> Result<Vec<Vec<u64>>> {
    if truth.len() != predicted.len() {
        return Err(Error::Argument(
            "truth and predictions differ in length".into(),
        ));
    }
    let mut m = vec![vec![0u64; classes]; classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= classes || p >= classes {
            return Err(Error::Argument(format!("label outside 0..{classes}")));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

pub fn accuracy(truth: &[usize], predicted: &[usize]) -> Result<f64> {
    if truth.is_empty() || truth.len() != predicted.len() {
        return Err(Error::Argument(
            "accuracy needs equal, non-empty label lists".into(),
        ));
    }
    let hits = truth.iter().zip(predicted).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Hex SHA-256 of a configuration document.
pub fn config_digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn fpr_key(f: f64) -> String {
    format!("{f}")
}

/// One evaluation run's results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub auc: Option<f64>,
    #[serde(default)]
    pub roc: Vec<(f64, f64)>,
    #[serde(default)]
    pub tpr_at_fpr: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub confusion: Option<Vec<Vec<u64>>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub class_names: Option<Vec<String>>,
    pub config_digest: String,
    pub seed: u64,
    /// Task-specific results (cross-domain grids, power curves, test results).
    #[serde(default)]
    pub extras: BTreeMap<String, serde_json::Value>,
}

impl EvalReport {
    pub fn new(task: impl Into<String>, config_digest: impl Into<String>, seed: u64) -> Self {
        EvalReport {
            task: task.into(),
            auc: None,
            roc: Vec::new(),
            tpr_at_fpr: BTreeMap::new(),
            accuracy: None,
            confusion: None,
            class_names: None,
            config_digest: config_digest.into(),
            seed,
            extras: BTreeMap::new(),
        }
    }

    /// Fills AUC, ROC and TPR at the reported FPRs from scored examples.
    pub fn with_scores(mut self, scores: &[f64], labels: &[bool]) -> Result<Self> {
        let roc = roc_curve(scores, labels)?;
        self.auc = Some(auc(scores, labels)?);
        for f in REPORTED_FPRS {
            self.tpr_at_fpr
                .insert(fpr_key(f), tpr_at_fpr_on_roc(&roc, f));
        }
        self.roc = roc;
        Ok(self)
    }

    /// Fills accuracy and the confusion matrix.
    pub fn with_predictions(
        mut self,
        truth: &[usize],
        predicted: &[usize],
        class_names: Vec<String>,
    ) -> Result<Self> {
        self.confusion = Some(confusion_matrix(truth, predicted, class_names.len())?);
        self.accuracy = Some(accuracy(truth, predicted)?);
        self.class_names = Some(class_names);
        Ok(self)
    }

    pub fn extra(mut self, key: &str, value: impl Serialize) -> Result<Self> {
        let v = serde_json::to_value(value).map_err(|e| Error::Data(e.to_string()))?;
        self.extras.insert(key.to_string(), v);
        Ok(self)
    }

    pub fn tpr(&self, fpr: f64) -> Option<f64> {
        self.tpr_at_fpr.get(&fpr_key(fpr)).copied()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Data(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_json()?.as_bytes())?;
        f.write_all(b"\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            reason: e.to_string(),
        })
    }
}

/// A labeled matrix, e.g. AUC for each (train, test) domain pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl Grid {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("train");
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (r, row) in self.rows.iter().zip(&self.values) {
            out.push_str(r);
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Projects rows of `data` onto their top two principal components.
pub fn pca_2d(data: &[Vec<f64>]) -> Result<Vec<[f64; 2]>> {
    let n = data.len();
    if n < 2 {
        return Err(Error::Argument(
            "projection needs at least two points".into(),
        ));
    }
    let d = data[0].len();
    if d < 2 || data.iter().any(|r| r.len() != d) {
        return Err(Error::Argument(
            "projection needs rows of one dimension >= 2".into(),
        ));
    }
    let mut mean = vec![0.0; d];
    for r in data {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x / n as f64;
        }
    }
    let centered = nalgebra::DMatrix::from_fn(n, d, |i, j| data[i][j] - mean[j]);
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let axes: Vec<Vec<f64>> = order[..2]
        .iter()
        .map(|&k| {
            let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            // Sign convention: largest-magnitude component positive.
            let big = v
                .iter()
                .copied()
                .fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
            if big < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();
    Ok((0..n)
        .map(|i| {
            let row = centered.row(i);
            let p = |a: &Vec<f64>| row.iter().zip(a).map(|(x, y)| x * y).sum::<f64>();
            [p(&axes[0]), p(&axes[1])]
        })
        .collect())
}
