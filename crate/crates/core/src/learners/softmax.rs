use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxHyper {
    pub learning_rate: f64,
    pub l2_lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SoftmaxHyper {
    fn default() -> Self {
        SoftmaxHyper {
            learning_rate: 0.1,
            l2_lambda: 1e-4,
            epochs: 200,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl SoftmaxHyper {
    fn check(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Argument(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return Err(Error::Argument(format!(
                "l2 lambda {} must be >= 0",
                self.l2_lambda
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Argument(
                "epochs and batch size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Linear softmax classifier `p(y | x) = softmax(W x + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxClassifier {
    /// `K` rows of length `d`.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub hyper: SoftmaxHyper,
    /// Full-data training objective after each epoch.
    #[serde(default)]
    pub loss_history: Vec<f64>,
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

impl SoftmaxClassifier {
    pub fn zeros(classes: usize, dimension: usize, hyper: SoftmaxHyper) -> Self {
        SoftmaxClassifier {
            weights: vec![vec![0.0; dimension]; classes],
            bias: vec![0.0; classes],
            hyper,
            loss_history: Vec::new(),
        }
    }

    pub fn class_count(&self) -> usize {
        self.bias.len()
    }

    pub fn dimension(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    fn logits_unchecked(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| b + w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
            .collect()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dimension() {
            return Err(Error::Argument(format!(
                "input has dimension {}, classifier expects {}",
                x.len(),
                self.dimension()
            )));
        }
        Ok(())
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok(self.logits_unchecked(x))
    }

    /// Class probabilities and the argmax label.
    pub fn predict(&self, x: &[f64]) -> Result<(Vec<f64>, usize)> {
        let probs = softmax(&self.logits(x)?);
        let label = argmax(&probs);
        Ok((probs, label))
    }

    pub fn predict_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<(Vec<f64>, usize)>> {
        xs.par_iter().map(|x| self.predict(x)).collect()
    }

    fn is_finite(&self) -> bool {
        self.bias
            .iter()
            .chain(self.weights.iter().flatten())
            .all(|v| v.is_finite())
    }
}

/// Mean cross-entropy plus `l2 / 2 * ||W||²` (bias unregularized).
pub fn objective(clf: &SoftmaxClassifier, xs: &[Vec<f64>], ys: &[usize], l2: f64) -> f64 {
    let ce: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, &y)| {
            let z = clf.logits_unchecked(x);
            log_sum_exp(&z) - z[y]
        })
        .sum::<f64>()
        / xs.len() as f64;
    let norm: f64 = clf.weights.iter().flatten().map(|w| w * w).sum();
    ce + 0.5 * l2 * norm
}

/// Gradient of [`objective`] with respect to weights and bias.
pub fn gradient(
    clf: &SoftmaxClassifier,
    xs: &[Vec<f64>],
    ys: &[usize],
    l2: f64,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let k = clf.class_count();
    let d = clf.dimension();
    let mut gw = vec![vec![0.0; d]; k];
    let mut gb = vec![0.0; k];
    let scale = 1.0 / xs.len() as f64;
    for (x, &y) in xs.iter().zip(ys) {
        let mut p = softmax(&clf.logits_unchecked(x));
        p[y] -= 1.0;
        for c in 0..k {
            gb[c] += scale * p[c];
            for (g, xi) in gw[c].iter_mut().zip(x) {
                *g += scale * p[c] * xi;
            }
        }
    }
    for (g, w) in gw.iter_mut().flatten().zip(clf.weights.iter().flatten()) {
        *g += l2 * w;
    }
    (gw, gb)
}

/// Mini-batch gradient descent on regularized cross-entropy.
///
/// An epoch that raises the full-data objective is rolled back and the step
/// size halved, so `loss_history` never increases.
pub fn train_softmax(
    xs: &[Vec<f64>],
    ys: &[usize],
    classes: usize,
    hyper: SoftmaxHyper,
) -> Result<SoftmaxClassifier> {
    hyper.check()?;
    if xs.len() != ys.len() || xs.is_empty() {
        return Err(Error::Argument(
            "features and labels must be non-empty and aligned".into(),
        ));
    }
    let d = xs[0].len();
    if let Some(i) = xs
        .iter()
        .position(|x| x.len() != d || x.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::Argument(format!(
            "example {i} has wrong dimension or non-finite values"
        )));
    }
    if let Some(&y) = ys.iter().find(|&&y| y >= classes) {
        return Err(Error::Argument(format!("label {y} outside 0..{classes}")));
    }
    let mut present = vec![false; classes];
    ys.iter().for_each(|&y| present[y] = true);
    if classes < 2 || present.iter().any(|p| !p) {
        let missing: Vec<usize> = (0..classes).filter(|&c| !present[c]).collect();
        return Err(Error::Training(format!(
            "need at least two classes, each present in training data; missing {missing:?}"
        )));
    }

    let mut clf = SoftmaxClassifier::zeros(classes, d, hyper);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut bx: Vec<Vec<f64>> = Vec::with_capacity(hyper.batch_size);
    let mut by: Vec<usize> = Vec::with_capacity(hyper.batch_size);
    let mut rate = hyper.learning_rate;
    let mut previous = objective(&clf, xs, ys, hyper.l2_lambda);
    for epoch in 1..=hyper.epochs {
        let snapshot = (clf.weights.clone(), clf.bias.clone());
        order.shuffle(&mut rng);
        for chunk in order.chunks(hyper.batch_size) {
            bx.clear();
            by.clear();
            for &i in chunk {
                bx.push(xs[i].clone());
                by.push(ys[i]);
            }
            let (gw, gb) = gradient(&clf, &bx, &by, hyper.l2_lambda);
            for (w, g) in clf.weights.iter_mut().flatten().zip(gw.iter().flatten()) {
                *w -= rate * g;
            }
            for (b, g) in clf.bias.iter_mut().zip(&gb) {
                *b -= rate * g;
            }
        }
        let loss = objective(&clf, xs, ys, hyper.l2_lambda);
        if !loss.is_finite() || !clf.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        if loss > previous {
            (clf.weights, clf.bias) = snapshot;
            rate *= 0.5;
        } else {
            previous = loss;
        }
        clf.loss_history.push(previous);
    }
    Ok(clf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_problem(
        seed: u64,
        n: usize,
        d: usize,
        k: usize,
    ) -> (Vec<Vec<f64>>, Vec<usize>, SoftmaxClassifier) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let ys = (0..n).map(|i| i % k).collect();
        let mut clf = SoftmaxClassifier::zeros(k, d, SoftmaxHyper::default());
        clf.weights
            .iter_mut()
            .flatten()
            .for_each(|w| *w = rng.random_range(-1.0..1.0));
        clf.bias
            .iter_mut()
            .for_each(|b| *b = rng.random_range(-1.0..1.0));
        (xs, ys, clf)
    }

    #[test]
    fn gradient_matches_central_differences() {
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for seed in 0..10 {
            let (xs, ys, clf) = random_problem(seed, 12, 4, 3);
            let l2 = 0.01;
            let (gw, gb) = gradient(&clf, &xs, &ys, l2);
            for c in 0..3 {
                for j in 0..=4 {
                    let mut up = clf.clone();
                    let mut down = clf.clone();
                    let analytic = if j < 4 {
                        up.weights[c][j] += h;
                        down.weights[c][j] -= h;
                        gw[c][j]
                    } else {
                        up.bias[c] += h;
                        down.bias[c] -= h;
                        gb[c]
                    };
                    let numeric =
                        (objective(&up, &xs, &ys, l2) - objective(&down, &xs, &ys, l2)) / (2.0 * h);
                    let rel =
                        (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3);
                    worst = worst.max(rel);
                }
            }
        }
        assert!(worst < 1e-5, "{worst}");
    }

    #[test]
    fn separable_single_points() {
        let xs = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
        let clf = train_softmax(&xs, &[0, 1], 2, SoftmaxHyper::default()).unwrap();
        assert_eq!(clf.predict(&xs[0]).unwrap().1, 0);
        assert_eq!(clf.predict(&xs[1]).unwrap().1, 1);
    }

    #[test]
    fn relabeling_permutes_predictions() {
        let (xs, _, _) = random_problem(4, 60, 3, 3);
        let ys: Vec<usize> = xs
            .iter()
            .map(|x| {
                if x[0] > 0.5 {
                    0
                } else if x[1] > 0.0 {
                    1
                } else {
                    2
                }
            })
            .collect();
        let perm = [2, 0, 1];
        let ys2: Vec<usize> = ys.iter().map(|&y| perm[y]).collect();
        let a = train_softmax(&xs, &ys, 3, SoftmaxHyper::default()).unwrap();
        let b = train_softmax(&xs, &ys2, 3, SoftmaxHyper::default()).unwrap();
        for x in &xs {
            assert_eq!(perm[a.predict(x).unwrap().1], b.predict(x).unwrap().1);
        }
    }

    #[test]
    fn zero_model_is_uniform() {
        let clf = SoftmaxClassifier::zeros(4, 3, SoftmaxHyper::default());
        let (p, label) = clf.predict(&[1.0, 2.0, 3.0]).unwrap();
        assert!(p.iter().all(|v| (v - 0.25).abs() < 1e-15));
        assert_eq!(label, 0);
        assert!(clf.predict(&[1.0]).is_err());
    }

    #[test]
    fn two_class_probabilities_match_hand_softmax() {
        let mut clf = SoftmaxClassifier::zeros(2, 2, SoftmaxHyper::default());
        clf.weights = vec![vec![0.5, -1.0], vec![2.0, 0.25]];
        clf.bias = vec![0.1, -0.3];
        let x = [1.5, 2.0];
        // z0 = 0.1 + 0.75 - 2 = -1.15, z1 = -0.3 + 3 + 0.5 = 3.2
        let p1 = 1.0 / (1.0 + (-1.15f64 - 3.2).exp());
        let (p, label) = clf.predict(&x).unwrap();
        assert!((p[1] - p1).abs() <= 1e-12);
        assert!((p[0] - (1.0 - p1)).abs() <= 1e-12);
        assert_eq!(label, 1);
    }

    #[test]
    fn scaling_logits_keeps_the_label() {
        let (xs, _, clf) = random_problem(2, 20, 3, 4);
        let mut scaled = clf.clone();
        scaled.weights.iter_mut().flatten().for_each(|w| *w *= 3.7);
        scaled.bias.iter_mut().for_each(|b| *b *= 3.7);
        for x in &xs {
            assert_eq!(clf.predict(x).unwrap().1, scaled.predict(x).unwrap().1);
        }
    }

    #[test]
    fn single_class_and_divergence_errors() {
        let xs = vec![vec![1.0], vec![2.0]];
        assert!(matches!(
            train_softmax(&xs, &[0, 0], 2, SoftmaxHyper::default()),
            Err(Error::Training(_))
        ));
        let wild = SoftmaxHyper {
            learning_rate: 1e300,
            ..SoftmaxHyper::default()
        };
        let xs = vec![vec![1e10], vec![-1e10]];
        assert!(matches!(
            train_softmax(&xs, &[0, 1], 2, wild),
            Err(Error::Divergence { epoch: 1 })
        ));
    }

    #[test]
    fn training_is_seeded() {
        let (xs, ys, _) = random_problem(7, 80, 3, 2);
        let h = SoftmaxHyper {
            epochs: 20,
            seed: 5,
            ..SoftmaxHyper::default()
        };
        assert_eq!(
            train_softmax(&xs, &ys, 2, h).unwrap(),
            train_softmax(&xs, &ys, 2, h).unwrap()
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn probabilities_form_a_distribution(
                w in prop::collection::vec(-50.0f64..50.0, 12),
                x in prop::collection::vec(-50.0f64..50.0, 4),
            ) {
                let mut clf = SoftmaxClassifier::zeros(3, 4, SoftmaxHyper::default());
                for (c, row) in clf.weights.iter_mut().enumerate() {
                    row.copy_from_slice(&w[c * 4..c * 4 + 4]);
                }
                let (p, _) = clf.predict(&x).unwrap();
                prop_assert!(p.iter().all(|v| *v >= 0.0));
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
    }
}
