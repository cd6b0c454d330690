//! Trainable decision rules: a linear softmax classifier over embeddings, a
//! ν-one-class SVM with Gaussian kernel, and fixed-FPR threshold calibration.

mod ocsvm;
mod persist;
mod softmax;

pub use ocsvm::{
    dual_objective, solve_dual, train_ocsvm, DualSolution, OneClassSvmModel, DEFAULT_NU,
    KKT_TOLERANCE, MAX_ITERATIONS,
};
pub use persist::{load_model, read_model, save_model, write_model, SavedModel};
pub use softmax::{
    argmax, gradient, objective, softmax, train_softmax, SoftmaxClassifier, SoftmaxHyper,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibratedThreshold {
    /// Scores strictly above this are flagged positive.
    pub threshold: f64,
    pub achieved_fpr: f64,
}

impl CalibratedThreshold {
    pub fn is_positive(&self, score: f64) -> bool {
        score > self.threshold
    }
}

/// Smallest threshold with at most `target_fpr` of the negatives strictly
/// above it.
pub fn calibrate_threshold(
    negative_scores: &[f64],
    target_fpr: f64,
) -> Result<CalibratedThreshold> {
    if negative_scores.is_empty() {
        return Err(Error::Argument(
            "calibration needs at least one negative score".into(),
        ));
    }
    if !(target_fpr > 0.0 && target_fpr <= 1.0) {
        return Err(Error::Argument(format!(
            "target FPR {target_fpr} outside (0, 1]"
        )));
    }
    if negative_scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Argument("negative scores contain NaN".into()));
    }
    let mut sorted = negative_scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let n = sorted.len();
    let allowed = ((target_fpr * n as f64) + 1e-9).floor() as usize;
    let threshold = if allowed >= n {
        sorted[n - 1].next_down()
    } else {
        sorted[allowed]
    };
    let above = sorted.iter().filter(|s| **s > threshold).count();
    Ok(CalibratedThreshold {
        threshold,
        achieved_fpr: above as f64 / n as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn twenty_negatives_at_five_percent() {
        let neg: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let t = calibrate_threshold(&neg, 0.05).unwrap();
        assert_eq!(t.threshold, 18.0);
        assert_eq!(t.achieved_fpr, 0.05);
        assert!(t.is_positive(19.0) && !t.is_positive(18.0));
    }

    #[test]
    fn full_target_sits_below_the_minimum() {
        let t = calibrate_threshold(&[3.0, 1.0, 2.0], 1.0).unwrap();
        assert!(t.threshold < 1.0);
        assert_eq!(t.achieved_fpr, 1.0);
    }

    #[test]
    fn threshold_is_smallest_admissible_by_counting() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let neg: Vec<f64> = (0..100).map(|_| rng.random::<f64>()).collect();
            let t = calibrate_threshold(&neg, 0.05).unwrap();
            let above = |th: f64| neg.iter().filter(|s| **s > th).count();
            assert!(above(t.threshold) <= 5);
            // Any candidate below it admits too many.
            let lower = neg
                .iter()
                .copied()
                .filter(|s| *s < t.threshold)
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(above(lower) > 5);
            assert!((t.threshold - 0.95).abs() < 0.1);
        }
    }

    #[test]
    fn ties_stay_on_the_safe_side() {
        let t = calibrate_threshold(&[1.0, 1.0, 1.0, 0.0], 0.5).unwrap();
        assert!(t.achieved_fpr <= 0.5);
        assert!(calibrate_threshold(&[], 0.05).is_err());
    }
}
