use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::ModelId;
use crate::error::{Error, Result};
use crate::hyptest::{
    permutation_test, pooled_bandwidth, power_curve, Bandwidth, PoolSource, PowerConfig,
    PowerCurve, TestResult, DEFAULT_ALPHA, DEFAULT_PERMUTATIONS,
};
use crate::metrics::EvalReport;
use crate::stats::derive_seed;

/// Sample sizes of the power-versus-n protocol.
pub const POWER_SWEEP_SIZES: [usize; 7] = [5, 10, 15, 20, 25, 30, 50];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationJob {
    pub claimed_model: ModelId,
    /// Embeddings of the questioned snippets.
    pub candidates: Vec<Vec<f64>>,
    /// Embeddings freshly drawn from the claimed model.
    pub reference: Vec<Vec<f64>>,
    /// Candidates used in the test; `None` uses all of them.
    pub n: Option<usize>,
    /// Reference points used; `None` matches the candidate count.
    pub m: Option<usize>,
    pub alpha: f64,
    pub permutations: usize,
    pub seed: u64,
}

impl VerificationJob {
    pub fn new(
        claimed_model: ModelId,
        candidates: Vec<Vec<f64>>,
        reference: Vec<Vec<f64>>,
    ) -> Self {
        VerificationJob {
            claimed_model,
            candidates,
            reference,
            n: None,
            m: None,
            alpha: DEFAULT_ALPHA,
            permutations: DEFAULT_PERMUTATIONS,
            seed: 0,
        }
    }

    fn sizes(&self) -> Result<(usize, usize)> {
        let n = self.n.unwrap_or(self.candidates.len());
        let m = self.m.unwrap_or(n);
        if n < 2 || m < 2 {
            return Err(Error::Argument(format!(
                "need n >= 2 and m >= 2 (got n = {n}, m = {m})"
            )));
        }
        if n > self.candidates.len() {
            return Err(Error::Data(format!(
                "requested {n} candidates but only {} supplied",
                self.candidates.len()
            )));
        }
        if m > self.reference.len() {
            return Err(Error::Data(format!(
                "need {m} reference embeddings from `{}`, only {} supplied",
                self.claimed_model,
                self.reference.len()
            )));
        }
        Ok((n, m))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSweep {
    pub sizes: Vec<usize>,
    pub trials: usize,
    pub repeats: usize,
}

impl Default for PowerSweep {
    fn default() -> Self {
        PowerSweep {
            sizes: POWER_SWEEP_SIZES.to_vec(),
            trials: crate::hyptest::DEFAULT_TRIALS,
            repeats: crate::hyptest::DEFAULT_REPEATS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationOutcome {
    pub claimed_model: ModelId,
    pub test: TestResult,
    pub power_curve: Option<PowerCurve>,
}

/// Permutation MMD test of the candidates against the claimed model's
/// reference sample, with an optional power sweep that resamples both pools.
pub fn run_attribution_verification(
    job: &VerificationJob,
    sweep: Option<&PowerSweep>,
) -> Result<VerificationOutcome> {
    let (n, m) = job.sizes()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(job.seed, &[0]));
    let x: Vec<Vec<f64>> = job
        .reference
        .choose_multiple(&mut rng, m)
        .cloned()
        .collect();
    let xp: Vec<Vec<f64>> = job
        .candidates
        .choose_multiple(&mut rng, n)
        .cloned()
        .collect();
    let kernel = pooled_bandwidth(&x, &xp)?;
    let test = permutation_test(
        &x,
        &xp,
        &kernel,
        job.permutations,
        job.alpha,
        derive_seed(job.seed, &[1]),
    )?;

    let power_curve = match sweep {
        None => None,
        Some(s) => {
            let largest = s.sizes.iter().copied().max().unwrap_or(0);
            if largest > job.candidates.len() || largest > job.reference.len() {
                return Err(Error::Data(format!(
                    "power sweep up to n = {largest} needs that many candidates and reference points"
                )));
            }
            let config = PowerConfig {
                trials: s.trials,
                repeats: s.repeats,
                alpha: job.alpha,
                permutations: job.permutations,
                bandwidth: Bandwidth::Median,
                pin_reference: false,
                seed: derive_seed(job.seed, &[2]),
            };
            Some(power_curve(
                &PoolSource::new(job.reference.clone()),
                &PoolSource::new(job.candidates.clone()),
                &s.sizes,
                &config,
            )?)
        }
    };
    Ok(VerificationOutcome {
        claimed_model: job.claimed_model.clone(),
        test,
        power_curve,
    })
}

impl VerificationOutcome {
    pub fn report(&self, config_digest: &str, seed: u64) -> Result<EvalReport> {
        let mut r = EvalReport::new(
            format!("attr-verify/{}", self.claimed_model),
            config_digest,
            seed,
        )
        .extra("test_result", &self.test)?;
        if let Some(c) = &self.power_curve {
            r = r.extra("power_curve", c)?;
        }
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Origin;
    use crate::hyptest::SampleSource;
    use crate::synth::{attribution_world, AuthorSource, EmbeddingBenchmarkConfig};

    fn pools(sep: f64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let w = attribution_world(2, sep, &EmbeddingBenchmarkConfig::default()).unwrap();
        let a = AuthorSource::new(w.spec.clone(), Origin::Model(w.models[0].clone())).unwrap();
        let b = AuthorSource::new(w.spec.clone(), Origin::Model(w.models[1].clone())).unwrap();
        (
            a.draw(200, 1).unwrap(),
            a.draw(200, 2).unwrap(),
            b.draw(200, 3).unwrap(),
        )
    }

    #[test]
    fn far_candidates_are_rejected() {
        let (reference, _, other) = pools(4.0);
        let mut job = VerificationJob::new(ModelId::new("toy-A").unwrap(), other, reference);
        job.n = Some(30);
        let out = run_attribution_verification(&job, None).unwrap();
        assert!(out.test.reject);
        assert_eq!((out.test.m, out.test.n), (30, 30));
    }

    #[test]
    fn null_rejection_rate_is_near_alpha() {
        let (reference, same, _) = pools(0.0);
        let job = VerificationJob::new(ModelId::new("toy-A").unwrap(), same, reference);
        let sweep = PowerSweep {
            sizes: vec![20],
            trials: 100,
            repeats: 2,
        };
        let out = run_attribution_verification(&job, Some(&sweep)).unwrap();
        let p = out.power_curve.unwrap().power[0];
        assert!(p <= 0.1, "{p}");
    }

    #[test]
    fn short_reference_is_a_data_error() {
        let (reference, same, _) = pools(0.0);
        let mut job = VerificationJob::new(
            ModelId::new("toy-A").unwrap(),
            same,
            reference[..10].to_vec(),
        );
        job.n = Some(30);
        assert_eq!(
            run_attribution_verification(&job, None).unwrap_err().kind(),
            crate::ErrorKind::Data
        );
    }
}
