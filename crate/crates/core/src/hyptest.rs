//! Permutation-calibrated MMD two-sample testing and power analysis.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{median_heuristic, mmd2_unbiased, Gram, KernelSpec, PooledMmd};
use crate::stats::{derive_seed, normal_cdf, proportion_se, quantile_higher};

/// Permutations used when a caller does not choose.
pub const DEFAULT_PERMUTATIONS: usize = 200;
pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_TRIALS: usize = 100;
pub const DEFAULT_REPEATS: usize = 10;

/// Largest pooled size the exhaustive oracle enumerates.
pub const EXHAUSTIVE_LIMIT: usize = 12;

/// Relative slack under which two statistics count as tied.
const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub threshold_r: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub reject: bool,
    pub permutations_b: usize,
    pub seed: u64,
    pub m: usize,
    pub n: usize,
    pub gamma: f64,
}

fn at_least(value: f64, observed: f64) -> bool {
    value >= observed - TIE_TOLERANCE * observed.abs().max(1.0)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Argument(format!("alpha = {alpha} outside (0, 1)")));
    }
    Ok(())
}

fn pooled(x: &[Vec<f64>], xp: &[Vec<f64>]) -> Vec<Vec<f64>> {
    x.iter().chain(xp).cloned().collect()
}

/// Bandwidth from the median heuristic on the pooled sample; a point mass
/// falls back to unit bandwidth, where every kernel value is 1 anyway.
pub fn pooled_bandwidth(x: &[Vec<f64>], xp: &[Vec<f64>]) -> Result<KernelSpec> {
    match median_heuristic(&pooled(x, xp)) {
        Ok(gamma) => KernelSpec::gaussian(gamma),
        Err(Error::DegenerateBandwidth) => KernelSpec::gaussian(1.0),
        Err(e) => Err(e),
    }
}

/// Two-sample MMD test with the null estimated by `permutations` random
/// re-splits of the pooled sample.
///
/// `p = (1 + #{b : stat_b >= observed}) / (1 + B)`; the threshold is the
/// higher empirical `(1 - alpha)` quantile of the permuted statistics and the
/// test rejects iff the observed statistic exceeds it.
pub fn permutation_test(
    x: &[Vec<f64>],
    xp: &[Vec<f64>],
    kernel: &KernelSpec,
    permutations: usize,
    alpha: f64,
    seed: u64,
) -> Result<TestResult> {
    if permutations < 1 {
        return Err(Error::Argument("need at least one permutation".into()));
    }
    check_alpha(alpha)?;
    let (m, n) = (x.len(), xp.len());
    // Validates sizes and dimensions.
    mmd2_unbiased(x, xp, kernel)?;

    let gram = Gram::new(&pooled(x, xp), kernel)?;
    let pool = PooledMmd::new(&gram);
    let identity: Vec<usize> = (0..m).collect();
    let observed = pool.mmd2(&identity);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..m + n).collect();
    let mut permuted = Vec::with_capacity(permutations);
    for _ in 0..permutations {
        let (first, _) = indices.partial_shuffle(&mut rng, m);
        let mut first = first.to_vec();
        first.sort_unstable();
        permuted.push(pool.mmd2(&first));
    }
    let exceed = permuted.iter().filter(|&&s| at_least(s, observed)).count();
    permuted.sort_by(f64::total_cmp);
    let threshold_r = quantile_higher(&permuted, 1.0 - alpha);
    Ok(TestResult {
        statistic: observed,
        threshold_r,
        p_value: (1 + exceed) as f64 / (1 + permutations) as f64,
        alpha,
        reject: observed > threshold_r,
        permutations_b: permutations,
        seed,
        m,
        n,
        gamma: kernel.gamma,
    })
}

/// Exact permutation p-value over every re-split of the pooled sample into
/// sizes `(m, n)`, without add-one smoothing.
pub fn exhaustive_permutation_pvalue(
    x: &[Vec<f64>],
    xp: &[Vec<f64>],
    kernel: &KernelSpec,
) -> Result<f64> {
    let (m, n) = (x.len(), xp.len());
    if m + n > EXHAUSTIVE_LIMIT {
        return Err(Error::Argument(format!(
            "exhaustive enumeration limited to m + n <= {EXHAUSTIVE_LIMIT} (got {})",
            m + n
        )));
    }
    mmd2_unbiased(x, xp, kernel)?;
    let gram = Gram::new(&pooled(x, xp), kernel)?;
    let pool = PooledMmd::new(&gram);
    let observed = pool.mmd2(&(0..m).collect::<Vec<_>>());
    let total = m + n;
    let (mut count, mut splits) = (0usize, 0usize);
    for mask in 0u32..(1 << total) {
        if mask.count_ones() as usize != m {
            continue;
        }
        let first: Vec<usize> = (0..total).filter(|&i| mask & (1 << i) != 0).collect();
        splits += 1;
        if at_least(pool.mmd2(&first), observed) {
            count += 1;
        }
    }
    Ok(count as f64 / splits as f64)
}

/// Something that can produce fresh sets of points for repeated testing.
pub trait SampleSource: Sync {
    fn draw(&self, n: usize, seed: u64) -> Result<Vec<Vec<f64>>>;
}

/// Draws random subsets, without replacement, from a fixed pool.
#[derive(Debug, Clone)]
pub struct PoolSource {
    points: Vec<Vec<f64>>,
}

impl PoolSource {
    pub fn new(points: Vec<Vec<f64>>) -> Self {
        PoolSource { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

impl SampleSource for PoolSource {
    fn draw(&self, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        if n > self.points.len() {
            return Err(Error::Data(format!(
                "source exhausted: asked for {n} points from a pool of {}",
                self.points.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(self.points.choose_multiple(&mut rng, n).cloned().collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Bandwidth {
    /// Median heuristic on each test's pooled sample.
    Median,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerConfig {
    pub trials: usize,
    pub repeats: usize,
    pub alpha: f64,
    pub permutations: usize,
    pub bandwidth: Bandwidth,
    /// Reuse one reference draw per repeat instead of redrawing per trial.
    pub pin_reference: bool,
    pub seed: u64,
}

impl Default for PowerConfig {
    fn default() -> Self {
        PowerConfig {
            trials: DEFAULT_TRIALS,
            repeats: DEFAULT_REPEATS,
            alpha: DEFAULT_ALPHA,
            permutations: DEFAULT_PERMUTATIONS,
            bandwidth: Bandwidth::Median,
            pin_reference: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerEstimate {
    pub n: usize,
    pub power: f64,
    pub std_error: f64,
    pub tests: usize,
    pub rejections: usize,
    /// Mean permutation threshold on the MMD² scale.
    pub mean_threshold: f64,
    /// Rejection rate of each repeat.
    pub per_repeat: Vec<f64>,
    /// Every test's p-value, in (repeat, trial) order.
    pub p_values: Vec<f64>,
}

/// Rejection frequency of the permutation test over `trials x repeats`
/// independent draws of `n` points from each source.
///
/// `reference` plays the role of the claimed model's sample `X` and
/// `candidate` the questioned sample `X'`.
pub fn estimate_power(
    reference: &dyn SampleSource,
    candidate: &dyn SampleSource,
    n: usize,
    config: &PowerConfig,
) -> Result<PowerEstimate> {
    if config.trials < 1 || config.repeats < 1 {
        return Err(Error::Argument(
            "trials and repeats must be at least 1".into(),
        ));
    }
    if n < 2 {
        return Err(Error::Argument(format!("sample size {n} below 2")));
    }
    check_alpha(config.alpha)?;

    let jobs: Vec<(usize, usize)> = (0..config.repeats)
        .flat_map(|r| (0..config.trials).map(move |t| (r, t)))
        .collect();
    let outcomes: Vec<TestResult> = jobs
        .par_iter()
        .map(|&(r, t)| {
            let (r64, t64, n64) = (r as u64, t as u64, n as u64);
            let ref_seed = if config.pin_reference {
                derive_seed(config.seed, &[n64, r64, 0])
            } else {
                derive_seed(config.seed, &[n64, r64, t64, 0])
            };
            let x = reference.draw(n, ref_seed)?;
            let xp = candidate.draw(n, derive_seed(config.seed, &[n64, r64, t64, 1]))?;
            let kernel = match config.bandwidth {
                Bandwidth::Median => pooled_bandwidth(&x, &xp)?,
                Bandwidth::Fixed(g) => KernelSpec::gaussian(g)?,
            };
            permutation_test(
                &x,
                &xp,
                &kernel,
                config.permutations,
                config.alpha,
                derive_seed(config.seed, &[n64, r64, t64, 2]),
            )
        })
        .collect::<Result<_>>()?;

    let tests = outcomes.len();
    let rejections = outcomes.iter().filter(|o| o.reject).count();
    let power = rejections as f64 / tests as f64;
    let per_repeat = outcomes
        .chunks(config.trials)
        .map(|c| c.iter().filter(|o| o.reject).count() as f64 / c.len() as f64)
        .collect();
    Ok(PowerEstimate {
        n,
        power,
        std_error: proportion_se(power, tests),
        tests,
        rejections,
        mean_threshold: outcomes.iter().map(|o| o.threshold_r).sum::<f64>() / tests as f64,
        per_repeat,
        p_values: outcomes.iter().map(|o| o.p_value).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerCurve {
    pub sample_sizes: Vec<usize>,
    pub power: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub trials: usize,
    pub repeats: usize,
}

impl PowerCurve {
    /// Largest drop from one grid point to any later one, in units of the
    /// combined standard error; non-positive when the curve never falls.
    pub fn worst_drop_in_se(&self) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for i in 0..self.power.len() {
            for j in i + 1..self.power.len() {
                let se = (self.std_errors[i].powi(2) + self.std_errors[j].powi(2)).sqrt();
                let drop = self.power[i] - self.power[j];
                let scaled = if se > 0.0 {
                    drop / se
                } else if drop > 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                };
                worst = worst.max(scaled);
            }
        }
        worst
    }
}

pub fn power_curve(
    reference: &dyn SampleSource,
    candidate: &dyn SampleSource,
    sizes: &[usize],
    config: &PowerConfig,
) -> Result<PowerCurve> {
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Argument(
            "sample sizes must be strictly increasing".into(),
        ));
    }
    let estimates = sizes
        .iter()
        .map(|&n| estimate_power(reference, candidate, n, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(PowerCurve {
        sample_sizes: sizes.to_vec(),
        power: estimates.iter().map(|e| e.power).collect(),
        std_errors: estimates.iter().map(|e| e.std_error).collect(),
        trials: config.trials,
        repeats: config.repeats,
    })
}

/// Asymptotic power `Phi(sqrt(n) MMD² / sigma - r / (sqrt(n) sigma))`, where
/// `r` thresholds the scaled statistic `n * MMD²_u`.
pub fn predicted_power(mmd2: f64, sigma: f64, n: usize, r: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Argument(format!("sigma = {sigma} must be positive")));
    }
    if n < 1 {
        return Err(Error::Argument("n must be at least 1".into()));
    }
    let root_n = (n as f64).sqrt();
    Ok(normal_cdf(root_n * mmd2 / sigma - r / (root_n * sigma)))
}
