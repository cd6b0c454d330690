use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{train_softmax, SoftmaxHyper};
use crate::metrics::{auc, EvalReport, Grid};
use crate::stats::derive_seed;
use crate::synth::{SequenceWorld, ToyPlg, DEFAULT_NUCLEUS_P, DEFAULT_TEMPERATURE};

/// Detector trained at one sampling setting and tested across a grid of
/// temperatures and nucleus masses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingShiftConfig {
    pub vocab_size: usize,
    pub length: usize,
    pub generators: usize,
    pub fingerprint_epsilon: f64,
    pub per_class: usize,
    pub train_temperature: f64,
    pub train_nucleus_p: f64,
    pub temperatures: Vec<f64>,
    pub nucleus_ps: Vec<f64>,
    pub hyper: SoftmaxHyper,
    pub seed: u64,
}

impl Default for SamplingShiftConfig {
    fn default() -> Self {
        SamplingShiftConfig {
            vocab_size: 64,
            length: 64,
            generators: 3,
            fingerprint_epsilon: 0.5,
            per_class: 300,
            train_temperature: DEFAULT_TEMPERATURE,
            train_nucleus_p: DEFAULT_NUCLEUS_P,
            temperatures: vec![0.2, 0.4, 0.6, 0.8, 1.0],
            nucleus_ps: vec![0.95, 1.0],
            hyper: SoftmaxHyper::default(),
            seed: 0,
        }
    }
}

fn neural_features(
    world: &SequenceWorld,
    temperature: f64,
    nucleus_p: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let per = count.div_ceil(world.generators.len());
    let mut out = Vec::with_capacity(per * world.generators.len());
    for (k, g) in world.generators.iter().enumerate() {
        let g: ToyPlg = g.with_sampling(temperature, nucleus_p)?;
        out.extend(SequenceWorld::draw(
            &g,
            world.length,
            per,
            derive_seed(seed, &[k as u64]),
        )?);
    }
    out.truncate(count);
    Ok(out)
}

pub fn run_sampling_shift(config: &SamplingShiftConfig, config_digest: &str) -> Result<EvalReport> {
    if config.per_class < 2 || config.temperatures.is_empty() || config.nucleus_ps.is_empty() {
        return Err(Error::Config(
            "sampling shift needs per_class >= 2 and non-empty grids".into(),
        ));
    }
    let world = SequenceWorld::new(
        config.vocab_size,
        config.length,
        config.generators,
        config.fingerprint_epsilon,
        derive_seed(config.seed, &[0]),
    )?;
    let human = world.human()?;
    let n = config.per_class;

    let mut xs = SequenceWorld::draw(&human, world.length, n, derive_seed(config.seed, &[1]))?;
    xs.extend(neural_features(
        &world,
        config.train_temperature,
        config.train_nucleus_p,
        n,
        derive_seed(config.seed, &[2]),
    )?);
    let ys: Vec<usize> = (0..2 * n).map(|i| usize::from(i >= n)).collect();
    let hyper = SoftmaxHyper {
        seed: derive_seed(config.seed, &[3]),
        ..config.hyper
    };
    let clf = train_softmax(&xs, &ys, 2, hyper)?;

    let human_test = SequenceWorld::draw(&human, world.length, n, derive_seed(config.seed, &[4]))?;
    let truth: Vec<bool> = (0..2 * n).map(|i| i >= n).collect();
    let score = |neural: Vec<Vec<f64>>| -> Result<f64> {
        let all: Vec<Vec<f64>> = human_test.iter().cloned().chain(neural).collect();
        let s: Vec<f64> = clf
            .predict_batch(&all)?
            .into_iter()
            .map(|(p, _)| p[1])
            .collect();
        auc(&s, &truth)
    };

    let mut values = Vec::new();
    for (i, &t) in config.temperatures.iter().enumerate() {
        let mut row = Vec::new();
        for (j, &p) in config.nucleus_ps.iter().enumerate() {
            let seed = derive_seed(config.seed, &[5, i as u64, j as u64]);
            row.push(score(neural_features(&world, t, p, n, seed)?)?);
        }
        values.push(row);
    }
    let in_domain = score(neural_features(
        &world,
        config.train_temperature,
        config.train_nucleus_p,
        n,
        derive_seed(config.seed, &[6]),
    )?)?;
    let mut report = EvalReport::new("detect/sampling-shift", config_digest, config.seed);
    report.auc = Some(in_domain);
    report
        .extra(
            "sampling_shift",
            Grid {
                rows: config
                    .temperatures
                    .iter()
                    .map(|t| format!("T={t}"))
                    .collect(),
                columns: config.nucleus_ps.iter().map(|p| format!("p={p}")).collect(),
                values,
            },
        )?
        .extra(
            "train_setting",
            (config.train_temperature, config.train_nucleus_p),
        )
}
