use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bigram::{fit_bigram, BigramLm};
use super::embedding::{
    draw_vector, random_unit, simplex_means, EmbeddingSourceSpec, PromptMixture, QuantizedSourceLm,
    Quantizer, SYNTHETIC_EXTRACTOR,
};
use super::sampling::{ToyPlg, ToyPlgSpec};
use crate::corpus::{
    CodeSnippet, EmbeddingRecord, LogProbRecord, MembershipLabel, ModelId, Origin, SequenceRecord,
    TokenSequence,
};
use crate::error::{Error, Result};
use crate::scoring::token_log_probs;
use crate::stats::derive_seed;

/// Model ids used for the membership benchmark's three models.
pub const TARGET_ID: &str = "target";
pub const REFERENCE_IN_ID: &str = "ref-in";
pub const REFERENCE_OUT_ID: &str = "ref-out";

fn render(tokens: &[usize]) -> String {
    tokens
        .iter()
        .map(|t| format!("t{t}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Generator ids `toy-A`, `toy-B`, ... (`toy-<k>` past the alphabet).
pub fn toy_model_ids(count: usize) -> Vec<ModelId> {
    (0..count)
        .map(|k| {
            let name = if k < 26 {
                format!("toy-{}", (b'A' + k as u8) as char)
            } else {
                format!("toy-{k}")
            };
            ModelId::new(name).expect("generated ids are valid")
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipConfig {
    pub vocab_size: usize,
    pub length: usize,
    pub members: usize,
    pub non_members: usize,
    /// Size of each reference model's training corpus.
    pub reference_size: usize,
    pub target_smoothing: f64,
    pub reference_smoothing: f64,
    /// Logit scale of the random base transition matrix.
    pub peakedness: f64,
    /// Per-sequence sampling temperatures are uniform on this range, so
    /// sequences differ in intrinsic difficulty.
    pub temperature_range: (f64, f64),
    /// Weight of an independent transition matrix in the out-of-domain
    /// reference corpus.
    pub out_domain_weight: f64,
}

impl Default for MembershipConfig {
    fn default() -> Self {
        MembershipConfig {
            vocab_size: 64,
            length: 64,
            members: 500,
            non_members: 500,
            reference_size: 500,
            target_smoothing: 0.01,
            reference_smoothing: 0.01,
            peakedness: 2.0,
            temperature_range: (0.6, 1.4),
            out_domain_weight: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MembershipBenchmark {
    pub members: Vec<TokenSequence>,
    pub non_members: Vec<TokenSequence>,
    pub target: BigramLm,
    pub reference_in: BigramLm,
    pub reference_out: BigramLm,
    pub seed: u64,
}

fn draw_corpus(
    base: &BigramLm,
    config: &MembershipConfig,
    count: usize,
    seed: u64,
) -> Result<Vec<TokenSequence>> {
    let plg = ToyPlg::new(ToyPlgSpec {
        model_id: ModelId::new("population")?,
        base: base.clone(),
        fingerprint_epsilon: 0.0,
        temperature: 1.0,
        nucleus_p: 1.0,
    })?;
    let (lo, hi) = config.temperature_range;
    (0..count)
        .map(|i| {
            let s = derive_seed(seed, &[i as u64]);
            let t = lo + (hi - lo) * ChaCha8Rng::seed_from_u64(s).random::<f64>();
            plg.with_sampling(t, 1.0)?
                .sample(config.length, derive_seed(s, &[1]))
        })
        .collect()
}

/// Members, non-members, a target fit on the members, and two references:
/// one fit on fresh in-domain data, one on a shifted domain.
pub fn make_membership_benchmark(
    config: &MembershipConfig,
    seed: u64,
) -> Result<MembershipBenchmark> {
    if config.members == 0 || config.non_members == 0 || config.reference_size == 0 {
        return Err(Error::Argument(
            "membership benchmark corpora must be non-empty".into(),
        ));
    }
    let base = BigramLm::random(
        config.vocab_size,
        config.peakedness,
        derive_seed(seed, &[0]),
    )?;
    let foreign = BigramLm::random(
        config.vocab_size,
        config.peakedness,
        derive_seed(seed, &[1]),
    )?;
    let shifted = base.blend(&foreign, config.out_domain_weight)?;

    let members = draw_corpus(&base, config, config.members, derive_seed(seed, &[2]))?;
    let non_members = draw_corpus(&base, config, config.non_members, derive_seed(seed, &[3]))?;
    let in_domain = draw_corpus(
        &base,
        config,
        config.reference_size,
        derive_seed(seed, &[4]),
    )?;
    let out_domain = draw_corpus(
        &shifted,
        config,
        config.reference_size,
        derive_seed(seed, &[5]),
    )?;

    Ok(MembershipBenchmark {
        target: fit_bigram(&members, config.target_smoothing)?,
        reference_in: fit_bigram(&in_domain, config.reference_smoothing)?,
        reference_out: fit_bigram(&out_domain, config.reference_smoothing)?,
        members,
        non_members,
        seed,
    })
}

/// Corpus-format view of a benchmark.
#[derive(Debug, Clone, Default)]
pub struct SimulatedRecords {
    pub snippets: Vec<CodeSnippet>,
    pub sequences: Vec<SequenceRecord>,
    pub logprobs: Vec<LogProbRecord>,
    pub embeddings: Vec<EmbeddingRecord>,
    pub membership: Vec<MembershipLabel>,
}

impl MembershipBenchmark {
    /// Snippets (members first), their log-probabilities under the target and
    /// both references, and membership labels.
    pub fn to_records(&self) -> Result<SimulatedRecords> {
        let mut out = SimulatedRecords::default();
        let models = [
            (ModelId::new(TARGET_ID)?, &self.target),
            (ModelId::new(REFERENCE_IN_ID)?, &self.reference_in),
            (ModelId::new(REFERENCE_OUT_ID)?, &self.reference_out),
        ];
        let all = self
            .members
            .iter()
            .map(|s| (s, true))
            .chain(self.non_members.iter().map(|s| (s, false)));
        for (i, (seq, member)) in all.enumerate() {
            let id = format!("mem-{i:05}");
            out.snippets.push(CodeSnippet {
                snippet_id: id.clone(),
                language: "toy".into(),
                text: render(&seq.tokens),
                origin: Origin::Human,
                prompt_id: format!("p{i:05}"),
            });
            out.sequences.push(SequenceRecord {
                snippet_id: id.clone(),
                sequence: seq.clone(),
            });
            for (model_id, lm) in &models {
                out.logprobs.push(LogProbRecord {
                    snippet_id: id.clone(),
                    model_id: model_id.clone(),
                    token_logprobs: token_log_probs(*lm, seq),
                });
            }
            out.membership.push(MembershipLabel {
                snippet_id: id,
                member,
            });
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingBenchmarkConfig {
    pub dimension: usize,
    pub noise_scale: f64,
    /// Snippets per author.
    pub per_class: usize,
    /// Bins of the quantizer that defines per-author likelihoods.
    pub bins: usize,
}

impl Default for EmbeddingBenchmarkConfig {
    fn default() -> Self {
        EmbeddingBenchmarkConfig {
            dimension: 16,
            noise_scale: 1.0,
            per_class: 500,
            bins: 64,
        }
    }
}

/// A simulated feature space with its authors and a shared tokenizer.
#[derive(Debug, Clone)]
pub struct EmbeddingWorld {
    pub spec: EmbeddingSourceSpec,
    pub models: Vec<ModelId>,
    pub quantizer: Quantizer,
}

impl EmbeddingWorld {
    fn new(spec: EmbeddingSourceSpec, models: Vec<ModelId>) -> Result<Self> {
        spec.validate()?;
        // Cover every author's mean (including prompt offsets) by 6 sigma.
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut authors = vec![Origin::Human];
        authors.extend(models.iter().cloned().map(Origin::Model));
        for origin in &authors {
            let mean = spec.author_mean(origin)?;
            for c in &spec.prompts.centers {
                for (m, p) in mean.iter().zip(c) {
                    lo = lo.min(m + p);
                    hi = hi.max(m + p);
                }
            }
        }
        let pad = 6.0 * spec.noise_scale;
        let quantizer = Quantizer::new(lo - pad, hi + pad, 64)?;
        Ok(EmbeddingWorld {
            spec,
            models,
            quantizer,
        })
    }

    fn with_bins(mut self, bins: usize) -> Result<Self> {
        self.quantizer = Quantizer::new(self.quantizer.low, self.quantizer.high, bins)?;
        Ok(self)
    }

    /// Per-position likelihood model of one author's quantized vectors.
    pub fn likelihood_model(&self, origin: &Origin) -> Result<QuantizedSourceLm> {
        QuantizedSourceLm::new(&self.spec, origin, self.quantizer)
    }

    /// Draws `count` snippets per author. Snippet ids carry `tag` so several
    /// draws can share one corpus.
    pub fn simulate(
        &self,
        authors: &[Origin],
        count: usize,
        tag: &str,
        seed: u64,
    ) -> Result<SimulatedRecords> {
        let extractor = ModelId::new(SYNTHETIC_EXTRACTOR)?;
        let mut out = SimulatedRecords::default();
        for (a, origin) in authors.iter().enumerate() {
            let label = match origin {
                Origin::Human => "human".to_string(),
                Origin::Model(id) => id.to_string(),
                Origin::Unknown => {
                    return Err(Error::Argument("cannot simulate an unknown author".into()))
                }
            };
            for i in 0..count {
                let (cluster, vector) =
                    draw_vector(&self.spec, origin, derive_seed(seed, &[a as u64, i as u64]))?;
                let id = format!("{tag}-{label}-{i:05}");
                let seq = self.quantizer.encode(&vector)?;
                out.snippets.push(CodeSnippet {
                    snippet_id: id.clone(),
                    language: "toy".into(),
                    text: render(&seq.tokens),
                    origin: origin.clone(),
                    prompt_id: format!("{tag}-prompt-{cluster}"),
                });
                out.sequences.push(SequenceRecord {
                    snippet_id: id.clone(),
                    sequence: seq,
                });
                out.embeddings.push(EmbeddingRecord {
                    snippet_id: id,
                    extractor_id: extractor.clone(),
                    vector,
                });
            }
        }
        Ok(out)
    }

    /// Log-probabilities of every simulated sequence under each model's
    /// likelihood.
    pub fn logprobs(
        &self,
        records: &SimulatedRecords,
        models: &[ModelId],
    ) -> Result<Vec<LogProbRecord>> {
        let mut out = Vec::with_capacity(records.sequences.len() * models.len());
        for model in models {
            let lm = self.likelihood_model(&Origin::Model(model.clone()))?;
            for rec in &records.sequences {
                out.push(LogProbRecord {
                    snippet_id: rec.snippet_id.clone(),
                    model_id: model.clone(),
                    token_logprobs: lm.token_log_probs(&rec.sequence)?,
                });
            }
        }
        Ok(out)
    }

    pub fn origins(&self) -> Vec<Origin> {
        self.models.iter().cloned().map(Origin::Model).collect()
    }
}

/// `k` generators whose means sit at pairwise distance
/// `separation * noise_scale`; separation 0 makes them identical.
pub fn attribution_world(
    k: usize,
    separation: f64,
    config: &EmbeddingBenchmarkConfig,
) -> Result<EmbeddingWorld> {
    if k < 2 {
        return Err(Error::Argument(
            "attribution needs at least two generators".into(),
        ));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::Argument(format!(
            "separation {separation} must be >= 0"
        )));
    }
    let d = config.dimension;
    let models = toy_model_ids(k);
    let means = simplex_means(k, d, separation * config.noise_scale)?;
    let spec = EmbeddingSourceSpec {
        dimension: d,
        human_mean: vec![0.0; d],
        model_means: models.iter().cloned().zip(means).collect(),
        shared_neural_shift: vec![0.0; d],
        noise_scale: config.noise_scale,
        prompts: PromptMixture::single(d),
    };
    EmbeddingWorld::new(spec, models)?.with_bins(config.bins)
}

/// Generators from one base model that differ only in the scale of a common
/// fingerprint direction: model `k` sits `(k + 1) * step * noise_scale` along it.
pub fn family_world(
    k: usize,
    step: f64,
    config: &EmbeddingBenchmarkConfig,
    seed: u64,
) -> Result<EmbeddingWorld> {
    if k < 2 {
        return Err(Error::Argument(
            "a family needs at least two members".into(),
        ));
    }
    let d = config.dimension;
    let dir = random_unit(d, seed);
    let models = toy_model_ids(k);
    let model_means = models
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let scale = (i + 1) as f64 * step * config.noise_scale;
            (id.clone(), dir.iter().map(|x| x * scale).collect())
        })
        .collect();
    let spec = EmbeddingSourceSpec {
        dimension: d,
        human_mean: vec![0.0; d],
        model_means,
        shared_neural_shift: vec![0.0; d],
        noise_scale: config.noise_scale,
        prompts: PromptMixture::single(d),
    };
    EmbeddingWorld::new(spec, models)?.with_bins(config.bins)
}

/// Human and `generators` neural authors: every generator carries a common
/// shift of length `shift * noise_scale` away from human code, plus its own
/// fingerprint at pairwise distance `fingerprint * noise_scale`.
pub fn detection_world(
    generators: usize,
    shift: f64,
    fingerprint: f64,
    config: &EmbeddingBenchmarkConfig,
    seed: u64,
) -> Result<EmbeddingWorld> {
    if generators < 1 {
        return Err(Error::Argument(
            "detection needs at least one generator".into(),
        ));
    }
    let d = config.dimension;
    let models = toy_model_ids(generators);
    let means = simplex_means(generators, d, fingerprint * config.noise_scale)?;
    let dir = random_unit(d, seed);
    let spec = EmbeddingSourceSpec {
        dimension: d,
        human_mean: vec![0.0; d],
        model_means: models.iter().cloned().zip(means).collect(),
        shared_neural_shift: dir.iter().map(|x| x * shift * config.noise_scale).collect(),
        noise_scale: config.noise_scale,
        prompts: PromptMixture::single(d),
    };
    EmbeddingWorld::new(spec, models)?.with_bins(config.bins)
}

/// Moves every author by `offset * noise_scale` along a fixed random
/// direction, modeling prompts drawn from another distribution.
pub fn shift_prompts(world: &EmbeddingWorld, offset: f64, seed: u64) -> Result<EmbeddingWorld> {
    let dir = random_unit(world.spec.dimension, seed);
    let mut spec = world.spec.clone();
    spec.prompts = PromptMixture {
        weights: world.spec.prompts.weights.clone(),
        centers: world
            .spec
            .prompts
            .centers
            .iter()
            .map(|c| {
                c.iter()
                    .zip(&dir)
                    .map(|(x, u)| x + offset * world.spec.noise_scale * u)
                    .collect()
            })
            .collect(),
    };
    spec.validate()?;
    Ok(EmbeddingWorld {
        spec,
        models: world.models.clone(),
        quantizer: world.quantizer,
    })
}

/// Token-sequence world for sampling-parameter experiments: human code from
/// the base model at unit temperature, neural code from fingerprinted
/// generators at configurable temperature and nucleus mass.
#[derive(Debug, Clone)]
pub struct SequenceWorld {
    pub base: BigramLm,
    pub generators: Vec<ToyPlg>,
    pub length: usize,
}

impl SequenceWorld {
    pub fn new(
        vocab_size: usize,
        length: usize,
        generators: usize,
        fingerprint_epsilon: f64,
        seed: u64,
    ) -> Result<Self> {
        let base = BigramLm::random(vocab_size, 2.0, seed)?;
        let generators = toy_model_ids(generators)
            .into_iter()
            .map(|id| ToyPlg::new(ToyPlgSpec::new(id, base.clone(), fingerprint_epsilon)))
            .collect::<Result<_>>()?;
        Ok(SequenceWorld {
            base,
            generators,
            length,
        })
    }

    pub fn human(&self) -> Result<ToyPlg> {
        ToyPlg::new(ToyPlgSpec {
            model_id: ModelId::new("human")?,
            base: self.base.clone(),
            fingerprint_epsilon: 0.0,
            temperature: 1.0,
            nucleus_p: 1.0,
        })
    }

    /// Bag-of-tokens features: token frequencies times the vocabulary size,
    /// so a perfectly uniform sequence maps to all ones.
    pub fn features(seq: &TokenSequence) -> Vec<f64> {
        let mut f = vec![0.0; seq.vocab_size];
        for &t in &seq.tokens {
            f[t] += 1.0;
        }
        let scale = seq.vocab_size as f64 / seq.len() as f64;
        f.iter_mut().for_each(|v| *v *= scale);
        f
    }

    /// `count` feature vectors from one generator.
    pub fn draw(plg: &ToyPlg, length: usize, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        (0..count)
            .map(|i| {
                Ok(Self::features(
                    &plg.sample(length, derive_seed(seed, &[i as u64]))?,
                ))
            })
            .collect()
    }
}

/// Builds labeled feature examples per author; used by in-process pipelines.
pub fn group_by_origin(records: &SimulatedRecords) -> BTreeMap<Origin, Vec<Vec<f64>>> {
    let origin_of: BTreeMap<&str, &Origin> = records
        .snippets
        .iter()
        .map(|s| (s.snippet_id.as_str(), &s.origin))
        .collect();
    let mut out: BTreeMap<Origin, Vec<Vec<f64>>> = BTreeMap::new();
    for e in &records.embeddings {
        if let Some(o) = origin_of.get(e.snippet_id.as_str()) {
            out.entry((*o).clone()).or_default().push(e.vector.clone());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::perplexity;

    fn mean_ppl(lm: &BigramLm, seqs: &[TokenSequence]) -> (f64, f64) {
        let v: Vec<f64> = seqs
            .iter()
            .map(|s| perplexity(&token_log_probs(lm, s)).unwrap())
            .collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        (m, (var / v.len() as f64).sqrt())
    }

    fn small() -> MembershipConfig {
        MembershipConfig {
            members: 200,
            non_members: 200,
            reference_size: 200,
            ..MembershipConfig::default()
        }
    }

    #[test]
    fn members_have_lower_target_perplexity() {
        let bench = make_membership_benchmark(&small(), 3).unwrap();
        let (m, se_m) = mean_ppl(&bench.target, &bench.members);
        let (n, se_n) = mean_ppl(&bench.target, &bench.non_members);
        assert!(
            n - m > 3.0 * (se_m * se_m + se_n * se_n).sqrt(),
            "{m} vs {n}"
        );
    }

    #[test]
    fn smoothing_shrinks_the_membership_gap() {
        let mut gaps = Vec::new();
        for alpha in [0.01, 0.1, 1.0, 10.0] {
            let cfg = MembershipConfig {
                target_smoothing: alpha,
                ..small()
            };
            let bench = make_membership_benchmark(&cfg, 5).unwrap();
            let (m, _) = mean_ppl(&bench.target, &bench.members);
            let (n, _) = mean_ppl(&bench.target, &bench.non_members);
            gaps.push(n / m);
        }
        assert!(gaps.windows(2).all(|w| w[0] > w[1]), "{gaps:?}");
    }

    #[test]
    fn benchmark_is_seeded() {
        let a = make_membership_benchmark(&small(), 9).unwrap();
        let b = make_membership_benchmark(&small(), 9).unwrap();
        assert_eq!(a.members, b.members);
        assert_eq!(a.target, b.target);
    }

    #[test]
    fn records_cover_every_model() {
        let bench = make_membership_benchmark(&small(), 1).unwrap();
        let recs = bench.to_records().unwrap();
        assert_eq!(recs.snippets.len(), 400);
        assert_eq!(recs.logprobs.len(), 1200);
        assert_eq!(recs.membership.iter().filter(|m| m.member).count(), 200);
    }

    #[test]
    fn attribution_means_respect_separation() {
        let world = attribution_world(4, 2.0, &EmbeddingBenchmarkConfig::default()).unwrap();
        let means: Vec<Vec<f64>> = world
            .origins()
            .iter()
            .map(|o| world.spec.author_mean(o).unwrap())
            .collect();
        let d: f64 = means[0]
            .iter()
            .zip(&means[3])
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!((d - 2.0).abs() < 1e-12);
    }

    #[test]
    fn simulate_emits_consistent_records() {
        let cfg = EmbeddingBenchmarkConfig {
            per_class: 10,
            ..Default::default()
        };
        let world = attribution_world(3, 1.0, &cfg).unwrap();
        let recs = world.simulate(&world.origins(), 10, "t", 4).unwrap();
        assert_eq!(recs.snippets.len(), 30);
        assert_eq!(recs.embeddings.len(), 30);
        let lps = world.logprobs(&recs, &world.models).unwrap();
        assert_eq!(lps.len(), 90);
        assert!(lps
            .iter()
            .all(|r| r.token_logprobs.iter().all(|v| v.is_finite() && *v <= 0.0)));
        let groups = group_by_origin(&recs);
        assert_eq!(groups.len(), 3);
    }
}
