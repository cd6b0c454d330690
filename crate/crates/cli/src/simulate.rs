use std::fs;
use std::path::Path;

use codeforensic::corpus::{save_jsonl, EmbeddingRecord, Origin, Record};
use codeforensic::stats::derive_seed;
use codeforensic::synth::{
    attribution_world, detection_world, family_world, make_membership_benchmark,
    EmbeddingBenchmarkConfig, EmbeddingWorld, MembershipConfig, SimulatedRecords, REFERENCE_IN_ID,
    REFERENCE_OUT_ID, TARGET_ID,
};
use codeforensic::{Error, Result};

use crate::Benchmark;

pub struct Options {
    pub seed: u64,
    pub models: Option<usize>,
    pub separation: Option<f64>,
    pub per_class: Option<usize>,
}

const POOL_SIZE: usize = 500;

fn save<R: Record>(dir: &Path, name: &str, records: &[R]) -> Result<()> {
    save_jsonl(dir.join(name), records)
}

fn write_config(dir: &Path, name: &str, body: &str) -> Result<()> {
    Ok(fs::write(dir.join(name), body)?)
}

pub fn run(benchmark: Benchmark, opts: &Options, out: &Path) -> Result<()> {
    if opts.per_class == Some(0) {
        return Err(Error::Argument("--per-class must be positive".into()));
    }
    fs::create_dir_all(out)?;
    match benchmark {
        Benchmark::Membership => membership(opts, out),
        Benchmark::Attribution => {
            let world = attribution_world(
                opts.models.unwrap_or(5),
                opts.separation.unwrap_or(1.5),
                &EmbeddingBenchmarkConfig::default(),
            )?;
            attribution(&world, opts, out)
        }
        Benchmark::Detection => detection(opts, out),
        Benchmark::Family => {
            let world = family_world(
                opts.models.unwrap_or(4),
                opts.separation.unwrap_or(2.5),
                &EmbeddingBenchmarkConfig::default(),
                derive_seed(opts.seed, &[9]),
            )?;
            let (train, test) = split(&world, &world.origins(), opts, 500)?;
            save_split(out, &train, &test)?;
            write_config(out, "classify.toml", &classify_toml(opts.seed))
        }
    }
}

fn membership(opts: &Options, out: &Path) -> Result<()> {
    let bench = make_membership_benchmark(&MembershipConfig::default(), opts.seed)?;
    let recs = bench.to_records()?;
    save(out, "snippets.jsonl", &recs.snippets)?;
    save(out, "sequences.jsonl", &recs.sequences)?;
    save(out, "logprobs.jsonl", &recs.logprobs)?;
    save(out, "membership.jsonl", &recs.membership)?;
    let audit = |method: &str, reference: Option<&str>| {
        let reference = reference
            .map(|r| format!("reference_model = \"{r}\"\n"))
            .unwrap_or_default();
        format!(
            "method = \"{method}\"\ntarget_model = \"{TARGET_ID}\"\n{reference}logprobs = \"logprobs.jsonl\"\nlabels = \"membership.jsonl\"\nseed = {}\n",
            opts.seed
        )
    };
    write_config(
        out,
        "audit-lrt-s.toml",
        &audit("LRT", Some(REFERENCE_IN_ID)),
    )?;
    write_config(
        out,
        "audit-lrt-g.toml",
        &audit("LRT", Some(REFERENCE_OUT_ID)),
    )?;
    write_config(out, "audit-loss.toml", &audit("LOSS", None))
}

fn split(
    world: &EmbeddingWorld,
    authors: &[Origin],
    opts: &Options,
    default_count: usize,
) -> Result<(SimulatedRecords, SimulatedRecords)> {
    let n = opts.per_class.unwrap_or(default_count);
    Ok((
        world.simulate(authors, n, "train", derive_seed(opts.seed, &[0]))?,
        world.simulate(authors, n, "test", derive_seed(opts.seed, &[1]))?,
    ))
}

fn save_split(out: &Path, train: &SimulatedRecords, test: &SimulatedRecords) -> Result<()> {
    let snippets: Vec<_> = train
        .snippets
        .iter()
        .chain(&test.snippets)
        .cloned()
        .collect();
    let sequences: Vec<_> = train
        .sequences
        .iter()
        .chain(&test.sequences)
        .cloned()
        .collect();
    save(out, "snippets.jsonl", &snippets)?;
    save(out, "sequences.jsonl", &sequences)?;
    save(out, "train_embeddings.jsonl", &train.embeddings)?;
    save(out, "test_embeddings.jsonl", &test.embeddings)
}

fn split_keys() -> &'static str {
    "snippets = \"snippets.jsonl\"\ntrain_embeddings = \"train_embeddings.jsonl\"\ntest_embeddings = \"test_embeddings.jsonl\"\n"
}

fn classify_toml(seed: u64) -> String {
    format!("{}seed = {seed}\n", split_keys())
}

fn attribution(world: &EmbeddingWorld, opts: &Options, out: &Path) -> Result<()> {
    let origins = world.origins();
    let target = &world.models[0];
    let (train, test) = split(world, &origins, opts, 500)?;
    save_split(out, &train, &test)?;
    save(out, "test_snippets.jsonl", &test.snippets)?;
    save(
        out,
        "logprobs.jsonl",
        &world.logprobs(&test, std::slice::from_ref(target))?,
    )?;
    let target_train: Vec<EmbeddingRecord> = train
        .embeddings
        .iter()
        .zip(&train.snippets)
        .filter(|(_, s)| s.origin.model() == Some(target))
        .map(|(e, _)| e.clone())
        .collect();
    save(out, "target_train_embeddings.jsonl", &target_train)?;
    for (i, origin) in origins.iter().enumerate() {
        let pool = world.simulate(
            std::slice::from_ref(origin),
            POOL_SIZE,
            "pool",
            derive_seed(opts.seed, &[3, i as u64]),
        )?;
        save(
            out,
            &format!("pool-{}.jsonl", world.models[i]),
            &pool.embeddings,
        )?;
    }

    let seed = opts.seed;
    write_config(out, "classify.toml", &classify_toml(seed))?;
    write_config(
        out,
        "single-likelihood.toml",
        &format!(
            "method = \"likelihood\"\ntarget_model = \"{target}\"\nsnippets = \"test_snippets.jsonl\"\nlogprobs = \"logprobs.jsonl\"\nseed = {seed}\n"
        ),
    )?;
    write_config(
        out,
        "single-oneclass.toml",
        &format!(
            "method = \"oneclass\"\ntarget_model = \"{target}\"\nsnippets = \"snippets.jsonl\"\ntrain_embeddings = \"target_train_embeddings.jsonl\"\ntest_embeddings = \"test_embeddings.jsonl\"\nseed = {seed}\n"
        ),
    )?;
    let other = world.models.get(1).unwrap_or(target);
    write_config(
        out,
        "verify.toml",
        &format!(
            "claimed_model = \"{target}\"\ncandidates = \"pool-{other}.jsonl\"\nreference = \"pool-{target}.jsonl\"\nn = 30\nseed = {seed}\n"
        ),
    )
}

fn detection(opts: &Options, out: &Path) -> Result<()> {
    let world = detection_world(
        opts.models.unwrap_or(3),
        opts.separation.unwrap_or(5.0),
        1.0,
        &EmbeddingBenchmarkConfig::default(),
        derive_seed(opts.seed, &[9]),
    )?;
    let mut authors = vec![Origin::Human];
    authors.extend(world.origins());
    let (train, test) = split(&world, &authors, opts, 500)?;
    save_split(out, &train, &test)?;
    write_config(out, "detect.toml", &classify_toml(opts.seed))?;
    write_config(
        out,
        "sampling-shift.toml",
        &format!("per_class = 200\nseed = {}\n", opts.seed),
    )
}
