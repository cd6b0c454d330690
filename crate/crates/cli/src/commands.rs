use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use codeforensic::corpus::{
    load_jsonl, CodeSnippet, EmbeddingRecord, LogProbRecord, MembershipLabel, ModelId,
};
use codeforensic::learners::{save_model, SavedModel};
use codeforensic::metrics::{config_digest, pca_2d, EvalReport, Grid};
use codeforensic::pipelines::config::{
    load_config, AuditFile, ClassifyFile, DetectFile, Loaded, SamplingShiftFile, SingleFile,
    SingleMethod, VerifyFile,
};
use codeforensic::pipelines::{
    run_attribution_classification, run_attribution_verification, run_detection,
    run_likelihood_attribution, run_membership_audit, run_oneclass_attribution, run_sampling_shift,
    PowerSweep, VerificationJob,
};
use codeforensic::{Error, Result};
use serde::Deserialize;

use crate::{seed_override, SingleMethodArg};

/// Loads a config and applies the environment seed override.
fn load<T: serde::de::DeserializeOwned>(
    path: &Path,
    seed: impl FnOnce(&mut T) -> &mut u64,
) -> Result<Loaded<T>> {
    let mut loaded = load_config::<T>(path)?;
    if let Some(s) = seed_override()? {
        *seed(&mut loaded.config) = s;
    }
    Ok(loaded)
}

fn emit(report: &EvalReport, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => report.save(p),
        None => write_text(None, &(report.to_json()? + "\n")),
    }
}

/// Writes to `out`, or stdout; a closed stdout pipe is not an error.
fn write_text(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => Ok(fs::write(p, text)?),
        None => match std::io::stdout().lock().write_all(text.as_bytes()) {
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
            r => Ok(r?),
        },
    }
}

pub fn audit(config: &Path, out: Option<&Path>) -> Result<()> {
    let loaded = load::<AuditFile>(config, |c| &mut c.seed)?;
    let cfg = loaded.config.audit();
    cfg.validate()?;
    let logprobs: Vec<LogProbRecord> = load_jsonl(loaded.path(&loaded.config.logprobs))?;
    let labels: Vec<MembershipLabel> = load_jsonl(loaded.path(&loaded.config.labels))?;
    emit(
        &run_membership_audit(&cfg, &logprobs, &labels, &loaded.digest)?,
        out,
    )
}

struct EmbeddingInputs {
    snippets: Vec<CodeSnippet>,
    train: Vec<EmbeddingRecord>,
    test: Vec<EmbeddingRecord>,
}

fn embedding_inputs<T>(
    loaded: &Loaded<T>,
    snippets: &Path,
    train: &Path,
    test: &Path,
) -> Result<EmbeddingInputs> {
    Ok(EmbeddingInputs {
        snippets: load_jsonl(loaded.path(snippets))?,
        train: load_jsonl(loaded.path(train))?,
        test: load_jsonl(loaded.path(test))?,
    })
}

pub fn detect(config: &Path, out: Option<&Path>) -> Result<()> {
    let loaded = load::<DetectFile>(config, |c| &mut c.seed)?;
    let c = &loaded.config;
    let data = embedding_inputs(
        &loaded,
        &c.snippets,
        &c.train_embeddings,
        &c.test_embeddings,
    )?;
    let report = run_detection(
        &data.snippets,
        &data.train,
        &data.test,
        &c.detection(),
        &loaded.digest,
    )?;
    emit(&report, out)
}

pub fn sampling_shift(config: &Path, out: Option<&Path>) -> Result<()> {
    let loaded = load::<SamplingShiftFile>(config, |c| &mut c.seed)?;
    emit(
        &run_sampling_shift(&loaded.config.sampling_shift(), &loaded.digest)?,
        out,
    )
}

pub fn classify(config: &Path, out: Option<&Path>, save: Option<&Path>) -> Result<()> {
    let loaded = load::<ClassifyFile>(config, |c| &mut c.seed)?;
    let c = &loaded.config;
    let data = embedding_inputs(
        &loaded,
        &c.snippets,
        &c.train_embeddings,
        &c.test_embeddings,
    )?;
    let (report, clf) = run_attribution_classification(
        &data.snippets,
        &data.train,
        &data.test,
        &c.classification(),
        &loaded.digest,
    )?;
    if let Some(p) = save {
        save_model(p, &SavedModel::Softmax(clf))?;
    }
    emit(&report, out)
}

pub struct SingleOverrides {
    pub method: Option<SingleMethodArg>,
    pub nu: Option<f64>,
    pub gamma: Option<f64>,
}

pub fn single(
    config: &Path,
    out: Option<&Path>,
    overrides: SingleOverrides,
    save: Option<&Path>,
) -> Result<()> {
    let mut loaded = load::<SingleFile>(config, |c| &mut c.seed)?;
    let c = &mut loaded.config;
    if let Some(m) = overrides.method {
        c.method = Some(match m {
            SingleMethodArg::Likelihood => SingleMethod::Likelihood,
            SingleMethodArg::Oneclass => SingleMethod::Oneclass,
        });
    }
    c.nu = overrides.nu.or(c.nu);
    c.gamma = overrides.gamma.or(c.gamma);
    let c = &loaded.config;
    let method = c
        .method
        .ok_or_else(|| Error::Config("choose a method with `method` or --method".into()))?;
    let snippets: Vec<CodeSnippet> = load_jsonl(loaded.path(&c.snippets))?;
    let report = match method {
        SingleMethod::Likelihood => {
            if save.is_some() {
                return Err(Error::Config(
                    "--save-model applies to the one-class method only".into(),
                ));
            }
            let logprobs: Vec<LogProbRecord> =
                load_jsonl(loaded.path(c.require(&c.logprobs, "logprobs")?))?;
            run_likelihood_attribution(
                &c.target_model,
                &snippets,
                &logprobs,
                &c.single(),
                &loaded.digest,
            )?
        }
        SingleMethod::Oneclass => {
            let train: Vec<EmbeddingRecord> =
                load_jsonl(loaded.path(c.require(&c.train_embeddings, "train_embeddings")?))?;
            let test: Vec<EmbeddingRecord> =
                load_jsonl(loaded.path(c.require(&c.test_embeddings, "test_embeddings")?))?;
            let (report, model) = run_oneclass_attribution(
                &c.target_model,
                &snippets,
                &train,
                &test,
                &c.oneclass(),
                &loaded.digest,
            )?;
            if let Some(p) = save {
                save_model(p, &SavedModel::OneClass(model))?;
            }
            report
        }
    };
    emit(&report, out)
}

#[derive(Args)]
pub struct VerifyArgs {
    /// TOML config; flags below override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    claimed: Option<String>,
    /// Embedding records of the questioned snippets.
    #[arg(long)]
    candidates: Option<PathBuf>,
    /// Embedding records freshly drawn from the claimed model.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    permutations: Option<usize>,
    /// Also estimate power over the standard sample sizes.
    #[arg(long)]
    power_sweep: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn vectors(path: &Path) -> Result<Vec<Vec<f64>>> {
    Ok(load_jsonl::<EmbeddingRecord>(path)?
        .into_iter()
        .map(|r| r.vector)
        .collect())
}

fn missing(flag: &str) -> Error {
    Error::Config(format!("{flag} is required without --config"))
}

pub fn verify(args: &VerifyArgs) -> Result<()> {
    let (file, digest, base) = match &args.config {
        Some(p) => {
            let l = load_config::<VerifyFile>(p)?;
            (Some(l.config), l.digest, l.base)
        }
        None => (None, config_digest(""), PathBuf::new()),
    };
    let resolve = |p: &Path| {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    };
    let claimed = match (&args.claimed, &file) {
        (Some(c), _) => ModelId::new(c.as_str())?,
        (None, Some(f)) => f.claimed_model.clone(),
        (None, None) => return Err(missing("--claimed")),
    };
    let candidates = match (&args.candidates, &file) {
        (Some(p), _) => p.clone(),
        (None, Some(f)) => resolve(&f.candidates),
        (None, None) => return Err(missing("--candidates")),
    };
    let reference = match (&args.reference, &file) {
        (Some(p), _) => p.clone(),
        (None, Some(f)) => resolve(&f.reference),
        (None, None) => return Err(missing("--reference")),
    };
    let mut job = VerificationJob::new(claimed, vectors(&candidates)?, vectors(&reference)?);
    let mut sweep = None;
    if let Some(f) = &file {
        job.n = f.n;
        job.m = f.m;
        job.alpha = f.alpha;
        job.permutations = f.permutations;
        job.seed = f.seed;
        sweep = f.sweep();
    }
    job.n = args.n.or(job.n);
    job.m = args.m.or(job.m);
    job.alpha = args.alpha.unwrap_or(job.alpha);
    job.permutations = args.permutations.unwrap_or(job.permutations);
    job.seed = seed_override()?.or(args.seed).unwrap_or(job.seed);
    if args.power_sweep && sweep.is_none() {
        sweep = Some(PowerSweep::default());
    }
    let outcome = run_attribution_verification(&job, sweep.as_ref())?;
    emit(&outcome.report(&digest, job.seed)?, args.out.as_deref())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoreRecord {
    #[serde(default)]
    #[allow(dead_code)]
    snippet_id: Option<String>,
    score: f64,
    label: u8,
}

fn read_scores(path: &Path) -> Result<(Vec<f64>, Vec<bool>)> {
    let file = fs::File::open(path)?;
    let (mut scores, mut labels) = (Vec::new(), Vec::new());
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ScoreRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if rec.label > 1 || !rec.score.is_finite() {
            return Err(Error::Validation {
                line: Some(i + 1),
                field: if rec.label > 1 { "label" } else { "score" }.into(),
                reason: "label must be 0 or 1 and score finite".into(),
            });
        }
        scores.push(rec.score);
        labels.push(rec.label == 1);
    }
    Ok((scores, labels))
}

pub fn eval(
    scores: Option<&Path>,
    out: Option<&Path>,
    project: Option<&Path>,
    project_out: Option<&Path>,
) -> Result<()> {
    if scores.is_none() && project.is_none() {
        return Err(Error::Config("eval needs --scores or --project".into()));
    }
    if let Some(p) = project {
        let records: Vec<EmbeddingRecord> = load_jsonl(p)?;
        let points = pca_2d(&records.iter().map(|r| r.vector.clone()).collect::<Vec<_>>())?;
        let mut csv = String::from("snippet_id,pc1,pc2\n");
        for (r, [a, b]) in records.iter().zip(points) {
            csv.push_str(&format!("{},{a},{b}\n", r.snippet_id));
        }
        write_text(project_out, &csv)?;
    }
    if let Some(p) = scores {
        let text = fs::read_to_string(p)?;
        let (s, l) = read_scores(p)?;
        let seed = seed_override()?.unwrap_or(0);
        emit(
            &EvalReport::new("eval", config_digest(&text), seed).with_scores(&s, &l)?,
            out,
        )?;
    }
    Ok(())
}

pub fn export(report: &Path, out: Option<&Path>, grid: Option<&str>, roc: bool) -> Result<()> {
    let report = EvalReport::load(report)?;
    let roc_csv = || {
        let mut csv = String::from("fpr,tpr\n");
        for (f, t) in &report.roc {
            csv.push_str(&format!("{f},{t}\n"));
        }
        csv
    };
    let as_grid = |v: &serde_json::Value| serde_json::from_value::<Grid>(v.clone()).ok();
    let text = if roc {
        if report.roc.is_empty() {
            return Err(Error::Data("report has no ROC curve".into()));
        }
        roc_csv()
    } else if let Some(name) = grid {
        let value = report
            .extras
            .get(name)
            .ok_or_else(|| Error::Data(format!("report has no extra named `{name}`")))?;
        as_grid(value)
            .ok_or_else(|| Error::Data(format!("extra `{name}` is not a grid")))?
            .to_csv()
    } else if let Some(g) = report.extras.values().find_map(as_grid) {
        g.to_csv()
    } else if !report.roc.is_empty() {
        roc_csv()
    } else {
        return Err(Error::Data(
            "report has neither a grid nor a ROC curve".into(),
        ));
    };
    write_text(out, &text)
}
