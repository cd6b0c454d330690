use codeforensic::corpus::{CodeSnippet, EmbeddingRecord, ModelId, Origin};
use codeforensic::metrics::EvalReport;
use codeforensic::pipelines::{
    run_attribution_classification, run_attribution_verification, run_likelihood_attribution,
    run_membership_audit, run_oneclass_attribution, AuditConfig, CalibratedOutcome,
    ClassificationConfig, OneClassConfig, PowerSweep, SingleInstanceConfig, VerificationJob,
};
use codeforensic::scoring::MembershipMethod;
use codeforensic::stats::derive_seed;
use codeforensic::synth::{
    attribution_world, family_world, make_membership_benchmark, shift_prompts,
    EmbeddingBenchmarkConfig, EmbeddingWorld, MembershipConfig, REFERENCE_IN_ID, TARGET_ID,
};
use codeforensic::ErrorKind;

struct Split {
    snippets: Vec<CodeSnippet>,
    train: Vec<EmbeddingRecord>,
    test: Vec<EmbeddingRecord>,
}

fn split(
    train_world: &EmbeddingWorld,
    test_world: &EmbeddingWorld,
    per_class: usize,
    seed: u64,
) -> Split {
    let train = train_world
        .simulate(
            &train_world.origins(),
            per_class,
            "train",
            derive_seed(seed, &[0]),
        )
        .unwrap();
    let test = test_world
        .simulate(
            &test_world.origins(),
            per_class,
            "test",
            derive_seed(seed, &[1]),
        )
        .unwrap();
    let mut snippets = train.snippets;
    snippets.extend(test.snippets);
    Split {
        snippets,
        train: train.embeddings,
        test: test.embeddings,
    }
}

fn classify(data: &Split) -> EvalReport {
    run_attribution_classification(
        &data.snippets,
        &data.train,
        &data.test,
        &ClassificationConfig::default(),
        "c",
    )
    .unwrap()
    .0
}

#[test]
fn training_loss_never_increases_on_the_standard_benchmark() {
    let world = attribution_world(5, 1.5, &EmbeddingBenchmarkConfig::default()).unwrap();
    let data = split(&world, &world, 300, 11);
    let (_, clf) = run_attribution_classification(
        &data.snippets,
        &data.train,
        &data.test,
        &ClassificationConfig::default(),
        "c",
    )
    .unwrap();
    assert_eq!(clf.loss_history.len(), 200);
    for (epoch, pair) in clf.loss_history.windows(2).enumerate() {
        assert!(
            pair[1] <= pair[0] + 1e-12,
            "loss rose after epoch {epoch}: {pair:?}"
        );
    }
}

#[test]
fn prompt_shift_costs_little_accuracy() {
    let world = attribution_world(5, 6.0, &EmbeddingBenchmarkConfig::default()).unwrap();
    let shifted = shift_prompts(&world, 2.0, 5).unwrap();
    let same = classify(&split(&world, &world, 400, 12)).accuracy.unwrap();
    let moved = classify(&split(&world, &shifted, 400, 12))
        .accuracy
        .unwrap();
    assert!(same >= 0.9, "{same}");
    assert!(
        same - moved <= 0.1,
        "in-distribution {same}, shifted {moved}"
    );
}

#[test]
fn family_members_are_distinguishable() {
    let world = family_world(4, 2.5, &EmbeddingBenchmarkConfig::default(), 13).unwrap();
    let report = classify(&split(&world, &world, 400, 14));
    assert!(report.accuracy.unwrap() >= 0.75, "{:?}", report.accuracy);
    assert_eq!(report.class_names.as_ref().map(Vec::len), Some(4));
}

#[test]
fn classification_report_is_reproducible() {
    let world = attribution_world(3, 2.0, &EmbeddingBenchmarkConfig::default()).unwrap();
    let a = classify(&split(&world, &world, 100, 15)).to_json().unwrap();
    let b = classify(&split(&world, &world, 100, 15)).to_json().unwrap();
    assert_eq!(a, b);
}

fn pool(world: &EmbeddingWorld, model: usize, count: usize, tag: &str, seed: u64) -> Vec<Vec<f64>> {
    let origin = Origin::Model(world.models[model].clone());
    world
        .simulate(&[origin], count, tag, seed)
        .unwrap()
        .embeddings
        .into_iter()
        .map(|e| e.vector)
        .collect()
}

#[test]
fn verification_power_survives_prompt_shift() {
    let world = attribution_world(5, 1.5, &EmbeddingBenchmarkConfig::default()).unwrap();
    let shifted = shift_prompts(&world, 0.5, 21).unwrap();
    let reference = pool(&world, 0, 2000, "ref", 22);
    let sweep = PowerSweep {
        sizes: vec![20, 30, 50],
        trials: 100,
        repeats: 5,
    };
    let power = |candidates: Vec<Vec<f64>>| {
        let job = VerificationJob::new(world.models[0].clone(), candidates, reference.clone());
        run_attribution_verification(&job, Some(&sweep))
            .unwrap()
            .power_curve
            .unwrap()
            .power
    };
    let base = power(pool(&world, 1, 2000, "cand", 23));
    let moved = power(pool(&shifted, 1, 2000, "cand", 23));
    for (i, n) in sweep.sizes.iter().enumerate() {
        assert!(
            (base[i] - moved[i]).abs() <= 0.1,
            "n = {n}: {} vs {}",
            base[i],
            moved[i]
        );
    }
}

#[test]
fn verification_accepts_the_true_model_at_nominal_rate() {
    let world = attribution_world(5, 1.5, &EmbeddingBenchmarkConfig::default()).unwrap();
    let reference = pool(&world, 0, 2000, "ref", 24);
    let candidates = pool(&world, 0, 2000, "cand", 25);
    let job = VerificationJob::new(world.models[0].clone(), candidates, reference);
    let sweep = PowerSweep {
        sizes: vec![30],
        trials: 100,
        repeats: 5,
    };
    let rate = run_attribution_verification(&job, Some(&sweep))
        .unwrap()
        .power_curve
        .unwrap()
        .power[0];
    assert!((0.01..=0.1).contains(&rate), "{rate}");
}

fn single_instance(separation: f64, seed: u64) -> (CalibratedOutcome, CalibratedOutcome) {
    let world = attribution_world(3, separation, &EmbeddingBenchmarkConfig::default()).unwrap();
    let origins = world.origins();
    let target = world.models[0].clone();
    let pos = world
        .simulate(&origins[..1], 600, "pos", derive_seed(seed, &[0]))
        .unwrap();
    let neg = world
        .simulate(&origins[1..], 600, "neg", derive_seed(seed, &[1]))
        .unwrap();
    let train = world
        .simulate(&origins[..1], 400, "train", derive_seed(seed, &[2]))
        .unwrap();
    let mut records = pos.clone();
    records.snippets.extend(neg.snippets.clone());
    records.sequences.extend(neg.sequences.clone());
    records.embeddings.extend(neg.embeddings.clone());
    let logprobs = world.logprobs(&records, std::slice::from_ref(&target)).unwrap();
    let single = SingleInstanceConfig {
        seed,
        ..SingleInstanceConfig::default()
    };
    let lik =
        run_likelihood_attribution(&target, &records.snippets, &logprobs, &single, "s").unwrap();
    let mut snippets = records.snippets.clone();
    snippets.extend(train.snippets);
    let cfg = OneClassConfig {
        single,
        ..OneClassConfig::default()
    };
    let (oc, _) = run_oneclass_attribution(
        &target,
        &snippets,
        &train.embeddings,
        &records.embeddings,
        &cfg,
        "s",
    )
    .unwrap();
    let outcome = |r: &EvalReport| serde_json::from_value(r.extras["calibrated"].clone()).unwrap();
    (outcome(&lik), outcome(&oc))
}

#[test]
fn single_instance_attribution_succeeds_on_disjoint_supports() {
    let (lik, oc) = single_instance(25.0, 31);
    assert!(lik.tpr >= 0.9, "{lik:?}");
    assert!(oc.tpr >= 0.9, "{oc:?}");
}

#[test]
fn single_instance_attribution_is_calibrated_under_the_null() {
    let (lik, oc) = single_instance(0.0, 32);
    for o in [lik, oc] {
        assert!(o.fpr <= 0.1, "{o:?}");
        assert!((o.tpr - o.fpr).abs() <= 0.06, "{o:?}");
    }
}

#[test]
fn lrt_against_itself_is_rejected() {
    let bench = make_membership_benchmark(&MembershipConfig::default(), 3).unwrap();
    let recs = bench.to_records().unwrap();
    let cfg = AuditConfig {
        method: MembershipMethod::Lrt,
        target_model: ModelId::new(TARGET_ID).unwrap(),
        reference_model: Some(ModelId::new(TARGET_ID).unwrap()),
        seed: 0,
    };
    // Same model on both sides is rejected up front.
    assert_eq!(
        run_membership_audit(&cfg, &recs.logprobs, &recs.membership, "m")
            .unwrap_err()
            .kind(),
        ErrorKind::Validation
    );
}

#[test]
fn membership_audit_reports_missing_logprobs() {
    let bench = make_membership_benchmark(&MembershipConfig::default(), 4).unwrap();
    let recs = bench.to_records().unwrap();
    let cfg = AuditConfig {
        method: MembershipMethod::Lrt,
        target_model: ModelId::new(TARGET_ID).unwrap(),
        reference_model: Some(ModelId::new(REFERENCE_IN_ID).unwrap()),
        seed: 0,
    };
    let dropped = recs.logprobs[0].snippet_id.clone();
    let err = run_membership_audit(&cfg, &recs.logprobs[1..], &recs.membership, "m").unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Data);
    assert!(err.to_string().contains(&dropped));

    let a = run_membership_audit(&cfg, &recs.logprobs, &recs.membership, "m").unwrap();
    let b = run_membership_audit(&cfg, &recs.logprobs, &recs.membership, "m").unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
}
