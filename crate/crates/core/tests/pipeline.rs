//! Harness stages on a tiny configuration: ordering, isolation, determinism
//! and manifest integrity.

use std::fs;
use std::path::Path;

use reranklab::baselines::RankerSpec;
use reranklab::harness::{cmd_evaluate, cmd_gen_data, cmd_train, cmd_verify, ExperimentConfig, RunManifest, Stage};
use reranklab::Error;

fn tiny() -> ExperimentConfig {
    let mut c = ExperimentConfig::desk();
    c.seed = 11;
    c.universe.num_items = 24;
    c.universe.feature_dim = 3;
    c.dataset.num_lists = 300;
    c.dataset.list_len = 4;
    c.evaluator.hidden = 6;
    c.evaluator.head_widths = vec![6];
    c.evaluator.max_epochs = 2;
    c.generator.hidden = 6;
    c.generator.head_widths = vec![6];
    c.generator.iterations = 3;
    c.generator.episodes_per_batch = 6;
    c.generator.rollouts = 2;
    c.discriminator.hidden = 6;
    c.discriminator.head_widths = vec![6];
    c.scoring.hidden = 6;
    c.scoring.epochs = 1;
    c.evaluation.max_lists = 40;
    c.evaluation.curve_sets = 8;
    c.evaluation.k_grid = vec![1, 3, 9];
    c.methods = ["mse", "listnet", "greedy_e", "enumerate_5", "eg_rerank", "eg_rerank_plus", "identity", "random"]
        .iter()
        .map(|m| m.parse().unwrap())
        .collect();
    c
}

fn read(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn train_all(c: &ExperimentConfig, out: &Path) {
    cmd_gen_data(c, out).unwrap();
    for s in Stage::ALL {
        cmd_train(c, out, s).unwrap();
    }
}

#[test]
fn generators_need_a_trained_evaluator() {
    let dir = tempfile::tempdir().unwrap();
    let c = tiny();
    cmd_gen_data(&c, dir.path()).unwrap();
    for s in [Stage::EgRerank, Stage::EgRerankPlus] {
        match cmd_train(&c, dir.path(), s) {
            Err(Error::Prerequisite(m)) => assert!(m.contains("--stage evaluator"), "{m}"),
            other => panic!("expected a prerequisite error, got {other:?}"),
        }
    }
}

#[test]
fn training_before_data_names_gen_data() {
    let dir = tempfile::tempdir().unwrap();
    match cmd_train(&tiny(), dir.path(), Stage::Evaluator) {
        Err(Error::Prerequisite(m)) => assert!(m.contains("gen-data"), "{m}"),
        other => panic!("expected a prerequisite error, got {other:?}"),
    }
}

#[test]
fn data_generation_is_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let c = tiny();
    let files = cmd_gen_data(&c, a.path()).unwrap().files;
    cmd_gen_data(&c, b.path()).unwrap();
    assert_eq!(files.len(), 6);
    for f in &files {
        assert_eq!(read(&a.path().join(f)), read(&b.path().join(f)), "{f}");
    }
}

#[test]
fn zero_lists_give_empty_files_and_a_valid_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny();
    c.dataset.num_lists = 0;
    cmd_gen_data(&c, dir.path()).unwrap();
    let profile = fs::read_to_string(dir.path().join("seed-0/data/position_profile.csv")).unwrap();
    assert_eq!(profile, "position,mean_true_probability\n");
    assert_eq!(cmd_verify(dir.path()).unwrap(), 6);
}

#[test]
fn order_only_methods_need_no_training() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny();
    c.methods = vec![RankerSpec::Identity, RankerSpec::Reverse, RankerSpec::Random];
    cmd_gen_data(&c, dir.path()).unwrap();
    let res = cmd_evaluate(&c, dir.path()).unwrap();
    let reports = &res.runs[0];
    assert_eq!(reports.len(), 3);
    assert!(reports.iter().all(|r| r.evaluator_score.is_nan() && r.true_score > 0.0));
    // Identity keeps the logged order, reverse flips it: complementary GAUC.
    assert!((reports[0].offline_gauc + reports[1].offline_gauc - 1.0).abs() < 1e-12);
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);
}

#[test]
fn missing_checkpoints_are_listed_together() {
    let dir = tempfile::tempdir().unwrap();
    let c = tiny();
    cmd_gen_data(&c, dir.path()).unwrap();
    match cmd_evaluate(&c, dir.path()) {
        Err(Error::Prerequisite(m)) => {
            for f in ["evaluator.ckpt", "scoring_mse.ckpt", "scoring_listnet.ckpt", "eg_rerank.ckpt", "eg_rerank_plus.ckpt"] {
                assert!(m.contains(f), "{f} not named in: {m}");
            }
        }
        other => panic!("expected a prerequisite error, got {other:?}"),
    }
}

#[test]
fn zero_beta_reproduces_the_plain_generator() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny();
    c.discriminator.beta = 0.0;
    train_all(&c, dir.path());
    let m = dir.path().join("seed-0/models");
    assert_eq!(read(&m.join("eg_rerank_trace.csv")), read(&m.join("eg_rerank_plus_generator_trace.csv")));
    assert_eq!(read(&m.join("eg_rerank.ckpt")), read(&m.join("eg_rerank_plus.ckpt")));
}

#[test]
fn downstream_stages_rerun_to_identical_files_and_verify() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny();
    c.repeat_seeds = 2;
    train_all(&c, dir.path());
    cmd_evaluate(&c, dir.path()).unwrap();
    let manifest = RunManifest::load(&RunManifest::path(dir.path())).unwrap();
    let before: Vec<(String, Vec<u8>)> = manifest.checksums.keys().map(|f| (f.clone(), read(&dir.path().join(f)))).collect();
    assert!(manifest.checksums.keys().any(|f| f.starts_with("seed-1/")));

    for r in 0..2 {
        let models = dir.path().join(format!("seed-{r}/models"));
        for f in fs::read_dir(&models).unwrap() {
            let p = f.unwrap().path();
            if p.file_name().unwrap().to_string_lossy().starts_with("eg_rerank") {
                fs::remove_file(p).unwrap();
            }
        }
        fs::remove_dir_all(dir.path().join(format!("seed-{r}/reports"))).unwrap();
    }
    cmd_train(&c, dir.path(), Stage::EgRerank).unwrap();
    cmd_train(&c, dir.path(), Stage::EgRerankPlus).unwrap();
    cmd_evaluate(&c, dir.path()).unwrap();
    for (f, bytes) in &before {
        assert_eq!(&read(&dir.path().join(f)), bytes, "{f} changed on re-run");
    }
    assert_eq!(cmd_verify(dir.path()).unwrap(), before.len());

    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert!(summary.lines().next().unwrap().contains("std"));
    fs::write(dir.path().join("seed-0/data/test.tsv"), "tampered\n").unwrap();
    match cmd_verify(dir.path()) {
        Err(Error::Integrity(m)) => assert!(m.contains("seed-0/data/test.tsv"), "{m}"),
        other => panic!("expected an integrity error, got {other:?}"),
    }
}

#[test]
fn another_config_cannot_reuse_an_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let c = tiny();
    cmd_gen_data(&c, dir.path()).unwrap();
    let mut d = tiny();
    d.seed += 1;
    assert!(matches!(cmd_gen_data(&d, dir.path()), Err(Error::Config(_))));
}
