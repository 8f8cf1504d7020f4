//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `RERANKLAB_ACCEPTANCE=full` runs the stated seed counts (hours on one
//! core). The default `quick` profile runs the same desk configuration on
//! fewer repeat seeds and says so on every affected line. The process exits
//! nonzero only when an exact criterion (gradients, oracles, calibration,
//! quantiles, monotonicity, degeneracy, reproducibility) fails; statistical
//! criteria are reported either way.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;
use reranklab::baselines::{best_of_n_quantile, enumerate_curve};
use reranklab::discriminator::{DiscriminatorConfig, DiscriminatorModel};
use reranklab::evaluator::{EvaluatorConfig, EvaluatorModel};
use reranklab::generator::{train_eg_rerank, training_sets, GeneratorConfig, GeneratorModel, RolloutMode, Trajectory};
use reranklab::gradcheck::grad_check;
use reranklab::harness::{cmd_evaluate, cmd_gen_data, cmd_shift_study, cmd_train, ExperimentConfig, RunManifest, Stage, World};
use reranklab::metrics::{auc, consistency_matrix, gauc, kendall_tau_distance, ndcg, MetricReport};
use reranklab::nn::{bce_with_logit, Activation, LstmCell, Mlp};
use reranklab::rng::{derive_index, rng_for, rng_from};
use reranklab::sim::{default_bg, generate_dataset, position_profile, GroundTruthRule, ItemUniverse, RuleConfig, Slate};
use reranklab::{ParameterSet, Tensor};

mod common;

const GRAD_TOL: f64 = 1e-4;
const SUPERVISED: [&str; 6] = ["mse", "cross_entropy", "hinge", "pairwise_logistic", "pairwise_hinge", "listnet"];

struct Profile {
    name: &'static str,
    desk_seeds: usize,
    shift_seeds: usize,
    toy_seeds: usize,
}

impl Profile {
    fn from_env() -> Profile {
        match std::env::var("RERANKLAB_ACCEPTANCE").as_deref() {
            Ok("full") => Profile {
                name: "full",
                desk_seeds: 10,
                shift_seeds: 20,
                toy_seeds: 10,
            },
            _ => Profile {
                name: "quick",
                desk_seeds: 2,
                shift_seeds: 20,
                toy_seeds: 10,
            },
        }
    }

    fn seeds_note(&self, used: usize, stated: usize) -> String {
        if used == stated {
            String::new()
        } else {
            format!(" [reduced: {used} of {stated} seeds]")
        }
    }
}

struct Line {
    id: u8,
    pass: bool,
    exact: bool,
    text: String,
}

fn line(id: u8, pass: bool, exact: bool, text: String) -> Line {
    let l = Line { id, pass, exact, text };
    println!("criterion {:>2} {}  {}", l.id, if l.pass { "PASS" } else { "FAIL" }, l.text);
    l
}

// 1 -------------------------------------------------------------------------

fn gradient_integrity() -> Line {
    let mut results: Vec<(&str, f64, f64)> = Vec::new();

    let mlp = Mlp::with_output("m", &[5, 7, 4, 1], Activation::Relu, Activation::None);
    let mut p = ParameterSet::new(1);
    mlp.init(&mut p).unwrap();
    let x = Tensor::from_vec(&[4, 5], (0..20).map(|i| (i as f64 * 0.53).sin()).collect()).unwrap();
    let y = [1.0, 0.0, 0.0, 1.0];
    let r = grad_check(&mut p, 1e-5, 300, &mut rng_from(1), |p, grad| {
        let (z, cache) = mlp.forward(p, &x)?;
        let mut loss = 0.0;
        let mut dz = Tensor::zeros(&[4, 1]);
        for (i, &t) in y.iter().enumerate() {
            let (l, d) = bce_with_logit(z.data()[i], t);
            loss += l;
            dz.data_mut()[i] = d;
        }
        if grad {
            mlp.backward(p, &cache, &dz)?;
        }
        Ok(loss)
    })
    .unwrap();
    results.push(("mlp", r.max_rel_error, r.raw_max_rel_error));

    let cell = LstmCell::new("l", 3, 4);
    let mut p = ParameterSet::new(2);
    cell.init(&mut p).unwrap();
    let xs: Vec<Tensor> = (0..4).map(|t| Tensor::from_vec(&[2, 3], (0..6).map(|i| ((t * 6 + i) as f64).cos()).collect()).unwrap()).collect();
    let r = grad_check(&mut p, 1e-5, 300, &mut rng_from(2), |p, grad| {
        let (mut h, mut c) = (Tensor::zeros(&[2, 4]), Tensor::zeros(&[2, 4]));
        let mut caches = Vec::new();
        for x in &xs {
            let (h2, c2, cache) = cell.forward(p, &h, &c, x)?;
            caches.push(cache);
            h = h2;
            c = c2;
        }
        // Loss on the final state only: every step's gradient passes through the recurrence.
        let loss = h.data().iter().map(|v| v * v).sum::<f64>() + c.data().iter().sum::<f64>();
        if grad {
            let mut dh = h.map(|v| 2.0 * v);
            let mut dc = c.map(|_| 1.0);
            for cache in caches.iter().rev() {
                let (_, dh_prev, dc_prev) = cell.backward(p, cache, &dh, &dc)?;
                dh = dh_prev;
                dc = dc_prev;
            }
        }
        Ok(loss)
    })
    .unwrap();
    results.push(("lstm", r.max_rel_error, r.raw_max_rel_error));

    let u = ItemUniverse::build(12, 3, 3).unwrap();
    let rule = GroundTruthRule::new(&u, 4, RuleConfig::default(), 4).unwrap();
    let (train, _) = generate_dataset(&u, &rule, 6, 4, 1.0, 1, 5).unwrap();
    let small_eval = EvaluatorConfig {
        hidden: 5,
        head_widths: vec![4, 3],
        ..EvaluatorConfig::default()
    };
    let ev = EvaluatorModel::new(small_eval, 3, 1, 6).unwrap();
    let refs: Vec<&Slate> = train.slates.iter().collect();
    let mut p = ev.params.clone();
    let r = grad_check(&mut p, 1e-5, 400, &mut rng_from(3), |p, g| ev.batch_loss(p, &u, &refs, 0.25, g)).unwrap();
    results.push(("evaluator", r.max_rel_error, r.raw_max_rel_error));

    let g = GeneratorModel::new(
        GeneratorConfig {
            hidden: 5,
            head_widths: vec![4, 3],
            ..GeneratorConfig::default()
        },
        3,
        1,
        7,
    )
    .unwrap();
    let trajs = g.rollout_batch(&u, &ev, &training_sets(12, 4, 3, 8), &[1.0], RolloutMode::Sample, 9).unwrap();
    let trefs: Vec<&Trajectory> = trajs.iter().collect();
    let old: Vec<Vec<f64>> = g.log_probs(&g.params, &u, &trefs).unwrap().iter().map(|l| l.iter().map(|v| v - 0.04).collect()).collect();
    let adv: Vec<Vec<f64>> = (0..3).map(|e| (0..4).map(|t| ((e * 4 + t) as f64 * 1.3).cos()).collect()).collect();
    let mut p = g.params.clone();
    let r = grad_check(&mut p, 1e-5, 400, &mut rng_from(4), |p, grad| g.surrogate_loss(p, &u, &trefs, &old, &adv, grad)).unwrap();
    results.push(("ppo_surrogate", r.max_rel_error, r.raw_max_rel_error));

    let d = DiscriminatorModel::new(
        DiscriminatorConfig {
            hidden: 5,
            head_widths: vec![4, 3],
            ..DiscriminatorConfig::default()
        },
        3,
        1,
        10,
    )
    .unwrap();
    let bg = [1.0];
    let real: Vec<(&[usize], &[f64])> = vec![(&[1, 2, 3, 4], &bg), (&[9, 0, 11, 5], &bg)];
    let fake: Vec<(&[usize], &[f64])> = vec![(&[6, 7, 8, 10], &bg)];
    let mut p = d.params.clone();
    let r = grad_check(&mut p, 1e-5, 400, &mut rng_from(5), |p, gr| d.batch_loss(p, &u, &real, &fake, gr)).unwrap();
    results.push(("discriminator", r.max_rel_error, r.raw_max_rel_error));

    let worst = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let detail: Vec<String> = results.iter().map(|(n, e, raw)| format!("{n} {e:.1e} (raw {raw:.1e})")).collect();
    line(1, worst < GRAD_TOL, true, format!("gradient integrity: max relative error net of difference roundoff {} (tolerance {GRAD_TOL:.0e})", detail.join(", ")))
}

// 2 -------------------------------------------------------------------------

fn metric_oracles() -> Line {
    let mut r = rng_for(2024, "fixtures");
    let mut mismatches = 0usize;
    let fixtures = 1000;
    for _ in 0..fixtures {
        let n = r.random_range(1..=8);
        let scores: Vec<f64> = (0..n).map(|_| f64::from(r.random_range(0u8..5)) / 4.0).collect();
        let labels: Vec<u8> = (0..n).map(|_| u8::from(r.random_bool(0.5))).collect();
        if auc(&scores, &labels) != common::pair_auc(&scores, &labels) {
            mismatches += 1;
        }
        if ndcg(&labels) != common::perm_ndcg(&labels) {
            mismatches += 1;
        }
        let mut a: Vec<u32> = (0..n as u32).collect();
        let mut b = a.clone();
        a.shuffle(&mut r);
        b.shuffle(&mut r);
        if kendall_tau_distance(&a, &b).unwrap() != common::pair_kendall(&a, &b) {
            mismatches += 1;
        }
        let second: Vec<u8> = labels.iter().map(|l| 1 - l).collect();
        let lists = [(scores.as_slice(), labels.as_slice()), (scores.as_slice(), second.as_slice())];
        let oracle: Vec<f64> = lists.iter().filter_map(|(s, l)| common::pair_auc(s, l)).collect();
        let same = match gauc(&lists) {
            Ok(g) => g.value == oracle.iter().sum::<f64>() / oracle.len() as f64,
            Err(_) => oracle.is_empty(),
        };
        if !same {
            mismatches += 1;
        }
    }
    line(2, mismatches == 0, true, format!("metric oracles: {mismatches} mismatches over {fixtures} fixtures x 4 metrics (exact equality)"))
}

// 3 -------------------------------------------------------------------------

fn calibration(world: &World) -> Line {
    let profile = position_profile(&world.train, &world.universe, &world.rule).unwrap();
    let first = profile[0];
    let last = *profile.last().unwrap();
    let worst_rise = profile.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    let pass = (0.43..=0.57).contains(&first) && (0.23..=0.37).contains(&last) && worst_rise <= 0.02;
    line(
        3,
        pass,
        true,
        format!("simulator calibration: position 1 {first:.4} in [0.43, 0.57], position N {last:.4} in [0.23, 0.37], largest rise {worst_rise:.4} <= 0.02"),
    )
}

// 4 -------------------------------------------------------------------------

fn quantiles() -> Line {
    let exact = best_of_n_quantile(500).unwrap() == 500.0 / 501.0;
    let draws = 1_000_000;
    let mut details = Vec::new();
    let mut ok = exact;
    for n in [1usize, 3, 10, 500] {
        let mut r = rng_for(n as u64, "best-of-n");
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..draws {
            let mut m: f64 = 0.0;
            for _ in 0..n {
                m = m.max(r.random::<f64>());
            }
            sum += m;
            sq += m * m;
        }
        let mean = sum / draws as f64;
        let se = ((sq / draws as f64 - mean * mean) / draws as f64).sqrt();
        let z = (mean - best_of_n_quantile(n as u64).unwrap()) / se;
        ok &= z.abs() <= 3.0;
        details.push(format!("n={n} z={z:+.2}"));
    }
    line(4, ok, true, format!("best-of-n quantile: q(500) = 500/501 {exact}; Monte Carlo at 1e6 draws {} (|z| <= 3)", details.join(", ")))
}

// 5 -------------------------------------------------------------------------

fn requirement_rows(p: &Path) -> (f64, f64, f64) {
    let text = fs::read_to_string(p).unwrap();
    let get = |name: &str| -> f64 {
        text.lines().find(|l| l.starts_with(name)).and_then(|l| l.split(',').nth(1)).unwrap().parse().unwrap()
    };
    (get("reversed,"), get("shuffled,"), get("label_separated,"))
}

fn evaluator_requirements(out: &Path, seeds: usize, minutes: f64, note: &str) -> Line {
    let rows: Vec<(f64, f64, f64)> = (0..seeds).map(|r| requirement_rows(&out.join(format!("seed-{r}/models/evaluator_requirements.csv")))).collect();
    let n = rows.len() as f64;
    let (rev, shuf, lab) = rows.iter().fold((0.0, 0.0, 0.0), |a, r| (a.0 + r.0 / n, a.1 + r.1 / n, a.2 + r.2 / n));
    let pass = rev >= 0.90 && shuf >= 0.85 && lab >= 0.75 && minutes <= 15.0;
    line(
        5,
        pass,
        false,
        format!(
            "evaluator requirements: reversed {rev:.4} (>= 0.90), shuffled {shuf:.4} (>= 0.85), label-separated {lab:.4} (>= 0.75), mean over seeds; training {minutes:.1} min per seed (<= 15){note}"
        ),
    )
}

// 6 -------------------------------------------------------------------------

fn headline(runs: &[Vec<MetricReport>], note: &str) -> Line {
    let mut holds = 0;
    let mut details = Vec::new();
    for reps in runs {
        let best = reps.iter().filter(|m| SUPERVISED.contains(&m.method.as_str())).max_by(|a, b| a.true_score.total_cmp(&b.true_score)).unwrap();
        let eg = reps.iter().find(|m| m.method == "eg_rerank").unwrap();
        let ratio = eg.true_score / best.true_score;
        let gap = best.offline_gauc - eg.offline_gauc;
        if ratio >= 1.05 && gap >= 0.05 {
            holds += 1;
        }
        details.push(format!("{} ratio {ratio:.3} gauc gap {gap:+.3}", best.method));
    }
    let need = (runs.len() * 8).div_ceil(10);
    line(
        6,
        holds >= need,
        false,
        format!(
            "headline inconsistency: holds in {holds} of {} seeds (need {need}; true ratio >= 1.05 and GAUC gap >= 0.05) [{}]{note}",
            runs.len(),
            details.join("; ")
        ),
    )
}

// 7 -------------------------------------------------------------------------

fn consistency(mean: &[MetricReport]) -> Line {
    let m = consistency_matrix(mean, &["offline_gauc", "ndcg", "evaluator_score", "true_score"]).unwrap();
    let et = m.get("evaluator_score", "true_score").unwrap();
    let gt = m.get("offline_gauc", "true_score").unwrap();
    let gn = m.get("offline_gauc", "ndcg").unwrap();
    line(
        7,
        mean.len() >= 8 && et < gt && gn < 0.25,
        false,
        format!("metric consistency over {} methods: d(evaluator, true) {et:.3} < d(GAUC, true) {gt:.3}; d(GAUC, NDCG) {gn:.3} < 0.25", mean.len()),
    )
}

// 8 -------------------------------------------------------------------------

fn permutations_of(items: &[usize]) -> Vec<Vec<usize>> {
    common::permutations(items.len()).into_iter().map(|p| p.iter().map(|&i| items[i]).collect()).collect()
}

fn toy_optimum(seeds: usize) -> Line {
    let mut ok_seeds = 0;
    let mut ratios = Vec::new();
    let mut random_ratios = Vec::new();
    for s in 0..seeds {
        let seed = derive_index(808, s as u64);
        let u = ItemUniverse::build(8, 16, seed).unwrap();
        let rule = GroundTruthRule::new(&u, 4, RuleConfig::default(), seed ^ 1).unwrap();
        let (mut train, _) = generate_dataset(&u, &rule, 6000, 4, 1.0, 1, seed ^ 2).unwrap();
        let val = train.split_off_tail(0.1, reranklab::sim::Split::Validation);
        let mut ev = EvaluatorModel::new(
            EvaluatorConfig {
                hidden: 32,
                head_widths: vec![32, 16],
                max_epochs: 10,
                ..EvaluatorConfig::default()
            },
            16,
            1,
            seed ^ 3,
        )
        .unwrap();
        ev.train(&u, &train, &val, &mut rng_for(seed, "toy.shuffle")).unwrap();
        let mut g = GeneratorModel::new(
            GeneratorConfig {
                hidden: 32,
                head_widths: vec![32, 16],
                iterations: 60,
                ..GeneratorConfig::default()
            },
            16,
            1,
            seed ^ 4,
        )
        .unwrap();
        train_eg_rerank(&mut g, &ev, &u, 4, &[1.0], None, seed ^ 5).unwrap();
        let sets = training_sets(8, 4, 20, seed ^ 6);
        let score = |l: &[usize]| ev.score_items(&u, l, &[1.0]).unwrap().score;
        let mut ratio = 0.0;
        let mut random = 0.0;
        for set in &sets {
            let perms = permutations_of(set);
            let best = perms.iter().map(|p| score(p)).fold(f64::NEG_INFINITY, f64::max);
            ratio += score(&g.rank(&u, set, &[1.0]).unwrap()) / best / sets.len() as f64;
            random += perms.iter().map(|p| score(p) / best).sum::<f64>() / perms.len() as f64 / sets.len() as f64;
        }
        if ratio >= 0.95 {
            ok_seeds += 1;
        }
        ratios.push(format!("{ratio:.3}"));
        random_ratios.push(random);
    }
    let need = (seeds * 9).div_ceil(10);
    let rnd = random_ratios.iter().sum::<f64>() / random_ratios.len() as f64;
    line(
        8,
        ok_seeds >= need,
        false,
        format!(
            "toy optimum (N=4, 8 items): greedy rollout >= 95% of the enumerated optimum in {ok_seeds} of {seeds} seeds (need {need}) [ratios {}; a uniform permutation averages {rnd:.3}]",
            ratios.join(" ")
        ),
    )
}

// 9 -------------------------------------------------------------------------

fn zero_beta_identity() -> bool {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small_config();
    c.discriminator.beta = 0.0;
    cmd_gen_data(&c, dir.path()).unwrap();
    for s in [Stage::Evaluator, Stage::EgRerank, Stage::EgRerankPlus] {
        cmd_train(&c, dir.path(), s).unwrap();
    }
    let m = dir.path().join("seed-0/models");
    fs::read(m.join("eg_rerank_trace.csv")).unwrap() == fs::read(m.join("eg_rerank_plus_generator_trace.csv")).unwrap()
        && fs::read(m.join("eg_rerank.ckpt")).unwrap() == fs::read(m.join("eg_rerank_plus.ckpt")).unwrap()
}

fn degeneracy_and_proximity(runs: &[Vec<MetricReport>], distances: &[Vec<(String, f64)>], note: &str) -> (Line, Line) {
    let identical = zero_beta_identity();
    let a = line(9, identical, true, "EG-Rerank+ degeneracy: beta = 0 trace and checkpoint bit-identical to EG-Rerank under shared seeds".into());
    let find = |reps: &[MetricReport], name: &str| reps.iter().find(|m| m.method == name).unwrap().true_score;
    let dist = |d: &[(String, f64)], name: &str| d.iter().find(|(m, _)| m == name).unwrap().1;
    let n = runs.len() as f64;
    let eg: f64 = runs.iter().map(|r| find(r, "eg_rerank")).sum::<f64>() / n;
    let plus: f64 = runs.iter().map(|r| find(r, "eg_rerank_plus")).sum::<f64>() / n;
    let closer = distances.iter().filter(|d| dist(d, "eg_rerank_plus") < dist(d, "eg_rerank")).count();
    let detail: Vec<String> = distances.iter().map(|d| format!("{:.5} vs {:.5}", dist(d, "eg_rerank_plus"), dist(d, "eg_rerank"))).collect();
    let need = (runs.len() * 8).div_ceil(10);
    let b = line(
        9,
        plus >= 0.99 * eg && closer >= need,
        false,
        format!(
            "EG-Rerank+ proximity: true score {plus:.4} vs {eg:.4} (>= -1%); closer to the logged lists in {closer} of {} seeds (need {need}) [distance plus vs plain: {}]{note}",
            runs.len(),
            detail.join("; ")
        ),
    );
    (a, b)
}

// 10 ------------------------------------------------------------------------

fn shift(config: &ExperimentConfig, seeds: usize, note: &str) -> Line {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config.clone();
    c.shift.seeds = seeds;
    let started = Instant::now();
    let (_, rows) = cmd_shift_study(&c, dir.path()).unwrap();
    let exceed = rows.iter().filter(|r| r.mae_off > r.mae_on).count();
    let on = rows.iter().map(|r| r.mae_on).sum::<f64>() / rows.len() as f64;
    let off = rows.iter().map(|r| r.mae_off).sum::<f64>() / rows.len() as f64;
    let need = (seeds * 95).div_ceil(100);
    line(
        10,
        exceed >= need,
        false,
        format!(
            "distribution shift: mae_off > mae_on in {exceed} of {seeds} seeds (need {need}); mean list-score mae_on {on:.4}, mae_off {off:.4}; {:.1} min{note}",
            started.elapsed().as_secs_f64() / 60.0
        ),
    )
}

// 11 ------------------------------------------------------------------------

fn enumerate_monotone(config: &ExperimentConfig, out: &Path, seeds: usize) -> Line {
    let mut monotone = true;
    let mut crossings = Vec::new();
    for r in 0..seeds {
        let dir = out.join(format!("seed-{r}"));
        let w = World::load(&dir.join("data")).unwrap();
        let ev = EvaluatorModel::from_checkpoint(&reranklab::checkpoint::Checkpoint::load(&dir.join("models/evaluator.ckpt")).unwrap()).unwrap();
        let sets: Vec<Vec<usize>> = w.test.slates.iter().take(config.evaluation.curve_sets).map(|s| s.item_ids.clone()).collect();
        let (curve, per_set) = enumerate_curve(&ev, &w.universe, &w.rule, &sets, &default_bg(1), &config.evaluation.k_grid, 31 + r as u64).unwrap();
        monotone &= per_set.iter().all(|row| row.windows(2).all(|p| p[1] >= p[0]));
        monotone &= curve.windows(2).all(|p| p[1].mean_evaluator_score >= p[0].mean_evaluator_score);
        // The harness's own curve, parsed back exactly from its 17-digit fields.
        let csv = fs::read_to_string(dir.join("reports/enumerate_curve.csv")).unwrap();
        let evals: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(3).unwrap().parse().unwrap()).collect();
        monotone &= evals.windows(2).all(|p| p[1] >= p[0]);
        let crossing = fs::read_to_string(dir.join("reports/enumerate_crossing.csv")).unwrap();
        let k = crossing.lines().nth(1).and_then(|l| l.split(',').nth(2)).unwrap_or("").to_string();
        crossings.push(if k.is_empty() { "none".to_string() } else { k });
    }
    line(
        11,
        monotone,
        true,
        format!(
            "ENUMERATE-k: nested-sample evaluator score non-decreasing in k on every set (exact) {monotone}; crossing k against EG-Rerank+ per seed: {}",
            crossings.join(", ")
        ),
    )
}

// 12 ------------------------------------------------------------------------

fn reproducibility(config: &ExperimentConfig, out: &Path) -> Line {
    let manifest = RunManifest::load(&RunManifest::path(out)).unwrap();
    let csvs: Vec<(String, Vec<u8>)> = manifest
        .checksums
        .keys()
        .filter(|f| f.ends_with(".csv") || f.ends_with(".tsv"))
        .map(|f| (f.clone(), fs::read(out.join(f)).unwrap()))
        .collect();
    cmd_gen_data(config, out).unwrap();
    cmd_train(config, out, Stage::Baselines).unwrap();
    cmd_evaluate(config, out).unwrap();
    let changed: Vec<&str> = csvs.iter().filter(|(f, b)| &fs::read(out.join(f)).unwrap() != b).map(|(f, _)| f.as_str()).collect();
    line(
        12,
        changed.is_empty(),
        true,
        format!(
            "reproducibility: gen-data, baselines and evaluate re-run against the manifest; {} of {} CSV/TSV files differ{}",
            changed.len(),
            csvs.len(),
            if changed.is_empty() { String::new() } else { format!(" ({})", changed.join(", ")) }
        ),
    )
}

// ---------------------------------------------------------------------------

fn small_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::desk();
    c.universe.num_items = 30;
    c.universe.feature_dim = 4;
    c.dataset.num_lists = 400;
    c.dataset.list_len = 5;
    c.evaluator.hidden = 8;
    c.evaluator.head_widths = vec![8];
    c.evaluator.max_epochs = 2;
    c.generator.hidden = 8;
    c.generator.head_widths = vec![8];
    c.generator.iterations = 4;
    c.generator.episodes_per_batch = 8;
    c.discriminator.hidden = 8;
    c.discriminator.head_widths = vec![8];
    c
}

fn out_dir() -> (Option<tempfile::TempDir>, PathBuf) {
    match std::env::var_os("RERANKLAB_ACCEPTANCE_OUT") {
        Some(p) => (None, PathBuf::from(p)),
        None => {
            let t = tempfile::tempdir().unwrap();
            let p = t.path().to_path_buf();
            (Some(t), p)
        }
    }
}

fn main() {
    let profile = Profile::from_env();
    let started = Instant::now();
    println!("acceptance profile: {} (desk seeds {}, shift seeds {}, toy seeds {})", profile.name, profile.desk_seeds, profile.shift_seeds, profile.toy_seeds);
    let mut lines = vec![gradient_integrity(), metric_oracles()];

    let mut config = ExperimentConfig::desk();
    config.repeat_seeds = profile.desk_seeds;
    let (_guard, out) = out_dir();
    cmd_gen_data(&config, &out).unwrap();
    lines.push(calibration(&World::load(&out.join("seed-0/data")).unwrap()));
    lines.push(quantiles());

    let t = Instant::now();
    cmd_train(&config, &out, Stage::Evaluator).unwrap();
    let eval_minutes = t.elapsed().as_secs_f64() / 60.0 / profile.desk_seeds as f64;
    let note = profile.seeds_note(profile.desk_seeds, 10);
    lines.push(evaluator_requirements(&out, profile.desk_seeds, eval_minutes, &note));

    let mut stage_minutes = Vec::new();
    for s in [Stage::Baselines, Stage::EgRerank, Stage::EgRerankPlus] {
        let t = Instant::now();
        cmd_train(&config, &out, s).unwrap();
        stage_minutes.push(format!("{s} {:.1} min", t.elapsed().as_secs_f64() / 60.0 / profile.desk_seeds as f64));
    }
    let t = Instant::now();
    let res = cmd_evaluate(&config, &out).unwrap();
    stage_minutes.push(format!("evaluate {:.1} min", t.elapsed().as_secs_f64() / 60.0 / profile.desk_seeds as f64));
    println!("desk stage times per seed: {}", stage_minutes.join(", "));
    print!("{}", fs::read_to_string(out.join("summary.csv")).unwrap());

    lines.push(headline(&res.runs, &note));
    lines.push(consistency(&reranklab::harness::mean_reports(&res.runs)));
    lines.push(toy_optimum(profile.toy_seeds));
    let (a, b) = degeneracy_and_proximity(&res.runs, &res.distances, &note);
    lines.push(a);
    lines.push(b);
    lines.push(shift(&config, profile.shift_seeds, &profile.seeds_note(profile.shift_seeds, 20)));
    lines.push(enumerate_monotone(&config, &out, profile.desk_seeds));
    lines.push(reproducibility(&config, &out));

    let failed: Vec<String> = lines.iter().filter(|l| !l.pass).map(|l| l.id.to_string()).collect();
    let exact_failed = lines.iter().any(|l| l.exact && !l.pass);
    println!(
        "acceptance: {} of {} lines pass; failing criteria: {}; {:.1} min",
        lines.len() - failed.len(),
        lines.len(),
        if failed.is_empty() { "none".to_string() } else { failed.join(", ") },
        started.elapsed().as_secs_f64() / 60.0
    );
    if exact_failed {
        std::process::exit(1);
    }
}
