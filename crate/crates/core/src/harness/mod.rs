//! Experiment pipeline: generate data, train the evaluator, the baselines
//! and both generators, evaluate every method, and run the side studies.
//!
//! Every repetition `r` lives in `<out>/seed-<r>/` with its own data and
//! models. Stage seeds are derived from the repetition seed and a stage
//! label, so stages can be re-run in isolation and reproduce their files.

mod config;
mod manifest;
mod plot;

use std::fmt::Write as _;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

pub use config::{BudgetConfig, DatasetConfig, EvaluationConfig, ExperimentConfig, ShiftConfig, UniverseConfig};
pub use manifest::{sha256_file, RunManifest, StageRecord, MANIFEST_FILE};
pub use plot::{Plot, Series};

use crate::baselines::{best_of_n_quantile, curve_csv, enumerate_curve, train_scoring_model, LossKind, Ranker, RankerSpec, ScoringModel};
use crate::checkpoint::{format_f64, Checkpoint};
use crate::discriminator::{distribution_distance, train_eg_rerank_plus, DiscriminatorModel};
use crate::error::{Error, Result};
use crate::evaluator::{generalization_gap, list_errors, requirement_check, EvaluatorModel, RequirementReport};
use crate::generator::{train_eg_rerank, GeneratorModel};
use crate::metrics::{consistency_matrix, mean_std, offline_gauc, offline_ndcg, online_gauc, reports_csv, summary_csv, MetricReport, METRIC_NAMES};
use crate::rng;
use crate::sim::{
    default_bg, generate_biased_dataset, generate_dataset, position_profile, BiasPolicy, Dataset, GroundTruthRule, ItemUniverse, Split,
};

/// Seed of repetition `r`.
pub fn repeat_seed(config: &ExperimentConfig, r: usize) -> u64 {
    rng::derive_index(config.seed, r as u64)
}

pub fn stage_seed(config: &ExperimentConfig, r: usize, label: &str) -> u64 {
    rng::derive(repeat_seed(config, r), label)
}

pub fn repeat_dir(r: usize) -> String {
    format!("seed-{r}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Evaluator,
    Baselines,
    EgRerank,
    EgRerankPlus,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Evaluator, Stage::Baselines, Stage::EgRerank, Stage::EgRerankPlus];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Evaluator => "evaluator",
            Stage::Baselines => "baselines",
            Stage::EgRerank => "eg_rerank",
            Stage::EgRerankPlus => "eg_rerank_plus",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| {
            Error::config(format!(
                "unknown stage `{s}` (expected one of evaluator, baselines, eg_rerank, eg_rerank_plus)"
            ))
        })
    }
}

/// Data of one repetition as written by `gen-data`.
pub struct World {
    pub universe: ItemUniverse,
    pub rule: GroundTruthRule,
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

impl World {
    pub fn generate(config: &ExperimentConfig, r: usize) -> Result<World> {
        let u = ItemUniverse::build(config.universe.num_items, config.universe.feature_dim, stage_seed(config, r, "universe"))?;
        let rule = GroundTruthRule::new(&u, config.dataset.list_len, config.rule.clone(), stage_seed(config, r, "rule"))?;
        let d = &config.dataset;
        let (mut train, test) = generate_dataset(&u, &rule, d.num_lists, d.list_len, d.train_fraction, d.bg_dim, stage_seed(config, r, "data"))?;
        let validation = train.split_off_tail(d.validation_fraction, Split::Validation);
        Ok(World {
            universe: u,
            rule,
            train,
            validation,
            test,
        })
    }

    pub fn load(dir: &Path) -> Result<World> {
        let need = |f: &str| -> Result<PathBuf> {
            let p = dir.join(f);
            if p.exists() {
                Ok(p)
            } else {
                Err(Error::Prerequisite(format!("{} is missing; run `gen-data` first", p.display())))
            }
        };
        let universe = ItemUniverse::from_checkpoint(&Checkpoint::load(&need("universe.ckpt")?)?)?;
        let rule = GroundTruthRule::from_checkpoint(&Checkpoint::load(&need("rule.ckpt")?)?, &universe)?;
        Ok(World {
            train: Dataset::load(&need("train.tsv")?)?,
            validation: Dataset::load(&need("validation.tsv")?)?,
            test: Dataset::load(&need("test.tsv")?)?,
            universe,
            rule,
        })
    }
}

/// Information a stage reports back to the caller besides its files.
#[derive(Debug, Clone, Default)]
pub struct StageOutput {
    pub files: Vec<String>,
    pub warnings: Vec<String>,
    pub notes: Vec<String>,
}

fn write(out: &Path, rel: &str, text: &str, files: &mut Vec<String>) -> Result<()> {
    let p = out.join(rel);
    if let Some(parent) = p.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    files.push(rel.to_string());
    Ok(())
}

fn write_ckpt(out: &Path, rel: &str, ck: &Checkpoint, files: &mut Vec<String>) -> Result<()> {
    write(out, rel, &ck.to_text(), files)
}

fn finish(out: &Path, config: &ExperimentConfig, stage: &str, label: &str, started: Instant, output: &StageOutput) -> Result<()> {
    let text = config.to_toml();
    let mut m = RunManifest::open(out, &text)?;
    let seeds = (0..config.repeat_seeds).map(|r| stage_seed(config, r, label)).collect();
    m.record(out, stage, seeds, started.elapsed().as_secs_f64(), output.files.clone())?;
    m.save(out)
}

fn prepare_out(out: &Path, config: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    // Fail early on a manifest from another configuration.
    RunManifest::open(out, &config.to_toml()).map(|_| ())
}

pub fn cmd_gen_data(config: &ExperimentConfig, out: &Path) -> Result<StageOutput> {
    config.validate()?;
    prepare_out(out, config)?;
    let started = Instant::now();
    let mut o = StageOutput::default();
    for r in 0..config.repeat_seeds {
        let dir = repeat_dir(r);
        let w = World::generate(config, r)?;
        write_ckpt(out, &format!("{dir}/data/universe.ckpt"), &w.universe.to_checkpoint(), &mut o.files)?;
        write_ckpt(out, &format!("{dir}/data/rule.ckpt"), &w.rule.to_checkpoint()?, &mut o.files)?;
        write(out, &format!("{dir}/data/train.tsv"), &w.train.to_text(), &mut o.files)?;
        write(out, &format!("{dir}/data/validation.tsv"), &w.validation.to_text(), &mut o.files)?;
        write(out, &format!("{dir}/data/test.tsv"), &w.test.to_text(), &mut o.files)?;
        let mut csv = String::from("position,mean_true_probability\n");
        if !w.train.is_empty() {
            for (k, f) in position_profile(&w.train, &w.universe, &w.rule)?.iter().enumerate() {
                let _ = writeln!(csv, "{},{}", k + 1, format_f64(*f));
            }
        }
        write(out, &format!("{dir}/data/position_profile.csv"), &csv, &mut o.files)?;
        o.notes.push(format!("{dir}: {} train, {} validation, {} test lists", w.train.len(), w.validation.len(), w.test.len()));
    }
    finish(out, config, "gen-data", "data", started, &o)?;
    Ok(o)
}

fn model_path(out: &Path, r: usize, file: &str) -> PathBuf {
    out.join(repeat_dir(r)).join("models").join(file)
}

fn load_evaluator(out: &Path, r: usize, for_what: &str) -> Result<EvaluatorModel> {
    let p = model_path(out, r, "evaluator.ckpt");
    if !p.exists() {
        return Err(Error::Prerequisite(format!(
            "{for_what} needs a trained evaluator ({} is missing); run `train --stage evaluator` first",
            p.display()
        )));
    }
    EvaluatorModel::from_checkpoint(&Checkpoint::load(&p)?)
}

fn requirement_csv(rep: &RequirementReport) -> String {
    format!(
        "check,accuracy,pairs\nreversed,{},{}\nshuffled,{},{}\nlabel_separated,{},{}\n",
        format_f64(rep.acc_reversed),
        rep.pairs_reversed,
        format_f64(rep.acc_shuffled),
        rep.pairs_shuffled,
        format_f64(rep.acc_label_separated),
        rep.pairs_label_separated
    )
}

pub fn cmd_train(config: &ExperimentConfig, out: &Path, stage: Stage) -> Result<StageOutput> {
    config.validate()?;
    prepare_out(out, config)?;
    let started = Instant::now();
    let mut o = StageOutput::default();
    let bg = default_bg(config.dataset.bg_dim);
    for r in 0..config.repeat_seeds {
        let dir = repeat_dir(r);
        let w = World::load(&out.join(&dir).join("data"))?;
        let d = config.universe.feature_dim;
        match stage {
            Stage::Evaluator => {
                let mut m = EvaluatorModel::new(config.evaluator.clone(), d, config.dataset.bg_dim, stage_seed(config, r, "evaluator"))?;
                let rep = m.train(&w.universe, &w.train, &w.validation, &mut rng::rng_for(repeat_seed(config, r), "evaluator.shuffle"))?;
                write_ckpt(out, &format!("{dir}/models/evaluator.ckpt"), &m.to_checkpoint()?, &mut o.files)?;
                write(out, &format!("{dir}/models/evaluator_trace.csv"), &rep.to_csv(), &mut o.files)?;
                match requirement_check(&m, &w.test, &w.universe, &w.rule, &mut rng::rng_for(repeat_seed(config, r), "requirement")) {
                    Ok(req) => {
                        write(out, &format!("{dir}/models/evaluator_requirements.csv"), &requirement_csv(&req), &mut o.files)?;
                        o.notes.push(format!(
                            "{dir}: evaluator best epoch {}, reversed {:.4}, shuffled {:.4}, label-separated {:.4}",
                            rep.best_epoch, req.acc_reversed, req.acc_shuffled, req.acc_label_separated
                        ));
                    }
                    Err(Error::InsufficientData(msg)) => o.warnings.push(format!("{dir}: requirement check skipped: {msg}")),
                    Err(e) => return Err(e),
                }
            }
            Stage::Baselines => {
                for spec in &config.methods {
                    if let RankerSpec::Scoring(kind) = spec {
                        let (m, rep) = train_scoring_model(*kind, &config.scoring, &w.universe, &w.train, config.dataset.bg_dim, stage_seed(config, r, "baselines"))?;
                        write_ckpt(out, &format!("{dir}/models/scoring_{kind}.ckpt"), &m.to_checkpoint()?, &mut o.files)?;
                        let mut csv = String::from("epoch,loss\n");
                        for (e, l) in rep.epoch_losses.iter().enumerate() {
                            let _ = writeln!(csv, "{},{}", e + 1, format_f64(*l));
                        }
                        write(out, &format!("{dir}/models/scoring_{kind}_trace.csv"), &csv, &mut o.files)?;
                    }
                }
            }
            Stage::EgRerank => {
                let ev = load_evaluator(out, r, "eg_rerank")?;
                let mut g = GeneratorModel::new(config.generator.clone(), d, config.dataset.bg_dim, stage_seed(config, r, "generator"))?;
                let trace = train_eg_rerank(&mut g, &ev, &w.universe, config.dataset.list_len, &bg, Some(&w.rule), stage_seed(config, r, "generator.train"))?;
                write_ckpt(out, &format!("{dir}/models/eg_rerank.ckpt"), &g.to_checkpoint()?, &mut o.files)?;
                write(out, &format!("{dir}/models/eg_rerank_trace.csv"), &trace.to_csv(), &mut o.files)?;
            }
            Stage::EgRerankPlus => {
                let ev = load_evaluator(out, r, "eg_rerank_plus")?;
                // Shares the generator streams with eg_rerank, so beta = 0
                // reproduces it exactly.
                let mut g = GeneratorModel::new(config.generator.clone(), d, config.dataset.bg_dim, stage_seed(config, r, "generator"))?;
                let mut disc = DiscriminatorModel::new(config.discriminator.clone(), d, config.dataset.bg_dim, stage_seed(config, r, "discriminator"))?;
                let trace = train_eg_rerank_plus(
                    &mut g,
                    &mut disc,
                    &ev,
                    &w.universe,
                    &w.train,
                    &bg,
                    Some(&w.rule),
                    stage_seed(config, r, "generator.train"),
                )?;
                write_ckpt(out, &format!("{dir}/models/eg_rerank_plus.ckpt"), &g.to_checkpoint()?, &mut o.files)?;
                write_ckpt(out, &format!("{dir}/models/discriminator.ckpt"), &disc.to_checkpoint()?, &mut o.files)?;
                write(out, &format!("{dir}/models/eg_rerank_plus_trace.csv"), &trace.to_csv(), &mut o.files)?;
                write(out, &format!("{dir}/models/eg_rerank_plus_generator_trace.csv"), &trace.generator.to_csv(), &mut o.files)?;
                o.warnings.extend(trace.warnings.into_iter().map(|w| format!("{dir}: {w}")));
            }
        }
    }
    let label = match stage {
        Stage::Evaluator => "evaluator",
        Stage::Baselines => "baselines",
        Stage::EgRerank | Stage::EgRerankPlus => "generator.train",
    };
    finish(out, config, &format!("train-{stage}"), label, started, &o)?;
    Ok(o)
}

/// Trained models of one repetition, loaded for evaluation.
pub struct Models {
    pub evaluator: Option<EvaluatorModel>,
    pub scoring: Vec<(LossKind, ScoringModel)>,
    pub eg_rerank: Option<GeneratorModel>,
    pub eg_rerank_plus: Option<GeneratorModel>,
}

impl Models {
    /// Load what `methods` need; missing files are appended to `missing`.
    pub fn load(out: &Path, r: usize, methods: &[RankerSpec], missing: &mut Vec<String>) -> Result<Models> {
        let mut get = |file: &str| -> Result<Option<Checkpoint>> {
            let p = model_path(out, r, file);
            if p.exists() {
                Checkpoint::load(&p).map(Some)
            } else {
                missing.push(p.display().to_string());
                Ok(None)
            }
        };
        let needs_eval = methods.iter().any(|m| matches!(m, RankerSpec::GreedyE | RankerSpec::DirectE | RankerSpec::EnumerateK(_)));
        let evaluator = if needs_eval || model_path(out, r, "evaluator.ckpt").exists() {
            get("evaluator.ckpt")?.map(|c| EvaluatorModel::from_checkpoint(&c)).transpose()?
        } else {
            None
        };
        let mut scoring = Vec::new();
        let mut eg_rerank = None;
        let mut eg_rerank_plus = None;
        for m in methods {
            match m {
                RankerSpec::Scoring(kind) => {
                    if let Some(c) = get(&format!("scoring_{kind}.ckpt"))? {
                        scoring.push((*kind, ScoringModel::from_checkpoint(&c)?));
                    }
                }
                RankerSpec::EgRerank => eg_rerank = get("eg_rerank.ckpt")?.map(|c| GeneratorModel::from_checkpoint(&c)).transpose()?,
                RankerSpec::EgRerankPlus => eg_rerank_plus = get("eg_rerank_plus.ckpt")?.map(|c| GeneratorModel::from_checkpoint(&c)).transpose()?,
                _ => {}
            }
        }
        Ok(Models {
            evaluator,
            scoring,
            eg_rerank,
            eg_rerank_plus,
        })
    }

    pub fn ranker(&self, spec: &RankerSpec, seed: u64) -> Option<Ranker<'_>> {
        Some(match spec {
            RankerSpec::Scoring(k) => Ranker::Scoring(&self.scoring.iter().find(|(kind, _)| kind == k)?.1),
            RankerSpec::GreedyE => Ranker::GreedyE(self.evaluator.as_ref()?),
            RankerSpec::DirectE => Ranker::DirectE(self.evaluator.as_ref()?),
            RankerSpec::EnumerateK(k) => Ranker::EnumerateK {
                evaluator: self.evaluator.as_ref()?,
                k: *k,
                seed: rng::derive(seed, &format!("enumerate_{k}")),
            },
            RankerSpec::EgRerank => Ranker::Generator(self.eg_rerank.as_ref()?),
            RankerSpec::EgRerankPlus => Ranker::Generator(self.eg_rerank_plus.as_ref()?),
            RankerSpec::Identity => Ranker::Identity,
            RankerSpec::Reverse => Ranker::Reverse,
            RankerSpec::Random => Ranker::Random {
                seed: rng::derive(seed, "random"),
            },
        })
    }
}

/// All metrics of one ranker on a test set, plus the distribution distance
/// of its output lists to the logged ones. Item scores for the label
/// metrics come from the ranker's output order: earlier means higher.
pub fn evaluate_ranker(
    name: &str,
    ranker: &Ranker<'_>,
    evaluator: Option<&EvaluatorModel>,
    world: &World,
    test: &Dataset,
    online_seed: u64,
) -> Result<(MetricReport, f64)> {
    let reordered = ranker.rank_dataset(&world.universe, test)?;
    let offline_scores: Vec<Vec<f64>> = test
        .slates
        .iter()
        .zip(&reordered)
        .map(|(logged, out)| {
            let n = out.len();
            logged
                .item_ids
                .iter()
                .map(|i| (n - out.item_ids.iter().position(|o| o == i).unwrap_or(n)) as f64)
                .collect()
        })
        .collect();
    let online_scores: Vec<Vec<f64>> = reordered.iter().map(|s| (0..s.len()).map(|k| (s.len() - k) as f64).collect()).collect();
    let off = offline_gauc(test, &offline_scores)?;
    let nd = offline_ndcg(test, &offline_scores)?;
    let on = online_gauc(&world.universe, &world.rule, &reordered, &online_scores, online_seed)?;
    let lists: Vec<&[usize]> = reordered.iter().map(|s| s.item_ids.as_slice()).collect();
    let n = lists.len().max(1) as f64;
    let evaluator_score = match evaluator {
        Some(e) => {
            let bg = test.slates.first().map(|s| s.bg.clone()).unwrap_or_default();
            e.score_lists(&world.universe, &lists, &bg)?.iter().map(|p| p.iter().sum::<f64>()).sum::<f64>() / n
        }
        None => f64::NAN,
    };
    let true_score = lists.iter().map(|l| world.rule.true_score(&world.universe, l)).sum::<Result<f64>>()? / n;
    let logged: Vec<&[usize]> = test.slates.iter().map(|s| s.item_ids.as_slice()).collect();
    let distance = if lists.is_empty() { f64::NAN } else { distribution_distance(&lists, &logged, &world.universe)? };
    let report = MetricReport {
        method: name.to_string(),
        offline_gauc: off.value,
        online_gauc: on.value,
        ndcg: nd.value,
        evaluator_score,
        true_score,
        lists_evaluated: test.len(),
        lists_skipped: off.skipped,
    };
    Ok((report, distance))
}

#[derive(Debug, Clone)]
pub struct EvaluateOutput {
    pub stage: StageOutput,
    pub runs: Vec<Vec<MetricReport>>,
    /// Per repetition, each method's distribution distance to the logged lists.
    pub distances: Vec<Vec<(String, f64)>>,
}

fn headline_csv(runs: &[Vec<MetricReport>]) -> String {
    let supervised: Vec<String> = LossKind::ALL.iter().map(|k| k.to_string()).collect();
    let mut s = String::from("seed,best_supervised,supervised_true_score,supervised_offline_gauc,eg_rerank_true_score,eg_rerank_offline_gauc,true_score_ratio,gauc_gap,headline_holds\n");
    for (r, reps) in runs.iter().enumerate() {
        let best = reps
            .iter()
            .filter(|m| supervised.contains(&m.method))
            .max_by(|a, b| a.true_score.total_cmp(&b.true_score));
        let eg = reps.iter().find(|m| m.method == "eg_rerank");
        if let (Some(b), Some(e)) = (best, eg) {
            let ratio = e.true_score / b.true_score;
            let gap = b.offline_gauc - e.offline_gauc;
            let _ = writeln!(
                s,
                "{r},{},{},{},{},{},{},{},{}",
                b.method,
                format_f64(b.true_score),
                format_f64(b.offline_gauc),
                format_f64(e.true_score),
                format_f64(e.offline_gauc),
                format_f64(ratio),
                format_f64(gap),
                ratio >= 1.05 && gap >= 0.05
            );
        }
    }
    s
}

/// Mean of every metric over repetitions, one report per method.
pub fn mean_reports(runs: &[Vec<MetricReport>]) -> Vec<MetricReport> {
    let Some(first) = runs.first() else {
        return Vec::new();
    };
    first
        .iter()
        .enumerate()
        .map(|(k, rep)| {
            let avg = |f: fn(&MetricReport) -> f64| mean_std(&runs.iter().map(|r| f(&r[k])).collect::<Vec<_>>()).0;
            MetricReport {
                method: rep.method.clone(),
                offline_gauc: avg(|m| m.offline_gauc),
                online_gauc: avg(|m| m.online_gauc),
                ndcg: avg(|m| m.ndcg),
                evaluator_score: avg(|m| m.evaluator_score),
                true_score: avg(|m| m.true_score),
                lists_evaluated: runs.iter().map(|r| r[k].lists_evaluated).sum(),
                lists_skipped: runs.iter().map(|r| r[k].lists_skipped).sum(),
            }
        })
        .collect()
}

fn finite_metrics<'a>(reports: &[MetricReport], metrics: &'a [String]) -> Vec<&'a str> {
    metrics
        .iter()
        .map(String::as_str)
        .filter(|m| reports.iter().all(|r| r.metric(m).is_ok_and(f64::is_finite)))
        .collect()
}

pub fn cmd_evaluate(config: &ExperimentConfig, out: &Path) -> Result<EvaluateOutput> {
    config.validate()?;
    prepare_out(out, config)?;
    let started = Instant::now();
    let mut o = StageOutput::default();
    let mut missing = Vec::new();
    let mut all_models = Vec::new();
    for r in 0..config.repeat_seeds {
        all_models.push(Models::load(out, r, &config.methods, &mut missing)?);
    }
    if !missing.is_empty() {
        return Err(Error::Prerequisite(format!("missing checkpoints: {}", missing.join(", "))));
    }
    let mut runs = Vec::new();
    let mut distances = Vec::new();
    for (r, models) in all_models.iter().enumerate() {
        let dir = repeat_dir(r);
        let w = World::load(&out.join(&dir).join("data"))?;
        let test = if config.evaluation.max_lists == 0 { w.test.clone() } else { w.test.head(config.evaluation.max_lists) };
        let eval_seed = stage_seed(config, r, "evaluate");
        let mut reports = Vec::new();
        let mut dists = Vec::new();
        let mut proximity = String::from("method,distribution_distance\n");
        for spec in &config.methods {
            let ranker = models.ranker(spec, eval_seed).ok_or_else(|| Error::Prerequisite(format!("no model for `{spec}`")))?;
            let (rep, dist) = evaluate_ranker(&spec.to_string(), &ranker, models.evaluator.as_ref(), &w, &test, rng::derive(eval_seed, "online"))?;
            let _ = writeln!(proximity, "{spec},{}", format_f64(dist));
            reports.push(rep);
            dists.push((spec.to_string(), dist));
        }
        write(out, &format!("{dir}/reports/metrics.csv"), &reports_csv(&reports), &mut o.files)?;
        write(out, &format!("{dir}/reports/proximity.csv"), &proximity, &mut o.files)?;
        distances.push(dists);
        let metrics = finite_metrics(&reports, &config.metrics);
        if reports.len() >= 3 && metrics.len() >= 2 {
            write(out, &format!("{dir}/reports/consistency.csv"), &consistency_matrix(&reports, &metrics)?.to_csv(), &mut o.files)?;
        }
        if let Some(ev) = &models.evaluator {
            let sets: Vec<Vec<usize>> = test.slates.iter().take(config.evaluation.curve_sets).map(|s| s.item_ids.clone()).collect();
            if !sets.is_empty() {
                let bg = test.slates[0].bg.clone();
                let (curve, _) = enumerate_curve(ev, &w.universe, &w.rule, &sets, &bg, &config.evaluation.k_grid, rng::derive(eval_seed, "curve"))?;
                let mut csv = curve_csv(&curve);
                csv = csv.replacen("mean_evaluator_score\n", "mean_evaluator_score,best_of_n_quantile\n", 1);
                let mut lines: Vec<String> = csv.lines().map(str::to_string).collect();
                for (line, p) in lines.iter_mut().skip(1).zip(&curve) {
                    let _ = write!(line, ",{}", format_f64(best_of_n_quantile(p.k as u64)?));
                }
                let csv = lines.join("\n") + "\n";
                let reference = reports
                    .iter()
                    .find(|m| m.method == "eg_rerank_plus")
                    .or_else(|| reports.iter().find(|m| m.method == "eg_rerank"));
                let mut crossing = String::from("reference,reference_true_score,crossing_k\n");
                let mut levels = Vec::new();
                if let Some(m) = reference {
                    let k = curve.iter().find(|p| p.mean_true_score >= m.true_score).map(|p| p.k.to_string()).unwrap_or_default();
                    let _ = writeln!(crossing, "{},{},{k}", m.method, format_f64(m.true_score));
                    o.notes.push(format!("{dir}: ENUMERATE-k first reaches {} at k = {}", m.method, if k.is_empty() { "none" } else { &k }));
                    levels.push((m.method.clone(), m.true_score));
                }
                let plot = Plot {
                    title: "ENUMERATE-k".into(),
                    x_label: "k".into(),
                    y_label: "mean true score".into(),
                    log_x: true,
                    series: vec![Series {
                        name: "ENUMERATE-k".into(),
                        points: curve.iter().map(|p| (p.k as f64, p.mean_true_score)).collect(),
                    }],
                    levels,
                };
                write(out, &format!("{dir}/reports/enumerate_curve.csv"), &csv, &mut o.files)?;
                write(out, &format!("{dir}/reports/enumerate_crossing.csv"), &crossing, &mut o.files)?;
                write(out, &format!("{dir}/reports/enumerate_curve.svg"), &plot.to_svg(&csv), &mut o.files)?;
            }
        }
        runs.push(reports);
    }
    write(out, "summary.csv", &summary_csv(&runs)?, &mut o.files)?;
    write(out, "headline.csv", &headline_csv(&runs), &mut o.files)?;
    let mean = mean_reports(&runs);
    let metrics = finite_metrics(&mean, &config.metrics);
    if mean.len() >= 3 && metrics.len() >= 2 {
        write(out, "consistency.csv", &consistency_matrix(&mean, &metrics)?.to_csv(), &mut o.files)?;
    }
    finish(out, config, "evaluate", "evaluate", started, &o)?;
    Ok(EvaluateOutput { stage: o, runs, distances })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftRow {
    pub seed: usize,
    pub mae_on: f64,
    pub mae_off: f64,
}

/// One shift-study repetition: an evaluator trained on biased logs, its
/// error on biased and on uniform lists, and the per-list errors.
pub fn shift_repetition(config: &ExperimentConfig, s: usize) -> Result<(ShiftRow, Vec<f64>, Vec<f64>)> {
    let seed = rng::derive_index(rng::derive(config.seed, "shift"), s as u64);
    let sc = &config.shift;
    let d = &config.dataset;
    let u = ItemUniverse::build(config.universe.num_items, config.universe.feature_dim, rng::derive(seed, "universe"))?;
    let rule = GroundTruthRule::new(&u, d.list_len, config.rule.clone(), rng::derive(seed, "rule"))?;
    let policy = BiasPolicy::new(sc.strength, sc.noise, u.feature_dim(), rng::derive(seed, "policy"))?;
    let mut train = generate_biased_dataset(&u, &rule, &policy, sc.num_lists, d.list_len, d.bg_dim, rng::derive(seed, "train"))?;
    let val = train.split_off_tail(d.validation_fraction, Split::Validation);
    let on = generate_biased_dataset(&u, &rule, &policy, sc.test_lists, d.list_len, d.bg_dim, rng::derive(seed, "on"))?;
    let (_, off) = generate_dataset(&u, &rule, sc.test_lists, d.list_len, 0.0, d.bg_dim, rng::derive(seed, "off"))?;
    let mut ev = EvaluatorModel::new(sc.evaluator.clone(), u.feature_dim(), d.bg_dim, rng::derive(seed, "evaluator"))?;
    ev.train(&u, &train, &val, &mut rng::rng_for(seed, "evaluator.shuffle"))?;
    let (mae_on, mae_off) = generalization_gap(&ev, &on, &off, &u, &rule)?;
    let mut e_on = list_errors(&ev, &on, &u, &rule)?;
    let mut e_off = list_errors(&ev, &off, &u, &rule)?;
    e_on.sort_by(|a, b| b.total_cmp(a));
    e_off.sort_by(|a, b| b.total_cmp(a));
    Ok((ShiftRow { seed: s, mae_on, mae_off }, e_on, e_off))
}

pub fn cmd_shift_study(config: &ExperimentConfig, out: &Path) -> Result<(StageOutput, Vec<ShiftRow>)> {
    config.validate()?;
    prepare_out(out, config)?;
    let started = Instant::now();
    let mut o = StageOutput::default();
    let mut rows = Vec::new();
    let mut csv = String::from("seed,mae_on,mae_off,off_exceeds_on\n");
    for s in 0..config.shift.seeds {
        let (row, e_on, e_off) = shift_repetition(config, s)?;
        let _ = writeln!(csv, "{s},{},{},{}", format_f64(row.mae_on), format_f64(row.mae_off), row.mae_off > row.mae_on);
        if s == 0 {
            let mut ecsv = String::from("rank,error_on,error_off\n");
            for (k, (a, b)) in e_on.iter().zip(&e_off).enumerate() {
                let _ = writeln!(ecsv, "{k},{},{}", format_f64(*a), format_f64(*b));
            }
            let plot = Plot {
                title: "evaluator error, sorted".into(),
                x_label: "list".into(),
                y_label: "absolute list-score error".into(),
                log_x: false,
                series: vec![
                    Series {
                        name: "on distribution (biased)".into(),
                        points: e_on.iter().enumerate().map(|(k, &e)| (k as f64, e)).collect(),
                    },
                    Series {
                        name: "off distribution (uniform)".into(),
                        points: e_off.iter().enumerate().map(|(k, &e)| (k as f64, e)).collect(),
                    },
                ],
                levels: Vec::new(),
            };
            write(out, "shift/sorted_errors.csv", &ecsv, &mut o.files)?;
            write(out, "shift/sorted_errors.svg", &plot.to_svg(&ecsv), &mut o.files)?;
        }
        rows.push(row);
    }
    let exceed = rows.iter().filter(|r| r.mae_off > r.mae_on).count();
    o.notes.push(format!("mae_off > mae_on in {exceed} of {} seeds", rows.len()));
    write(out, "shift/shift_study.csv", &csv, &mut o.files)?;
    let mut q = String::from("k,best_of_n_quantile\n");
    for &k in &config.evaluation.k_grid {
        let _ = writeln!(q, "{k},{}", format_f64(best_of_n_quantile(k as u64)?));
    }
    write(out, "shift/quantiles.csv", &q, &mut o.files)?;
    finish(out, config, "shift-study", "shift", started, &o)?;
    Ok((o, rows))
}

/// Check every file listed in the manifest of `out`.
pub fn cmd_verify(out: &Path) -> Result<usize> {
    let path = RunManifest::path(out);
    if !path.exists() {
        return Err(Error::Prerequisite(format!("{} not found; nothing to verify", path.display())));
    }
    let m = RunManifest::load(&path)?;
    let bad = m.verify(out);
    if !bad.is_empty() {
        return Err(Error::Integrity(format!("checksum mismatch for: {}", bad.join(", "))));
    }
    Ok(m.checksums.len())
}

/// Names of the metrics a config may list.
pub fn known_metrics() -> &'static [&'static str] {
    &METRIC_NAMES
}
