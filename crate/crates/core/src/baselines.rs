//! Reference rankers: context-free supervised scorers, evaluator-driven
//! heuristics and trivial orders.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{format_f64, Checkpoint};
use crate::error::{Error, Result};
use crate::evaluator::{batches_by_len, EvaluatorModel};
use crate::generator::GeneratorModel;
use crate::nn::{bce_with_logit, log_softmax, softmax, Activation, Mlp};
use crate::optim::{Adam, AdamConfig};
use crate::params::ParameterSet;
use crate::rng::{self, Rng};
use crate::sim::{validate_items, Dataset, GroundTruthRule, ItemUniverse, Slate};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    CrossEntropy,
    Hinge,
    PairwiseLogistic,
    PairwiseHinge,
    Listnet,
}

impl LossKind {
    pub const ALL: [LossKind; 6] = [
        LossKind::Mse,
        LossKind::CrossEntropy,
        LossKind::Hinge,
        LossKind::PairwiseLogistic,
        LossKind::PairwiseHinge,
        LossKind::Listnet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::CrossEntropy => "cross_entropy",
            LossKind::Hinge => "hinge",
            LossKind::PairwiseLogistic => "pairwise_logistic",
            LossKind::PairwiseHinge => "pairwise_hinge",
            LossKind::Listnet => "listnet",
        }
    }

    pub fn is_pairwise(self) -> bool {
        matches!(self, LossKind::PairwiseLogistic | LossKind::PairwiseHinge)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown loss kind `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoringConfig {
    pub hidden: usize,
    /// Lists per minibatch.
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            hidden: 64,
            batch_size: 64,
            epochs: 5,
            adam: AdamConfig::default(),
        }
    }
}

/// Per-item scorer over `[x, bg]`; the score of an item never depends on
/// the rest of the list.
#[derive(Debug, Clone)]
pub struct ScoringModel {
    kind: LossKind,
    config: ScoringConfig,
    feature_dim: usize,
    bg_dim: usize,
    net: Mlp,
    pub params: ParameterSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoringReport {
    pub epoch_losses: Vec<f64>,
    pub updates: usize,
    pub skipped_batches: usize,
}

impl ScoringModel {
    pub fn new(kind: LossKind, config: ScoringConfig, feature_dim: usize, bg_dim: usize, seed: u64) -> Result<Self> {
        if config.hidden == 0 || config.batch_size == 0 {
            return Err(Error::config("scoring.hidden and scoring.batch_size must be positive"));
        }
        let h = config.hidden;
        let net = Mlp::with_output(&format!("score.{}", kind.name()), &[feature_dim + bg_dim, h, h, 1], Activation::Relu, Activation::None);
        let mut params = ParameterSet::new(rng::derive(seed, &format!("scoring.{}", kind.name())));
        net.init(&mut params)?;
        Ok(ScoringModel {
            kind,
            config,
            feature_dim,
            bg_dim,
            net,
            params,
        })
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    fn inputs(&self, universe: &ItemUniverse, items: &[usize], bg: &[f64]) -> Result<Tensor> {
        if universe.feature_dim() != self.feature_dim || bg.len() != self.bg_dim {
            return Err(Error::config(format!(
                "scoring model expects {}+{} inputs, got {}+{}",
                self.feature_dim,
                self.bg_dim,
                universe.feature_dim(),
                bg.len()
            )));
        }
        let mut data = Vec::with_capacity(items.len() * (self.feature_dim + self.bg_dim));
        for &i in items {
            data.extend_from_slice(universe.feature(i));
            data.extend_from_slice(bg);
        }
        Tensor::from_vec(&[items.len(), self.feature_dim + self.bg_dim], data)
    }

    pub fn score(&self, universe: &ItemUniverse, items: &[usize], bg: &[f64]) -> Result<Vec<f64>> {
        validate_items(items, universe)?;
        if items.is_empty() {
            return Ok(Vec::new());
        }
        Ok(self.net.infer(&self.params, &self.inputs(universe, items, bg)?)?.into_data())
    }

    /// Candidates sorted by descending score, earlier candidates first on ties.
    pub fn rank(&self, universe: &ItemUniverse, candidates: &[usize], bg: &[f64]) -> Result<Vec<usize>> {
        let s = self.score(universe, candidates, bg)?;
        let mut idx: Vec<usize> = (0..candidates.len()).collect();
        idx.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
        Ok(idx.into_iter().map(|i| candidates[i]).collect())
    }

    /// Loss of a batch of labeled lists and, with `grad`, its gradient.
    /// `None` when the batch carries no training signal for this loss
    /// (pairwise kinds without a discordant pair).
    pub fn batch_loss(&self, params: &mut ParameterSet, universe: &ItemUniverse, slates: &[&Slate], grad: bool) -> Result<Option<f64>> {
        let mut items = Vec::new();
        let mut starts = Vec::with_capacity(slates.len());
        for s in slates {
            starts.push(items.len());
            items.extend_from_slice(&s.item_ids);
        }
        if items.is_empty() {
            return Ok(None);
        }
        let bg = &slates[0].bg;
        if slates.iter().any(|s| &s.bg != bg) {
            return Err(Error::config("scoring batch lists must share one background"));
        }
        let (z, cache) = self.net.forward(params, &self.inputs(universe, &items, bg)?)?;
        let z = z.data();
        let mut dz = vec![0.0; items.len()];
        let mut loss = 0.0;
        let labels = |s: &Slate| -> Result<Vec<f64>> {
            s.purchases
                .as_ref()
                .map(|p| p.iter().map(|&v| f64::from(v)).collect())
                .ok_or_else(|| Error::InvalidSlate("scoring model training list lacks purchase labels".into()))
        };
        match self.kind {
            LossKind::Mse | LossKind::CrossEntropy | LossKind::Hinge => {
                let n = items.len() as f64;
                for (s, &start) in slates.iter().zip(&starts) {
                    for (k, y) in labels(s)?.into_iter().enumerate() {
                        let i = start + k;
                        let (l, g) = match self.kind {
                            LossKind::Mse => ((z[i] - y).powi(2), 2.0 * (z[i] - y)),
                            LossKind::CrossEntropy => bce_with_logit(z[i], y),
                            _ => {
                                let sign = 2.0 * y - 1.0;
                                let margin = 1.0 - sign * z[i];
                                if margin > 0.0 {
                                    (margin, -sign)
                                } else {
                                    (0.0, 0.0)
                                }
                            }
                        };
                        loss += l / n;
                        dz[i] = g / n;
                    }
                }
            }
            LossKind::PairwiseLogistic | LossKind::PairwiseHinge => {
                let mut pairs = Vec::new();
                for (s, &start) in slates.iter().zip(&starts) {
                    let y = labels(s)?;
                    for a in 0..y.len() {
                        for b in 0..y.len() {
                            if y[a] > y[b] {
                                pairs.push((start + a, start + b));
                            }
                        }
                    }
                }
                if pairs.is_empty() {
                    return Ok(None);
                }
                let n = pairs.len() as f64;
                for (p, q) in pairs {
                    let d = z[p] - z[q];
                    let (l, g) = if self.kind == LossKind::PairwiseLogistic {
                        // log(1 + exp(-d)), stably.
                        let l = if d > 0.0 { (-d).exp().ln_1p() } else { -d + d.exp().ln_1p() };
                        (l, -1.0 / (1.0 + d.exp()))
                    } else if d < 1.0 {
                        (1.0 - d, -1.0)
                    } else {
                        (0.0, 0.0)
                    };
                    loss += l / n;
                    dz[p] += g / n;
                    dz[q] -= g / n;
                }
            }
            LossKind::Listnet => {
                let n = slates.len() as f64;
                for (s, &start) in slates.iter().zip(&starts) {
                    let y = labels(s)?;
                    let zs = &z[start..start + y.len()];
                    let target = softmax(&y);
                    let logp = log_softmax(zs);
                    let p = softmax(zs);
                    for k in 0..y.len() {
                        loss -= target[k] * logp[k] / n;
                        dz[start + k] = (p[k] - target[k]) / n;
                    }
                }
            }
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("{} loss is {loss}", self.kind)));
        }
        if grad {
            self.net.backward(params, &cache, &Tensor::from_vec(&[items.len(), 1], dz)?)?;
        }
        Ok(Some(loss))
    }

    /// Minibatch training for a fixed number of epochs.
    pub fn train(&mut self, universe: &ItemUniverse, train: &Dataset, rng: &mut Rng) -> Result<ScoringReport> {
        if train.is_empty() {
            return Err(Error::InsufficientData("scoring model training set is empty".into()));
        }
        train.validate(universe)?;
        let mut opt = Adam::new(self.config.adam);
        let mut params = self.params.clone();
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut report = ScoringReport {
            epoch_losses: Vec::new(),
            updates: 0,
            skipped_batches: 0,
        };
        for epoch in 0..self.config.epochs {
            order.shuffle(rng);
            let (mut total, mut batches) = (0.0, 0usize);
            for group in batches_by_len(&train.slates, order.clone(), self.config.batch_size) {
                let refs: Vec<&Slate> = group.iter().map(|&i| &train.slates[i]).collect();
                params.zero_grad();
                let loss = self.batch_loss(&mut params, universe, &refs, true).map_err(|e| match e {
                    Error::NonFinite(m) => Error::NonFinite(format!("{} training diverged in epoch {epoch}: {m}", self.kind)),
                    other => other,
                })?;
                match loss {
                    Some(l) => {
                        opt.update(&mut params)?;
                        report.updates += 1;
                        total += l;
                        batches += 1;
                    }
                    None => report.skipped_batches += 1,
                }
            }
            report.epoch_losses.push(if batches == 0 { 0.0 } else { total / batches as f64 });
        }
        self.params.copy_values_from(&params)?;
        Ok(report)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint::from_params("scoring", &self.params)
            .with_meta("kind", self.kind)
            .with_meta("config", serde_json::to_string(&self.config).map_err(|e| Error::config(e.to_string()))?)
            .with_meta("feature_dim", self.feature_dim)
            .with_meta("bg_dim", self.bg_dim))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.architecture != "scoring" {
            return Err(Error::config(format!("expected a scoring checkpoint, got `{}`", ck.architecture)));
        }
        let config: ScoringConfig = serde_json::from_str(ck.meta("config")?).map_err(|e| Error::config(e.to_string()))?;
        let mut model = ScoringModel::new(ck.meta("kind")?.parse()?, config, ck.meta_parse("feature_dim")?, ck.meta_parse("bg_dim")?, 0)?;
        model.params = ck.load_into(&model.params)?;
        Ok(model)
    }
}

/// Train one scoring model of the given kind.
pub fn train_scoring_model(
    kind: LossKind,
    config: &ScoringConfig,
    universe: &ItemUniverse,
    train: &Dataset,
    bg_dim: usize,
    seed: u64,
) -> Result<(ScoringModel, ScoringReport)> {
    let mut model = ScoringModel::new(kind, config.clone(), universe.feature_dim(), bg_dim, seed)?;
    let report = model.train(universe, train, &mut rng::rng_for(seed, &format!("scoring.{kind}.shuffle")))?;
    Ok((model, report))
}

fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Append, at each step, the remaining candidate with the highest
/// evaluator purchase probability given the prefix so far.
pub fn greedy_e(evaluator: &EvaluatorModel, universe: &ItemUniverse, candidates: &[usize], bg: &[f64]) -> Result<Vec<usize>> {
    validate_items(candidates, universe)?;
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let mut state = evaluator.begin(universe, candidates, bg)?;
    let mut out = Vec::with_capacity(candidates.len());
    for _ in 0..candidates.len() {
        let slots: Vec<usize> = (0..candidates.len()).filter(|&s| !state.is_picked(s)).collect();
        let p = evaluator.next_probs(&state, &slots)?;
        let slot = slots[argmax_first(&p)];
        evaluator.advance(&mut state, slot)?;
        out.push(candidates[slot]);
    }
    Ok(out)
}

/// Sort by each candidate's evaluator probability at the first position.
pub fn direct_e(evaluator: &EvaluatorModel, universe: &ItemUniverse, candidates: &[usize], bg: &[f64]) -> Result<Vec<usize>> {
    validate_items(candidates, universe)?;
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let state = evaluator.begin(universe, candidates, bg)?;
    let p = evaluator.next_probs(&state, &(0..candidates.len()).collect::<Vec<_>>())?;
    let mut idx: Vec<usize> = (0..candidates.len()).collect();
    idx.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    Ok(idx.into_iter().map(|i| candidates[i]).collect())
}

/// `k` uniform permutations drawn in sequence from `rng`.
pub fn sample_permutations(candidates: &[usize], k: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    (0..k)
        .map(|_| {
            let mut p = candidates.to_vec();
            p.shuffle(rng);
            p
        })
        .collect()
}

/// Best of `k` uniformly sampled permutations under the evaluator's list
/// score; the earliest sample wins ties.
pub fn enumerate_k(evaluator: &EvaluatorModel, universe: &ItemUniverse, candidates: &[usize], bg: &[f64], k: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::config("ENUMERATE-k needs k >= 1"));
    }
    validate_items(candidates, universe)?;
    let perms = sample_permutations(candidates, k, rng);
    let scores = list_scores(evaluator, universe, &perms, bg)?;
    Ok(perms[argmax_first(&scores)].clone())
}

fn list_scores(evaluator: &EvaluatorModel, universe: &ItemUniverse, lists: &[Vec<usize>], bg: &[f64]) -> Result<Vec<f64>> {
    let refs: Vec<&[usize]> = lists.iter().map(Vec::as_slice).collect();
    Ok(evaluator.score_lists(universe, &refs, bg)?.iter().map(|p| p.iter().sum()).collect())
}

/// Expected quantile of the best of `n` i.i.d. uniform draws, `n/(n+1)`.
pub fn best_of_n_quantile(n: u64) -> Result<f64> {
    if n == 0 {
        return Err(Error::config("best-of-n needs n >= 1"));
    }
    Ok(n as f64 / (n as f64 + 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub k: usize,
    pub mean_true_score: f64,
    /// Standard error of the mean true score over candidate sets.
    pub stderr: f64,
    pub mean_evaluator_score: f64,
}

/// ENUMERATE-k over a grid of `k`. Every candidate set draws one stream of
/// `max(k)` permutations and each `k` uses its first `k` samples, so the
/// per-set evaluator score of the pick is non-decreasing in `k`.
pub fn enumerate_curve(
    evaluator: &EvaluatorModel,
    universe: &ItemUniverse,
    rule: &GroundTruthRule,
    sets: &[Vec<usize>],
    bg: &[f64],
    k_grid: &[usize],
    seed: u64,
) -> Result<(Vec<CurvePoint>, Vec<Vec<f64>>)> {
    if k_grid.is_empty() || k_grid.contains(&0) {
        return Err(Error::config("ENUMERATE-k grid must be non-empty with k >= 1"));
    }
    if sets.is_empty() {
        return Err(Error::InsufficientData("ENUMERATE-k curve needs candidate sets".into()));
    }
    let kmax = *k_grid.iter().max().unwrap_or(&1);
    let mut true_at = vec![Vec::with_capacity(sets.len()); k_grid.len()];
    // Per set, the evaluator score of the pick at each grid point.
    let mut eval_at = Vec::with_capacity(sets.len());
    for (i, set) in sets.iter().enumerate() {
        let mut rng = rng::rng_from(rng::derive_index(seed, i as u64));
        let perms = sample_permutations(set, kmax, &mut rng);
        let scores = list_scores(evaluator, universe, &perms, bg)?;
        let mut best = vec![0usize; kmax];
        for j in 1..kmax {
            best[j] = if scores[j] > scores[best[j - 1]] { j } else { best[j - 1] };
        }
        let mut row = Vec::with_capacity(k_grid.len());
        for (g, &k) in k_grid.iter().enumerate() {
            let pick = best[k - 1];
            true_at[g].push(rule.true_score(universe, &perms[pick])?);
            row.push(scores[pick]);
        }
        eval_at.push(row);
    }
    let n = sets.len() as f64;
    let curve = k_grid
        .iter()
        .enumerate()
        .map(|(g, &k)| {
            let v = &true_at[g];
            let mean = v.iter().sum::<f64>() / n;
            let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
            CurvePoint {
                k,
                mean_true_score: mean,
                stderr: (var / n).sqrt(),
                mean_evaluator_score: eval_at.iter().map(|r| r[g]).sum::<f64>() / n,
            }
        })
        .collect();
    Ok((curve, eval_at))
}

pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut s = String::from("k,mean_true_score,stderr,mean_evaluator_score\n");
    for p in curve {
        let _ = writeln!(s, "{},{},{},{}", p.k, format_f64(p.mean_true_score), format_f64(p.stderr), format_f64(p.mean_evaluator_score));
    }
    s
}

/// A ranker named in an experiment config.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RankerSpec {
    Scoring(LossKind),
    GreedyE,
    DirectE,
    EnumerateK(usize),
    EgRerank,
    EgRerankPlus,
    Identity,
    Reverse,
    Random,
}

impl fmt::Display for RankerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RankerSpec::Scoring(k) => write!(f, "{k}"),
            RankerSpec::GreedyE => f.write_str("greedy_e"),
            RankerSpec::DirectE => f.write_str("direct_e"),
            RankerSpec::EnumerateK(k) => write!(f, "enumerate_{k}"),
            RankerSpec::EgRerank => f.write_str("eg_rerank"),
            RankerSpec::EgRerankPlus => f.write_str("eg_rerank_plus"),
            RankerSpec::Identity => f.write_str("identity"),
            RankerSpec::Reverse => f.write_str("reverse"),
            RankerSpec::Random => f.write_str("random"),
        }
    }
}

impl FromStr for RankerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "greedy_e" => RankerSpec::GreedyE,
            "direct_e" => RankerSpec::DirectE,
            "eg_rerank" => RankerSpec::EgRerank,
            "eg_rerank_plus" => RankerSpec::EgRerankPlus,
            "identity" => RankerSpec::Identity,
            "reverse" => RankerSpec::Reverse,
            "random" => RankerSpec::Random,
            _ => {
                if let Some(k) = s.strip_prefix("enumerate_") {
                    let k: usize = k.parse().map_err(|_| Error::config(format!("bad ENUMERATE-k ranker `{s}`")))?;
                    if k == 0 {
                        return Err(Error::config("ENUMERATE-k needs k >= 1"));
                    }
                    RankerSpec::EnumerateK(k)
                } else {
                    RankerSpec::Scoring(s.parse().map_err(|_| Error::config(format!("unknown ranker `{s}`")))?)
                }
            }
        })
    }
}

impl Serialize for RankerSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RankerSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A ranker bound to its trained models.
#[derive(Debug, Clone, Copy)]
pub enum Ranker<'a> {
    Scoring(&'a ScoringModel),
    GreedyE(&'a EvaluatorModel),
    DirectE(&'a EvaluatorModel),
    EnumerateK { evaluator: &'a EvaluatorModel, k: usize, seed: u64 },
    Generator(&'a GeneratorModel),
    Identity,
    Reverse,
    Random { seed: u64 },
}

impl Ranker<'_> {
    /// Order one candidate set. `index` selects the per-list random stream
    /// of the stochastic rankers.
    pub fn rank(&self, universe: &ItemUniverse, candidates: &[usize], bg: &[f64], index: u64) -> Result<Vec<usize>> {
        validate_items(candidates, universe)?;
        match *self {
            Ranker::Scoring(m) => m.rank(universe, candidates, bg),
            Ranker::GreedyE(e) => greedy_e(e, universe, candidates, bg),
            Ranker::DirectE(e) => direct_e(e, universe, candidates, bg),
            Ranker::EnumerateK { evaluator, k, seed } => enumerate_k(evaluator, universe, candidates, bg, k, &mut rng::rng_from(rng::derive_index(seed, index))),
            Ranker::Generator(g) => g.rank(universe, candidates, bg),
            Ranker::Identity => Ok(candidates.to_vec()),
            Ranker::Reverse => Ok(candidates.iter().rev().copied().collect()),
            Ranker::Random { seed } => {
                let mut v = candidates.to_vec();
                v.shuffle(&mut rng::rng_from(rng::derive_index(seed, index)));
                Ok(v)
            }
        }
    }

    /// Re-order every list of a dataset, keeping its background.
    pub fn rank_dataset(&self, universe: &ItemUniverse, data: &Dataset) -> Result<Vec<Slate>> {
        if let Ranker::Generator(g) = self {
            // Greedy decoding batches well across lists.
            let sets: Vec<Vec<usize>> = data.slates.iter().map(|s| s.item_ids.clone()).collect();
            let mut out = Vec::with_capacity(sets.len());
            for (chunk, slates) in sets.chunks(256).zip(data.slates.chunks(256)) {
                let bg = &slates[0].bg;
                if slates.iter().all(|s| &s.bg == bg) {
                    for (items, s) in g.rank_many(universe, chunk, bg)?.into_iter().zip(slates) {
                        out.push(s.reordered(items));
                    }
                } else {
                    for s in slates {
                        out.push(s.reordered(g.rank(universe, &s.item_ids, &s.bg)?));
                    }
                }
            }
            return Ok(out);
        }
        data.slates
            .iter()
            .enumerate()
            .map(|(i, s)| Ok(s.reordered(self.rank(universe, &s.item_ids, &s.bg, i as u64)?)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::EvaluatorConfig;
    use crate::rng::rng_from;

    fn tiny_eval(u: &ItemUniverse) -> EvaluatorModel {
        let cfg = EvaluatorConfig {
            hidden: 4,
            head_widths: vec![4, 3],
            ..EvaluatorConfig::default()
        };
        EvaluatorModel::new(cfg, u.feature_dim(), 1, 3).unwrap()
    }

    #[test]
    fn names_round_trip() {
        for name in ["mse", "listnet", "greedy_e", "direct_e", "enumerate_50", "eg_rerank", "eg_rerank_plus", "identity", "reverse", "random"] {
            let spec: RankerSpec = name.parse().unwrap();
            assert_eq!(spec.to_string(), name);
        }
        assert!("enumerate_0".parse::<RankerSpec>().is_err());
        assert!("bogus".parse::<RankerSpec>().is_err());
    }

    #[test]
    fn quantile_values() {
        assert_eq!(best_of_n_quantile(1).unwrap(), 0.5);
        assert_eq!(best_of_n_quantile(3).unwrap(), 0.75);
        assert_eq!(best_of_n_quantile(500).unwrap(), 500.0 / 501.0);
        assert!(best_of_n_quantile(0).is_err());
    }

    #[test]
    fn zero_evaluator_keeps_identity_order() {
        let u = ItemUniverse::build(20, 3, 1).unwrap();
        let mut e = tiny_eval(&u);
        e.params.fill_values(0.0);
        let c = [7, 2, 9, 4];
        assert_eq!(greedy_e(&e, &u, &c, &[1.0]).unwrap(), c.to_vec());
        assert_eq!(direct_e(&e, &u, &c, &[1.0]).unwrap(), c.to_vec());
        let first = sample_permutations(&c, 1, &mut rng_from(8)).remove(0);
        assert_eq!(enumerate_k(&e, &u, &c, &[1.0], 20, &mut rng_from(8)).unwrap(), first);
    }

    #[test]
    fn single_item_rankers() {
        let u = ItemUniverse::build(20, 3, 1).unwrap();
        let e = tiny_eval(&u);
        assert_eq!(greedy_e(&e, &u, &[5], &[1.0]).unwrap(), vec![5]);
        assert_eq!(direct_e(&e, &u, &[5], &[1.0]).unwrap(), vec![5]);
    }

    #[test]
    fn pairwise_batches_without_discordant_pairs_are_skipped() {
        let u = ItemUniverse::build(20, 3, 1).unwrap();
        let m = ScoringModel::new(LossKind::PairwiseHinge, ScoringConfig::default(), 3, 1, 1).unwrap();
        let mut s = Slate::new(vec![1, 2, 3], vec![1.0]);
        s.purchases = Some(vec![1, 1, 1]);
        s.clicks = Some(vec![1, 1, 1]);
        let mut p = m.params.clone();
        assert_eq!(m.batch_loss(&mut p, &u, &[&s], true).unwrap(), None);
    }

    #[test]
    fn listnet_loss_of_uniform_scores() {
        let u = ItemUniverse::build(20, 3, 1).unwrap();
        let mut m = ScoringModel::new(LossKind::Listnet, ScoringConfig::default(), 3, 1, 1).unwrap();
        m.params.fill_values(0.0);
        let mut s = Slate::new(vec![1, 2, 3, 4], vec![1.0]);
        s.purchases = Some(vec![1, 0, 0, 1]);
        let mut p = m.params.clone();
        let l = m.batch_loss(&mut p, &u, &[&s], false).unwrap().unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn scoring_rank_ignores_presentation_order() {
        let u = ItemUniverse::build(20, 3, 1).unwrap();
        let m = ScoringModel::new(LossKind::Mse, ScoringConfig::default(), 3, 1, 4).unwrap();
        let a = m.rank(&u, &[3, 8, 1, 15, 6], &[1.0]).unwrap();
        let b = m.rank(&u, &[6, 15, 1, 8, 3], &[1.0]).unwrap();
        assert_eq!(a, b);
    }
}
