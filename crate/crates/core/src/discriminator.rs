//! Sequential realness model and the adversarial generator variant.
//!
//! ```text
//! s_i = DNN2([x_i, bg])     h_i = LSTM(h_{i-1}, s_i)     h_0 = 0
//! score_i = sigmoid(DNN3([s_i, h_i]))                    D = sum score_i
//! ```
//!
//! Logged lists are labeled real (1) and generated lists fake (0). The
//! generator is rewarded with `R + beta * score_i` for its own outputs.

use std::fmt::Write as _;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{format_f64, Checkpoint};
use crate::error::{Error, Result};
use crate::evaluator::EvaluatorModel;
use crate::generator::{train_with_shaping, GeneratorModel, Shaping, TrainTrace, Trajectory};
use crate::nn::{bce_with_logit, sigmoid, Activation, LstmCache, LstmCell, Mlp, MlpCache};
use crate::optim::{Adam, AdamConfig};
use crate::params::ParameterSet;
use crate::rng;
use crate::sim::{validate_items, Dataset, GroundTruthRule, ItemUniverse, Slate};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorConfig {
    pub hidden: usize,
    pub head_widths: Vec<usize>,
    /// Weight of the realness score in the shaped reward.
    pub beta: f64,
    pub adam: AdamConfig,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            hidden: 64,
            head_widths: vec![64, 32],
            beta: 0.2,
            adam: AdamConfig::default(),
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.head_widths.is_empty() || self.head_widths.contains(&0) {
            return Err(Error::config("discriminator.hidden and discriminator.head_widths must be positive"));
        }
        if !self.beta.is_finite() || self.beta < 0.0 {
            return Err(Error::config(format!("discriminator.beta must be a non-negative number, got {}", self.beta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealnessScore {
    pub per_item: Vec<f64>,
    pub total: f64,
}

struct Pass {
    enc: MlpCache,
    steps: Vec<LstmCache>,
    head: MlpCache,
    z: Tensor,
}

#[derive(Debug, Clone)]
pub struct DiscriminatorModel {
    config: DiscriminatorConfig,
    feature_dim: usize,
    bg_dim: usize,
    enc: Mlp,
    lstm: LstmCell,
    head: Mlp,
    pub params: ParameterSet,
}

impl DiscriminatorModel {
    pub fn new(config: DiscriminatorConfig, feature_dim: usize, bg_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let h = config.hidden;
        let enc = Mlp::new("disc.enc", &[feature_dim + bg_dim, h, h], Activation::Relu);
        let lstm = LstmCell::new("disc.lstm", h, h);
        let mut widths = vec![2 * h];
        widths.extend_from_slice(&config.head_widths);
        widths.push(1);
        let head = Mlp::with_output("disc.score", &widths, Activation::Relu, Activation::None);
        let mut params = ParameterSet::new(rng::derive(seed, "discriminator"));
        enc.init(&mut params)?;
        lstm.init(&mut params)?;
        head.init(&mut params)?;
        Ok(DiscriminatorModel {
            config,
            feature_dim,
            bg_dim,
            enc,
            lstm,
            head,
            params,
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn beta(&self) -> f64 {
        self.config.beta
    }

    /// Rows `t * B + b` hold `[x, bg]` of item `t` of list `b`.
    fn inputs(&self, universe: &ItemUniverse, lists: &[(&[usize], &[f64])]) -> Result<Tensor> {
        if universe.feature_dim() != self.feature_dim {
            return Err(Error::config(format!(
                "discriminator expects {} item features, universe has {}",
                self.feature_dim,
                universe.feature_dim()
            )));
        }
        let len = lists[0].0.len();
        if lists.iter().any(|(l, _)| l.len() != len) {
            return Err(Error::config("discriminator batch lists must share one length"));
        }
        let width = self.feature_dim + self.bg_dim;
        let mut data = Vec::with_capacity(len * lists.len() * width);
        for t in 0..len {
            for (items, bg) in lists {
                if bg.len() != self.bg_dim {
                    return Err(Error::config(format!("discriminator expects bg width {}, got {}", self.bg_dim, bg.len())));
                }
                data.extend_from_slice(universe.feature(items[t]));
                data.extend_from_slice(bg);
            }
        }
        Tensor::from_vec(&[len * lists.len(), width], data)
    }

    fn forward(&self, params: &ParameterSet, universe: &ItemUniverse, lists: &[(&[usize], &[f64])]) -> Result<Pass> {
        let batch = lists.len();
        let len = lists[0].0.len();
        let h = self.config.hidden;
        let (s, enc) = self.enc.forward(params, &self.inputs(universe, lists)?)?;
        let mut hp = Tensor::zeros(&[batch, h]);
        let mut cp = Tensor::zeros(&[batch, h]);
        let mut hs = Tensor::zeros(&[len * batch, h]);
        let mut steps = Vec::with_capacity(len);
        for t in 0..len {
            let (hn, cn, cache) = self.lstm.forward(params, &hp, &cp, &s.row_block(t * batch, (t + 1) * batch))?;
            hs.set_row_block(t * batch, &hn);
            steps.push(cache);
            hp = hn;
            cp = cn;
        }
        let (z, head) = self.head.forward(params, &Tensor::concat_cols(&s, &hs)?)?;
        Ok(Pass { enc, steps, head, z })
    }

    /// Per-item realness of equal-length lists sharing one background.
    pub fn score_lists(&self, universe: &ItemUniverse, lists: &[&[usize]], bg: &[f64]) -> Result<Vec<Vec<f64>>> {
        let mut out = vec![Vec::new(); lists.len()];
        let mut by_len: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for (i, l) in lists.iter().enumerate() {
            validate_items(l, universe)?;
            by_len.entry(l.len()).or_default().push(i);
        }
        for (len, idx) in by_len {
            if len == 0 {
                continue;
            }
            for chunk in idx.chunks(512) {
                let batch: Vec<(&[usize], &[f64])> = chunk.iter().map(|&i| (lists[i], bg)).collect();
                let pass = self.forward(&self.params, universe, &batch)?;
                for (b, &i) in chunk.iter().enumerate() {
                    out[i] = (0..len).map(|t| sigmoid(pass.z.data()[t * chunk.len() + b])).collect();
                }
            }
        }
        Ok(out)
    }

    pub fn score_items(&self, universe: &ItemUniverse, items: &[usize], bg: &[f64]) -> Result<RealnessScore> {
        let per_item = self.score_lists(universe, &[items], bg)?.remove(0);
        let total = per_item.iter().sum();
        Ok(RealnessScore { per_item, total })
    }

    pub fn score_list(&self, universe: &ItemUniverse, slate: &Slate) -> Result<RealnessScore> {
        self.score_items(universe, &slate.item_ids, &slate.bg)
    }

    /// Mean per-item cross-entropy with target 1 for `real` items and 0 for
    /// `generated` ones. With `grad` its gradient is accumulated into
    /// `params`.
    pub fn batch_loss(
        &self,
        params: &mut ParameterSet,
        universe: &ItemUniverse,
        real: &[(&[usize], &[f64])],
        generated: &[(&[usize], &[f64])],
        grad: bool,
    ) -> Result<f64> {
        if real.is_empty() || generated.is_empty() {
            return Err(Error::InsufficientData("discriminator step needs real and generated lists".into()));
        }
        let lists: Vec<(&[usize], &[f64])> = real.iter().chain(generated).copied().collect();
        let batch = lists.len();
        let len = lists[0].0.len();
        if len == 0 {
            return Ok(0.0);
        }
        let pass = self.forward(params, universe, &lists)?;
        let n = (batch * len) as f64;
        let mut loss = 0.0;
        let mut dz = Tensor::zeros(&[batch * len, 1]);
        for t in 0..len {
            for b in 0..batch {
                let row = t * batch + b;
                let y = if b < real.len() { 1.0 } else { 0.0 };
                let (l, g) = bce_with_logit(pass.z.data()[row], y);
                loss += l;
                dz.data_mut()[row] = g / n;
            }
        }
        loss /= n;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("discriminator loss is {loss}")));
        }
        if grad {
            self.backward(params, &pass, &dz, batch, len)?;
        }
        Ok(loss)
    }

    fn backward(&self, params: &mut ParameterSet, pass: &Pass, dz: &Tensor, batch: usize, len: usize) -> Result<()> {
        let h = self.config.hidden;
        let djoint = self.head.backward(params, &pass.head, dz)?;
        let (mut ds, dhs) = djoint.split_cols(h);
        let mut dh_next = Tensor::zeros(&[batch, h]);
        let mut dc_next = Tensor::zeros(&[batch, h]);
        for t in (0..len).rev() {
            let mut dh = dhs.row_block(t * batch, (t + 1) * batch);
            dh.add_assign(&dh_next)?;
            let (dx, dh_prev, dc_prev) = self.lstm.backward(params, &pass.steps[t], &dh, &dc_next)?;
            let mut block = ds.row_block(t * batch, (t + 1) * batch);
            block.add_assign(&dx)?;
            ds.set_row_block(t * batch, &block);
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
        self.enc.backward(params, &pass.enc, &ds)?;
        Ok(())
    }

    /// One optimizer step on a real and a generated batch; returns the loss
    /// before the step.
    pub fn train_step(
        &mut self,
        universe: &ItemUniverse,
        real: &[(&[usize], &[f64])],
        generated: &[(&[usize], &[f64])],
        opt: &mut Adam,
    ) -> Result<f64> {
        let mut params = self.params.clone();
        params.zero_grad();
        let loss = self.batch_loss(&mut params, universe, real, generated, true)?;
        opt.update(&mut params)?;
        self.params = params;
        Ok(loss)
    }

    /// Fraction of lists classified correctly, a list counting as real when
    /// its mean per-item realness exceeds 0.5.
    pub fn accuracy(&self, universe: &ItemUniverse, real: &[(&[usize], &[f64])], generated: &[(&[usize], &[f64])]) -> Result<f64> {
        let mut correct = 0usize;
        for (set, is_real) in [(real, true), (generated, false)] {
            for (items, bg) in set {
                let s = self.score_items(universe, items, bg)?;
                let says_real = s.total > 0.5 * items.len() as f64;
                if says_real == is_real {
                    correct += 1;
                }
            }
        }
        let n = real.len() + generated.len();
        if n == 0 {
            return Err(Error::InsufficientData("accuracy needs at least one list".into()));
        }
        Ok(correct as f64 / n as f64)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint::from_params("discriminator", &self.params)
            .with_meta("config", serde_json::to_string(&self.config).map_err(|e| Error::config(e.to_string()))?)
            .with_meta("feature_dim", self.feature_dim)
            .with_meta("bg_dim", self.bg_dim))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.architecture != "discriminator" {
            return Err(Error::config(format!("expected a discriminator checkpoint, got `{}`", ck.architecture)));
        }
        let config: DiscriminatorConfig = serde_json::from_str(ck.meta("config")?).map_err(|e| Error::config(e.to_string()))?;
        let mut model = DiscriminatorModel::new(config, ck.meta_parse("feature_dim")?, ck.meta_parse("bg_dim")?, 0)?;
        model.params = ck.load_into(&model.params)?;
        Ok(model)
    }
}

/// `R + beta * realness`.
pub fn shaped_reward(reward: f64, realness: f64, beta: f64) -> f64 {
    reward + beta * realness
}

/// Mean Euclidean distance from the lists of `a` to the centroid of `b`,
/// each list embedded as its concatenated item features. The 20% of `a`
/// farthest from `a`'s own centroid are dropped first.
pub fn distribution_distance(a: &[&[usize]], b: &[&[usize]], universe: &ItemUniverse) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData("distribution distance needs two non-empty list sets".into()));
    }
    let len = a[0].len();
    if a.iter().chain(b).any(|l| l.len() != len) {
        return Err(Error::config("distribution distance needs lists of one length"));
    }
    let embed = |l: &[usize]| -> Vec<f64> { l.iter().flat_map(|&i| universe.feature(i).iter().copied()).collect() };
    let centroid = |v: &[Vec<f64>]| -> Vec<f64> {
        let mut c = vec![0.0; v[0].len()];
        for e in v {
            for (s, x) in c.iter_mut().zip(e) {
                *s += x / v.len() as f64;
            }
        }
        c
    };
    let dist = |x: &[f64], c: &[f64]| -> f64 { x.iter().zip(c).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt() };
    for l in a.iter().chain(b) {
        validate_items(l, universe)?;
    }
    let ea: Vec<Vec<f64>> = a.iter().map(|l| embed(l)).collect();
    let eb: Vec<Vec<f64>> = b.iter().map(|l| embed(l)).collect();
    let ca = centroid(&ea);
    let cb = centroid(&eb);
    let mut order: Vec<(f64, usize)> = ea.iter().enumerate().map(|(i, e)| (dist(e, &ca), i)).collect();
    order.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    let keep = ea.len() - (ea.len() as f64 * 0.2).floor() as usize;
    Ok(order[..keep].iter().map(|&(_, i)| dist(&ea[i], &cb)).sum::<f64>() / keep as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdversarialRecord {
    pub iteration: usize,
    pub discriminator_loss: f64,
    /// Accuracy on the step's batches before the update.
    pub discriminator_accuracy: f64,
    pub distribution_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlusTrace {
    pub generator: TrainTrace,
    pub adversarial: Vec<AdversarialRecord>,
    pub warnings: Vec<String>,
}

impl PlusTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,mean_shaped_return,mean_evaluator_score,discriminator_accuracy,distribution_distance\n");
        for (g, a) in self.generator.records.iter().zip(&self.adversarial) {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                g.iteration,
                format_f64(g.mean_return),
                format_f64(g.mean_evaluator_score),
                format_f64(a.discriminator_accuracy),
                format_f64(a.distribution_distance)
            );
        }
        s
    }
}

/// Iterations of perfect accuracy in a row that count as an imbalance.
const IMBALANCE_RUN: usize = 5;

struct Adversary<'a> {
    disc: &'a mut DiscriminatorModel,
    opt: Adam,
    real: &'a [Slate],
    seed: u64,
    records: Vec<AdversarialRecord>,
    perfect_run: usize,
    warnings: Vec<String>,
}

impl Shaping for Adversary<'_> {
    fn shape(&self, universe: &ItemUniverse, lists: &[&[usize]], bg: &[f64], rewards: Vec<Vec<f64>>) -> Result<Vec<Vec<f64>>> {
        let beta = self.disc.beta();
        if beta == 0.0 {
            return Ok(rewards);
        }
        let realness = self.disc.score_lists(universe, lists, bg)?;
        Ok(rewards
            .into_iter()
            .zip(realness)
            .map(|(r, d)| r.iter().zip(&d).map(|(&r, &d)| shaped_reward(r, d, beta)).collect())
            .collect())
    }

    fn after_collect(&mut self, universe: &ItemUniverse, episodes: &[Trajectory], iteration: usize) -> Result<()> {
        let mut rng = rng::rng_from(rng::derive_index(rng::derive(self.seed, "discriminator.real"), iteration as u64));
        let n = episodes.len().min(self.real.len());
        let real: Vec<(&[usize], &[f64])> = sample(&mut rng, self.real.len(), n)
            .into_iter()
            .map(|i| (self.real[i].item_ids.as_slice(), self.real[i].bg.as_slice()))
            .collect();
        let generated: Vec<(&[usize], &[f64])> = episodes.iter().map(|t| (t.actions.as_slice(), t.bg.as_slice())).collect();
        let accuracy = self.disc.accuracy(universe, &real, &generated)?;
        let real_lists: Vec<&[usize]> = real.iter().map(|r| r.0).collect();
        let gen_lists: Vec<&[usize]> = generated.iter().map(|g| g.0).collect();
        let distance = distribution_distance(&gen_lists, &real_lists, universe)?;
        let loss = self.disc.train_step(universe, &real, &generated, &mut self.opt)?;
        self.perfect_run = if accuracy >= 1.0 { self.perfect_run + 1 } else { 0 };
        if self.perfect_run == IMBALANCE_RUN {
            self.warnings.push(format!(
                "discriminator accuracy has been 1.0 for {IMBALANCE_RUN} iterations (at iteration {iteration}); the adversarial game is imbalanced"
            ));
        }
        self.records.push(AdversarialRecord {
            iteration,
            discriminator_loss: loss,
            discriminator_accuracy: accuracy,
            distribution_distance: distance,
        });
        Ok(())
    }
}

/// EG-Rerank+: the generator and the discriminator are trained together,
/// the generator on shaped rewards and the discriminator on logged lists
/// against fresh generator output, one step per generator batch.
#[allow(clippy::too_many_arguments)]
pub fn train_eg_rerank_plus(
    generator: &mut GeneratorModel,
    discriminator: &mut DiscriminatorModel,
    evaluator: &EvaluatorModel,
    universe: &ItemUniverse,
    real: &Dataset,
    bg: &[f64],
    rule: Option<&GroundTruthRule>,
    seed: u64,
) -> Result<PlusTrace> {
    if real.is_empty() {
        return Err(Error::InsufficientData("EG-Rerank+ needs logged lists as the real pool".into()));
    }
    let opt = Adam::new(discriminator.config.adam);
    let mut adversary = Adversary {
        disc: discriminator,
        opt,
        real: &real.slates,
        seed,
        records: Vec::new(),
        perfect_run: 0,
        warnings: Vec::new(),
    };
    let generator_trace = train_with_shaping(generator, evaluator, universe, real.list_len, bg, rule, &mut adversary, seed)?;
    Ok(PlusTrace {
        generator: generator_trace,
        adversarial: adversary.records,
        warnings: adversary.warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use crate::rng::rng_from;

    fn small() -> DiscriminatorConfig {
        DiscriminatorConfig {
            hidden: 4,
            head_widths: vec![5, 3],
            ..DiscriminatorConfig::default()
        }
    }

    #[test]
    fn zero_model_scores_half() {
        let u = ItemUniverse::build(10, 3, 1).unwrap();
        let mut d = DiscriminatorModel::new(small(), 3, 1, 2).unwrap();
        d.params.fill_values(0.0);
        let s = d.score_items(&u, &[1, 4, 2, 8], &[1.0]).unwrap();
        assert_eq!(s.per_item, vec![0.5; 4]);
        assert_eq!(s.total, 2.0);
    }

    #[test]
    fn total_is_the_exact_sum() {
        let u = ItemUniverse::build(10, 3, 1).unwrap();
        let d = DiscriminatorModel::new(small(), 3, 1, 2).unwrap();
        let s = d.score_items(&u, &[3, 0, 9], &[1.0]).unwrap();
        assert_eq!(s.total, s.per_item.iter().sum::<f64>());
        assert_eq!(s, d.score_items(&u, &[3, 0, 9], &[1.0]).unwrap());
        assert!(s.per_item.iter().all(|p| *p > 0.0 && *p < 1.0));
    }

    #[test]
    fn untrained_loss_is_ln2() {
        let u = ItemUniverse::build(10, 3, 1).unwrap();
        let mut d = DiscriminatorModel::new(small(), 3, 1, 2).unwrap();
        d.params.fill_values(0.0);
        let bg = [1.0];
        let real: Vec<(&[usize], &[f64])> = vec![(&[1, 2, 3], &bg)];
        let fake: Vec<(&[usize], &[f64])> = vec![(&[4, 5, 6], &bg)];
        let mut p = d.params.clone();
        let l = d.batch_loss(&mut p, &u, &real, &fake, false).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let u = ItemUniverse::build(10, 3, 1).unwrap();
        let d = DiscriminatorModel::new(small(), 3, 1, 2).unwrap();
        let bg = [0.5];
        let real: Vec<(&[usize], &[f64])> = vec![(&[1, 2, 3], &bg), (&[7, 0, 9], &bg)];
        let fake: Vec<(&[usize], &[f64])> = vec![(&[4, 5, 6], &bg)];
        let mut p = d.params.clone();
        let rep = grad_check(&mut p, 1e-4, 300, &mut rng_from(1), |p, g| d.batch_loss(p, &u, &real, &fake, g)).unwrap();
        assert!(rep.max_rel_error < 1e-4, "{rep:?}");
    }

    #[test]
    fn shaped_reward_arithmetic() {
        assert_eq!(shaped_reward(0.3, 0.8, 0.0), 0.3);
        assert!((shaped_reward(0.3, 0.8, 0.2) - 0.46).abs() < 1e-15);
    }

    #[test]
    fn distance_of_a_single_list_to_itself_is_zero() {
        let u = ItemUniverse::build(10, 3, 1).unwrap();
        let a: Vec<&[usize]> = vec![&[1, 2]];
        assert_eq!(distribution_distance(&a, &a, &u).unwrap(), 0.0);
    }

    #[test]
    fn hand_computed_distance() {
        // One-item lists in two dimensions: item 0 at (0, 0), item 1 at
        // (0.5, 0), item 2 at (0, 1). A = {0, 1}, B = {2}: no trimming at two
        // lists, distances to (0, 1) are 1 and sqrt(1.25).
        let f = Tensor::from_rows(&[&[0.0, 0.0], &[0.5, 0.0], &[0.0, 1.0]]).unwrap();
        let u = ItemUniverse::from_features(f, 0).unwrap();
        let a: Vec<&[usize]> = vec![&[0], &[1]];
        let b: Vec<&[usize]> = vec![&[2]];
        let want = (1.0 + 1.25f64.sqrt()) / 2.0;
        assert!((distribution_distance(&a, &b, &u).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn the_farthest_fifth_is_trimmed() {
        // Four lists at the origin and one at (1, 1): the outlier goes, so
        // the distance to B = {origin} is 0.
        let f = Tensor::from_rows(&[&[0.0, 0.0], &[1.0, 1.0]]).unwrap();
        let u = ItemUniverse::from_features(f, 0).unwrap();
        let a: Vec<&[usize]> = vec![&[0], &[0], &[1], &[0], &[0]];
        let b: Vec<&[usize]> = vec![&[0]];
        assert_eq!(distribution_distance(&a, &b, &u).unwrap(), 0.0);
        let four: Vec<&[usize]> = vec![&[0], &[0], &[1], &[0]];
        assert!((distribution_distance(&four, &b, &u).unwrap() - 2f64.sqrt() / 4.0).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip() {
        let u = ItemUniverse::build(10, 3, 1).unwrap();
        let d = DiscriminatorModel::new(small(), 3, 1, 2).unwrap();
        let back = DiscriminatorModel::from_checkpoint(&Checkpoint::parse(&d.to_checkpoint().unwrap().to_text(), "mem").unwrap()).unwrap();
        assert_eq!(back.score_items(&u, &[2, 5], &[1.0]).unwrap(), d.score_items(&u, &[2, 5], &[1.0]).unwrap());
    }
}
