//! Sequence-conditioned purchase model.
//!
//! ```text
//! s_i = DNN2([x_i, bg])          h_0 = mean_j s_j over the candidate set
//! h_i = LSTM(h_{i-1}, s_i)       p_i = sigmoid(DNN3([s_i, h_i]))
//! ```
//!
//! A second head predicts clicks from the same input and is co-trained with
//! weight `click_weight`. The list score is `sum p_i`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{format_f64, Checkpoint};
use crate::error::{Error, Result};
use crate::nn::{bce_with_logit, sigmoid, Activation, LstmCache, LstmCell, Mlp, MlpCache};
use crate::optim::{Adam, AdamConfig};
use crate::params::ParameterSet;
use crate::rng::{self, Rng};
use crate::sim::{Dataset, GroundTruthRule, ItemUniverse, Slate};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluatorConfig {
    /// Width of the item encoding and of the recurrent state.
    pub hidden: usize,
    pub head_widths: Vec<usize>,
    pub click_weight: f64,
    /// Replace `click_weight` by the purchase/click ratio of the training set.
    pub auto_click_weight: bool,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub adam: AdamConfig,
}

impl Default for EvaluatorConfig {
    fn default() -> Self {
        EvaluatorConfig {
            hidden: 64,
            head_widths: vec![64, 32],
            click_weight: 0.25,
            auto_click_weight: false,
            batch_size: 64,
            max_epochs: 30,
            patience: 3,
            adam: AdamConfig::default(),
        }
    }
}

impl EvaluatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.head_widths.is_empty() || self.head_widths.contains(&0) {
            return Err(Error::config("evaluator.hidden and evaluator.head_widths must be positive"));
        }
        if self.click_weight.is_nan() || self.click_weight < 0.0 {
            return Err(Error::config("evaluator.click_weight must be >= 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("evaluator.batch_size must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ListProbs {
    pub purchase: Vec<f64>,
    pub click: Vec<f64>,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Epoch 0 holds the losses before any update.
    pub trace: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub click_weight: f64,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for r in &self.trace {
            let val = r.val_loss.map(format_f64).unwrap_or_default();
            let _ = writeln!(s, "{},{},{}", r.epoch, format_f64(r.train_loss), val);
        }
        s
    }
}

/// Evaluator state after a prefix, used to score one-item extensions.
#[derive(Debug, Clone)]
pub struct PrefixState {
    candidates: Vec<usize>,
    encoded: Tensor,
    h: Tensor,
    c: Tensor,
    picked: Vec<bool>,
}

impl PrefixState {
    pub fn candidates(&self) -> &[usize] {
        &self.candidates
    }

    pub fn is_picked(&self, slot: usize) -> bool {
        self.picked[slot]
    }
}

struct Pass {
    enc: MlpCache,
    steps: Vec<LstmCache>,
    purchase: MlpCache,
    click: MlpCache,
    zp: Tensor,
    zc: Tensor,
}

#[derive(Debug, Clone)]
pub struct EvaluatorModel {
    config: EvaluatorConfig,
    feature_dim: usize,
    bg_dim: usize,
    enc: Mlp,
    lstm: LstmCell,
    purchase: Mlp,
    click: Mlp,
    pub params: ParameterSet,
}

fn head(prefix: &str, input: usize, widths: &[usize]) -> Mlp {
    let mut w = vec![input];
    w.extend_from_slice(widths);
    w.push(1);
    Mlp::with_output(prefix, &w, Activation::Relu, Activation::None)
}

impl EvaluatorModel {
    pub fn new(config: EvaluatorConfig, feature_dim: usize, bg_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let h = config.hidden;
        let enc = Mlp::new("eval.enc", &[feature_dim + bg_dim, h, h], Activation::Relu);
        let lstm = LstmCell::new("eval.lstm", h, h);
        let purchase = head("eval.purchase", 2 * h, &config.head_widths);
        let click = head("eval.click", 2 * h, &config.head_widths);
        let mut params = ParameterSet::new(rng::derive(seed, "evaluator"));
        enc.init(&mut params)?;
        lstm.init(&mut params)?;
        purchase.init(&mut params)?;
        click.init(&mut params)?;
        Ok(EvaluatorModel {
            config,
            feature_dim,
            bg_dim,
            enc,
            lstm,
            purchase,
            click,
            params,
        })
    }

    pub fn config(&self) -> &EvaluatorConfig {
        &self.config
    }

    pub fn bg_dim(&self) -> usize {
        self.bg_dim
    }

    /// Rows `t * B + b` hold `[x, bg]` of item `t` of list `b`.
    fn inputs(&self, universe: &ItemUniverse, lists: &[&[usize]], bgs: &[&[f64]]) -> Result<Tensor> {
        if universe.feature_dim() != self.feature_dim {
            return Err(Error::config(format!(
                "evaluator expects {} item features, universe has {}",
                self.feature_dim,
                universe.feature_dim()
            )));
        }
        let len = lists.first().map_or(0, |l| l.len());
        let width = self.feature_dim + self.bg_dim;
        let mut data = Vec::with_capacity(len * lists.len() * width);
        for t in 0..len {
            for (items, bg) in lists.iter().zip(bgs) {
                if bg.len() != self.bg_dim {
                    return Err(Error::config(format!("evaluator expects bg width {}, got {}", self.bg_dim, bg.len())));
                }
                data.extend_from_slice(universe.feature(items[t]));
                data.extend_from_slice(bg);
            }
        }
        Tensor::from_vec(&[len * lists.len(), width], data)
    }

    fn mean_pool(s: &Tensor, batch: usize) -> Tensor {
        let len = s.rows() / batch;
        let mut h0 = Tensor::zeros(&[batch, s.cols()]);
        for t in 0..len {
            for b in 0..batch {
                let src = s.row(t * batch + b);
                for (d, v) in h0.row_mut(b).iter_mut().zip(src) {
                    *d += v / len as f64;
                }
            }
        }
        h0
    }

    fn infer_equal_len(&self, params: &ParameterSet, universe: &ItemUniverse, lists: &[&[usize]], bgs: &[&[f64]], with_click: bool) -> Result<(Tensor, Option<Tensor>)> {
        let batch = lists.len();
        let len = lists[0].len();
        let s = self.enc.infer(params, &self.inputs(universe, lists, bgs)?)?;
        let mut h = Self::mean_pool(&s, batch);
        let mut c = Tensor::zeros(&[batch, self.config.hidden]);
        let mut hs = Tensor::zeros(&[len * batch, self.config.hidden]);
        for t in 0..len {
            let x = s.row_block(t * batch, (t + 1) * batch);
            let (hn, cn) = self.lstm.infer(params, &h, &c, &x)?;
            hs.set_row_block(t * batch, &hn);
            h = hn;
            c = cn;
        }
        let joint = Tensor::concat_cols(&s, &hs)?;
        let zp = self.purchase.infer(params, &joint)?;
        let zc = if with_click { Some(self.click.infer(params, &joint)?) } else { None };
        Ok((zp, zc))
    }

    /// Per-position purchase probabilities of many lists. Lists may differ
    /// in length; each list is its own candidate set.
    pub fn score_lists(&self, universe: &ItemUniverse, lists: &[&[usize]], bg: &[f64]) -> Result<Vec<Vec<f64>>> {
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, l) in lists.iter().enumerate() {
            groups.entry(l.len()).or_default().push(i);
        }
        let mut out = vec![Vec::new(); lists.len()];
        for (len, idx) in groups {
            if len == 0 {
                continue;
            }
            for chunk in idx.chunks(512) {
                let sub: Vec<&[usize]> = chunk.iter().map(|&i| lists[i]).collect();
                let bgs = vec![bg; sub.len()];
                let (zp, _) = self.infer_equal_len(&self.params, universe, &sub, &bgs, false)?;
                let b = chunk.len();
                for (j, &i) in chunk.iter().enumerate() {
                    out[i] = (0..len).map(|t| sigmoid(zp.data()[t * b + j])).collect();
                }
            }
        }
        Ok(out)
    }

    pub fn score_items(&self, universe: &ItemUniverse, items: &[usize], bg: &[f64]) -> Result<ListProbs> {
        if items.is_empty() {
            return Ok(ListProbs {
                purchase: Vec::new(),
                click: Vec::new(),
                score: 0.0,
            });
        }
        let (zp, zc) = self.infer_equal_len(&self.params, universe, &[items], &[bg], true)?;
        let purchase: Vec<f64> = zp.data().iter().map(|&z| sigmoid(z)).collect();
        let click = zc.map(|z| z.data().iter().map(|&v| sigmoid(v)).collect()).unwrap_or_default();
        let score = purchase.iter().sum();
        Ok(ListProbs { purchase, click, score })
    }

    pub fn score_list(&self, universe: &ItemUniverse, slate: &Slate) -> Result<ListProbs> {
        crate::sim::validate_items(&slate.item_ids, universe)?;
        self.score_items(universe, &slate.item_ids, &slate.bg)
    }

    /// State before the first position for the given candidate set.
    pub fn begin(&self, universe: &ItemUniverse, candidates: &[usize], bg: &[f64]) -> Result<PrefixState> {
        if candidates.is_empty() {
            return Err(Error::config("evaluator prefix needs a non-empty candidate set"));
        }
        let x = self.inputs(universe, &[candidates], &[bg])?;
        let encoded = self.enc.infer(&self.params, &x)?;
        let h = Self::mean_pool(&encoded, 1);
        Ok(PrefixState {
            candidates: candidates.to_vec(),
            encoded,
            h,
            c: Tensor::zeros(&[1, self.config.hidden]),
            picked: vec![false; candidates.len()],
        })
    }

    fn extend(&self, state: &PrefixState, slots: &[usize]) -> Result<(Tensor, Tensor, Vec<f64>)> {
        let n = slots.len();
        let s = state.encoded.select_rows(slots);
        let rep = vec![0; n];
        let (h, c) = self.lstm.infer(&self.params, &state.h.select_rows(&rep), &state.c.select_rows(&rep), &s)?;
        let z = self.purchase.infer(&self.params, &Tensor::concat_cols(&s, &h)?)?;
        Ok((h, c, z.data().iter().map(|&v| sigmoid(v)).collect()))
    }

    /// Purchase probability of each listed candidate slot if it were emitted next.
    pub fn next_probs(&self, state: &PrefixState, slots: &[usize]) -> Result<Vec<f64>> {
        if slots.is_empty() {
            return Ok(Vec::new());
        }
        Ok(self.extend(state, slots)?.2)
    }

    /// Emit candidate `slot`; returns its purchase probability.
    pub fn advance(&self, state: &mut PrefixState, slot: usize) -> Result<f64> {
        if state.picked[slot] {
            return Err(Error::InvalidSlate(format!("candidate slot {slot} already emitted")));
        }
        let (h, c, p) = self.extend(state, &[slot])?;
        state.h = h;
        state.c = c;
        state.picked[slot] = true;
        Ok(p[0])
    }

    fn forward_train(&self, params: &ParameterSet, universe: &ItemUniverse, lists: &[&[usize]], bgs: &[&[f64]]) -> Result<Pass> {
        let batch = lists.len();
        let len = lists[0].len();
        let (s, enc) = self.enc.forward(params, &self.inputs(universe, lists, bgs)?)?;
        let mut h = Self::mean_pool(&s, batch);
        let mut c = Tensor::zeros(&[batch, self.config.hidden]);
        let mut hs = Tensor::zeros(&[len * batch, self.config.hidden]);
        let mut steps = Vec::with_capacity(len);
        for t in 0..len {
            let x = s.row_block(t * batch, (t + 1) * batch);
            let (hn, cn, cache) = self.lstm.forward(params, &h, &c, &x)?;
            hs.set_row_block(t * batch, &hn);
            steps.push(cache);
            h = hn;
            c = cn;
        }
        let joint = Tensor::concat_cols(&s, &hs)?;
        let (zp, purchase) = self.purchase.forward(params, &joint)?;
        let (zc, click) = self.click.forward(params, &joint)?;
        Ok(Pass {
            enc,
            steps,
            purchase,
            click,
            zp,
            zc,
        })
    }

    /// Mean per-item loss `BCE(p, y) + w * BCE(p_click, y_click)` over a
    /// batch of equal-length labeled lists; with `grad` the parameter
    /// gradients of that mean are accumulated into `params`.
    pub fn batch_loss(&self, params: &mut ParameterSet, universe: &ItemUniverse, slates: &[&Slate], click_weight: f64, grad: bool) -> Result<f64> {
        let batch = slates.len();
        if batch == 0 {
            return Err(Error::InsufficientData("empty evaluator batch".into()));
        }
        let len = slates[0].len();
        if slates.iter().any(|s| s.len() != len) {
            return Err(Error::config("evaluator batch lists must share one length"));
        }
        if len == 0 {
            return Ok(0.0);
        }
        let lists: Vec<&[usize]> = slates.iter().map(|s| s.item_ids.as_slice()).collect();
        let bgs: Vec<&[f64]> = slates.iter().map(|s| s.bg.as_slice()).collect();
        let pass = self.forward_train(params, universe, &lists, &bgs)?;
        let n = (batch * len) as f64;
        let mut loss = 0.0;
        let mut dzp = Tensor::zeros(&[batch * len, 1]);
        let mut dzc = Tensor::zeros(&[batch * len, 1]);
        for (b, s) in slates.iter().enumerate() {
            let yp = s.purchases.as_deref().ok_or_else(|| Error::InvalidSlate("evaluator training list lacks purchase labels".into()))?;
            let yc = s.clicks.as_deref().ok_or_else(|| Error::InvalidSlate("evaluator training list lacks click labels".into()))?;
            for t in 0..len {
                let row = t * batch + b;
                let (lp, gp) = bce_with_logit(pass.zp.data()[row], f64::from(yp[t]));
                let (lc, gc) = bce_with_logit(pass.zc.data()[row], f64::from(yc[t]));
                loss += lp + click_weight * lc;
                dzp.data_mut()[row] = gp / n;
                dzc.data_mut()[row] = click_weight * gc / n;
            }
        }
        loss /= n;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("evaluator loss is {loss}")));
        }
        if grad {
            self.backward(params, &pass, &dzp, &dzc, batch, len)?;
        }
        Ok(loss)
    }

    fn backward(&self, params: &mut ParameterSet, pass: &Pass, dzp: &Tensor, dzc: &Tensor, batch: usize, len: usize) -> Result<()> {
        let h = self.config.hidden;
        let mut djoint = self.purchase.backward(params, &pass.purchase, dzp)?;
        djoint.add_assign(&self.click.backward(params, &pass.click, dzc)?)?;
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
        // h_0 is the mean of the encodings.
        for t in 0..len {
            for b in 0..batch {
                let g: Vec<f64> = dh_next.row(b).iter().map(|v| v / len as f64).collect();
                for (d, v) in ds.row_mut(t * batch + b).iter_mut().zip(g) {
                    *d += v;
                }
            }
        }
        self.enc.backward(params, &pass.enc, &ds)?;
        Ok(())
    }

    fn effective_click_weight(&self, train: &Dataset) -> f64 {
        if !self.config.auto_click_weight {
            return self.config.click_weight;
        }
        let count = |f: fn(&Slate) -> Option<&Vec<u8>>| -> u64 {
            train.slates.iter().filter_map(f).flatten().map(|&v| u64::from(v)).sum()
        };
        let purchases = count(|s| s.purchases.as_ref());
        let clicks = count(|s| s.clicks.as_ref());
        if clicks == 0 {
            0.0
        } else {
            purchases as f64 / clicks as f64
        }
    }

    /// Mean per-item loss over a whole dataset.
    pub fn dataset_loss(&self, universe: &ItemUniverse, data: &Dataset, click_weight: f64) -> Result<f64> {
        let mut params = self.params.clone();
        let mut total = 0.0;
        let mut items = 0usize;
        for group in batches_by_len(&data.slates, (0..data.len()).collect(), 512) {
            let refs: Vec<&Slate> = group.iter().map(|&i| &data.slates[i]).collect();
            let n = refs.len() * refs[0].len();
            total += self.batch_loss(&mut params, universe, &refs, click_weight, false)? * n as f64;
            items += n;
        }
        Ok(if items == 0 { 0.0 } else { total / items as f64 })
    }

    /// Minibatch training with early stopping on validation loss. The
    /// parameters of the best epoch are kept.
    pub fn train(&mut self, universe: &ItemUniverse, train: &Dataset, val: &Dataset, rng: &mut Rng) -> Result<TrainReport> {
        if train.is_empty() {
            return Err(Error::InsufficientData("evaluator training set is empty".into()));
        }
        train.validate(universe)?;
        let w = self.effective_click_weight(train);
        let val_loss = |m: &Self| -> Result<Option<f64>> {
            if val.is_empty() {
                Ok(None)
            } else {
                m.dataset_loss(universe, val, w).map(Some)
            }
        };
        let mut trace = vec![EpochRecord {
            epoch: 0,
            train_loss: self.dataset_loss(universe, train, w)?,
            val_loss: val_loss(self)?,
        }];
        let mut best = (trace[0].val_loss.unwrap_or(trace[0].train_loss), 0usize, self.params.clone());
        let mut opt = Adam::new(self.config.adam);
        let mut params = self.params.clone();
        let mut order: Vec<usize> = (0..train.len()).collect();
        for epoch in 1..=self.config.max_epochs {
            order.shuffle(rng);
            let mut total = 0.0;
            let mut items = 0usize;
            for group in batches_by_len(&train.slates, order.clone(), self.config.batch_size) {
                let refs: Vec<&Slate> = group.iter().map(|&i| &train.slates[i]).collect();
                params.zero_grad();
                let loss = self
                    .batch_loss(&mut params, universe, &refs, w, true)
                    .map_err(|e| match e {
                        Error::NonFinite(m) => Error::NonFinite(format!("evaluator training diverged in epoch {epoch}: {m}")),
                        other => other,
                    })?;
                opt.update(&mut params)?;
                let n = refs.len() * refs[0].len();
                total += loss * n as f64;
                items += n;
            }
            self.params.copy_values_from(&params)?;
            let rec = EpochRecord {
                epoch,
                train_loss: total / items.max(1) as f64,
                val_loss: val_loss(self)?,
            };
            trace.push(rec);
            let monitored = rec.val_loss.unwrap_or(rec.train_loss);
            if monitored < best.0 {
                best = (monitored, epoch, self.params.clone());
            } else if epoch - best.1 >= self.config.patience {
                break;
            }
        }
        self.params.copy_values_from(&best.2)?;
        Ok(TrainReport {
            trace,
            best_epoch: best.1,
            click_weight: w,
        })
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint::from_params("evaluator", &self.params)
            .with_meta("config", serde_json::to_string(&self.config).map_err(|e| Error::config(e.to_string()))?)
            .with_meta("feature_dim", self.feature_dim)
            .with_meta("bg_dim", self.bg_dim))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.architecture != "evaluator" {
            return Err(Error::config(format!("expected an evaluator checkpoint, got `{}`", ck.architecture)));
        }
        let config: EvaluatorConfig = serde_json::from_str(ck.meta("config")?).map_err(|e| Error::config(e.to_string()))?;
        let mut model = EvaluatorModel::new(config, ck.meta_parse("feature_dim")?, ck.meta_parse("bg_dim")?, 0)?;
        model.params = ck.load_into(&model.params)?;
        Ok(model)
    }
}

/// Minibatches of at most `size` indices, each holding lists of one length,
/// in the order the indices are given.
pub(crate) fn batches_by_len(slates: &[Slate], order: Vec<usize>, size: usize) -> Vec<Vec<usize>> {
    let mut open: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut out = Vec::new();
    for i in order {
        let bucket = open.entry(slates[i].len()).or_default();
        bucket.push(i);
        if bucket.len() == size {
            out.push(std::mem::take(bucket));
        }
    }
    out.extend(open.into_values().filter(|b| !b.is_empty()));
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RequirementReport {
    pub acc_reversed: f64,
    pub acc_shuffled: f64,
    pub acc_label_separated: f64,
    pub pairs_reversed: usize,
    pub pairs_shuffled: usize,
    pub pairs_label_separated: usize,
}

const MIN_PAIRS: usize = 100;

fn pair_accuracy(pairs: &[(f64, f64, f64, f64)], rng: &mut Rng) -> (f64, usize) {
    let mut correct = 0.0;
    let mut used = 0usize;
    for &(m1, m2, t1, t2) in pairs {
        if t1 == t2 {
            continue;
        }
        used += 1;
        if m1 == m2 {
            if rng.random::<bool>() {
                correct += 1.0;
            }
        } else if (m1 > m2) == (t1 > t2) {
            correct += 1.0;
        }
    }
    (if used == 0 { 0.0 } else { correct / used as f64 }, used)
}

/// Fraction of list pairs the evaluator orders like the true score:
/// (logged, reversed), (logged, shuffled), and (a list without purchases,
/// a list with at least one). Model ties are broken by a coin flip; pairs
/// with equal true scores are not usable.
pub fn requirement_check(
    model: &EvaluatorModel,
    test: &Dataset,
    universe: &ItemUniverse,
    rule: &GroundTruthRule,
    rng: &mut Rng,
) -> Result<RequirementReport> {
    let n = test.len();
    let bg = test.slates.first().map(|s| s.bg.clone()).unwrap_or_else(|| vec![1.0; model.bg_dim]);
    let logged: Vec<Vec<usize>> = test.slates.iter().map(|s| s.item_ids.clone()).collect();
    let reversed: Vec<Vec<usize>> = logged.iter().map(|l| l.iter().rev().copied().collect()).collect();
    let shuffled: Vec<Vec<usize>> = logged
        .iter()
        .map(|l| {
            let mut s = l.clone();
            s.shuffle(rng);
            s
        })
        .collect();
    let mut all: Vec<&[usize]> = Vec::with_capacity(3 * n);
    all.extend(logged.iter().map(Vec::as_slice));
    all.extend(reversed.iter().map(Vec::as_slice));
    all.extend(shuffled.iter().map(Vec::as_slice));
    let model_scores: Vec<f64> = model.score_lists(universe, &all, &bg)?.iter().map(|p| p.iter().sum()).collect();
    let true_scores: Vec<f64> = all.iter().map(|l| rule.true_score(universe, l)).collect::<Result<_>>()?;

    let versus = |offset: usize| -> Vec<(f64, f64, f64, f64)> {
        (0..n)
            .map(|i| (model_scores[i], model_scores[offset + i], true_scores[i], true_scores[offset + i]))
            .collect()
    };
    let (acc_reversed, pairs_reversed) = pair_accuracy(&versus(n), rng);
    let (acc_shuffled, pairs_shuffled) = pair_accuracy(&versus(2 * n), rng);

    let bought = |s: &Slate| s.purchases.as_ref().is_some_and(|p| p.contains(&1));
    let (with, without): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| bought(&test.slates[i]));
    let mut label_pairs = Vec::new();
    if !with.is_empty() && !without.is_empty() {
        let partners = MIN_PAIRS.div_ceil(without.len()).max(10).min(with.len());
        for &z in &without {
            for &p in rand::seq::index::sample(rng, with.len(), partners).iter().map(|k| &with[k]) {
                label_pairs.push((model_scores[p], model_scores[z], true_scores[p], true_scores[z]));
            }
        }
    }
    let (acc_label_separated, pairs_label_separated) = pair_accuracy(&label_pairs, rng);

    for (name, used) in [
        ("reversed", pairs_reversed),
        ("shuffled", pairs_shuffled),
        ("label-separated", pairs_label_separated),
    ] {
        if used < MIN_PAIRS {
            return Err(Error::InsufficientData(format!(
                "requirement check needs at least {MIN_PAIRS} usable {name} pairs, found {used}"
            )));
        }
    }
    Ok(RequirementReport {
        acc_reversed,
        acc_shuffled,
        acc_label_separated,
        pairs_reversed,
        pairs_shuffled,
        pairs_label_separated,
    })
}

/// Absolute error of the predicted list score against the true score, per list.
pub fn list_errors(model: &EvaluatorModel, data: &Dataset, universe: &ItemUniverse, rule: &GroundTruthRule) -> Result<Vec<f64>> {
    let lists: Vec<&[usize]> = data.slates.iter().map(|s| s.item_ids.as_slice()).collect();
    let bg = data.slates.first().map(|s| s.bg.clone()).unwrap_or_else(|| vec![1.0; model.bg_dim]);
    let preds = model.score_lists(universe, &lists, &bg)?;
    lists
        .iter()
        .zip(preds)
        .map(|(l, p)| Ok((p.iter().sum::<f64>() - rule.true_score(universe, l)?).abs()))
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Mean absolute list-score error on the training distribution and off it.
pub fn generalization_gap(
    model: &EvaluatorModel,
    on_distribution: &Dataset,
    off_distribution: &Dataset,
    universe: &ItemUniverse,
    rule: &GroundTruthRule,
) -> Result<(f64, f64)> {
    Ok((
        mean(&list_errors(model, on_distribution, universe, rule)?),
        mean(&list_errors(model, off_distribution, universe, rule)?),
    ))
}

/// Mean absolute per-position error `|p_i - f_i|`.
pub fn position_mae(model: &EvaluatorModel, data: &Dataset, universe: &ItemUniverse, rule: &GroundTruthRule) -> Result<f64> {
    let lists: Vec<&[usize]> = data.slates.iter().map(|s| s.item_ids.as_slice()).collect();
    let bg = data.slates.first().map(|s| s.bg.clone()).unwrap_or_else(|| vec![1.0; model.bg_dim]);
    let preds = model.score_lists(universe, &lists, &bg)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (l, p) in lists.iter().zip(preds) {
        let f = rule.score_items(universe, l)?.per_position;
        total += p.iter().zip(&f).map(|(a, b)| (a - b).abs()).sum::<f64>();
        count += f.len();
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use crate::rng::rng_from;
    use crate::sim::{generate_dataset, RuleConfig};

    fn small() -> EvaluatorConfig {
        EvaluatorConfig {
            hidden: 6,
            head_widths: vec![5, 4],
            ..EvaluatorConfig::default()
        }
    }

    fn world() -> (ItemUniverse, GroundTruthRule) {
        let u = ItemUniverse::build(30, 4, 1).unwrap();
        let r = GroundTruthRule::new(&u, 5, RuleConfig::default(), 2).unwrap();
        (u, r)
    }

    #[test]
    fn zero_model_scores_half_everywhere() {
        let (u, _) = world();
        let mut m = EvaluatorModel::new(small(), 4, 1, 0).unwrap();
        m.params.fill_values(0.0);
        let p = m.score_items(&u, &[1, 2, 3, 4], &[1.0]).unwrap();
        assert!(p.purchase.iter().chain(&p.click).all(|&v| v == 0.5));
        assert_eq!(p.score, 2.0);
    }

    #[test]
    fn score_is_the_exact_sum_and_deterministic() {
        let (u, _) = world();
        let m = EvaluatorModel::new(small(), 4, 1, 3).unwrap();
        let a = m.score_items(&u, &[5, 1, 9], &[1.0]).unwrap();
        let b = m.score_items(&u, &[5, 1, 9], &[1.0]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.score, a.purchase.iter().sum::<f64>());
        assert!(a.purchase.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn batched_and_stepwise_scoring_agree() {
        let (u, _) = world();
        let m = EvaluatorModel::new(small(), 4, 1, 4).unwrap();
        let items = [7, 3, 12, 0, 25];
        let full = m.score_items(&u, &items, &[1.0]).unwrap();
        let batch = m.score_lists(&u, &[&items[..], &[1, 2, 3][..], &items[..]], &[1.0]).unwrap();
        assert_eq!(batch[0], full.purchase);
        assert_eq!(batch[2], full.purchase);
        let mut st = m.begin(&u, &items, &[1.0]).unwrap();
        for (slot, &want) in full.purchase.iter().enumerate() {
            let p = m.advance(&mut st, slot).unwrap();
            assert!((p - want).abs() < 1e-12);
        }
        assert!(m.advance(&mut st, 0).is_err());
    }

    #[test]
    fn wrong_feature_width_is_a_config_error() {
        let (u, _) = world();
        let m = EvaluatorModel::new(small(), 5, 1, 0).unwrap();
        assert!(matches!(m.score_items(&u, &[1], &[1.0]), Err(Error::Config(_))));
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let (u, r) = world();
        let (train, _) = generate_dataset(&u, &r, 4, 5, 1.0, 1, 7).unwrap();
        let m = EvaluatorModel::new(small(), 4, 1, 5).unwrap();
        let refs: Vec<&Slate> = train.slates.iter().collect();
        let mut p = m.params.clone();
        let rep = grad_check(&mut p, 1e-4, 300, &mut rng_from(1), |p, g| m.batch_loss(p, &u, &refs, 0.25, g)).unwrap();
        assert!(rep.max_rel_error < 1e-4, "{rep:?}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let (u, _) = world();
        let m = EvaluatorModel::new(small(), 4, 1, 8).unwrap();
        let ck = Checkpoint::parse(&m.to_checkpoint().unwrap().to_text(), "mem").unwrap();
        let back = EvaluatorModel::from_checkpoint(&ck).unwrap();
        assert_eq!(back.score_items(&u, &[2, 4, 6], &[1.0]).unwrap(), m.score_items(&u, &[2, 4, 6], &[1.0]).unwrap());
    }

    #[test]
    fn batches_respect_length_and_size() {
        let mk = |n: usize| Slate::new((0..n).collect(), vec![1.0]);
        let slates = vec![mk(2), mk(3), mk(2), mk(2), mk(3)];
        let b = batches_by_len(&slates, (0..5).collect(), 2);
        assert_eq!(b, vec![vec![0, 2], vec![1, 4], vec![3]]);
    }

    #[test]
    fn training_lowers_validation_loss() {
        let (u, r) = world();
        let (mut train, _) = generate_dataset(&u, &r, 600, 5, 1.0, 1, 9).unwrap();
        let val = train.split_off_tail(0.2, crate::sim::Split::Validation);
        let mut m = EvaluatorModel::new(EvaluatorConfig { max_epochs: 8, ..small() }, 4, 1, 1).unwrap();
        let rep = m.train(&u, &train, &val, &mut rng_from(2)).unwrap();
        let start = rep.trace[0].val_loss.unwrap();
        let kept = rep.trace[rep.best_epoch].val_loss.unwrap();
        assert!(rep.best_epoch > 0 && kept < start, "{:?}", rep.trace);
        assert!((m.dataset_loss(&u, &val, rep.click_weight).unwrap() - kept).abs() < 1e-12);
    }

    #[test]
    fn empty_training_set_is_an_error() {
        let (u, r) = world();
        let mut m = EvaluatorModel::new(small(), 4, 1, 0).unwrap();
        let empty = Dataset::empty(crate::sim::Split::Train, 0, &u, &r);
        assert!(m.train(&u, &empty, &empty, &mut rng_from(0)).is_err());
    }
}
