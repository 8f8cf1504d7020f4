//! Sequential slate generator trained with a clipped policy-ratio objective.
//!
//! ```text
//! h_s(t) = LSTM(h_s(t-1), DNN2([bg, x_out(t-1)]))     x_out(0) = 0
//! h_a(i) = DNN2(x_i)
//! pi(i | s_t) = softmax over unpicked i of DNN3([h_a(i), h_s(t)])
//! ```
//!
//! Rewards are the evaluator's per-position purchase probabilities of the
//! emitted list. State values are not learned: `V(s_t)` is the mean return
//! of `k` fresh rollouts branched from `s_t`, and advantages are scaled by
//! the spread of those rollouts.

use std::fmt::Write as _;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{format_f64, Checkpoint};
use crate::error::{Error, Result};
use crate::evaluator::EvaluatorModel;
use crate::nn::{log_softmax, softmax, Activation, LstmCache, LstmCell, Mlp, MlpCache};
use crate::optim::{Adam, AdamConfig};
use crate::params::ParameterSet;
use crate::rng::{self, Rng};
use crate::sim::{sample_candidates, validate_items, GroundTruthRule, ItemUniverse};
use crate::tensor::{gemm, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub hidden: usize,
    pub head_widths: Vec<usize>,
    /// Rollouts per state value estimate.
    pub rollouts: usize,
    pub clip: f64,
    pub epochs_per_batch: usize,
    pub episodes_per_batch: usize,
    pub iterations: usize,
    pub sigma_floor: f64,
    pub adam: AdamConfig,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            hidden: 64,
            head_widths: vec![64, 32],
            rollouts: 8,
            clip: 0.2,
            epochs_per_batch: 4,
            episodes_per_batch: 64,
            iterations: 200,
            sigma_floor: 1e-3,
            adam: AdamConfig::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.head_widths.is_empty() || self.head_widths.contains(&0) {
            return Err(Error::config("generator.hidden and generator.head_widths must be positive"));
        }
        if self.rollouts == 0 {
            return Err(Error::config("generator.rollouts (k) must be at least 1"));
        }
        if self.clip.is_nan() || self.clip <= 0.0 || self.sigma_floor.is_nan() || self.sigma_floor <= 0.0 {
            return Err(Error::config("generator.clip and generator.sigma_floor must be positive"));
        }
        if self.episodes_per_batch == 0 || self.epochs_per_batch == 0 {
            return Err(Error::config("generator.episodes_per_batch and generator.epochs_per_batch must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RolloutMode {
    Sample,
    Greedy,
}

/// One emitted list with its behavior-policy bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub candidates: Vec<usize>,
    pub bg: Vec<f64>,
    /// Emitted item ids in order.
    pub actions: Vec<usize>,
    /// Candidate slot of each action.
    pub slots: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Trajectory {
    fn set_rewards(&mut self, rewards: Vec<f64>) {
        self.returns = (0..rewards.len()).map(|t| rewards[t..].iter().sum()).collect();
        self.rewards = rewards;
    }

    pub fn total_return(&self) -> f64 {
        self.returns.first().copied().unwrap_or(0.0)
    }
}

/// Per-state value estimate `(V, sigma)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateValue {
    pub value: f64,
    pub sigma: f64,
}

/// Supplies per-position rewards for completed lists.
pub trait RewardModel {
    fn rewards(&self, universe: &ItemUniverse, lists: &[&[usize]], bg: &[f64]) -> Result<Vec<Vec<f64>>>;
}

impl RewardModel for EvaluatorModel {
    fn rewards(&self, universe: &ItemUniverse, lists: &[&[usize]], bg: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.score_lists(universe, lists, bg)
    }
}

struct SetContext {
    candidates: Vec<usize>,
    bg: Vec<f64>,
    /// First policy layer applied to each candidate's action encoding.
    pre: Tensor,
}

#[derive(Clone)]
struct Walker {
    ctx: usize,
    h: Vec<f64>,
    c: Vec<f64>,
    last: Option<usize>,
    picked: Vec<bool>,
    slots: Vec<usize>,
    log_probs: Vec<f64>,
    rng: Rng,
}

struct PolicyPass {
    state_in: MlpCache,
    steps: Vec<LstmCache>,
    act: MlpCache,
    policy: MlpCache,
    /// Per `(t, e)`: first row, candidate slots in row order, chosen offset.
    segments: Vec<(usize, Vec<usize>, usize)>,
    log_probs: Vec<Vec<f64>>,
    probs: Vec<Vec<f64>>,
    episodes: usize,
    len: usize,
}

#[derive(Debug, Clone)]
pub struct GeneratorModel {
    config: GeneratorConfig,
    feature_dim: usize,
    bg_dim: usize,
    state_in: Mlp,
    lstm: LstmCell,
    act: Mlp,
    policy: Mlp,
    pub params: ParameterSet,
}

impl GeneratorModel {
    pub fn new(config: GeneratorConfig, feature_dim: usize, bg_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let h = config.hidden;
        let state_in = Mlp::new("gen.state", &[bg_dim + feature_dim, h, h], Activation::Relu);
        let lstm = LstmCell::new("gen.lstm", h, h);
        let act = Mlp::new("gen.action", &[feature_dim, h, h], Activation::Relu);
        let mut widths = vec![2 * h];
        widths.extend_from_slice(&config.head_widths);
        widths.push(1);
        let policy = Mlp::with_output("gen.policy", &widths, Activation::Relu, Activation::None);
        let mut params = ParameterSet::new(rng::derive(seed, "generator"));
        for m in [&state_in, &act, &policy] {
            m.init(&mut params)?;
        }
        lstm.init(&mut params)?;
        Ok(GeneratorModel {
            config,
            feature_dim,
            bg_dim,
            state_in,
            lstm,
            act,
            policy,
            params,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn config_mut(&mut self) -> &mut GeneratorConfig {
        &mut self.config
    }

    fn check_universe(&self, universe: &ItemUniverse) -> Result<()> {
        if universe.feature_dim() != self.feature_dim {
            return Err(Error::config(format!(
                "generator expects {} item features, universe has {}",
                self.feature_dim,
                universe.feature_dim()
            )));
        }
        Ok(())
    }

    fn context(&self, params: &ParameterSet, universe: &ItemUniverse, candidates: &[usize], bg: &[f64]) -> Result<SetContext> {
        if bg.len() != self.bg_dim {
            return Err(Error::config(format!("generator expects bg width {}, got {}", self.bg_dim, bg.len())));
        }
        let ha = self.act.infer(params, &universe.gather(candidates))?;
        let w = params.value(&self.policy.weight_name(0))?;
        let (wa, _) = w.split_cols(self.config.hidden);
        let mut pre = Tensor::zeros(&[candidates.len(), wa.rows()]);
        gemm(1.0, &ha, false, &wa, true, 0.0, &mut pre)?;
        Ok(SetContext {
            candidates: candidates.to_vec(),
            bg: bg.to_vec(),
            pre,
        })
    }

    fn fresh_walker(&self, ctx: usize, n: usize, rng: Rng) -> Walker {
        Walker {
            ctx,
            h: vec![0.0; self.config.hidden],
            c: vec![0.0; self.config.hidden],
            last: None,
            picked: vec![false; n],
            slots: Vec::new(),
            log_probs: Vec::new(),
            rng,
        }
    }

    /// Advance every walker by one action. `forced[w]` overrides the choice.
    fn step(
        &self,
        params: &ParameterSet,
        universe: &ItemUniverse,
        ctxs: &[SetContext],
        walkers: &mut [Walker],
        mode: RolloutMode,
        forced: Option<&[usize]>,
    ) -> Result<Vec<Vec<f64>>> {
        let w = walkers.len();
        let hd = self.config.hidden;
        let in_w = self.bg_dim + self.feature_dim;
        let mut x = Vec::with_capacity(w * in_w);
        let mut h = Vec::with_capacity(w * hd);
        let mut c = Vec::with_capacity(w * hd);
        for wk in walkers.iter() {
            let ctx = &ctxs[wk.ctx];
            x.extend_from_slice(&ctx.bg);
            match wk.last {
                Some(slot) => x.extend_from_slice(universe.feature(ctx.candidates[slot])),
                None => x.extend(std::iter::repeat_n(0.0, self.feature_dim)),
            }
            h.extend_from_slice(&wk.h);
            c.extend_from_slice(&wk.c);
        }
        let s_in = self.state_in.infer(params, &Tensor::from_vec(&[w, in_w], x)?)?;
        let (hn, cn) = self.lstm.infer(params, &Tensor::from_vec(&[w, hd], h)?, &Tensor::from_vec(&[w, hd], c)?, &s_in)?;

        let w1 = params.value(&self.policy.weight_name(0))?;
        let b1 = params.value(&self.policy.bias_name(0))?;
        let (_, ws) = w1.split_cols(hd);
        let p1 = ws.rows();
        let mut u = Tensor::zeros(&[w, p1]);
        gemm(1.0, &hn, false, &ws, true, 0.0, &mut u)?;

        let mut rows = Vec::new();
        let mut segs = Vec::with_capacity(w);
        for (k, wk) in walkers.iter().enumerate() {
            let ctx = &ctxs[wk.ctx];
            let start = rows.len() / p1;
            let mut slots = Vec::new();
            for (j, &taken) in wk.picked.iter().enumerate() {
                if taken {
                    continue;
                }
                slots.push(j);
                rows.extend(ctx.pre.row(j).iter().zip(u.row(k)).zip(b1.data()).map(|((a, s), b)| Activation::Relu.apply(a + s + b)));
            }
            if slots.is_empty() {
                return Err(Error::EpisodeComplete);
            }
            segs.push((start, slots));
        }
        let total = rows.len() / p1;
        let logits = self.policy.infer_from(params, 1, &Tensor::from_vec(&[total, p1], rows)?)?;

        let mut dists = Vec::with_capacity(w);
        for (k, (wk, (start, slots))) in walkers.iter_mut().zip(segs).enumerate() {
            let z = &logits.data()[start..start + slots.len()];
            let logp = log_softmax(z);
            let choice = match (forced, mode) {
                (Some(f), _) => slots.iter().position(|&s| s == f[k]).ok_or_else(|| Error::InvalidSlate(format!("slot {} is not available", f[k])))?,
                (None, RolloutMode::Greedy) => {
                    let mut best = 0;
                    for i in 1..z.len() {
                        if z[i] > z[best] {
                            best = i;
                        }
                    }
                    best
                }
                (None, RolloutMode::Sample) => {
                    let u: f64 = wk.rng.random();
                    let mut acc = 0.0;
                    let mut pick = z.len() - 1;
                    for (i, lp) in logp.iter().enumerate() {
                        acc += lp.exp();
                        if u < acc {
                            pick = i;
                            break;
                        }
                    }
                    pick
                }
            };
            let mut full = vec![0.0; wk.picked.len()];
            for (i, &s) in slots.iter().enumerate() {
                full[s] = logp[i].exp();
            }
            dists.push(full);
            let slot = slots[choice];
            wk.picked[slot] = true;
            wk.slots.push(slot);
            wk.log_probs.push(logp[choice]);
            wk.last = Some(slot);
            wk.h = hn.row(k).to_vec();
            wk.c = cn.row(k).to_vec();
        }
        Ok(dists)
    }

    fn run_to_end(&self, params: &ParameterSet, universe: &ItemUniverse, ctxs: &[SetContext], walkers: &mut [Walker], mode: RolloutMode) -> Result<()> {
        loop {
            let remaining = walkers.iter().map(|w| w.picked.iter().filter(|p| !**p).count()).max().unwrap_or(0);
            if remaining == 0 {
                return Ok(());
            }
            let (active, done): (Vec<usize>, Vec<usize>) = (0..walkers.len()).partition(|&i| walkers[i].picked.iter().any(|p| !p));
            if done.is_empty() {
                self.step(params, universe, ctxs, walkers, mode, None)?;
            } else {
                let mut sub: Vec<Walker> = active.iter().map(|&i| walkers[i].clone()).collect();
                self.step(params, universe, ctxs, &mut sub, mode, None)?;
                for (i, w) in active.into_iter().zip(sub) {
                    walkers[i] = w;
                }
            }
        }
    }

    /// Probability of emitting each candidate next, aligned with `candidates`.
    pub fn action_distribution(&self, universe: &ItemUniverse, bg: &[f64], prefix: &[usize], candidates: &[usize]) -> Result<Vec<f64>> {
        self.check_universe(universe)?;
        validate_items(candidates, universe)?;
        validate_items(prefix, universe)?;
        if prefix.len() >= candidates.len() {
            return Err(Error::EpisodeComplete);
        }
        let ctxs = [self.context(&self.params, universe, candidates, bg)?];
        let mut walkers = [self.fresh_walker(0, candidates.len(), rng::rng_from(0))];
        for &item in prefix {
            let slot = candidates
                .iter()
                .position(|&c| c == item)
                .ok_or_else(|| Error::InvalidSlate(format!("prefix item {item} is not a candidate")))?;
            self.step(&self.params, universe, &ctxs, &mut walkers, RolloutMode::Greedy, Some(&[slot]))?;
        }
        // Probe the next step without committing to it.
        let mut probe = walkers.clone();
        let dist = self.step(&self.params, universe, &ctxs, &mut probe, RolloutMode::Greedy, None)?;
        Ok(dist.into_iter().next().unwrap_or_default())
    }

    fn trajectories(&self, ctxs: &[SetContext], walkers: Vec<Walker>) -> Vec<Trajectory> {
        walkers
            .into_iter()
            .map(|w| {
                let ctx = &ctxs[w.ctx];
                Trajectory {
                    candidates: ctx.candidates.clone(),
                    bg: ctx.bg.clone(),
                    actions: w.slots.iter().map(|&s| ctx.candidates[s]).collect(),
                    slots: w.slots,
                    log_probs: w.log_probs,
                    rewards: Vec::new(),
                    returns: Vec::new(),
                }
            })
            .collect()
    }

    fn attach_rewards(universe: &ItemUniverse, rewards: &dyn RewardModel, trajs: &mut [Trajectory]) -> Result<()> {
        if trajs.is_empty() {
            return Ok(());
        }
        let bg = trajs[0].bg.clone();
        let lists: Vec<&[usize]> = trajs.iter().map(|t| t.actions.as_slice()).collect();
        let r = rewards.rewards(universe, &lists, &bg)?;
        for (t, r) in trajs.iter_mut().zip(r) {
            t.set_rewards(r);
        }
        Ok(())
    }

    /// Complete one list per candidate set, scored by `rewards`.
    pub fn rollout_batch(
        &self,
        universe: &ItemUniverse,
        rewards: &dyn RewardModel,
        sets: &[Vec<usize>],
        bg: &[f64],
        mode: RolloutMode,
        seed: u64,
    ) -> Result<Vec<Trajectory>> {
        self.check_universe(universe)?;
        let ctxs: Vec<SetContext> = sets.iter().map(|s| self.context(&self.params, universe, s, bg)).collect::<Result<_>>()?;
        let mut walkers: Vec<Walker> = sets
            .iter()
            .enumerate()
            .map(|(i, s)| self.fresh_walker(i, s.len(), rng::rng_from(rng::derive_index(seed, i as u64))))
            .collect();
        self.run_to_end(&self.params, universe, &ctxs, &mut walkers, mode)?;
        let mut trajs = self.trajectories(&ctxs, walkers);
        Self::attach_rewards(universe, rewards, &mut trajs)?;
        Ok(trajs)
    }

    pub fn rollout(
        &self,
        universe: &ItemUniverse,
        rewards: &dyn RewardModel,
        candidates: &[usize],
        bg: &[f64],
        mode: RolloutMode,
        rng: &mut Rng,
    ) -> Result<Trajectory> {
        validate_items(candidates, universe)?;
        let seed = rng.random();
        Ok(self.rollout_batch(universe, rewards, &[candidates.to_vec()], bg, mode, seed)?.remove(0))
    }

    /// Greedy order of a candidate set.
    pub fn rank(&self, universe: &ItemUniverse, candidates: &[usize], bg: &[f64]) -> Result<Vec<usize>> {
        self.rank_many(universe, &[candidates.to_vec()], bg).map(|mut v| v.remove(0))
    }

    pub fn rank_many(&self, universe: &ItemUniverse, sets: &[Vec<usize>], bg: &[f64]) -> Result<Vec<Vec<usize>>> {
        self.check_universe(universe)?;
        let ctxs: Vec<SetContext> = sets.iter().map(|s| self.context(&self.params, universe, s, bg)).collect::<Result<_>>()?;
        let mut walkers: Vec<Walker> = sets.iter().enumerate().map(|(i, s)| self.fresh_walker(i, s.len(), rng::rng_from(0))).collect();
        self.run_to_end(&self.params, universe, &ctxs, &mut walkers, RolloutMode::Greedy)?;
        Ok(walkers.into_iter().map(|w| w.slots.iter().map(|&s| sets[w.ctx][s]).collect()).collect())
    }

    /// `k` sampled continuations from every state of every trajectory; the
    /// value of state `t` is the mean return-to-go from `t`, `sigma` its
    /// population standard deviation floored at `sigma_floor`.
    pub fn estimate_values(
        &self,
        universe: &ItemUniverse,
        rewards: &dyn RewardModel,
        trajs: &[Trajectory],
        k: usize,
        seed: u64,
    ) -> Result<Vec<Vec<StateValue>>> {
        if k == 0 {
            return Err(Error::config("value estimation needs k >= 1"));
        }
        if trajs.is_empty() {
            return Ok(Vec::new());
        }
        let floor = self.config.sigma_floor;
        let ctxs: Vec<SetContext> = trajs
            .iter()
            .map(|t| self.context(&self.params, universe, &t.candidates, &t.bg))
            .collect::<Result<_>>()?;
        let n = trajs[0].candidates.len();
        if trajs.iter().any(|t| t.candidates.len() != n) {
            return Err(Error::config("value estimation batch must share one list length"));
        }
        // Replay each trajectory to record the walker state before step t.
        let mut base: Vec<Walker> = (0..trajs.len()).map(|e| self.fresh_walker(e, n, rng::rng_from(0))).collect();
        let mut snapshots: Vec<Vec<Walker>> = Vec::with_capacity(n);
        for t in 0..n {
            snapshots.push(base.clone());
            let forced: Vec<usize> = trajs.iter().map(|tr| tr.slots[t]).collect();
            self.step(&self.params, universe, &ctxs, &mut base, RolloutMode::Sample, Some(&forced))?;
        }
        let mut out = vec![vec![StateValue { value: 0.0, sigma: floor }; n]; trajs.len()];
        for (t, snap) in snapshots.into_iter().enumerate() {
            let mut walkers = Vec::with_capacity(trajs.len() * k);
            for (e, w) in snap.into_iter().enumerate() {
                for j in 0..k {
                    let mut b = w.clone();
                    b.rng = rng::rng_from(rng::derive_index(seed, ((e * n + t) * k + j) as u64));
                    walkers.push(b);
                }
            }
            self.run_to_end(&self.params, universe, &ctxs, &mut walkers, RolloutMode::Sample)?;
            let mut branches = self.trajectories(&ctxs, walkers);
            Self::attach_rewards(universe, rewards, &mut branches)?;
            for e in 0..trajs.len() {
                let rets: Vec<f64> = branches[e * k..(e + 1) * k].iter().map(|b| b.returns[t]).collect();
                let mean = rets.iter().sum::<f64>() / k as f64;
                let var = rets.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / k as f64;
                out[e][t] = StateValue {
                    value: mean,
                    sigma: var.sqrt().max(floor),
                };
            }
        }
        Ok(out)
    }

    /// `(V, sigma)` of a single state: a candidate set and an emitted prefix.
    #[allow(clippy::too_many_arguments)]
    pub fn estimate_value(
        &self,
        universe: &ItemUniverse,
        rewards: &dyn RewardModel,
        candidates: &[usize],
        bg: &[f64],
        prefix: &[usize],
        k: usize,
        rng: &mut Rng,
    ) -> Result<StateValue> {
        let t = prefix.len();
        if t >= candidates.len() {
            return Err(Error::EpisodeComplete);
        }
        // Complete the prefix arbitrarily; only the states up to `t` matter.
        let mut slots: Vec<usize> = prefix
            .iter()
            .map(|item| {
                candidates
                    .iter()
                    .position(|c| c == item)
                    .ok_or_else(|| Error::InvalidSlate(format!("prefix item {item} is not a candidate")))
            })
            .collect::<Result<_>>()?;
        let rest: Vec<usize> = (0..candidates.len()).filter(|s| !slots.contains(s)).collect();
        slots.extend(rest);
        let traj = Trajectory {
            candidates: candidates.to_vec(),
            bg: bg.to_vec(),
            actions: slots.iter().map(|&s| candidates[s]).collect(),
            slots,
            log_probs: Vec::new(),
            rewards: Vec::new(),
            returns: Vec::new(),
        };
        let seed = rng.random();
        Ok(self.estimate_values(universe, rewards, &[traj], k, seed)?[0][t])
    }

    fn policy_pass(&self, params: &ParameterSet, universe: &ItemUniverse, trajs: &[&Trajectory]) -> Result<PolicyPass> {
        let e_count = trajs.len();
        let n = trajs[0].candidates.len();
        if trajs.iter().any(|t| t.candidates.len() != n || t.slots.len() != n) {
            return Err(Error::config("policy batch trajectories must be complete and share one length"));
        }
        let hd = self.config.hidden;
        let in_w = self.bg_dim + self.feature_dim;
        let mut xs = Vec::with_capacity(n * e_count * in_w);
        for t in 0..n {
            for tr in trajs {
                xs.extend_from_slice(&tr.bg);
                if t == 0 {
                    xs.extend(std::iter::repeat_n(0.0, self.feature_dim));
                } else {
                    xs.extend_from_slice(universe.feature(tr.actions[t - 1]));
                }
            }
        }
        let (s_in, state_in) = self.state_in.forward(params, &Tensor::from_vec(&[n * e_count, in_w], xs)?)?;
        let mut h = Tensor::zeros(&[e_count, hd]);
        let mut c = Tensor::zeros(&[e_count, hd]);
        let mut hs = Tensor::zeros(&[n * e_count, hd]);
        let mut steps = Vec::with_capacity(n);
        for t in 0..n {
            let (hn, cn, cache) = self.lstm.forward(params, &h, &c, &s_in.row_block(t * e_count, (t + 1) * e_count))?;
            hs.set_row_block(t * e_count, &hn);
            steps.push(cache);
            h = hn;
            c = cn;
        }
        let all_cands: Vec<usize> = trajs.iter().flat_map(|t| t.candidates.iter().copied()).collect();
        let (ha, act) = self.act.forward(params, &universe.gather(&all_cands))?;

        let mut rows = Vec::new();
        let mut segments = Vec::with_capacity(n * e_count);
        let mut picked = vec![vec![false; n]; e_count];
        for t in 0..n {
            for (e, tr) in trajs.iter().enumerate() {
                let start = rows.len() / (2 * hd);
                let mut slots = Vec::new();
                for (j, &done) in picked[e].iter().enumerate().take(n) {
                    if !done {
                        slots.push(j);
                        rows.extend_from_slice(ha.row(e * n + j));
                        rows.extend_from_slice(hs.row(t * e_count + e));
                    }
                }
                let chosen = slots.iter().position(|&s| s == tr.slots[t]).ok_or_else(|| Error::InvalidSlate("trajectory repeats a slot".into()))?;
                picked[e][tr.slots[t]] = true;
                segments.push((start, slots, chosen));
            }
        }
        let total = rows.len() / (2 * hd);
        let (logits, policy) = self.policy.forward(params, &Tensor::from_vec(&[total, 2 * hd], rows)?)?;
        let mut log_probs = vec![vec![0.0; n]; e_count];
        let mut probs = Vec::with_capacity(segments.len());
        for (idx, (start, slots, chosen)) in segments.iter().enumerate() {
            let (t, e) = (idx / e_count, idx % e_count);
            let z = &logits.data()[*start..start + slots.len()];
            let lp = log_softmax(z);
            log_probs[e][t] = lp[*chosen];
            probs.push(softmax(z));
        }
        Ok(PolicyPass {
            state_in,
            steps,
            act,
            policy,
            segments,
            log_probs,
            probs,
            episodes: e_count,
            len: n,
        })
    }

    /// Log-probabilities of the recorded actions under `params`.
    pub fn log_probs(&self, params: &ParameterSet, universe: &ItemUniverse, trajs: &[&Trajectory]) -> Result<Vec<Vec<f64>>> {
        if trajs.is_empty() {
            return Ok(Vec::new());
        }
        Ok(self.policy_pass(params, universe, trajs)?.log_probs)
    }

    /// `dlogp[e][t]` is the loss gradient with respect to the log-probability
    /// of the recorded action `t` of trajectory `e`.
    fn policy_backward(&self, params: &mut ParameterSet, pass: &PolicyPass, dlogp: &[Vec<f64>]) -> Result<()> {
        let (e_count, n) = (pass.episodes, pass.len);
        let hd = self.config.hidden;
        let total = pass.policy.output().rows();
        let mut dz = Tensor::zeros(&[total, 1]);
        for (idx, (start, slots, chosen)) in pass.segments.iter().enumerate() {
            let (t, e) = (idx / e_count, idx % e_count);
            let g = dlogp[e][t];
            for (i, p) in pass.probs[idx].iter().enumerate() {
                let onehot = if i == *chosen { 1.0 } else { 0.0 };
                dz.data_mut()[start + i] = g * (onehot - p);
            }
            debug_assert_eq!(slots.len(), pass.probs[idx].len());
        }
        let drows = self.policy.backward(params, &pass.policy, &dz)?;
        let mut dha = Tensor::zeros(&[e_count * n, hd]);
        let mut dhs = Tensor::zeros(&[n * e_count, hd]);
        for (idx, (start, slots, _)) in pass.segments.iter().enumerate() {
            let (t, e) = (idx / e_count, idx % e_count);
            for (i, &j) in slots.iter().enumerate() {
                let r = drows.row(start + i);
                for (d, v) in dha.row_mut(e * n + j).iter_mut().zip(&r[..hd]) {
                    *d += v;
                }
                for (d, v) in dhs.row_mut(t * e_count + e).iter_mut().zip(&r[hd..]) {
                    *d += v;
                }
            }
        }
        self.act.backward(params, &pass.act, &dha)?;
        let mut ds_in = Tensor::zeros(&[n * e_count, hd]);
        let mut dh_next = Tensor::zeros(&[e_count, hd]);
        let mut dc_next = Tensor::zeros(&[e_count, hd]);
        for t in (0..n).rev() {
            let mut dh = dhs.row_block(t * e_count, (t + 1) * e_count);
            dh.add_assign(&dh_next)?;
            let (dx, dh_prev, dc_prev) = self.lstm.backward(params, &pass.steps[t], &dh, &dc_next)?;
            ds_in.set_row_block(t * e_count, &dx);
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
        self.state_in.backward(params, &pass.state_in, &ds_in)?;
        Ok(())
    }

    /// Clipped surrogate loss
    /// `-mean_t min(r_t A_t, clip(r_t, 1 - eps, 1 + eps) A_t)` with
    /// `r_t = exp(log pi(a_t) - old_log_probs_t)`. With `grad` its gradient
    /// is accumulated into `params`.
    pub fn surrogate_loss(
        &self,
        params: &mut ParameterSet,
        universe: &ItemUniverse,
        trajs: &[&Trajectory],
        old_log_probs: &[Vec<f64>],
        advantages: &[Vec<f64>],
        grad: bool,
    ) -> Result<f64> {
        if trajs.is_empty() {
            return Ok(0.0);
        }
        let pass = self.policy_pass(params, universe, trajs)?;
        let eps = self.config.clip;
        let count = (pass.episodes * pass.len) as f64;
        let mut loss = 0.0;
        let mut dlogp = vec![vec![0.0; pass.len]; pass.episodes];
        for e in 0..pass.episodes {
            for t in 0..pass.len {
                let ratio = (pass.log_probs[e][t] - old_log_probs[e][t]).exp();
                if !ratio.is_finite() {
                    return Err(Error::NonFinite(format!("policy ratio is {ratio} at episode {e}, step {t}")));
                }
                let a = advantages[e][t];
                let unclipped = ratio * a;
                let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * a;
                if unclipped <= clipped {
                    loss -= unclipped;
                    dlogp[e][t] = -a * ratio / count;
                } else {
                    loss -= clipped;
                    if (1.0 - eps..=1.0 + eps).contains(&ratio) {
                        dlogp[e][t] = -a * ratio / count;
                    }
                }
            }
        }
        if grad {
            self.policy_backward(params, &pass, &dlogp)?;
        }
        Ok(loss / count)
    }

    /// `A_t = (return_t - V(s_t)) / sigma(s_t)`.
    pub fn advantages(trajs: &[Trajectory], values: &[Vec<StateValue>]) -> Vec<Vec<f64>> {
        trajs
            .iter()
            .zip(values)
            .map(|(tr, vs)| tr.returns.iter().zip(vs).map(|(g, v)| (g - v.value) / v.sigma).collect())
            .collect()
    }

    /// `epochs_per_batch` full-batch steps on the clipped surrogate. The
    /// behavior log-probabilities are recomputed under the current
    /// parameters first, so the first step starts from ratios of exactly 1.
    /// Returns the loss of each step.
    pub fn ppo_update(&mut self, universe: &ItemUniverse, trajs: &[Trajectory], values: &[Vec<StateValue>], opt: &mut Adam) -> Result<Vec<f64>> {
        if trajs.is_empty() {
            return Ok(Vec::new());
        }
        let refs: Vec<&Trajectory> = trajs.iter().collect();
        let old = self.log_probs(&self.params, universe, &refs)?;
        let adv = Self::advantages(trajs, values);
        let mut params = self.params.clone();
        let mut losses = Vec::with_capacity(self.config.epochs_per_batch);
        for _ in 0..self.config.epochs_per_batch {
            params.zero_grad();
            losses.push(self.surrogate_loss(&mut params, universe, &refs, &old, &adv, true)?);
            opt.update(&mut params)?;
        }
        self.params.copy_values_from(&params)?;
        Ok(losses)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint::from_params("generator", &self.params)
            .with_meta("config", serde_json::to_string(&self.config).map_err(|e| Error::config(e.to_string()))?)
            .with_meta("feature_dim", self.feature_dim)
            .with_meta("bg_dim", self.bg_dim))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.architecture != "generator" {
            return Err(Error::config(format!("expected a generator checkpoint, got `{}`", ck.architecture)));
        }
        let config: GeneratorConfig = serde_json::from_str(ck.meta("config")?).map_err(|e| Error::config(e.to_string()))?;
        let mut model = GeneratorModel::new(config, ck.meta_parse("feature_dim")?, ck.meta_parse("bg_dim")?, 0)?;
        model.params = ck.load_into(&model.params)?;
        Ok(model)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Mean return of the collected episodes under the training reward.
    pub mean_return: f64,
    pub mean_evaluator_score: f64,
    pub mean_true_score: Option<f64>,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainTrace {
    pub records: Vec<IterationRecord>,
}

impl TrainTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,mean_evaluator_score,mean_true_score\n");
        for r in &self.records {
            let t = r.mean_true_score.map(format_f64).unwrap_or_default();
            let _ = writeln!(s, "{},{},{}", r.iteration, format_f64(r.mean_evaluator_score), t);
        }
        s
    }

    /// Trailing moving average of the mean evaluator score.
    pub fn smoothed_scores(&self, window: usize) -> Vec<f64> {
        let v: Vec<f64> = self.records.iter().map(|r| r.mean_evaluator_score).collect();
        (0..v.len())
            .map(|i| {
                let lo = (i + 1).saturating_sub(window);
                v[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
            })
            .collect()
    }
}

/// Hook for the adversarial variant: reshapes rewards and learns between
/// iterations. The plain trainer uses the evaluator's rewards as they are.
pub trait Shaping {
    /// Training rewards of completed lists given their evaluator rewards.
    fn shape(&self, universe: &ItemUniverse, lists: &[&[usize]], bg: &[f64], rewards: Vec<Vec<f64>>) -> Result<Vec<Vec<f64>>>;
    /// Called once per iteration with the freshly collected episodes.
    fn after_collect(&mut self, universe: &ItemUniverse, episodes: &[Trajectory], iteration: usize) -> Result<()>;
}

pub struct NoShaping;

impl Shaping for NoShaping {
    fn shape(&self, _: &ItemUniverse, _: &[&[usize]], _: &[f64], rewards: Vec<Vec<f64>>) -> Result<Vec<Vec<f64>>> {
        Ok(rewards)
    }

    fn after_collect(&mut self, _: &ItemUniverse, _: &[Trajectory], _: usize) -> Result<()> {
        Ok(())
    }
}

struct Shaped<'a, S: Shaping + ?Sized> {
    evaluator: &'a EvaluatorModel,
    shaping: &'a S,
}

impl<S: Shaping + ?Sized> RewardModel for Shaped<'_, S> {
    fn rewards(&self, universe: &ItemUniverse, lists: &[&[usize]], bg: &[f64]) -> Result<Vec<Vec<f64>>> {
        let r = self.evaluator.score_lists(universe, lists, bg)?;
        self.shaping.shape(universe, lists, bg, r)
    }
}

/// Candidate sets for training episodes: fresh uniform draws.
pub fn training_sets(num_items: usize, list_len: usize, count: usize, seed: u64) -> Vec<Vec<usize>> {
    (0..count)
        .map(|e| sample_candidates(num_items, list_len, &mut rng::rng_from(rng::derive_index(seed, e as u64))))
        .collect()
}

/// Shared training loop of both generator variants.
#[allow(clippy::too_many_arguments)]
pub fn train_with_shaping<S: Shaping + ?Sized>(
    model: &mut GeneratorModel,
    evaluator: &EvaluatorModel,
    universe: &ItemUniverse,
    list_len: usize,
    bg: &[f64],
    rule: Option<&GroundTruthRule>,
    shaping: &mut S,
    seed: u64,
) -> Result<TrainTrace> {
    model.check_universe(universe)?;
    if list_len == 0 || list_len > universe.num_items() {
        return Err(Error::config(format!("generator list length {list_len} is not in 1..={}", universe.num_items())));
    }
    let mut opt = Adam::new(model.config.adam);
    let mut trace = TrainTrace::default();
    let cfg = model.config.clone();
    for it in 0..cfg.iterations {
        let iter_seed = rng::derive_index(rng::derive(seed, "generator.iteration"), it as u64);
        let sets = training_sets(universe.num_items(), list_len, cfg.episodes_per_batch, rng::derive(iter_seed, "sets"));
        let (episodes, values) = {
            let reward = Shaped { evaluator, shaping: &*shaping };
            let ep = model.rollout_batch(universe, &reward, &sets, bg, RolloutMode::Sample, rng::derive(iter_seed, "episodes"))?;
            let v = model.estimate_values(universe, &reward, &ep, cfg.rollouts, rng::derive(iter_seed, "values"))?;
            (ep, v)
        };
        let lists: Vec<&[usize]> = episodes.iter().map(|t| t.actions.as_slice()).collect();
        let eval_scores: Vec<f64> = evaluator.score_lists(universe, &lists, bg)?.iter().map(|p| p.iter().sum()).collect();
        let mean_true_score = match rule {
            Some(r) => Some(lists.iter().map(|l| r.true_score(universe, l)).sum::<Result<f64>>()? / lists.len() as f64),
            None => None,
        };
        shaping.after_collect(universe, &episodes, it)?;
        let losses = model.ppo_update(universe, &episodes, &values, &mut opt).map_err(|e| match e {
            Error::NonFinite(m) => Error::NonFinite(format!("generator diverged at iteration {it}: {m}")),
            other => other,
        })?;
        trace.records.push(IterationRecord {
            iteration: it,
            mean_return: episodes.iter().map(Trajectory::total_return).sum::<f64>() / episodes.len() as f64,
            mean_evaluator_score: eval_scores.iter().sum::<f64>() / eval_scores.len() as f64,
            mean_true_score,
            loss: losses.first().copied().unwrap_or(0.0),
        });
    }
    Ok(trace)
}

/// EG-Rerank: policy optimization against the frozen evaluator's rewards.
pub fn train_eg_rerank(
    model: &mut GeneratorModel,
    evaluator: &EvaluatorModel,
    universe: &ItemUniverse,
    list_len: usize,
    bg: &[f64],
    rule: Option<&GroundTruthRule>,
    seed: u64,
) -> Result<TrainTrace> {
    train_with_shaping(model, evaluator, universe, list_len, bg, rule, &mut NoShaping, seed)
}
