use serde::{Deserialize, Serialize};

use crate::checkpoint::{format_f64, Checkpoint};
use crate::error::{Error, Result};
use crate::nn::{sigmoid, Activation, Mlp};
use crate::params::ParameterSet;
use crate::rng;
use crate::sim::{validate_items, ItemUniverse, Slate};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InfluenceMode {
    /// `g = clamp(1 - cos, 0, 1)`: rewards items unlike what came before.
    Dissimilar,
    /// `g = clamp(cos, 0, 1)`: rewards items like what came before.
    Similar,
}

/// Whether the running mean compared against item `i` includes item `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunningMean {
    Inclusive,
    Exclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BaseRateCalibration {
    /// `r = sigmoid(net(x))`.
    Raw,
    /// The net's output is standardized over the universe once, then
    /// `r = sigmoid(spread * z + logit(target_mean))`.
    Standardized { spread: f64, target_mean: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RuleConfig {
    pub alpha_first: f64,
    pub alpha_last: f64,
    pub influence_mode: InfluenceMode,
    pub running_mean: RunningMean,
    /// Measure cosines on `x - 0.5` rather than on raw features.
    pub center_features: bool,
    /// Use only the first `influence_dims` coordinates for `g` (0 = all).
    pub influence_dims: usize,
    pub base_rate_hidden: usize,
    pub calibration: BaseRateCalibration,
}

impl Default for RuleConfig {
    fn default() -> Self {
        RuleConfig {
            alpha_first: 1.0,
            alpha_last: 0.4,
            influence_mode: InfluenceMode::Similar,
            running_mean: RunningMean::Exclusive,
            center_features: true,
            influence_dims: 4,
            base_rate_hidden: 32,
            calibration: BaseRateCalibration::Standardized {
                spread: 0.75,
                target_mean: 0.47,
            },
        }
    }
}

impl RuleConfig {
    /// Penalize similarity to an inclusive running mean over raw features.
    pub fn dissimilar_inclusive() -> Self {
        RuleConfig {
            influence_mode: InfluenceMode::Dissimilar,
            running_mean: RunningMean::Inclusive,
            center_features: false,
            influence_dims: 0,
            ..RuleConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = 0.0..=1.0;
        if !unit.contains(&self.alpha_first) || !unit.contains(&self.alpha_last) {
            return Err(Error::config("rule.alpha_first and rule.alpha_last must lie in [0, 1]"));
        }
        if self.alpha_first < self.alpha_last {
            return Err(Error::config("rule.alpha_first must be >= rule.alpha_last (alpha decreases with position)"));
        }
        if self.base_rate_hidden == 0 {
            return Err(Error::config("rule.base_rate_hidden must be positive"));
        }
        if let BaseRateCalibration::Standardized { spread, target_mean } = self.calibration {
            if !(spread >= 0.0 && spread.is_finite()) || !(target_mean > 0.0 && target_mean < 1.0) {
                return Err(Error::config("rule.calibration needs spread >= 0 and 0 < target_mean < 1"));
            }
        }
        Ok(())
    }
}

/// Cosine-based mutual influence of `x` against `mean`. A zero vector on
/// either side makes the cosine undefined; it is taken as 0 so that `g = 0`
/// in both modes.
pub fn influence(mode: InfluenceMode, x: &[f64], mean: &[f64]) -> f64 {
    let dot: f64 = x.iter().zip(mean).map(|(a, b)| a * b).sum();
    let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
    if nx == 0.0 || nm == 0.0 {
        return 0.0;
    }
    let cos = (dot / (nx * nm)).clamp(-1.0, 1.0);
    match mode {
        InfluenceMode::Dissimilar => (1.0 - cos).clamp(0.0, 1.0),
        InfluenceMode::Similar => cos.clamp(0.0, 1.0),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ListScore {
    pub per_position: Vec<f64>,
    pub total: f64,
}

/// The hidden scoring rule. Frozen after construction.
#[derive(Debug, Clone)]
pub struct GroundTruthRule {
    config: RuleConfig,
    list_len: usize,
    alphas: Vec<f64>,
    net: Mlp,
    params: ParameterSet,
    logit_mean: f64,
    logit_std: f64,
    base_rates: Vec<f64>,
}

fn linear_alphas(first: f64, last: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![first; n];
    }
    (0..n)
        .map(|i| first + (last - first) * i as f64 / (n - 1) as f64)
        .collect()
}

fn base_rate_net(config: &RuleConfig, feature_dim: usize) -> Mlp {
    let h = config.base_rate_hidden;
    Mlp::with_output("rule.base", &[feature_dim, h, h, 1], Activation::Tanh, Activation::None)
}

impl GroundTruthRule {
    pub fn new(universe: &ItemUniverse, list_len: usize, config: RuleConfig, seed: u64) -> Result<Self> {
        let net = base_rate_net(&config, universe.feature_dim());
        let mut params = ParameterSet::new(rng::derive(seed, "rule.base_rate"));
        net.init(&mut params)?;
        Self::with_params(universe, list_len, config, params)
    }

    /// Rule with explicit base-rate network parameters.
    pub fn with_params(universe: &ItemUniverse, list_len: usize, config: RuleConfig, params: ParameterSet) -> Result<Self> {
        config.validate()?;
        if list_len == 0 {
            return Err(Error::config("list length must be positive"));
        }
        let net = base_rate_net(&config, universe.feature_dim());
        let logits = net.infer(&params, universe.features())?.into_data();
        let n = logits.len() as f64;
        let logit_mean = logits.iter().sum::<f64>() / n;
        let logit_std = (logits.iter().map(|z| (z - logit_mean).powi(2)).sum::<f64>() / n).sqrt();
        let mut rule = GroundTruthRule {
            alphas: linear_alphas(config.alpha_first, config.alpha_last, list_len),
            config,
            list_len,
            net,
            params,
            logit_mean,
            logit_std,
            base_rates: Vec::new(),
        };
        rule.base_rates = logits.iter().map(|&z| rule.squash(z)).collect();
        Ok(rule)
    }

    fn squash(&self, z: f64) -> f64 {
        match self.config.calibration {
            BaseRateCalibration::Raw => sigmoid(z),
            BaseRateCalibration::Standardized { spread, target_mean } => {
                let standardized = if self.logit_std > 0.0 {
                    (z - self.logit_mean) / self.logit_std
                } else {
                    0.0
                };
                let shift = (target_mean / (1.0 - target_mean)).ln();
                sigmoid(spread * standardized + shift)
            }
        }
    }

    pub fn config(&self) -> &RuleConfig {
        &self.config
    }

    pub fn list_len(&self) -> usize {
        self.list_len
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn seed(&self) -> u64 {
        self.params.seed()
    }

    /// Position weights, position 1 first.
    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn beta(&self, position: usize) -> f64 {
        1.0 - self.alphas[position]
    }

    /// Base conversion rate of a universe item.
    pub fn base_rate(&self, item: usize) -> f64 {
        self.base_rates[item]
    }

    /// Base conversion rate of an arbitrary feature vector.
    pub fn base_rate_of(&self, feature: &[f64]) -> Result<f64> {
        let z = self.net.infer(&self.params, &Tensor::row_vector(feature.to_vec()))?;
        Ok(self.squash(z.data()[0]))
    }

    fn influence_view(&self, x: &[f64]) -> Vec<f64> {
        let dims = match self.config.influence_dims {
            0 => x.len(),
            k => k.min(x.len()),
        };
        if self.config.center_features {
            x[..dims].iter().map(|v| v - 0.5).collect()
        } else {
            x[..dims].to_vec()
        }
    }

    /// `g` for the item at 1-based position `i` of a list with the given
    /// feature rows.
    pub fn mutual_influence(&self, list_features: &[&[f64]], i: usize) -> Result<f64> {
        if i == 0 || i > list_features.len() {
            return Err(Error::config(format!("position {i} outside 1..={}", list_features.len())));
        }
        let x = self.influence_view(list_features[i - 1]);
        let upto = match self.config.running_mean {
            RunningMean::Inclusive => i,
            RunningMean::Exclusive => i - 1,
        };
        let mut mean = vec![0.0; x.len()];
        for f in &list_features[..upto] {
            for (m, v) in mean.iter_mut().zip(self.influence_view(f)) {
                *m += v;
            }
        }
        if upto > 0 {
            mean.iter_mut().for_each(|m| *m /= upto as f64);
        }
        Ok(influence(self.config.influence_mode, &x, &mean))
    }

    /// Per-position purchase probabilities and their sum.
    pub fn score_items(&self, universe: &ItemUniverse, items: &[usize]) -> Result<ListScore> {
        validate_items(items, universe)?;
        if items.len() > self.list_len {
            return Err(Error::InvalidSlate(format!(
                "slate has {} items, rule is defined for lists of at most {}",
                items.len(),
                self.list_len
            )));
        }
        let mut per_position = Vec::with_capacity(items.len());
        let mut sum: Vec<f64> = Vec::new();
        for (pos, &item) in items.iter().enumerate() {
            let x = self.influence_view(universe.feature(item));
            if sum.is_empty() {
                sum = vec![0.0; x.len()];
            }
            let g = match self.config.running_mean {
                RunningMean::Inclusive => {
                    sum.iter_mut().zip(&x).for_each(|(s, v)| *s += v);
                    influence(self.config.influence_mode, &x, &sum)
                }
                RunningMean::Exclusive => {
                    let g = influence(self.config.influence_mode, &x, &sum);
                    sum.iter_mut().zip(&x).for_each(|(s, v)| *s += v);
                    g
                }
            };
            // The cosine is scale-free, so the running sum stands in for the mean.
            let a = self.alphas[pos];
            let f = (a * self.base_rates[item] + (1.0 - a) * g).clamp(0.0, 1.0);
            per_position.push(f);
        }
        let total = per_position.iter().sum();
        Ok(ListScore { per_position, total })
    }

    pub fn score_list(&self, universe: &ItemUniverse, slate: &Slate) -> Result<ListScore> {
        self.score_items(universe, &slate.item_ids)
    }

    pub fn true_score(&self, universe: &ItemUniverse, items: &[usize]) -> Result<f64> {
        Ok(self.score_items(universe, items)?.total)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::from_params("rule", &self.params)
            .with_meta("list_len", self.list_len)
            .with_meta("config", serde_json::to_string(&self.config).map_err(|e| Error::config(e.to_string()))?)
            .with_meta("logit_mean", format_f64(self.logit_mean))
            .with_meta("logit_std", format_f64(self.logit_std));
        ck.tensors.insert("alphas".into(), Tensor::from_vec(&[self.alphas.len()], self.alphas.clone())?);
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint, universe: &ItemUniverse) -> Result<Self> {
        if ck.architecture != "rule" {
            return Err(Error::config(format!("expected a rule checkpoint, got `{}`", ck.architecture)));
        }
        let config: RuleConfig = serde_json::from_str(ck.meta("config")?).map_err(|e| Error::config(e.to_string()))?;
        let list_len: usize = ck.meta_parse("list_len")?;
        let net = base_rate_net(&config, universe.feature_dim());
        let mut template = ParameterSet::new(ck.seed);
        net.init(&mut template)?;
        let mut stripped = ck.clone();
        stripped.tensors.remove("alphas");
        let params = stripped.load_into(&template)?;
        let rule = Self::with_params(universe, list_len, config, params)?;
        let saved_mean: f64 = ck.meta_parse("logit_mean")?;
        if saved_mean.to_bits() != rule.logit_mean.to_bits() {
            return Err(Error::config("rule checkpoint does not match this universe (calibration differs)"));
        }
        Ok(rule)
    }
}
