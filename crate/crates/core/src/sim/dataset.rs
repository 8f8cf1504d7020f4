use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::sim::{default_bg, GroundTruthRule, ItemUniverse, Slate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
    /// Lists collected by a biased ordering policy.
    Biased,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
            Split::Biased => "biased",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            "biased" => Ok(Split::Biased),
            other => Err(Error::config(format!("unknown split `{other}`"))),
        }
    }
}

/// Purchase and click labels drawn independently per position:
/// `purchase ~ Bernoulli(f)`, `click ~ Bernoulli(sqrt(f))`.
pub fn labels_from_probs(f: &[f64], rng: &mut Rng) -> (Vec<u8>, Vec<u8>) {
    let mut purchases = Vec::with_capacity(f.len());
    let mut clicks = Vec::with_capacity(f.len());
    for &p in f {
        purchases.push(u8::from(rng.random::<f64>() < p));
        clicks.push(u8::from(rng.random::<f64>() < p.sqrt()));
    }
    (purchases, clicks)
}

pub fn sample_labels(rule: &GroundTruthRule, universe: &ItemUniverse, slate: &Slate, rng: &mut Rng) -> Result<(Vec<u8>, Vec<u8>)> {
    let score = rule.score_list(universe, slate)?;
    Ok(labels_from_probs(&score.per_position, rng))
}

/// Same order, fresh labels: the feedback a reordered list would receive.
pub fn relabel(rule: &GroundTruthRule, universe: &ItemUniverse, slate: &Slate, rng: &mut Rng) -> Result<Slate> {
    let (p, c) = sample_labels(rule, universe, slate, rng)?;
    Ok(Slate {
        item_ids: slate.item_ids.clone(),
        bg: slate.bg.clone(),
        purchases: Some(p),
        clicks: Some(c),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub split: Split,
    pub seed: u64,
    pub universe_seed: u64,
    pub rule_seed: u64,
    pub list_len: usize,
    pub num_items: usize,
    pub feature_dim: usize,
    pub slates: Vec<Slate>,
}

const HEADER: &str = "#reranklab-dataset v1";

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn split_field<T: FromStr>(field: &str) -> Option<Vec<T>> {
    if field.is_empty() {
        return Some(Vec::new());
    }
    field.split(',').map(|s| s.parse().ok()).collect()
}

impl Dataset {
    pub fn empty(split: Split, seed: u64, universe: &ItemUniverse, rule: &GroundTruthRule) -> Self {
        Dataset {
            split,
            seed,
            universe_seed: universe.seed(),
            rule_seed: rule.seed(),
            list_len: rule.list_len(),
            num_items: universe.num_items(),
            feature_dim: universe.feature_dim(),
            slates: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.slates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slates.is_empty()
    }

    /// Labels present and ids valid for every slate.
    pub fn validate(&self, universe: &ItemUniverse) -> Result<()> {
        if universe.num_items() != self.num_items || universe.feature_dim() != self.feature_dim {
            return Err(Error::config(format!(
                "dataset was generated for {}x{} features, universe is {}x{}",
                self.num_items,
                self.feature_dim,
                universe.num_items(),
                universe.feature_dim()
            )));
        }
        for (i, s) in self.slates.iter().enumerate() {
            s.validate(universe)?;
            if s.purchases.is_none() || s.clicks.is_none() {
                return Err(Error::InvalidSlate(format!("list {i} of the {} split has no labels", self.split)));
            }
        }
        Ok(())
    }

    /// Move the last `fraction` of lists into a new dataset with the given split tag.
    pub fn split_off_tail(&mut self, fraction: f64, split: Split) -> Dataset {
        let n = (self.slates.len() as f64 * fraction).round() as usize;
        let tail = self.slates.split_off(self.slates.len() - n.min(self.slates.len()));
        Dataset {
            split,
            slates: tail,
            ..self.clone_header()
        }
    }

    fn clone_header(&self) -> Dataset {
        Dataset {
            split: self.split,
            seed: self.seed,
            universe_seed: self.universe_seed,
            rule_seed: self.rule_seed,
            list_len: self.list_len,
            num_items: self.num_items,
            feature_dim: self.feature_dim,
            slates: Vec::new(),
        }
    }

    /// The first `n` lists (all of them if fewer).
    pub fn head(&self, n: usize) -> Dataset {
        Dataset {
            slates: self.slates.iter().take(n).cloned().collect(),
            ..self.clone_header()
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{HEADER} split={} universe_seed={} rule_seed={} n={} m={} d={} seed={} count={}",
            self.split,
            self.universe_seed,
            self.rule_seed,
            self.list_len,
            self.num_items,
            self.feature_dim,
            self.seed,
            self.slates.len()
        );
        for (i, sl) in self.slates.iter().enumerate() {
            let labels = |l: &Option<Vec<u8>>| l.as_deref().map(join).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                s,
                "{i}\t{}\t{}\t{}\t{}",
                join(&sl.item_ids),
                labels(&sl.purchases),
                labels(&sl.clicks),
                join(&sl.bg)
            );
        }
        s
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::parse(origin, line, msg);
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| err(1, "empty dataset file".into()))?;
        let fields = header
            .strip_prefix(HEADER)
            .ok_or_else(|| err(1, format!("missing `{HEADER}` header")))?;
        let mut kv = std::collections::BTreeMap::new();
        for tok in fields.split_whitespace() {
            let (k, v) = tok.split_once('=').ok_or_else(|| err(1, format!("bad header field `{tok}`")))?;
            kv.insert(k, v);
        }
        let get = |k: &str| -> Result<&str> { kv.get(k).copied().ok_or_else(|| err(1, format!("header lacks `{k}`"))) };
        let num = |k: &str| -> Result<u64> { get(k)?.parse().map_err(|_| err(1, format!("header field `{k}` is not a number"))) };
        let count = num("count")? as usize;
        let mut ds = Dataset {
            split: get("split")?.parse().map_err(|e: Error| err(1, e.to_string()))?,
            seed: num("seed")?,
            universe_seed: num("universe_seed")?,
            rule_seed: num("rule_seed")?,
            list_len: num("n")? as usize,
            num_items: num("m")? as usize,
            feature_dim: num("d")? as usize,
            slates: Vec::with_capacity(count),
        };
        for (ln, line) in lines.enumerate().map(|(i, l)| (i + 2, l)) {
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 5 {
                return Err(err(ln, format!("expected 5 tab-separated fields, found {}", cols.len())));
            }
            let items = split_field(cols[1]).ok_or_else(|| err(ln, "bad item ids".into()))?;
            let labels = |c: &str| -> Result<Option<Vec<u8>>> {
                if c == "-" {
                    return Ok(None);
                }
                let v: Vec<u8> = split_field(c).ok_or_else(|| err(ln, "bad labels".into()))?;
                if v.iter().any(|&b| b > 1) {
                    return Err(err(ln, "labels must be 0 or 1".into()));
                }
                Ok(Some(v))
            };
            let purchases = labels(cols[2])?;
            let clicks = labels(cols[3])?;
            let bg = split_field(cols[4]).ok_or_else(|| err(ln, "bad scenario feature".into()))?;
            ds.slates.push(Slate {
                item_ids: items,
                bg,
                purchases,
                clicks,
            });
        }
        if ds.slates.len() != count {
            return Err(err(1, format!("header announces {count} lists, file has {}", ds.slates.len())));
        }
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Dataset::parse(&text, &path.display().to_string())
    }
}

fn check_list_len(universe: &ItemUniverse, rule: &GroundTruthRule, list_len: usize) -> Result<()> {
    if list_len > universe.num_items() {
        return Err(Error::config(format!(
            "list length N={list_len} exceeds the universe size M={}",
            universe.num_items()
        )));
    }
    if list_len != rule.list_len() {
        return Err(Error::config(format!(
            "list length N={list_len} differs from the rule's N={}",
            rule.list_len()
        )));
    }
    Ok(())
}

/// Uniformly sampled distinct items in uniformly random order.
pub fn sample_candidates(num_items: usize, list_len: usize, rng: &mut Rng) -> Vec<usize> {
    index::sample(rng, num_items, list_len).into_vec()
}

fn labeled(rule: &GroundTruthRule, universe: &ItemUniverse, items: Vec<usize>, bg_dim: usize, rng: &mut Rng) -> Result<Slate> {
    let score = rule.score_items(universe, &items)?;
    let (p, c) = labels_from_probs(&score.per_position, rng);
    Ok(Slate {
        item_ids: items,
        bg: default_bg(bg_dim),
        purchases: Some(p),
        clicks: Some(c),
    })
}

/// Uniform random lists, labeled by the rule, split into train and test.
/// List `i` uses its own stream derived from `(seed, i)`.
pub fn generate_dataset(
    universe: &ItemUniverse,
    rule: &GroundTruthRule,
    num_lists: usize,
    list_len: usize,
    train_fraction: f64,
    bg_dim: usize,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    check_list_len(universe, rule, list_len)?;
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::config("dataset.train_fraction must lie in [0, 1]"));
    }
    let num_train = (num_lists as f64 * train_fraction).round() as usize;
    let mut train = Dataset::empty(Split::Train, seed, universe, rule);
    let mut test = Dataset::empty(Split::Test, seed, universe, rule);
    for i in 0..num_lists {
        let mut r = rng::rng_from(rng::derive_index(seed, i as u64));
        let items = sample_candidates(universe.num_items(), list_len, &mut r);
        let slate = labeled(rule, universe, items, bg_dim, &mut r)?;
        if i < num_train {
            train.slates.push(slate);
        } else {
            test.slates.push(slate);
        }
    }
    Ok((train, test))
}

/// Ordering policy for collected data: candidates are sorted by
/// `strength * h(x) + noise * e` descending, where `h` is a fixed linear
/// heuristic with unit variance over uniform features and `e ~ N(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasPolicy {
    pub strength: f64,
    pub noise: f64,
    weights: Vec<f64>,
}

impl BiasPolicy {
    pub fn new(strength: f64, noise: f64, feature_dim: usize, seed: u64) -> Result<Self> {
        if !(strength >= 0.0 && noise >= 0.0) {
            return Err(Error::config("bias strength and noise must be non-negative"));
        }
        let mut r = rng::rng_for(seed, "bias.heuristic");
        let mut w: Vec<f64> = (0..feature_dim).map(|_| StandardNormal.sample(&mut r)).collect();
        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        // Var(x - 0.5) = 1/12 per coordinate for uniform features.
        let scale = 12f64.sqrt() / norm;
        w.iter_mut().for_each(|v| *v *= scale);
        Ok(BiasPolicy { strength, noise, weights: w })
    }

    pub fn heuristic(&self, feature: &[f64]) -> f64 {
        self.weights.iter().zip(feature).map(|(w, x)| w * (x - 0.5)).sum()
    }

    pub fn order(&self, universe: &ItemUniverse, items: &[usize], rng: &mut Rng) -> Vec<usize> {
        let mut keyed: Vec<(f64, usize)> = items
            .iter()
            .map(|&i| {
                let e: f64 = StandardNormal.sample(rng);
                (self.strength * self.heuristic(universe.feature(i)) + self.noise * e, i)
            })
            .collect();
        keyed.sort_by(|a, b| b.0.total_cmp(&a.0));
        keyed.into_iter().map(|(_, i)| i).collect()
    }
}

/// Lists with uniform candidate sets whose order comes from `policy`.
pub fn generate_biased_dataset(
    universe: &ItemUniverse,
    rule: &GroundTruthRule,
    policy: &BiasPolicy,
    num_lists: usize,
    list_len: usize,
    bg_dim: usize,
    seed: u64,
) -> Result<Dataset> {
    check_list_len(universe, rule, list_len)?;
    let mut ds = Dataset::empty(Split::Biased, seed, universe, rule);
    for i in 0..num_lists {
        let mut r = rng::rng_from(rng::derive_index(seed, i as u64));
        let cands = sample_candidates(universe.num_items(), list_len, &mut r);
        let items = policy.order(universe, &cands, &mut r);
        ds.slates.push(labeled(rule, universe, items, bg_dim, &mut r)?);
    }
    Ok(ds)
}

/// Mean true conversion probability at each position.
pub fn position_profile(dataset: &Dataset, universe: &ItemUniverse, rule: &GroundTruthRule) -> Result<Vec<f64>> {
    if dataset.is_empty() {
        return Err(Error::InsufficientData("position profile of an empty dataset".into()));
    }
    let width = dataset.slates.iter().map(Slate::len).max().unwrap_or(0);
    let mut sums = vec![0.0; width];
    let mut counts = vec![0usize; width];
    for s in &dataset.slates {
        for (k, f) in rule.score_list(universe, s)?.per_position.into_iter().enumerate() {
            sums[k] += f;
            counts[k] += 1;
        }
    }
    Ok(sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect())
}
