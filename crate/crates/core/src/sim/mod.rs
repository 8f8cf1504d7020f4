//! Ground-truth slate environment.
//!
//! Items carry i.i.d. uniform features. A hidden rule assigns the item at
//! position `i` of a list the purchase probability
//!
//! ```text
//! f_i = alpha_i * r(item_i) + beta_i * g(items_1..i),   beta_i = 1 - alpha_i
//! ```
//!
//! where `r` is a frozen random network squashed to `(0, 1)` and `g` is a
//! cosine-based mutual-influence term. The list's true score is `sum f_i`,
//! the expected number of purchases.

mod dataset;
mod rule;

pub use dataset::{
    generate_biased_dataset, generate_dataset, labels_from_probs, position_profile, relabel, sample_candidates, sample_labels, BiasPolicy,
    Dataset, Split,
};
pub use rule::{influence, BaseRateCalibration, GroundTruthRule, InfluenceMode, ListScore, RuleConfig, RunningMean};

use rand::Rng as _;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ItemUniverse {
    features: Tensor,
    seed: u64,
}

impl ItemUniverse {
    pub fn build(num_items: usize, feature_dim: usize, seed: u64) -> Result<Self> {
        if num_items == 0 || feature_dim == 0 {
            return Err(Error::config("universe needs at least one item and one feature"));
        }
        let mut r = rng::rng_for(seed, "universe.features");
        let data = (0..num_items * feature_dim).map(|_| r.random::<f64>()).collect();
        Ok(ItemUniverse {
            features: Tensor::from_vec(&[num_items, feature_dim], data)?,
            seed,
        })
    }

    /// Universe with explicit features (tests, fixtures).
    pub fn from_features(features: Tensor, seed: u64) -> Result<Self> {
        if features.shape().len() != 2 || features.is_empty() {
            return Err(Error::config("universe features must be a non-empty matrix"));
        }
        if features.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::config("universe features must lie in [0, 1]"));
        }
        Ok(ItemUniverse { features, seed })
    }

    pub fn num_items(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn feature(&self, item: usize) -> &[f64] {
        self.features.row(item)
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    /// Feature rows of `items`, in order, as a `[len, d]` matrix.
    pub fn gather(&self, items: &[usize]) -> Tensor {
        self.features.select_rows(items)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new("universe", self.seed)
            .with_meta("num_items", self.num_items())
            .with_meta("feature_dim", self.feature_dim());
        ck.tensors.insert("features".into(), self.features.clone());
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.architecture != "universe" {
            return Err(Error::config(format!("expected a universe checkpoint, got `{}`", ck.architecture)));
        }
        ItemUniverse::from_features(ck.tensor("features")?.clone(), ck.seed)
    }
}

/// An ordered list of distinct items with optional feedback labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Slate {
    pub item_ids: Vec<usize>,
    pub bg: Vec<f64>,
    pub purchases: Option<Vec<u8>>,
    pub clicks: Option<Vec<u8>>,
}

impl Slate {
    pub fn new(item_ids: Vec<usize>, bg: Vec<f64>) -> Self {
        Slate {
            item_ids,
            bg,
            purchases: None,
            clicks: None,
        }
    }

    pub fn len(&self) -> usize {
        self.item_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_ids.is_empty()
    }

    /// Same bg and labels, items in a new order. Labels are dropped because
    /// they belonged to the old layout.
    pub fn reordered(&self, item_ids: Vec<usize>) -> Slate {
        Slate::new(item_ids, self.bg.clone())
    }

    pub fn validate(&self, universe: &ItemUniverse) -> Result<()> {
        validate_items(&self.item_ids, universe)?;
        for (name, labels) in [("purchase", &self.purchases), ("click", &self.clicks)] {
            if let Some(l) = labels {
                if l.len() != self.item_ids.len() {
                    return Err(Error::InvalidSlate(format!(
                        "{name} labels have length {}, slate has {} items",
                        l.len(),
                        self.item_ids.len()
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn validate_items(items: &[usize], universe: &ItemUniverse) -> Result<()> {
    let mut seen = vec![false; universe.num_items()];
    for &id in items {
        if id >= universe.num_items() {
            return Err(Error::InvalidSlate(format!("item id {id} out of range for {} items", universe.num_items())));
        }
        if std::mem::replace(&mut seen[id], true) {
            return Err(Error::InvalidSlate(format!("duplicate item id {id}")));
        }
    }
    Ok(())
}

/// Scenario feature used in simulation: a constant vector.
pub fn default_bg(width: usize) -> Vec<f64> {
    vec![1.0; width]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn universe_is_reproducible_and_in_unit_cube() {
        let a = ItemUniverse::build(50, 8, 3).unwrap();
        let b = ItemUniverse::build(50, 8, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.features().data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_ne!(a, ItemUniverse::build(50, 8, 4).unwrap());
    }

    #[test]
    fn single_scalar_universe() {
        let u = ItemUniverse::build(1, 1, 0).unwrap();
        assert_eq!(u.features().len(), 1);
        assert!((0.0..=1.0).contains(&u.feature(0)[0]));
    }

    #[test]
    fn full_scale_universe_shape() {
        let u = ItemUniverse::build(1000, 30, 1).unwrap();
        assert_eq!(u.features().shape(), &[1000, 30]);
    }

    #[test]
    fn duplicate_and_out_of_range_ids_are_invalid() {
        let u = ItemUniverse::build(5, 2, 0).unwrap();
        assert!(validate_items(&[0, 1, 1], &u).is_err());
        assert!(validate_items(&[0, 5], &u).is_err());
        assert!(validate_items(&[4, 0, 2], &u).is_ok());
    }

    #[test]
    fn universe_checkpoint_round_trip() {
        let u = ItemUniverse::build(7, 3, 5).unwrap();
        let ck = Checkpoint::parse(&u.to_checkpoint().to_text(), "mem").unwrap();
        assert_eq!(ItemUniverse::from_checkpoint(&ck).unwrap(), u);
    }
}
