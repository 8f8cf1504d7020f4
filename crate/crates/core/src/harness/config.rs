use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{RankerSpec, ScoringConfig};
use crate::discriminator::DiscriminatorConfig;
use crate::error::{Error, Result};
use crate::evaluator::EvaluatorConfig;
use crate::generator::GeneratorConfig;
use crate::metrics::METRIC_NAMES;
use crate::sim::RuleConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UniverseConfig {
    pub num_items: usize,
    pub feature_dim: usize,
}

impl Default for UniverseConfig {
    fn default() -> Self {
        UniverseConfig {
            num_items: 200,
            feature_dim: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub num_lists: usize,
    pub list_len: usize,
    pub train_fraction: f64,
    /// Share of the training lists held out for early stopping.
    pub validation_fraction: f64,
    pub bg_dim: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            num_lists: 50_000,
            list_len: 10,
            train_fraction: 0.8,
            validation_fraction: 0.1,
            bg_dim: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    /// Test lists used per method; 0 means all.
    pub max_lists: usize,
    /// Candidate sets of the ENUMERATE-k curve.
    pub curve_sets: usize,
    pub k_grid: Vec<usize>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            max_lists: 2000,
            curve_sets: 200,
            k_grid: vec![1, 2, 5, 10, 20, 50, 100, 200, 500],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShiftConfig {
    pub strength: f64,
    pub noise: f64,
    /// Biased training lists per seed.
    pub num_lists: usize,
    /// Lists in each of the on- and off-distribution test sets.
    pub test_lists: usize,
    pub seeds: usize,
    pub evaluator: EvaluatorConfig,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        ShiftConfig {
            strength: 1.0,
            noise: 0.3,
            num_lists: 10_000,
            test_lists: 1000,
            seeds: 20,
            evaluator: EvaluatorConfig {
                hidden: 32,
                head_widths: vec![32, 16],
                max_epochs: 10,
                ..EvaluatorConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BudgetConfig {
    /// Warn when the estimated number of evaluator list scorings exceeds this.
    pub max_evaluator_calls: u64,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        BudgetConfig {
            max_evaluator_calls: 20_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Independent repetitions of the whole pipeline, each with its own data.
    pub repeat_seeds: usize,
    pub methods: Vec<RankerSpec>,
    pub metrics: Vec<String>,
    pub universe: UniverseConfig,
    pub rule: RuleConfig,
    pub dataset: DatasetConfig,
    pub evaluator: EvaluatorConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub scoring: ScoringConfig,
    pub evaluation: EvaluationConfig,
    pub shift: ShiftConfig,
    pub budget: BudgetConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::desk()
    }
}

impl ExperimentConfig {
    /// Desk-scale defaults: M=200, d=16, N=10, 50k lists.
    pub fn desk() -> Self {
        let methods = [
            "mse",
            "cross_entropy",
            "hinge",
            "pairwise_logistic",
            "pairwise_hinge",
            "listnet",
            "direct_e",
            "greedy_e",
            "enumerate_100",
            "eg_rerank",
            "eg_rerank_plus",
            "identity",
            "reverse",
            "random",
        ];
        ExperimentConfig {
            seed: 1,
            repeat_seeds: 1,
            methods: methods.iter().map(|m| m.parse().expect("known ranker")).collect(),
            metrics: METRIC_NAMES.iter().map(|m| m.to_string()).collect(),
            universe: UniverseConfig::default(),
            rule: RuleConfig::default(),
            dataset: DatasetConfig::default(),
            evaluator: EvaluatorConfig::default(),
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            scoring: ScoringConfig::default(),
            evaluation: EvaluationConfig::default(),
            shift: ShiftConfig::default(),
            budget: BudgetConfig::default(),
        }
    }

    /// The simulation's full-size constants: 1000 items of 30 features,
    /// 400k lists of 15 with a 300k/100k split.
    pub fn full_scale() -> Self {
        let mut c = ExperimentConfig::desk();
        c.universe = UniverseConfig {
            num_items: 1000,
            feature_dim: 30,
        };
        c.dataset.num_lists = 400_000;
        c.dataset.list_len = 15;
        c.dataset.train_fraction = 0.75;
        c.repeat_seeds = 10;
        c
    }

    pub fn parse(text: &str) -> Result<Self> {
        let c: ExperimentConfig = toml::from_str(text).map_err(|e| Error::config(format!("config: {}", e.message())))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ExperimentConfig::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// The effective configuration, defaults filled in.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeat_seeds == 0 {
            return Err(Error::config("repeat_seeds must be at least 1"));
        }
        if self.universe.num_items == 0 || self.universe.feature_dim == 0 {
            return Err(Error::config("universe.num_items and universe.feature_dim must be positive"));
        }
        let d = &self.dataset;
        if d.list_len == 0 || d.list_len > self.universe.num_items {
            return Err(Error::config(format!(
                "dataset.list_len must lie in 1..={} (universe.num_items), got {}",
                self.universe.num_items, d.list_len
            )));
        }
        if !(0.0..=1.0).contains(&d.train_fraction) || !(0.0..1.0).contains(&d.validation_fraction) {
            return Err(Error::config("dataset.train_fraction must lie in [0, 1] and dataset.validation_fraction in [0, 1)"));
        }
        for m in &self.metrics {
            if !METRIC_NAMES.contains(&m.as_str()) {
                return Err(Error::config(format!("metrics: unknown metric `{m}` (known: {})", METRIC_NAMES.join(", "))));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for m in &self.methods {
            if !seen.insert(m) {
                return Err(Error::config(format!("methods: `{m}` listed twice")));
            }
        }
        if self.evaluation.k_grid.is_empty() || self.evaluation.k_grid.contains(&0) {
            return Err(Error::config("evaluation.k_grid must be non-empty with every k >= 1"));
        }
        self.rule.validate()?;
        self.evaluator.validate()?;
        self.generator.validate()?;
        self.discriminator.validate()?;
        self.shift.evaluator.validate()?;
        if !(self.shift.strength >= 0.0 && self.shift.noise >= 0.0) {
            return Err(Error::config("shift.strength and shift.noise must be non-negative"));
        }
        Ok(())
    }

    /// Rough count of evaluator list scorings over one repetition.
    pub fn estimated_evaluator_calls(&self) -> u64 {
        let n = self.dataset.list_len as u64;
        let g = &self.generator;
        let per_iter = g.episodes_per_batch as u64 * (1 + n * g.rollouts as u64);
        let generators = self.methods.iter().filter(|m| matches!(m, RankerSpec::EgRerank | RankerSpec::EgRerankPlus)).count() as u64;
        let kmax = self.evaluation.k_grid.iter().copied().max().unwrap_or(1) as u64;
        let enumerate: u64 = self
            .methods
            .iter()
            .map(|m| if let RankerSpec::EnumerateK(k) = m { *k as u64 } else { 0 })
            .sum();
        generators * g.iterations as u64 * per_iter + self.evaluation.curve_sets as u64 * kmax + self.evaluation.max_lists as u64 * enumerate
    }

    /// Warnings to print with the effective-config echo.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        let calls = self.estimated_evaluator_calls();
        if calls > self.budget.max_evaluator_calls {
            w.push(format!(
                "estimated {calls} evaluator list scorings per repetition exceed budget.max_evaluator_calls = {}",
                self.budget.max_evaluator_calls
            ));
        }
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_the_desk_config() {
        assert_eq!(ExperimentConfig::parse("").unwrap(), ExperimentConfig::desk());
    }

    #[test]
    fn effective_config_round_trips() {
        let c = ExperimentConfig::full_scale();
        assert_eq!(ExperimentConfig::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_names_are_field_level_errors() {
        let e = ExperimentConfig::parse("metrics = [\"ndcg\", \"bogus\"]").unwrap_err().to_string();
        assert!(e.contains("bogus"), "{e}");
        let e = ExperimentConfig::parse("methods = [\"nope\"]").unwrap_err().to_string();
        assert!(e.contains("nope"), "{e}");
        let e = ExperimentConfig::parse("[dataset]\nlistlen = 3").unwrap_err().to_string();
        assert!(e.contains("listlen"), "{e}");
    }

    #[test]
    fn budget_guard_warns() {
        let mut c = ExperimentConfig::desk();
        assert!(c.warnings().is_empty());
        c.budget.max_evaluator_calls = 10;
        assert_eq!(c.warnings().len(), 1);
    }
}
