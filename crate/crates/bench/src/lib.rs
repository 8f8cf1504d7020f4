//! Fixtures shared by the benchmarks.

use reranklab::evaluator::{EvaluatorConfig, EvaluatorModel};
use reranklab::generator::{training_sets, GeneratorConfig, GeneratorModel};
use reranklab::sim::{GroundTruthRule, ItemUniverse, RuleConfig};

pub struct Fixture {
    pub universe: ItemUniverse,
    pub rule: GroundTruthRule,
    pub evaluator: EvaluatorModel,
    pub generator: GeneratorModel,
    pub sets: Vec<Vec<usize>>,
}

/// Desk-sized universe (200 items, 16 features) with untrained models of
/// width `hidden` and `count` candidate sets of `list_len`.
pub fn fixture(hidden: usize, list_len: usize, count: usize) -> Fixture {
    let universe = ItemUniverse::build(200, 16, 1).expect("universe");
    let rule = GroundTruthRule::new(&universe, list_len, RuleConfig::default(), 2).expect("rule");
    let evaluator = EvaluatorModel::new(
        EvaluatorConfig {
            hidden,
            head_widths: vec![hidden, hidden / 2],
            ..EvaluatorConfig::default()
        },
        16,
        1,
        3,
    )
    .expect("evaluator");
    let generator = GeneratorModel::new(
        GeneratorConfig {
            hidden,
            head_widths: vec![hidden, hidden / 2],
            ..GeneratorConfig::default()
        },
        16,
        1,
        4,
    )
    .expect("generator");
    let sets = training_sets(200, list_len, count, 5);
    Fixture {
        universe,
        rule,
        evaluator,
        generator,
        sets,
    }
}
