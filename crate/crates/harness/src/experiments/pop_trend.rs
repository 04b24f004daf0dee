//! Large population against a population of two at equal data per step:
//! the pair sees as many sequences as the large population by evaluating
//! each member on more of them.

use super::egg_train::{run_egg_train, EggTrainSpec};
use crate::output::CsvTable;

#[derive(Debug, Clone, PartialEq)]
pub struct PopTrendSpec {
    /// The large arm; the small arm copies it with `pop_size = 2`.
    pub base: EggTrainSpec,
    pub seeds: Vec<u64>,
}

impl Default for PopTrendSpec {
    fn default() -> Self {
        PopTrendSpec {
            base: EggTrainSpec { layers: 1, log4_dim: 2, steps: 100, ..EggTrainSpec::default() },
            seeds: (0..5).collect(),
        }
    }
}

impl PopTrendSpec {
    pub fn small_arm(&self) -> EggTrainSpec {
        let big = self.base.train_config();
        let small_groups = 2usize.div_ceil(self.base.reuse_factor);
        EggTrainSpec {
            pop_size: 2,
            evals_per_member: (big.sequences() / small_groups).max(1),
            ..self.base.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopTrendRow {
    pub seed: u64,
    pub large_bits: f64,
    pub small_bits: f64,
}

impl PopTrendRow {
    pub fn large_wins(&self) -> bool {
        self.large_bits < self.small_bits
    }
}

pub fn run_pop_trend(spec: &PopTrendSpec) -> anyhow::Result<Vec<PopTrendRow>> {
    let small = spec.small_arm();
    anyhow::ensure!(
        small.train_config().sequences() == spec.base.train_config().sequences(),
        "cannot match data per step: {} vs {} sequences",
        small.train_config().sequences(),
        spec.base.train_config().sequences()
    );
    spec.seeds
        .iter()
        .map(|&seed| {
            let large = run_egg_train(&EggTrainSpec { seed, ..spec.base.clone() })?.final_bits();
            let small = run_egg_train(&EggTrainSpec { seed, ..small.clone() })?.final_bits();
            log::info!("pop-trend seed {seed}: N={} {large:.4}, N=2 {small:.4}", spec.base.pop_size);
            Ok(PopTrendRow { seed, large_bits: large, small_bits: small })
        })
        .collect()
}

pub fn pop_trend_table(rows: &[PopTrendRow], large_pop: usize) -> CsvTable {
    let mut t = CsvTable::new("pop_trend", 1, &["seed", "large_pop", "large_bits_per_byte", "pair_bits_per_byte"]);
    for r in rows {
        t.row(vec![
            r.seed.to_string(),
            large_pop.to_string(),
            format!("{:.6}", r.large_bits),
            format!("{:.6}", r.small_bits),
        ]);
    }
    t
}
