//! Sweeps the update threshold of integer ES training.

use super::egg_train::{run_egg_train, EggTrainSpec};
use crate::output::CsvTable;

#[derive(Debug, Clone, PartialEq)]
pub struct TuneThresholdSpec {
    pub base: EggTrainSpec,
    pub tau_scales: Vec<f64>,
}

impl Default for TuneThresholdSpec {
    fn default() -> Self {
        TuneThresholdSpec { base: EggTrainSpec { steps: 30, ..EggTrainSpec::default() }, tau_scales: vec![0.5, 1.0, 2.0, 4.0] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdPoint {
    pub tau_scale: f64,
    pub tau: i64,
    pub initial_bits: f64,
    pub final_bits: f64,
    pub mean_moved: f64,
}

pub fn run_tune_threshold(spec: &TuneThresholdSpec) -> anyhow::Result<Vec<ThresholdPoint>> {
    spec.tau_scales
        .iter()
        .map(|&tau_scale| {
            let s = EggTrainSpec { tau_scale, tau: None, ..spec.base.clone() };
            let r = run_egg_train(&s)?;
            let moved = r.steps.iter().map(|m| m.moved).sum::<u64>() as f64 / r.steps.len().max(1) as f64;
            log::info!("tune-threshold: scale {tau_scale} -> {:.4} bits/byte", r.final_bits());
            Ok(ThresholdPoint {
                tau_scale,
                tau: s.threshold(),
                initial_bits: r.initial_bits(),
                final_bits: r.final_bits(),
                mean_moved: moved,
            })
        })
        .collect()
}

/// The point with the lowest final held-out loss.
pub fn best(points: &[ThresholdPoint]) -> Option<&ThresholdPoint> {
    points.iter().min_by(|a, b| a.final_bits.total_cmp(&b.final_bits))
}

pub fn threshold_table(points: &[ThresholdPoint]) -> CsvTable {
    let mut t = CsvTable::new(
        "tune_threshold",
        1,
        &["tau_scale", "tau", "initial_bits_per_byte", "final_bits_per_byte", "mean_moved"],
    );
    for p in points {
        t.row(vec![
            format!("{}", p.tau_scale),
            p.tau.to_string(),
            format!("{:.6}", p.initial_bits),
            format!("{:.6}", p.final_bits),
            format!("{:.2}", p.mean_moved),
        ]);
    }
    t
}
