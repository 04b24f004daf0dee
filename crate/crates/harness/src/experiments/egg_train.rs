//! Integer ES pretraining of EGG on a byte corpus.

use std::path::PathBuf;

use eggroll::egg::{init_params, noise_table, write_egg_checkpoint, EggDims, EggParams};
use eggroll::int_es::{evaluate_corpus, IntStepMetrics, IntTrainConfig, IntTrainer};
use eggroll::prng::{derive_stream, StreamTag};

use crate::corpus;
use crate::output::CsvTable;

#[derive(Debug, Clone, PartialEq)]
pub enum CorpusSource {
    Synthetic { len: usize },
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EggTrainSpec {
    pub layers: usize,
    pub log4_dim: u32,
    pub pop_size: usize,
    pub sigma_shift: u32,
    /// Threshold in units of the noise-only spread of `E`, `512·√(N/2)`.
    pub tau_scale: f64,
    /// Absolute threshold; overrides `tau_scale` when set.
    pub tau: Option<i64>,
    pub segment_len: usize,
    pub reuse_factor: usize,
    pub evals_per_member: usize,
    pub steps: u64,
    pub seed: u64,
    pub corpus: CorpusSource,
    pub held_out: usize,
    /// Held-out evaluation every this many steps (0: only first and last).
    pub eval_every: u64,
    pub noise_table_len: usize,
    /// Record wall-clock seconds; off by default so outputs are reproducible.
    pub timing: bool,
}

impl Default for EggTrainSpec {
    fn default() -> Self {
        EggTrainSpec {
            layers: 6,
            log4_dim: 3,
            pop_size: 512,
            sigma_shift: 4,
            tau_scale: 1.0,
            tau: None,
            segment_len: 16,
            reuse_factor: 2,
            evals_per_member: 1,
            steps: 300,
            seed: 0,
            corpus: CorpusSource::Synthetic { len: 1 << 20 },
            held_out: 1 << 16,
            eval_every: 0,
            noise_table_len: 1 << 20,
            timing: false,
        }
    }
}

impl EggTrainSpec {
    pub fn threshold(&self) -> i64 {
        self.tau.unwrap_or_else(|| {
            let pairs = (self.pop_size / 2).max(1) as f64;
            (self.tau_scale * 512.0 * pairs.sqrt()).round().max(1.0) as i64
        })
    }

    pub fn train_config(&self) -> IntTrainConfig {
        IntTrainConfig {
            pop_size: self.pop_size,
            sigma_shift: self.sigma_shift,
            threshold: self.threshold(),
            segment_len: self.segment_len,
            reuse_factor: self.reuse_factor,
            evals_per_member: self.evals_per_member,
            master_seed: self.seed,
            noise_table_len: self.noise_table_len,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EggTrainResult {
    pub steps: Vec<IntStepMetrics>,
    /// `(step, held-out bits/byte)`; step `k` means after `k` updates.
    pub held_out_bits: Vec<(u64, f64)>,
    pub params: EggParams,
    pub timing: bool,
}

pub fn bits_per_byte(loss_sum: i64, count: u64) -> f64 {
    -(loss_sum as f64) / 16.0 / count as f64
}

impl EggTrainResult {
    /// Mean training loss per step in bits/byte (population average).
    pub fn train_bits(&self) -> Vec<f64> {
        self.steps.iter().map(|m| bits_per_byte(m.loss_sum, m.tokens)).collect()
    }

    pub fn initial_bits(&self) -> f64 {
        self.held_out_bits.first().map(|p| p.1).unwrap_or(f64::NAN)
    }

    pub fn final_bits(&self) -> f64 {
        self.held_out_bits.last().map(|p| p.1).unwrap_or(f64::NAN)
    }

    pub fn metrics_table(&self) -> CsvTable {
        let mut t = CsvTable::new(
            "egg_train",
            1,
            &["step", "mean_loss_sixteenth_bits", "bits_per_byte", "held_out_bits_per_byte", "moved", "wall_time_s"],
        );
        for m in &self.steps {
            let held = self
                .held_out_bits
                .iter()
                .find(|(s, _)| *s == m.step + 1)
                .map(|(_, b)| format!("{b:.6}"))
                .unwrap_or_default();
            let wall = if self.timing { format!("{:.4}", m.elapsed.as_secs_f64()) } else { "0".into() };
            t.row(vec![
                m.step.to_string(),
                format!("{:.4}", m.loss_sum as f64 / m.tokens as f64),
                format!("{:.6}", bits_per_byte(m.loss_sum, m.tokens)),
                held,
                m.moved.to_string(),
                wall,
            ]);
        }
        t
    }

    pub fn checkpoint_bytes(&self, seed: u64) -> anyhow::Result<Vec<u8>> {
        let mut buf = Vec::new();
        write_egg_checkpoint(&mut buf, &self.params, seed, self.steps.len() as u64)?;
        Ok(buf)
    }
}

pub fn load_corpus(source: &CorpusSource, seed: u64) -> anyhow::Result<Vec<u8>> {
    match source {
        CorpusSource::Synthetic { len } => Ok(corpus::generate_synthetic(seed, *len)),
        CorpusSource::File(p) => corpus::load(p),
    }
}

pub fn run_egg_train(spec: &EggTrainSpec) -> anyhow::Result<EggTrainResult> {
    let dims = EggDims::new(spec.layers, spec.log4_dim)?;
    // the corpus is part of the task, not the seed under test
    let bytes = load_corpus(&spec.corpus, 0)?;
    let (train, held) = corpus::split(&bytes, spec.held_out)?;
    let cfg = spec.train_config();
    let params = init_params(dims, derive_stream(spec.seed, 0, 0, 0, StreamTag::Init))?;
    let noise = noise_table(derive_stream(spec.seed, 0, 1, 0, StreamTag::Init), cfg.noise_table_len)?;
    log::info!(
        "egg-train: l={} D={} N={} tau={} sigma_shift={} params={}",
        dims.layers,
        dims.hidden(),
        cfg.pop_size,
        cfg.threshold,
        cfg.sigma_shift,
        dims.param_count()
    );
    let eval = |p: &EggParams| {
        let (s, n) = evaluate_corpus(p, held);
        bits_per_byte(s, n)
    };
    let mut held_out_bits = vec![(0, eval(&params))];
    let mut trainer = IntTrainer::new(cfg, params, noise, train.len())?;
    let mut steps = Vec::with_capacity(spec.steps as usize);
    for k in 1..=spec.steps {
        let m = trainer.train_step(train)?;
        log::debug!("step {}: {:.4} bits/byte, moved {}", m.step, bits_per_byte(m.loss_sum, m.tokens), m.moved);
        steps.push(m);
        if k == spec.steps || (spec.eval_every > 0 && k % spec.eval_every == 0) {
            let b = eval(&trainer.params);
            log::info!("step {k}: held-out {b:.4} bits/byte");
            held_out_bits.push((k, b));
        }
    }
    Ok(EggTrainResult { steps, held_out_bits, params: trainer.params, timing: spec.timing })
}

/// Fraction of steps where the trailing `window`-step moving average rises.
pub fn moving_average_violations(series: &[f64], window: usize) -> f64 {
    if series.len() <= window {
        return 0.0;
    }
    let ma: Vec<f64> = series.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect();
    let bad = ma.windows(2).filter(|w| w[1] > w[0]).count();
    bad as f64 / (ma.len() - 1) as f64
}
