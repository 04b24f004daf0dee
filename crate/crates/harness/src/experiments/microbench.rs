//! Throughput of one population forward through a `d×d` layer, three ways:
//! plain batched inference, the low-rank decomposed forward, and a naive
//! per-member dense `μ + σE`.

use std::hint::black_box;
use std::time::Instant;

use eggroll::lowrank::{materialize, perturbed_forward_batch, sample_factors, FactorDist, LowRankFactors, MatrixParam};
use eggroll::prng::{derive_stream, fill_gaussian, StreamTag};
use nalgebra::DMatrix;

use crate::output::CsvTable;

#[derive(Debug, Clone, PartialEq)]
pub struct MicrobenchSpec {
    pub dim: usize,
    pub pop_size: usize,
    pub rank: usize,
    pub sigma: f64,
    /// Best of this many repetitions is reported.
    pub repeats: usize,
    pub seed: u64,
}

impl Default for MicrobenchSpec {
    fn default() -> Self {
        MicrobenchSpec { dim: 1024, pop_size: 256, rank: 1, sigma: 0.01, repeats: 3, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Throughput {
    pub method: &'static str,
    pub rows_per_second: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MicrobenchResult {
    pub spec: MicrobenchSpec,
    pub rows: Vec<Throughput>,
}

impl MicrobenchResult {
    pub fn rate(&self, method: &str) -> f64 {
        self.rows.iter().find(|t| t.method == method).map_or(f64::NAN, |t| t.rows_per_second)
    }

    pub fn table(&self) -> CsvTable {
        let mut t = CsvTable::new("microbench", 1, &["method", "pop", "dims", "rows_per_second"]);
        for r in &self.rows {
            t.row(vec![
                r.method.into(),
                self.spec.pop_size.to_string(),
                format!("{0}x{0}", self.spec.dim),
                format!("{:.3}", r.rows_per_second),
            ]);
        }
        t
    }
}

/// Best wall time of `repeats` calls after one untimed warm-up call.
fn best_of<F: FnMut()>(repeats: usize, mut f: F) -> f64 {
    f();
    (0..repeats.max(1))
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_secs_f64()
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn run_microbench(spec: &MicrobenchSpec) -> anyhow::Result<MicrobenchResult> {
    let (d, n) = (spec.dim, spec.pop_size);
    anyhow::ensure!(d > 0 && n > 0 && spec.rank > 0, "dim, pop_size and rank must be positive");
    let key = |w: u32, tag| derive_stream(spec.seed, 0, w, 0, tag);
    let mu = MatrixParam::new(DMatrix::from_vec(d, d, fill_gaussian(key(0, StreamTag::Init), d * d, 0.05)?));
    let xs = DMatrix::from_vec(n, d, fill_gaussian(key(1, StreamTag::Init), n * d, 1.0)?);
    // noise generation is excluded from every timing
    let factors: Vec<LowRankFactors> = (0..n as u32)
        .map(|i| sample_factors(key(i, StreamTag::FactorA), key(i, StreamTag::FactorB), d, d, spec.rank, FactorDist::default()))
        .collect::<Result<_, _>>()?;

    let batch = best_of(spec.repeats, || {
        black_box(&xs * mu.mu.transpose());
    });
    let decomposed = best_of(spec.repeats, || {
        black_box(perturbed_forward_batch(&xs, &mu, &factors, spec.sigma).expect("shapes checked"));
    });
    let naive = best_of(spec.repeats, || {
        for (i, f) in factors.iter().enumerate() {
            let w = &mu.mu + materialize(f) * spec.sigma;
            black_box(w * xs.row(i).transpose());
        }
    });
    let rows = [("batch_inference", batch), ("decomposed", decomposed), ("naive_dense", naive)]
        .into_iter()
        .map(|(method, secs)| Throughput { method, rows_per_second: n as f64 / secs })
        .collect::<Vec<_>>();
    for r in &rows {
        log::info!("microbench: {} {:.1} rows/s", r.method, r.rows_per_second);
    }
    Ok(MicrobenchResult { spec: spec.clone(), rows })
}
