//! Error of the low-rank gradient estimate against the full-rank one as the
//! perturbation rank grows.

use eggroll::es::{estimate_gradient, GradientEstimate, PerturbationRank};
use eggroll::lowrank::{FactorDist, MatrixParam};
use eggroll::prng::{derive_stream, StreamTag};
use eggroll::scorefn::ScoreModel;
use nalgebra::DMatrix;

use crate::fitness::{bounded_gauss, bounded_gauss_smoothed_gradient};
use crate::output::CsvTable;

#[derive(Debug, Clone, PartialEq)]
pub struct RankDecaySpec {
    pub rows: usize,
    pub cols: usize,
    pub ranks: Vec<usize>,
    pub samples: usize,
    pub sigma: f64,
    /// Scale of the random offset `μ − M*`.
    pub offset: f64,
    pub seed: u64,
    /// 0 uses the closed-form full-rank gradient.
    pub reference_samples: usize,
}

impl Default for RankDecaySpec {
    fn default() -> Self {
        RankDecaySpec {
            rows: 4,
            cols: 4,
            ranks: vec![1, 2, 4, 8, 16, 32],
            samples: 200_000,
            sigma: 0.8,
            offset: 0.3,
            seed: 0,
            reference_samples: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankDecayResult {
    pub errors: Vec<(usize, f64)>,
    pub slope: f64,
}

impl RankDecayResult {
    pub fn strictly_decreasing(&self) -> bool {
        self.errors.windows(2).all(|w| w[1].1 < w[0].1)
    }

    pub fn table(&self) -> CsvTable {
        let mut t = CsvTable::new("rank_decay", 1, &["r", "frobenius_error"]);
        for (r, e) in &self.errors {
            t.row(vec![r.to_string(), format!("{e:.9e}")]);
        }
        t.row(vec!["slope".into(), format!("{:.6}", self.slope)]);
        t
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

pub fn problem(spec: &RankDecaySpec) -> anyhow::Result<(MatrixParam, DMatrix<f64>)> {
    let (m, n) = (spec.rows, spec.cols);
    let key = derive_stream(spec.seed, 0, 0, 0, StreamTag::Init);
    let target = DMatrix::from_vec(m, n, FactorDist::Gaussian { sigma0: 1.0 }.fill(key, m * n)?);
    let offset = FactorDist::Gaussian { sigma0: spec.offset }.fill(key.with_layer(1), m * n)?;
    let mu = &target + DMatrix::from_vec(m, n, offset);
    Ok((MatrixParam::new(mu), target))
}

pub fn run_rank_decay(spec: &RankDecaySpec) -> anyhow::Result<RankDecayResult> {
    anyhow::ensure!(!spec.ranks.is_empty(), "rank list is empty");
    anyhow::ensure!(spec.samples > 0, "samples must be positive");
    let (mu, target) = problem(spec)?;
    let f = |m: &DMatrix<f64>| bounded_gauss(m, &target);
    let estimate = |rank, samples, seed| GradientEstimate {
        rank,
        sigma: spec.sigma,
        samples,
        dist: FactorDist::Gaussian { sigma0: 1.0 },
        score: ScoreModel::GaussianLimit { sigma0: 1.0 },
        seed,
    };
    let reference = if spec.reference_samples == 0 {
        bounded_gauss_smoothed_gradient(&mu.mu, &target, spec.sigma)
    } else {
        let s = estimate(PerturbationRank::Full, spec.reference_samples, spec.seed ^ 0x5eed);
        estimate_gradient(&mu, &s, &f)?
    };
    let mut errors = Vec::with_capacity(spec.ranks.len());
    for &r in &spec.ranks {
        // same seed for every rank: common random numbers
        let g = estimate_gradient(&mu, &estimate(PerturbationRank::Low(r), spec.samples, spec.seed), &f)?;
        let err = (g - &reference).norm();
        log::info!("rank {r}: error {err:.4e}");
        errors.push((r, err));
    }
    let pts: Vec<(f64, f64)> = errors.iter().map(|&(r, e)| (r as f64, e)).collect();
    let slope = if pts.len() > 1 { log_log_slope(&pts) } else { f64::NAN };
    Ok(RankDecayResult { errors, slope })
}
