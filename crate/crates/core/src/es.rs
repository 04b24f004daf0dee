//! The population optimization loop.
//!
//! One step: every member derives its noise keys from
//! `(master_seed, t, worker, param_index)`, is evaluated on its data keys,
//! the fitnesses are shaped, and each matrix mean moves by
//! `α_t · (1/N) Σ fᵢ Eᵢ`. Members are evaluated concurrently; everything
//! downstream of the evaluation barrier runs in member-index order.

use std::io::{Read, Write};
use std::time::Instant;

use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::lowrank::{
    aggregate_update, materialize, perturbed_forward, sample_factors, FactorDist, LowRankFactors,
    MatrixParam,
};
use crate::prng::{derive_stream, StreamKey, StreamTag};
use crate::scorefn::{apply_score, ScoreModel};
use crate::shaping::{shape, ShapingMode};

#[derive(Debug, Clone, PartialEq)]
pub struct EsConfig {
    pub pop_size: usize,
    pub rank: usize,
    pub sigma: f64,
    pub alpha: f64,
    pub lr_decay: f64,
    pub sigma_decay: f64,
    pub shaping: ShapingMode,
    pub antithetic: bool,
    pub evals_per_member: usize,
    /// Members sharing one data stream.
    pub reuse_factor: usize,
    pub master_seed: u64,
    pub t_max: u64,
    pub factor_dist: FactorDist,
}

impl Default for EsConfig {
    fn default() -> Self {
        EsConfig {
            pop_size: 64,
            rank: 1,
            sigma: 0.1,
            alpha: 0.05,
            lr_decay: 1.0,
            sigma_decay: 1.0,
            shaping: ShapingMode::CenteredRank,
            antithetic: true,
            evals_per_member: 1,
            reuse_factor: 2,
            master_seed: 0,
            t_max: 100,
            factor_dist: FactorDist::default(),
        }
    }
}

impl EsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pop_size == 0 {
            return invalid("pop_size must be positive");
        }
        if self.antithetic && self.pop_size % 2 != 0 {
            return invalid(format!("antithetic sampling needs an even pop_size, got {}", self.pop_size));
        }
        if self.shaping == ShapingMode::AntitheticSign && !self.antithetic {
            return invalid("sign shaping requires antithetic pairs");
        }
        if self.rank == 0 {
            return invalid("rank must be at least 1");
        }
        if !(self.sigma > 0.0) || !(self.alpha > 0.0) {
            return invalid("sigma and alpha must be positive");
        }
        for (name, v) in [("lr_decay", self.lr_decay), ("sigma_decay", self.sigma_decay)] {
            if !(v > 0.0 && v <= 1.0) {
                return invalid(format!("{name} must lie in (0, 1], got {v}"));
            }
        }
        if self.evals_per_member == 0 || self.reuse_factor == 0 {
            return invalid("evals_per_member and reuse_factor must be positive");
        }
        if self.antithetic && self.reuse_factor % 2 != 0 {
            return invalid("reuse_factor must be even so antithetic pairs share data");
        }
        Ok(())
    }

    pub fn sigma_at(&self, t: u64) -> f64 {
        self.sigma * self.sigma_decay.powf(t as f64)
    }

    pub fn alpha_at(&self, t: u64) -> f64 {
        self.alpha * self.lr_decay.powf(t as f64)
    }

    /// Worker id used for noise keys; both members of a pair share it.
    pub fn noise_worker(&self, member: usize) -> u32 {
        let w = if self.antithetic { member & !1 } else { member };
        w as u32
    }

    fn is_mirror(&self, member: usize) -> bool {
        self.antithetic && member % 2 == 1
    }

    pub fn data_key(&self, t: u64, member: usize, eval: usize) -> StreamKey {
        derive_stream(
            self.master_seed,
            t,
            (member / self.reuse_factor) as u32,
            eval as u32,
            StreamTag::Data,
        )
    }
}

/// One member's perturbation of one matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Perturbation {
    LowRank(LowRankFactors),
    Dense(DMatrix<f64>),
}

impl Perturbation {
    pub fn materialize(&self) -> DMatrix<f64> {
        match self {
            Perturbation::LowRank(f) => materialize(f),
            Perturbation::Dense(e) => e.clone(),
        }
    }
}

/// The parameters as one population member sees them: `μ + σE` per matrix.
pub struct MemberView<'a> {
    pub params: &'a [MatrixParam],
    pub perturbations: &'a [Perturbation],
    pub sigma: f64,
}

impl MemberView<'_> {
    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// `x(μ + σE)ᵀ` for parameter `idx`; low-rank perturbations go through
    /// the decomposed path.
    pub fn forward(&self, idx: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        let mu = &self.params[idx];
        match &self.perturbations[idx] {
            Perturbation::LowRank(f) => perturbed_forward(x, mu, f, self.sigma),
            Perturbation::Dense(e) => {
                if x.len() != mu.mu.ncols() {
                    return invalid("input length does not match parameter");
                }
                Ok((&mu.mu + e * self.sigma) * x)
            }
        }
    }

    /// Dense `μ + σE` for fitness functions defined directly on matrices.
    pub fn perturbed(&self, idx: usize) -> DMatrix<f64> {
        &self.params[idx].mu + self.perturbations[idx].materialize() * self.sigma
    }
}

/// Fitness of one member on one data stream. Must be bounded.
pub trait FitnessFn: Sync {
    fn evaluate(&self, member: &MemberView<'_>, data: StreamKey) -> f64;
}

impl<F> FitnessFn for F
where
    F: Fn(&MemberView<'_>, StreamKey) -> f64 + Sync,
{
    fn evaluate(&self, member: &MemberView<'_>, data: StreamKey) -> f64 {
        self(member, data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Eggroll,
    OpenEs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub t: u64,
    pub mean_fitness: f64,
    pub best_fitness: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub wall_secs: f64,
    /// Members whose fitness was non-finite and replaced by the population min.
    pub nonfinite: usize,
}

fn member_perturbations(
    cfg: &EsConfig,
    method: Method,
    t: u64,
    member: usize,
    params: &[MatrixParam],
) -> Result<Vec<Perturbation>> {
    let worker = cfg.noise_worker(member);
    params
        .iter()
        .enumerate()
        .map(|(p, mp)| {
            let (m, n) = mp.dims();
            let ka = derive_stream(cfg.master_seed, t, worker, p as u32, StreamTag::FactorA);
            let pert = match method {
                Method::Eggroll => {
                    let kb = ka.with_tag(StreamTag::FactorB);
                    let f = sample_factors(ka, kb, m, n, cfg.rank, cfg.factor_dist)?;
                    Perturbation::LowRank(if cfg.is_mirror(member) { f.negated() } else { f })
                }
                Method::OpenEs => {
                    let e = DMatrix::from_vec(m, n, cfg.factor_dist.fill(ka, m * n)?);
                    Perturbation::Dense(if cfg.is_mirror(member) { -e } else { e })
                }
            };
            Ok(pert)
        })
        .collect()
}

/// Replaces non-finite fitnesses by the finite population minimum.
fn sanitize(raw: &mut [f64]) -> usize {
    let bad = raw.iter().filter(|v| !v.is_finite()).count();
    if bad > 0 {
        let min = raw
            .iter()
            .filter(|v| v.is_finite())
            .cloned()
            .fold(f64::INFINITY, f64::min);
        let fill = if min.is_finite() { min } else { 0.0 };
        for v in raw.iter_mut().filter(|v| !v.is_finite()) {
            *v = fill;
        }
    }
    bad
}

/// One ES step. Pure in `(mu, cfg, t)`.
pub fn es_step(
    method: Method,
    mu: &[MatrixParam],
    cfg: &EsConfig,
    t: u64,
    fitness: &dyn FitnessFn,
) -> Result<(Vec<MatrixParam>, StepLog)> {
    cfg.validate()?;
    if mu.is_empty() {
        return invalid("no parameters to optimize");
    }
    let start = Instant::now();
    let sigma = cfg.sigma_at(t);
    let alpha = cfg.alpha_at(t);

    let evaluated: Vec<(Vec<Perturbation>, Vec<f64>)> = (0..cfg.pop_size)
        .into_par_iter()
        .map(|i| {
            let perts = member_perturbations(cfg, method, t, i, mu)?;
            let view = MemberView {
                params: mu,
                perturbations: &perts,
                sigma,
            };
            let scores = (0..cfg.evals_per_member)
                .map(|j| fitness.evaluate(&view, cfg.data_key(t, i, j)))
                .collect();
            Ok((perts, scores))
        })
        .collect::<Result<_>>()?;

    // scores[j][i]: member i on evaluation j
    let mut scores = vec![vec![0.0; cfg.pop_size]; cfg.evals_per_member];
    let mut nonfinite = 0;
    for (i, (_, s)) in evaluated.iter().enumerate() {
        for (j, &v) in s.iter().enumerate() {
            scores[j][i] = v;
        }
    }
    for row in scores.iter_mut() {
        nonfinite += sanitize(row);
    }
    if nonfinite > 0 {
        warn!("step {t}: {nonfinite} non-finite fitness values replaced by the population minimum");
    }
    let raw = crate::shaping::mean_over_evals(&scores)?;
    let shaped = shape(cfg.shaping, &scores)?;

    let mut next = mu.to_vec();
    for (p, param) in next.iter_mut().enumerate() {
        let update = match method {
            Method::Eggroll => {
                let factors: Vec<LowRankFactors> = evaluated
                    .iter()
                    .map(|(perts, _)| match &perts[p] {
                        Perturbation::LowRank(f) => f.clone(),
                        Perturbation::Dense(_) => unreachable!(),
                    })
                    .collect();
                aggregate_update(&factors, &shaped)?
            }
            Method::OpenEs => {
                let (m, n) = param.dims();
                let mut acc = DMatrix::zeros(m, n);
                for ((perts, _), &f) in evaluated.iter().zip(&shaped) {
                    if let Perturbation::Dense(e) = &perts[p] {
                        acc += e * f;
                    }
                }
                acc / cfg.pop_size as f64
            }
        };
        param.mu += update * alpha;
    }

    let log = StepLog {
        t,
        mean_fitness: raw.iter().sum::<f64>() / raw.len() as f64,
        best_fitness: raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        sigma,
        alpha,
        wall_secs: start.elapsed().as_secs_f64(),
        nonfinite,
    };
    Ok((next, log))
}

pub fn eggroll_step(
    mu: &[MatrixParam],
    cfg: &EsConfig,
    t: u64,
    fitness: &dyn FitnessFn,
) -> Result<(Vec<MatrixParam>, StepLog)> {
    es_step(Method::Eggroll, mu, cfg, t, fitness)
}

pub fn openes_step(
    mu: &[MatrixParam],
    cfg: &EsConfig,
    t: u64,
    fitness: &dyn FitnessFn,
) -> Result<(Vec<MatrixParam>, StepLog)> {
    es_step(Method::OpenEs, mu, cfg, t, fitness)
}

// ---------------------------------------------------------------------------
// Outer loop and checkpoints

/// Observer called after every step; an error aborts the run.
pub trait StepCallback {
    fn on_step(&mut self, mu: &[MatrixParam], log: &StepLog) -> std::result::Result<(), String>;
}

impl<F> StepCallback for F
where
    F: FnMut(&[MatrixParam], &StepLog) -> std::result::Result<(), String>,
{
    fn on_step(&mut self, mu: &[MatrixParam], log: &StepLog) -> std::result::Result<(), String> {
        self(mu, log)
    }
}

/// Resumable optimizer state. Means are kept at single precision between
/// steps so a checkpoint round-trips exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct EsState {
    pub t: u64,
    pub mu: Vec<MatrixParam>,
}

impl EsState {
    pub fn new(mu: Vec<MatrixParam>) -> Self {
        let mut s = EsState { t: 0, mu };
        s.round_to_f32();
        s
    }

    fn round_to_f32(&mut self) {
        for p in &mut self.mu {
            p.mu.apply(|v| *v = f64::from(*v as f32));
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub logs: Vec<StepLog>,
}

/// Runs steps `state.t .. cfg.t_max`.
pub fn run(
    cfg: &EsConfig,
    method: Method,
    state: &mut EsState,
    fitness: &dyn FitnessFn,
    callbacks: &mut [&mut dyn StepCallback],
) -> Result<Trajectory> {
    cfg.validate()?;
    let mut traj = Trajectory::default();
    while state.t < cfg.t_max {
        let (next, log) = es_step(method, &state.mu, cfg, state.t, fitness)?;
        state.mu = next;
        state.round_to_f32();
        for cb in callbacks.iter_mut() {
            cb.on_step(&state.mu, &log)
                .map_err(|e| Error::InvalidParameter(format!("callback failed at step {}: {e}", log.t)))?;
        }
        traj.logs.push(log);
        state.t += 1;
    }
    info!("ES run finished at t = {}", state.t);
    Ok(traj)
}

const ES_MAGIC: &[u8; 4] = b"ESCK";
const ES_VERSION: u32 = 1;

/// Header: magic, version, master seed, t, σ_t, α_t, matrix count, then
/// `(rows, cols)` and row-major f32 data for every matrix. Little endian.
pub fn write_es_checkpoint<W: Write>(w: &mut W, cfg: &EsConfig, state: &EsState) -> Result<()> {
    let io = |e: std::io::Error| Error::Checkpoint(e.to_string());
    w.write_all(ES_MAGIC).map_err(io)?;
    w.write_all(&ES_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&cfg.master_seed.to_le_bytes()).map_err(io)?;
    w.write_all(&state.t.to_le_bytes()).map_err(io)?;
    w.write_all(&cfg.sigma_at(state.t).to_le_bytes()).map_err(io)?;
    w.write_all(&cfg.alpha_at(state.t).to_le_bytes()).map_err(io)?;
    w.write_all(&(state.mu.len() as u32).to_le_bytes()).map_err(io)?;
    for p in &state.mu {
        let (m, n) = p.dims();
        w.write_all(&(m as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&(n as u32).to_le_bytes()).map_err(io)?;
        for i in 0..m {
            for j in 0..n {
                w.write_all(&(p.mu[(i, j)] as f32).to_le_bytes()).map_err(io)?;
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EsCheckpoint {
    pub master_seed: u64,
    pub sigma_t: f64,
    pub alpha_t: f64,
    pub state: EsState,
}

pub fn read_es_checkpoint<R: Read>(r: &mut R) -> Result<EsCheckpoint> {
    let io = |e: std::io::Error| Error::Checkpoint(e.to_string());
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4).map_err(io)?;
    if &b4 != ES_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    r.read_exact(&mut b4).map_err(io)?;
    let version = u32::from_le_bytes(b4);
    if version != ES_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut u64_field = |r: &mut R| -> Result<u64> {
        r.read_exact(&mut b8).map_err(io)?;
        Ok(u64::from_le_bytes(b8))
    };
    let master_seed = u64_field(r)?;
    let t = u64_field(r)?;
    let sigma_t = f64::from_bits(u64_field(r)?);
    let alpha_t = f64::from_bits(u64_field(r)?);
    r.read_exact(&mut b4).map_err(io)?;
    let count = u32::from_le_bytes(b4) as usize;
    let mut mu = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut b4).map_err(io)?;
        let m = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4).map_err(io)?;
        let n = u32::from_le_bytes(b4) as usize;
        let mut data = vec![0u8; 4 * m * n];
        r.read_exact(&mut data).map_err(io)?;
        let vals: Vec<f64> = data
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        mu.push(MatrixParam::new(DMatrix::from_row_slice(m, n, &vals)));
    }
    Ok(EsCheckpoint {
        master_seed,
        sigma_t,
        alpha_t,
        state: EsState { t, mu },
    })
}

// ---------------------------------------------------------------------------
// Gradient estimation for the rank-convergence analysis

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbationRank {
    Low(usize),
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientEstimate {
    pub rank: PerturbationRank,
    pub sigma: f64,
    /// Number of perturbations drawn; each is evaluated at `±Z`.
    pub samples: usize,
    pub dist: FactorDist,
    pub score: ScoreModel,
    pub seed: u64,
}

const ESTIMATE_BLOCK: usize = 1024;

/// Monte Carlo `ĝ = −(1/σ) E[Ŝ(Z) f(μ + σZ)]` with antithetic pairs.
///
/// Sample `k` draws its noise from `(seed, 0, k, 0)` regardless of rank, and
/// rank-`r` factors are prefixes of rank-`r'` ones for `r < r'`, so estimates
/// at different ranks share common random numbers. Sums run in fixed blocks
/// combined in index order.
pub fn estimate_gradient(
    mu: &MatrixParam,
    spec: &GradientEstimate,
    fitness: &(dyn Fn(&DMatrix<f64>) -> f64 + Sync),
) -> Result<DMatrix<f64>> {
    if spec.samples == 0 {
        return invalid("need at least one sample");
    }
    if !(spec.sigma > 0.0) {
        return invalid("sigma must be positive");
    }
    spec.score.validate()?;
    let (m, n) = mu.dims();
    let blocks = spec.samples.div_ceil(ESTIMATE_BLOCK);
    let partial: Vec<DMatrix<f64>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut acc = DMatrix::zeros(m, n);
            let end = ((b + 1) * ESTIMATE_BLOCK).min(spec.samples);
            for k in b * ESTIMATE_BLOCK..end {
                let ka = derive_stream(spec.seed, 0, k as u32, 0, StreamTag::FactorA);
                let z = match spec.rank {
                    PerturbationRank::Low(r) => {
                        let kb = ka.with_tag(StreamTag::FactorB);
                        materialize(&sample_factors(ka, kb, m, n, r, spec.dist)?)
                    }
                    PerturbationRank::Full => DMatrix::from_vec(m, n, spec.dist.fill(ka, m * n)?),
                };
                let plus = fitness(&(&mu.mu + &z * spec.sigma));
                let minus = fitness(&(&mu.mu - &z * spec.sigma));
                let s = apply_score(&z, &spec.score)?;
                acc += s * (0.5 * (plus - minus));
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = DMatrix::zeros(m, n);
    for p in partial {
        total += p;
    }
    Ok(total * (-1.0 / (spec.sigma * spec.samples as f64)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lowrank::numerical_rank;

    fn target() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[1.0, -0.5, 0.25, 2.0])
    }

    fn quadratic(view: &MemberView<'_>, _: StreamKey) -> f64 {
        -(view.perturbed(0) - target()).norm_squared()
    }

    fn constant(_: &MemberView<'_>, _: StreamKey) -> f64 {
        3.5
    }

    fn cfg() -> EsConfig {
        EsConfig {
            pop_size: 512,
            rank: 1,
            sigma: 0.1,
            alpha: 0.05,
            master_seed: 7,
            t_max: 200,
            ..EsConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        assert!(EsConfig { pop_size: 3, ..cfg() }.validate().is_err());
        assert!(EsConfig { rank: 0, ..cfg() }.validate().is_err());
        assert!(EsConfig { lr_decay: 1.5, ..cfg() }.validate().is_err());
        assert!(EsConfig { reuse_factor: 3, ..cfg() }.validate().is_err());
        assert!(EsConfig { antithetic: false, shaping: ShapingMode::AntitheticSign, ..cfg() }.validate().is_err());
        let c = EsConfig { sigma_decay: 0.5, lr_decay: 0.25, ..cfg() };
        assert_eq!(c.sigma_at(2), 0.025);
        assert_eq!(c.alpha_at(1), 0.0125);
    }

    #[test]
    fn constant_fitness_leaves_mu_unchanged() {
        let mu = vec![MatrixParam::new(target() * 0.3)];
        for shaping in [ShapingMode::AntitheticSign, ShapingMode::CenteredRank] {
            let c = EsConfig { shaping, pop_size: 16, ..cfg() };
            for method in [Method::Eggroll, Method::OpenEs] {
                let (next, _) = es_step(method, &mu, &c, 0, &constant).unwrap();
                assert_eq!(next, mu);
            }
        }
    }

    #[test]
    fn quadratic_converges() {
        let mut state = EsState::new(vec![MatrixParam::zeros(2, 2)]);
        let before = (&state.mu[0].mu - target()).norm();
        run(&cfg(), Method::Eggroll, &mut state, &quadratic, &mut []).unwrap();
        let after = (&state.mu[0].mu - target()).norm();
        assert!(after <= 0.1 * before, "{before} -> {after}");
    }

    #[test]
    fn same_seed_same_trajectory() {
        let c = EsConfig { t_max: 10, pop_size: 32, ..cfg() };
        let run_once = || {
            let mut s = EsState::new(vec![MatrixParam::zeros(2, 2)]);
            let traj = run(&c, Method::Eggroll, &mut s, &quadratic, &mut []).unwrap();
            (s, traj.logs.iter().map(|l| l.mean_fitness.to_bits()).collect::<Vec<_>>())
        };
        assert_eq!(run_once(), run_once());
    }

    #[test]
    fn nonfinite_fitness_is_replaced() {
        let bad = |view: &MemberView<'_>, _: StreamKey| {
            let v = view.perturbed(0)[(0, 0)];
            if v > 0.05 { f64::NAN } else { -v * v }
        };
        let mu = vec![MatrixParam::zeros(2, 2)];
        let c = EsConfig { shaping: ShapingMode::Raw, pop_size: 64, ..cfg() };
        let (next, log) = eggroll_step(&mu, &c, 0, &bad).unwrap();
        assert!(log.nonfinite > 0);
        assert!(next[0].is_finite());
    }

    #[test]
    fn raw_updates_scale_and_ranked_updates_do_not() {
        let mu = vec![MatrixParam::new(target() * 0.5)];
        let scaled = |view: &MemberView<'_>, k: StreamKey| 4.0 * quadratic(view, k);
        for shaping in [ShapingMode::Raw, ShapingMode::CenteredRank, ShapingMode::AntitheticSign] {
            let c = EsConfig { shaping, pop_size: 32, ..cfg() };
            let (a, _) = eggroll_step(&mu, &c, 3, &quadratic).unwrap();
            let (b, _) = eggroll_step(&mu, &c, 3, &scaled).unwrap();
            let da = &a[0].mu - &mu[0].mu;
            let db = &b[0].mu - &mu[0].mu;
            let expect = if shaping == ShapingMode::Raw { da * 4.0 } else { da };
            assert!((&expect - &db).amax() < 1e-14, "{shaping}");
        }
    }

    #[test]
    fn update_rank_is_min_nr_m_n() {
        let rand_fit = |view: &MemberView<'_>, _: StreamKey| view.perturbed(0).sum().sin();
        let mu = vec![MatrixParam::zeros(16, 16)];
        let c = EsConfig {
            pop_size: 3,
            rank: 2,
            antithetic: false,
            reuse_factor: 1,
            shaping: ShapingMode::Raw,
            ..cfg()
        };
        let (next, _) = eggroll_step(&mu, &c, 0, &rand_fit).unwrap();
        assert_eq!(numerical_rank(&next[0].mu, 1e-8), 6);
    }

    #[test]
    fn parallel_and_serial_agree_bitwise() {
        let c = EsConfig { pop_size: 64, t_max: 3, ..cfg() };
        let go = |threads| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let mut s = EsState::new(vec![MatrixParam::zeros(2, 2)]);
                run(&c, Method::Eggroll, &mut s, &quadratic, &mut []).unwrap();
                s
            })
        };
        assert_eq!(go(1), go(4));
    }

    #[test]
    fn checkpoint_round_trip_and_resume() {
        let c = EsConfig { pop_size: 32, t_max: 12, ..cfg() };
        let mut full = EsState::new(vec![MatrixParam::zeros(2, 2), MatrixParam::zeros(3, 1)]);
        let two = |view: &MemberView<'_>, k: StreamKey| quadratic(view, k) - view.perturbed(1).norm_squared();
        run(&c, Method::Eggroll, &mut full, &two, &mut []).unwrap();

        let mut part = EsState::new(vec![MatrixParam::zeros(2, 2), MatrixParam::zeros(3, 1)]);
        run(&EsConfig { t_max: 5, ..c.clone() }, Method::Eggroll, &mut part, &two, &mut []).unwrap();
        let mut buf = Vec::new();
        write_es_checkpoint(&mut buf, &c, &part).unwrap();
        let ck = read_es_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(ck.state, part);
        assert_eq!(ck.sigma_t, c.sigma_at(5));
        assert_eq!(ck.master_seed, c.master_seed);
        let mut resumed = ck.state;
        run(&c, Method::Eggroll, &mut resumed, &two, &mut []).unwrap();
        assert_eq!(resumed, full);

        buf[0] = b'X';
        assert!(read_es_checkpoint(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn callback_failure_names_the_step() {
        let c = EsConfig { pop_size: 8, t_max: 5, ..cfg() };
        let mut s = EsState::new(vec![MatrixParam::zeros(2, 2)]);
        let mut cb = |_: &[MatrixParam], log: &StepLog| if log.t == 2 { Err("disk full".to_string()) } else { Ok(()) };
        let err = run(&c, Method::Eggroll, &mut s, &quadratic, &mut [&mut cb]).unwrap_err();
        assert!(err.to_string().contains("step 2"), "{err}");
        let mut empty = EsState::new(vec![MatrixParam::zeros(2, 2)]);
        let traj = run(&EsConfig { t_max: 0, ..c }, Method::Eggroll, &mut empty, &quadratic, &mut []).unwrap();
        assert!(traj.logs.is_empty());
        assert_eq!(empty.mu[0].mu, DMatrix::zeros(2, 2));
    }

    #[test]
    fn estimator_symmetry_cases() {
        let mu = MatrixParam::zeros(3, 3);
        let spec = GradientEstimate {
            rank: PerturbationRank::Low(2),
            sigma: 0.5,
            samples: 4000,
            dist: FactorDist::default(),
            score: ScoreModel::default(),
            seed: 1,
        };
        let g = estimate_gradient(&mu, &spec, &|_| 2.0).unwrap();
        assert_eq!(g, DMatrix::zeros(3, 3));
        let g = estimate_gradient(&mu, &spec, &|m: &DMatrix<f64>| (-m.norm_squared()).exp()).unwrap();
        assert!(g.amax() < 3.0 / (spec.samples as f64).sqrt(), "{g}");
        assert!(estimate_gradient(&mu, &GradientEstimate { samples: 0, ..spec }, &|_| 0.0).is_err());
    }

    #[test]
    fn estimator_recovers_linear_gradient() {
        let mu = MatrixParam::zeros(2, 3);
        let w = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 0.0, 3.0, -1.0]);
        let f = |m: &DMatrix<f64>| m.dot(&w);
        for rank in [PerturbationRank::Low(1), PerturbationRank::Full] {
            let spec = GradientEstimate {
                rank,
                sigma: 0.1,
                samples: 20_000,
                dist: FactorDist::default(),
                score: ScoreModel::default(),
                seed: 4,
            };
            let g = estimate_gradient(&mu, &spec, &f).unwrap();
            assert!((&g - &w).norm() < 0.1 * w.norm(), "{rank:?}: {g}");
        }
    }
}
