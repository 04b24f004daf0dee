//! EGGROLL against OpenES on an analytic fitness, over several seeds.

use eggroll::es::{run, write_es_checkpoint, EsConfig, EsState, MemberView, Method};
use eggroll::lowrank::MatrixParam;
use eggroll::prng::{derive_stream, fill_gaussian, StreamKey, StreamTag};
use nalgebra::DMatrix;

use crate::fitness::FitnessKind;
use crate::output::CsvTable;

#[derive(Debug, Clone, PartialEq)]
pub struct EsBenchSpec {
    pub fitness: FitnessKind,
    pub rows: usize,
    pub cols: usize,
    /// Scale of the random target `M*`; `μ` starts at zero.
    pub target_scale: f64,
    pub es: EsConfig,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub timing: bool,
}

impl Default for EsBenchSpec {
    fn default() -> Self {
        EsBenchSpec {
            fitness: FitnessKind::Sphere,
            rows: 2,
            cols: 2,
            target_scale: 1.0,
            es: EsConfig { pop_size: 512, rank: 1, sigma: 0.1, alpha: 0.05, t_max: 200, ..EsConfig::default() },
            seeds: (0..5).collect(),
            methods: vec![Method::Eggroll, Method::OpenEs],
            timing: false,
        }
    }
}

pub fn method_name(m: Method) -> &'static str {
    match m {
        Method::Eggroll => "eggroll",
        Method::OpenEs => "openes",
    }
}

pub fn parse_method(s: &str) -> anyhow::Result<Method> {
    match s {
        "eggroll" => Ok(Method::Eggroll),
        "openes" => Ok(Method::OpenEs),
        other => anyhow::bail!("unknown method `{other}` (eggroll|openes)"),
    }
}

#[derive(Debug, Clone)]
pub struct EsRun {
    pub method: Method,
    pub seed: u64,
    pub initial_error: f64,
    /// `(t, mean fitness, best fitness, σ_t, α_t, ‖μ−M*‖, wall seconds)` after each step.
    pub trajectory: Vec<(u64, f64, f64, f64, f64, f64, f64)>,
    pub state: EsState,
    pub config: EsConfig,
}

impl EsRun {
    pub fn final_error(&self) -> f64 {
        self.trajectory.last().map_or(self.initial_error, |p| p.5)
    }

    pub fn checkpoint_bytes(&self) -> anyhow::Result<Vec<u8>> {
        let mut buf = Vec::new();
        write_es_checkpoint(&mut buf, &self.config, &self.state)?;
        Ok(buf)
    }
}

pub fn target(spec: &EsBenchSpec, seed: u64) -> anyhow::Result<DMatrix<f64>> {
    let v = fill_gaussian(derive_stream(seed, 0, 0, 0, StreamTag::Init), spec.rows * spec.cols, spec.target_scale)?;
    Ok(DMatrix::from_vec(spec.rows, spec.cols, v))
}

pub fn run_es_bench(spec: &EsBenchSpec) -> anyhow::Result<Vec<EsRun>> {
    let mut out = Vec::new();
    for &seed in &spec.seeds {
        let m_star = target(spec, seed)?;
        let kind = spec.fitness;
        let fit = |v: &MemberView<'_>, _: StreamKey| kind.eval(&v.perturbed(0), &m_star);
        for &method in &spec.methods {
            let cfg = EsConfig { master_seed: seed, ..spec.es.clone() };
            let mut state = EsState::new(vec![MatrixParam::zeros(spec.rows, spec.cols)]);
            let initial_error = (&state.mu[0].mu - &m_star).norm();
            let mut trajectory = Vec::new();
            let mut record = |mu: &[MatrixParam], log: &eggroll::es::StepLog| -> Result<(), String> {
                let err = (&mu[0].mu - &m_star).norm();
                trajectory.push((log.t, log.mean_fitness, log.best_fitness, log.sigma, log.alpha, err, log.wall_secs));
                Ok(())
            };
            run(&cfg, method, &mut state, &fit, &mut [&mut record])?;
            log::info!(
                "es-bench: {} seed {seed}: error {initial_error:.4} -> {:.4}",
                method_name(method),
                trajectory.last().map_or(initial_error, |p| p.5)
            );
            out.push(EsRun { method, seed, initial_error, trajectory, state, config: cfg });
        }
    }
    Ok(out)
}

pub fn es_bench_table(runs: &[EsRun], timing: bool) -> CsvTable {
    let mut t = CsvTable::new(
        "es_bench",
        1,
        &["method", "seed", "t", "mean_fitness", "best_fitness", "sigma", "alpha", "error", "wall_time_s"],
    );
    for r in runs {
        for &(step, mean, best, sigma, alpha, err, wall) in &r.trajectory {
            t.row(vec![
                method_name(r.method).into(),
                r.seed.to_string(),
                step.to_string(),
                format!("{mean:.9e}"),
                format!("{best:.9e}"),
                format!("{sigma:.6e}"),
                format!("{alpha:.6e}"),
                format!("{err:.9e}"),
                if timing { format!("{wall:.6}") } else { "0".into() },
            ]);
        }
    }
    t
}
