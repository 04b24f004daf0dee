//! Config-driven dispatch shared by the binary and the tests.

use std::path::{Path, PathBuf};

use eggroll::es::{EsConfig, Method};
use eggroll::lowrank::FactorDist;

use crate::config::Config;
use crate::experiments::egg_train::{run_egg_train, CorpusSource, EggTrainSpec};
use crate::experiments::es_bench::{es_bench_table, method_name, parse_method, run_es_bench, EsBenchSpec};
use crate::experiments::microbench::{run_microbench, MicrobenchSpec};
use crate::experiments::pop_trend::{pop_trend_table, run_pop_trend, PopTrendSpec};
use crate::experiments::rank_decay::{run_rank_decay, RankDecaySpec};
use crate::experiments::rank_law::{rank_law_table, run_rank_law, RankCase, RankLawSpec};
use crate::experiments::score_plot::{run_score_plot, ScorePlotSpec};
use crate::experiments::tune_threshold::{run_tune_threshold, threshold_table, TuneThresholdSpec};
use crate::output::write_atomic;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    EsBench,
    EggTrain,
    ScorePlot,
    RankDecay,
    RankLaw,
    Microbench,
    TuneThreshold,
    PopTrend,
}

impl Command {
    pub fn default_out(self) -> &'static str {
        match self {
            Command::EsBench => "es_bench.csv",
            Command::EggTrain => "egg_train.csv",
            Command::ScorePlot => "score_plot.csv",
            Command::RankDecay => "rank_decay.csv",
            Command::RankLaw => "rank_law.csv",
            Command::Microbench => "microbench.csv",
            Command::TuneThreshold => "tune_threshold.csv",
            Command::PopTrend => "pop_trend.csv",
        }
    }
}

/// Per-invocation options that are not experiment parameters.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub timing: bool,
}

/// Runs `cmd` and returns every file written, CSV first.
pub fn execute(cmd: Command, mut cfg: Config, opts: &RunOptions) -> anyhow::Result<Vec<PathBuf>> {
    if let Some(s) = opts.seed {
        cfg.set("seed", &s.to_string());
    }
    let out = opts.out.clone().unwrap_or_else(|| PathBuf::from(cmd.default_out()));
    let mut written = vec![out.clone()];
    match cmd {
        Command::RankDecay => {
            let d = RankDecaySpec::default();
            let spec = RankDecaySpec {
                rows: cfg.take_or("rows", d.rows)?,
                cols: cfg.take_or("cols", d.cols)?,
                ranks: cfg.take_list("ranks")?.unwrap_or(d.ranks),
                samples: cfg.take_or("samples", d.samples)?,
                sigma: cfg.take_or("sigma", d.sigma)?,
                offset: cfg.take_or("offset", d.offset)?,
                seed: cfg.take_or("seed", d.seed)?,
                reference_samples: cfg.take_or("reference_samples", d.reference_samples)?,
            };
            cfg.finish()?;
            let res = run_rank_decay(&spec)?;
            println!("rank-decay: slope {:.4}, strictly decreasing: {}", res.slope, res.strictly_decreasing());
            res.table().write(&out)?;
        }
        Command::ScorePlot => {
            let d = ScorePlotSpec::default();
            let spec = ScorePlotSpec {
                ranks: cfg.take_list("ranks")?.unwrap_or(d.ranks),
                scale: cfg.take_or("scale", d.scale)?,
                z_max: cfg.take_or("z_max", d.z_max)?,
                z_step: cfg.take_or("z_step", d.z_step)?,
            };
            // accepted for uniformity; the tabulation has no randomness
            let _: Option<u64> = cfg.take("seed")?;
            cfg.finish()?;
            let res = run_score_plot(&spec)?;
            for (r, sup) in &res.sup_distance {
                println!("score-plot: r={r} sup distance {sup:.5}");
            }
            res.table().write(&out)?;
        }
        Command::RankLaw => {
            let d = RankLawSpec::default();
            let spec = RankLawSpec {
                cases: cfg.take_list::<RankCase>("cases")?.unwrap_or(d.cases),
                seed: cfg.take_or("seed", d.seed)?,
                rel_tol: cfg.take_or("rel_tol", d.rel_tol)?,
            };
            cfg.finish()?;
            let rows = run_rank_law(&spec)?;
            for (c, got) in &rows {
                println!("rank-law: N={} r={} {}x{}: rank {got}, expected {}", c.pop, c.rank, c.rows, c.cols, c.expected());
            }
            rank_law_table(&rows).write(&out)?;
        }
        Command::EsBench => {
            let spec = es_bench_spec(&mut cfg, opts.timing)?;
            cfg.finish()?;
            let runs = run_es_bench(&spec)?;
            es_bench_table(&runs, spec.timing).write(&out)?;
            for r in &runs {
                println!("es-bench: {} seed {}: error {:.5} -> {:.5}", method_name(r.method), r.seed, r.initial_error, r.final_error());
                let path = sibling(&out, &format!("{}_s{}.esck", method_name(r.method), r.seed));
                write_atomic(&path, &r.checkpoint_bytes()?)?;
                written.push(path);
            }
        }
        Command::EggTrain => {
            let spec = egg_spec(&mut cfg, EggTrainSpec::default(), opts.timing)?;
            let ckpt = cfg.take::<PathBuf>("checkpoint")?.unwrap_or_else(|| out.with_extension("egg"));
            cfg.finish()?;
            let res = run_egg_train(&spec)?;
            println!("egg-train: held-out {:.4} -> {:.4} bits/byte", res.initial_bits(), res.final_bits());
            res.metrics_table().write(&out)?;
            write_atomic(&ckpt, &res.checkpoint_bytes(spec.seed)?)?;
            written.push(ckpt);
        }
        Command::TuneThreshold => {
            let d = TuneThresholdSpec::default();
            let base = egg_spec(&mut cfg, d.base, opts.timing)?;
            let spec = TuneThresholdSpec { base, tau_scales: cfg.take_list("tau_scales")?.unwrap_or(d.tau_scales) };
            cfg.finish()?;
            let points = run_tune_threshold(&spec)?;
            if let Some(b) = crate::experiments::tune_threshold::best(&points) {
                println!("tune-threshold: best tau_scale {} (tau {}), {:.4} bits/byte", b.tau_scale, b.tau, b.final_bits);
            }
            threshold_table(&points).write(&out)?;
        }
        Command::PopTrend => {
            let d = PopTrendSpec::default();
            let base = egg_spec(&mut cfg, d.base, opts.timing)?;
            let first = base.seed;
            let n: u64 = cfg.take_or("num_seeds", d.seeds.len() as u64)?;
            cfg.finish()?;
            let spec = PopTrendSpec { base, seeds: (first..first + n).collect() };
            let rows = run_pop_trend(&spec)?;
            let wins = rows.iter().filter(|r| r.large_wins()).count();
            println!("pop-trend: N={} beats N=2 in {wins}/{} seeds", spec.base.pop_size, rows.len());
            pop_trend_table(&rows, spec.base.pop_size).write(&out)?;
        }
        Command::Microbench => {
            let d = MicrobenchSpec::default();
            let spec = MicrobenchSpec {
                dim: cfg.take_or("dim", d.dim)?,
                pop_size: cfg.take_or("pop_size", d.pop_size)?,
                rank: cfg.take_or("rank", d.rank)?,
                sigma: cfg.take_or("sigma", d.sigma)?,
                repeats: cfg.take_or("repeats", d.repeats)?,
                seed: cfg.take_or("seed", d.seed)?,
            };
            cfg.finish()?;
            let res = run_microbench(&spec)?;
            let dec = res.rate("decomposed");
            println!(
                "microbench: decomposed {:.1}x naive, {:.2}x slower than batch inference",
                dec / res.rate("naive_dense"),
                res.rate("batch_inference") / dec
            );
            res.table().write(&out)?;
        }
    }
    Ok(written)
}

/// `dir/stem_suffix` next to `out`.
fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    out.with_file_name(format!("{stem}_{suffix}"))
}

fn es_bench_spec(cfg: &mut Config, timing: bool) -> anyhow::Result<EsBenchSpec> {
    let d = EsBenchSpec::default();
    let e = &d.es;
    let first: u64 = cfg.take_or("seed", 0)?;
    let n: u64 = cfg.take_or("num_seeds", d.seeds.len() as u64)?;
    let methods = match cfg.take_list::<String>("methods")? {
        Some(v) => v.iter().map(|s| parse_method(s)).collect::<anyhow::Result<Vec<Method>>>()?,
        None => d.methods.clone(),
    };
    let es = EsConfig {
        pop_size: cfg.take_or("pop_size", e.pop_size)?,
        rank: cfg.take_or("rank", e.rank)?,
        sigma: cfg.take_or("sigma", e.sigma)?,
        alpha: cfg.take_or("alpha", e.alpha)?,
        lr_decay: cfg.take_or("lr_decay", e.lr_decay)?,
        sigma_decay: cfg.take_or("sigma_decay", e.sigma_decay)?,
        shaping: cfg.take_or("shaping", e.shaping)?,
        antithetic: cfg.take_or("antithetic", e.antithetic)?,
        evals_per_member: cfg.take_or("evals_per_member", e.evals_per_member)?,
        reuse_factor: cfg.take_or("reuse_factor", e.reuse_factor)?,
        t_max: cfg.take_or("steps", e.t_max)?,
        factor_dist: FactorDist::Gaussian { sigma0: cfg.take_or("sigma0", 1.0)? },
        ..e.clone()
    };
    es.validate()?;
    Ok(EsBenchSpec {
        fitness: cfg.take_or("fitness", d.fitness)?,
        rows: cfg.take_or("rows", d.rows)?,
        cols: cfg.take_or("cols", d.cols)?,
        target_scale: cfg.take_or("target_scale", d.target_scale)?,
        es,
        seeds: (first..first + n).collect(),
        methods,
        timing,
    })
}

fn egg_spec(cfg: &mut Config, d: EggTrainSpec, timing: bool) -> anyhow::Result<EggTrainSpec> {
    let corpus_len = cfg.take::<usize>("corpus_len")?;
    let corpus = match cfg.take::<String>("corpus")?.as_deref() {
        None | Some("synthetic") => match (corpus_len, &d.corpus) {
            (Some(len), _) => CorpusSource::Synthetic { len },
            (None, c) => c.clone(),
        },
        Some(path) => {
            anyhow::ensure!(corpus_len.is_none(), "corpus_len only applies to the synthetic corpus");
            CorpusSource::File(PathBuf::from(path))
        }
    };
    Ok(EggTrainSpec {
        layers: cfg.take_or("layers", d.layers)?,
        log4_dim: cfg.take_or("log4_dim", d.log4_dim)?,
        pop_size: cfg.take_or("pop_size", d.pop_size)?,
        sigma_shift: cfg.take_or("sigma_shift", d.sigma_shift)?,
        tau_scale: cfg.take_or("tau_scale", d.tau_scale)?,
        tau: cfg.take("tau")?.or(d.tau),
        segment_len: cfg.take_or("segment_len", d.segment_len)?,
        reuse_factor: cfg.take_or("reuse_factor", d.reuse_factor)?,
        evals_per_member: cfg.take_or("evals_per_member", d.evals_per_member)?,
        steps: cfg.take_or("steps", d.steps)?,
        seed: cfg.take_or("seed", d.seed)?,
        corpus,
        held_out: cfg.take_or("held_out", d.held_out)?,
        eval_every: cfg.take_or("eval_every", d.eval_every)?,
        noise_table_len: cfg.take_or("noise_table_len", d.noise_table_len)?,
        timing,
    })
}
