//! Checks that one EGGROLL step moves `μ` by a matrix of rank `min(Nr, m, n)`.

use eggroll::es::{eggroll_step, EsConfig, MemberView};
use eggroll::lowrank::{numerical_rank, MatrixParam};
use eggroll::prng::StreamKey;
use eggroll::shaping::ShapingMode;

use crate::output::CsvTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankCase {
    pub pop: usize,
    pub rank: usize,
    pub rows: usize,
    pub cols: usize,
}

impl RankCase {
    pub fn expected(&self) -> usize {
        (self.pop * self.rank).min(self.rows).min(self.cols)
    }
}

impl std::str::FromStr for RankCase {
    type Err = String;

    /// `NxRxMxN`, e.g. `3x2x16x16`.
    fn from_str(s: &str) -> Result<Self, String> {
        let v: Vec<usize> = s
            .split('x')
            .map(|p| p.trim().parse::<usize>().map_err(|e| format!("`{s}`: {e}")))
            .collect::<Result<_, _>>()?;
        match v[..] {
            [pop, rank, rows, cols] => Ok(RankCase { pop, rank, rows, cols }),
            _ => Err(format!("expected NxRxMxN, got `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankLawSpec {
    pub cases: Vec<RankCase>,
    pub seed: u64,
    pub rel_tol: f64,
}

impl Default for RankLawSpec {
    fn default() -> Self {
        RankLawSpec {
            cases: vec![
                RankCase { pop: 3, rank: 2, rows: 16, cols: 16 },
                RankCase { pop: 20, rank: 1, rows: 8, cols: 32 },
            ],
            seed: 0,
            rel_tol: 1e-8,
        }
    }
}

/// `(case, measured rank)`
pub fn run_rank_law(spec: &RankLawSpec) -> anyhow::Result<Vec<(RankCase, usize)>> {
    // Raw, non-antithetic fitness: mirrored pairs would share directions.
    let fit = |v: &MemberView<'_>, _: StreamKey| (v.perturbed(0).sum() * 3.7).sin() + 1.5;
    spec.cases
        .iter()
        .map(|&c| {
            let cfg = EsConfig {
                pop_size: c.pop,
                rank: c.rank,
                sigma: 0.5,
                alpha: 1.0,
                shaping: ShapingMode::Raw,
                antithetic: false,
                reuse_factor: 1,
                master_seed: spec.seed,
                ..EsConfig::default()
            };
            let mu = vec![MatrixParam::zeros(c.rows, c.cols)];
            let (next, _) = eggroll_step(&mu, &cfg, 0, &fit)?;
            Ok((c, numerical_rank(&next[0].mu, spec.rel_tol)))
        })
        .collect()
}

pub fn rank_law_table(rows: &[(RankCase, usize)]) -> CsvTable {
    let mut t = CsvTable::new("rank_law", 1, &["N", "r", "m", "n", "numerical_rank", "expected"]);
    for (c, got) in rows {
        t.row(vec![
            c.pop.to_string(),
            c.rank.to_string(),
            c.rows.to_string(),
            c.cols.to_string(),
            got.to_string(),
            c.expected().to_string(),
        ]);
    }
    t
}
