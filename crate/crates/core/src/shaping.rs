//! Fitness shaping applied before aggregation.

use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};

/// Default floor for the global standard deviation in [`group_z_score`].
pub const Z_SCORE_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ShapingMode {
    Raw,
    #[default]
    CenteredRank,
    /// Members `(2k, 2k+1)` are an antithetic pair.
    AntitheticSign,
    /// Rows of the score matrix are the evaluation data sets.
    GroupZScore,
}

impl FromStr for ShapingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(ShapingMode::Raw),
            "rank" => Ok(ShapingMode::CenteredRank),
            "sign" => Ok(ShapingMode::AntitheticSign),
            "zscore" => Ok(ShapingMode::GroupZScore),
            other => invalid(format!("unknown shaping mode '{other}' (raw|rank|sign|zscore)")),
        }
    }
}

impl fmt::Display for ShapingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShapingMode::Raw => "raw",
            ShapingMode::CenteredRank => "rank",
            ShapingMode::AntitheticSign => "sign",
            ShapingMode::GroupZScore => "zscore",
        })
    }
}

/// Average ranks mapped linearly onto `[-0.5, 0.5]`.
pub fn centered_rank(fitness: &[f64]) -> Vec<f64> {
    let n = fitness.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| fitness[i].total_cmp(&fitness[j]));
    let mut ranks = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && fitness[order[end]] == fitness[order[start]] {
            end += 1;
        }
        let avg = (start + end - 1) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = avg;
        }
        start = end;
    }
    let denom = (n - 1) as f64;
    ranks.iter().map(|r| r / denom - 0.5).collect()
}

pub fn antithetic_sign(s_plus: f64, s_minus: f64) -> i8 {
    match s_plus.partial_cmp(&s_minus) {
        Some(std::cmp::Ordering::Greater) => 1,
        Some(std::cmp::Ordering::Less) => -1,
        _ => 0,
    }
}

/// Per-pair signs written back to members: `(F, −F)` for each pair, so that
/// together with the mirrored perturbations `(+E, −E)` every pair contributes
/// `2·F·E`.
pub fn antithetic_member_fitness(fitness: &[f64]) -> Result<Vec<f64>> {
    if fitness.len() % 2 != 0 {
        return invalid(format!(
            "antithetic shaping needs an even population, got {}",
            fitness.len()
        ));
    }
    Ok(fitness
        .chunks_exact(2)
        .flat_map(|p| {
            let f = f64::from(antithetic_sign(p[0], p[1]));
            [f, -f]
        })
        .collect())
}

/// Group-relative score: `s̄ᵢ = (1/m) Σⱼ (S[j,i] − μⱼ) / σ̄`.
///
/// `scores[j][i]` is member `i` on question `j`; `μⱼ` is the row mean and `σ̄`
/// the population standard deviation over all entries, floored at `eps`.
pub fn group_z_score(scores: &[Vec<f64>], eps: f64) -> Result<Vec<f64>> {
    let m = scores.len();
    let Some(n) = scores.first().map(Vec::len) else {
        return invalid("group z-score needs at least one question");
    };
    if n == 0 || scores.iter().any(|row| row.len() != n) {
        return invalid("group z-score needs a non-empty rectangular score matrix");
    }
    let centered: Vec<Vec<f64>> = scores
        .iter()
        .map(|row| {
            let mean = row.iter().sum::<f64>() / n as f64;
            row.iter().map(|s| s - mean).collect()
        })
        .collect();
    // Row-centering first makes the global variance exactly shift invariant.
    let total = (m * n) as f64;
    let grand: f64 = centered.iter().flatten().sum::<f64>() / total;
    let var = centered
        .iter()
        .flatten()
        .map(|c| (c - grand).powi(2))
        .sum::<f64>()
        / total;
    let sd = var.sqrt().max(eps);
    Ok((0..n)
        .map(|i| centered.iter().map(|row| row[i]).sum::<f64>() / (m as f64 * sd))
        .collect())
}

/// Shapes a population given its per-evaluation scores.
///
/// `scores[j][i]` is member `i` on evaluation `j`. Every mode but
/// [`ShapingMode::GroupZScore`] first averages over evaluations.
pub fn shape(mode: ShapingMode, scores: &[Vec<f64>]) -> Result<Vec<f64>> {
    if mode == ShapingMode::GroupZScore {
        return group_z_score(scores, Z_SCORE_EPS);
    }
    let raw = mean_over_evals(scores)?;
    match mode {
        ShapingMode::Raw => Ok(raw),
        ShapingMode::CenteredRank => Ok(centered_rank(&raw)),
        ShapingMode::AntitheticSign => antithetic_member_fitness(&raw),
        ShapingMode::GroupZScore => unreachable!(),
    }
}

pub fn mean_over_evals(scores: &[Vec<f64>]) -> Result<Vec<f64>> {
    let Some(n) = scores.first().map(Vec::len) else {
        return invalid("no evaluations");
    };
    if scores.iter().any(|row| row.len() != n) {
        return invalid("ragged score matrix");
    }
    let m = scores.len() as f64;
    Ok((0..n)
        .map(|i| scores.iter().map(|row| row[i]).sum::<f64>() / m)
        .collect())
}
