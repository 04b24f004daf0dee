//! Rank-`r` perturbations `E = (1/√r)ABᵀ` that are never materialized on
//! the hot path.

use std::sync::atomic::{AtomicBool, Ordering};

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};
use crate::prng::{fill_gaussian, fill_ggd, StreamKey};

/// Distribution of the factor entries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FactorDist {
    Gaussian { sigma0: f64 },
    Ggd { scale: f64, shape: f64 },
}

impl Default for FactorDist {
    fn default() -> Self {
        FactorDist::Gaussian { sigma0: 1.0 }
    }
}

impl FactorDist {
    pub fn fill(&self, key: StreamKey, count: usize) -> Result<Vec<f64>> {
        match *self {
            FactorDist::Gaussian { sigma0 } => fill_gaussian(key, count, sigma0),
            FactorDist::Ggd { scale, shape } => fill_ggd(key, count, scale, shape),
        }
    }
}

/// The mean parameter `μ` of one matrix-shaped parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixParam {
    pub mu: DMatrix<f64>,
}

impl MatrixParam {
    pub fn new(mu: DMatrix<f64>) -> Self {
        MatrixParam { mu }
    }

    pub fn zeros(m: usize, n: usize) -> Self {
        MatrixParam {
            mu: DMatrix::zeros(m, n),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.mu.shape()
    }

    pub fn is_finite(&self) -> bool {
        self.mu.iter().all(|v| v.is_finite())
    }
}

/// `A: m×r`, `B: n×r`, representing `(1/√r)ABᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankFactors {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl LowRankFactors {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if a.ncols() != b.ncols() || a.ncols() == 0 {
            return invalid(format!(
                "factor ranks disagree or are zero: A has {} columns, B has {}",
                a.ncols(),
                b.ncols()
            ));
        }
        Ok(LowRankFactors { a, b })
    }

    pub fn rank(&self) -> usize {
        self.a.ncols()
    }

    pub fn scale(&self) -> f64 {
        1.0 / (self.rank() as f64).sqrt()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.a.nrows(), self.b.nrows())
    }

    /// The same perturbation with its sign flipped (A negated).
    pub fn negated(&self) -> Self {
        LowRankFactors {
            a: -&self.a,
            b: self.b.clone(),
        }
    }
}

static RANK_WARNED: AtomicBool = AtomicBool::new(false);

/// Samples `A` from `key_a` and `B` from `key_b`. Entries fill column-major,
/// so the first `r'` columns are shared by every rank `r ≥ r'` drawn from the
/// same keys.
pub fn sample_factors(
    key_a: StreamKey,
    key_b: StreamKey,
    m: usize,
    n: usize,
    r: usize,
    dist: FactorDist,
) -> Result<LowRankFactors> {
    if m == 0 || n == 0 || r == 0 {
        return invalid(format!("factor dims must be positive, got m={m} n={n} r={r}"));
    }
    if r > m.min(n) && !RANK_WARNED.swap(true, Ordering::Relaxed) {
        warn!("rank {r} exceeds min({m}, {n}); perturbation is effectively full rank (warned once)");
    }
    let a = DMatrix::from_vec(m, r, dist.fill(key_a, m * r)?);
    let b = DMatrix::from_vec(n, r, dist.fill(key_b, n * r)?);
    LowRankFactors::new(a, b)
}

/// Dense `(1/√r)ABᵀ`. Oracle and analysis use only.
pub fn materialize(factors: &LowRankFactors) -> DMatrix<f64> {
    &factors.a * factors.b.transpose() * factors.scale()
}

fn check_input(len: usize, mu: &MatrixParam, factors: &LowRankFactors) -> Result<()> {
    let (m, n) = mu.dims();
    if len != n {
        return invalid(format!("input length {len} does not match μ columns {n}"));
    }
    if factors.dims() != (m, n) {
        return invalid(format!(
            "factors are {:?} but μ is {m}×{n}",
            factors.dims()
        ));
    }
    Ok(())
}

/// `x(μ + σE)ᵀ` evaluated as `xμᵀ + (σ/√r)(xB)Aᵀ`.
pub fn perturbed_forward(
    x: &DVector<f64>,
    mu: &MatrixParam,
    factors: &LowRankFactors,
    sigma: f64,
) -> Result<DVector<f64>> {
    check_input(x.len(), mu, factors)?;
    let base = &mu.mu * x;
    Ok(add_low_rank(base, x.as_slice(), factors, sigma))
}

fn add_low_rank(
    mut base: DVector<f64>,
    x: &[f64],
    factors: &LowRankFactors,
    sigma: f64,
) -> DVector<f64> {
    if sigma == 0.0 {
        return base;
    }
    let coef = sigma * factors.scale();
    for (acol, bcol) in factors.a.column_iter().zip(factors.b.column_iter()) {
        let xb: f64 = x.iter().zip(bcol.iter()).map(|(xi, bi)| xi * bi).sum();
        base.axpy(coef * xb, &acol, 1.0);
    }
    base
}

/// Population forward: row `i` of `xs` is pushed through `μ + σEᵢ`.
///
/// The dense `Xμᵀ` is one matrix product shared by the whole batch; each
/// member then only pays `O(r(m+n))` for its own correction.
pub fn perturbed_forward_batch(
    xs: &DMatrix<f64>,
    mu: &MatrixParam,
    factors: &[LowRankFactors],
    sigma: f64,
) -> Result<DMatrix<f64>> {
    if xs.nrows() != factors.len() {
        return invalid(format!(
            "{} inputs but {} factor sets",
            xs.nrows(),
            factors.len()
        ));
    }
    for f in factors {
        check_input(xs.ncols(), mu, f)?;
    }
    let mut out = xs * mu.mu.transpose();
    if sigma == 0.0 {
        return Ok(out);
    }
    for (i, f) in factors.iter().enumerate() {
        let coef = sigma * f.scale();
        let xrow = xs.row(i);
        for (acol, bcol) in f.a.column_iter().zip(f.b.column_iter()) {
            let xb = xrow.dot(&bcol.transpose());
            for (j, &av) in acol.iter().enumerate() {
                out[(i, j)] += coef * xb * av;
            }
        }
    }
    Ok(out)
}

/// Single-precision decomposed forward with 64-bit accumulation.
///
/// `mu` is `m×n` row-major, `a` is `m×r` and `b` is `n×r`, both column-major
/// (one contiguous column per rank-one term).
pub fn perturbed_forward_f32(
    x: &[f32],
    mu: &[f32],
    m: usize,
    a: &[f32],
    b: &[f32],
    r: usize,
    sigma: f32,
) -> Result<Vec<f32>> {
    let n = x.len();
    if mu.len() != m * n || a.len() != m * r || b.len() != n * r || r == 0 {
        return invalid("f32 forward: inconsistent buffer sizes");
    }
    let mut out: Vec<f64> = mu
        .chunks_exact(n)
        .map(|row| {
            row.iter()
                .zip(x)
                .map(|(&w, &xi)| f64::from(w) * f64::from(xi))
                .sum()
        })
        .collect();
    let coef = f64::from(sigma) / (r as f64).sqrt();
    for k in 0..r {
        let bcol = &b[k * n..(k + 1) * n];
        let acol = &a[k * m..(k + 1) * m];
        let xb: f64 = x
            .iter()
            .zip(bcol)
            .map(|(&xi, &bi)| f64::from(xi) * f64::from(bi))
            .sum();
        for (o, &ai) in out.iter_mut().zip(acol) {
            *o += coef * xb * f64::from(ai);
        }
    }
    Ok(out.into_iter().map(|v| v as f32).collect())
}

/// `(1/(N√r)) Σᵢ fᵢ AᵢBᵢᵀ` as one product of the stacked `[f₁A₁ | … | f_N A_N]`
/// and `[B₁ | … | B_N]`. No `Eᵢ` is formed. Members are stacked in index
/// order, so the reduction order does not depend on how fitnesses were
/// produced.
pub fn aggregate_update(factors: &[LowRankFactors], fitness: &[f64]) -> Result<DMatrix<f64>> {
    let Some(first) = factors.first() else {
        return invalid("empty population");
    };
    if factors.len() != fitness.len() {
        return invalid(format!(
            "{} factor sets but {} fitnesses",
            factors.len(),
            fitness.len()
        ));
    }
    let (m, n) = first.dims();
    let r = first.rank();
    if factors.iter().any(|f| f.dims() != (m, n) || f.rank() != r) {
        return invalid("factor sets disagree in shape or rank");
    }
    let total = factors.len() * r;
    let mut stacked_a = DMatrix::<f64>::zeros(m, total);
    let mut stacked_b = DMatrix::<f64>::zeros(n, total);
    for (i, (f, &fi)) in factors.iter().zip(fitness).enumerate() {
        stacked_a
            .columns_mut(i * r, r)
            .copy_from(&(&f.a * fi));
        stacked_b.columns_mut(i * r, r).copy_from(&f.b);
    }
    let norm = 1.0 / (factors.len() as f64 * (r as f64).sqrt());
    Ok(stacked_a * stacked_b.transpose() * norm)
}

/// Number of singular values above `rel_tol · σ_max`.
pub fn numerical_rank(mat: &DMatrix<f64>, rel_tol: f64) -> usize {
    let sv = mat.singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * max).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prng::{derive_stream, StreamTag};
    use proptest::prelude::*;

    fn keys(worker: u32) -> (StreamKey, StreamKey) {
        let k = derive_stream(42, 0, worker, 0, StreamTag::FactorA);
        (k, k.with_tag(StreamTag::FactorB))
    }

    fn factors(m: usize, n: usize, r: usize, worker: u32) -> LowRankFactors {
        let (ka, kb) = keys(worker);
        sample_factors(ka, kb, m, n, r, FactorDist::default()).unwrap()
    }

    fn dense_forward(x: &DVector<f64>, mu: &MatrixParam, f: &LowRankFactors, sigma: f64) -> DVector<f64> {
        (&mu.mu + materialize(f) * sigma) * x
    }

    #[test]
    fn sample_shapes_and_determinism() {
        let f = factors(4, 3, 1, 0);
        assert_eq!(f.a.shape(), (4, 1));
        assert_eq!(f.b.shape(), (3, 1));
        assert_eq!(f, factors(4, 3, 1, 0));
        assert_ne!(f, factors(4, 3, 1, 1));
        assert!((f.scale() - 1.0).abs() < 1e-15);
        assert!((factors(4, 3, 4, 0).scale() - 0.5).abs() < 1e-15);
        let (ka, kb) = keys(0);
        assert!(sample_factors(ka, kb, 0, 3, 1, FactorDist::default()).is_err());
        assert!(sample_factors(ka, kb, 3, 3, 0, FactorDist::default()).is_err());
    }

    #[test]
    fn lower_ranks_are_prefixes() {
        let f8 = factors(5, 6, 8, 3);
        let f2 = factors(5, 6, 2, 3);
        assert_eq!(f8.a.columns(0, 2), f2.a);
        assert_eq!(f8.b.columns(0, 2), f2.b);
    }

    #[test]
    fn materialize_examples() {
        let f = LowRankFactors::new(
            DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
            DMatrix::from_row_slice(2, 1, &[2.0, 3.0]),
        )
        .unwrap();
        assert_eq!(materialize(&f), DMatrix::from_row_slice(2, 2, &[2.0, 3.0, 0.0, 0.0]));

        let f2 = factors(3, 4, 2, 9);
        let a1 = f2.a.column(0);
        let a2 = f2.a.column(1);
        let b1 = f2.b.column(0);
        let b2 = f2.b.column(1);
        let expect = (a1 * b1.transpose() + a2 * b2.transpose()) / 2f64.sqrt();
        assert!((materialize(&f2) - expect).amax() < 1e-14);

        let zero = LowRankFactors::new(DMatrix::zeros(3, 2), f2.b.clone()).unwrap();
        assert_eq!(materialize(&zero), DMatrix::zeros(3, 4));
    }

    #[test]
    fn materialized_rank_is_min() {
        for (m, n, r) in [(6, 5, 2), (4, 9, 4), (3, 3, 5)] {
            let e = materialize(&factors(m, n, r, 1));
            assert_eq!(numerical_rank(&e, 1e-10), r.min(m).min(n));
        }
    }

    #[test]
    fn perturbed_forward_examples() {
        let mu = MatrixParam::new(DMatrix::from_fn(8, 8, |i, j| ((i * 8 + j) as f64 * 0.37).sin()));
        let x = DVector::from_fn(8, |i, _| (i as f64 * 0.91).cos());
        let f = factors(8, 8, 1, 2);
        assert_eq!(perturbed_forward(&x, &mu, &f, 0.0).unwrap(), &mu.mu * &x);
        let got = perturbed_forward(&x, &mu, &f, 0.1).unwrap();
        let want = dense_forward(&x, &mu, &f, 0.1);
        assert!((got - &want).amax() <= 1e-12 * want.amax());
        let bad = DVector::zeros(7);
        assert!(perturbed_forward(&bad, &mu, &f, 0.1).is_err());
    }

    #[test]
    fn batch_rows_match_their_own_oracle() {
        let mu = MatrixParam::new(DMatrix::from_fn(12, 10, |i, j| ((i + 3 * j) as f64).sin()));
        let fs: Vec<_> = (0..32).map(|w| factors(12, 10, 2, w)).collect();
        let xs = DMatrix::from_fn(32, 10, |i, j| ((i * 10 + j) as f64 * 0.13).cos());
        let out = perturbed_forward_batch(&xs, &mu, &fs, 0.3).unwrap();
        for (i, f) in fs.iter().enumerate() {
            let x = xs.row(i).transpose();
            let want = dense_forward(&x, &mu, f, 0.3);
            let got = out.row(i).transpose();
            assert!((got - &want).amax() <= 1e-12 * want.amax().max(1.0));
        }
    }

    #[test]
    fn f32_forward_matches_dense() {
        let (m, n, r) = (8, 16, 3);
        let f = factors(m, n, r, 4);
        let mu: Vec<f32> = (0..m * n).map(|i| ((i as f32) * 0.7).sin()).collect();
        let x: Vec<f32> = (0..n).map(|i| ((i as f32) * 1.3).cos()).collect();
        let a: Vec<f32> = f.a.iter().map(|&v| v as f32).collect();
        let b: Vec<f32> = f.b.iter().map(|&v| v as f32).collect();
        let got = perturbed_forward_f32(&x, &mu, m, &a, &b, r, 0.2).unwrap();
        let e = materialize(&LowRankFactors::new(
            DMatrix::from_column_slice(m, r, &a.iter().map(|&v| f64::from(v)).collect::<Vec<_>>()),
            DMatrix::from_column_slice(n, r, &b.iter().map(|&v| f64::from(v)).collect::<Vec<_>>()),
        )
        .unwrap());
        let dense = DMatrix::from_row_slice(m, n, &mu.iter().map(|&v| f64::from(v)).collect::<Vec<_>>()) + e * 0.2f32 as f64;
        let want = dense * DVector::from_iterator(n, x.iter().map(|&v| f64::from(v)));
        let scale = want.amax();
        for (g, w) in got.iter().zip(want.iter()) {
            assert!((f64::from(*g) - w).abs() <= 1e-5 * scale);
        }
    }

    #[test]
    fn aggregate_examples() {
        let fs: Vec<_> = (0..3).map(|w| factors(5, 4, 1, w)).collect();
        assert_eq!(aggregate_update(&fs, &[0.0; 3]).unwrap(), DMatrix::zeros(5, 4));
        let fit = [0.3, -1.2, 2.0];
        let got = aggregate_update(&fs, &fit).unwrap();
        let mut want = DMatrix::zeros(5, 4);
        for (f, fi) in fs.iter().zip(fit) {
            want += materialize(f) * fi;
        }
        want /= 3.0;
        assert!((got - want).amax() < 1e-10);

        let f = factors(5, 4, 2, 7);
        let pair = [f.clone(), f.negated()];
        assert!(aggregate_update(&pair, &[1.5, 1.5]).unwrap().amax() < 1e-15);
        assert!(aggregate_update(&[], &[]).is_err());
        assert!(aggregate_update(&pair, &[1.0]).is_err());
    }

    #[test]
    fn rank_law_small() {
        let fs: Vec<_> = (0..3).map(|w| factors(16, 16, 2, w)).collect();
        let up = aggregate_update(&fs, &[0.7, -0.2, 1.1]).unwrap();
        assert_eq!(numerical_rank(&up, 1e-8), 6);
    }

    #[test]
    fn entry_variance_is_rank_independent() {
        // Var((1/√r) Σ a b) = σ₀⁴ = 1 for every r.
        for r in [1usize, 4] {
            let mut sum = 0.0;
            let mut sum2 = 0.0;
            let samples = 100_000;
            for s in 0..samples as u32 {
                let (ka, kb) = keys(s);
                let f = sample_factors(ka.with_layer(r as u32), kb.with_layer(r as u32), 1, 1, r, FactorDist::default()).unwrap();
                let e = materialize(&f)[(0, 0)];
                sum += e;
                sum2 += e * e;
            }
            let mean = sum / samples as f64;
            let var = sum2 / samples as f64 - mean * mean;
            assert!((var - 1.0).abs() < 0.03, "r={r} var={var}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn decomposition_identity(m in 1usize..48, n in 1usize..48, r in 1usize..8, sigma in 0.01f64..1.0, w in 0u32..1000) {
            let mu = MatrixParam::new(DMatrix::from_fn(m, n, |i, j| ((i * 31 + j * 7 + w as usize) as f64 * 0.1).sin()));
            let x = DVector::from_fn(n, |i, _| ((i + w as usize) as f64 * 0.3).cos());
            let f = factors(m, n, r, w);
            let got = perturbed_forward(&x, &mu, &f, sigma).unwrap();
            let want = dense_forward(&x, &mu, &f, sigma);
            prop_assert!((got - &want).amax() <= 1e-12 * want.amax().max(1e-300));
        }

        #[test]
        fn aggregation_identity(m in 1usize..20, n in 1usize..20, r in 1usize..5, pop in 1usize..10, w in 0u32..1000) {
            let fs: Vec<_> = (0..pop as u32).map(|i| factors(m, n, r, w * 16 + i)).collect();
            let fit: Vec<f64> = (0..pop).map(|i| ((i as f64) * 1.7 + w as f64).sin()).collect();
            let got = aggregate_update(&fs, &fit).unwrap();
            let mut want = DMatrix::zeros(m, n);
            for (f, fi) in fs.iter().zip(&fit) {
                want += materialize(f) * *fi;
            }
            want /= pop as f64;
            prop_assert!((got - want).amax() < 1e-10);
        }
    }
}
