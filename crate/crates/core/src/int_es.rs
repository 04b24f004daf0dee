//! Integer-only ES for EGG. This file must stay free of floating point.
//!
//! Each antithetic pair draws a rank-1 perturbation `(a, b)` per matrix from a
//! pre-generated table of `round(16·N(0,1))` values; member `2p` applies
//! `+a`, member `2p+1` applies `−a`. The pair's shaped fitness is the sign of
//! the loss difference, and every parameter entry moves by at most one bin
//! per step when `|(F ⊙ A)ᵀB|` clears the threshold.

use std::time::{Duration, Instant};

use log::info;
use rand::RngCore;
use rayon::prelude::*;

use crate::egg::forward::{dot_i8, egg_forward_with, sat8_wide, token_loss, EggScratch, Perturber, Unperturbed};
use crate::egg::{EggParams, EggState, IntMatrix, LookupTables, MatrixId, VOCAB};
use crate::error::{invalid, Result};
use crate::prng::{derive_stream, StreamTag};

/// One member's rank-1 perturbation of one matrix.
#[derive(Debug, Clone, Copy)]
pub struct IntPerturbation<'a> {
    /// Output side, length `m`.
    pub a: &'a [i8],
    /// Input side, length `n`.
    pub b: &'a [i8],
    /// `σ = 2^-σ̂`
    pub sigma_shift: u32,
    /// Apply `−a` (the mirrored member of a pair).
    pub negate: bool,
}

impl IntPerturbation<'_> {
    /// `((x·b)·aᵢ) >> (4 + σ̂)` before the matmul's own shift.
    #[inline]
    fn correction(&self, xb: i64, i: usize) -> i64 {
        let a = i64::from(self.a[i]);
        let a = if self.negate { -a } else { a };
        (xb * a) >> (4 + self.sigma_shift)
    }
}

#[inline]
fn perturbed_matmul_into(x: &[i8], theta: &IntMatrix, pert: &IntPerturbation<'_>, out: &mut [i8]) {
    let xb = i64::from(dot_i8(x, pert.b));
    let shift = theta.shift();
    for (i, o) in out.iter_mut().enumerate().take(theta.rows()) {
        let base = i64::from(dot_i8(x, theta.row(i)));
        *o = sat8_wide((base + pert.correction(xb, i)) >> shift);
    }
}

/// `I₈((xθᵀ + ((x·b)·a >> (4+σ̂))) / (16√n))`.
pub fn int_perturbed_matmul(x: &[i8], theta: &IntMatrix, pert: &IntPerturbation<'_>) -> Result<Vec<i8>> {
    if x.len() != theta.cols() || pert.b.len() != theta.cols() || pert.a.len() != theta.rows() {
        return invalid(format!(
            "perturbed matmul shapes: x {}, theta {}x{}, a {}, b {}",
            x.len(),
            theta.rows(),
            theta.cols(),
            pert.a.len(),
            pert.b.len()
        ));
    }
    let mut out = vec![0; theta.rows()];
    perturbed_matmul_into(x, theta, pert, &mut out);
    Ok(out)
}

/// `θ[t] + (b[t]·a >> (4+σ̂))`; the embedding is `one_hot(t)·θ`, so `x·b`
/// reduces to `b[t]` and there is no matmul divisor.
#[inline]
fn perturbed_embed_into(t: u8, emb: &IntMatrix, pert: &IntPerturbation<'_>, out: &mut [i8]) {
    let bt = i64::from(pert.b[t as usize]);
    for (i, (o, &w)) in out.iter_mut().zip(emb.row(t as usize)).enumerate() {
        *o = sat8_wide(i64::from(w) + pert.correction(bt, i));
    }
}

pub fn int_perturbed_embed(t: u8, emb: &IntMatrix, pert: &IntPerturbation<'_>) -> Result<Vec<i8>> {
    if pert.b.len() != VOCAB || pert.a.len() != emb.cols() {
        return invalid("embedding perturbation needs a of length D and b of length 256");
    }
    let mut out = vec![0; emb.cols()];
    perturbed_embed_into(t, emb, pert, &mut out);
    Ok(out)
}

/// `E = (F ⊙ A)ᵀ B` as a row-major `m × n` matrix, exact in 32 bits.
pub fn int_aggregate(a: &[&[i8]], b: &[&[i8]], f: &[i8]) -> Result<Vec<i32>> {
    if a.len() != b.len() || a.len() != f.len() {
        return invalid(format!("int_aggregate: {} a rows, {} b rows, {} fitnesses", a.len(), b.len(), f.len()));
    }
    let (m, n) = match (a.first(), b.first()) {
        (Some(x), Some(y)) => (x.len(), y.len()),
        _ => return Ok(Vec::new()),
    };
    if a.iter().any(|r| r.len() != m) || b.iter().any(|r| r.len() != n) {
        return invalid("int_aggregate: ragged rows");
    }
    let mut e = vec![0i32; m * n];
    for ((ar, br), &fk) in a.iter().zip(b).zip(f) {
        if fk == 0 {
            continue;
        }
        for (i, &ai) in ar.iter().enumerate() {
            let coef = i32::from(fk) * i32::from(ai);
            if coef == 0 {
                continue;
            }
            for (ej, &bj) in e[i * n..(i + 1) * n].iter_mut().zip(br.iter()) {
                *ej += coef * i32::from(bj);
            }
        }
    }
    Ok(e)
}

/// Moves `θ` one bin toward `sign(E)` wherever `|E| > τ`. Returns the number
/// of entries that changed. `e` is indexed like `θ`.
pub fn int_update(theta: &mut [i8], e: &[i32], tau: i64) -> Result<u64> {
    if tau <= 0 {
        return invalid(format!("threshold must be positive, got {tau}"));
    }
    if theta.len() != e.len() {
        return invalid("int_update: shape mismatch");
    }
    let mut moved = 0;
    for (w, &ev) in theta.iter_mut().zip(e) {
        if i64::from(ev).abs() > tau {
            let next = (i32::from(*w) + ev.signum()).clamp(-127, 127) as i8;
            if next != *w {
                moved += 1;
                *w = next;
            }
        }
    }
    Ok(moved)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntTrainConfig {
    pub pop_size: usize,
    pub sigma_shift: u32,
    /// Update threshold τ; `i64::MAX` freezes the parameters.
    pub threshold: i64,
    /// Tokens per member per update.
    pub segment_len: usize,
    /// Members sharing one training sequence; even so pairs share data.
    pub reuse_factor: usize,
    /// Sequences each member is evaluated on per update.
    pub evals_per_member: usize,
    pub master_seed: u64,
    pub noise_table_len: usize,
}

impl Default for IntTrainConfig {
    fn default() -> Self {
        IntTrainConfig {
            pop_size: 512,
            sigma_shift: 4,
            threshold: 1 << 14,
            segment_len: 16,
            reuse_factor: 2,
            evals_per_member: 1,
            master_seed: 0,
            noise_table_len: 1 << 20,
        }
    }
}

impl IntTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pop_size < 2 || self.pop_size % 2 != 0 {
            return invalid(format!("pop_size must be even and >= 2, got {}", self.pop_size));
        }
        if self.reuse_factor == 0 || self.reuse_factor % 2 != 0 {
            return invalid("reuse_factor must be a positive even number");
        }
        if self.segment_len == 0 || self.evals_per_member == 0 {
            return invalid("segment_len and evals_per_member must be positive");
        }
        if self.threshold <= 0 {
            return invalid("threshold must be positive");
        }
        if self.sigma_shift > 24 {
            return invalid("sigma_shift must be at most 24");
        }
        Ok(())
    }

    pub fn pairs(&self) -> usize {
        self.pop_size / 2
    }

    pub fn sequences(&self) -> usize {
        self.pop_size.div_ceil(self.reuse_factor) * self.evals_per_member
    }

    pub fn sequence_of(&self, member: usize, eval: usize) -> usize {
        (member / self.reuse_factor) * self.evals_per_member + eval
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntStepMetrics {
    pub step: u64,
    /// Sum of per-token log-likelihoods over all members, 1/16-bit units.
    pub loss_sum: i64,
    pub tokens: u64,
    pub positive: usize,
    pub negative: usize,
    pub ties: usize,
    /// Parameter entries that moved a bin.
    pub moved: u64,
    pub wraps: usize,
    pub elapsed: Duration,
}

/// Offsets of a pair's `(a, b)` vectors inside the noise table, per matrix.
fn pair_offsets(cfg: &IntTrainConfig, params: &EggParams, ids: &[MatrixId], step: u64, pair: usize) -> Vec<(usize, usize)> {
    ids.iter()
        .map(|&id| {
            let (m, n) = id.io_dims(&params.dims);
            let mut rng = derive_stream(cfg.master_seed, step, pair as u32, id.index() as u32, StreamTag::FactorA).rng();
            let a = (rng.next_u64() % (cfg.noise_table_len - m + 1) as u64) as usize;
            let b = (rng.next_u64() % (cfg.noise_table_len - n + 1) as u64) as usize;
            (a, b)
        })
        .collect()
}

struct MemberNoise<'a> {
    table: &'a [i8],
    offsets: &'a [(usize, usize)],
    ids: &'a [MatrixId],
    dims: &'a crate::egg::EggDims,
    sigma_shift: u32,
    negate: bool,
}

impl MemberNoise<'_> {
    #[inline]
    fn pert(&self, id: MatrixId) -> IntPerturbation<'_> {
        let (m, n) = id.io_dims(self.dims);
        let (ao, bo) = self.offsets[id.index()];
        debug_assert_eq!(self.ids[id.index()], id);
        IntPerturbation {
            a: &self.table[ao..ao + m],
            b: &self.table[bo..bo + n],
            sigma_shift: self.sigma_shift,
            negate: self.negate,
        }
    }
}

impl Perturber for MemberNoise<'_> {
    #[inline]
    fn matmul(&self, id: MatrixId, x: &[i8], theta: &IntMatrix, out: &mut [i8]) {
        perturbed_matmul_into(x, theta, &self.pert(id), out);
    }

    #[inline]
    fn embed(&self, t: u8, emb: &IntMatrix, out: &mut [i8]) {
        perturbed_embed_into(t, emb, &self.pert(MatrixId::Emb), out);
    }
}

/// Runs `tokens` through the model, resetting at 0x00, and returns the summed
/// next-byte log-likelihood.
fn run_segment<P: Perturber>(
    p: &P,
    params: &EggParams,
    tables: &LookupTables,
    state: &mut EggState,
    inputs: &[u8],
    targets: &[u8],
    sc: &mut EggScratch,
    logits: &mut [i8],
) -> i64 {
    let mut total = 0i64;
    for (&t, &next) in inputs.iter().zip(targets) {
        if t == 0 {
            state.reset();
        }
        egg_forward_with(p, t, state, params, tables, sc, logits);
        total += i64::from(token_loss(logits, next, tables));
    }
    total
}

/// Unperturbed log-likelihood of every byte after the first, from a zero
/// state. Returns `(sum in 1/16 bits, predicted bytes)`.
pub fn evaluate_corpus(params: &EggParams, bytes: &[u8]) -> (i64, u64) {
    if bytes.len() < 2 {
        return (0, 0);
    }
    let tables = LookupTables::get();
    let mut state = EggState::zeros(&params.dims);
    let mut sc = EggScratch::new(params.dims.hidden());
    let mut logits = vec![0i8; VOCAB];
    let n = bytes.len() - 1;
    let sum = run_segment(&Unperturbed, params, tables, &mut state, &bytes[..n], &bytes[1..], &mut sc, &mut logits);
    (sum, n as u64)
}

/// Training state: parameters, per-member hidden states and data cursors.
#[derive(Debug, Clone)]
pub struct IntTrainer {
    pub cfg: IntTrainConfig,
    pub params: EggParams,
    pub step: u64,
    table: Vec<i8>,
    /// `states[member * evals + eval]`
    states: Vec<EggState>,
    cursors: Vec<usize>,
}

impl IntTrainer {
    /// `noise` must hold `cfg.noise_table_len` values (see
    /// [`crate::egg::noise_table`]).
    pub fn new(cfg: IntTrainConfig, params: EggParams, noise: Vec<i8>, corpus_len: usize) -> Result<Self> {
        cfg.validate()?;
        let d = params.dims.hidden();
        if noise.len() != cfg.noise_table_len || noise.len() < 4 * d.max(VOCAB) {
            return invalid(format!("noise table has {} entries, config says {}", noise.len(), cfg.noise_table_len));
        }
        if noise.contains(&i8::MIN) || !params.in_range() {
            return invalid("-128 in parameters or noise table");
        }
        let span = cfg.segment_len + 1;
        if corpus_len < 2 * span {
            return invalid(format!("corpus of {corpus_len} bytes is too short for segments of {}", cfg.segment_len));
        }
        let cursors = (0..cfg.sequences())
            .map(|s| {
                let mut rng = derive_stream(cfg.master_seed, 0, s as u32, 0, StreamTag::Data).rng();
                (rng.next_u64() % (corpus_len - span + 1) as u64) as usize
            })
            .collect();
        let states = vec![EggState::zeros(&params.dims); cfg.pop_size * cfg.evals_per_member];
        Ok(IntTrainer { cfg, params, step: 0, table: noise, states, cursors })
    }

    pub fn cursors(&self) -> &[usize] {
        &self.cursors
    }

    pub fn states(&self) -> &[EggState] {
        &self.states
    }

    /// One update on `corpus`.
    pub fn train_step(&mut self, corpus: &[u8]) -> Result<IntStepMetrics> {
        let start = Instant::now();
        let cfg = &self.cfg;
        let span = cfg.segment_len + 1;
        if self.cursors.iter().any(|&c| c + span > corpus.len()) {
            return invalid("corpus shorter than the one the trainer was built for");
        }
        let ids = MatrixId::all(self.params.dims.layers);
        let tables = LookupTables::get();
        let evals = cfg.evals_per_member;
        let params = &self.params;
        let table = &self.table;
        let cursors = &self.cursors;
        let step = self.step;

        // Evaluate all pairs; each pair owns its members' states.
        let results: Vec<(Vec<(usize, usize)>, i64, i64)> = self
            .states
            .par_chunks_mut(2 * evals)
            .enumerate()
            .map(|(pair, states)| {
                let offsets = pair_offsets(cfg, params, &ids, step, pair);
                let mut sc = EggScratch::new(params.dims.hidden());
                let mut logits = vec![0i8; VOCAB];
                let mut fit = [0i64; 2];
                for (side, f) in fit.iter_mut().enumerate() {
                    let member = 2 * pair + side;
                    let noise = MemberNoise {
                        table,
                        offsets: &offsets,
                        ids: &ids,
                        dims: &params.dims,
                        sigma_shift: cfg.sigma_shift,
                        negate: side == 1,
                    };
                    for j in 0..evals {
                        let c = cursors[cfg.sequence_of(member, j)];
                        let seg = &corpus[c..c + span];
                        let state = &mut states[side * evals + j];
                        *f += run_segment(&noise, params, tables, state, &seg[..span - 1], &seg[1..], &mut sc, &mut logits);
                    }
                }
                (offsets, fit[0], fit[1])
            })
            .collect();

        let signs: Vec<i8> = results.iter().map(|(_, sp, sm)| (sp - sm).signum() as i8).collect();
        let loss_sum = results.iter().map(|(_, sp, sm)| sp + sm).sum();

        // Single-writer update, parameters in a fixed order.
        let mut moved = 0;
        if cfg.threshold != i64::MAX {
            // each pair contributes (F, a) and (−F, −a): twice the pair term
            let f2: Vec<i8> = signs.iter().map(|&s| 2 * s).collect();
            let dims = self.params.dims;
            for (k, &id) in ids.iter().enumerate() {
                let (m, n) = id.io_dims(&dims);
                let a: Vec<&[i8]> = results.iter().map(|(o, _, _)| &table[o[k].0..o[k].0 + m]).collect();
                let b: Vec<&[i8]> = results.iter().map(|(o, _, _)| &table[o[k].1..o[k].1 + n]).collect();
                let e = int_aggregate(&a, &b, &f2)?;
                let e = if id == MatrixId::Emb { transpose(&e, m, n) } else { e };
                moved += int_update(self.params.matrix_mut(id).data_mut(), &e, cfg.threshold)?;
            }
        }

        // Advance the data; a wrap starts the sequence's members from zero state.
        let mut wraps = 0;
        for (s, c) in self.cursors.iter_mut().enumerate() {
            *c += cfg.segment_len;
            if *c + span > corpus.len() {
                *c = 0;
                wraps += 1;
                for member in 0..cfg.pop_size {
                    for j in 0..evals {
                        if cfg.sequence_of(member, j) == s {
                            self.states[member * evals + j].reset();
                        }
                    }
                }
            }
        }
        if wraps > 0 {
            info!("step {}: {wraps} sequence cursors wrapped to the start of the corpus", self.step);
        }

        let metrics = IntStepMetrics {
            step: self.step,
            loss_sum,
            tokens: (cfg.pop_size * evals * cfg.segment_len) as u64,
            positive: signs.iter().filter(|&&s| s > 0).count(),
            negative: signs.iter().filter(|&&s| s < 0).count(),
            ties: signs.iter().filter(|&&s| s == 0).count(),
            moved,
            wraps,
            elapsed: start.elapsed(),
        };
        self.step += 1;
        Ok(metrics)
    }
}

fn transpose(e: &[i32], m: usize, n: usize) -> Vec<i32> {
    let mut t = vec![0; m * n];
    for i in 0..m {
        for j in 0..n {
            t[j * m + i] = e[i * n + j];
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::egg::forward::scaled_matmul;
    use crate::egg::{init_params, noise_table, EggDims};

    fn xorshift(seed: &mut u64) -> u64 {
        *seed ^= *seed << 13;
        *seed ^= *seed >> 7;
        *seed ^= *seed << 17;
        *seed
    }

    fn rand_i8(seed: &mut u64, n: usize) -> Vec<i8> {
        (0..n).map(|_| ((xorshift(seed) % 255) as i32 - 127) as i8).collect()
    }

    fn small_setup(cfg: &IntTrainConfig) -> (EggParams, Vec<i8>, Vec<u8>) {
        let dims = EggDims::new(1, 1).unwrap();
        let params = init_params(dims, derive_stream(cfg.master_seed, 0, 0, 0, StreamTag::Init)).unwrap();
        let noise = noise_table(derive_stream(cfg.master_seed, 0, 1, 0, StreamTag::Init), cfg.noise_table_len).unwrap();
        let corpus: Vec<u8> = b"the cat sat on the mat.\0a dog ran.\0".iter().cycle().take(4000).cloned().collect();
        (params, noise, corpus)
    }

    fn small_cfg() -> IntTrainConfig {
        IntTrainConfig {
            pop_size: 8,
            segment_len: 8,
            threshold: 600,
            noise_table_len: 1 << 12,
            master_seed: 5,
            ..IntTrainConfig::default()
        }
    }

    #[test]
    fn zero_a_is_plain_matmul() {
        let mut seed = 3;
        let theta = IntMatrix::from_vec(8, 16, rand_i8(&mut seed, 128)).unwrap();
        let x = rand_i8(&mut seed, 16);
        let b = rand_i8(&mut seed, 16);
        let a = vec![0i8; 8];
        let p = IntPerturbation { a: &a, b: &b, sigma_shift: 2, negate: false };
        assert_eq!(int_perturbed_matmul(&x, &theta, &p).unwrap(), scaled_matmul(&x, &theta).unwrap());
        assert!(int_perturbed_matmul(&x[..4], &theta, &p).is_err());
    }

    #[test]
    fn mirrored_corrections_differ_in_sign() {
        let mut seed = 11;
        let a = rand_i8(&mut seed, 8);
        let b = rand_i8(&mut seed, 16);
        let x = rand_i8(&mut seed, 16);
        let xb = i64::from(dot_i8(&x, &b));
        let plus = IntPerturbation { a: &a, b: &b, sigma_shift: 0, negate: false };
        let minus = IntPerturbation { negate: true, ..plus };
        for i in 0..8 {
            let raw = xb * i64::from(a[i]);
            assert_eq!(plus.correction(xb, i), raw >> 4);
            assert_eq!(minus.correction(xb, i), (-raw) >> 4);
        }
    }

    #[test]
    fn matches_materialized_oracle() {
        // inputs distributed like the model's: round(16·N(0,1))
        let cases = 400;
        let pool = noise_table(derive_stream(21, 0, 0, 0, StreamTag::Init), cases * 168).unwrap();
        let (mut within_one, mut total) = (0, 0);
        for case in pool.chunks_exact(168) {
            let theta = IntMatrix::from_vec(8, 16, case[..128].to_vec()).unwrap();
            let a = case[128..136].to_vec();
            let b = case[136..152].to_vec();
            let x = case[152..168].to_vec();
            let p = IntPerturbation { a: &a, b: &b, sigma_shift: 1, negate: false };
            let got = int_perturbed_matmul(&x, &theta, &p).unwrap();
            let xb = i64::from(dot_i8(&x, &b));
            let abs_x: i64 = x.iter().map(|&v| i64::from(v).abs()).sum();
            for i in 0..8 {
                // x · ((b aᵢ) >> (4+σ̂)), shifting each entry before the sum
                let corr: i64 = (0..16)
                    .map(|j| i64::from(x[j]) * ((i64::from(b[j]) * i64::from(a[i])) >> 5))
                    .sum();
                // each entry's floor loses less than one unit, weighted by |xⱼ|
                let ours = (xb * i64::from(a[i])) >> 5;
                assert!((ours - corr).abs() <= abs_x);
                let base = i64::from(dot_i8(&x, theta.row(i)));
                let oracle = sat8_wide((base + corr) >> 6);
                let diff = (i64::from(got[i]) - i64::from(oracle)).abs();
                assert!(diff <= abs_x / 64 + 1, "{} vs {oracle}", got[i]);
                within_one += usize::from(diff <= 1);
                total += 1;
            }
        }
        assert!(within_one * 100 >= 95 * total, "{within_one}/{total} within one bin");
    }

    #[test]
    fn embedding_perturbation() {
        let mut seed = 8;
        let emb = IntMatrix::from_vec(256, 4, rand_i8(&mut seed, 1024)).unwrap();
        let a = rand_i8(&mut seed, 4);
        let b = rand_i8(&mut seed, 256);
        let p = IntPerturbation { a: &a, b: &b, sigma_shift: 0, negate: false };
        let got = int_perturbed_embed(9, &emb, &p).unwrap();
        for i in 0..4 {
            let expect = i64::from(emb.row(9)[i]) + ((i64::from(b[9]) * i64::from(a[i])) >> 4);
            assert_eq!(i64::from(got[i]), expect.clamp(-127, 127));
        }
    }

    #[test]
    fn aggregate_examples() {
        let a1: Vec<i8> = vec![1, -2, 3];
        let b1: Vec<i8> = vec![4, 5];
        let na: Vec<i8> = a1.iter().map(|v| -v).collect();
        let e = int_aggregate(&[&a1, &na], &[&b1, &b1], &[1, -1]).unwrap();
        let expect: Vec<i32> = a1
            .iter()
            .flat_map(|&ai| b1.iter().map(move |&bj| 2 * i32::from(ai) * i32::from(bj)))
            .collect();
        assert_eq!(e, expect);
        assert_eq!(int_aggregate(&[&a1, &na], &[&b1, &b1], &[0, 0]).unwrap(), vec![0; 6]);
        assert!(int_aggregate(&[&a1], &[&b1, &b1], &[1]).is_err());

        let mut seed = 31;
        let n = 40;
        let rows_a: Vec<Vec<i8>> = (0..n).map(|_| rand_i8(&mut seed, 7)).collect();
        let rows_b: Vec<Vec<i8>> = (0..n).map(|_| rand_i8(&mut seed, 5)).collect();
        let f: Vec<i8> = (0..n).map(|_| (xorshift(&mut seed) % 3) as i8 - 1).collect();
        let ar: Vec<&[i8]> = rows_a.iter().map(|r| &r[..]).collect();
        let br: Vec<&[i8]> = rows_b.iter().map(|r| &r[..]).collect();
        let e = int_aggregate(&ar, &br, &f).unwrap();
        for i in 0..7 {
            for j in 0..5 {
                let mut s = 0i32;
                for k in 0..n {
                    s += i32::from(f[k]) * i32::from(rows_a[k][i]) * i32::from(rows_b[k][j]);
                }
                assert_eq!(e[i * 5 + j], s);
            }
        }
    }

    #[test]
    fn update_examples() {
        let mut theta = vec![0i8, 127, -127, 5];
        let unchanged = theta.clone();
        assert_eq!(int_update(&mut theta, &[10, -10, 3, 0], 10).unwrap(), 0);
        assert_eq!(theta, unchanged);
        assert_eq!(int_update(&mut theta, &[11, 1 << 30, -(1 << 30), -100], 10).unwrap(), 2);
        assert_eq!(theta, vec![1, 127, -127, 4]);
        assert!(int_update(&mut theta, &[0; 4], 0).is_err());
    }

    #[test]
    fn frozen_threshold_keeps_params_but_moves_state() {
        let cfg = IntTrainConfig { threshold: i64::MAX, ..small_cfg() };
        let (params, noise, corpus) = small_setup(&cfg);
        let mut tr = IntTrainer::new(cfg, params.clone(), noise, corpus.len()).unwrap();
        let c0 = tr.cursors().to_vec();
        let m = tr.train_step(&corpus).unwrap();
        assert_eq!(m.moved, 0);
        assert_eq!(tr.params, params);
        assert_ne!(tr.cursors(), &c0[..]);
        assert!(tr.states().iter().any(|s| s.data().iter().any(|&v| v != 0)));
    }

    #[test]
    fn training_is_deterministic_and_bounded() {
        let cfg = small_cfg();
        let run = |threads| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let (params, noise, corpus) = small_setup(&cfg);
                let mut tr = IntTrainer::new(cfg.clone(), params, noise, corpus.len()).unwrap();
                let mut prev = tr.params.clone();
                let mut moved = 0;
                for _ in 0..10 {
                    moved += tr.train_step(&corpus).unwrap().moved;
                    for (x, y) in tr.params.blocks().iter().zip(prev.blocks()) {
                        assert!(x.iter().zip(y).all(|(p, q)| (i32::from(*p) - i32::from(*q)).abs() <= 1));
                    }
                    assert!(tr.params.in_range());
                    prev = tr.params.clone();
                }
                (tr.params, moved)
            })
        };
        let (p1, moved) = run(1);
        assert!(moved > 0);
        assert_eq!(p1, run(3).0);
    }

    #[test]
    fn swapping_pair_order_gives_same_update() {
        // Mirroring every pair flips F and a together; E is unchanged.
        let mut seed = 41;
        let rows_a: Vec<Vec<i8>> = (0..6).map(|_| rand_i8(&mut seed, 5)).collect();
        let rows_b: Vec<Vec<i8>> = (0..6).map(|_| rand_i8(&mut seed, 4)).collect();
        let f: Vec<i8> = vec![1, -1, 0, 1, -1, 1];
        let neg_a: Vec<Vec<i8>> = rows_a.iter().map(|r| r.iter().map(|v| -v).collect()).collect();
        let neg_f: Vec<i8> = f.iter().map(|v| -v).collect();
        let ar: Vec<&[i8]> = rows_a.iter().map(|r| &r[..]).collect();
        let nar: Vec<&[i8]> = neg_a.iter().map(|r| &r[..]).collect();
        let br: Vec<&[i8]> = rows_b.iter().map(|r| &r[..]).collect();
        assert_eq!(int_aggregate(&ar, &br, &f).unwrap(), int_aggregate(&nar, &br, &neg_f).unwrap());
    }

    #[test]
    fn corpus_wraps() {
        let cfg = IntTrainConfig { segment_len: 30, ..small_cfg() };
        let (params, noise, _) = small_setup(&cfg);
        let corpus = b"abcdefghijklmnopqrstuvwxyz\0abcdefghijklmnopqrstuvwxyz\0abcdefgh".to_vec();
        let mut tr = IntTrainer::new(cfg, params, noise, corpus.len()).unwrap();
        let wraps: usize = (0..3).map(|_| tr.train_step(&corpus).unwrap().wraps).sum();
        assert!(wraps > 0);
        assert!(tr.cursors().iter().all(|&c| c + 31 <= corpus.len()));
    }

    #[test]
    fn config_validation() {
        assert!(small_cfg().validate().is_ok());
        assert!(IntTrainConfig { pop_size: 3, ..small_cfg() }.validate().is_err());
        assert!(IntTrainConfig { reuse_factor: 3, ..small_cfg() }.validate().is_err());
        assert!(IntTrainConfig { threshold: 0, ..small_cfg() }.validate().is_err());
        let c = IntTrainConfig { pop_size: 2, evals_per_member: 4, reuse_factor: 2, ..small_cfg() };
        assert_eq!(c.sequences(), 4);
        assert_eq!(c.sequence_of(1, 3), 3);
        let (params, noise, corpus) = small_setup(&small_cfg());
        assert!(IntTrainer::new(small_cfg(), params.clone(), noise[..100].to_vec(), corpus.len()).is_err());
        assert!(IntTrainer::new(small_cfg(), params, noise, 10).is_err());
    }

    #[test]
    fn evaluate_counts_bytes() {
        let (params, _, corpus) = small_setup(&small_cfg());
        let (sum, n) = evaluate_corpus(&params, &corpus[..100]);
        assert_eq!(n, 99);
        assert!(sum < 0);
        assert_eq!(evaluate_corpus(&params, &corpus[..1]), (0, 0));
    }
}
