//! Integer forward pass. This file must stay free of floating point.

use super::tables::LookupTables;
use super::{log4_exact, EggLayer, EggParams, EggState, IntMatrix, MatrixId, VOCAB};
use crate::error::{invalid, Result};

/// Narrow to `[-127, 127]`.
#[inline]
pub fn sat8(v: i32) -> i8 {
    v.clamp(-127, 127) as i8
}

#[inline]
pub fn sat8_wide(v: i64) -> i8 {
    v.clamp(-127, 127) as i8
}

/// 32-bit accumulated dot product. Sixteen independent lanes let the
/// compiler vectorize without target-specific intrinsics.
#[inline]
pub fn dot_i8(a: &[i8], b: &[i8]) -> i32 {
    let mut acc = [0i32; 16];
    let mut ca = a.chunks_exact(16);
    let mut cb = b.chunks_exact(16);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..16 {
            acc[k] += i32::from(x[k]) * i32::from(y[k]);
        }
    }
    let tail: i32 = ca.remainder().iter().zip(cb.remainder()).map(|(&x, &y)| i32::from(x) * i32::from(y)).sum();
    acc.iter().sum::<i32>() + tail
}

/// How matrix parameters are applied. The plain model and every population
/// member of integer ES differ only here.
pub trait Perturber {
    /// `out = x @ θᵀ`, possibly perturbed.
    fn matmul(&self, id: MatrixId, x: &[i8], theta: &IntMatrix, out: &mut [i8]);
    /// `out = θ_emb[t]`, possibly perturbed.
    fn embed(&self, t: u8, emb: &IntMatrix, out: &mut [i8]);
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Unperturbed;

impl Perturber for Unperturbed {
    #[inline]
    fn matmul(&self, _: MatrixId, x: &[i8], theta: &IntMatrix, out: &mut [i8]) {
        matmul_into(x, theta, out);
    }

    #[inline]
    fn embed(&self, t: u8, emb: &IntMatrix, out: &mut [i8]) {
        out.copy_from_slice(emb.row(t as usize));
    }
}

/// `sat₈((x·θᵢ) >> (4 + log₄ n))` for every row.
#[inline]
pub fn matmul_into(x: &[i8], theta: &IntMatrix, out: &mut [i8]) {
    debug_assert_eq!(x.len(), theta.cols());
    let shift = theta.shift();
    for (i, o) in out.iter_mut().enumerate().take(theta.rows()) {
        *o = sat8(dot_i8(x, theta.row(i)) >> shift);
    }
}

/// `x @ Mᵀ := I₈(xMᵀ / (16√n))` with `M` stored `m × n`.
pub fn scaled_matmul(x: &[i8], m: &IntMatrix) -> Result<Vec<i8>> {
    if x.len() != m.cols() {
        return invalid(format!("input length {} does not match {} columns", x.len(), m.cols()));
    }
    if log4_exact(x.len()).is_none() {
        return invalid(format!("input length {} is not a power of 4", x.len()));
    }
    let mut out = vec![0; m.rows()];
    matmul_into(x, m, &mut out);
    Ok(out)
}

/// Divide `x ⊙ w` by the mean absolute value of `x`.
pub fn layer_norm_into(x: &[i8], w: &[i8], tables: &LookupTables, out: &mut [i8]) {
    let shift = x.len().trailing_zeros();
    let sum: i32 = x.iter().map(|&v| i32::from(v).abs()).sum();
    let mav = sat8(sum >> shift) as u8;
    for ((o, &xi), &wi) in out.iter_mut().zip(x).zip(w) {
        *o = tables.divide(i16::from(xi) * i16::from(wi), mav);
    }
}

pub fn layer_norm(x: &[i8], w: &[i8], tables: &LookupTables) -> Vec<i8> {
    let mut out = vec![0; x.len()];
    layer_norm_into(x, w, tables, &mut out);
    out
}

/// Reusable buffers for one forward pass.
#[derive(Debug, Clone)]
pub struct EggScratch {
    y: Vec<i8>,
    xn: Vec<i8>,
    a: Vec<i8>,
    b: Vec<i8>,
    f: Vec<i8>,
    fhat: Vec<i8>,
    wide: Vec<i8>,
}

impl EggScratch {
    pub fn new(dim: usize) -> Self {
        EggScratch {
            y: vec![0; dim],
            xn: vec![0; dim],
            a: vec![0; dim],
            b: vec![0; dim],
            f: vec![0; dim],
            fhat: vec![0; dim],
            wide: vec![0; 4 * dim],
        }
    }
}

fn gru_step<P: Perturber>(p: &P, l: usize, layer: &EggLayer, x: &[i8], s: &mut [i8], sc: &mut EggScratch) {
    // f = sat(x@Wfᵀ + s@Ufᵀ + bf)
    p.matmul(MatrixId::Wf(l), x, &layer.wf, &mut sc.a);
    p.matmul(MatrixId::Uf(l), s, &layer.uf, &mut sc.b);
    for i in 0..s.len() {
        sc.f[i] = sat8(i32::from(sc.a[i]) + i32::from(sc.b[i]) + i32::from(layer.bf[i]));
        sc.fhat[i] = sat8(((i32::from(sc.f[i]) + 127) * i32::from(s[i])) >> 8);
    }
    // ĥ = sat(x@Whᵀ + f̂@Uhᵀ + bh)
    p.matmul(MatrixId::Wh(l), x, &layer.wh, &mut sc.a);
    p.matmul(MatrixId::Uh(l), &sc.fhat, &layer.uh, &mut sc.b);
    for i in 0..s.len() {
        let hhat = i32::from(sat8(i32::from(sc.a[i]) + i32::from(sc.b[i]) + i32::from(layer.bh[i])));
        let si = i32::from(s[i]);
        let gate = i32::from(sat8(((i32::from(sc.f[i]) + 127) * (hhat - si)) >> 8));
        s[i] = sat8(si + gate);
    }
}

/// One GRU step; returns `h`, which is also the new state.
pub fn gru_forward(x: &[i8], s: &[i8], layer: &EggLayer, layer_index: usize) -> Vec<i8> {
    let mut h = s.to_vec();
    let mut sc = EggScratch::new(s.len());
    gru_step(&Unperturbed, layer_index, layer, x, &mut h, &mut sc);
    h
}

fn mlp_step<P: Perturber>(p: &P, l: usize, layer: &EggLayer, x: &[i8], out: &mut [i8], wide: &mut [i8]) {
    p.matmul(MatrixId::Mlp1(l), x, &layer.mlp1, wide);
    p.matmul(MatrixId::Mlp2(l), wide, &layer.mlp2, out);
}

/// `(x @ θ₁ᵀ) @ θ₂ᵀ`, no activation.
pub fn mlp_forward(x: &[i8], layer: &EggLayer, layer_index: usize) -> Vec<i8> {
    let mut out = vec![0; x.len()];
    let mut wide = vec![0; 4 * x.len()];
    mlp_step(&Unperturbed, layer_index, layer, x, &mut out, &mut wide);
    out
}

/// Full model step for token `t`. Updates `state` in place and writes 256
/// logits.
pub fn egg_forward_with<P: Perturber>(
    p: &P,
    t: u8,
    state: &mut EggState,
    params: &EggParams,
    tables: &LookupTables,
    sc: &mut EggScratch,
    logits: &mut [i8],
) {
    let mut y = std::mem::take(&mut sc.y);
    let mut xn = std::mem::take(&mut sc.xn);
    let mut wide = std::mem::take(&mut sc.wide);
    p.embed(t, &params.emb, &mut y);
    for (l, layer) in params.layers.iter().enumerate() {
        layer_norm_into(&y, &layer.ln1, tables, &mut xn);
        let s = state.layer_mut(l);
        gru_step(p, l, layer, &xn, s, sc);
        for (yi, &hi) in y.iter_mut().zip(s.iter()) {
            *yi = sat8(i32::from(*yi) + i32::from(hi));
        }
        layer_norm_into(&y, &layer.ln2, tables, &mut xn);
        let mut out = std::mem::take(&mut sc.a);
        mlp_step(p, l, layer, &xn, &mut out, &mut wide);
        for (yi, &oi) in y.iter_mut().zip(&out) {
            *yi = sat8(i32::from(*yi) + i32::from(oi));
        }
        sc.a = out;
    }
    layer_norm_into(&y, &params.lnout, tables, &mut xn);
    p.matmul(MatrixId::Head, &xn, &params.head, logits);
    sc.y = y;
    sc.xn = xn;
    sc.wide = wide;
}

/// `(y, s')` for token `t` and state `s`, unperturbed.
pub fn egg_forward(t: u8, s: &EggState, params: &EggParams) -> (Vec<i8>, EggState) {
    let tables = LookupTables::get();
    let mut state = s.clone();
    let mut sc = EggScratch::new(params.dims.hidden());
    let mut y = vec![0; VOCAB];
    egg_forward_with(&Unperturbed, t, &mut state, params, tables, &mut sc, &mut y);
    (y, state)
}

/// Log-likelihood of `next` under logits `y`, in 1/16-bit units:
/// `y'[t'] − LOG2(Σ EXP2[y'])` with `y' = y + 128`.
pub fn token_loss(y: &[i8], next: u8, tables: &LookupTables) -> i32 {
    let sum: u32 = y.iter().map(|&v| tables.exp2((i32::from(v) + 128) as u8)).sum();
    (i32::from(y[next as usize]) + 128) - tables.log2(sum)
}
