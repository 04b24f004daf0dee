//! EGG: an integer-only GRU language model over bytes.
//!
//! Weights, activations and hidden state are 8-bit signed integers in
//! `[-127, 127]`. Matrix products accumulate in 32 bits and are scaled back by
//! right shifts; normalization, softmax and log use lookup tables. Nothing on
//! the forward path touches floating point.

pub mod checkpoint;
pub mod forward;
pub mod init;
pub mod tables;

pub use checkpoint::{read_egg_checkpoint, write_egg_checkpoint, EggCheckpoint};
pub use forward::{
    egg_forward, egg_forward_with, gru_forward, layer_norm, mlp_forward, sat8, sat8_wide, scaled_matmul, token_loss,
    EggScratch, Perturber, Unperturbed,
};
pub use init::{init_params, noise_table};
pub use tables::LookupTables;

use crate::error::{invalid, Result};

pub const VOCAB: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EggDims {
    pub layers: usize,
    /// `D = 4^log4_dim`.
    pub log4_dim: u32,
}

impl EggDims {
    pub fn new(layers: usize, log4_dim: u32) -> Result<Self> {
        if layers == 0 || log4_dim == 0 || log4_dim > 8 {
            return invalid(format!("need layers >= 1 and 1 <= d <= 8, got l={layers} d={log4_dim}"));
        }
        Ok(EggDims { layers, log4_dim })
    }

    pub fn hidden(&self) -> usize {
        1 << (2 * self.log4_dim)
    }

    /// `513D + l(4D + 12D²)`
    pub fn param_count(&self) -> usize {
        let d = self.hidden();
        513 * d + self.layers * (4 * d + 12 * d * d)
    }
}

/// Row-major 8-bit matrix. Rows are outputs, columns inputs; the column count
/// is always a power of four.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntMatrix {
    rows: usize,
    cols: usize,
    shift: u32,
    data: Vec<i8>,
}

pub(crate) fn log4_exact(n: usize) -> Option<u32> {
    if n == 0 || !n.is_power_of_two() || n.trailing_zeros() % 2 != 0 {
        None
    } else {
        Some(n.trailing_zeros() / 2)
    }
}

impl IntMatrix {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<i8>) -> Result<Self> {
        let Some(k) = log4_exact(cols) else {
            return invalid(format!("column count {cols} is not a power of 4"));
        };
        if data.len() != rows * cols {
            return invalid(format!("{}x{} matrix needs {} entries, got {}", rows, cols, rows * cols, data.len()));
        }
        Ok(IntMatrix { rows, cols, shift: 4 + k, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::from_vec(rows, cols, vec![0; rows * cols])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// `4 + log4(cols)`: dividing by `16√n`.
    pub fn shift(&self) -> u32 {
        self.shift
    }

    pub fn row(&self, i: usize) -> &[i8] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[i8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [i8] {
        &mut self.data
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EggLayer {
    pub ln1: Vec<i8>,
    pub ln2: Vec<i8>,
    /// 4D × D
    pub mlp1: IntMatrix,
    /// D × 4D
    pub mlp2: IntMatrix,
    pub wf: IntMatrix,
    pub uf: IntMatrix,
    pub wh: IntMatrix,
    pub uh: IntMatrix,
    pub bf: Vec<i8>,
    pub bh: Vec<i8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EggParams {
    pub dims: EggDims,
    /// 256 × D, one row per byte.
    pub emb: IntMatrix,
    /// 256 × D
    pub head: IntMatrix,
    pub lnout: Vec<i8>,
    pub layers: Vec<EggLayer>,
}

/// Parameters that act as matrix multiplications and receive perturbations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MatrixId {
    Emb,
    Head,
    Mlp1(usize),
    Mlp2(usize),
    Wf(usize),
    Uf(usize),
    Wh(usize),
    Uh(usize),
}

impl MatrixId {
    pub fn all(layers: usize) -> Vec<MatrixId> {
        let mut ids = vec![MatrixId::Emb, MatrixId::Head];
        for l in 0..layers {
            ids.extend([
                MatrixId::Mlp1(l),
                MatrixId::Mlp2(l),
                MatrixId::Wf(l),
                MatrixId::Uf(l),
                MatrixId::Wh(l),
                MatrixId::Uh(l),
            ]);
        }
        ids
    }

    /// Dense index, in the order of [`MatrixId::all`].
    pub fn index(self) -> usize {
        match self {
            MatrixId::Emb => 0,
            MatrixId::Head => 1,
            MatrixId::Mlp1(l) => 2 + 6 * l,
            MatrixId::Mlp2(l) => 3 + 6 * l,
            MatrixId::Wf(l) => 4 + 6 * l,
            MatrixId::Uf(l) => 5 + 6 * l,
            MatrixId::Wh(l) => 6 + 6 * l,
            MatrixId::Uh(l) => 7 + 6 * l,
        }
    }

    /// `(m, n)` of the map `x ↦ xθᵀ` this parameter implements. The embedding
    /// is read as `one_hot(t)·θ`, so its input side is the vocabulary.
    pub fn io_dims(self, dims: &EggDims) -> (usize, usize) {
        let d = dims.hidden();
        match self {
            MatrixId::Emb => (d, VOCAB),
            MatrixId::Head => (VOCAB, d),
            MatrixId::Mlp1(_) => (4 * d, d),
            MatrixId::Mlp2(_) => (d, 4 * d),
            _ => (d, d),
        }
    }
}

impl EggParams {
    /// All matrices zero, LN weights 16, biases 0.
    pub fn zeros(dims: EggDims) -> Result<Self> {
        let d = dims.hidden();
        let layer = EggLayer {
            ln1: vec![16; d],
            ln2: vec![16; d],
            mlp1: IntMatrix::zeros(4 * d, d)?,
            mlp2: IntMatrix::zeros(d, 4 * d)?,
            wf: IntMatrix::zeros(d, d)?,
            uf: IntMatrix::zeros(d, d)?,
            wh: IntMatrix::zeros(d, d)?,
            uh: IntMatrix::zeros(d, d)?,
            bf: vec![0; d],
            bh: vec![0; d],
        };
        Ok(EggParams {
            dims,
            emb: IntMatrix::zeros(VOCAB, d)?,
            head: IntMatrix::zeros(VOCAB, d)?,
            lnout: vec![16; d],
            layers: vec![layer; dims.layers],
        })
    }

    pub fn matrix(&self, id: MatrixId) -> &IntMatrix {
        match id {
            MatrixId::Emb => &self.emb,
            MatrixId::Head => &self.head,
            MatrixId::Mlp1(l) => &self.layers[l].mlp1,
            MatrixId::Mlp2(l) => &self.layers[l].mlp2,
            MatrixId::Wf(l) => &self.layers[l].wf,
            MatrixId::Uf(l) => &self.layers[l].uf,
            MatrixId::Wh(l) => &self.layers[l].wh,
            MatrixId::Uh(l) => &self.layers[l].uh,
        }
    }

    pub fn matrix_mut(&mut self, id: MatrixId) -> &mut IntMatrix {
        match id {
            MatrixId::Emb => &mut self.emb,
            MatrixId::Head => &mut self.head,
            MatrixId::Mlp1(l) => &mut self.layers[l].mlp1,
            MatrixId::Mlp2(l) => &mut self.layers[l].mlp2,
            MatrixId::Wf(l) => &mut self.layers[l].wf,
            MatrixId::Uf(l) => &mut self.layers[l].uf,
            MatrixId::Wh(l) => &mut self.layers[l].wh,
            MatrixId::Uh(l) => &mut self.layers[l].uh,
        }
    }

    /// Every parameter block in declaration order.
    pub fn blocks(&self) -> Vec<&[i8]> {
        let mut out: Vec<&[i8]> = vec![self.emb.data(), self.head.data(), &self.lnout];
        for l in &self.layers {
            out.extend([
                &l.ln1[..],
                &l.ln2,
                l.mlp1.data(),
                l.mlp2.data(),
                l.wf.data(),
                l.uf.data(),
                l.wh.data(),
                l.uh.data(),
                &l.bf,
                &l.bh,
            ]);
        }
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [i8]> {
        let mut out: Vec<&mut [i8]> = vec![self.emb.data_mut(), self.head.data_mut(), &mut self.lnout];
        for l in &mut self.layers {
            out.extend([
                &mut l.ln1[..],
                &mut l.ln2,
                l.mlp1.data_mut(),
                l.mlp2.data_mut(),
                l.wf.data_mut(),
                l.uf.data_mut(),
                l.wh.data_mut(),
                l.uh.data_mut(),
                &mut l.bf,
                &mut l.bh,
            ]);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    /// No entry equals −128.
    pub fn in_range(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|&v| v != i8::MIN))
    }
}

/// Per-layer hidden vectors, `l × D`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EggState {
    dim: usize,
    data: Vec<i8>,
}

impl EggState {
    pub fn zeros(dims: &EggDims) -> Self {
        EggState {
            dim: dims.hidden(),
            data: vec![0; dims.layers * dims.hidden()],
        }
    }

    pub fn layer(&self, i: usize) -> &[i8] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn layer_mut(&mut self, i: usize) -> &mut [i8] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn reset(&mut self) {
        self.data.fill(0);
    }

    pub fn data(&self) -> &[i8] {
        &self.data
    }
}
