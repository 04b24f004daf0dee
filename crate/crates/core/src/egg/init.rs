//! Parameter initialization and the integer noise table. Both run once before
//! training, so they may sample in floating point.

use super::{EggDims, EggParams, MatrixId};
use crate::error::Result;
use crate::prng::{fill_gaussian, StreamKey};

/// `round(16·z)` clamped to `[-127, 127]` for standard normal `z`.
fn scaled_normals(key: StreamKey, count: usize) -> Result<Vec<i8>> {
    Ok(fill_gaussian(key, count, 1.0)?
        .into_iter()
        .map(|z| (16.0 * z).round_ties_even().clamp(-127.0, 127.0) as i8)
        .collect())
}

/// Matrices from `round(16·N(0,1))`, LN weights 16, biases 0. Matrix `id`
/// draws from `key.with_layer(id.index())`.
pub fn init_params(dims: EggDims, key: StreamKey) -> Result<EggParams> {
    let mut p = EggParams::zeros(dims)?;
    for id in MatrixId::all(dims.layers) {
        let m = p.matrix_mut(id);
        let vals = scaled_normals(key.with_layer(id.index() as u32), m.data().len())?;
        m.data_mut().copy_from_slice(&vals);
    }
    Ok(p)
}

/// Pre-generated perturbation values; members index into it instead of
/// sampling on the integer path.
pub fn noise_table(key: StreamKey, len: usize) -> Result<Vec<i8>> {
    scaled_normals(key, len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prng::{derive_stream, StreamTag};

    #[test]
    fn init_statistics() {
        let dims = EggDims::new(1, 4).unwrap();
        let key = derive_stream(3, 0, 0, 0, StreamTag::Init);
        let p = init_params(dims, key).unwrap();
        assert_eq!(p, init_params(dims, key).unwrap());
        assert!(p.lnout.iter().chain(&p.layers[0].ln1).chain(&p.layers[0].ln2).all(|&v| v == 16));
        assert!(p.layers[0].bf.iter().chain(&p.layers[0].bh).all(|&v| v == 0));
        assert!(p.in_range());
        let vals: Vec<f64> = p.layers[0].mlp1.data().iter().map(|&v| f64::from(v)).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((sd - 16.0).abs() < 0.48, "sd {sd}");
        assert_ne!(p.layers[0].wf, p.layers[0].uf);
    }

    #[test]
    fn noise_table_clamps() {
        let t = noise_table(derive_stream(0, 0, 0, 0, StreamTag::Init), 100_000).unwrap();
        assert!(t.iter().all(|&v| v != i8::MIN));
        assert!(t.iter().any(|&v| v.abs() > 48));
    }
}
