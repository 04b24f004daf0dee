//! Cross-module checks against dense or loop oracles.

use eggroll::egg::{
    egg_forward, init_params, read_egg_checkpoint, write_egg_checkpoint, EggDims, EggState, IntMatrix, MatrixId,
};
use eggroll::es::{eggroll_step, EsConfig, MemberView};
use eggroll::int_es::{int_aggregate, int_perturbed_matmul, int_update, IntPerturbation};
use eggroll::lowrank::{aggregate_update, materialize, perturbed_forward_batch, sample_factors, FactorDist, MatrixParam};
use eggroll::prng::{derive_stream, fill_gaussian, StreamKey, StreamTag};
use eggroll::shaping::ShapingMode;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn gaussian_matrix(seed: u64, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_vec(rows, cols, fill_gaussian(derive_stream(seed, 9, 0, 0, StreamTag::Init), rows * cols, 1.0).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn batch_forward_matches_dense(m in 1usize..40, n in 1usize..40, r in 1usize..6, pop in 1usize..12, seed in 0u64..1000) {
        let mu = MatrixParam::new(gaussian_matrix(seed, m, n));
        let xs = gaussian_matrix(seed + 1, pop, n);
        let factors: Vec<_> = (0..pop as u32)
            .map(|i| {
                let k = derive_stream(seed, 0, i, 0, StreamTag::FactorA);
                sample_factors(k, k.with_tag(StreamTag::FactorB), m, n, r, FactorDist::default()).unwrap()
            })
            .collect();
        let got = perturbed_forward_batch(&xs, &mu, &factors, 0.3).unwrap();
        for (i, f) in factors.iter().enumerate() {
            let w = &mu.mu + materialize(f) * 0.3;
            let want = &w * xs.row(i).transpose();
            for j in 0..m {
                prop_assert!((got[(i, j)] - want[j]).abs() <= 1e-12 * (1.0 + want[j].abs()));
            }
        }
    }

    #[test]
    fn int_aggregate_matches_loop(m in 1usize..16, n in 1usize..16, pop in 0usize..40, seed in 0u64..1000) {
        let words = derive_stream(seed, 0, 0, 0, StreamTag::Data).fill_u64(pop * (m + n + 1));
        let byte = |w: u64| ((w % 255) as i16 - 127) as i8;
        let a: Vec<Vec<i8>> = (0..pop).map(|k| (0..m).map(|i| byte(words[k * (m + n + 1) + i])).collect()).collect();
        let b: Vec<Vec<i8>> = (0..pop).map(|k| (0..n).map(|j| byte(words[k * (m + n + 1) + m + j])).collect()).collect();
        let f: Vec<i8> = (0..pop).map(|k| (words[k * (m + n + 1) + m + n] % 5) as i8 - 2).collect();
        let ar: Vec<&[i8]> = a.iter().map(Vec::as_slice).collect();
        let br: Vec<&[i8]> = b.iter().map(Vec::as_slice).collect();
        let e = int_aggregate(&ar, &br, &f).unwrap();
        if pop == 0 {
            prop_assert!(e.is_empty());
        } else {
            for i in 0..m {
                for j in 0..n {
                    let want: i64 = (0..pop).map(|k| i64::from(f[k]) * i64::from(a[k][i]) * i64::from(b[k][j])).sum();
                    prop_assert_eq!(i64::from(e[i * n + j]), want);
                }
            }
        }
    }
}

#[test]
fn step_update_is_the_aggregated_low_rank_sum() {
    // Raw shaping and α = 1 make the step exactly the aggregate of the members' factors.
    let cfg = EsConfig {
        pop_size: 6,
        rank: 2,
        sigma: 0.5,
        alpha: 1.0,
        shaping: ShapingMode::Raw,
        antithetic: false,
        reuse_factor: 1,
        master_seed: 11,
        ..EsConfig::default()
    };
    let fit = |v: &MemberView<'_>, _: StreamKey| v.perturbed(0).sum();
    let mu = vec![MatrixParam::zeros(5, 7)];
    let (next, _) = eggroll_step(&mu, &cfg, 0, &fit).unwrap();

    let factors: Vec<_> = (0..6u32)
        .map(|i| {
            let k = derive_stream(11, 0, cfg.noise_worker(i as usize), 0, StreamTag::FactorA);
            sample_factors(k, k.with_tag(StreamTag::FactorB), 5, 7, 2, FactorDist::default()).unwrap()
        })
        .collect();
    let f: Vec<f64> = factors.iter().map(|fa| (materialize(fa) * 0.5).sum()).collect();
    let want = aggregate_update(&factors, &f).unwrap();
    assert!((&next[0].mu - want).abs().max() < 1e-12, "{}", next[0].mu);
}

#[test]
fn perturbed_matmul_with_zero_noise_is_plain() {
    let theta = IntMatrix::from_vec(2, 4, vec![10, -20, 30, -40, 127, 127, -127, 0]).unwrap();
    let zeros = [0i8; 4];
    let p = IntPerturbation { a: &zeros[..2], b: &zeros, sigma_shift: 2, negate: false };
    assert_eq!(int_perturbed_matmul(&[5, 6, 7, 8], &theta, &p).unwrap(), eggroll::egg::scaled_matmul(&[5, 6, 7, 8], &theta).unwrap());
}

#[test]
fn aggregated_update_moves_parameters_toward_the_sign() {
    let a: [&[i8]; 2] = [&[100, -100], &[100, 100]];
    let b: [&[i8]; 2] = [&[100, 0], &[100, 0]];
    let e = int_aggregate(&a, &b, &[2, 2]).unwrap();
    assert_eq!(e, vec![40000, 0, 0, 0]);
    let mut theta = vec![3i8, 3, 3, 3];
    assert_eq!(int_update(&mut theta, &e, 1000).unwrap(), 1);
    assert_eq!(theta, vec![4, 3, 3, 3]);
}

#[test]
fn egg_checkpoint_round_trip_preserves_outputs() {
    let dims = EggDims::new(2, 2).unwrap();
    let params = init_params(dims, derive_stream(4, 0, 0, 0, StreamTag::Init)).unwrap();
    let mut buf = Vec::new();
    write_egg_checkpoint(&mut buf, &params, 4, 17).unwrap();
    let ck = read_egg_checkpoint(&mut buf.as_slice()).unwrap();
    assert_eq!((ck.master_seed, ck.step), (4, 17));
    assert_eq!(ck.params, params);
    let s = EggState::zeros(&dims);
    assert_eq!(egg_forward(b'a', &s, &params), egg_forward(b'a', &s, &ck.params));
    assert_eq!(MatrixId::all(2).len(), 2 + 6 * 2);
}
