//! Lookup tables for division, `2^x` and `log₂`.
//!
//! Built once per process. Construction may use floating point (it is a
//! precomputation); every query is pure integer arithmetic.

use std::sync::OnceLock;

use num_bigint::BigUint;

/// Largest `sum(EXP2[·])` over 256 logits fits in 28 bits.
pub const LOG2_INPUT_BITS: u32 = 28;

pub struct LookupTables {
    divide: Box<[i8]>,
    exp2: [u32; 256],
    /// `log2_thresholds[k-1]` is the smallest `i` with `round(16·log₂ i) >= k`.
    log2_thresholds: Vec<u32>,
}

static TABLES: OnceLock<LookupTables> = OnceLock::new();

fn pow2(e: u32) -> BigUint {
    BigUint::from(1u8) << e
}

/// Smallest `i` with `i^32 >= 2^(2k-1)`, i.e. `16·log₂ i >= k - 1/2`.
fn log2_threshold(k: u32) -> u32 {
    let target = pow2(2 * k - 1);
    let reaches = |i: u32| BigUint::from(i).pow(32) >= target;
    let mut t = (((2 * k - 1) as f64) / 32.0).exp2().ceil() as u32;
    while t > 1 && reaches(t - 1) {
        t -= 1;
    }
    while !reaches(t) {
        t += 1;
    }
    t
}

impl LookupTables {
    pub fn get() -> &'static LookupTables {
        TABLES.get_or_init(LookupTables::build)
    }

    fn build() -> LookupTables {
        // Stored divisor-major: a layer norm divides every entry by the same
        // value, so its lookups stay within one 64 KiB column.
        let mut divide = vec![0i8; 1 << 24].into_boxed_slice();
        for b in 1..=255i32 {
            let col = (b as usize) << 16;
            for a in i16::MIN..=i16::MAX {
                // integer division truncates toward zero
                divide[col | a as u16 as usize] = (i32::from(a) / b).clamp(-127, 127) as i8;
            }
        }
        let mut exp2 = [0u32; 256];
        for (i, e) in exp2.iter_mut().enumerate() {
            *e = (16.0 * (i as f64 / 16.0).exp2()).round_ties_even() as u32;
        }
        let log2_thresholds = (1..=16 * LOG2_INPUT_BITS).map(log2_threshold).collect();
        LookupTables { divide, exp2, log2_thresholds }
    }

    /// `sat₈(trunc(a / b))`, and 0 when `b = 0`.
    #[inline]
    pub fn divide(&self, a: i16, b: u8) -> i8 {
        self.divide[((b as usize) << 16) | a as u16 as usize]
    }

    /// `round(16 · 2^(i/16))`
    #[inline]
    pub fn exp2(&self, i: u8) -> u32 {
        self.exp2[i as usize]
    }

    /// `round(16 · log₂(i/16))` for `1 <= i < 2^28`. Zero maps like 1.
    #[inline]
    pub fn log2(&self, i: u32) -> i32 {
        debug_assert!(i < 1 << LOG2_INPUT_BITS);
        self.log2_thresholds.partition_point(|&t| t <= i) as i32 - 64
    }
}
