//! Score-function approximators for low-rank perturbations.
//!
//! The Gaussian limit `Ŝ(Z) = −Z/σ₀⁴` is what the optimizer uses by default.
//! The mean-field family applies the exact score of a single entry's
//! marginal density elementwise; those marginals are expressed through
//! modified Bessel functions of the second kind `K_ν`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, Error, Result};

/// Mean-field scores are evaluated at `sign(z)·Z_CLAMP` when `|z|` is smaller.
pub const Z_CLAMP: f64 = 1e-8;

/// Integrand cutoff, in natural-log units below the peak.
const LOG_CUTOFF: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScoreModel {
    GaussianLimit { sigma0: f64 },
    /// Rank-1 product of two GG(s, p) entries.
    MeanFieldR1Ggd { scale: f64, shape: f64 },
    /// Entry of `(1/√r)ABᵀ` with Gaussian factors of GGD scale `s` (σ₀ = s/√2).
    MeanFieldGauss { scale: f64, rank: usize },
}

impl Default for ScoreModel {
    fn default() -> Self {
        ScoreModel::GaussianLimit { sigma0: 1.0 }
    }
}

impl ScoreModel {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ScoreModel::GaussianLimit { sigma0 } => sigma0 > 0.0 && sigma0.is_finite(),
            ScoreModel::MeanFieldR1Ggd { scale, shape } => {
                scale > 0.0 && shape > 0.0 && scale.is_finite() && shape.is_finite()
            }
            ScoreModel::MeanFieldGauss { scale, rank } => scale > 0.0 && scale.is_finite() && rank >= 1,
        };
        if ok {
            Ok(())
        } else {
            invalid(format!("score model parameters must be positive: {self:?}"))
        }
    }

    /// Scalar score of one entry.
    pub fn score(&self, z: f64) -> Result<f64> {
        match *self {
            ScoreModel::GaussianLimit { sigma0 } => Ok(-z / sigma0.powi(4)),
            ScoreModel::MeanFieldR1Ggd { scale, shape } => mf_score_r1_ggd(z, scale, shape),
            ScoreModel::MeanFieldGauss { scale, rank } => mf_score_gauss(z, scale, rank),
        }
    }
}

pub fn gaussian_score(z: &DMatrix<f64>, sigma0: f64) -> DMatrix<f64> {
    z * (-1.0 / sigma0.powi(4))
}

/// Elementwise score under `model`.
pub fn apply_score(z: &DMatrix<f64>, model: &ScoreModel) -> Result<DMatrix<f64>> {
    model.validate()?;
    if let ScoreModel::GaussianLimit { sigma0 } = *model {
        return Ok(gaussian_score(z, sigma0));
    }
    let mut out = z.clone();
    for v in out.iter_mut() {
        *v = model.score(*v)?;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Bessel K

fn check_bessel_args(order: f64, z: f64) -> Result<()> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::Domain(format!("K_ν(z) needs z > 0, got z = {z}")));
    }
    if !(order >= 0.0) || !order.is_finite() {
        return invalid(format!("Bessel order must be non-negative, got {order}"));
    }
    Ok(())
}

/// `Some(n)` when `order = n + 1/2`.
fn half_integer_index(order: f64) -> Option<u32> {
    let twice = 2.0 * order;
    let rounded = twice.round();
    if (twice - rounded).abs() < 1e-12 && rounded as i64 % 2 == 1 {
        Some((rounded as u32 - 1) / 2)
    } else {
        None
    }
}

/// `K_ν(z)` for `ν ≥ 0`, `z > 0`.
pub fn bessel_k(order: f64, z: f64) -> Result<f64> {
    Ok(ln_bessel_k(order, z)?.exp())
}

/// `ln K_ν(z)`. Half-integer orders use the closed form for `K_{1/2}` and
/// upward recurrence; every other order integrates the integral
/// representation numerically.
pub fn ln_bessel_k(order: f64, z: f64) -> Result<f64> {
    check_bessel_args(order, z)?;
    Ok(match half_integer_index(order) {
        Some(n) => ln_bessel_k_half(n, z),
        None => ln_bessel_k_quadrature(order, z),
    })
}

/// `ln K_{n+1/2}(z)` from `K_{1/2}(z) = √(π/2z)e^{−z}` and
/// `K_{ν+1} = K_{ν−1} + (2ν/z)K_ν`.
fn ln_bessel_k_half(n: u32, z: f64) -> f64 {
    // Work with K_ν(z) / (√(π/2z) e^{−z}), rescaling to stay finite.
    let mut prev = 1.0f64;
    let mut cur = 1.0 + 1.0 / z;
    let mut log_offset = 0.0;
    if n == 0 {
        cur = prev;
    } else {
        for k in 1..n {
            let nu = k as f64 + 0.5;
            let next = prev + (2.0 * nu / z) * cur;
            prev = cur;
            cur = next;
            if cur > 1e250 {
                log_offset += cur.ln();
                prev /= cur;
                cur = 1.0;
            }
        }
    }
    cur.ln() + log_offset + 0.5 * (PI / (2.0 * z)).ln() - z
}

/// `ln K_ν(z)` from `K_ν(z) = ∫₀^∞ e^{−z cosh θ} cosh(νθ) dθ`.
///
/// The integrand is handled in log space relative to its peak at
/// `θ* = asinh(ν/z)`, restricted to where it exceeds `e^{−60}` of the peak,
/// and integrated panel by panel with double-exponential quadrature.
pub fn ln_bessel_k_quadrature(order: f64, z: f64) -> f64 {
    let nu = order.abs();
    let log_integrand = |t: f64| {
        let even = if nu == 0.0 {
            0.0
        } else {
            // ln cosh(νθ) without overflow
            nu * t + (-2.0 * nu * t).exp().ln_1p() - std::f64::consts::LN_2
        };
        -z * t.cosh() + even
    };
    let peak = (nu / z).asinh();
    let top = log_integrand(peak);
    let curvature = (nu * nu + z * z).sqrt().max(1e-300);
    let width = (1.0 / curvature.sqrt()).min(1.0);

    let drop_point = |dir: f64| -> f64 {
        let mut step = width;
        let mut t = peak;
        loop {
            let next = t + dir * step;
            if dir < 0.0 && next <= 0.0 {
                return 0.0;
            }
            if top - log_integrand(next) > LOG_CUTOFF {
                let (mut lo, mut hi) = (t, next);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if top - log_integrand(mid) > LOG_CUTOFF {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                return hi;
            }
            t = next;
            step *= 2.0;
        }
    };
    let lo = if peak > 0.0 { drop_point(-1.0) } else { 0.0 };
    let hi = drop_point(1.0);

    let f = |t: f64| (log_integrand(t) - top).exp();
    let total = integrate_panels(&f, lo, hi, width, 1e-16 * width);
    top + total.ln()
}

/// `∫ₐᵇ f` as a sum of double-exponential panels no wider than `panel`.
/// Endpoint singularities of integrable type are handled by the rule itself.
pub fn integrate_panels<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, panel: f64, abs_tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let pieces = ((b - a) / panel).ceil().max(1.0) as usize;
    let h = (b - a) / pieces as f64;
    let tol = abs_tol / pieces as f64;
    (0..pieces)
        .map(|i| {
            let lo = a + i as f64 * h;
            let hi = if i + 1 == pieces { b } else { lo + h };
            quadrature::double_exponential::integrate(f, lo, hi, tol).integral
        })
        .sum()
}

// ---------------------------------------------------------------------------
// Mean-field marginals

fn check_scale_shape(scale: f64, shape: f64) -> Result<()> {
    if !(scale > 0.0 && shape > 0.0) || !scale.is_finite() || !shape.is_finite() {
        return invalid(format!("need s > 0 and p > 0, got s = {scale}, p = {shape}"));
    }
    Ok(())
}

fn check_gauss(scale: f64, rank: usize) -> Result<()> {
    if !(scale > 0.0) || !scale.is_finite() || rank == 0 {
        return invalid(format!("need s > 0 and r ≥ 1, got s = {scale}, r = {rank}"));
    }
    Ok(())
}

fn clamp_abs(z: f64) -> f64 {
    z.abs().max(Z_CLAMP)
}

/// Density of the product of two independent GG(s, p) variables:
/// `p / (s Γ(1/p))² · K₀(2|z|^{p/2} / s^p)`. Infinite at `z = 0`.
pub fn mf_density_r1_ggd(z: f64, scale: f64, shape: f64) -> Result<f64> {
    check_scale_shape(scale, shape)?;
    if z == 0.0 {
        return Ok(f64::INFINITY);
    }
    let x = 2.0 * z.abs().powf(shape / 2.0) / scale.powf(shape);
    let ln_norm = shape.ln() - 2.0 * (scale.ln() + ln_gamma(1.0 / shape));
    Ok((ln_norm + ln_bessel_k(0.0, x)?).exp())
}

/// `d/dz ln` of [`mf_density_r1_ggd`]:
/// `−(K₁/K₀)(x) · p|z|^{p/2−1} sign(z) / s^p` with `x = 2|z|^{p/2}/s^p`.
pub fn mf_score_r1_ggd(z: f64, scale: f64, shape: f64) -> Result<f64> {
    check_scale_shape(scale, shape)?;
    if z == 0.0 {
        return Ok(0.0);
    }
    let az = clamp_abs(z);
    let sp = scale.powf(shape);
    let x = 2.0 * az.powf(shape / 2.0) / sp;
    let ratio = (ln_bessel_k(1.0, x)? - ln_bessel_k(0.0, x)?).exp();
    Ok(-ratio * shape * az.powf(shape / 2.0 - 1.0) * z.signum() / sp)
}

/// Marginal density of one entry of `(1/√r)ABᵀ` with GG(s, 2) factors:
///
/// `2√r |√r z|^{(r−1)/2} / (s^{r+1} √π Γ(r/2)) · K_{(r−1)/2}(2|√r z| / s²)`.
///
/// At `z = 0` this is `+∞` for `r = 1` and the finite limit
/// `√r Γ((r−1)/2) / (s² √π Γ(r/2))` otherwise.
pub fn mf_density_gauss(z: f64, scale: f64, rank: usize) -> Result<f64> {
    check_gauss(scale, rank)?;
    let r = rank as f64;
    let nu = (r - 1.0) / 2.0;
    if z == 0.0 {
        if rank == 1 {
            return Ok(f64::INFINITY);
        }
        let ln = 0.5 * r.ln() + ln_gamma(nu) - 2.0 * scale.ln() - 0.5 * PI.ln() - ln_gamma(r / 2.0);
        return Ok(ln.exp());
    }
    let u = r.sqrt() * z.abs();
    let x = 2.0 * u / (scale * scale);
    let ln = std::f64::consts::LN_2 + 0.5 * r.ln() + nu * u.ln()
        - (r + 1.0) * scale.ln()
        - 0.5 * PI.ln()
        - ln_gamma(r / 2.0)
        + ln_bessel_k(nu, x)?;
    Ok(ln.exp())
}

/// `d/dz ln` of [`mf_density_gauss`]:
/// `(r−1)/z − (2√r sign(z)/s²) · K_{(r+1)/2}(x) / K_{(r−1)/2}(x)`.
pub fn mf_score_gauss(z: f64, scale: f64, rank: usize) -> Result<f64> {
    check_gauss(scale, rank)?;
    if z == 0.0 {
        return Ok(0.0);
    }
    let r = rank as f64;
    let az = clamp_abs(z);
    let sign = z.signum();
    let x = 2.0 * r.sqrt() * az / (scale * scale);
    let nu = (r - 1.0) / 2.0;
    let ratio = (ln_bessel_k(nu + 1.0, x)? - ln_bessel_k(nu, x)?).exp();
    Ok(sign * ((r - 1.0) / az - 2.0 * r.sqrt() / (scale * scale) * ratio))
}

/// Standard normal density scaled to variance `var`.
pub fn normal_density(z: f64, var: f64) -> f64 {
    (-0.5 * z * z / var).exp() / (2.0 * PI * var).sqrt()
}
