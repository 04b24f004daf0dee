//! Analytic fitness functions on a single matrix.

use nalgebra::DMatrix;
use std::f64::consts::PI;

/// `−‖M − M*‖²`, maximized at the target.
pub fn sphere(m: &DMatrix<f64>, target: &DMatrix<f64>) -> f64 {
    -(m - target).norm_squared()
}

/// Negated Rastrigin on `M − M*`: `−(10n + Σ (x² − 10 cos 2πx))`.
pub fn rastrigin(m: &DMatrix<f64>, target: &DMatrix<f64>) -> f64 {
    let d = m - target;
    let n = d.len() as f64;
    -(10.0 * n + d.iter().map(|x| x * x - 10.0 * (2.0 * PI * x).cos()).sum::<f64>())
}

/// `exp(−‖M − M*‖²)`, bounded in (0, 1].
pub fn bounded_gauss(m: &DMatrix<f64>, target: &DMatrix<f64>) -> f64 {
    (-(m - target).norm_squared()).exp()
}

/// `∇_μ E[bounded_gauss(μ + σE)]`-type reference: `(1/σ) E[E · f(μ + σE)]`
/// with `E` standard normal, in closed form. Entries factorize, so
/// with `d = μ − M*` and `c = 1 + 2σ²`,
/// `E[f_ij] = c^{-1/2} exp(−d²/c)` and `E[e f_ij] = −2σd c^{-3/2} exp(−d²/c)`.
pub fn bounded_gauss_smoothed_gradient(mu: &DMatrix<f64>, target: &DMatrix<f64>, sigma: f64) -> DMatrix<f64> {
    let c = 1.0 + 2.0 * sigma * sigma;
    let d = mu - target;
    let mean = d.map(|x| (-x * x / c).exp() / c.sqrt());
    let total: f64 = mean.iter().product();
    d.zip_map(&mean, |x, m| {
        let first = -2.0 * sigma * x * (-x * x / c).exp() / c.powf(1.5);
        // product over the other entries
        first * (total / m) / sigma
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitnessKind {
    Sphere,
    Rastrigin,
    BoundedGauss,
}

impl std::str::FromStr for FitnessKind {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> anyhow::Result<Self> {
        match s {
            "sphere" => Ok(FitnessKind::Sphere),
            "rastrigin" => Ok(FitnessKind::Rastrigin),
            "bounded_gauss" => Ok(FitnessKind::BoundedGauss),
            other => anyhow::bail!("unknown fitness '{other}' (sphere|rastrigin|bounded_gauss)"),
        }
    }
}

impl FitnessKind {
    pub fn eval(self, m: &DMatrix<f64>, target: &DMatrix<f64>) -> f64 {
        match self {
            FitnessKind::Sphere => sphere(m, target),
            FitnessKind::Rastrigin => rastrigin(m, target),
            FitnessKind::BoundedGauss => bounded_gauss(m, target),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FitnessKind::Sphere => "sphere",
            FitnessKind::Rastrigin => "rastrigin",
            FitnessKind::BoundedGauss => "bounded_gauss",
        }
    }
}
