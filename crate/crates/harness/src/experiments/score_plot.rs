//! Tabulates `z·p_r(z)` for the marginal density of one entry of a low-rank
//! perturbation, against the Gaussian limit `z·φ(z)`.

use eggroll::scorefn::{mf_density_gauss, normal_density};

use crate::output::CsvTable;

#[derive(Debug, Clone, PartialEq)]
pub struct ScorePlotSpec {
    pub ranks: Vec<usize>,
    /// Factor scale `s`; `s = √2` makes the limit a standard normal.
    pub scale: f64,
    pub z_max: f64,
    pub z_step: f64,
}

impl Default for ScorePlotSpec {
    fn default() -> Self {
        ScorePlotSpec { ranks: vec![1, 5, 10, 50], scale: std::f64::consts::SQRT_2, z_max: 4.0, z_step: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreCurve {
    /// `None` is the Gaussian limit.
    pub rank: Option<usize>,
    /// `(z, density, z·density)`
    pub points: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScorePlotResult {
    pub curves: Vec<ScoreCurve>,
    /// `(r, sup_z |z·p_r(z) − z·φ(z)|)`
    pub sup_distance: Vec<(usize, f64)>,
}

pub fn run_score_plot(spec: &ScorePlotSpec) -> anyhow::Result<ScorePlotResult> {
    anyhow::ensure!(spec.z_step > 0.0 && spec.z_max > 0.0, "z_max and z_step must be positive");
    anyhow::ensure!(spec.scale > 0.0, "scale must be positive");
    let half = (spec.z_max / spec.z_step).round() as i64;
    let grid: Vec<f64> = (-half..=half).map(|i| i as f64 * spec.z_step).collect();
    // limit variance of an entry is s⁴/4
    let var = spec.scale.powi(4) / 4.0;
    let limit: Vec<(f64, f64, f64)> = grid
        .iter()
        .map(|&z| {
            let p = normal_density(z, var);
            (z, p, z * p)
        })
        .collect();

    let mut curves = Vec::new();
    let mut sup_distance = Vec::new();
    for &r in &spec.ranks {
        let points = grid
            .iter()
            .map(|&z| {
                let p = mf_density_gauss(z, spec.scale, r)?;
                // r = 1 has a log singularity at 0, but z·p still tends to 0
                let zp = if z == 0.0 { 0.0 } else { z * p };
                Ok((z, p, zp))
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        let sup = points.iter().zip(&limit).map(|(a, b)| (a.2 - b.2).abs()).fold(0.0, f64::max);
        log::info!("score-plot: r={r} sup distance {sup:.5}");
        sup_distance.push((r, sup));
        curves.push(ScoreCurve { rank: Some(r), points });
    }
    curves.push(ScoreCurve { rank: None, points: limit });
    Ok(ScorePlotResult { curves, sup_distance })
}

impl ScorePlotResult {
    pub fn monotone(&self) -> bool {
        self.sup_distance.windows(2).all(|w| w[1].1 < w[0].1)
    }

    pub fn table(&self) -> CsvTable {
        let limit = &self.curves.last().expect("limit curve").points;
        let mut t = CsvTable::new("score_plot", 1, &["r", "z", "density", "z_density", "limit"]);
        for c in &self.curves {
            let label = c.rank.map_or("limit".to_string(), |r| r.to_string());
            for (&(z, p, zp), l) in c.points.iter().zip(limit) {
                t.row(vec![label.clone(), format!("{z:.4}"), format!("{p:.9e}"), format!("{zp:.9e}"), format!("{:.9e}", l.2)]);
            }
        }
        t
    }
}
