//! Choice probability as a quartic polynomial in price advantage, with
//! delta-method bands from trial-clustered covariance.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::emm::t_quantile;
use crate::frame::Frame;
use crate::lpm::{fit_lpm, ModelSpec};
use crate::vcov::{cluster_vcov, SmallSample};
use crate::StatsError;

pub const CURVE_DEGREE: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Price advantage in percent.
    pub x: f64,
    pub fit: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceCurve {
    pub degree: usize,
    pub points: Vec<CurvePoint>,
    /// Coefficients on the standardized powers, intercept first.
    pub coef: Vec<f64>,
    pub center: f64,
    pub scale: f64,
    /// Fewer than two distinct advantage values: flat at the mean.
    pub degenerate: bool,
}

/// Fits `y` on powers of standardized `advantage` (degree four, fewer
/// when there are not enough distinct values) and evaluates the curve on
/// `n_points` evenly spaced values over the observed range.
pub fn price_advantage_curve(
    advantage: &[f64],
    y: &[f64],
    trial: &[String],
    n_points: usize,
) -> Result<PriceCurve, StatsError> {
    if advantage.len() != y.len() || advantage.len() != trial.len() || advantage.is_empty() {
        return Err(StatsError::InvalidInput("advantage, outcome and trial must align".into()));
    }
    if advantage.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::InvalidInput("non-finite input".into()));
    }
    let mut distinct = advantage.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    distinct.dedup();
    let (lo, hi) = (distinct[0], *distinct.last().expect("non-empty"));
    if distinct.len() < 2 {
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        return Ok(PriceCurve {
            degree: 0,
            points: vec![CurvePoint {
                x: lo,
                fit: mean,
                lower: mean,
                upper: mean,
            }],
            coef: vec![mean],
            center: lo,
            scale: 1.0,
            degenerate: true,
        });
    }
    let degree = CURVE_DEGREE.min(distinct.len() - 1);
    let n = advantage.len() as f64;
    let center = advantage.iter().sum::<f64>() / n;
    let scale = (advantage.iter().map(|a| (a - center).powi(2)).sum::<f64>() / n).sqrt();
    let z: Vec<f64> = advantage.iter().map(|a| (a - center) / scale).collect();

    let mut frame = Frame::new();
    frame.add_numeric("y", y.to_vec())?;
    let mut terms = Vec::new();
    for d in 1..=degree {
        let name = format!("z{d}");
        frame.add_numeric(&name, z.iter().map(|v| v.powi(d as i32)).collect())?;
        terms.push(name);
    }
    frame.add_factor("trial", trial)?;
    let term_refs: Vec<&str> = terms.iter().map(String::as_str).collect();
    let fit = fit_lpm(&frame, &ModelSpec::new("y", &term_refs))?;
    if !fit.dropped.is_empty() {
        return Err(StatsError::AllCollinear(fit.dropped.clone()));
    }
    let vcov = cluster_vcov(&fit, &frame, &["trial"], SmallSample::Cgm)?;
    let q = t_quantile(0.975, vcov.min_clusters().map(|g| g as f64 - 1.0).unwrap_or(f64::INFINITY));
    let n_points = n_points.max(2);
    let points = (0..n_points)
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / (n_points - 1) as f64;
            let zx = (x - center) / scale;
            let g = DVector::from_iterator(degree + 1, (0..=degree).map(|d| zx.powi(d as i32)));
            let fit_v = g.dot(&fit.coef);
            let se = (g.transpose() * &vcov.matrix * &g)[(0, 0)].max(0.0).sqrt();
            CurvePoint {
                x,
                fit: fit_v,
                lower: fit_v - q * se,
                upper: fit_v + q * se,
            }
        })
        .collect();
    Ok(PriceCurve {
        degree,
        points,
        coef: fit.coef.iter().copied().collect(),
        center,
        scale,
        degenerate: false,
    })
}

impl PriceCurve {
    pub fn predict(&self, x: f64) -> f64 {
        let z = (x - self.center) / self.scale;
        self.coef.iter().enumerate().map(|(d, c)| c * z.powi(d as i32)).sum()
    }
}
