//! Marginal contrasts of binary factors: model predictions with the factor
//! set to 1 and to 0, averaged over the observed rows, with delta-method
//! standard errors.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::frame::{Column, Frame};
use crate::lpm::FitResult;
use crate::vcov::Vcov;
use crate::StatsError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grouping {
    pub variable: String,
    pub level: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub factor: String,
    pub contrast: String,
    pub group: Option<Grouping>,
    pub family: String,
    /// Percentage points.
    pub estimate: f64,
    pub se: f64,
    pub df: f64,
    pub p_value: f64,
    pub p_adjusted: f64,
    pub n_rows: usize,
}

impl EffectEstimate {
    pub fn ci95(&self) -> (f64, f64) {
        let q = t_quantile(0.975, self.df);
        (self.estimate - q * self.se, self.estimate + q * self.se)
    }
}

pub fn t_quantile(p: f64, df: f64) -> f64 {
    if !df.is_finite() || df <= 0.0 {
        return statrs::distribution::Normal::standard().inverse_cdf(p);
    }
    StudentsT::new(0.0, 1.0, df).expect("positive df").inverse_cdf(p)
}

/// Two-sided p-value of `t` under Student's t with `df` degrees of freedom.
pub fn two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return 1.0;
    }
    let tail = if !df.is_finite() || df <= 0.0 {
        statrs::distribution::Normal::standard().cdf(-t.abs())
    } else {
        StudentsT::new(0.0, 1.0, df).expect("positive df").cdf(-t.abs())
    };
    (2.0 * tail).min(1.0)
}

/// Reference degrees of freedom: smallest cluster count minus one, or the
/// residual degrees of freedom without clustering.
pub fn reference_df(fit: &FitResult, vcov: &Vcov) -> f64 {
    match vcov.min_clusters() {
        Some(g) => (g as f64 - 1.0).max(1.0),
        None => (fit.n_obs() as f64 - fit.n_params() as f64 - fit.n_groups as f64).max(1.0),
    }
}

/// Contrast gradient over the retained coefficients for the given rows.
pub fn contrast_gradient(fit: &FitResult, frame: &Frame, var: usize, rows: &[usize]) -> DVector<f64> {
    let mut g = DVector::zeros(fit.retained.len());
    for &i in rows {
        for (k, &j) in fit.retained.iter().enumerate() {
            if fit.design.columns[j].involves(var) {
                g[k] += fit.design.value(frame, j, i, &[(var, 1.0)]) - fit.design.value(frame, j, i, &[(var, 0.0)]);
            }
        }
    }
    g / rows.len().max(1) as f64
}

/// 1 vs 0 contrasts of `factor`, pooled or per level of `by`.
pub fn emm_contrasts(
    fit: &FitResult,
    vcov: &Vcov,
    frame: &Frame,
    factor: &str,
    by: Option<&str>,
    family: &str,
) -> Result<Vec<EffectEstimate>, StatsError> {
    if !fit.spec.terms.iter().any(|t| t == factor) {
        return Err(StatsError::FactorNotInDesign(factor.to_string()));
    }
    let var = frame.index_of(factor)?;
    match frame.column_at(var) {
        Column::Numeric(v) if v.iter().all(|x| *x == 0.0 || *x == 1.0) => {}
        _ => return Err(StatsError::InvalidInput(format!("`{factor}` is not a binary term"))),
    }
    let groups: Vec<(Option<Grouping>, Vec<usize>)> = match by {
        None => vec![(None, (0..frame.rows()).collect())],
        Some(b) => match frame.column(b)? {
            Column::Factor { codes, levels } => levels
                .iter()
                .enumerate()
                .map(|(l, name)| {
                    let rows = codes.iter().enumerate().filter(|(_, c)| **c == l).map(|(i, _)| i).collect();
                    (
                        Some(Grouping {
                            variable: b.to_string(),
                            level: name.clone(),
                        }),
                        rows,
                    )
                })
                .collect(),
            Column::Numeric(_) => return Err(StatsError::InvalidInput(format!("`{b}` is not a factor"))),
        },
    };
    let df = reference_df(fit, vcov);
    Ok(groups
        .into_iter()
        .map(|(group, rows)| {
            let g = contrast_gradient(fit, frame, var, &rows);
            let est = g.dot(&fit.coef);
            let var_est = (g.transpose() * &vcov.matrix * &g)[(0, 0)].max(0.0);
            let se = var_est.sqrt();
            let p = if se > 0.0 {
                two_sided_p(est / se, df)
            } else if est.abs() < 1e-12 {
                1.0
            } else {
                0.0
            };
            EffectEstimate {
                factor: factor.to_string(),
                contrast: "1 - 0".into(),
                group,
                family: family.to_string(),
                estimate: est * 100.0,
                se: se * 100.0,
                df,
                p_value: p,
                p_adjusted: p,
                n_rows: rows.len(),
            }
        })
        .collect())
}
