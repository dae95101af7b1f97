//! End-to-end effects analysis over product rows.

use serde::{Deserialize, Serialize};

use crate::bh::adjust_estimates;
use crate::emm::{emm_contrasts, EffectEstimate};
use crate::frame::{Column, Frame};
use crate::lpm::{fit_lpm, ModelSpec};
use crate::rows::{rows_to_frame, ProductRow};
use crate::vcov::{cluster_vcov, SmallSample};
use crate::StatsError;

pub const FAMILY_POOLED: &str = "M1 pooled";
pub const FAMILY_BY_MODEL: &str = "M1 by model";
pub const FAMILY_BY_TEXT: &str = "M2 by nudge text";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSpec {
    /// Interaction order for M1; `None` is the saturated model.
    pub interaction_order: Option<usize>,
    pub by_model: bool,
    /// Also fit M2 with nudge text as a regressor.
    pub nudge_text_model: bool,
    pub cluster: Vec<String>,
    pub correction: SmallSample,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        AnalysisSpec {
            interaction_order: None,
            by_model: true,
            nudge_text_model: true,
            cluster: vec!["nudge_text".into(), "category".into()],
            correction: SmallSample::Cgm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectsReport {
    pub n_trials: usize,
    pub n_rows: usize,
    pub estimates: Vec<EffectEstimate>,
    pub dropped_terms: Vec<String>,
    pub cluster_dims: Vec<String>,
    pub vcov_repaired: bool,
    pub notes: Vec<String>,
}

impl EffectsReport {
    pub fn find(&self, family: &str, factor: &str, level: Option<&str>) -> Option<&EffectEstimate> {
        self.estimates.iter().find(|e| {
            e.family == family && e.factor == factor && e.group.as_ref().map(|g| g.level.as_str()) == level
        })
    }

    /// Plain-text table, one estimate per line.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<18} {:<7} {:<28} {:>9} {:>8} {:>9} {:>9}\n",
            "family", "factor", "group", "est_pp", "se_pp", "p", "p_bh"
        );
        for e in &self.estimates {
            let group = e.group.as_ref().map(|g| format!("{}={}", g.variable, g.level)).unwrap_or_else(|| "-".into());
            out.push_str(&format!(
                "{:<18} {:<7} {:<28} {:>9.2} {:>8.2} {:>9.4} {:>9.4}\n",
                e.family, e.factor, group, e.estimate, e.se, e.p_value, e.p_adjusted
            ));
        }
        out
    }
}

fn levels(frame: &Frame, name: &str) -> usize {
    match frame.column(name) {
        Ok(Column::Factor { levels, .. }) => levels.len(),
        _ => 0,
    }
}

fn is_constant(frame: &Frame, name: &str) -> bool {
    frame
        .numeric(name)
        .map(|v| v.iter().all(|x| *x == v[0]))
        .unwrap_or(true)
}

/// Fits M1 (and optionally M2) with trial fixed effects, clusters, and
/// reports 1 vs 0 contrasts for c, r, p and n with BH-adjusted p-values.
/// Clustering dimensions with a single cluster are skipped and noted;
/// with none left, trials are the clusters.
pub fn analyze(rows: &[ProductRow], spec: &AnalysisSpec) -> Result<EffectsReport, StatsError> {
    let frame = rows_to_frame(rows)?;
    let n_trials = levels(&frame, "trial");
    if n_trials < 2 {
        return Err(StatsError::TooFewGroups(n_trials));
    }
    let mut notes = Vec::new();
    let mut factors: Vec<&str> = Vec::new();
    for f in ["c", "r", "p", "n"] {
        if !frame.has(f) {
            continue;
        }
        if is_constant(&frame, f) {
            notes.push(format!("term `{f}` is constant and was left out"));
        } else {
            factors.push(f);
        }
    }
    let multi_model = levels(&frame, "model") > 1;
    let mut terms = factors.clone();
    if multi_model {
        terms.push("model");
    }
    let mut dims: Vec<&str> = Vec::new();
    for d in &spec.cluster {
        if levels(&frame, d) >= 2 {
            dims.push(d);
        } else {
            notes.push(format!("clustering dimension `{d}` has a single cluster and was skipped"));
        }
    }
    if dims.is_empty() {
        dims.push("trial");
        notes.push("clustering by trial".into());
    }

    let m1 = ModelSpec::new("y", &terms).order(spec.interaction_order).absorb("trial");
    let fit = fit_lpm(&frame, &m1)?;
    let vcov = cluster_vcov(&fit, &frame, &dims, spec.correction)?;
    let mut estimates = Vec::new();
    for f in &factors {
        estimates.extend(emm_contrasts(&fit, &vcov, &frame, f, None, FAMILY_POOLED)?);
        if spec.by_model && multi_model {
            estimates.extend(emm_contrasts(&fit, &vcov, &frame, f, Some("model"), FAMILY_BY_MODEL)?);
        }
    }
    let mut dropped = fit.dropped.clone();
    let mut repaired = vcov.repaired;

    if spec.nudge_text_model && factors.contains(&"n") && levels(&frame, "nudge_text") > 1 {
        let mut m2_terms = factors.clone();
        m2_terms.push("nudge_text");
        let m2 = ModelSpec::new("y", &m2_terms).order(Some(2)).absorb("trial");
        let fit2 = fit_lpm(&frame, &m2)?;
        let vcov2 = cluster_vcov(&fit2, &frame, &dims, spec.correction)?;
        estimates.extend(emm_contrasts(&fit2, &vcov2, &frame, "n", Some("nudge_text"), FAMILY_BY_TEXT)?);
        dropped.extend(fit2.dropped.iter().map(|d| format!("M2 {d}")));
        repaired |= vcov2.repaired;
    }
    if repaired {
        notes.push("covariance was not positive semidefinite and was repaired".into());
    }
    adjust_estimates(&mut estimates)?;
    Ok(EffectsReport {
        n_trials,
        n_rows: frame.rows(),
        estimates,
        dropped_terms: dropped,
        cluster_dims: dims.iter().map(|d| d.to_string()).collect(),
        vcov_repaired: repaired,
        notes,
    })
}
