//! Cluster-robust covariance: one-way sandwich and the two-way
//! combination V_A + V_B - V_AB.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::frame::Frame;
use crate::lpm::FitResult;
use crate::StatsError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SmallSample {
    /// Plain sandwich.
    None,
    /// G/(G-1) * (N-1)/(N-K) per clustering dimension.
    #[default]
    Cgm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vcov {
    pub matrix: DMatrix<f64>,
    /// Combined matrix before the semidefinite repair.
    pub raw: DMatrix<f64>,
    /// Negative eigenvalues were clipped to zero.
    pub repaired: bool,
    /// Cluster counts per requested dimension.
    pub clusters: Vec<usize>,
}

impl Vcov {
    pub fn se(&self, i: usize) -> f64 {
        self.matrix[(i, i)].max(0.0).sqrt()
    }

    /// Smallest cluster count, the basis for reference degrees of freedom.
    pub fn min_clusters(&self) -> Option<usize> {
        self.clusters.iter().copied().min()
    }
}

fn relabel(codes: &[usize]) -> (Vec<usize>, usize) {
    let mut map = std::collections::HashMap::new();
    let out = codes
        .iter()
        .map(|c| {
            let n = map.len();
            *map.entry(*c).or_insert(n)
        })
        .collect();
    (out, map.len())
}

/// Sum over clusters of the outer products of cluster scores X_g' e_g.
pub fn cluster_meat(x: &DMatrix<f64>, residuals: &DVector<f64>, codes: &[usize], n_clusters: usize) -> DMatrix<f64> {
    let k = x.ncols();
    let mut scores = DMatrix::<f64>::zeros(n_clusters, k);
    for (i, g) in codes.iter().enumerate() {
        let e = residuals[i];
        for j in 0..k {
            scores[(*g, j)] += x[(i, j)] * e;
        }
    }
    scores.transpose() * scores
}

/// One-way cluster-robust covariance for arbitrary cluster codes.
pub fn one_way(fit: &FitResult, codes: &[usize], correction: SmallSample) -> Result<(DMatrix<f64>, usize), StatsError> {
    if codes.len() != fit.n_obs() {
        return Err(StatsError::InvalidInput("cluster labels do not match rows".into()));
    }
    let (codes, g) = relabel(codes);
    let meat = cluster_meat(&fit.x, &fit.residuals, &codes, g);
    let mut v = &fit.xtx_inv * meat * &fit.xtx_inv;
    if correction == SmallSample::Cgm {
        let n = fit.n_obs() as f64;
        let k = fit.n_params() as f64;
        let gf = g as f64;
        if g > 1 && n > k {
            v *= gf / (gf - 1.0) * (n - 1.0) / (n - k);
        }
    }
    Ok((v, g))
}

/// Clips negative eigenvalues of a symmetric matrix to zero.
pub fn psd_repair(m: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    if eig.eigenvalues.iter().all(|l| *l >= 0.0) {
        return (sym, false);
    }
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let repaired = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    (repaired, true)
}

/// Cluster-robust covariance clustered on one or two frame columns. Two
/// dimensions combine as V_A + V_B - V_{A and B}; the result is repaired
/// to be positive semidefinite when needed.
pub fn cluster_vcov(fit: &FitResult, frame: &Frame, dims: &[&str], correction: SmallSample) -> Result<Vcov, StatsError> {
    let mut codes = Vec::new();
    let mut clusters = Vec::new();
    for d in dims {
        let (c, n) = frame.group_codes(d)?;
        if n < 2 {
            return Err(StatsError::DegenerateCluster(d.to_string()));
        }
        clusters.push(n);
        codes.push(c);
    }
    let matrix = match codes.as_slice() {
        [a] => one_way(fit, a, correction)?.0,
        [a, b] => {
            let (va, _) = one_way(fit, a, correction)?;
            let (vb, _) = one_way(fit, b, correction)?;
            let nb = clusters[1];
            let ab: Vec<usize> = a.iter().zip(b).map(|(x, y)| x * nb + y).collect();
            let (vab, _) = one_way(fit, &ab, correction)?;
            va + vb - vab
        }
        _ => return Err(StatsError::InvalidInput("clustering supports one or two dimensions".into())),
    };
    let raw = matrix;
    let (matrix, repaired) = psd_repair(&raw);
    Ok(Vcov {
        matrix,
        raw,
        repaired,
        clusters,
    })
}

/// Heteroskedasticity-robust (HC0) covariance.
pub fn hc0(fit: &FitResult) -> DMatrix<f64> {
    let codes: Vec<usize> = (0..fit.n_obs()).collect();
    one_way(fit, &codes, SmallSample::None).expect("row-aligned").0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lpm::{fit_lpm, ModelSpec};

    fn fixture() -> (Frame, FitResult) {
        let mut f = Frame::new();
        f.add_numeric("x", vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        f.add_numeric("y", vec![0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        f.add_factor("a", &["p", "p", "p", "q", "q", "q", "r", "r", "r"]).unwrap();
        f.add_factor("b", &["u", "v", "w", "u", "v", "w", "u", "v", "w"]).unwrap();
        f.add_factor("row", &["1", "2", "3", "4", "5", "6", "7", "8", "9"]).unwrap();
        f.add_factor("one", &["z"; 9]).unwrap();
        let fit = fit_lpm(&f, &ModelSpec::new("y", &["x"])).unwrap();
        (f, fit)
    }

    #[test]
    fn singleton_clusters_give_hc0() {
        let (f, fit) = fixture();
        let v = cluster_vcov(&fit, &f, &["row", "row"], SmallSample::None).unwrap();
        assert!((v.matrix - hc0(&fit)).abs().max() < 1e-12);
    }

    #[test]
    fn single_cluster_dimension_is_an_error() {
        let (f, fit) = fixture();
        assert_eq!(
            cluster_vcov(&fit, &f, &["a", "one"], SmallSample::Cgm).unwrap_err(),
            StatsError::DegenerateCluster("one".into())
        );
    }

    #[test]
    fn symmetric_and_psd() {
        let (f, fit) = fixture();
        let v = cluster_vcov(&fit, &f, &["a", "b"], SmallSample::Cgm).unwrap();
        assert!((&v.matrix - v.matrix.transpose()).abs().max() < 1e-15);
        let eig = SymmetricEigen::new(v.matrix.clone());
        assert!(eig.eigenvalues.iter().all(|l| *l >= -1e-12));
        assert_eq!(v.clusters, vec![3, 3]);
    }

    #[test]
    fn repair_clips_negative_eigenvalues() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let (r, flagged) = psd_repair(&m);
        assert!(flagged);
        let expected = DMatrix::from_row_slice(2, 2, &[1.5, 1.5, 1.5, 1.5]);
        assert!((r - expected).abs().max() < 1e-12);
        let (_, ok) = psd_repair(&DMatrix::identity(2, 2));
        assert!(!ok);
    }
}
