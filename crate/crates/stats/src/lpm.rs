//! Linear probability models: design expansion with interactions, optional
//! absorbed group fixed effects, rank-revealing column selection and OLS.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::frame::{Column, Frame};
use crate::StatsError;

/// Relative residual norm below which a column counts as collinear.
pub const COLLINEARITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub response: String,
    pub terms: Vec<String>,
    /// Highest interaction order; `None` means all interactions.
    pub max_order: Option<usize>,
    /// Factor whose levels are absorbed by within-group demeaning. Without
    /// one an intercept is added.
    pub fixed_effect: Option<String>,
}

impl ModelSpec {
    pub fn new(response: &str, terms: &[&str]) -> Self {
        ModelSpec {
            response: response.into(),
            terms: terms.iter().map(|t| t.to_string()).collect(),
            max_order: Some(1),
            fixed_effect: None,
        }
    }

    pub fn order(mut self, order: Option<usize>) -> Self {
        self.max_order = order;
        self
    }

    pub fn absorb(mut self, group: &str) -> Self {
        self.fixed_effect = Some(group.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Part {
    var: usize,
    level: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignColumn {
    pub name: String,
    parts: Vec<Part>,
}

impl DesignColumn {
    /// Whether the column involves frame variable `var`.
    pub fn involves(&self, var: usize) -> bool {
        self.parts.iter().any(|p| p.var == var)
    }
}

/// Expanded design: columns are products of variable parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub columns: Vec<DesignColumn>,
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

impl Design {
    pub fn build(frame: &Frame, spec: &ModelSpec) -> Result<Design, StatsError> {
        let mut vars = Vec::new();
        for t in &spec.terms {
            let idx = frame.index_of(t)?;
            if vars.iter().any(|(i, _)| *i == idx) {
                return Err(StatsError::InvalidInput(format!("term `{t}` listed twice")));
            }
            let parts: Vec<(String, Part)> = match frame.column_at(idx) {
                Column::Numeric(_) => vec![(t.clone(), Part { var: idx, level: None })],
                Column::Factor { levels, .. } => levels
                    .iter()
                    .enumerate()
                    .skip(1)
                    .map(|(l, name)| (format!("{t}[{name}]"), Part { var: idx, level: Some(l) }))
                    .collect(),
            };
            vars.push((idx, parts));
        }
        let mut columns = Vec::new();
        if spec.fixed_effect.is_none() {
            columns.push(DesignColumn {
                name: "(Intercept)".into(),
                parts: Vec::new(),
            });
        }
        let max_order = spec.max_order.unwrap_or(vars.len()).min(vars.len());
        for order in 1..=max_order {
            for subset in combinations(vars.len(), order) {
                let mut acc: Vec<(String, Vec<Part>)> = vec![(String::new(), Vec::new())];
                for &v in &subset {
                    let mut next = Vec::new();
                    for (name, parts) in &acc {
                        for (pname, part) in &vars[v].1 {
                            let joined = if name.is_empty() { pname.clone() } else { format!("{name}:{pname}") };
                            let mut p = parts.clone();
                            p.push(*part);
                            next.push((joined, p));
                        }
                    }
                    acc = next;
                }
                columns.extend(acc.into_iter().map(|(name, parts)| DesignColumn { name, parts }));
            }
        }
        Ok(Design { columns })
    }

    /// Design value at `row`, with numeric variables optionally overridden.
    pub fn value(&self, frame: &Frame, column: usize, row: usize, overrides: &[(usize, f64)]) -> f64 {
        let mut v = 1.0;
        for part in &self.columns[column].parts {
            if let Some((_, x)) = overrides.iter().find(|(var, _)| *var == part.var) {
                v *= x;
                continue;
            }
            v *= match (frame.column_at(part.var), part.level) {
                (Column::Numeric(values), _) => values[row],
                (Column::Factor { codes, .. }, Some(l)) => (codes[row] == l) as u8 as f64,
                (Column::Factor { .. }, None) => unreachable!("factor parts carry a level"),
            };
        }
        v
    }

    pub fn matrix(&self, frame: &Frame) -> DMatrix<f64> {
        DMatrix::from_fn(frame.rows(), self.columns.len(), |i, j| self.value(frame, j, i, &[]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub spec: ModelSpec,
    pub design: Design,
    /// Indices into `design.columns` of the retained regressors.
    pub retained: Vec<usize>,
    pub names: Vec<String>,
    pub coef: DVector<f64>,
    pub dropped: Vec<String>,
    pub residuals: DVector<f64>,
    /// Within-transformed retained design.
    pub x: DMatrix<f64>,
    pub xtx_inv: DMatrix<f64>,
    /// Fixed-effect group code per row, when absorbed.
    pub groups: Option<Vec<usize>>,
    pub n_groups: usize,
}

impl FitResult {
    pub fn n_obs(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_params(&self) -> usize {
        self.retained.len()
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.coef[i])
    }
}

/// Subtracts group means from every column of `m` in place.
pub fn demean_within(m: &mut DMatrix<f64>, groups: &[usize], n_groups: usize) {
    let mut counts = vec![0usize; n_groups];
    groups.iter().for_each(|g| counts[*g] += 1);
    for mut col in m.column_iter_mut() {
        let mut sums = vec![0.0; n_groups];
        for (i, g) in groups.iter().enumerate() {
            sums[*g] += col[i];
        }
        for (i, g) in groups.iter().enumerate() {
            col[i] -= sums[*g] / counts[*g] as f64;
        }
    }
}

/// Greedy Gram-Schmidt pass: keeps a column when it is not (numerically)
/// in the span of the previously kept columns.
pub fn independent_columns(x: &DMatrix<f64>, tol: f64) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut keep = Vec::new();
    for j in 0..x.ncols() {
        let v = x.column(j).into_owned();
        let norm = v.norm();
        if norm <= f64::EPSILON {
            continue;
        }
        let mut r = v.clone();
        for _ in 0..2 {
            for q in &basis {
                let proj = q.dot(&r);
                r.axpy(-proj, q, 1.0);
            }
        }
        let rn = r.norm();
        if rn > tol * norm {
            basis.push(r / rn);
            keep.push(j);
        }
    }
    keep
}

pub fn fit_lpm(frame: &Frame, spec: &ModelSpec) -> Result<FitResult, StatsError> {
    let y_raw = frame.numeric(&spec.response)?;
    let design = Design::build(frame, spec)?;
    let mut x = design.matrix(frame);
    let mut y = DVector::from_column_slice(y_raw);
    let (groups, n_groups) = match &spec.fixed_effect {
        Some(g) => {
            let (codes, n) = frame.group_codes(g)?;
            if n < 2 {
                return Err(StatsError::TooFewGroups(n));
            }
            let mut ym = DMatrix::from_column_slice(y.len(), 1, y.as_slice());
            demean_within(&mut x, &codes, n);
            demean_within(&mut ym, &codes, n);
            y = ym.column(0).into_owned();
            (Some(codes), n)
        }
        None => (None, 0),
    };
    let retained = independent_columns(&x, COLLINEARITY_TOL);
    let dropped: Vec<String> = (0..design.columns.len())
        .filter(|j| !retained.contains(j))
        .map(|j| design.columns[j].name.clone())
        .collect();
    if retained.is_empty() {
        return Err(StatsError::AllCollinear(dropped));
    }
    if frame.rows() < retained.len() {
        return Err(StatsError::TooFewRows {
            rows: frame.rows(),
            columns: retained.len(),
        });
    }
    let xr = x.select_columns(&retained);
    let xtx = xr.transpose() * &xr;
    let chol = xtx.clone().cholesky().ok_or(StatsError::Singular)?;
    let coef = chol.solve(&(xr.transpose() * &y));
    let residuals = &y - &xr * &coef;
    let xtx_inv = chol.inverse();
    Ok(FitResult {
        spec: spec.clone(),
        names: retained.iter().map(|j| design.columns[*j].name.clone()).collect(),
        design,
        retained,
        coef,
        dropped,
        residuals,
        x: xr,
        xtx_inv,
        groups,
        n_groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(x: &[f64], y: &[f64]) -> Frame {
        let mut f = Frame::new();
        f.add_numeric("x", x.to_vec()).unwrap();
        f.add_numeric("y", y.to_vec()).unwrap();
        f
    }

    #[test]
    fn exact_fit_without_fe() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let fit = fit_lpm(&frame(&xs, &xs), &ModelSpec::new("y", &["x"])).unwrap();
        assert!((fit.coefficient("x").unwrap() - 1.0).abs() < 1e-12);
        assert!(fit.coefficient("(Intercept)").unwrap().abs() < 1e-12);
        assert!(fit.residuals.norm() < 1e-12);
    }

    #[test]
    fn two_row_groups_demean_to_half_differences() {
        let mut m = DMatrix::from_column_slice(4, 1, &[1.0, 0.0, 5.0, 2.0]);
        demean_within(&mut m, &[0, 0, 1, 1], 2);
        assert_eq!(m.as_slice(), &[0.5, -0.5, 1.5, -1.5]);
    }

    #[test]
    fn interaction_names_and_order() {
        let mut f = Frame::new();
        f.add_numeric("c", vec![0.0, 1.0, 0.0]).unwrap();
        f.add_numeric("n", vec![1.0, 0.0, 0.0]).unwrap();
        f.add_factor("m", &["a", "b", "c"]).unwrap();
        let d = Design::build(&f, &ModelSpec::new("c", &["c", "n", "m"]).order(None)).unwrap();
        let names: Vec<&str> = d.columns.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(
            names,
            [
                "(Intercept)", "c", "n", "m[b]", "m[c]", "c:n", "c:m[b]", "c:m[c]", "n:m[b]", "n:m[c]", "c:n:m[b]",
                "c:n:m[c]"
            ]
        );
        let d2 = Design::build(&f, &ModelSpec::new("c", &["c", "n", "m"]).order(Some(2))).unwrap();
        assert_eq!(d2.columns.len(), 10);
    }

    #[test]
    fn collinear_columns_are_dropped_last_first() {
        let mut f = frame(&[0.0, 1.0, 0.0, 1.0, 1.0], &[0.0, 1.0, 1.0, 0.0, 1.0]);
        f.add_numeric("x2", vec![0.0, 2.0, 0.0, 2.0, 2.0]).unwrap();
        let fit = fit_lpm(&f, &ModelSpec::new("y", &["x", "x2"])).unwrap();
        assert_eq!(fit.dropped, vec!["x2".to_string()]);
        assert_eq!(fit.names, vec!["(Intercept)".to_string(), "x".to_string()]);
    }

    #[test]
    fn all_collinear_is_an_error() {
        let mut f = frame(&[1.0, 1.0, 2.0, 2.0], &[0.0, 1.0, 1.0, 0.0]);
        f.add_factor("t", &["a", "a", "b", "b"]).unwrap();
        let err = fit_lpm(&f, &ModelSpec::new("y", &["x"]).absorb("t")).unwrap_err();
        assert_eq!(err, StatsError::AllCollinear(vec!["x".into()]));
    }

    #[test]
    fn residuals_orthogonal_to_regressors() {
        let f = frame(&[0.0, 1.0, 2.0, 5.0, 3.0], &[1.0, 0.0, 1.0, 1.0, 0.0]);
        let fit = fit_lpm(&f, &ModelSpec::new("y", &["x"])).unwrap();
        let score = fit.x.transpose() * &fit.residuals;
        assert!(score.norm() < 1e-12);
    }

    #[test]
    fn exactly_determined_fit() {
        let f = frame(&[1.0, 2.0], &[1.0, 0.0]);
        let fit = fit_lpm(&f, &ModelSpec::new("y", &["x"])).unwrap();
        assert_eq!(fit.n_params(), 2);
        assert!(fit.residuals.norm() < 1e-12);
    }
}
