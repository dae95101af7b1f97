//! Column store for model fitting: numeric columns and factors with sorted
//! levels (the first level is the reference).

use std::collections::BTreeSet;

use crate::StatsError;

#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Numeric(Vec<f64>),
    Factor { codes: Vec<usize>, levels: Vec<String> },
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Factor { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Frame {
    names: Vec<String>,
    columns: Vec<Column>,
    rows: usize,
}

impl Frame {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    fn push(&mut self, name: &str, column: Column) -> Result<(), StatsError> {
        if self.names.iter().any(|n| n == name) {
            return Err(StatsError::InvalidInput(format!("duplicate column `{name}`")));
        }
        if !self.columns.is_empty() && column.len() != self.rows {
            return Err(StatsError::InvalidInput(format!(
                "column `{name}` has {} rows, expected {}",
                column.len(),
                self.rows
            )));
        }
        self.rows = column.len();
        self.names.push(name.to_string());
        self.columns.push(column);
        Ok(())
    }

    pub fn add_numeric(&mut self, name: &str, values: Vec<f64>) -> Result<(), StatsError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(StatsError::InvalidInput(format!("column `{name}` has non-finite values")));
        }
        self.push(name, Column::Numeric(values))
    }

    pub fn add_factor<S: AsRef<str>>(&mut self, name: &str, values: &[S]) -> Result<(), StatsError> {
        let levels: Vec<String> = values
            .iter()
            .map(|v| v.as_ref().to_string())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let codes = values
            .iter()
            .map(|v| levels.binary_search_by(|l| l.as_str().cmp(v.as_ref())).expect("level present"))
            .collect();
        self.push(name, Column::Factor { codes, levels })
    }

    pub fn index_of(&self, name: &str) -> Result<usize, StatsError> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| StatsError::UnknownVariable(name.to_string()))
    }

    pub fn column(&self, name: &str) -> Result<&Column, StatsError> {
        Ok(&self.columns[self.index_of(name)?])
    }

    pub fn column_at(&self, index: usize) -> &Column {
        &self.columns[index]
    }

    pub fn has(&self, name: &str) -> bool {
        self.names.iter().any(|n| n == name)
    }

    pub fn numeric(&self, name: &str) -> Result<&[f64], StatsError> {
        match self.column(name)? {
            Column::Numeric(v) => Ok(v),
            Column::Factor { .. } => Err(StatsError::InvalidInput(format!("`{name}` is not numeric"))),
        }
    }

    /// Integer group codes for a factor column, or for a numeric column's
    /// distinct values.
    pub fn group_codes(&self, name: &str) -> Result<(Vec<usize>, usize), StatsError> {
        match self.column(name)? {
            Column::Factor { codes, levels } => Ok((codes.clone(), levels.len())),
            Column::Numeric(values) => {
                let mut distinct: Vec<f64> = values.clone();
                distinct.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
                distinct.dedup();
                let codes = values
                    .iter()
                    .map(|v| distinct.binary_search_by(|d| d.partial_cmp(v).expect("finite")).expect("present"))
                    .collect();
                Ok((codes, distinct.len()))
            }
        }
    }

    /// Keeps the rows where `keep` is true.
    pub fn filter(&self, keep: &[bool]) -> Frame {
        let pick = |v: &[f64]| v.iter().zip(keep).filter(|(_, k)| **k).map(|(x, _)| *x).collect::<Vec<_>>();
        let mut out = Frame::new();
        for (name, column) in self.names.iter().zip(&self.columns) {
            match column {
                Column::Numeric(v) => out.add_numeric(name, pick(v)).expect("same shape"),
                Column::Factor { codes, levels } => {
                    let values: Vec<&str> = codes
                        .iter()
                        .zip(keep)
                        .filter(|(_, k)| **k)
                        .map(|(c, _)| levels[*c].as_str())
                        .collect();
                    out.add_factor(name, &values).expect("same shape");
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_levels_are_sorted() {
        let mut f = Frame::new();
        f.add_factor("m", &["b", "a", "b", "c"]).unwrap();
        match f.column("m").unwrap() {
            Column::Factor { codes, levels } => {
                assert_eq!(levels, &["a", "b", "c"]);
                assert_eq!(codes, &[1, 0, 1, 2]);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn shape_and_name_checks() {
        let mut f = Frame::new();
        f.add_numeric("x", vec![1.0, 2.0]).unwrap();
        assert!(f.add_numeric("y", vec![1.0]).is_err());
        assert!(f.add_numeric("x", vec![1.0, 2.0]).is_err());
        assert!(f.add_numeric("z", vec![f64::NAN, 1.0]).is_err());
        assert!(matches!(f.column("w"), Err(StatsError::UnknownVariable(_))));
    }

    #[test]
    fn filtering_and_groups() {
        let mut f = Frame::new();
        f.add_numeric("x", vec![3.0, 1.0, 3.0]).unwrap();
        f.add_factor("g", &["u", "v", "w"]).unwrap();
        assert_eq!(f.group_codes("x").unwrap(), (vec![1, 0, 1], 2));
        let g = f.filter(&[true, false, true]);
        assert_eq!(g.rows(), 2);
        assert_eq!(g.group_codes("g").unwrap(), (vec![0, 1], 2));
    }
}
