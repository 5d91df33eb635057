//! Per-day term columns and their assembly into GLM designs.
//!
//! A [`TermColumns`] holds one model term evaluated on every day of a series
//! (`NaN` where the term is undefined, e.g. a missing lagged covariate).
//! Smoother terms are fitted on a chosen set of rows and then evaluated and
//! centred everywhere, which lets hold-out rows reuse the training basis.

use chrono::{NaiveDate, Weekday};
use nalgebra::{DMatrix, DVector};

use crate::basis::{dow_factor, BasisSpec, FittedSmoother};
use crate::error::{Error, Result};
use crate::glm::{DesignMatrix, TermSpan};

#[derive(Debug, Clone, PartialEq)]
pub struct TermColumns {
    pub name: String,
    pub labels: Vec<String>,
    /// `n_days × k`; `NaN` marks undefined rows.
    pub values: DMatrix<f64>,
}

impl TermColumns {
    pub fn from_columns(name: &str, labels: Vec<String>, cols: &[Vec<Option<f64>>]) -> Self {
        let n = cols.first().map_or(0, |c| c.len());
        let values = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i].unwrap_or(f64::NAN));
        Self {
            name: name.to_string(),
            labels,
            values,
        }
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn ndays(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_defined(&self, day: usize) -> bool {
        self.values.row(day).iter().all(|v| v.is_finite())
    }

    /// Column `j` as a per-day option vector.
    pub fn column(&self, j: usize) -> Vec<Option<f64>> {
        self.values.column(j).iter().map(|&v| v.is_finite().then_some(v)).collect()
    }
}

/// A smoother fitted on one covariate together with its centring.
#[derive(Debug, Clone)]
pub struct SmoothTerm {
    pub smoother: FittedSmoother,
    pub means: Vec<f64>,
}

impl SmoothTerm {
    pub fn eval_centered(&self, x: &[f64]) -> DMatrix<f64> {
        let mut m = self.smoother.eval(x);
        for (j, mean) in self.means.iter().enumerate() {
            m.column_mut(j).add_scalar_mut(-mean);
        }
        m
    }
}

/// Fit `spec` on `input` at those `fit_rows` where it is present, centre
/// the columns on the same rows, and evaluate on every day.
pub fn smooth_term(
    name: &str,
    spec: &BasisSpec,
    input: &[Option<f64>],
    fit_rows: &[usize],
) -> Result<(SmoothTerm, TermColumns)> {
    let xfit: Vec<f64> = fit_rows.iter().filter_map(|&t| input[t]).collect();
    if xfit.is_empty() {
        return Err(Error::InsufficientData(format!("term `{name}`: no observed values")));
    }
    let smoother = FittedSmoother::fit(&xfit, spec)
        .map_err(|e| Error::InvalidBasis(format!("term `{name}`: {e}")))?;
    let fitted = smoother.eval(&xfit);
    let means: Vec<f64> = (0..fitted.ncols()).map(|j| fitted.column(j).mean()).collect();
    let term = SmoothTerm { smoother, means };

    let present: Vec<usize> = (0..input.len()).filter(|&t| input[t].is_some()).collect();
    let xs: Vec<f64> = present.iter().map(|&t| input[t].unwrap()).collect();
    let ev = term.eval_centered(&xs);
    let k = ev.ncols();
    let mut values = DMatrix::from_element(input.len(), k, f64::NAN);
    for (r, &t) in present.iter().enumerate() {
        for j in 0..k {
            values[(t, j)] = ev[(r, j)];
        }
    }
    let labels = (1..=k).map(|j| format!("{name}[{j}]")).collect();
    Ok((
        term,
        TermColumns {
            name: name.to_string(),
            labels,
            values,
        },
    ))
}

pub fn dow_term(weekdays: &[Weekday]) -> TermColumns {
    let b = dow_factor(weekdays);
    TermColumns {
        name: "dow".into(),
        labels: b.labels,
        values: b.columns,
    }
}

/// Days among `candidates` on which every term is defined.
pub fn defined_rows(terms: &[&TermColumns], candidates: impl IntoIterator<Item = usize>) -> Vec<usize> {
    candidates
        .into_iter()
        .filter(|&t| terms.iter().all(|term| term.is_defined(t)))
        .collect()
}

/// `[1 | term columns...]` on the given rows, with labels and spans.
pub fn model_matrix(terms: &[&TermColumns], rows: &[usize]) -> (DMatrix<f64>, Vec<String>, Vec<TermSpan>) {
    let p = 1 + terms.iter().map(|t| t.ncols()).sum::<usize>();
    let mut x = DMatrix::from_element(rows.len(), p, 1.0);
    let mut labels = vec!["(Intercept)".to_string()];
    let mut spans = vec![TermSpan {
        name: "(Intercept)".into(),
        start: 0,
        len: 1,
    }];
    let mut c = 1;
    for term in terms {
        for j in 0..term.ncols() {
            for (r, &t) in rows.iter().enumerate() {
                x[(r, c + j)] = term.values[(t, j)];
            }
        }
        labels.extend(term.labels.iter().cloned());
        spans.push(TermSpan {
            name: term.name.clone(),
            start: c,
            len: term.ncols(),
        });
        c += term.ncols();
    }
    (x, labels, spans)
}

pub fn build_design(
    response: &[f64],
    terms: &[&TermColumns],
    rows: &[usize],
    dates: &[NaiveDate],
) -> Result<DesignMatrix> {
    if rows.is_empty() {
        return Err(Error::InsufficientData("no complete rows".into()));
    }
    let (x, labels, spans) = model_matrix(terms, rows);
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|&t| response[t]));
    let d = rows.iter().map(|&t| dates[t]).collect();
    DesignMatrix::new(y, x, labels, spans, rows.to_vec(), d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoother_is_centered_on_fit_rows() {
        let input: Vec<Option<f64>> = (0..40).map(|i| if i == 5 { None } else { Some((i % 13) as f64) }).collect();
        let rows: Vec<usize> = (0..30).collect();
        let (_, tc) = smooth_term("x", &BasisSpec::natural(3), &input, &rows).unwrap();
        assert!(!tc.is_defined(5));
        for j in 0..3 {
            let s: f64 = rows.iter().filter(|&&t| t != 5).map(|&t| tc.values[(t, j)]).sum();
            assert!(s.abs() < 1e-9);
        }
        assert_eq!(tc.labels[0], "x[1]");
    }

    #[test]
    fn model_matrix_layout() {
        let a = TermColumns::from_columns("a", vec!["a".into()], &[vec![Some(1.0), Some(2.0), None]]);
        let b = TermColumns::from_columns(
            "b",
            vec!["b1".into(), "b2".into()],
            &[vec![Some(0.0); 3], vec![Some(5.0); 3]],
        );
        let rows = defined_rows(&[&a, &b], 0..3);
        assert_eq!(rows, vec![0, 1]);
        let (x, labels, spans) = model_matrix(&[&a, &b], &rows);
        assert_eq!(x.shape(), (2, 4));
        assert_eq!(labels, vec!["(Intercept)", "a", "b1", "b2"]);
        assert_eq!(spans[2].start, 2);
        assert_eq!(x[(1, 1)], 2.0);
    }
}
