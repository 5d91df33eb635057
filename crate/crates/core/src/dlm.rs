//! Distributed-lag regressors: the mean-plus-deviations block, the spline in
//! the lag-set mean, and the lag-dimension cross-basis with its cumulative
//! reduction.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{BSplineSmoother, BasisSpec};
use crate::dataset::lag_mean;
use crate::design::{smooth_term, SmoothTerm, TermColumns};
use crate::error::{Error, Result};
use crate::glm::FitResult;

/// Strictly increasing, non-empty set of non-negative lags.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LagSet(Vec<usize>);

impl LagSet {
    pub fn new(lags: Vec<usize>) -> Result<Self> {
        if lags.is_empty() {
            return Err(Error::InvalidArgument("empty lag set".into()));
        }
        if lags.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(format!("lags {lags:?} are not strictly increasing")));
        }
        Ok(Self(lags))
    }

    /// `0..=max`.
    pub fn through(max: usize) -> Self {
        Self((0..=max).collect())
    }

    pub fn lags(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max_lag(&self) -> usize {
        *self.0.last().unwrap()
    }
}

impl fmt::Display for LagSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|l| l.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for LagSet {
    type Err = Error;

    /// Accepts `0,1,2` or `0-3`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("cannot parse lag set `{s}`"));
        let s = s.trim();
        if let Some((a, b)) = s.split_once('-') {
            let a: usize = a.trim().parse().map_err(|_| bad())?;
            let b: usize = b.trim().parse().map_err(|_| bad())?;
            if b < a {
                return Err(bad());
            }
            return Self::new((a..=b).collect());
        }
        let lags = s
            .split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(lags)
    }
}

fn shifted(x: &[Option<f64>], lag: usize) -> Vec<Option<f64>> {
    (0..x.len()).map(|t| t.checked_sub(lag).and_then(|s| x[s])).collect()
}

fn check_len(x: &[Option<f64>], lags: &LagSet) -> Result<()> {
    if lags.max_lag() >= x.len() {
        return Err(Error::InvalidArgument(format!(
            "max lag {} needs a series longer than {} days",
            lags.max_lag(),
            x.len()
        )));
    }
    Ok(())
}

/// Linear distributed-lag block. Column 0 (the lead) is the mean of the
/// exposure over the lag set; column `j ≥ 1` is `x(t − l_{j+1})` minus that
/// mean. The lead coefficient equals the sum of raw per-lag coefficients.
pub fn dlm_block(name: &str, x: &[Option<f64>], lags: &LagSet) -> Result<TermColumns> {
    check_len(x, lags)?;
    let mean = lag_mean(x, lags.lags());
    let mut cols = vec![mean.clone()];
    let mut labels = vec![format!("{name}:mean")];
    for &l in &lags.lags()[1..] {
        let s = shifted(x, l);
        cols.push(s.iter().zip(&mean).map(|(v, m)| Some((*v)? - (*m)?)).collect());
        labels.push(format!("{name}:dev{l}"));
    }
    Ok(TermColumns::from_columns(name, labels, &cols))
}

/// Raw per-lag columns `x(t − l)`; spans the same space as [`dlm_block`].
pub fn raw_lag_block(name: &str, x: &[Option<f64>], lags: &LagSet) -> Result<TermColumns> {
    check_len(x, lags)?;
    let cols: Vec<Vec<Option<f64>>> = lags.lags().iter().map(|&l| shifted(x, l)).collect();
    let labels = lags.lags().iter().map(|l| format!("{name}:lag{l}")).collect();
    Ok(TermColumns::from_columns(name, labels, &cols))
}

/// Spline in the lag-set mean replacing the linear lead, plus the retained
/// deviation columns.
#[derive(Debug, Clone)]
pub struct NonlinearLead {
    pub spline: SmoothTerm,
    pub spline_cols: TermColumns,
    pub deviations: Option<TermColumns>,
}

pub fn nonlinear_lead(
    name: &str,
    x: &[Option<f64>],
    lags: &LagSet,
    df3: usize,
    fit_rows: &[usize],
) -> Result<NonlinearLead> {
    if df3 < 1 {
        return Err(Error::InvalidBasis("df3 must be at least 1".into()));
    }
    let block = dlm_block(name, x, lags)?;
    let mean = block.column(0);
    let (spline, spline_cols) = smooth_term(name, &BasisSpec::natural(df3), &mean, fit_rows)?;
    let deviations = (lags.len() > 1).then(|| {
        let cols: Vec<Vec<Option<f64>>> = (1..block.ncols()).map(|j| block.column(j)).collect();
        TermColumns::from_columns(&format!("{name}:dev"), block.labels[1..].to_vec(), &cols)
    });
    Ok(NonlinearLead {
        spline,
        spline_cols,
        deviations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub exposure: f64,
    pub log_rr: f64,
    pub se: f64,
    pub rr: f64,
    pub lo95: f64,
    pub hi95: f64,
}

impl CurvePoint {
    pub fn new(exposure: f64, log_rr: f64, se: f64) -> Self {
        Self {
            exposure,
            log_rr,
            se,
            rr: log_rr.exp(),
            lo95: (log_rr - 1.96 * se).exp(),
            hi95: (log_rr + 1.96 * se).exp(),
        }
    }
}

fn term_block(fit: &FitResult, term: &str, expected: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let span = fit
        .term(term)
        .ok_or_else(|| Error::InvalidArgument(format!("fit has no term `{term}`")))?;
    if span.len != expected {
        return Err(Error::DimensionMismatch(format!(
            "term `{term}` has {} columns, basis has {expected}",
            span.len
        )));
    }
    let beta = fit.beta.rows(span.start, span.len).into_owned();
    let cov = fit.cov.view((span.start, span.start), (span.len, span.len)).into_owned();
    Ok((beta, cov))
}

/// Relative-risk curve of a spline term in the exposure, against `reference`.
pub fn risk_curve(fit: &FitResult, term: &str, spline: &SmoothTerm, grid: &[f64], reference: f64) -> Result<Vec<CurvePoint>> {
    let (beta, cov) = term_block(fit, term, spline.smoother.ncols())?;
    let at = spline.smoother.eval(grid);
    let r = spline.smoother.eval(&[reference]);
    Ok(grid
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            if x == reference {
                return CurvePoint::new(x, 0.0, 0.0);
            }
            let d = (at.row(i) - r.row(0)).transpose();
            let lr = d.dot(&beta);
            let var = (d.transpose() * &cov * &d)[(0, 0)];
            CurvePoint::new(x, lr, var.max(0.0).sqrt())
        })
        .collect())
}

/// Cross-basis with a linear exposure dimension and a basis over lags
/// `0..=max_lag`: column `m` is `Σ_l x(t − l) · B_m(l)`.
#[derive(Debug, Clone)]
pub struct CrossBasis {
    /// `(max_lag + 1) × v_l`, row `l` = lag-basis functions at lag `l`.
    pub lag_basis: DMatrix<f64>,
    pub max_lag: usize,
    pub term: TermColumns,
    pub reference: f64,
}

impl CrossBasis {
    pub fn ncols(&self) -> usize {
        self.lag_basis.ncols()
    }

    /// `Ī_m = Σ_l B_m(l)`.
    pub fn lag_sums(&self) -> DVector<f64> {
        DVector::from_iterator(self.ncols(), (0..self.ncols()).map(|m| self.lag_basis.column(m).sum()))
    }
}

/// B-spline lag basis on the integer lags `0..=max_lag` (boundary at the
/// ends, interior knots at quantiles of the lag grid). The degree is capped
/// at `df − 1`, so `df = 1` gives the constant basis.
pub fn lag_basis(max_lag: usize, df: usize) -> Result<DMatrix<f64>> {
    if max_lag == 0 {
        return Ok(DMatrix::from_element(1, 1, 1.0));
    }
    let degree = 3.min(df.saturating_sub(1));
    let lags: Vec<f64> = (0..=max_lag).map(|l| l as f64).collect();
    let spec = BasisSpec::bspline(df, degree).with_boundary(0.0, max_lag as f64);
    let s = BSplineSmoother::fit(&lags, &spec)?;
    Ok(s.eval(&lags))
}

pub fn cross_basis(name: &str, x: &[Option<f64>], max_lag: usize, lag_df: usize, reference: f64) -> Result<CrossBasis> {
    let lb = lag_basis(max_lag, lag_df)?;
    cross_basis_with_lag_matrix(name, x, lb, reference)
}

pub fn cross_basis_with_lag_matrix(name: &str, x: &[Option<f64>], lag_basis: DMatrix<f64>, reference: f64) -> Result<CrossBasis> {
    let max_lag = lag_basis.nrows() - 1;
    if max_lag >= x.len() {
        return Err(Error::InvalidArgument(format!(
            "series of {} days is too short for max lag {max_lag}",
            x.len()
        )));
    }
    let v = lag_basis.ncols();
    let n = x.len();
    let mut values = DMatrix::from_element(n, v, f64::NAN);
    for t in max_lag..n {
        let window: Option<Vec<f64>> = (0..=max_lag).map(|l| x[t - l]).collect();
        if let Some(w) = window {
            for m in 0..v {
                values[(t, m)] = (0..=max_lag).map(|l| w[l] * lag_basis[(l, m)]).sum();
            }
        }
    }
    let term = TermColumns {
        name: name.to_string(),
        labels: (1..=v).map(|m| format!("{name}:cb{m}")).collect(),
        values,
    };
    Ok(CrossBasis {
        lag_basis,
        max_lag,
        term,
        reference,
    })
}

/// Overall cumulative slope `Σ_m β_m Ī_m` of log-RR per exposure unit and
/// its variance.
pub fn cumulative_slope(fit: &FitResult, cb: &CrossBasis) -> Result<(f64, f64)> {
    let (beta, cov) = term_block(fit, &cb.term.name, cb.ncols())?;
    let sums = cb.lag_sums();
    let slope = sums.dot(&beta);
    let var = (sums.transpose() * cov * &sums)[(0, 0)];
    Ok((slope, var.max(0.0)))
}

/// Overall cumulative exposure-response curve relative to `reference`,
/// summed over all lags.
pub fn cumulative_effect(fit: &FitResult, cb: &CrossBasis, grid: &[f64], reference: f64) -> Result<Vec<CurvePoint>> {
    let (slope, var) = cumulative_slope(fit, cb)?;
    let sd = var.sqrt();
    Ok(grid
        .iter()
        .map(|&x| {
            let d = x - reference;
            CurvePoint::new(x, d * slope, d.abs() * sd)
        })
        .collect())
}
