//! Quasipoisson log-link GLM fitted by iteratively reweighted least squares.

use chrono::NaiveDate;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, Normal};

use crate::error::{Error, Result};
use crate::linalg::dependent_columns;

/// Contiguous column range owned by one model term.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TermSpan {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

/// Response, covariates (intercept in column 0) and bookkeeping.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    y: DVector<f64>,
    x: DMatrix<f64>,
    labels: Vec<String>,
    terms: Vec<TermSpan>,
    rows: Vec<usize>,
    dates: Vec<NaiveDate>,
}

impl DesignMatrix {
    /// Checks `n > p`, a non-negative integer response and full column rank.
    pub fn new(
        y: DVector<f64>,
        x: DMatrix<f64>,
        labels: Vec<String>,
        terms: Vec<TermSpan>,
        rows: Vec<usize>,
        dates: Vec<NaiveDate>,
    ) -> Result<Self> {
        let (n, p) = x.shape();
        if y.len() != n || labels.len() != p || rows.len() != n || dates.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "y {} / X {n}x{p} / labels {} / rows {} / dates {}",
                y.len(),
                labels.len(),
                rows.len(),
                dates.len()
            )));
        }
        if n <= p {
            return Err(Error::InsufficientData(format!("{n} rows for {p} columns")));
        }
        if y.iter().any(|&v| !(v >= 0.0) || v.fract() != 0.0) {
            return Err(Error::InvalidArgument("response must be non-negative integer counts".into()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("design matrix".into()));
        }
        let dep = dependent_columns(&x, 1e-9);
        if !dep.is_empty() {
            return Err(Error::RankDeficient {
                columns: dep.into_iter().map(|j| labels[j].clone()).collect(),
            });
        }
        Ok(Self {
            y,
            x,
            labels,
            terms,
            rows,
            dates,
        })
    }

    /// Convenience constructor without term/row metadata (tests, simulations).
    pub fn from_parts(y: Vec<f64>, x: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        let n = y.len();
        let terms = labels
            .iter()
            .enumerate()
            .map(|(i, l)| TermSpan {
                name: l.clone(),
                start: i,
                len: 1,
            })
            .collect();
        let base = NaiveDate::from_ymd_opt(2000, 1, 1).unwrap();
        let dates = (0..n).map(|i| base + chrono::Days::new(i as u64)).collect();
        Self::new(DVector::from_vec(y), x, labels, terms, (0..n).collect(), dates)
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn terms(&self) -> &[TermSpan] {
        &self.terms
    }

    pub fn term(&self, name: &str) -> Option<&TermSpan> {
        self.terms.iter().find(|t| t.name == name)
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn nrows(&self) -> usize {
        self.x.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.x.ncols()
    }

    /// Same rows with one term's columns removed.
    pub fn without_term(&self, name: &str) -> Result<Self> {
        let span = self
            .term(name)
            .ok_or_else(|| Error::InvalidArgument(format!("no term `{name}` in design")))?
            .clone();
        let keep: Vec<usize> = (0..self.ncols())
            .filter(|&j| j < span.start || j >= span.start + span.len)
            .collect();
        let x = self.x.select_columns(&keep);
        let labels = keep.iter().map(|&j| self.labels[j].clone()).collect();
        let terms = self
            .terms
            .iter()
            .filter(|t| t.name != name)
            .map(|t| TermSpan {
                name: t.name.clone(),
                start: if t.start > span.start { t.start - span.len } else { t.start },
                len: t.len,
            })
            .collect();
        Ok(Self {
            y: self.y.clone(),
            x,
            labels,
            terms,
            rows: self.rows.clone(),
            dates: self.dates.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Relative deviance change that stops iteration.
    pub tol: f64,
    pub max_iter: usize,
    /// Fix the dispersion at 1 (plain Poisson inference).
    pub fixed_dispersion: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
            fixed_dispersion: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    #[serde(serialize_with = "ser_vec")]
    pub beta: DVector<f64>,
    /// Dispersion-scaled covariance of `beta`.
    #[serde(serialize_with = "ser_mat")]
    pub cov: DMatrix<f64>,
    pub dispersion: f64,
    pub pearson_chi2: f64,
    pub deviance: f64,
    pub null_deviance: f64,
    #[serde(skip)]
    pub fitted: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Sup-norm of the score `Xᵀ(y − μ)` at the final iterate.
    pub score_norm: f64,
    /// Deviance after each accepted iteration.
    pub trace: Vec<f64>,
    pub labels: Vec<String>,
    pub terms: Vec<TermSpan>,
    pub n: usize,
    pub p: usize,
}

fn ser_vec<S: serde::Serializer>(v: &DVector<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.iter())
}

fn ser_mat<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
    s.collect_seq(rows)
}

impl FitResult {
    pub fn se(&self) -> DVector<f64> {
        self.cov.diagonal().map(|v| v.max(0.0).sqrt())
    }

    pub fn df_residual(&self) -> usize {
        self.n - self.p
    }

    pub fn column(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn term(&self, name: &str) -> Option<&TermSpan> {
        self.terms.iter().find(|t| t.name == name)
    }

    /// Linear predictor for new rows with the same column layout.
    pub fn predict(&self, x: &DMatrix<f64>) -> DVector<f64> {
        (x * &self.beta).map(|e| e.min(EXP_CAP).exp())
    }

    pub fn to_json(&self) -> serde_json::Value {
        let se = self.se();
        serde_json::json!({
            "coefficients": self.labels.iter().zip(self.beta.iter()).zip(se.iter())
                .map(|((l, b), s)| serde_json::json!({"label": l, "estimate": b, "se": s}))
                .collect::<Vec<_>>(),
            "dispersion": self.dispersion,
            "deviance": self.deviance,
            "null_deviance": self.null_deviance,
            "n": self.n,
            "p": self.p,
            "iterations": self.iterations,
            "converged": self.converged,
            "trace": self.trace,
        })
    }
}

const EXP_CAP: f64 = 700.0;

/// Poisson deviance `2 Σ [y log(y/μ) − (y − μ)]`.
pub fn poisson_deviance(y: &DVector<f64>, mu: &DVector<f64>) -> f64 {
    2.0 * y
        .iter()
        .zip(mu.iter())
        .map(|(&y, &m)| if y > 0.0 { y * (y / m).ln() - (y - m) } else { m })
        .sum::<f64>()
}

struct WeightedSolve {
    beta: DVector<f64>,
    chol: Option<Cholesky<f64, Dyn>>,
    scale: DVector<f64>,
}

/// Solves `(XᵀWX) β = XᵀW z` with column equilibration and one step of
/// iterative refinement.
fn weighted_ls(x: &DMatrix<f64>, w: &DVector<f64>, z: &DVector<f64>) -> Option<WeightedSolve> {
    let (n, p) = x.shape();
    let mut xw = x.clone();
    for i in 0..n {
        let sw = w[i].sqrt();
        for j in 0..p {
            xw[(i, j)] *= sw;
        }
    }
    let scale = DVector::from_iterator(p, (0..p).map(|j| {
        let s = xw.column(j).norm();
        if s > 0.0 {
            s
        } else {
            1.0
        }
    }));
    for j in 0..p {
        let s = scale[j];
        xw.column_mut(j).scale_mut(1.0 / s);
    }
    let zw = DVector::from_iterator(n, (0..n).map(|i| z[i] * w[i].sqrt()));
    let xtx = xw.tr_mul(&xw);
    let chol = Cholesky::new(xtx)?;
    let rhs = xw.tr_mul(&zw);
    let mut g = chol.solve(&rhs);
    // refinement against the original least-squares residual
    let resid = &zw - &xw * &g;
    let corr = chol.solve(&xw.tr_mul(&resid));
    g += corr;
    if g.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let beta = g.component_div(&scale);
    Some(WeightedSolve {
        beta,
        chol: Some(chol),
        scale,
    })
}

fn mu_of(x: &DMatrix<f64>, beta: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let eta = x * beta;
    let mu = eta.map(|e| e.min(EXP_CAP).exp());
    (eta, mu)
}

/// Fit the quasipoisson GLM.
pub fn fit(design: &DesignMatrix, opts: &FitOptions) -> Result<FitResult> {
    let x = design.x();
    let y = design.y();
    let (n, p) = x.shape();
    let ybar = y.mean();
    let start = (ybar + if ybar == 0.0 { 0.5 } else { 0.0 }).ln();

    let mut beta = DVector::zeros(p);
    let has_intercept = (0..n).all(|i| x[(i, 0)] == 1.0);
    if has_intercept {
        beta[0] = start;
    } else {
        // no intercept column: start from μ ≡ mean(y) via the working response
        let w = DVector::from_element(n, ybar.max(0.5));
        let z = DVector::from_element(n, start);
        if let Some(s) = weighted_ls(x, &w, &z) {
            beta = s.beta;
        }
    }
    let (mut eta, mut mu) = mu_of(x, &beta);
    let mut dev = poisson_deviance(y, &mu);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut polished = false;

    while iterations < opts.max_iter {
        iterations += 1;
        let z = DVector::from_iterator(n, (0..n).map(|i| eta[i] + (y[i] - mu[i]) / mu[i]));
        let solve = weighted_ls(x, &mu, &z).ok_or_else(|| Error::RankDeficient {
            columns: design.labels().to_vec(),
        })?;
        let mut cand = solve.beta;
        let (mut ceta, mut cmu) = mu_of(x, &cand);
        let mut cdev = poisson_deviance(y, &cmu);
        let mut halvings = 0;
        while (!cdev.is_finite() || cdev > dev * (1.0 + 1e-12)) && halvings < 10 {
            cand = (&cand + &beta) * 0.5;
            (ceta, cmu) = mu_of(x, &cand);
            cdev = poisson_deviance(y, &cmu);
            halvings += 1;
        }
        let rel = (dev - cdev).abs() / (cdev.abs() + 0.1);
        beta = cand;
        eta = ceta;
        mu = cmu;
        dev = cdev;
        trace.push(dev);
        if polished {
            converged = true;
            break;
        }
        if rel < opts.tol {
            // one further Newton step from the converged iterate
            polished = true;
        }
    }
    if polished && !converged {
        converged = true;
    }

    let resid = y - &mu;
    let score = x.tr_mul(&resid);
    let score_norm = score.amax();
    let pearson_chi2: f64 = (0..n).map(|i| resid[i] * resid[i] / mu[i]).sum();
    let dispersion = if opts.fixed_dispersion {
        1.0
    } else {
        pearson_chi2 / (n - p) as f64
    };
    let ws = weighted_ls(x, &mu, &eta).ok_or_else(|| Error::RankDeficient {
        columns: design.labels().to_vec(),
    })?;
    let chol = ws.chol.unwrap();
    let inv_scaled = chol.inverse();
    let cov = DMatrix::from_fn(p, p, |i, j| inv_scaled[(i, j)] / (ws.scale[i] * ws.scale[j]) * dispersion);
    let null_mu = DVector::from_element(n, ybar);
    let null_deviance = poisson_deviance(y, &null_mu);

    let result = FitResult {
        beta,
        cov,
        dispersion,
        pearson_chi2,
        deviance: dev,
        null_deviance,
        fitted: mu,
        iterations,
        converged,
        score_norm,
        trace,
        labels: design.labels().to_vec(),
        terms: design.terms().to_vec(),
        n,
        p,
    };
    if !converged {
        return Err(Error::NonConvergence {
            iterations,
            last: Box::new(result),
        });
    }
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DropTest {
    pub f: f64,
    pub df_num: usize,
    pub df_den: usize,
    pub p_value: f64,
}

/// Quasi-likelihood F test of a reduced model nested in `full` (same rows).
pub fn drop_term_test(full: &FitResult, reduced: &FitResult) -> Result<DropTest> {
    if full.n != reduced.n {
        return Err(Error::NotNested(format!("{} vs {} rows", full.n, reduced.n)));
    }
    if reduced.p > full.p || !reduced.labels.iter().all(|l| full.labels.contains(l)) {
        return Err(Error::NotNested("reduced columns are not a subset of the full model".into()));
    }
    let df_num = full.p - reduced.p;
    let df_den = full.df_residual();
    if df_num == 0 {
        return Ok(DropTest {
            f: 0.0,
            df_num,
            df_den,
            p_value: 1.0,
        });
    }
    let f = ((reduced.deviance - full.deviance) / df_num as f64 / full.dispersion).max(0.0);
    let dist = FisherSnedecor::new(df_num as f64, df_den as f64)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(DropTest {
        f,
        df_num,
        df_den,
        p_value: dist.sf(f),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoefReport {
    /// Percent change in the mean per `scale` units of exposure.
    pub estimate_pct: f64,
    pub se_pct: f64,
    pub t: f64,
    pub p_value: f64,
}

/// Two-sided standard-normal p-value.
pub fn normal_p(t: f64) -> f64 {
    if !t.is_finite() {
        return if t.is_nan() { f64::NAN } else { 0.0 };
    }
    let n = Normal::standard();
    2.0 * n.sf(t.abs())
}

/// Percent-change report for a single coefficient `beta` with standard
/// error `se`, per `scale` units.
pub fn percent_report(beta: f64, se: f64, scale: f64) -> CoefReport {
    let g = (beta * scale).exp();
    let t = if se > 0.0 { beta / se } else if beta == 0.0 { 0.0 } else { f64::INFINITY * beta.signum() };
    CoefReport {
        estimate_pct: 100.0 * (g - 1.0),
        se_pct: 100.0 * scale * g * se,
        t,
        p_value: if se > 0.0 || beta != 0.0 { normal_p(t) } else { 1.0 },
    }
}

/// Report on the lead coefficient of `term` (a term name or a column label).
pub fn coefficient_report(fit: &FitResult, term: &str, scale: f64) -> Result<CoefReport> {
    let col = fit
        .term(term)
        .map(|t| t.start)
        .or_else(|| fit.column(term))
        .ok_or_else(|| Error::InvalidArgument(format!("unknown term `{term}`")))?;
    let se = fit.cov[(col, col)].max(0.0).sqrt();
    Ok(percent_report(fit.beta[col], se, scale))
}
