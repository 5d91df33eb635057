//! Regression bases: B-splines, natural cubic splines, low-rank thin-plate
//! regression splines and the day-of-week factor.
//!
//! Every smoother is *fitted* on a set of covariate values (which fixes its
//! knots) and can afterwards be evaluated at arbitrary points, so training
//! and hold-out rows share one basis.

use chrono::Weekday;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{null_space, quantile_sorted};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BasisKind {
    NaturalSpline,
    Tprs,
    BSpline,
    Factor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub kind: BasisKind,
    pub df: usize,
    /// Interior knots; placed at quantiles when absent.
    pub knots: Option<Vec<f64>>,
    pub boundary: Option<(f64, f64)>,
    /// Polynomial degree (B-splines only).
    pub degree: usize,
}

impl BasisSpec {
    pub fn natural(df: usize) -> Self {
        Self {
            kind: BasisKind::NaturalSpline,
            df,
            knots: None,
            boundary: None,
            degree: 3,
        }
    }

    pub fn tprs(df: usize) -> Self {
        Self {
            kind: BasisKind::Tprs,
            ..Self::natural(df)
        }
    }

    pub fn bspline(df: usize, degree: usize) -> Self {
        Self {
            kind: BasisKind::BSpline,
            degree,
            ..Self::natural(df)
        }
    }

    pub fn factor() -> Self {
        Self {
            kind: BasisKind::Factor,
            df: 6,
            ..Self::natural(6)
        }
    }

    pub fn with_boundary(mut self, lo: f64, hi: f64) -> Self {
        self.boundary = Some((lo, hi));
        self
    }

    pub fn with_knots(mut self, knots: Vec<f64>) -> Self {
        self.knots = Some(knots);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.df < 1 {
            return Err(Error::InvalidBasis("df must be at least 1".into()));
        }
        if self.kind == BasisKind::BSpline && self.df < self.degree {
            return Err(Error::InvalidBasis(format!(
                "B-spline df {} is below degree {}",
                self.df, self.degree
            )));
        }
        if let Some(k) = &self.knots {
            if k.windows(2).any(|w| w[1] <= w[0]) || k.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidBasis("explicit knots must be finite and strictly increasing".into()));
            }
        }
        if let Some((lo, hi)) = self.boundary {
            if !(lo < hi) {
                return Err(Error::InvalidBasis(format!("boundary ({lo}, {hi}) is empty")));
            }
        }
        Ok(())
    }
}

/// Evaluated basis: `n × df` columns plus labels.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrix {
    pub columns: DMatrix<f64>,
    pub spec: BasisSpec,
    pub labels: Vec<String>,
}

impl BasisMatrix {
    pub fn ncols(&self) -> usize {
        self.columns.ncols()
    }
}

// ---------------------------------------------------------------------------
// B-splines

/// B-spline basis on an augmented knot vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BSplineBasis {
    knots: Vec<f64>,
    order: usize,
}

impl BSplineBasis {
    /// `interior` knots with each boundary knot repeated `order` times.
    pub fn clamped(lo: f64, hi: f64, interior: &[f64], order: usize) -> Self {
        let mut knots = vec![lo; order];
        knots.extend_from_slice(interior);
        knots.extend(std::iter::repeat_n(hi, order));
        Self { knots, order }
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.knots.len() - self.order
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Knot interval `s` with `t[s] <= x < t[s+1]`, clamped to the first and
    /// last non-degenerate intervals.
    fn span(&self, x: f64, order: usize) -> usize {
        let t = &self.knots;
        let lo = order - 1;
        let hi = t.len() - order - 1;
        let mut last = hi;
        while last > lo && t[last] >= t[last + 1] {
            last -= 1;
        }
        if x >= t[last + 1] {
            return last;
        }
        let mut s = lo;
        while s < last && t[s] >= t[s + 1] {
            s += 1;
        }
        while s < last && t[s + 1] <= x {
            s += 1;
        }
        s
    }

    /// All basis values of the given `order` on this knot vector at `x`.
    fn values_of_order(&self, x: f64, order: usize) -> Vec<f64> {
        let t = &self.knots;
        let len = t.len() - order;
        let mut out = vec![0.0; len];
        if order == 1 {
            let s = self.span(x, 1);
            out[s] = 1.0;
            return out;
        }
        let s = self.span(x, order);
        let mut n = vec![0.0; order];
        let mut left = vec![0.0; order];
        let mut right = vec![0.0; order];
        n[0] = 1.0;
        for j in 1..order {
            left[j] = x - t[s + 1 - j];
            right[j] = t[s + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom == 0.0 { 0.0 } else { n[r] / denom };
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        for (r, v) in n.into_iter().enumerate() {
            out[s + 1 - order + r] = v;
        }
        out
    }

    /// Basis values (`deriv == 0`) or derivatives at `x`.
    pub fn eval(&self, x: f64, deriv: usize) -> Vec<f64> {
        let k = self.order;
        if deriv >= k {
            return vec![0.0; self.len()];
        }
        let t = &self.knots;
        let mut v = self.values_of_order(x, k - deriv);
        for q in (k - deriv + 1)..=k {
            let len = t.len() - q;
            let mut w = vec![0.0; len];
            for (i, wi) in w.iter_mut().enumerate() {
                let d1 = t[i + q - 1] - t[i];
                let d2 = t[i + q] - t[i + 1];
                let a = if d1 > 0.0 { v[i] / d1 } else { 0.0 };
                let b = if d2 > 0.0 { v[i + 1] / d2 } else { 0.0 };
                *wi = (q - 1) as f64 * (a - b);
            }
            v = w;
        }
        v
    }
}

fn sorted_finite(x: &[f64]) -> Result<Vec<f64>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("basis covariate".into()));
    }
    let mut s = x.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    Ok(s)
}

fn distinct(sorted: &[f64]) -> Vec<f64> {
    let mut u = sorted.to_vec();
    u.dedup();
    u
}

/// `count` interior knots at equally spaced quantiles of `sorted`, falling
/// back to quantiles of the distinct values when ties collapse knots.
fn quantile_knots(sorted: &[f64], count: usize, lo: f64, hi: f64) -> Vec<f64> {
    let probs: Vec<f64> = (1..=count).map(|i| i as f64 / (count + 1) as f64).collect();
    let pick = |data: &[f64]| -> Vec<f64> { probs.iter().map(|&p| quantile_sorted(data, p)).collect() };
    let good = |k: &[f64]| {
        k.windows(2).all(|w| w[1] > w[0]) && k.first().is_none_or(|&a| a > lo) && k.last().is_none_or(|&b| b < hi)
    };
    let k = pick(sorted);
    if good(&k) {
        return k;
    }
    let inner: Vec<f64> = distinct(sorted).into_iter().filter(|&v| v > lo && v < hi).collect();
    if inner.len() >= count {
        let k = pick(&inner);
        if good(&k) {
            return k;
        }
    }
    // evenly spaced as a last resort
    (1..=count).map(|i| lo + (hi - lo) * i as f64 / (count + 1) as f64).collect()
}

/// B-spline regression basis, intercept included, so the columns form a
/// partition of unity on the boundary interval. When `df == degree` the
/// basis has no interior knots and its first function is dropped instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BSplineSmoother {
    basis: BSplineBasis,
    drop_first: bool,
}

impl BSplineSmoother {
    pub fn fit(x: &[f64], spec: &BasisSpec) -> Result<Self> {
        spec.validate()?;
        let order = spec.degree + 1;
        let sorted = sorted_finite(x)?;
        let (lo, hi) = match spec.boundary {
            Some(b) => b,
            None => (
                *sorted.first().ok_or_else(|| Error::InsufficientData("empty covariate".into()))?,
                *sorted.last().unwrap(),
            ),
        };
        if !(lo < hi) {
            return Err(Error::InvalidBasis("degenerate covariate range".into()));
        }
        let drop_first = spec.df < order;
        let n_interior = if drop_first { 0 } else { spec.df - order };
        let interior = match &spec.knots {
            Some(k) => {
                if k.len() != n_interior {
                    return Err(Error::InvalidBasis(format!(
                        "{} explicit knots given, df {} needs {n_interior}",
                        k.len(),
                        spec.df
                    )));
                }
                k.clone()
            }
            None => quantile_knots(&sorted, n_interior, lo, hi),
        };
        Ok(Self {
            basis: BSplineBasis::clamped(lo, hi, &interior, order),
            drop_first,
        })
    }

    pub fn basis(&self) -> &BSplineBasis {
        &self.basis
    }

    pub fn ncols(&self) -> usize {
        self.basis.len() - usize::from(self.drop_first)
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        let skip = usize::from(self.drop_first);
        let mut m = DMatrix::zeros(x.len(), self.ncols());
        for (i, &xi) in x.iter().enumerate() {
            let v = self.basis.eval(xi, 0);
            for j in 0..self.ncols() {
                m[(i, j)] = v[j + skip];
            }
        }
        m
    }
}

pub fn bspline(x: &[f64], df: usize, degree: usize) -> Result<BasisMatrix> {
    let spec = BasisSpec::bspline(df, degree);
    let s = BSplineSmoother::fit(x, &spec)?;
    Ok(BasisMatrix {
        columns: s.eval(x),
        labels: (1..=s.ncols()).map(|i| format!("bs{i}")).collect(),
        spec,
    })
}

// ---------------------------------------------------------------------------
// Natural cubic splines

/// Natural cubic spline basis without intercept: cubic B-splines with the
/// second derivative constrained to zero at both boundary knots and linear
/// continuation outside them.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalSpline {
    basis: BSplineBasis,
    lo: f64,
    hi: f64,
    projection: DMatrix<f64>,
}

impl NaturalSpline {
    pub fn fit(x: &[f64], spec: &BasisSpec) -> Result<Self> {
        spec.validate()?;
        let sorted = sorted_finite(x)?;
        let uniq = distinct(&sorted);
        if uniq.len() < spec.df + 1 {
            return Err(Error::InsufficientData(format!(
                "natural spline with df {} needs at least {} distinct values, got {}",
                spec.df,
                spec.df + 1,
                uniq.len()
            )));
        }
        let (lo, hi) = spec.boundary.unwrap_or((sorted[0], *sorted.last().unwrap()));
        let n_interior = spec.df - 1;
        let interior = match &spec.knots {
            Some(k) if k.len() == n_interior => k.clone(),
            Some(k) => {
                return Err(Error::InvalidBasis(format!(
                    "{} explicit knots given, df {} needs {n_interior}",
                    k.len(),
                    spec.df
                )))
            }
            None => {
                let inside: Vec<f64> = sorted.iter().copied().filter(|&v| v >= lo && v <= hi).collect();
                quantile_knots(&inside, n_interior, lo, hi)
            }
        };
        let basis = BSplineBasis::clamped(lo, hi, &interior, 4);
        let m = basis.len();
        let d2lo = basis.eval(lo, 2);
        let d2hi = basis.eval(hi, 2);
        let c = DMatrix::from_fn(2, m - 1, |r, j| if r == 0 { d2lo[j + 1] } else { d2hi[j + 1] });
        let projection = null_space(&c);
        debug_assert_eq!(projection.ncols(), spec.df);
        Ok(Self {
            basis,
            lo,
            hi,
            projection,
        })
    }

    pub fn ncols(&self) -> usize {
        self.projection.ncols()
    }

    pub fn boundary(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    fn raw_row(&self, x: f64) -> Vec<f64> {
        if x < self.lo || x > self.hi {
            let b = if x < self.lo { self.lo } else { self.hi };
            let v = self.basis.eval(b, 0);
            let d = self.basis.eval(b, 1);
            v.iter().zip(&d).map(|(v, d)| v + (x - b) * d).collect()
        } else {
            self.basis.eval(x, 0)
        }
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        let m = self.basis.len();
        let mut raw = DMatrix::zeros(x.len(), m - 1);
        for (i, &xi) in x.iter().enumerate() {
            let r = self.raw_row(xi);
            for j in 1..m {
                raw[(i, j - 1)] = r[j];
            }
        }
        raw * &self.projection
    }
}

pub fn natural_spline(x: &[f64], df: usize) -> Result<BasisMatrix> {
    let spec = BasisSpec::natural(df);
    let s = NaturalSpline::fit(x, &spec)?;
    Ok(BasisMatrix {
        columns: s.eval(x),
        labels: (1..=df).map(|i| format!("ns{i}")).collect(),
        spec,
    })
}

// ---------------------------------------------------------------------------
// Thin-plate regression splines

/// Maximum number of distinct covariate values the thin-plate kernel is built on.
pub const TPRS_MAX_KNOTS: usize = 2000;

fn thin_plate_kernel(r: f64) -> f64 {
    r.abs().powi(3) / 12.0
}

/// Low-rank one-dimensional thin-plate regression spline (second-derivative
/// penalty). The kernel matrix on the distinct covariate values is
/// eigen-decomposed, the `df + 2` eigenvectors with the largest eigenvalue
/// magnitudes are kept and constrained orthogonal to the affine null space,
/// leaving `df` wiggly directions, and the linear column is appended. The
/// constant is left to the model intercept, so there are `df + 1` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Tprs {
    knots: Vec<f64>,
    shift: f64,
    scale: f64,
    transform: DMatrix<f64>,
    col_scale: Vec<f64>,
}

impl Tprs {
    pub fn fit(x: &[f64], spec: &BasisSpec) -> Result<Self> {
        Self::fit_capped(x, spec, TPRS_MAX_KNOTS)
    }

    pub fn fit_capped(x: &[f64], spec: &BasisSpec, cap: usize) -> Result<Self> {
        spec.validate()?;
        let sorted = sorted_finite(x)?;
        let mut uniq = distinct(&sorted);
        if uniq.len() < 2 {
            return Err(Error::InvalidBasis("thin-plate spline on a constant covariate".into()));
        }
        if uniq.len() < spec.df + 2 {
            return Err(Error::InsufficientData(format!(
                "thin-plate spline with df {} needs at least {} distinct values, got {}",
                spec.df,
                spec.df + 2,
                uniq.len()
            )));
        }
        if uniq.len() > cap {
            let u = uniq.len();
            uniq = (0..cap)
                .map(|i| uniq[((i as f64) * (u - 1) as f64 / (cap - 1) as f64).round() as usize])
                .collect();
            uniq.dedup();
        }
        let shift = uniq[0];
        let scale = uniq[uniq.len() - 1] - uniq[0];
        let knots: Vec<f64> = uniq.iter().map(|v| (v - shift) / scale).collect();
        let m = knots.len();
        let k = spec.df + 2;

        let e = DMatrix::from_fn(m, m, |i, j| thin_plate_kernel(knots[i] - knots[j]));
        let uk = leading_eigenvectors(&e, k);
        let t = DMatrix::from_fn(2, m, |r, i| if r == 0 { 1.0 } else { knots[i] });
        let z = null_space(&(t * &uk));
        let transform = uk * z;
        let mut tp = Self {
            knots,
            shift,
            scale,
            transform,
            col_scale: vec![1.0; spec.df],
        };
        // unit root-mean-square wiggly columns on the fitting data
        let raw = tp.eval(x);
        for j in 0..spec.df {
            let rms = (raw.column(j).norm_squared() / x.len() as f64).sqrt();
            tp.col_scale[j] = if rms > 0.0 { rms } else { 1.0 };
        }
        Ok(tp)
    }

    pub fn ncols(&self) -> usize {
        self.transform.ncols() + 1
    }

    pub fn n_knots(&self) -> usize {
        self.knots.len()
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        let m = self.knots.len();
        let w = self.transform.ncols();
        let mut kern = DMatrix::zeros(x.len(), m);
        for (i, &xi) in x.iter().enumerate() {
            let u = (xi - self.shift) / self.scale;
            for (j, &kj) in self.knots.iter().enumerate() {
                kern[(i, j)] = thin_plate_kernel(u - kj);
            }
        }
        let wig = kern * &self.transform;
        let mut out = DMatrix::zeros(x.len(), w + 1);
        for i in 0..x.len() {
            for j in 0..w {
                out[(i, j)] = wig[(i, j)] / self.col_scale[j];
            }
            out[(i, w)] = (x[i] - self.shift) / self.scale;
        }
        out
    }
}

/// Kernel size above which the leading eigenvectors come from subspace
/// iteration instead of a full decomposition.
const DENSE_EIGEN_MAX: usize = 400;

fn sorted_by_magnitude(values: &DVector<f64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()).then(a.cmp(&b)));
    order
}

/// The `k` eigenvectors of symmetric `e` with the largest |eigenvalue|,
/// each signed so its largest-magnitude entry is positive.
fn leading_eigenvectors(e: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let m = e.nrows();
    let (vectors, order) = if m <= DENSE_EIGEN_MAX {
        let eig = SymmetricEigen::new(e.clone());
        let order = sorted_by_magnitude(&eig.eigenvalues);
        (eig.eigenvectors, order)
    } else {
        let b = (k + 10).min(m);
        let mut q = DMatrix::from_fn(m, b, |i, j| {
            ((j as f64 + 1.0) * std::f64::consts::PI * (i as f64 + 0.5) / m as f64).cos()
        });
        q = q.qr().q();
        let mut prev = vec![0.0; k];
        let mut ritz = SymmetricEigen::new(q.transpose() * e * &q);
        for _ in 0..200 {
            q = (e * &q).qr().q();
            ritz = SymmetricEigen::new(q.transpose() * e * &q);
            let order = sorted_by_magnitude(&ritz.eigenvalues);
            let top: Vec<f64> = order.iter().take(k).map(|&i| ritz.eigenvalues[i]).collect();
            let scale = top[0].abs().max(f64::MIN_POSITIVE);
            let done = top.iter().zip(&prev).all(|(a, b)| (a - b).abs() <= 1e-14 * scale);
            prev = top;
            if done {
                break;
            }
        }
        let order = sorted_by_magnitude(&ritz.eigenvalues);
        (q * ritz.eigenvectors, order)
    };
    let mut uk = DMatrix::zeros(m, k);
    for (c, &idx) in order.iter().take(k).enumerate() {
        let mut col = vectors.column(idx).into_owned();
        let imax = col.iamax();
        if col[imax] < 0.0 {
            col = -col;
        }
        uk.set_column(c, &col);
    }
    uk
}

pub fn tprs(x: &[f64], df: usize) -> Result<BasisMatrix> {
    let spec = BasisSpec::tprs(df);
    let s = Tprs::fit(x, &spec)?;
    let mut labels: Vec<String> = (1..=df).map(|i| format!("tp{i}")).collect();
    labels.push("tp_lin".into());
    Ok(BasisMatrix {
        columns: s.eval(x),
        labels,
        spec,
    })
}

// ---------------------------------------------------------------------------
// Day of week

const DOW_LEVELS: [Weekday; 6] = [
    Weekday::Mon,
    Weekday::Tue,
    Weekday::Wed,
    Weekday::Thu,
    Weekday::Fri,
    Weekday::Sat,
];

/// Six indicator columns (Monday..Saturday); Sunday is the reference level.
pub fn dow_factor(days: &[Weekday]) -> BasisMatrix {
    let columns = DMatrix::from_fn(days.len(), 6, |i, j| f64::from(u8::from(days[i] == DOW_LEVELS[j])));
    BasisMatrix {
        columns,
        spec: BasisSpec::factor(),
        labels: DOW_LEVELS.iter().map(|d| format!("dow_{d}")).collect(),
    }
}

// ---------------------------------------------------------------------------

/// A smoother fitted on one covariate, evaluable at new points.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedSmoother {
    Natural(NaturalSpline),
    Tprs(Tprs),
    BSpline(BSplineSmoother),
}

impl FittedSmoother {
    pub fn fit(x: &[f64], spec: &BasisSpec) -> Result<Self> {
        match spec.kind {
            BasisKind::NaturalSpline => Ok(Self::Natural(NaturalSpline::fit(x, spec)?)),
            BasisKind::Tprs => Ok(Self::Tprs(Tprs::fit(x, spec)?)),
            BasisKind::BSpline => Ok(Self::BSpline(BSplineSmoother::fit(x, spec)?)),
            BasisKind::Factor => Err(Error::InvalidBasis("factor bases are not smoothers".into())),
        }
    }

    pub fn ncols(&self) -> usize {
        match self {
            Self::Natural(s) => s.ncols(),
            Self::Tprs(s) => s.ncols(),
            Self::BSpline(s) => s.ncols(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        match self {
            Self::Natural(s) => s.eval(x),
            Self::Tprs(s) => s.eval(x),
            Self::BSpline(s) => s.eval(x),
        }
    }
}
