//! Moving median with a central gap, deviations from it, and partial
//! correlations among deviation series.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dependent_columns, lstsq_residuals};

/// Window of `width` days centred on the target day with the central `gap`
/// days (target included) excluded from the median.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    width: usize,
    gap: usize,
}

impl WindowSpec {
    pub fn new(width: usize, gap: usize) -> Result<Self> {
        if width % 2 == 0 || gap % 2 == 0 {
            return Err(Error::InvalidWindow(format!("{width}-{gap}: width and gap must be odd")));
        }
        if gap < 1 || width <= gap || width - gap < 2 {
            return Err(Error::InvalidWindow(format!(
                "{width}-{gap}: need width > gap >= 1 with at least 2 usable cells"
            )));
        }
        Ok(Self { width, gap })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn gap(&self) -> usize {
        self.gap
    }

    pub fn half_width(&self) -> usize {
        (self.width - 1) / 2
    }

    pub fn half_gap(&self) -> usize {
        (self.gap - 1) / 2
    }

    /// Number of window cells that feed the median.
    pub fn usable(&self) -> usize {
        self.width - self.gap
    }
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self { width: 21, gap: 5 }
    }
}

impl std::fmt::Display for WindowSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-{}", self.width, self.gap)
    }
}

impl std::str::FromStr for WindowSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (w, g) = s
            .split_once('-')
            .ok_or_else(|| Error::InvalidWindow(format!("`{s}`: expected WIDTH-GAP")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidWindow(format!("`{s}`: expected WIDTH-GAP")))
        };
        Self::new(parse(w)?, parse(g)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationSeries {
    pub values: Vec<Option<f64>>,
    pub window: WindowSpec,
    pub source: String,
}

fn median_in_place(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

/// Median of the non-gap, non-missing window cells around each day.
///
/// The first and last `(width − 1)/2` days are missing, as is any day whose
/// window has more than half its usable cells missing.
pub fn moving_median(series: &[Option<f64>], spec: WindowSpec) -> Result<Vec<Option<f64>>> {
    let n = series.len();
    if spec.width() > n {
        return Err(Error::InvalidWindow(format!(
            "window {spec} is longer than the series ({n} days)"
        )));
    }
    let h = spec.half_width();
    let g = spec.half_gap();
    let usable = spec.usable();
    let mut out = vec![None; n];
    let mut buf = Vec::with_capacity(usable);
    for t in h..n - h {
        buf.clear();
        for off in g + 1..=h {
            if let Some(v) = series[t - off] {
                buf.push(v);
            }
            if let Some(v) = series[t + off] {
                buf.push(v);
            }
        }
        let missing = usable - buf.len();
        if buf.is_empty() || 2 * missing > usable {
            continue;
        }
        out[t] = Some(median_in_place(&mut buf));
    }
    Ok(out)
}

/// Observed minus moving median.
pub fn deviations(series: &[Option<f64>], spec: WindowSpec, source: &str) -> Result<DeviationSeries> {
    let med = moving_median(series, spec)?;
    let values = series
        .iter()
        .zip(&med)
        .map(|(x, m)| Some((*x)? - (*m)?))
        .collect();
    Ok(DeviationSeries {
        values,
        window: spec,
        source: source.to_string(),
    })
}

/// Marks days whose deviation is at least `threshold` (e.g. temperature
/// spikes far above the local median).
pub fn spike_flags(dev: &DeviationSeries, threshold: f64) -> Vec<bool> {
    dev.values.iter().map(|v| matches!(v, Some(d) if *d >= threshold)).collect()
}

/// Rows where every column is present.
pub fn complete_cases(columns: &[&[Option<f64>]]) -> Vec<usize> {
    let n = columns.iter().map(|c| c.len()).min().unwrap_or(0);
    (0..n).filter(|&t| columns.iter().all(|c| c[t].is_some())).collect()
}

/// Matrix of complete-case rows (days × variables).
pub fn complete_case_matrix(columns: &[&[Option<f64>]]) -> DMatrix<f64> {
    let rows = complete_cases(columns);
    DMatrix::from_fn(rows.len(), columns.len(), |i, j| columns[j][rows[i]].unwrap())
}

fn pearson(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let n = a.len() as f64;
    let ma = a.sum() / n;
    let mb = b.sum() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    sab / (saa * sbb).sqrt()
}

/// Partial correlation of every variable pair given all remaining variables,
/// computed by regressing each member of the pair on the others (with an
/// intercept) and correlating the residuals.
///
/// `data` holds complete-case rows only; `names` label the columns for error
/// messages.
pub fn partial_correlations(data: &DMatrix<f64>, names: &[String]) -> Result<DMatrix<f64>> {
    let (n, p) = data.shape();
    if names.len() != p {
        return Err(Error::DimensionMismatch(format!("{} names for {p} variables", names.len())));
    }
    if n < p + 2 {
        return Err(Error::InsufficientData(format!(
            "{n} complete rows for {p} variables (need at least {})",
            p + 2
        )));
    }
    let mut full = DMatrix::from_element(n, p + 1, 1.0);
    full.columns_mut(1, p).copy_from(data);
    let dep = dependent_columns(&full, 1e-10);
    if !dep.is_empty() {
        return Err(Error::RankDeficient {
            columns: dep
                .iter()
                .map(|&j| if j == 0 { "intercept".to_string() } else { names[j - 1].clone() })
                .collect(),
        });
    }
    let mut out = DMatrix::identity(p, p);
    for a in 0..p {
        for b in a + 1..p {
            let mut x = DMatrix::from_element(n, p - 1, 1.0);
            let mut c = 1;
            for j in 0..p {
                if j != a && j != b {
                    x.set_column(c, &data.column(j));
                    c += 1;
                }
            }
            let ra = lstsq_residuals(&x, &data.column(a).into_owned())
                .ok_or_else(|| Error::RankDeficient { columns: vec![names[a].clone()] })?;
            let rb = lstsq_residuals(&x, &data.column(b).into_owned())
                .ok_or_else(|| Error::RankDeficient { columns: vec![names[b].clone()] })?;
            let r = pearson(&ra, &rb);
            out[(a, b)] = r;
            out[(b, a)] = r;
        }
    }
    Ok(out)
}
