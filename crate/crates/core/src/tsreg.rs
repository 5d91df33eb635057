//! Single-basin quasipoisson regressions of daily deaths on a smooth time
//! trend, day of week, meteorology splines and a pollutant term, plus the
//! tables built from them: meteorology drop tests, lag sweeps and combined
//! estimates across basins.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::dataset::{lag_mean, BasinSeries, Field, Outcome, OzoneMetric, Pollutant};
use crate::design::{build_design, dow_term, smooth_term, SmoothTerm, TermColumns};
use crate::dlm::{cross_basis, dlm_block, nonlinear_lead, CrossBasis, LagSet};
use crate::error::{Error, Result};
use crate::glm::{coefficient_report, drop_term_test, fit, percent_report, DesignMatrix, FitOptions, FitResult};
use crate::meta::{pool, EffectEstimate, PooledEffect};

/// Exposure increment used for percent-change reports.
pub const REPORT_SCALE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LagForm {
    /// Value on the day itself.
    Current,
    /// Mean of the three previous days.
    Mean123,
}

impl LagForm {
    pub fn key(self) -> &'static str {
        match self {
            LagForm::Current => "0",
            LagForm::Mean123 => "m123",
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            LagForm::Current => "Current day 0",
            LagForm::Mean123 => "Mean of 1,2,3",
        }
    }

    pub fn input(self, values: &[Option<f64>]) -> Vec<Option<f64>> {
        match self {
            LagForm::Current => values.to_vec(),
            LagForm::Mean123 => lag_mean(values, &[1, 2, 3]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetTerm {
    pub field: Field,
    pub form: LagForm,
    pub basis: BasisSpec,
}

impl MetTerm {
    pub fn name(&self) -> String {
        format!("{}:{}", self.field.name(), self.form.key())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrendSpec {
    /// Natural spline in the day index with `df_per_year` per calendar year.
    Natural { df_per_year: usize },
    /// Thin-plate splines in day-of-year and year index.
    Seasonal { day_df: usize, year_df: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum AqTerm {
    None,
    Dlm(LagSet),
    /// Single linear column: the exposure averaged over the lag set.
    LagMean(LagSet),
    Nonlinear { lags: LagSet, df3: usize },
    CrossBasis { max_lag: usize, lag_df: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub outcome: Outcome,
    pub trend: TrendSpec,
    pub dow: bool,
    pub met: Vec<MetTerm>,
    /// When false, relative-humidity terms are left out of the design; the
    /// row set still requires them so the two variants share rows.
    pub include_rh: bool,
    pub aq: AqTerm,
    pub pollutant: Pollutant,
    pub ozone_metric: OzoneMetric,
    /// Exposure value at which risk curves equal 1.
    pub reference: Option<f64>,
}

pub const MET_FIELDS: [Field; 3] = [Field::Tmax, Field::Tmin, Field::RhMax];

impl Default for ModelSpec {
    fn default() -> Self {
        Self::with_dfs(7, 6, 6)
    }
}

impl ModelSpec {
    /// Natural-spline trend with `df0` per year, meteorology splines with
    /// `df1` (current day) and `df2` (mean of lags 1–3), DOW, 65+ deaths.
    pub fn with_dfs(df0: usize, df1: usize, df2: usize) -> Self {
        let met = MET_FIELDS
            .iter()
            .flat_map(|&f| {
                [
                    MetTerm {
                        field: f,
                        form: LagForm::Current,
                        basis: BasisSpec::natural(df1),
                    },
                    MetTerm {
                        field: f,
                        form: LagForm::Mean123,
                        basis: BasisSpec::natural(df2),
                    },
                ]
            })
            .collect();
        Self {
            outcome: Outcome::Ac65p,
            trend: TrendSpec::Natural { df_per_year: df0 },
            dow: true,
            met,
            include_rh: true,
            aq: AqTerm::None,
            pollutant: Pollutant::Ozone,
            ozone_metric: OzoneMetric::default(),
            reference: None,
        }
    }

    /// Sensitivity presets for `(df0, df1, df2)`.
    pub const PRESETS: [(usize, usize, usize); 4] = [(7, 6, 6), (10, 6, 6), (7, 3, 3), (10, 3, 3)];

    /// Distributed-lag non-linear model: cross-basis over lags 0–6, thin-plate
    /// meteorology terms and a thin-plate seasonal trend, no DOW.
    pub fn dlnm(outcome: Outcome, pollutant: Pollutant) -> Self {
        let met = MET_FIELDS
            .iter()
            .flat_map(|&f| {
                [LagForm::Current, LagForm::Mean123].map(|form| MetTerm {
                    field: f,
                    form,
                    basis: BasisSpec::tprs(6),
                })
            })
            .collect();
        Self {
            outcome,
            trend: TrendSpec::Seasonal { day_df: 8, year_df: 4 },
            dow: false,
            met,
            include_rh: true,
            aq: AqTerm::CrossBasis { max_lag: 6, lag_df: 4 },
            pollutant,
            ozone_metric: OzoneMetric::default(),
            reference: Some(pollutant.reference()),
        }
    }

    pub fn with_aq(mut self, aq: AqTerm) -> Self {
        self.aq = aq;
        self
    }

    pub fn with_pollutant(mut self, p: Pollutant) -> Self {
        self.pollutant = p;
        self
    }

    pub fn with_rh(mut self, include: bool) -> Self {
        self.include_rh = include;
        self
    }

    pub fn reference_value(&self) -> f64 {
        self.reference.unwrap_or_else(|| self.pollutant.reference())
    }

    pub fn aq_name(&self) -> &'static str {
        self.pollutant.key()
    }

    pub fn validate(&self) -> Result<()> {
        match self.trend {
            TrendSpec::Natural { df_per_year } if !(1..=20).contains(&df_per_year) => {
                return Err(Error::InvalidArgument(format!("df0 = {df_per_year} outside [1, 20]")));
            }
            TrendSpec::Seasonal { day_df, year_df } if day_df < 2 || year_df < 2 => {
                return Err(Error::InvalidArgument("seasonal trend dfs must be at least 2".into()));
            }
            _ => {}
        }
        for m in &self.met {
            if !MET_FIELDS.contains(&m.field) {
                return Err(Error::InvalidArgument(format!("`{}` is not a meteorology field", m.field)));
            }
            if !(1..=10).contains(&m.basis.df) {
                return Err(Error::InvalidArgument(format!("{}: df {} outside [1, 10]", m.name(), m.basis.df)));
            }
            m.basis.validate()?;
        }
        let mut names = BTreeSet::new();
        for m in &self.met {
            if !names.insert(m.name()) {
                return Err(Error::InvalidArgument(format!("duplicate term {}", m.name())));
            }
        }
        if let AqTerm::Nonlinear { df3: 0, .. } = self.aq {
            return Err(Error::InvalidBasis("df3 must be at least 1".into()));
        }
        Ok(())
    }

    /// Meteorology terms that enter the design.
    pub fn active_met(&self) -> impl Iterator<Item = &MetTerm> {
        self.met.iter().filter(|m| self.include_rh || m.field != Field::RhMax)
    }
}

#[derive(Debug, Clone)]
pub enum AqParts {
    None,
    Linear,
    Nonlinear { spline: SmoothTerm },
    CrossBasis(CrossBasis),
}

#[derive(Debug, Clone)]
pub struct Assembled {
    pub design: DesignMatrix,
    pub aq: AqParts,
    pub smoothers: Vec<(String, SmoothTerm)>,
}

fn distinct_years(series: &BasinSeries, rows: &[usize]) -> usize {
    let years = series.year_index();
    rows.iter().map(|&t| years[t]).collect::<BTreeSet<_>>().len()
}

/// Build the design for `spec`: intercept, pollutant block, trend, DOW and
/// meteorology splines, on the days where every referenced input is present.
pub fn assemble(series: &BasinSeries, spec: &ModelSpec) -> Result<Assembled> {
    spec.validate()?;
    let n = series.len();
    let key = spec.aq_name();
    let x = series.values(spec.pollutant.field(spec.ozone_metric));

    let met_inputs: Vec<(&MetTerm, Vec<Option<f64>>)> =
        spec.met.iter().map(|m| (m, m.form.input(&series.values(m.field)))).collect();
    let aq_rows: Option<TermColumns> = match &spec.aq {
        AqTerm::None => None,
        AqTerm::Dlm(l) | AqTerm::LagMean(l) | AqTerm::Nonlinear { lags: l, .. } => Some(dlm_block(key, &x, l)?),
        AqTerm::CrossBasis { max_lag, lag_df } => {
            Some(cross_basis(key, &x, *max_lag, *lag_df, spec.reference_value())?.term)
        }
    };
    let mut rows: Vec<usize> = (0..n).filter(|&t| met_inputs.iter().all(|(_, v)| v[t].is_some())).collect();
    if let Some(b) = &aq_rows {
        rows.retain(|&t| b.is_defined(t));
    }
    if rows.is_empty() {
        return Err(Error::InsufficientData(format!("{}: no complete rows", series.basin())));
    }

    let mut terms: Vec<TermColumns> = Vec::new();
    let mut smoothers = Vec::new();
    let aq = match &spec.aq {
        AqTerm::None => AqParts::None,
        AqTerm::Dlm(_) => {
            terms.push(aq_rows.unwrap());
            AqParts::Linear
        }
        AqTerm::LagMean(_) => {
            let b = aq_rows.unwrap();
            terms.push(TermColumns::from_columns(key, vec![b.labels[0].clone()], &[b.column(0)]));
            AqParts::Linear
        }
        AqTerm::Nonlinear { lags, df3 } => {
            let nl = nonlinear_lead(key, &x, lags, *df3, &rows)?;
            terms.push(nl.spline_cols);
            if let Some(d) = nl.deviations {
                terms.push(d);
            }
            AqParts::Nonlinear { spline: nl.spline }
        }
        AqTerm::CrossBasis { max_lag, lag_df } => {
            let cb = cross_basis(key, &x, *max_lag, *lag_df, spec.reference_value())?;
            terms.push(cb.term.clone());
            AqParts::CrossBasis(cb)
        }
    };

    match spec.trend {
        TrendSpec::Natural { df_per_year } => {
            let df = distinct_years(series, &rows) * df_per_year;
            let t: Vec<Option<f64>> = (0..n).map(|i| Some(i as f64)).collect();
            let (s, c) = smooth_term("trend", &BasisSpec::natural(df), &t, &rows)?;
            smoothers.push(("trend".to_string(), s));
            terms.push(c);
        }
        TrendSpec::Seasonal { day_df, year_df } => {
            let k: Vec<Option<f64>> = series.day_of_year().iter().map(|&d| Some(d as f64)).collect();
            let j: Vec<Option<f64>> = series.year_index().iter().map(|&y| Some(y as f64)).collect();
            let (s, c) = smooth_term("doy", &BasisSpec::tprs(day_df), &k, &rows)?;
            smoothers.push(("doy".to_string(), s));
            terms.push(c);
            let (s, c) = smooth_term("year", &BasisSpec::tprs(year_df), &j, &rows)?;
            smoothers.push(("year".to_string(), s));
            terms.push(c);
        }
    }
    if spec.dow {
        terms.push(dow_term(&series.weekdays()));
    }
    for (m, input) in &met_inputs {
        if !spec.include_rh && m.field == Field::RhMax {
            continue;
        }
        let (s, c) = smooth_term(&m.name(), &m.basis, input, &rows)?;
        smoothers.push((m.name(), s));
        terms.push(c);
    }
    let refs: Vec<&TermColumns> = terms.iter().collect();
    let response = series.response(spec.outcome);
    let design = build_design(&response, &refs, &rows, &series.dates())?;
    Ok(Assembled { design, aq, smoothers })
}

pub fn assemble_and_fit(series: &BasinSeries, spec: &ModelSpec, opts: &FitOptions) -> Result<(Assembled, FitResult)> {
    let a = assemble(series, spec)?;
    let f = fit(&a.design, opts)?;
    Ok((a, f))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetRow {
    pub variable: String,
    pub lags: String,
    pub term: String,
    pub f: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Drop each active meteorology term in turn from the full model.
pub fn met_significance_table(series: &BasinSeries, spec: &ModelSpec, opts: &FitOptions) -> Result<(FitResult, Vec<MetRow>)> {
    if spec.aq != AqTerm::None {
        return Err(Error::InvalidArgument("meteorology table is fitted without a pollutant term".into()));
    }
    let (a, full) = assemble_and_fit(series, spec, opts)?;
    let terms: Vec<MetTerm> = spec.active_met().cloned().collect();
    let rows = terms
        .par_iter()
        .map(|m| {
            let reduced = fit(&a.design.without_term(&m.name())?, opts)?;
            let t = drop_term_test(&full, &reduced)?;
            Ok(MetRow {
                variable: m.field.name().to_string(),
                lags: m.form.describe().to_string(),
                term: m.name(),
                f: t.f,
                df: t.df_num,
                p_value: t.p_value,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((full, rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lags: String,
    pub rh: bool,
    pub estimate: f64,
    pub se: f64,
    pub t: f64,
    pub p_value: f64,
    pub dispersion: f64,
    pub n: usize,
}

/// One linear DLM fit per `(lag set, rh flag)`; estimates are percent change
/// per 10 exposure units.
pub fn lag_sweep(
    series: &BasinSeries,
    spec: &ModelSpec,
    pollutant: Pollutant,
    cells: &[(LagSet, bool)],
    opts: &FitOptions,
) -> Result<Vec<SweepRow>> {
    cells
        .par_iter()
        .map(|(lags, rh)| {
            let s = spec.clone().with_pollutant(pollutant).with_rh(*rh).with_aq(AqTerm::Dlm(lags.clone()));
            let (_, f) = assemble_and_fit(series, &s, opts)?;
            let r = coefficient_report(&f, s.aq_name(), REPORT_SCALE)?;
            Ok(SweepRow {
                lags: lags.to_string(),
                rh: *rh,
                estimate: r.estimate_pct,
                se: r.se_pct,
                t: r.t,
                p_value: r.p_value,
                dispersion: f.dispersion,
                n: f.n,
            })
        })
        .collect()
}

fn ls(l: &[usize]) -> LagSet {
    LagSet::new(l.to_vec()).expect("valid lag set")
}

/// Single-lag, pair, triple and cumulative lag sets swept in the
/// single-pollutant tables.
pub fn standard_lag_sets() -> Vec<LagSet> {
    let mut v = vec![ls(&[0]), ls(&[1]), ls(&[2]), ls(&[0, 1]), ls(&[1, 2])];
    v.extend((2..=6).map(LagSet::through));
    v
}

/// The analyses that can be produced as tables, numbered 1–7.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TablePlan {
    Met { basin: crate::dataset::BasinId },
    Sweep {
        basin: crate::dataset::BasinId,
        pollutant: Pollutant,
        cells: Vec<(LagSet, bool)>,
    },
    Combined { cells: Vec<(Pollutant, LagSet)> },
}

pub fn table_plan(table: u8) -> Result<TablePlan> {
    use crate::dataset::BasinId::{SanFranciscoBay as SFB, SouthCoast as SC};
    let yes = |v: Vec<LagSet>| v.into_iter().map(|l| (l, true)).collect::<Vec<_>>();
    Ok(match table {
        1 => TablePlan::Met { basin: SC },
        2 => TablePlan::Sweep {
            basin: SC,
            pollutant: Pollutant::Ozone,
            cells: yes(standard_lag_sets()),
        },
        3 => TablePlan::Sweep {
            basin: SC,
            pollutant: Pollutant::Pm25,
            cells: yes(standard_lag_sets()),
        },
        4 => TablePlan::Met { basin: SFB },
        5 => {
            let mut cells = yes(standard_lag_sets());
            cells.push((ls(&[0]), false));
            cells.push((ls(&[0, 1]), false));
            TablePlan::Sweep {
                basin: SFB,
                pollutant: Pollutant::Ozone,
                cells,
            }
        }
        6 => {
            let mut cells = yes(standard_lag_sets());
            cells.extend((3..=6).map(|m| (LagSet::through(m), false)));
            TablePlan::Sweep {
                basin: SFB,
                pollutant: Pollutant::Pm25,
                cells,
            }
        }
        7 => TablePlan::Combined {
            cells: vec![
                (Pollutant::Ozone, ls(&[0, 1])),
                (Pollutant::Ozone, ls(&[0, 1, 2])),
                (Pollutant::Ozone, LagSet::through(3)),
                (Pollutant::Pm25, ls(&[0, 1])),
                (Pollutant::Pm25, LagSet::through(3)),
                (Pollutant::Pm25, LagSet::through(5)),
            ],
        },
        other => return Err(Error::InvalidArgument(format!("no table {other}; expected 1-7"))),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedRow {
    pub pollutant: Pollutant,
    pub lags: String,
    pub estimate: f64,
    pub se: f64,
    pub t: f64,
    pub p_value: f64,
    pub pooled: PooledEffect,
}

/// Fit the same DLM in every basin and pool the lead coefficients.
pub fn combined_table(
    basins: &[BasinSeries],
    spec: &ModelSpec,
    cells: &[(Pollutant, LagSet)],
    opts: &FitOptions,
) -> Result<Vec<CombinedRow>> {
    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..basins.len()).map(move |b| (c, b))).collect();
    let fits: Vec<EffectEstimate> = jobs
        .par_iter()
        .map(|&(c, b)| {
            let (pollutant, lags) = &cells[c];
            let s = spec.clone().with_pollutant(*pollutant).with_aq(AqTerm::Dlm(lags.clone()));
            let (_, f) = assemble_and_fit(&basins[b], &s, opts)?;
            let j = f.term(s.aq_name()).expect("pollutant term").start;
            Ok(EffectEstimate::new(basins[b].basin().code(), f.beta[j], f.cov[(j, j)]))
        })
        .collect::<Result<Vec<_>>>()?;
    cells
        .iter()
        .enumerate()
        .map(|(c, (pollutant, lags))| {
            let est = &fits[c * basins.len()..(c + 1) * basins.len()];
            let pooled = pool(est)?;
            let r = percent_report(pooled.theta_hat, pooled.se, REPORT_SCALE);
            Ok(CombinedRow {
                pollutant: *pollutant,
                lags: lags.to_string(),
                estimate: r.estimate_pct,
                se: r.se_pct,
                t: r.t,
                p_value: r.p_value,
                pooled,
            })
        })
        .collect()
}

/// Rows of text cells with a header, written as CSV or aligned text.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TextTable {
    pub title: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

fn fmt_p(p: f64) -> String {
    if p < 1e-3 {
        format!("{p:.2e}")
    } else {
        format!("{p:.3}")
    }
}

impl TextTable {
    pub fn met(title: &str, rows: &[MetRow]) -> Self {
        Self {
            title: title.into(),
            headers: ["Variable", "Lags", "F", "df", "p-value"].map(String::from).to_vec(),
            rows: rows
                .iter()
                .map(|r| vec![r.variable.clone(), r.lags.clone(), format!("{:.3}", r.f), r.df.to_string(), fmt_p(r.p_value)])
                .collect(),
        }
    }

    pub fn sweep(title: &str, rows: &[SweepRow]) -> Self {
        Self {
            title: title.into(),
            headers: ["Lags Included", "RH included?", "Estimate", "SE", "t-value", "p-value", "dispersion", "n"]
                .map(String::from)
                .to_vec(),
            rows: rows
                .iter()
                .map(|r| {
                    vec![
                        r.lags.clone(),
                        if r.rh { "yes" } else { "no" }.into(),
                        format!("{:.4}", r.estimate),
                        format!("{:.4}", r.se),
                        format!("{:.2}", r.t),
                        fmt_p(r.p_value),
                        format!("{:.3}", r.dispersion),
                        r.n.to_string(),
                    ]
                })
                .collect(),
        }
    }

    pub fn combined(title: &str, rows: &[CombinedRow]) -> Self {
        Self {
            title: title.into(),
            headers: ["Variable", "Lags", "Estimate", "SE", "t-value", "p-value", "sigma2"]
                .map(String::from)
                .to_vec(),
            rows: rows
                .iter()
                .map(|r| {
                    vec![
                        r.pollutant.to_string(),
                        r.lags.clone(),
                        format!("{:.4}", r.estimate),
                        format!("{:.4}", r.se),
                        format!("{:.2}", r.t),
                        fmt_p(r.p_value),
                        format!("{:.3e}", r.pooled.sigma2),
                    ]
                })
                .collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.headers).map_err(csv_err)?;
        for r in &self.rows {
            out.write_record(r).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let ncol = self.headers.len();
        let widths: Vec<usize> = (0..ncol)
            .map(|j| {
                self.rows
                    .iter()
                    .map(|r| r[j].len())
                    .chain([self.headers[j].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut s = String::new();
        if !self.title.is_empty() {
            let _ = writeln!(s, "{}", self.title);
        }
        let line = |cells: &[String]| -> String {
            cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(j, (c, w))| if j == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect::<Vec<_>>()
                .join("  ")
        };
        let _ = writeln!(s, "{}", line(&self.headers));
        let _ = writeln!(s, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (ncol.saturating_sub(1))));
        for r in &self.rows {
            let _ = writeln!(s, "{}", line(r));
        }
        s
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
