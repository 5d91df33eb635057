//! Command-line flags, the optional TOML config file, and their merge into
//! a validated [`RunConfig`].

use std::fmt::Debug;
use std::path::{Path, PathBuf};

use calmort_core::movmed::WindowSpec;
use calmort_core::predgrid::{AqLevel, MetLevel};
use calmort_core::tsreg::{table_plan, ModelSpec};
use calmort_core::{BasinId, Outcome, OzoneMetric, Pollutant};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const DATA_ENV: &str = "CALMORT_DATA";

#[derive(Debug, Parser)]
#[command(name = "calmort", version, about = "Daily mortality and air-quality time-series analyses")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Panel CSV
    #[arg(long, global = true, env = DATA_ENV)]
    pub data: Option<PathBuf>,

    /// Output directory [default: out]
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Worker threads [default: all cores]
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// TOML config; its values win over conflicting flags
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Basin codes, comma separated (SC, SFB, SJV, SD, SV, SCC, MD, NCC)
    #[arg(long, global = true, value_delimiter = ',')]
    pub basin: Vec<String>,

    /// Outcome keys, comma separated (ac6574, ac75p, hl6574, hl75p, ac65p, hl65p)
    #[arg(long, global = true, value_delimiter = ',')]
    pub outcome: Vec<String>,

    /// Ozone column: max8 or avg
    #[arg(long, global = true)]
    pub ozone_metric: Option<String>,

    /// Print the fit plan without fitting
    #[arg(long, global = true)]
    pub dry_run: bool,

    /// No progress output
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the panel and report missingness
    Validate,
    /// Moving-median deviations and partial correlations
    Movmed(MovmedArgs),
    /// Regression tables 1-7
    Tsreg(TsregArgs),
    /// Cumulative exposure-response curves from the cross-basis model
    DlnmCurves(DlnmArgs),
    /// Leave-one-year-out prediction grid
    PredictGrid(GridArgs),
    /// Random-effects pooling
    Meta(MetaArgs),
    /// Summaries of a prediction-grid results file
    Report(ReportArgs),
}

#[derive(Debug, Args, Default)]
pub struct MovmedArgs {
    /// Window as WIDTH-GAP [default: 21-5]
    #[arg(long)]
    pub window: Option<String>,
    /// Temperature deviation marking a spike day [default: 15]
    #[arg(long)]
    pub spike_threshold: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct TsregArgs {
    /// Table number, 1-7
    #[arg(long)]
    pub table: Option<u8>,
    /// Trend df per year [default: 7]
    #[arg(long)]
    pub df0: Option<usize>,
    /// Current-day meteorology df [default: 6]
    #[arg(long)]
    pub df1: Option<usize>,
    /// Lag 1-3 meteorology df [default: 6]
    #[arg(long)]
    pub df2: Option<usize>,
    /// Also write the columns of this design term as CSV
    #[arg(long)]
    pub dump_basis: Option<String>,
}

#[derive(Debug, Args, Default)]
pub struct DlnmArgs {
    /// Pollutants, comma separated [default: ozone,pm25]
    #[arg(long, value_delimiter = ',')]
    pub pollutant: Vec<String>,
    /// Exposure grid points [default: 21]
    #[arg(long)]
    pub points: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct GridArgs {
    /// Hold-out years [default: every year in the data except 2000]
    #[arg(long, value_delimiter = ',')]
    pub hold_out: Vec<i32>,
    /// Air-quality levels to include [default: all seven]
    #[arg(long, value_delimiter = ',')]
    pub aq: Vec<String>,
    /// Meteorology levels to include for each of rh, tmax, tmin [default: all three]
    #[arg(long, value_delimiter = ',')]
    pub met: Vec<String>,
}

#[derive(Debug, Args, Default)]
pub struct MetaArgs {
    /// CSV with label,theta,variance; without it the combined-basin table is fitted
    #[arg(long)]
    pub estimates: Option<PathBuf>,
    /// Fix the between-basin variance instead of estimating it
    #[arg(long)]
    pub sigma2: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct ReportArgs {
    /// Results CSV [default: OUT/grid_results.csv]
    #[arg(long)]
    pub results: Option<PathBuf>,
}

/// Contents of the `--config` file. Relative paths resolve against the
/// file's directory.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub basins: Option<Vec<String>>,
    pub outcomes: Option<Vec<String>>,
    pub ozone_metric: Option<String>,
    #[serde(default)]
    pub movmed: MovmedFile,
    #[serde(default)]
    pub tsreg: TsregFile,
    #[serde(default)]
    pub dlnm: DlnmFile,
    #[serde(default)]
    pub grid: GridFile,
    #[serde(default)]
    pub meta: MetaFile,
    #[serde(default)]
    pub report: ReportFile,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MovmedFile {
    pub window: Option<String>,
    pub spike_threshold: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TsregFile {
    pub table: Option<u8>,
    pub df0: Option<usize>,
    pub df1: Option<usize>,
    pub df2: Option<usize>,
    pub dump_basis: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DlnmFile {
    pub pollutants: Option<Vec<String>>,
    pub points: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFile {
    pub hold_out_years: Option<Vec<i32>>,
    pub aq: Option<Vec<String>>,
    pub met: Option<Vec<String>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaFile {
    pub estimates: Option<PathBuf>,
    pub sigma2: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportFile {
    pub results: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: FileConfig =
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(q) = p.as_mut() {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        };
        fix(&mut cfg.data);
        fix(&mut cfg.out);
        fix(&mut cfg.meta.estimates);
        fix(&mut cfg.report.results);
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "track")]
pub enum Track {
    Validate,
    Movmed {
        window: WindowSpec,
        spike_threshold: f64,
    },
    Tsreg {
        table: u8,
        dfs: (usize, usize, usize),
        dump_basis: Option<String>,
    },
    DlnmCurves {
        pollutants: Vec<Pollutant>,
        points: usize,
    },
    PredictGrid {
        hold_out: Option<Vec<i32>>,
        aq: Vec<AqLevel>,
        met: Vec<MetLevel>,
    },
    Meta {
        #[serde(skip)]
        estimates: Option<PathBuf>,
        sigma2: Option<f64>,
    },
    Report {
        #[serde(skip)]
        results: Option<PathBuf>,
    },
}

impl Track {
    pub fn name(&self) -> &'static str {
        match self {
            Track::Validate => "validate",
            Track::Movmed { .. } => "movmed",
            Track::Tsreg { .. } => "tsreg",
            Track::DlnmCurves { .. } => "dlnm-curves",
            Track::PredictGrid { .. } => "predict-grid",
            Track::Meta { .. } => "meta",
            Track::Report { .. } => "report",
        }
    }

    pub fn needs_data(&self) -> bool {
        match self {
            Track::Meta { estimates, .. } => estimates.is_none(),
            Track::Report { .. } => false,
            _ => true,
        }
    }
}

/// Everything a run needs, validated before any data is read.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    pub jobs: Option<usize>,
    /// Empty means every basin in the data.
    pub basins: Vec<BasinId>,
    /// Empty means the track default.
    pub outcomes: Vec<Outcome>,
    pub ozone_metric: OzoneMetric,
    pub track: Track,
    pub dry_run: bool,
    pub quiet: bool,
    /// Flag values overridden by the config file.
    pub warnings: Vec<String>,
}

impl RunConfig {
    /// Settings recorded in the manifest; paths and thread count are left
    /// out so reruns elsewhere produce the same manifest.
    pub fn manifest_config(&self) -> serde_json::Value {
        serde_json::json!({
            "basins": self.basins.iter().map(|b| b.code()).collect::<Vec<_>>(),
            "outcomes": self.outcomes.iter().map(|o| o.key()).collect::<Vec<_>>(),
            "ozone_metric": self.ozone_metric,
            "options": self.track,
        })
    }

    pub fn from_cli(cli: Cli) -> CliResult<Self> {
        let file = match &cli.common.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        merge(cli, file)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.jobs == Some(0) {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        if self.track.needs_data() && !self.dry_run {
            match &self.data {
                None => return Err(CliError::Usage(format!("no dataset: pass --data or set {DATA_ENV}"))),
                Some(p) if !p.is_file() => return Err(CliError::Data(format!("{} is not a file", p.display()))),
                _ => {}
            }
        }
        match &self.track {
            Track::Tsreg { table, dfs, .. } => {
                table_plan(*table)?;
                ModelSpec::with_dfs(dfs.0, dfs.1, dfs.2)
                    .validate()
                    .map_err(|e| CliError::Usage(e.to_string()))?;
            }
            Track::DlnmCurves { points, pollutants } => {
                if *points < 2 {
                    return Err(CliError::Usage("--points must be at least 2".into()));
                }
                if pollutants.is_empty() {
                    return Err(CliError::Usage("no pollutant selected".into()));
                }
            }
            Track::PredictGrid { aq, met, .. } => {
                if aq.is_empty() || met.is_empty() {
                    return Err(CliError::Usage("empty model grid".into()));
                }
            }
            Track::Meta { sigma2: Some(s), .. } if !(s.is_finite() && *s >= 0.0) => {
                return Err(CliError::Usage("--sigma2 must be finite and non-negative".into()));
            }
            Track::Meta { estimates: Some(p), .. } if !p.is_file() => {
                return Err(CliError::Data(format!("{} is not a file", p.display())));
            }
            _ => {}
        }
        if !self.dry_run {
            std::fs::create_dir_all(&self.out)
                .map_err(|e| CliError::Usage(format!("output directory {}: {e}", self.out.display())))?;
            let probe = self.out.join(format!(".probe{}", std::process::id()));
            std::fs::write(&probe, b"")
                .and_then(|_| std::fs::remove_file(&probe))
                .map_err(|e| CliError::Usage(format!("output directory {} is not writable: {e}", self.out.display())))?;
        }
        Ok(())
    }
}

/// The file value wins when both are set; a differing flag gets a warning.
fn pick<T: PartialEq + Debug>(name: &str, flag: Option<T>, file: Option<T>, warnings: &mut Vec<String>) -> Option<T> {
    match (flag, file) {
        (Some(a), Some(b)) => {
            if a != b {
                warnings.push(format!("config file sets {name} = {b:?}; ignoring command-line value {a:?}"));
            }
            Some(b)
        }
        (a, b) => b.or(a),
    }
}

fn nonempty<T>(v: Vec<T>) -> Option<Vec<T>> {
    if v.is_empty() {
        None
    } else {
        Some(v)
    }
}

fn parse_all<T: std::str::FromStr<Err = calmort_core::Error>>(v: &[String]) -> CliResult<Vec<T>> {
    v.iter().map(|s| s.trim().parse::<T>().map_err(CliError::from)).collect()
}

fn merge(cli: Cli, file: FileConfig) -> CliResult<RunConfig> {
    let mut w = Vec::new();
    let c = cli.common;
    // the env fallback counts as a flag
    let data = pick("data", c.data, file.data, &mut w);
    let out = pick("out", c.out, file.out, &mut w).unwrap_or_else(|| PathBuf::from("out"));
    let jobs = pick("jobs", c.jobs, file.jobs, &mut w);
    let basins: Vec<BasinId> = parse_all(&pick("basins", nonempty(c.basin), file.basins, &mut w).unwrap_or_default())?;
    let outcomes: Vec<Outcome> =
        parse_all(&pick("outcomes", nonempty(c.outcome), file.outcomes, &mut w).unwrap_or_default())?;
    let ozone_metric = match pick("ozone_metric", c.ozone_metric, file.ozone_metric, &mut w) {
        Some(s) => s.parse()?,
        None => OzoneMetric::default(),
    };
    let track = match cli.command {
        Command::Validate => Track::Validate,
        Command::Movmed(a) => {
            let window = match pick("movmed.window", a.window, file.movmed.window, &mut w) {
                Some(s) => s.parse()?,
                None => WindowSpec::default(),
            };
            let spike_threshold =
                pick("movmed.spike_threshold", a.spike_threshold, file.movmed.spike_threshold, &mut w).unwrap_or(15.0);
            Track::Movmed {
                window,
                spike_threshold,
            }
        }
        Command::Tsreg(a) => {
            let t = file.tsreg;
            let table = pick("tsreg.table", a.table, t.table, &mut w)
                .ok_or_else(|| CliError::Usage("tsreg needs --table N".into()))?;
            let dfs = (
                pick("tsreg.df0", a.df0, t.df0, &mut w).unwrap_or(7),
                pick("tsreg.df1", a.df1, t.df1, &mut w).unwrap_or(6),
                pick("tsreg.df2", a.df2, t.df2, &mut w).unwrap_or(6),
            );
            Track::Tsreg {
                table,
                dfs,
                dump_basis: pick("tsreg.dump_basis", a.dump_basis, t.dump_basis, &mut w),
            }
        }
        Command::DlnmCurves(a) => {
            let pollutants = match pick("dlnm.pollutants", nonempty(a.pollutant), file.dlnm.pollutants, &mut w) {
                Some(v) => parse_all(&v)?,
                None => vec![Pollutant::Ozone, Pollutant::Pm25],
            };
            Track::DlnmCurves {
                pollutants,
                points: pick("dlnm.points", a.points, file.dlnm.points, &mut w).unwrap_or(21),
            }
        }
        Command::PredictGrid(a) => {
            let g = file.grid;
            let hold_out = pick("grid.hold_out_years", nonempty(a.hold_out), g.hold_out_years, &mut w);
            let aq = match pick("grid.aq", nonempty(a.aq), g.aq, &mut w) {
                Some(v) => parse_all(&v)?,
                None => AqLevel::ALL.to_vec(),
            };
            let met = match pick("grid.met", nonempty(a.met), g.met, &mut w) {
                Some(v) => parse_all(&v)?,
                None => MetLevel::ALL.to_vec(),
            };
            Track::PredictGrid { hold_out, aq, met }
        }
        Command::Meta(a) => Track::Meta {
            estimates: pick("meta.estimates", a.estimates, file.meta.estimates, &mut w),
            sigma2: pick("meta.sigma2", a.sigma2, file.meta.sigma2, &mut w),
        },
        Command::Report(a) => Track::Report {
            results: pick("report.results", a.results, file.report.results, &mut w),
        },
    };
    let cfg = RunConfig {
        data,
        out,
        jobs,
        basins,
        outcomes,
        ozone_metric,
        track,
        dry_run: c.dry_run,
        quiet: c.quiet,
        warnings: w,
    };
    Ok(cfg)
}
