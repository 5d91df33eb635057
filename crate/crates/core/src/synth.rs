//! Seeded synthetic basin series with known exposure effects, for tests,
//! benchmarks and null-behaviour checks.

use chrono::{Datelike, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::dataset::{BasinId, BasinSeries, DailyRecord};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub basin: BasinId,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub seed: u64,
    /// Mean daily deaths for the four stored categories.
    pub base: [f64; 4],
    /// Amplitude of the annual log-rate cycle (winter peak).
    pub seasonal_amp: f64,
    /// Log-rate change per year.
    pub trend_per_year: f64,
    /// Log-rate per ppb of 8-hour ozone at lags 0, 1, ...
    pub ozone_lag_effect: Vec<f64>,
    /// Log-rate per µg/m³ of PM2.5 at lags 0, 1, ...
    pub pm_lag_effect: Vec<f64>,
    /// Log-rate per squared 10 °F of tmax above 75 °F.
    pub heat_effect: f64,
    /// Independent probability that any measurement cell is missing.
    pub missing_rate: f64,
    /// Round measurements to this many decimals.
    pub decimals: i32,
}

impl SynthConfig {
    /// Constant mean, no exposure effects, complete measurements.
    pub fn null(seed: u64, years: i32) -> Self {
        Self {
            basin: BasinId::SouthCoast,
            start: NaiveDate::from_ymd_opt(2000, 1, 1).unwrap(),
            end: NaiveDate::from_ymd_opt(2000 + years - 1, 12, 31).unwrap(),
            seed,
            base: [20.0, 60.0, 8.0, 30.0],
            seasonal_amp: 0.0,
            trend_per_year: 0.0,
            ozone_lag_effect: Vec::new(),
            pm_lag_effect: Vec::new(),
            heat_effect: 0.0,
            missing_rate: 0.0,
            decimals: 1,
        }
    }

    /// Seasonal cycle, a mild trend and heat effect, no pollutant effects.
    pub fn realistic(seed: u64, years: i32) -> Self {
        Self {
            seasonal_amp: 0.12,
            trend_per_year: -0.01,
            heat_effect: 0.03,
            ..Self::null(seed, years)
        }
    }

    pub fn with_basin(mut self, basin: BasinId) -> Self {
        self.basin = basin;
        self
    }

    pub fn with_ozone_effect(mut self, per_lag: Vec<f64>) -> Self {
        self.ozone_lag_effect = per_lag;
        self
    }

    pub fn with_pm_effect(mut self, per_lag: Vec<f64>) -> Self {
        self.pm_lag_effect = per_lag;
        self
    }

    pub fn with_missing(mut self, rate: f64) -> Self {
        self.missing_rate = rate;
        self
    }

    pub fn with_base(mut self, base: [f64; 4]) -> Self {
        self.base = base;
        self
    }
}

fn round_to(v: f64, decimals: i32) -> f64 {
    let f = 10f64.powi(decimals);
    (v * f).round() / f
}

struct Ar1 {
    rho: f64,
    state: f64,
    noise: Normal<f64>,
}

impl Ar1 {
    fn new(rho: f64, sd: f64) -> Self {
        Self {
            rho,
            state: 0.0,
            noise: Normal::new(0.0, sd * (1.0 - rho * rho).sqrt()).unwrap(),
        }
    }

    fn step(&mut self, rng: &mut ChaCha8Rng) -> f64 {
        self.state = self.rho * self.state + self.noise.sample(rng);
        self.state
    }
}

/// Generate one basin series. Weather follows an annual cycle with AR(1)
/// anomalies, ozone tracks tmax, PM2.5 peaks in winter; deaths are Poisson
/// given the configured log-rate.
pub fn generate(cfg: &SynthConfig) -> Result<BasinSeries> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let days: Vec<NaiveDate> = cfg.start.iter_days().take_while(|d| *d <= cfg.end).collect();
    let n = days.len();
    let mut t_anom = Ar1::new(0.7, 6.0);
    let mut rh_anom = Ar1::new(0.6, 10.0);
    let mut o3_anom = Ar1::new(0.5, 8.0);
    let mut pm_anom = Ar1::new(0.6, 0.35);
    let spread: Normal<f64> = Normal::new(22.0, 3.0).unwrap();

    let mut tmax = Vec::with_capacity(n);
    let mut tmin = Vec::with_capacity(n);
    let mut rh = Vec::with_capacity(n);
    let mut o3max8 = Vec::with_capacity(n);
    let mut o3avg = Vec::with_capacity(n);
    let mut pm = Vec::with_capacity(n);
    for d in &days {
        let phase = 2.0 * std::f64::consts::PI * (d.ordinal() as f64 - 200.0) / 365.25;
        let ta = t_anom.step(&mut rng);
        let tx = 75.0 + 12.0 * phase.cos() + ta;
        let tn = tx - spread.sample(&mut rng).max(4.0);
        let h = (65.0 - 8.0 * phase.cos() + rh_anom.step(&mut rng) - 0.4 * ta).clamp(5.0, 100.0);
        let o = (40.0 + 12.0 * phase.cos() + 0.6 * ta + o3_anom.step(&mut rng)).max(1.0);
        let p = (12.0 * (0.25 * (-phase.cos()) + pm_anom.step(&mut rng)).exp()).max(0.5);
        tmax.push(round_to(tx, cfg.decimals));
        tmin.push(round_to(tn, cfg.decimals));
        rh.push(round_to(h, cfg.decimals).min(100.0));
        o3max8.push(round_to(o, cfg.decimals));
        o3avg.push(round_to(0.7 * o, cfg.decimals));
        pm.push(round_to(p, cfg.decimals));
    }

    let y0 = days[0].year();
    let mut records = Vec::with_capacity(n);
    for (t, d) in days.iter().enumerate() {
        let phase = 2.0 * std::f64::consts::PI * (d.ordinal() as f64 - 15.0) / 365.25;
        let years = (d.year() - y0) as f64 + d.ordinal() as f64 / 365.25;
        let mut eta = cfg.seasonal_amp * phase.cos() + cfg.trend_per_year * years;
        let hot = ((tmax[t] - 75.0) / 10.0).max(0.0);
        eta += cfg.heat_effect * hot * hot;
        for (l, b) in cfg.ozone_lag_effect.iter().enumerate() {
            eta += b * (o3max8[t.saturating_sub(l)] - 40.0);
        }
        for (l, b) in cfg.pm_lag_effect.iter().enumerate() {
            eta += b * (pm[t.saturating_sub(l)] - 12.0);
        }
        let mut deaths = [0u32; 4];
        for (c, base) in cfg.base.iter().enumerate() {
            let mu = base * eta.exp();
            deaths[c] = Poisson::new(mu).unwrap().sample(&mut rng) as u32;
        }
        let mut miss = |v: f64| (rng.random::<f64>() >= cfg.missing_rate).then_some(v);
        records.push(DailyRecord {
            date: *d,
            deaths,
            pm25: miss(pm[t]),
            o3avg: miss(o3avg[t]),
            o3max8: miss(o3max8[t]),
            tmax: miss(tmax[t]),
            tmin: miss(tmin[t]),
            rhmax: miss(rh[t]),
        });
    }
    // keep the physical ordering when only one temperature survives rounding
    for r in &mut records {
        if let (Some(x), Some(m)) = (r.tmax, r.tmin) {
            if m > x {
                r.tmin = Some(x);
            }
        }
    }
    BasinSeries::new(cfg.basin, records)
}

/// One series per basin with seeds `seed + i`.
pub fn generate_panel(template: &SynthConfig) -> Result<Vec<BasinSeries>> {
    BasinId::ALL
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            let mut c = template.clone().with_basin(b);
            c.seed = template.seed.wrapping_add(i as u64);
            generate(&c)
        })
        .collect()
}
