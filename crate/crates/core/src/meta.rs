//! Two-level normal random-effects pooling, `θᵢ ~ N(θ, Sᵢ + σ²)`, with the
//! between-basin variance estimated by restricted maximum likelihood.

use serde::{Deserialize, Serialize};

use crate::dlm::CurvePoint;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub label: String,
    pub theta: f64,
    /// Sampling variance `Sᵢ`.
    pub variance: f64,
}

impl EffectEstimate {
    pub fn new(label: impl Into<String>, theta: f64, variance: f64) -> Self {
        Self {
            label: label.into(),
            theta,
            variance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Sigma2Mode {
    Reml,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShrunkEstimate {
    pub label: String,
    pub theta: f64,
    pub variance: f64,
    /// Best linear unbiased prediction of the basin effect.
    pub blup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledEffect {
    pub theta_hat: f64,
    pub se: f64,
    pub sigma2: f64,
    pub per_basin: Vec<ShrunkEstimate>,
    /// Cochran's Q; absent when some `Sᵢ = 0`.
    pub q: Option<f64>,
    pub i2: Option<f64>,
    pub loglik: f64,
    pub method: String,
}

impl PooledEffect {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("pooled effect serializes")
    }
}

fn weights(est: &[EffectEstimate], sigma2: f64) -> Vec<f64> {
    est.iter().map(|e| 1.0 / (e.variance + sigma2)).collect()
}

fn weighted_mean(est: &[EffectEstimate], w: &[f64]) -> f64 {
    let sw: f64 = w.iter().sum();
    est.iter().zip(w).map(|(e, w)| w * e.theta).sum::<f64>() / sw
}

/// Restricted log-likelihood up to a constant; `-∞` where some `Sᵢ + σ² = 0`.
pub fn reml_loglik(est: &[EffectEstimate], sigma2: f64) -> f64 {
    if est.iter().any(|e| e.variance + sigma2 <= 0.0) {
        return f64::NEG_INFINITY;
    }
    let w = weights(est, sigma2);
    let sw: f64 = w.iter().sum();
    let th = weighted_mean(est, &w);
    let logdet: f64 = est.iter().map(|e| (e.variance + sigma2).ln()).sum();
    let rss: f64 = est.iter().zip(&w).map(|(e, w)| w * (e.theta - th).powi(2)).sum();
    -0.5 * logdet - 0.5 * sw.ln() - 0.5 * rss
}

/// Derivative of [`reml_loglik`] in `σ²`.
fn reml_score(est: &[EffectEstimate], sigma2: f64) -> f64 {
    let w = weights(est, sigma2);
    let sw: f64 = w.iter().sum();
    let th = weighted_mean(est, &w);
    let sw2: f64 = w.iter().map(|w| w * w).sum();
    let r: f64 = est.iter().zip(&w).map(|(e, w)| w * w * (e.theta - th).powi(2)).sum();
    0.5 * (-sw + sw2 / sw + r)
}

fn sample_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
}

const GRID: usize = 400;

/// REML estimate of `σ²` on `[0, 10·var(θᵢ)]`: grid bracket, then bisection
/// on the score (golden section if the bracket shows no sign change).
fn reml_sigma2(est: &[EffectEstimate]) -> f64 {
    let thetas: Vec<f64> = est.iter().map(|e| e.theta).collect();
    let hi = 10.0 * sample_variance(&thetas);
    if hi <= 0.0 || !hi.is_finite() {
        return 0.0;
    }
    let at = |k: usize| hi * k as f64 / GRID as f64;
    let best = (0..=GRID)
        .map(|k| (k, reml_loglik(est, at(k))))
        .fold((0, f64::NEG_INFINITY), |acc, (k, l)| if l > acc.1 { (k, l) } else { acc });
    let k = best.0;
    let score_ok = |s: f64| est.iter().all(|e| e.variance + s > 0.0);
    if k == 0 && score_ok(0.0) && reml_score(est, 0.0) <= 0.0 {
        return 0.0;
    }
    if k == GRID && reml_score(est, hi) >= 0.0 {
        return hi;
    }
    let mut a = at(k.saturating_sub(1));
    let mut b = at((k + 1).min(GRID));
    if !score_ok(a) {
        a = at(k);
    }
    let (fa, fb) = (reml_score(est, a), reml_score(est, b));
    if fa > 0.0 && fb < 0.0 {
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if m <= a || m >= b {
                break;
            }
            if reml_score(est, m) > 0.0 {
                a = m;
            } else {
                b = m;
            }
        }
        return 0.5 * (a + b);
    }
    golden_max(|s| reml_loglik(est, s), a, b)
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= 1e-14 * (a.abs() + b.abs()).max(1e-300) {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

fn check(est: &[EffectEstimate]) -> Result<()> {
    if est.len() < 2 {
        return Err(Error::InsufficientData(format!("pooling needs at least 2 estimates, got {}", est.len())));
    }
    for e in est {
        if !e.theta.is_finite() || !e.variance.is_finite() || e.variance < 0.0 {
            return Err(Error::NonFinite(format!(
                "estimate `{}`: theta {} variance {}",
                e.label, e.theta, e.variance
            )));
        }
    }
    Ok(())
}

pub fn pool(est: &[EffectEstimate]) -> Result<PooledEffect> {
    pool_with(est, Sigma2Mode::Reml)
}

pub fn pool_with(est: &[EffectEstimate], mode: Sigma2Mode) -> Result<PooledEffect> {
    check(est)?;
    let method = match mode {
        Sigma2Mode::Reml => "REML".to_string(),
        Sigma2Mode::Fixed(v) => format!("fixed sigma2 = {v}"),
    };
    let first = est[0].theta;
    if est.iter().all(|e| e.variance == 0.0 && e.theta == first) {
        return Ok(PooledEffect {
            theta_hat: first,
            se: 0.0,
            sigma2: 0.0,
            per_basin: est
                .iter()
                .map(|e| ShrunkEstimate {
                    label: e.label.clone(),
                    theta: e.theta,
                    variance: 0.0,
                    blup: e.theta,
                })
                .collect(),
            q: None,
            i2: None,
            loglik: f64::INFINITY,
            method,
        });
    }
    // sums run over a canonical ordering so the result ignores input order
    let mut sorted: Vec<EffectEstimate> = est.to_vec();
    sorted.sort_by(|a, b| a.theta.total_cmp(&b.theta).then(a.variance.total_cmp(&b.variance)));
    let canon = sorted.as_slice();
    let sigma2 = match mode {
        Sigma2Mode::Reml => reml_sigma2(canon),
        Sigma2Mode::Fixed(v) => {
            if !(v >= 0.0) {
                return Err(Error::InvalidArgument(format!("fixed sigma2 {v} must be >= 0")));
            }
            v
        }
    };
    if est.iter().any(|e| e.variance + sigma2 <= 0.0) {
        return Err(Error::InvalidArgument("zero total variance for a non-identical estimate".into()));
    }
    let w = weights(canon, sigma2);
    let sw: f64 = w.iter().sum();
    let theta_hat = weighted_mean(canon, &w);
    let per_basin = est
        .iter()
        .map(|e| {
            let shrink = sigma2 / (sigma2 + e.variance);
            ShrunkEstimate {
                label: e.label.clone(),
                theta: e.theta,
                variance: e.variance,
                blup: theta_hat + shrink * (e.theta - theta_hat),
            }
        })
        .collect();
    let (q, i2) = if est.iter().all(|e| e.variance > 0.0) {
        let w0 = weights(canon, 0.0);
        let fe = weighted_mean(canon, &w0);
        let q: f64 = canon.iter().zip(&w0).map(|(e, w)| w * (e.theta - fe).powi(2)).sum();
        let df = (est.len() - 1) as f64;
        let i2 = if q > 0.0 { ((q - df) / q).max(0.0) } else { 0.0 };
        (Some(q), Some(i2))
    } else {
        (None, None)
    };
    Ok(PooledEffect {
        theta_hat,
        se: sw.powf(-0.5),
        sigma2,
        per_basin,
        q,
        i2,
        loglik: reml_loglik(canon, sigma2),
        method,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledCurve {
    pub points: Vec<CurvePoint>,
    pub sigma2: Vec<f64>,
    pub method: String,
}

/// Pointwise pooling of per-basin log-RR curves sharing one exposure grid.
pub fn pooled_curve(curves: &[(String, Vec<CurvePoint>)], mode: Sigma2Mode) -> Result<PooledCurve> {
    if curves.len() < 2 {
        return Err(Error::InsufficientData("pooling needs at least 2 curves".into()));
    }
    let grid: Vec<f64> = curves[0].1.iter().map(|p| p.exposure).collect();
    for (label, c) in curves {
        if c.len() != grid.len() || c.iter().zip(&grid).any(|(p, g)| p.exposure != *g) {
            return Err(Error::DimensionMismatch(format!("curve `{label}` does not share the exposure grid")));
        }
    }
    let mut points = Vec::with_capacity(grid.len());
    let mut sigma2 = Vec::with_capacity(grid.len());
    let mut method = String::new();
    for (i, &x) in grid.iter().enumerate() {
        let est: Vec<EffectEstimate> = curves
            .iter()
            .map(|(l, c)| EffectEstimate::new(l.clone(), c[i].log_rr, c[i].se.powi(2)))
            .collect();
        let p = pool_with(&est, mode)?;
        points.push(CurvePoint::new(x, p.theta_hat, p.se));
        sigma2.push(p.sigma2);
        method = p.method;
    }
    Ok(PooledCurve {
        points,
        sigma2,
        method: format!("{method}, pointwise"),
    })
}
