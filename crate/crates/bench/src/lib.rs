//! Shared fixtures for the criterion benches.

use calmort_core::glm::DesignMatrix;
use calmort_core::meta::EffectEstimate;
use calmort_core::synth::{generate, SynthConfig};
use calmort_core::tsreg::{assemble, AqTerm, ModelSpec};
use calmort_core::{BasinSeries, LagSet};

/// Synthetic basin covering `years` calendar years.
pub fn series(years: i32) -> BasinSeries {
    generate(&SynthConfig::realistic(17, years).with_missing(0.01)).expect("synthetic series")
}

/// Default regression design with a lag 0-3 ozone block.
pub fn default_design(series: &BasinSeries) -> DesignMatrix {
    let spec = ModelSpec::default().with_aq(AqTerm::Dlm(LagSet::through(3)));
    assemble(series, &spec).expect("design").design
}

/// Deterministic per-basin effects with visible heterogeneity.
pub fn estimates(k: usize) -> Vec<EffectEstimate> {
    (0..k)
        .map(|i| {
            let t = ((i * 7919) % 97) as f64 / 97.0 - 0.3;
            let v = 0.01 + ((i * 104729) % 13) as f64 / 200.0;
            EffectEstimate::new(format!("b{i}"), t, v)
        })
        .collect()
}
