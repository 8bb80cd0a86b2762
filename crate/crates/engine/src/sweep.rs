//! Parameter sweeps: noise error as a function of chunk size, output range
//! or window length.
//!
//! Each point runs the query once against a throwaway ledger and then
//! draws `reps` noise samples. Every point reuses the same noise seed, so
//! differences between points come from the parameter and not from luck.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use vidpriv_core::owner::CameraRegistry;
use vidpriv_core::FrameStream;

use crate::pipeline::{add_noise, compute_raw, prepare, PipelineError};
use crate::sandbox::RunOptions;
use crate::state::{ledger_for, BudgetStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Chunk,
    Range,
    Window,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub param: SweepParam,
    pub value: f64,
    pub releases: usize,
    /// Mean Laplace scale over releases.
    pub scale: f64,
    /// Mean absolute raw value over releases.
    pub raw: f64,
    /// Root mean squared noise over releases and repetitions.
    pub rmse: f64,
    pub relative_rmse: f64,
}

/// Substitutes `{value}` in the query template.
pub fn instantiate(template: &str, value: f64) -> String {
    template.replace("{value}", &format!("{value}"))
}

#[allow(clippy::too_many_arguments)]
pub fn run_sweep(
    template: &str,
    param: SweepParam,
    values: &[f64],
    registry: &CameraRegistry,
    traces: &BTreeMap<String, FrameStream>,
    reps: usize,
    seed: u64,
    run: &RunOptions,
) -> Result<Vec<SweepPoint>, PipelineError> {
    let mut out = Vec::with_capacity(values.len());
    for &v in values {
        let plan = prepare(&instantiate(template, v), registry, None)?;
        let mut ledger = ledger_for(registry);
        ledger.reserve("sweep", &plan.reservations())?;
        let raw = compute_raw(&plan, traces, run)?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut sq = 0.0;
        let mut n = 0usize;
        for _ in 0..reps {
            for r in add_noise(&raw, None, &mut rng) {
                if r.belt.is_some() {
                    sq += (r.noised - r.raw).powi(2);
                    n += 1;
                }
            }
        }
        let numeric: Vec<_> = raw.iter().filter(|r| r.candidates.is_none()).collect();
        let k = numeric.len().max(1) as f64;
        let mean_raw = numeric.iter().map(|r| r.raw.abs()).sum::<f64>() / k;
        let rmse = if n == 0 { 0.0 } else { (sq / n as f64).sqrt() };
        out.push(SweepPoint {
            param,
            value: v,
            releases: raw.len(),
            scale: numeric.iter().map(|r| r.scale).sum::<f64>() / k,
            raw: mean_raw,
            rmse,
            relative_rmse: rmse / mean_raw,
        });
    }
    Ok(out)
}
