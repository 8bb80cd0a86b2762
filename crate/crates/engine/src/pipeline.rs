//! End-to-end query execution: validate, admit, split, process, evaluate,
//! add noise.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use rand::Rng;
use serde::Serialize;
use thiserror::Error;
use vidpriv_core::chunking::split_frames;
use vidpriv_core::owner::CameraRegistry;
use vidpriv_core::privacy::{argmax_scale, confidence_halfwidth, laplace_sample, noisy_argmax, BudgetError};
use vidpriv_core::query::validate::{validate_with, ResolvedSelect};
use vidpriv_core::query::{AggFunc, ValidatedPlan, ValidationError};
use vidpriv_core::relational::{evaluate, Tables};
use vidpriv_core::table::Value;
use vidpriv_core::{parse_query, ChunkSpec, FrameStream};

use crate::sandbox::{check_executable, run_processor, RunOptions, SandboxError};
use crate::state::{BudgetStore, ReserveError, StateError};

/// Coverage of the reported belt around each raw value.
pub const BELT_COVERAGE: f64 = 0.99;

/// Row cap used by the non-private baseline.
const BASELINE_MAX_ROWS: u64 = 1 << 20;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Parse(String),
    #[error("query is invalid:\n{}", .0.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<ValidationError>),
    #[error("no trace supplied for camera {0}")]
    MissingTrace(String),
    #[error("trace for camera {camera} does not match the registry: {reason}")]
    TraceMismatch { camera: String, reason: String },
    #[error(transparent)]
    Processor(#[from] SandboxError),
    #[error("query denied: {0}")]
    Denied(BudgetError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error("evaluation failed: {0}")]
    Eval(String),
}

impl From<ReserveError> for PipelineError {
    fn from(e: ReserveError) -> Self {
        match e {
            ReserveError::Denied(b) => PipelineError::Denied(b),
            ReserveError::State(s) => PipelineError::State(s),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct QueryOptions {
    pub run: RunOptions,
    /// Total budget shared by statements without `CONSUMING`; defaults to
    /// the smallest per-frame epsilon of the cameras involved.
    pub query_epsilon: Option<f64>,
    /// Also compute the non-private baseline for accuracy accounting.
    pub baseline: Option<Baseline>,
}

/// The same processors run without the privacy machinery: one chunk per
/// `chunk_secs` (default: the whole window), no row cap, plain means and no
/// noise.
#[derive(Debug, Clone, Copy, Default)]
pub struct Baseline {
    pub chunk_secs: Option<f64>,
}

pub fn prepare(
    text: &str,
    registry: &CameraRegistry,
    query_epsilon: Option<f64>,
) -> Result<ValidatedPlan, PipelineError> {
    let plan = parse_query(text).map_err(|e| PipelineError::Parse(e.to_string()))?;
    validate_with(&plan, registry, query_epsilon).map_err(PipelineError::Invalid)
}

/// Laplace scale of each release of a statement.
pub fn release_scale(sel: &ResolvedSelect) -> f64 {
    if sel.analysis.agg == AggFunc::Argmax {
        argmax_scale(sel.analysis.delta_q, sel.epsilon)
    } else {
        sel.analysis.delta_q / sel.epsilon
    }
}

/// A release value before noise.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRelease {
    pub select: usize,
    pub agg: AggFunc,
    pub key: Vec<Value>,
    pub raw: f64,
    pub empty: bool,
    pub epsilon: f64,
    pub delta_q: f64,
    pub scale: f64,
    /// For ARGMAX: the candidate keys and their counts.
    pub candidates: Option<Vec<(Value, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReleaseReport {
    pub select: usize,
    pub aggregate: String,
    pub key: Vec<String>,
    pub epsilon: f64,
    pub delta_q: f64,
    pub scale: f64,
    pub noised: f64,
    /// ARGMAX only: the chosen key.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub choice: Option<String>,
    pub raw: f64,
    pub empty: bool,
    /// `raw ± scale * ln(1 / (1 - 0.99))`; absent for ARGMAX.
    pub belt: Option<(f64, f64)>,
    pub baseline: Option<f64>,
    pub accuracy: Option<f64>,
}

/// What an analyst may see of a release.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PublicRelease {
    pub select: usize,
    pub aggregate: String,
    pub key: Vec<String>,
    pub epsilon: f64,
    pub scale: f64,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub choice: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryReport {
    pub query_id: String,
    pub total_epsilon: f64,
    pub releases: Vec<ReleaseReport>,
}

impl QueryReport {
    pub fn public(&self) -> Vec<PublicRelease> {
        self.releases
            .iter()
            .map(|r| PublicRelease {
                select: r.select,
                aggregate: r.aggregate.clone(),
                key: r.key.clone(),
                epsilon: r.epsilon,
                scale: r.scale,
                value: r.noised,
                choice: r.choice.clone(),
            })
            .collect()
    }
}

/// Checks everything that can fail before budget is spent: every
/// processor exists and every split has a trace that matches the registry.
pub fn preflight(plan: &ValidatedPlan, traces: &BTreeMap<String, FrameStream>) -> Result<(), PipelineError> {
    for p in &plan.processes {
        check_executable(Path::new(&p.spec.executable))?;
    }
    for s in &plan.splits {
        let cam = &s.camera;
        let t = traces
            .get(&cam.camera_id)
            .ok_or_else(|| PipelineError::MissingTrace(cam.camera_id.clone()))?;
        let mismatch = |reason: String| PipelineError::TraceMismatch {
            camera: cam.camera_id.clone(),
            reason,
        };
        if t.fps != cam.fps {
            return Err(mismatch(format!("fps {} vs {}", t.fps, cam.fps)));
        }
        if t.start_time != cam.start_time {
            return Err(mismatch(format!("start time {} vs {}", t.start_time, cam.start_time)));
        }
        if t.grid != cam.grid {
            return Err(mismatch("grid differs".into()));
        }
        if (t.len() as u64) < s.end_frame {
            return Err(mismatch(format!(
                "{} frames, window ends at frame {}",
                t.len(),
                s.end_frame
            )));
        }
    }
    Ok(())
}

/// Splits and processes every table. With `baseline` the chunking and row
/// cap are replaced as described on [`Baseline`].
fn build_tables(
    plan: &ValidatedPlan,
    traces: &BTreeMap<String, FrameStream>,
    run: &RunOptions,
    baseline: Option<Baseline>,
) -> Result<Tables, PipelineError> {
    let mut tables = Tables::new();
    for p in &plan.processes {
        let s = &plan.splits[p.split];
        let trace = &traces[&s.camera.camera_id];
        let mut meta = p.meta.clone();
        let mut chunk = s.chunk;
        if let Some(b) = baseline {
            let window = (s.end_frame - s.first_frame).max(1);
            let frames = b.chunk_secs.map_or(window, |c| {
                ((c * f64::from(s.camera.fps)).round() as u64).clamp(1, window)
            });
            chunk = ChunkSpec::new(frames, frames, s.camera.fps).map_err(|e| PipelineError::Eval(e.to_string()))?;
            meta.chunk = chunk;
            meta.n_chunks = chunk.chunk_count(s.end_frame - s.first_frame);
            meta.max_rows = BASELINE_MAX_ROWS;
        }
        let chunks = split_frames(
            trace,
            s.first_frame,
            s.end_frame,
            &chunk,
            s.mask.as_ref(),
            s.scheme.as_ref(),
        )
        .map_err(|e| PipelineError::Eval(e.to_string()))?;
        let table = run_processor(
            Path::new(&p.spec.executable),
            &chunks,
            &s.camera.camera_id,
            s.camera.fps,
            meta,
            Duration::from_secs_f64(p.timeout_secs),
            run,
        )?;
        tables.insert(p.meta.name.clone(), table);
    }
    Ok(tables)
}

fn evaluate_all(plan: &ValidatedPlan, tables: &Tables, private: bool) -> Result<Vec<RawRelease>, PipelineError> {
    let mut out = Vec::new();
    for (i, sel) in plan.selects.iter().enumerate() {
        let slots = if private { sel.slots() } else { None };
        let values = evaluate(&sel.stmt, tables, slots).map_err(|e| PipelineError::Eval(e.0))?;
        let agg = sel.analysis.agg;
        let scale = release_scale(sel);
        if agg == AggFunc::Argmax {
            let candidates: Vec<(Value, f64)> = values
                .into_iter()
                .map(|v| (v.key.into_iter().next().unwrap_or(Value::Null), v.value))
                .collect();
            let best = first_max(candidates.iter().map(|c| c.1));
            out.push(RawRelease {
                select: i,
                agg,
                key: Vec::new(),
                raw: best.map_or(f64::NAN, |b| b as f64),
                empty: candidates.is_empty(),
                epsilon: sel.epsilon,
                delta_q: sel.analysis.delta_q,
                scale,
                candidates: Some(candidates),
            });
            continue;
        }
        for v in values {
            out.push(RawRelease {
                select: i,
                agg,
                key: v.key,
                raw: v.value,
                empty: v.empty,
                epsilon: sel.epsilon,
                delta_q: sel.analysis.delta_q,
                scale,
                candidates: None,
            });
        }
    }
    Ok(out)
}

fn first_max(values: impl Iterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Raw release values, without admission or noise. The caller is
/// responsible for having reserved budget; experiments use this with a
/// throwaway ledger to draw many noise samples from one run.
pub fn compute_raw(
    plan: &ValidatedPlan,
    traces: &BTreeMap<String, FrameStream>,
    run: &RunOptions,
) -> Result<Vec<RawRelease>, PipelineError> {
    preflight(plan, traces)?;
    let tables = build_tables(plan, traces, run, None)?;
    evaluate_all(plan, &tables, true)
}

/// Baseline value per `(select, key)`.
pub fn compute_baseline(
    plan: &ValidatedPlan,
    traces: &BTreeMap<String, FrameStream>,
    run: &RunOptions,
    baseline: Baseline,
) -> Result<Vec<RawRelease>, PipelineError> {
    let tables = build_tables(plan, traces, run, Some(baseline))?;
    evaluate_all(plan, &tables, false)
}

/// Adds noise to every release. Baseline values are matched by statement
/// and key; a key the baseline lacks counts as 0.
pub fn add_noise<R: Rng + ?Sized>(
    raw: &[RawRelease],
    baseline: Option<&[RawRelease]>,
    rng: &mut R,
) -> Vec<ReleaseReport> {
    raw.iter()
        .map(|r| {
            let key: Vec<String> = r.key.iter().map(ToString::to_string).collect();
            let base = baseline.map(|b| {
                b.iter()
                    .find(|x| x.select == r.select && x.key == r.key)
                    .map_or(0.0, |x| x.raw)
            });
            match &r.candidates {
                Some(cands) => {
                    let scores: Vec<f64> = cands.iter().map(|c| c.1).collect();
                    let pick = noisy_argmax(&scores, r.delta_q, r.epsilon, rng);
                    let noised = pick.map_or(f64::NAN, |p| p as f64);
                    ReleaseReport {
                        select: r.select,
                        aggregate: r.agg.to_string(),
                        key,
                        epsilon: r.epsilon,
                        delta_q: r.delta_q,
                        scale: r.scale,
                        noised,
                        choice: pick.map(|p| cands[p].0.to_string()),
                        raw: r.raw,
                        empty: r.empty,
                        belt: None,
                        baseline: base,
                        accuracy: base.map(|b| if b == noised { 1.0 } else { 0.0 }),
                    }
                }
                None => {
                    let noised = r.raw + laplace_sample(rng, r.scale);
                    let half = confidence_halfwidth(r.scale, BELT_COVERAGE);
                    ReleaseReport {
                        select: r.select,
                        aggregate: r.agg.to_string(),
                        key,
                        epsilon: r.epsilon,
                        delta_q: r.delta_q,
                        scale: r.scale,
                        noised,
                        choice: None,
                        raw: r.raw,
                        empty: r.empty,
                        belt: Some((r.raw - half, r.raw + half)),
                        baseline: base,
                        accuracy: base.map(|b| accuracy(noised, b)),
                    }
                }
            }
        })
        .collect()
}

/// `1 - |noised - baseline| / max(baseline, 1)`.
pub fn accuracy(noised: f64, baseline: f64) -> f64 {
    1.0 - (noised - baseline).abs() / baseline.max(1.0)
}

/// Runs a validated plan: preflight, admission, processing, evaluation
/// and noise. Nothing is processed unless the budget store admits the
/// query, and a denial leaves no trace in the store.
pub fn execute<R: Rng + ?Sized>(
    plan: &ValidatedPlan,
    traces: &BTreeMap<String, FrameStream>,
    store: &mut dyn BudgetStore,
    query_id: &str,
    opts: &QueryOptions,
    rng: &mut R,
) -> Result<QueryReport, PipelineError> {
    preflight(plan, traces)?;
    store.reserve(query_id, &plan.reservations())?;
    let tables = build_tables(plan, traces, &opts.run, None)?;
    let raw = evaluate_all(plan, &tables, true)?;
    let base = match opts.baseline {
        Some(b) => Some(compute_baseline(plan, traces, &opts.run, b)?),
        None => None,
    };
    Ok(QueryReport {
        query_id: query_id.into(),
        total_epsilon: plan.total_epsilon,
        releases: add_noise(&raw, base.as_deref(), rng),
    })
}

pub fn run_query<R: Rng + ?Sized>(
    text: &str,
    registry: &CameraRegistry,
    traces: &BTreeMap<String, FrameStream>,
    store: &mut dyn BudgetStore,
    query_id: &str,
    opts: &QueryOptions,
    rng: &mut R,
) -> Result<QueryReport, PipelineError> {
    let plan = prepare(text, registry, opts.query_epsilon)?;
    execute(&plan, traces, store, query_id, opts, rng)
}
