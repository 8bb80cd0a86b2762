//! Per-release sensitivity breakdown, as shown by `submit-query --explain`.

use std::fmt::Write;

use serde::Serialize;
use vidpriv_core::query::{AggFunc, ValidatedPlan};

use crate::pipeline::release_scale;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExplainRow {
    pub select: usize,
    pub aggregate: String,
    pub key: Vec<String>,
    /// Rows that may differ in the aggregated relation.
    pub delta: f64,
    pub cr: Option<f64>,
    pub cs: Option<f64>,
    pub delta_q: f64,
    pub epsilon: f64,
    pub scale: f64,
}

pub fn explain(plan: &ValidatedPlan) -> Vec<ExplainRow> {
    let mut rows = Vec::new();
    for (i, sel) in plan.selects.iter().enumerate() {
        let a = &sel.analysis;
        let row = |key: Vec<String>| ExplainRow {
            select: i,
            aggregate: a.agg.to_string(),
            key,
            delta: a.input.delta,
            cr: a.cr.filter(|_| !matches!(a.agg, AggFunc::Count | AggFunc::Argmax)),
            cs: a.input.cs,
            delta_q: a.delta_q,
            epsilon: sel.epsilon,
            scale: release_scale(sel),
        };
        if a.release_count() == 1 {
            rows.push(row(Vec::new()));
        } else {
            for k in &a.keys {
                rows.push(row(k.iter().map(ToString::to_string).collect()));
            }
        }
    }
    rows
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v}"))
}

pub fn render(plan: &ValidatedPlan) -> String {
    let mut out = String::new();
    for s in &plan.splits {
        let _ = writeln!(
            out,
            "split {}: camera {} frames [{}, {}) chunk {} pitch {} frames, {} chunks, rho {} s, K {}",
            s.spec.output,
            s.camera.camera_id,
            s.first_frame,
            s.end_frame,
            s.chunk.chunk_frames,
            s.chunk.pitch_frames,
            s.n_chunks,
            s.policy.rho,
            s.policy.k
        );
    }
    let _ = writeln!(
        out,
        "{:<4} {:<7} {:<16} {:>10} {:>10} {:>12} {:>12} {:>8} {:>12}",
        "sel", "agg", "key", "delta", "Cr", "Cs", "delta_q", "eps", "b"
    );
    for r in explain(plan) {
        let key = if r.key.is_empty() {
            "-".to_string()
        } else {
            r.key.join(",")
        };
        let _ = writeln!(
            out,
            "{:<4} {:<7} {:<16} {:>10} {:>10} {:>12} {:>12} {:>8.4} {:>12.4}",
            r.select + 1,
            r.aggregate,
            key,
            r.delta,
            opt(r.cr),
            opt(r.cs),
            r.delta_q,
            r.epsilon,
            r.scale
        );
    }
    let _ = writeln!(out, "total epsilon {}", plan.total_epsilon);
    out
}
