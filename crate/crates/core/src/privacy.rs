//! Per-frame budget accounting and the Laplace mechanism.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use thiserror::Error;

use crate::chunking::{max_chunk_span, ChunkSpec};
use crate::trace::Policy;

/// Slack when comparing budgets, so that `n` releases of `eps / n` fit in `eps`.
pub const BUDGET_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BudgetError {
    #[error("unknown camera {0}")]
    UnknownCamera(String),
    #[error("epsilon must be positive and finite, got {0}")]
    BadEpsilon(f64),
    #[error("camera {camera}: frame {frame} has {remaining} budget left, {requested} requested")]
    Exhausted {
        camera: String,
        frame: u64,
        remaining: f64,
        requested: f64,
    },
    #[error("malformed journal line: {0}")]
    BadJournal(String),
}

#[derive(Debug, Clone, PartialEq)]
struct CameraBudget {
    fps: u32,
    rho: f64,
    remaining: Vec<f64>,
}

/// A request to spend `epsilon` on frames `[first, end)` of a camera.
#[derive(Debug, Clone, PartialEq)]
pub struct Reservation {
    pub camera_id: String,
    pub first: u64,
    pub end: u64,
    pub epsilon: f64,
}

/// One committed reservation; the journal is a sequence of these.
#[derive(Debug, Clone, PartialEq)]
pub struct JournalEntry {
    pub query_id: String,
    pub camera_id: String,
    pub first: u64,
    pub end: u64,
    pub epsilon: f64,
}

impl JournalEntry {
    /// `query_id \t camera_id \t first \t end \t epsilon`
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{:?}",
            self.query_id, self.camera_id, self.first, self.end, self.epsilon
        )
    }

    pub fn parse_line(line: &str) -> Result<JournalEntry, BudgetError> {
        let bad = || BudgetError::BadJournal(line.to_string());
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(bad());
        }
        Ok(JournalEntry {
            query_id: f[0].to_string(),
            camera_id: f[1].to_string(),
            first: f[2].parse().map_err(|_| bad())?,
            end: f[3].parse().map_err(|_| bad())?,
            epsilon: f[4].parse().map_err(|_| bad())?,
        })
    }
}

/// Remaining budget per frame of every registered camera.
///
/// A query over frames `[a, b)` is admitted only if every frame within
/// `rho` of the window still has its cost available, and is then charged to
/// `[a, b)` alone. The margin covers events that straddle the window edge.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BudgetLedger {
    cameras: BTreeMap<String, CameraBudget>,
}

impl BudgetLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a camera with `policy.epsilon` available on each of its
    /// `n_frames` frames. `policy.rho` sets the admission margin.
    pub fn add_camera(&mut self, camera_id: impl Into<String>, fps: u32, n_frames: u64, policy: &Policy) {
        self.cameras.insert(
            camera_id.into(),
            CameraBudget {
                fps,
                rho: policy.rho,
                remaining: vec![policy.epsilon; n_frames as usize],
            },
        );
    }

    pub fn remaining(&self, camera_id: &str, frame: u64) -> Option<f64> {
        self.cameras
            .get(camera_id)
            .and_then(|c| c.remaining.get(frame as usize).copied())
    }

    /// Smallest remaining budget over `[first, end)`.
    pub fn min_remaining(&self, camera_id: &str, first: u64, end: u64) -> Option<f64> {
        let c = self.cameras.get(camera_id)?;
        let end = (end as usize).min(c.remaining.len());
        let first = (first as usize).min(end);
        c.remaining[first..end].iter().copied().reduce(f64::min)
    }

    /// Largest remaining budget over `[first, end)`.
    pub fn max_remaining(&self, camera_id: &str, first: u64, end: u64) -> Option<f64> {
        let c = self.cameras.get(camera_id)?;
        let end = (end as usize).min(c.remaining.len());
        let first = (first as usize).min(end);
        c.remaining[first..end].iter().copied().reduce(f64::max)
    }

    pub fn frame_count(&self, camera_id: &str) -> Option<u64> {
        self.cameras.get(camera_id).map(|c| c.remaining.len() as u64)
    }

    fn check_one(&self, r: &Reservation) -> Result<(), BudgetError> {
        if !(r.epsilon > 0.0 && r.epsilon.is_finite()) {
            return Err(BudgetError::BadEpsilon(r.epsilon));
        }
        let c = self
            .cameras
            .get(&r.camera_id)
            .ok_or_else(|| BudgetError::UnknownCamera(r.camera_id.clone()))?;
        if r.first >= r.end {
            return Ok(());
        }
        let margin = libm::ceil(c.rho * f64::from(c.fps) - 1e-9).max(0.0) as u64;
        let lo = r.first.saturating_sub(margin) as usize;
        let hi = (r.end.saturating_add(margin) as usize).min(c.remaining.len());
        for f in lo..hi {
            if c.remaining[f] < r.epsilon - BUDGET_TOLERANCE {
                return Err(BudgetError::Exhausted {
                    camera: r.camera_id.clone(),
                    frame: f as u64,
                    remaining: c.remaining[f],
                    requested: r.epsilon,
                });
            }
        }
        Ok(())
    }

    fn deduct(&mut self, camera_id: &str, first: u64, end: u64, eps: f64) {
        if let Some(c) = self.cameras.get_mut(camera_id) {
            let end = (end as usize).min(c.remaining.len());
            let first = (first as usize).min(end);
            for v in &mut c.remaining[first..end] {
                *v -= eps;
            }
        }
    }

    /// Admits all reservations or none. On success the budgets are debited
    /// and the journal entries to persist are returned.
    pub fn check_and_reserve(
        &mut self,
        query_id: &str,
        reservations: &[Reservation],
    ) -> Result<Vec<JournalEntry>, BudgetError> {
        let mut trial = self.clone();
        let mut entries = Vec::with_capacity(reservations.len());
        for r in reservations {
            trial.check_one(r)?;
            trial.deduct(&r.camera_id, r.first, r.end, r.epsilon);
            entries.push(JournalEntry {
                query_id: query_id.to_string(),
                camera_id: r.camera_id.clone(),
                first: r.first,
                end: r.end,
                epsilon: r.epsilon,
            });
        }
        *self = trial;
        Ok(entries)
    }

    /// Re-applies a committed entry, e.g. when loading a journal.
    pub fn replay(&mut self, entry: &JournalEntry) -> Result<(), BudgetError> {
        if !self.cameras.contains_key(&entry.camera_id) {
            return Err(BudgetError::UnknownCamera(entry.camera_id.clone()));
        }
        self.deduct(&entry.camera_id, entry.first, entry.end, entry.epsilon);
        Ok(())
    }
}

/// One draw from Laplace(0, b) by inverse CDF.
pub fn laplace_sample<R: Rng + ?Sized>(rng: &mut R, b: f64) -> f64 {
    if b == 0.0 {
        return 0.0;
    }
    let mut u: f64 = rng.gen::<f64>() - 0.5;
    while u == -0.5 {
        u = rng.gen::<f64>() - 0.5;
    }
    -b * u.signum() * libm::log1p(-2.0 * u.abs())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoisyRelease {
    pub value: f64,
    /// Laplace scale `delta_q / epsilon`.
    pub scale: f64,
}

pub fn release<R: Rng + ?Sized>(raw: f64, delta_q: f64, epsilon: f64, rng: &mut R) -> NoisyRelease {
    let scale = delta_q / epsilon;
    NoisyRelease {
        value: raw + laplace_sample(rng, scale),
        scale,
    }
}

/// Laplace scale for report-noisy-max over per-key counts. The scores are
/// not monotone in the input (a changed row can move from one key to
/// another), so each score gets `2 * delta / epsilon`.
pub fn argmax_scale(delta: f64, epsilon: f64) -> f64 {
    2.0 * delta / epsilon
}

/// Index of the largest noisy score; ties go to the first.
pub fn noisy_argmax<R: Rng + ?Sized>(scores: &[f64], delta: f64, epsilon: f64, rng: &mut R) -> Option<usize> {
    let b = argmax_scale(delta, epsilon);
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        let v = s + laplace_sample(rng, b);
        if best.is_none_or(|(_, bv)| v > bv) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Half-width `h` with `P(|Laplace(b)| <= h) = p`.
pub fn confidence_halfwidth(b: f64, p: f64) -> f64 {
    -b * libm::log(1.0 - p)
}

/// Privacy loss for an event bounded by `(rho_actual, k_actual)` under a
/// policy tuned for `(policy.rho, policy.k)`:
/// `epsilon * (K' * span(rho')) / (K * span(rho))`.
pub fn effective_epsilon(policy: &Policy, chunk: &ChunkSpec, rho_actual: f64, k_actual: u32) -> f64 {
    let actual = f64::from(k_actual) * max_chunk_span(rho_actual, chunk) as f64;
    let budgeted = f64::from(policy.k) * max_chunk_span(policy.rho, chunk) as f64;
    if actual == 0.0 {
        0.0
    } else if budgeted == 0.0 {
        f64::INFINITY
    } else {
        policy.epsilon * actual / budgeted
    }
}

/// Best detection probability of an adversary whose prior success is
/// `alpha`: `min(e^eps * alpha, e^-eps * (alpha - (1 - e^eps)))` in `[0, 1]`.
pub fn detection_bound(epsilon: f64, alpha: f64) -> f64 {
    let e = libm::exp(epsilon);
    let a = e * alpha;
    let b = (alpha - (1.0 - e)) / e;
    a.min(b).clamp(0.0, 1.0)
}
