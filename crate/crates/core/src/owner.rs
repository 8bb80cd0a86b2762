//! Camera owner tooling: registry records, policy estimation and masks.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::chunking::{apply_mask, Mask, RegionScheme};
use crate::trace::{FrameStream, Grid, Policy};

/// A mask together with the policy that holds once it is applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskEntry {
    pub mask: Mask,
    pub rho: f64,
    pub k: u32,
}

/// Public metadata the owner registers for a camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraMeta {
    pub camera_id: String,
    pub fps: u32,
    /// Epoch seconds of frame 0.
    pub start_time: i64,
    pub n_frames: u64,
    pub grid: Grid,
    pub policy: Policy,
    #[serde(default)]
    pub masks: Vec<MaskEntry>,
    #[serde(default)]
    pub region_schemes: Vec<RegionScheme>,
}

impl CameraMeta {
    pub fn mask(&self, mask_id: &str) -> Option<&MaskEntry> {
        self.masks.iter().find(|m| m.mask.mask_id == mask_id)
    }

    pub fn region_scheme(&self, scheme_id: &str) -> Option<&RegionScheme> {
        self.region_schemes.iter().find(|s| s.scheme_id == scheme_id)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CameraRegistry {
    pub cameras: BTreeMap<String, CameraMeta>,
}

impl CameraRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, meta: CameraMeta) {
        self.cameras.insert(meta.camera_id.clone(), meta);
    }

    pub fn get(&self, camera_id: &str) -> Option<&CameraMeta> {
        self.cameras.get(camera_id)
    }
}

/// The policy that applies to a split: the camera's own, or the one
/// recorded for the mask.
pub fn camera_policy(camera: &CameraMeta, mask_id: Option<&str>) -> Option<Policy> {
    match mask_id {
        None => Some(camera.policy),
        Some(id) => camera.mask(id).map(|m| Policy {
            rho: m.rho,
            k: m.k,
            epsilon: camera.policy.epsilon,
        }),
    }
}

/// Visibility statistics of a trace under a mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Persistence {
    /// Longest observable run over all entities, in frames.
    pub max_run: u64,
    /// Most observable runs of any single entity.
    pub max_runs: u32,
    /// Entities with at least one observable detection.
    pub visible: usize,
    pub total: usize,
}

/// Knobs for [`estimate_policy`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateOptions {
    /// Multiplier (at least 1) applied to the observed longest segment.
    pub safety: f64,
    /// Quantile across entities; 1.0 takes the maximum so every entity is
    /// covered.
    pub coverage: f64,
    /// Ignore entities that are visible in every frame of the trace.
    pub exclude_parked: bool,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions {
            safety: 1.0,
            coverage: 1.0,
            exclude_parked: false,
        }
    }
}

/// Estimates `(rho seconds, k)` from ground-truth entity ids: the longest
/// segment of any entity (times `safety`) and the most segments of any
/// entity. An empty trace gives `(0, 0)`.
pub fn estimate_policy(stream: &FrameStream, opts: &EstimateOptions) -> (f64, u32) {
    let n = stream.len() as u64;
    let segs = crate::trace::entity_segments(stream);
    let mut rhos: Vec<f64> = Vec::with_capacity(segs.len());
    let mut ks: Vec<u32> = Vec::with_capacity(segs.len());
    for ev in segs.values() {
        let s = ev.segments();
        let parked = s.len() == 1 && s[0].first_frame == 0 && s[0].last_frame + 1 == n;
        if opts.exclude_parked && parked {
            continue;
        }
        let (rho, k) = crate::trace::bound_of(ev, stream.fps);
        rhos.push(rho);
        ks.push(k);
    }
    rhos.sort_by(f64::total_cmp);
    ks.sort_unstable();
    (
        quantile(&rhos, opts.coverage).unwrap_or(0.0) * opts.safety.max(1.0),
        quantile(&ks, opts.coverage).unwrap_or(0),
    )
}

/// The policy observable once `mask` is applied to every frame.
pub fn policy_for_mask(stream: &FrameStream, mask: &Mask, opts: &EstimateOptions) -> (f64, u32) {
    estimate_policy(&stream.map_frames(|f| apply_mask(f, mask)), opts)
}

fn quantile<T: Copy>(sorted: &[T], q: f64) -> Option<T> {
    if sorted.is_empty() {
        return None;
    }
    let q = q.clamp(0.0, 1.0);
    let idx = libm::ceil(q * sorted.len() as f64) as usize;
    Some(sorted[idx.clamp(1, sorted.len()) - 1])
}

type Coverage = Vec<(usize, f64)>;

/// Precomputed box/cell overlaps so masks can be evaluated quickly.
pub struct MaskIndex {
    grid: Grid,
    threshold: f64,
    entities: Vec<String>,
    /// Per frame: `(entity, [(cell, covered fraction)])`.
    frames: Vec<Vec<(usize, Coverage)>>,
}

impl MaskIndex {
    pub fn new(stream: &FrameStream, threshold: f64) -> MaskIndex {
        let grid = stream.grid;
        let mut ids: BTreeMap<&str, usize> = BTreeMap::new();
        for f in stream.frames() {
            for d in &f.detections {
                let n = ids.len();
                ids.entry(d.entity_id.as_str()).or_insert(n);
            }
        }
        let frames = stream
            .frames()
            .iter()
            .map(|f| {
                f.detections
                    .iter()
                    .map(|d| {
                        let area = d.bbox.area();
                        let cells = d
                            .bbox
                            .cells(grid)
                            .map(|(c, r)| {
                                let frac = if area > 0.0 {
                                    d.bbox.overlap_with_cell(c, r) / area
                                } else {
                                    0.0
                                };
                                ((r * grid.cols + c) as usize, frac)
                            })
                            .filter(|(_, frac)| *frac > 0.0)
                            .collect();
                        (ids[d.entity_id.as_str()], cells)
                    })
                    .collect()
            })
            .collect();
        let mut entities = vec![String::new(); ids.len()];
        for (id, i) in ids {
            entities[i] = id.into();
        }
        MaskIndex {
            grid,
            threshold,
            entities,
            frames,
        }
    }

    fn cell_set(&self, cells: &BTreeSet<(u32, u32)>) -> Vec<bool> {
        let mut set = vec![false; self.grid.cell_count()];
        for &(c, r) in cells {
            if self.grid.contains((c, r)) {
                set[(r * self.grid.cols + c) as usize] = true;
            }
        }
        set
    }

    fn observable(&self, cells: &[(usize, f64)], masked: &[bool]) -> bool {
        let covered: f64 = cells.iter().filter(|(c, _)| masked[*c]).map(|(_, f)| f).sum();
        covered < self.threshold - 1e-12
    }

    /// Observable runs per entity as `(first_frame, last_frame)`.
    fn runs(&self, masked: &[bool]) -> Vec<Vec<(u64, u64)>> {
        let mut runs: Vec<Vec<(u64, u64)>> = vec![Vec::new(); self.entities.len()];
        for (fi, dets) in self.frames.iter().enumerate() {
            let fi = fi as u64;
            for (e, cells) in dets {
                if !self.observable(cells, masked) {
                    continue;
                }
                match runs[*e].last_mut() {
                    Some(last) if last.1 + 1 == fi => last.1 = fi,
                    _ => runs[*e].push((fi, fi)),
                }
            }
        }
        runs
    }

    pub fn persistence(&self, cells: &BTreeSet<(u32, u32)>) -> Persistence {
        let runs = self.runs(&self.cell_set(cells));
        Persistence {
            max_run: runs
                .iter()
                .flat_map(|r| r.iter().map(|(a, b)| b - a + 1))
                .max()
                .unwrap_or(0),
            max_runs: runs.iter().map(|r| r.len() as u32).max().unwrap_or(0),
            visible: runs.iter().filter(|r| !r.is_empty()).count(),
            total: self.entities.len(),
        }
    }

    /// The longest observable run: `(entity, first, last)`, earliest entity
    /// id and then earliest run on ties.
    fn longest_run(&self, masked: &[bool]) -> Option<(usize, u64, u64)> {
        let runs = self.runs(masked);
        let mut order: Vec<usize> = (0..self.entities.len()).collect();
        order.sort_by(|a, b| self.entities[*a].cmp(&self.entities[*b]));
        let mut best: Option<(usize, u64, u64)> = None;
        for e in order {
            for &(a, b) in &runs[e] {
                if best.is_none_or(|(_, x, y)| b - a > y - x) {
                    best = Some((e, a, b));
                }
            }
        }
        best
    }

    /// For each cell, the number of frames of the run whose box touches it.
    fn run_cells(&self, entity: usize, first: u64, last: u64) -> BTreeMap<(u32, u32), u64> {
        let mut out = BTreeMap::new();
        for f in first..=last {
            for (e, cells) in &self.frames[f as usize] {
                if *e == entity {
                    for (c, _) in cells {
                        let c = *c as u32;
                        *out.entry((c % self.grid.cols, c / self.grid.cols)).or_insert(0) += 1;
                    }
                }
            }
        }
        out
    }
}

/// One step of the mask ladder: the cell added and the state after
/// masking it together with every earlier cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderStep {
    pub cell: (u32, u32),
    /// Longest observable segment after this step, frames.
    pub max_persistence: u64,
    /// Most observable segments of any entity after this step.
    pub max_segments: u32,
    /// Fraction of entities still observable somewhere.
    pub identities_retained: f64,
}

/// Greedy ordering of cells to mask, with per-prefix persistence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskLadder {
    pub fps: u32,
    pub threshold: f64,
    /// Longest observable segment with nothing masked, frames.
    pub initial_persistence: u64,
    pub steps: Vec<LadderStep>,
}

impl MaskLadder {
    /// The cells of the first `n` steps.
    pub fn prefix(&self, n: usize) -> BTreeSet<(u32, u32)> {
        self.steps.iter().take(n).map(|s| s.cell).collect()
    }

    /// The mask made of the first `n` steps, with its `(rho, k)`.
    pub fn mask_entry(&self, mask_id: &str, n: usize) -> Option<MaskEntry> {
        let step = self.steps.get(n.checked_sub(1)?)?;
        Some(MaskEntry {
            mask: Mask::new(mask_id, self.prefix(n), self.threshold).ok()?,
            rho: step.max_persistence as f64 / f64::from(self.fps),
            k: step.max_segments,
        })
    }
}

/// Score of adding `cell`: resulting longest run, then (negated) how many
/// frames of the current longest run it touches, then position.
fn candidate_order(a: &(u64, u64, (u32, u32)), b: &(u64, u64, (u32, u32))) -> core::cmp::Ordering {
    a.0.cmp(&b.0)
        .then(b.1.cmp(&a.1))
        .then((a.2 .1, a.2 .0).cmp(&(b.2 .1, b.2 .0)))
}

/// Picks the next cell to mask: among unmasked cells touched by the
/// currently longest observable run, the one that minimizes the longest
/// run after masking.
pub fn next_mask_cell(index: &MaskIndex, masked: &BTreeSet<(u32, u32)>) -> Option<(u32, u32)> {
    let set = index.cell_set(masked);
    let (e, a, b) = index.longest_run(&set)?;
    let touched = index.run_cells(e, a, b);
    let mut best: Option<(u64, u64, (u32, u32))> = None;
    for (cell, frames) in touched {
        if masked.contains(&cell) {
            continue;
        }
        let mut trial = masked.clone();
        trial.insert(cell);
        let cand = (index.persistence(&trial).max_run, frames, cell);
        if best.as_ref().is_none_or(|b| candidate_order(&cand, b).is_lt()) {
            best = Some(cand);
        }
    }
    best.map(|(_, _, c)| c)
}

/// Greedy ordering of up to `max_steps` cells. Each step masks one more
/// cell and never increases the longest observable segment. Stops once
/// nothing is observable.
pub fn mask_ladder(stream: &FrameStream, threshold: f64, max_steps: usize) -> MaskLadder {
    let index = MaskIndex::new(stream, threshold);
    let mut cells = BTreeSet::new();
    let mut steps = Vec::new();
    while steps.len() < max_steps {
        let Some(cell) = next_mask_cell(&index, &cells) else {
            break;
        };
        cells.insert(cell);
        let p = index.persistence(&cells);
        steps.push(LadderStep {
            cell,
            max_persistence: p.max_run,
            max_segments: p.max_runs,
            identities_retained: if p.total == 0 {
                1.0
            } else {
                p.visible as f64 / p.total as f64
            },
        });
    }
    MaskLadder {
        fps: stream.fps,
        threshold,
        initial_persistence: index.persistence(&BTreeSet::new()).max_run,
        steps,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{BBox, Detection, Frame};

    fn stream(tracks: &[(&str, u32, u32, u64, u64)], n: u64) -> FrameStream {
        let frames = (0..n)
            .map(|i| {
                Frame::new(
                    i,
                    tracks
                        .iter()
                        .filter(|t| t.3 <= i && i <= t.4)
                        .map(|t| Detection::new(t.0, "car", BBox::new(f64::from(t.1), f64::from(t.2), 1.0, 1.0)))
                        .collect(),
                )
            })
            .collect();
        FrameStream::new("c", 1, 0, Grid::new(3, 3), frames).unwrap()
    }

    #[test]
    fn policy_estimate() {
        let s = stream(&[("a", 0, 0, 0, 9), ("b", 1, 1, 2, 3)], 12);
        assert_eq!(estimate_policy(&s, &EstimateOptions::default()), (10.0, 1));
        let half = EstimateOptions {
            coverage: 0.5,
            ..Default::default()
        };
        assert_eq!(estimate_policy(&s, &half).0, 2.0);
        let safe = EstimateOptions {
            safety: 1.25,
            ..Default::default()
        };
        assert_eq!(estimate_policy(&s, &safe).0, 12.5);
    }

    #[test]
    fn parked_entities_can_be_excluded() {
        let s = stream(&[("parked", 2, 2, 0, 11), ("a", 0, 0, 3, 5)], 12);
        assert_eq!(estimate_policy(&s, &EstimateOptions::default()).0, 12.0);
        let opts = EstimateOptions {
            exclude_parked: true,
            ..Default::default()
        };
        assert_eq!(estimate_policy(&s, &opts), (3.0, 1));
    }

    #[test]
    fn masking_a_parked_cell() {
        let mut tracks = vec![("parked", 2, 2, 0, 999)];
        tracks.push(("mover", 0, 1, 100, 159));
        let s = stream(&tracks, 1000);
        let opts = EstimateOptions::default();
        let empty = Mask::empty("none");
        assert_eq!(policy_for_mask(&s, &empty, &opts), estimate_policy(&s, &opts));
        let m = Mask::new("p", [(2, 2)], 0.5).unwrap();
        assert_eq!(policy_for_mask(&s, &m, &opts), (60.0, 1));
        let all = Mask::new("all", Grid::new(3, 3).cells(), 0.5).unwrap();
        assert_eq!(policy_for_mask(&s, &all, &opts), (0.0, 0));
    }

    #[test]
    fn ladder_masks_the_lingering_entity_first() {
        let s = stream(
            &[("parked", 2, 2, 0, 99), ("a", 0, 0, 10, 14), ("b", 1, 0, 30, 33)],
            100,
        );
        let ladder = mask_ladder(&s, 0.5, 5);
        assert_eq!(ladder.initial_persistence, 100);
        assert_eq!(ladder.steps[0].cell, (2, 2));
        assert_eq!(ladder.steps[0].max_persistence, 5);
        assert!((ladder.steps[0].identities_retained - 2.0 / 3.0).abs() < 1e-12);
        assert!(ladder
            .steps
            .windows(2)
            .all(|w| w[1].max_persistence <= w[0].max_persistence));
        assert_eq!(ladder.steps.last().unwrap().max_persistence, 0);
        let entry = ladder.mask_entry("m1", 1).unwrap();
        assert_eq!((entry.rho, entry.k), (5.0, 1));
        assert_eq!(policy_for_mask(&s, &entry.mask, &EstimateOptions::default()), (5.0, 1));
    }

    #[test]
    fn ladder_prefers_the_long_cell() {
        let frames = (0..105)
            .map(|i| {
                let y = if i < 100 { 0.0 } else { 1.0 };
                Frame::new(i, vec![Detection::new("e", "car", BBox::new(0.0, y, 1.0, 1.0))])
            })
            .collect();
        let s = FrameStream::new("c", 1, 0, Grid::new(2, 2), frames).unwrap();
        let ladder = mask_ladder(&s, 0.5, 4);
        assert_eq!(ladder.steps[0].cell, (0, 0));
        assert_eq!(ladder.steps[0].max_persistence, 5);
    }

    #[test]
    fn empty_trace_has_empty_ladder() {
        let s = stream(&[], 10);
        assert!(mask_ladder(&s, 0.5, 4).steps.is_empty());
        assert_eq!(estimate_policy(&s, &EstimateOptions::default()), (0.0, 0));
    }

    #[test]
    fn mask_policy_lookup() {
        let meta = CameraMeta {
            camera_id: "c".into(),
            fps: 1,
            start_time: 0,
            n_frames: 10,
            grid: Grid::new(2, 2),
            policy: Policy::new(30.0, 2, 1.0).unwrap(),
            masks: vec![MaskEntry {
                mask: Mask::new("m", [(0, 0)], 0.5).unwrap(),
                rho: 5.0,
                k: 1,
            }],
            region_schemes: Vec::new(),
        };
        assert_eq!(camera_policy(&meta, None), Some(meta.policy));
        assert_eq!(camera_policy(&meta, Some("m")), Some(Policy::new(5.0, 1, 1.0).unwrap()));
        assert_eq!(camera_policy(&meta, Some("x")), None);
    }
}
