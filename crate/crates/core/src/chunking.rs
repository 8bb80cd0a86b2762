//! Temporal chunking, masking and spatial region splitting.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::query::{DurationLit, SplitSpec};
use crate::trace::{Detection, Frame, FrameStream, Grid};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChunkError {
    #[error("chunk duration {0} s is not a whole number of frames")]
    FractionalChunk(f64),
    #[error("stride {0} s is not a whole number of frames")]
    FractionalStride(f64),
    #[error("chunk duration must be positive")]
    EmptyChunk,
    #[error("chunk + stride must be positive")]
    NonPositivePitch,
    #[error("mask threshold must be in (0, 1]")]
    BadThreshold,
    #[error("cell ({0}, {1}) lies outside the grid")]
    CellOutsideGrid(u32, u32),
    #[error("region scheme must partition the grid: cell ({0}, {1}) {2}")]
    NotAPartition(u32, u32, &'static str),
}

/// Chunk length and start-to-start pitch, both in frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkSpec {
    pub chunk_frames: u64,
    pub pitch_frames: u64,
    pub fps: u32,
}

impl ChunkSpec {
    pub fn new(chunk_frames: u64, pitch_frames: u64, fps: u32) -> Result<Self, ChunkError> {
        if chunk_frames == 0 {
            return Err(ChunkError::EmptyChunk);
        }
        if pitch_frames == 0 {
            return Err(ChunkError::NonPositivePitch);
        }
        Ok(ChunkSpec {
            chunk_frames,
            pitch_frames,
            fps,
        })
    }

    /// Chunk and stride as written in a query. Stride may be negative
    /// (overlapping chunks) as long as the pitch stays positive.
    pub fn from_durations(chunk: DurationLit, stride: DurationLit, fps: u32) -> Result<Self, ChunkError> {
        let c = chunk
            .to_frames(fps)
            .ok_or(ChunkError::FractionalChunk(chunk.seconds(fps)))?;
        let s = stride
            .to_frames(fps)
            .ok_or(ChunkError::FractionalStride(stride.seconds(fps)))?;
        if c <= 0 {
            return Err(ChunkError::EmptyChunk);
        }
        if c + s <= 0 {
            return Err(ChunkError::NonPositivePitch);
        }
        ChunkSpec::new(c as u64, (c + s) as u64, fps)
    }

    /// Number of chunks whose first frame lies inside a window of
    /// `window_frames` frames.
    pub fn chunk_count(&self, window_frames: u64) -> u64 {
        window_frames.div_ceil(self.pitch_frames)
    }

    pub fn chunk_seconds(&self) -> f64 {
        self.chunk_frames as f64 / f64::from(self.fps)
    }
}

/// Most chunks a single segment of duration `rho` seconds can touch:
/// `ceil((F_e - 1 + F_c) / F_p)` with `F_e = max(1, ceil(rho * fps))`.
///
/// At stride 0 this never exceeds `1 + ceil(rho / c)`.
pub fn max_chunk_span(rho: f64, spec: &ChunkSpec) -> u64 {
    let fe = segment_frames(rho, spec.fps);
    (fe - 1 + spec.chunk_frames).div_ceil(spec.pitch_frames)
}

/// Frames covered by a segment of `rho` seconds, at least one.
pub fn segment_frames(rho: f64, fps: u32) -> u64 {
    let f = libm::ceil(rho * f64::from(fps) - 1e-9);
    if f < 1.0 {
        1
    } else {
        f as u64
    }
}

/// Fixed set of grid cells whose detections are removed before processing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mask {
    pub mask_id: String,
    pub cells: BTreeSet<(u32, u32)>,
    /// A detection is dropped once this fraction of its box is masked.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_threshold() -> f64 {
    0.5
}

impl Mask {
    pub fn new(
        mask_id: impl Into<String>,
        cells: impl IntoIterator<Item = (u32, u32)>,
        threshold: f64,
    ) -> Result<Self, ChunkError> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(ChunkError::BadThreshold);
        }
        Ok(Mask {
            mask_id: mask_id.into(),
            cells: cells.into_iter().collect(),
            threshold,
        })
    }

    pub fn empty(mask_id: impl Into<String>) -> Self {
        Mask {
            mask_id: mask_id.into(),
            cells: BTreeSet::new(),
            threshold: default_threshold(),
        }
    }

    pub fn check_grid(&self, grid: Grid) -> Result<(), ChunkError> {
        match self.cells.iter().find(|c| !grid.contains(**c)) {
            Some(&(c, r)) => Err(ChunkError::CellOutsideGrid(c, r)),
            None => Ok(()),
        }
    }

    /// Fraction of the box area that falls in masked cells.
    pub fn covered_fraction(&self, det: &Detection) -> f64 {
        let area = det.bbox.area();
        if area <= 0.0 || self.cells.is_empty() {
            return 0.0;
        }
        let covered: f64 = self.cells.iter().map(|&(c, r)| det.bbox.overlap_with_cell(c, r)).sum();
        covered / area
    }

    pub fn hides(&self, det: &Detection) -> bool {
        self.covered_fraction(det) >= self.threshold - 1e-12
    }
}

/// Drops every detection whose masked fraction reaches the threshold.
pub fn apply_mask(frame: &Frame, mask: &Mask) -> Frame {
    Frame {
        index: frame.index,
        detections: frame.detections.iter().filter(|d| !mask.hides(d)).cloned().collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryKind {
    /// Entities may cross between regions; requires single-frame chunks.
    Soft,
    /// Entities never cross.
    Hard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionScheme {
    pub scheme_id: String,
    pub regions: Vec<Vec<(u32, u32)>>,
    pub boundary: BoundaryKind,
}

impl RegionScheme {
    pub fn new(
        scheme_id: impl Into<String>,
        regions: Vec<Vec<(u32, u32)>>,
        boundary: BoundaryKind,
        grid: Grid,
    ) -> Result<Self, ChunkError> {
        let scheme = RegionScheme {
            scheme_id: scheme_id.into(),
            regions,
            boundary,
        };
        scheme.cell_lookup(grid)?;
        Ok(scheme)
    }

    /// Region index per cell in row-major order, verifying the partition.
    pub fn cell_lookup(&self, grid: Grid) -> Result<Vec<u32>, ChunkError> {
        let mut lookup = vec![u32::MAX; grid.cell_count()];
        for (i, region) in self.regions.iter().enumerate() {
            for &(c, r) in region {
                if !grid.contains((c, r)) {
                    return Err(ChunkError::CellOutsideGrid(c, r));
                }
                let slot = &mut lookup[(r * grid.cols + c) as usize];
                if *slot != u32::MAX {
                    return Err(ChunkError::NotAPartition(c, r, "is in two regions"));
                }
                *slot = i as u32;
            }
        }
        if let Some(pos) = lookup.iter().position(|&s| s == u32::MAX) {
            let pos = pos as u32;
            return Err(ChunkError::NotAPartition(
                pos % grid.cols,
                pos / grid.cols,
                "is in no region",
            ));
        }
        Ok(lookup)
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }
}

/// Cell containing the center of a detection's box, clamped to the grid.
pub fn center_cell(det: &Detection, grid: Grid) -> (u32, u32) {
    let (cx, cy) = det.bbox.center();
    let c = (libm::floor(cx).max(0.0) as u32).min(grid.cols - 1);
    let r = (libm::floor(cy).max(0.0) as u32).min(grid.rows - 1);
    (c, r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub chunk_index: u64,
    /// 0 when the split has no region scheme.
    pub region_id: u32,
    /// Epoch seconds of the first frame.
    pub t0: f64,
    pub frames: Vec<Frame>,
}

/// Frame window `[first, end)` a split selects from a stream.
pub fn split_window(stream: &FrameStream, spec: &SplitSpec) -> (u64, u64) {
    window_frames(stream.start_time, stream.fps, stream.len() as u64, spec.begin, spec.end)
}

/// Frame window `[first, end)` for epoch bounds `[begin, end)`, clipped to
/// `0..n_frames`.
pub fn window_frames(start_time: i64, fps: u32, n_frames: u64, begin: i64, end: i64) -> (u64, u64) {
    let to_frame = |t: i64| -> u64 {
        let f = (i128::from(t) - i128::from(start_time)) * i128::from(fps);
        f.clamp(0, i128::from(n_frames)) as u64
    };
    let (a, b) = (to_frame(begin), to_frame(end));
    if a >= b {
        (a, a)
    } else {
        (a, b)
    }
}

/// Splits `stream` per the query's SPLIT statement.
pub fn split(
    stream: &FrameStream,
    spec: &SplitSpec,
    mask: Option<&Mask>,
    scheme: Option<&RegionScheme>,
) -> Result<Vec<Chunk>, ChunkError> {
    let chunk_spec = ChunkSpec::from_durations(spec.chunk, spec.stride, stream.fps)?;
    let (first, end) = split_window(stream, spec);
    split_frames(stream, first, end, &chunk_spec, mask, scheme)
}

/// Chunk `k` covers frames `[first + k*F_p, first + k*F_p + F_c)` clipped to
/// `end`. The mask is applied to every frame first; with a region scheme
/// each time chunk yields one chunk per region holding the detections whose
/// box center falls in that region.
pub fn split_frames(
    stream: &FrameStream,
    first: u64,
    end: u64,
    spec: &ChunkSpec,
    mask: Option<&Mask>,
    scheme: Option<&RegionScheme>,
) -> Result<Vec<Chunk>, ChunkError> {
    if first >= end {
        return Ok(Vec::new());
    }
    let lookup = scheme.map(|s| s.cell_lookup(stream.grid)).transpose()?;
    let n_regions = scheme.map_or(1, |s| s.len().max(1)) as u32;
    let frames = stream.frames();
    let n = spec.chunk_count(end - first);
    let mut out = Vec::with_capacity((n * u64::from(n_regions)) as usize);
    for k in 0..n {
        let lo = first + k * spec.pitch_frames;
        let hi = (lo + spec.chunk_frames).min(end);
        let masked: Vec<Frame> = frames[lo as usize..hi as usize]
            .iter()
            .map(|f| match mask {
                Some(m) => apply_mask(f, m),
                None => f.clone(),
            })
            .collect();
        let t0 = stream.frame_time(lo);
        match &lookup {
            None => out.push(Chunk {
                chunk_index: k,
                region_id: 0,
                t0,
                frames: masked,
            }),
            Some(lookup) => {
                for region in 0..n_regions {
                    let frames = masked
                        .iter()
                        .map(|f| Frame {
                            index: f.index,
                            detections: f
                                .detections
                                .iter()
                                .filter(|d| {
                                    let (c, r) = center_cell(d, stream.grid);
                                    lookup[(r * stream.grid.cols + c) as usize] == region
                                })
                                .cloned()
                                .collect(),
                        })
                        .collect();
                    out.push(Chunk {
                        chunk_index: k,
                        region_id: region,
                        t0,
                        frames,
                    });
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::BBox;

    fn spec(c: u64, p: u64, fps: u32) -> ChunkSpec {
        ChunkSpec::new(c, p, fps).unwrap()
    }

    /// Distinct chunks touched by a segment of `fe` frames, maximized over
    /// every start offset within two pitches.
    fn span_by_enumeration(fe: u64, s: &ChunkSpec) -> u64 {
        (0..2 * s.pitch_frames + s.chunk_frames)
            .map(|start| {
                let end = start + fe - 1;
                let hi_k = end / s.pitch_frames;
                (0..=hi_k)
                    .filter(|k| {
                        let lo = k * s.pitch_frames;
                        lo <= end && start < lo + s.chunk_frames
                    })
                    .count() as u64
            })
            .max()
            .unwrap()
    }

    #[test]
    fn span_examples() {
        assert_eq!(max_chunk_span(30.0, &spec(5, 5, 1)), 7);
        assert_eq!(span_by_enumeration(30, &spec(5, 5, 1)), 7);
        assert_eq!(max_chunk_span(0.0, &spec(5, 5, 1)), 1);
        assert_eq!(max_chunk_span(195.0, &spec(15, 15, 1)), 14);
        assert_eq!(span_by_enumeration(195, &spec(15, 15, 1)), 14);
        assert_eq!(max_chunk_span(45.0, &spec(15, 15, 1)), 4);
    }

    #[test]
    fn span_matches_enumeration_with_overlap() {
        for c in 1..8 {
            for p in 1..8 {
                for fe in 1..20 {
                    let s = spec(c, p, 1);
                    assert_eq!(
                        max_chunk_span(fe as f64, &s),
                        span_by_enumeration(fe, &s),
                        "c={c} p={p} fe={fe}"
                    );
                }
            }
        }
    }

    #[test]
    fn durations_must_be_whole_frames() {
        let s = DurationLit::Seconds;
        assert_eq!(
            ChunkSpec::from_durations(s(0.25), s(0.0), 30),
            Err(ChunkError::FractionalChunk(0.25))
        );
        assert_eq!(ChunkSpec::from_durations(s(0.5), s(0.0), 30).unwrap().chunk_frames, 15);
        assert_eq!(
            ChunkSpec::from_durations(s(2.0), s(-2.0), 1),
            Err(ChunkError::NonPositivePitch)
        );
        let overl = ChunkSpec::from_durations(s(5.0), s(-2.0), 1).unwrap();
        assert_eq!((overl.chunk_frames, overl.pitch_frames), (5, 3));
        assert_eq!(
            ChunkSpec::from_durations(DurationLit::Frames(1), s(0.0), 30)
                .unwrap()
                .chunk_frames,
            1
        );
    }

    #[test]
    fn month_of_five_second_chunks() {
        let s = spec(5, 5, 1);
        assert_eq!(s.chunk_count(31 * 24 * 3600), 535_680);
    }

    fn empty_stream(n: u64) -> FrameStream {
        let frames = (0..n).map(|i| Frame::new(i, Vec::new())).collect();
        FrameStream::new("c", 1, 1000, Grid::new(2, 2), frames).unwrap()
    }

    #[test]
    fn split_layout() {
        let st = empty_stream(100);
        let chunks = split_frames(&st, 0, 100, &spec(10, 10, 1), None, None).unwrap();
        assert_eq!(chunks.len(), 10);
        assert_eq!(chunks[3].t0, 1030.0);

        let st = empty_stream(11);
        let chunks = split_frames(&st, 0, 11, &spec(5, 3, 1), None, None).unwrap();
        let starts: Vec<u64> = chunks.iter().map(|c| c.frames[0].index).collect();
        assert_eq!(starts, vec![0, 3, 6, 9]);
        assert_eq!(chunks[3].frames.len(), 2);
        assert!(split_frames(&st, 5, 5, &spec(5, 3, 1), None, None).unwrap().is_empty());
    }

    #[test]
    fn split_resolves_epoch_window() {
        let st = empty_stream(100);
        let sp = SplitSpec {
            camera_id: "c".into(),
            begin: 1010,
            end: 1050,
            chunk: DurationLit::Seconds(10.0),
            stride: DurationLit::Seconds(0.0),
            region_scheme: None,
            mask: None,
            output: "x".into(),
        };
        let chunks = split(&st, &sp, None, None).unwrap();
        assert_eq!(chunks.len(), 4);
        assert_eq!(chunks[0].frames[0].index, 10);
        let backwards = SplitSpec {
            begin: 1050,
            end: 1010,
            ..sp
        };
        assert!(split(&st, &backwards, None, None).unwrap().is_empty());
    }

    fn frame_with(boxes: &[BBox]) -> Frame {
        Frame::new(
            0,
            boxes
                .iter()
                .enumerate()
                .map(|(i, b)| Detection::new(alloc::format!("e{i}"), "car", *b))
                .collect(),
        )
    }

    #[test]
    fn masking() {
        let f = frame_with(&[BBox::new(0.0, 0.0, 1.0, 1.0), BBox::new(0.6, 1.0, 1.0, 1.0)]);
        assert_eq!(apply_mask(&f, &Mask::empty("none")), f);

        let m = Mask::new("m", [(0, 0)], 0.5).unwrap();
        let out = apply_mask(&f, &m);
        assert_eq!(out.detections.len(), 1);
        assert_eq!(out.detections[0].entity_id, "e1");

        // 40% of the second box lies in cell (0,1)
        let m = Mask::new("m", [(0, 1)], 0.5).unwrap();
        let d = &f.detections[1];
        assert!((m.covered_fraction(d) - 0.4).abs() < 1e-12);
        assert_eq!(apply_mask(&f, &m).detections.len(), 2);
    }

    #[test]
    fn region_partition_checks() {
        let g = Grid::new(2, 1);
        assert!(RegionScheme::new("s", vec![vec![(0, 0)], vec![(1, 0)]], BoundaryKind::Hard, g).is_ok());
        assert!(RegionScheme::new("s", vec![vec![(0, 0)]], BoundaryKind::Hard, g).is_err());
        assert!(RegionScheme::new("s", vec![vec![(0, 0)], vec![(0, 0), (1, 0)]], BoundaryKind::Hard, g).is_err());
    }

    #[test]
    fn region_split_by_center() {
        let frames = vec![frame_with(&[
            BBox::new(0.2, 0.0, 1.0, 1.0),
            BBox::new(1.0, 1.0, 0.5, 0.5),
        ])];
        let st = FrameStream::new("c", 1, 0, Grid::new(2, 2), frames).unwrap();
        let scheme = RegionScheme::new(
            "lr",
            vec![vec![(0, 0), (0, 1)], vec![(1, 0), (1, 1)]],
            BoundaryKind::Hard,
            st.grid,
        )
        .unwrap();
        let chunks = split_frames(&st, 0, 1, &spec(1, 1, 1), None, Some(&scheme)).unwrap();
        assert_eq!(chunks.len(), 2);
        // center (0.7, 0.5) -> cell (0,0) -> region 0; center (1.25,1.25) -> region 1
        assert_eq!(chunks[0].frames[0].detections[0].entity_id, "e0");
        assert_eq!(chunks[1].frames[0].detections[0].entity_id, "e1");
    }
}
