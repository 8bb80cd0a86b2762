//! Symbolic video: frames of detections on an abstract cell grid.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TraceError {
    #[error("fps must be at least 1")]
    InvalidFps,
    #[error("grid dimensions must be at least 1x1, got {cols}x{rows}")]
    InvalidGrid { cols: u32, rows: u32 },
    #[error("frame indices must be contiguous from 0: expected {expected}, found {found}")]
    NonContiguous { expected: u64, found: u64 },
    #[error("frame {frame}: entity {entity} detected twice")]
    DuplicateEntity { frame: u64, entity: String },
    #[error("frame {frame}: bbox of {entity} is empty or outside the grid")]
    BadBBox { frame: u64, entity: String },
    #[error("segment [{first}, {last}] is reversed")]
    ReversedSegment { first: u64, last: u64 },
    #[error("event segments must be sorted and pairwise disjoint")]
    OverlappingSegments,
    #[error("invalid policy: {0}")]
    InvalidPolicy(&'static str),
}

/// Axis-aligned box in grid-cell units, serialized as `[x, y, w, h]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl From<[f64; 4]> for BBox {
    fn from([x, y, w, h]: [f64; 4]) -> Self {
        BBox { x, y, w, h }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// Overlap area with the unit cell whose lower corner is `(col, row)`.
    pub fn overlap_with_cell(&self, col: u32, row: u32) -> f64 {
        let (cx, cy) = (f64::from(col), f64::from(row));
        let ox = (self.x + self.w).min(cx + 1.0) - self.x.max(cx);
        let oy = (self.y + self.h).min(cy + 1.0) - self.y.max(cy);
        if ox <= 0.0 || oy <= 0.0 {
            0.0
        } else {
            ox * oy
        }
    }

    /// Cells the box overlaps with positive area, clipped to the grid.
    pub fn cells(&self, grid: Grid) -> impl Iterator<Item = (u32, u32)> + '_ {
        let c0 = libm::floor(self.x).max(0.0) as u32;
        let r0 = libm::floor(self.y).max(0.0) as u32;
        let c1 = (libm::ceil(self.x + self.w) as u32).min(grid.cols);
        let r1 = (libm::ceil(self.y + self.h) as u32).min(grid.rows);
        (r0..r1)
            .flat_map(move |r| (c0..c1).map(move |c| (c, r)))
            .filter(move |&(c, r)| self.overlap_with_cell(c, r) > 0.0)
    }

    fn within(&self, grid: Grid) -> bool {
        self.w > 0.0
            && self.h > 0.0
            && self.x >= 0.0
            && self.y >= 0.0
            && self.x + self.w <= f64::from(grid.cols) + 1e-9
            && self.y + self.h <= f64::from(grid.rows) + 1e-9
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "id")]
    pub entity_id: String,
    pub class: String,
    pub bbox: BBox,
    #[serde(default)]
    pub attrs: BTreeMap<String, String>,
}

impl Detection {
    pub fn new(entity_id: impl Into<String>, class: impl Into<String>, bbox: BBox) -> Self {
        Detection {
            entity_id: entity_id.into(),
            class: class.into(),
            bbox,
            attrs: BTreeMap::new(),
        }
    }

    pub fn with_attr(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.attrs.insert(key.into(), value.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub index: u64,
    #[serde(default)]
    pub detections: Vec<Detection>,
}

impl Frame {
    pub fn new(index: u64, detections: Vec<Detection>) -> Self {
        Frame { index, detections }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub cols: u32,
    pub rows: u32,
}

impl Grid {
    pub fn new(cols: u32, rows: u32) -> Self {
        Grid { cols, rows }
    }

    pub fn contains(&self, (col, row): (u32, u32)) -> bool {
        col < self.cols && row < self.rows
    }

    pub fn cell_count(&self) -> usize {
        self.cols as usize * self.rows as usize
    }

    /// All cells in (row, col) order.
    pub fn cells(&self) -> impl Iterator<Item = (u32, u32)> {
        let cols = self.cols;
        (0..self.rows).flat_map(move |r| (0..cols).map(move |c| (c, r)))
    }
}

/// An immutable, validated sequence of annotated frames from one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStream {
    pub camera_id: String,
    pub fps: u32,
    /// Epoch seconds of frame 0.
    pub start_time: i64,
    pub grid: Grid,
    frames: Vec<Frame>,
}

impl FrameStream {
    pub fn new(
        camera_id: impl Into<String>,
        fps: u32,
        start_time: i64,
        grid: Grid,
        frames: Vec<Frame>,
    ) -> Result<Self, TraceError> {
        if fps == 0 {
            return Err(TraceError::InvalidFps);
        }
        if grid.cols == 0 || grid.rows == 0 {
            return Err(TraceError::InvalidGrid {
                cols: grid.cols,
                rows: grid.rows,
            });
        }
        for (expected, frame) in frames.iter().enumerate() {
            let expected = expected as u64;
            if frame.index != expected {
                return Err(TraceError::NonContiguous {
                    expected,
                    found: frame.index,
                });
            }
            validate_frame(frame, grid)?;
        }
        Ok(FrameStream {
            camera_id: camera_id.into(),
            fps,
            start_time,
            grid,
            frames,
        })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Epoch seconds at which `frame` was captured.
    pub fn frame_time(&self, frame: u64) -> f64 {
        self.start_time as f64 + frame as f64 / f64::from(self.fps)
    }

    /// Returns a copy with every frame passed through `f`. Frame indices are
    /// preserved, so the result needs no revalidation beyond what `f` does to
    /// detections.
    pub fn map_frames(&self, mut f: impl FnMut(&Frame) -> Frame) -> FrameStream {
        FrameStream {
            camera_id: self.camera_id.clone(),
            fps: self.fps,
            start_time: self.start_time,
            grid: self.grid,
            frames: self.frames.iter().map(&mut f).collect(),
        }
    }
}

fn validate_frame(frame: &Frame, grid: Grid) -> Result<(), TraceError> {
    let mut seen: Vec<&str> = Vec::with_capacity(frame.detections.len());
    for det in &frame.detections {
        if seen.contains(&det.entity_id.as_str()) {
            return Err(TraceError::DuplicateEntity {
                frame: frame.index,
                entity: det.entity_id.clone(),
            });
        }
        seen.push(&det.entity_id);
        if !det.bbox.within(grid) {
            return Err(TraceError::BadBBox {
                frame: frame.index,
                entity: det.entity_id.clone(),
            });
        }
    }
    Ok(())
}

/// Inclusive frame interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Segment {
    pub first_frame: u64,
    pub last_frame: u64,
}

impl Segment {
    pub fn new(first_frame: u64, last_frame: u64) -> Result<Self, TraceError> {
        if first_frame > last_frame {
            return Err(TraceError::ReversedSegment {
                first: first_frame,
                last: last_frame,
            });
        }
        Ok(Segment {
            first_frame,
            last_frame,
        })
    }

    pub fn frame_count(&self) -> u64 {
        self.last_frame - self.first_frame + 1
    }

    pub fn contains(&self, frame: u64) -> bool {
        self.first_frame <= frame && frame <= self.last_frame
    }
}

/// Duration of a segment in seconds, counting frames inclusively.
pub fn duration_seconds(seg: Segment, fps: u32) -> f64 {
    seg.frame_count() as f64 / f64::from(fps)
}

/// The visibility of something as sorted, disjoint segments.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    segments: Vec<Segment>,
}

impl Event {
    pub fn new(segments: Vec<Segment>) -> Result<Self, TraceError> {
        if segments.windows(2).any(|w| w[0].last_frame >= w[1].first_frame) {
            return Err(TraceError::OverlappingSegments);
        }
        Ok(Event { segments })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Longest segment, in frames.
    pub fn max_segment_frames(&self) -> u64 {
        self.segments.iter().map(Segment::frame_count).max().unwrap_or(0)
    }

    fn push_frame(&mut self, frame: u64) {
        match self.segments.last_mut() {
            Some(last) if last.last_frame + 1 == frame => last.last_frame = frame,
            _ => self.segments.push(Segment {
                first_frame: frame,
                last_frame: frame,
            }),
        }
    }
}

/// Tightest `(rho seconds, K)` bound of an event: longest segment and
/// segment count. An empty event is `(0, 0)`.
pub fn bound_of(event: &Event, fps: u32) -> (f64, u32) {
    let rho = event
        .segments
        .iter()
        .map(|s| duration_seconds(*s, fps))
        .fold(0.0, f64::max);
    (rho, event.segments.len() as u32)
}

/// Maximal contiguous visibility segments per ground-truth entity id.
pub fn entity_segments(stream: &FrameStream) -> BTreeMap<String, Event> {
    let mut out: BTreeMap<String, Event> = BTreeMap::new();
    for frame in stream.frames() {
        for det in &frame.detections {
            match out.get_mut(det.entity_id.as_str()) {
                Some(ev) => ev.push_frame(frame.index),
                None => {
                    let mut ev = Event::default();
                    ev.push_frame(frame.index);
                    out.insert(det.entity_id.clone(), ev);
                }
            }
        }
    }
    out
}

/// An owner's `(rho, K, epsilon)` duration policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    /// Seconds.
    pub rho: f64,
    pub k: u32,
    /// Budget per frame.
    pub epsilon: f64,
}

impl Policy {
    pub fn new(rho: f64, k: u32, epsilon: f64) -> Result<Self, TraceError> {
        if !rho.is_finite() || rho < 0.0 {
            return Err(TraceError::InvalidPolicy("rho must be finite and >= 0"));
        }
        if !epsilon.is_finite() || epsilon <= 0.0 {
            return Err(TraceError::InvalidPolicy("epsilon must be finite and > 0"));
        }
        Ok(Policy { rho, k, epsilon })
    }

    /// `rho` rounded up to whole frames.
    pub fn rho_frames(&self, fps: u32) -> u64 {
        libm::ceil(self.rho * f64::from(fps) - 1e-9).max(0.0) as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn det(id: &str, x: f64) -> Detection {
        Detection::new(id, "person", BBox::new(x, 0.0, 0.5, 0.5))
    }

    fn stream_from(visible: &[(&str, &[u64])], n: u64, fps: u32) -> FrameStream {
        let frames = (0..n)
            .map(|i| {
                let dets = visible
                    .iter()
                    .enumerate()
                    .filter(|(_, (_, fr))| fr.contains(&i))
                    .map(|(j, (id, _))| det(id, j as f64))
                    .collect();
                Frame::new(i, dets)
            })
            .collect();
        FrameStream::new("cam", fps, 0, Grid::new(4, 1), frames).unwrap()
    }

    #[test]
    fn durations() {
        assert_eq!(duration_seconds(Segment::new(0, 29).unwrap(), 1), 30.0);
        assert_eq!(duration_seconds(Segment::new(5, 5).unwrap(), 30), 1.0 / 30.0);
        assert_eq!(duration_seconds(Segment::new(0, 59).unwrap(), 30), 2.0);
    }

    #[test]
    fn rejects_gaps_and_bad_boxes() {
        let frames = vec![Frame::new(0, vec![]), Frame::new(2, vec![])];
        assert_eq!(
            FrameStream::new("c", 1, 0, Grid::new(1, 1), frames),
            Err(TraceError::NonContiguous { expected: 1, found: 2 })
        );
        let frames = vec![Frame::new(0, vec![det("a", 3.8)])];
        assert!(matches!(
            FrameStream::new("c", 1, 0, Grid::new(4, 1), frames),
            Err(TraceError::BadBBox { .. })
        ));
        let frames = vec![Frame::new(0, vec![det("a", 0.0), det("a", 1.0)])];
        assert!(matches!(
            FrameStream::new("c", 1, 0, Grid::new(4, 1), frames),
            Err(TraceError::DuplicateEntity { .. })
        ));
        assert!(FrameStream::new("c", 1, 0, Grid::new(1, 1), vec![]).unwrap().is_empty());
    }

    #[test]
    fn visit_with_two_appearances() {
        let frames: Vec<u64> = (0..30).chain(100..110).collect();
        let s = stream_from(&[("x", &frames)], 120, 1);
        let segs = entity_segments(&s);
        let ev = &segs["x"];
        assert_eq!(ev.segments().len(), 2);
        assert_eq!(duration_seconds(ev.segments()[0], 1), 30.0);
        assert_eq!(duration_seconds(ev.segments()[1], 1), 10.0);
        assert_eq!(bound_of(ev, 1), (30.0, 2));
    }

    #[test]
    fn interleaved_entities() {
        // a: frames 0,1,2 and 6,7; b: frames 2..=5 and 9
        let s = stream_from(&[("a", &[0, 1, 2, 6, 7]), ("b", &[2, 3, 4, 5, 9])], 10, 1);
        let segs = entity_segments(&s);
        assert_eq!(
            segs["a"].segments(),
            &[Segment::new(0, 2).unwrap(), Segment::new(6, 7).unwrap()]
        );
        assert_eq!(
            segs["b"].segments(),
            &[Segment::new(2, 5).unwrap(), Segment::new(9, 9).unwrap()]
        );
        assert!(!segs.contains_key("c"));
    }

    #[test]
    fn bounds() {
        assert_eq!(bound_of(&Event::default(), 30), (0.0, 0));
        let ev = Event::new(vec![
            Segment::new(0, 4).unwrap(),
            Segment::new(10, 14).unwrap(),
            Segment::new(20, 24).unwrap(),
        ])
        .unwrap();
        assert_eq!(bound_of(&ev, 1), (5.0, 3));
        assert!(Event::new(vec![Segment::new(0, 4).unwrap(), Segment::new(4, 6).unwrap()]).is_err());
    }

    #[test]
    fn bbox_cells_and_overlap() {
        let b = BBox::new(0.5, 0.5, 1.0, 1.0);
        let cells: Vec<_> = b.cells(Grid::new(3, 3)).collect();
        assert_eq!(cells, vec![(0, 0), (1, 0), (0, 1), (1, 1)]);
        assert!((b.overlap_with_cell(0, 0) - 0.25).abs() < 1e-12);
        assert_eq!(b.overlap_with_cell(2, 2), 0.0);
    }

    #[test]
    fn policy_validation() {
        assert!(Policy::new(-1.0, 1, 1.0).is_err());
        assert!(Policy::new(1.0, 1, 0.0).is_err());
        assert_eq!(Policy::new(30.0, 2, 1.0).unwrap().rho_frames(30), 900);
    }
}
