//! Seeded synthetic scenes: entities cross the grid along straight paths,
//! optionally with long-parked entities that sit in fixed cells.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Pareto};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use vidpriv_core::trace::{BBox, Grid};
use vidpriv_core::{Detection, Frame, FrameStream};

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    #[error("invalid scene config: {0}")]
    Invalid(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub camera_id: String,
    pub start_time: i64,
    pub duration_secs: u64,
    pub fps: u32,
    pub grid_cols: u32,
    pub grid_rows: u32,
    /// Mean arrivals per second of moving entities.
    pub arrival_rate: f64,
    /// Time on screen of a moving entity, seconds, uniform in the range.
    pub dwell_min: f64,
    pub dwell_max: f64,
    pub classes: Vec<String>,
    pub colors: Vec<String>,
    pub parked: Option<ParkedConfig>,
    pub seed: u64,
}

/// Entities that drive in, stay put for a heavy-tailed time, and leave.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParkedConfig {
    pub count: usize,
    /// Pareto scale and shape of the parked time, seconds; capped at
    /// `max_secs`.
    pub min_secs: f64,
    pub shape: f64,
    pub max_secs: f64,
    /// Cells they park in.
    pub spots: Vec<(u32, u32)>,
}

impl Default for ParkedConfig {
    fn default() -> Self {
        ParkedConfig {
            count: 4,
            min_secs: 600.0,
            shape: 1.2,
            max_secs: 4.0 * 3600.0,
            spots: vec![(1, 1), (2, 1)],
        }
    }
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            camera_id: "cam".into(),
            start_time: 0,
            duration_secs: 3600,
            fps: 1,
            grid_cols: 8,
            grid_rows: 8,
            arrival_rate: 1.0 / 60.0,
            dwell_min: 10.0,
            dwell_max: 90.0,
            classes: vec!["car".into(), "person".into()],
            colors: vec!["RED".into(), "WHITE".into(), "SILVER".into(), "BLACK".into()],
            parked: None,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn check(&self) -> Result<(), SceneError> {
        if self.fps == 0 || self.grid_cols == 0 || self.grid_rows == 0 {
            return Err(SceneError::Invalid("fps and grid must be positive"));
        }
        if !(self.arrival_rate >= 0.0 && self.arrival_rate.is_finite()) {
            return Err(SceneError::Invalid("arrival rate must be finite and non-negative"));
        }
        if !(self.dwell_min > 0.0 && self.dwell_min <= self.dwell_max && self.dwell_max.is_finite()) {
            return Err(SceneError::Invalid("need 0 < dwell_min <= dwell_max < inf"));
        }
        if self.classes.is_empty() || self.colors.is_empty() {
            return Err(SceneError::Invalid("classes and colors must be non-empty"));
        }
        if let Some(p) = &self.parked {
            if !(p.min_secs > 0.0 && p.shape > 0.0 && p.max_secs >= p.min_secs && p.max_secs.is_finite()) {
                return Err(SceneError::Invalid(
                    "need 0 < parked min_secs <= max_secs < inf and shape > 0",
                ));
            }
            let grid = Grid::new(self.grid_cols, self.grid_rows);
            if p.count > 0 && (p.spots.is_empty() || p.spots.iter().any(|s| !grid.contains(*s))) {
                return Err(SceneError::Invalid("parking spots must be inside the grid"));
            }
        }
        Ok(())
    }
}

type Point = (f64, f64);

fn edge_point(rng: &mut impl Rng, cols: u32, rows: u32) -> Point {
    let (w, h) = (f64::from(cols - 1), f64::from(rows - 1));
    match rng.gen_range(0..4) {
        0 => (rng.gen_range(0.0..=w), 0.0),
        1 => (rng.gen_range(0.0..=w), h),
        2 => (0.0, rng.gen_range(0.0..=h)),
        _ => (w, rng.gen_range(0.0..=h)),
    }
}

fn lerp(a: Point, b: Point, t: f64) -> Point {
    (a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t)
}

struct Builder {
    frames: Vec<Vec<Detection>>,
}

impl Builder {
    /// Places a unit box moving from `a` to `b` over frames `[first, first+n)`.
    #[allow(clippy::too_many_arguments)]
    fn path(&mut self, id: &str, class: &str, color: &str, speed: f64, first: u64, n: u64, a: Point, b: Point) {
        for i in 0..n {
            let f = first + i;
            let Some(slot) = self.frames.get_mut(f as usize) else {
                break;
            };
            let t = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
            let (x, y) = lerp(a, b, t);
            slot.push(
                Detection::new(id, class, BBox::new(x, y, 1.0, 1.0))
                    .with_attr("color", color)
                    .with_attr("speed", format!("{speed:.1}")),
            );
        }
    }
}

/// Whole frames of a duration, at least one and never above `cap`.
fn frames_of(secs: f64, fps: u32, cap: f64) -> u64 {
    let fps = f64::from(fps);
    ((secs * fps).round() as u64).clamp(1, ((cap * fps).floor() as u64).max(1))
}

pub fn gen_scene(cfg: &SceneConfig) -> Result<FrameStream, SceneError> {
    cfg.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_frames = cfg.duration_secs * u64::from(cfg.fps);
    let mut b = Builder {
        frames: vec![Vec::new(); n_frames as usize],
    };
    let (cols, rows) = (cfg.grid_cols, cfg.grid_rows);
    let duration = cfg.duration_secs as f64;

    if cfg.arrival_rate > 0.0 {
        let gap = Exp::new(cfg.arrival_rate).map_err(|_| SceneError::Invalid("arrival rate"))?;
        let mut t = gap.sample(&mut rng);
        let mut n = 0usize;
        while t < duration {
            let dwell = rng.gen_range(cfg.dwell_min..=cfg.dwell_max);
            let len = frames_of(dwell, cfg.fps, cfg.dwell_max);
            let (a, z) = (edge_point(&mut rng, cols, rows), edge_point(&mut rng, cols, rows));
            let class = cfg.classes.choose(&mut rng).expect("checked non-empty");
            let color = cfg.colors.choose(&mut rng).expect("checked non-empty");
            let dist = ((z.0 - a.0).powi(2) + (z.1 - a.1).powi(2)).sqrt();
            let speed = 10.0 * dist / dwell;
            let first = (t * f64::from(cfg.fps)) as u64;
            b.path(&format!("m{n}"), class, color, speed, first, len, a, z);
            n += 1;
            t += gap.sample(&mut rng);
        }
    }

    if let Some(p) = cfg.parked.as_ref().filter(|p| p.count > 0) {
        let stay = Pareto::new(p.min_secs, p.shape).map_err(|_| SceneError::Invalid("parked shape"))?;
        for n in 0..p.count {
            let spot = *p.spots.choose(&mut rng).expect("checked non-empty");
            let spot_pt = (f64::from(spot.0), f64::from(spot.1));
            let class = cfg.classes.choose(&mut rng).expect("checked non-empty");
            let color = cfg.colors.choose(&mut rng).expect("checked non-empty");
            let drive_in = frames_of(
                rng.gen_range(cfg.dwell_min..=cfg.dwell_max) / 2.0,
                cfg.fps,
                cfg.dwell_max / 2.0,
            );
            let drive_out = frames_of(
                rng.gen_range(cfg.dwell_min..=cfg.dwell_max) / 2.0,
                cfg.fps,
                cfg.dwell_max / 2.0,
            );
            let parked = frames_of(stay.sample(&mut rng).min(p.max_secs), cfg.fps, p.max_secs);
            let total = drive_in + parked + drive_out;
            let first = rng.gen_range(0..n_frames.saturating_sub(total).max(1));
            let id = format!("p{n}");
            b.path(
                &id,
                class,
                color,
                0.0,
                first,
                drive_in,
                edge_point(&mut rng, cols, rows),
                spot_pt,
            );
            b.path(&id, class, color, 0.0, first + drive_in, parked, spot_pt, spot_pt);
            b.path(
                &id,
                class,
                color,
                0.0,
                first + drive_in + parked,
                drive_out,
                spot_pt,
                edge_point(&mut rng, cols, rows),
            );
        }
    }

    let frames = b
        .frames
        .into_iter()
        .enumerate()
        .map(|(i, d)| Frame::new(i as u64, d))
        .collect();
    Ok(FrameStream::new(
        cfg.camera_id.clone(),
        cfg.fps,
        cfg.start_time,
        Grid::new(cols, rows),
        frames,
    )
    .expect("generator output is valid by construction"))
}
