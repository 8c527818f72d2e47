//! Domain types shared by every stage of the pipeline.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A position in working-resolution pixel coordinates. `x` indexes columns,
/// `y` indexes rows.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        self.dist_sq(other).sqrt()
    }

    pub fn dist_sq(self, other: Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn sub(self, other: Point) -> Point {
        Point::new(self.x - other.x, self.y - other.y)
    }

    pub fn add(self, other: Point) -> Point {
        Point::new(self.x + other.x, self.y + other.y)
    }

    pub fn scale(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }

    pub fn midpoint(self, other: Point) -> Point {
        Point::new(0.5 * (self.x + other.x), 0.5 * (self.y + other.y))
    }
}

/// Observation, waypoint and prediction horizons, in model time steps.
///
/// `t_wp` is a zero-based index into the predicted future: the waypoint is
/// `future[t_wp]` and the teacher's default extra observation covers
/// `future[..t_wp]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeConfig {
    pub t_h: usize,
    pub t_wp: usize,
    pub t_f: usize,
    pub stride_seconds: f64,
}

impl Default for TimeConfig {
    fn default() -> Self {
        Self::long_term()
    }
}

impl TimeConfig {
    pub fn new(t_h: usize, t_wp: usize, t_f: usize, stride_seconds: f64) -> Result<Self> {
        let cfg = Self {
            t_h,
            t_wp,
            t_f,
            stride_seconds,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// 5 observed steps, 30 predicted, waypoint at the midpoint.
    pub fn long_term() -> Self {
        Self {
            t_h: 5,
            t_wp: 15,
            t_f: 30,
            stride_seconds: 1.0,
        }
    }

    /// 8 observed steps, 12 predicted at 0.4 s per step.
    pub fn short_term() -> Self {
        Self {
            t_h: 8,
            t_wp: 6,
            t_f: 12,
            stride_seconds: 0.4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_h < 1 {
            return Err(Error::invalid("t_h must be >= 1"));
        }
        if self.t_f < 2 {
            return Err(Error::invalid("t_f must be >= 2"));
        }
        if self.t_wp < 1 || self.t_wp >= self.t_f {
            return Err(Error::invalid(format!(
                "t_wp must satisfy 1 <= t_wp < t_f (got t_wp={}, t_f={})",
                self.t_wp, self.t_f
            )));
        }
        if !(self.stride_seconds > 0.0 && self.stride_seconds.is_finite()) {
            return Err(Error::invalid("stride_seconds must be positive and finite"));
        }
        Ok(())
    }

    pub fn is_midpoint_split(&self) -> bool {
        self.t_f == 2 * self.t_wp
    }

    pub fn window_len(&self) -> usize {
        self.t_h + self.t_f
    }

    pub fn with_horizon(&self, t_f: usize) -> Result<Self> {
        let t_wp = (t_f / 2).max(1).min(t_f.saturating_sub(1));
        TimeConfig::new(self.t_h, t_wp, t_f, self.stride_seconds)
    }
}

/// One agent's observed and future ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryWindow {
    pub scene_id: String,
    pub agent_id: u64,
    pub observed: Vec<Point>,
    pub future: Vec<Point>,
    pub frame_start: i64,
}

impl TrajectoryWindow {
    pub fn check(&self, time: &TimeConfig) -> Result<()> {
        if self.observed.len() != time.t_h || self.future.len() != time.t_f {
            return Err(Error::invalid(format!(
                "window {}/{} has {}+{} steps, expected {}+{}",
                self.scene_id,
                self.agent_id,
                self.observed.len(),
                self.future.len(),
                time.t_h,
                time.t_f
            )));
        }
        Ok(())
    }

    pub fn last_observed(&self) -> Point {
        *self.observed.last().expect("window has observations")
    }

    pub fn goal(&self) -> Point {
        *self.future.last().expect("window has a future")
    }

    /// Full ground-truth sequence, observed followed by future.
    pub fn full(&self) -> Vec<Point> {
        self.observed
            .iter()
            .chain(self.future.iter())
            .copied()
            .collect()
    }
}

/// Windows of all agents co-present in one scene over the same frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowGroup {
    pub scene_id: String,
    pub frame_start: i64,
    pub windows: Vec<TrajectoryWindow>,
}

/// Multi-channel semantic raster of a scene at working resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneMap {
    pub scene_id: String,
    /// `channels × height × width`, every cell in `[0, 1]`.
    pub grid: Array3<f64>,
    pub pixels_per_meter: f64,
    /// Multiplier from source pixel coordinates to working pixels.
    pub scale: f64,
}

impl SceneMap {
    pub fn new(
        scene_id: impl Into<String>,
        grid: Array3<f64>,
        pixels_per_meter: f64,
    ) -> Result<Self> {
        if grid.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("scene map cells must lie in [0, 1]"));
        }
        Ok(Self {
            scene_id: scene_id.into(),
            grid,
            pixels_per_meter,
            scale: 1.0,
        })
    }

    pub fn channels(&self) -> usize {
        self.grid.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.grid.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.grid.shape()[2]
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= 0.0
            && p.y >= 0.0
            && p.x <= (self.width() - 1) as f64
            && p.y <= (self.height() - 1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    GroundTruth,
    Student,
    TeacherGtFed,
    TeacherAugmented,
}

/// Per-step 2-D grids with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapStack {
    /// `steps × height × width`.
    pub grid: Array3<f64>,
    pub provenance: Provenance,
}

impl HeatmapStack {
    pub fn steps(&self) -> usize {
        self.grid.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.grid.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.grid.shape()[2]
    }

    pub fn step(&self, t: usize) -> Array2<f64> {
        self.grid.index_axis(ndarray::Axis(0), t).to_owned()
    }
}

/// The six loss terms plus their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBundle {
    pub goal_student: f64,
    pub goal_teacher: f64,
    pub goal_distill: f64,
    pub traj_student: f64,
    pub traj_teacher: f64,
    pub traj_distill: f64,
    pub lambda: f64,
    pub total: f64,
}

impl LossBundle {
    pub const COMPONENTS: [&'static str; 6] = [
        "goal_student",
        "goal_teacher",
        "goal_distill",
        "traj_student",
        "traj_teacher",
        "traj_distill",
    ];

    pub fn goal(&self) -> f64 {
        self.goal_student + self.goal_teacher + self.goal_distill
    }

    pub fn traj(&self) -> f64 {
        self.traj_student + self.traj_teacher + self.traj_distill
    }

    pub fn components(&self) -> [f64; 6] {
        [
            self.goal_student,
            self.goal_teacher,
            self.goal_distill,
            self.traj_student,
            self.traj_teacher,
            self.traj_distill,
        ]
    }

    /// Recomputes `total` from the components.
    pub fn recombined(&self) -> f64 {
        self.goal() + self.lambda * self.traj()
    }
}
