//! Trajectory recordings, semantic maps, windowing and synthetic scenes.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Point, SceneMap, TimeConfig, TrajectoryWindow, WindowGroup};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordingFormat {
    /// Columns `agent_id, frame, x, y, class`.
    Sdd,
    /// Columns `recordingId, trackId, frame, xCenter, yCenter, class`.
    Ind,
}

impl FromStr for RecordingFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sdd" | "sdd-like" => Ok(Self::Sdd),
            "ind" | "ind-like" => Ok(Self::Ind),
            other => Err(Error::invalid(format!(
                "unknown recording format `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRow {
    pub agent_id: u64,
    pub frame: i64,
    pub x: f64,
    pub y: f64,
    pub class: String,
}

/// Rows sorted by `(agent_id, frame)` with strictly increasing frames per agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecording {
    pub scene_id: String,
    pub rows: Vec<RawRow>,
    pub frame_rate: f64,
}

pub const PEDESTRIAN: &str = "pedestrian";

impl RawRecording {
    pub fn agents(&self) -> BTreeSet<u64> {
        self.rows.iter().map(|r| r.agent_id).collect()
    }

    /// Multiplies every coordinate by `factor`.
    pub fn rescaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for r in &mut out.rows {
            r.x *= factor;
            r.y *= factor;
        }
        out
    }
}

fn detect_delimiter(header: &str) -> u8 {
    [b',', b'\t', b';']
        .into_iter()
        .max_by_key(|&d| header.bytes().filter(|&b| b == d).count())
        .filter(|&d| header.as_bytes().contains(&d))
        .unwrap_or(b' ')
}

/// Parses recording text. `label` names the source in error messages.
pub fn parse_recording(
    text: &str,
    label: &Path,
    format: RecordingFormat,
    scene_id: &str,
    frame_rate: f64,
) -> Result<RawRecording> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: label.to_path_buf(),
        line,
        message,
    };
    let header = text
        .lines()
        .next()
        .ok_or_else(|| parse_err(1, "empty file".into()))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(detect_delimiter(header))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .iter()
        .map(|h| h.to_ascii_lowercase())
        .collect();
    let wanted: &[&str] = match format {
        RecordingFormat::Sdd => &["agent_id", "frame", "x", "y", "class"],
        RecordingFormat::Ind => &[
            "recordingid",
            "trackid",
            "frame",
            "xcenter",
            "ycenter",
            "class",
        ],
    };
    let mut idx = HashMap::new();
    for w in wanted {
        let i = headers
            .iter()
            .position(|h| h == w)
            .ok_or_else(|| parse_err(1, format!("missing column `{w}`")))?;
        idx.insert(*w, i);
    }
    let (agent_col, x_col, y_col) = match format {
        RecordingFormat::Sdd => (idx["agent_id"], idx["x"], idx["y"]),
        RecordingFormat::Ind => (idx["trackid"], idx["xcenter"], idx["ycenter"]),
    };
    let (frame_col, class_col) = (idx["frame"], idx["class"]);

    let mut rows = Vec::new();
    let mut last_frame: HashMap<u64, i64> = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let cell = |i: usize, name: &str| {
            record
                .get(i)
                .ok_or_else(|| parse_err(line, format!("missing `{name}` cell")))
        };
        let num = |i: usize, name: &str| -> Result<f64> {
            let raw = cell(i, name)?;
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(line, format!("non-numeric `{name}` value `{raw}`")))
        };
        let int = |i: usize, name: &str| -> Result<i64> {
            let v = num(i, name)?;
            if v.fract() != 0.0 {
                return Err(parse_err(line, format!("non-integer `{name}` value {v}")));
            }
            Ok(v as i64)
        };
        let class = cell(class_col, "class")?.to_string();
        let agent = int(agent_col, "agent id")?;
        if agent < 0 {
            return Err(parse_err(line, format!("negative agent id {agent}")));
        }
        let agent = agent as u64;
        let frame = int(frame_col, "frame")?;
        let (x, y) = (num(x_col, "x")?, num(y_col, "y")?);
        if !class.eq_ignore_ascii_case(PEDESTRIAN) {
            continue;
        }
        if let Some(&prev) = last_frame.get(&agent) {
            if frame <= prev {
                return Err(parse_err(
                    line,
                    format!("frame {frame} of agent {agent} does not follow frame {prev}"),
                ));
            }
        }
        last_frame.insert(agent, frame);
        rows.push(RawRow {
            agent_id: agent,
            frame,
            x,
            y,
            class,
        });
    }
    rows.sort_by_key(|r| (r.agent_id, r.frame));
    Ok(RawRecording {
        scene_id: scene_id.to_string(),
        rows,
        frame_rate,
    })
}

pub fn load_recording(
    path: &Path,
    format: RecordingFormat,
    scene_id: &str,
    frame_rate: f64,
) -> Result<RawRecording> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_recording(&text, path, format, scene_id, frame_rate)
}

pub fn write_recording(rec: &RawRecording, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    let to_err = |e: csv::Error| Error::invalid(format!("{}: {e}", path.display()));
    w.write_record(["agent_id", "frame", "x", "y", "class"])
        .map_err(to_err)?;
    for r in &rec.rows {
        w.write_record([
            r.agent_id.to_string(),
            r.frame.to_string(),
            r.x.to_string(),
            r.y.to_string(),
            r.class.clone(),
        ])
        .map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Source frames per model step.
pub fn stride_frames(frame_rate: f64, stride_seconds: f64) -> usize {
    ((frame_rate * stride_seconds).round() as usize).max(1)
}

/// Cuts fixed-length windows without splitting or stitching trajectories.
///
/// Candidate windows sit on a lattice anchored at the recording's first
/// frame: window `j` covers frames `f0 + j * window_stride * stride_frames +
/// i * stride_frames` for `i < t_h + t_f`. An agent joins a window only if it
/// has a row at every one of those frames; agents missing any frame are left
/// out of that window entirely. Windows of co-present agents are grouped.
pub fn preprocess_star(
    rec: &RawRecording,
    time: &TimeConfig,
    stride_frames: usize,
    window_stride: usize,
) -> Result<Vec<WindowGroup>> {
    if stride_frames == 0 || window_stride == 0 {
        return Err(Error::invalid(
            "stride_frames and window_stride must be >= 1",
        ));
    }
    let (Some(f0), Some(f1)) = (
        rec.rows.iter().map(|r| r.frame).min(),
        rec.rows.iter().map(|r| r.frame).max(),
    ) else {
        return Ok(Vec::new());
    };
    let len = time.window_len();
    let sf = stride_frames as i64;
    let span = (len as i64 - 1) * sf;
    let mut tracks: BTreeMap<u64, HashMap<i64, Point>> = BTreeMap::new();
    for r in &rec.rows {
        tracks
            .entry(r.agent_id)
            .or_default()
            .insert(r.frame, Point::new(r.x, r.y));
    }
    let mut groups = Vec::new();
    let mut start = f0;
    while start + span <= f1 {
        let mut windows = Vec::new();
        for (&agent, frames) in &tracks {
            let seq: Option<Vec<Point>> = (0..len as i64)
                .map(|i| frames.get(&(start + i * sf)).copied())
                .collect();
            if let Some(seq) = seq {
                windows.push(TrajectoryWindow {
                    scene_id: rec.scene_id.clone(),
                    agent_id: agent,
                    observed: seq[..time.t_h].to_vec(),
                    future: seq[time.t_h..].to_vec(),
                    frame_start: start,
                });
            }
        }
        if !windows.is_empty() {
            groups.push(WindowGroup {
                scene_id: rec.scene_id.clone(),
                frame_start: start,
                windows,
            });
        }
        start += window_stride as i64 * sf;
    }
    Ok(groups)
}

/// Windows in emission order: by scene, agent, then start frame.
pub fn flatten_windows(groups: &[WindowGroup]) -> Vec<TrajectoryWindow> {
    let mut out: Vec<TrajectoryWindow> = groups
        .iter()
        .flat_map(|g| g.windows.iter().cloned())
        .collect();
    out.sort_by(|a, b| {
        (a.scene_id.as_str(), a.agent_id, a.frame_start).cmp(&(
            b.scene_id.as_str(),
            b.agent_id,
            b.frame_start,
        ))
    });
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapEncoding {
    /// Grayscale image with one plane per class stacked vertically.
    Planes,
    /// Grayscale image whose pixel values are class indices.
    Index,
}

/// Class name to index (plane order for stacked planes).
pub type Legend = BTreeMap<String, u8>;

pub fn load_legend(path: &Path) -> Result<Legend> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Nearest-neighbour resampling of every plane.
pub fn resize_nearest(grid: &Array3<f64>, height: usize, width: usize) -> Array3<f64> {
    let (c, h, w) = grid.dim();
    Array3::from_shape_fn((c, height, width), |(k, i, j)| {
        let si = (((i as f64 + 0.5) * h as f64 / height as f64) as usize).min(h - 1);
        let sj = (((j as f64 + 0.5) * w as f64 / width as f64) as usize).min(w - 1);
        grid[[k, si, sj]]
    })
}

/// One-hot planes from an index raster; channels follow ascending legend index.
pub fn index_to_planes(index: &ndarray::Array2<u8>, legend: &Legend) -> Result<Array3<f64>> {
    let mut order: Vec<u8> = legend.values().copied().collect();
    order.sort_unstable();
    let (h, w) = index.dim();
    let mut out = Array3::zeros((order.len(), h, w));
    for ((i, j), &v) in index.indexed_iter() {
        let c = order.binary_search(&v).map_err(|_| {
            Error::invalid(format!("class index {v} at ({i}, {j}) missing from legend"))
        })?;
        out[[c, i, j]] = 1.0;
    }
    Ok(out)
}

/// Loads a semantic map and resamples it to `resolution` (height, width).
/// Source and working resolution must share one scale factor.
pub fn load_scene_map(
    image_path: &Path,
    legend_path: &Path,
    encoding: MapEncoding,
    scene_id: &str,
    channels: usize,
    resolution: Option<(usize, usize)>,
) -> Result<SceneMap> {
    let legend = load_legend(legend_path)?;
    if legend.len() != channels {
        return Err(Error::invalid(format!(
            "legend {} lists {} classes, configuration expects {channels}",
            legend_path.display(),
            legend.len()
        )));
    }
    let img = image::open(image_path)?.to_luma8();
    let (w, total_h) = (img.width() as usize, img.height() as usize);
    let grid = match encoding {
        MapEncoding::Planes => {
            if total_h % channels != 0 {
                return Err(Error::invalid(format!(
                    "image height {total_h} is not a multiple of {channels} planes"
                )));
            }
            let h = total_h / channels;
            Array3::from_shape_fn((channels, h, w), |(c, i, j)| {
                img.get_pixel(j as u32, (c * h + i) as u32)[0] as f64 / 255.0
            })
        }
        MapEncoding::Index => {
            let index = ndarray::Array2::from_shape_fn((total_h, w), |(i, j)| {
                img.get_pixel(j as u32, i as u32)[0]
            });
            index_to_planes(&index, &legend)?
        }
    };
    let (_, h, w) = grid.dim();
    let (th, tw) = resolution.unwrap_or((h, w));
    let (sy, sx) = (th as f64 / h as f64, tw as f64 / w as f64);
    if (sy - sx).abs() > 1e-9 * sx.max(sy) {
        return Err(Error::invalid(format!(
            "working resolution {th}x{tw} does not preserve the {h}x{w} aspect ratio"
        )));
    }
    let grid = if (th, tw) == (h, w) {
        grid
    } else {
        resize_nearest(&grid, th, tw)
    };
    let mut map = SceneMap::new(scene_id, grid, 1.0)?;
    map.scale = sx;
    Ok(map)
}

/// Writes a map as stacked grayscale planes plus a legend naming each plane.
pub fn save_scene_map(
    map: &SceneMap,
    names: &[&str],
    image_path: &Path,
    legend_path: &Path,
) -> Result<()> {
    let (c, h, w) = map.grid.dim();
    if names.len() != c {
        return Err(Error::invalid("one plane name per channel required"));
    }
    let img = image::GrayImage::from_fn(w as u32, (c * h) as u32, |j, i| {
        let (k, r) = (i as usize / h, i as usize % h);
        image::Luma([(map.grid[[k, r, j as usize]] * 255.0).round() as u8])
    });
    img.save(image_path)?;
    let legend: Legend = names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.to_string(), i as u8))
        .collect();
    let text = serde_json::to_string_pretty(&legend).map_err(|e| Error::invalid(e.to_string()))?;
    fs::write(legend_path, text).map_err(|e| Error::io(legend_path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Motion {
    Straight,
    Turn,
    StopGo,
}

impl FromStr for Motion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "straight" => Ok(Self::Straight),
            "turn" => Ok(Self::Turn),
            "stop-go" => Ok(Self::StopGo),
            other => Err(Error::invalid(format!("unknown motion `{other}`"))),
        }
    }
}

/// Closed-form motion parameters of one synthetic agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionPath {
    pub motion: Motion,
    pub start: Point,
    pub speed: f64,
    pub heading: f64,
    /// Heading change per step for turns.
    pub turn_rate: f64,
    /// Steps moving, then steps standing, for stop-go.
    pub go: usize,
    pub stop: usize,
}

impl MotionPath {
    /// Noise-free position after `t` steps.
    pub fn position(&self, t: usize) -> Point {
        let (s, th) = (self.speed, self.heading);
        match self.motion {
            Motion::Straight => self
                .start
                .add(Point::new(th.cos(), th.sin()).scale(s * t as f64)),
            Motion::Turn => {
                let w = self.turn_rate;
                if t == 0 {
                    return self.start;
                }
                if w.abs() < 1e-12 {
                    return self
                        .start
                        .add(Point::new(th.cos(), th.sin()).scale(s * t as f64));
                }
                // sum_{i<t} (cos, sin)(th + i w)
                let amp = (t as f64 * w / 2.0).sin() / (w / 2.0).sin();
                let mid = th + (t as f64 - 1.0) * w / 2.0;
                self.start
                    .add(Point::new(mid.cos(), mid.sin()).scale(s * amp))
            }
            Motion::StopGo => {
                let cycle = self.go + self.stop;
                let moved = (t / cycle) * self.go + (t % cycle).min(self.go);
                self.start
                    .add(Point::new(th.cos(), th.sin()).scale(s * moved as f64))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_scenes: usize,
    pub agents_per_scene: usize,
    pub motions: Vec<Motion>,
    pub noise_sigma: f64,
    /// Square map side in working pixels.
    pub grid: usize,
    /// Steps per agent track.
    pub steps: usize,
    pub speed: (f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_scenes: 25,
            agents_per_scene: 2,
            motions: vec![Motion::Straight, Motion::Turn, Motion::StopGo],
            noise_sigma: 0.05,
            grid: 32,
            steps: 35,
            speed: (0.4, 0.7),
        }
    }
}

pub struct SyntheticScene {
    pub recording: RawRecording,
    pub map: SceneMap,
    pub paths: Vec<MotionPath>,
}

pub const SYNTH_CLASSES: [&str; 6] = [
    "walkway",
    "obstacle",
    "entry",
    "vegetation",
    "road",
    "building",
];

fn random_path<R: Rng>(rng: &mut R, cfg: &SynthConfig, motion: Motion) -> MotionPath {
    let g = cfg.grid as f64;
    let margin = 2.0;
    loop {
        let p = MotionPath {
            motion,
            start: Point::new(
                rng.random_range(margin..g - margin),
                rng.random_range(margin..g - margin),
            ),
            speed: rng.random_range(cfg.speed.0..=cfg.speed.1),
            heading: rng.random_range(0.0..std::f64::consts::TAU),
            turn_rate: rng.random_range(0.03..0.08) * if rng.random_bool(0.5) { 1.0 } else { -1.0 },
            go: rng.random_range(4..=8),
            stop: rng.random_range(2..=4),
        };
        let inside = (0..cfg.steps).all(|t| {
            let q = p.position(t);
            q.x >= margin && q.y >= margin && q.x <= g - 1.0 - margin && q.y <= g - 1.0 - margin
        });
        if inside {
            return p;
        }
    }
}

fn synthetic_map(
    scene_id: &str,
    grid: usize,
    paths: &[MotionPath],
    steps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SceneMap> {
    let mut m = Array3::<f64>::zeros((SYNTH_CLASSES.len(), grid, grid));
    let clean: Vec<Vec<Point>> = paths
        .iter()
        .map(|p| (0..steps).map(|t| p.position(t)).collect())
        .collect();
    for i in 0..grid {
        for j in 0..grid {
            let c = Point::new(j as f64, i as f64);
            let near = clean
                .iter()
                .flatten()
                .map(|q| q.dist(c))
                .fold(f64::INFINITY, f64::min);
            let end = clean
                .iter()
                .flat_map(|t| [t[0], t[t.len() - 1]])
                .map(|q| q.dist(c))
                .fold(f64::INFINITY, f64::min);
            let walk = near <= 1.5;
            m[[0, i, j]] = if walk { 1.0 } else { 0.0 };
            m[[1, i, j]] = if walk { 0.0 } else { 1.0 };
            m[[2, i, j]] = if end <= 1.5 { 1.0 } else { 0.0 };
            m[[3, i, j]] = if !walk && near > 4.0 && rng.random_bool(0.2) {
                1.0
            } else {
                0.0
            };
            m[[4, i, j]] = if i < 2 || i + 2 >= grid { 1.0 } else { 0.0 };
            m[[5, i, j]] = if j < 2 || j + 2 >= grid { 1.0 } else { 0.0 };
        }
    }
    SceneMap::new(scene_id, m, 1.0)
}

/// Deterministic synthetic scenes; every agent is present for all `steps`
/// frames starting at frame 0, sampled at one frame per step.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Vec<SyntheticScene>> {
    if cfg.motions.is_empty() || cfg.grid < 8 || cfg.steps < 2 || cfg.noise_sigma < 0.0 {
        return Err(Error::invalid(
            "synthetic config needs motions, grid >= 8, steps >= 2, noise >= 0",
        ));
    }
    if !(cfg.speed.0 > 0.0 && cfg.speed.0 <= cfg.speed.1) {
        return Err(Error::invalid(
            "synthetic speed range must be positive and ordered",
        ));
    }
    let max_span = cfg.speed.1 * (cfg.steps - 1) as f64;
    if max_span > cfg.grid as f64 - 6.0 {
        return Err(Error::invalid(
            "grid too small for the requested speed and track length",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::invalid(e.to_string()))?;
    let width = cfg.n_scenes.saturating_sub(1).to_string().len();
    let mut out = Vec::with_capacity(cfg.n_scenes);
    for s in 0..cfg.n_scenes {
        let scene_id = format!("synth_{s:0width$}");
        let paths: Vec<MotionPath> = (0..cfg.agents_per_scene)
            .map(|_| {
                let motion = cfg.motions[rng.random_range(0..cfg.motions.len())];
                random_path(&mut rng, cfg, motion)
            })
            .collect();
        let mut rows = Vec::with_capacity(paths.len() * cfg.steps);
        for (a, p) in paths.iter().enumerate() {
            for t in 0..cfg.steps {
                let q = p.position(t);
                let (dx, dy) = if cfg.noise_sigma > 0.0 {
                    (noise.sample(&mut rng), noise.sample(&mut rng))
                } else {
                    (0.0, 0.0)
                };
                rows.push(RawRow {
                    agent_id: a as u64,
                    frame: t as i64,
                    x: q.x + dx,
                    y: q.y + dy,
                    class: PEDESTRIAN.to_string(),
                });
            }
        }
        let map = synthetic_map(&scene_id, cfg.grid, &paths, cfg.steps, &mut rng)?;
        out.push(SyntheticScene {
            recording: RawRecording {
                scene_id,
                rows,
                frame_rate: 1.0,
            },
            map,
            paths,
        });
    }
    Ok(out)
}

/// Windows grouped by scene together with the maps they refer to.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub groups: Vec<WindowGroup>,
    pub scenes: BTreeMap<String, SceneMap>,
}

impl Dataset {
    pub fn n_windows(&self) -> usize {
        self.groups.iter().map(|g| g.windows.len()).sum()
    }

    pub fn scene_ids(&self) -> Vec<String> {
        self.scenes.keys().cloned().collect()
    }

    /// Restriction to the listed scenes.
    pub fn subset(&self, ids: &[String]) -> Self {
        let keep: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
        Self {
            groups: self
                .groups
                .iter()
                .filter(|g| keep.contains(g.scene_id.as_str()))
                .cloned()
                .collect(),
            scenes: self
                .scenes
                .iter()
                .filter(|(k, _)| keep.contains(k.as_str()))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }
}

/// Windows and maps for synthetic scenes.
pub fn synthetic_dataset(
    scenes: &[SyntheticScene],
    time: &TimeConfig,
    window_stride: usize,
) -> Result<Dataset> {
    let mut ds = Dataset::default();
    for s in scenes {
        ds.groups
            .extend(preprocess_star(&s.recording, time, 1, window_stride)?);
        ds.scenes.insert(s.map.scene_id.clone(), s.map.clone());
    }
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SplitSpec {
    Lists {
        train: Vec<String>,
        val: Vec<String>,
        test: Vec<String>,
    },
    Ratios([f64; 3]),
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::Ratios([0.7, 0.1, 0.2])
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Splits {
    pub fn get(&self, name: &str) -> Result<&[String]> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(Error::invalid(format!("unknown split `{other}`"))),
        }
    }
}

/// Scene ids from a text file, one per line; blank lines and `#` comments skipped.
pub fn read_scene_list(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

/// Assigns scenes to train/val/test. Ratio splits shuffle the sorted ids
/// with `seed`; list splits must be disjoint and cover every scene.
pub fn split_scenes(scene_ids: &[String], spec: &SplitSpec, seed: u64) -> Result<Splits> {
    let all: BTreeSet<&String> = scene_ids.iter().collect();
    match spec {
        SplitSpec::Lists { train, val, test } => {
            let mut seen = BTreeSet::new();
            for id in train.iter().chain(val).chain(test) {
                if !all.contains(id) {
                    return Err(Error::invalid(format!("split lists unknown scene `{id}`")));
                }
                if !seen.insert(id) {
                    return Err(Error::invalid(format!(
                        "scene `{id}` appears in more than one split"
                    )));
                }
            }
            if seen.len() != all.len() {
                let missing: Vec<&str> = all
                    .iter()
                    .filter(|id| !seen.contains(*id))
                    .map(|s| s.as_str())
                    .collect();
                return Err(Error::invalid(format!(
                    "scenes not assigned to a split: {}",
                    missing.join(", ")
                )));
            }
            Ok(Splits {
                train: train.clone(),
                val: val.clone(),
                test: test.clone(),
            })
        }
        SplitSpec::Ratios(r) => {
            if r.iter().any(|v| !(*v >= 0.0)) || r.iter().sum::<f64>() <= 0.0 {
                return Err(Error::invalid(
                    "split ratios must be non-negative with a positive sum",
                ));
            }
            let total: f64 = r.iter().sum();
            let mut ids: Vec<String> = all.into_iter().cloned().collect();
            ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let n = ids.len();
            let n_train = ((r[0] / total) * n as f64).round() as usize;
            let n_val = (((r[1] / total) * n as f64).round() as usize).min(n - n_train.min(n));
            let n_train = n_train.min(n);
            let test = ids.split_off(n_train + n_val);
            let val = ids.split_off(n_train);
            Ok(Splits {
                train: ids,
                val,
                test,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn parse(text: &str) -> Result<RawRecording> {
        parse_recording(
            text,
            &PathBuf::from("t.csv"),
            RecordingFormat::Sdd,
            "s",
            30.0,
        )
    }

    #[test]
    fn parses_and_sorts() {
        let r = parse("agent_id,frame,x,y,class\n2,0,1,1,Pedestrian\n1,5,2,2,pedestrian\n1,6,3,3,pedestrian\n").unwrap();
        assert_eq!(r.rows.len(), 3);
        assert_eq!((r.rows[0].agent_id, r.rows[0].frame), (1, 5));
        assert_eq!(r.rows[2].agent_id, 2);
    }

    #[test]
    fn drops_other_classes() {
        let r = parse("agent_id,frame,x,y,class\n1,0,1,1,pedestrian\n2,0,1,1,Car\n").unwrap();
        assert_eq!(r.rows.len(), 1);
    }

    #[test]
    fn errors_carry_line_numbers() {
        match parse("agent_id,frame,x,y,class\n1,0,1,1,pedestrian\n1,1,abc,1,pedestrian\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        match parse("agent_id,frame,x,y,class\n1,4,1,1,pedestrian\n1,2,1,1,pedestrian\n") {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("frame 2"));
            }
            other => panic!("{other:?}"),
        }
        match parse("agent_id,frame,x,class\n") {
            Err(Error::Parse {
                line: 1, message, ..
            }) => assert!(message.contains("`y`")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ind_columns_and_tab_delimiter() {
        let text =
            "recordingId\ttrackId\tframe\txCenter\tyCenter\tclass\n0\t7\t1\t1.5\t2.5\tpedestrian\n";
        let r = parse_recording(text, Path::new("x"), RecordingFormat::Ind, "s", 25.0).unwrap();
        assert_eq!(r.rows[0].agent_id, 7);
        assert_eq!((r.rows[0].x, r.rows[0].y), (1.5, 2.5));
    }

    fn track(agent: u64, frames: impl IntoIterator<Item = i64>) -> Vec<RawRow> {
        frames
            .into_iter()
            .map(|f| RawRow {
                agent_id: agent,
                frame: f,
                x: f as f64,
                y: agent as f64,
                class: PEDESTRIAN.into(),
            })
            .collect()
    }

    #[test]
    fn exact_fit_gives_one_window() {
        let rec = RawRecording {
            scene_id: "s".into(),
            rows: track(1, 0..35),
            frame_rate: 1.0,
        };
        let g = preprocess_star(&rec, &TimeConfig::long_term(), 1, 35).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].windows[0].observed.len(), 5);
        assert_eq!(g[0].windows[0].future.len(), 30);
    }

    #[test]
    fn gap_removes_agent() {
        let rec = RawRecording {
            scene_id: "s".into(),
            rows: track(1, (0..35).filter(|&f| f != 17)),
            frame_rate: 1.0,
        };
        assert!(preprocess_star(&rec, &TimeConfig::long_term(), 1, 35)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn subsampled_frames_are_verbatim() {
        let rec = RawRecording {
            scene_id: "s".into(),
            rows: track(3, 0..100),
            frame_rate: 10.0,
        };
        let time = TimeConfig::new(2, 1, 2, 0.5).unwrap();
        let g = preprocess_star(&rec, &time, 5, 1).unwrap();
        assert!(!g.is_empty());
        for w in flatten_windows(&g) {
            for (i, p) in w.full().iter().enumerate() {
                assert_eq!(p.x, (w.frame_start + 5 * i as i64) as f64);
            }
        }
    }

    #[test]
    fn nearest_resize_halves() {
        let g = Array3::from_shape_fn((1, 4, 4), |(_, i, j)| (i * 4 + j) as f64);
        let r = resize_nearest(&g, 2, 2);
        assert_eq!(
            r.iter().copied().collect::<Vec<_>>(),
            vec![5.0, 7.0, 13.0, 15.0]
        );
    }

    #[test]
    fn one_hot_from_index() {
        let legend: Legend = [("a".to_string(), 0u8), ("b".to_string(), 4u8)]
            .into_iter()
            .collect();
        let idx = ndarray::Array2::from_shape_vec((1, 3), vec![0u8, 4, 0]).unwrap();
        let p = index_to_planes(&idx, &legend).unwrap();
        assert_eq!(
            p.iter().copied().collect::<Vec<_>>(),
            vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]
        );
        let bad = ndarray::Array2::from_shape_vec((1, 1), vec![2u8]).unwrap();
        assert!(index_to_planes(&bad, &legend).is_err());
    }

    #[test]
    fn turn_closed_form_matches_iteration() {
        let p = MotionPath {
            motion: Motion::Turn,
            start: Point::new(3.0, 4.0),
            speed: 0.7,
            heading: 0.3,
            turn_rate: 0.05,
            go: 1,
            stop: 1,
        };
        let mut q = p.start;
        for t in 0..40 {
            assert!(p.position(t).dist(q) < 1e-9);
            let h = p.heading + t as f64 * p.turn_rate;
            q = q.add(Point::new(h.cos(), h.sin()).scale(p.speed));
        }
    }

    #[test]
    fn stop_go_pauses() {
        let p = MotionPath {
            motion: Motion::StopGo,
            start: Point::default(),
            speed: 1.0,
            heading: 0.0,
            turn_rate: 0.0,
            go: 2,
            stop: 1,
        };
        let xs: Vec<f64> = (0..7).map(|t| p.position(t).x).collect();
        assert_eq!(xs, vec![0.0, 1.0, 2.0, 2.0, 3.0, 4.0, 4.0]);
    }

    #[test]
    fn synthetic_is_deterministic_and_in_bounds() {
        let cfg = SynthConfig {
            n_scenes: 3,
            ..Default::default()
        };
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.recording, y.recording);
            assert_eq!(x.map, y.map);
            for r in &x.recording.rows {
                assert!(x.map.contains(Point::new(r.x, r.y)));
            }
        }
        let ds = synthetic_dataset(&a, &TimeConfig::long_term(), 35).unwrap();
        assert_eq!(ds.n_windows(), 6);
    }

    #[test]
    fn ratio_split_is_disjoint_and_complete() {
        let ids: Vec<String> = (0..10).map(|i| format!("s{i}")).collect();
        let s = split_scenes(&ids, &SplitSpec::default(), 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (7, 1, 2));
        let mut all: Vec<String> = s
            .train
            .iter()
            .chain(&s.val)
            .chain(&s.test)
            .cloned()
            .collect();
        all.sort();
        let mut want = ids.clone();
        want.sort();
        assert_eq!(all, want);
    }

    #[test]
    fn list_split_rejects_overlap() {
        let ids: Vec<String> = vec!["a".into(), "b".into()];
        let spec = SplitSpec::Lists {
            train: vec!["a".into()],
            val: vec!["a".into()],
            test: vec!["b".into()],
        };
        assert!(split_scenes(&ids, &spec, 0).is_err());
    }
}
