//! Run plus data configuration read from one TOML file.

use std::fs;
use std::path::{Path, PathBuf};

use longtraj_core::dataio::{
    self, load_recording, load_scene_map, preprocess_star, split_scenes, stride_frames,
    synthetic_dataset, MapEncoding, RecordingFormat, SplitSpec, SynthConfig,
};
use longtraj_core::{Dataset, Error, Result, RunConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSource {
    pub id: String,
    pub trajectories: PathBuf,
    #[serde(default = "default_format")]
    pub format: RecordingFormat,
    pub frame_rate: f64,
    pub map: PathBuf,
    pub legend: PathBuf,
    #[serde(default = "default_encoding")]
    pub encoding: MapEncoding,
    /// Working (height, width); the source resolution when absent.
    #[serde(default)]
    pub resolution: Option<(usize, usize)>,
}

fn default_format() -> RecordingFormat {
    RecordingFormat::Sdd
}

fn default_encoding() -> MapEncoding {
    MapEncoding::Planes
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Generated scenes; mutually exclusive with `scenes`. Defaults apply
    /// when neither is given.
    pub synthetic: Option<SynthConfig>,
    pub scenes: Vec<SceneSource>,
    pub split: SplitSpec,
    /// Shuffle seed for ratio splits, kept apart from the run seed so that
    /// runs with different seeds see the same partition.
    pub split_seed: u64,
    pub window_stride: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            synthetic: None,
            scenes: Vec::new(),
            split: SplitSpec::default(),
            split_seed: 0,
            window_stride: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub run: RunConfig,
    pub data: DataConfig,
}

impl CliConfig {
    /// Reads a config file; relative data paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = toml::from_str(&text)
            .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for s in &mut cfg.data.scenes {
            for p in [&mut s.trajectories, &mut s.map, &mut s.legend] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::invalid(e.to_string()))
    }
}

/// Every scene of the configured source, windowed.
pub fn load_dataset(cfg: &CliConfig) -> Result<Dataset> {
    let d = &cfg.data;
    let time = &cfg.run.time;
    if d.window_stride == 0 {
        return Err(Error::invalid("window_stride must be >= 1"));
    }
    match (&d.synthetic, d.scenes.is_empty()) {
        (Some(_), false) => Err(Error::invalid(
            "data.synthetic and data.scenes are mutually exclusive",
        )),
        (s, true) => synthetic_dataset(
            &dataio::generate_synthetic(&s.clone().unwrap_or_default())?,
            time,
            d.window_stride,
        ),
        (None, false) => {
            let channels = cfg.run.goalnet.scene_channels;
            let mut ds = Dataset::default();
            for s in &d.scenes {
                let map =
                    load_scene_map(&s.map, &s.legend, s.encoding, &s.id, channels, s.resolution)?;
                let rec = load_recording(&s.trajectories, s.format, &s.id, s.frame_rate)?
                    .rescaled(map.scale);
                let every = stride_frames(s.frame_rate, time.stride_seconds);
                ds.groups
                    .extend(preprocess_star(&rec, time, every, d.window_stride)?);
                ds.scenes.insert(s.id.clone(), map);
            }
            Ok(ds)
        }
    }
}

/// Windows of one named split.
pub fn load_split(cfg: &CliConfig, all: &Dataset, split: &str) -> Result<Dataset> {
    let splits = split_scenes(&all.scene_ids(), &cfg.data.split, cfg.data.split_seed)?;
    Ok(all.subset(splits.get(split)?))
}
