//! Turning window groups into the tensors consumed by both networks.

use std::collections::BTreeMap;

use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::heatmap::fill_gaussian_slice;
use crate::nn;
use crate::temporalnet::{condition_patches, TemporalBatch, TemporalNetConfig};
use crate::types::{Point, SceneMap, TimeConfig, WindowGroup};

/// Everything a training step needs for a set of scene windows.
///
/// Goal-network tensors stack every real agent window along the batch axis
/// (`M` windows); temporal tensors keep the `(group, agent)` layout padded
/// to the largest group.
pub struct TrainBatch {
    /// `(M, C_s, H, W)`
    pub scene: Tensor,
    /// `(M, t_h, H, W)`
    pub observed_heatmaps: Tensor,
    /// `(M, t_f, H, W)`
    pub future_heatmaps: Tensor,
    pub temporal: TemporalBatch,
    /// `(B, N, t_f, 2)`
    pub future: Tensor,
    /// `(B, N)`, 1 for real agents.
    pub weights: Tensor,
    pub windows: usize,
}

pub fn render_stack(
    tracks: &[&[Point]],
    sigma: f64,
    height: usize,
    width: usize,
) -> Result<Tensor> {
    let steps = tracks.first().map_or(0, |t| t.len());
    if steps == 0 || tracks.iter().any(|t| t.len() != steps) {
        return Err(Error::invalid(
            "heatmap tracks must be non-empty and of equal length",
        ));
    }
    let plane = height * width;
    let mut data = vec![0.0; tracks.len() * steps * plane];
    for (m, track) in tracks.iter().enumerate() {
        for (t, &p) in track.iter().enumerate() {
            let off = (m * steps + t) * plane;
            fill_gaussian_slice(&mut data[off..off + plane], height, width, p, sigma);
        }
    }
    nn::tensor(data, (tracks.len(), steps, height, width))
}

pub fn scene_stack(scenes: &[&SceneMap]) -> Result<Tensor> {
    let first = scenes.first().ok_or_else(|| Error::invalid("no scenes"))?;
    let dims = first.grid.dim();
    let mut data = Vec::with_capacity(scenes.len() * first.grid.len());
    for s in scenes {
        if s.grid.dim() != dims {
            return Err(Error::invalid("scene maps in one batch must share a shape"));
        }
        data.extend(s.grid.iter().copied());
    }
    nn::tensor(data, (scenes.len(), dims.0, dims.1, dims.2))
}

impl TrainBatch {
    pub fn assemble(
        groups: &[&WindowGroup],
        scenes: &BTreeMap<String, SceneMap>,
        time: &TimeConfig,
        heatmap_sigma: f64,
        temporal: &TemporalNetConfig,
    ) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let n_agents = groups.iter().map(|g| g.windows.len()).max().unwrap_or(0);
        if n_agents == 0 {
            return Err(Error::invalid("batch contains an empty window group"));
        }
        let mut agent_scenes = Vec::new();
        let mut obs_tracks: Vec<&[Point]> = Vec::new();
        let mut fut_tracks: Vec<&[Point]> = Vec::new();
        let mut positions = Vec::with_capacity(groups.len());
        let mut goals = Vec::with_capacity(groups.len());
        let mut waypoints = Vec::with_capacity(groups.len());
        let mut valid = Vec::with_capacity(groups.len());
        let mut condition = temporal.use_map_cross_attention.then(Vec::new);
        let mut future = Vec::with_capacity(groups.len() * n_agents * time.t_f * 2);
        let mut weights = Vec::with_capacity(groups.len() * n_agents);
        let mut patch_grid = (0, 0);

        for g in groups {
            let scene = scenes
                .get(&g.scene_id)
                .ok_or_else(|| Error::invalid(format!("no scene map for `{}`", g.scene_id)))?;
            patch_grid = (
                scene.height() / temporal.patch,
                scene.width() / temporal.patch,
            );
            let (mut gp, mut gg, mut gw, mut gv) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for a in 0..n_agents {
                match g.windows.get(a) {
                    Some(w) => {
                        w.check(time)?;
                        agent_scenes.push(scene);
                        obs_tracks.push(&w.observed);
                        fut_tracks.push(&w.future);
                        let goal = w.goal();
                        let wp = w.future[time.t_wp];
                        gp.push(w.full());
                        gg.push(goal);
                        gw.push(wp);
                        gv.push(true);
                        if let Some(c) = condition.as_mut() {
                            c.push(condition_patches(
                                scene,
                                goal,
                                temporal.use_waypoint.then_some(wp),
                                temporal,
                            )?);
                        }
                        future.extend(w.future.iter().flat_map(|p| [p.x, p.y]));
                        weights.push(1.0);
                    }
                    None => {
                        let pad = Point::default();
                        gp.push(vec![pad; time.window_len()]);
                        gg.push(pad);
                        gw.push(pad);
                        gv.push(false);
                        if let Some(c) = condition.as_mut() {
                            c.push(condition_patches(scene, pad, None, temporal)?);
                        }
                        future.extend(std::iter::repeat_n(0.0, time.t_f * 2));
                        weights.push(0.0);
                    }
                }
            }
            positions.push(gp);
            goals.push(gg);
            waypoints.push(gw);
            valid.push(gv);
        }
        let (h, w) = (agent_scenes[0].height(), agent_scenes[0].width());
        let b = groups.len();
        Ok(Self {
            scene: scene_stack(&agent_scenes)?,
            observed_heatmaps: render_stack(&obs_tracks, heatmap_sigma, h, w)?,
            future_heatmaps: render_stack(&fut_tracks, heatmap_sigma, h, w)?,
            temporal: TemporalBatch {
                positions,
                goals,
                waypoints,
                valid,
                condition,
                patch_grid,
            },
            future: nn::tensor(future, (b, n_agents, time.t_f, 2))?,
            weights: nn::tensor(weights, (b, n_agents))?,
            windows: obs_tracks.len(),
        })
    }

    /// Observation heatmaps extended with the first `extra` future steps.
    pub fn extended_observation(&self, extra: usize) -> Result<Tensor> {
        if extra == 0 {
            return Ok(self.observed_heatmaps.clone());
        }
        Ok(Tensor::cat(
            &[
                &self.observed_heatmaps,
                &self.future_heatmaps.narrow(1, 0, extra)?,
            ],
            1,
        )?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::TrajectoryWindow;
    use ndarray::Array3;

    #[test]
    fn pads_uneven_groups() {
        let time = TimeConfig::new(2, 1, 2, 1.0).unwrap();
        let mk = |id: u64, x: f64| TrajectoryWindow {
            scene_id: "s".into(),
            agent_id: id,
            observed: vec![Point::new(x, 1.0), Point::new(x, 2.0)],
            future: vec![Point::new(x, 3.0), Point::new(x, 4.0)],
            frame_start: 0,
        };
        let g1 = WindowGroup {
            scene_id: "s".into(),
            frame_start: 0,
            windows: vec![mk(1, 1.0), mk(2, 2.0)],
        };
        let g2 = WindowGroup {
            scene_id: "s".into(),
            frame_start: 4,
            windows: vec![mk(3, 3.0)],
        };
        let mut scenes = BTreeMap::new();
        scenes.insert(
            "s".to_string(),
            SceneMap::new("s", Array3::zeros((2, 8, 8)), 1.0).unwrap(),
        );
        let cfg = TemporalNetConfig {
            scene_channels: 2,
            patch: 4,
            d_model: 8,
            heads: 2,
            ..Default::default()
        };
        let b = TrainBatch::assemble(&[&g1, &g2], &scenes, &time, 1.0, &cfg).unwrap();
        assert_eq!(b.windows, 3);
        assert_eq!(b.scene.dims(), &[3, 2, 8, 8]);
        assert_eq!(b.future_heatmaps.dims(), &[3, 2, 8, 8]);
        assert_eq!(b.future.dims(), &[2, 2, 2, 2]);
        assert_eq!(
            b.weights.to_vec2::<f64>().unwrap(),
            vec![vec![1.0, 1.0], vec![1.0, 0.0]]
        );
        assert_eq!(b.temporal.condition.as_ref().unwrap().len(), 4);
        assert_eq!(b.extended_observation(1).unwrap().dims(), &[3, 3, 8, 8]);
    }
}
