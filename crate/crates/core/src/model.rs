//! The four networks trained together: student and teacher goal networks,
//! student and teacher temporal decoders.

use ndarray::Axis;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batch::{render_stack, scene_stack};
use crate::error::{Error, Result};
use crate::goalnet::{sample_goal_set, tensor_to_array3, GoalNet, GoalNetConfig, Role};
use crate::metrics::Forecaster;
use crate::nn::ParamStore;
use crate::temporalnet::{condition_patches, TemporalBatch, TemporalNet, TemporalNetConfig};
use crate::types::{HeatmapStack, Point, Provenance, SceneMap, TimeConfig, WindowGroup};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub temperature: f64,
    /// Width of the Gaussian prior used to pick the waypoint, in pixels.
    pub prior_sigma: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            prior_sigma: 8.0,
        }
    }
}

/// Parameter group names, in checkpoint order.
pub const GROUPS: [&str; 4] = [
    "student_goal",
    "teacher_goal",
    "student_temporal",
    "teacher_temporal",
];

#[derive(Debug, Clone)]
pub struct ModelSet {
    pub time: TimeConfig,
    pub teacher_extra: usize,
    pub sampling: SamplingConfig,
    pub student_goal: GoalNet,
    pub teacher_goal: GoalNet,
    pub student_temporal: TemporalNet,
    pub teacher_temporal: TemporalNet,
}

/// Teacher goal network shape for a given extra observation length.
pub fn teacher_goal_config(
    student: &GoalNetConfig,
    time: &TimeConfig,
    extra: usize,
) -> Result<GoalNetConfig> {
    if extra >= time.t_f {
        return Err(Error::invalid(format!(
            "teacher extra observation {extra} leaves no horizon to predict (t_f = {})",
            time.t_f
        )));
    }
    Ok(GoalNetConfig {
        in_steps: time.t_h + extra,
        out_steps: time.t_f - extra,
        ..*student
    })
}

impl ModelSet {
    /// `goal` is the student goal configuration; its step counts are
    /// overwritten from `time`.
    pub fn new(
        time: TimeConfig,
        goal: GoalNetConfig,
        temporal: TemporalNetConfig,
        teacher_extra: usize,
        sampling: SamplingConfig,
        seed: u64,
    ) -> Result<Self> {
        time.validate()?;
        let student_cfg = GoalNetConfig {
            in_steps: time.t_h,
            out_steps: time.t_f,
            ..goal
        };
        let teacher_cfg = teacher_goal_config(&student_cfg, &time, teacher_extra)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            time,
            teacher_extra,
            sampling,
            student_goal: GoalNet::new(student_cfg, Role::Student, &mut rng)?,
            teacher_goal: GoalNet::new(teacher_cfg, Role::Teacher, &mut rng)?,
            student_temporal: TemporalNet::new(temporal, &mut rng)?,
            teacher_temporal: TemporalNet::new(temporal, &mut rng)?,
        })
    }

    pub fn groups(&self) -> [(&'static str, &ParamStore); 4] {
        [
            (GROUPS[0], &self.student_goal.params),
            (GROUPS[1], &self.teacher_goal.params),
            (GROUPS[2], &self.student_temporal.params),
            (GROUPS[3], &self.teacher_temporal.params),
        ]
    }

    pub fn group(&self, name: &str) -> Result<&ParamStore> {
        self.groups()
            .into_iter()
            .find(|(n, _)| *n == name)
            .map(|(_, p)| p)
            .ok_or_else(|| Error::invalid(format!("unknown parameter group `{name}`")))
    }
}

impl Forecaster for ModelSet {
    fn horizon(&self) -> usize {
        self.time.t_f
    }

    /// Student inference: goal heatmaps from the observation, `k` sampled
    /// goals each with a conditioned waypoint, then one autoregressive
    /// rollout per sample with all agents of the group decoded jointly.
    fn forecast(
        &self,
        group: &WindowGroup,
        scene: &SceneMap,
        k: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Vec<Vec<Point>>>> {
        let time = &self.time;
        let agents = group.windows.len();
        if agents == 0 || k == 0 {
            return Err(Error::invalid(
                "forecast needs at least one agent and one sample",
            ));
        }
        for w in &group.windows {
            if w.observed.len() != time.t_h {
                return Err(Error::invalid(format!(
                    "window has {} observed steps, expected {}",
                    w.observed.len(),
                    time.t_h
                )));
            }
        }
        let net = &self.student_goal;
        let scenes = vec![scene; agents];
        let tracks: Vec<&[Point]> = group
            .windows
            .iter()
            .map(|w| w.observed.as_slice())
            .collect();
        let observed = render_stack(&tracks, net.cfg.sigma, scene.height(), scene.width())?;
        let pred = net.forward(net.params.frozen(), &scene_stack(&scenes)?, &observed)?;

        let tcfg = &self.student_temporal.cfg;
        let mut goals = vec![Vec::with_capacity(agents); k];
        let mut waypoints = vec![Vec::with_capacity(agents); k];
        for (a, w) in group.windows.iter().enumerate() {
            let stack = HeatmapStack {
                grid: tensor_to_array3(&pred.get(a)?)?,
                provenance: Provenance::Student,
            };
            let set = sample_goal_set(
                &stack,
                k,
                self.sampling.temperature,
                w.last_observed(),
                time.t_wp,
                self.sampling.prior_sigma,
                rng,
            )?;
            for s in 0..k {
                goals[s].push(set.goals[s]);
                waypoints[s].push(set.waypoints[s]);
            }
        }
        let condition = if tcfg.use_map_cross_attention {
            let mut c = Vec::with_capacity(k * agents);
            for s in 0..k {
                for a in 0..agents {
                    c.push(condition_patches(
                        scene,
                        goals[s][a],
                        tcfg.use_waypoint.then_some(waypoints[s][a]),
                        tcfg,
                    )?);
                }
            }
            Some(c)
        } else {
            None
        };
        let batch = TemporalBatch {
            positions: vec![group.windows.iter().map(|w| w.observed.clone()).collect(); k],
            goals,
            waypoints,
            valid: vec![vec![true; agents]; k],
            condition,
            patch_grid: (scene.height() / tcfg.patch, scene.width() / tcfg.patch),
        };
        let rolled = self.student_temporal.rollout(
            self.student_temporal.params.frozen(),
            &batch,
            time.t_h,
            time.t_f,
        )?;
        Ok((0..agents)
            .map(|a| rolled.iter().map(|sample| sample[a].clone()).collect())
            .collect())
    }
}

/// Student goal heatmaps for every window of a group, `(agents, t_f, H, W)`.
pub fn student_heatmaps(
    models: &ModelSet,
    group: &WindowGroup,
    scene: &SceneMap,
) -> Result<Vec<HeatmapStack>> {
    let net = &models.student_goal;
    let tracks: Vec<&[Point]> = group
        .windows
        .iter()
        .map(|w| w.observed.as_slice())
        .collect();
    let observed = render_stack(&tracks, net.cfg.sigma, scene.height(), scene.width())?;
    let scenes = vec![scene; tracks.len()];
    let pred = net.forward(net.params.frozen(), &scene_stack(&scenes)?, &observed)?;
    let (m, t, h, w) = pred.dims4()?;
    let data = ndarray::Array4::from_shape_vec((m, t, h, w), pred.flatten_all()?.to_vec1::<f64>()?)
        .map_err(|e| Error::invalid(e.to_string()))?;
    Ok(data
        .axis_iter(Axis(0))
        .map(|g| HeatmapStack {
            grid: g.to_owned(),
            provenance: Provenance::Student,
        })
        .collect())
}
