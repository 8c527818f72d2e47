//! Online interactive teacher–student distillation.
//!
//! Per window the goal networks produce three heatmap predictions: the
//! student fed ground truth, the teacher fed the extended ground-truth
//! observation, and the teacher fed ground truth followed by the student's
//! own first predicted steps. The temporal decoders produce a student and a
//! teacher trajectory. Six loss terms follow:
//!
//! ```text
//! goal_student = mean_{t in [0, T_F)}     BCE(p_t, P_S(t))
//! goal_teacher = mean_{t in [E, T_F)}     BCE(p_t, P_T(t))
//! goal_distill = mean_{t in [E, T_F)}     BCE(p_t, P_T|S(t))
//! traj_student = mean_{t in [0, T_F)}     |x_t - xS_t|^2
//! traj_teacher = mean_{t in [E, T_F)}     |x_t - xT_t|^2
//! traj_distill = mean_{t in [E, T_F)}     |xT_t - xS_t|^2
//! total        = goal_* sum + lambda * traj_* sum
//! ```
//!
//! where `E` is the teacher's extra observation length (the waypoint index
//! by default).

use std::collections::BTreeMap;

use candle_core::Tensor;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batch::TrainBatch;
use crate::error::{Error, Result};
use crate::goalnet::{augment_tensor, GoalNet};
use crate::loss::{bce_tensor, masked_trajectory_mse};
use crate::model::ModelSet;
use crate::nn;
use crate::temporalnet::TemporalNet;
use crate::types::{LossBundle, SceneMap, TimeConfig, TrajectoryWindow, WindowGroup};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub lambda: f64,
    pub enable_gm_distill: bool,
    pub enable_tm_distill: bool,
    /// Let the distillation terms update teacher parameters.
    pub teacher_gradient_from_distill: bool,
    /// Future steps the teacher observes beyond `t_h`.
    pub teacher_extra_steps: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            enable_gm_distill: true,
            enable_tm_distill: true,
            teacher_gradient_from_distill: true,
            teacher_extra_steps: TimeConfig::long_term().t_wp,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self, time: &TimeConfig) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda must be finite and >= 0"));
        }
        if self.teacher_extra_steps >= time.t_f {
            return Err(Error::invalid(format!(
                "teacher_extra_steps {} must be < t_f {}",
                self.teacher_extra_steps, time.t_f
            )));
        }
        Ok(())
    }

    pub fn teacher_input_len(&self, time: &TimeConfig) -> usize {
        time.t_h + self.teacher_extra_steps
    }
}

pub struct GoalTerms {
    pub student: Tensor,
    pub teacher: Tensor,
    pub distill: Tensor,
}

pub struct TrajTerms {
    pub student: Tensor,
    pub teacher: Tensor,
    pub distill: Tensor,
}

fn zero() -> Result<Tensor> {
    nn::tensor(vec![0.0], ())
}

/// Goal loss terms from already-computed predictions.
///
/// `targets` and `student` cover all `T_F` future steps; teacher predictions
/// cover steps `[extra, T_F)`. Absent teacher predictions yield zero terms.
pub fn goal_loss_terms(
    targets: &Tensor,
    student: &Tensor,
    teacher_gt: Option<&Tensor>,
    teacher_aug: Option<&Tensor>,
    extra: usize,
) -> Result<GoalTerms> {
    let t_f = targets.dim(1)?;
    if extra >= t_f {
        return Err(Error::invalid("teacher extra steps must be < T_F"));
    }
    let late = targets.narrow(1, extra, t_f - extra)?;
    Ok(GoalTerms {
        student: bce_tensor(student, targets)?,
        teacher: teacher_gt.map_or_else(zero, |p| bce_tensor(p, &late))?,
        distill: teacher_aug.map_or_else(zero, |p| bce_tensor(p, &late))?,
    })
}

/// Trajectory loss terms; `future` and `student` are `(B, N, T_F, 2)`, the
/// teacher prediction `(B, N, T_F - extra, 2)`.
pub fn traj_loss_terms(
    future: &Tensor,
    weights: &Tensor,
    student: &Tensor,
    teacher: Option<&Tensor>,
    extra: usize,
    teacher_gradient: bool,
) -> Result<TrajTerms> {
    let t_f = future.dim(2)?;
    if extra >= t_f {
        return Err(Error::invalid("teacher extra steps must be < T_F"));
    }
    let student_term = masked_trajectory_mse(student, future, weights)?;
    match teacher {
        None => Ok(TrajTerms {
            student: student_term,
            teacher: zero()?,
            distill: zero()?,
        }),
        Some(tp) => {
            let late_gt = future.narrow(2, extra, t_f - extra)?;
            let late_student = student.narrow(2, extra, t_f - extra)?;
            let tp_distill = if teacher_gradient {
                tp.clone()
            } else {
                tp.detach()
            };
            Ok(TrajTerms {
                student: student_term,
                teacher: masked_trajectory_mse(tp, &late_gt, weights)?,
                distill: masked_trajectory_mse(&tp_distill, &late_student, weights)?,
            })
        }
    }
}

/// Combines the six components into a bundle; disabled distillation terms
/// are forced to exactly zero.
pub fn total_loss(components: [f64; 6], cfg: &DistillConfig) -> Result<LossBundle> {
    for (name, v) in LossBundle::COMPONENTS.iter().zip(components) {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                component: name,
                context: String::new(),
            });
        }
    }
    let [gs, mut gt, mut gd, ts, mut tt, mut td] = components;
    if !cfg.enable_gm_distill {
        gt = 0.0;
        gd = 0.0;
    }
    if !cfg.enable_tm_distill {
        tt = 0.0;
        td = 0.0;
    }
    let mut b = LossBundle {
        goal_student: gs,
        goal_teacher: gt,
        goal_distill: gd,
        traj_student: ts,
        traj_teacher: tt,
        traj_distill: td,
        lambda: cfg.lambda,
        total: 0.0,
    };
    b.total = b.recombined();
    if !b.total.is_finite() {
        return Err(Error::NonFinite {
            component: "total",
            context: String::new(),
        });
    }
    Ok(b)
}

pub struct StepLosses {
    /// Differentiable total.
    pub total: Tensor,
    /// Differentiable components in [`LossBundle::COMPONENTS`] order;
    /// disabled terms are constant zeros.
    pub terms: [Tensor; 6],
    pub bundle: LossBundle,
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_scalar::<f64>()?)
}

/// Computes every forward pass and loss term for one batch.
pub fn distillation_losses(
    models: &ModelSet,
    batch: &TrainBatch,
    cfg: &DistillConfig,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<StepLosses> {
    let time = &models.time;
    let extra = cfg.teacher_extra_steps;
    if extra != models.teacher_extra {
        return Err(Error::invalid(format!(
            "models built for teacher extra {} but config asks for {extra}",
            models.teacher_extra
        )));
    }

    let sg = models.student_goal.params.tracked();
    let student_hm = models
        .student_goal
        .forward(sg, &batch.scene, &batch.observed_heatmaps)?;
    let (teacher_gt, teacher_aug) = if cfg.enable_gm_distill {
        let tg = models.teacher_goal.params.tracked();
        let gt_in = batch.extended_observation(extra)?;
        let gt_pred = models.teacher_goal.forward(tg, &batch.scene, &gt_in)?;
        let aug_in = augment_tensor(&batch.observed_heatmaps, &student_hm, extra)?;
        let tg_aug = if cfg.teacher_gradient_from_distill {
            tg
        } else {
            models.teacher_goal.params.frozen()
        };
        let aug_pred = models.teacher_goal.forward(tg_aug, &batch.scene, &aug_in)?;
        (Some(gt_pred), Some(aug_pred))
    } else {
        (None, None)
    };
    let goal = goal_loss_terms(
        &batch.future_heatmaps,
        &student_hm,
        teacher_gt.as_ref(),
        teacher_aug.as_ref(),
        extra,
    )?;

    let st = models.student_temporal.params.tracked();
    let student_traj = models.student_temporal.teacher_forced(
        st,
        &batch.temporal,
        time.t_h,
        time.t_f,
        dropout_rng.as_deref_mut(),
    )?;
    let teacher_traj = if cfg.enable_tm_distill {
        let tt = models.teacher_temporal.params.tracked();
        Some(models.teacher_temporal.teacher_forced(
            tt,
            &batch.temporal,
            time.t_h + extra,
            time.t_f - extra,
            dropout_rng.as_deref_mut(),
        )?)
    } else {
        None
    };
    let traj = traj_loss_terms(
        &batch.future,
        &batch.weights,
        &student_traj,
        teacher_traj.as_ref(),
        extra,
        cfg.teacher_gradient_from_distill,
    )?;

    let bundle = total_loss(
        [
            scalar(&goal.student)?,
            scalar(&goal.teacher)?,
            scalar(&goal.distill)?,
            scalar(&traj.student)?,
            scalar(&traj.teacher)?,
            scalar(&traj.distill)?,
        ],
        cfg,
    )?;
    let mut total = goal.student.clone();
    if cfg.enable_gm_distill {
        total = ((total + &goal.teacher)? + &goal.distill)?;
    }
    let mut traj_sum = traj.student.clone();
    if cfg.enable_tm_distill {
        traj_sum = ((traj_sum + &traj.teacher)? + &traj.distill)?;
    }
    let total = (total + (traj_sum * cfg.lambda)?)?;
    Ok(StepLosses {
        total,
        terms: [
            goal.student,
            goal.teacher,
            goal.distill,
            traj.student,
            traj.teacher,
            traj.distill,
        ],
        bundle,
    })
}

fn single_window_inputs(
    scene: &SceneMap,
    window: &TrajectoryWindow,
) -> (BTreeMap<String, SceneMap>, WindowGroup) {
    let mut scenes = BTreeMap::new();
    scenes.insert(window.scene_id.clone(), scene.clone());
    let group = WindowGroup {
        scene_id: window.scene_id.clone(),
        frame_start: window.frame_start,
        windows: vec![window.clone()],
    };
    (scenes, group)
}

/// The three goal terms for a single window.
pub fn goal_distill_step(
    student: &GoalNet,
    teacher: &GoalNet,
    scene: &SceneMap,
    window: &TrajectoryWindow,
    time: &TimeConfig,
    cfg: &DistillConfig,
) -> Result<(f64, f64, f64)> {
    cfg.validate(time)?;
    let extra = cfg.teacher_extra_steps;
    if cfg.enable_gm_distill && extra == time.t_wp && !time.is_midpoint_split() {
        return Err(Error::invalid(
            "goal distillation at the waypoint requires t_f = 2 * t_wp",
        ));
    }
    if student.cfg.in_steps != time.t_h || student.cfg.out_steps != time.t_f {
        return Err(Error::invalid(
            "student goal network does not match the time configuration",
        ));
    }
    let (scenes, group) = single_window_inputs(scene, window);
    let temporal_stub = crate::temporalnet::TemporalNetConfig {
        scene_channels: scene.channels(),
        use_map_cross_attention: false,
        patch: 1,
        ..Default::default()
    };
    let batch = TrainBatch::assemble(&[&group], &scenes, time, student.cfg.sigma, &temporal_stub)?;
    let s = student.forward(
        student.params.frozen(),
        &batch.scene,
        &batch.observed_heatmaps,
    )?;
    let (tg, ta) = if cfg.enable_gm_distill {
        let tp = teacher.params.frozen();
        let gt = teacher.forward(tp, &batch.scene, &batch.extended_observation(extra)?)?;
        let aug = teacher.forward(
            tp,
            &batch.scene,
            &augment_tensor(&batch.observed_heatmaps, &s, extra)?,
        )?;
        (Some(gt), Some(aug))
    } else {
        (None, None)
    };
    let terms = goal_loss_terms(&batch.future_heatmaps, &s, tg.as_ref(), ta.as_ref(), extra)?;
    Ok((
        scalar(&terms.student)?,
        scalar(&terms.teacher)?,
        scalar(&terms.distill)?,
    ))
}

/// The three trajectory terms for a single window, teacher-forced, with
/// ground-truth goal and waypoint conditioning.
pub fn traj_distill_step(
    student: &TemporalNet,
    teacher: &TemporalNet,
    scene: &SceneMap,
    window: &TrajectoryWindow,
    time: &TimeConfig,
    cfg: &DistillConfig,
) -> Result<(f64, f64, f64)> {
    cfg.validate(time)?;
    let extra = cfg.teacher_extra_steps;
    let (scenes, group) = single_window_inputs(scene, window);
    let batch = TrainBatch::assemble(&[&group], &scenes, time, student.cfg.sigma, &student.cfg)?;
    let sp = student.teacher_forced(
        student.params.frozen(),
        &batch.temporal,
        time.t_h,
        time.t_f,
        None,
    )?;
    let tp = if cfg.enable_tm_distill {
        Some(teacher.teacher_forced(
            teacher.params.frozen(),
            &batch.temporal,
            time.t_h + extra,
            time.t_f - extra,
            None,
        )?)
    } else {
        None
    };
    let terms = traj_loss_terms(&batch.future, &batch.weights, &sp, tp.as_ref(), extra, true)?;
    Ok((
        scalar(&terms.student)?,
        scalar(&terms.teacher)?,
        scalar(&terms.distill)?,
    ))
}
