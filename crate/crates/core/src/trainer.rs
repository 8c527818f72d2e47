//! Joint optimization of the student and teacher networks.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batch::TrainBatch;
use crate::checkpoint::Checkpoint;
use crate::dataio::Dataset;
use crate::distill::{distillation_losses, DistillConfig};
use crate::error::{Error, Result};
use crate::goalnet::GoalNetConfig;
use crate::metrics::evaluate;
use crate::model::{ModelSet, SamplingConfig};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::temporalnet::TemporalNetConfig;
use crate::types::{LossBundle, TimeConfig};

/// Component switches of the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ablation {
    /// Cross-attention from trajectory tokens to semantic-map patches.
    pub map: bool,
    pub waypoint: bool,
    /// Attention between different agents.
    pub social: bool,
    /// Goal and waypoint heatmaps appended to the map patches.
    pub gw_hm: bool,
    pub gm_distill: bool,
    pub tm_distill: bool,
}

impl Ablation {
    pub const TOGGLES: [&'static str; 6] = [
        "map",
        "waypoint",
        "social",
        "gw_hm",
        "gm_distill",
        "tm_distill",
    ];

    pub const fn none() -> Self {
        Self {
            map: false,
            waypoint: false,
            social: false,
            gw_hm: false,
            gm_distill: false,
            tm_distill: false,
        }
    }

    pub const fn full() -> Self {
        Self {
            map: true,
            waypoint: true,
            social: true,
            gw_hm: true,
            gm_distill: true,
            tm_distill: true,
        }
    }

    fn slot(&mut self, name: &str) -> Result<&mut bool> {
        Ok(match name {
            "map" => &mut self.map,
            "waypoint" => &mut self.waypoint,
            "social" => &mut self.social,
            "gw_hm" => &mut self.gw_hm,
            "gm_distill" => &mut self.gm_distill,
            "tm_distill" => &mut self.tm_distill,
            other => {
                return Err(Error::invalid(format!(
                    "unknown toggle `{other}`; expected one of {}",
                    Self::TOGGLES.join(", ")
                )))
            }
        })
    }

    /// Only the named toggles enabled.
    pub fn from_toggles<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let mut a = Self::none();
        for n in names {
            *a.slot(n.as_ref().trim())? = true;
        }
        Ok(a)
    }

    pub fn values(&self) -> [bool; 6] {
        [
            self.map,
            self.waypoint,
            self.social,
            self.gw_hm,
            self.gm_distill,
            self.tm_distill,
        ]
    }

    pub fn enabled(&self) -> Vec<&'static str> {
        Self::TOGGLES
            .iter()
            .zip(self.values())
            .filter(|(_, v)| *v)
            .map(|(n, _)| *n)
            .collect()
    }

    /// Directory-safe name, `none` when every toggle is off.
    pub fn signature(&self) -> String {
        let on = self.enabled();
        if on.is_empty() {
            "none".into()
        } else {
            on.join("+")
        }
    }

    /// The nine-row ablation grid: the all-off baseline, then components
    /// added one group at a time, then each distillation scheme.
    pub fn ablation_grid() -> Vec<Self> {
        let mk = |v: [bool; 6]| Self {
            map: v[0],
            waypoint: v[1],
            social: v[2],
            gw_hm: v[3],
            gm_distill: v[4],
            tm_distill: v[5],
        };
        vec![
            mk([false, false, false, false, false, false]),
            mk([true, false, false, false, false, false]),
            mk([false, true, false, false, false, false]),
            mk([true, true, false, false, false, false]),
            mk([true, true, true, false, false, false]),
            mk([true, true, true, true, false, false]),
            mk([true, true, true, true, true, false]),
            mk([true, true, true, true, false, true]),
            mk([true, true, true, true, true, true]),
        ]
    }
}

impl Default for Ablation {
    fn default() -> Self {
        Self::full()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub time: TimeConfig,
    pub distill: DistillConfig,
    pub goalnet: GoalNetConfig,
    pub temporalnet: TemporalNetConfig,
    pub optimizer: OptimizerConfig,
    pub sampling: SamplingConfig,
    /// Window groups per optimization step.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Overrides the matching switches in `temporalnet` and `distill`.
    pub ablation: Ablation,
    /// Samples per window during validation.
    pub val_k: usize,
    /// Validate every this many epochs; 0 disables validation.
    pub val_every: usize,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            time: TimeConfig::long_term(),
            distill: DistillConfig::default(),
            goalnet: GoalNetConfig::default(),
            temporalnet: TemporalNetConfig::default(),
            optimizer: OptimizerConfig::default(),
            sampling: SamplingConfig::default(),
            batch_size: 4,
            epochs: 50,
            seed: 0,
            ablation: Ablation::full(),
            val_k: 3,
            val_every: 1,
            output_dir: None,
        }
    }
}

/// Fields that may differ between a checkpoint and the run resuming it.
const RESUMABLE_FIELDS: [&str; 2] = ["epochs", "output_dir"];

fn flatten_json(prefix: &str, v: &serde_json::Value, out: &mut Vec<(String, String)>) {
    match v {
        serde_json::Value::Object(m) => {
            for (k, x) in m {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten_json(&key, x, out);
            }
        }
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::invalid(format!("run config: {e}")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::invalid(format!("run config: {e}")))
    }

    /// Network and distillation configs with the ablation switches applied.
    pub fn resolved(&self) -> (GoalNetConfig, TemporalNetConfig, DistillConfig) {
        let a = &self.ablation;
        let temporal = TemporalNetConfig {
            use_map_cross_attention: a.map,
            use_waypoint: a.waypoint,
            use_social: a.social,
            use_gw_heatmap: a.gw_hm,
            ..self.temporalnet
        };
        let distill = DistillConfig {
            enable_gm_distill: a.gm_distill,
            enable_tm_distill: a.tm_distill,
            ..self.distill
        };
        (self.goalnet, temporal, distill)
    }

    pub fn validate(&self) -> Result<()> {
        self.time.validate()?;
        let (g, t, d) = self.resolved();
        g.validate()?;
        t.validate()?;
        d.validate(&self.time)?;
        self.optimizer.validate()?;
        if self.batch_size == 0 || self.val_k == 0 {
            return Err(Error::invalid("batch_size and val_k must be >= 1"));
        }
        if g.scene_channels != t.scene_channels {
            return Err(Error::invalid(
                "goalnet and temporalnet disagree on scene channels",
            ));
        }
        Ok(())
    }

    pub fn build_models(&self) -> Result<ModelSet> {
        self.validate()?;
        let (g, t, d) = self.resolved();
        ModelSet::new(
            self.time,
            g,
            t,
            d.teacher_extra_steps,
            self.sampling,
            self.seed,
        )
    }

    /// Differences that prevent resuming, as `field: saved -> requested`.
    pub fn resume_mismatches(&self, requested: &RunConfig) -> Result<Vec<String>> {
        let to_pairs = |c: &RunConfig| -> Result<Vec<(String, String)>> {
            let v = serde_json::to_value(c).map_err(|e| Error::invalid(e.to_string()))?;
            let mut out = Vec::new();
            flatten_json("", &v, &mut out);
            Ok(out
                .into_iter()
                .filter(|(k, _)| !RESUMABLE_FIELDS.contains(&k.split('.').next().unwrap_or("")))
                .collect())
        };
        let (a, b) = (to_pairs(self)?, to_pairs(requested)?);
        Ok(a.iter()
            .zip(&b)
            .filter(|(x, y)| x != y)
            .map(|((k, va), (_, vb))| format!("{k}: {va} -> {vb}"))
            .collect())
    }
}

/// Epoch-mean loss components plus optional validation metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub losses: LossBundle,
    pub val_min_ade: Option<f64>,
    pub val_min_fde: Option<f64>,
}

pub const LOG_HEADER: &str = "epoch\tgoal_student\tgoal_teacher\tgoal_distill\ttraj_student\ttraj_teacher\ttraj_distill\ttotal\tval_min_ade\tval_min_fde";

impl EpochRecord {
    pub fn log_line(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |x| format!("{x:.9e}"));
        let mut cells = vec![self.epoch.to_string()];
        cells.extend(self.losses.components().iter().map(|v| format!("{v:.9e}")));
        cells.push(format!("{:.9e}", self.losses.total));
        cells.push(opt(self.val_min_ade));
        cells.push(opt(self.val_min_fde));
        cells.join("\t")
    }
}

pub struct TrainOutcome {
    pub models: ModelSet,
    pub checkpoint: Checkpoint,
}

/// Per-epoch generator; depends only on the seed and the epoch so resumed
/// runs draw the same numbers as uninterrupted ones.
fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

fn mean_bundle(sum: [f64; 6], steps: usize, distill: &DistillConfig) -> Result<LossBundle> {
    let n = steps.max(1) as f64;
    crate::distill::total_loss(sum.map(|v| v / n), distill)
}

struct Run<'a> {
    cfg: &'a RunConfig,
    models: ModelSet,
    opt: Optimizer,
    history: Vec<EpochRecord>,
    best: Option<f64>,
    epoch: usize,
}

impl Run<'_> {
    fn checkpoint(&self) -> Result<Checkpoint> {
        Checkpoint::capture(
            self.cfg,
            &self.models,
            self.opt.state()?,
            self.epoch,
            &self.history,
            self.best,
        )
    }

    fn epoch(&mut self, train: &Dataset, val: Option<&Dataset>) -> Result<()> {
        let cfg = self.cfg;
        let (goal, temporal, distill) = cfg.resolved();
        let epoch = self.epoch + 1;
        let mut rng = epoch_rng(cfg.seed, epoch);
        let mut order: Vec<usize> = (0..train.groups.len()).collect();
        order.shuffle(&mut rng);
        let mut sum = [0.0; 6];
        let mut steps = 0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let groups: Vec<_> = chunk.iter().map(|&i| &train.groups[i]).collect();
            let batch =
                TrainBatch::assemble(&groups, &train.scenes, &cfg.time, goal.sigma, &temporal)?;
            let losses = distillation_losses(&self.models, &batch, &distill, Some(&mut rng))
                .map_err(|e| match e {
                    Error::NonFinite { component, context } => Error::NonFinite {
                        component,
                        context: format!("{context} at epoch {epoch}, step {}", step + 1),
                    },
                    other => other,
                })?;
            let grads = losses.total.backward()?;
            self.opt.step(&self.models.groups(), &grads)?;
            for (s, v) in sum.iter_mut().zip(losses.bundle.components()) {
                *s += v;
            }
            steps += 1;
        }
        let losses = mean_bundle(sum, steps, &distill)?;
        let (mut val_ade, mut val_fde) = (None, None);
        if let Some(v) =
            val.filter(|v| cfg.val_every > 0 && epoch % cfg.val_every == 0 && v.n_windows() > 0)
        {
            let r = evaluate(&self.models, v, cfg.val_k, cfg.seed)?;
            val_ade = Some(r.min_ade);
            val_fde = Some(r.min_fde);
        }
        log::info!(
            "epoch {epoch}: total {:.5} goal {:.5} traj {:.5}{}",
            losses.total,
            losses.goal(),
            losses.traj(),
            val_fde.map_or(String::new(), |f| format!(" val minFDE {f:.3}"))
        );
        self.epoch = epoch;
        let record = EpochRecord {
            epoch,
            losses,
            val_min_ade: val_ade,
            val_min_fde: val_fde,
        };
        let improved = matches!((val_fde, self.best), (Some(f), None) if f.is_finite())
            || matches!((val_fde, self.best), (Some(f), Some(b)) if f < b);
        if improved {
            self.best = val_fde;
        }
        self.history.push(record.clone());
        if let Some(dir) = &cfg.output_dir {
            append_log(&dir.join(TRAIN_LOG), &record)?;
            let ckpt = self.checkpoint()?;
            ckpt.save(&dir.join(LAST_CHECKPOINT))?;
            if improved {
                ckpt.save(&dir.join(BEST_CHECKPOINT))?;
            }
        }
        Ok(())
    }

    fn run_to(mut self, train: &Dataset, val: Option<&Dataset>) -> Result<TrainOutcome> {
        if let Some(dir) = &self.cfg.output_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        while self.epoch < self.cfg.epochs {
            self.epoch(train, val)?;
        }
        let checkpoint = self.checkpoint()?;
        if let Some(dir) = &self.cfg.output_dir {
            checkpoint.save(&dir.join(LAST_CHECKPOINT))?;
        }
        Ok(TrainOutcome {
            models: self.models,
            checkpoint,
        })
    }
}

pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const TRAIN_LOG: &str = "train_log.tsv";

fn append_log(path: &Path, record: &EpochRecord) -> Result<()> {
    let fresh = !path.exists();
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    if fresh {
        text.push_str(LOG_HEADER);
        text.push('\n');
    }
    text.push_str(&record.log_line());
    text.push('\n');
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Trains from scratch for `cfg.epochs` epochs.
pub fn train(cfg: &RunConfig, train: &Dataset, val: Option<&Dataset>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.n_windows() == 0 {
        return Err(Error::EmptySplit);
    }
    // a fresh run must not inherit a previous run's log or best checkpoint
    if let Some(dir) = &cfg.output_dir {
        for name in [TRAIN_LOG, BEST_CHECKPOINT, LAST_CHECKPOINT] {
            let p = dir.join(name);
            if p.exists() {
                std::fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
            }
        }
    }
    let run = Run {
        cfg,
        models: cfg.build_models()?,
        opt: Optimizer::new(cfg.optimizer)?,
        history: Vec::new(),
        best: None,
        epoch: 0,
    };
    run.run_to(train, val)
}

/// Continues a saved run up to `cfg.epochs`. Every field except `epochs`
/// and `output_dir` must match the saved configuration.
pub fn resume(
    path: &Path,
    cfg: &RunConfig,
    train: &Dataset,
    val: Option<&Dataset>,
) -> Result<TrainOutcome> {
    let ckpt = Checkpoint::load(path)?;
    let diff = ckpt.config.resume_mismatches(cfg)?;
    if !diff.is_empty() {
        return Err(Error::ConfigMismatch(diff));
    }
    let models = cfg.build_models()?;
    ckpt.restore_models(&models)?;
    if ckpt.epoch >= cfg.epochs {
        log::info!("checkpoint already at epoch {}; nothing to do", ckpt.epoch);
        return Ok(TrainOutcome {
            models,
            checkpoint: ckpt,
        });
    }
    if train.n_windows() == 0 {
        return Err(Error::EmptySplit);
    }
    let mut opt = Optimizer::new(cfg.optimizer)?;
    opt.load_state(&ckpt.optimizer)?;
    let run = Run {
        cfg,
        models,
        opt,
        history: ckpt.history,
        best: ckpt.best_val_fde,
        epoch: ckpt.epoch,
    };
    run.run_to(train, val)
}

/// Rebuilds the networks stored in a checkpoint.
pub fn load_models(path: &Path) -> Result<(RunConfig, ModelSet)> {
    let ckpt = Checkpoint::load(path)?;
    let models = ckpt.config.build_models()?;
    ckpt.restore_models(&models)?;
    Ok((ckpt.config, models))
}
