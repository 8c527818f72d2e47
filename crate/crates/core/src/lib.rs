//! Long-horizon trajectory forecasting with goal heatmaps, an agent-aware
//! autoregressive decoder, and online teacher-student distillation.

pub mod batch;
pub mod checkpoint;
pub mod dataio;
pub mod distill;
pub mod error;
pub mod goalnet;
pub mod heatmap;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod patch;
pub mod report;
pub mod temporalnet;
pub mod trainer;
pub mod types;

pub use dataio::Dataset;
pub use distill::DistillConfig;
pub use error::{Error, Result};
pub use goalnet::GoalNetConfig;
pub use metrics::{EvalReport, Forecaster};
pub use model::ModelSet;
pub use temporalnet::TemporalNetConfig;
pub use trainer::{Ablation, RunConfig};
pub use types::{
    HeatmapStack, LossBundle, Point, Provenance, SceneMap, TimeConfig, TrajectoryWindow,
    WindowGroup,
};
