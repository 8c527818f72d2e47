//! Best-of-K displacement metrics and horizon sweeps.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::types::{Point, SceneMap, WindowGroup};

/// Minimum ADE and minimum FDE over `samples`, each minimized on its own.
pub fn min_ade_fde(samples: &[Vec<Point>], gt: &[Point]) -> Result<(f64, f64)> {
    if samples.is_empty() || gt.is_empty() {
        return Err(Error::invalid(
            "need at least one sample and one ground-truth step",
        ));
    }
    let mut best = (f64::INFINITY, f64::INFINITY);
    for (i, s) in samples.iter().enumerate() {
        if s.len() != gt.len() {
            return Err(Error::invalid(format!(
                "sample {i} has {} steps, ground truth has {}",
                s.len(),
                gt.len()
            )));
        }
        let ade = s.iter().zip(gt).map(|(a, b)| a.dist(*b)).sum::<f64>() / gt.len() as f64;
        let fde = s[s.len() - 1].dist(gt[gt.len() - 1]);
        best.0 = best.0.min(ade);
        best.1 = best.1.min(fde);
    }
    Ok(best)
}

/// A trajectory predictor evaluated with best-of-K sampling.
pub trait Forecaster {
    /// Number of future steps produced per sample.
    fn horizon(&self) -> usize;

    /// `k` samples of `horizon()` positions for every window of the group,
    /// indexed `[agent][sample][step]`.
    fn forecast(
        &self,
        group: &WindowGroup,
        scene: &SceneMap,
        k: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Vec<Vec<Point>>>>;
}

/// Extrapolates the last observed displacement.
#[derive(Debug, Clone, Copy)]
pub struct ConstantVelocity {
    pub horizon: usize,
}

impl ConstantVelocity {
    pub fn predict(observed: &[Point], horizon: usize) -> Vec<Point> {
        let last = observed[observed.len() - 1];
        let v = if observed.len() >= 2 {
            last.sub(observed[observed.len() - 2])
        } else {
            Point::default()
        };
        (1..=horizon).map(|t| last.add(v.scale(t as f64))).collect()
    }
}

impl Forecaster for ConstantVelocity {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn forecast(
        &self,
        group: &WindowGroup,
        _: &SceneMap,
        k: usize,
        _: &mut ChaCha8Rng,
    ) -> Result<Vec<Vec<Vec<Point>>>> {
        Ok(group
            .windows
            .iter()
            .map(|w| vec![Self::predict(&w.observed, self.horizon); k])
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonRow {
    pub horizon: usize,
    pub ade: f64,
    pub fde: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub min_ade: f64,
    pub min_fde: f64,
    pub k: usize,
    pub per_horizon: Vec<HorizonRow>,
    pub n_windows: usize,
    /// `(min_ade, min_fde)` per window in dataset order.
    pub per_window: Vec<(f64, f64)>,
}

impl EvalReport {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("horizon\tmin_ade\tmin_fde\tk\tn_windows\n");
        for r in &self.per_horizon {
            s.push_str(&format!(
                "{}\t{:.6}\t{:.6}\t{}\t{}\n",
                r.horizon, r.ade, r.fde, self.k, self.n_windows
            ));
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({
            "min_ade": self.min_ade,
            "min_fde": self.min_fde,
            "k": self.k,
            "n_windows": self.n_windows,
            "per_horizon": self.per_horizon,
        })
        .to_string()
    }
}

fn evaluate_at(
    model: &dyn Forecaster,
    data: &Dataset,
    k: usize,
    seed: u64,
    horizon: usize,
) -> Result<EvalReport> {
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    if data.n_windows() == 0 {
        return Err(Error::EmptySplit);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_window = Vec::with_capacity(data.n_windows());
    for group in &data.groups {
        let scene = data
            .scenes
            .get(&group.scene_id)
            .ok_or_else(|| Error::invalid(format!("no scene map for `{}`", group.scene_id)))?;
        let preds = model.forecast(group, scene, k, &mut rng)?;
        if preds.len() != group.windows.len() {
            return Err(Error::invalid(
                "forecaster returned the wrong number of agents",
            ));
        }
        for (w, samples) in group.windows.iter().zip(&preds) {
            if w.future.len() < horizon {
                return Err(Error::invalid(format!(
                    "window {}/{} has {} future steps, horizon {horizon} requested",
                    w.scene_id,
                    w.agent_id,
                    w.future.len()
                )));
            }
            let cut: Vec<Vec<Point>> = samples
                .iter()
                .map(|s| {
                    s.get(..horizon)
                        .map(<[Point]>::to_vec)
                        .ok_or_else(|| Error::invalid("sample shorter than horizon"))
                })
                .collect::<Result<_>>()?;
            per_window.push(min_ade_fde(&cut, &w.future[..horizon])?);
        }
    }
    let n = per_window.len() as f64;
    let min_ade = per_window.iter().map(|p| p.0).sum::<f64>() / n;
    let min_fde = per_window.iter().map(|p| p.1).sum::<f64>() / n;
    Ok(EvalReport {
        min_ade,
        min_fde,
        k,
        per_horizon: vec![HorizonRow {
            horizon,
            ade: min_ade,
            fde: min_fde,
        }],
        n_windows: per_window.len(),
        per_window,
    })
}

/// Best-of-`k` evaluation over every window at the model's full horizon.
/// The same seed gives the same report.
pub fn evaluate(model: &dyn Forecaster, data: &Dataset, k: usize, seed: u64) -> Result<EvalReport> {
    evaluate_at(model, data, k, seed, model.horizon())
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct HorizonSweep {
    pub rows: Vec<HorizonRow>,
    /// Horizons left out, with the reason.
    pub skipped: Vec<(usize, String)>,
}

/// Evaluates the first `h` predicted steps against the first `h` future
/// steps for every requested horizon, in ascending order.
pub fn horizon_sweep(
    model: &dyn Forecaster,
    data: &Dataset,
    horizons: &[usize],
    k: usize,
    seed: u64,
) -> Result<HorizonSweep> {
    let mut hs = horizons.to_vec();
    hs.sort_unstable();
    hs.dedup();
    let available = data
        .groups
        .iter()
        .flat_map(|g| g.windows.iter().map(|w| w.future.len()))
        .min()
        .ok_or(Error::EmptySplit)?;
    let mut out = HorizonSweep::default();
    for h in hs {
        let limit = available.min(model.horizon());
        if h == 0 || h > limit {
            let msg = format!("horizon {h} outside 1..={limit} available steps");
            log::warn!("{msg}");
            out.skipped.push((h, msg));
            continue;
        }
        let r = evaluate_at(model, data, k, seed, h)?;
        out.rows.push(r.per_horizon[0]);
    }
    Ok(out)
}
