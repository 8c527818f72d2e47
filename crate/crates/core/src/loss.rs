//! Elementwise loss kernels, on host arrays and on autodiff tensors.

use candle_core::Tensor;
use ndarray::{ArrayBase, Data, Dimension};

use crate::error::{Error, Result};
use crate::types::Point;

/// Clamp applied to predictions before taking logs.
pub const BCE_EPS: f64 = 1e-6;

/// Mean binary cross-entropy over all cells.
pub fn bce<S1, S2, D>(prediction: &ArrayBase<S1, D>, target: &ArrayBase<S2, D>) -> Result<f64>
where
    S1: Data<Elem = f64>,
    S2: Data<Elem = f64>,
    D: Dimension,
{
    if prediction.shape() != target.shape() {
        return Err(Error::invalid(format!(
            "bce shape mismatch: {:?} vs {:?}",
            prediction.shape(),
            target.shape()
        )));
    }
    let n = prediction.len();
    if n == 0 {
        return Err(Error::invalid("bce over an empty grid"));
    }
    let sum: f64 = prediction
        .iter()
        .zip(target.iter())
        .map(|(&p, &t)| bce_cell(p, t))
        .sum();
    Ok(sum / n as f64)
}

#[inline]
pub fn bce_cell(p: f64, t: f64) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
}

/// Mean over steps of the squared Euclidean displacement.
pub fn mse_trajectory(pred: &[Point], gt: &[Point]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::invalid(format!(
            "trajectory length mismatch: {} vs {}",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::invalid("mse over empty trajectories"));
    }
    let sum: f64 = pred.iter().zip(gt).map(|(a, b)| a.dist_sq(*b)).sum();
    Ok(sum / pred.len() as f64)
}

/// Differentiable mean BCE over every element of two equally-shaped tensors.
pub fn bce_tensor(prediction: &Tensor, target: &Tensor) -> Result<Tensor> {
    if prediction.dims() != target.dims() {
        return Err(Error::invalid(format!(
            "bce shape mismatch: {:?} vs {:?}",
            prediction.dims(),
            target.dims()
        )));
    }
    let p = prediction.clamp(BCE_EPS, 1.0 - BCE_EPS)?;
    let pos = (target * p.log()?)?;
    let neg = (target.affine(-1.0, 1.0)? * p.affine(-1.0, 1.0)?.log()?)?;
    Ok((pos + neg)?.mean_all()?.neg()?)
}

/// Weighted mean of per-trajectory MSE.
///
/// `pred` and `gt` are `(..., T, 2)`; `weights` has the leading shape
/// `(...)` with 1 for valid trajectories and 0 for padding.
pub fn masked_trajectory_mse(pred: &Tensor, gt: &Tensor, weights: &Tensor) -> Result<Tensor> {
    if pred.dims() != gt.dims() {
        return Err(Error::invalid(format!(
            "trajectory shape mismatch: {:?} vs {:?}",
            pred.dims(),
            gt.dims()
        )));
    }
    let rank = pred.rank();
    let per_step = (pred - gt)?.sqr()?.sum(rank - 1)?;
    let per_traj = per_step.mean(rank - 2)?;
    let count = weights.sum_all()?.to_scalar::<f64>()?;
    if count <= 0.0 {
        return Err(Error::invalid("no valid trajectories in batch"));
    }
    Ok((per_traj * weights)?.sum_all()?.affine(1.0 / count, 0.0)?)
}
