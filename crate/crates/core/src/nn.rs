//! Parameter storage and the handful of differentiable building blocks the
//! networks need. Everything runs in `f64` on the CPU.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub const DTYPE: DType = DType::F64;

pub fn device() -> Device {
    Device::Cpu
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// Normal with std `gain / sqrt(fan_in)`.
    Scaled {
        fan_in: usize,
        gain: f64,
    },
}

/// Named learnable tensors, iterated in name order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        init: Init,
        rng: &mut R,
    ) -> Result<()> {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Scaled { fan_in, gain } => {
                let std = gain / (fan_in.max(1) as f64).sqrt();
                let normal = Normal::new(0.0, std).map_err(|e| Error::invalid(e.to_string()))?;
                (0..n).map(|_| normal.sample(rng)).collect()
            }
        };
        let t = Tensor::from_vec(data, shape, &device())?;
        self.vars.insert(name.into(), Var::from_tensor(&t)?);
        Ok(())
    }

    pub fn var(&self, name: &str) -> Result<&Var> {
        self.vars
            .get(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn vars(&self) -> impl Iterator<Item = &Var> {
        self.vars.values()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Accessor that records gradients.
    pub fn tracked(&self) -> Params<'_> {
        Params {
            store: self,
            detached: false,
        }
    }

    /// Accessor whose tensors are cut from the autodiff graph.
    pub fn frozen(&self) -> Params<'_> {
        Params {
            store: self,
            detached: true,
        }
    }

    pub fn to_host(&self) -> Result<Vec<(String, Vec<usize>, Vec<f64>)>> {
        self.vars
            .iter()
            .map(|(k, v)| {
                Ok((
                    k.clone(),
                    v.dims().to_vec(),
                    v.flatten_all()?.to_vec1::<f64>()?,
                ))
            })
            .collect()
    }

    /// Overwrites every parameter from host data; names and shapes must match.
    pub fn load_host(&self, data: &[(String, Vec<usize>, Vec<f64>)]) -> Result<()> {
        if data.len() != self.vars.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.vars.len(),
                data.len()
            )));
        }
        for (name, shape, values) in data {
            let var = self
                .vars
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor `{name}`")))?;
            if var.dims() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {shape:?}, expected {:?}",
                    var.dims()
                )));
            }
            var.set(&Tensor::from_slice(values, shape.as_slice(), &device())?)?;
        }
        Ok(())
    }

    /// Deep copy with fresh variables.
    pub fn duplicate(&self) -> Result<Self> {
        let mut vars = BTreeMap::new();
        for (k, v) in &self.vars {
            vars.insert(k.clone(), Var::from_tensor(&v.as_tensor().copy()?)?);
        }
        Ok(Self { vars })
    }
}

#[derive(Clone, Copy)]
pub struct Params<'a> {
    store: &'a ParamStore,
    detached: bool,
}

impl Params<'_> {
    pub fn get(&self, name: &str) -> Result<Tensor> {
        let var = self.store.var(name)?;
        Ok(if self.detached {
            var.as_tensor().detach()
        } else {
            var.as_tensor().clone()
        })
    }
}

/// `x @ w^T + b` with `w: (out, in)`.
pub fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let y = x.broadcast_matmul(&w.t()?)?;
    Ok(match b {
        Some(b) => y.broadcast_add(b)?,
        None => y,
    })
}

/// Stride-1 2-D convolution with zero padding and per-channel bias, as one
/// matrix product over shifted copies of the input. `w` is `(out, in, kh, kw)`.
pub fn conv2d(x: &Tensor, w: &Tensor, b: &Tensor, padding: usize) -> Result<Tensor> {
    let (o, c, kh, kw) = w.dims4()?;
    let (bsz, _, h, wd) = x.dims4()?;
    let xp = if padding > 0 {
        x.pad_with_zeros(2, padding, padding)?
            .pad_with_zeros(3, padding, padding)?
    } else {
        x.clone()
    };
    let (oh, ow) = (h + 2 * padding + 1 - kh, wd + 2 * padding + 1 - kw);
    let cols = if kh == 1 && kw == 1 {
        xp.reshape((bsz, c, oh * ow))?
    } else {
        let mut parts = Vec::with_capacity(kh * kw);
        for di in 0..kh {
            for dj in 0..kw {
                parts.push(xp.narrow(2, di, oh)?.narrow(3, dj, ow)?);
            }
        }
        Tensor::cat(&parts, 1)?.reshape((bsz, kh * kw * c, oh * ow))?
    };
    let wm = w.permute((0, 2, 3, 1))?.reshape((o, kh * kw * c))?;
    let y = wm.broadcast_matmul(&cols)?.reshape((bsz, o, oh, ow))?;
    Ok(y.broadcast_add(&b.reshape((1, o, 1, 1))?)?)
}

/// 2x2 max pooling with stride 2, built on `max_keepdim` so that the gradient
/// reaches the maximum unscaled. Odd trailing rows and columns are dropped.
pub fn max_pool2x2(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let (oh, ow) = (h / 2, w / 2);
    let x = x.narrow(2, 0, oh * 2)?.narrow(3, 0, ow * 2)?;
    let x = x.reshape((b, c, oh, 2, ow, 2))?;
    Ok(x.max_keepdim(5)?.max_keepdim(3)?.reshape((b, c, oh, ow))?)
}

pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    let normed = centered.broadcast_div(&(var + 1e-5)?.sqrt()?)?;
    Ok(normed.broadcast_mul(gamma)?.broadcast_add(beta)?)
}

/// Softmax over the last axis, composed of primitive ops so that it
/// back-propagates.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    let s = e.sum_keepdim(D::Minus1)?;
    Ok(e.broadcast_div(&s)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((x.neg()?.exp()? + 1.0)?.recip()?)
}

/// Host buffer to tensor on the working device.
pub fn tensor<S: Into<candle_core::Shape>>(data: Vec<f64>, shape: S) -> Result<Tensor> {
    Ok(Tensor::from_vec(data, shape, &device())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn conv2d_matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut r = |n: usize| {
            (0..n)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect::<Vec<f64>>()
        };
        for (k, pad) in [(3, 1), (1, 0), (3, 0)] {
            let x = tensor(r(2 * 3 * 5 * 6), (2, 3, 5, 6)).unwrap();
            let w = tensor(r(4 * 3 * k * k), (4, 3, k, k)).unwrap();
            let b = tensor(r(4), 4).unwrap();
            let ours = conv2d(&x, &w, &b, pad).unwrap();
            let reference = x
                .conv2d(&w, pad, 1, 1, 1)
                .unwrap()
                .broadcast_add(&b.reshape((1, 4, 1, 1)).unwrap())
                .unwrap();
            assert_eq!(ours.dims(), reference.dims());
            let diff = (ours - reference)
                .unwrap()
                .abs()
                .unwrap()
                .max_all()
                .unwrap()
                .to_scalar::<f64>()
                .unwrap();
            assert!(diff < 1e-12, "k={k} diff={diff}");
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_and_backprop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        store
            .add(
                "x",
                &[3, 5],
                Init::Scaled {
                    fan_in: 1,
                    gain: 3.0,
                },
                &mut rng,
            )
            .unwrap();
        let x = store.tracked().get("x").unwrap();
        let s = softmax_last(&x).unwrap();
        for row in s.to_vec2::<f64>().unwrap() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let w = tensor((0..15).map(|i| i as f64).collect(), (3, 5)).unwrap();
        let g = (s * w).unwrap().sum_all().unwrap().backward().unwrap();
        assert!(g.get(store.var("x").unwrap()).is_some());
    }

    #[test]
    fn max_pool_passes_full_gradient_to_the_maximum() {
        let x = candle_core::Var::from_tensor(
            &tensor(
                (0..16).map(|i| ((i * 7) % 16) as f64).collect(),
                (1, 1, 4, 4),
            )
            .unwrap(),
        )
        .unwrap();
        let y = max_pool2x2(x.as_tensor()).unwrap();
        assert_eq!(
            y.flatten_all().unwrap().to_vec1::<f64>().unwrap(),
            vec![12.0, 14.0, 15.0, 13.0]
        );
        let g = y.sum_all().unwrap().backward().unwrap();
        let gx = g
            .get(&x)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1::<f64>()
            .unwrap();
        assert_eq!(gx.iter().sum::<f64>(), 4.0);
        assert!(gx.iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn frozen_params_receive_no_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        store.add("w", &[4], Init::Ones, &mut rng).unwrap();
        let y = store
            .frozen()
            .get("w")
            .unwrap()
            .sqr()
            .unwrap()
            .sum_all()
            .unwrap();
        let g = y.backward().unwrap();
        assert!(g.get(store.var("w").unwrap()).is_none());
    }

    #[test]
    fn host_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut a = ParamStore::new();
        a.add(
            "p",
            &[2, 3],
            Init::Scaled {
                fan_in: 3,
                gain: 1.0,
            },
            &mut rng,
        )
        .unwrap();
        let b = a.duplicate().unwrap();
        b.var("p")
            .unwrap()
            .set(&Tensor::zeros((2, 3), DTYPE, &device()).unwrap())
            .unwrap();
        b.load_host(&a.to_host().unwrap()).unwrap();
        assert_eq!(a.to_host().unwrap(), b.to_host().unwrap());
    }
}
