//! Autoregressive decoder over per-agent, per-step tokens.
//!
//! Each block runs agent-aware causal self-attention across every agent in
//! the scene window, cross-attention onto patch tokens of the semantic map
//! (optionally stacked with goal/waypoint heatmaps), and a feed-forward
//! layer. The head decodes a 2-D displacement that is added to the previous
//! position.
//!
//! Tokens are laid out agent-major: token `a * T + t` is agent `a` at step
//! `t`.

use candle_core::Tensor;
use ndarray::{Array2, Array3, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::fill_gaussian_slice;
use crate::nn::{self, layer_norm, linear, softmax_last, Init, ParamStore, Params};
use crate::patch::patchify;
use crate::types::{Point, SceneMap};

/// Number of scalar features per token: displacement, goal offset, waypoint offset.
pub const TOKEN_FEATURES: usize = 6;
const MASKED: f64 = -1e9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemporalNetConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub patch: usize,
    pub dropout: f64,
    pub scene_channels: usize,
    pub use_social: bool,
    pub use_map_cross_attention: bool,
    pub use_gw_heatmap: bool,
    pub use_waypoint: bool,
    /// Pixels per normalized coordinate unit inside the network.
    pub coord_scale: f64,
    /// Width of goal/waypoint heatmaps fed to the condition tokens.
    pub sigma: f64,
}

impl Default for TemporalNetConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            heads: 4,
            layers: 2,
            patch: 8,
            dropout: 0.0,
            scene_channels: 6,
            use_social: true,
            use_map_cross_attention: true,
            use_gw_heatmap: true,
            use_waypoint: true,
            coord_scale: 8.0,
            sigma: 4.0,
        }
    }
}

impl TemporalNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::invalid(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if self.d_model % 2 != 0 {
            return Err(Error::invalid(
                "d_model must be even for sinusoidal encodings",
            ));
        }
        if self.layers == 0 || self.patch == 0 {
            return Err(Error::invalid("layers and patch must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        if !(self.coord_scale > 0.0) || !(self.sigma > 0.0) {
            return Err(Error::invalid("coord_scale and sigma must be positive"));
        }
        Ok(())
    }

    pub fn condition_channels(&self) -> usize {
        self.scene_channels + if self.use_gw_heatmap { 2 } else { 0 }
    }
}

/// Weights of one agent-aware attention layer. With `inter` absent the
/// intra-agent pair is used for every query/key pair.
pub struct AgentAwareWeights {
    pub q_intra: Tensor,
    pub k_intra: Tensor,
    pub inter: Option<(Tensor, Tensor)>,
    pub v: Tensor,
    pub out_w: Tensor,
    pub out_b: Tensor,
}

/// Token bookkeeping shared by every batch element.
#[derive(Debug, Clone)]
pub struct TokenLayout {
    pub agent_ids: Vec<usize>,
    pub step_ids: Vec<usize>,
}

impl TokenLayout {
    pub fn agent_major(agents: usize, steps: usize) -> Self {
        let mut agent_ids = Vec::with_capacity(agents * steps);
        let mut step_ids = Vec::with_capacity(agents * steps);
        for a in 0..agents {
            for t in 0..steps {
                agent_ids.push(a);
                step_ids.push(t);
            }
        }
        Self {
            agent_ids,
            step_ids,
        }
    }

    pub fn len(&self) -> usize {
        self.agent_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agent_ids.is_empty()
    }
}

/// Host-side attention masks for a `(B, N, N)` batch: `same` marks
/// same-agent pairs, `bias` is 0 where attention is allowed and a large
/// negative value elsewhere.
pub struct AttentionMasks {
    pub same: Tensor,
    pub bias: Tensor,
}

impl AttentionMasks {
    /// `token_valid[b][i]` flags real (non-padding) tokens. A token may
    /// always attend to itself.
    pub fn build(
        layout: &TokenLayout,
        token_valid: &[Vec<bool>],
        causal: bool,
        social: bool,
    ) -> Result<Self> {
        let n = layout.len();
        let b = token_valid.len();
        let mut same = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if layout.agent_ids[i] == layout.agent_ids[j] {
                    same[i * n + j] = 1.0;
                }
            }
        }
        let mut bias = vec![0.0; b * n * n];
        for (bi, valid) in token_valid.iter().enumerate() {
            if valid.len() != n {
                return Err(Error::invalid("validity flags misaligned with tokens"));
            }
            for i in 0..n {
                for j in 0..n {
                    let allowed = i == j
                        || (valid[j]
                            && (!causal || layout.step_ids[j] <= layout.step_ids[i])
                            && (social || layout.agent_ids[i] == layout.agent_ids[j]));
                    if !allowed {
                        bias[bi * n * n + i * n + j] = MASKED;
                    }
                }
            }
        }
        Ok(Self {
            same: nn::tensor(same, (1, 1, n, n))?,
            bias: nn::tensor(bias, (b, 1, n, n))?,
        })
    }
}

fn split_heads(x: &Tensor, heads: usize) -> Result<Tensor> {
    let (b, n, d) = x.dims3()?;
    Ok(x.reshape((b, n, heads, d / heads))?
        .transpose(1, 2)?
        .contiguous()?)
}

fn merge_heads(x: &Tensor) -> Result<Tensor> {
    let (b, h, n, dk) = x.dims4()?;
    Ok(x.transpose(1, 2)?.contiguous()?.reshape((b, n, h * dk))?)
}

/// Attention logits for the agent-aware layer, `(B, H, N, N)`, before masking.
pub fn agent_aware_logits(
    q_in: &Tensor,
    k_in: &Tensor,
    w: &AgentAwareWeights,
    same: &Tensor,
    heads: usize,
) -> Result<Tensor> {
    let (_, _, d) = q_in.dims3()?;
    let scale = 1.0 / ((d / heads) as f64).sqrt();
    let qi = split_heads(&linear(q_in, &w.q_intra, None)?, heads)?;
    let ki = split_heads(&linear(k_in, &w.k_intra, None)?, heads)?;
    let intra = (qi.matmul(&ki.transpose(2, 3)?)? * scale)?;
    Ok(match &w.inter {
        None => intra,
        Some((wq, wk)) => {
            let qo = split_heads(&linear(q_in, wq, None)?, heads)?;
            let ko = split_heads(&linear(k_in, wk, None)?, heads)?;
            let inter = (qo.matmul(&ko.transpose(2, 3)?)? * scale)?;
            let other = same.affine(-1.0, 1.0)?;
            (intra.broadcast_mul(same)? + inter.broadcast_mul(&other)?)?
        }
    })
}

/// Multi-head attention whose query/key projections depend on whether the
/// two tokens belong to the same agent.
///
/// `q_in`, `k_in`, `v_in` are `(B, N, d)`; `layout` and `masks` describe the
/// N tokens.
pub fn agent_aware_attention(
    q_in: &Tensor,
    k_in: &Tensor,
    v_in: &Tensor,
    layout: &TokenLayout,
    w: &AgentAwareWeights,
    masks: &AttentionMasks,
    heads: usize,
) -> Result<Tensor> {
    let (_, nq, _) = q_in.dims3()?;
    let (_, nk, _) = k_in.dims3()?;
    if nq != layout.len() || nk != layout.len() || v_in.dims3()?.1 != nk {
        return Err(Error::invalid(format!(
            "token counts q={nq} k={nk} do not match {} agent ids",
            layout.len()
        )));
    }
    let logits =
        agent_aware_logits(q_in, k_in, w, &masks.same, heads)?.broadcast_add(&masks.bias)?;
    let attn = softmax_last(&logits)?;
    let v = split_heads(&linear(v_in, &w.v, None)?, heads)?;
    let out = merge_heads(&attn.matmul(&v)?)?;
    linear(&out, &w.out_w, Some(&w.out_b))
}

/// Plain multi-head scaled dot-product attention without masking.
fn cross_attention(
    x: &Tensor,
    memory: &Tensor,
    p: Params<'_>,
    prefix: &str,
    heads: usize,
) -> Result<Tensor> {
    let (_, _, d) = x.dims3()?;
    let scale = 1.0 / ((d / heads) as f64).sqrt();
    let q = split_heads(&linear(x, &p.get(&format!("{prefix}.q.w"))?, None)?, heads)?;
    let k = split_heads(
        &linear(memory, &p.get(&format!("{prefix}.k.w"))?, None)?,
        heads,
    )?;
    let v = split_heads(
        &linear(memory, &p.get(&format!("{prefix}.v.w"))?, None)?,
        heads,
    )?;
    let attn = softmax_last(&(q.matmul(&k.transpose(2, 3)?)? * scale)?)?;
    let out = merge_heads(&attn.matmul(&v)?)?;
    linear(
        &out,
        &p.get(&format!("{prefix}.o.w"))?,
        Some(&p.get(&format!("{prefix}.o.b"))?),
    )
}

/// 1-D sinusoidal encoding of `pos` into `d` values.
pub fn sinusoid(pos: f64, d: usize) -> Vec<f64> {
    (0..d)
        .map(|k| {
            let i = (k / 2) as f64;
            let angle = pos / 10_000f64.powf(2.0 * i / d as f64);
            if k % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

/// 2-D encoding: first half of the dimensions encodes the patch row, the
/// second half the patch column.
pub fn patch_position_encoding(rows: usize, cols: usize, d: usize) -> Vec<f64> {
    let half = d / 2;
    let mut out = Vec::with_capacity(rows * cols * d);
    for r in 0..rows {
        for c in 0..cols {
            out.extend(sinusoid(r as f64, half));
            out.extend(sinusoid(c as f64, d - half));
        }
    }
    out
}

/// Host-side condition raster for one agent: scene channels, then goal and
/// waypoint heatmaps when enabled, flattened into patch vectors.
pub fn condition_patches(
    scene: &SceneMap,
    goal: Point,
    waypoint: Option<Point>,
    cfg: &TemporalNetConfig,
) -> Result<Array2<f64>> {
    if scene.channels() != cfg.scene_channels {
        return Err(Error::invalid(format!(
            "expected {} scene channels, got {}",
            cfg.scene_channels,
            scene.channels()
        )));
    }
    if cfg.use_gw_heatmap {
        let (c, h, w) = scene.grid.dim();
        let mut grid = Array3::zeros((c + 2, h, w));
        grid.slice_mut(ndarray::s![..c, .., ..]).assign(&scene.grid);
        let mut goal_plane = grid.index_axis_mut(Axis(0), c);
        fill_gaussian_slice(
            goal_plane.as_slice_mut().expect("contiguous"),
            h,
            w,
            goal,
            cfg.sigma,
        );
        if let Some(wp) = waypoint {
            let mut wp_plane = grid.index_axis_mut(Axis(0), c + 1);
            fill_gaussian_slice(
                wp_plane.as_slice_mut().expect("contiguous"),
                h,
                w,
                wp,
                cfg.sigma,
            );
        }
        patchify(&grid, cfg.patch)
    } else {
        patchify(&scene.grid, cfg.patch)
    }
}

/// Condition tokens from explicit heatmap grids, `(P, d_model)`.
pub fn build_condition_tokens(
    net: &TemporalNet,
    p: Params<'_>,
    scene: &SceneMap,
    goal_heatmap: &Array2<f64>,
    waypoint_heatmap: &Array2<f64>,
) -> Result<Tensor> {
    let cfg = &net.cfg;
    let (h, w) = (scene.height(), scene.width());
    if goal_heatmap.dim() != (h, w) || waypoint_heatmap.dim() != (h, w) {
        return Err(Error::invalid(
            "condition heatmaps must share the scene's H x W",
        ));
    }
    let patches = if cfg.use_gw_heatmap {
        let c = scene.channels();
        let mut grid = Array3::zeros((c + 2, h, w));
        grid.slice_mut(ndarray::s![..c, .., ..]).assign(&scene.grid);
        grid.index_axis_mut(Axis(0), c).assign(goal_heatmap);
        grid.index_axis_mut(Axis(0), c + 1).assign(waypoint_heatmap);
        patchify(&grid, cfg.patch)?
    } else {
        patchify(&scene.grid, cfg.patch)?
    };
    let t = net.project_patches(p, &[patches], h / cfg.patch, w / cfg.patch)?;
    Ok(t.squeeze(0)?)
}

/// One scene window ready for the decoder. All vectors are indexed
/// `[batch][agent]`; padding agents have `valid == false`.
#[derive(Debug, Clone)]
pub struct TemporalBatch {
    pub positions: Vec<Vec<Vec<Point>>>,
    pub goals: Vec<Vec<Point>>,
    pub waypoints: Vec<Vec<Point>>,
    pub valid: Vec<Vec<bool>>,
    /// Per `(batch, agent)` condition patches, batch-major, each `(P, C p^2)`.
    pub condition: Option<Vec<Array2<f64>>>,
    pub patch_grid: (usize, usize),
}

impl TemporalBatch {
    pub fn batch(&self) -> usize {
        self.positions.len()
    }

    pub fn agents(&self) -> usize {
        self.positions.first().map_or(0, |b| b.len())
    }

    fn check(&self, min_len: usize) -> Result<()> {
        let a = self.agents();
        if self.batch() == 0 || a == 0 {
            return Err(Error::invalid("empty temporal batch"));
        }
        for b in 0..self.batch() {
            if self.positions[b].len() != a
                || self.goals[b].len() != a
                || self.waypoints[b].len() != a
                || self.valid[b].len() != a
            {
                return Err(Error::invalid("ragged temporal batch"));
            }
            if self.positions[b].iter().any(|s| s.len() < min_len) {
                return Err(Error::invalid(format!(
                    "trajectory shorter than {min_len} steps"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TemporalNet {
    pub cfg: TemporalNetConfig,
    pub params: ParamStore,
}

impl TemporalNet {
    pub fn new<R: Rng>(cfg: TemporalNetConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let ff = 2 * d;
        let mut p = ParamStore::new();
        let lin = |p: &mut ParamStore,
                   name: &str,
                   out: usize,
                   inp: usize,
                   bias: bool,
                   rng: &mut R|
         -> Result<()> {
            p.add(
                format!("{name}.w"),
                &[out, inp],
                Init::Scaled {
                    fan_in: inp,
                    gain: 1.0,
                },
                rng,
            )?;
            if bias {
                p.add(format!("{name}.b"), &[out], Init::Zeros, rng)?;
            }
            Ok(())
        };
        let norm = |p: &mut ParamStore, name: &str, rng: &mut R| -> Result<()> {
            p.add(format!("{name}.g"), &[d], Init::Ones, rng)?;
            p.add(format!("{name}.b"), &[d], Init::Zeros, rng)
        };
        lin(&mut p, "embed", d, TOKEN_FEATURES, true, rng)?;
        if cfg.use_map_cross_attention {
            let cp = cfg.condition_channels() * cfg.patch * cfg.patch;
            lin(&mut p, "cond", d, cp, true, rng)?;
        }
        for l in 0..cfg.layers {
            norm(&mut p, &format!("l{l}.ln1"), rng)?;
            for name in ["q_intra", "k_intra", "v"] {
                lin(&mut p, &format!("l{l}.sa.{name}"), d, d, false, rng)?;
            }
            if cfg.use_social {
                lin(&mut p, &format!("l{l}.sa.q_inter"), d, d, false, rng)?;
                lin(&mut p, &format!("l{l}.sa.k_inter"), d, d, false, rng)?;
            }
            lin(&mut p, &format!("l{l}.sa.o"), d, d, true, rng)?;
            if cfg.use_map_cross_attention {
                norm(&mut p, &format!("l{l}.ln2"), rng)?;
                for name in ["q", "k", "v"] {
                    lin(&mut p, &format!("l{l}.ca.{name}"), d, d, false, rng)?;
                }
                lin(&mut p, &format!("l{l}.ca.o"), d, d, true, rng)?;
            }
            norm(&mut p, &format!("l{l}.ln3"), rng)?;
            lin(&mut p, &format!("l{l}.ff1"), ff, d, true, rng)?;
            lin(&mut p, &format!("l{l}.ff2"), d, ff, true, rng)?;
        }
        norm(&mut p, "head.ln", rng)?;
        lin(&mut p, "head", 2, d, true, rng)?;
        // small initial steps keep early rollouts near the observation
        let w = p.var("head.w")?;
        w.set(&(w.as_tensor() * 0.1)?)?;
        Ok(Self { cfg, params: p })
    }

    fn attention_weights(&self, p: Params<'_>, l: usize) -> Result<AgentAwareWeights> {
        let g = |n: &str| p.get(&format!("l{l}.sa.{n}"));
        Ok(AgentAwareWeights {
            q_intra: g("q_intra.w")?,
            k_intra: g("k_intra.w")?,
            inter: if self.cfg.use_social {
                Some((g("q_inter.w")?, g("k_inter.w")?))
            } else {
                None
            },
            v: g("v.w")?,
            out_w: g("o.w")?,
            out_b: g("o.b")?,
        })
    }

    /// Projects host patch matrices to `(M, P, d)` and adds the 2-D
    /// positional encoding.
    pub fn project_patches(
        &self,
        p: Params<'_>,
        patches: &[Array2<f64>],
        rows: usize,
        cols: usize,
    ) -> Result<Tensor> {
        let m = patches.len();
        let (np, dim) = patches[0].dim();
        if np != rows * cols {
            return Err(Error::invalid("patch count does not match patch grid"));
        }
        let mut data = Vec::with_capacity(m * np * dim);
        for pm in patches {
            if pm.dim() != (np, dim) {
                return Err(Error::invalid("inconsistent condition patch shapes"));
            }
            data.extend(pm.iter().copied());
        }
        let x = nn::tensor(data, (m, np, dim))?;
        let proj = linear(&x, &p.get("cond.w")?, Some(&p.get("cond.b")?))?;
        let pe = nn::tensor(
            patch_position_encoding(rows, cols, self.cfg.d_model),
            (1, np, self.cfg.d_model),
        )?;
        Ok(proj.broadcast_add(&pe)?)
    }

    fn token_features(&self, batch: &TemporalBatch, steps: usize) -> Vec<f64> {
        let s = 1.0 / self.cfg.coord_scale;
        let mut f = Vec::with_capacity(batch.batch() * batch.agents() * steps * TOKEN_FEATURES);
        for b in 0..batch.batch() {
            for a in 0..batch.agents() {
                let seq = &batch.positions[b][a];
                let goal = batch.goals[b][a];
                let wp = batch.waypoints[b][a];
                for t in 0..steps {
                    let disp = if t == 0 {
                        Point::default()
                    } else {
                        seq[t].sub(seq[t - 1])
                    };
                    let go = goal.sub(seq[t]);
                    let wo = if self.cfg.use_waypoint {
                        wp.sub(seq[t])
                    } else {
                        Point::default()
                    };
                    f.extend([
                        disp.x * s,
                        disp.y * s,
                        go.x * s,
                        go.y * s,
                        wo.x * s,
                        wo.y * s,
                    ]);
                }
            }
        }
        f
    }

    /// Normalized displacement predicted from every token, `(B, N, T, 2)`.
    fn forward_tokens(
        &self,
        p: Params<'_>,
        batch: &TemporalBatch,
        steps: usize,
        memory: Option<&Tensor>,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Tensor> {
        let (bsz, na) = (batch.batch(), batch.agents());
        let d = self.cfg.d_model;
        let n = na * steps;
        let layout = TokenLayout::agent_major(na, steps);
        let token_valid: Vec<Vec<bool>> = batch
            .valid
            .iter()
            .map(|v| layout.agent_ids.iter().map(|&a| v[a]).collect())
            .collect();
        let masks = AttentionMasks::build(&layout, &token_valid, true, self.cfg.use_social)?;

        let feats = nn::tensor(self.token_features(batch, steps), (bsz, n, TOKEN_FEATURES))?;
        let temporal: Vec<f64> = layout
            .step_ids
            .iter()
            .flat_map(|&t| sinusoid(t as f64, d))
            .collect();
        let temporal = nn::tensor(temporal, (1, n, d))?;
        let mut h = linear(&feats, &p.get("embed.w")?, Some(&p.get("embed.b")?))?
            .broadcast_add(&temporal)?;

        for l in 0..self.cfg.layers {
            let x = layer_norm(
                &h,
                &p.get(&format!("l{l}.ln1.g"))?,
                &p.get(&format!("l{l}.ln1.b"))?,
            )?;
            let w = self.attention_weights(p, l)?;
            let sa = agent_aware_attention(&x, &x, &x, &layout, &w, &masks, self.cfg.heads)?;
            h = (h + self.dropout(&sa, dropout_rng.as_deref_mut())?)?;
            if let Some(mem) = memory {
                let x = layer_norm(
                    &h,
                    &p.get(&format!("l{l}.ln2.g"))?,
                    &p.get(&format!("l{l}.ln2.b"))?,
                )?;
                // per-agent queries against that agent's condition tokens
                let xa = x.reshape((bsz * na, steps, d))?;
                let ca = cross_attention(&xa, mem, p, &format!("l{l}.ca"), self.cfg.heads)?
                    .reshape((bsz, n, d))?;
                h = (h + self.dropout(&ca, dropout_rng.as_deref_mut())?)?;
            }
            let x = layer_norm(
                &h,
                &p.get(&format!("l{l}.ln3.g"))?,
                &p.get(&format!("l{l}.ln3.b"))?,
            )?;
            let ff = linear(
                &x,
                &p.get(&format!("l{l}.ff1.w"))?,
                Some(&p.get(&format!("l{l}.ff1.b"))?),
            )?
            .relu()?;
            let ff = linear(
                &ff,
                &p.get(&format!("l{l}.ff2.w"))?,
                Some(&p.get(&format!("l{l}.ff2.b"))?),
            )?;
            h = (h + self.dropout(&ff, dropout_rng.as_deref_mut())?)?;
        }
        let x = layer_norm(&h, &p.get("head.ln.g")?, &p.get("head.ln.b")?)?;
        let out = linear(&x, &p.get("head.w")?, Some(&p.get("head.b")?))?;
        Ok(out.reshape((bsz, na, steps, 2))?)
    }

    fn dropout(&self, x: &Tensor, rng: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
        let rate = self.cfg.dropout;
        match rng {
            Some(rng) if rate > 0.0 => {
                let keep = 1.0 / (1.0 - rate);
                let mask: Vec<f64> = (0..x.elem_count())
                    .map(|_| {
                        if rng.random::<f64>() < rate {
                            0.0
                        } else {
                            keep
                        }
                    })
                    .collect();
                Ok((x * nn::tensor(mask, x.shape().clone())?)?)
            }
            _ => Ok(x.clone()),
        }
    }

    fn memory(&self, p: Params<'_>, batch: &TemporalBatch) -> Result<Option<Tensor>> {
        if !self.cfg.use_map_cross_attention {
            return Ok(None);
        }
        let cond = batch.condition.as_ref().ok_or_else(|| {
            Error::invalid("map cross-attention enabled but no condition patches supplied")
        })?;
        if cond.len() != batch.batch() * batch.agents() {
            return Err(Error::invalid(
                "one condition patch matrix per (batch, agent) required",
            ));
        }
        let (rows, cols) = batch.patch_grid;
        Ok(Some(self.project_patches(p, cond, rows, cols)?))
    }

    /// Teacher-forced prediction of `horizon` steps after the first `t_in`
    /// positions, using ground truth as the previous position at every step.
    /// Returns absolute positions `(B, N, horizon, 2)`.
    pub fn teacher_forced(
        &self,
        p: Params<'_>,
        batch: &TemporalBatch,
        t_in: usize,
        horizon: usize,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Tensor> {
        if t_in < 1 || horizon < 1 {
            return Err(Error::invalid("t_in and horizon must be >= 1"));
        }
        let steps = t_in + horizon - 1;
        batch.check(steps)?;
        let memory = self.memory(p, batch)?;
        let disp = self.forward_tokens(p, batch, steps, memory.as_ref(), dropout_rng)?;
        let disp = disp.narrow(2, t_in - 1, horizon)?;
        let mut base = Vec::with_capacity(batch.batch() * batch.agents() * horizon * 2);
        for b in 0..batch.batch() {
            for a in 0..batch.agents() {
                for t in 0..horizon {
                    let q = batch.positions[b][a][t_in - 1 + t];
                    base.extend([q.x, q.y]);
                }
            }
        }
        let base = nn::tensor(base, (batch.batch(), batch.agents(), horizon, 2))?;
        Ok((base + (disp * self.cfg.coord_scale)?)?)
    }

    /// Free-running prediction: each new position is fed back as input.
    /// Only the first `t_in` positions of each sequence are read.
    pub fn rollout(
        &self,
        p: Params<'_>,
        batch: &TemporalBatch,
        t_in: usize,
        horizon: usize,
    ) -> Result<Vec<Vec<Vec<Point>>>> {
        if t_in < 1 || horizon < 1 {
            return Err(Error::invalid("t_in and horizon must be >= 1"));
        }
        batch.check(t_in)?;
        let memory = self.memory(p, batch)?;
        let mut work = batch.clone();
        for seq in work.positions.iter_mut().flatten() {
            seq.truncate(t_in);
        }
        for step in 0..horizon {
            let steps = t_in + step;
            let disp = self.forward_tokens(p, &work, steps, memory.as_ref(), None)?;
            let last = disp.narrow(2, steps - 1, 1)?.squeeze(2)?.to_vec3::<f64>()?;
            for (b, agents) in last.iter().enumerate() {
                for (a, dxy) in agents.iter().enumerate() {
                    let prev = work.positions[b][a][steps - 1];
                    let next = prev.add(Point::new(dxy[0], dxy[1]).scale(self.cfg.coord_scale));
                    work.positions[b][a].push(next);
                }
            }
        }
        Ok(work
            .positions
            .into_iter()
            .map(|agents| agents.into_iter().map(|s| s[t_in..].to_vec()).collect())
            .collect())
    }
}

/// Convenience: one scene, one goal/waypoint per agent, batch of 1.
pub fn single_batch(
    net: &TemporalNet,
    scene: Option<&SceneMap>,
    observed: &[Vec<Point>],
    goals: &[Point],
    waypoints: &[Point],
) -> Result<TemporalBatch> {
    let condition = match (net.cfg.use_map_cross_attention, scene) {
        (true, Some(s)) => Some(
            goals
                .iter()
                .zip(waypoints)
                .map(|(&g, &w)| {
                    condition_patches(s, g, net.cfg.use_waypoint.then_some(w), &net.cfg)
                })
                .collect::<Result<Vec<_>>>()?,
        ),
        (true, None) => return Err(Error::invalid("scene required for map cross-attention")),
        (false, _) => None,
    };
    let patch_grid = scene.map_or((0, 0), |s| {
        (s.height() / net.cfg.patch, s.width() / net.cfg.patch)
    });
    Ok(TemporalBatch {
        positions: vec![observed.to_vec()],
        goals: vec![goals.to_vec()],
        waypoints: vec![waypoints.to_vec()],
        valid: vec![vec![true; observed.len()]],
        condition,
        patch_grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tiny_cfg() -> TemporalNetConfig {
        TemporalNetConfig {
            d_model: 8,
            heads: 2,
            layers: 1,
            patch: 4,
            scene_channels: 2,
            coord_scale: 4.0,
            sigma: 1.5,
            ..Default::default()
        }
    }

    fn scene() -> SceneMap {
        SceneMap::new(
            "s",
            Array3::from_shape_fn((2, 8, 8), |(c, i, j)| ((c + i * j) % 3) as f64 / 2.0),
            1.0,
        )
        .unwrap()
    }

    fn random_obs(rng: &mut ChaCha8Rng, agents: usize, len: usize) -> Vec<Vec<Point>> {
        (0..agents)
            .map(|_| {
                (0..len)
                    .map(|_| Point::new(rng.random_range(0.0..7.0), rng.random_range(0.0..7.0)))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn zero_head_keeps_position() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = TemporalNet::new(tiny_cfg(), &mut rng).unwrap();
        for name in ["head.w", "head.b"] {
            let v = net.params.var(name).unwrap();
            v.set(&v.as_tensor().zeros_like().unwrap()).unwrap();
        }
        let obs = random_obs(&mut rng, 2, 3);
        let goals = vec![Point::new(5.0, 5.0); 2];
        let batch = single_batch(&net, Some(&scene()), &obs, &goals, &goals).unwrap();
        let out = net.rollout(net.params.frozen(), &batch, 3, 4).unwrap();
        for (a, seq) in out[0].iter().enumerate() {
            assert_eq!(seq.len(), 4);
            assert!(seq.iter().all(|p| *p == obs[a][2]));
        }
    }

    #[test]
    fn teacher_forced_and_free_running_agree_at_first_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = TemporalNet::new(tiny_cfg(), &mut rng).unwrap();
        let full = random_obs(&mut rng, 3, 7);
        let goals: Vec<Point> = full.iter().map(|s| s[6]).collect();
        let batch = single_batch(&net, Some(&scene()), &full, &goals, &goals).unwrap();
        let tf = net
            .teacher_forced(net.params.frozen(), &batch, 3, 4, None)
            .unwrap()
            .squeeze(0)
            .unwrap()
            .to_vec3::<f64>()
            .unwrap();
        let fr = net.rollout(net.params.frozen(), &batch, 3, 1).unwrap();
        for a in 0..3 {
            assert!((tf[a][0][0] - fr[0][a][0].x).abs() < 1e-12);
            assert!((tf[a][0][1] - fr[0][a][0].y).abs() < 1e-12);
        }
    }

    #[test]
    fn tied_parameters_reduce_to_standard_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = 8;
        let mut store = ParamStore::new();
        for n in ["x", "q", "k", "v", "o"] {
            let shape: &[usize] = if n == "x" { &[1, 6, d] } else { &[d, d] };
            store
                .add(
                    n,
                    shape,
                    Init::Scaled {
                        fan_in: d,
                        gain: 1.0,
                    },
                    &mut rng,
                )
                .unwrap();
        }
        store
            .add(
                "ob",
                &[d],
                Init::Scaled {
                    fan_in: 1,
                    gain: 0.1,
                },
                &mut rng,
            )
            .unwrap();
        let p = store.frozen();
        let x = p.get("x").unwrap();
        let w = AgentAwareWeights {
            q_intra: p.get("q").unwrap(),
            k_intra: p.get("k").unwrap(),
            inter: Some((p.get("q").unwrap(), p.get("k").unwrap())),
            v: p.get("v").unwrap(),
            out_w: p.get("o").unwrap(),
            out_b: p.get("ob").unwrap(),
        };
        let layout = TokenLayout::agent_major(2, 3);
        let masks = AttentionMasks::build(&layout, &[vec![true; 6]], false, true).unwrap();
        let got = agent_aware_attention(&x, &x, &x, &layout, &w, &masks, 2).unwrap();
        // reference: single-projection multi-head attention
        let q = split_heads(&linear(&x, &w.q_intra, None).unwrap(), 2).unwrap();
        let k = split_heads(&linear(&x, &w.k_intra, None).unwrap(), 2).unwrap();
        let v = split_heads(&linear(&x, &w.v, None).unwrap(), 2).unwrap();
        let a =
            softmax_last(&(q.matmul(&k.transpose(2, 3).unwrap()).unwrap() * 0.5).unwrap()).unwrap();
        let want = linear(
            &merge_heads(&a.matmul(&v).unwrap()).unwrap(),
            &w.out_w,
            Some(&w.out_b),
        )
        .unwrap();
        let diff = (got - want)
            .unwrap()
            .abs()
            .unwrap()
            .max_all()
            .unwrap()
            .to_scalar::<f64>()
            .unwrap();
        assert!(diff < 1e-12, "{diff}");
    }

    #[test]
    fn misaligned_ids_rejected() {
        let x = nn::tensor(vec![0.0; 5 * 4], (1, 5, 4)).unwrap();
        let layout = TokenLayout::agent_major(2, 3);
        let masks = AttentionMasks::build(&layout, &[vec![true; 6]], true, true).unwrap();
        let z = nn::tensor(vec![0.0; 16], (4, 4)).unwrap();
        let w = AgentAwareWeights {
            q_intra: z.clone(),
            k_intra: z.clone(),
            inter: None,
            v: z.clone(),
            out_w: z,
            out_b: nn::tensor(vec![0.0; 4], 4).unwrap(),
        };
        assert!(agent_aware_attention(&x, &x, &x, &layout, &w, &masks, 2).is_err());
    }

    #[test]
    fn condition_token_count_and_toggle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = TemporalNetConfig {
            d_model: 16,
            heads: 2,
            patch: 8,
            scene_channels: 6,
            ..Default::default()
        };
        let net = TemporalNet::new(cfg, &mut rng).unwrap();
        let sc = SceneMap::new("s", Array3::from_elem((6, 64, 64), 0.5), 1.0).unwrap();
        let hm = Array2::from_elem((64, 64), 0.3);
        let tok = build_condition_tokens(&net, net.params.frozen(), &sc, &hm, &hm).unwrap();
        assert_eq!(tok.dims(), &[64, 16]);
        assert_eq!(net.params.var("cond.w").unwrap().dims(), &[16, 8 * 64]);

        let off = TemporalNet::new(
            TemporalNetConfig {
                use_gw_heatmap: false,
                ..cfg
            },
            &mut rng,
        )
        .unwrap();
        let a = build_condition_tokens(&off, off.params.frozen(), &sc, &hm, &hm).unwrap();
        let z = Array2::zeros((64, 64));
        let b = build_condition_tokens(&off, off.params.frozen(), &sc, &z, &z).unwrap();
        assert_eq!(a.to_vec2::<f64>().unwrap(), b.to_vec2::<f64>().unwrap());
    }
}
