//! Encoder–decoder heatmap network for goal and waypoint estimation.
//!
//! The same architecture serves as student (short observation, full
//! horizon) and teacher (extended observation, remaining horizon); the two
//! roles differ only in their input/output step counts and own independent
//! parameters.

use candle_core::Tensor;
use ndarray::{Array3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, conv2d, max_pool2x2, Init, ParamStore, Params};
use crate::types::{HeatmapStack, Point, Provenance, SceneMap, TimeConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GoalNetConfig {
    pub in_steps: usize,
    pub out_steps: usize,
    pub scene_channels: usize,
    pub depth: usize,
    pub base_width: usize,
    /// Gaussian width of rendered heatmaps, in pixels.
    pub sigma: f64,
}

impl Default for GoalNetConfig {
    fn default() -> Self {
        Self {
            in_steps: 5,
            out_steps: 30,
            scene_channels: 6,
            depth: 4,
            base_width: 32,
            sigma: 4.0,
        }
    }
}

impl GoalNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_steps < 1 || self.out_steps < 1 {
            return Err(Error::invalid(
                "goal network needs >= 1 input and output step",
            ));
        }
        if self.depth < 1 || self.base_width < 1 {
            return Err(Error::invalid(
                "goal network depth and base width must be >= 1",
            ));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::invalid("heatmap sigma must be positive"));
        }
        Ok(())
    }

    pub fn check_resolution(&self, height: usize, width: usize) -> Result<()> {
        let f = 1usize << self.depth;
        if height % f != 0 || width % f != 0 {
            return Err(Error::invalid(format!(
                "resolution {height}x{width} not divisible by 2^{} = {f}",
                self.depth
            )));
        }
        Ok(())
    }

    fn width_at(&self, level: usize) -> usize {
        self.base_width << level
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Student,
    Teacher,
}

#[derive(Debug, Clone)]
pub struct GoalNet {
    pub cfg: GoalNetConfig,
    pub role: Role,
    pub params: ParamStore,
}

impl GoalNet {
    pub fn new<R: Rng>(cfg: GoalNetConfig, role: Role, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let relu_gain = 2f64.sqrt();
        let add_conv = |p: &mut ParamStore,
                        name: &str,
                        cin: usize,
                        cout: usize,
                        k: usize,
                        rng: &mut R|
         -> Result<()> {
            p.add(
                format!("{name}.w"),
                &[cout, cin, k, k],
                Init::Scaled {
                    fan_in: cin * k * k,
                    gain: relu_gain,
                },
                rng,
            )?;
            p.add(format!("{name}.b"), &[cout], Init::Zeros, rng)
        };
        let mut cin = cfg.scene_channels + cfg.in_steps;
        for l in 0..cfg.depth {
            let w = cfg.width_at(l);
            add_conv(&mut params, &format!("enc{l}.c0"), cin, w, 3, rng)?;
            add_conv(&mut params, &format!("enc{l}.c1"), w, w, 3, rng)?;
            cin = w;
        }
        let wm = cfg.width_at(cfg.depth);
        add_conv(&mut params, "mid.c0", cin, wm, 3, rng)?;
        add_conv(&mut params, "mid.c1", wm, wm, 3, rng)?;
        for l in (0..cfg.depth).rev() {
            let w = cfg.width_at(l);
            add_conv(
                &mut params,
                &format!("dec{l}.c0"),
                cfg.width_at(l + 1) + w,
                w,
                3,
                rng,
            )?;
            add_conv(&mut params, &format!("dec{l}.c1"), w, w, 3, rng)?;
        }
        params.add(
            "head.w",
            &[cfg.out_steps, cfg.base_width, 1, 1],
            Init::Scaled {
                fan_in: cfg.base_width,
                gain: 1.0,
            },
            rng,
        )?;
        params.add("head.b", &[cfg.out_steps], Init::Zeros, rng)?;
        // start from a low-probability background
        params
            .var("head.b")?
            .set(&(params.var("head.b")?.as_tensor().ones_like()? * -4.0)?)?;
        Ok(Self { cfg, role, params })
    }

    /// Pre-sigmoid output, `(B, out_steps, H, W)`.
    ///
    /// `scene` is `(B, C_s, H, W)` and `observed` is `(B, in_steps, H, W)`.
    pub fn logits(&self, p: Params<'_>, scene: &Tensor, observed: &Tensor) -> Result<Tensor> {
        let (b, cs, h, w) = scene.dims4()?;
        let (b2, steps, h2, w2) = observed.dims4()?;
        if cs != self.cfg.scene_channels || steps != self.cfg.in_steps || (b, h, w) != (b2, h2, w2)
        {
            return Err(Error::invalid(format!(
                "goal network expects {} scene channels and {} observation steps, got scene {:?} and observation {:?}",
                self.cfg.scene_channels,
                self.cfg.in_steps,
                scene.dims(),
                observed.dims()
            )));
        }
        self.cfg.check_resolution(h, w)?;
        let block = |x: &Tensor, name: &str| -> Result<Tensor> {
            let x = conv2d(
                x,
                &p.get(&format!("{name}.c0.w"))?,
                &p.get(&format!("{name}.c0.b"))?,
                1,
            )?
            .relu()?;
            Ok(conv2d(
                &x,
                &p.get(&format!("{name}.c1.w"))?,
                &p.get(&format!("{name}.c1.b"))?,
                1,
            )?
            .relu()?)
        };
        let mut x = Tensor::cat(&[scene, observed], 1)?;
        let mut skips = Vec::with_capacity(self.cfg.depth);
        for l in 0..self.cfg.depth {
            let y = block(&x, &format!("enc{l}"))?;
            x = max_pool2x2(&y)?;
            skips.push(y);
        }
        x = block(&x, "mid")?;
        for l in (0..self.cfg.depth).rev() {
            let skip = &skips[l];
            let (_, _, sh, sw) = skip.dims4()?;
            let up = x.upsample_nearest2d(sh, sw)?;
            x = block(&Tensor::cat(&[&up, skip], 1)?, &format!("dec{l}"))?;
        }
        conv2d(&x, &p.get("head.w")?, &p.get("head.b")?, 0)
    }

    /// Per-step heatmaps in `(0, 1)`.
    pub fn forward(&self, p: Params<'_>, scene: &Tensor, observed: &Tensor) -> Result<Tensor> {
        nn::sigmoid(&self.logits(p, scene, observed)?)
    }
}

/// Runs a goal network on one scene and one agent's observation heatmaps.
pub fn goal_forward(
    net: &GoalNet,
    scene: &SceneMap,
    observed: &HeatmapStack,
) -> Result<HeatmapStack> {
    if observed.steps() != net.cfg.in_steps {
        return Err(Error::invalid(format!(
            "expected {} observation steps, got {}",
            net.cfg.in_steps,
            observed.steps()
        )));
    }
    if scene.channels() != net.cfg.scene_channels {
        return Err(Error::invalid(format!(
            "expected {} scene channels, got {}",
            net.cfg.scene_channels,
            scene.channels()
        )));
    }
    if (scene.height(), scene.width()) != (observed.height(), observed.width()) {
        return Err(Error::invalid("scene and heatmaps must share H x W"));
    }
    let s = array3_to_tensor(&scene.grid)?.unsqueeze(0)?;
    let o = array3_to_tensor(&observed.grid)?.unsqueeze(0)?;
    let out = net.forward(net.params.frozen(), &s, &o)?.squeeze(0)?;
    Ok(HeatmapStack {
        grid: tensor_to_array3(&out)?,
        provenance: match net.role {
            Role::Student => Provenance::Student,
            Role::Teacher => Provenance::TeacherGtFed,
        },
    })
}

/// Ground-truth observation heatmaps followed by the first `t_wp` student
/// output steps, as input for the teacher.
pub fn build_augmented_teacher_input(
    gt_observation: &HeatmapStack,
    student_output: &HeatmapStack,
    time: &TimeConfig,
) -> Result<HeatmapStack> {
    if !time.is_midpoint_split() {
        return Err(Error::invalid(format!(
            "augmented teacher input requires t_f = 2 * t_wp (t_f={}, t_wp={})",
            time.t_f, time.t_wp
        )));
    }
    if gt_observation.steps() != time.t_h || student_output.steps() != time.t_f {
        return Err(Error::invalid(format!(
            "expected {} observed and {} student steps, got {} and {}",
            time.t_h,
            time.t_f,
            gt_observation.steps(),
            student_output.steps()
        )));
    }
    augment_stack(gt_observation, student_output, time.t_wp)
}

/// Generalized concatenation with an arbitrary student prefix length.
pub fn augment_stack(
    gt_observation: &HeatmapStack,
    student_output: &HeatmapStack,
    extra: usize,
) -> Result<HeatmapStack> {
    if extra > student_output.steps() {
        return Err(Error::invalid("student prefix longer than student output"));
    }
    let prefix = student_output.grid.slice(ndarray::s![..extra, .., ..]);
    let grid = ndarray::concatenate(Axis(0), &[gt_observation.grid.view(), prefix])
        .map_err(|e| Error::invalid(e.to_string()))?;
    Ok(HeatmapStack {
        grid,
        provenance: Provenance::TeacherAugmented,
    })
}

/// Tensor form of [`augment_stack`] over `(B, T, H, W)` stacks; gradients
/// flow into the student slice.
pub fn augment_tensor(
    gt_observation: &Tensor,
    student_output: &Tensor,
    extra: usize,
) -> Result<Tensor> {
    if extra == 0 {
        return Ok(gt_observation.clone());
    }
    let prefix = student_output.narrow(1, 0, extra)?;
    Ok(Tensor::cat(&[gt_observation, &prefix], 1)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoalSampleSet {
    pub goals: Vec<Point>,
    pub waypoints: Vec<Point>,
    pub log_scores: Vec<f64>,
}

impl GoalSampleSet {
    pub fn k(&self) -> usize {
        self.goals.len()
    }
}

/// Draws `k` cells from `softmax(logit(p) / temperature)` over the final
/// step of `pred`. Returns cell positions and their log-probabilities.
pub fn sample_goals<R: Rng>(
    pred: &HeatmapStack,
    k: usize,
    temperature: f64,
    rng: &mut R,
) -> Result<Vec<(Point, f64)>> {
    if k < 1 {
        return Err(Error::invalid("k must be >= 1"));
    }
    if !(temperature > 0.0) {
        return Err(Error::invalid("temperature must be positive"));
    }
    let last = pred.grid.index_axis(Axis(0), pred.steps() - 1);
    let w = pred.width();
    let z: Vec<f64> = last
        .iter()
        .map(|&p| {
            let p = p.clamp(1e-12, 1.0 - 1e-12);
            (p / (1.0 - p)).ln() / temperature
        })
        .collect();
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut cdf = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for wt in &weights {
        acc += wt / total;
        cdf.push(acc);
    }
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let u: f64 = rng.random::<f64>() * acc;
        let idx = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
        let logp = (weights[idx] / total).ln();
        out.push((Point::new((idx % w) as f64, (idx / w) as f64), logp));
    }
    Ok(out)
}

/// Waypoint = argmax over cells of heatmap[`t_wp`] times a Gaussian prior
/// centered between the last observed position and the goal.
pub fn condition_waypoint(
    pred: &HeatmapStack,
    goal: Point,
    last_observed: Point,
    t_wp: usize,
    prior_sigma: f64,
) -> Result<Point> {
    if t_wp >= pred.steps() {
        return Err(Error::invalid(format!(
            "waypoint step {t_wp} outside {}-step prediction",
            pred.steps()
        )));
    }
    if !(prior_sigma > 0.0) {
        return Err(Error::invalid("prior sigma must be positive"));
    }
    let center = last_observed.midpoint(goal);
    let inv = 1.0 / (2.0 * prior_sigma * prior_sigma);
    let plane = pred.grid.index_axis(Axis(0), t_wp);
    let mut best = Point::default();
    let mut best_score = f64::NEG_INFINITY;
    for ((i, j), &h) in plane.indexed_iter() {
        let d2 = (i as f64 - center.y).powi(2) + (j as f64 - center.x).powi(2);
        // log domain avoids underflow of the product on large grids
        let score = h.max(1e-300).ln() - d2 * inv;
        if score > best_score {
            best_score = score;
            best = Point::new(j as f64, i as f64);
        }
    }
    Ok(best)
}

/// Samples `k` goals from the final step and conditions one waypoint on each.
pub fn sample_goal_set<R: Rng>(
    pred: &HeatmapStack,
    k: usize,
    temperature: f64,
    last_observed: Point,
    t_wp: usize,
    prior_sigma: f64,
    rng: &mut R,
) -> Result<GoalSampleSet> {
    let draws = sample_goals(pred, k, temperature, rng)?;
    let mut set = GoalSampleSet {
        goals: Vec::with_capacity(k),
        waypoints: Vec::with_capacity(k),
        log_scores: Vec::with_capacity(k),
    };
    for (g, s) in draws {
        set.waypoints.push(condition_waypoint(
            pred,
            g,
            last_observed,
            t_wp,
            prior_sigma,
        )?);
        set.goals.push(g);
        set.log_scores.push(s);
    }
    Ok(set)
}

pub fn array3_to_tensor(a: &Array3<f64>) -> Result<Tensor> {
    let (c, h, w) = a.dim();
    let data: Vec<f64> = a.iter().copied().collect();
    nn::tensor(data, (c, h, w))
}

pub fn tensor_to_array3(t: &Tensor) -> Result<Array3<f64>> {
    let (c, h, w) = t.dims3()?;
    let data = t.flatten_all()?.to_vec1::<f64>()?;
    Array3::from_shape_vec((c, h, w), data).map_err(|e| Error::invalid(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heatmap::render_trajectory_heatmaps;
    use ndarray::Array3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(in_steps: usize, out_steps: usize) -> GoalNetConfig {
        GoalNetConfig {
            in_steps,
            out_steps,
            scene_channels: 2,
            depth: 1,
            base_width: 4,
            sigma: 1.5,
        }
    }

    fn scene(c: usize, h: usize, w: usize) -> SceneMap {
        SceneMap::new(
            "s",
            Array3::from_shape_fn((c, h, w), |(k, i, j)| ((k + i + j) % 2) as f64),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn student_and_teacher_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let student = GoalNet::new(
            GoalNetConfig {
                scene_channels: 2,
                depth: 1,
                base_width: 4,
                ..Default::default()
            },
            Role::Student,
            &mut rng,
        )
        .unwrap();
        let teacher = GoalNet::new(
            GoalNetConfig {
                in_steps: 20,
                out_steps: 15,
                scene_channels: 2,
                depth: 1,
                base_width: 4,
                sigma: 2.0,
            },
            Role::Teacher,
            &mut rng,
        )
        .unwrap();
        let sc = scene(2, 16, 16);
        let pts: Vec<Point> = (0..20).map(|i| Point::new(i as f64 * 0.5, 3.0)).collect();
        let obs5 = render_trajectory_heatmaps(&pts[..5], 1.5, 16, 16).unwrap();
        let obs20 = render_trajectory_heatmaps(&pts, 1.5, 16, 16).unwrap();
        let s = goal_forward(&student, &sc, &obs5).unwrap();
        let t = goal_forward(&teacher, &sc, &obs20).unwrap();
        assert_eq!(s.steps(), 30);
        assert_eq!(t.steps(), 15);
        assert_eq!(s.provenance, Provenance::Student);
        assert!(s
            .grid
            .iter()
            .chain(t.grid.iter())
            .all(|&v| v > 0.0 && v < 1.0));
        assert!(goal_forward(&student, &sc, &obs20).is_err());
        assert!(goal_forward(&student, &scene(3, 16, 16), &obs5).is_err());
    }

    #[test]
    fn augmented_input_slices() {
        let time = TimeConfig::long_term();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gt = HeatmapStack {
            grid: Array3::from_shape_fn((5, 4, 4), |_| rng.random()),
            provenance: Provenance::GroundTruth,
        };
        let st = HeatmapStack {
            grid: Array3::from_shape_fn((30, 4, 4), |_| rng.random()),
            provenance: Provenance::Student,
        };
        let aug = build_augmented_teacher_input(&gt, &st, &time).unwrap();
        assert_eq!(aug.steps(), 20);
        assert_eq!(aug.provenance, Provenance::TeacherAugmented);
        for t in 0..5 {
            assert_eq!(aug.step(t), gt.step(t));
        }
        for i in 0..15 {
            assert_eq!(aug.step(5 + i), st.step(i));
        }
        let bad = TimeConfig::new(5, 10, 30, 1.0).unwrap();
        assert!(build_augmented_teacher_input(&gt, &st, &bad).is_err());
    }

    #[test]
    fn augmented_minimal_case() {
        let time = TimeConfig::new(1, 1, 2, 1.0).unwrap();
        let gt = HeatmapStack {
            grid: Array3::from_elem((1, 2, 2), 0.25),
            provenance: Provenance::GroundTruth,
        };
        let st = HeatmapStack {
            grid: Array3::from_shape_fn((2, 2, 2), |(t, _, _)| 0.5 + t as f64 * 0.1),
            provenance: Provenance::Student,
        };
        let aug = build_augmented_teacher_input(&gt, &st, &time).unwrap();
        assert_eq!(aug.steps(), 2);
        assert_eq!(aug.step(0), gt.step(0));
        assert_eq!(aug.step(1), st.step(0));
    }

    #[test]
    fn augment_tensor_passes_student_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        store
            .add(
                "s",
                &[1, 4, 3, 3],
                Init::Scaled {
                    fan_in: 1,
                    gain: 1.0,
                },
                &mut rng,
            )
            .unwrap();
        let gt = nn::tensor(vec![0.1; 2 * 9], (1, 2, 3, 3)).unwrap();
        let s = store.tracked().get("s").unwrap();
        let aug = augment_tensor(&gt, &s, 2).unwrap();
        assert_eq!(aug.dims(), &[1, 4, 3, 3]);
        let g = aug.sum_all().unwrap().backward().unwrap();
        let gs = g
            .get(store.var("s").unwrap())
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1::<f64>()
            .unwrap();
        assert!(gs[..18].iter().all(|&v| v == 1.0));
        assert!(gs[18..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_hot_and_cold_sampling() {
        let mut grid = Array3::from_elem((2, 6, 6), 1e-6);
        grid[[1, 4, 2]] = 1.0 - 1e-6;
        let pred = HeatmapStack {
            grid,
            provenance: Provenance::Student,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (p, _) in sample_goals(&pred, 50, 0.05, &mut rng).unwrap() {
            assert_eq!(p, Point::new(2.0, 4.0));
        }
        let mut grid =
            Array3::from_shape_fn((1, 5, 5), |(_, i, j)| 0.1 + 0.01 * (i * 5 + j) as f64);
        grid[[0, 1, 3]] = 0.9;
        let pred = HeatmapStack {
            grid,
            provenance: Provenance::Student,
        };
        for (p, lp) in sample_goals(&pred, 30, 1e-9, &mut rng).unwrap() {
            assert_eq!(p, Point::new(3.0, 1.0));
            assert!(lp.abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_sampling_frequencies() {
        let pred = HeatmapStack {
            grid: Array3::from_elem((1, 2, 2), 0.3),
            provenance: Provenance::Student,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 10_000usize;
        let mut counts = [0usize; 4];
        for (p, _) in sample_goals(&pred, n, 1.0, &mut rng).unwrap() {
            counts[(p.y as usize) * 2 + p.x as usize] += 1;
        }
        // multinomial std of a single cell count
        let sd = (n as f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - 2500.0).abs() <= 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn sampling_is_seed_reproducible() {
        let pred = HeatmapStack {
            grid: Array3::from_shape_fn((1, 8, 8), |(_, i, j)| {
                ((i * 8 + j) as f64 / 70.0).min(0.99)
            }),
            provenance: Provenance::Student,
        };
        let a = sample_goals(&pred, 20, 1.0, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = sample_goals(&pred, 20, 1.0, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn waypoint_uniform_and_flat_prior() {
        let pred = HeatmapStack {
            grid: Array3::from_elem((3, 9, 9), 0.2),
            provenance: Provenance::Student,
        };
        let wp =
            condition_waypoint(&pred, Point::new(8.0, 6.0), Point::new(2.0, 2.0), 1, 3.0).unwrap();
        assert_eq!(wp, Point::new(5.0, 4.0));

        let mut grid = Array3::from_elem((3, 9, 9), 0.1);
        grid[[1, 7, 0]] = 0.8;
        let pred = HeatmapStack {
            grid,
            provenance: Provenance::Student,
        };
        let wp = condition_waypoint(
            &pred,
            Point::new(8.0, 8.0),
            Point::new(6.0, 6.0),
            1,
            f64::INFINITY,
        )
        .unwrap();
        assert_eq!(wp, Point::new(0.0, 7.0));
        assert!(
            condition_waypoint(&pred, Point::new(0.0, 0.0), Point::new(0.0, 0.0), 3, 1.0).is_err()
        );
    }

    #[test]
    fn waypoint_matches_product_argmax_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pred = HeatmapStack {
            grid: Array3::from_shape_fn((4, 16, 16), |_| rng.random_range(0.01..1.0)),
            provenance: Provenance::Student,
        };
        let goal = Point::new(13.0, 3.0);
        let last = Point::new(2.0, 12.0);
        let sigma = 4.0;
        let (cx, cy) = ((goal.x + last.x) / 2.0, (goal.y + last.y) / 2.0);
        let mut best = (0, 0);
        let mut best_v = -1.0;
        for i in 0..16 {
            for j in 0..16 {
                let prior = (-((i as f64 - cy).powi(2) + (j as f64 - cx).powi(2))
                    / (2.0 * sigma * sigma))
                    .exp();
                let v = pred.grid[[2, i, j]] * prior;
                if v > best_v {
                    best_v = v;
                    best = (i, j);
                }
            }
        }
        let wp = condition_waypoint(&pred, goal, last, 2, sigma).unwrap();
        assert_eq!(wp, Point::new(best.1 as f64, best.0 as f64));
    }

    #[test]
    fn bad_resolution_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = GoalNet::new(
            GoalNetConfig {
                depth: 2,
                ..tiny(1, 1)
            },
            Role::Student,
            &mut rng,
        )
        .unwrap();
        let s = nn::tensor(vec![0.0; 2 * 36], (1, 2, 6, 6)).unwrap();
        let o = nn::tensor(vec![0.0; 36], (1, 1, 6, 6)).unwrap();
        assert!(net.forward(net.params.tracked(), &s, &o).is_err());
    }
}
