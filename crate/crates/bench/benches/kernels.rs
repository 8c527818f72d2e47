use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use longtraj_bench::{rng, scene, track};
use longtraj_core::goalnet::{goal_forward, GoalNet, Role};
use longtraj_core::heatmap::render_trajectory_heatmaps;
use longtraj_core::metrics::min_ade_fde;
use longtraj_core::patch::patchify;
use longtraj_core::temporalnet::{single_batch, TemporalNet};
use longtraj_core::{GoalNetConfig, TemporalNetConfig};

fn heatmaps(c: &mut Criterion) {
    let mut g = c.benchmark_group("render_heatmaps");
    let pts = track(&mut rng(), 30, 64);
    for side in [32usize, 64] {
        g.bench_with_input(BenchmarkId::from_parameter(side), &side, |b, &s| {
            b.iter(|| render_trajectory_heatmaps(black_box(&pts), 2.0, s, s).unwrap())
        });
    }
    g.finish();
}

fn patches(c: &mut Criterion) {
    let s = scene(8, 64);
    c.bench_function("patchify_8x64x64_p8", |b| {
        b.iter(|| patchify(black_box(&s.grid), 8).unwrap())
    });
}

fn goalnet(c: &mut Criterion) {
    let cfg = GoalNetConfig {
        in_steps: 5,
        out_steps: 30,
        scene_channels: 6,
        depth: 2,
        base_width: 8,
        sigma: 2.0,
    };
    let net = GoalNet::new(cfg, Role::Student, &mut rng()).unwrap();
    let s = scene(6, 32);
    let obs = render_trajectory_heatmaps(&track(&mut rng(), 5, 32), 2.0, 32, 32).unwrap();
    c.bench_function("goalnet_forward_32", |b| {
        b.iter(|| goal_forward(&net, &s, black_box(&obs)).unwrap())
    });
}

fn rollout(c: &mut Criterion) {
    let cfg = TemporalNetConfig {
        d_model: 32,
        heads: 2,
        layers: 1,
        patch: 8,
        scene_channels: 6,
        ..Default::default()
    };
    let net = TemporalNet::new(cfg, &mut rng()).unwrap();
    let s = scene(6, 32);
    let mut r = rng();
    let obs: Vec<_> = (0..3).map(|_| track(&mut r, 5, 32)).collect();
    let goals: Vec<_> = (0..3)
        .map(|i| obs[i][4].add(obs[i][4].sub(obs[i][0]).scale(4.0)))
        .collect();
    let wps: Vec<_> = (0..3).map(|i| obs[i][4].midpoint(goals[i])).collect();
    let batch = single_batch(&net, Some(&s), &obs, &goals, &wps).unwrap();
    c.bench_function("rollout_3_agents_30_steps", |b| {
        b.iter(|| {
            net.rollout(net.params.frozen(), black_box(&batch), 5, 30)
                .unwrap()
        })
    });
}

fn metrics(c: &mut Criterion) {
    let mut r = rng();
    let gt = track(&mut r, 30, 64);
    let samples: Vec<_> = (0..20).map(|_| track(&mut r, 30, 64)).collect();
    c.bench_function("min_ade_fde_k20_t30", |b| {
        b.iter(|| min_ade_fde(black_box(&samples), &gt).unwrap())
    });
}

criterion_group!(benches, heatmaps, patches, goalnet, rollout, metrics);
criterion_main!(benches);
