use longtraj_core::checkpoint::Checkpoint;
use longtraj_core::dataio::{generate_synthetic, synthetic_dataset, SynthConfig};
use longtraj_core::trainer::{
    load_models, resume, train, Ablation, RunConfig, LAST_CHECKPOINT, TRAIN_LOG,
};
use longtraj_core::{
    Dataset, DistillConfig, Error, GoalNetConfig, ModelSet, TemporalNetConfig, TimeConfig,
};

fn setup(epochs: usize) -> (RunConfig, Dataset, Dataset) {
    let time = TimeConfig::new(3, 3, 6, 1.0).unwrap();
    let scenes = generate_synthetic(&SynthConfig {
        seed: 3,
        n_scenes: 4,
        agents_per_scene: 2,
        grid: 16,
        steps: 9,
        ..Default::default()
    })
    .unwrap();
    let ds = synthetic_dataset(&scenes, &time, 9).unwrap();
    let ids = ds.scene_ids();
    let cfg = RunConfig {
        time,
        epochs,
        batch_size: 2,
        goalnet: GoalNetConfig {
            in_steps: 3,
            out_steps: 6,
            depth: 1,
            base_width: 4,
            sigma: 1.5,
            ..Default::default()
        },
        temporalnet: TemporalNetConfig {
            d_model: 8,
            heads: 2,
            layers: 1,
            patch: 4,
            coord_scale: 4.0,
            sigma: 1.5,
            ..Default::default()
        },
        distill: DistillConfig {
            teacher_extra_steps: 3,
            ..Default::default()
        },
        seed: 11,
        ..Default::default()
    };
    (cfg, ds.subset(&ids[..3]), ds.subset(&ids[3..]))
}

fn host(models: &ModelSet) -> Vec<Vec<(String, Vec<usize>, Vec<f64>)>> {
    models
        .groups()
        .iter()
        .map(|(_, s)| s.to_host().unwrap())
        .collect()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

#[test]
fn zero_epochs_returns_initialization() {
    let (cfg, tr, _) = setup(0);
    let out = train(&cfg, &tr, None).unwrap();
    assert!(out.checkpoint.history.is_empty());
    assert_eq!(host(&out.models), host(&cfg.build_models().unwrap()));
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let (mut cfg, tr, va) = setup(2);
    cfg.output_dir = Some(dir.path().to_path_buf());
    let out = train(&cfg, &tr, Some(&va)).unwrap();
    let path = dir.path().join(LAST_CHECKPOINT);
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, out.checkpoint);
    let (_, models) = load_models(&path).unwrap();
    assert_eq!(host(&models), host(&out.models));
    let log = std::fs::read_to_string(dir.path().join(TRAIN_LOG)).unwrap();
    assert_eq!(log.lines().count(), 3);
}

#[test]
fn resume_matches_straight_run() {
    let dir = tempfile::tempdir().unwrap();
    let (mut cfg, tr, _) = setup(5);
    cfg.val_every = 0;
    cfg.output_dir = Some(dir.path().to_path_buf());
    train(&cfg, &tr, None).unwrap();
    let resumed = resume(
        &dir.path().join(LAST_CHECKPOINT),
        &RunConfig {
            epochs: 10,
            ..cfg.clone()
        },
        &tr,
        None,
    )
    .unwrap();
    let straight = train(
        &RunConfig {
            epochs: 10,
            output_dir: None,
            ..cfg
        },
        &tr,
        None,
    )
    .unwrap();
    let a = resumed.checkpoint.history.last().unwrap().losses.total;
    let b = straight.checkpoint.history.last().unwrap().losses.total;
    assert_eq!(resumed.checkpoint.history.len(), 10);
    assert!(rel(a, b) <= 1e-5, "{a} vs {b}");
}

#[test]
fn resume_rejects_changed_width_and_skips_finished_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (mut cfg, tr, _) = setup(1);
    cfg.val_every = 0;
    cfg.output_dir = Some(dir.path().to_path_buf());
    let first = train(&cfg, &tr, None).unwrap();
    let path = dir.path().join(LAST_CHECKPOINT);

    let mut changed = cfg.clone();
    changed.temporalnet.d_model = 16;
    match resume(&path, &changed, &tr, None) {
        Err(Error::ConfigMismatch(diff)) => assert!(
            diff.iter().any(|d| d.contains("temporalnet.d_model")),
            "{diff:?}"
        ),
        other => panic!("expected a config mismatch, got {:?}", other.err()),
    }

    let again = resume(&path, &cfg, &tr, None).unwrap();
    assert_eq!(again.checkpoint, first.checkpoint);
}

#[test]
fn teachers_untouched_without_distillation() {
    let (mut cfg, tr, _) = setup(2);
    cfg.ablation = Ablation {
        gm_distill: false,
        tm_distill: false,
        ..Ablation::full()
    };
    let init = cfg.build_models().unwrap();
    let out = train(&cfg, &tr, None).unwrap();
    for g in ["teacher_goal", "teacher_temporal"] {
        assert_eq!(
            out.models.group(g).unwrap().to_host().unwrap(),
            init.group(g).unwrap().to_host().unwrap()
        );
    }
    assert_ne!(
        out.models.group("student_goal").unwrap().to_host().unwrap(),
        init.group("student_goal").unwrap().to_host().unwrap()
    );
}

#[test]
fn logged_components_recombine_to_total() {
    let (mut cfg, tr, _) = setup(2);
    cfg.distill.lambda = 0.7;
    let out = train(&cfg, &tr, None).unwrap();
    for r in &out.checkpoint.history {
        let l = &r.losses;
        let want = l.goal_student
            + l.goal_teacher
            + l.goal_distill
            + 0.7 * (l.traj_student + l.traj_teacher + l.traj_distill);
        assert!((l.total - want).abs() <= 1e-9 * want.abs().max(1.0));
    }
}

#[test]
fn fresh_run_replaces_stale_log() {
    let dir = tempfile::tempdir().unwrap();
    let (mut cfg, tr, _) = setup(1);
    cfg.val_every = 0;
    cfg.output_dir = Some(dir.path().to_path_buf());
    train(&cfg, &tr, None).unwrap();
    train(&cfg, &tr, None).unwrap();
    let log = std::fs::read_to_string(dir.path().join(TRAIN_LOG)).unwrap();
    assert_eq!(log.lines().count(), 2);
}
