//! `longtraj` command-line driver.
//!
//! Every command is headless. Tables are tab-separated with a header row and
//! plots are static SVG files.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use longtraj_core::dataio::{self, save_scene_map, write_recording, SYNTH_CLASSES};
use longtraj_core::metrics::{evaluate, horizon_sweep};
use longtraj_core::report::{plot_file, Table};
use longtraj_core::trainer::{self, Ablation, BEST_CHECKPOINT};
use longtraj_core::{Dataset, Error, EvalReport, Result, RunConfig};

use crate::config::{load_dataset, load_split, CliConfig, DataConfig, SceneSource};

#[derive(Debug, Parser)]
#[command(
    name = "longtraj",
    version,
    about = "Long-term trajectory forecasting with teacher-student distillation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run and data configuration (TOML). Built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the run seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train all four networks jointly.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Best-of-k evaluation of a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        #[arg(long, default_value_t = 20)]
        k: usize,
    },
    /// Train and evaluate one run per toggle row.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Rows separated by `;`, toggles by `,`; `none` is the all-off row
        /// and `grid` the nine-row preset.
        #[arg(long, default_value = "grid", allow_hyphen_values = true)]
        toggles: String,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        #[arg(long, default_value_t = 20)]
        k: usize,
    },
    /// Error against prediction horizon for a checkpoint.
    SweepHorizon {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated steps; multiples of 5 up to t_f when omitted.
        #[arg(long, value_delimiter = ',')]
        horizons: Vec<usize>,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        #[arg(long, default_value_t = 20)]
        k: usize,
    },
    /// Error against teacher input length for each distillation scheme.
    SweepTeacher {
        #[command(flatten)]
        common: Common,
        /// Comma-separated teacher input lengths in steps.
        #[arg(long, value_delimiter = ',', default_value = "5,10,15,20,25,30,35")]
        lengths: Vec<usize>,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        #[arg(long, default_value_t = 20)]
        k: usize,
    },
    /// Write a synthetic dataset as recordings, map images and a config.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Render tables to SVG.
    Plot {
        #[arg(required = true)]
        tables: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) | Error::ConfigMismatch(_) => 2,
        e if e.is_data_error() => 3,
        e if e.is_numerical() => 4,
        _ => 1,
    }
}

fn load_config(common: &Common) -> Result<CliConfig> {
    let mut cfg = match &common.config {
        Some(p) => CliConfig::load(p)?,
        None => CliConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.run.seed = s;
    }
    Ok(cfg)
}

fn out_dir(common: &Common, cfg: &CliConfig, fallback: &str) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| cfg.run.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(fallback))
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_text(p: &Path, text: &str) -> Result<()> {
    fs::write(p, text).map_err(|e| Error::io(p, e))
}

/// Parses a toggle matrix. Duplicate rows are dropped with a warning.
pub fn parse_toggle_matrix(matrix: &str) -> Result<Vec<Ablation>> {
    let matrix = matrix.trim();
    if matrix == "grid" {
        return Ok(Ablation::ablation_grid());
    }
    let mut rows = Vec::new();
    for row in matrix.split(';').map(str::trim).filter(|r| !r.is_empty()) {
        let a = if row == "none" {
            Ablation::none()
        } else {
            let names: Vec<&str> = row
                .split(',')
                .map(str::trim)
                .filter(|n| !n.is_empty())
                .collect();
            Ablation::from_toggles(&names)?
        };
        if rows.contains(&a) {
            log::warn!("duplicate toggle row `{row}` ignored");
        } else {
            rows.push(a);
        }
    }
    Ok(rows)
}

struct Data {
    train: Dataset,
    val: Dataset,
    eval: Dataset,
}

fn load_data(cfg: &CliConfig, eval_split: Split) -> Result<Data> {
    let all = load_dataset(cfg)?;
    Ok(Data {
        train: load_split(cfg, &all, "train")?,
        val: load_split(cfg, &all, "val")?,
        eval: load_split(cfg, &all, eval_split.name())?,
    })
}

/// Trains into `dir` and evaluates the best-by-validation checkpoint, or
/// the final weights when no validation ran.
fn train_and_eval(run: &RunConfig, dir: &Path, data: &Data, k: usize) -> Result<EvalReport> {
    let mut run = run.clone();
    run.output_dir = Some(dir.to_path_buf());
    create_dir(dir)?;
    write_text(&dir.join("config.toml"), &run.to_toml()?)?;
    let val = (run.val_every > 0 && data.val.n_windows() > 0).then_some(&data.val);
    let outcome = trainer::train(&run, &data.train, val)?;
    let best = dir.join(BEST_CHECKPOINT);
    let report = if best.exists() {
        let (_, models) = trainer::load_models(&best)?;
        evaluate(&models, &data.eval, k, run.seed)?
    } else {
        evaluate(&outcome.models, &data.eval, k, run.seed)?
    };
    write_text(&dir.join("eval.json"), &report.to_json())?;
    Ok(report)
}

fn cmd_train(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let dir = out_dir(common, &cfg, "runs/train");
    let mut run = cfg.run.clone();
    run.output_dir = Some(dir.clone());
    create_dir(&dir)?;
    write_text(&dir.join("config.toml"), &cfg.to_toml()?)?;
    let data = load_data(&cfg, Split::Val)?;
    let val = (run.val_every > 0 && data.val.n_windows() > 0).then_some(&data.val);
    log::info!(
        "training on {} windows, validating on {}",
        data.train.n_windows(),
        val.map_or(0, Dataset::n_windows)
    );
    let out = trainer::train(&run, &data.train, val)?;
    if let Some(last) = out.checkpoint.history.last() {
        println!("{}", trainer::LOG_HEADER);
        println!("{}", last.log_line());
    }
    println!("checkpoints in {}", dir.display());
    Ok(())
}

fn cmd_eval(common: &Common, checkpoint: &Path, split: Split, k: usize) -> Result<()> {
    let mut cfg = load_config(common)?;
    let (saved, models) = trainer::load_models(checkpoint)?;
    cfg.run.time = saved.time;
    let all = load_dataset(&cfg)?;
    let data = load_split(&cfg, &all, split.name())?;
    let report = evaluate(&models, &data, k, cfg.run.seed)?;
    print!("{}", report.to_tsv());
    if let Some(dir) = &common.out {
        create_dir(dir)?;
        write_text(&dir.join("eval.tsv"), &report.to_tsv())?;
        write_text(&dir.join("eval.json"), &report.to_json())?;
    }
    Ok(())
}

fn cmd_ablate(common: &Common, toggles: &str, split: Split, k: usize) -> Result<()> {
    let rows = parse_toggle_matrix(toggles)?;
    let cfg = load_config(common)?;
    let dir = out_dir(common, &cfg, "runs/ablate");
    create_dir(&dir)?;
    let mut header: Vec<&str> = Ablation::TOGGLES.to_vec();
    header.extend(["min_ade", "min_fde"]);
    let mut table = Table::new(&header);
    if !rows.is_empty() {
        let data = load_data(&cfg, split)?;
        for a in rows {
            log::info!("ablation row {}", a.signature());
            let run = RunConfig {
                ablation: a,
                ..cfg.run.clone()
            };
            let r = train_and_eval(&run, &dir.join(a.signature()), &data, k)?;
            let mut row: Vec<String> = a
                .values()
                .iter()
                .map(|&v| u8::from(v).to_string())
                .collect();
            row.extend([format!("{:.6}", r.min_ade), format!("{:.6}", r.min_fde)]);
            table.push(row)?;
        }
    }
    let path = dir.join("ablation.tsv");
    table.write(&path)?;
    print!("{}", table.to_tsv());
    Ok(())
}

fn cmd_sweep_horizon(
    common: &Common,
    checkpoint: &Path,
    horizons: &[usize],
    split: Split,
    k: usize,
) -> Result<()> {
    let mut cfg = load_config(common)?;
    let (saved, models) = trainer::load_models(checkpoint)?;
    cfg.run.time = saved.time;
    let hs: Vec<usize> = if horizons.is_empty() {
        (1..=saved.time.t_f / 5).map(|i| i * 5).collect()
    } else {
        horizons.to_vec()
    };
    let all = load_dataset(&cfg)?;
    let data = load_split(&cfg, &all, split.name())?;
    let sweep = horizon_sweep(&models, &data, &hs, k, cfg.run.seed)?;
    let mut table = Table::new(&["horizon", "min_ade", "min_fde"]);
    for r in &sweep.rows {
        table.push(vec![
            r.horizon.to_string(),
            format!("{:.6}", r.ade),
            format!("{:.6}", r.fde),
        ])?;
    }
    let dir = out_dir(common, &cfg, "runs/sweep_horizon");
    create_dir(&dir)?;
    let path = dir.join("horizon.tsv");
    table.write(&path)?;
    if !table.rows.is_empty() {
        plot_file(&path, &dir)?;
    }
    print!("{}", table.to_tsv());
    Ok(())
}

/// Distillation schemes compared by the teacher-length sweep.
pub const SCHEMES: [(&str, bool, bool); 3] = [
    ("gm", true, false),
    ("tm", false, true),
    ("total", true, true),
];

/// Lengths the sweep can run for observation `t_h` and horizon `t_f`, with
/// warnings for the rest.
pub fn usable_teacher_lengths(lengths: &[usize], t_h: usize, t_f: usize) -> Vec<usize> {
    let mut kept = Vec::new();
    for &l in lengths {
        if l < t_h {
            log::warn!(
                "teacher input length {l} is shorter than the {t_h} observed steps; skipped"
            );
        } else if l - t_h >= t_f {
            log::warn!("teacher input length {l} leaves no future steps to predict; skipped");
        } else if kept.contains(&l) {
            log::warn!("duplicate teacher input length {l} ignored");
        } else {
            kept.push(l);
        }
    }
    kept
}

fn cmd_sweep_teacher(common: &Common, lengths: &[usize], split: Split, k: usize) -> Result<()> {
    let cfg = load_config(common)?;
    let time = cfg.run.time;
    let kept = usable_teacher_lengths(lengths, time.t_h, time.t_f);
    let dir = out_dir(common, &cfg, "runs/sweep_teacher");
    create_dir(&dir)?;
    let mut table = Table::new(&["teacher_input_len", "scheme", "min_ade", "min_fde"]);
    if !kept.is_empty() {
        let data = load_data(&cfg, split)?;
        for &l in &kept {
            for (scheme, gm, tm) in SCHEMES {
                let mut run = cfg.run.clone();
                run.distill.teacher_extra_steps = l - time.t_h;
                run.ablation.gm_distill = gm;
                run.ablation.tm_distill = tm;
                log::info!("teacher length {l}, scheme {scheme}");
                let r = train_and_eval(&run, &dir.join(format!("len{l}_{scheme}")), &data, k)?;
                table.push(vec![
                    l.to_string(),
                    scheme.to_string(),
                    format!("{:.6}", r.min_ade),
                    format!("{:.6}", r.min_fde),
                ])?;
            }
        }
    }
    let path = dir.join("teacher_length.tsv");
    table.write(&path)?;
    if !table.rows.is_empty() {
        plot_file(&path, &dir)?;
    }
    print!("{}", table.to_tsv());
    Ok(())
}

fn cmd_synth(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let mut synth = cfg.data.synthetic.clone().unwrap_or_default();
    if let Some(s) = common.seed {
        synth.seed = s;
    }
    let dir = common
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("synthetic"));
    create_dir(&dir)?;
    let mut sources = Vec::new();
    for s in dataio::generate_synthetic(&synth)? {
        let id = s.recording.scene_id.clone();
        let (csv, png, legend) = (
            format!("{id}.csv"),
            format!("{id}.png"),
            format!("{id}.legend.json"),
        );
        write_recording(&s.recording, &dir.join(&csv))?;
        save_scene_map(&s.map, &SYNTH_CLASSES, &dir.join(&png), &dir.join(&legend))?;
        sources.push(SceneSource {
            id,
            trajectories: csv.into(),
            format: dataio::RecordingFormat::Sdd,
            frame_rate: s.recording.frame_rate,
            map: png.into(),
            legend: legend.into(),
            encoding: dataio::MapEncoding::Planes,
            resolution: None,
        });
    }
    let out = CliConfig {
        run: cfg.run.clone(),
        data: DataConfig {
            synthetic: None,
            scenes: sources,
            ..cfg.data.clone()
        },
    };
    let path = dir.join("data.toml");
    write_text(&path, &out.to_toml()?)?;
    println!("{}", path.display());
    Ok(())
}

fn cmd_plot(tables: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let dir = out.unwrap_or(Path::new("."));
    for t in tables {
        println!("{}", plot_file(t, dir)?.display());
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Train { common } => cmd_train(common),
        Command::Eval {
            common,
            checkpoint,
            split,
            k,
        } => cmd_eval(common, checkpoint, *split, *k),
        Command::Ablate {
            common,
            toggles,
            split,
            k,
        } => cmd_ablate(common, toggles, *split, *k),
        Command::SweepHorizon {
            common,
            checkpoint,
            horizons,
            split,
            k,
        } => cmd_sweep_horizon(common, checkpoint, horizons, *split, *k),
        Command::SweepTeacher {
            common,
            lengths,
            split,
            k,
        } => cmd_sweep_teacher(common, lengths, *split, *k),
        Command::Synth { common } => cmd_synth(common),
        Command::Plot { tables, out } => cmd_plot(tables, out.as_deref()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toggle_matrix_forms() {
        assert_eq!(parse_toggle_matrix("grid").unwrap().len(), 9);
        assert!(parse_toggle_matrix("").unwrap().is_empty());
        let rows = parse_toggle_matrix("none; map,waypoint ;waypoint,map").unwrap();
        assert_eq!(
            rows,
            vec![
                Ablation::none(),
                Ablation::from_toggles(&["map", "waypoint"]).unwrap()
            ]
        );
        assert!(matches!(
            parse_toggle_matrix("map,wings"),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn teacher_lengths_filtered() {
        let kept = usable_teacher_lengths(&[5, 10, 15, 20, 25, 30, 35, 3, 20], 5, 30);
        assert_eq!(kept, vec![5, 10, 15, 20, 25, 30]);
    }

    #[test]
    fn exit_codes_by_error_class() {
        assert_eq!(exit_code(&Error::invalid("x")), 2);
        assert_eq!(exit_code(&Error::EmptySplit), 3);
        let nf = Error::NonFinite {
            component: "total",
            context: String::new(),
        };
        assert_eq!(exit_code(&nf), 4);
    }
}
