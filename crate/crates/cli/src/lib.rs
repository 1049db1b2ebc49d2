//! Command-line surface of the toolkit: experiment verbs plus the
//! annotation server.

pub mod annotate;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use dilseg::contour::{metrics_csv, summarize};
use dilseg::data::{generate_synthetic, load_pairs, split, write_pairs, SplitSpec, SynthStyle};
use dilseg::harness::{
    bench_models, bench_table, collect_report, cross_test, evaluate_samples, load_checkpoints, lr_sweep,
    prepare_data, run_repeats, run_training, sweep_csv, BenchOptions, ExperimentConfig, LR_GRID,
};
use dilseg::ModelKind;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Parser)]
#[command(name = "dilseg", version, about = "Tongue-contour segmentation experiments")]
pub struct Cli {
    /// Experiment configuration (`key = value` lines, `#` comments).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the run seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "runs")]
    pub out: PathBuf,
    /// Extra `key=value` settings applied after the config file.
    #[arg(long = "set", short = 's', global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train once; writes train_log.csv and best.ckpt.
    Train(TrainArgs),
    /// Fixed learning-rate sweep; writes lr_sweep.csv.
    Sweep {
        #[command(flatten)]
        common: TrainArgs,
        /// Comma-separated rates; defaults to the tuning grid.
        #[arg(long, value_delimiter = ',')]
        lrs: Vec<f64>,
    },
    /// Repeated runs with derived seeds; writes repeats.csv.
    Repeats {
        #[command(flatten)]
        common: TrainArgs,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Per-frame metrics of one checkpoint; writes test_metrics.csv.
    Test {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory of image/mask pairs.
        #[arg(long)]
        data: PathBuf,
    },
    /// Every checkpoint on every test set; writes cross_test.csv.
    CrossTest {
        #[arg(long, value_delimiter = ',', required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long = "test-sets", value_delimiter = ',', required = true)]
        test_sets: Vec<PathBuf>,
    },
    /// Parameters, memory and inference frame rate; writes bench.csv.
    Bench {
        #[arg(long, value_delimiter = ',')]
        models: Vec<ModelKind>,
        #[arg(long)]
        filter_base: Option<usize>,
        #[arg(long, default_value_t = 1)]
        batch_size: usize,
        #[arg(long, default_value_t = 10)]
        timed: usize,
    },
    /// Writes a seeded synthetic dataset with an 80/10/10 manifest.
    Synth {
        #[arg(long, default_value_t = 200)]
        count: usize,
        /// `default` or `shifted` speckle statistics.
        #[arg(long, default_value = "default")]
        style: String,
    },
    /// Concatenates every CSV under a directory.
    Report {
        /// Defaults to `--out`.
        dir: Option<PathBuf>,
    },
    /// Serves the annotation API (and UI bundle) over a data directory.
    Annotate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = annotate::DEFAULT_PORT)]
        port: u16,
        /// Directory holding the built UI bundle.
        #[arg(long)]
        ui: Option<PathBuf>,
        /// Polyline samples per fitted contour.
        #[arg(long, default_value_t = annotate::DEFAULT_SAMPLES)]
        samples: usize,
    },
}

/// Shortcuts for the most common config keys.
#[derive(Debug, Default, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub augmentation: Option<String>,
    #[arg(long)]
    pub filter_base: Option<usize>,
    /// Directory of image/mask pairs instead of synthetic data.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

/// Config file, then `--set` overrides, then command shortcuts, then
/// `--seed`.
pub fn resolve_config(cli: &Cli, args: Option<&TrainArgs>) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let cwd = Path::new(".");
    let mut apply = |key: &str, value: &str| cfg.set(key, value, cwd).map_err(anyhow::Error::msg);
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
        apply(k.trim(), v.trim())?;
    }
    if let Some(a) = args {
        if let Some(m) = a.model {
            apply("model", m.name())?;
        }
        if let Some(lr) = a.lr {
            apply("learning_rate", &lr.to_string())?;
        }
        if let Some(e) = a.epochs {
            apply("epochs", &e.to_string())?;
        }
        if let Some(aug) = &a.augmentation {
            apply("augmentation", aug)?;
        }
        if let Some(b) = a.filter_base {
            apply("filter_base", &b.to_string())?;
        }
        if let Some(d) = &a.data {
            apply("data", &d.to_string_lossy())?;
        }
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_out(dir: &Path, name: &str, text: &str) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    log::info!("wrote {}", path.display());
    Ok(path)
}

fn named_sets(dirs: &[PathBuf]) -> anyhow::Result<Vec<(String, Vec<dilseg::data::Sample>)>> {
    dirs.iter()
        .map(|d| {
            let name = d.file_name().map_or_else(|| d.display().to_string(), |n| n.to_string_lossy().into_owned());
            Ok((name, load_pairs(d)?.samples().cloned().collect()))
        })
        .collect()
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let out = cli.out.clone();
    match &cli.command {
        Command::Train(args) => {
            let cfg = resolve_config(&cli, Some(args))?;
            std::fs::create_dir_all(&out)?;
            let run = run_training(&cfg, Some(&out))?;
            let r = &run.record;
            match r.best() {
                Some(b) => println!(
                    "{}: best epoch {} val_loss {:.6} val_dice {:.6} ({:.1}s)",
                    cfg.model,
                    r.best_epoch.unwrap_or(0),
                    b.val_loss,
                    b.val_dice,
                    r.wall_time.as_secs_f64()
                ),
                None => println!("{}: diverged (N/A)", cfg.model),
            }
        }
        Command::Sweep { common, lrs } => {
            let cfg = resolve_config(&cli, Some(common))?;
            let rates = if lrs.is_empty() { LR_GRID.to_vec() } else { lrs.clone() };
            let data = prepare_data(&cfg)?;
            let rows = lr_sweep(&cfg, &data, &rates)?;
            let csv = sweep_csv(&rows);
            write_out(&out, "lr_sweep.csv", &csv)?;
            print!("{csv}");
        }
        Command::Repeats { common, repeats } => {
            let mut cfg = resolve_config(&cli, Some(common))?;
            if let Some(n) = repeats {
                cfg.repeats = *n;
            }
            if cfg.repeats < 2 {
                bail!("repeats must be at least 2");
            }
            let data = prepare_data(&cfg)?;
            let table = run_repeats(&cfg, &data)?;
            let csv = table.to_csv();
            write_out(&out, "repeats.csv", &csv)?;
            print!("{csv}");
            if table.diverged() > 0 {
                println!("{} of {} runs diverged", table.diverged(), table.runs.len());
            }
        }
        Command::Test { checkpoint, data } => {
            let cfg = resolve_config(&cli, None)?;
            let mut nets = load_checkpoints(&[checkpoint], None)?;
            let samples: Vec<_> = load_pairs(data)?.samples().cloned().collect();
            let rows = evaluate_samples(&mut nets[0].1, &samples, cfg.px_to_mm, cfg.batch_size)?;
            write_out(&out, "test_metrics.csv", &metrics_csv(rows.iter().map(|(id, r)| (id.as_str(), r))))?;
            let reports: Vec<_> = rows.into_iter().map(|(_, r)| r).collect();
            let s = summarize(&reports)?;
            println!(
                "{} frames: bce {:.6} dice {:.6} msd_px {} missing contours {}",
                s.count,
                s.bce,
                s.dice,
                s.msd_px.map_or("NA".into(), |v| format!("{v:.4}")),
                s.missing_contours
            );
        }
        Command::CrossTest { checkpoints, test_sets } => {
            let cfg = resolve_config(&cli, None)?;
            let mut nets = load_checkpoints(checkpoints, None)?;
            let sets = named_sets(test_sets)?;
            let m = cross_test(&mut nets, &sets, cfg.px_to_mm, cfg.batch_size)?;
            let csv = m.to_csv();
            write_out(&out, "cross_test.csv", &csv)?;
            print!("{csv}");
        }
        Command::Bench {
            models,
            filter_base,
            batch_size,
            timed,
        } => {
            let models = if models.is_empty() { ModelKind::ALL.to_vec() } else { models.clone() };
            let opts = BenchOptions {
                batch_size: *batch_size,
                timed: *timed,
                ..BenchOptions::default()
            };
            let csv = bench_table(&bench_models(&models, *filter_base, opts)?);
            write_out(&out, "bench.csv", &csv)?;
            print!("{csv}");
        }
        Command::Synth { count, style } => {
            let cfg = resolve_config(&cli, None)?;
            let style = match style.as_str() {
                "default" => SynthStyle::default(),
                "shifted" => SynthStyle::shifted(),
                s => bail!("unknown style `{s}` (default, shifted)"),
            };
            let ds = generate_synthetic(*count, &style, &mut ChaCha8Rng::seed_from_u64(cfg.data_seed));
            let ds = split(&ds, SplitSpec::STANDARD, cfg.data_seed)?;
            write_pairs(&ds, &out)?;
            println!("wrote {} frames to {}", ds.len(), out.display());
        }
        Command::Report { dir } => {
            let dir = dir.as_deref().unwrap_or(&out);
            print!("{}", collect_report(dir)?);
        }
        Command::Annotate {
            data,
            port,
            ui,
            samples,
        } => {
            if !data.is_dir() {
                bail!("{} is not a directory", data.display());
            }
            let state = annotate::AppState::new(data.clone(), *samples, ui.clone());
            tokio::runtime::Runtime::new()?.block_on(annotate::serve(state, *port))?;
        }
    }
    Ok(())
}
