use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Augmentation, DataSource, ExperimentConfig};
use crate::arch::{save_checkpoint, NetGraph, Network};
use crate::contour::{self, BCE_EPS};
use crate::data::{self, generate_synthetic, load_pairs, Sample, SplitTag, FRAME_EXTENT};
use crate::error::{Error, Result};
use crate::raster::Plane;
use crate::tensor::{kernels, Adam, AdamConfig, Tape, Tensor};

/// Unclipped loss above which an iteration counts as divergent.
pub const DIVERGENCE_LOSS: f64 = 1e4;
/// Output logit magnitude above which an iteration counts as divergent.
/// The sigmoid is flat to f32 precision long before this, so such a net
/// has stopped learning; the clipped loss alone stays bounded by -ln(eps).
pub const DIVERGENCE_LOGIT: f32 = 1e4;
/// Consecutive divergent iterations that stop a run.
pub const DIVERGENCE_PATIENCE: usize = 3;

pub const LOG_HEADER: &str = "epoch,train_loss,val_loss,train_dice,val_dice";

/// Training, validation and test samples of one experiment.
#[derive(Clone, Debug, Default)]
pub struct TrainingData {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl TrainingData {
    pub fn from_dataset(ds: &data::Dataset) -> Self {
        let take = |t| ds.split_samples(t).into_iter().cloned().collect();
        Self {
            train: take(SplitTag::Train),
            val: take(SplitTag::Val),
            test: take(SplitTag::Test),
        }
    }
}

/// Resolves the configured data source into splits.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<TrainingData> {
    let td = match &cfg.data {
        DataSource::Synthetic { count, style } => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.data_seed);
            let ds = generate_synthetic(*count, style, &mut rng);
            TrainingData::from_dataset(&data::split(&ds, cfg.split, cfg.data_seed)?)
        }
        DataSource::Directory(dir) => {
            let ds = load_pairs(dir)?;
            let ds = if ds.records().iter().any(|r| r.split.is_some()) {
                ds
            } else {
                data::split(&ds, cfg.split, cfg.data_seed)?
            };
            TrainingData::from_dataset(&ds)
        }
        DataSource::Separate { train, val } => TrainingData {
            train: load_pairs(train)?.samples().cloned().collect(),
            val: load_pairs(val)?.samples().cloned().collect(),
            test: Vec::new(),
        },
    };
    if td.train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    if td.val.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    Ok(td)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_dice: f64,
    pub val_dice: f64,
}

/// Loss and Dice on both splits, either best-of-run or last-epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurveSummary {
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_dice: f64,
    pub val_dice: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunStatus {
    Completed,
    /// Stopped by the divergence sentinel; reported as `N/A`.
    Diverged { epoch: usize, iteration: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub epochs: Vec<EpochStats>,
    pub status: RunStatus,
    /// Epoch (1-based) whose parameters were kept as the best checkpoint.
    pub best_epoch: Option<usize>,
    pub wall_time: Duration,
    pub checkpoint: Option<PathBuf>,
}

impl RunRecord {
    pub fn diverged(&self) -> bool {
        matches!(self.status, RunStatus::Diverged { .. })
    }

    /// Minimum losses and maximum Dice over epochs.
    pub fn best(&self) -> Option<CurveSummary> {
        if self.diverged() || self.epochs.is_empty() {
            return None;
        }
        let min = |f: fn(&EpochStats) -> f64| self.epochs.iter().map(f).fold(f64::INFINITY, f64::min);
        let max = |f: fn(&EpochStats) -> f64| self.epochs.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        Some(CurveSummary {
            train_loss: min(|e| e.train_loss),
            val_loss: min(|e| e.val_loss),
            train_dice: max(|e| e.train_dice),
            val_dice: max(|e| e.val_dice),
        })
    }

    /// Values of the final epoch.
    pub fn last(&self) -> Option<CurveSummary> {
        if self.diverged() {
            return None;
        }
        self.epochs.last().map(|e| CurveSummary {
            train_loss: e.train_loss,
            val_loss: e.val_loss,
            train_dice: e.train_dice,
            val_dice: e.val_dice,
        })
    }

    /// Per-epoch CSV log. A diverged run ends with an `N/A` row.
    pub fn log(&self) -> String {
        let mut out = format!("{LOG_HEADER}\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6}\n",
                e.epoch, e.train_loss, e.val_loss, e.train_dice, e.val_dice
            ));
        }
        if let RunStatus::Diverged { epoch, .. } = self.status {
            out.push_str(&format!("{epoch},N/A,N/A,N/A,N/A\n"));
        }
        out
    }
}

/// Result of [`train`]: the record plus the networks it produced.
#[derive(Clone, Debug)]
pub struct TrainedRun {
    pub record: RunRecord,
    /// Parameters at the epoch with the lowest validation loss.
    pub best: Option<Network<f32>>,
    pub last: Network<f32>,
}

/// `N x 1 x E x E` batch of images.
pub fn image_batch(samples: &[&Sample]) -> Result<Tensor<f32>> {
    let e = samples.first().map_or(FRAME_EXTENT, |s| s.image.width());
    let mut data = Vec::with_capacity(samples.len() * e * e);
    for s in samples {
        if s.image.width() != e || s.image.height() != e {
            return Err(Error::shape(format!("sample `{}` is not {e}x{e}", s.id)));
        }
        data.extend_from_slice(s.image.data());
    }
    Tensor::new(&[samples.len(), 1, e, e], data)
}

/// Masks centre-cropped to the network's output window.
pub fn target_batch(samples: &[&Sample], extent: usize) -> Result<Tensor<f32>> {
    let mut data = Vec::with_capacity(samples.len() * extent * extent);
    for s in samples {
        data.extend(s.mask.center_crop(extent, extent)?.data().iter().map(|&v| f32::from(u8::from(v))));
    }
    Tensor::new(&[samples.len(), 1, extent, extent], data)
}

/// Mean logistic loss computed from logits without clipping.
fn raw_bce(logits: &[f32], y: &[f32]) -> f64 {
    let s: f64 = logits
        .iter()
        .zip(y)
        .map(|(&z, &t)| {
            let (z, t) = (z as f64, t as f64);
            z.max(0.0) - z * t + (-z.abs()).exp().ln_1p()
        })
        .sum();
    s / logits.len() as f64
}

/// Inference-mode predictions, one plane per sample.
pub fn predict_planes(net: &mut Network<f32>, samples: &[&Sample], batch_size: usize) -> Result<Vec<Plane<f32>>> {
    let e = net.output_extent();
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let pred = net.predict(image_batch(chunk)?)?;
        for plane in pred.data().chunks_exact(e * e) {
            out.push(Plane::new(e, e, plane.to_vec())?);
        }
    }
    Ok(out)
}

/// Mean per-sample BCE and Dice of `net` on `samples`.
pub fn score(net: &mut Network<f32>, samples: &[&Sample], batch_size: usize) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation samples"));
    }
    let e = net.output_extent();
    let preds = predict_planes(net, samples, batch_size)?;
    let (mut loss, mut dice) = (0.0, 0.0);
    for (p, s) in preds.iter().zip(samples) {
        let truth = s.mask.center_crop(e, e)?;
        loss += contour::bce(p, &truth);
        dice += contour::dice(p, &truth);
    }
    let n = samples.len() as f64;
    Ok((loss / n, dice / n))
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Endless reshuffled passes over `0..n`.
struct Sampler {
    order: Vec<usize>,
    pos: usize,
}

impl Sampler {
    fn new(n: usize) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
        }
    }

    fn next<R: Rng>(&mut self, rng: &mut R) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

/// Trains one network. With `out_dir`, the best checkpoint (`best.ckpt`)
/// and the epoch log (`train_log.csv`) are written there.
pub fn train(cfg: &ExperimentConfig, data: &TrainingData, out_dir: Option<&Path>) -> Result<TrainedRun> {
    cfg.validate()?;
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::Empty("training or validation split"));
    }
    let start = Instant::now();
    let graph = NetGraph::build(cfg.model, cfg.arch_config())?;
    let mut net = Network::<f32>::new(graph, cfg.seed);
    let extent = net.output_extent();
    let mut adam = Adam::new(
        AdamConfig::with_lr(cfg.learning_rate),
        net.params().iter().map(|p| p.data.len()),
    );
    let mut batch_rng = stream(cfg.seed, 1);
    let mut dropout_rng = stream(cfg.seed, 2);
    let mut aug_rng = stream(cfg.seed, 3);

    let iterations = match cfg.iterations_per_epoch {
        0 => data.train.len().div_ceil(cfg.batch_size),
        n => n,
    };
    let pool: Vec<Sample> = match cfg.augmentation {
        Augmentation::Offline => (0..iterations * cfg.batch_size)
            .map(|i| data::augment_online(&data.train[i % data.train.len()], &cfg.augment, &mut aug_rng))
            .collect(),
        _ => data.train.clone(),
    };
    let mut sampler = Sampler::new(pool.len());
    let val: Vec<&Sample> = data.val.iter().collect();

    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Network<f32>)> = None;
    let mut status = RunStatus::Completed;
    let mut strikes = 0;

    'epochs: for epoch in 1..=cfg.epochs {
        let (mut loss_sum, mut dice_sum) = (0.0, 0.0);
        for it in 1..=iterations {
            let batch: Vec<Sample> = (0..cfg.batch_size)
                .map(|_| {
                    let s = &pool[sampler.next(&mut batch_rng)];
                    match cfg.augmentation {
                        Augmentation::Online => data::augment_online(s, &cfg.augment, &mut aug_rng),
                        _ => s.clone(),
                    }
                })
                .collect();
            let refs: Vec<&Sample> = batch.iter().collect();
            let mut tape = Tape::new();
            let x = tape.leaf(image_batch(&refs)?);
            let y = tape.leaf(target_batch(&refs, extent)?);
            let fp = net.forward(&mut tape, x, true, &mut dropout_rng)?;
            let loss = tape.bce_loss(fp.output, y, BCE_EPS as f32)?;
            let clipped = tape.value(loss).data()[0] as f64;
            let logits = tape.value(fp.logits).data();
            let raw = raw_bce(logits, tape.value(y).data());
            let peak = logits.iter().fold(0f32, |a, v| a.max(v.abs()));
            if !clipped.is_finite() || !raw.is_finite() || raw > DIVERGENCE_LOSS || !(peak <= DIVERGENCE_LOGIT) {
                strikes += 1;
                if strikes >= DIVERGENCE_PATIENCE {
                    status = RunStatus::Diverged { epoch, iteration: it };
                    log::warn!("{} diverged at epoch {epoch}, iteration {it} (loss {raw:e})", cfg.model);
                    break 'epochs;
                }
                continue;
            }
            strikes = 0;
            tape.backward(loss)?;
            for (i, handle) in fp.params.iter().enumerate() {
                let Some(v) = *handle else { continue };
                let Some(g) = tape.grad(v) else { continue };
                adam.step(i, &mut net.params_mut()[i].data, g);
            }
            loss_sum += clipped;
            dice_sum += kernels::dice(tape.value(fp.output).data(), tape.value(y).data(), 1.0f32) as f64;
        }
        let (val_loss, val_dice) = score(&mut net, &val, cfg.batch_size)?;
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / iterations as f64,
            val_loss,
            train_dice: dice_sum / iterations as f64,
            val_dice,
        };
        log::info!(
            "{} epoch {epoch}: train loss {:.4} dice {:.4}, val loss {:.4} dice {:.4}",
            cfg.model,
            stats.train_loss,
            stats.train_dice,
            val_loss,
            val_dice
        );
        epochs.push(stats);
        if best.as_ref().is_none_or(|b| val_loss < b.0) {
            best = Some((val_loss, epoch, net.clone()));
        }
    }

    let diverged = matches!(status, RunStatus::Diverged { .. });
    let (best_epoch, best_net) = match best {
        Some((_, e, n)) if !diverged => (Some(e), Some(n)),
        _ => (None, None),
    };
    let mut record = RunRecord {
        epochs,
        status,
        best_epoch,
        wall_time: start.elapsed(),
        checkpoint: None,
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        if let Some(n) = &best_net {
            let path = dir.join("best.ckpt");
            save_checkpoint(n, &path)?;
            record.checkpoint = Some(path);
        }
        let log_path = dir.join("train_log.csv");
        std::fs::write(&log_path, record.log()).map_err(|e| Error::io(&log_path, e))?;
    }
    Ok(TrainedRun {
        record,
        best: best_net,
        last: net,
    })
}

/// Resolves the data source, then trains.
pub fn run_training(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<TrainedRun> {
    let data = prepare_data(cfg)?;
    train(cfg, &data, out_dir)
}
