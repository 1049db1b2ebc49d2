//! Repeated runs and learning-rate sweeps.

use std::fmt::Write as _;

use super::config::ExperimentConfig;
use super::train::{train, CurveSummary, RunRecord, TrainingData};
use crate::error::{Error, Result};

/// Mean and sample standard deviation (n - 1 denominator).
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    match values.len() {
        0 => None,
        1 => Some((values[0], 0.0)),
        n => {
            let mean = values.iter().sum::<f64>() / n as f64;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            Some((mean, var.sqrt()))
        }
    }
}

/// Seeds of the repeats of one experiment: `seed, seed + 1, ...`.
pub fn derive_seeds(seed: u64, repeats: usize) -> Vec<u64> {
    (0..repeats as u64).map(|i| seed.wrapping_add(i)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Last,
    Best,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Quantity {
    TrainLoss,
    ValLoss,
    TrainDice,
    ValDice,
}

impl Quantity {
    pub const ALL: [Quantity; 4] = [Quantity::TrainLoss, Quantity::ValLoss, Quantity::TrainDice, Quantity::ValDice];

    pub fn label(self) -> &'static str {
        match self {
            Quantity::TrainLoss => "Train loss",
            Quantity::ValLoss => "Validation loss",
            Quantity::TrainDice => "Train Dice",
            Quantity::ValDice => "Validation Dice",
        }
    }

    fn of(self, s: &CurveSummary) -> f64 {
        match self {
            Quantity::TrainLoss => s.train_loss,
            Quantity::ValLoss => s.val_loss,
            Quantity::TrainDice => s.train_dice,
            Quantity::ValDice => s.val_dice,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RepeatRow {
    pub quantity: Quantity,
    pub phase: Phase,
    /// `None` when every run diverged.
    pub mean_std: Option<(f64, f64)>,
}

/// Last and best values of every quantity over repeated runs.
#[derive(Clone, Debug, PartialEq)]
pub struct RepeatTable {
    pub rows: Vec<RepeatRow>,
    pub runs: Vec<RunRecord>,
    pub seeds: Vec<u64>,
}

impl RepeatTable {
    pub fn from_runs(runs: Vec<RunRecord>, seeds: Vec<u64>) -> Self {
        let mut rows = Vec::with_capacity(8);
        for phase in [Phase::Last, Phase::Best] {
            for q in Quantity::ALL {
                let values: Vec<f64> = runs
                    .iter()
                    .filter_map(|r| match phase {
                        Phase::Last => r.last(),
                        Phase::Best => r.best(),
                    })
                    .map(|s| q.of(&s))
                    .collect();
                rows.push(RepeatRow {
                    quantity: q,
                    phase,
                    mean_std: mean_std(&values),
                });
            }
        }
        Self { rows, runs, seeds }
    }

    pub fn diverged(&self) -> usize {
        self.runs.iter().filter(|r| r.diverged()).count()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("quantity,phase,mean,std\n");
        for r in &self.rows {
            let phase = match r.phase {
                Phase::Last => "Last",
                Phase::Best => "Best",
            };
            let (m, d) = r
                .mean_std
                .map_or(("N/A".into(), "N/A".into()), |(m, d)| (format!("{m:.6}"), format!("{d:.6}")));
            writeln!(s, "{},{phase},{m},{d}", r.quantity.label()).unwrap();
        }
        s
    }
}

/// Trains once per seed on the same data.
pub fn run_repeats_with_seeds(cfg: &ExperimentConfig, data: &TrainingData, seeds: &[u64]) -> Result<RepeatTable> {
    if seeds.len() < 2 {
        return Err(Error::invalid("repeated runs need at least two repeats"));
    }
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut c = cfg.clone();
        c.seed = seed;
        runs.push(train(&c, data, None)?.record);
    }
    Ok(RepeatTable::from_runs(runs, seeds.to_vec()))
}

/// `cfg.repeats` runs with seeds derived from `cfg.seed`.
pub fn run_repeats(cfg: &ExperimentConfig, data: &TrainingData) -> Result<RepeatTable> {
    run_repeats_with_seeds(cfg, data, &derive_seeds(cfg.seed, cfg.repeats))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub learning_rate: f64,
    /// Best training and validation loss; `None` for diverged runs.
    pub best_train_loss: Option<f64>,
    pub best_val_loss: Option<f64>,
}

/// One run per learning rate, same seed for all.
pub fn lr_sweep(cfg: &ExperimentConfig, data: &TrainingData, rates: &[f64]) -> Result<Vec<SweepRow>> {
    if rates.is_empty() {
        return Err(Error::Empty("learning-rate list"));
    }
    rates
        .iter()
        .map(|&lr| {
            let mut c = cfg.clone();
            c.learning_rate = lr;
            let best = train(&c, data, None)?.record.best();
            Ok(SweepRow {
                learning_rate: lr,
                best_train_loss: best.map(|b| b.train_loss),
                best_val_loss: best.map(|b| b.val_loss),
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let cell = |v: Option<f64>| v.map_or("N/A".to_string(), |x| format!("{x:.6}"));
    let mut s = String::from("lr,btl,bvl\n");
    for r in rows {
        writeln!(s, "{},{},{}", r.learning_rate, cell(r.best_train_loss), cell(r.best_val_loss)).unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_checked_mean_and_std() {
        let (m, s) = mean_std(&[0.02, 0.04]).unwrap();
        assert!((m - 0.03).abs() < 1e-15);
        // sqrt(((0.01)^2 + (0.01)^2) / 1)
        assert!((s - 0.0002f64.sqrt()).abs() < 1e-15);
        assert!((s - 0.01414).abs() < 1e-5);
        assert_eq!(mean_std(&[5.0, 5.0, 5.0]), Some((5.0, 0.0)));
        assert_eq!(mean_std(&[]), None);
    }

    #[test]
    fn derived_seeds_are_distinct() {
        let s = derive_seeds(u64::MAX, 3);
        assert_eq!(s, vec![u64::MAX, 0, 1]);
    }

    #[test]
    fn sweep_csv_marks_divergence() {
        let rows = [
            SweepRow {
                learning_rate: 0.005,
                best_train_loss: None,
                best_val_loss: None,
            },
            SweepRow {
                learning_rate: 0.0005,
                best_train_loss: Some(0.02),
                best_val_loss: Some(0.021),
            },
        ];
        assert_eq!(sweep_csv(&rows), "lr,btl,bvl\n0.005,N/A,N/A\n0.0005,0.020000,0.021000\n");
    }
}
