//! Experiment configuration: a `key = value` text format with `#`
//! comments. Keys are applied in file order, so a `preset` line sets a
//! group of defaults that later lines may override.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::arch::{ArchConfig, ModelKind, Variant};
use crate::contour::PX_TO_MM_TABLE;
use crate::data::{AugmentConfig, SplitSpec, SynthStyle};
use crate::error::{Error, Result};

/// Learning rates of the fixed-LR tuning grid.
pub const LR_GRID: [f64; 7] = [0.005, 0.0001, 0.0003, 0.0005, 0.0007, 0.0009, 0.00001];

pub const DEFAULT_LR: f64 = 0.0005;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Augmentation {
    /// Fresh random transform for every draw.
    Online,
    /// One augmented copy per training draw, fixed before training.
    Offline,
    None,
}

impl FromStr for Augmentation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "online" => Ok(Augmentation::Online),
            "offline" => Ok(Augmentation::Offline),
            "none" | "off" => Ok(Augmentation::None),
            _ => Err(format!("unknown augmentation `{s}` (online, offline, none)")),
        }
    }
}

impl fmt::Display for Augmentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Augmentation::Online => "online",
            Augmentation::Offline => "offline",
            Augmentation::None => "none",
        })
    }
}

/// Named epoch/iteration profiles.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// 60 epochs of 3000 iterations, batch 10.
    Long,
    /// 50 epochs of 60 iterations, batch 10 (30000 augmented draws).
    Augmented,
    /// 10 epochs, one pass over the training split per epoch.
    Desk,
}

impl Preset {
    pub fn apply(self, cfg: &mut ExperimentConfig) {
        let (epochs, iterations) = match self {
            Preset::Long => (60, 3000),
            Preset::Augmented => (50, 60),
            Preset::Desk => (10, 0),
        };
        cfg.epochs = epochs;
        cfg.iterations_per_epoch = iterations;
        cfg.batch_size = 10;
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "long" => Ok(Preset::Long),
            "augmented" => Ok(Preset::Augmented),
            "desk" => Ok(Preset::Desk),
            _ => Err(format!("unknown preset `{s}` (long, augmented, desk)")),
        }
    }
}

/// Where training data comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    /// Seeded synthetic frames, split 80/10/10.
    Synthetic { count: usize, style: SynthStyle },
    /// One directory; its manifest's split tags are used when present,
    /// otherwise it is split 80/10/10.
    Directory(PathBuf),
    /// Separate training and validation directories.
    Separate { train: PathBuf, val: PathBuf },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub arch: ArchConfig,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// 0 means one pass over the training split per epoch.
    pub iterations_per_epoch: usize,
    pub augmentation: Augmentation,
    pub augment: AugmentConfig,
    pub data: DataSource,
    pub split: SplitSpec,
    pub test_sets: Vec<PathBuf>,
    /// Seeds initialisation, batch order, augmentation and dropout.
    pub seed: u64,
    /// Seeds synthetic generation and the train/val/test split, so repeated
    /// runs see the same data.
    pub data_seed: u64,
    pub repeats: usize,
    pub px_to_mm: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut cfg = Self {
            model: ModelKind::WBowNet,
            arch: ArchConfig::default(),
            learning_rate: DEFAULT_LR,
            batch_size: 10,
            epochs: 10,
            iterations_per_epoch: 0,
            augmentation: Augmentation::Online,
            augment: AugmentConfig::default(),
            data: DataSource::Synthetic {
                count: 200,
                style: SynthStyle::default(),
            },
            split: SplitSpec::STANDARD,
            test_sets: Vec::new(),
            seed: 0,
            data_seed: 0,
            repeats: 10,
            px_to_mm: PX_TO_MM_TABLE,
        };
        Preset::Desk.apply(&mut cfg);
        cfg
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e| format!("bad value `{value}` for `{key}`: {e}"))
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::invalid(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if self.repeats == 0 {
            return fail("repeats must be at least 1");
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1");
        }
        if !(0.0..1.0).contains(&self.arch.dropout) {
            return fail("dropout must be in [0, 1)");
        }
        if !(self.px_to_mm > 0.0) {
            return fail("px_to_mm must be positive");
        }
        let (lo, hi) = self.augment.zoom_range;
        if !(lo > 0.0 && hi >= lo) {
            return fail("zoom range must be positive and ordered");
        }
        self.split.validate()
    }

    /// Applies one `key = value` setting. Relative paths are resolved
    /// against `base`.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<(), String> {
        let path = |v: &str| base.join(v);
        match key {
            "model" => self.model = parse_value(key, value)?,
            "filter_base" => self.arch.filter_base = Some(parse_value(key, value)?),
            "kernel_size" => self.arch.kernel_size = parse_value(key, value)?,
            "variant" => self.arch.variant = value.parse::<Variant>().map_err(|e| e.to_string())?,
            "dropout" => self.arch.dropout = parse_value(key, value)?,
            "learning_rate" | "lr" => self.learning_rate = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "iterations_per_epoch" | "iterations" => self.iterations_per_epoch = parse_value(key, value)?,
            "augmentation" => self.augmentation = parse_value(key, value)?,
            "flip_probability" => self.augment.flip_probability = parse_value(key, value)?,
            "max_rotation" => self.augment.max_rotation_deg = parse_value(key, value)?,
            "zoom_min" => self.augment.zoom_range.0 = parse_value(key, value)?,
            "zoom_max" => self.augment.zoom_range.1 = parse_value(key, value)?,
            "preset" => parse_value::<Preset>(key, value)?.apply(self),
            "synthetic" => {
                let count = parse_value(key, value)?;
                let style = match &self.data {
                    DataSource::Synthetic { style, .. } => *style,
                    _ => SynthStyle::default(),
                };
                self.data = DataSource::Synthetic { count, style };
            }
            "synth_style" => {
                let style = match value {
                    "default" => SynthStyle::default(),
                    "shifted" => SynthStyle::shifted(),
                    _ => return Err(format!("unknown synth_style `{value}` (default, shifted)")),
                };
                let count = match &self.data {
                    DataSource::Synthetic { count, .. } => *count,
                    _ => 200,
                };
                self.data = DataSource::Synthetic { count, style };
            }
            "data" => self.data = DataSource::Directory(path(value)),
            "train" | "val" => {
                let (mut train, mut val) = match &self.data {
                    DataSource::Separate { train, val } => (train.clone(), val.clone()),
                    _ => (PathBuf::new(), PathBuf::new()),
                };
                if key == "train" {
                    train = path(value);
                } else {
                    val = path(value);
                }
                self.data = DataSource::Separate { train, val };
            }
            "test" => self.test_sets.extend(value.split(',').map(|v| path(v.trim()))),
            "split" => {
                let parts: Vec<f64> = value
                    .split('/')
                    .map(|p| p.trim().parse::<f64>().map(|v| v / 100.0))
                    .collect::<Result<_, _>>()
                    .map_err(|_| format!("split must look like 80/10/10, got `{value}`"))?;
                let [train, val, test] = parts[..] else {
                    return Err(format!("split must have three parts, got `{value}`"));
                };
                self.split = SplitSpec { train, val, test };
            }
            "seed" => self.seed = parse_value(key, value)?,
            "data_seed" => self.data_seed = parse_value(key, value)?,
            "repeats" => self.repeats = parse_value(key, value)?,
            "px_to_mm" => self.px_to_mm = parse_value(key, value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Config { line: i + 1, message };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            cfg.set(key.trim(), value.trim(), base).map_err(err)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Architecture with the model's default filter base filled in.
    pub fn arch_config(&self) -> ArchConfig {
        let mut a = self.arch.clone();
        a.filter_base.get_or_insert(self.model.default_filter_base());
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_desk_profile() {
        let c = ExperimentConfig::default();
        assert_eq!((c.epochs, c.iterations_per_epoch, c.batch_size), (10, 0, 10));
        assert_eq!(c.learning_rate, 0.0005);
        assert_eq!(c.repeats, 10);
        assert_eq!(c.arch.dropout, 0.0);
    }

    #[test]
    fn parses_keys_comments_and_presets() {
        let text = "# comment\nmodel = BowNet\npreset = long\nepochs = 3   # trailing\nlr=0.001\ntest = a, b\nsplit = 90/5/5\n";
        let c = ExperimentConfig::parse(text, Path::new("/data")).unwrap();
        assert_eq!(c.model, ModelKind::BowNet);
        assert_eq!((c.epochs, c.iterations_per_epoch), (3, 3000));
        assert_eq!(c.learning_rate, 0.001);
        assert_eq!(c.test_sets, vec![PathBuf::from("/data/a"), PathBuf::from("/data/b")]);
        assert_eq!(c.split, SplitSpec::AUGMENTED);
        assert_eq!(c.arch_config().filter_base, Some(16));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = ExperimentConfig::parse("model = bownet\n\nbatch_size = ten\n", Path::new(".")).unwrap_err();
        assert!(matches!(err, Error::Config { line: 3, .. }), "{err}");
        assert!(matches!(
            ExperimentConfig::parse("colour = red", Path::new(".")),
            Err(Error::Config { line: 1, .. })
        ));
        assert!(ExperimentConfig::parse("lr = 0", Path::new(".")).is_err());
        assert!(ExperimentConfig::parse("repeats = 0", Path::new(".")).is_err());
        assert!(ExperimentConfig::parse("batch_size = 0", Path::new(".")).is_err());
    }

    #[test]
    fn both_epoch_profiles_exist() {
        let mut c = ExperimentConfig::default();
        Preset::Long.apply(&mut c);
        assert_eq!((c.epochs, c.iterations_per_epoch * c.batch_size), (60, 30000));
        Preset::Augmented.apply(&mut c);
        assert_eq!(c.epochs * c.iterations_per_epoch * c.batch_size, 30000);
    }
}
