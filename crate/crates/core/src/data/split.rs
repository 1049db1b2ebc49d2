use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Dataset, SplitTag};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitSpec {
    /// 80/10/10.
    pub const STANDARD: SplitSpec = SplitSpec {
        train: 0.8,
        val: 0.1,
        test: 0.1,
    };
    /// 90/5/5, used after undersampling and offline augmentation.
    pub const AUGMENTED: SplitSpec = SplitSpec {
        train: 0.9,
        val: 0.05,
        test: 0.05,
    };

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::invalid(format!("split ratios must be non-negative: {parts:?}")));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("split ratios must sum to 1: {parts:?}")));
        }
        if self.train == 0.0 {
            return Err(Error::invalid("training share must be positive"));
        }
        Ok(())
    }

    /// Per-part sizes for `n` samples: every share is rounded down, and
    /// the (at most two) samples left over stay unassigned.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let part = |r: f64| (n as f64 * r + 1e-9).floor() as usize;
        (part(self.train), part(self.val), part(self.test))
    }
}

/// Seeded shuffle, then consecutive runs for train, val and test.
pub fn split(ds: &Dataset, spec: SplitSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let (n_train, n_val, n_test) = spec.counts(ds.len());
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = ds.clone();
    for r in out.records_mut() {
        r.split = None;
    }
    for (pos, &i) in order.iter().enumerate() {
        let tag = if pos < n_train {
            SplitTag::Train
        } else if pos < n_train + n_val {
            SplitTag::Val
        } else if pos < n_train + n_val + n_test {
            SplitTag::Test
        } else {
            continue;
        };
        out.records_mut()[i].split = Some(tag);
    }
    Ok(out)
}
