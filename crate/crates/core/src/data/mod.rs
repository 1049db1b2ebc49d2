//! Datasets of image/mask pairs and everything that reshapes them before
//! training: loading, augmentation, label enhancement, informed
//! undersampling, splitting and a synthetic frame generator.

mod augment;
mod enhance;
mod io;
mod rank;
mod split;
mod synth;

use std::collections::HashSet;
use std::fmt;

pub use augment::{augment_online, augmented_draws, AugmentConfig, Transform};
pub use enhance::{dilate, enhance_mask, erode, gaussian_blur};
pub use io::{load_pairs, load_pairs_with, read_manifest, write_pairs, ManifestEntry, MANIFEST_FILE};
pub use rank::{distance_rank, informed_undersample, mean_image};
pub use split::{split, SplitSpec};
pub use synth::{generate_synthetic, CurveParams, SynthStyle};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, Plane};

/// Side length of every network input frame.
pub const FRAME_EXTENT: usize = 128;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Plane<f32>,
    pub mask: BinaryMask,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: Plane<f32>, mask: BinaryMask) -> Result<Self> {
        if (image.width(), image.height()) != (mask.width(), mask.height()) {
            return Err(Error::shape(format!(
                "image is {}x{} but mask is {}x{}",
                image.height(),
                image.width(),
                mask.height(),
                mask.width()
            )));
        }
        Ok(Self {
            id: id.into(),
            image,
            mask,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Provenance {
    Loaded,
    Synthetic,
    Augmented,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Loaded => "loaded",
            Provenance::Synthetic => "synthetic",
            Provenance::Augmented => "augmented",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A sample plus its bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub sample: Sample,
    /// `None` until [`split`] assigns one, and for the few samples the
    /// per-part floor rounding leaves over.
    pub split: Option<SplitTag>,
    pub provenance: Provenance,
    /// 1-based position in the distance-to-mean ranking, when computed.
    pub rank: Option<usize>,
    /// Generator parameters for synthetic samples.
    pub curve: Option<CurveParams>,
}

/// Ordered samples with unique ids.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    records: Vec<Record>,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_samples(samples: impl IntoIterator<Item = Sample>, provenance: Provenance) -> Result<Self> {
        let mut ds = Self::new();
        for s in samples {
            ds.push(s, provenance)?;
        }
        Ok(ds)
    }

    pub fn from_records(records: Vec<Record>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.sample.id.as_str()) {
                return Err(Error::invalid(format!("duplicate sample id `{}`", r.sample.id)));
            }
        }
        Ok(Self { records })
    }

    pub fn push(&mut self, sample: Sample, provenance: Provenance) -> Result<()> {
        self.push_record(Record {
            sample,
            split: None,
            provenance,
            rank: None,
            curve: None,
        })
    }

    pub fn push_record(&mut self, record: Record) -> Result<()> {
        if self.records.iter().any(|r| r.sample.id == record.sample.id) {
            return Err(Error::invalid(format!("duplicate sample id `{}`", record.sample.id)));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn records_mut(&mut self) -> &mut [Record] {
        &mut self.records
    }

    pub fn into_records(self) -> Vec<Record> {
        self.records
    }

    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        self.records.iter().map(|r| &r.sample)
    }

    pub fn get(&self, id: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.sample.id == id)
    }

    /// Samples carrying `tag`, in dataset order.
    pub fn split_samples(&self, tag: SplitTag) -> Vec<&Sample> {
        self.records
            .iter()
            .filter(|r| r.split == Some(tag))
            .map(|r| &r.sample)
            .collect()
    }

    /// Copy holding only the samples tagged `tag`.
    pub fn subset(&self, tag: SplitTag) -> Dataset {
        Dataset {
            records: self.records.iter().filter(|r| r.split == Some(tag)).cloned().collect(),
        }
    }

    /// Number of samples per tag: `(train, val, test)`.
    pub fn split_counts(&self) -> (usize, usize, usize) {
        let n = |t| self.records.iter().filter(|r| r.split == Some(t)).count();
        (n(SplitTag::Train), n(SplitTag::Val), n(SplitTag::Test))
    }

    /// Every mask is two-valued by type; this checks extents agree.
    pub fn validate(&self, extent: usize) -> Result<()> {
        for r in &self.records {
            let s = &r.sample;
            if s.image.width() != extent || s.image.height() != extent {
                return Err(Error::shape(format!(
                    "sample `{}` is {}x{}, expected {extent}x{extent}",
                    s.id,
                    s.image.height(),
                    s.image.width()
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: &str) -> Sample {
        Sample::new(id, Plane::filled(4, 4, 0.0), Plane::filled(4, 4, false)).unwrap()
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let mut ds = Dataset::new();
        ds.push(sample("a"), Provenance::Loaded).unwrap();
        assert!(ds.push(sample("a"), Provenance::Synthetic).is_err());
        assert_eq!(ds.len(), 1);
    }

    #[test]
    fn sample_extents_must_agree() {
        assert!(Sample::new("x", Plane::filled(4, 4, 0.0), Plane::filled(4, 5, false)).is_err());
    }
}
