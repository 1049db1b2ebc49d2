//! Test-set evaluation and the checkpoint x test-set matrix.

use std::fmt::Write as _;
use std::path::Path;

use super::train::predict_planes;
use crate::arch::{load_checkpoint, ModelKind, Network};
use crate::contour::{evaluate, summarize, MetricsReport, MetricsSummary};
use crate::data::Sample;
use crate::error::{Error, Result};

/// Per-sample metrics of `net` on `samples`, truth cropped to the output
/// window.
pub fn evaluate_samples(
    net: &mut Network<f32>,
    samples: &[Sample],
    factor: f64,
    batch_size: usize,
) -> Result<Vec<(String, MetricsReport)>> {
    let refs: Vec<&Sample> = samples.iter().collect();
    let preds = predict_planes(net, &refs, batch_size)?;
    let e = net.output_extent();
    preds
        .iter()
        .zip(samples)
        .map(|(p, s)| Ok((s.id.clone(), evaluate(p, &s.mask.center_crop(e, e)?, factor)?)))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossCell {
    pub checkpoint: String,
    pub test_set: String,
    pub summary: MetricsSummary,
}

/// Every checkpoint evaluated on every test set, row-major by checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossMatrix {
    pub cells: Vec<CrossCell>,
}

impl CrossMatrix {
    pub fn cell(&self, checkpoint: &str, test_set: &str) -> Option<&CrossCell> {
        self.cells
            .iter()
            .find(|c| c.checkpoint == checkpoint && c.test_set == test_set)
    }

    /// One row per cell: the aggregate metrics of one pairing.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.6}"));
        let mut s = String::from("checkpoint,test_set,samples,test_loss,test_dice,msd_px,msd_mm,missing_contours\n");
        for c in &self.cells {
            let m = &c.summary;
            writeln!(
                s,
                "{},{},{},{:.6},{:.6},{},{},{}",
                c.checkpoint,
                c.test_set,
                m.count,
                m.bce,
                m.dice,
                opt(m.msd_px),
                opt(m.msd_mm),
                m.missing_contours
            )
            .unwrap();
        }
        s
    }
}

pub fn cross_test(
    checkpoints: &mut [(String, Network<f32>)],
    test_sets: &[(String, Vec<Sample>)],
    factor: f64,
    batch_size: usize,
) -> Result<CrossMatrix> {
    if checkpoints.is_empty() {
        return Err(Error::Empty("checkpoint list"));
    }
    if test_sets.is_empty() {
        return Err(Error::Empty("test-set list"));
    }
    let mut cells = Vec::with_capacity(checkpoints.len() * test_sets.len());
    for (name, net) in checkpoints.iter_mut() {
        for (set, samples) in test_sets {
            let reports: Vec<MetricsReport> = evaluate_samples(net, samples, factor, batch_size)?
                .into_iter()
                .map(|(_, r)| r)
                .collect();
            cells.push(CrossCell {
                checkpoint: name.clone(),
                test_set: set.clone(),
                summary: summarize(&reports)?,
            });
        }
    }
    Ok(CrossMatrix { cells })
}

/// Loads checkpoints (optionally insisting on one model kind) and names
/// each by its file stem.
pub fn load_checkpoints(paths: &[impl AsRef<Path>], expect: Option<ModelKind>) -> Result<Vec<(String, Network<f32>)>> {
    paths
        .iter()
        .map(|p| {
            let p = p.as_ref();
            let name = p.file_stem().and_then(|s| s.to_str()).unwrap_or("checkpoint").to_string();
            Ok((name, load_checkpoint(p, expect)?))
        })
        .collect()
}
