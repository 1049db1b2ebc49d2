use std::cmp::Ordering;

use super::Dataset;
use crate::error::{Error, Result};
use crate::raster::Plane;

/// Pixelwise mean over every image in the dataset.
pub fn mean_image(ds: &Dataset) -> Result<Plane<f32>> {
    let first = ds.samples().next().ok_or(Error::Empty("dataset"))?;
    let (w, h) = (first.image.width(), first.image.height());
    let mut acc = vec![0f64; w * h];
    for s in ds.samples() {
        if (s.image.width(), s.image.height()) != (w, h) {
            return Err(Error::shape(format!("sample `{}` has a different extent", s.id)));
        }
        for (a, &v) in acc.iter_mut().zip(s.image.data()) {
            *a += v as f64;
        }
    }
    let n = ds.len() as f64;
    Plane::new(w, h, acc.into_iter().map(|v| (v / n) as f32).collect())
}

/// `(id, L2 distance to the mean image)`, most distant first; ties broken
/// by ascending id so the order never depends on dataset order.
pub fn distance_rank(ds: &Dataset) -> Result<Vec<(String, f64)>> {
    let mean = mean_image(ds)?;
    let mut out: Vec<(String, f64)> = ds
        .samples()
        .map(|s| {
            let d2: f64 = s
                .image
                .data()
                .iter()
                .zip(mean.data())
                .map(|(&a, &b)| {
                    let d = a as f64 - b as f64;
                    d * d
                })
                .sum();
            (s.id.clone(), d2.sqrt())
        })
        .collect();
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(&b.0)));
    Ok(out)
}

/// Keeps the `n_high` samples farthest from the mean image and the `n_low`
/// nearest, in rank order, and records each kept sample's rank.
pub fn informed_undersample(ds: &Dataset, n_high: usize, n_low: usize) -> Result<Dataset> {
    if n_high + n_low > ds.len() {
        return Err(Error::invalid(format!(
            "cannot keep {n_high} + {n_low} samples from a dataset of {}",
            ds.len()
        )));
    }
    if ds.is_empty() {
        return Ok(Dataset::new());
    }
    let ranked = distance_rank(ds)?;
    let n = ranked.len();
    let keep = (0..n_high).chain(n - n_low..n);
    let mut records = Vec::with_capacity(n_high + n_low);
    for pos in keep {
        let mut rec = ds.get(&ranked[pos].0).expect("ranked ids come from the dataset").clone();
        rec.rank = Some(pos + 1);
        records.push(rec);
    }
    Dataset::from_records(records)
}
