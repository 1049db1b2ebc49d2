//! Directory layout: `<id>.png` frames next to `<id>_mask.png` labels, both
//! 8-bit grayscale, plus an optional `manifest.tsv` (one line per sample:
//! id, split tag, provenance, distance rank; `NA` where unknown).

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::{ColorType, GrayImage};

use super::{Dataset, Provenance, Record, Sample, SplitTag, FRAME_EXTENT};
use crate::error::{Error, Result};
use crate::raster::{save_png, Plane};

pub const MANIFEST_FILE: &str = "manifest.tsv";
const MASK_SUFFIX: &str = "_mask";

/// Mask pixels strictly above this gray level are foreground.
const MASK_THRESHOLD: u8 = 127;

fn read_gray(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    match img.color() {
        ColorType::L8 | ColorType::L16 => Ok(img.to_luma8()),
        _ => Err(Error::NotGrayscale {
            path: path.to_path_buf(),
        }),
    }
}

/// Centre-crops to a square, then scales to `extent`.
fn square(img: &GrayImage, extent: usize, filter: FilterType) -> GrayImage {
    let side = img.width().min(img.height());
    let x = (img.width() - side) / 2;
    let y = (img.height() - side) / 2;
    let cropped = imageops::crop_imm(img, x, y, side, side).to_image();
    if side as usize == extent {
        cropped
    } else {
        imageops::resize(&cropped, extent as u32, extent as u32, filter)
    }
}

pub fn load_pairs(dir: &Path) -> Result<Dataset> {
    load_pairs_with(dir, FRAME_EXTENT)
}

/// Loads every `<id>.png` / `<id>_mask.png` pair in `dir`, sorted by id.
pub fn load_pairs_with(dir: &Path, extent: usize) -> Result<Dataset> {
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if !stem.ends_with(MASK_SUFFIX) {
            ids.push(stem.to_string());
        }
    }
    ids.sort();
    let manifest = read_manifest(dir)?;
    let mut ds = Dataset::new();
    for id in ids {
        let mask_path = dir.join(format!("{id}{MASK_SUFFIX}.png"));
        if !mask_path.exists() {
            return Err(Error::MissingMask { id });
        }
        let image = square(&read_gray(&dir.join(format!("{id}.png")))?, extent, FilterType::Triangle);
        let mask = square(&read_gray(&mask_path)?, extent, FilterType::Nearest);
        let sample = Sample::new(
            id.clone(),
            Plane::from_gray8(&image),
            Plane::from_fn(extent, extent, |r, c| mask.get_pixel(c as u32, r as u32)[0] > MASK_THRESHOLD),
        )?;
        let mut record = Record {
            sample,
            split: None,
            provenance: Provenance::Loaded,
            rank: None,
            curve: None,
        };
        if let Some(m) = manifest.get(&id) {
            record.split = m.split;
            record.provenance = m.provenance;
            record.rank = m.rank;
        }
        ds.push_record(record)?;
    }
    Ok(ds)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub split: Option<SplitTag>,
    pub provenance: Provenance,
    pub rank: Option<usize>,
}

fn manifest_line(r: &Record) -> String {
    format!(
        "{}\t{}\t{}\t{}\n",
        r.sample.id,
        r.split.map_or("NA", SplitTag::as_str),
        r.provenance.as_str(),
        r.rank.map_or("NA".to_string(), |k| k.to_string())
    )
}

/// Reads `manifest.tsv` if present; an absent file is an empty manifest.
pub fn read_manifest(dir: &Path) -> Result<HashMap<String, ManifestEntry>> {
    let path = dir.join(MANIFEST_FILE);
    let text = match std::fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(HashMap::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| Error::Config { line: i + 1, message };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(bad(format!("{MANIFEST_FILE}: expected 4 tab-separated fields")));
        }
        let split = match f[1] {
            "train" => Some(SplitTag::Train),
            "val" => Some(SplitTag::Val),
            "test" => Some(SplitTag::Test),
            "NA" => None,
            other => return Err(bad(format!("unknown split tag `{other}`"))),
        };
        let provenance = match f[2] {
            "loaded" => Provenance::Loaded,
            "synthetic" => Provenance::Synthetic,
            "augmented" => Provenance::Augmented,
            other => return Err(bad(format!("unknown provenance `{other}`"))),
        };
        let rank = match f[3] {
            "NA" => None,
            k => Some(k.parse().map_err(|_| bad(format!("bad rank `{k}`")))?),
        };
        out.insert(f[0].to_string(), ManifestEntry { split, provenance, rank });
    }
    Ok(out)
}

/// Writes every sample as a PNG pair plus the manifest. Returns the
/// manifest path.
pub fn write_pairs(ds: &Dataset, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    for r in ds.records() {
        let s = &r.sample;
        if s.id.is_empty() || s.id.contains(['\t', '\n', '/', '\\']) {
            return Err(Error::invalid(format!("sample id `{}` cannot name a file", s.id)));
        }
        save_png(&s.image.to_gray8(), &dir.join(format!("{}.png", s.id)))?;
        save_png(&s.mask.to_gray8(), &dir.join(format!("{}{MASK_SUFFIX}.png", s.id)))?;
        manifest.push_str(&manifest_line(r));
    }
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
