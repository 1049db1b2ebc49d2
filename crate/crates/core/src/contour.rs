//! Prediction map -> contour extraction and the evaluation metrics.

use std::collections::HashSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, Plane};
use crate::tensor::kernels;

/// Millimetres per pixel implied by the published MSD tables.
pub const PX_TO_MM_TABLE: f64 = 0.15;
/// Millimetres per pixel quoted in the prose for the first dataset.
pub const PX_TO_MM_TEXT: f64 = 0.638;

pub const DEFAULT_THRESHOLD: f32 = 0.5;

/// Pixels at or above `t` become foreground.
pub fn threshold(pred: &Plane<f32>, t: f32) -> BinaryMask {
    pred.map(|v| v >= t)
}

const NEIGHBORS8: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];

/// 8-connected components as lists of pixels, ordered by their first pixel
/// in raster order.
pub fn components(mask: &BinaryMask) -> Vec<Vec<(usize, usize)>> {
    let (h, w) = (mask.height(), mask.width());
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if !mask.get(r, c) || seen[r * w + c] {
                continue;
            }
            let mut comp = Vec::new();
            let mut stack = vec![(r, c)];
            seen[r * w + c] = true;
            while let Some((y, x)) = stack.pop() {
                comp.push((y, x));
                for (dy, dx) in NEIGHBORS8 {
                    let (ny, nx) = (y as isize + dy, x as isize + dx);
                    if mask.get_checked(ny, nx) == Some(true) {
                        let i = ny as usize * w + nx as usize;
                        if !seen[i] {
                            seen[i] = true;
                            stack.push((ny as usize, nx as usize));
                        }
                    }
                }
            }
            out.push(comp);
        }
    }
    out
}

/// Keeps only the largest 8-connected object; on equal areas the one whose
/// first pixel comes earliest in raster order wins.
pub fn largest_component(mask: &BinaryMask) -> BinaryMask {
    let mut out = Plane::filled(mask.width(), mask.height(), false);
    let comps = components(mask);
    let mut best: Option<&Vec<(usize, usize)>> = None;
    for c in &comps {
        if best.is_none_or(|b| c.len() > b.len()) {
            best = Some(c);
        }
    }
    for &(r, c) in best.into_iter().flatten() {
        out.set(r, c, true);
    }
    out
}

/// Zhang–Suen thinning to a one-pixel-wide skeleton.
///
/// Uses the Lü–Wang neighbour bound (3..=6 rather than 2..=6), which keeps
/// two-pixel stubs at line ends and along diagonals instead of eroding them.
pub fn skeletonize(mask: &BinaryMask) -> BinaryMask {
    let mut img = mask.clone();
    let (h, w) = (img.height(), img.width());
    let at = |img: &BinaryMask, r: usize, c: usize, dr: isize, dc: isize| {
        img.get_checked(r as isize + dr, c as isize + dc) == Some(true)
    };
    loop {
        let mut changed = false;
        for step in 0..2 {
            let mut remove = Vec::new();
            for r in 0..h {
                for c in 0..w {
                    if !img.get(r, c) {
                        continue;
                    }
                    // P2..P9 clockwise from north.
                    let p = [
                        at(&img, r, c, -1, 0),
                        at(&img, r, c, -1, 1),
                        at(&img, r, c, 0, 1),
                        at(&img, r, c, 1, 1),
                        at(&img, r, c, 1, 0),
                        at(&img, r, c, 1, -1),
                        at(&img, r, c, 0, -1),
                        at(&img, r, c, -1, -1),
                    ];
                    let b = p.iter().filter(|&&v| v).count();
                    if !(3..=6).contains(&b) {
                        continue;
                    }
                    let a = (0..8).filter(|&i| !p[i] && p[(i + 1) % 8]).count();
                    if a != 1 {
                        continue;
                    }
                    let (n, e, s, wst) = (p[0], p[2], p[4], p[6]);
                    let ok = if step == 0 {
                        !(n && e && s) && !(e && s && wst)
                    } else {
                        !(n && e && wst) && !(n && s && wst)
                    };
                    if ok {
                        remove.push((r, c));
                    }
                }
            }
            changed |= !remove.is_empty();
            for (r, c) in remove {
                img.set(r, c, false);
            }
        }
        if !changed {
            return img;
        }
    }
}

/// Unordered set of distinct pixel coordinates `(row, col)`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PointSet {
    points: Vec<(usize, usize)>,
}

impl PointSet {
    /// Deduplicates, keeping first occurrences.
    pub fn new(points: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut seen = HashSet::new();
        Self {
            points: points.into_iter().filter(|p| seen.insert(*p)).collect(),
        }
    }

    pub fn from_mask(mask: &BinaryMask) -> Self {
        Self { points: mask.points() }
    }

    pub fn points(&self) -> &[(usize, usize)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn same_set(&self, other: &PointSet) -> bool {
        let a: HashSet<_> = self.points.iter().collect();
        let b: HashSet<_> = other.points.iter().collect();
        a == b
    }
}

fn nearest(p: (usize, usize), set: &[(usize, usize)]) -> f64 {
    let d2 = set
        .iter()
        .map(|&(r, c)| {
            let dr = r as i64 - p.0 as i64;
            let dc = c as i64 - p.1 as i64;
            dr * dr + dc * dc
        })
        .min()
        .expect("non-empty set");
    (d2 as f64).sqrt()
}

/// Mean of nearest-neighbor distances taken both ways:
/// `(sum_v d(v, U) + sum_u d(u, V)) / (m + n)`.
pub fn msd(u: &PointSet, v: &PointSet) -> Result<f64> {
    if u.is_empty() || v.is_empty() {
        return Err(Error::Empty("msd needs two non-empty contours"));
    }
    let to_u: f64 = v.points.iter().map(|&p| nearest(p, &u.points)).sum();
    let to_v: f64 = u.points.iter().map(|&p| nearest(p, &v.points)).sum();
    Ok((to_u + to_v) / (u.len() + v.len()) as f64)
}

pub fn px_to_mm(px: f64, factor: f64) -> Result<f64> {
    if !(factor > 0.0) {
        return Err(Error::invalid(format!("px-to-mm factor must be positive, got {factor}")));
    }
    Ok(px * factor)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContourStatus {
    Ok,
    /// Nothing survived thresholding of the prediction.
    EmptyPrediction,
    /// The ground truth has no contour.
    EmptyTruth,
}

impl ContourStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ContourStatus::Ok => "ok",
            ContourStatus::EmptyPrediction => "empty_prediction",
            ContourStatus::EmptyTruth => "empty_truth",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub bce: f64,
    pub dice: f64,
    /// `None` unless `status` is [`ContourStatus::Ok`].
    pub msd_px: Option<f64>,
    pub msd_mm: Option<f64>,
    pub factor: f64,
    pub status: ContourStatus,
}

pub const BCE_EPS: f64 = 1e-7;
pub const DICE_SMOOTH: f64 = 1.0;

pub fn bce(pred: &Plane<f32>, truth: &BinaryMask) -> f64 {
    let (p, y) = as_f64(pred, truth);
    kernels::bce(&p, &y, BCE_EPS)
}

pub fn dice(pred: &Plane<f32>, truth: &BinaryMask) -> f64 {
    let (p, y) = as_f64(pred, truth);
    kernels::dice(&p, &y, DICE_SMOOTH)
}

fn as_f64(pred: &Plane<f32>, truth: &BinaryMask) -> (Vec<f64>, Vec<f64>) {
    (
        pred.data().iter().map(|&v| v as f64).collect(),
        truth.data().iter().map(|&v| f64::from(u8::from(v))).collect(),
    )
}

/// The contour of a prediction map: threshold, keep the largest object,
/// thin to a skeleton.
pub fn predicted_contour(pred: &Plane<f32>, t: f32) -> PointSet {
    PointSet::from_mask(&skeletonize(&largest_component(&threshold(pred, t))))
}

pub fn truth_contour(truth: &BinaryMask) -> PointSet {
    PointSet::from_mask(&skeletonize(truth))
}

/// BCE and Dice on the raw map; MSD between the predicted and ground-truth
/// skeletons, unshifted.
pub fn evaluate(pred: &Plane<f32>, truth: &BinaryMask, factor: f64) -> Result<MetricsReport> {
    if (pred.width(), pred.height()) != (truth.width(), truth.height()) {
        return Err(Error::shape(format!(
            "prediction {}x{} vs truth {}x{}",
            pred.height(),
            pred.width(),
            truth.height(),
            truth.width()
        )));
    }
    px_to_mm(0.0, factor)?;
    let u = predicted_contour(pred, DEFAULT_THRESHOLD);
    let v = truth_contour(truth);
    let status = if v.is_empty() {
        ContourStatus::EmptyTruth
    } else if u.is_empty() {
        ContourStatus::EmptyPrediction
    } else {
        ContourStatus::Ok
    };
    let msd_px = match status {
        ContourStatus::Ok => Some(msd(&u, &v)?),
        _ => None,
    };
    Ok(MetricsReport {
        bce: bce(pred, truth),
        dice: dice(pred, truth),
        msd_px,
        msd_mm: msd_px.map(|m| m * factor),
        factor,
        status,
    })
}

pub const CSV_HEADER: &str = "id,bce,dice,msd_px,msd_mm,status";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

impl MetricsReport {
    pub fn csv_row(&self, id: &str) -> String {
        format!(
            "{id},{:.6},{:.6},{},{},{}",
            self.bce,
            self.dice,
            opt(self.msd_px),
            opt(self.msd_mm),
            self.status.as_str()
        )
    }
}

/// One header line plus one row per report, LF-terminated.
pub fn metrics_csv<'a>(rows: impl IntoIterator<Item = (&'a str, &'a MetricsReport)>) -> String {
    let mut s = String::new();
    writeln!(s, "{CSV_HEADER}").unwrap();
    for (id, r) in rows {
        writeln!(s, "{}", r.csv_row(id)).unwrap();
    }
    s
}

/// Mean over a set of reports; MSD averages only contours that exist.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsSummary {
    pub count: usize,
    pub bce: f64,
    pub dice: f64,
    pub msd_px: Option<f64>,
    pub msd_mm: Option<f64>,
    /// Reports without a usable contour.
    pub missing_contours: usize,
}

pub fn summarize(reports: &[MetricsReport]) -> Result<MetricsSummary> {
    if reports.is_empty() {
        return Err(Error::Empty("no reports to summarize"));
    }
    let n = reports.len() as f64;
    let msds: Vec<f64> = reports.iter().filter_map(|r| r.msd_px).collect();
    let msd_px = (!msds.is_empty()).then(|| msds.iter().sum::<f64>() / msds.len() as f64);
    Ok(MetricsSummary {
        count: reports.len(),
        bce: reports.iter().map(|r| r.bce).sum::<f64>() / n,
        dice: reports.iter().map(|r| r.dice).sum::<f64>() / n,
        msd_px,
        msd_mm: msd_px.map(|m| m * reports[0].factor),
        missing_contours: reports.len() - msds.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_from(rows: &[&str]) -> BinaryMask {
        Plane::from_fn(rows[0].len(), rows.len(), |r, c| rows[r].as_bytes()[c] == b'#')
    }

    #[test]
    fn threshold_boundary_and_extremes() {
        let p = Plane::filled(3, 2, 0.5f32);
        assert_eq!(threshold(&p, 0.5).count(), 6);
        let q = Plane::from_fn(4, 4, |r, c| (r * 4 + c) as f32 / 15.0);
        assert_eq!(threshold(&q, 0.0).count(), 16);
        assert_eq!(threshold(&q, 1.01).count(), 0);
    }

    #[test]
    fn largest_component_drops_small_blob() {
        let mut m = Plane::filled(20, 10, false);
        for c in 0..10 {
            m.set(1, c, true);
            m.set(2, c, true);
        }
        for c in 14..19 {
            m.set(7, c, true);
        }
        let out = largest_component(&m);
        assert_eq!(out.count(), 20);
        assert!(!out.get(7, 15));
        let empty = Plane::filled(5, 5, false);
        assert_eq!(largest_component(&empty), empty);
    }

    #[test]
    fn largest_component_tie_prefers_raster_first() {
        let m = mask_from(&["##...", ".....", "...##"]);
        let out = largest_component(&m);
        assert!(out.get(0, 0) && out.get(0, 1) && !out.get(2, 3));
    }

    #[test]
    fn diagonal_pixels_are_connected() {
        let m = mask_from(&["#..", ".#.", "..#"]);
        assert_eq!(components(&m).len(), 1);
    }

    #[test]
    fn skeleton_of_band_is_its_centerline() {
        let mut rows = vec![".............".to_string()];
        for _ in 0..3 {
            rows.push(".###########.".into());
        }
        rows.push(".............".into());
        let refs: Vec<&str> = rows.iter().map(String::as_str).collect();
        let s = skeletonize(&mask_from(&refs));
        let pts = s.points();
        assert!(pts.iter().all(|&(r, _)| r == 2), "{pts:?}");
        assert!(pts.len() >= 9, "{pts:?}");
    }

    #[test]
    fn one_pixel_line_is_fixed_point() {
        let m = mask_from(&[".......", ".#####.", "......."]);
        assert_eq!(skeletonize(&m), m);
        let d = mask_from(&["#....", ".#...", "..#..", "...#.", "....#"]);
        assert_eq!(skeletonize(&d), d);
    }

    #[test]
    fn msd_hand_cases() {
        let u = PointSet::new([(0, 0)]);
        let v = PointSet::new([(3, 4)]);
        assert_eq!(msd(&u, &v).unwrap(), 5.0);
        assert_eq!(msd(&u, &u).unwrap(), 0.0);
        assert!(msd(&u, &PointSet::default()).is_err());
    }

    #[test]
    fn px_to_mm_table_arithmetic() {
        assert!((px_to_mm(0.2496, PX_TO_MM_TABLE).unwrap() - 0.03744).abs() < 1e-12);
        assert!((px_to_mm(0.2136, PX_TO_MM_TABLE).unwrap() - 0.0320).abs() < 1e-4);
        assert_eq!(px_to_mm(1.0, 1.0).unwrap(), 1.0);
        assert!(px_to_mm(1.0, 0.0).is_err());
        assert!(px_to_mm(1.0, -1.0).is_err());
    }

    fn band(h: usize, w: usize, top: usize, thick: usize) -> BinaryMask {
        Plane::from_fn(w, h, |r, _| r >= top && r < top + thick)
    }

    #[test]
    fn evaluate_perfect_and_inverted() {
        let truth = band(30, 30, 10, 5);
        let r = evaluate(&truth.to_f32(), &truth, PX_TO_MM_TABLE).unwrap();
        assert!((r.dice - 1.0).abs() < 1e-12);
        assert_eq!(r.msd_px, Some(0.0));
        assert_eq!(r.status, ContourStatus::Ok);
        let inv = truth.to_f32().map(|v| 1.0 - v);
        let r = evaluate(&inv, &truth, PX_TO_MM_TABLE).unwrap();
        assert!(r.dice < 0.01);
        assert!(r.msd_px.unwrap() > 0.0);
    }

    #[test]
    fn evaluate_two_pixel_offset() {
        let truth = band(40, 40, 15, 5);
        let pred = band(40, 40, 17, 5).to_f32();
        let r = evaluate(&pred, &truth, PX_TO_MM_TABLE).unwrap();
        let m = r.msd_px.unwrap();
        assert!((m - 2.0).abs() <= 0.1, "{m}");
        assert!((r.msd_mm.unwrap() - m * 0.15).abs() < 1e-12);
    }

    #[test]
    fn evaluate_reports_missing_contours() {
        let truth = band(20, 20, 5, 4);
        let r = evaluate(&Plane::filled(20, 20, 0.1), &truth, 0.15).unwrap();
        assert_eq!(r.status, ContourStatus::EmptyPrediction);
        assert_eq!(r.msd_px, None);
        assert!(r.csv_row("a").ends_with(",NA,NA,empty_prediction"));
        assert!(evaluate(&Plane::filled(20, 21, 0.1), &truth, 0.15).is_err());
    }

    #[test]
    fn csv_is_fixed_format() {
        let r = MetricsReport {
            bce: 0.1,
            dice: 0.9,
            msd_px: Some(0.25),
            msd_mm: Some(0.0375),
            factor: 0.15,
            status: ContourStatus::Ok,
        };
        assert_eq!(
            metrics_csv([("f1", &r)]),
            "id,bce,dice,msd_px,msd_mm,status\nf1,0.100000,0.900000,0.250000,0.037500,ok\n"
        );
    }
}
