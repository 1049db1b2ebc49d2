//! Interpolating B-splines through annotation markers, and rasterizing the
//! fitted curve into a training mask.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, Plane};

/// Human-placed markers in image space, `(x, y)` = (column, row), in curve
/// order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkerSet {
    pub frame_id: String,
    pub markers: Vec<(f64, f64)>,
    /// Seconds since the Unix epoch.
    #[serde(default)]
    pub created_at: u64,
}

impl MarkerSet {
    pub fn new(frame_id: impl Into<String>, markers: Vec<(f64, f64)>) -> Self {
        Self {
            frame_id: frame_id.into(),
            markers,
            created_at: 0,
        }
    }

    /// Checks the curve preconditions against a `width x height` frame.
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if self.markers.len() < 2 {
            return Err(Error::invalid(format!(
                "a curve needs at least 2 markers, got {}",
                self.markers.len()
            )));
        }
        let (w, h) = ((width.max(1) - 1) as f64, (height.max(1) - 1) as f64);
        for (i, &(x, y)) in self.markers.iter().enumerate() {
            if !(x.is_finite() && y.is_finite() && (0.0..=w).contains(&x) && (0.0..=h).contains(&y)) {
                return Err(Error::invalid(format!(
                    "marker {i} at ({x}, {y}) lies outside the {width}x{height} frame"
                )));
            }
        }
        for (i, pair) in self.markers.windows(2).enumerate() {
            if dist(pair[0], pair[1]) < 1e-9 {
                return Err(Error::invalid(format!("markers {i} and {} coincide", i + 1)));
            }
        }
        Ok(())
    }
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplineContour {
    pub polyline: Vec<(f64, f64)>,
    pub degree: usize,
    pub sample_count: usize,
}

/// Largest allowed gap between consecutive polyline samples.
pub const MAX_SAMPLE_GAP: f64 = 2.0;

/// Clamped B-spline through every marker: chord-length parameters,
/// averaged knots, degree `min(3, markers - 1)`.
#[derive(Clone, Debug)]
pub struct Interpolant {
    degree: usize,
    knots: Vec<f64>,
    ctrl: Vec<(f64, f64)>,
    params: Vec<f64>,
}

impl Interpolant {
    pub fn fit(markers: &[(f64, f64)]) -> Result<Self> {
        let n = markers.len();
        if n < 2 {
            return Err(Error::invalid("a curve needs at least 2 markers"));
        }
        let p = 3.min(n - 1);
        let params = chord_params(markers);
        let knots = averaged_knots(&params, p);
        let mut a = vec![0.0; n * n];
        for (k, &u) in params.iter().enumerate() {
            let span = find_span(n, p, u, &knots);
            for (j, b) in basis_funs(span, u, p, &knots).into_iter().enumerate() {
                a[k * n + span - p + j] = b;
            }
        }
        let xs = solve(&a, markers.iter().map(|m| m.0).collect())?;
        let ys = solve(&a, markers.iter().map(|m| m.1).collect())?;
        Ok(Self {
            degree: p,
            knots,
            ctrl: xs.into_iter().zip(ys).collect(),
            params,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Curve parameter of each marker, in `[0, 1]`.
    pub fn marker_params(&self) -> &[f64] {
        &self.params
    }

    pub fn eval(&self, u: f64) -> (f64, f64) {
        let (n, p) = (self.ctrl.len(), self.degree);
        let u = u.clamp(0.0, 1.0);
        let span = find_span(n, p, u, &self.knots);
        basis_funs(span, u, p, &self.knots)
            .iter()
            .enumerate()
            .fold((0.0, 0.0), |acc, (j, &b)| {
                let c = self.ctrl[span - p + j];
                (acc.0 + b * c.0, acc.1 + b * c.1)
            })
    }
}

/// Fits the interpolating spline and samples it uniformly in parameter at
/// `samples` points, or more if needed to keep consecutive samples within
/// [`MAX_SAMPLE_GAP`]. Endpoints are the first and last markers exactly.
pub fn fit_spline(markers: &MarkerSet, samples: usize, width: usize, height: usize) -> Result<SplineContour> {
    markers.validate(width, height)?;
    let q = &markers.markers;
    let curve = Interpolant::fit(q)?;
    let sample = |m: usize| -> Vec<(f64, f64)> {
        let mut pts: Vec<(f64, f64)> = (0..m).map(|i| curve.eval(i as f64 / (m - 1) as f64)).collect();
        pts[0] = q[0];
        pts[m - 1] = q[q.len() - 1];
        pts
    };
    let mut m = samples.max(2);
    let mut polyline = sample(m);
    loop {
        let gap = polyline.windows(2).map(|w| dist(w[0], w[1])).fold(0.0, f64::max);
        if gap <= MAX_SAMPLE_GAP {
            break;
        }
        m = ((m - 1) as f64 * gap / (0.9 * MAX_SAMPLE_GAP)).ceil() as usize + 1;
        polyline = sample(m);
    }
    Ok(SplineContour {
        polyline,
        degree: curve.degree(),
        sample_count: m,
    })
}

fn chord_params(q: &[(f64, f64)]) -> Vec<f64> {
    let mut acc = vec![0.0];
    for w in q.windows(2) {
        acc.push(acc.last().unwrap() + dist(w[0], w[1]));
    }
    let total = *acc.last().unwrap();
    let last = acc.len() - 1;
    acc.iter_mut().for_each(|v| *v /= total);
    acc[last] = 1.0;
    acc
}

fn averaged_knots(params: &[f64], p: usize) -> Vec<f64> {
    let n = params.len();
    let mut knots = vec![0.0; p + 1];
    for j in 1..n - p {
        knots.push(params[j..j + p].iter().sum::<f64>() / p as f64);
    }
    knots.extend(std::iter::repeat_n(1.0, p + 1));
    knots
}

/// Knot span index for parameter `u` with `n` control points.
fn find_span(n: usize, p: usize, u: f64, knots: &[f64]) -> usize {
    if u >= knots[n] {
        return n - 1;
    }
    let (mut lo, mut hi) = (p, n);
    let mut mid = (lo + hi) / 2;
    while u < knots[mid] || u >= knots[mid + 1] {
        if u < knots[mid] {
            hi = mid;
        } else {
            lo = mid;
        }
        mid = (lo + hi) / 2;
    }
    mid
}

/// The `p + 1` non-vanishing basis functions at `u` (Cox–de Boor).
fn basis_funs(span: usize, u: f64, p: usize, knots: &[f64]) -> Vec<f64> {
    let mut n = vec![0.0; p + 1];
    let mut left = vec![0.0; p + 1];
    let mut right = vec![0.0; p + 1];
    n[0] = 1.0;
    for j in 1..=p {
        left[j] = u - knots[span + 1 - j];
        right[j] = knots[span + j] - u;
        let mut saved = 0.0;
        for r in 0..j {
            let temp = n[r] / (right[r + 1] + left[j - r]);
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    n
}

/// Gaussian elimination with partial pivoting on a dense row-major system.
fn solve(a: &[f64], mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    let mut a = a.to_vec();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap();
        if a[piv * n + col].abs() < 1e-14 {
            return Err(Error::invalid("marker layout gives a singular interpolation system"));
        }
        if piv != col {
            for k in 0..n {
                a.swap(piv * n + k, col * n + k);
            }
            b.swap(piv, col);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row * n + k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row * n + row];
    }
    Ok(x)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RasterStatus {
    Ok,
    /// Part (or all) of the curve fell outside the frame and was dropped.
    Clipped,
}

/// Draws the polyline with a round brush of diameter `thickness` pixels.
pub fn rasterize(
    contour: &SplineContour,
    thickness: usize,
    width: usize,
    height: usize,
) -> Result<(BinaryMask, RasterStatus)> {
    if thickness < 1 {
        return Err(Error::invalid("stroke thickness must be at least 1 px"));
    }
    let mut mask = Plane::filled(width, height, false);
    let mut status = RasterStatus::Ok;
    let r = (thickness - 1) as f64 / 2.0;
    let reach = r.floor() as isize;
    let brush: Vec<(isize, isize)> = (-reach..=reach)
        .flat_map(|dy| (-reach..=reach).map(move |dx| (dy, dx)))
        .filter(|&(dy, dx)| ((dy * dy + dx * dx) as f64) <= r * r + 1e-9)
        .collect();
    let mut stamp = |row: isize, col: isize| {
        if row < 0 || col < 0 || row >= height as isize || col >= width as isize {
            status = RasterStatus::Clipped;
        }
        for &(dy, dx) in &brush {
            let (y, x) = (row + dy, col + dx);
            if y >= 0 && x >= 0 && (y as usize) < height && (x as usize) < width {
                mask.set(y as usize, x as usize, true);
            }
        }
    };
    let pts: Vec<(isize, isize)> = contour
        .polyline
        .iter()
        .map(|&(x, y)| (y.round() as isize, x.round() as isize))
        .collect();
    if let [only] = pts[..] {
        stamp(only.0, only.1);
    }
    for w in pts.windows(2) {
        for (row, col) in bresenham(w[0], w[1]) {
            stamp(row, col);
        }
    }
    Ok((mask, status))
}

fn bresenham(a: (isize, isize), b: (isize, isize)) -> Vec<(isize, isize)> {
    let (mut y, mut x) = a;
    let dx = (b.1 - x).abs();
    let dy = -(b.0 - y).abs();
    let sx = if x < b.1 { 1 } else { -1 };
    let sy = if y < b.0 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut out = Vec::new();
    loop {
        out.push((y, x));
        if (y, x) == b {
            return out;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}
