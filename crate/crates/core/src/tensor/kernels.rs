//! Forward and backward kernels on raw buffers.
//!
//! The tape calls into these; they are also usable directly, which is how
//! the dense reference checks in the tests exercise them.

use super::Scalar;
use crate::error::{Error, Result};

/// Zero padding applied on every spatial border of a convolution input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Valid,
    /// `p = dilation * (k - 1) / 2`, so the output keeps the input extent.
    Same,
    Explicit(usize),
}

impl Padding {
    pub fn amount(self, kernel: usize, dilation: usize) -> usize {
        match self {
            Padding::Valid => 0,
            Padding::Same => dilation * (kernel - 1) / 2,
            Padding::Explicit(p) => p,
        }
    }
}

/// Sliding-window geometry over one `C x H x W` image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Window {
    pub fn new(
        channels: usize,
        (height, width): (usize, usize),
        kernel: usize,
        dilation: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if kernel == 0 || dilation == 0 || stride == 0 {
            return Err(Error::invalid("kernel, dilation and stride must be >= 1"));
        }
        let span = dilation * (kernel - 1) + 1;
        let (ph, pw) = (height + 2 * pad, width + 2 * pad);
        if span > ph || span > pw {
            return Err(Error::shape(format!(
                "kernel span {span} exceeds padded input {ph}x{pw}"
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            kernel,
            dilation,
            stride,
            pad,
            out_h: (ph - span) / stride + 1,
            out_w: (pw - span) / stride + 1,
        })
    }

    pub fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Source coordinate for output position `o` and kernel tap `t`, or
    /// `None` when it falls into the zero padding.
    #[inline]
    fn source(&self, o: usize, t: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + t * self.dilation) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }

    /// Unfolds `image` (`C x H x W`) into `cols` (`C*k*k x out_h*out_w`).
    pub fn im2col<T: Scalar>(&self, image: &[T], cols: &mut [T]) {
        let (k, ow, n_cols) = (self.kernel, self.out_w, self.cols());
        for c in 0..self.channels {
            let plane = &image[c * self.height * self.width..][..self.height * self.width];
            for u in 0..k {
                for v in 0..k {
                    let row = &mut cols[((c * k + u) * k + v) * n_cols..][..n_cols];
                    for i in 0..self.out_h {
                        let dst = &mut row[i * ow..][..ow];
                        match self.source(i, u, self.height) {
                            None => dst.fill(T::zero()),
                            Some(y) => {
                                let src = &plane[y * self.width..][..self.width];
                                for (j, d) in dst.iter_mut().enumerate() {
                                    *d = match self.source(j, v, self.width) {
                                        Some(x) => src[x],
                                        None => T::zero(),
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Window::im2col`]: scatters `cols` back, adding into `image`.
    pub fn col2im<T: Scalar>(&self, cols: &[T], image: &mut [T]) {
        let (k, ow, n_cols) = (self.kernel, self.out_w, self.cols());
        for c in 0..self.channels {
            let plane = &mut image[c * self.height * self.width..][..self.height * self.width];
            for u in 0..k {
                for v in 0..k {
                    let row = &cols[((c * k + u) * k + v) * n_cols..][..n_cols];
                    for i in 0..self.out_h {
                        let Some(y) = self.source(i, u, self.height) else {
                            continue;
                        };
                        let dst = &mut plane[y * self.width..][..self.width];
                        for (j, &s) in row[i * ow..][..ow].iter().enumerate() {
                            if let Some(x) = self.source(j, v, self.width) {
                                dst[x] = dst[x] + s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Geometry of a convolution over a batch.
#[derive(Clone, Copy, Debug)]
pub struct ConvGeom {
    pub batch: usize,
    pub filters: usize,
    pub window: Window,
}

impl ConvGeom {
    pub fn new(
        x_shape: [usize; 4],
        w_shape: [usize; 4],
        dilation: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        let [n, c, h, w] = x_shape;
        let [f, wc, kh, kw] = w_shape;
        if c != wc {
            return Err(Error::shape(format!(
                "input has {c} channels but kernel expects {wc}"
            )));
        }
        if kh != kw {
            return Err(Error::shape("kernels must be square"));
        }
        let pad = padding.amount(kh, dilation);
        let window = Window::new(c, (h, w), kh, dilation, stride, pad)?;
        Ok(Self {
            batch: n,
            filters: f,
            window,
        })
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [self.batch, self.filters, self.window.out_h, self.window.out_w]
    }
}

pub fn conv2d_forward<T: Scalar>(g: &ConvGeom, x: &[T], w: &[T], b: Option<&[T]>) -> Vec<T> {
    let win = &g.window;
    let (rows, cols) = (win.rows(), win.cols());
    let in_len = win.channels * win.height * win.width;
    let out_len = g.filters * cols;
    let mut out = vec![T::zero(); g.batch * out_len];
    let mut buf = vec![T::zero(); rows * cols];
    for n in 0..g.batch {
        win.im2col(&x[n * in_len..][..in_len], &mut buf);
        let y = &mut out[n * out_len..][..out_len];
        if let Some(b) = b {
            for (f, plane) in y.chunks_mut(cols).enumerate() {
                plane.fill(b[f]);
            }
        }
        T::gemm(g.filters, rows, cols, w, false, &buf, false, y, T::one());
    }
    out
}

/// Returns `(dx, dw, db)`; `dx` is only computed when requested.
pub fn conv2d_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    dy: &[T],
    need_dx: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let win = &g.window;
    let (rows, cols) = (win.rows(), win.cols());
    let in_len = win.channels * win.height * win.width;
    let out_len = g.filters * cols;
    let mut dw = vec![T::zero(); g.filters * rows];
    let mut db = vec![T::zero(); g.filters];
    let mut dx = need_dx.then(|| vec![T::zero(); x.len()]);
    let mut buf = vec![T::zero(); rows * cols];
    for n in 0..g.batch {
        let dyn_ = &dy[n * out_len..][..out_len];
        for (f, plane) in dyn_.chunks(cols).enumerate() {
            db[f] = db[f] + plane.iter().copied().sum::<T>();
        }
        win.im2col(&x[n * in_len..][..in_len], &mut buf);
        T::gemm(g.filters, cols, rows, dyn_, false, &buf, true, &mut dw, T::one());
        if let Some(dx) = dx.as_mut() {
            T::gemm(rows, g.filters, cols, w, true, dyn_, false, &mut buf, T::zero());
            win.col2im(&buf, &mut dx[n * in_len..][..in_len]);
        }
    }
    (dx, dw, db)
}

/// Geometry of a transposed convolution: input `N x C x H x W`, kernel
/// `C x F x k x k`, output `N x F x ((H-1)s+k) x ((W-1)s+k)`.
#[derive(Clone, Copy, Debug)]
pub struct ConvTransposeGeom {
    pub batch: usize,
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    /// Window over the *output* image; its `out_h x out_w` equals the input extent.
    pub window: Window,
}

impl ConvTransposeGeom {
    pub fn new(x_shape: [usize; 4], w_shape: [usize; 4], stride: usize) -> Result<Self> {
        let [n, c, h, w] = x_shape;
        let [wc, f, kh, kw] = w_shape;
        if c != wc {
            return Err(Error::shape(format!(
                "input has {c} channels but transposed kernel expects {wc}"
            )));
        }
        if kh != kw {
            return Err(Error::shape("kernels must be square"));
        }
        if stride == 0 {
            return Err(Error::invalid("stride must be >= 1"));
        }
        let out = ((h - 1) * stride + kh, (w - 1) * stride + kw);
        let window = Window::new(f, out, kh, 1, stride, 0)?;
        debug_assert_eq!((window.out_h, window.out_w), (h, w));
        Ok(Self {
            batch: n,
            in_channels: c,
            in_h: h,
            in_w: w,
            window,
        })
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [self.batch, self.window.channels, self.window.height, self.window.width]
    }
}

pub fn conv_transpose_forward<T: Scalar>(
    g: &ConvTransposeGeom,
    x: &[T],
    w: &[T],
    b: Option<&[T]>,
) -> Vec<T> {
    let win = &g.window;
    let (rows, cols) = (win.rows(), win.cols());
    let in_len = g.in_channels * cols;
    let out_plane = win.height * win.width;
    let out_len = win.channels * out_plane;
    let mut out = vec![T::zero(); g.batch * out_len];
    let mut buf = vec![T::zero(); rows * cols];
    for n in 0..g.batch {
        T::gemm(rows, g.in_channels, cols, w, true, &x[n * in_len..][..in_len], false, &mut buf, T::zero());
        let y = &mut out[n * out_len..][..out_len];
        if let Some(b) = b {
            for (f, plane) in y.chunks_mut(out_plane).enumerate() {
                plane.fill(b[f]);
            }
        }
        win.col2im(&buf, y);
    }
    out
}

pub fn conv_transpose_backward<T: Scalar>(
    g: &ConvTransposeGeom,
    x: &[T],
    w: &[T],
    dy: &[T],
    need_dx: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let win = &g.window;
    let (rows, cols) = (win.rows(), win.cols());
    let in_len = g.in_channels * cols;
    let out_plane = win.height * win.width;
    let out_len = win.channels * out_plane;
    let mut dw = vec![T::zero(); g.in_channels * rows];
    let mut db = vec![T::zero(); win.channels];
    let mut dx = need_dx.then(|| vec![T::zero(); x.len()]);
    let mut buf = vec![T::zero(); rows * cols];
    for n in 0..g.batch {
        let dyn_ = &dy[n * out_len..][..out_len];
        for (f, plane) in dyn_.chunks(out_plane).enumerate() {
            db[f] = db[f] + plane.iter().copied().sum::<T>();
        }
        win.im2col(dyn_, &mut buf);
        let xn = &x[n * in_len..][..in_len];
        T::gemm(g.in_channels, cols, rows, xn, false, &buf, true, &mut dw, T::one());
        if let Some(dx) = dx.as_mut() {
            T::gemm(g.in_channels, rows, cols, w, false, &buf, false, &mut dx[n * in_len..][..in_len], T::zero());
        }
    }
    (dx, dw, db)
}

/// 2x2 max pooling with stride 2. Returns output values and the flat input
/// index of each maximum.
pub fn maxpool2_forward<T: Scalar>(shape: [usize; 4], x: &[T]) -> Result<(Vec<T>, Vec<usize>)> {
    let [n, c, h, w] = shape;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!("max pooling needs even extents, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + 2 * i * w + 2 * j;
                for idx in [best + 1, best + w, best + w + 1] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    Ok((out, arg))
}

/// Per-channel batch statistics: `(mean, biased variance)`.
pub fn channel_stats<T: Scalar>(shape: [usize; 4], x: &[T]) -> (Vec<T>, Vec<T>) {
    let [n, c, h, w] = shape;
    let plane = h * w;
    let count = T::from_usize(n * plane).unwrap();
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut s = T::zero();
        for b in 0..n {
            s = s + x[(b * c + ch) * plane..][..plane].iter().copied().sum::<T>();
        }
        let m = s / count;
        let mut v = T::zero();
        for b in 0..n {
            for &val in &x[(b * c + ch) * plane..][..plane] {
                let d = val - m;
                v = v + d * d;
            }
        }
        mean[ch] = m;
        var[ch] = v / count;
    }
    (mean, var)
}

/// Copies the window `[top, top+h) x [left, left+w)` of every plane.
pub fn crop_forward<T: Scalar>(
    shape: [usize; 4],
    x: &[T],
    top: usize,
    left: usize,
    h: usize,
    w: usize,
) -> Vec<T> {
    let [n, c, ih, iw] = shape;
    let mut out = Vec::with_capacity(n * c * h * w);
    for plane in 0..n * c {
        for i in 0..h {
            out.extend_from_slice(&x[plane * ih * iw + (top + i) * iw + left..][..w]);
        }
    }
    out
}

pub fn crop_backward_into<T: Scalar>(
    shape: [usize; 4],
    dy: &[T],
    dx: &mut [T],
    top: usize,
    left: usize,
    h: usize,
    w: usize,
) {
    let [n, c, ih, iw] = shape;
    for plane in 0..n * c {
        for i in 0..h {
            let dst = &mut dx[plane * ih * iw + (top + i) * iw + left..][..w];
            for (d, &g) in dst.iter_mut().zip(&dy[(plane * h + i) * w..][..w]) {
                *d = *d + g;
            }
        }
    }
}

fn clip<T: Scalar>(p: T, eps: T) -> T {
    p.max(eps).min(T::one() - eps)
}

/// Mean binary cross-entropy, `-(1/n) sum y log p + (1-y) log(1-p)`, with
/// `p` clipped to `[eps, 1-eps]`.
pub fn bce<T: Scalar>(p: &[T], y: &[T], eps: T) -> T {
    let n = T::from_usize(p.len()).unwrap();
    let s: T = p
        .iter()
        .zip(y)
        .map(|(&p, &y)| {
            let p = clip(p, eps);
            y * p.ln() + (T::one() - y) * (T::one() - p).ln()
        })
        .sum();
    -s / n
}

pub fn bce_grad<T: Scalar>(p: &[T], y: &[T], eps: T) -> Vec<T> {
    let n = T::from_usize(p.len()).unwrap();
    p.iter()
        .zip(y)
        .map(|(&p, &y)| {
            if p < eps || p > T::one() - eps {
                T::zero()
            } else {
                (p - y) / (p * (T::one() - p)) / n
            }
        })
        .collect()
}

/// Soft Dice coefficient `(2 sum p y + s) / (sum p + sum y + s)`.
pub fn dice<T: Scalar>(p: &[T], y: &[T], smooth: T) -> T {
    let (num, den) = dice_terms(p, y, smooth);
    num / den
}

fn dice_terms<T: Scalar>(p: &[T], y: &[T], smooth: T) -> (T, T) {
    let two = T::lit(2.0);
    let inter: T = p.iter().zip(y).map(|(&a, &b)| a * b).sum();
    let sp: T = p.iter().copied().sum();
    let sy: T = y.iter().copied().sum();
    (two * inter + smooth, sp + sy + smooth)
}

pub fn dice_grad<T: Scalar>(p: &[T], y: &[T], smooth: T) -> Vec<T> {
    let (num, den) = dice_terms(p, y, smooth);
    let two = T::lit(2.0);
    y.iter().map(|&y| (two * y * den - num) / (den * den)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_shape_law() {
        let w = Window::new(1, (128, 128), 3, 1, 1, 0).unwrap();
        assert_eq!(w.out_h, 126);
        let w = Window::new(1, (128, 128), 3, 2, 1, 0).unwrap();
        assert_eq!(w.out_h, 124);
        assert!(Window::new(1, (4, 4), 3, 2, 1, 0).is_err());
        let w = Window::new(1, (9, 9), 3, 4, 1, Padding::Same.amount(3, 4)).unwrap();
        assert_eq!(w.out_h, 9);
    }

    #[test]
    fn im2col_and_col2im_are_adjoint() {
        let win = Window::new(2, (5, 6), 3, 2, 1, 1).unwrap();
        let x: Vec<f64> = (0..60).map(|i| (i as f64 * 0.37).sin()).collect();
        let c: Vec<f64> = (0..win.rows() * win.cols()).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut cols = vec![0.0; c.len()];
        win.im2col(&x, &mut cols);
        let mut back = vec![0.0; x.len()];
        win.col2im(&c, &mut back);
        let lhs: f64 = cols.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn dice_hand_fixture() {
        let d = dice(&[1.0, 1.0, 0.0, 0.0], &[1.0, 0.0, 0.0, 0.0], 0.0);
        assert!((d - 2.0 / 3.0f64).abs() < 1e-15);
    }

    #[test]
    fn bce_of_half_is_ln2() {
        let l = bce(&[0.5f64; 16], &[1.0; 16], 1e-7);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }
}
