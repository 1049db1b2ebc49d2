//! Single-channel rasters shared by the data, contour and spline modules.

use std::path::Path;

use image::GrayImage;

use crate::error::{Error, Result};

/// Row-major grayscale plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Copy> Plane<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if width * height != data.len() || width == 0 || height == 0 {
            return Err(Error::shape(format!(
                "{width}x{height} plane cannot hold {} values",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: T) {
        self.data[row * self.width + col] = v;
    }

    /// Bounds-checked read with signed coordinates.
    #[inline]
    pub fn get_checked(&self, row: isize, col: isize) -> Option<T> {
        (row >= 0 && col >= 0 && (row as usize) < self.height && (col as usize) < self.width)
            .then(|| self.get(row as usize, col as usize))
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Plane<U> {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Centered `size x size` window; odd margins leave the extra pixel at
    /// the bottom/right.
    pub fn center_crop(&self, height: usize, width: usize) -> Result<Self> {
        if height > self.height || width > self.width {
            return Err(Error::shape(format!(
                "cannot crop {}x{} to {height}x{width}",
                self.height, self.width
            )));
        }
        let top = (self.height - height) / 2;
        let left = (self.width - width) / 2;
        Ok(Self::from_fn(width, height, |r, c| self.get(r + top, c + left)))
    }

    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.width, self.height, |r, c| self.get(r, self.width - 1 - c))
    }
}

/// Binary mask; two-valued by construction.
pub type BinaryMask = Plane<bool>;

impl Plane<bool> {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty_mask(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    /// Foreground coordinates as `(row, col)` in raster order.
    pub fn points(&self) -> Vec<(usize, usize)> {
        let mut pts = Vec::new();
        for r in 0..self.height {
            for c in 0..self.width {
                if self.get(r, c) {
                    pts.push((r, c));
                }
            }
        }
        pts
    }

    pub fn to_f32(&self) -> Plane<f32> {
        self.map(|v| if v { 1.0 } else { 0.0 })
    }

    pub fn to_gray8(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            image::Luma([if self.get(y as usize, x as usize) { 255 } else { 0 }])
        })
    }
}

impl Plane<f32> {
    pub fn to_gray8(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let v = self.get(y as usize, x as usize).clamp(0.0, 1.0);
            image::Luma([(v * 255.0).round() as u8])
        })
    }

    pub fn from_gray8(img: &GrayImage) -> Self {
        Self::from_fn(img.width() as usize, img.height() as usize, |r, c| {
            img.get_pixel(c as u32, r as u32)[0] as f32 / 255.0
        })
    }
}

pub(crate) fn save_png(img: &GrayImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Encodes an 8-bit grayscale PNG in memory.
pub fn encode_png(img: &GrayImage) -> Vec<u8> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .expect("in-memory PNG encoding cannot fail");
    buf.into_inner()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_crop_odd_margin() {
        let p = Plane::from_fn(5, 5, |r, c| r * 10 + c);
        let q = p.center_crop(2, 2).unwrap();
        assert_eq!(q.data(), &[11, 12, 21, 22]);
        assert!(p.center_crop(6, 2).is_err());
    }

    #[test]
    fn flip_is_involution() {
        let p = Plane::from_fn(7, 3, |r, c| (r * 7 + c) as f32);
        assert_eq!(p.flip_horizontal().flip_horizontal(), p);
    }
}
