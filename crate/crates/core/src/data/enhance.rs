use crate::raster::{BinaryMask, Plane};

const SIGMA: f64 = 1.0;

/// Separable Gaussian blur, edges replicated.
pub fn gaussian_blur(img: &Plane<f32>, sigma: f64) -> Plane<f32> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let (h, w) = (img.height() as isize, img.width() as isize);
    let pass = |src: &Plane<f32>, horizontal: bool| {
        Plane::from_fn(src.width(), src.height(), |r, c| {
            let mut acc = 0.0;
            for (k, &wt) in kernel.iter().enumerate() {
                let d = k as isize - radius;
                let (rr, cc) = if horizontal {
                    (r as isize, (c as isize + d).clamp(0, w - 1))
                } else {
                    ((r as isize + d).clamp(0, h - 1), c as isize)
                };
                acc += wt * src.get(rr as usize, cc as usize) as f64;
            }
            acc as f32
        })
    };
    pass(&pass(img, true), false)
}

/// 3x3 erosion; neighbours outside the frame are ignored.
pub fn erode(mask: &BinaryMask) -> BinaryMask {
    morph(mask, true)
}

/// 3x3 dilation; neighbours outside the frame are ignored.
pub fn dilate(mask: &BinaryMask) -> BinaryMask {
    morph(mask, false)
}

fn morph(mask: &BinaryMask, erosion: bool) -> BinaryMask {
    Plane::from_fn(mask.width(), mask.height(), |r, c| {
        let mut neighbours = (-1..=1isize)
            .flat_map(|dr| (-1..=1isize).map(move |dc| (dr, dc)))
            .filter_map(|(dr, dc)| mask.get_checked(r as isize + dr, c as isize + dc));
        if erosion {
            neighbours.all(|v| v)
        } else {
            neighbours.any(|v| v)
        }
    })
}

/// Label hygiene: blur, re-binarize, erode, then close. Removes isolated
/// pixels and one-pixel spurs left by hand annotation.
pub fn enhance_mask(mask: &BinaryMask) -> BinaryMask {
    let blurred = gaussian_blur(&mask.to_f32(), SIGMA);
    let bin = blurred.map(|v| v >= 0.5);
    let eroded = erode(&bin);
    erode(&dilate(&eroded))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blur_preserves_constant_and_mass() {
        let flat = Plane::filled(9, 7, 0.25f32);
        assert!(gaussian_blur(&flat, 1.0).data().iter().all(|v| (v - 0.25).abs() < 1e-6));
        let mut dot = Plane::filled(15, 15, 0.0f32);
        dot.set(7, 7, 1.0);
        let b = gaussian_blur(&dot, 1.0);
        let total: f32 = b.data().iter().sum();
        assert!((total - 1.0).abs() < 1e-5);
        // peak of a unit impulse under a sampled sigma-1 kernel
        let g: f64 = (-3..=3).map(|i: i32| (-(i * i) as f64 / 2.0).exp()).sum();
        assert!((b.get(7, 7) as f64 - 1.0 / (g * g)).abs() < 1e-6);
    }

    #[test]
    fn isolated_pixel_is_removed() {
        let mut m = Plane::filled(9, 9, false);
        m.set(4, 4, true);
        assert!(erode(&m).is_empty_mask());
        assert!(enhance_mask(&m).is_empty_mask());
    }

    #[test]
    fn erosion_and_dilation_by_hand() {
        let m = Plane::from_fn(7, 7, |r, c| (1..=5).contains(&r) && (1..=5).contains(&c));
        let e = erode(&m);
        assert_eq!(e.count(), 9);
        assert!(e.get(3, 3) && !e.get(1, 1));
        let d = dilate(&e);
        assert_eq!(d, m);
    }
}
