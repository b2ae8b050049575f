//! 8-bit RGB PNG in and out, and small-input padding.

use std::path::Path;

use image::{ImageFormat, RgbImage};
use plainusr::{Scalar, Tensor4};

use crate::error::{CliError, Result};

pub fn read_png<T: Scalar>(path: &Path) -> Result<Tensor4<T>> {
    let bytes = std::fs::read(path).map_err(|source| CliError::Io {
        path: path.into(),
        source,
    })?;
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Png)
        .map_err(|source| CliError::Image {
            path: path.into(),
            source,
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Tensor4::from_fn([1, 3, h, w], |[_, c, y, x]| {
        T::from_f64_lossy(f64::from(img.get_pixel(x as u32, y as u32)[c]) / 255.0)
    }))
}

/// Clamps to [0, 1], scales to 255 and rounds half away from zero.
pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_png<T: Scalar>(path: &Path, x: &Tensor4<T>) -> Result<()> {
    let s = x.shape();
    if s.n != 1 || s.c != 3 {
        return Err(CliError::Usage(format!("cannot write a {s} tensor as an RGB image")));
    }
    let img = RgbImage::from_fn(s.w as u32, s.h as u32, |px, py| {
        let (px, py) = (px as usize, py as usize);
        image::Rgb([0, 1, 2].map(|c| to_u8(x.at(0, c, py, px).as_f64())))
    });
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|source| CliError::Image {
            path: path.into(),
            source,
        })
}

/// Mirror index without repeating the edge sample; folds repeatedly for
/// pads wider than the image.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// Reflect-pads the bottom and right edges so both sides reach `min_side`.
pub fn pad_to_min<T: Scalar>(x: &Tensor4<T>, min_side: usize) -> Tensor4<T> {
    let s = x.shape();
    let (h, w) = (s.h.max(min_side), s.w.max(min_side));
    if (h, w) == (s.h, s.w) {
        return x.clone();
    }
    Tensor4::from_fn([s.n, s.c, h, w], |[n, c, y, xx]| {
        x.at(n, c, reflect(y as isize, s.h), reflect(xx as isize, s.w))
    })
}

pub fn crop<T: Scalar>(x: &Tensor4<T>, h: usize, w: usize) -> Tensor4<T> {
    let s = x.shape();
    if (s.h, s.w) == (h, w) {
        return x.clone();
    }
    Tensor4::from_fn([s.n, s.c, h, w], |[n, c, y, xx]| x.at(n, c, y, xx))
}
