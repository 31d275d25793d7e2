//! 8-bit grayscale magnitude panels.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datamodel::ComplexImage;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Window {
    /// `[0, 99th percentile of |img|]`
    #[default]
    Auto,
    Fixed { lo: f64, hi: f64 },
}

/// Nearest-rank percentile of `values`, `q` in `[0, 100]`.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q / 100.0) * v.len() as f64).ceil() as usize;
    v[rank.clamp(1, v.len()) - 1]
}

/// Resolves the window to explicit `(lo, hi)` bounds for `img`.
pub fn window_bounds(img: &ComplexImage, window: Window) -> Result<(f64, f64)> {
    match window {
        Window::Fixed { lo, hi } => {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidArgument(format!("window [{lo}, {hi}] is empty")));
            }
            Ok((lo, hi))
        }
        Window::Auto => {
            let mags: Vec<f64> = img.magnitude().into_iter().filter(|v| v.is_finite()).collect();
            Ok((0.0, percentile(&mags, 99.0)))
        }
    }
}

/// Linear windowing of the magnitude to `0..=255`; a degenerate auto window maps to 0.
pub fn to_gray(img: &ComplexImage, window: Window) -> Result<Vec<u8>> {
    let (lo, hi) = window_bounds(img, window)?;
    let span = hi - lo;
    Ok(img
        .magnitude()
        .into_iter()
        .map(|m| {
            if !(span > 0.0) || m.is_nan() {
                return 0;
            }
            (255.0 * ((m - lo) / span)).round().clamp(0.0, 255.0) as u8
        })
        .collect())
}

pub fn emit_png(img: &ComplexImage, path: impl AsRef<Path>, window: Window) -> Result<()> {
    let path = path.as_ref();
    let pixels = to_gray(img, window)?;
    let file = File::create(path)?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.nx() as u32, img.ny() as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| Error::Png(format!("{}: {e}", path.display())))?;
    writer
        .write_image_data(&pixels)
        .map_err(|e| Error::Png(format!("{}: {e}", path.display())))?;
    writer.finish().map_err(|e| Error::Png(format!("{}: {e}", path.display())))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::shepp_logan;
    use num_complex::Complex64;

    fn decode(path: &Path) -> (u32, u32, Vec<u8>) {
        let dec = png::Decoder::new(std::io::BufReader::new(File::open(path).unwrap()));
        let mut reader = dec.read_info().unwrap();
        let mut buf = vec![0; reader.output_buffer_size().unwrap()];
        let info = reader.next_frame(&mut buf).unwrap();
        buf.truncate(info.buffer_size());
        (info.width, info.height, buf)
    }

    #[test]
    fn constant_image_is_uniform() {
        let img = ComplexImage::from_fn(8, 6, |_, _| Complex64::new(0.0, 3.0));
        let g = to_gray(&img, Window::Auto).unwrap();
        assert!(g.iter().all(|&v| v == g[0]));
    }

    #[test]
    fn window_endpoints() {
        let img = ComplexImage::from_real(2, 2, &[1.0, 2.0, 3.0, 5.0]).unwrap();
        let g = to_gray(&img, Window::Fixed { lo: 1.0, hi: 3.0 }).unwrap();
        assert_eq!(g, vec![0, 128, 255, 255]);
        assert!(to_gray(&img, Window::Fixed { lo: 2.0, hi: 2.0 }).is_err());
    }

    #[test]
    fn auto_window_ignores_outliers() {
        let mut v = vec![1.0; 200];
        v[0] = 1e6;
        let img = ComplexImage::from_real(10, 20, &v).unwrap();
        assert_eq!(window_bounds(&img, Window::Auto).unwrap(), (0.0, 1.0));
    }

    #[test]
    fn file_is_deterministic_and_decodes() {
        let dir = tempfile::tempdir().unwrap();
        let img = shepp_logan(24, 32).unwrap();
        let (a, b) = (dir.path().join("a.png"), dir.path().join("b.png"));
        emit_png(&img, &a, Window::Auto).unwrap();
        emit_png(&img, &b, Window::Auto).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        let (w, h, px) = decode(&a);
        assert_eq!((w, h), (32, 24));
        assert_eq!(px, to_gray(&img, Window::Auto).unwrap());
    }

    #[test]
    fn unwritable_path_errors() {
        let img = shepp_logan(16, 16).unwrap();
        assert!(emit_png(&img, "/nonexistent-dir/x.png", Window::Auto).is_err());
    }
}
