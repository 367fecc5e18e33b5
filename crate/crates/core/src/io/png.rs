//! 8-bit RGB PNG read/write.
//!
//! Floats are quantized as `floor(clamp(v, 0, 1) · 255 + 0.5)`, i.e. rounded
//! half up; reading divides by 255, so write/read/write is lossless.

use std::path::Path;

use image::{ImageBuffer, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::image_buf::Image;

pub fn quantize(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn to_rgb8(img: &Image) -> RgbImage {
    let bytes: Vec<u8> = img.data().iter().map(|v| quantize(*v)).collect();
    ImageBuffer::<Rgb<u8>, _>::from_raw(img.width() as u32, img.height() as u32, bytes).expect("buffer sized from image")
}

pub fn from_rgb8(rgb: &RgbImage) -> Image {
    let data = rgb.as_raw().iter().map(|b| *b as f64 / 255.0).collect();
    Image::from_raw(rgb.width() as usize, rgb.height() as usize, data).expect("buffer sized from image")
}

pub fn save_png(path: &Path, img: &Image) -> Result<()> {
    to_rgb8(img).save_with_format(path, image::ImageFormat::Png).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads any PNG and converts it to 8-bit RGB.
pub fn load_png(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(from_rgb8(&img.to_rgb8()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_rounds_half_up() {
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(-0.3), 0);
        assert_eq!(quantize(7.0), 255);
        assert_eq!(quantize(0.5 / 255.0), 1);
        assert_eq!(quantize(0.49 / 255.0), 0);
        assert_eq!(quantize(127.5 / 255.0), 128);
        assert_eq!(quantize(f64::NAN), 0);
    }

    #[test]
    fn round_trip_preserves_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let img = Image::from_fn(7, 5, |x, y| [x as f64 / 6.0, y as f64 / 4.0, ((x * y) % 256) as f64 / 255.0]);
        save_png(&path, &img).unwrap();
        let back = load_png(&path).unwrap();
        assert_eq!(to_rgb8(&back), to_rgb8(&img));
        let again = dir.path().join("b.png");
        save_png(&again, &back).unwrap();
        assert_eq!(load_png(&again).unwrap(), back);
    }

    #[test]
    fn missing_file_errors() {
        assert!(load_png(Path::new("/nonexistent/x.png")).is_err());
    }
}
