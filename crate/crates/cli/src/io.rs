//! Raster ingestion. PGM is the canonical format and goes through the exact
//! decoder; JPEG/PNG come in through the `image` crate as plumbing, collapsed
//! to luminance with Rec.601 weights.

use std::path::Path;

use mriclass::error::{Error, Result};
use mriclass::image::{load_pgm, Image};

pub const SUPPORTED_EXTENSIONS: [&str; 4] = ["pgm", "jpg", "jpeg", "png"];

pub fn is_supported(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| SUPPORTED_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Load any supported raster as a grayscale [`Image`] in [0, 1].
pub fn load_image(path: &Path) -> Result<Image> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    if ext == "pgm" {
        return load_pgm(path);
    }
    let decoded = image::open(path).map_err(|e| Error::MalformedHeader(format!(
        "{}: {e}",
        path.display()
    )))?;
    let rgb = decoded.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut pixels = Vec::with_capacity(w * h);
    for p in rgb.pixels() {
        let [r, g, b] = p.0;
        // Rec.601 luma weights.
        pixels.push((0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) / 255.0);
    }
    Image::new(w, h, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mriclass::image::{save_pgm, BitDepth};

    #[test]
    fn pgm_roundtrip_through_loader() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pgm");
        let img = Image::from_fn(6, 4, |x, y| ((x + y * 6) * 997 % 65536) as f64 / 65535.0).unwrap();
        save_pgm(&img, &path, BitDepth::Sixteen).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn png_decodes_with_rec601_luma() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let mut buf = image::RgbImage::new(2, 1);
        buf.put_pixel(0, 0, image::Rgb([255, 0, 0]));
        buf.put_pixel(1, 0, image::Rgb([0, 255, 0]));
        buf.save(&path).unwrap();
        let img = load_image(&path).unwrap();
        assert!((img.get(0, 0) - 0.299).abs() < 1e-9);
        assert!((img.get(1, 0) - 0.587).abs() < 1e-9);
    }

    #[test]
    fn unsupported_extension_detected() {
        assert!(!is_supported(Path::new("scan.tiff")));
        assert!(is_supported(Path::new("scan.JPG")));
    }
}
