//! Synthetic phantoms and desk-scale datasets.
//!
//! The pipeline is verified on constructed images whose ground truth is known
//! by geometry: denoising phantoms, multiplicative bias phantoms, head
//! phantoms for skull stripping, and a four-class shape dataset for training
//! the classifier end to end.

use crate::image::{Image, Mask};
use crate::rng::DetRng;

/// Piecewise-constant geometric phantom (background 0.2, disk 0.5,
/// rectangle 0.8) used for denoiser comparisons.
pub fn denoise_phantom(width: usize, height: usize) -> Image {
    let (w, h) = (width as f64, height as f64);
    Image::from_fn(width, height, |x, y| {
        let (xf, yf) = (x as f64, y as f64);
        let dx = xf - 0.35 * w;
        let dy = yf - 0.4 * h;
        if (dx * dx + dy * dy).sqrt() < 0.22 * w.min(h) {
            0.5
        } else if xf > 0.55 * w && xf < 0.9 * w && yf > 0.5 * h && yf < 0.85 * h {
            0.8
        } else {
            0.2
        }
    })
    .expect("valid phantom dimensions")
}

/// Add seeded Gaussian noise and clamp back to [0, 1].
pub fn add_gaussian_noise(image: &Image, sigma: f64, seed: u64) -> Image {
    let mut rng = DetRng::new(seed);
    image
        .map(|v| (v + sigma * rng.normal()).clamp(0.0, 1.0))
        .expect("clamped values are finite")
}

/// Two-tissue phantom with a known multiplicative bias field.
///
/// Returns `(biased, clean, true_log_field, mask)` where
/// `biased = clean · exp(true_log_field)` with
/// `true_log_field = amplitude · sin(πx/W) · sin(πy/H)`, tissue intensities
/// 0.4 / 0.8, and a full-frame mask.
pub fn bias_phantom(width: usize, height: usize, amplitude: f64) -> (Image, Image, Image, Mask) {
    let (w, h) = (width as f64, height as f64);
    let clean = Image::from_fn(width, height, |x, y| {
        // Inner disk is the dark tissue, surround is the bright tissue.
        let dx = x as f64 - 0.5 * w;
        let dy = y as f64 - 0.5 * h;
        if (dx * dx + dy * dy).sqrt() < 0.27 * w.min(h) {
            0.4
        } else {
            0.8
        }
    })
    .expect("valid phantom dimensions");
    let log_field = Image::from_fn(width, height, |x, y| {
        amplitude
            * (std::f64::consts::PI * x as f64 / w).sin()
            * (std::f64::consts::PI * y as f64 / h).sin()
    })
    .expect("valid phantom dimensions");
    let biased = Image::new(
        width,
        height,
        clean
            .pixels()
            .iter()
            .zip(log_field.pixels())
            .map(|(c, f)| c * f.exp())
            .collect(),
    )
    .expect("field is finite");
    let mask = Mask::filled(width, height, true);
    (biased, clean, log_field, mask)
}

/// Tissue membership of the bias phantom, for per-tissue statistics.
pub fn bias_phantom_tissues(clean: &Image) -> (Mask, Mask) {
    let dark = Mask::from_fn(clean.width(), clean.height(), |x, y| clean.get(x, y) < 0.6);
    let bright = Mask::from_fn(clean.width(), clean.height(), |x, y| clean.get(x, y) >= 0.6);
    (dark, bright)
}

/// Synthetic head slice: a bright brain disk inside a thin bright skull
/// annulus on black background, with dark holes punched into the brain.
#[derive(Debug, Clone)]
pub struct HeadPhantom {
    pub image: Image,
    /// Ground-truth brain region (the full disk, holes filled).
    pub brain: Mask,
    /// Pixels punched out of the brain.
    pub hole_pixels: usize,
}

pub fn head_phantom(size: usize, seed: u64) -> HeadPhantom {
    let mut rng = DetRng::new(seed);
    let c = size as f64 / 2.0;
    let brain_r = c * rng.range_f64(0.56, 0.66);
    let gap = rng.range_f64(4.0, 7.0);
    let skull_thickness = rng.range_f64(3.0, 5.0);
    let skull_inner = brain_r + gap;
    let skull_outer = skull_inner + skull_thickness;

    // Holes strictly inside the brain so closing can recover them.
    let n_holes = 3 + rng.next_below(4) as usize;
    let holes: Vec<(f64, f64, f64)> = (0..n_holes)
        .map(|_| {
            let hr = rng.range_f64(2.0, 4.0);
            let max_offset = brain_r - hr - 6.0;
            let angle = rng.range_f64(0.0, std::f64::consts::TAU);
            let dist = rng.range_f64(0.0, max_offset);
            (c + dist * angle.cos(), c + dist * angle.sin(), hr)
        })
        .collect();

    let mut hole_pixels = 0usize;
    let image = Image::from_fn(size, size, |x, y| {
        let dx = x as f64 - c;
        let dy = y as f64 - c;
        let r = (dx * dx + dy * dy).sqrt();
        if r < brain_r {
            let in_hole = holes
                .iter()
                .any(|&(hx, hy, hr)| {
                    let ddx = x as f64 - hx;
                    let ddy = y as f64 - hy;
                    (ddx * ddx + ddy * ddy).sqrt() < hr
                });
            if in_hole {
                hole_pixels += 1;
                0.0
            } else {
                0.7
            }
        } else if r >= skull_inner && r < skull_outer {
            0.9
        } else {
            0.0
        }
    })
    .expect("valid phantom dimensions");
    let brain = Mask::from_fn(size, size, |x, y| {
        let dx = x as f64 - c;
        let dy = y as f64 - c;
        (dx * dx + dy * dy).sqrt() < brain_r
    });
    HeadPhantom {
        image,
        brain,
        hole_pixels,
    }
}

/// Smooth band-limited phantom for resampling-loss measurements.
pub fn smooth_phantom(width: usize, height: usize) -> Image {
    let (w, h) = (width as f64, height as f64);
    Image::from_fn(width, height, |x, y| {
        let u = x as f64 / w;
        let v = y as f64 / h;
        0.5 + 0.35 * (std::f64::consts::TAU * u).sin() * (std::f64::consts::TAU * v).cos()
    })
    .expect("valid phantom dimensions")
}

/// Rendering style for the shape dataset; the outline style doubles as a
/// source task for transfer experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeStyle {
    Filled,
    Outline,
}

/// Class names for the four shapes, index-aligned with labels.
pub const SHAPE_CLASSES: [&str; 4] = ["circle", "square", "cross", "ring"];

fn inside_shape(class: usize, dx: f64, dy: f64, r: f64) -> bool {
    match class {
        0 => dx * dx + dy * dy <= r * r,
        1 => dx.abs() <= 0.9 * r && dy.abs() <= 0.9 * r,
        2 => (dx.abs() <= 0.38 * r && dy.abs() <= r) || (dy.abs() <= 0.38 * r && dx.abs() <= r),
        _ => {
            let d = (dx * dx + dy * dy).sqrt();
            d <= r && d >= 0.55 * r
        }
    }
}

/// Render one shape sample. Deterministic in (class, style, seed, index).
pub fn shape_sample(class: usize, size: usize, style: ShapeStyle, seed: u64, index: u64) -> Image {
    let mut rng = DetRng::from_seed_index(seed, (class as u64) << 32 | index);
    let c = size as f64 / 2.0;
    let cx = c + rng.range_f64(-0.1, 0.1) * size as f64;
    let cy = c + rng.range_f64(-0.1, 0.1) * size as f64;
    let r = size as f64 * rng.range_f64(0.18, 0.30);
    let fg = rng.range_f64(0.6, 0.95);
    let bg = rng.range_f64(0.05, 0.15);
    let noise = 0.03;
    let stroke_scale = r / (r - 4.0);
    Image::from_fn(size, size, |x, y| {
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        let inside = match style {
            ShapeStyle::Filled => inside_shape(class, dx, dy, r),
            ShapeStyle::Outline => {
                inside_shape(class, dx, dy, r) && !inside_shape(class, dx * stroke_scale, dy * stroke_scale, r)
            }
        };
        let base = if inside { fg } else { bg };
        (base + noise * rng.normal()).clamp(0.0, 1.0)
    })
    .expect("valid sample dimensions")
}

/// Class-major labeled dataset of `per_class` samples per shape class.
pub fn shapes_dataset(per_class: usize, size: usize, style: ShapeStyle, seed: u64) -> Vec<(Image, usize)> {
    let mut out = Vec::with_capacity(4 * per_class);
    for class in 0..4 {
        for index in 0..per_class {
            out.push((shape_sample(class, size, style, seed, index as u64), class));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn head_phantom_is_reproducible_with_holes() {
        let a = head_phantom(150, 3);
        let b = head_phantom(150, 3);
        assert_eq!(a.image, b.image);
        assert!(a.hole_pixels > 0);
        assert!(a.brain.count_set() > 4000);
    }

    #[test]
    fn bias_phantom_composition() {
        let (biased, clean, log_field, _) = bias_phantom(64, 64, 0.3);
        for i in 0..biased.pixels().len() {
            let expect = clean.pixels()[i] * log_field.pixels()[i].exp();
            assert!((biased.pixels()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_samples_are_deterministic_and_distinct() {
        let a = shape_sample(0, 64, ShapeStyle::Filled, 9, 0);
        let b = shape_sample(0, 64, ShapeStyle::Filled, 9, 0);
        assert_eq!(a, b);
        let c = shape_sample(0, 64, ShapeStyle::Filled, 9, 1);
        assert_ne!(a, c);
    }

    #[test]
    fn shapes_dataset_layout() {
        let data = shapes_dataset(3, 32, ShapeStyle::Outline, 1);
        assert_eq!(data.len(), 12);
        assert_eq!(data.iter().filter(|(_, label)| *label == 2).count(), 3);
    }
}

/// Mixed-style labeled dataset: alternating outline and filled renderings.
/// Serves as a broader source task for transfer experiments.
pub fn mixed_shapes_dataset(per_class: usize, size: usize, seed: u64) -> Vec<(Image, usize)> {
    let mut out = Vec::with_capacity(4 * per_class);
    for class in 0..4 {
        for index in 0..per_class {
            let style = if index % 2 == 0 {
                ShapeStyle::Outline
            } else {
                ShapeStyle::Filled
            };
            out.push((shape_sample(class, size, style, seed, index as u64), class));
        }
    }
    out
}
