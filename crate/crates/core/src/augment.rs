//! Geometric data augmentation (rotation, flips, shifts) and class
//! rebalancing. Every draw is a pure function of (seed, draw index), so an
//! augmentation stream can be replayed in any order.

use crate::error::{Error, Result};
use crate::image::{reflect_index, Border, Image};
use crate::rng::DetRng;

/// Augmentation ranges and switches.
#[derive(Debug, Clone)]
pub struct AugmentConfig {
    /// Rotation bound in degrees; draws are in [-range, +range].
    pub rotation_range: f64,
    /// Horizontal shift bound as a fraction of width, in [0, 0.5].
    pub width_shift: f64,
    /// Vertical shift bound as a fraction of height, in [0, 0.5].
    pub height_shift: f64,
    pub hflip: bool,
    pub vflip: bool,
    pub fill: Border,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            rotation_range: 15.0,
            width_shift: 0.1,
            height_shift: 0.1,
            hflip: true,
            vflip: true,
            fill: Border::Zero,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=180.0).contains(&self.rotation_range) {
            return Err(Error::InvalidArgument(format!(
                "rotation_range must be in [0, 180], got {}",
                self.rotation_range
            )));
        }
        for (name, v) in [("width_shift", self.width_shift), ("height_shift", self.height_shift)] {
            if !(0.0..=0.5).contains(&v) {
                return Err(Error::InvalidArgument(format!("{name} must be in [0, 0.5], got {v}")));
            }
        }
        Ok(())
    }
}

/// Mirror about the vertical axis (exact pixel permutation).
pub fn flip_h(image: &Image) -> Image {
    Image::from_fn(image.width(), image.height(), |x, y| {
        image.get(image.width() - 1 - x, y)
    })
    .expect("permutation preserves validity")
}

/// Mirror about the horizontal axis (exact pixel permutation).
pub fn flip_v(image: &Image) -> Image {
    Image::from_fn(image.width(), image.height(), |x, y| {
        image.get(x, image.height() - 1 - y)
    })
    .expect("permutation preserves validity")
}

#[inline]
fn sample_bilinear(image: &Image, x: f64, y: f64, fill: Border) -> f64 {
    let (w, h) = (image.width(), image.height());
    match fill {
        Border::Zero => {
            // Tolerate rounding right at the frame edge (grid-aligned
            // rotations land within an ulp of integer coordinates).
            const EDGE_EPS: f64 = 1e-9;
            if x < -EDGE_EPS || y < -EDGE_EPS || x > (w - 1) as f64 + EDGE_EPS || y > (h - 1) as f64 + EDGE_EPS {
                return 0.0;
            }
            let x = x.clamp(0.0, (w - 1) as f64);
            let y = y.clamp(0.0, (h - 1) as f64);
            let x0 = x.floor() as usize;
            let y0 = y.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            let fx = x - x0 as f64;
            let fy = y - y0 as f64;
            let top = image.get(x0, y0) * (1.0 - fx) + image.get(x1, y0) * fx;
            let bot = image.get(x0, y1) * (1.0 - fx) + image.get(x1, y1) * fx;
            top * (1.0 - fy) + bot * fy
        }
        Border::Reflect => {
            let x0 = x.floor();
            let y0 = y.floor();
            let fx = x - x0;
            let fy = y - y0;
            let xi = x0 as isize;
            let yi = y0 as isize;
            let fetch = |ix: isize, iy: isize| image.get(reflect_index(ix, w), reflect_index(iy, h));
            let top = fetch(xi, yi) * (1.0 - fx) + fetch(xi + 1, yi) * fx;
            let bot = fetch(xi, yi + 1) * (1.0 - fx) + fetch(xi + 1, yi + 1) * fx;
            top * (1.0 - fy) + bot * fy
        }
    }
}

/// Rotate about the image center by `angle` degrees (counter-clockwise in
/// standard x-right/y-up terms, which is clockwise on screen coordinates)
/// with bilinear resampling; output dimensions match the input.
pub fn rotate(image: &Image, angle_degrees: f64, fill: Border) -> Image {
    if angle_degrees == 0.0 {
        return image.clone();
    }
    let theta = angle_degrees.to_radians();
    let (sin, cos) = theta.sin_cos();
    let cx = (image.width() - 1) as f64 / 2.0;
    let cy = (image.height() - 1) as f64 / 2.0;
    Image::from_fn(image.width(), image.height(), |x, y| {
        // Inverse map: rotate the output coordinate by -theta.
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        let sx = cx + cos * dx + sin * dy;
        let sy = cy - sin * dx + cos * dy;
        sample_bilinear(image, sx, sy, fill)
    })
    .expect("resampling preserves validity")
}

/// Translate by (dx·W, dy·H) pixels with bilinear sampling; positive dx moves
/// content right, positive dy moves it down.
pub fn shift(image: &Image, dx: f64, dy: f64, fill: Border) -> Result<Image> {
    if !(-0.5..=0.5).contains(&dx) || !(-0.5..=0.5).contains(&dy) {
        return Err(Error::InvalidArgument(format!(
            "shift fractions must be in [-0.5, 0.5], got ({dx}, {dy})"
        )));
    }
    let tx = dx * image.width() as f64;
    let ty = dy * image.height() as f64;
    Ok(Image::from_fn(image.width(), image.height(), |x, y| {
        sample_bilinear(image, x as f64 - tx, y as f64 - ty, fill)
    })
    .expect("resampling preserves validity"))
}

/// One deterministic augmentation draw: sample an angle, shifts, and flip
/// coins from the stream (config.seed, draw_index), then apply
/// rotate -> shift -> flips in that fixed order.
pub fn augment_sample(image: &Image, config: &AugmentConfig, draw_index: u64) -> Result<Image> {
    config.validate()?;
    let mut rng = DetRng::from_seed_index(config.seed, draw_index);
    let angle = rng.range_f64(-config.rotation_range, config.rotation_range);
    let dx = rng.range_f64(-config.width_shift, config.width_shift);
    let dy = rng.range_f64(-config.height_shift, config.height_shift);
    let do_hflip = config.hflip && rng.coin();
    let do_vflip = config.vflip && rng.coin();

    let mut out = rotate(image, angle, config.fill);
    out = shift(&out, dx, dy, config.fill)?;
    if do_hflip {
        out = flip_h(&out);
    }
    if do_vflip {
        out = flip_v(&out);
    }
    Ok(out)
}

/// The drawn parameters for a given (seed, draw_index); exposed so streams
/// can be audited without re-deriving the RNG layout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrawParams {
    pub angle: f64,
    pub dx: f64,
    pub dy: f64,
    pub hflip: bool,
    pub vflip: bool,
}

pub fn draw_params(config: &AugmentConfig, draw_index: u64) -> DrawParams {
    let mut rng = DetRng::from_seed_index(config.seed, draw_index);
    DrawParams {
        angle: rng.range_f64(-config.rotation_range, config.rotation_range),
        dx: rng.range_f64(-config.width_shift, config.width_shift),
        dy: rng.range_f64(-config.height_shift, config.height_shift),
        hflip: config.hflip && rng.coin(),
        vflip: config.vflip && rng.coin(),
    }
}

/// Synthetic-sample plan per class: `target - count` new samples each,
/// aligned with the input order. Fails if any class already exceeds `target`.
pub fn balance_classes(counts_by_class: &[usize], target: usize) -> Result<Vec<usize>> {
    if let Some(&max) = counts_by_class.iter().max() {
        if target < max {
            return Err(Error::InvalidArgument(format!(
                "target {target} below the largest class count {max}"
            )));
        }
    }
    Ok(counts_by_class.iter().map(|&c| target - c).collect())
}

/// Round-robin source assignment for the k-th synthetic sample of a class
/// with `class_count` originals.
pub fn round_robin_source(class_count: usize, k: usize) -> usize {
    k % class_count
}
