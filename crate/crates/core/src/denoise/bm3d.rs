//! Block-matching and 3-D collaborative filtering.
//!
//! Two full stages: hard thresholding on the noisy input, then empirical
//! Wiener shrinkage steered by the stage-1 estimate. Blocks are transformed
//! with an orthonormal 2-D DCT-II and the group axis with an orthonormal
//! Haar wavelet, so coefficient noise keeps the input sigma and Parseval
//! holds exactly.

use crate::error::{Error, Result};
use crate::image::Image;

/// BM3D tuning profile. Match thresholds are per-pixel squared distances on
/// the classic 0..255 intensity scale; they are divided by 255² internally to
/// compare against [0, 1] data.
#[derive(Debug, Clone)]
pub struct Bm3dProfile {
    /// Square block side; one of {4, 8, 16}.
    pub block_size: usize,
    /// Odd search-window side, strictly larger than the block.
    pub search_window: usize,
    /// Upper bound on blocks per group; a power of two.
    pub max_group_size: usize,
    /// Stride between reference blocks.
    pub step: usize,
    pub match_threshold_stage1: f64,
    pub match_threshold_stage2: f64,
    /// λ in the hard threshold λ·σ.
    pub hard_threshold_multiplier: f64,
    /// Noise standard deviation in [0, 1] intensity units.
    pub sigma: f64,
}

impl Default for Bm3dProfile {
    fn default() -> Self {
        Bm3dProfile {
            block_size: 8,
            search_window: 39,
            max_group_size: 16,
            step: 3,
            match_threshold_stage1: 2500.0,
            match_threshold_stage2: 400.0,
            hard_threshold_multiplier: 2.7,
            sigma: 25.0 / 255.0,
        }
    }
}

impl Bm3dProfile {
    fn validate(&self) -> Result<()> {
        if ![4, 8, 16].contains(&self.block_size) {
            return Err(Error::InvalidArgument(format!(
                "block_size must be 4, 8 or 16, got {}",
                self.block_size
            )));
        }
        if self.search_window.is_multiple_of(2) || self.search_window <= self.block_size {
            return Err(Error::InvalidArgument(format!(
                "search_window must be odd and larger than the block, got {}",
                self.search_window
            )));
        }
        if self.max_group_size == 0 || !self.max_group_size.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "max_group_size must be a power of two, got {}",
                self.max_group_size
            )));
        }
        if self.step == 0 {
            return Err(Error::InvalidArgument("step must be at least 1".into()));
        }
        Ok(())
    }

    fn check_image(&self, image: &Image) -> Result<()> {
        if image.width() < self.block_size || image.height() < self.block_size {
            return Err(Error::InvalidArgument(format!(
                "image {}x{} smaller than block size {}",
                image.width(),
                image.height(),
                self.block_size
            )));
        }
        Ok(())
    }
}

/// One matched block: top-left coordinates plus the per-pixel squared
/// distance to the reference (in [0, 1]² units).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockMatch {
    pub x: usize,
    pub y: usize,
    pub distance: f64,
}

/// Find up to `max_group_size` blocks similar to the reference block at
/// `ref_top_left`, searching a window centered on it. The reference itself is
/// always first with distance 0; the rest sort ascending by distance with
/// scan-order tie-breaks.
pub fn block_match(
    image: &Image,
    ref_top_left: (usize, usize),
    profile: &Bm3dProfile,
) -> Result<Vec<BlockMatch>> {
    profile.validate()?;
    profile.check_image(image)?;
    matches_within(
        image,
        ref_top_left,
        profile,
        profile.match_threshold_stage1 / (255.0 * 255.0),
    )
}

fn matches_within(
    image: &Image,
    (rx, ry): (usize, usize),
    profile: &Bm3dProfile,
    threshold: f64,
) -> Result<Vec<BlockMatch>> {
    let bs = profile.block_size;
    let (w, h) = (image.width(), image.height());
    if rx + bs > w || ry + bs > h {
        return Err(Error::InvalidArgument(format!(
            "reference block at ({rx}, {ry}) exceeds {w}x{h} image"
        )));
    }
    let reach = (profile.search_window - bs) / 2;
    let x_lo = rx.saturating_sub(reach);
    let x_hi = (rx + reach).min(w - bs);
    let y_lo = ry.saturating_sub(reach);
    let y_hi = (ry + reach).min(h - bs);

    let inv_area = 1.0 / (bs * bs) as f64;
    let mut found = Vec::new();
    for y in y_lo..=y_hi {
        for x in x_lo..=x_hi {
            let mut dist = 0.0;
            for row in 0..bs {
                let a = &image.row(ry + row)[rx..rx + bs];
                let b = &image.row(y + row)[x..x + bs];
                for (va, vb) in a.iter().zip(b) {
                    let d = va - vb;
                    dist += d * d;
                }
            }
            dist *= inv_area;
            if dist <= threshold || (x == rx && y == ry) {
                found.push(BlockMatch { x, y, distance: dist });
            }
        }
    }
    found.sort_by(|a, b| {
        let key_a = (a.distance, !(a.x == rx && a.y == ry) as u8, a.y, a.x);
        let key_b = (b.distance, !(b.x == rx && b.y == ry) as u8, b.y, b.x);
        key_a.partial_cmp(&key_b).expect("finite distances")
    });
    found.truncate(profile.max_group_size);
    Ok(found)
}

/// Orthonormal DCT-II basis matrix for size n.
fn dct_basis(n: usize) -> Vec<f64> {
    let mut basis = vec![0.0; n * n];
    for k in 0..n {
        let alpha = if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        for j in 0..n {
            basis[k * n + j] =
                alpha * (std::f64::consts::PI * (2.0 * j as f64 + 1.0) * k as f64 / (2.0 * n as f64)).cos();
        }
    }
    basis
}

/// B = C · X · Cᵀ for an n×n block (forward 2-D DCT when C is the DCT basis).
fn transform_block(block: &mut [f64], basis: &[f64], scratch: &mut [f64], n: usize, inverse: bool) {
    // rows: scratch = op(C) · X
    for k in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for m in 0..n {
                let c = if inverse { basis[m * n + k] } else { basis[k * n + m] };
                acc += c * block[m * n + j];
            }
            scratch[k * n + j] = acc;
        }
    }
    // cols: block = scratch · op(C)ᵀ
    for i in 0..n {
        for k in 0..n {
            let mut acc = 0.0;
            for m in 0..n {
                let c = if inverse { basis[m * n + k] } else { basis[k * n + m] };
                acc += scratch[i * n + m] * c;
            }
            block[i * n + k] = acc;
        }
    }
}

/// In-place orthonormal Haar analysis along a power-of-two length.
fn haar_forward(values: &mut [f64], scratch: &mut [f64]) {
    let mut len = values.len();
    while len > 1 {
        let half = len / 2;
        for i in 0..half {
            let a = values[2 * i];
            let b = values[2 * i + 1];
            scratch[i] = (a + b) * std::f64::consts::FRAC_1_SQRT_2;
            scratch[half + i] = (a - b) * std::f64::consts::FRAC_1_SQRT_2;
        }
        values[..len].copy_from_slice(&scratch[..len]);
        len = half;
    }
}

fn haar_inverse(values: &mut [f64], scratch: &mut [f64]) {
    let total = values.len();
    let mut len = 2;
    while len <= total {
        let half = len / 2;
        for i in 0..half {
            let s = values[i];
            let d = values[half + i];
            scratch[2 * i] = (s + d) * std::f64::consts::FRAC_1_SQRT_2;
            scratch[2 * i + 1] = (s - d) * std::f64::consts::FRAC_1_SQRT_2;
        }
        values[..len].copy_from_slice(&scratch[..len]);
        len *= 2;
    }
}

/// Reference-block grid: every `step` positions plus the final block so the
/// whole frame is covered.
fn reference_positions(extent: usize, block: usize, step: usize) -> Vec<usize> {
    let last = extent - block;
    let mut positions: Vec<usize> = (0..=last).step_by(step).collect();
    if *positions.last().expect("at least one position") != last {
        positions.push(last);
    }
    positions
}

struct Accumulator {
    num: Vec<f64>,
    den: Vec<f64>,
    width: usize,
}

impl Accumulator {
    fn new(width: usize, height: usize) -> Self {
        Accumulator {
            num: vec![0.0; width * height],
            den: vec![0.0; width * height],
            width,
        }
    }

    fn add_block(&mut self, x: usize, y: usize, bs: usize, values: &[f64], weight: f64) {
        for row in 0..bs {
            let base = (y + row) * self.width + x;
            for col in 0..bs {
                self.num[base + col] += weight * values[row * bs + col];
                self.den[base + col] += weight;
            }
        }
    }

    fn finish(self, fallback: &Image) -> Image {
        let pixels = self
            .num
            .iter()
            .zip(&self.den)
            .zip(fallback.pixels())
            .map(|((n, d), f)| if *d > 0.0 { n / d } else { *f })
            .collect();
        Image::new(fallback.width(), fallback.height(), pixels).expect("accumulator preserves dimensions")
    }
}

/// Extract the group's blocks into a contiguous `g × bs × bs` buffer.
fn gather_group(image: &Image, matches: &[BlockMatch], bs: usize) -> Vec<f64> {
    let mut group = Vec::with_capacity(matches.len() * bs * bs);
    for m in matches {
        for row in 0..bs {
            group.extend_from_slice(&image.row(m.y + row)[m.x..m.x + bs]);
        }
    }
    group
}

fn forward_3d(group: &mut [f64], g: usize, bs: usize, basis: &[f64], scratch: &mut [f64], column: &mut [f64]) {
    let area = bs * bs;
    for b in 0..g {
        transform_block(&mut group[b * area..(b + 1) * area], basis, scratch, bs, false);
    }
    for pos in 0..area {
        for b in 0..g {
            column[b] = group[b * area + pos];
        }
        haar_forward(&mut column[..g], scratch);
        for b in 0..g {
            group[b * area + pos] = column[b];
        }
    }
}

fn inverse_3d(group: &mut [f64], g: usize, bs: usize, basis: &[f64], scratch: &mut [f64], column: &mut [f64]) {
    let area = bs * bs;
    for pos in 0..area {
        for b in 0..g {
            column[b] = group[b * area + pos];
        }
        haar_inverse(&mut column[..g], scratch);
        for b in 0..g {
            group[b * area + pos] = column[b];
        }
    }
    for b in 0..g {
        transform_block(&mut group[b * area..(b + 1) * area], basis, scratch, bs, true);
    }
}

/// Full two-stage BM3D denoiser. Output dimensions equal input dimensions.
pub fn bm3d(noisy: &Image, profile: &Bm3dProfile) -> Result<Image> {
    profile.validate()?;
    profile.check_image(noisy)?;
    if profile.sigma <= 0.0 || !profile.sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "bm3d needs sigma > 0, got {}",
            profile.sigma
        )));
    }

    let bs = profile.block_size;
    let area = bs * bs;
    let basis = dct_basis(bs);
    let mut scratch = vec![0.0; area.max(profile.max_group_size)];
    let mut column = vec![0.0; profile.max_group_size];
    let xs = reference_positions(noisy.width(), bs, profile.step);
    let ys = reference_positions(noisy.height(), bs, profile.step);
    let hard_threshold = profile.hard_threshold_multiplier * profile.sigma;
    let sigma_sq = profile.sigma * profile.sigma;

    // Stage 1: hard thresholding in the 3-D transform domain.
    let mut acc = Accumulator::new(noisy.width(), noisy.height());
    let thr1 = profile.match_threshold_stage1 / (255.0 * 255.0);
    for &ry in &ys {
        for &rx in &xs {
            let mut matches = matches_within(noisy, (rx, ry), profile, thr1)?;
            let g = largest_power_of_two(matches.len());
            matches.truncate(g);
            let mut group = gather_group(noisy, &matches, bs);
            forward_3d(&mut group, g, bs, &basis, &mut scratch, &mut column);
            let mut retained = 0usize;
            for (idx, coeff) in group.iter_mut().enumerate() {
                // The group-DC coefficient is exempt so flat regions survive.
                if idx == 0 {
                    retained += 1;
                    continue;
                }
                if coeff.abs() < hard_threshold {
                    *coeff = 0.0;
                } else {
                    retained += 1;
                }
            }
            inverse_3d(&mut group, g, bs, &basis, &mut scratch, &mut column);
            let weight = 1.0 / retained.max(1) as f64;
            for (i, m) in matches.iter().enumerate() {
                acc.add_block(m.x, m.y, bs, &group[i * area..(i + 1) * area], weight);
            }
        }
    }
    let basic = acc.finish(noisy);

    // Stage 2: empirical Wiener shrinkage, matching on the basic estimate.
    let mut acc = Accumulator::new(noisy.width(), noisy.height());
    let thr2 = profile.match_threshold_stage2 / (255.0 * 255.0);
    for &ry in &ys {
        for &rx in &xs {
            let mut matches = matches_within(&basic, (rx, ry), profile, thr2)?;
            let g = largest_power_of_two(matches.len());
            matches.truncate(g);
            let mut group_basic = gather_group(&basic, &matches, bs);
            let mut group_noisy = gather_group(noisy, &matches, bs);
            forward_3d(&mut group_basic, g, bs, &basis, &mut scratch, &mut column);
            forward_3d(&mut group_noisy, g, bs, &basis, &mut scratch, &mut column);
            let mut wiener_energy = 0.0;
            for (idx, (out, pilot)) in group_noisy.iter_mut().zip(&group_basic).enumerate() {
                // The group-DC coefficient passes unshrunken so flat regions
                // and the global mean survive both stages exactly.
                let shrink = if idx == 0 {
                    1.0
                } else {
                    pilot * pilot / (pilot * pilot + sigma_sq)
                };
                *out *= shrink;
                wiener_energy += shrink * shrink;
            }
            inverse_3d(&mut group_noisy, g, bs, &basis, &mut scratch, &mut column);
            let weight = 1.0 / wiener_energy.max(1e-12);
            for (i, m) in matches.iter().enumerate() {
                acc.add_block(m.x, m.y, bs, &group_noisy[i * area..(i + 1) * area], weight);
            }
        }
    }
    Ok(acc.finish(noisy))
}

fn largest_power_of_two(n: usize) -> usize {
    debug_assert!(n >= 1);
    1 << (usize::BITS - 1 - n.leading_zeros())
}
