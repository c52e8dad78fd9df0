//! Background removal: locate the largest foreground contour and crop the
//! scan to its extreme points, then resize to the network input size.

use crate::denoise::gaussian_filter;
use crate::error::{Error, Result};
use crate::image::{resize_bilinear, Image, Mask};

/// Pixel connectivity for component labeling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

/// Extreme points of a connected component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Extremes {
    /// Set pixel with minimal x (ties: minimal y).
    pub left: (usize, usize),
    /// Set pixel with maximal x (ties: minimal y).
    pub right: (usize, usize),
    /// Set pixel with minimal y (ties: minimal x).
    pub top: (usize, usize),
    /// Set pixel with maximal y (ties: minimal x).
    pub bottom: (usize, usize),
}

/// Threshold an image into a mask: bit set iff intensity > threshold.
pub fn binarize(image: &Image, threshold: f64) -> Mask {
    Mask::from_fn(image.width(), image.height(), |x, y| image.get(x, y) > threshold)
}

/// Keep only the connected component with the largest pixel count.
/// Ties go to the component discovered first in row-major scan order.
/// An empty mask maps to an empty mask.
pub fn largest_component(mask: &Mask, connectivity: Connectivity) -> Mask {
    let (w, h) = (mask.width(), mask.height());
    let mut labels = vec![0u32; w * h];
    let mut next_label = 1u32;
    let mut best_label = 0u32;
    let mut best_count = 0usize;
    let mut stack = Vec::new();

    for start in 0..w * h {
        if !mask.bits()[start] || labels[start] != 0 {
            continue;
        }
        let label = next_label;
        next_label += 1;
        let mut count = 0usize;
        stack.push(start);
        labels[start] = label;
        while let Some(idx) = stack.pop() {
            count += 1;
            let (x, y) = (idx % w, idx / w);
            let visit = |nx: usize, ny: usize, stack: &mut Vec<usize>, labels: &mut Vec<u32>| {
                let nidx = ny * w + nx;
                if mask.bits()[nidx] && labels[nidx] == 0 {
                    labels[nidx] = label;
                    stack.push(nidx);
                }
            };
            if x > 0 {
                visit(x - 1, y, &mut stack, &mut labels);
            }
            if x + 1 < w {
                visit(x + 1, y, &mut stack, &mut labels);
            }
            if y > 0 {
                visit(x, y - 1, &mut stack, &mut labels);
            }
            if y + 1 < h {
                visit(x, y + 1, &mut stack, &mut labels);
            }
            if let Connectivity::Eight = connectivity {
                if x > 0 && y > 0 {
                    visit(x - 1, y - 1, &mut stack, &mut labels);
                }
                if x + 1 < w && y > 0 {
                    visit(x + 1, y - 1, &mut stack, &mut labels);
                }
                if x > 0 && y + 1 < h {
                    visit(x - 1, y + 1, &mut stack, &mut labels);
                }
                if x + 1 < w && y + 1 < h {
                    visit(x + 1, y + 1, &mut stack, &mut labels);
                }
            }
        }
        if count > best_count {
            best_count = count;
            best_label = label;
        }
    }

    Mask::new(
        w,
        h,
        labels.iter().map(|&l| l != 0 && l == best_label).collect(),
    )
    .expect("label buffer matches mask dimensions")
}

/// Locate the four extreme points of a non-empty mask.
pub fn extreme_points(mask: &Mask) -> Result<Extremes> {
    let mut left: Option<(usize, usize)> = None;
    let mut right: Option<(usize, usize)> = None;
    let mut top: Option<(usize, usize)> = None;
    let mut bottom: Option<(usize, usize)> = None;
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if !mask.get(x, y) {
                continue;
            }
            // Row-major scan visits smaller y first, so strict comparisons
            // implement the smaller-other-coordinate tie-break.
            if left.is_none_or(|(lx, _)| x < lx) {
                left = Some((x, y));
            }
            if right.is_none_or(|(rx, _)| x > rx) {
                right = Some((x, y));
            }
            if top.is_none() {
                top = Some((x, y));
            }
            if bottom.is_none_or(|(_, by)| y > by) {
                bottom = Some((x, y));
            }
        }
    }
    match (left, right, top, bottom) {
        (Some(left), Some(right), Some(top), Some(bottom)) => Ok(Extremes {
            left,
            right,
            top,
            bottom,
        }),
        _ => Err(Error::EmptyRegion("extreme_points on empty mask".into())),
    }
}

/// Knobs for [`crop_to_brain`].
#[derive(Debug, Clone)]
pub struct CropParams {
    /// Binarization threshold after the pre-blur.
    pub threshold: f64,
    /// Gaussian pre-blur width in pixels.
    pub blur_sigma: f64,
    /// Extra pixels around the detected box, clamped to the frame.
    pub margin: usize,
    /// Square output side length.
    pub out_size: usize,
    pub connectivity: Connectivity,
}

impl Default for CropParams {
    fn default() -> Self {
        CropParams {
            threshold: 45.0 / 255.0,
            blur_sigma: 1.0,
            margin: 0,
            out_size: 150,
            connectivity: Connectivity::Eight,
        }
    }
}

/// Inclusive crop rectangle in source coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

/// Result of [`crop_to_brain`]; `fallback` is set when thresholding found no
/// foreground and the full frame was resized instead.
#[derive(Debug, Clone)]
pub struct CropResult {
    pub image: Image,
    pub rect: CropRect,
    pub fallback: bool,
}

/// Crop the scan to the extreme points of its largest foreground component and
/// resize to `out_size` x `out_size`. Degenerate (all-background) inputs fall
/// back to a full-frame resize rather than failing.
pub fn crop_to_brain(image: &Image, params: &CropParams) -> Result<CropResult> {
    let blurred = gaussian_filter(image, params.blur_sigma)?;
    let mask = binarize(&blurred, params.threshold);
    let component = largest_component(&mask, params.connectivity);
    let full = CropRect {
        x0: 0,
        y0: 0,
        x1: image.width() - 1,
        y1: image.height() - 1,
    };
    let (rect, fallback) = match extreme_points(&component) {
        Ok(ext) => {
            let rect = CropRect {
                x0: ext.left.0.saturating_sub(params.margin),
                y0: ext.top.1.saturating_sub(params.margin),
                x1: (ext.right.0 + params.margin).min(image.width() - 1),
                y1: (ext.bottom.1 + params.margin).min(image.height() - 1),
            };
            (rect, false)
        }
        Err(_) => (full, true),
    };
    let cropped = extract_rect(image, rect)?;
    let resized = resize_bilinear(&cropped, params.out_size, params.out_size)?;
    Ok(CropResult {
        image: resized,
        rect,
        fallback,
    })
}

fn extract_rect(image: &Image, rect: CropRect) -> Result<Image> {
    let w = rect.x1 - rect.x0 + 1;
    let h = rect.y1 - rect.y0 + 1;
    Image::from_fn(w, h, |x, y| image.get(rect.x0 + x, rect.y0 + y))
}
