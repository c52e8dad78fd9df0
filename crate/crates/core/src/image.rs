//! Canonical image representation, PGM I/O, and shared raster primitives.
//!
//! An [`Image`] is a 2-D grayscale raster of `f64` intensities in the nominal
//! range [0, 1], stored row-major. The canonical on-disk format is binary PGM
//! (P5); everything else in the pipeline goes through this type.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// 2-D grayscale raster, row-major, intensities nominally in [0, 1].
///
/// Invariants enforced at construction: `pixels.len() == width * height`,
/// both dimensions at least 1, and every intensity finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be at least 1x1, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} image needs {} pixels, got {}",
                width,
                height,
                width * height,
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite intensity {bad}")));
        }
        Ok(Image { width, height, pixels })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Image::new(width, height, vec![value; width * height])
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Image {
            width: width.max(1),
            height: height.max(1),
            pixels: vec![0.0; width.max(1) * height.max(1)],
        }
    }

    /// Build from a per-pixel function of (x, y).
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Image::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub(crate) fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub(crate) fn set(&mut self, x: usize, y: usize, v: f64) {
        self.pixels[y * self.width + x] = v;
    }

    #[inline]
    pub fn row(&self, y: usize) -> &[f64] {
        &self.pixels[y * self.width..(y + 1) * self.width]
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.pixels {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    /// Apply `f` to every intensity.
    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Result<Image> {
        Image::new(self.width, self.height, self.pixels.iter().map(|&v| f(v)).collect())
    }
}

/// Binary raster aligned to an [`Image`] (foreground membership).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} mask needs {} bits, got {}",
                width,
                height,
                width * height,
                bits.len()
            )));
        }
        Ok(Mask { width, height, bits })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Mask {
            width,
            height,
            bits: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Mask { width, height, bits }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count_set(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn same_dims_as_image(&self, image: &Image) -> bool {
        self.width == image.width() && self.height == image.height()
    }

    /// Dice overlap coefficient 2|A∩B| / (|A|+|B|).
    pub fn dice(&self, other: &Mask) -> f64 {
        let inter = self
            .bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| **a && **b)
            .count();
        let total = self.count_set() + other.count_set();
        if total == 0 {
            1.0
        } else {
            2.0 * inter as f64 / total as f64
        }
    }
}

/// 256-bin intensity histogram over the quantization `round(v * 255)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    counts: [u64; 256],
}

impl Histogram {
    pub fn from_counts(counts: [u64; 256]) -> Self {
        Histogram { counts }
    }

    pub fn counts(&self) -> &[u64; 256] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn nonempty_bins(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }
}

/// Sample depth for PGM encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn maxval(self) -> u32 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Sixteen => 65535,
        }
    }
}

/// Load a binary PGM (P5) file, scaling samples to [0, 1] by the declared maxval.
pub fn load_pgm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes)
}

/// Decode P5 bytes already in memory.
pub fn decode_pgm(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < 2 || &bytes[0..2] != b"P5" {
        return Err(Error::UnsupportedMagic);
    }
    let mut pos = 2;
    let width = read_header_number(bytes, &mut pos)? as usize;
    let height = read_header_number(bytes, &mut pos)? as usize;
    let maxval = read_header_number(bytes, &mut pos)?;
    if width == 0 || height == 0 {
        return Err(Error::MalformedHeader("zero image dimension".into()));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::MalformedHeader(format!("maxval {maxval} outside 1..=65535")));
    }
    // Single whitespace byte separates the header from the payload.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::MalformedHeader("missing whitespace after maxval".into())),
    }
    let bytes_per_sample = if maxval < 256 { 1 } else { 2 };
    let expected = width * height * bytes_per_sample;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    // Exact division so save -> load reproduces quantized values bit-for-bit.
    let maxval_f = maxval as f64;
    let mut pixels = Vec::with_capacity(width * height);
    if bytes_per_sample == 1 {
        pixels.extend(payload[..expected].iter().map(|&b| b as f64 / maxval_f));
    } else {
        for pair in payload[..expected].chunks_exact(2) {
            let sample = u16::from_be_bytes([pair[0], pair[1]]);
            if sample as u32 > maxval {
                return Err(Error::MalformedHeader(format!(
                    "sample {sample} exceeds declared maxval {maxval}"
                )));
            }
            pixels.push(sample as f64 / maxval_f);
        }
    }
    Image::new(width, height, pixels)
}

fn read_header_number(bytes: &[u8], pos: &mut usize) -> Result<u32> {
    // Skip whitespace and `#` comments between header fields.
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while let Some(&b) = bytes.get(*pos) {
                    *pos += 1;
                    if b == b'\n' {
                        break;
                    }
                }
            }
            Some(_) => break,
            None => return Err(Error::MalformedHeader("unexpected end of header".into())),
        }
    }
    let start = *pos;
    while let Some(b) = bytes.get(*pos) {
        if b.is_ascii_digit() {
            *pos += 1;
        } else {
            break;
        }
    }
    if *pos == start {
        return Err(Error::MalformedHeader("expected decimal field".into()));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::MalformedHeader("unparseable decimal field".into()))
}

/// Write `image` as binary PGM at the given depth. Intensities must be in [0, 1].
pub fn save_pgm(image: &Image, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_pgm(image, depth)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Encode to P5 bytes: nearest-integer quantization to the declared depth.
pub fn encode_pgm(image: &Image, depth: BitDepth) -> Result<Vec<u8>> {
    if let Some(&bad) = image.pixels().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::IntensityOutOfRange(bad));
    }
    let maxval = depth.maxval();
    let mut out = format!("P5\n{} {}\n{}\n", image.width(), image.height(), maxval).into_bytes();
    match depth {
        BitDepth::Eight => {
            out.extend(image.pixels().iter().map(|&v| (v * 255.0).round() as u8));
        }
        BitDepth::Sixteen => {
            for &v in image.pixels() {
                let sample = (v * 65535.0).round() as u16;
                out.extend_from_slice(&sample.to_be_bytes());
            }
        }
    }
    Ok(out)
}

/// Bilinear resize with corner-aligned sampling: output pixel `i` samples
/// input coordinate `i * (in - 1) / (out - 1)`, so same-size resize is exact.
pub fn resize_bilinear(image: &Image, out_w: usize, out_h: usize) -> Result<Image> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::InvalidArgument("resize target must be at least 1x1".into()));
    }
    let (in_w, in_h) = (image.width(), image.height());
    let scale = |out: usize, inn: usize, i: usize| -> f64 {
        if out == 1 {
            (inn - 1) as f64 / 2.0
        } else {
            i as f64 * (inn - 1) as f64 / (out - 1) as f64
        }
    };
    let mut pixels = Vec::with_capacity(out_w * out_h);
    for oy in 0..out_h {
        let sy = scale(out_h, in_h, oy);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(in_h - 1);
        let fy = sy - y0 as f64;
        for ox in 0..out_w {
            let sx = scale(out_w, in_w, ox);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(in_w - 1);
            let fx = sx - x0 as f64;
            let top = image.get(x0, y0) * (1.0 - fx) + image.get(x1, y0) * fx;
            let bot = image.get(x0, y1) * (1.0 - fx) + image.get(x1, y1) * fx;
            pixels.push(top * (1.0 - fy) + bot * fy);
        }
    }
    Image::new(out_w, out_h, pixels)
}

/// Border policy for convolution and filtering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Border {
    /// Mirror with edge repetition: ..., 1, 0 | 0, 1, ...
    Reflect,
    /// Out-of-frame samples read as 0.
    Zero,
}

/// Symmetric reflection of a possibly out-of-range index into [0, n).
#[inline]
pub(crate) fn reflect_index(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// Dense 2-D kernel with odd-by-odd dimensions expected by [`convolve2d`].
#[derive(Debug, Clone)]
pub struct Kernel {
    width: usize,
    height: usize,
    weights: Vec<f64>,
}

impl Kernel {
    pub fn new(width: usize, height: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} kernel needs {} weights, got {}",
                width,
                height,
                width * height,
                weights.len()
            )));
        }
        Ok(Kernel { width, height, weights })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    fn at(&self, kx: usize, ky: usize) -> f64 {
        self.weights[ky * self.width + kx]
    }
}

/// Direct 2-D convolution with the declared border policy; output dims equal
/// input dims. Kernel dimensions must be odd in both axes.
pub fn convolve2d(image: &Image, kernel: &Kernel, border: Border) -> Result<Image> {
    if kernel.width.is_multiple_of(2) || kernel.height.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "kernel dimensions must be odd, got {}x{}",
            kernel.width, kernel.height
        )));
    }
    let (w, h) = (image.width(), image.height());
    let (rx, ry) = (kernel.width as isize / 2, kernel.height as isize / 2);
    let mut pixels = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for ky in -ry..=ry {
                for kx in -rx..=rx {
                    let weight = kernel.at((kx + rx) as usize, (ky + ry) as usize);
                    let (sx, sy) = (x + kx, y + ky);
                    let sample = match border {
                        Border::Reflect => image.get(reflect_index(sx, w), reflect_index(sy, h)),
                        Border::Zero => {
                            if sx < 0 || sy < 0 || sx >= w as isize || sy >= h as isize {
                                0.0
                            } else {
                                image.get(sx as usize, sy as usize)
                            }
                        }
                    };
                    acc += weight * sample;
                }
            }
            pixels.push(acc);
        }
    }
    Image::new(w, h, pixels)
}

/// 256-bin histogram of `round(v * 255)`. Intensities must be in [0, 1].
pub fn histogram256(image: &Image) -> Result<Histogram> {
    let mut counts = [0u64; 256];
    for &v in image.pixels() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::IntensityOutOfRange(v));
        }
        counts[(v * 255.0).round() as usize] += 1;
    }
    Ok(Histogram::from_counts(counts))
}

/// Peak signal-to-noise ratio in dB with peak 1.0; identical images
/// return `f64::INFINITY`.
pub fn psnr(reference: &Image, test: &Image) -> Result<f64> {
    if !reference.same_dims(test) {
        return Err(Error::DimensionMismatch(format!(
            "psnr needs matching dimensions, got {}x{} vs {}x{}",
            reference.width(),
            reference.height(),
            test.width(),
            test.height()
        )));
    }
    let n = reference.pixels().len() as f64;
    let mse: f64 = reference
        .pixels()
        .iter()
        .zip(test.pixels())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (1.0 / mse).log10())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decode_known_2x2() {
        let bytes = b"P5\n2 2\n255\n\x00\x80\xff\x40";
        let img = decode_pgm(bytes).unwrap();
        let expected = [0.0, 128.0 / 255.0, 1.0, 64.0 / 255.0];
        for (a, b) in img.pixels().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn decode_header_with_comment() {
        let bytes = b"P5\n# a comment\n2 1\n255\n\x10\x20";
        let img = decode_pgm(bytes).unwrap();
        assert_eq!(img.width(), 2);
        assert_eq!(img.height(), 1);
    }

    #[test]
    fn truncated_payload_is_distinct_error() {
        let bytes = b"P5\n2 2\n255\n\x00\x80\xff";
        match decode_pgm(bytes) {
            Err(Error::TruncatedPayload { expected: 4, found: 3 }) => {}
            other => panic!("expected truncated payload, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_is_distinct_error() {
        assert!(matches!(decode_pgm(b"P6\n1 1\n255\n\x00"), Err(Error::UnsupportedMagic)));
    }

    #[test]
    fn malformed_header_is_distinct_error() {
        assert!(matches!(
            decode_pgm(b"P5\n2 two\n255\n\x00\x00"),
            Err(Error::MalformedHeader(_))
        ));
    }

    #[test]
    fn save_constant_half_gives_128() {
        let img = Image::constant(3, 2, 0.5).unwrap();
        let bytes = encode_pgm(&img, BitDepth::Eight).unwrap();
        let payload = &bytes[bytes.len() - 6..];
        assert!(payload.iter().all(|&b| b == 128));
    }

    #[test]
    fn out_of_range_intensity_rejected_on_save() {
        let img = Image::new(1, 1, vec![1.2]).unwrap();
        assert!(matches!(
            encode_pgm(&img, BitDepth::Eight),
            Err(Error::IntensityOutOfRange(_))
        ));
    }

    #[test]
    fn sixteen_bit_roundtrip_exact() {
        let img = Image::from_fn(7, 5, |x, y| {
            ((x * 13 + y * 101) % 65536) as f64 / 65535.0
        })
        .unwrap();
        let bytes = encode_pgm(&img, BitDepth::Sixteen).unwrap();
        let back = decode_pgm(&bytes).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn resize_same_dims_is_identity() {
        let img = Image::from_fn(9, 7, |x, y| ((x * 31 + y * 7) % 97) as f64 / 96.0).unwrap();
        let out = resize_bilinear(&img, 9, 7).unwrap();
        for (a, b) in img.pixels().iter().zip(out.pixels()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn resize_to_150_has_22500_pixels() {
        let img = Image::constant(64, 48, 0.3).unwrap();
        let out = resize_bilinear(&img, 150, 150).unwrap();
        assert_eq!(out.pixels().len(), 22500);
    }

    #[test]
    fn resize_2x1_to_3x1_hand_values() {
        let img = Image::new(2, 1, vec![0.0, 1.0]).unwrap();
        let out = resize_bilinear(&img, 3, 1).unwrap();
        let expected = [0.0, 0.5, 1.0];
        for (a, b) in out.pixels().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn convolve_delta_kernel_identity() {
        let img = Image::from_fn(5, 4, |x, y| (x + y) as f64 / 10.0).unwrap();
        let kernel = Kernel::new(1, 1, vec![1.0]).unwrap();
        let out = convolve2d(&img, &kernel, Border::Reflect).unwrap();
        assert_eq!(img, out);
    }

    #[test]
    fn convolve_even_kernel_rejected() {
        let img = Image::constant(4, 4, 0.5).unwrap();
        let kernel = Kernel::new(2, 1, vec![0.5, 0.5]).unwrap();
        assert!(matches!(
            convolve2d(&img, &kernel, Border::Reflect),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn convolve_box_center_is_mean() {
        let vals: Vec<f64> = (1..=9).map(|v| v as f64 / 10.0).collect();
        let img = Image::new(3, 3, vals.clone()).unwrap();
        let kernel = Kernel::new(3, 3, vec![1.0 / 9.0; 9]).unwrap();
        let out = convolve2d(&img, &kernel, Border::Reflect).unwrap();
        let mean = vals.iter().sum::<f64>() / 9.0;
        assert!((out.get(1, 1) - mean).abs() < 1e-12);
    }

    #[test]
    fn histogram_extremes_and_conservation() {
        let img = Image::new(2, 1, vec![0.0, 1.0]).unwrap();
        let hist = histogram256(&img).unwrap();
        assert_eq!(hist.counts()[0], 1);
        assert_eq!(hist.counts()[255], 1);
        assert_eq!(hist.total(), 2);
    }

    #[test]
    fn histogram_range_error() {
        let img = Image::new(1, 1, vec![-0.1]).unwrap();
        assert!(matches!(histogram256(&img), Err(Error::IntensityOutOfRange(_))));
    }

    #[test]
    fn psnr_identical_is_infinite() {
        let img = Image::constant(4, 4, 0.25).unwrap();
        assert_eq!(psnr(&img, &img).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_uniform_difference_is_20db() {
        let a = Image::constant(8, 8, 0.5).unwrap();
        let b = Image::constant(8, 8, 0.6).unwrap();
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_hand_computed_2x2() {
        let a = Image::new(2, 2, vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        let b = Image::new(2, 2, vec![0.6, 0.5, 0.7, 0.5]).unwrap();
        // MSE = (0.01 + 0 + 0.04 + 0)/4 = 0.0125 -> 10*log10(80)
        let expected = 10.0 * (1.0f64 / 0.0125).log10();
        assert!((expected - 19.030899869919434).abs() < 1e-9);
        assert!((psnr(&a, &b).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn psnr_dimension_mismatch() {
        let a = Image::constant(2, 2, 0.5).unwrap();
        let b = Image::constant(3, 2, 0.5).unwrap();
        assert!(matches!(psnr(&a, &b), Err(Error::DimensionMismatch(_))));
    }

    proptest! {
        #[test]
        fn pgm_roundtrip_identity_for_quantized(values in prop::collection::vec(0u8..=255, 1..64)) {
            let len = values.len();
            let pixels: Vec<f64> = values.iter().map(|&b| b as f64 / 255.0).collect();
            let img = Image::new(len, 1, pixels).unwrap();
            let bytes = encode_pgm(&img, BitDepth::Eight).unwrap();
            let back = decode_pgm(&bytes).unwrap();
            for (a, b) in img.pixels().iter().zip(back.pixels()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn resize_stays_within_input_range(
            values in prop::collection::vec(0.0f64..=1.0, 12..48),
            out_w in 1usize..20,
            out_h in 1usize..20,
        ) {
            let w = 4;
            let h = values.len() / w;
            let img = Image::new(w, h, values[..w * h].to_vec()).unwrap();
            let (lo, hi) = img.min_max();
            let out = resize_bilinear(&img, out_w, out_h).unwrap();
            for &v in out.pixels() {
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }

        #[test]
        fn normalized_kernel_preserves_constants(weights in prop::collection::vec(0.01f64..1.0, 9)) {
            let total: f64 = weights.iter().sum();
            let normalized: Vec<f64> = weights.iter().map(|w| w / total).collect();
            let kernel = Kernel::new(3, 3, normalized).unwrap();
            let img = Image::constant(7, 5, 0.61).unwrap();
            let out = convolve2d(&img, &kernel, Border::Reflect).unwrap();
            for &v in out.pixels() {
                prop_assert!((v - 0.61).abs() < 1e-12);
            }
        }

        #[test]
        fn histogram_conserves_pixel_count(values in prop::collection::vec(0.0f64..=1.0, 1..100)) {
            let n = values.len();
            let img = Image::new(n, 1, values).unwrap();
            prop_assert_eq!(histogram256(&img).unwrap().total(), n as u64);
        }

        #[test]
        fn psnr_symmetric_and_decreasing_in_mse(d1 in 0.01f64..0.2, d2 in 0.21f64..0.5) {
            let a = Image::constant(4, 4, 0.4).unwrap();
            let b1 = Image::constant(4, 4, 0.4 + d1).unwrap();
            let b2 = Image::constant(4, 4, 0.4 + d2).unwrap();
            let p1 = psnr(&a, &b1).unwrap();
            prop_assert!((p1 - psnr(&b1, &a).unwrap()).abs() < 1e-12);
            prop_assert!(p1 > psnr(&a, &b2).unwrap());
        }
    }
}
