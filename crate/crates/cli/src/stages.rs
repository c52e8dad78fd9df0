//! Single-stage operations shared by the subcommands and the full pipeline.
//! Every stage is a pure per-image transformation; warnings are collected,
//! never fatal.

use mriclass::biasfield::{correct_bias, estimate_bias_n4, BiasField, N4Params};
use mriclass::crop::{binarize, crop_to_brain, CropParams};
use mriclass::denoise::{bm3d, gaussian_filter, tv_denoise, Bm3dProfile, TvParams};
use mriclass::error::Result;
use mriclass::image::{histogram256, resize_bilinear, Image, Mask};
use mriclass::skullstrip::{otsu_threshold, strip_skull, StripResult};

use crate::config::{DenoiseMethod, PipelineConfig};

/// Clamp into the nominal intensity range before the next PGM write.
pub fn clamp_unit(image: &Image) -> Image {
    image
        .map(|v| v.clamp(0.0, 1.0))
        .expect("clamped intensities are finite")
}

/// Crop stage: contour crop when enabled, otherwise a plain resize to the
/// configured square. Returns the image and whether the crop fell back.
pub fn crop_stage(image: &Image, params: &CropParams, enabled: bool) -> Result<(Image, bool)> {
    if enabled {
        let result = crop_to_brain(image, params)?;
        Ok((result.image, result.fallback))
    } else {
        Ok((resize_bilinear(image, params.out_size, params.out_size)?, false))
    }
}

/// Foreground mask for bias estimation: Otsu threshold when the histogram
/// supports it, else the full frame.
pub fn bias_mask(image: &Image) -> Result<Mask> {
    let hist = histogram256(image)?;
    match otsu_threshold(&hist) {
        Ok(t) => {
            let mask = binarize(image, (t as f64 + 0.5) / 255.0);
            if mask.is_empty() {
                Ok(Mask::filled(image.width(), image.height(), true))
            } else {
                Ok(mask)
            }
        }
        Err(_) => Ok(Mask::filled(image.width(), image.height(), true)),
    }
}

/// Bias stage: estimate over the foreground and divide the field out.
pub fn bias_stage(image: &Image, params: &N4Params) -> Result<(Image, BiasField)> {
    let mask = bias_mask(image)?;
    let field = estimate_bias_n4(image, &mask, params)?;
    let corrected = correct_bias(image, &field)?;
    Ok((clamp_unit(&corrected), field))
}

/// Encode a log-field raster into [0, 1] for PGM inspection output:
/// v = (log_field + 1) / 2, clamped.
pub fn encode_log_field(field: &BiasField) -> Image {
    field
        .log_field()
        .map(|v| ((v + 1.0) / 2.0).clamp(0.0, 1.0))
        .expect("encoded field is finite")
}

pub fn denoise_stage(
    image: &Image,
    method: DenoiseMethod,
    gaussian_sigma: f64,
    tv: &TvParams,
    profile: &Bm3dProfile,
) -> Result<Image> {
    let out = match method {
        DenoiseMethod::Off => image.clone(),
        DenoiseMethod::Gaussian => gaussian_filter(image, gaussian_sigma)?,
        DenoiseMethod::Tv => tv_denoise(image, tv)?,
        DenoiseMethod::Bm3d => bm3d(image, profile)?,
    };
    Ok(clamp_unit(&out))
}

pub fn strip_stage(image: &Image, config: &PipelineConfig) -> Result<StripResult> {
    strip_skull(image, config.bimodal_cutoff, config.closing_radius)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mriclass::synth::head_phantom;

    #[test]
    fn crop_stage_disabled_is_resize() {
        let image = Image::from_fn(80, 60, |x, y| ((x + y) % 13) as f64 / 12.0).unwrap();
        let params = CropParams::default();
        let (out, fallback) = crop_stage(&image, &params, false).unwrap();
        assert!(!fallback);
        assert_eq!(out, resize_bilinear(&image, 150, 150).unwrap());
    }

    #[test]
    fn bias_mask_covers_foreground() {
        let phantom = head_phantom(100, 2);
        let mask = bias_mask(&phantom.image).unwrap();
        // All bright pixels must land in the mask.
        for y in 0..100 {
            for x in 0..100 {
                if phantom.image.get(x, y) > 0.5 {
                    assert!(mask.get(x, y));
                }
            }
        }
    }

    #[test]
    fn denoise_stage_off_is_identity() {
        let image = Image::from_fn(32, 32, |x, y| ((x * y) % 7) as f64 / 6.0).unwrap();
        let out = denoise_stage(
            &image,
            DenoiseMethod::Off,
            1.0,
            &TvParams::default(),
            &Bm3dProfile::default(),
        )
        .unwrap();
        assert_eq!(out, image);
    }
}
