//! Skull stripping: bimodality check, Otsu thresholding, largest connected
//! component, morphological closing, and mask application.

use crate::crop::{binarize, largest_component, Connectivity};
use crate::error::{Error, Result};
use crate::image::{histogram256, Histogram, Image, Mask};

/// Outcome of the bimodality test: Otsu's between-class variance over the
/// total variance, in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BimodalityReport {
    pub is_bimodal: bool,
    pub score: f64,
}

/// Default cutoff for calling a histogram bimodal.
pub const DEFAULT_BIMODAL_CUTOFF: f64 = 0.6;

/// Default closing radius at 150x150 scale.
pub const DEFAULT_CLOSING_RADIUS: usize = 5;

fn class_stats(hist: &Histogram) -> (f64, f64, f64) {
    let total: f64 = hist.total() as f64;
    let sum: f64 = hist
        .counts()
        .iter()
        .enumerate()
        .map(|(i, &c)| i as f64 * c as f64)
        .sum();
    let mean = sum / total;
    let variance = hist
        .counts()
        .iter()
        .enumerate()
        .map(|(i, &c)| c as f64 * (i as f64 - mean) * (i as f64 - mean))
        .sum::<f64>()
        / total;
    (total, sum, variance)
}

/// Between-class variance for the split `bins <= t` vs `bins > t`.
fn between_class_variance(hist: &Histogram, t: usize, total: f64, sum: f64) -> f64 {
    let mut w0 = 0.0;
    let mut sum0 = 0.0;
    for i in 0..=t {
        w0 += hist.counts()[i] as f64;
        sum0 += i as f64 * hist.counts()[i] as f64;
    }
    let w1 = total - w0;
    if w0 == 0.0 || w1 == 0.0 {
        return 0.0;
    }
    let mu0 = sum0 / w0;
    let mu1 = (sum - sum0) / w1;
    w0 * w1 * (mu0 - mu1) * (mu0 - mu1) / (total * total)
}

/// Otsu's threshold: the bin index `t` maximizing the between-class variance
/// σ_B²(t) = ω₀ω₁(μ₀−μ₁)², ties broken by the smallest t. Foreground is
/// `bins > t`.
pub fn otsu_threshold(hist: &Histogram) -> Result<usize> {
    if hist.total() == 0 {
        return Err(Error::InvalidArgument("otsu on zero-mass histogram".into()));
    }
    if hist.nonempty_bins() < 2 {
        return Err(Error::DegenerateHistogram(
            "otsu needs at least two populated bins".into(),
        ));
    }
    let (total, sum, _) = class_stats(hist);
    // Incremental sweep over candidate thresholds.
    let mut w0 = 0.0;
    let mut sum0 = 0.0;
    let mut best_t = 0usize;
    let mut best_var = f64::NEG_INFINITY;
    for t in 0..255 {
        w0 += hist.counts()[t] as f64;
        sum0 += t as f64 * hist.counts()[t] as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let mu0 = sum0 / w0;
        let mu1 = (sum - sum0) / w1;
        let var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1) / (total * total);
        if var > best_var {
            best_var = var;
            best_t = t;
        }
    }
    Ok(best_t)
}

/// Score how well the histogram splits into two intensity classes:
/// σ_B²(t*) / σ_total². A zero-variance histogram is degenerate.
pub fn bimodality_check(hist: &Histogram, cutoff: f64) -> Result<BimodalityReport> {
    if hist.total() == 0 {
        return Err(Error::InvalidArgument("bimodality check on zero-mass histogram".into()));
    }
    let (total, sum, variance) = class_stats(hist);
    if variance == 0.0 {
        return Err(Error::DegenerateHistogram(
            "bimodality undefined for zero total variance".into(),
        ));
    }
    let t = otsu_threshold(hist)?;
    let score = (between_class_variance(hist, t, total, sum) / variance).clamp(0.0, 1.0);
    Ok(BimodalityReport {
        is_bimodal: score >= cutoff,
        score,
    })
}

/// Disk structuring element offsets for the given radius.
fn disk_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut offsets = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                offsets.push((dx, dy));
            }
        }
    }
    offsets
}

/// Morphological closing (dilation then erosion) with a disk of the given
/// radius. Computed on a padded canvas so the image frame is not a barrier:
/// the result is extensive and idempotent.
pub fn closing(mask: &Mask, radius: usize) -> Result<Mask> {
    if radius == 0 {
        return Err(Error::InvalidArgument("closing radius must be at least 1".into()));
    }
    let (w, h) = (mask.width(), mask.height());
    let pad = radius;
    let (pw, ph) = (w + 2 * pad, h + 2 * pad);
    let offsets = disk_offsets(radius);

    // Dilation on the padded canvas.
    let mut dilated = vec![false; pw * ph];
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            for &(dx, dy) in &offsets {
                let px = (x + pad) as isize + dx;
                let py = (y + pad) as isize + dy;
                dilated[py as usize * pw + px as usize] = true;
            }
        }
    }
    // Erosion back onto the original frame; outside the padded canvas the
    // dilation is known to be unset.
    let mut out = Mask::filled(w, h, false);
    for y in 0..h {
        for x in 0..w {
            let mut all = true;
            for &(dx, dy) in &offsets {
                let px = (x + pad) as isize + dx;
                let py = (y + pad) as isize + dy;
                if px < 0 || py < 0 || px >= pw as isize || py >= ph as isize {
                    all = false;
                    break;
                }
                if !dilated[py as usize * pw + px as usize] {
                    all = false;
                    break;
                }
            }
            if all {
                out.set(x, y, true);
            }
        }
    }
    Ok(out)
}

/// Result of [`strip_skull`]; `fallback` marks the not-bimodal path where the
/// input passes through unmodified under a full mask.
#[derive(Debug, Clone)]
pub struct StripResult {
    pub stripped: Image,
    pub brain: Mask,
    pub report: Option<BimodalityReport>,
    pub fallback: bool,
}

/// Extract the brain: if the intensity histogram is bimodal, threshold with
/// Otsu, keep the largest 8-connected component, close holes with a disk of
/// `closing_radius` (0 disables closing), and zero the background. Non-bimodal
/// or degenerate scans pass through with a full mask.
pub fn strip_skull(image: &Image, cutoff: f64, closing_radius: usize) -> Result<StripResult> {
    let passthrough = |report: Option<BimodalityReport>| StripResult {
        stripped: image.clone(),
        brain: Mask::filled(image.width(), image.height(), true),
        report,
        fallback: true,
    };
    let hist = histogram256(image)?;
    let report = match bimodality_check(&hist, cutoff) {
        Ok(report) => report,
        // Degenerate histograms take the not-bimodal path rather than failing.
        Err(Error::DegenerateHistogram(_)) => return Ok(passthrough(None)),
        Err(e) => return Err(e),
    };
    if !report.is_bimodal {
        return Ok(passthrough(Some(report)));
    }
    let t = otsu_threshold(&hist)?;
    // Foreground is bins > t; bin b holds round(v*255) == b, so the matching
    // continuous threshold sits half a bin above t.
    let mask = binarize(image, (t as f64 + 0.5) / 255.0);
    let component = largest_component(&mask, Connectivity::Eight);
    let brain = if closing_radius > 0 {
        closing(&component, closing_radius)?
    } else {
        component
    };
    let stripped = Image::from_fn(image.width(), image.height(), |x, y| {
        if brain.get(x, y) {
            image.get(x, y)
        } else {
            0.0
        }
    })?;
    Ok(StripResult {
        stripped,
        brain,
        report: Some(report),
        fallback: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::head_phantom;

    fn spikes(pairs: &[(usize, u64)]) -> Histogram {
        let mut counts = [0u64; 256];
        for &(bin, count) in pairs {
            counts[bin] += count;
        }
        Histogram::from_counts(counts)
    }

    /// 256-way brute force over all thresholds, smallest-t tie-break.
    fn otsu_brute_force(hist: &Histogram) -> usize {
        let total: f64 = hist.total() as f64;
        let sum: f64 = hist
            .counts()
            .iter()
            .enumerate()
            .map(|(i, &c)| i as f64 * c as f64)
            .sum();
        let mut best = (0usize, f64::NEG_INFINITY);
        for t in 0..=255 {
            let var = between_class_variance(hist, t, total, sum);
            if var > best.1 {
                best = (t, var);
            }
        }
        best.0
    }

    #[test]
    fn otsu_two_far_spikes() {
        let hist = spikes(&[(50, 100), (200, 100)]);
        assert_eq!(otsu_threshold(&hist).unwrap(), 50);
        assert_eq!(otsu_brute_force(&hist), 50);
    }

    #[test]
    fn otsu_adjacent_spikes() {
        let hist = spikes(&[(10, 1000), (11, 1000)]);
        assert_eq!(otsu_threshold(&hist).unwrap(), 10);
        assert_eq!(otsu_brute_force(&hist), 10);
    }

    #[test]
    fn otsu_single_bin_degenerate() {
        let hist = spikes(&[(42, 500)]);
        assert!(matches!(
            otsu_threshold(&hist),
            Err(Error::DegenerateHistogram(_))
        ));
    }

    #[test]
    fn otsu_matches_brute_force_on_random_histograms() {
        let mut rng = crate::rng::DetRng::new(99);
        for _ in 0..200 {
            let mut counts = [0u64; 256];
            let populated = 2 + rng.next_below(40) as usize;
            for _ in 0..populated {
                counts[rng.next_below(256) as usize] += 1 + rng.next_below(1000);
            }
            let hist = Histogram::from_counts(counts);
            if hist.nonempty_bins() < 2 {
                continue;
            }
            assert_eq!(otsu_threshold(&hist).unwrap(), otsu_brute_force(&hist));
        }
    }

    #[test]
    fn bimodality_two_deltas_scores_one() {
        let hist = spikes(&[(30, 400), (220, 400)]);
        let report = bimodality_check(&hist, 0.6).unwrap();
        assert!(report.is_bimodal);
        assert!((report.score - 1.0).abs() < 1e-9);
    }

    #[test]
    fn bimodality_uniform_matches_direct_evaluation() {
        let hist = Histogram::from_counts([4u64; 256]);
        let report = bimodality_check(&hist, 0.6).unwrap();
        // Direct oracle: evaluate sigma_B^2(t*)/sigma^2 by brute force.
        let (total, sum, variance) = class_stats(&hist);
        let t = otsu_brute_force(&hist);
        let expected = between_class_variance(&hist, t, total, sum) / variance;
        assert!((report.score - expected).abs() < 1e-12);
        // Uniform mass split in half: sigma_B^2/sigma^2 = 3/4ths-ish, above cutoff.
        assert!(report.score > 0.5 && report.score < 0.8);
    }

    #[test]
    fn bimodality_single_spike_degenerate() {
        let hist = spikes(&[(100, 50)]);
        assert!(matches!(
            bimodality_check(&hist, 0.6),
            Err(Error::DegenerateHistogram(_))
        ));
    }

    #[test]
    fn bimodality_zero_mass_is_argument_error() {
        let hist = Histogram::from_counts([0u64; 256]);
        assert!(matches!(
            bimodality_check(&hist, 0.6),
            Err(Error::InvalidArgument(_))
        ));
    }

    fn disk_mask(size: usize, cx: f64, cy: f64, r: f64) -> Mask {
        Mask::from_fn(size, size, |x, y| {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            (dx * dx + dy * dy).sqrt() < r
        })
    }

    #[test]
    fn closing_solid_disk_unchanged() {
        let mask = disk_mask(40, 20.0, 20.0, 12.0);
        let closed = closing(&mask, 3).unwrap();
        assert_eq!(closed, mask);
    }

    #[test]
    fn closing_fills_punched_hole() {
        let mut mask = Mask::from_fn(30, 30, |x, y| (4..24).contains(&x) && (4..24).contains(&y));
        let solid = mask.clone();
        for y in 13..16 {
            for x in 13..16 {
                mask.set(x, y, false);
            }
        }
        let closed = closing(&mask, 2).unwrap();
        assert_eq!(closed, solid);
    }

    #[test]
    fn closing_is_idempotent_extensive_monotone() {
        let phantom = head_phantom(80, 5);
        let mask = crate::crop::binarize(&phantom.image, 0.3);
        let once = closing(&mask, 4).unwrap();
        let twice = closing(&once, 4).unwrap();
        assert_eq!(once, twice, "idempotence");
        for (a, b) in mask.bits().iter().zip(once.bits()) {
            assert!(!a | b, "extensive: output must contain input");
        }
        // Monotone: closing of a subset stays a subset.
        let smaller = disk_mask(80, 40.0, 40.0, 10.0);
        let bigger = disk_mask(80, 40.0, 40.0, 16.0);
        let ca = closing(&smaller, 4).unwrap();
        let cb = closing(&bigger, 4).unwrap();
        for (a, b) in ca.bits().iter().zip(cb.bits()) {
            assert!(!a | b, "monotone in mask inclusion");
        }
    }

    #[test]
    fn closing_radius_zero_rejected() {
        let mask = Mask::filled(4, 4, true);
        assert!(closing(&mask, 0).is_err());
    }

    #[test]
    fn strip_skull_head_phantom_dice() {
        let phantom = head_phantom(150, 7);
        let result = strip_skull(&phantom.image, DEFAULT_BIMODAL_CUTOFF, DEFAULT_CLOSING_RADIUS).unwrap();
        assert!(!result.fallback);
        let dice = result.brain.dice(&phantom.brain);
        assert!(dice >= 0.95, "dice {dice}");
    }

    #[test]
    fn strip_skull_closing_removes_holes() {
        let phantom = head_phantom(150, 8);
        assert!(phantom.hole_pixels > 0);
        let without = strip_skull(&phantom.image, DEFAULT_BIMODAL_CUTOFF, 0).unwrap();
        let with = strip_skull(&phantom.image, DEFAULT_BIMODAL_CUTOFF, 5).unwrap();
        let holes_without = phantom
            .brain
            .bits()
            .iter()
            .zip(without.brain.bits())
            .filter(|(truth, got)| **truth && !**got)
            .count();
        let holes_with = phantom
            .brain
            .bits()
            .iter()
            .zip(with.brain.bits())
            .filter(|(truth, got)| **truth && !**got)
            .count();
        assert!(holes_without > 0, "no-closing mask should retain holes");
        assert_eq!(holes_with, 0, "closing must fill every hole");
    }

    #[test]
    fn strip_skull_uniform_passthrough() {
        let image = Image::constant(32, 32, 0.5).unwrap();
        let result = strip_skull(&image, DEFAULT_BIMODAL_CUTOFF, 5).unwrap();
        assert!(result.fallback);
        assert_eq!(result.stripped, image);
        assert_eq!(result.brain.count_set(), 32 * 32);
    }

    #[test]
    fn strip_skull_never_zeroes_inside_mask() {
        let phantom = head_phantom(120, 10);
        let result = strip_skull(&phantom.image, DEFAULT_BIMODAL_CUTOFF, 5).unwrap();
        for y in 0..120 {
            for x in 0..120 {
                if result.brain.get(x, y) {
                    assert_eq!(result.stripped.get(x, y), phantom.image.get(x, y));
                }
            }
        }
    }
}
