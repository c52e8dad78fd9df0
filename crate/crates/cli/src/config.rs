//! Pipeline configuration: a flat, sectioned key-value file, one section per
//! stage. Unknown sections or keys are rejected so typos surface as usage
//! errors instead of silently falling back to defaults.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use mriclass::augment::AugmentConfig;
use mriclass::biasfield::N4Params;
use mriclass::crop::CropParams;
use mriclass::denoise::{Bm3dProfile, TvParams};
use mriclass::error::{Error, Result};
use mriclass::image::Border;
use mriclass::nnet::TrainConfig;

/// Which denoiser the pipeline applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DenoiseMethod {
    Off,
    Gaussian,
    Tv,
    Bm3d,
}

impl DenoiseMethod {
    pub fn parse(s: &str) -> Option<DenoiseMethod> {
        match s {
            "off" | "none" => Some(DenoiseMethod::Off),
            "gaussian" => Some(DenoiseMethod::Gaussian),
            "tv" => Some(DenoiseMethod::Tv),
            "bm3d" => Some(DenoiseMethod::Bm3d),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DenoiseMethod::Off => "off",
            DenoiseMethod::Gaussian => "gaussian",
            DenoiseMethod::Tv => "tv",
            DenoiseMethod::Bm3d => "bm3d",
        }
    }
}

/// Everything `pipeline` needs: dataset location, stage toggles, and the
/// per-stage parameter blocks.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub dataset: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    pub crop_enabled: bool,
    pub bias_enabled: bool,
    pub denoise: DenoiseMethod,
    pub strip_enabled: bool,
    pub augment_enabled: bool,
    pub keep_intermediates: bool,
    pub crop: CropParams,
    pub n4: N4Params,
    pub gaussian_sigma: f64,
    pub tv: TvParams,
    pub bm3d: Bm3dProfile,
    pub bimodal_cutoff: f64,
    pub closing_radius: usize,
    pub augment: AugmentConfig,
    /// 0 means balance every class up to the largest train-split class.
    pub augment_target: usize,
    pub train: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            dataset: PathBuf::new(),
            out: PathBuf::from("out"),
            seed: 0,
            crop_enabled: true,
            bias_enabled: true,
            denoise: DenoiseMethod::Bm3d,
            strip_enabled: true,
            augment_enabled: true,
            keep_intermediates: true,
            crop: CropParams::default(),
            n4: N4Params::default(),
            gaussian_sigma: 1.0,
            tv: TvParams::default(),
            bm3d: Bm3dProfile::default(),
            bimodal_cutoff: mriclass::skullstrip::DEFAULT_BIMODAL_CUTOFF,
            closing_radius: mriclass::skullstrip::DEFAULT_CLOSING_RADIUS,
            augment: AugmentConfig::default(),
            augment_target: 0,
            train: TrainConfig::default(),
        }
    }
}

fn parse_bool(v: &str, key: &str) -> Result<bool> {
    match v {
        "true" | "on" | "1" | "yes" => Ok(true),
        "false" | "off" | "0" | "no" => Ok(false),
        _ => Err(Error::InvalidArgument(format!("{key}: expected a boolean, got {v}"))),
    }
}

fn parse_num<T: std::str::FromStr>(v: &str, key: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::InvalidArgument(format!("{key}: cannot parse {v}")))
}

/// Parse the sectioned key-value format. `#` and `;` start comments.
pub fn parse_config(text: &str) -> Result<PipelineConfig> {
    let mut sections: BTreeMap<String, Vec<(String, String)>> = BTreeMap::new();
    let mut current = String::from("pipeline");
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw
            .split(['#', ';'])
            .next()
            .unwrap_or("")
            .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            current = name.trim().to_string();
            sections.entry(current.clone()).or_default();
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::InvalidArgument(format!(
                "config line {}: expected `key = value`, got `{line}`",
                lineno + 1
            )));
        };
        sections
            .entry(current.clone())
            .or_default()
            .push((key.trim().to_string(), value.trim().to_string()));
    }

    let mut config = PipelineConfig::default();
    for (section, pairs) in &sections {
        for (key, value) in pairs {
            let qualified = format!("[{section}] {key}");
            match (section.as_str(), key.as_str()) {
                ("pipeline", "dataset") => config.dataset = PathBuf::from(value),
                ("pipeline", "out") => config.out = PathBuf::from(value),
                ("pipeline", "seed") => config.seed = parse_num(value, &qualified)?,
                ("pipeline", "crop") => config.crop_enabled = parse_bool(value, &qualified)?,
                ("pipeline", "bias") => config.bias_enabled = parse_bool(value, &qualified)?,
                ("pipeline", "denoise") => {
                    config.denoise = DenoiseMethod::parse(value).ok_or_else(|| {
                        Error::InvalidArgument(format!(
                            "{qualified}: expected off|gaussian|tv|bm3d, got {value}"
                        ))
                    })?
                }
                ("pipeline", "strip") => config.strip_enabled = parse_bool(value, &qualified)?,
                ("pipeline", "augment") => config.augment_enabled = parse_bool(value, &qualified)?,
                ("pipeline", "intermediates") => {
                    config.keep_intermediates = parse_bool(value, &qualified)?
                }
                ("crop", "threshold") => config.crop.threshold = parse_num(value, &qualified)?,
                ("crop", "blur_sigma") => config.crop.blur_sigma = parse_num(value, &qualified)?,
                ("crop", "margin") => config.crop.margin = parse_num(value, &qualified)?,
                ("crop", "out_size") => config.crop.out_size = parse_num(value, &qualified)?,
                ("bias", "max_iterations") => config.n4.max_iterations = parse_num(value, &qualified)?,
                ("bias", "convergence") => {
                    config.n4.convergence_threshold = parse_num(value, &qualified)?
                }
                ("bias", "bins") => config.n4.histogram_bins = parse_num(value, &qualified)?,
                ("bias", "fwhm") => config.n4.fwhm = parse_num(value, &qualified)?,
                ("bias", "wiener_noise") => config.n4.wiener_noise = parse_num(value, &qualified)?,
                ("bias", "smoothing_sigma") => {
                    config.n4.field_smoothing_sigma = parse_num(value, &qualified)?
                }
                ("denoise", "sigma") => {
                    let sigma: f64 = parse_num(value, &qualified)?;
                    config.gaussian_sigma = sigma;
                    config.bm3d.sigma = sigma;
                }
                ("denoise", "tv_weight") => config.tv.weight = parse_num(value, &qualified)?,
                ("denoise", "tv_iters") => config.tv.max_iters = parse_num(value, &qualified)?,
                ("denoise", "tv_tol") => config.tv.tol = parse_num(value, &qualified)?,
                ("denoise", "block_size") => config.bm3d.block_size = parse_num(value, &qualified)?,
                ("denoise", "search_window") => {
                    config.bm3d.search_window = parse_num(value, &qualified)?
                }
                ("denoise", "max_group") => config.bm3d.max_group_size = parse_num(value, &qualified)?,
                ("denoise", "step") => config.bm3d.step = parse_num(value, &qualified)?,
                ("denoise", "match_threshold1") => {
                    config.bm3d.match_threshold_stage1 = parse_num(value, &qualified)?
                }
                ("denoise", "match_threshold2") => {
                    config.bm3d.match_threshold_stage2 = parse_num(value, &qualified)?
                }
                ("denoise", "hard_threshold") => {
                    config.bm3d.hard_threshold_multiplier = parse_num(value, &qualified)?
                }
                ("strip", "bimodal_cutoff") => config.bimodal_cutoff = parse_num(value, &qualified)?,
                ("strip", "closing_radius") => config.closing_radius = parse_num(value, &qualified)?,
                ("augment", "target") => config.augment_target = parse_num(value, &qualified)?,
                ("augment", "rotation") => config.augment.rotation_range = parse_num(value, &qualified)?,
                ("augment", "width_shift") => config.augment.width_shift = parse_num(value, &qualified)?,
                ("augment", "height_shift") => {
                    config.augment.height_shift = parse_num(value, &qualified)?
                }
                ("augment", "hflip") => config.augment.hflip = parse_bool(value, &qualified)?,
                ("augment", "vflip") => config.augment.vflip = parse_bool(value, &qualified)?,
                ("augment", "fill") => {
                    config.augment.fill = match value.as_str() {
                        "zero" => Border::Zero,
                        "reflect" => Border::Reflect,
                        _ => {
                            return Err(Error::InvalidArgument(format!(
                                "{qualified}: expected zero|reflect, got {value}"
                            )))
                        }
                    }
                }
                ("train", "learning_rate") => config.train.learning_rate = parse_num(value, &qualified)?,
                ("train", "batch_size") => config.train.batch_size = parse_num(value, &qualified)?,
                ("train", "epochs") => config.train.epochs = parse_num(value, &qualified)?,
                ("train", "dropout") => config.train.dropout_rate = parse_num(value, &qualified)?,
                ("train", "patience") => config.train.plateau_patience = parse_num(value, &qualified)?,
                ("train", "factor") => config.train.plateau_factor = parse_num(value, &qualified)?,
                ("train", "min_lr") => config.train.min_lr = parse_num(value, &qualified)?,
                ("train", "val_fraction") => {
                    config.train.validation_fraction = parse_num(value, &qualified)?
                }
                _ => {
                    return Err(Error::InvalidArgument(format!("unknown config key {qualified}")));
                }
            }
        }
    }
    // The augmentation stream follows the pipeline seed unless the config
    // overrides it elsewhere.
    config.augment.seed = config.seed;
    config.train.seed = config.seed;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let config = parse_config(&text)?;
    if config.dataset.as_os_str().is_empty() {
        return Err(Error::InvalidArgument(
            "[pipeline] dataset is required in the config".into(),
        ));
    }
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_full_config() {
        let text = "\
[pipeline]
dataset = /data/mri
out = runs/exp1
seed = 9
crop = true
bias = false
denoise = tv        # comment
strip = on
augment = off

[denoise]
tv_weight = 0.25

[train]
epochs = 3
batch_size = 8
";
        let config = parse_config(text).unwrap();
        assert_eq!(config.seed, 9);
        assert!(!config.bias_enabled);
        assert_eq!(config.denoise, DenoiseMethod::Tv);
        assert!(!config.augment_enabled);
        assert_eq!(config.tv.weight, 0.25);
        assert_eq!(config.train.epochs, 3);
        assert_eq!(config.train.seed, 9);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(parse_config("[pipeline]\ntypo_key = 3\n").is_err());
        assert!(parse_config("[nonsense]\nx = 1\n").is_err());
    }

    #[test]
    fn malformed_line_rejected() {
        assert!(parse_config("[pipeline]\njust some words\n").is_err());
        assert!(parse_config("[pipeline]\ndenoise = blur3000\n").is_err());
    }
}
