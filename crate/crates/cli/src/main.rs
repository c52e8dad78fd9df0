//! `mriclass` - brain-MRI preparation and classification pipeline.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric error.

mod config;
mod io;
mod manifest;
mod pipeline;
mod stages;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mriclass::augment::{augment_sample, AugmentConfig};
use mriclass::biasfield::N4Params;
use mriclass::crop::CropParams;
use mriclass::denoise::{Bm3dProfile, TvParams};
use mriclass::error::Error;
use mriclass::image::{psnr, resize_bilinear, save_pgm, BitDepth, Border, Image};
use mriclass::metrics::CLASS_NAMES;
use mriclass::nnet::{build_model_sized, load_checkpoint, save_checkpoint, train_with_validation, TrainConfig};

use config::DenoiseMethod;
use manifest::Split;

#[derive(Parser)]
#[command(name = "mriclass", version, about = "Brain-MRI preprocessing and tumor classification pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scan a dataset tree and write a train/val/test manifest.
    Ingest(IngestArgs),
    /// Contour-crop and bias-correct images.
    Preprocess(PreprocessArgs),
    /// Denoise images with one of the three methods.
    Denoise(DenoiseArgs),
    /// Skull-strip images (Otsu + largest component + closing).
    Strip(StripArgs),
    /// Materialize augmented training samples per the balancing plan.
    Augment(AugmentArgs),
    /// Train the classifier on a manifest's train/val splits.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a manifest split.
    Evaluate(EvaluateArgs),
    /// Classify a single image.
    Predict(PredictArgs),
    /// Run the full pipeline from a config file.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Dataset root containing glioma/, meningioma/, no_tumor/, pituitary/.
    #[arg(long)]
    root: PathBuf,
    /// Output directory for manifest.txt.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.7)]
    train_frac: f64,
    #[arg(long, default_value_t = 0.1)]
    val_frac: f64,
}

#[derive(Args)]
struct PreprocessArgs {
    /// Input file or directory (processed recursively).
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "out/preprocessed")]
    out: PathBuf,
    /// Skip the contour crop (images are still resized).
    #[arg(long)]
    no_crop: bool,
    /// Skip N4 bias correction.
    #[arg(long)]
    no_bias: bool,
    #[arg(long, default_value_t = 45.0 / 255.0)]
    crop_threshold: f64,
    #[arg(long, default_value_t = 0)]
    crop_margin: usize,
    #[arg(long, default_value_t = 150)]
    out_size: usize,
    #[arg(long, default_value_t = 50)]
    n4_iters: usize,
    #[arg(long, default_value_t = 0.001)]
    n4_conv: f64,
    #[arg(long, default_value_t = 30.0)]
    n4_sigma: f64,
}

#[derive(Args)]
struct DenoiseArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "out/denoised")]
    out: PathBuf,
    /// gaussian | tv | bm3d
    #[arg(long)]
    method: String,
    /// Noise standard deviation (gaussian blur sigma, or BM3D noise sigma).
    #[arg(long, default_value_t = 25.0 / 255.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0.1)]
    tv_weight: f64,
    #[arg(long, default_value_t = 200)]
    tv_iters: usize,
    /// Clean reference image; when given, a PSNR report is written as CSV.
    #[arg(long)]
    reference: Option<PathBuf>,
}

#[derive(Args)]
struct StripArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "out/stripped")]
    out: PathBuf,
    #[arg(long, default_value_t = mriclass::skullstrip::DEFAULT_BIMODAL_CUTOFF)]
    bimodal_cutoff: f64,
    #[arg(long, default_value_t = mriclass::skullstrip::DEFAULT_CLOSING_RADIUS)]
    closing_radius: usize,
    /// Also write the brain masks here.
    #[arg(long)]
    mask_out: Option<PathBuf>,
}

#[derive(Args)]
struct AugmentArgs {
    /// Manifest written by `ingest`.
    #[arg(long)]
    manifest: PathBuf,
    /// Directory holding the images the manifest refers to.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "out/augmented")]
    out: PathBuf,
    /// Target per-class count; 0 balances to the largest class.
    #[arg(long, default_value_t = 0)]
    target_count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 15.0)]
    rotation: f64,
    #[arg(long, default_value_t = 0.1)]
    width_shift: f64,
    #[arg(long, default_value_t = 0.1)]
    height_shift: f64,
    #[arg(long, default_value_t = true)]
    hflip: bool,
    #[arg(long, default_value_t = true)]
    vflip: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory holding the (preprocessed) images.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value_t = 3e-4)]
    learning_rate: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 12)]
    epochs: usize,
    #[arg(long, default_value_t = 0.2)]
    dropout: f64,
    #[arg(long, default_value_t = 2)]
    patience: usize,
    #[arg(long, default_value_t = 0.3)]
    factor: f64,
    #[arg(long, default_value_t = 1e-6)]
    min_lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 150)]
    input_size: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Image to classify (resized to the model input if needed).
    #[arg(long)]
    image: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    /// Pipeline config file (sectioned key = value).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code_for(error: &Error) -> u8 {
    match error {
        Error::InvalidArgument(_) => 1,
        Error::Io { .. }
        | Error::UnsupportedMagic
        | Error::MalformedHeader(_)
        | Error::TruncatedPayload { .. }
        | Error::DimensionMismatch(_)
        | Error::EmptyRegion(_)
        | Error::CorruptCheckpoint(_) => 2,
        Error::IntensityOutOfRange(_)
        | Error::DegenerateHistogram(_)
        | Error::NonPositiveIntensity { .. }
        | Error::Numeric(_) => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap help/version output is a success path.
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn collect_inputs(input: &Path) -> mriclass::Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut files = Vec::new();
    let mut stack = vec![input.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let mut dirents: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(|e| Error::io(&dir, e))?
            .into_iter()
            .map(|e| e.path())
            .collect();
        dirents.sort();
        for path in dirents {
            if path.is_dir() {
                stack.push(path);
            } else if io::is_supported(&path) {
                files.push(path);
            }
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no supported images under {}",
            input.display()
        )));
    }
    Ok(files)
}

fn output_name(input_root: &Path, file: &Path) -> String {
    let flat = if input_root.is_file() {
        file.file_name().unwrap_or_default().to_string_lossy().into_owned()
    } else {
        file.strip_prefix(input_root)
            .unwrap_or(file)
            .to_string_lossy()
            .replace(['/', '\\'], "_")
    };
    match flat.rsplit_once('.') {
        Some((stem, _)) => format!("{stem}.pgm"),
        None => format!("{flat}.pgm"),
    }
}

fn run(cli: Cli) -> mriclass::Result<()> {
    match cli.command {
        Command::Ingest(args) => {
            let (manifest, report) = manifest::ingest(&args.root, args.seed, args.train_frac, args.val_frac)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
            let path = args.out.join("manifest.txt");
            manifest::save_manifest(&manifest, &path)?;
            let counts = manifest.class_counts();
            for (name, count) in CLASS_NAMES.iter().zip(counts) {
                println!("{name}: {count}");
            }
            println!("total: {}", manifest.total());
            println!("manifest: {}", path.display());
            Ok(())
        }
        Command::Preprocess(args) => {
            let files = collect_inputs(&args.input)?;
            std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
            let crop_params = CropParams {
                threshold: args.crop_threshold,
                margin: args.crop_margin,
                out_size: args.out_size,
                ..CropParams::default()
            };
            let n4 = N4Params {
                max_iterations: args.n4_iters,
                convergence_threshold: args.n4_conv,
                field_smoothing_sigma: args.n4_sigma,
                ..N4Params::default()
            };
            for file in &files {
                let image = io::load_image(file)?;
                let (mut out, fallback) = stages::crop_stage(&image, &crop_params, !args.no_crop)?;
                if fallback {
                    eprintln!("warning: {} had no foreground, full-frame resize", file.display());
                }
                if !args.no_bias {
                    let (corrected, _) = stages::bias_stage(&out, &n4)?;
                    out = corrected;
                }
                let name = output_name(&args.input, file);
                save_pgm(&out, args.out.join(&name), BitDepth::Eight)?;
            }
            println!("preprocessed {} images into {}", files.len(), args.out.display());
            Ok(())
        }
        Command::Denoise(args) => {
            let method = DenoiseMethod::parse(&args.method).ok_or_else(|| {
                Error::InvalidArgument(format!("unknown method {}; expected gaussian|tv|bm3d", args.method))
            })?;
            if method == DenoiseMethod::Off {
                return Err(Error::InvalidArgument("denoise method must be one of gaussian|tv|bm3d".into()));
            }
            let files = collect_inputs(&args.input)?;
            std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
            let tv = TvParams {
                weight: args.tv_weight,
                max_iters: args.tv_iters,
                ..TvParams::default()
            };
            let profile = Bm3dProfile {
                sigma: args.sigma,
                ..Bm3dProfile::default()
            };
            let mut psnr_rows = String::from("file,method,psnr_db\n");
            let reference = args.reference.as_ref().map(|p| io::load_image(p)).transpose()?;
            for file in &files {
                let image = io::load_image(file)?;
                let out = stages::denoise_stage(&image, method, args.sigma, &tv, &profile)?;
                let name = output_name(&args.input, file);
                save_pgm(&out, args.out.join(&name), BitDepth::Eight)?;
                if let Some(reference) = &reference {
                    let db = psnr(reference, &out)?;
                    use std::fmt::Write as _;
                    let _ = writeln!(psnr_rows, "{},{},{:.4}", name, method.as_str(), db);
                }
            }
            if reference.is_some() {
                let path = args.out.join("psnr.csv");
                std::fs::write(&path, &psnr_rows).map_err(|e| Error::io(&path, e))?;
                print!("{psnr_rows}");
            }
            println!("denoised {} images into {}", files.len(), args.out.display());
            Ok(())
        }
        Command::Strip(args) => {
            let files = collect_inputs(&args.input)?;
            std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
            if let Some(mask_out) = &args.mask_out {
                std::fs::create_dir_all(mask_out).map_err(|e| Error::io(mask_out, e))?;
            }
            let mut fallbacks = 0usize;
            for file in &files {
                let image = io::load_image(file)?;
                let result = mriclass::skullstrip::strip_skull(&image, args.bimodal_cutoff, args.closing_radius)?;
                if result.fallback {
                    fallbacks += 1;
                    eprintln!("warning: {} not bimodal, passed through", file.display());
                }
                let name = output_name(&args.input, file);
                save_pgm(&result.stripped, args.out.join(&name), BitDepth::Eight)?;
                if let Some(mask_out) = &args.mask_out {
                    let mask_img = Image::from_fn(result.brain.width(), result.brain.height(), |x, y| {
                        if result.brain.get(x, y) {
                            1.0
                        } else {
                            0.0
                        }
                    })?;
                    save_pgm(&mask_img, mask_out.join(&name), BitDepth::Eight)?;
                }
            }
            println!(
                "stripped {} images into {} ({} passthroughs)",
                files.len(),
                args.out.display(),
                fallbacks
            );
            Ok(())
        }
        Command::Augment(args) => {
            let m = manifest::load_manifest(&args.manifest, &args.data)?;
            let aug = AugmentConfig {
                rotation_range: args.rotation,
                width_shift: args.width_shift,
                height_shift: args.height_shift,
                hflip: args.hflip,
                vflip: args.vflip,
                fill: Border::Zero,
                seed: args.seed,
            };
            let mut counts = [0usize; 4];
            let mut train_files: Vec<Vec<&manifest::ManifestEntry>> = vec![Vec::new(); 4];
            for e in m.split_entries(Split::Train) {
                counts[e.class] += 1;
                train_files[e.class].push(e);
            }
            let target = if args.target_count > 0 {
                args.target_count
            } else {
                counts.iter().copied().max().unwrap_or(0)
            };
            let plan = mriclass::augment::balance_classes(&counts, target)?;
            let mut written = 0usize;
            for class in 0..4 {
                if plan[class] == 0 || train_files[class].is_empty() {
                    continue;
                }
                let dir = args.out.join(manifest::CLASS_DIRS[class]);
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                for k in 0..plan[class] {
                    let src = train_files[class][mriclass::augment::round_robin_source(train_files[class].len(), k)];
                    let image = io::load_image(&args.data.join(&src.relpath))?;
                    let draw = (class as u64) << 32 | k as u64;
                    let out = augment_sample(&image, &aug, draw)?;
                    let out = stages::clamp_unit(&out);
                    let stem = src.relpath.replace('/', "_");
                    let stem = stem.rsplit_once('.').map(|(s, _)| s.to_string()).unwrap_or(stem);
                    save_pgm(&out, dir.join(format!("{stem}_aug{k}.pgm")), BitDepth::Eight)?;
                    written += 1;
                }
            }
            for (name, (have, add)) in CLASS_NAMES.iter().zip(counts.iter().zip(&plan)) {
                println!("{name}: {have} train + {add} synthetic");
            }
            println!("wrote {written} augmented images into {}", args.out.display());
            Ok(())
        }
        Command::Train(args) => {
            let m = manifest::load_manifest(&args.manifest, &args.data)?;
            let load_split = |split: Split| -> mriclass::Result<Vec<(Image, usize)>> {
                let mut out = Vec::new();
                for e in m.split_entries(split) {
                    let image = io::load_image(&resolve_data_path(&args.data, e))?;
                    let image = if image.width() != args.input_size || image.height() != args.input_size {
                        resize_bilinear(&image, args.input_size, args.input_size)?
                    } else {
                        image
                    };
                    out.push((image, e.class));
                }
                Ok(out)
            };
            let train_set = load_split(Split::Train)?;
            let val_set = load_split(Split::Val)?;
            let config = TrainConfig {
                learning_rate: args.learning_rate,
                batch_size: args.batch_size,
                epochs: args.epochs,
                dropout_rate: args.dropout,
                plateau_patience: args.patience,
                plateau_factor: args.factor,
                min_lr: args.min_lr,
                seed: args.seed,
                validation_fraction: 0.2,
            };
            let mut model = build_model_sized(4, config.dropout_rate, config.seed, args.input_size)?;
            let curves = train_with_validation(&mut model, &train_set, &val_set, &config)?;
            std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
            save_checkpoint(&model, args.out.join("model.ckpt"))?;
            let curves_path = args.out.join("curves.csv");
            std::fs::write(&curves_path, curves.to_csv()).map_err(|e| Error::io(&curves_path, e))?;
            let last = curves.val_acc.len() - 1;
            println!(
                "trained {} epochs: val_loss {:.4} val_acc {:.4}",
                curves.val_acc.len(),
                curves.val_loss[last],
                curves.val_acc[last]
            );
            println!("checkpoint: {}", args.out.join("model.ckpt").display());
            Ok(())
        }
        Command::Evaluate(args) => {
            let split = Split::parse(&args.split).ok_or_else(|| {
                Error::InvalidArgument(format!("unknown split {}; expected train|val|test", args.split))
            })?;
            let m = manifest::load_manifest(&args.manifest, &args.data)?;
            let report = pipeline::evaluate_checkpoint(&args.checkpoint, &m, split, &args.data, &args.out)?;
            print!("{}", report.render_text());
            Ok(())
        }
        Command::Predict(args) => {
            let model = load_checkpoint(&args.checkpoint)?;
            let image = io::load_image(&args.image)?;
            let image = if image.width() != model.input_size() || image.height() != model.input_size() {
                resize_bilinear(&image, model.input_size(), model.input_size())?
            } else {
                image
            };
            let prediction = model.predict(&image)?;
            for (name, p) in CLASS_NAMES.iter().zip(&prediction.probabilities) {
                println!("{name}: {p:.6}");
            }
            println!("label: {}", CLASS_NAMES[prediction.label]);
            Ok(())
        }
        Command::Pipeline(args) => {
            let mut config = config::load_config(&args.config)?;
            if let Some(seed) = args.seed {
                config.seed = seed;
                config.augment.seed = seed;
                config.train.seed = seed;
            }
            if let Some(out) = args.out {
                config.out = out;
            }
            let outcome = pipeline::run_pipeline(&config)?;
            print!("{}", outcome.report_text);
            if let Some(eval) = &outcome.evaluation {
                println!("test accuracy: {:.4}", eval.overall_accuracy);
            }
            println!("artifacts: {}", outcome.out_dir.display());
            Ok(())
        }
    }
}

fn resolve_data_path(data_root: &Path, entry: &manifest::ManifestEntry) -> PathBuf {
    // Preprocessed trees flatten names to <class>/<stem>.pgm; fall back to
    // the manifest's own relative path for raw datasets.
    let flat = {
        let name = entry.relpath.replace('/', "_");
        let stem = name.rsplit_once('.').map(|(s, _)| s.to_string()).unwrap_or(name);
        data_root
            .join(manifest::CLASS_DIRS[entry.class])
            .join(format!("{stem}.pgm"))
    };
    if flat.exists() {
        flat
    } else {
        data_root.join(&entry.relpath)
    }
}
