//! Full pipeline orchestration: ingest -> crop -> bias-correct -> denoise ->
//! skull-strip -> augment -> train -> evaluate, with deterministic artifacts
//! under the output directory. Timings go to a separate file so reruns with
//! the same config and seed are byte-identical everywhere else.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mriclass::augment::{augment_sample, balance_classes, round_robin_source};
use mriclass::error::{Error, Result};
use mriclass::image::{resize_bilinear, save_pgm, BitDepth, Image};
use mriclass::metrics::{confusion, confusion_csv, report, ClassReport, CLASS_NAMES};
use mriclass::nnet::{build_model_sized, load_checkpoint, save_checkpoint, train_with_validation, Model};

use crate::config::PipelineConfig;
use crate::io::load_image;
use crate::manifest::{ingest, save_manifest, DatasetManifest, ManifestEntry, Split};
use crate::stages;

/// Summary of a pipeline run; the rendered report is also written to disk.
pub struct RunOutcome {
    pub report_text: String,
    pub evaluation: Option<ClassReport>,
    pub out_dir: PathBuf,
}

struct StageTimer {
    rows: Vec<(String, f64)>,
}

impl StageTimer {
    fn new() -> StageTimer {
        StageTimer { rows: Vec::new() }
    }

    fn record<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f()?;
        self.rows.push((name.to_string(), start.elapsed().as_secs_f64()));
        Ok(out)
    }

    fn to_csv(&self) -> String {
        let mut out = String::from("stage,seconds\n");
        for (name, secs) in &self.rows {
            let _ = writeln!(out, "{name},{secs:.3}");
        }
        out
    }
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn sanitized_name(relpath: &str) -> String {
    let flat = relpath.replace('/', "_");
    match flat.rsplit_once('.') {
        Some((stem, _)) => format!("{stem}.pgm"),
        None => format!("{flat}.pgm"),
    }
}

fn write_stage_image(
    out_dir: &Path,
    stage: &str,
    class: usize,
    relpath: &str,
    image: &Image,
) -> Result<()> {
    let dir = out_dir.join(stage).join(crate::manifest::CLASS_DIRS[class]);
    ensure_dir(&dir)?;
    save_pgm(image, dir.join(sanitized_name(relpath)), BitDepth::Eight)
}

fn with_file_context<T>(result: Result<T>, relpath: &str) -> Result<T> {
    result.map_err(|e| match e {
        Error::Io { path, source } => Error::Io { path, source },
        other => Error::InvalidArgument(format!("while processing {relpath}: {other}")),
    })
}

/// Execute the full pipeline. Every artifact lands under `config.out`.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunOutcome> {
    let out_dir = &config.out;
    ensure_dir(out_dir)?;
    let mut timer = StageTimer::new();
    let mut report_text = String::new();
    let _ = writeln!(report_text, "mriclass pipeline report");
    let _ = writeln!(report_text, "dataset: {}", config.dataset.display());
    let _ = writeln!(report_text, "seed: {}", config.seed);
    let _ = writeln!(
        report_text,
        "stages: crop={} bias={} denoise={} strip={} augment={}",
        config.crop_enabled,
        config.bias_enabled,
        config.denoise.as_str(),
        config.strip_enabled,
        config.augment_enabled
    );

    // Ingest.
    let (manifest, ingest_report) = timer.record("ingest", || {
        ingest(&config.dataset, config.seed, 0.7, 0.1)
    })?;
    save_manifest(&manifest, &out_dir.join("manifest.txt"))?;
    let _ = writeln!(report_text, "\n[ingest]");
    let counts = manifest.class_counts();
    for (class, name) in CLASS_NAMES.iter().enumerate() {
        let per_split = |s: Split| {
            manifest
                .entries
                .iter()
                .filter(|e| e.class == class && e.split == s)
                .count()
        };
        let _ = writeln!(
            report_text,
            "class {name}: total {} (train {} / val {} / test {})",
            counts[class],
            per_split(Split::Train),
            per_split(Split::Val),
            per_split(Split::Test)
        );
    }
    let _ = writeln!(report_text, "total: {}", manifest.total());
    for w in &ingest_report.warnings {
        let _ = writeln!(report_text, "warning: {w}");
    }

    // Deterministic processing order: class, then path.
    let mut order: Vec<&ManifestEntry> = manifest.entries.iter().collect();
    order.sort_by(|a, b| (a.class, &a.relpath).cmp(&(b.class, &b.relpath)));

    // Crop (or plain resize when disabled).
    let mut images: Vec<Image> = Vec::with_capacity(order.len());
    let mut crop_fallbacks = 0usize;
    timer.record("crop", || {
        for entry in &order {
            let raw = with_file_context(load_image(&manifest.root.join(&entry.relpath)), &entry.relpath)?;
            let (cropped, fallback) =
                with_file_context(stages::crop_stage(&raw, &config.crop, config.crop_enabled), &entry.relpath)?;
            if fallback {
                crop_fallbacks += 1;
            }
            if config.keep_intermediates {
                write_stage_image(out_dir, "crop", entry.class, &entry.relpath, &cropped)?;
            }
            images.push(cropped);
        }
        Ok(())
    })?;
    let _ = writeln!(report_text, "\n[crop]");
    let _ = writeln!(report_text, "enabled: {}", config.crop_enabled);
    let _ = writeln!(report_text, "processed: {}", images.len());
    let _ = writeln!(report_text, "fallbacks: {crop_fallbacks}");

    // Bias correction.
    let _ = writeln!(report_text, "\n[bias]");
    let _ = writeln!(report_text, "enabled: {}", config.bias_enabled);
    if config.bias_enabled {
        timer.record("bias", || {
            for (entry, image) in order.iter().zip(images.iter_mut()) {
                let (corrected, field) =
                    with_file_context(stages::bias_stage(image, &config.n4), &entry.relpath)?;
                if config.keep_intermediates {
                    write_stage_image(out_dir, "bias", entry.class, &entry.relpath, &corrected)?;
                    write_stage_image(
                        out_dir,
                        "bias_field",
                        entry.class,
                        &entry.relpath,
                        &stages::encode_log_field(&field),
                    )?;
                }
                *image = corrected;
            }
            Ok(())
        })?;
        let _ = writeln!(report_text, "processed: {}", images.len());
    }

    // Denoise.
    let _ = writeln!(report_text, "\n[denoise]");
    let _ = writeln!(report_text, "method: {}", config.denoise.as_str());
    if config.denoise != crate::config::DenoiseMethod::Off {
        timer.record("denoise", || {
            for (entry, image) in order.iter().zip(images.iter_mut()) {
                let out = with_file_context(
                    stages::denoise_stage(
                        image,
                        config.denoise,
                        config.gaussian_sigma,
                        &config.tv,
                        &config.bm3d,
                    ),
                    &entry.relpath,
                )?;
                if config.keep_intermediates {
                    write_stage_image(out_dir, "denoise", entry.class, &entry.relpath, &out)?;
                }
                *image = out;
            }
            Ok(())
        })?;
        let _ = writeln!(report_text, "processed: {}", images.len());
    }

    // Skull strip.
    let _ = writeln!(report_text, "\n[strip]");
    let _ = writeln!(report_text, "enabled: {}", config.strip_enabled);
    if config.strip_enabled {
        let mut passthroughs = 0usize;
        timer.record("strip", || {
            for (entry, image) in order.iter().zip(images.iter_mut()) {
                let result = with_file_context(stages::strip_stage(image, config), &entry.relpath)?;
                if result.fallback {
                    passthroughs += 1;
                }
                if config.keep_intermediates {
                    write_stage_image(out_dir, "strip", entry.class, &entry.relpath, &result.stripped)?;
                }
                *image = result.stripped;
            }
            Ok(())
        })?;
        let _ = writeln!(report_text, "processed: {}", images.len());
        let _ = writeln!(report_text, "not-bimodal passthroughs: {passthroughs}");
    }

    // Final preprocessed set is always persisted; downstream consumers
    // (train/evaluate subcommands) read from here.
    timer.record("persist", || {
        for (entry, image) in order.iter().zip(images.iter()) {
            write_stage_image(out_dir, "preprocessed", entry.class, &entry.relpath, image)?;
        }
        Ok(())
    })?;

    // Split the processed images.
    let mut train_set: Vec<(Image, usize)> = Vec::new();
    let mut val_set: Vec<(Image, usize)> = Vec::new();
    let mut test_set: Vec<(Image, usize)> = Vec::new();
    for (entry, image) in order.iter().zip(images.iter()) {
        let item = (image.clone(), entry.class);
        match entry.split {
            Split::Train => train_set.push(item),
            Split::Val => val_set.push(item),
            Split::Test => test_set.push(item),
        }
    }

    // Augment the training split only.
    let _ = writeln!(report_text, "\n[augment]");
    let _ = writeln!(report_text, "enabled: {}", config.augment_enabled);
    if config.augment_enabled {
        let mut class_counts = [0usize; 4];
        for (_, label) in &train_set {
            class_counts[*label] += 1;
        }
        let target = if config.augment_target > 0 {
            config.augment_target
        } else {
            class_counts.iter().copied().max().unwrap_or(0)
        };
        let plan = balance_classes(&class_counts, target)?;
        let _ = writeln!(report_text, "target: {target}");
        for (name, (have, add)) in CLASS_NAMES.iter().zip(class_counts.iter().zip(&plan)) {
            let _ = writeln!(report_text, "class {name}: {have} + {add} synthetic");
        }
        let mut written = 0usize;
        timer.record("augment", || {
            for (class, &plan_count) in plan.iter().enumerate() {
                // Sources in deterministic (class, relpath) order.
                let sources: Vec<(usize, &ManifestEntry)> = order
                    .iter()
                    .enumerate()
                    .filter(|(_, e)| e.class == class && e.split == Split::Train)
                    .map(|(i, e)| (i, *e))
                    .collect();
                if sources.is_empty() {
                    continue;
                }
                for k in 0..plan_count {
                    let (src_idx, src_entry) = sources[round_robin_source(sources.len(), k)];
                    let draw_index = (class as u64) << 32 | k as u64;
                    let synth = augment_sample(&images[src_idx], &config.augment, draw_index)?;
                    let synth = stages::clamp_unit(&synth);
                    let dir = out_dir.join("augmented").join(crate::manifest::CLASS_DIRS[class]);
                    ensure_dir(&dir)?;
                    let stem = sanitized_name(&src_entry.relpath);
                    let stem = stem.trim_end_matches(".pgm");
                    save_pgm(&synth, dir.join(format!("{stem}_aug{k}.pgm")), BitDepth::Eight)?;
                    written += 1;
                    train_set.push((synth, class));
                }
            }
            Ok(())
        })?;
        let _ = writeln!(report_text, "written: {written}");
    }

    // Train.
    let _ = writeln!(report_text, "\n[train]");
    let input_size = config.crop.out_size;
    let mut model = build_model_sized(4, config.train.dropout_rate, config.train.seed, input_size)?;
    let curves = timer.record("train", || {
        train_with_validation(&mut model, &train_set, &val_set, &config.train)
    })?;
    save_checkpoint(&model, out_dir.join("model.ckpt"))?;
    fs::write(out_dir.join("curves.csv"), curves.to_csv())
        .map_err(|e| Error::io(out_dir.join("curves.csv"), e))?;
    let last = curves.train_loss.len() - 1;
    let _ = writeln!(report_text, "epochs: {}", curves.train_loss.len());
    let _ = writeln!(
        report_text,
        "final: train_loss {:.6} train_acc {:.4} val_loss {:.6} val_acc {:.4} lr {:.3e}",
        curves.train_loss[last],
        curves.train_acc[last],
        curves.val_loss[last],
        curves.val_acc[last],
        curves.lr[last]
    );
    let _ = writeln!(report_text, "parameters: {}", model.num_parameters());
    let _ = writeln!(report_text, "curves: curves.csv");

    // Evaluate on the held-out test split, through the saved checkpoint so
    // the artifact on disk is what gets scored.
    let _ = writeln!(report_text, "\n[evaluate]");
    let evaluation = if test_set.is_empty() {
        let _ = writeln!(report_text, "warning: empty test split, evaluation skipped");
        None
    } else {
        let restored = load_checkpoint(out_dir.join("model.ckpt"))?;
        let (class_report, cm_csv) = timer.record("evaluate", || {
            evaluate_in_memory(&restored, &test_set)
        })?;
        fs::write(out_dir.join("confusion.csv"), &cm_csv)
            .map_err(|e| Error::io(out_dir.join("confusion.csv"), e))?;
        let _ = writeln!(report_text, "{}", class_report.render_text());
        let _ = writeln!(report_text, "confusion: confusion.csv");
        Some(class_report)
    };

    fs::write(out_dir.join("report.txt"), &report_text)
        .map_err(|e| Error::io(out_dir.join("report.txt"), e))?;
    fs::write(out_dir.join("timings.csv"), timer.to_csv())
        .map_err(|e| Error::io(out_dir.join("timings.csv"), e))?;

    Ok(RunOutcome {
        report_text,
        evaluation,
        out_dir: out_dir.clone(),
    })
}

/// Score a labeled set with a model, resizing inputs if needed.
pub fn evaluate_in_memory(model: &Model, data: &[(Image, usize)]) -> Result<(ClassReport, String)> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("evaluation split is empty".into()));
    }
    let mut predicted = Vec::with_capacity(data.len());
    let mut actual = Vec::with_capacity(data.len());
    for (image, label) in data {
        let sized = if image.width() == model.input_size() && image.height() == model.input_size() {
            image.clone()
        } else {
            resize_bilinear(image, model.input_size(), model.input_size())?
        };
        predicted.push(model.predict(&sized)?.label);
        actual.push(*label);
    }
    let cm = confusion(&predicted, &actual)?;
    let class_report = report(&cm)?;
    Ok((class_report, confusion_csv(&cm)))
}

/// Standalone evaluation: load the checkpoint, score the manifest split read
/// from `data_root`, and write `report.txt` + `confusion.csv` under `out`.
pub fn evaluate_checkpoint(
    checkpoint: &Path,
    manifest: &DatasetManifest,
    split: Split,
    data_root: &Path,
    out: &Path,
) -> Result<ClassReport> {
    let model = load_checkpoint(checkpoint)?;
    let mut data = Vec::new();
    for entry in manifest.split_entries(split) {
        // Preprocessed trees store everything as flattened PGM names.
        let flat = data_root
            .join(crate::manifest::CLASS_DIRS[entry.class])
            .join(sanitized_name(&entry.relpath));
        let candidate = if flat.exists() {
            flat
        } else {
            data_root.join(&entry.relpath)
        };
        let image = with_file_context(load_image(&candidate), &entry.relpath)?;
        data.push((image, entry.class));
    }
    if data.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "split {} has no samples in the manifest",
            split.as_str()
        )));
    }
    let (class_report, cm_csv) = evaluate_in_memory(&model, &data)?;
    ensure_dir(out)?;
    fs::write(out.join("confusion.csv"), &cm_csv).map_err(|e| Error::io(out.join("confusion.csv"), e))?;
    fs::write(out.join("report.txt"), class_report.render_text())
        .map_err(|e| Error::io(out.join("report.txt"), e))?;
    Ok(class_report)
}
