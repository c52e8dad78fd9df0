//! Dataset discovery and the on-disk manifest: per-class file lists with a
//! seeded, stratified train/val/test assignment.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use mriclass::error::{Error, Result};
use mriclass::metrics::CLASS_NAMES;
use mriclass::rng::DetRng;

use crate::io::is_supported;

/// Directory names expected under the dataset root, index-aligned with the
/// class labels.
pub const CLASS_DIRS: [&str; 4] = ["glioma", "meningioma", "no_tumor", "pituitary"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub split: Split,
    pub class: usize,
    /// Path relative to the dataset root.
    pub relpath: String,
}

#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub seed: u64,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn class_counts(&self) -> [usize; 4] {
        let mut counts = [0usize; 4];
        for e in &self.entries {
            counts[e.class] += 1;
        }
        counts
    }

    pub fn split_entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn total(&self) -> usize {
        self.entries.len()
    }
}

/// Warnings gathered during ingestion (empty classes and the like).
#[derive(Debug, Default)]
pub struct IngestReport {
    pub warnings: Vec<String>,
}

/// Scan the dataset root and assign every file to a split: per class, a
/// seeded shuffle is cut into test/val/train by the configured fractions.
pub fn ingest(
    root: &Path,
    seed: u64,
    train_fraction: f64,
    val_fraction: f64,
) -> Result<(DatasetManifest, IngestReport)> {
    if train_fraction <= 0.0 || val_fraction < 0.0 || train_fraction + val_fraction >= 1.0 {
        return Err(Error::InvalidArgument(format!(
            "split fractions must satisfy 0 < train, 0 <= val, train + val < 1; got {train_fraction} and {val_fraction}"
        )));
    }
    let mut report = IngestReport::default();
    let mut entries = Vec::new();
    for (class, dir_name) in CLASS_DIRS.iter().enumerate() {
        let class_dir = root.join(dir_name);
        if !class_dir.is_dir() {
            return Err(Error::io(
                &class_dir,
                std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("dataset root {} is missing the class directory {dir_name}/", root.display()),
                ),
            ));
        }
        let mut files = Vec::new();
        collect_files(&class_dir, &class_dir, &mut files)?;
        files.sort();
        if files.is_empty() {
            report
                .warnings
                .push(format!("class {} has no images", CLASS_NAMES[class]));
        }
        let n = files.len();
        let test_fraction = 1.0 - train_fraction - val_fraction;
        let n_test = (test_fraction * n as f64).round() as usize;
        let n_val = (val_fraction * n as f64).round() as usize;
        let mut order: Vec<usize> = (0..n).collect();
        DetRng::from_seed_index(seed, 0x1A6E57 ^ (class as u64) << 8).shuffle(&mut order);
        let mut assignment = vec![Split::Train; n];
        for &i in order.iter().take(n_test) {
            assignment[i] = Split::Test;
        }
        for &i in order.iter().skip(n_test).take(n_val) {
            assignment[i] = Split::Val;
        }
        for (file, &split) in files.iter().zip(&assignment) {
            entries.push(ManifestEntry {
                split,
                class,
                relpath: format!("{dir_name}/{file}"),
            });
        }
    }
    Ok((
        DatasetManifest {
            root: root.to_path_buf(),
            seed,
            train_fraction,
            val_fraction,
            entries,
        },
        report,
    ))
}

fn collect_files(base: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    let mut dirents: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(dir, e))?
        .into_iter()
        .map(|e| e.path())
        .collect();
    dirents.sort();
    for path in dirents {
        if path.is_dir() {
            collect_files(base, &path, out)?;
        } else if is_supported(&path) {
            let rel = path
                .strip_prefix(base)
                .expect("path under base")
                .to_string_lossy()
                .replace('\\', "/");
            out.push(rel);
        }
    }
    Ok(())
}

/// Serialize the manifest to its text form.
pub fn render_manifest(manifest: &DatasetManifest) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# mriclass manifest v1");
    let _ = writeln!(out, "# seed: {}", manifest.seed);
    let _ = writeln!(
        out,
        "# fractions: train {:.4} val {:.4}",
        manifest.train_fraction, manifest.val_fraction
    );
    let counts = manifest.class_counts();
    for (name, count) in CLASS_DIRS.iter().zip(counts) {
        let _ = writeln!(out, "class\t{name}\t{count}");
    }
    let _ = writeln!(out, "total\t{}", manifest.total());
    let mut sorted: Vec<&ManifestEntry> = manifest.entries.iter().collect();
    sorted.sort_by(|a, b| (a.class, &a.relpath).cmp(&(b.class, &b.relpath)));
    for e in sorted {
        let _ = writeln!(out, "{}\t{}\t{}", e.split.as_str(), CLASS_DIRS[e.class], e.relpath);
    }
    out
}

pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    fs::write(path, render_manifest(manifest)).map_err(|e| Error::io(path, e))
}

/// Parse a manifest file; `root` is taken from the caller since manifests are
/// relocatable.
pub fn load_manifest(path: &Path, root: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    let mut seed = 0u64;
    let mut fractions = (0.7, 0.1);
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("# seed:") {
            seed = rest.trim().parse().unwrap_or(0);
            continue;
        }
        if let Some(rest) = line.strip_prefix("# fractions:") {
            let parts: Vec<&str> = rest.split_whitespace().collect();
            if parts.len() == 4 {
                fractions = (
                    parts[1].parse().unwrap_or(0.7),
                    parts[3].parse().unwrap_or(0.1),
                );
            }
            continue;
        }
        if line.starts_with('#') || line.starts_with("class\t") || line.starts_with("total\t") {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::MalformedHeader(format!(
                "manifest line {} has {} fields, expected 3",
                lineno + 1,
                fields.len()
            )));
        }
        let split = Split::parse(fields[0]).ok_or_else(|| {
            Error::MalformedHeader(format!("manifest line {}: unknown split {}", lineno + 1, fields[0]))
        })?;
        let class = CLASS_DIRS
            .iter()
            .position(|c| *c == fields[1])
            .ok_or_else(|| {
                Error::MalformedHeader(format!("manifest line {}: unknown class {}", lineno + 1, fields[1]))
            })?;
        entries.push(ManifestEntry {
            split,
            class,
            relpath: fields[2].to_string(),
        });
    }
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        seed,
        train_fraction: fractions.0,
        val_fraction: fractions.1,
        entries,
    })
}
