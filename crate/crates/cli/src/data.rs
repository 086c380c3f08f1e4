use std::path::{Path, PathBuf};

use absa_core::dataio::{load_dataset, DatasetFormat, DatasetSplit, SplitName};
use anyhow::{bail, Context as _, Result};

/// Relative paths that do not exist as given are looked up under the data
/// root.
pub fn resolve(path: &Path, root: Option<&Path>) -> PathBuf {
    match root {
        Some(root) if path.is_relative() && !path.exists() => root.join(path),
        _ => path.to_path_buf(),
    }
}

pub fn parse_format(format: Option<&str>, path: &Path) -> Result<DatasetFormat> {
    Ok(match format {
        Some(f) => f.parse()?,
        None => DatasetFormat::from_extension(path),
    })
}

pub fn load_file(path: &Path, format: Option<&str>) -> Result<DatasetSplit> {
    if !path.is_file() {
        bail!(absa_core::Error::Argument(format!("dataset file {} not found", path.display())));
    }
    let format = parse_format(format, path)?;
    load_dataset(path, format).with_context(|| format!("loading {}", path.display()))
}

/// Train, dev and test splits with the files they came from.
pub struct Splits {
    pub train: DatasetSplit,
    pub dev: Option<DatasetSplit>,
    pub test: Option<DatasetSplit>,
    pub files: Vec<(SplitName, PathBuf)>,
}

/// Split files inside `dir`, one per split name. jsonl wins over legacy
/// text when both exist.
pub fn split_files(dir: &Path) -> Result<Vec<(SplitName, PathBuf)>> {
    let mut found: Vec<(SplitName, PathBuf)> = Vec::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && matches!(p.extension().and_then(|e| e.to_str()), Some("jsonl" | "txt")))
        .collect();
    entries.sort();
    for path in entries {
        let stem = path.file_stem().unwrap_or_default().to_string_lossy().to_ascii_lowercase();
        if !["train", "dev", "valid", "test"].iter().any(|k| stem.contains(k)) {
            continue;
        }
        let name = SplitName::infer(&path);
        let is_jsonl = DatasetFormat::from_extension(&path) == DatasetFormat::Jsonl;
        match found.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) if is_jsonl => slot.1 = path,
            Some(_) => {}
            None => found.push((name, path)),
        }
    }
    Ok(found)
}

/// Loads `path` as a directory of splits or as a single training file.
pub fn load_splits(path: &Path, format: Option<&str>) -> Result<Splits> {
    let files = if path.is_dir() {
        split_files(path)?
    } else {
        vec![(SplitName::Train, path.to_path_buf())]
    };
    let mut splits = Splits {
        train: DatasetSplit::new(SplitName::Train, Vec::new(), ""),
        dev: None,
        test: None,
        files: files.clone(),
    };
    let mut have_train = false;
    for (name, file) in &files {
        let mut split = load_file(file, format)?;
        split.name = *name;
        match name {
            SplitName::Train => {
                splits.train = split;
                have_train = true;
            }
            SplitName::Dev => splits.dev = Some(split),
            SplitName::Test => splits.test = Some(split),
        }
    }
    if !have_train {
        bail!(absa_core::Error::Argument(format!("no training file found in {}", path.display())));
    }
    Ok(splits)
}
