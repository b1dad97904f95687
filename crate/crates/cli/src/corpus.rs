//! Corpus directories and output guards.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gsimage::codecio::load_image;
use gsimage::ImageF;

/// One image from a corpus directory.
#[derive(Debug, Clone)]
pub struct CorpusImage {
    /// File name without extension; stable identifier in tables.
    pub name: String,
    pub path: PathBuf,
    pub image: ImageF,
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref(),
        Some("png" | "ppm" | "pnm")
    )
}

/// Loads every PNG/PPM in `dir`, sorted by file name, as RGB.
pub fn load_corpus(dir: &Path) -> Result<Vec<CorpusImage>> {
    let entries = fs::read_dir(dir).with_context(|| format!("reading corpus {}", dir.display()))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image(p))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("corpus {} contains no PNG or PPM images", dir.display());
    }
    paths
        .into_iter()
        .map(|path| {
            let image = load_image::<f32>(&path)
                .with_context(|| format!("loading {}", path.display()))?
                .to_rgb();
            let name = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Ok(CorpusImage { name, path, image })
        })
        .collect()
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (fs::canonicalize(a), fs::canonicalize(b)) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

/// Refuses to write `output` over any of `inputs`.
pub fn guard_output(output: &Path, inputs: &[&Path]) -> Result<()> {
    for input in inputs {
        if same_file(output, input) {
            bail!("output {} would overwrite input {}", output.display(), input.display());
        }
    }
    Ok(())
}

/// Like [`guard_output`] for a checkpoint, whose blob is a second file.
pub fn guard_checkpoint(output: &Path, inputs: &[&Path]) -> Result<()> {
    let blob = gsimage::codecio::checkpoint_blob_path(output);
    for input in inputs {
        let other = gsimage::codecio::checkpoint_blob_path(input);
        guard_output(output, &[input, &other])?;
        guard_output(&blob, &[input, &other])?;
    }
    Ok(())
}
