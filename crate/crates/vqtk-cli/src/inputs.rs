//! Input gathering: a path may name a single file or a directory whose
//! matching files are processed in sorted order for reproducibility.

use std::path::{Path, PathBuf};

use vqtk_core::error::{Error, Result};
use vqtk_core::io;
use vqtk_core::types::{FeatureMap, TokenGrid};

/// Lists `path` itself, or its children with the given extension, sorted
/// by file name.
pub fn collect_files(path: &Path, extension: &str) -> Result<Vec<PathBuf>> {
    let meta = std::fs::metadata(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if meta.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files = Vec::new();
    let entries = std::fs::read_dir(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    for entry in entries {
        let entry = entry.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let p = entry.path();
        if p.is_file() && p.extension().map_or(false, |e| e == extension) {
            files.push(p);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::EmptyInput("no matching files in directory"));
    }
    Ok(files)
}

pub fn load_feature_maps(path: &Path) -> Result<Vec<(PathBuf, FeatureMap)>> {
    collect_files(path, "fmap")?
        .into_iter()
        .map(|p| io::read_feature_map(&p).map(|m| (p, m)))
        .collect()
}

pub fn load_token_grids(path: &Path) -> Result<Vec<(PathBuf, TokenGrid)>> {
    collect_files(path, "tokg")?
        .into_iter()
        .map(|p| io::read_token_grid(&p).map(|g| (p, g)))
        .collect()
}
