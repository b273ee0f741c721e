use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ImageBuf;
use crate::error::{Error, Result};

pub const MANIFEST_NAME: &str = "pairs.json";

/// One LR/HR pair. Paths are stored relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairEntry {
    pub lr: String,
    pub hr: String,
    pub scale: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairManifest {
    pub entries: Vec<PairEntry>,
    /// Directory that relative entry paths resolve against.
    pub base_dir: PathBuf,
}

impl PairManifest {
    pub fn new(mut entries: Vec<PairEntry>, base_dir: impl Into<PathBuf>) -> Self {
        entries.sort_by(|a, b| a.hr.cmp(&b.hr));
        PairManifest {
            entries,
            base_dir: base_dir.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.base_dir.join(rel)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.entries)? + "\n")
    }

    pub fn from_json(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let entries: Vec<PairEntry> = serde_json::from_str(text).map_err(|e| Error::Corrupt {
            what: "pair manifest".into(),
            reason: e.to_string(),
        })?;
        Ok(PairManifest {
            entries,
            base_dir: base_dir.into(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, base)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    /// A sub-manifest with the given entry indices, same base directory.
    pub fn select(&self, idx: &[usize]) -> Self {
        PairManifest::new(
            idx.iter().map(|&i| self.entries[i].clone()).collect(),
            self.base_dir.clone(),
        )
    }
}

/// Builds LR/HR pairs from every decodable image in `src_dir`.
///
/// HR images are bicubic-resized to `target×target` and written to
/// `<out>/hr/<stem>.png`; LR images are bicubic-downscaled from the stored
/// HR to `target/scale` and written to `<out>/x<scale>/lr/<stem>.png`. The
/// manifest goes to `<out>/x<scale>/pairs.json`. Undecodable files are
/// skipped with a warning.
pub fn make_pairs(
    src_dir: &Path,
    out_dir: &Path,
    scale: u32,
    target: usize,
) -> Result<PairManifest> {
    if !matches!(scale, 2 | 4 | 8) {
        return Err(Error::Config(format!(
            "scale must be 2, 4 or 8, got {scale}"
        )));
    }
    if target == 0 || !target.is_multiple_of(scale as usize) {
        return Err(Error::Config(format!(
            "target size {target} is not a positive multiple of scale {scale}"
        )));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(src_dir)
        .map_err(|e| Error::io(src_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();

    let stems: Vec<String> = files
        .iter()
        .map(|p| {
            p.file_stem()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned()
        })
        .collect();
    {
        let mut seen = std::collections::BTreeSet::new();
        for (s, f) in stems.iter().zip(&files) {
            if !seen.insert(s.clone()) {
                return Err(Error::Contract(format!(
                    "duplicate image name '{s}' in {} ({})",
                    src_dir.display(),
                    f.display()
                )));
            }
        }
    }

    let scale_dir = out_dir.join(format!("x{scale}"));
    let lr_size = target / scale as usize;
    let results: Vec<Result<Option<PairEntry>>> = files
        .par_iter()
        .zip(stems.par_iter())
        .map(|(path, stem)| {
            let img = match ImageBuf::open(path) {
                Ok(img) => img,
                Err(e) => {
                    log::warn!("skipping {}: {e}", path.display());
                    return Ok(None);
                }
            };
            let hr = img.resize(target, target)?;
            let lr = hr.resize(lr_size, lr_size)?;
            let name = format!("{stem}.png");
            hr.save_png(&out_dir.join("hr").join(&name))?;
            lr.save_png(&scale_dir.join("lr").join(&name))?;
            Ok(Some(PairEntry {
                lr: format!("lr/{name}"),
                hr: format!("../hr/{name}"),
                scale,
            }))
        })
        .collect();

    let mut entries = Vec::new();
    for r in results {
        if let Some(e) = r? {
            entries.push(e);
        }
    }
    if entries.is_empty() {
        return Err(Error::Contract(format!(
            "no decodable images in {}",
            src_dir.display()
        )));
    }
    let manifest = PairManifest::new(entries, &scale_dir);
    manifest.save(&scale_dir.join(MANIFEST_NAME))?;
    Ok(manifest)
}
