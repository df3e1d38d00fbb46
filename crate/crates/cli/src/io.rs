use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

use headsplat::diff::checkpoint::MANIFEST;
use headsplat::diff::Checkpoint;
use headsplat::splat::FeatureImage;
use headsplat::synth::save_rgb;

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Accepts a checkpoint directory or a run directory holding one.
pub fn resolve_checkpoint(path: &Path) -> PathBuf {
    if path.join(MANIFEST).is_file() {
        return path.to_path_buf();
    }
    ["checkpoint", "fitted"]
        .iter()
        .map(|sub| path.join(sub))
        .find(|p| p.join(MANIFEST).is_file())
        .unwrap_or_else(|| path.to_path_buf())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let dir = resolve_checkpoint(path);
    Checkpoint::load(&dir).with_context(|| format!("loading checkpoint {}", path.display()))
}

pub fn read_code(path: &Path) -> Result<Vec<f32>> {
    read_json(path)
}

pub fn save_image(path: &Path, img: &FeatureImage<f32>) -> Result<()> {
    save_rgb(path, &img.leading_channels(3), img.width, img.height).with_context(|| format!("writing {}", path.display()))
}
