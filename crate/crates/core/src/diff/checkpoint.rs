//! Checkpoint format: a directory holding `manifest.txt` and `params.bin`.
//!
//! ```text
//! headsplat-checkpoint 1
//! meta stage "gaussian"
//! param f_inj.l0.w 40,64 f32 0 1
//! ```
//!
//! `param` lines are `name shape dtype byte_offset trainable`; the blob is the
//! concatenation of every entry as little-endian `f32`, in manifest order.
//! Metadata values are JSON string literals.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::diff::params::ParamStore;
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.txt";
pub const BLOB: &str = "params.bin";
const MAGIC: &str = "headsplat-checkpoint 1";

#[derive(Clone, Debug, Default)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub store: ParamStore<f32>,
}

impl Checkpoint {
    pub fn new(store: ParamStore<f32>) -> Self {
        Checkpoint {
            meta: BTreeMap::new(),
            store,
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<String>) -> Self {
        self.meta.insert(key.to_string(), value.into());
        self
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::format("checkpoint", format!("missing metadata `{key}`")))
    }

    pub fn stage(&self) -> Result<&str> {
        self.meta("stage")
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = String::new();
        manifest.push_str(MAGIC);
        manifest.push('\n');
        for (k, v) in &self.meta {
            if k.chars().any(char::is_whitespace) || k.is_empty() {
                return Err(Error::Invalid(format!("metadata key `{k}` must be non-empty without whitespace")));
            }
            let quoted = serde_json::to_string(v).expect("string serialization cannot fail");
            manifest.push_str(&format!("meta {k} {quoted}\n"));
        }
        let mut blob = Vec::with_capacity(self.store.total_len() * 4);
        for (_, p) in self.store.iter() {
            let shape = if p.shape.is_empty() {
                "-".to_string()
            } else {
                p.shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")
            };
            manifest.push_str(&format!(
                "param {} {} f32 {} {}\n",
                p.name,
                shape,
                blob.len(),
                u8::from(p.trainable)
            ));
            for v in &p.value {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mpath = dir.join(MANIFEST);
        fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))?;
        let bpath = dir.join(BLOB);
        fs::write(&bpath, blob).map_err(|e| Error::io(&bpath, e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST);
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let bpath = dir.join(BLOB);
        let blob = fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
        let bad = |line: usize, msg: &str| Error::format(mpath.display().to_string(), format!("line {}: {msg}", line + 1));

        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, MAGIC)) => {}
            _ => return Err(bad(0, "missing header")),
        }
        let mut ckpt = Checkpoint::default();
        for (ln, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.splitn(3, ' ');
            match parts.next() {
                Some("meta") => {
                    let key = parts.next().ok_or_else(|| bad(ln, "meta key"))?;
                    let raw = parts.next().ok_or_else(|| bad(ln, "meta value"))?;
                    let value: String = serde_json::from_str(raw).map_err(|_| bad(ln, "meta value is not a JSON string"))?;
                    ckpt.meta.insert(key.to_string(), value);
                }
                Some("param") => {
                    let fields: Vec<&str> = line.split(' ').collect();
                    if fields.len() != 6 {
                        return Err(bad(ln, "param line needs 6 fields"));
                    }
                    let shape: Vec<usize> = if fields[2] == "-" {
                        Vec::new()
                    } else {
                        fields[2]
                            .split(',')
                            .map(|d| d.parse().map_err(|_| bad(ln, "shape")))
                            .collect::<Result<_>>()?
                    };
                    if fields[3] != "f32" {
                        return Err(bad(ln, "only f32 is supported"));
                    }
                    let offset: usize = fields[4].parse().map_err(|_| bad(ln, "offset"))?;
                    let count: usize = shape.iter().product();
                    let end = offset + count * 4;
                    if end > blob.len() {
                        return Err(bad(ln, "entry runs past the end of the blob"));
                    }
                    let values = blob[offset..end]
                        .chunks_exact(4)
                        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                        .collect();
                    let id = ckpt.store.insert(fields[1], &shape, values)?;
                    ckpt.store.set_trainable(id, fields[5] == "1");
                }
                _ => return Err(bad(ln, "unknown record")),
            }
        }
        Ok(ckpt)
    }
}
