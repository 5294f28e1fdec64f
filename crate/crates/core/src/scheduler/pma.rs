//! Prediction model archives: a zip holding `manifest.json` at the root, the
//! model payload under `model/` and optional sample inputs under `data/`.

use std::collections::BTreeMap;
use std::io::{Cursor, Read, Write};
use std::path::{Component, Path};

use serde::{Deserialize, Serialize};
use zip::write::SimpleFileOptions;

use crate::ann::AnnModel;
use crate::windowing::WindowRule;

pub const MANIFEST: &str = "manifest.json";
pub const PMA_VERSION: u32 = 1;
pub const DEFAULT_MODEL_FILE: &str = "model/model.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutorKind {
    NativeAnn,
    External,
}

fn default_model_file() -> String {
    DEFAULT_MODEL_FILE.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmaManifest {
    pub pma_version: u32,
    pub mid: String,
    pub name: String,
    pub executor: ExecutorKind,
    /// Registered engine to run an external model with.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub engine: Option<String>,
    /// Inline command for an external model; used when `engine` is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command_template: Option<String>,
    /// Native payload path inside the archive.
    #[serde(default = "default_model_file")]
    pub model_file: String,
    pub inputs: Vec<WindowRule>,
    pub output_stream: String,
}

impl PmaManifest {
    /// Rule ids sorted by input index, so position `i` holds slot `i`.
    pub fn binding(&self) -> Vec<&WindowRule> {
        let mut rules: Vec<&WindowRule> = self.inputs.iter().collect();
        rules.sort_by_key(|r| r.input_index);
        rules
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.pma_version != PMA_VERSION {
            return Err(format!("unsupported pma_version {}", self.pma_version));
        }
        if self.mid.trim().is_empty() || self.mid.contains(['/', '\\']) || self.mid.starts_with('.') {
            return Err(format!("invalid mid `{}`", self.mid));
        }
        if self.inputs.is_empty() {
            return Err("manifest declares no inputs".into());
        }
        let mut idx: Vec<usize> = self.inputs.iter().map(|r| r.input_index).collect();
        idx.sort_unstable();
        if idx.iter().enumerate().any(|(i, &k)| i != k) {
            return Err(format!("input indices must be dense 0..{}, got {idx:?}", self.inputs.len()));
        }
        for r in &self.inputs {
            r.validate().map_err(|e| format!("input `{}`: {e}", r.rule_id))?;
        }
        match self.executor {
            ExecutorKind::NativeAnn if self.engine.is_some() || self.command_template.is_some() => {
                Err("native_ann models take no engine or command".into())
            }
            ExecutorKind::External if self.engine.is_none() && self.command_template.is_none() => {
                Err("external models need an engine or a command_template".into())
            }
            _ => Ok(()),
        }
    }
}

/// An archive held in memory: manifest plus every other file by path.
#[derive(Debug, Clone, PartialEq)]
pub struct PmaArchive {
    pub manifest: PmaManifest,
    pub files: BTreeMap<String, Vec<u8>>,
}

fn safe_path(name: &str) -> bool {
    let p = Path::new(name);
    !name.is_empty() && p.components().all(|c| matches!(c, Component::Normal(_)))
}

impl PmaArchive {
    /// Archive around a trained network, serialized to `model/model.json`.
    pub fn native(manifest: PmaManifest, model: &AnnModel) -> Self {
        let mut files = BTreeMap::new();
        files.insert(manifest.model_file.clone(), model.to_json().into_bytes());
        Self { manifest, files }
    }

    pub fn with_file(mut self, path: &str, bytes: impl Into<Vec<u8>>) -> Self {
        self.files.insert(path.to_string(), bytes.into());
        self
    }

    pub fn from_zip(bytes: &[u8]) -> Result<Self, String> {
        let mut zip = zip::ZipArchive::new(Cursor::new(bytes)).map_err(|e| format!("not a zip archive: {e}"))?;
        let mut manifest = None;
        let mut files = BTreeMap::new();
        let mut has_model_dir = false;
        for i in 0..zip.len() {
            let mut f = zip.by_index(i).map_err(|e| format!("corrupt entry {i}: {e}"))?;
            let name = f.name().trim_end_matches('/').to_string();
            if !safe_path(&name) {
                return Err(format!("unsafe entry path `{}`", f.name()));
            }
            if name == "model" || name.starts_with("model/") {
                has_model_dir = true;
            }
            if f.is_dir() {
                continue;
            }
            let mut buf = Vec::with_capacity(f.size() as usize);
            f.read_to_end(&mut buf).map_err(|e| format!("reading `{name}`: {e}"))?;
            if name == MANIFEST {
                let m: PmaManifest =
                    serde_json::from_slice(&buf).map_err(|e| format!("manifest.json does not parse: {e}"))?;
                manifest = Some(m);
            } else {
                files.insert(name, buf);
            }
        }
        let manifest = manifest.ok_or("archive has no manifest.json at its root")?;
        if !has_model_dir {
            return Err("archive has no model/ directory".into());
        }
        manifest.validate()?;
        Ok(Self { manifest, files })
    }

    pub fn to_zip(&self) -> Vec<u8> {
        let mut zip = zip::ZipWriter::new(Cursor::new(Vec::new()));
        let opts = SimpleFileOptions::default().compression_method(zip::CompressionMethod::Deflated);
        let manifest = serde_json::to_vec_pretty(&self.manifest).expect("manifest serializes");
        zip.start_file(MANIFEST, opts).expect("in-memory zip");
        zip.write_all(&manifest).expect("in-memory zip");
        for dir in ["model/", "data/"] {
            zip.add_directory(dir, opts).expect("in-memory zip");
        }
        for (path, bytes) in &self.files {
            zip.start_file(path.as_str(), opts).expect("in-memory zip");
            zip.write_all(bytes).expect("in-memory zip");
        }
        zip.finish().expect("in-memory zip").into_inner()
    }

    /// Loads and checks the native payload.
    pub fn native_model(&self) -> Result<AnnModel, String> {
        let raw = self
            .files
            .get(&self.manifest.model_file)
            .ok_or_else(|| format!("model payload `{}` missing", self.manifest.model_file))?;
        let text = std::str::from_utf8(raw).map_err(|_| "model payload is not UTF-8".to_string())?;
        let model = AnnModel::from_json(text).map_err(|e| format!("model payload: {e}"))?;
        if model.n_inputs() != self.manifest.inputs.len() {
            return Err(format!(
                "model takes {} inputs but the manifest binds {}",
                model.n_inputs(),
                self.manifest.inputs.len()
            ));
        }
        Ok(model)
    }

    /// Writes the manifest and files under `dir`.
    pub fn unpack_to(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir.join("model"))?;
        std::fs::create_dir_all(dir.join("data"))?;
        std::fs::write(dir.join(MANIFEST), serde_json::to_vec_pretty(&self.manifest)?)?;
        for (path, bytes) in &self.files {
            let target = dir.join(path);
            if let Some(parent) = target.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(target, bytes)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ann::AnnConfig;
    use crate::windowing::{Aggregate, Cadence};

    fn manifest() -> PmaManifest {
        let rule = |id: &str, stream: &str, lag: i64, idx: usize| WindowRule {
            rule_id: id.into(),
            source_stream: stream.into(),
            aggregate: Aggregate::Avg,
            window_secs: 3600,
            lag_secs: lag,
            cadence: Cadence::PerPoint,
            input_index: idx,
        };
        PmaManifest {
            pma_version: 1,
            mid: "wt".into(),
            name: "water temperature".into(),
            executor: ExecutorKind::NativeAnn,
            engine: None,
            command_template: None,
            model_file: DEFAULT_MODEL_FILE.into(),
            inputs: vec![rule("tm", "tm", 0, 0), rule("tm17", "tm", 61200, 2), rule("rf", "rf", 0, 1)],
            output_stream: "pred".into(),
        }
    }

    #[test]
    fn zip_round_trip() {
        let model = AnnModel::init(AnnConfig::default(), 3).unwrap();
        let a = PmaArchive::native(manifest(), &model).with_file("data/sample.csv", "timestamp,value\n");
        let b = PmaArchive::from_zip(&a.to_zip()).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.native_model().unwrap(), model);
        let order: Vec<&str> = b.manifest.binding().iter().map(|r| r.rule_id.as_str()).collect();
        assert_eq!(order, ["tm", "rf", "tm17"]);
    }

    #[test]
    fn layout_violations() {
        assert!(PmaArchive::from_zip(b"not a zip").is_err());
        let mut zip = zip::ZipWriter::new(Cursor::new(Vec::new()));
        zip.start_file("model/model.json", SimpleFileOptions::default()).unwrap();
        zip.write_all(b"{}").unwrap();
        let bytes = zip.finish().unwrap().into_inner();
        let err = PmaArchive::from_zip(&bytes).unwrap_err();
        assert!(err.contains("manifest.json"), "{err}");

        let mut m = manifest();
        m.inputs[1].input_index = 5;
        assert!(m.validate().unwrap_err().contains("dense"));
        let mut m = manifest();
        m.executor = ExecutorKind::External;
        assert!(m.validate().is_err());
    }

    #[test]
    fn arity_mismatch_is_rejected() {
        let model = AnnModel::init(
            AnnConfig {
                n_inputs: 2,
                ..AnnConfig::default()
            },
            1,
        )
        .unwrap();
        let a = PmaArchive::native(manifest(), &model);
        assert!(a.native_model().unwrap_err().contains("inputs"));
    }
}
