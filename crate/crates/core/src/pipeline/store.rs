//! On-disk registry layout:
//!
//! ```text
//! <dir>/manifest.json        format version, dims, config + hash, model list
//! <dir>/models/<key>.json    one serialized model per key
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::registry::{hex, Model, ModelKey, ModelRegistry, RegistryConfig, RegistryDims};

pub const REGISTRY_FORMAT_VERSION: u32 = 1;
const MANIFEST_FILE: &str = "manifest.json";
const MODEL_DIR: &str = "models";

#[derive(Debug, Serialize, Deserialize)]
struct RegistryManifest {
    format_version: u32,
    dims: RegistryDims,
    config: RegistryConfig,
    config_hash: String,
    models: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    key: ModelKey,
    file: String,
    training_utterances: usize,
}

impl ModelRegistry {
    fn manifest(&self) -> RegistryManifest {
        RegistryManifest {
            format_version: REGISTRY_FORMAT_VERSION,
            dims: self.dims.clone(),
            config: self.config.clone(),
            config_hash: self.config.hash(),
            models: self
                .training_counts
                .iter()
                .map(|(key, &n)| ManifestEntry {
                    key: *key,
                    file: format!("{MODEL_DIR}/{key}.json"),
                    training_utterances: n,
                })
                .collect(),
        }
    }

    fn serialized(&self) -> Result<Vec<(String, String)>> {
        let manifest = self.manifest();
        let mut files = vec![(
            MANIFEST_FILE.to_string(),
            serde_json::to_string_pretty(&manifest)?,
        )];
        for entry in &manifest.models {
            let model = self.model(entry.key).expect("manifest lists present models");
            files.push((entry.file.clone(), serde_json::to_string(&model)?));
        }
        Ok(files)
    }

    /// SHA-256 over the manifest and every model file, in key order. Equal
    /// hashes mean equal registries.
    pub fn content_hash(&self) -> Result<String> {
        let mut h = Sha256::new();
        for (name, body) in self.serialized()? {
            h.update(name.as_bytes());
            h.update([0]);
            h.update(body.as_bytes());
            h.update([0]);
        }
        Ok(hex(&h.finalize()))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join(MODEL_DIR))?;
        for (name, body) in self.serialized()? {
            fs::write(dir.join(name), body)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        let manifest: RegistryManifest = serde_json::from_str(&text)?;
        if manifest.format_version != REGISTRY_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                expected: REGISTRY_FORMAT_VERSION,
                found: manifest.format_version,
            });
        }
        if manifest.config_hash != manifest.config.hash() {
            return Err(Error::InvalidModel(
                "registry manifest config hash does not match its config".into(),
            ));
        }
        let models = manifest
            .models
            .iter()
            .map(|e| {
                let body = fs::read_to_string(dir.join(&e.file))?;
                let model: Model = serde_json::from_str(&body)?;
                Ok((e.key, model, e.training_utterances))
            })
            .collect::<Result<Vec<_>>>()?;
        ModelRegistry::from_models(manifest.dims, manifest.config, models)
    }
}
