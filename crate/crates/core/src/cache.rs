//! Content-addressed stage cache.
//!
//! Every pipeline stage writes its artifact to
//! `<cache_dir>/<stage>/<key digest>.json`, where the key digest covers the
//! stage name, the digests of its inputs and every config field that affects
//! the stage's output. Reruns with identical keys are no-ops: the artifact is
//! read back instead of recomputed. Artifacts are canonical JSON, so identical
//! results produce identical bytes and file digests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

/// A stage cache key: stage name, named input digests, stage parameters.
#[derive(Debug, Clone)]
pub struct StageKey {
    stage: &'static str,
    payload: Value,
}

impl StageKey {
    pub fn new(stage: &'static str, inputs: &[(&str, &str)], params: Value) -> Self {
        let inputs: serde_json::Map<String, Value> = inputs
            .iter()
            .map(|(name, digest)| (name.to_string(), Value::String(digest.to_string())))
            .collect();
        StageKey {
            stage,
            payload: serde_json::json!({
                "stage": stage,
                "inputs": inputs,
                "params": params,
            }),
        }
    }

    pub fn stage(&self) -> &'static str {
        self.stage
    }

    /// Hex SHA-256 of the canonical key payload.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.payload.to_string().as_bytes()))
    }
}

#[derive(Debug, Default)]
pub struct CacheStats {
    by_stage: Mutex<BTreeMap<&'static str, (usize, usize)>>,
}

impl CacheStats {
    fn record(&self, stage: &'static str, hit: bool) {
        let mut map = self.by_stage.lock().expect("stats poisoned");
        let entry = map.entry(stage).or_insert((0, 0));
        if hit {
            entry.0 += 1;
        } else {
            entry.1 += 1;
        }
    }

    pub fn hits(&self) -> usize {
        self.by_stage
            .lock()
            .expect("stats poisoned")
            .values()
            .map(|(h, _)| h)
            .sum()
    }

    pub fn misses(&self) -> usize {
        self.by_stage
            .lock()
            .expect("stats poisoned")
            .values()
            .map(|(_, m)| m)
            .sum()
    }

    pub fn stage_hits(&self, stage: &str) -> usize {
        self.by_stage
            .lock()
            .expect("stats poisoned")
            .get(stage)
            .map(|(h, _)| *h)
            .unwrap_or(0)
    }

    /// Stage -> (hits, misses) snapshot.
    pub fn by_stage(&self) -> BTreeMap<String, (usize, usize)> {
        self.by_stage
            .lock()
            .expect("stats poisoned")
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect()
    }
}

pub struct StageCache {
    root: PathBuf,
    enabled: bool,
    stats: CacheStats,
}

impl StageCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        StageCache {
            root: root.into(),
            enabled: true,
            stats: CacheStats::default(),
        }
    }

    /// A cache that never hits and never writes; sweeps use it to prove cached
    /// and uncached runs agree.
    pub fn disabled(root: impl Into<PathBuf>) -> Self {
        StageCache {
            root: root.into(),
            enabled: false,
            stats: CacheStats::default(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn stats(&self) -> &CacheStats {
        &self.stats
    }

    pub fn artifact_path(&self, key: &StageKey) -> PathBuf {
        self.root
            .join(key.stage())
            .join(format!("{}.json", key.digest()))
    }

    /// Fetch a cached artifact, if present.
    pub fn lookup<T: DeserializeOwned>(&self, key: &StageKey) -> Option<T> {
        if !self.enabled {
            return None;
        }
        let path = self.artifact_path(key);
        let bytes = std::fs::read(&path).ok()?;
        let parse = || -> Result<T, serde_json::Error> {
            let mut wrapper: serde_json::Map<String, Value> = serde_json::from_slice(&bytes)?;
            let artifact = wrapper.remove("artifact").unwrap_or(Value::Null);
            serde_json::from_value(artifact)
        };
        match parse() {
            Ok(value) => {
                self.stats.record(key.stage(), true);
                log::debug!("cache hit: {} {}", key.stage(), key.digest());
                Some(value)
            }
            Err(e) => {
                log::warn!("cache entry {} is corrupt: {e}", path.display());
                None
            }
        }
    }

    /// Write an artifact wrapped with its key material (stage, input digests,
    /// parameters) so every file on disk records what produced it. The
    /// returned digest covers the artifact alone.
    pub fn store<T: Serialize>(
        &self,
        key: &StageKey,
        artifact: &T,
    ) -> std::io::Result<(PathBuf, String)> {
        self.stats.record(key.stage(), false);
        let bytes = canonical_json_bytes(artifact)?;
        let digest = hex::encode(Sha256::digest(&bytes));
        let path = self.artifact_path(key);
        if self.enabled {
            std::fs::create_dir_all(path.parent().expect("artifact path has a parent"))?;
            let artifact_value: Value = serde_json::from_slice(&bytes)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
            let wrapper = serde_json::json!({
                "key": key.payload,
                "key_digest": key.digest(),
                "artifact_digest": digest,
                "artifact": artifact_value,
            });
            std::fs::write(&path, wrapper.to_string())?;
        }
        Ok((path, digest))
    }

    /// Run `compute` unless the artifact for `key` already exists.
    ///
    /// Returns the artifact and the digest of its canonical bytes.
    pub fn get_or_compute<T, E, F>(&self, key: &StageKey, compute: F) -> Result<(T, String), E>
    where
        T: Serialize + DeserializeOwned,
        E: From<std::io::Error>,
        F: FnOnce() -> Result<T, E>,
    {
        if let Some(cached) = self.lookup::<T>(key) {
            let bytes = canonical_json_bytes(&cached).map_err(E::from)?;
            let digest = hex::encode(Sha256::digest(&bytes));
            return Ok((cached, digest));
        }
        let artifact = compute()?;
        let (_, digest) = self.store(key, &artifact).map_err(E::from)?;
        Ok((artifact, digest))
    }
}

/// Canonical artifact encoding: serde_json with sorted maps (the default
/// `Value` object is a BTreeMap) and no whitespace.
pub fn canonical_json_bytes<T: Serialize>(value: &T) -> std::io::Result<Vec<u8>> {
    let value = serde_json::to_value(value)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
    Ok(value.to_string().into_bytes())
}
