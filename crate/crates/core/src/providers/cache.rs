use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;

use super::EmbeddingVector;

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Embedding cache keyed by (provider id, model id, content hash).
///
/// Entries live in memory and, when a directory is configured, on disk as one
/// little-endian `f64` file per entry so cached vectors are bit-identical to
/// freshly computed ones. Each file is written to a temporary name and renamed
/// into place.
#[derive(Debug, Default)]
pub struct EmbeddingCache {
    dir: Option<PathBuf>,
    memory: RwLock<HashMap<String, EmbeddingVector>>,
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: Some(dir.into()),
            memory: RwLock::default(),
        }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn entry_path(&self, provider: &str, model: &str, hash: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| {
            d.join(sanitize(provider))
                .join(sanitize(model))
                .join(format!("{hash}.f64"))
        })
    }

    fn memory_key(provider: &str, model: &str, hash: &str) -> String {
        format!("{provider}\u{0}{model}\u{0}{hash}")
    }

    pub fn get(&self, provider: &str, model: &str, hash: &str, dim: usize) -> io::Result<Option<EmbeddingVector>> {
        let key = Self::memory_key(provider, model, hash);
        if let Some(v) = self.memory.read().unwrap().get(&key) {
            return Ok((v.dim() == dim).then(|| v.clone()));
        }
        let Some(path) = self.entry_path(provider, model, hash) else {
            return Ok(None);
        };
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e),
        };
        if bytes.len() != dim * 8 {
            // stale entry from a provider with a different dimension
            return Ok(None);
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let v = EmbeddingVector::new(values);
        self.memory.write().unwrap().insert(key, v.clone());
        Ok(Some(v))
    }

    pub fn put(&self, provider: &str, model: &str, hash: &str, vector: &EmbeddingVector) -> io::Result<()> {
        if let Some(path) = self.entry_path(provider, model, hash) {
            let parent = path.parent().expect("entry path has a parent");
            fs::create_dir_all(parent)?;
            let bytes: Vec<u8> = vector.values().iter().flat_map(|x| x.to_le_bytes()).collect();
            let tmp = parent.join(format!(
                ".{hash}.{}.{}.tmp",
                std::process::id(),
                TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
            ));
            fs::write(&tmp, bytes)?;
            fs::rename(&tmp, &path)?;
        }
        self.memory
            .write()
            .unwrap()
            .insert(Self::memory_key(provider, model, hash), vector.clone());
        Ok(())
    }
}

fn sanitize(part: &str) -> String {
    part.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_entries_are_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let v = EmbeddingVector::new(vec![0.1, -1.0 / 3.0, f64::MIN_POSITIVE]);
        EmbeddingCache::on_disk(dir.path()).put("p", "m/1", "abc", &v).unwrap();
        let fresh = EmbeddingCache::on_disk(dir.path());
        assert_eq!(fresh.get("p", "m/1", "abc", 3).unwrap(), Some(v));
        assert_eq!(fresh.get("p", "m/1", "missing", 3).unwrap(), None);
        assert_eq!(fresh.get("p", "m/1", "abc", 4).unwrap(), None);
    }

    #[test]
    fn keys_are_scoped_by_provider_and_model() {
        let cache = EmbeddingCache::in_memory();
        let v = EmbeddingVector::new(vec![1.0]);
        cache.put("p", "m", "h", &v).unwrap();
        assert!(cache.get("p", "other", "h", 1).unwrap().is_none());
        assert!(cache.get("q", "m", "h", 1).unwrap().is_none());
        assert!(cache.get("p", "m", "h", 1).unwrap().is_some());
    }
}
