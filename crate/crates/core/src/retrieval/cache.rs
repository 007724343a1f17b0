use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{RetrievalError, Retriever};
use crate::model::RankedList;

/// SHA-256 over (retriever id, query text, limit).
pub fn cache_key(retriever_id: &str, query: &str, limit: usize) -> String {
    let mut hasher = Sha256::new();
    for part in [retriever_id.as_bytes(), query.as_bytes()] {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    hasher.update((limit as u64).to_le_bytes());
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub payload: RankedList,
    /// Unix seconds.
    pub created_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheStatus {
    Hit,
    Miss,
    /// Cache I/O failed or an entry was unreadable; the retriever answered.
    Degraded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CacheStats {
    pub entries: usize,
    pub bytes: u64,
}

/// On-disk cache laid out as `<dir>/<key[..2]>/<key>.json`.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

enum Lookup {
    Found(RankedList),
    Absent,
    Unreadable(String),
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn entry_path(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.json"))
    }

    fn lookup(&self, key: &str) -> Lookup {
        let path = self.entry_path(key);
        let raw = match std::fs::read(&path) {
            Ok(raw) => raw,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Lookup::Absent,
            Err(e) => return Lookup::Unreadable(e.to_string()),
        };
        match serde_json::from_slice::<CacheEntry>(&raw) {
            Ok(entry) if entry.key == key && entry.payload.is_well_formed() => {
                Lookup::Found(entry.payload)
            }
            Ok(_) => Lookup::Unreadable("entry does not match its key".into()),
            Err(e) => Lookup::Unreadable(e.to_string()),
        }
    }

    pub fn get(&self, key: &str) -> Option<RankedList> {
        match self.lookup(key) {
            Lookup::Found(list) => Some(list),
            _ => None,
        }
    }

    /// Write via a temp file in the same directory and rename into place.
    pub fn put(&self, key: &str, payload: &RankedList) -> std::io::Result<()> {
        let path = self.entry_path(key);
        let parent = path.parent().expect("entry path has a parent");
        std::fs::create_dir_all(parent)?;
        let entry = CacheEntry {
            key: key.to_string(),
            payload: payload.clone(),
            created_at: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(parent)?;
        tmp.write_all(&serde_json::to_vec(&entry)?)?;
        tmp.persist(&path).map_err(|e| e.error)?;
        Ok(())
    }

    /// Serve from cache when possible, otherwise delegate and store.
    /// Cache failures never fail the search.
    pub fn cached_search(
        &self,
        retriever: &dyn Retriever,
        query: &str,
        limit: usize,
    ) -> (Result<RankedList, RetrievalError>, CacheStatus) {
        let key = cache_key(&retriever.id(), query, limit);
        let status = match self.lookup(&key) {
            Lookup::Found(list) => return (Ok(list), CacheStatus::Hit),
            Lookup::Absent => CacheStatus::Miss,
            Lookup::Unreadable(reason) => {
                log::warn!("cache entry {key} unreadable ({reason}); passing through");
                CacheStatus::Degraded
            }
        };
        let result = retriever.search(query, limit);
        let mut status = status;
        if let Ok(list) = &result {
            if let Err(e) = self.put(&key, list) {
                log::warn!("cache write for {key} failed: {e}");
                status = CacheStatus::Degraded;
            }
        }
        (result, status)
    }

    fn entry_files(&self) -> Vec<PathBuf> {
        let Ok(shards) = std::fs::read_dir(&self.dir) else {
            return Vec::new();
        };
        let mut files: Vec<PathBuf> = shards
            .filter_map(Result::ok)
            .filter(|e| e.path().is_dir())
            .flat_map(|shard| {
                std::fs::read_dir(shard.path())
                    .into_iter()
                    .flatten()
                    .filter_map(Result::ok)
                    .map(|e| e.path())
                    .filter(|p| p.extension().is_some_and(|x| x == "json"))
            })
            .collect();
        files.sort();
        files
    }

    pub fn stats(&self) -> CacheStats {
        self.entry_files()
            .iter()
            .fold(CacheStats::default(), |mut acc, p| {
                acc.entries += 1;
                acc.bytes += std::fs::metadata(p).map_or(0, |m| m.len());
                acc
            })
    }

    /// Remove every entry; returns how many were deleted.
    pub fn clear(&self) -> std::io::Result<usize> {
        let files = self.entry_files();
        for f in &files {
            std::fs::remove_file(f)?;
        }
        if let Ok(shards) = std::fs::read_dir(&self.dir) {
            for shard in shards.filter_map(Result::ok) {
                let _ = std::fs::remove_dir(shard.path());
            }
        }
        Ok(files.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Document;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting(AtomicUsize);

    impl Retriever for Counting {
        fn id(&self) -> String {
            "counting".into()
        }
        fn search(&self, query: &str, limit: usize) -> Result<RankedList, RetrievalError> {
            self.0.fetch_add(1, Ordering::SeqCst);
            let docs = (0..limit.min(3))
                .map(|i| Document::new("t", format!("{query} {i}"), None).unwrap())
                .collect();
            Ok(RankedList::new(query, docs))
        }
    }

    #[test]
    fn miss_then_hit() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path());
        let r = Counting(AtomicUsize::new(0));
        let (a, s1) = cache.cached_search(&r, "q", 10);
        let (b, s2) = cache.cached_search(&r, "q", 10);
        assert_eq!((s1, s2), (CacheStatus::Miss, CacheStatus::Hit));
        assert_eq!(a.unwrap(), b.unwrap());
        assert_eq!(r.0.load(Ordering::SeqCst), 1);
        let key = cache_key("counting", "q", 10);
        assert!(dir.path().join(&key[..2]).join(format!("{key}.json")).exists());
    }

    #[test]
    fn limit_is_part_of_key() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path());
        let r = Counting(AtomicUsize::new(0));
        let _ = cache.cached_search(&r, "q", 10);
        let (_, status) = cache.cached_search(&r, "q", 5);
        assert_eq!(status, CacheStatus::Miss);
        assert_ne!(cache_key("a", "q", 1), cache_key("b", "q", 1));
    }

    #[test]
    fn corrupted_entry_passes_through() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path());
        let r = Counting(AtomicUsize::new(0));
        let uncached = r.search("q", 10).unwrap();
        let key = cache_key("counting", "q", 10);
        let path = cache.entry_path(&key);
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, b"{corrupt").unwrap();
        let (result, status) = cache.cached_search(&r, "q", 10);
        assert_eq!(status, CacheStatus::Degraded);
        assert_eq!(result.unwrap(), uncached);
        // repaired by the pass-through write
        assert_eq!(cache.cached_search(&r, "q", 10).1, CacheStatus::Hit);
    }

    #[test]
    fn unwritable_cache_degrades() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, b"x").unwrap();
        let cache = ResponseCache::new(blocker.join("sub"));
        let r = Counting(AtomicUsize::new(0));
        let (result, status) = cache.cached_search(&r, "q", 2);
        assert_eq!(status, CacheStatus::Degraded);
        assert_eq!(result.unwrap(), r.search("q", 2).unwrap());
    }

    #[test]
    fn stats_and_clear() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path());
        let r = Counting(AtomicUsize::new(0));
        for q in ["a", "b", "c"] {
            let _ = cache.cached_search(&r, q, 3);
        }
        let stats = cache.stats();
        assert_eq!(stats.entries, 3);
        assert!(stats.bytes > 0);
        assert_eq!(cache.clear().unwrap(), 3);
        assert_eq!(cache.stats().entries, 0);
    }
}
