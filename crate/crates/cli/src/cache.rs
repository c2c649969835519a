//! Content-addressed result cache.
//!
//! One file per key. The file is a short text header followed by the
//! base64 payload:
//!
//! ```text
//! schottky-cache 1
//! key <hex>
//! sha256 <hex of the payload bytes>
//!
//! <base64 payload>
//! ```
//!
//! Writes go to a temporary file in the same directory and are renamed into
//! place, so readers never observe a partial entry.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use sha2::{Digest, Sha256};

pub const CACHE_VERSION: u32 = 1;
pub const CACHE_ENV: &str = "SCHOTTKY_CACHE_DIR";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// `$SCHOTTKY_CACHE_DIR`, else `$HOME/.cache/schottky`.
pub fn default_dir() -> Option<PathBuf> {
    if let Some(d) = std::env::var_os(CACHE_ENV) {
        return Some(PathBuf::from(d));
    }
    std::env::var_os("HOME").map(|h| PathBuf::from(h).join(".cache").join("schottky"))
}

#[derive(Clone, Debug)]
pub struct Cache {
    dir: PathBuf,
    version: u32,
}

impl Cache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self::with_version(dir, CACHE_VERSION)
    }

    pub fn with_version(dir: impl Into<PathBuf>, version: u32) -> Self {
        Self { dir: dir.into(), version }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.entry"))
    }

    /// The stored payload, or `None` on a miss, a stale version or a
    /// checksum mismatch.
    pub fn get(&self, key: &str) -> Option<Vec<u8>> {
        let text = fs::read_to_string(self.path(key)).ok()?;
        let mut lines = text.lines();
        let version: u32 = lines.next()?.strip_prefix("schottky-cache ")?.parse().ok()?;
        if version != self.version {
            return None;
        }
        if lines.next()?.strip_prefix("key ")? != key {
            return None;
        }
        let sum = lines.next()?.strip_prefix("sha256 ")?.to_string();
        if !lines.next()?.is_empty() {
            return None;
        }
        let body: String = lines.collect();
        let payload = STANDARD.decode(body.as_bytes()).ok()?;
        (sha256_hex(&payload) == sum).then_some(payload)
    }

    pub fn put(&self, key: &str, payload: &[u8]) -> io::Result<()> {
        fs::create_dir_all(&self.dir)?;
        let tmp = self.dir.join(format!(".{key}.{}.tmp", std::process::id()));
        {
            let mut f = fs::File::create(&tmp)?;
            writeln!(f, "schottky-cache {}", self.version)?;
            writeln!(f, "key {key}")?;
            writeln!(f, "sha256 {}", sha256_hex(payload))?;
            writeln!(f)?;
            let encoded = STANDARD.encode(payload);
            for chunk in encoded.as_bytes().chunks(76) {
                f.write_all(chunk)?;
                f.write_all(b"\n")?;
            }
            f.sync_all()?;
        }
        fs::rename(&tmp, self.path(key))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trips(payload in proptest::collection::vec(any::<u8>(), 0..600)) {
            let dir = tempfile::tempdir().unwrap();
            let c = Cache::new(dir.path());
            c.put("k", &payload).unwrap();
            prop_assert_eq!(c.get("k"), Some(payload));
        }
    }

    #[test]
    fn version_bump_and_corruption_miss() {
        let dir = tempfile::tempdir().unwrap();
        let c = Cache::new(dir.path());
        assert_eq!(c.get("abc"), None);
        c.put("abc", b"q,T,count\n").unwrap();
        assert_eq!(Cache::with_version(dir.path(), CACHE_VERSION + 1).get("abc"), None);
        let p = dir.path().join("abc.entry");
        let text = fs::read_to_string(&p).unwrap();
        let bad = text.replace(&STANDARD.encode(b"q,T,count\n"), &STANDARD.encode(b"q,T,count\r"));
        assert_ne!(bad, text);
        fs::write(&p, bad).unwrap();
        assert_eq!(c.get("abc"), None);
    }
}
