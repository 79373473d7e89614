//! Content-addressed embedding cache.
//!
//! Per provider there are two files in the cache directory:
//! `<provider>.f32` holds rows of `dimension` little-endian `f32`s, and
//! `<provider>.idx` holds one `sha256(text)<TAB>row` line per row. Rows are
//! appended and never evicted.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use thiserror::Error;

use super::ProviderDescriptor;
use crate::util::sha256_hex;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("embedding cache I/O at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("embedding cache {path} is corrupt: {detail}")]
    Corrupt { path: String, detail: String },
    #[error("cache opened for {expected}, used with provider {found}")]
    WrongProvider { expected: String, found: String },
}

struct Files {
    data: File,
    index: File,
    rows: usize,
}

pub struct EmbeddingCache {
    descriptor: ProviderDescriptor,
    data_path: PathBuf,
    index_path: PathBuf,
    entries: RwLock<HashMap<String, Vec<f64>>>,
    files: Mutex<Files>,
}

fn file_stem(provider_id: &str) -> String {
    provider_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CacheError + '_ {
    move |source| CacheError::Io {
        path: path.display().to_string(),
        source,
    }
}

impl EmbeddingCache {
    pub fn open(dir: &Path, descriptor: &ProviderDescriptor) -> Result<Self, CacheError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let stem = file_stem(&descriptor.provider_id);
        let data_path = dir.join(format!("{stem}.f32"));
        let index_path = dir.join(format!("{stem}.idx"));
        let dim = descriptor.dimension;

        let mut raw = Vec::new();
        if data_path.exists() {
            File::open(&data_path)
                .and_then(|mut f| f.read_to_end(&mut raw))
                .map_err(io_err(&data_path))?;
        }
        let row_bytes = dim * 4;
        if raw.len() % row_bytes != 0 {
            return Err(CacheError::Corrupt {
                path: data_path.display().to_string(),
                detail: format!("{} bytes is not a whole number of {dim}-float rows", raw.len()),
            });
        }
        let rows = raw.len() / row_bytes;

        let mut entries = HashMap::new();
        if index_path.exists() {
            let f = File::open(&index_path).map_err(io_err(&index_path))?;
            for (n, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(io_err(&index_path))?;
                let corrupt = |detail: String| CacheError::Corrupt {
                    path: index_path.display().to_string(),
                    detail: format!("line {}: {detail}", n + 1),
                };
                let (hash, row) = line
                    .split_once('\t')
                    .ok_or_else(|| corrupt("expected <hash>\\t<row>".into()))?;
                let row: usize = row.parse().map_err(|_| corrupt(format!("bad row {row:?}")))?;
                if row >= rows {
                    return Err(corrupt(format!("row {row} beyond {rows} stored rows")));
                }
                let bytes = &raw[row * row_bytes..(row + 1) * row_bytes];
                let v = bytes
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                    .collect();
                entries.insert(hash.to_string(), v);
            }
        }

        let data = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&data_path)
            .map_err(io_err(&data_path))?;
        let index = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&index_path)
            .map_err(io_err(&index_path))?;
        Ok(Self {
            descriptor: descriptor.clone(),
            data_path,
            index_path,
            entries: RwLock::new(entries),
            files: Mutex::new(Files { data, index, rows }),
        })
    }

    pub(crate) fn check_descriptor(&self, d: &ProviderDescriptor) -> Result<(), CacheError> {
        if d.provider_id != self.descriptor.provider_id || d.dimension != self.descriptor.dimension {
            return Err(CacheError::WrongProvider {
                expected: format!("{}/{}", self.descriptor.provider_id, self.descriptor.dimension),
                found: format!("{}/{}", d.provider_id, d.dimension),
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, text: &str) -> Option<Vec<f64>> {
        let key = sha256_hex(text.as_bytes());
        self.entries.read().expect("cache lock poisoned").get(&key).cloned()
    }

    /// Appends a vector. Values must already be `f32`-representable.
    pub fn put(&self, text: &str, values: &[f64]) -> Result<(), CacheError> {
        debug_assert_eq!(values.len(), self.descriptor.dimension);
        let key = sha256_hex(text.as_bytes());
        let mut files = self.files.lock().expect("cache lock poisoned");
        if self.entries.read().expect("cache lock poisoned").contains_key(&key) {
            return Ok(());
        }
        let mut bytes = Vec::with_capacity(values.len() * 4);
        for v in values {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        // data before index: an index line never points past the data file
        files.data.write_all(&bytes).map_err(io_err(&self.data_path))?;
        files.data.flush().map_err(io_err(&self.data_path))?;
        let row = files.rows;
        writeln!(files.index, "{key}\t{row}").map_err(io_err(&self.index_path))?;
        files.rows += 1;
        self.entries
            .write()
            .expect("cache lock poisoned")
            .insert(key, values.to_vec());
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::Pooling;

    fn desc(dim: usize) -> ProviderDescriptor {
        ProviderDescriptor {
            provider_id: "test/provider".into(),
            dimension: dim,
            pooling: Pooling::Native,
        }
    }

    #[test]
    fn persists_across_reopen() {
        let dir = tempfile::tempdir().unwrap();
        {
            let c = EmbeddingCache::open(dir.path(), &desc(3)).unwrap();
            c.put("a", &[1.0, 2.0, 0.5]).unwrap();
            c.put("b", &[-1.0, 0.0, 0.25]).unwrap();
            c.put("a", &[9.0, 9.0, 9.0]).unwrap();
        }
        let c = EmbeddingCache::open(dir.path(), &desc(3)).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.get("a").unwrap(), vec![1.0, 2.0, 0.5]);
        assert_eq!(c.get("b").unwrap(), vec![-1.0, 0.0, 0.25]);
        assert!(dir.path().join("test_provider.f32").exists());
        assert_eq!(fs::metadata(dir.path().join("test_provider.f32")).unwrap().len(), 24);
    }

    #[test]
    fn truncated_data_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        {
            let c = EmbeddingCache::open(dir.path(), &desc(2)).unwrap();
            c.put("a", &[1.0, 2.0]).unwrap();
        }
        let p = dir.path().join("test_provider.f32");
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..5]).unwrap();
        assert!(matches!(
            EmbeddingCache::open(dir.path(), &desc(2)),
            Err(CacheError::Corrupt { .. })
        ));
    }

    #[test]
    fn concurrent_writers_are_serialized() {
        let dir = tempfile::tempdir().unwrap();
        let c = EmbeddingCache::open(dir.path(), &desc(4)).unwrap();
        std::thread::scope(|s| {
            for t in 0..4 {
                let c = &c;
                s.spawn(move || {
                    for i in 0..50 {
                        let v = [t as f64, i as f64, 0.0, 1.0];
                        c.put(&format!("{t}-{i}"), &v).unwrap();
                    }
                });
            }
        });
        drop(c);
        let c = EmbeddingCache::open(dir.path(), &desc(4)).unwrap();
        assert_eq!(c.len(), 200);
        assert_eq!(c.get("3-17").unwrap(), vec![3.0, 17.0, 0.0, 1.0]);
    }
}
