//! Append-only on-disk cache of backbone features.
//!
//! ```text
//! magic    4 bytes "MCGC"
//! version  u32     1
//! hash     u32 byte length + UTF-8 config hash
//! records, repeated until EOF:
//!   sample id  u32 byte length + UTF-8
//!   path id    u8  (0 = HSV-fundus, 1 = YCbCr-fundus, 2 = Gray-OCT)
//!   sigma      f64
//!   dim        u32
//!   values     f32 x dim
//! ```
//!
//! A truncated trailing record (interrupted run) is dropped on open and the
//! file is cut back to the last complete record, so earlier entries survive.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::attention::PathId;
use crate::error::{Error, Result};

const MAGIC: [u8; 4] = *b"MCGC";
const VERSION: u32 = 1;

type Key = (String, PathId, u64);

pub struct FeatureCache {
    path: PathBuf,
    entries: Mutex<HashMap<Key, Vec<f32>>>,
    writer: Mutex<BufWriter<File>>,
}

fn header(hash: &str) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend(MAGIC);
    out.extend(VERSION.to_le_bytes());
    out.extend((hash.len() as u32).to_le_bytes());
    out.extend(hash.as_bytes());
    out
}

/// Parses complete records; returns them plus the byte length they span.
fn parse_records(buf: &[u8], mut pos: usize) -> (Vec<(Key, Vec<f32>)>, usize) {
    let mut out = Vec::new();
    let take = |pos: &mut usize, n: usize| -> Option<&[u8]> {
        let s = buf.get(*pos..pos.checked_add(n)?)?;
        *pos += n;
        Some(s)
    };
    loop {
        let start = pos;
        let rec = (|| {
            let n = u32::from_le_bytes(take(&mut pos, 4)?.try_into().ok()?) as usize;
            let id = String::from_utf8(take(&mut pos, n)?.to_vec()).ok()?;
            let path = PathId::from_code(take(&mut pos, 1)?[0])?;
            let sigma = f64::from_le_bytes(take(&mut pos, 8)?.try_into().ok()?);
            let dim = u32::from_le_bytes(take(&mut pos, 4)?.try_into().ok()?) as usize;
            let vals = take(&mut pos, dim.checked_mul(4)?)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Some(((id, path, sigma.to_bits()), vals))
        })();
        match rec {
            Some(r) => out.push(r),
            None => return (out, start),
        }
    }
}

impl FeatureCache {
    /// Opens (or creates) the cache at `path`. An existing file written under
    /// a different config hash is discarded.
    pub fn open(path: impl AsRef<Path>, config_hash: &str) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let head = header(config_hash);
        let mut entries = HashMap::new();
        let mut valid_len = 0;
        if let Ok(buf) = std::fs::read(&path) {
            if buf.starts_with(&head) {
                let (records, end) = parse_records(&buf, head.len());
                entries.extend(records);
                valid_len = end;
            }
        }
        let file = if valid_len == 0 {
            let mut f = File::create(&path).map_err(|e| Error::io(&path, e))?;
            f.write_all(&head).map_err(|e| Error::io(&path, e))?;
            f
        } else {
            let f = OpenOptions::new().append(true).open(&path).map_err(|e| Error::io(&path, e))?;
            f.set_len(valid_len as u64).map_err(|e| Error::io(&path, e))?;
            f
        };
        Ok(FeatureCache { path, entries: Mutex::new(entries), writer: Mutex::new(BufWriter::new(file)) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, sample_id: &str, path: PathId, sigma: f64) -> Option<Vec<f32>> {
        self.entries.lock().unwrap().get(&(sample_id.to_string(), path, sigma.to_bits())).cloned()
    }

    pub fn insert(&self, sample_id: &str, path: PathId, sigma: f64, values: &[f32]) -> Result<()> {
        let mut rec = Vec::with_capacity(sample_id.len() + 17 + values.len() * 4);
        rec.extend((sample_id.len() as u32).to_le_bytes());
        rec.extend(sample_id.as_bytes());
        rec.push(path.code());
        rec.extend(sigma.to_le_bytes());
        rec.extend((values.len() as u32).to_le_bytes());
        for v in values {
            rec.extend(v.to_le_bytes());
        }
        self.writer.lock().unwrap().write_all(&rec).map_err(|e| Error::io(&self.path, e))?;
        self.entries.lock().unwrap().insert((sample_id.to_string(), path, sigma.to_bits()), values.to_vec());
        Ok(())
    }

    pub fn flush(&self) -> Result<()> {
        self.writer.lock().unwrap().flush().map_err(|e| Error::io(&self.path, e))
    }
}

impl Drop for FeatureCache {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn persists_and_survives_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.bin");
        {
            let c = FeatureCache::open(&p, "abc").unwrap();
            c.insert("s1", PathId::HsvFundus, 1.0, &[1.0, 2.0]).unwrap();
            c.insert("s2", PathId::GrayOct, 4.0, &[3.0]).unwrap();
        }
        let len = std::fs::metadata(&p).unwrap().len();
        let c = FeatureCache::open(&p, "abc").unwrap();
        assert_eq!(c.get("s1", PathId::HsvFundus, 1.0), Some(vec![1.0, 2.0]));
        assert_eq!(c.get("s1", PathId::HsvFundus, 4.0), None);
        drop(c);

        // Chop the last record in half: the first one must survive.
        let f = OpenOptions::new().write(true).open(&p).unwrap();
        f.set_len(len - 3).unwrap();
        let c = FeatureCache::open(&p, "abc").unwrap();
        assert_eq!(c.len(), 1);
        c.insert("s3", PathId::YCbCrFundus, 1.0, &[5.0]).unwrap();
        drop(c);
        let c = FeatureCache::open(&p, "abc").unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.get("s3", PathId::YCbCrFundus, 1.0), Some(vec![5.0]));
        drop(c);

        let c = FeatureCache::open(&p, "other").unwrap();
        assert!(c.is_empty());
    }
}
