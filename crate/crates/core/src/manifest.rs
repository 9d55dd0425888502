//! Paired fundus/OCT dataset manifest.
//!
//! On disk this is a CSV file with the fixed header
//! `sample_id,fundus_path,oct_path,label,provenance`. Relative paths are
//! resolved against the directory holding the manifest.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_HEADER: [&str; 5] = ["sample_id", "fundus_path", "oct_path", "label", "provenance"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AmdClass {
    Normal,
    NonNeovascular,
    Neovascular,
}

impl AmdClass {
    pub const ALL: [AmdClass; 3] = [AmdClass::Normal, AmdClass::NonNeovascular, AmdClass::Neovascular];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AmdClass::Normal => "normal",
            AmdClass::NonNeovascular => "non-neovascular",
            AmdClass::Neovascular => "neovascular",
        }
    }

    /// Identifier safe for file names (`roc_<slug>.csv`).
    pub fn slug(self) -> &'static str {
        match self {
            AmdClass::Normal => "normal",
            AmdClass::NonNeovascular => "non_neovascular",
            AmdClass::Neovascular => "neovascular",
        }
    }
}

impl fmt::Display for AmdClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AmdClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Manifest(format!("unknown label {s:?}")))
    }
}

/// Geometric and photometric parameters of one augmented image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub rotation_deg: f64,
    pub translate_x_frac: f64,
    pub translate_y_frac: f64,
    pub contrast_delta: f64,
    pub seed: u64,
}

impl AugmentParams {
    pub const ROTATION_RANGE: f64 = 25.0;
    pub const TRANSLATE_RANGE: f64 = 0.10;
    pub const CONTRAST_RANGE: f64 = 0.50;

    pub fn identity(seed: u64) -> Self {
        AugmentParams { rotation_deg: 0.0, translate_x_frac: 0.0, translate_y_frac: 0.0, contrast_delta: 0.0, seed }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |what, value: f64, bound: f64| {
            if value.is_finite() && value.abs() <= bound {
                Ok(())
            } else {
                Err(Error::Range { what, value, min: -bound, max: bound })
            }
        };
        check("rotation_deg", self.rotation_deg, Self::ROTATION_RANGE)?;
        check("translate_x_frac", self.translate_x_frac, Self::TRANSLATE_RANGE)?;
        check("translate_y_frac", self.translate_y_frac, Self::TRANSLATE_RANGE)?;
        check("contrast_delta", self.contrast_delta, Self::CONTRAST_RANGE)
    }

    fn encode(&self) -> String {
        format!(
            "rot:{},tx:{},ty:{},contrast:{}",
            self.rotation_deg, self.translate_x_frac, self.translate_y_frac, self.contrast_delta
        )
    }

    fn decode(s: &str, seed: u64) -> Result<Self> {
        let bad = || Error::Manifest(format!("malformed augment params {s:?}"));
        let mut vals = [0.0; 4];
        let keys = ["rot", "tx", "ty", "contrast"];
        let parts: Vec<&str> = s.split(',').collect();
        if parts.len() != 4 {
            return Err(bad());
        }
        for ((part, key), v) in parts.iter().zip(keys).zip(&mut vals) {
            let (k, val) = part.split_once(':').ok_or_else(bad)?;
            if k != key {
                return Err(bad());
            }
            *v = val.parse().map_err(|_| bad())?;
        }
        Ok(AugmentParams {
            rotation_deg: vals[0],
            translate_x_frac: vals[1],
            translate_y_frac: vals[2],
            contrast_delta: vals[3],
            seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    Original,
    Augmented { source_id: String, fundus: AugmentParams, oct: AugmentParams },
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Original => f.write_str("original"),
            Provenance::Augmented { source_id, fundus, oct } => write!(
                f,
                "aug;src={source_id};seed={};fundus={};oct={}",
                fundus.seed,
                fundus.encode(),
                oct.encode()
            ),
        }
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "original" {
            return Ok(Provenance::Original);
        }
        let bad = || Error::Manifest(format!("malformed provenance {s:?}"));
        let rest = s.strip_prefix("aug;").ok_or_else(bad)?;
        let mut fields = rest.splitn(4, ';');
        let mut take = |key: &str| -> Result<&str> {
            fields
                .next()
                .and_then(|f| f.strip_prefix(key))
                .and_then(|f| f.strip_prefix('='))
                .ok_or_else(bad)
        };
        let source_id = take("src")?.to_string();
        let seed: u64 = take("seed")?.parse().map_err(|_| bad())?;
        let fundus = AugmentParams::decode(take("fundus")?, seed)?;
        let oct = AugmentParams::decode(take("oct")?, seed)?;
        Ok(Provenance::Augmented { source_id, fundus, oct })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub sample_id: String,
    pub fundus_path: PathBuf,
    pub oct_path: PathBuf,
    pub label: AmdClass,
    pub provenance: Provenance,
}

impl Record {
    /// Id of the original pair this record derives from (itself if original).
    pub fn source_id(&self) -> &str {
        match &self.provenance {
            Provenance::Original => &self.sample_id,
            Provenance::Augmented { source_id, .. } => source_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub records: Vec<Record>,
}

impl Manifest {
    pub fn new(records: Vec<Record>) -> Result<Self> {
        let m = Manifest { records };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if r.sample_id.is_empty() {
                return Err(Error::Manifest("empty sample id".into()));
            }
            if !seen.insert(r.sample_id.as_str()) {
                return Err(Error::Manifest(format!("duplicate sample id {:?}", r.sample_id)));
            }
            if r.fundus_path.as_os_str().is_empty() || r.oct_path.as_os_str().is_empty() {
                return Err(Error::Manifest(format!("sample {:?} is missing an image path", r.sample_id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label.index()).collect()
    }

    pub fn class_counts(&self) -> [usize; AmdClass::COUNT] {
        let mut counts = [0; AmdClass::COUNT];
        for r in &self.records {
            counts[r.label.index()] += 1;
        }
        counts
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::FileNotFound(path.to_path_buf())
            } else {
                Error::io(path, e)
            }
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&bytes, base)
    }

    /// Parses manifest CSV bytes, resolving relative paths against `base`.
    pub fn parse(bytes: &[u8], base: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
        let header = rdr.headers().map_err(|e| Error::Manifest(e.to_string()))?;
        if header.iter().ne(MANIFEST_HEADER) {
            return Err(Error::Manifest(format!(
                "expected header {}, found {}",
                MANIFEST_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut records = Vec::new();
        for row in rdr.records() {
            let row = row.map_err(|e| Error::Manifest(e.to_string()))?;
            let resolve = |p: &str| {
                let p = Path::new(p);
                if p.is_absolute() { p.to_path_buf() } else { base.join(p) }
            };
            records.push(Record {
                sample_id: row[0].to_string(),
                fundus_path: resolve(&row[1]),
                oct_path: resolve(&row[2]),
                label: row[3].parse()?,
                provenance: row[4].parse()?,
            });
        }
        Manifest::new(records)
    }

    /// Serializes to CSV. Paths under `base` are written relative to it.
    pub fn to_csv(&self, base: &Path) -> Result<Vec<u8>> {
        let mut wtr = csv::WriterBuilder::new().from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Manifest(e.to_string());
        wtr.write_record(MANIFEST_HEADER).map_err(csv_err)?;
        let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).to_string_lossy().into_owned();
        for r in &self.records {
            wtr.write_record([
                r.sample_id.clone(),
                rel(&r.fundus_path),
                rel(&r.oct_path),
                r.label.as_str().to_string(),
                r.provenance.to_string(),
            ])
            .map_err(csv_err)?;
        }
        wtr.into_inner().map_err(|e| Error::Manifest(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new(""));
        std::fs::write(path, self.to_csv(base)?).map_err(|e| Error::io(path, e))
    }
}
