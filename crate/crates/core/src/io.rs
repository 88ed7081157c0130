//! File formats shared with external tools.
//!
//! # State files
//!
//! Trajectories (Lorenz-2005) and snapshot libraries (QG) use one binary
//! layout, all integers little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic `MFDASTA1` |
//! | 4     | format version (`u32`, currently 1) |
//! | 4     | model tag (`u32`: 0 = Lorenz-2005, 1 = QG) |
//! | 4     | `nx` (`u32`) |
//! | 4     | `ny` (`u32`, 1 for Lorenz-2005) |
//! | 8     | record count (`u64`) |
//! | 8     | dtype, ASCII `f64le` padded with zeros |
//! | ...   | `count` records: step index (`u64`) then `nx·ny` values (`f64`) |
//!
//! QG records hold the interior streamfunction row by row (x fastest).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const STATE_MAGIC: &[u8; 8] = b"MFDASTA1";
pub const STATE_VERSION: u32 = 1;
const DTYPE: &[u8; 8] = b"f64le\0\0\0";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot access {path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} is not a valid state file: {reason}")]
    Format { path: String, reason: String },
    #[error("cannot write CSV {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl IoError {
    /// True when the file does not exist.
    pub fn is_missing(&self) -> bool {
        matches!(self, IoError::File { source, .. } if source.kind() == std::io::ErrorKind::NotFound)
    }

    fn file(path: &Path, source: std::io::Error) -> Self {
        IoError::File {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StateModel {
    Lorenz2005,
    Qg,
}

impl StateModel {
    fn tag(self) -> u32 {
        match self {
            StateModel::Lorenz2005 => 0,
            StateModel::Qg => 1,
        }
    }

    fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(StateModel::Lorenz2005),
            1 => Some(StateModel::Qg),
            _ => None,
        }
    }
}

/// A sequence of model states with the step index at which each was taken.
#[derive(Debug, Clone, PartialEq)]
pub struct StateFile {
    pub model: StateModel,
    pub nx: usize,
    pub ny: usize,
    pub steps: Vec<u64>,
    pub states: Vec<Vec<f64>>,
}

impl StateFile {
    pub fn new(model: StateModel, nx: usize, ny: usize) -> Self {
        Self {
            model,
            nx,
            ny,
            steps: Vec::new(),
            states: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.nx * self.ny
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Appends a state; panics if its length is not `nx·ny`.
    pub fn push(&mut self, step: u64, state: Vec<f64>) {
        assert_eq!(state.len(), self.dim(), "state length does not match the file layout");
        self.steps.push(step);
        self.states.push(state);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(40 + self.len() * (8 + 8 * self.dim()));
        out.extend_from_slice(STATE_MAGIC);
        out.extend_from_slice(&STATE_VERSION.to_le_bytes());
        out.extend_from_slice(&self.model.tag().to_le_bytes());
        out.extend_from_slice(&(self.nx as u32).to_le_bytes());
        out.extend_from_slice(&(self.ny as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(DTYPE);
        for (step, state) in self.steps.iter().zip(&self.states) {
            out.extend_from_slice(&step.to_le_bytes());
            for v in state {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_reader(mut r: impl Read, path: &Path) -> Result<Self, IoError> {
        let bad = |reason: &str| IoError::Format {
            path: path.display().to_string(),
            reason: reason.into(),
        };
        let mut header = [0u8; 40];
        r.read_exact(&mut header).map_err(|_| bad("truncated header"))?;
        if &header[..8] != STATE_MAGIC {
            return Err(bad("wrong magic"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().expect("4 bytes"));
        if u32_at(8) != STATE_VERSION {
            return Err(bad(&format!("unsupported version {}", u32_at(8))));
        }
        let model = StateModel::from_tag(u32_at(12)).ok_or_else(|| bad("unknown model tag"))?;
        let (nx, ny) = (u32_at(16) as usize, u32_at(20) as usize);
        let count = u64::from_le_bytes(header[24..32].try_into().expect("8 bytes")) as usize;
        if &header[32..40] != DTYPE {
            return Err(bad("dtype must be f64le"));
        }
        let mut file = StateFile::new(model, nx, ny);
        let mut record = vec![0u8; 8 * (1 + nx * ny)];
        for _ in 0..count {
            r.read_exact(&mut record).map_err(|_| bad("truncated record"))?;
            let mut words = record.chunks_exact(8).map(|c| c.try_into().expect("8 bytes"));
            let step = u64::from_le_bytes(words.next().expect("step word"));
            let state = words.map(f64::from_le_bytes).collect();
            file.push(step, state);
        }
        if r.read(&mut [0u8; 1]).map_err(|e| IoError::file(path, e))? != 0 {
            return Err(bad("trailing bytes after the last record"));
        }
        Ok(file)
    }
}

pub fn write_state_file(path: impl AsRef<Path>, file: &StateFile) -> Result<(), IoError> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| IoError::file(dir, e))?;
    }
    std::fs::write(path, file.to_bytes()).map_err(|e| IoError::file(path, e))
}

pub fn read_state_file(path: impl AsRef<Path>) -> Result<StateFile, IoError> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| IoError::file(path, e))?;
    StateFile::from_reader(BufReader::new(f), path)
}

/// Lowercase hex SHA-256 of a file's contents.
pub fn file_sha256(path: impl AsRef<Path>) -> Result<String, IoError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| IoError::file(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Writes serializable rows as CSV with a header taken from the field names.
pub fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<(), IoError> {
    let path = path.as_ref();
    let csv_err = |source| IoError::Csv {
        path: path.display().to_string(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| IoError::file(path, e))
}

/// One JSON document per line.
pub fn write_json_lines<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<(), IoError> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| IoError::file(path, e))?;
    let mut w = BufWriter::new(f);
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n").map_err(|e| IoError::file(path, e))?;
    }
    w.flush().map_err(|e| IoError::file(path, e))
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<(), IoError> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| IoError::file(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> StateFile {
        let mut f = StateFile::new(StateModel::Qg, 3, 2);
        f.push(0, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        f.push(4, vec![-1.5, f64::MIN_POSITIVE, 1e300, 0.25, -0.0, 7.0]);
        f
    }

    #[test]
    fn state_file_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/s.bin");
        write_state_file(&path, &sample()).unwrap();
        let back = read_state_file(&path).unwrap();
        assert_eq!(back, sample());
        assert_eq!(std::fs::read(&path).unwrap().len(), 40 + 2 * 8 * 7);
    }

    #[test]
    fn header_fields_sit_at_documented_offsets() {
        let b = sample().to_bytes();
        assert_eq!(&b[..8], b"MFDASTA1");
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[16..20].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(b[24..32].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(b[40..48].try_into().unwrap()), 0);
        assert_eq!(f64::from_le_bytes(b[56..64].try_into().unwrap()), 1.0);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let p = Path::new("mem");
        let mut b = sample().to_bytes();
        b.pop();
        assert!(matches!(StateFile::from_reader(&b[..], p), Err(IoError::Format { .. })));
        let mut b = sample().to_bytes();
        b.push(0);
        assert!(matches!(StateFile::from_reader(&b[..], p), Err(IoError::Format { .. })));
        let mut b = sample().to_bytes();
        b[0] = b'X';
        assert!(matches!(StateFile::from_reader(&b[..], p), Err(IoError::Format { .. })));
    }

    #[test]
    fn missing_file_is_flagged() {
        assert!(read_state_file("/nonexistent/s.bin").unwrap_err().is_missing());
    }

    #[test]
    fn csv_header_follows_field_names() {
        #[derive(Serialize)]
        struct Row {
            lambda: f64,
            rmse: f64,
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_csv(&path, &[Row { lambda: 0.5, rmse: 0.25 }]).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "lambda,rmse\n0.5,0.25\n");
    }
}
