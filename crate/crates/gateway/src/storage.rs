//! Append-only journal file.
//!
//! Layout: an 8-byte magic and a big-endian u32 format version, then
//! records of `[u32 BE body length][SHA-256 of body][canonical body]`.
//! Every record is self-delimiting and individually hashed, so a file cut
//! between two records always replays, while any damaged byte is caught.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use medalchain_core::canonical::{canonical_decode, canonical_encode};
use medalchain_core::node::Record;
use medalchain_core::Hash32;

pub const MAGIC: &[u8; 8] = b"MEDALLOG";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = MAGIC.len() + 4;
pub const LOG_FILE: &str = "journal.log";
pub const LOCK_FILE: &str = "medalchain.lock";

/// Bodies larger than this are treated as damage rather than allocated.
const MAX_RECORD_LEN: u32 = 64 << 20;

#[derive(Debug, thiserror::Error)]
pub enum StorageError {
    #[error("corrupt log record {index} at byte offset {offset}: {reason}")]
    CorruptLog { offset: u64, index: usize, reason: String },
    #[error("log format version {found} is not supported (expected {FORMAT_VERSION})")]
    IncompatibleVersion { found: u32 },
    #[error("data directory {0} is locked by another process")]
    Locked(PathBuf),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn encode_record(record: &Record) -> Vec<u8> {
    let body = canonical_encode(record).expect("journal records are canonical");
    let mut out = Vec::with_capacity(4 + 32 + body.len());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(Hash32::digest(&body).as_bytes());
    out.extend_from_slice(&body);
    out
}

pub fn header() -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[..8].copy_from_slice(MAGIC);
    h[8..].copy_from_slice(&FORMAT_VERSION.to_be_bytes());
    h
}

/// Parses a whole log image, verifying every record.
pub fn read_log(bytes: &[u8]) -> Result<Vec<Record>, StorageError> {
    let corrupt = |offset: usize, index: usize, reason: &str| StorageError::CorruptLog { offset: offset as u64, index, reason: reason.into() };
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Err(corrupt(0, 0, "missing log header"));
    }
    let version = u32::from_be_bytes(bytes[8..12].try_into().expect("four bytes"));
    if version != FORMAT_VERSION {
        return Err(StorageError::IncompatibleVersion { found: version });
    }
    let mut records = Vec::new();
    let mut at = HEADER_LEN;
    while at < bytes.len() {
        let index = records.len();
        let rest = &bytes[at..];
        if rest.len() < 36 {
            return Err(corrupt(at, index, "truncated record header"));
        }
        let len = u32::from_be_bytes(rest[..4].try_into().expect("four bytes"));
        if len > MAX_RECORD_LEN || rest.len() - 36 < len as usize {
            return Err(corrupt(at, index, "record length runs past end of file"));
        }
        let body = &rest[36..36 + len as usize];
        if Hash32::digest(body).as_bytes() != &rest[4..36] {
            return Err(corrupt(at, index, "hash mismatch"));
        }
        let record = canonical_decode::<Record>(body).map_err(|e| corrupt(at, index, &e.to_string()))?;
        records.push(record);
        at += 36 + len as usize;
    }
    Ok(records)
}

/// Open handle on the journal; every append is flushed to disk before returning.
pub struct EventLog {
    file: File,
    records: usize,
}

impl EventLog {
    /// Creates a new, empty log. Fails if the file already exists.
    pub fn create(path: &Path) -> Result<Self, StorageError> {
        let mut file = OpenOptions::new().create_new(true).read(true).append(true).open(path)?;
        file.write_all(&header())?;
        file.sync_all()?;
        Ok(EventLog { file, records: 0 })
    }

    /// Opens an existing log and returns it with every stored record.
    pub fn open(path: &Path) -> Result<(Self, Vec<Record>), StorageError> {
        let mut file = OpenOptions::new().read(true).append(true).open(path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let records = read_log(&bytes)?;
        Ok((EventLog { file, records: records.len() }, records))
    }

    pub fn append(&mut self, records: &[Record]) -> Result<(), StorageError> {
        if records.is_empty() {
            return Ok(());
        }
        let bytes: Vec<u8> = records.iter().flat_map(encode_record).collect();
        self.file.write_all(&bytes)?;
        self.file.sync_data()?;
        self.records += records.len();
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records == 0
    }
}

/// Exclusive claim on a data directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self, StorageError> {
        let path = dir.join(LOCK_FILE);
        for _ in 0..2 {
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    writeln!(f, "{}", std::process::id())?;
                    return Ok(DirLock { path });
                }
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                    if !holder_is_gone(&path) {
                        return Err(StorageError::Locked(dir.to_path_buf()));
                    }
                    std::fs::remove_file(&path)?;
                }
                Err(e) => return Err(e.into()),
            }
        }
        Err(StorageError::Locked(dir.to_path_buf()))
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// A lock is stale when it names a process that no longer exists. Only
/// decidable where `/proc` is available; elsewhere locks are honoured.
fn holder_is_gone(lock: &Path) -> bool {
    let Ok(text) = std::fs::read_to_string(lock) else { return false };
    let Ok(pid) = text.trim().parse::<u32>() else { return false };
    let proc_root = Path::new("/proc");
    proc_root.join("self").exists() && !proc_root.join(pid.to_string()).exists()
}
