//! Append-only record file. Each record is framed as
//! `len: u32 LE | crc32: u32 LE | payload`; a torn or corrupt tail is
//! dropped on open.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

const HEADER: usize = 8;

pub struct RecordLog {
    path: PathBuf,
    file: File,
    sync: bool,
}

fn frame(payload: &[u8]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER + payload.len());
    buf.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    buf.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
    buf.extend_from_slice(payload);
    buf
}

/// Splits `bytes` into complete records; returns them with the length of
/// the valid prefix.
fn scan(bytes: &[u8]) -> (Vec<Vec<u8>>, usize) {
    let mut records = Vec::new();
    let mut pos = 0;
    while bytes.len() - pos >= HEADER {
        let len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().expect("4 bytes")) as usize;
        let crc = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().expect("4 bytes"));
        let start = pos + HEADER;
        let Some(payload) = bytes.get(start..start + len) else { break };
        if crc32fast::hash(payload) != crc {
            break;
        }
        records.push(payload.to_vec());
        pos = start + len;
    }
    (records, pos)
}

/// Reads every complete record without modifying the file.
pub fn read_records(path: &Path) -> io::Result<Vec<Vec<u8>>> {
    match fs::read(path) {
        Ok(bytes) => Ok(scan(&bytes).0),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(e) => Err(e),
    }
}

impl RecordLog {
    /// Opens (creating if needed) the log, truncates any torn tail and
    /// returns the surviving records.
    pub fn open(path: &Path, sync: bool) -> io::Result<(Self, Vec<Vec<u8>>)> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut file = OpenOptions::new().read(true).create(true).append(true).open(path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let (records, valid) = scan(&bytes);
        if valid < bytes.len() {
            file.set_len(valid as u64)?;
        }
        Ok((
            RecordLog {
                path: path.to_path_buf(),
                file,
                sync,
            },
            records,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, payload: &[u8]) -> io::Result<()> {
        self.file.write_all(&frame(payload))?;
        if self.sync {
            self.file.sync_data()?;
        }
        Ok(())
    }

    /// Atomically replaces the whole log with `payloads`.
    pub fn rewrite(&mut self, payloads: &[Vec<u8>]) -> io::Result<()> {
        let tmp = self.path.with_extension("compact");
        {
            let mut f = File::create(&tmp)?;
            for p in payloads {
                f.write_all(&frame(p))?;
            }
            f.sync_all()?;
        }
        fs::rename(&tmp, &self.path)?;
        self.file = OpenOptions::new().read(true).append(true).open(&self.path)?;
        Ok(())
    }
}
