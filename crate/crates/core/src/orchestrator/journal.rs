//! Append-only job journal: newline-delimited JSON, one record per state
//! change, each carrying a full job snapshot so a restart can rebuild the
//! queues.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clock::Millis;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalRecord {
    pub t_ms: Millis,
    pub job_id: String,
    pub event: String,
    pub detail: serde_json::Value,
}

#[derive(Debug)]
pub struct Journal {
    path: PathBuf,
    file: File,
}

impl Journal {
    /// Opens (creating if needed) a journal file and returns the records
    /// already in it.
    pub fn open(path: impl AsRef<Path>) -> io::Result<(Journal, Vec<JournalRecord>)> {
        let path = path.as_ref().to_path_buf();
        let existing = if path.exists() {
            read_journal(&path)?
        } else {
            Vec::new()
        };
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok((Journal { path, file }, existing))
    }

    pub fn append(&mut self, record: &JournalRecord) -> io::Result<()> {
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.flush()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

pub fn read_journal(path: impl AsRef<Path>) -> io::Result<Vec<JournalRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        // A torn final line from a crash mid-write is dropped.
        match serde_json::from_str(&line) {
            Ok(rec) => out.push(rec),
            Err(_) => break,
        }
    }
    Ok(out)
}
