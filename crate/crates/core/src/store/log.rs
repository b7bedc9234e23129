//! On-disk event log: a sequence of records, each a little-endian `u32`
//! byte length followed by that many bytes of JSON-encoded [`Event`].

use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use super::{Event, StoreError};

/// When appended records are forced to stable storage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyncPolicy {
    /// fsync after every append.
    PerAppend,
    /// fsync once at least this many records are pending.
    Batch(usize),
    /// Only on an explicit [`super::AdvisoryStore::sync`].
    Manual,
}

#[derive(Debug)]
pub(super) struct LogFile {
    path: PathBuf,
    file: File,
    len: u64,
    policy: SyncPolicy,
    pending: usize,
}

impl LogFile {
    pub(super) fn open(path: &Path, policy: SyncPolicy) -> Result<(Self, Vec<Event>), StoreError> {
        let mut file = OpenOptions::new().create(true).read(true).append(true).open(path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let events = decode_records(&bytes)?;
        let log = Self {
            path: path.to_path_buf(),
            file,
            len: bytes.len() as u64,
            policy,
            pending: 0,
        };
        Ok((log, events))
    }

    pub(super) fn policy(&self) -> SyncPolicy {
        self.policy
    }

    pub(super) fn set_policy(&mut self, policy: SyncPolicy) {
        self.policy = policy;
    }

    pub(super) fn write(&mut self, events: &[Event]) -> Result<(), StoreError> {
        let mut buf = Vec::new();
        for event in events {
            let body = serde_json::to_vec(event).map_err(std::io::Error::other)?;
            let len = u32::try_from(body.len()).map_err(|_| std::io::Error::other("record exceeds 4 GiB"))?;
            buf.extend_from_slice(&len.to_le_bytes());
            buf.extend_from_slice(&body);
        }
        if let Err(e) = self.file.write_all(&buf) {
            // Drop any partial record so the file stays replayable.
            let _ = self.file.set_len(self.len);
            return Err(e.into());
        }
        self.len += buf.len() as u64;
        self.pending += events.len();
        let due = match self.policy {
            SyncPolicy::PerAppend => true,
            SyncPolicy::Batch(n) => self.pending >= n.max(1),
            SyncPolicy::Manual => false,
        };
        if due {
            self.sync()?;
        }
        Ok(())
    }

    pub(super) fn sync(&mut self) -> Result<(), StoreError> {
        if self.pending > 0 {
            self.file.sync_data()?;
            self.pending = 0;
        }
        Ok(())
    }
}

impl Drop for LogFile {
    fn drop(&mut self) {
        if self.pending > 0 {
            if let Err(e) = self.file.sync_data() {
                eprintln!("failed to sync {}: {e}", self.path.display());
            }
        }
    }
}

fn decode_records(bytes: &[u8]) -> Result<Vec<Event>, StoreError> {
    let mut events = Vec::new();
    let mut pos = 0usize;
    while pos < bytes.len() {
        let seq = events.len() as u64 + 1;
        let corrupt = |reason: String| StoreError::CorruptLog { seq, reason };
        let Some(header) = bytes.get(pos..pos + 4) else {
            return Err(corrupt(format!("truncated length prefix at byte {pos}")));
        };
        let len = u32::from_le_bytes(header.try_into().expect("4 bytes")) as usize;
        let Some(body) = bytes.get(pos + 4..pos + 4 + len) else {
            return Err(corrupt(format!("truncated record at byte {pos}")));
        };
        let event: Event = serde_json::from_slice(body).map_err(|e| corrupt(format!("undecodable record: {e}")))?;
        events.push(event);
        pos += 4 + len;
    }
    Ok(events)
}
