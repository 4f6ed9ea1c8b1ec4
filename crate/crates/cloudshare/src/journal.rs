//! File-backed queue journal and crash recovery.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use cloudshare_core::queue::{decode_records, Journal, JournalRecord, PriorityQueue};
use cloudshare_core::{Error, Result};

/// Appends records to a file, syncing each one before returning.
#[derive(Debug)]
pub struct FileJournal {
    path: PathBuf,
    file: File,
    sync: bool,
}

fn io_err(path: &Path, e: io::Error) -> Error {
    Error::Journal(format!("{}: {e}", path.display()))
}

impl FileJournal {
    /// Starts an empty journal, replacing any existing file.
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| io_err(&path, e))?;
        Ok(FileJournal { path, file, sync: true })
    }

    /// Appends to an existing journal, creating it if missing.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| io_err(&path, e))?;
        Ok(FileJournal { path, file, sync: true })
    }

    /// Skips fsync. Records still reach the OS before `append` returns,
    /// which survives a process kill but not a power cut.
    pub fn without_sync(mut self) -> Self {
        self.sync = false;
        self
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn flush(&mut self) -> io::Result<()> {
        self.file.flush()?;
        if self.sync {
            self.file.sync_data()?;
        }
        Ok(())
    }
}

impl Journal for FileJournal {
    fn append(&mut self, record: &JournalRecord) -> Result<()> {
        self.file.write_all(record.encode().as_bytes()).and_then(|_| self.flush()).map_err(|e| io_err(&self.path, e))
    }

    /// Writes a sibling temp file and renames it over the journal.
    fn rewrite(&mut self, records: &[JournalRecord]) -> Result<()> {
        let tmp = self.path.with_extension("compact");
        let write = || -> io::Result<File> {
            let mut f = File::create(&tmp)?;
            for r in records {
                f.write_all(r.encode().as_bytes())?;
            }
            f.sync_data()?;
            fs::rename(&tmp, &self.path)?;
            OpenOptions::new().append(true).open(&self.path)
        };
        self.file = write().map_err(|e| io_err(&self.path, e))?;
        Ok(())
    }
}

/// Rebuilds the queue from the journal at `path`, truncating a torn final
/// record, and keeps journaling into the same file.
pub fn recover(path: impl AsRef<Path>) -> Result<PriorityQueue<FileJournal>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    match File::open(path) {
        Ok(mut f) => {
            f.read_to_end(&mut bytes).map_err(|e| io_err(path, e))?;
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => {}
        Err(e) => return Err(io_err(path, e)),
    }
    let (_, valid) = decode_records(&bytes)?;
    if valid < bytes.len() {
        let f = OpenOptions::new().write(true).open(path).map_err(|e| io_err(path, e))?;
        f.set_len(valid as u64).and_then(|_| f.sync_data()).map_err(|e| io_err(path, e))?;
    }
    let (queue, _) = PriorityQueue::recover(&bytes[..valid], FileJournal::open(path)?)?;
    Ok(queue)
}
