use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

/// Byte sink behind a ledger. Appends are whole newline-terminated records.
pub trait Store: Send {
    fn append(&mut self, record: &[u8]) -> io::Result<()>;
    fn contents(&self) -> io::Result<Vec<u8>>;
}

#[derive(Debug, Default, Clone)]
pub struct MemoryStore {
    bytes: Vec<u8>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Self { bytes }
    }
}

impl Store for MemoryStore {
    fn append(&mut self, record: &[u8]) -> io::Result<()> {
        self.bytes.extend_from_slice(record);
        Ok(())
    }

    fn contents(&self) -> io::Result<Vec<u8>> {
        Ok(self.bytes.clone())
    }
}

/// Append-only file. Each record is written with one `write_all` and
/// flushed; with `sync` set it is also fsynced before `append` returns.
#[derive(Debug)]
pub struct FileStore {
    path: PathBuf,
    file: File,
    sync: bool,
}

impl FileStore {
    /// Creates a new ledger file; refuses to overwrite an existing one.
    pub fn create(path: impl AsRef<Path>, sync: bool) -> io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().write(true).create_new(true).open(&path)?;
        Ok(Self { path, file, sync })
    }

    /// Opens an existing ledger file for appending.
    pub fn open_append(path: impl AsRef<Path>, sync: bool) -> io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().append(true).open(&path)?;
        Ok(Self { path, file, sync })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl Store for FileStore {
    fn append(&mut self, record: &[u8]) -> io::Result<()> {
        self.file.write_all(record)?;
        self.file.flush()?;
        if self.sync {
            self.file.sync_data()?;
        }
        Ok(())
    }

    fn contents(&self) -> io::Result<Vec<u8>> {
        std::fs::read(&self.path)
    }
}
