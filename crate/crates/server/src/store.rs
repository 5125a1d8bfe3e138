//! On-disk layout: one directory per session holding an append-only
//! journal and the logs of server-simulated evaluations.
//!
//! ```text
//! <data_dir>/sessions/<session_id>/journal.jsonl
//! <data_dir>/sessions/<session_id>/logs/<eval_index>.simlog
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use crate::session::JournalEntry;

const JOURNAL: &str = "journal.jsonl";

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn open(data_dir: impl AsRef<Path>) -> io::Result<Self> {
        let root = data_dir.as_ref().join("sessions");
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    fn dir(&self, session_id: &str) -> PathBuf {
        self.root.join(session_id)
    }

    pub fn log_path(&self, session_id: &str, eval_index: u64) -> PathBuf {
        self.dir(session_id).join("logs").join(format!("{eval_index}.simlog"))
    }

    /// Creates the session directory; fails if it already exists.
    pub fn create(&self, session_id: &str) -> io::Result<Journal> {
        let dir = self.dir(session_id);
        fs::create_dir(&dir)?;
        fs::create_dir(dir.join("logs"))?;
        Journal::open(dir.join(JOURNAL))
    }

    /// Every stored session's journal entries, plus a journal handle for
    /// appending. A torn final line (crash mid-write) is dropped.
    pub fn load_all(&self) -> io::Result<Vec<(Vec<JournalEntry>, Journal)>> {
        let mut out = Vec::new();
        let mut dirs: Vec<_> = fs::read_dir(&self.root)?.collect::<Result<_, _>>()?;
        dirs.sort_by_key(|d| d.file_name());
        for dir in dirs {
            let path = dir.path().join(JOURNAL);
            if !path.is_file() {
                continue;
            }
            let text = fs::read_to_string(&path)?;
            let mut entries = Vec::new();
            let mut valid_len = 0;
            let lines: Vec<&str> = text.split_inclusive('\n').collect();
            for (i, line) in lines.iter().enumerate() {
                let last = i + 1 == lines.len();
                match serde_json::from_str(line.trim_end()) {
                    Ok(entry) if line.ends_with('\n') || !last => {
                        entries.push(entry);
                        valid_len += line.len();
                    }
                    result if last => {
                        tracing::warn!("{}: dropping torn final entry ({:?})", path.display(), result.err());
                        OpenOptions::new().write(true).open(&path)?.set_len(valid_len as u64)?;
                    }
                    Ok(_) => unreachable!("only the last line can lack a newline"),
                    Err(e) => {
                        return Err(io::Error::new(
                            io::ErrorKind::InvalidData,
                            format!("{} line {}: {e}", path.display(), i + 1),
                        ))
                    }
                }
            }
            out.push((entries, Journal::open(path)?));
        }
        Ok(out)
    }

    pub fn write_log(&self, session_id: &str, eval_index: u64, bytes: &[u8]) -> io::Result<()> {
        let path = self.log_path(session_id, eval_index);
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, bytes)?;
        fs::rename(tmp, path)
    }
}

#[derive(Debug)]
pub struct Journal {
    file: File,
}

impl Journal {
    fn open(path: PathBuf) -> io::Result<Self> {
        Ok(Self { file: OpenOptions::new().create(true).append(true).open(path)? })
    }

    /// Appends and flushes to stable storage before returning.
    pub fn append(&mut self, entries: &[JournalEntry]) -> io::Result<()> {
        let mut buf = Vec::new();
        for entry in entries {
            serde_json::to_writer(&mut buf, entry)?;
            buf.push(b'\n');
        }
        self.file.write_all(&buf)?;
        self.file.sync_data()
    }
}
