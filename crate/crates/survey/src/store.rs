//! Durable event storage.
//!
//! [`FileStore`] keeps an append-only log with one JSON event per line and
//! an occasional snapshot of the full state. An append returns only after
//! the line has been synced to disk, so anything acknowledged to a client
//! survives a crash. A line torn by a crash was never acknowledged and is
//! cut off on the next open.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use crate::error::{Result, SurveyError};
use crate::state::{Event, Snapshot};

pub trait Storage: Send {
    /// Appends one event; durable once this returns `Ok`.
    fn append(&mut self, event: &Event) -> Result<()>;

    /// The latest snapshot, if any, and every event logged after it.
    fn load(&mut self) -> Result<(Option<Snapshot>, Vec<Event>)>;

    fn write_snapshot(&mut self, snapshot: &Snapshot) -> Result<()>;
}

/// Storage that forgets everything on drop. Used by tests and dry runs.
#[derive(Debug, Default)]
pub struct MemoryStore {
    pub events: Vec<Event>,
    pub snapshot: Option<Snapshot>,
}

impl Storage for MemoryStore {
    fn append(&mut self, event: &Event) -> Result<()> {
        self.events.push(event.clone());
        Ok(())
    }

    fn load(&mut self) -> Result<(Option<Snapshot>, Vec<Event>)> {
        let skip = self.snapshot.as_ref().map_or(0, |s| s.events as usize);
        Ok((self.snapshot.clone(), self.events[skip..].to_vec()))
    }

    fn write_snapshot(&mut self, snapshot: &Snapshot) -> Result<()> {
        self.snapshot = Some(snapshot.clone());
        Ok(())
    }
}

const LOG: &str = "events.jsonl";
const SNAPSHOT: &str = "snapshot.json";

#[derive(Debug)]
pub struct FileStore {
    dir: PathBuf,
    log: File,
    /// Lines in the log.
    lines: u64,
}

fn sync_dir(dir: &Path) -> io::Result<()> {
    // directory fsync makes renames and file creation durable on Linux
    File::open(dir)?.sync_all()
}

impl FileStore {
    pub fn open(dir: &Path) -> Result<FileStore> {
        fs::create_dir_all(dir)?;
        let path = dir.join(LOG);
        let created = !path.exists();
        let mut log = OpenOptions::new().read(true).append(true).create(true).open(&path)?;
        if created {
            sync_dir(dir)?;
        }
        let (lines, good_len) = scan(&mut log, &path)?;
        if good_len < log.metadata()?.len() {
            log::warn!("dropping a torn record at the end of {}", path.display());
            log.set_len(good_len)?;
            log.sync_all()?;
        }
        Ok(FileStore {
            dir: dir.to_path_buf(),
            log,
            lines,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

/// Counts complete, parseable lines and returns the byte length they span.
/// Only the final line may be damaged; damage anywhere else is an error.
fn scan(log: &mut File, path: &Path) -> Result<(u64, u64)> {
    log.seek(SeekFrom::Start(0))?;
    let mut reader = BufReader::new(&*log);
    let mut buf = Vec::new();
    let (mut lines, mut good) = (0u64, 0u64);
    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf)?;
        if n == 0 {
            break;
        }
        let complete = buf.last() == Some(&b'\n');
        let parses = serde_json::from_slice::<Event>(&buf).is_ok();
        if complete && parses {
            lines += 1;
            good += n as u64;
            continue;
        }
        let mut rest = Vec::new();
        io::Read::read_to_end(&mut reader, &mut rest)?;
        if rest.is_empty() {
            break;
        }
        return Err(SurveyError::Corrupt(format!("{}: unreadable record at line {}", path.display(), lines + 1)));
    }
    Ok((lines, good))
}

impl Storage for FileStore {
    fn append(&mut self, event: &Event) -> Result<()> {
        let mut line = serde_json::to_vec(event).map_err(|e| SurveyError::Invalid(e.to_string()))?;
        line.push(b'\n');
        self.log.write_all(&line)?;
        self.log.sync_data()?;
        self.lines += 1;
        Ok(())
    }

    fn load(&mut self) -> Result<(Option<Snapshot>, Vec<Event>)> {
        let snap_path = self.dir.join(SNAPSHOT);
        let snapshot: Option<Snapshot> = match fs::read(&snap_path) {
            Ok(bytes) => Some(
                serde_json::from_slice(&bytes)
                    .map_err(|e| SurveyError::Corrupt(format!("{}: {e}", snap_path.display())))?,
            ),
            Err(e) if e.kind() == io::ErrorKind::NotFound => None,
            Err(e) => return Err(e.into()),
        };
        let skip = snapshot.as_ref().map_or(0, |s| s.events);
        if skip > self.lines {
            return Err(SurveyError::Corrupt(format!(
                "snapshot covers {skip} events but the log holds {}",
                self.lines
            )));
        }
        self.log.seek(SeekFrom::Start(0))?;
        let mut events = Vec::new();
        for (i, line) in BufReader::new(&self.log).lines().enumerate() {
            let line = line?;
            if (i as u64) < skip {
                continue;
            }
            events.push(serde_json::from_str(&line).map_err(|e| SurveyError::Corrupt(format!("line {}: {e}", i + 1)))?);
        }
        Ok((snapshot, events))
    }

    fn write_snapshot(&mut self, snapshot: &Snapshot) -> Result<()> {
        let tmp = self.dir.join(format!("{SNAPSHOT}.tmp"));
        let mut f = File::create(&tmp)?;
        serde_json::to_writer(&mut f, snapshot).map_err(|e| SurveyError::Invalid(e.to_string()))?;
        f.sync_all()?;
        fs::rename(&tmp, self.dir.join(SNAPSHOT))?;
        sync_dir(&self.dir)?;
        Ok(())
    }
}
