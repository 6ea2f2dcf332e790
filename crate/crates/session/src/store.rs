//! One append-only JSONL file per session.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::session::Event;

#[derive(Clone, Debug)]
pub struct EventStore {
    dir: PathBuf,
}

impl EventStore {
    pub fn open(data_dir: &Path) -> std::io::Result<Self> {
        let dir = data_dir.join("sessions");
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    fn path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.jsonl"))
    }

    /// Write and sync one event before returning.
    pub fn append(&self, id: &str, ev: &Event, create: bool) -> std::io::Result<()> {
        let mut f = OpenOptions::new().append(true).create_new(create).open(self.path(id))?;
        let mut line = serde_json::to_string(ev).expect("event serialises");
        line.push('\n');
        f.write_all(line.as_bytes())?;
        f.sync_data()
    }

    pub fn read(&self, id: &str) -> std::io::Result<Vec<Event>> {
        read_log(&self.path(id))
    }

    pub fn ids(&self) -> std::io::Result<Vec<String>> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let p = entry?.path();
            if p.extension().is_some_and(|e| e == "jsonl") {
                if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                    ids.push(stem.to_string());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }
}

/// Events of one log. A torn final line from a crash mid-write is dropped,
/// since it was never acknowledged.
pub fn read_log(path: &Path) -> std::io::Result<Vec<Event>> {
    let lines: Vec<String> = BufReader::new(File::open(path)?).lines().collect::<Result<_, _>>()?;
    let n = lines.len();
    let mut out = Vec::with_capacity(n);
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(ev) => out.push(ev),
            Err(e) if i + 1 == n => tracing::warn!(path = %path.display(), error = %e, "dropping torn last line"),
            Err(e) => {
                return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1)))
            }
        }
    }
    Ok(out)
}
