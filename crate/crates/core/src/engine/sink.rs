//! Release sinks. A sink must be able to drop everything written after a
//! given commit point so a resumed run does not emit a trigger twice.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::engine::store::Progress;
use crate::error::Result;
use crate::perturb::Release;

pub trait ReleaseSink {
    /// Appends the releases of one trigger.
    fn write(&mut self, window_start: i64, trigger: u64, releases: &[Release]) -> Result<()>;

    /// Drops every release belonging to a trigger after `progress`
    /// (everything, when `progress` is `None`).
    fn truncate_after(&mut self, progress: Option<Progress>) -> Result<()>;
}

fn keep(progress: Option<Progress>, window_start: i64, trigger: u64) -> bool {
    progress.is_some_and(|p| (window_start, trigger) <= p)
}

#[derive(Debug, Clone, Default)]
pub struct MemorySink {
    entries: Vec<(i64, Release)>,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn releases(&self) -> Vec<Release> {
        self.entries.iter().map(|(_, r)| r.clone()).collect()
    }

    pub fn into_releases(self) -> Vec<Release> {
        self.entries.into_iter().map(|(_, r)| r).collect()
    }
}

impl ReleaseSink for MemorySink {
    fn write(&mut self, window_start: i64, _trigger: u64, releases: &[Release]) -> Result<()> {
        self.entries.extend(releases.iter().map(|r| (window_start, r.clone())));
        Ok(())
    }

    fn truncate_after(&mut self, progress: Option<Progress>) -> Result<()> {
        self.entries.retain(|(w, r)| keep(progress, *w, r.trigger));
        Ok(())
    }
}

/// Appends releases as JSON lines. Lines without a `window_start` belong to
/// the run's single window.
#[derive(Debug)]
pub struct JsonLinesSink {
    path: PathBuf,
    file: File,
}

impl JsonLinesSink {
    /// Opens `path` for appending, keeping any existing content.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(JsonLinesSink { path, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Reads releases back from a JSON-lines file.
    pub fn read_all(path: impl AsRef<Path>) -> Result<Vec<Release>> {
        let f = File::open(path)?;
        let mut out = Vec::new();
        for line in BufReader::new(f).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line)?);
        }
        Ok(out)
    }
}

impl ReleaseSink for JsonLinesSink {
    fn write(&mut self, _window_start: i64, _trigger: u64, releases: &[Release]) -> Result<()> {
        let mut buf = Vec::new();
        for r in releases {
            serde_json::to_writer(&mut buf, r)?;
            buf.push(b'\n');
        }
        self.file.write_all(&buf)?;
        self.file.sync_data()?;
        Ok(())
    }

    fn truncate_after(&mut self, progress: Option<Progress>) -> Result<()> {
        let content = fs::read(&self.path)?;
        let mut kept = Vec::with_capacity(content.len());
        for line in content.split_inclusive(|b| *b == b'\n') {
            // A final line without its newline is a torn write.
            if !line.ends_with(b"\n") {
                break;
            }
            let r: Release = match serde_json::from_slice(line) {
                Ok(r) => r,
                Err(_) => break,
            };
            let window = r.window_start.or(progress.map(|p| p.0)).unwrap_or(i64::MIN);
            if keep(progress, window, r.trigger) {
                kept.extend_from_slice(line);
            }
        }
        if kept.len() != content.len() {
            let tmp = self.path.with_extension("tmp");
            fs::write(&tmp, &kept)?;
            fs::rename(&tmp, &self.path)?;
            self.file = OpenOptions::new().append(true).open(&self.path)?;
        }
        Ok(())
    }
}
