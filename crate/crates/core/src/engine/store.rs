//! The two-table state store with a prediction index, optionally persisted
//! as a snapshot plus a write-ahead log of per-trigger commits.
//!
//! On-disk layout of a state directory:
//!
//! * `snapshot.bin`: header, then one checksummed frame holding the full
//!   store.
//! * `wal.log`: header, then one checksummed frame per committed trigger.
//!
//! A frame is `len: u32 LE | crc32: u32 LE | payload`. A frame cut short at
//! the end of the log is a torn write and is ignored; a complete frame with
//! a bad checksum is corruption.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bounding::UserBudgetTable;
use crate::error::{Error, Result};
use crate::keyselect::KeySelectionState;
use crate::perturb::AggregationState;

const MAGIC: &[u8; 8] = b"DPSQLPST";
const VERSION: u32 = 1;
const SNAPSHOT: &str = "snapshot.bin";
const WAL: &str = "wal.log";

/// The last fully committed `(window_start, trigger)`.
pub type Progress = (i64, u64);

/// Per-key entry of the key table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyState {
    pub selection: KeySelectionState,
    pub aggregation: AggregationState,
    pub predicted_release: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct Tables {
    fingerprint: Option<u64>,
    progress: Option<Progress>,
    users: BTreeMap<i64, UserBudgetTable>,
    keys: BTreeMap<(i64, String), KeyState>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Commit {
    fingerprint: Option<u64>,
    progress: Progress,
    users: Vec<(i64, String, u32)>,
    keys: Vec<((i64, String), KeyState)>,
}

#[derive(Debug)]
pub struct StateStore {
    tables: Tables,
    prediction_index: BTreeMap<(i64, u64), BTreeSet<String>>,
    dirty_keys: BTreeSet<(i64, String)>,
    dirty_users: BTreeSet<(i64, String)>,
    key_reads: u64,
    dir: Option<PathBuf>,
    wal: Option<File>,
}

fn write_header(w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())
}

fn check_header(bytes: &[u8], what: &str) -> Result<usize> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(Error::Corruption(format!("{what}: bad magic")));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Corruption(format!("{what}: unsupported version {version}")));
    }
    Ok(12)
}

fn frame(payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload.len() + 8);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
    out.extend_from_slice(payload);
    out
}

/// Reads frames from `bytes`; `Ok(None)` marks a torn tail.
fn next_frame<'a>(bytes: &'a [u8], pos: &mut usize, what: &str) -> Result<Option<&'a [u8]>> {
    let rest = &bytes[*pos..];
    if rest.len() < 8 {
        return Ok(None);
    }
    let len = u32::from_le_bytes(rest[..4].try_into().unwrap()) as usize;
    let crc = u32::from_le_bytes(rest[4..8].try_into().unwrap());
    if rest.len() < 8 + len {
        return Ok(None);
    }
    let payload = &rest[8..8 + len];
    if crc32fast::hash(payload) != crc {
        return Err(Error::Corruption(format!("{what}: checksum mismatch at byte {}", *pos)));
    }
    *pos += 8 + len;
    Ok(Some(payload))
}

fn sync_dir(dir: &Path) {
    // Directory fsync is best-effort: not every platform supports it.
    if let Ok(d) = File::open(dir) {
        let _ = d.sync_all();
    }
}

impl Default for StateStore {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl StateStore {
    pub fn in_memory() -> Self {
        StateStore {
            tables: Tables::default(),
            prediction_index: BTreeMap::new(),
            dirty_keys: BTreeSet::new(),
            dirty_users: BTreeSet::new(),
            key_reads: 0,
            dir: None,
            wal: None,
        }
    }

    /// Opens (or creates) a persistent store, replaying the snapshot and
    /// the committed part of the log.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut store = Self::in_memory();
        let snap_path = dir.join(SNAPSHOT);
        if snap_path.exists() {
            let bytes = fs::read(&snap_path)?;
            let mut pos = check_header(&bytes, "snapshot")?;
            let payload = next_frame(&bytes, &mut pos, "snapshot")?
                .ok_or_else(|| Error::Corruption("snapshot: truncated".into()))?;
            store.tables = bincode::deserialize(payload)
                .map_err(|e| Error::Corruption(format!("snapshot: {e}")))?;
        }
        let wal_path = dir.join(WAL);
        let mut valid_len = 12u64;
        if wal_path.exists() {
            let bytes = fs::read(&wal_path)?;
            if bytes.len() < 12 {
                // A header torn during creation carries no commits.
            } else {
                let mut pos = check_header(&bytes, "log")?;
                while let Some(payload) = next_frame(&bytes, &mut pos, "log")? {
                    let commit: Commit = bincode::deserialize(payload)
                        .map_err(|e| Error::Corruption(format!("log: {e}")))?;
                    store.apply(commit);
                }
                valid_len = pos as u64;
            }
        }
        let mut wal = OpenOptions::new().create(true).truncate(false).read(true).write(true).open(&wal_path)?;
        let len = wal.metadata()?.len();
        if len < 12 {
            wal.set_len(0)?;
            write_header(&mut wal)?;
            wal.sync_all()?;
        } else if len > valid_len {
            wal.set_len(valid_len)?;
            wal.sync_all()?;
        }
        use std::io::Seek;
        wal.seek(std::io::SeekFrom::End(0))?;
        store.rebuild_index();
        store.dir = Some(dir);
        store.wal = Some(wal);
        Ok(store)
    }

    fn apply(&mut self, commit: Commit) {
        for (w, user, used) in commit.users {
            self.tables.users.entry(w).or_default().set(user, used);
        }
        for (k, state) in commit.keys {
            self.tables.keys.insert(k, state);
        }
        self.tables.progress = Some(commit.progress);
        if commit.fingerprint.is_some() {
            self.tables.fingerprint = commit.fingerprint;
        }
    }

    fn rebuild_index(&mut self) {
        self.prediction_index.clear();
        for ((w, key), state) in &self.tables.keys {
            if let Some(p) = state.predicted_release {
                self.prediction_index.entry((*w, p)).or_default().insert(key.clone());
            }
        }
    }

    pub fn is_persistent(&self) -> bool {
        self.dir.is_some()
    }

    pub fn progress(&self) -> Option<Progress> {
        self.tables.progress
    }

    pub fn fingerprint(&self) -> Option<u64> {
        self.tables.fingerprint
    }

    pub fn set_fingerprint(&mut self, fp: u64) {
        self.tables.fingerprint = Some(fp);
    }

    /// Number of key-table reads so far.
    pub fn key_reads(&self) -> u64 {
        self.key_reads
    }

    pub fn key_count(&self) -> usize {
        self.tables.keys.len()
    }

    pub fn user_table(&self, window: i64) -> Option<&UserBudgetTable> {
        self.tables.users.get(&window)
    }

    /// Mutable user table of `window`; every user in `touched` is marked
    /// for the next commit.
    pub fn user_table_mut(&mut self, window: i64) -> &mut UserBudgetTable {
        self.tables.users.entry(window).or_default()
    }

    pub fn mark_users<'a>(&mut self, window: i64, users: impl IntoIterator<Item = &'a str>) {
        for u in users {
            self.dirty_users.insert((window, u.to_string()));
        }
    }

    /// Reads a key's state (counted as one key read).
    pub fn get_key(&mut self, window: i64, key: &str) -> Option<&KeyState> {
        self.key_reads += 1;
        self.tables.keys.get(&(window, key.to_string()))
    }

    /// Mutable access to a key's state, creating it with `init` if absent.
    /// Counted as one key read and marks the key for the next commit.
    pub fn key_mut(&mut self, window: i64, key: &str, init: impl FnOnce() -> KeyState) -> &mut KeyState {
        self.key_reads += 1;
        let id = (window, key.to_string());
        self.dirty_keys.insert(id.clone());
        self.tables.keys.entry(id).or_insert_with(init)
    }

    /// Keys of `window` in key order, without counting reads (used by the
    /// exhaustive scan, which counts its reads itself).
    pub fn keys_in_window(&self, window: i64) -> Vec<String> {
        self.tables
            .keys
            .range((window, String::new())..)
            .take_while(|((w, _), _)| *w == window)
            .map(|((_, k), _)| k.clone())
            .collect()
    }

    pub fn iter_keys(&self) -> impl Iterator<Item = (&(i64, String), &KeyState)> {
        self.tables.keys.iter()
    }

    /// Sets or clears a key's predicted release, keeping the index in sync.
    pub fn set_prediction(&mut self, window: i64, key: &str, trigger: Option<u64>) {
        let id = (window, key.to_string());
        let Some(state) = self.tables.keys.get_mut(&id) else {
            return;
        };
        if state.predicted_release == trigger {
            return;
        }
        if let Some(old) = state.predicted_release {
            if let Some(set) = self.prediction_index.get_mut(&(window, old)) {
                set.remove(key);
                if set.is_empty() {
                    self.prediction_index.remove(&(window, old));
                }
            }
        }
        state.predicted_release = trigger;
        if let Some(t) = trigger {
            self.prediction_index.entry((window, t)).or_default().insert(key.to_string());
        }
        self.dirty_keys.insert(id);
    }

    /// Keys predicted to release at `trigger` of `window`.
    pub fn due_predictions(&self, window: i64, trigger: u64) -> BTreeSet<String> {
        self.prediction_index
            .get(&(window, trigger))
            .cloned()
            .unwrap_or_default()
    }

    /// Every index entry, for consistency checks.
    pub fn prediction_entries(&self) -> Vec<(i64, u64, String)> {
        self.prediction_index
            .iter()
            .flat_map(|((w, t), ks)| ks.iter().map(move |k| (*w, *t, k.clone())))
            .collect()
    }

    /// Durably records everything changed since the last commit as the
    /// result of `progress`.
    pub fn commit(&mut self, progress: Progress) -> Result<()> {
        self.tables.progress = Some(progress);
        let dirty_users = std::mem::take(&mut self.dirty_users);
        let dirty_keys = std::mem::take(&mut self.dirty_keys);
        let Some(wal) = self.wal.as_mut() else {
            return Ok(());
        };
        let commit = Commit {
            fingerprint: self.tables.fingerprint,
            progress,
            users: dirty_users
                .into_iter()
                .map(|(w, u)| {
                    let used = self.tables.users.get(&w).map_or(0, |t| t.records_used(&u));
                    (w, u, used)
                })
                .collect(),
            keys: dirty_keys
                .into_iter()
                .filter_map(|id| self.tables.keys.get(&id).map(|s| (id, s.clone())))
                .collect(),
        };
        let payload = bincode::serialize(&commit)?;
        wal.write_all(&frame(&payload))?;
        wal.sync_data()?;
        Ok(())
    }

    /// Writes a full snapshot and truncates the log. Uncommitted changes
    /// must be committed first.
    pub fn checkpoint(&mut self) -> Result<()> {
        let Some(dir) = self.dir.clone() else {
            return Ok(());
        };
        if !self.dirty_keys.is_empty() || !self.dirty_users.is_empty() {
            return Err(Error::State("checkpoint with uncommitted changes".into()));
        }
        let payload = bincode::serialize(&self.tables)?;
        let tmp = dir.join(format!("{SNAPSHOT}.tmp"));
        {
            let mut f = File::create(&tmp)?;
            write_header(&mut f)?;
            f.write_all(&frame(&payload))?;
            f.sync_all()?;
        }
        fs::rename(&tmp, dir.join(SNAPSHOT))?;
        sync_dir(&dir);
        let wal = self.wal.as_mut().expect("persistent store has a log");
        wal.set_len(0)?;
        use std::io::Seek;
        wal.seek(std::io::SeekFrom::Start(0))?;
        write_header(wal)?;
        wal.sync_all()?;
        Ok(())
    }

    /// Checkpoints (when persistent) and releases the store.
    pub fn close(mut self) -> Result<()> {
        if self.dir.is_some() && self.dirty_keys.is_empty() && self.dirty_users.is_empty() {
            self.checkpoint()?;
        }
        Ok(())
    }

    /// Serialized form of the logical contents, for equality checks across
    /// reopen.
    pub fn contents_bytes(&self) -> Result<Vec<u8>> {
        Ok(bincode::serialize(&self.tables)?)
    }

    pub fn state_dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }
}
