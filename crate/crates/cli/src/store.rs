//! On-disk block store.
//!
//! ```text
//! <root>/permanent.log        u32-LE length-framed permanent blocks, append-only
//! <root>/interval_<i>/<j>.blk one canonical removable block per file
//! <root>/manifest             JSON: tip, interval statuses, ledger config
//! <root>/LOCK                 held while a writer has the store open
//! ```
//!
//! Pruning removes whole interval directories, so a deleted interval's bytes
//! leave the store rather than lingering in a log.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use mutachain_core::verify::{verify_chain, ChainData, ReplayError, Violation};
use mutachain_core::{
    canonical_decode, canonical_encode, digest, CodecError, Hash32, IntervalStatus, Ledger,
    LedgerConfig, MinerJudge, PermanentBlock, RemovableBlock,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const LOG: &str = "permanent.log";
const MANIFEST: &str = "manifest";
const MANIFEST_NEW: &str = "manifest.new";
const LOCK: &str = "LOCK";
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: corrupt: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("store is locked by another writer ({0})")]
    Locked(PathBuf),
    #[error("interval {interval} is missing and no delete confirms its removal")]
    MissingDeleteEvidence { interval: u32 },
    #[error("store fails verification: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("manifest does not match the stored chain: {0}")]
    ManifestMismatch(String),
    #[error("ledger does not extend the stored permanent log")]
    Diverged,
    #[error("injected failure at {0:?}")]
    Injected(PrunePhase),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn corrupt(path: &Path, e: impl ToString) -> StoreError {
    StoreError::Corrupt {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub tip_height: Option<u32>,
    pub tip_hash: Hash32,
    pub config: LedgerConfig,
    pub intervals: BTreeMap<u32, IntervalStatus>,
}

impl Manifest {
    fn of(ledger: &Ledger) -> Self {
        Self {
            version: MANIFEST_VERSION,
            tip_height: ledger.tip_height(),
            tip_hash: ledger.tip_hash(),
            config: *ledger.config(),
            intervals: ledger.interval_statuses().clone(),
        }
    }
}

/// Points in [`prune_store`] where a failure can be injected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrunePhase {
    /// After `manifest.new` is written, before it replaces `manifest`.
    ManifestRename,
    /// After the manifest is replaced, before directories are removed.
    DirectoryRemoval,
}

/// An exclusively opened store. The lock is released on drop.
#[derive(Debug)]
pub struct BlockStore {
    root: PathBuf,
    fail_at: Option<PrunePhase>,
}

impl BlockStore {
    /// Opens (creating if needed) the store at `root` and takes its lock.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        let lock = root.join(LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(_) => Ok(Self { root, fail_at: None }),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(StoreError::Locked(lock)),
            Err(e) => Err(io_err(&lock)(e)),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn inject_failure(&mut self, phase: PrunePhase) {
        self.fail_at = Some(phase);
    }

    fn check(&self, phase: PrunePhase) -> Result<(), StoreError> {
        match self.fail_at {
            Some(p) if p == phase => Err(StoreError::Injected(phase)),
            _ => Ok(()),
        }
    }

    pub fn interval_dir(&self, interval: u32) -> PathBuf {
        self.root.join(format!("interval_{interval}"))
    }

    /// Interval directories currently on disk.
    pub fn stored_intervals(&self) -> Result<Vec<u32>, StoreError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.root).map_err(io_err(&self.root))? {
            let entry = entry.map_err(io_err(&self.root))?;
            let name = entry.file_name();
            if let Some(i) = name.to_str().and_then(|n| n.strip_prefix("interval_")) {
                let i = i.parse().map_err(|_| corrupt(&entry.path(), "bad interval directory name"))?;
                out.push(i);
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    fn write_manifest(&self, ledger: &Ledger) -> Result<(), StoreError> {
        let new = self.root.join(MANIFEST_NEW);
        let json = serde_json::to_vec_pretty(&Manifest::of(ledger)).expect("manifest serializes");
        write_synced(&new, &json)?;
        self.check(PrunePhase::ManifestRename).inspect_err(|_| {
            let _ = fs::remove_file(&new);
        })?;
        let dst = self.root.join(MANIFEST);
        fs::rename(&new, &dst).map_err(io_err(&dst))
    }

    pub fn read_manifest(&self) -> Result<Manifest, StoreError> {
        let path = self.root.join(MANIFEST);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let m: Manifest = serde_json::from_slice(&bytes).map_err(|e| corrupt(&path, e))?;
        if m.version != MANIFEST_VERSION {
            return Err(corrupt(&path, format!("unsupported manifest version {}", m.version)));
        }
        Ok(m)
    }

    pub fn read_permanent_log(&self) -> Result<Vec<PermanentBlock>, StoreError> {
        let path = self.root.join(LOG);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&path)(e)),
        };
        let mut blocks = Vec::new();
        let mut rest = &bytes[..];
        while !rest.is_empty() {
            let (len, tail) = rest
                .split_first_chunk::<4>()
                .ok_or_else(|| corrupt(&path, "truncated frame length"))?;
            let len = u32::from_le_bytes(*len) as usize;
            if tail.len() < len {
                return Err(corrupt(&path, "truncated block frame"));
            }
            let block = canonical_decode::<PermanentBlock>(&tail[..len])
                .map_err(|e: CodecError| corrupt(&path, format!("block {}: {e}", blocks.len())))?;
            blocks.push(block);
            rest = &tail[len..];
        }
        Ok(blocks)
    }

    pub fn read_interval(&self, interval: u32) -> Result<Vec<RemovableBlock>, StoreError> {
        let dir = self.interval_dir(interval);
        let mut files = Vec::new();
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let path = entry.map_err(io_err(&dir))?.path();
            let pos: u16 = path
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_suffix(".blk"))
                .and_then(|n| n.parse().ok())
                .ok_or_else(|| corrupt(&path, "unexpected file in interval directory"))?;
            files.push((pos, path));
        }
        files.sort();
        files
            .into_iter()
            .map(|(_, path)| {
                let bytes = fs::read(&path).map_err(io_err(&path))?;
                canonical_decode(&bytes).map_err(|e| corrupt(&path, e))
            })
            .collect()
    }

    /// Raw chain contents, without any validation beyond decoding.
    pub fn read_chain(&self) -> Result<ChainData, StoreError> {
        let permanent = self.read_permanent_log()?;
        let mut removable = BTreeMap::new();
        for i in self.stored_intervals()? {
            removable.insert(i, self.read_interval(i)?);
        }
        Ok(ChainData { permanent, removable })
    }
}

impl Drop for BlockStore {
    fn drop(&mut self) {
        let _ = fs::remove_file(self.root.join(LOCK));
    }
}

fn write_synced(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let mut f = File::create(path).map_err(io_err(path))?;
    f.write_all(bytes).map_err(io_err(path))?;
    f.sync_all().map_err(io_err(path))
}

/// Writes `ledger` into the store: appends new permanent blocks, writes
/// missing removable blocks, removes directories of intervals the ledger no
/// longer holds, then replaces the manifest.
pub fn save_store(ledger: &Ledger, store: &BlockStore) -> Result<(), StoreError> {
    let existing = store.read_permanent_log()?;
    let blocks = ledger.permanent_blocks();
    if existing.len() > blocks.len() || existing[..] != blocks[..existing.len()] {
        return Err(StoreError::Diverged);
    }
    let log = store.root.join(LOG);
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log)
        .map_err(io_err(&log))?;
    for b in &blocks[existing.len()..] {
        let bytes = canonical_encode(b).map_err(|e| corrupt(&log, e))?;
        let len = u32::try_from(bytes.len()).map_err(|_| corrupt(&log, "block too large"))?;
        f.write_all(&len.to_le_bytes()).map_err(io_err(&log))?;
        f.write_all(&bytes).map_err(io_err(&log))?;
    }
    f.sync_all().map_err(io_err(&log))?;

    for (i, rbs) in ledger.present_intervals() {
        let dir = store.interval_dir(*i);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for rb in rbs {
            let path = dir.join(format!("{}.blk", rb.position()));
            if !path.exists() {
                write_synced(&path, &canonical_encode(rb).map_err(|e| corrupt(&path, e))?)?;
            }
        }
    }
    for i in store.stored_intervals()? {
        if ledger.interval_blocks(i).is_none() {
            let dir = store.interval_dir(i);
            fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
        }
    }
    store.write_manifest(ledger)
}

/// Rebuilds the ledger held by the store, refusing gaps without Delete
/// evidence and chains that fail verification.
pub fn load_store(store: &BlockStore) -> Result<Ledger, StoreError> {
    let manifest = store.read_manifest()?;
    let data = store.read_chain()?;
    let ledger = match Ledger::replay(&data, manifest.config, MinerJudge::accept_all()) {
        Ok(l) => l,
        Err(ReplayError::MissingDeleteEvidence { interval }) => {
            return Err(StoreError::MissingDeleteEvidence { interval })
        }
        Err(_) => {
            let report = verify_chain(&data, manifest.config, MinerJudge::accept_all());
            return Err(StoreError::Invalid(report.violations));
        }
    };
    if ledger.tip_height() != manifest.tip_height || ledger.tip_hash() != manifest.tip_hash {
        return Err(StoreError::ManifestMismatch(format!(
            "manifest tip {:?}, chain tip {:?}",
            manifest.tip_height,
            ledger.tip_height()
        )));
    }
    Ok(ledger)
}

/// Prunes every interval whose Delete has matured and erases the directories
/// of all deleted intervals. The manifest is replaced before any directory is
/// removed; if that fails the store is untouched, and a crash afterwards
/// leaves leftover directories that the next prune removes.
pub fn prune_store(ledger: &mut Ledger, store: &BlockStore) -> Result<Vec<u32>, StoreError> {
    let mut staged = ledger.clone();
    staged.prune_deletable();
    let doomed: Vec<u32> = store
        .stored_intervals()?
        .into_iter()
        .filter(|i| staged.interval_status(*i).is_some_and(|s| s.is_deleted()))
        .collect();
    store.write_manifest(&staged)?;
    *ledger = staged;
    store.check(PrunePhase::DirectoryRemoval)?;
    for i in &doomed {
        let dir = store.interval_dir(*i);
        fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
    }
    Ok(doomed)
}

/// Digest over every stored file except the lock, keyed by relative path.
pub fn store_digest(root: &Path) -> Result<Hash32, StoreError> {
    fn walk(dir: &Path, root: &Path, out: &mut Vec<(String, PathBuf)>) -> Result<(), StoreError> {
        for entry in fs::read_dir(dir).map_err(io_err(dir))? {
            let path = entry.map_err(io_err(dir))?.path();
            if path.is_dir() {
                walk(&path, root, out)?;
            } else {
                let rel = path.strip_prefix(root).expect("under root").to_string_lossy().replace('\\', "/");
                if rel != LOCK {
                    out.push((rel, path));
                }
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(root, root, &mut files)?;
    files.sort();
    let mut buf = Vec::new();
    for (rel, path) in files {
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        buf.extend_from_slice(rel.as_bytes());
        buf.push(0);
        buf.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
        buf.extend_from_slice(&bytes);
    }
    Ok(digest(&buf))
}
