//! Persistent RD-point cache and the append-only run ledger.
//!
//! Both live behind one mutex so cache writes and ledger appends are
//! serialized through a single writer.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};

use super::SweepError;
use crate::curve::RDPoint;
use crate::lambda::{CodecId, FrameTypeGroup, LambdaScope, ScaleFactor};

pub const LEDGER_FILE: &str = "ledger.jsonl";
const POINTS_DIR: &str = "points";

/// What an encode was for. Lets a ledger be replayed into optimization
/// results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Sweep,
    Reference,
    Bracket,
    Search,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRecord {
    pub timestamp: String,
    pub cache_key: String,
    pub clip: String,
    pub codec: CodecId,
    pub qp: i32,
    pub k: ScaleFactor,
    pub group: FrameTypeGroup,
    pub scope: LambdaScope,
    pub bitrate_kbps: f64,
    pub msssim: f64,
    pub msssim_db: f64,
    pub vmaf: Option<f64>,
    pub invocation_seconds: f64,
    pub cached: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<Phase>,
}

impl LedgerRecord {
    pub fn point(&self) -> RDPoint {
        RDPoint {
            qp: self.qp,
            bitrate_kbps: self.bitrate_kbps,
            msssim: self.msssim,
            msssim_db: self.msssim_db,
            vmaf: self.vmaf,
        }
    }
}

struct Inner {
    memory: HashMap<String, RDPoint>,
    dir: Option<PathBuf>,
    ledger: Option<File>,
    records: Vec<LedgerRecord>,
}

pub struct RunStore {
    inner: Mutex<Inner>,
}

fn io_err(path: &Path, source: std::io::Error) -> SweepError {
    SweepError::Io { path: path.to_path_buf(), source }
}

impl RunStore {
    /// Cache and ledger that only live as long as the process.
    pub fn in_memory() -> Self {
        RunStore { inner: Mutex::new(Inner { memory: HashMap::new(), dir: None, ledger: None, records: Vec::new() }) }
    }

    /// Opens (creating if needed) a cache directory holding one JSON file per
    /// point under `points/` and the ledger at `ledger.jsonl`.
    pub fn open(dir: &Path) -> Result<Self, SweepError> {
        let points = dir.join(POINTS_DIR);
        std::fs::create_dir_all(&points).map_err(|e| io_err(&points, e))?;
        let ledger_path = dir.join(LEDGER_FILE);
        let ledger =
            OpenOptions::new().create(true).append(true).open(&ledger_path).map_err(|e| io_err(&ledger_path, e))?;
        Ok(RunStore {
            inner: Mutex::new(Inner {
                memory: HashMap::new(),
                dir: Some(dir.to_path_buf()),
                ledger: Some(ledger),
                records: Vec::new(),
            }),
        })
    }

    pub fn dir(&self) -> Option<PathBuf> {
        self.lock().dir.clone()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn lookup(&self, key: &str) -> Result<Option<RDPoint>, SweepError> {
        let mut inner = self.lock();
        if let Some(p) = inner.memory.get(key) {
            return Ok(Some(p.clone()));
        }
        let Some(dir) = &inner.dir else { return Ok(None) };
        let path = dir.join(POINTS_DIR).join(format!("{key}.json"));
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(io_err(&path, e)),
        };
        let point: RDPoint = serde_json::from_slice(&bytes)
            .map_err(|e| SweepError::Cache(format!("corrupt cache entry {}: {e}", path.display())))?;
        inner.memory.insert(key.to_string(), point.clone());
        Ok(Some(point))
    }

    /// Stores a freshly measured point (if not already cached) and appends
    /// its ledger record.
    pub fn commit(&self, point: Option<&RDPoint>, record: LedgerRecord) -> Result<(), SweepError> {
        let mut inner = self.lock();
        if let Some(point) = point {
            if let Some(dir) = &inner.dir {
                let final_path = dir.join(POINTS_DIR).join(format!("{}.json", record.cache_key));
                let tmp = final_path.with_extension("json.tmp");
                let bytes = serde_json::to_vec(point).map_err(|e| SweepError::Cache(e.to_string()))?;
                std::fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
                std::fs::rename(&tmp, &final_path).map_err(|e| io_err(&final_path, e))?;
            }
            inner.memory.insert(record.cache_key.clone(), point.clone());
        }
        let path = inner.dir.as_ref().map(|d| d.join(LEDGER_FILE)).unwrap_or_default();
        if let Some(ledger) = inner.ledger.as_mut() {
            let mut line = serde_json::to_vec(&record).map_err(|e| SweepError::Cache(e.to_string()))?;
            line.push(b'\n');
            ledger.write_all(&line).and_then(|_| ledger.flush()).map_err(|e| io_err(&path, e))?;
        }
        inner.records.push(record);
        Ok(())
    }

    /// Ledger records appended through this store.
    pub fn records(&self) -> Vec<LedgerRecord> {
        self.lock().records.clone()
    }
}

pub fn read_ledger(path: &Path) -> Result<Vec<LedgerRecord>, SweepError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| SweepError::Cache(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// Counting semaphore capping concurrent encodes across every sweep that
/// shares it.
pub struct Limiter {
    permits: Mutex<usize>,
    freed: Condvar,
    capacity: usize,
}

pub struct Permit<'a> {
    limiter: &'a Limiter,
}

impl Limiter {
    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.max(1);
        Limiter { permits: Mutex::new(capacity), freed: Condvar::new(), capacity }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock().unwrap_or_else(|p| p.into_inner());
        while *n == 0 {
            n = self.freed.wait(n).unwrap_or_else(|p| p.into_inner());
        }
        *n -= 1;
        Permit { limiter: self }
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.limiter.permits.lock().unwrap_or_else(|p| p.into_inner());
        *n += 1;
        self.limiter.freed.notify_one();
    }
}
