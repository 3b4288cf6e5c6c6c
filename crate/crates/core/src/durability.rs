//! On-disk snapshots of indices and the debounced flush scheduler.
//!
//! Layout under the data directory:
//!
//! ```text
//! <data_dir>/<index>/meta.json
//! <data_dir>/<index>/<type>/inv_<shard>.bin
//! <data_dir>/<index>/<type>/docs_<shard>.bin
//! ```
//!
//! Every `.bin` blob is a 6-byte header (`SQEB`, format version, codec id)
//! followed by the LZ4-compressed canonical JSON of one shard. Canonical
//! means object keys in sorted order, so identical shards always produce
//! identical bytes.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::mapping::{IndexMeta, MappingError};
use crate::store::{DocShard, DocumentStore, IndexState, InvertedIndex, ShardIndex, StoreError};

pub const BLOB_MAGIC: &[u8; 4] = b"SQEB";
pub const BLOB_VERSION: u8 = 1;
pub const CODEC_LZ4: u8 = 1;
pub const HEADER_LEN: usize = 6;
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Error)]
pub enum DurabilityError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("corrupt blob: {0}")]
    Corrupt(String),
    #[error("invalid JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid index meta in {path}: {source}")]
    Meta {
        path: PathBuf,
        #[source]
        source: MappingError,
    },
    #[error("inconsistent snapshot for index [{index}]: {source}")]
    Store {
        index: String,
        #[source]
        source: StoreError,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DurabilityError + '_ {
    move |source| DurabilityError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Wraps `bytes` in a versioned, compressed blob.
pub fn compress(bytes: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + bytes.len() / 2 + 16);
    out.extend_from_slice(BLOB_MAGIC);
    out.push(BLOB_VERSION);
    out.push(CODEC_LZ4);
    if !bytes.is_empty() {
        out.extend_from_slice(&lz4_flex::compress_prepend_size(bytes));
    }
    out
}

/// Inverse of [`compress`].
pub fn decompress(blob: &[u8]) -> Result<Vec<u8>, DurabilityError> {
    if blob.len() < HEADER_LEN {
        return Err(DurabilityError::Corrupt(format!("blob too short ({} bytes)", blob.len())));
    }
    if &blob[..4] != BLOB_MAGIC {
        return Err(DurabilityError::Corrupt("bad magic".into()));
    }
    if blob[4] != BLOB_VERSION {
        return Err(DurabilityError::Corrupt(format!("unsupported format version {}", blob[4])));
    }
    if blob[5] != CODEC_LZ4 {
        return Err(DurabilityError::Corrupt(format!("unknown codec id {}", blob[5])));
    }
    let payload = &blob[HEADER_LEN..];
    if payload.is_empty() {
        return Ok(Vec::new());
    }
    lz4_flex::decompress_size_prepended(payload).map_err(|e| DurabilityError::Corrupt(e.to_string()))
}

fn encode_shard<T: Serialize>(value: &T) -> Vec<u8> {
    compress(&serde_json::to_vec(value).expect("shard data is always serializable"))
}

fn decode_shard<T: DeserializeOwned + Default>(path: &Path) -> Result<T, DurabilityError> {
    let blob = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(T::default()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let json = decompress(&blob).map_err(|e| match e {
        DurabilityError::Corrupt(msg) => DurabilityError::Corrupt(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    serde_json::from_slice(&json).map_err(|source| DurabilityError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes through a temporary file and a rename so readers never see a
/// half-written file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DurabilityError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn index_dir(root: &Path, index: &str) -> PathBuf {
    root.join(index)
}

pub fn inverted_blob_path(root: &Path, index: &str, type_name: &str, shard: usize) -> PathBuf {
    root.join(index).join(type_name).join(format!("inv_{shard}.bin"))
}

pub fn docs_blob_path(root: &Path, index: &str, type_name: &str, shard: usize) -> PathBuf {
    root.join(index).join(type_name).join(format!("docs_{shard}.bin"))
}

/// Writes `meta.json` (pretty-printed) for an index.
pub fn save_meta(root: &Path, meta: &IndexMeta) -> Result<(), DurabilityError> {
    let dir = index_dir(root, &meta.name);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let mut text = serde_json::to_string_pretty(meta).expect("meta is always serializable");
    text.push('\n');
    write_atomic(&dir.join(META_FILE), text.as_bytes())
}

/// Writes the meta and every shard blob of an index.
pub fn save_index(root: &Path, state: &IndexState) -> Result<(), DurabilityError> {
    let meta = state.meta();
    save_meta(root, meta)?;
    for type_name in &meta.types {
        let dir = index_dir(root, &meta.name).join(type_name);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let inv = state.inverted().shards(type_name);
        let docs = state.docs().shards(type_name);
        for shard in 0..meta.num_shards() {
            write_atomic(
                &inverted_blob_path(root, &meta.name, type_name, shard),
                &encode_shard(&inv[shard]),
            )?;
            write_atomic(
                &docs_blob_path(root, &meta.name, type_name, shard),
                &encode_shard(&docs[shard]),
            )?;
        }
    }
    Ok(())
}

/// Loads one index directory.
pub fn load_index(dir: &Path) -> Result<IndexState, DurabilityError> {
    let meta_path = dir.join(META_FILE);
    let text = fs::read(&meta_path).map_err(io_err(&meta_path))?;
    let meta: IndexMeta = serde_json::from_slice(&text).map_err(|source| DurabilityError::Json {
        path: meta_path.clone(),
        source,
    })?;
    meta.validate().map_err(|source| DurabilityError::Meta {
        path: meta_path.clone(),
        source,
    })?;
    let root = dir.parent().unwrap_or(Path::new("."));
    if dir.file_name().and_then(|n| n.to_str()) != Some(meta.name.as_str()) {
        return Err(DurabilityError::Corrupt(format!(
            "{} holds index [{}]",
            dir.display(),
            meta.name
        )));
    }

    let mut inverted = InvertedIndex::default();
    let mut docs = DocumentStore::default();
    for type_name in &meta.types {
        let mut inv_shards = Vec::with_capacity(meta.num_shards());
        let mut doc_shards = Vec::with_capacity(meta.num_shards());
        for shard in 0..meta.num_shards() {
            inv_shards.push(decode_shard::<ShardIndex>(&inverted_blob_path(root, &meta.name, type_name, shard))?);
            doc_shards.push(decode_shard::<DocShard>(&docs_blob_path(root, &meta.name, type_name, shard))?);
        }
        inverted.data.insert(type_name.clone(), inv_shards);
        docs.data.insert(type_name.clone(), doc_shards);
    }
    let name = meta.name.clone();
    IndexState::from_parts(Arc::new(meta), inverted, docs)
        .map_err(|source| DurabilityError::Store { index: name, source })
}

#[derive(Debug, Default)]
pub struct LoadReport {
    pub indices: Vec<IndexState>,
    /// Index directories that failed to load.
    pub failures: Vec<(PathBuf, DurabilityError)>,
    /// Directories without a `meta.json`.
    pub skipped: Vec<PathBuf>,
}

/// Loads every index under `root`, in name order. A missing root is treated
/// as empty; a broken index is reported and does not stop the others.
pub fn load_all(root: &Path) -> Result<LoadReport, DurabilityError> {
    let mut report = LoadReport::default();
    let entries = match fs::read_dir(root) {
        Ok(e) => e,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(report),
        Err(e) => return Err(io_err(root)(e)),
    };
    let mut dirs = Vec::new();
    for entry in entries {
        let entry = entry.map_err(io_err(root))?;
        if entry.file_type().map_err(io_err(&entry.path()))?.is_dir() {
            dirs.push(entry.path());
        }
    }
    dirs.sort();
    for dir in dirs {
        if !dir.join(META_FILE).is_file() {
            log::warn!("skipping {}: no {META_FILE}", dir.display());
            report.skipped.push(dir);
            continue;
        }
        match load_index(&dir) {
            Ok(state) => report.indices.push(state),
            Err(e) => {
                log::error!("failed to load index at {}: {e}", dir.display());
                report.failures.push((dir, e));
            }
        }
    }
    Ok(report)
}

pub fn remove_index(root: &Path, index: &str) -> Result<(), DurabilityError> {
    let dir = index_dir(root, index);
    match fs::remove_dir_all(&dir) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(io_err(&dir)(e)),
    }
}

pub trait Clock: Send + Sync {
    fn now(&self) -> Instant;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Instant {
        Instant::now()
    }
}

/// A clock that only moves when told to.
#[derive(Debug)]
pub struct ManualClock {
    origin: Instant,
    offset: Mutex<Duration>,
}

impl ManualClock {
    pub fn new() -> Self {
        ManualClock {
            origin: Instant::now(),
            offset: Mutex::new(Duration::ZERO),
        }
    }

    pub fn advance(&self, by: Duration) {
        *self.offset.lock() += by;
    }

    pub fn elapsed(&self) -> Duration {
        *self.offset.lock()
    }
}

impl Default for ManualClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Instant {
        self.origin + *self.offset.lock()
    }
}

type Action = Box<dyn Fn() + Send + Sync>;

struct DebounceState {
    deadline: Option<Instant>,
    triggers: u64,
    executions: u64,
    shutdown: bool,
}

struct DebounceInner {
    interval: Duration,
    clock: Arc<dyn Clock>,
    action: Action,
    state: Mutex<DebounceState>,
    wake: Condvar,
}

impl DebounceInner {
    /// Runs the action if its deadline has passed.
    fn poll(&self) -> bool {
        {
            let mut st = self.state.lock();
            match st.deadline {
                Some(d) if self.clock.now() >= d => {
                    st.deadline = None;
                    st.executions += 1;
                }
                _ => return false,
            }
        }
        (self.action)();
        true
    }

    fn run_worker(&self) {
        let mut st = self.state.lock();
        loop {
            if st.shutdown {
                return;
            }
            match st.deadline {
                None => self.wake.wait(&mut st),
                Some(d) if Instant::now() >= d => {
                    drop(st);
                    self.poll();
                    st = self.state.lock();
                }
                Some(d) => {
                    self.wake.wait_until(&mut st, d);
                }
            }
        }
    }
}

/// Trailing-edge debouncer: after the last [`Debouncer::trigger`], the
/// action runs once, no earlier than `interval` later.
///
/// [`Debouncer::spawn`] drives it from a background thread on the system
/// clock. [`Debouncer::manual`] leaves driving to the caller through
/// [`Debouncer::poll`], which is how tests run it on a [`ManualClock`].
pub struct Debouncer {
    inner: Arc<DebounceInner>,
    worker: Option<JoinHandle<()>>,
}

impl Debouncer {
    pub fn manual(interval: Duration, clock: Arc<dyn Clock>, action: impl Fn() + Send + Sync + 'static) -> Self {
        assert!(!interval.is_zero(), "debounce interval must be positive");
        Debouncer {
            inner: Arc::new(DebounceInner {
                interval,
                clock,
                action: Box::new(action),
                state: Mutex::new(DebounceState {
                    deadline: None,
                    triggers: 0,
                    executions: 0,
                    shutdown: false,
                }),
                wake: Condvar::new(),
            }),
            worker: None,
        }
    }

    pub fn spawn(interval: Duration, action: impl Fn() + Send + Sync + 'static) -> Self {
        let mut debouncer = Self::manual(interval, Arc::new(SystemClock), action);
        let inner = debouncer.inner.clone();
        debouncer.worker = Some(
            thread::Builder::new()
                .name("sqe-flush".into())
                .spawn(move || inner.run_worker())
                .expect("failed to spawn debounce thread"),
        );
        debouncer
    }

    pub fn interval(&self) -> Duration {
        self.inner.interval
    }

    pub fn trigger(&self) {
        let mut st = self.inner.state.lock();
        st.deadline = Some(self.inner.clock.now() + self.inner.interval);
        st.triggers += 1;
        self.inner.wake.notify_all();
    }

    pub fn poll(&self) -> bool {
        self.inner.poll()
    }

    pub fn is_pending(&self) -> bool {
        self.inner.state.lock().deadline.is_some()
    }

    /// Drops a pending execution without running it.
    pub fn cancel(&self) {
        self.inner.state.lock().deadline = None;
    }

    pub fn triggers(&self) -> u64 {
        self.inner.state.lock().triggers
    }

    pub fn executions(&self) -> u64 {
        self.inner.state.lock().executions
    }
}

impl Drop for Debouncer {
    fn drop(&mut self) {
        self.inner.state.lock().shutdown = true;
        self.inner.wake.notify_all();
        if let Some(handle) = self.worker.take() {
            // the worker can end up dropping us from inside the action
            if handle.thread().id() != thread::current().id() {
                let _ = handle.join();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::validate_index_request;
    use proptest::prelude::*;
    use serde_json::json;
    use std::sync::atomic::{AtomicU64, Ordering};

    fn counter_debouncer(interval_ms: u64) -> (Debouncer, Arc<ManualClock>, Arc<AtomicU64>) {
        let clock = Arc::new(ManualClock::new());
        let count = Arc::new(AtomicU64::new(0));
        let c = count.clone();
        let d = Debouncer::manual(Duration::from_millis(interval_ms), clock.clone(), move || {
            c.fetch_add(1, Ordering::SeqCst);
        });
        (d, clock, count)
    }

    /// Advances in 1 ms steps, polling each step; returns the elapsed times
    /// at which the action ran.
    fn run_until(d: &Debouncer, clock: &ManualClock, until_ms: u64) -> Vec<u64> {
        let mut fired = Vec::new();
        while clock.elapsed() < Duration::from_millis(until_ms) {
            clock.advance(Duration::from_millis(1));
            if d.poll() {
                fired.push(clock.elapsed().as_millis() as u64);
            }
        }
        fired
    }

    #[test]
    fn burst_collapses_to_one_run() {
        let (d, clock, count) = counter_debouncer(100);
        for i in 0..5 {
            if i > 0 {
                clock.advance(Duration::from_millis(10));
            }
            d.trigger();
        }
        assert_eq!(clock.elapsed(), Duration::from_millis(40));
        let fired = run_until(&d, &clock, 1000);
        assert_eq!(fired, [140]);
        assert_eq!(count.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn single_and_zero_triggers() {
        let (d, clock, count) = counter_debouncer(100);
        assert!(run_until(&d, &clock, 500).is_empty());
        d.trigger();
        assert_eq!(run_until(&d, &clock, 1000), [600]);
        assert_eq!(count.load(Ordering::SeqCst), 1);
        // a later trigger schedules a new run
        d.trigger();
        assert_eq!(run_until(&d, &clock, 2000), [1100]);
        assert_eq!(d.executions(), 2);
    }

    #[test]
    fn background_worker_runs_once() {
        let count = Arc::new(AtomicU64::new(0));
        let c = count.clone();
        let d = Debouncer::spawn(Duration::from_millis(30), move || {
            c.fetch_add(1, Ordering::SeqCst);
        });
        for _ in 0..10 {
            d.trigger();
            thread::sleep(Duration::from_millis(2));
        }
        let start = Instant::now();
        while count.load(Ordering::SeqCst) == 0 && start.elapsed() < Duration::from_secs(5) {
            thread::sleep(Duration::from_millis(5));
        }
        thread::sleep(Duration::from_millis(100));
        assert_eq!(count.load(Ordering::SeqCst), 1);
        assert!(!d.is_pending());
    }

    proptest! {
        #[test]
        fn runs_at_most_triggers_and_at_least_once(gaps in prop::collection::vec(0u64..300, 1..30)) {
            let (d, clock, count) = counter_debouncer(100);
            for gap in &gaps {
                clock.advance(Duration::from_millis(*gap));
                d.poll();
                d.trigger();
            }
            let last = clock.elapsed();
            let fired = run_until(&d, &clock, last.as_millis() as u64 + 500);
            let runs = count.load(Ordering::SeqCst);
            prop_assert!(runs >= 1);
            prop_assert!(runs <= gaps.len() as u64);
            // the final run happens exactly one interval after the last trigger
            prop_assert_eq!(*fired.last().unwrap(), last.as_millis() as u64 + 100);
        }

        #[test]
        fn compress_roundtrip(bytes in prop::collection::vec(any::<u8>(), 0..4096)) {
            let blob = compress(&bytes);
            prop_assert_eq!(&blob[..4], BLOB_MAGIC);
            prop_assert_eq!(decompress(&blob).unwrap(), bytes);
        }
    }

    #[test]
    fn empty_blob_is_header_only() {
        let blob = compress(b"");
        assert_eq!(blob.len(), HEADER_LEN);
        assert_eq!(decompress(&blob).unwrap(), b"");
    }

    #[test]
    fn repeated_byte_compresses_well() {
        let input = vec![b'x'; 1 << 20];
        let blob = compress(&input);
        assert!(blob.len() * 20 < input.len(), "{} bytes", blob.len());
        assert_eq!(decompress(&blob).unwrap(), input);
    }

    #[test]
    fn corrupt_blobs_rejected() {
        let good = compress(b"hello hello hello hello");
        assert!(matches!(decompress(&good[..3]), Err(DurabilityError::Corrupt(_))));
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decompress(&bad), Err(DurabilityError::Corrupt(_))));
        let mut bad = good.clone();
        bad[4] = 9;
        assert!(matches!(decompress(&bad), Err(DurabilityError::Corrupt(_))));
        let mut bad = good.clone();
        bad[5] = 7;
        assert!(matches!(decompress(&bad), Err(DurabilityError::Corrupt(_))));
        let mut bad = good;
        bad.truncate(bad.len() - 4);
        assert!(matches!(decompress(&bad), Err(DurabilityError::Corrupt(_))));
    }

    fn sample_state(shards: u32) -> IndexState {
        let meta = validate_index_request(
            "films",
            &json!({"settings": {"number_of_shards": shards}, "mappings": {
                "film": {"properties": {"title": {"type": "text"}, "score": {"type": "float"}}},
                "short": {"properties": {"title": {"type": "text"}}}
            }}),
        )
        .unwrap();
        IndexState::new(Arc::new(meta))
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let empty = sample_state(2);
        save_index(dir.path(), &empty).unwrap();
        let report = load_all(dir.path()).unwrap();
        assert_eq!(report.indices.len(), 1);
        assert_eq!(report.indices[0].meta(), empty.meta());
        assert_eq!(report.indices[0].num_docs(), 0);

        let mut state = sample_state(3);
        for i in 0..40 {
            let t = if i % 4 == 0 { "short" } else { "film" };
            state
                .add(t, Some(&format!("d{i}")), json!({"title": format!("title {} word{}", i % 7, i), "score": i}))
                .unwrap();
        }
        save_index(dir.path(), &state).unwrap();
        let loaded = load_index(&dir.path().join("films")).unwrap();
        assert_eq!(loaded.inverted(), state.inverted());
        assert_eq!(loaded.docs(), state.docs());

        // re-serializing unchanged data gives identical bytes
        let other = tempfile::tempdir().unwrap();
        save_index(other.path(), &loaded).unwrap();
        for shard in 0..3 {
            for path in [
                inverted_blob_path(Path::new(""), "films", "film", shard),
                docs_blob_path(Path::new(""), "films", "film", shard),
            ] {
                assert_eq!(
                    fs::read(dir.path().join(&path)).unwrap(),
                    fs::read(other.path().join(&path)).unwrap()
                );
            }
        }
    }

    #[test]
    fn load_all_edge_cases() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_all(&dir.path().join("missing")).unwrap().indices.is_empty());
        assert!(load_all(dir.path()).unwrap().indices.is_empty());

        fs::create_dir(dir.path().join("stray")).unwrap();
        let mut good = sample_state(1);
        good.add("film", Some("1"), json!({"title": "ok"})).unwrap();
        save_index(dir.path(), &good).unwrap();

        let mut other = IndexState::new(Arc::new(
            validate_index_request("broken", &json!({"mappings": {"t": {"properties": {"x": {"type": "text"}}}}}))
                .unwrap(),
        ));
        other.add("t", Some("1"), json!({"x": "y"})).unwrap();
        save_index(dir.path(), &other).unwrap();
        let blob = inverted_blob_path(dir.path(), "broken", "t", 0);
        let mut bytes = fs::read(&blob).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xff;
        bytes.truncate(last - 2);
        fs::write(&blob, bytes).unwrap();

        let report = load_all(dir.path()).unwrap();
        assert_eq!(report.indices.len(), 1);
        assert_eq!(report.indices[0].meta().name, "films");
        assert_eq!(report.failures.len(), 1);
        assert!(report.failures[0].0.ends_with("broken"));
        assert_eq!(report.skipped.len(), 1);
    }

    #[test]
    fn meta_is_pretty_json() {
        let dir = tempfile::tempdir().unwrap();
        let state = sample_state(1);
        save_meta(dir.path(), state.meta()).unwrap();
        let text = fs::read_to_string(dir.path().join("films").join(META_FILE)).unwrap();
        assert!(text.contains("\n  \"name\": \"films\""));
        remove_index(dir.path(), "films").unwrap();
        assert!(!dir.path().join("films").exists());
        remove_index(dir.path(), "films").unwrap();
    }
}
