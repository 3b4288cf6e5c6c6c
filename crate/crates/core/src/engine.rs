//! Composition root: configuration, the index registry and per-index
//! handles that pair the shared store with its flush scheduler.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Weak};
use std::time::{Duration, Instant};

use parking_lot::{Mutex, RwLock, RwLockReadGuard, RwLockWriteGuard};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::durability::{self, Clock, Debouncer, DurabilityError};
use crate::mapping::{validate_index_request, IndexMeta, MappingError};
use crate::querydsl::{parse_query_with_size, QueryAst, QueryError};
use crate::retriever::{execute, RetrieveError, SearchResponse};
use crate::store::{IndexState, StoreError, WriteOutcome};

pub const ENGINE_NAME: &str = "sqe";
pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub bind_address: String,
    pub data_dir: PathBuf,
    pub debounce_ms: u64,
    pub default_size: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            bind_address: "127.0.0.1:9200".into(),
            data_dir: PathBuf::from("data"),
            debounce_ms: 1000,
            default_size: 10,
        }
    }
}

impl EngineConfig {
    /// Reads a JSON config file. Missing keys take their defaults.
    pub fn from_file(path: &Path) -> Result<Self, EngineError> {
        let text = fs::read_to_string(path)
            .map_err(|e| EngineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let config: EngineConfig = serde_json::from_str(&text)
            .map_err(|e| EngineError::Config(format!("invalid config {}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.debounce_ms == 0 {
            return Err(EngineError::Config("debounce_ms must be positive".into()));
        }
        if self.default_size == 0 {
            return Err(EngineError::Config("default_size must be positive".into()));
        }
        match self.bind_address.rsplit_once(':') {
            Some((host, port)) if !host.is_empty() && port.parse::<u16>().is_ok() => {}
            _ => {
                return Err(EngineError::Config(format!(
                    "bind_address [{}] is not host:port",
                    self.bind_address
                )))
            }
        }
        if self.data_dir.as_os_str().is_empty() {
            return Err(EngineError::Config("data_dir must not be empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("data directory {path} is unusable: {reason}")]
    DataDir { path: PathBuf, reason: String },
    #[error("no such index [{0}]")]
    IndexNotFound(String),
    #[error("index [{0}] already exists")]
    IndexExists(String),
    #[error(transparent)]
    Mapping(#[from] MappingError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Retrieve(#[from] RetrieveError),
    #[error(transparent)]
    Durability(#[from] DurabilityError),
}

/// One index: its store, guarded by a single-writer lock, and its flush
/// scheduler.
pub struct Index {
    name: String,
    root: PathBuf,
    state: RwLock<IndexState>,
    debouncer: Debouncer,
    flush_lock: Mutex<()>,
    dropped: AtomicBool,
    flushes: AtomicU64,
}

impl Index {
    fn new(root: &Path, state: IndexState, interval: Duration, clock: Option<Arc<dyn Clock>>) -> Arc<Self> {
        Arc::new_cyclic(|weak: &Weak<Index>| {
            let weak = weak.clone();
            let action = move || {
                if let Some(index) = weak.upgrade() {
                    if let Err(e) = index.flush() {
                        log::error!("flush of index [{}] failed: {e}", index.name);
                    }
                }
            };
            let debouncer = match clock {
                Some(clock) => Debouncer::manual(interval, clock, action),
                None => Debouncer::spawn(interval, action),
            };
            Index {
                name: state.meta().name.clone(),
                root: root.to_path_buf(),
                state: RwLock::new(state),
                debouncer,
                flush_lock: Mutex::new(()),
                dropped: AtomicBool::new(false),
                flushes: AtomicU64::new(0),
            }
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn meta(&self) -> Arc<IndexMeta> {
        self.state.read().meta().clone()
    }

    pub fn read(&self) -> RwLockReadGuard<'_, IndexState> {
        self.state.read()
    }

    /// Runs `f` under the writer lock and schedules a flush.
    pub fn write<T>(&self, f: impl FnOnce(&mut IndexState) -> T) -> T {
        let out = f(&mut self.state.write());
        self.debouncer.trigger();
        out
    }

    /// Purges pending deletions and writes a snapshot. Returns false when the
    /// index has been dropped.
    pub fn flush(&self) -> Result<bool, DurabilityError> {
        let _guard = self.flush_lock.lock();
        if self.dropped.load(Ordering::SeqCst) {
            return Ok(false);
        }
        let mut state = self.state.write();
        let purged = state.purge_deleted();
        let state = RwLockWriteGuard::downgrade(state);
        durability::save_index(&self.root, &state)?;
        self.flushes.fetch_add(1, Ordering::SeqCst);
        log::debug!("flushed index [{}], purged {purged} documents", self.name);
        Ok(true)
    }

    pub fn flush_count(&self) -> u64 {
        self.flushes.load(Ordering::SeqCst)
    }

    pub fn flush_pending(&self) -> bool {
        self.debouncer.is_pending()
    }

    /// Drives a manually clocked scheduler; a no-op for background ones.
    pub fn poll_flush(&self) -> bool {
        self.debouncer.poll()
    }
}

type Registry = BTreeMap<String, Arc<Index>>;

pub struct Engine {
    config: EngineConfig,
    clock: Option<Arc<dyn Clock>>,
    registry: RwLock<Arc<Registry>>,
    admin: Mutex<()>,
    load_failures: Vec<(PathBuf, String)>,
}

impl Engine {
    /// Loads every saved index under the configured data directory.
    pub fn bootstrap(config: EngineConfig) -> Result<Self, EngineError> {
        Self::bootstrap_inner(config, None)
    }

    /// Like [`Engine::bootstrap`], but flushes are scheduled on `clock` and
    /// only run from [`Engine::poll_flushes`].
    pub fn bootstrap_with_clock(config: EngineConfig, clock: Arc<dyn Clock>) -> Result<Self, EngineError> {
        Self::bootstrap_inner(config, Some(clock))
    }

    fn bootstrap_inner(config: EngineConfig, clock: Option<Arc<dyn Clock>>) -> Result<Self, EngineError> {
        config.validate()?;
        let data_dir = config.data_dir.clone();
        let data_err = |reason: String| EngineError::DataDir {
            path: data_dir.clone(),
            reason,
        };
        fs::create_dir_all(&data_dir).map_err(|e| data_err(e.to_string()))?;
        let report = durability::load_all(&data_dir).map_err(|e| data_err(e.to_string()))?;
        let interval = Duration::from_millis(config.debounce_ms);
        let mut registry = Registry::new();
        for state in report.indices {
            let name = state.meta().name.clone();
            log::info!("loaded index [{name}] with {} documents", state.live_docs());
            registry.insert(name, Index::new(&data_dir, state, interval, clock.clone()));
        }
        let load_failures = report
            .failures
            .into_iter()
            .map(|(path, e)| (path, e.to_string()))
            .collect();
        Ok(Engine {
            config,
            clock,
            registry: RwLock::new(Arc::new(registry)),
            admin: Mutex::new(()),
            load_failures,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    /// Index directories that could not be loaded at bootstrap.
    pub fn load_failures(&self) -> &[(PathBuf, String)] {
        &self.load_failures
    }

    fn snapshot(&self) -> Arc<Registry> {
        self.registry.read().clone()
    }

    pub fn index(&self, name: &str) -> Result<Arc<Index>, EngineError> {
        self.snapshot()
            .get(name)
            .cloned()
            .ok_or_else(|| EngineError::IndexNotFound(name.to_string()))
    }

    pub fn indices(&self) -> Vec<Arc<Index>> {
        self.snapshot().values().cloned().collect()
    }

    /// Validates the request, writes `meta.json` and registers the index.
    pub fn create_index(&self, name: &str, body: &Value) -> Result<Arc<Index>, EngineError> {
        let _admin = self.admin.lock();
        if self.snapshot().contains_key(name) {
            return Err(EngineError::IndexExists(name.to_string()));
        }
        let meta = validate_index_request(name, body)?;
        durability::save_meta(&self.config.data_dir, &meta)?;
        let index = Index::new(
            &self.config.data_dir,
            IndexState::new(Arc::new(meta)),
            Duration::from_millis(self.config.debounce_ms),
            self.clock.clone(),
        );
        let mut next = (*self.snapshot()).clone();
        next.insert(name.to_string(), index.clone());
        *self.registry.write() = Arc::new(next);
        Ok(index)
    }

    pub fn drop_index(&self, name: &str) -> Result<(), EngineError> {
        let _admin = self.admin.lock();
        let index = self.index(name)?;
        let mut next = (*self.snapshot()).clone();
        next.remove(name);
        *self.registry.write() = Arc::new(next);

        index.debouncer.cancel();
        let _flush = index.flush_lock.lock();
        index.dropped.store(true, Ordering::SeqCst);
        durability::remove_index(&self.config.data_dir, name)?;
        Ok(())
    }

    pub fn put_document(
        &self,
        index: &str,
        type_name: &str,
        id: Option<&str>,
        doc: Value,
    ) -> Result<WriteOutcome, EngineError> {
        let index = self.index(index)?;
        Ok(index.write(|s| s.add(type_name, id, doc))?)
    }

    pub fn get_document(&self, index: &str, type_name: &str, id: &str) -> Result<Option<Value>, EngineError> {
        let index = self.index(index)?;
        let state = index.read();
        if !state.meta().has_type(type_name) {
            return Err(StoreError::UnknownType(type_name.to_string()).into());
        }
        Ok(state.get(type_name, id).cloned())
    }

    pub fn delete_document(&self, index: &str, type_name: &str, id: &str) -> Result<(), EngineError> {
        let index = self.index(index)?;
        Ok(index.write(|s| s.delete(type_name, id))?)
    }

    /// Searches one type of an index, or all its types.
    pub fn search(&self, index: &str, type_name: Option<&str>, body: &Value) -> Result<SearchResponse, EngineError> {
        let started = Instant::now();
        let index = self.index(index)?;
        let state = index.read();
        let ast = parse_query_with_size(body, state.meta(), self.config.default_size)?;
        let mut response = execute(&state, type_name, &ast)?;
        response.took_ms = started.elapsed().as_millis() as u64;
        Ok(response)
    }

    /// Searches every index. Indices whose mapping rejects the query are
    /// skipped; if all of them reject it, the first error is returned.
    pub fn search_all(&self, body: &Value) -> Result<SearchResponse, EngineError> {
        let started = Instant::now();
        let indices = self.indices();
        let mut parts = Vec::new();
        let mut size = None;
        let mut first_err = None;
        for index in &indices {
            let state = index.read();
            let ast: QueryAst = match parse_query_with_size(body, state.meta(), self.config.default_size) {
                Ok(ast) => ast,
                Err(e) => {
                    log::debug!("index [{}] rejected query: {e}", index.name());
                    first_err.get_or_insert(e);
                    continue;
                }
            };
            size = Some(ast.size);
            parts.push(execute(&state, None, &ast)?);
        }
        let size = match (size, first_err) {
            (Some(size), _) => size,
            (None, Some(e)) => return Err(e.into()),
            (None, None) => {
                // no indices at all: still reject malformed bodies
                let probe = IndexMeta {
                    name: "_probe".into(),
                    settings: Default::default(),
                    fields: Default::default(),
                    types: Default::default(),
                };
                match parse_query_with_size(body, &probe, self.config.default_size) {
                    Err(QueryError::UnknownField(_)) | Ok(_) => 0,
                    Err(e) => return Err(e.into()),
                }
            }
        };
        let mut response = SearchResponse::merge(parts, size);
        response.took_ms = started.elapsed().as_millis() as u64;
        Ok(response)
    }

    /// Flushes every index with a pending scheduled flush.
    pub fn flush_pending(&self) -> Result<usize, EngineError> {
        let mut n = 0;
        for index in self.indices() {
            if index.flush_pending() {
                index.debouncer.cancel();
                index.flush()?;
                n += 1;
            }
        }
        Ok(n)
    }

    pub fn flush_all(&self) -> Result<(), EngineError> {
        for index in self.indices() {
            index.debouncer.cancel();
            index.flush()?;
        }
        Ok(())
    }

    /// Runs due flushes on a manual clock; returns how many ran.
    pub fn poll_flushes(&self) -> usize {
        self.indices().iter().filter(|i| i.poll_flush()).count()
    }

    pub fn total_flushes(&self) -> u64 {
        self.indices().iter().map(|i| i.flush_count()).sum()
    }

    /// Info document: engine name, version and per-index doc counts.
    pub fn info(&self) -> Value {
        let indices: serde_json::Map<String, Value> = self
            .indices()
            .iter()
            .map(|i| {
                let state = i.read();
                let types: serde_json::Map<String, Value> = state
                    .meta()
                    .types
                    .iter()
                    .map(|t| (t.clone(), Value::from(state.live_type_docs(t))))
                    .collect();
                (
                    i.name().to_string(),
                    serde_json::json!({"docs": state.live_docs(), "types": types}),
                )
            })
            .collect();
        serde_json::json!({
            "name": ENGINE_NAME,
            "version": {"number": ENGINE_VERSION},
            "indices": indices,
        })
    }
}
