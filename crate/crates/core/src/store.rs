//! Sharded inverted index and document store for one index.
//!
//! Layout mirrors the nested-dictionary model: `type -> shard -> field ->
//! term -> (document frequency, postings)` for the inverted index and
//! `type -> shard -> id -> source` for the document store. Deletes are lazy:
//! they only mark the document, and [`IndexState::purge_deleted`] removes
//! marked documents when the index is flushed.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::analysis::index_terms;
use crate::mapping::{flatten_document, IndexMeta, MappingError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StoreError {
    #[error("type [{0}] is not declared in the index mapping")]
    UnknownType(String),
    #[error("document [{type_name}/{id}] not found")]
    NotFound { type_name: String, id: String },
    #[error("document [{type_name}/{id}] is already marked for deletion")]
    AlreadyDeleted { type_name: String, id: String },
    #[error("document [{type_name}/{id}] is already indexed")]
    AlreadyIndexed { type_name: String, id: String },
    #[error("document id must not be empty")]
    EmptyId,
    #[error(transparent)]
    Mapping(#[from] MappingError),
    #[error("inconsistent store data: {0}")]
    Corrupt(String),
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Shard number of a document id. Stable across restarts.
pub fn shard_of(doc_id: &str, num_shards: usize) -> usize {
    (fnv1a64(doc_id.as_bytes()) % num_shards as u64) as usize
}

/// A fresh random 128-bit id as 32 lowercase hex characters.
pub fn generate_id() -> String {
    format!("{:032x}", rand::random::<u128>())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostingEntry {
    pub doc_frequency: u64,
    pub postings: BTreeMap<String, u32>,
}

pub type TermIndex = BTreeMap<String, PostingEntry>;

/// Per-shard field indices of one type.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ShardIndex {
    pub fields: BTreeMap<String, TermIndex>,
}

impl ShardIndex {
    pub fn posting(&self, field: &str, term: &str) -> Option<&PostingEntry> {
        self.fields.get(field)?.get(term)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InvertedIndex {
    pub data: BTreeMap<String, Vec<ShardIndex>>,
}

impl InvertedIndex {
    pub fn shards(&self, type_name: &str) -> &[ShardIndex] {
        self.data.get(type_name).map(Vec::as_slice).unwrap_or(&[])
    }
}

pub type DocShard = BTreeMap<String, Value>;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DocumentStore {
    pub data: BTreeMap<String, Vec<DocShard>>,
    pub num_docs: u64,
}

impl DocumentStore {
    pub fn shards(&self, type_name: &str) -> &[DocShard] {
        self.data.get(type_name).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Stored documents of one type, including ones marked for deletion.
    pub fn type_count(&self, type_name: &str) -> u64 {
        self.shards(type_name).iter().map(|s| s.len() as u64).sum()
    }
}

/// Documents marked for deletion, in marking order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DeletionList {
    entries: Vec<(String, String)>,
    by_type: BTreeMap<String, BTreeSet<String>>,
}

impl DeletionList {
    pub fn contains(&self, type_name: &str, id: &str) -> bool {
        self.by_type.get(type_name).is_some_and(|ids| ids.contains(id))
    }

    pub fn ids(&self, type_name: &str) -> impl Iterator<Item = &str> {
        self.by_type.get(type_name).into_iter().flatten().map(String::as_str)
    }

    pub fn count(&self, type_name: &str) -> u64 {
        self.by_type.get(type_name).map_or(0, |ids| ids.len() as u64)
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn push(&mut self, type_name: &str, id: &str) -> bool {
        let inserted = self
            .by_type
            .entry(type_name.to_string())
            .or_default()
            .insert(id.to_string());
        if inserted {
            self.entries.push((type_name.to_string(), id.to_string()));
        }
        inserted
    }

    fn remove(&mut self, type_name: &str, id: &str) -> bool {
        let removed = self
            .by_type
            .get_mut(type_name)
            .is_some_and(|ids| ids.remove(id));
        if removed {
            self.entries.retain(|(t, i)| !(t == type_name && i == id));
            if self.by_type.get(type_name).is_some_and(BTreeSet::is_empty) {
                self.by_type.remove(type_name);
            }
        }
        removed
    }

    fn take(&mut self) -> Vec<(String, String)> {
        self.by_type.clear();
        std::mem::take(&mut self.entries)
    }
}

/// Term counts per indexed field of one document.
pub type AnalyzedDoc = BTreeMap<String, BTreeMap<String, u32>>;

/// Flattens a document and runs every indexed field through its index
/// analyzer, counting term occurrences.
pub fn analyze_document(meta: &IndexMeta, doc: &Value) -> Result<AnalyzedDoc, MappingError> {
    let mut out = AnalyzedDoc::new();
    for (path, value) in flatten_document(doc, meta)? {
        let field = match meta.field(&path) {
            Some(f) if f.index => f,
            _ => continue,
        };
        for term in index_terms(field, &value) {
            *out.entry(path.clone()).or_default().entry(term).or_insert(0) += 1;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WriteResult {
    Created,
    Updated,
}

impl WriteResult {
    pub fn as_str(self) -> &'static str {
        match self {
            WriteResult::Created => "created",
            WriteResult::Updated => "updated",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WriteOutcome {
    pub id: String,
    pub result: WriteResult,
}

/// In-memory state of one index. Not synchronized; the engine wraps it in a
/// lock so that writes are serialized and reads see whole operations.
#[derive(Debug, Clone)]
pub struct IndexState {
    meta: Arc<IndexMeta>,
    inverted: InvertedIndex,
    docs: DocumentStore,
    deletions: DeletionList,
}

impl IndexState {
    pub fn new(meta: Arc<IndexMeta>) -> Self {
        let shards = meta.num_shards();
        let inverted = InvertedIndex {
            data: meta
                .types
                .iter()
                .map(|t| (t.clone(), vec![ShardIndex::default(); shards]))
                .collect(),
        };
        let docs = DocumentStore {
            data: meta
                .types
                .iter()
                .map(|t| (t.clone(), vec![DocShard::new(); shards]))
                .collect(),
            num_docs: 0,
        };
        IndexState {
            meta,
            inverted,
            docs,
            deletions: DeletionList::default(),
        }
    }

    /// Reassembles a state from persisted parts, checking that the pieces
    /// agree with the mapping and with each other.
    pub fn from_parts(
        meta: Arc<IndexMeta>,
        inverted: InvertedIndex,
        mut docs: DocumentStore,
    ) -> Result<Self, StoreError> {
        let shards = meta.num_shards();
        let corrupt = |msg: String| Err(StoreError::Corrupt(msg));
        let types: Vec<&String> = meta.types.iter().collect();
        if inverted.data.keys().collect::<Vec<_>>() != types
            || docs.data.keys().collect::<Vec<_>>() != types
        {
            return corrupt("type set does not match mapping".into());
        }
        let mut total = 0u64;
        for (type_name, doc_shards) in &docs.data {
            let inv_shards = &inverted.data[type_name];
            if doc_shards.len() != shards || inv_shards.len() != shards {
                return corrupt(format!("type [{type_name}] does not have {shards} shards"));
            }
            for (n, (doc_shard, inv_shard)) in doc_shards.iter().zip(inv_shards).enumerate() {
                total += doc_shard.len() as u64;
                if let Some(id) = doc_shard.keys().find(|id| shard_of(id, shards) != n) {
                    return corrupt(format!("document [{id}] stored in wrong shard {n}"));
                }
                for (field, terms) in &inv_shard.fields {
                    if meta.field(field).is_none_or(|f| !f.index) {
                        return corrupt(format!("postings for unindexed field [{field}]"));
                    }
                    for (term, entry) in terms {
                        let bad = entry.postings.is_empty()
                            || entry.doc_frequency != entry.postings.len() as u64
                            || entry
                                .postings
                                .iter()
                                .any(|(id, &tf)| tf == 0 || !doc_shard.contains_key(id));
                        if bad {
                            return corrupt(format!("bad posting entry [{field}:{term}]"));
                        }
                    }
                }
            }
        }
        docs.num_docs = total;
        Ok(IndexState {
            meta,
            inverted,
            docs,
            deletions: DeletionList::default(),
        })
    }

    pub fn meta(&self) -> &Arc<IndexMeta> {
        &self.meta
    }

    pub fn inverted(&self) -> &InvertedIndex {
        &self.inverted
    }

    pub fn docs(&self) -> &DocumentStore {
        &self.docs
    }

    pub fn deletions(&self) -> &DeletionList {
        &self.deletions
    }

    /// Documents stored, including those still pending deletion.
    pub fn num_docs(&self) -> u64 {
        self.docs.num_docs
    }

    /// Documents visible to reads.
    pub fn live_docs(&self) -> u64 {
        self.docs.num_docs - self.deletions.len() as u64
    }

    pub fn live_type_docs(&self, type_name: &str) -> u64 {
        self.docs.type_count(type_name) - self.deletions.count(type_name)
    }

    fn check_type(&self, type_name: &str) -> Result<(), StoreError> {
        if self.meta.has_type(type_name) {
            Ok(())
        } else {
            Err(StoreError::UnknownType(type_name.to_string()))
        }
    }

    fn shard(&self, id: &str) -> usize {
        shard_of(id, self.meta.num_shards())
    }

    fn stored(&self, type_name: &str, id: &str) -> Option<&Value> {
        self.docs.data.get(type_name)?.get(self.shard(id))?.get(id)
    }

    /// Indexes a document. Without an id one is generated; an id that is
    /// already stored goes through [`IndexState::update`].
    pub fn add(&mut self, type_name: &str, id: Option<&str>, doc: Value) -> Result<WriteOutcome, StoreError> {
        self.check_type(type_name)?;
        match id {
            Some(id) => self.update(type_name, id, doc),
            None => {
                let analyzed = analyze_document(&self.meta, &doc)?;
                let mut id = generate_id();
                while self.stored(type_name, &id).is_some() {
                    id = generate_id();
                }
                self.generate(type_name, &id, &analyzed, doc)?;
                Ok(WriteOutcome {
                    id,
                    result: WriteResult::Created,
                })
            }
        }
    }

    /// Replaces the document at `id`, removing the old one from the index
    /// immediately. Creates the document when none exists.
    pub fn update(&mut self, type_name: &str, id: &str, doc: Value) -> Result<WriteOutcome, StoreError> {
        self.check_type(type_name)?;
        if id.is_empty() {
            return Err(StoreError::EmptyId);
        }
        // validate before touching the old document
        let analyzed = analyze_document(&self.meta, &doc)?;
        let mut result = WriteResult::Created;
        if self.stored(type_name, id).is_some() {
            if !self.deletions.remove(type_name, id) {
                result = WriteResult::Updated;
            }
            self.degenerate(type_name, id)?;
        }
        self.generate(type_name, id, &analyzed, doc)?;
        Ok(WriteOutcome {
            id: id.to_string(),
            result,
        })
    }

    /// The stored source unless the document is unknown or marked deleted.
    pub fn get(&self, type_name: &str, id: &str) -> Option<&Value> {
        if self.deletions.contains(type_name, id) {
            return None;
        }
        self.stored(type_name, id)
    }

    /// Marks a document for deletion.
    pub fn delete(&mut self, type_name: &str, id: &str) -> Result<(), StoreError> {
        self.check_type(type_name)?;
        if self.stored(type_name, id).is_none() {
            return Err(StoreError::NotFound {
                type_name: type_name.to_string(),
                id: id.to_string(),
            });
        }
        if !self.deletions.push(type_name, id) {
            return Err(StoreError::AlreadyDeleted {
                type_name: type_name.to_string(),
                id: id.to_string(),
            });
        }
        Ok(())
    }

    /// Adds an analyzed document to its shard's postings and stores the source.
    pub fn generate(
        &mut self,
        type_name: &str,
        id: &str,
        analyzed: &AnalyzedDoc,
        source: Value,
    ) -> Result<(), StoreError> {
        self.check_type(type_name)?;
        let shard = self.shard(id);
        let doc_shard = &mut self.docs.data.get_mut(type_name).expect("type checked")[shard];
        if doc_shard.contains_key(id) {
            return Err(StoreError::AlreadyIndexed {
                type_name: type_name.to_string(),
                id: id.to_string(),
            });
        }
        doc_shard.insert(id.to_string(), source);
        self.docs.num_docs += 1;

        let inv_shard = &mut self.inverted.data.get_mut(type_name).expect("type checked")[shard];
        for (field, terms) in analyzed {
            let term_index = inv_shard.fields.entry(field.clone()).or_default();
            for (term, &count) in terms {
                let entry = term_index.entry(term.clone()).or_default();
                entry.postings.insert(id.to_string(), count);
                entry.doc_frequency += 1;
            }
        }
        Ok(())
    }

    /// Removes a stored document from the postings and the document store,
    /// returning its source.
    pub fn degenerate(&mut self, type_name: &str, id: &str) -> Result<Value, StoreError> {
        self.check_type(type_name)?;
        let shard = self.shard(id);
        let source = self.docs.data.get_mut(type_name).expect("type checked")[shard]
            .remove(id)
            .ok_or_else(|| StoreError::NotFound {
                type_name: type_name.to_string(),
                id: id.to_string(),
            })?;
        self.docs.num_docs -= 1;

        // Stored documents were validated on the way in.
        let analyzed = analyze_document(&self.meta, &source)?;
        let inv_shard = &mut self.inverted.data.get_mut(type_name).expect("type checked")[shard];
        for (field, terms) in &analyzed {
            let Some(term_index) = inv_shard.fields.get_mut(field) else {
                continue;
            };
            for term in terms.keys() {
                if let Some(entry) = term_index.get_mut(term) {
                    if entry.postings.remove(id).is_some() {
                        entry.doc_frequency -= 1;
                    }
                    if entry.postings.is_empty() {
                        term_index.remove(term);
                    }
                }
            }
            if term_index.is_empty() {
                inv_shard.fields.remove(field);
            }
        }
        Ok(source)
    }

    /// Degenerates every document on the deletion list and clears it.
    /// Returns how many documents were purged.
    pub fn purge_deleted(&mut self) -> usize {
        let pending = self.deletions.take();
        let mut purged = 0;
        for (type_name, id) in pending {
            match self.degenerate(&type_name, &id) {
                Ok(_) => purged += 1,
                Err(e) => log::warn!("purge of [{type_name}/{id}] failed: {e}"),
            }
        }
        purged
    }

    /// Every live document of a type, in (shard, id) order.
    pub fn live_documents<'a>(&'a self, type_name: &'a str) -> impl Iterator<Item = (&'a str, &'a Value)> + 'a {
        self.docs
            .shards(type_name)
            .iter()
            .flat_map(|s| s.iter())
            .filter(move |(id, _)| !self.deletions.contains(type_name, id))
            .map(|(id, v)| (id.as_str(), v))
    }
}
