//! In-process emulation of a region-local key-value table and an object bucket.
//!
//! The table enforces the constraints the chunked protocol has to live with:
//! a per-item size limit, bounded transactional batches, conditional writes
//! and sort-key range queries within a partition. Every mutation is appended
//! to a write log, which doubles as the replication source.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::sync::{Arc, RwLock};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use bytes::Bytes;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::version::EntityVersion;

pub const DEFAULT_MAX_ITEM_SIZE: usize = 409_600;
pub const DEFAULT_MAX_TRANSACTION_ITEMS: usize = 100;
pub const DEFAULT_MAX_TRANSACTION_BYTES: usize = 4_194_304;

/// Serialized size charged for an integer attribute value.
const INT_VALUE_BYTES: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KvError {
    #[error("partition key and sort key must be non-empty")]
    EmptyKey,
    #[error("item of {size} bytes exceeds the {limit}-byte item limit")]
    ItemTooLarge { size: usize, limit: usize },
    #[error("condition failed on {key:?}")]
    ConditionFailed { key: ItemKey },
    #[error("transaction of {items} items / {bytes} bytes exceeds limits ({max_items} items / {max_bytes} bytes)")]
    BatchLimitExceeded {
        items: usize,
        bytes: usize,
        max_items: usize,
        max_bytes: usize,
    },
    #[error("transaction batch is empty")]
    EmptyBatch,
    #[error("transaction writes {0:?} more than once")]
    DuplicateKeyInBatch(ItemKey),
    #[error("condition names an empty attribute")]
    EmptyConditionAttribute,
    #[error("invalid store limits: {0}")]
    InvalidLimits(&'static str),
    #[error("object key must be non-empty")]
    EmptyObjectKey,
    #[error("object {0:?} not found")]
    ObjectNotFound(String),
    #[error("snapshot line {line}: {reason}")]
    Snapshot { line: usize, reason: String },
    #[error("snapshot io: {0}")]
    Io(String),
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ItemKey {
    partition_key: Vec<u8>,
    sort_key: Vec<u8>,
}

impl ItemKey {
    pub fn new(partition_key: impl Into<Vec<u8>>, sort_key: impl Into<Vec<u8>>) -> Result<Self, KvError> {
        let (partition_key, sort_key) = (partition_key.into(), sort_key.into());
        if partition_key.is_empty() || sort_key.is_empty() {
            return Err(KvError::EmptyKey);
        }
        Ok(Self {
            partition_key,
            sort_key,
        })
    }

    pub fn partition_key(&self) -> &[u8] {
        &self.partition_key
    }

    pub fn sort_key(&self) -> &[u8] {
        &self.sort_key
    }
}

impl std::fmt::Debug for ItemKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}|{}",
            String::from_utf8_lossy(&self.partition_key),
            String::from_utf8_lossy(&self.sort_key)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AttrValue {
    #[serde(rename = "S")]
    Str(String),
    #[serde(rename = "N")]
    Int(i64),
    #[serde(rename = "B", with = "b64_bytes")]
    Bytes(Bytes),
}

impl AttrValue {
    fn serialized_len(&self) -> usize {
        match self {
            AttrValue::Str(s) => s.len(),
            AttrValue::Int(_) => INT_VALUE_BYTES,
            AttrValue::Bytes(b) => b.len(),
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            AttrValue::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            AttrValue::Int(n) => Some(*n),
            _ => None,
        }
    }

    pub fn as_bytes(&self) -> Option<&Bytes> {
        match self {
            AttrValue::Bytes(b) => Some(b),
            _ => None,
        }
    }
}

impl From<&str> for AttrValue {
    fn from(s: &str) -> Self {
        AttrValue::Str(s.to_string())
    }
}

impl From<String> for AttrValue {
    fn from(s: String) -> Self {
        AttrValue::Str(s)
    }
}

impl From<i64> for AttrValue {
    fn from(n: i64) -> Self {
        AttrValue::Int(n)
    }
}

impl From<Bytes> for AttrValue {
    fn from(b: Bytes) -> Self {
        AttrValue::Bytes(b)
    }
}

/// One item: key plus a flat attribute map. The serialized size is the sum of
/// key bytes, attribute-name bytes and attribute-value bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredItem {
    key: ItemKey,
    attributes: BTreeMap<String, AttrValue>,
    serialized_size: usize,
}

impl StoredItem {
    pub fn new(key: ItemKey) -> Self {
        let serialized_size = key.partition_key.len() + key.sort_key.len();
        Self {
            key,
            attributes: BTreeMap::new(),
            serialized_size,
        }
    }

    pub fn with(mut self, name: &str, value: impl Into<AttrValue>) -> Self {
        self.set(name, value);
        self
    }

    pub fn set(&mut self, name: &str, value: impl Into<AttrValue>) {
        let value = value.into();
        self.serialized_size += name.len() + value.serialized_len();
        if let Some(old) = self.attributes.insert(name.to_string(), value) {
            self.serialized_size -= name.len() + old.serialized_len();
        }
    }

    pub fn key(&self) -> &ItemKey {
        &self.key
    }

    pub fn attributes(&self) -> &BTreeMap<String, AttrValue> {
        &self.attributes
    }

    pub fn get(&self, name: &str) -> Option<&AttrValue> {
        self.attributes.get(name)
    }

    pub fn get_str(&self, name: &str) -> Option<&str> {
        self.get(name).and_then(AttrValue::as_str)
    }

    pub fn get_int(&self, name: &str) -> Option<i64> {
        self.get(name).and_then(AttrValue::as_int)
    }

    pub fn get_bytes(&self, name: &str) -> Option<&Bytes> {
        self.get(name).and_then(AttrValue::as_bytes)
    }

    pub fn serialized_size(&self) -> usize {
        self.serialized_size
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreLimits {
    pub max_item_size: usize,
    pub max_transaction_items: usize,
    pub max_transaction_bytes: usize,
}

impl Default for StoreLimits {
    fn default() -> Self {
        Self {
            max_item_size: DEFAULT_MAX_ITEM_SIZE,
            max_transaction_items: DEFAULT_MAX_TRANSACTION_ITEMS,
            max_transaction_bytes: DEFAULT_MAX_TRANSACTION_BYTES,
        }
    }
}

impl StoreLimits {
    pub fn validate(&self) -> Result<(), KvError> {
        if self.max_item_size == 0 || self.max_transaction_items == 0 || self.max_transaction_bytes == 0 {
            return Err(KvError::InvalidLimits("all limits must be positive"));
        }
        if self.max_item_size > self.max_transaction_bytes {
            return Err(KvError::InvalidLimits("max_item_size exceeds max_transaction_bytes"));
        }
        Ok(())
    }

    /// Whether `items` items totalling `bytes` fit one transaction.
    pub fn fits_transaction(&self, items: usize, bytes: usize) -> bool {
        items <= self.max_transaction_items && bytes <= self.max_transaction_bytes
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Condition {
    #[default]
    None,
    AttributeAbsent(String),
    AttributeEquals(String, AttrValue),
}

impl Condition {
    pub fn absent(name: &str) -> Self {
        Condition::AttributeAbsent(name.to_string())
    }

    pub fn equals(name: &str, value: impl Into<AttrValue>) -> Self {
        Condition::AttributeEquals(name.to_string(), value.into())
    }

    fn validate(&self) -> Result<(), KvError> {
        match self {
            Condition::AttributeAbsent(n) | Condition::AttributeEquals(n, _) if n.is_empty() => {
                Err(KvError::EmptyConditionAttribute)
            }
            _ => Ok(()),
        }
    }

    fn holds(&self, existing: Option<&StoredItem>) -> bool {
        match self {
            Condition::None => true,
            Condition::AttributeAbsent(n) => existing.and_then(|i| i.get(n)).is_none(),
            Condition::AttributeEquals(n, v) => existing.and_then(|i| i.get(n)) == Some(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Mutation {
    Put(Arc<StoredItem>),
    Delete(ItemKey),
}

impl Mutation {
    pub fn key(&self) -> &ItemKey {
        match self {
            Mutation::Put(item) => item.key(),
            Mutation::Delete(key) => key,
        }
    }
}

/// One write-log record. `txn` is the sequence number of the first entry of
/// the transaction this entry was applied in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEntry {
    pub seq: u64,
    pub txn: u64,
    pub mutation: Mutation,
}

/// Inclusive range of log sequence numbers written by one call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LogRange {
    pub first: u64,
    pub last: u64,
}

impl LogRange {
    pub fn len(&self) -> u64 {
        self.last - self.first + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Default)]
struct Tables {
    items: BTreeMap<ItemKey, Arc<StoredItem>>,
    log: Vec<LogEntry>,
}

impl Tables {
    fn next_seq(&self) -> u64 {
        self.log.len() as u64 + 1
    }

    fn apply(&mut self, txn: u64, mutation: Mutation) -> u64 {
        let seq = self.next_seq();
        match &mutation {
            Mutation::Put(item) => {
                self.items.insert(item.key().clone(), Arc::clone(item));
            }
            Mutation::Delete(key) => {
                self.items.remove(key);
            }
        }
        self.log.push(LogEntry { seq, txn, mutation });
        seq
    }
}

/// A region-local table. All operations take one lock, so they are
/// linearizable and a query never observes part of a transaction.
#[derive(Debug)]
pub struct RegionStore {
    region_id: String,
    limits: StoreLimits,
    tables: RwLock<Tables>,
}

impl RegionStore {
    pub fn new(region_id: impl Into<String>, limits: StoreLimits) -> Result<Self, KvError> {
        limits.validate()?;
        Ok(Self {
            region_id: region_id.into(),
            limits,
            tables: RwLock::new(Tables::default()),
        })
    }

    pub fn with_defaults(region_id: impl Into<String>) -> Self {
        Self::new(region_id, StoreLimits::default()).expect("default limits are valid")
    }

    pub fn region_id(&self) -> &str {
        &self.region_id
    }

    pub fn limits(&self) -> &StoreLimits {
        &self.limits
    }

    fn check_size(&self, item: &StoredItem) -> Result<(), KvError> {
        if item.serialized_size() > self.limits.max_item_size {
            return Err(KvError::ItemTooLarge {
                size: item.serialized_size(),
                limit: self.limits.max_item_size,
            });
        }
        Ok(())
    }

    pub fn put_item(&self, item: StoredItem, condition: &Condition) -> Result<u64, KvError> {
        self.check_size(&item)?;
        condition.validate()?;
        let mut t = self.tables.write().expect("store lock poisoned");
        if !condition.holds(t.items.get(item.key()).map(Arc::as_ref)) {
            return Err(KvError::ConditionFailed {
                key: item.key().clone(),
            });
        }
        let txn = t.next_seq();
        Ok(t.apply(txn, Mutation::Put(Arc::new(item))))
    }

    /// All-or-nothing batch write; entries land contiguously in the log.
    pub fn transact_write(&self, batch: Vec<(StoredItem, Condition)>) -> Result<LogRange, KvError> {
        if batch.is_empty() {
            return Err(KvError::EmptyBatch);
        }
        let bytes: usize = batch.iter().map(|(i, _)| i.serialized_size()).sum();
        if !self.limits.fits_transaction(batch.len(), bytes) {
            return Err(KvError::BatchLimitExceeded {
                items: batch.len(),
                bytes,
                max_items: self.limits.max_transaction_items,
                max_bytes: self.limits.max_transaction_bytes,
            });
        }
        let mut seen = std::collections::BTreeSet::new();
        for (item, condition) in &batch {
            self.check_size(item)?;
            condition.validate()?;
            if !seen.insert(item.key()) {
                return Err(KvError::DuplicateKeyInBatch(item.key().clone()));
            }
        }

        let mut t = self.tables.write().expect("store lock poisoned");
        for (item, condition) in &batch {
            if !condition.holds(t.items.get(item.key()).map(Arc::as_ref)) {
                return Err(KvError::ConditionFailed {
                    key: item.key().clone(),
                });
            }
        }
        let first = t.next_seq();
        let mut last = first;
        for (item, _) in batch {
            last = t.apply(first, Mutation::Put(Arc::new(item)));
        }
        Ok(LogRange { first, last })
    }

    /// Items of one partition in ascending bytewise sort-key order, optionally
    /// restricted to a sort-key prefix.
    pub fn query_partition(&self, partition_key: &[u8], sort_key_prefix: Option<&[u8]>) -> Vec<Arc<StoredItem>> {
        let t = self.tables.read().expect("store lock poisoned");
        let prefix = sort_key_prefix.unwrap_or(&[]);
        let start = ItemKey {
            partition_key: partition_key.to_vec(),
            sort_key: prefix.to_vec(),
        };
        t.items
            .range(start..)
            .take_while(|(k, _)| k.partition_key == partition_key && k.sort_key.starts_with(prefix))
            .map(|(_, v)| Arc::clone(v))
            .collect()
    }

    pub fn get_item(&self, key: &ItemKey) -> Option<Arc<StoredItem>> {
        self.tables.read().expect("store lock poisoned").items.get(key).cloned()
    }

    /// Idempotent; deleting an absent key still appends a log record.
    pub fn delete_item(&self, key: &ItemKey) -> u64 {
        let mut t = self.tables.write().expect("store lock poisoned");
        let txn = t.next_seq();
        t.apply(txn, Mutation::Delete(key.clone()))
    }

    /// Applies mutations received from another region as one local
    /// transaction. `accept` decides, per put, whether the incoming item
    /// replaces the current one; deletes are applied unconditionally.
    pub fn apply_replicated<E>(
        &self,
        mutations: &[Mutation],
        mut accept: impl FnMut(Option<&StoredItem>, &StoredItem) -> Result<bool, E>,
    ) -> Result<usize, E> {
        let mut t = self.tables.write().expect("store lock poisoned");
        let mut accepted = Vec::with_capacity(mutations.len());
        for m in mutations {
            match m {
                Mutation::Put(item) => {
                    if accept(t.items.get(item.key()).map(Arc::as_ref), item)? {
                        accepted.push(m.clone());
                    }
                }
                Mutation::Delete(_) => accepted.push(m.clone()),
            }
        }
        let n = accepted.len();
        let txn = t.next_seq();
        for m in accepted {
            t.apply(txn, m);
        }
        Ok(n)
    }

    pub fn last_seq(&self) -> u64 {
        self.tables.read().expect("store lock poisoned").log.len() as u64
    }

    /// Log entries with `seq > after`.
    pub fn log_since(&self, after: u64) -> Vec<LogEntry> {
        let t = self.tables.read().expect("store lock poisoned");
        let start = (after as usize).min(t.log.len());
        t.log[start..].to_vec()
    }

    pub fn item_count(&self) -> usize {
        self.tables.read().expect("store lock poisoned").items.len()
    }

    /// Current items in key order.
    pub fn items(&self) -> Vec<Arc<StoredItem>> {
        self.tables
            .read()
            .expect("store lock poisoned")
            .items
            .values()
            .cloned()
            .collect()
    }

    /// Rebuilds the item map by replaying the write log from empty.
    pub fn replay_log(&self) -> BTreeMap<ItemKey, Arc<StoredItem>> {
        let t = self.tables.read().expect("store lock poisoned");
        let mut items = BTreeMap::new();
        for e in &t.log {
            match &e.mutation {
                Mutation::Put(item) => {
                    items.insert(item.key().clone(), Arc::clone(item));
                }
                Mutation::Delete(key) => {
                    items.remove(key);
                }
            }
        }
        items
    }

    /// Writes one JSON record per log entry.
    pub fn dump_snapshot(&self, mut out: impl Write) -> Result<(), KvError> {
        let t = self.tables.read().expect("store lock poisoned");
        for e in &t.log {
            let record = SnapshotRecord::from_entry(e);
            let line = serde_json::to_string(&record).map_err(|e| KvError::Io(e.to_string()))?;
            writeln!(out, "{line}").map_err(|e| KvError::Io(e.to_string()))?;
        }
        Ok(())
    }

    pub fn snapshot_string(&self) -> String {
        let mut buf = Vec::new();
        self.dump_snapshot(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("snapshot is utf-8")
    }

    /// Rebuilds a store by replaying a snapshot. Sequence numbers must start
    /// at 1 and be gapless; item limits are enforced on replay.
    pub fn load_snapshot(
        region_id: impl Into<String>,
        limits: StoreLimits,
        input: impl BufRead,
    ) -> Result<Self, KvError> {
        let store = Self::new(region_id, limits)?;
        {
            let mut t = store.tables.write().expect("store lock poisoned");
            for (i, line) in input.lines().enumerate() {
                let lineno = i + 1;
                let bad = |reason: String| KvError::Snapshot { line: lineno, reason };
                let line = line.map_err(|e| KvError::Io(e.to_string()))?;
                let record: SnapshotRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
                let expected = t.next_seq();
                if record.seq != expected {
                    return Err(bad(format!("expected seq {expected}, found {}", record.seq)));
                }
                // A transaction either starts at this entry or continues the previous one.
                let continues = t.log.last().is_some_and(|prev| prev.txn == record.txn);
                if record.txn != record.seq && !continues {
                    return Err(bad(format!("txn {} does not group contiguously", record.txn)));
                }
                let txn = record.txn;
                let mutation = record.into_mutation().map_err(bad)?;
                if let Mutation::Put(item) = &mutation {
                    store.check_size(item).map_err(|e| bad(e.to_string()))?;
                }
                t.apply(txn, mutation);
            }
        }
        Ok(store)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SnapshotRecord {
    seq: u64,
    txn: u64,
    op: SnapshotOp,
    #[serde(with = "b64_vec")]
    pk: Vec<u8>,
    #[serde(with = "b64_vec")]
    sk: Vec<u8>,
    attributes: BTreeMap<String, AttrValue>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum SnapshotOp {
    Put,
    Delete,
}

impl SnapshotRecord {
    fn from_entry(e: &LogEntry) -> Self {
        let (op, key, attributes) = match &e.mutation {
            Mutation::Put(item) => (SnapshotOp::Put, item.key(), item.attributes().clone()),
            Mutation::Delete(key) => (SnapshotOp::Delete, key, BTreeMap::new()),
        };
        Self {
            seq: e.seq,
            txn: e.txn,
            op,
            pk: key.partition_key.clone(),
            sk: key.sort_key.clone(),
            attributes,
        }
    }

    fn into_mutation(self) -> Result<Mutation, String> {
        let key = ItemKey::new(self.pk, self.sk).map_err(|e| e.to_string())?;
        match self.op {
            SnapshotOp::Delete if !self.attributes.is_empty() => Err("delete record carries attributes".into()),
            SnapshotOp::Delete => Ok(Mutation::Delete(key)),
            SnapshotOp::Put => {
                let mut item = StoredItem::new(key);
                for (name, value) in self.attributes {
                    item.set(&name, value);
                }
                Ok(Mutation::Put(Arc::new(item)))
            }
        }
    }
}

mod b64_vec {
    use super::*;

    pub fn serialize<S: serde::Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&B64.encode(v))
    }

    pub fn deserialize<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        B64.decode(text).map_err(serde::de::Error::custom)
    }
}

mod b64_bytes {
    use super::*;

    pub fn serialize<S: serde::Serializer>(v: &Bytes, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&B64.encode(v))
    }

    pub fn deserialize<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Bytes, D::Error> {
        let text = String::deserialize(d)?;
        B64.decode(text).map(Bytes::from).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredObject {
    pub payload: Bytes,
    pub stamp: EntityVersion,
}

/// Region-local object bucket: unbounded object size, no transactions,
/// last-writer-wins by stamp.
#[derive(Debug)]
pub struct ObjectStoreModel {
    region_id: String,
    objects: RwLock<HashMap<Vec<u8>, StoredObject>>,
}

impl ObjectStoreModel {
    pub fn new(region_id: impl Into<String>) -> Self {
        Self {
            region_id: region_id.into(),
            objects: RwLock::new(HashMap::new()),
        }
    }

    pub fn region_id(&self) -> &str {
        &self.region_id
    }

    /// Returns whether the put took effect (false when a newer stamp is held).
    pub fn object_put(&self, key: &[u8], payload: Bytes, stamp: EntityVersion) -> Result<bool, KvError> {
        if key.is_empty() {
            return Err(KvError::EmptyObjectKey);
        }
        let mut objects = self.objects.write().expect("bucket lock poisoned");
        match objects.get(key) {
            Some(existing) if existing.stamp >= stamp => Ok(false),
            _ => {
                objects.insert(key.to_vec(), StoredObject { payload, stamp });
                Ok(true)
            }
        }
    }

    pub fn object_get(&self, key: &[u8]) -> Result<StoredObject, KvError> {
        if key.is_empty() {
            return Err(KvError::EmptyObjectKey);
        }
        self.objects
            .read()
            .expect("bucket lock poisoned")
            .get(key)
            .cloned()
            .ok_or_else(|| KvError::ObjectNotFound(String::from_utf8_lossy(key).into_owned()))
    }

    pub fn len(&self) -> usize {
        self.objects.read().expect("bucket lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All objects sorted by key.
    pub fn entries(&self) -> Vec<(Vec<u8>, StoredObject)> {
        let mut all: Vec<_> = self
            .objects
            .read()
            .expect("bucket lock poisoned")
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        all.sort_by(|a, b| a.0.cmp(&b.0));
        all
    }
}
