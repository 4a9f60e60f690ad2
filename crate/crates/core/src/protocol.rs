//! The chunked-object write and read protocol.
//!
//! An entity lives in one partition: a metadata record (the commit barrier)
//! and its ordered chunk records, all keyed under a version prefix. A write
//! that fits the store's transaction limits commits everything in one
//! transaction. Larger writes fall back to two phases: chunks plus a `WRITING`
//! metadata record first, then a conditional flip to `COMMITTED`. Readers only
//! ever serve `COMMITTED` versions and fall back to older ones when the newest
//! fails validation.

use std::collections::BTreeMap;
use std::sync::Arc;

use bytes::Bytes;
use thiserror::Error;

use crate::codec::{
    self, compute_digest, encode_chunk_sort_key, encode_meta_sort_key, parse_sort_key, split_payload, ChecksumKind,
    ChunkSlice, ChunkingConfig, CodecError, PayloadDigest, SortKey, VERSION_PREFIX,
};
use crate::kv::{Condition, ItemKey, KvError, RegionStore, StoreLimits, StoredItem};
use crate::version::{EntityVersion, VersionError, VersionGenerator};

pub const ATTR_VER: &str = "Ver";
pub const ATTR_COUNT: &str = "Count";
pub const ATTR_BYTES: &str = "Bytes";
pub const ATTR_DIGEST: &str = "Digest";
pub const ATTR_DIGEST_KIND: &str = "DigestKind";
pub const ATTR_STATUS: &str = "Status";
pub const ATTR_REGION: &str = "Region";
pub const ATTR_DATA: &str = "Data";
pub const ATTR_CHUNK_DIGEST: &str = "ChunkDigest";

pub const DEFAULT_MAX_FALLBACK: usize = 2;
/// Attempts made by [`write_entity_retrying`] before surfacing a conflict.
pub const MAX_WRITE_ATTEMPTS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("entity of {size} bytes exceeds the {limit}-byte cap")]
    EntityTooLarge { size: usize, limit: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Version(#[from] VersionError),
    #[error(transparent)]
    Store(KvError),
    #[error("version {0} already written")]
    VersionConflict(EntityVersion),
    #[error("metadata for version {0} is no longer WRITING; commit aborted")]
    CommitConflict(EntityVersion),
    #[error("injected crash after {acks} acknowledged writes")]
    InjectedCrash { acks: usize },
    #[error("entity not found")]
    EntityNotFound,
    #[error("entity corrupt: {tried} committed version(s) failed validation, last error: {last}")]
    EntityCorrupt { tried: usize, last: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl From<KvError> for ProtocolError {
    fn from(e: KvError) -> Self {
        match e {
            KvError::ItemTooLarge { size, limit } => ProtocolError::Config(format!(
                "chunk item of {size} bytes exceeds the {limit}-byte item limit; lower max_chunk_bytes"
            )),
            other => ProtocolError::Store(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CommitStatus {
    Writing,
    Committed,
}

impl CommitStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CommitStatus::Writing => "WRITING",
            CommitStatus::Committed => "COMMITTED",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        match text {
            "WRITING" => Some(CommitStatus::Writing),
            "COMMITTED" => Some(CommitStatus::Committed),
            _ => None,
        }
    }
}

/// Why a stored record could not be decoded.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed record {key:?}: {reason}")]
pub struct MalformedRecord {
    pub key: ItemKey,
    pub reason: String,
}

fn malformed(item: &StoredItem, reason: impl Into<String>) -> MalformedRecord {
    MalformedRecord {
        key: item.key().clone(),
        reason: reason.into(),
    }
}

fn read_digest(item: &StoredItem, value_attr: &str) -> Result<PayloadDigest, MalformedRecord> {
    let kind = item
        .get_str(ATTR_DIGEST_KIND)
        .ok_or_else(|| malformed(item, "missing DigestKind"))?;
    let kind = ChecksumKind::from_name(kind).map_err(|e| malformed(item, e.to_string()))?;
    let value = item
        .get_bytes(value_attr)
        .ok_or_else(|| malformed(item, format!("missing {value_attr}")))?;
    PayloadDigest::new(kind, value.to_vec()).map_err(|e| malformed(item, e.to_string()))
}

fn read_version(item: &StoredItem) -> Result<EntityVersion, MalformedRecord> {
    let text = item.get_str(ATTR_VER).ok_or_else(|| malformed(item, "missing Ver"))?;
    EntityVersion::parse_sortable(text).map_err(|e| malformed(item, e.to_string()))
}

fn non_negative(item: &StoredItem, attr: &str) -> Result<u64, MalformedRecord> {
    let n = item
        .get_int(attr)
        .ok_or_else(|| malformed(item, format!("missing {attr}")))?;
    u64::try_from(n).map_err(|_| malformed(item, format!("negative {attr}")))
}

/// The commit-barrier record of one entity version.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityMetadata {
    pub entity_id: Vec<u8>,
    pub version: EntityVersion,
    pub chunk_count: u32,
    pub total_bytes: u64,
    pub digest: PayloadDigest,
    pub status: CommitStatus,
    pub writer_region: String,
}

impl EntityMetadata {
    pub fn key(&self) -> Result<ItemKey, KvError> {
        ItemKey::new(self.entity_id.clone(), encode_meta_sort_key(&self.version))
    }

    pub fn to_item(&self) -> Result<StoredItem, KvError> {
        Ok(StoredItem::new(self.key()?)
            .with(ATTR_VER, self.version.sortable())
            .with(ATTR_COUNT, self.chunk_count as i64)
            .with(ATTR_BYTES, self.total_bytes as i64)
            .with(ATTR_DIGEST, Bytes::from(self.digest.value().to_vec()))
            .with(ATTR_DIGEST_KIND, self.digest.kind().name())
            .with(ATTR_STATUS, self.status.as_str())
            .with(ATTR_REGION, self.writer_region.as_str()))
    }

    pub fn from_item(item: &StoredItem) -> Result<Self, MalformedRecord> {
        let version = read_version(item)?;
        if parse_sort_key(item.key().sort_key()) != Ok(SortKey::Meta { version }) {
            return Err(malformed(item, "sort key does not match Ver"));
        }
        let chunk_count = non_negative(item, ATTR_COUNT)?;
        let chunk_count = u32::try_from(chunk_count).map_err(|_| malformed(item, "Count out of range"))?;
        let total_bytes = non_negative(item, ATTR_BYTES)?;
        if (chunk_count == 0) != (total_bytes == 0) {
            return Err(malformed(item, "Count and Bytes disagree on emptiness"));
        }
        let status = item
            .get_str(ATTR_STATUS)
            .and_then(CommitStatus::parse)
            .ok_or_else(|| malformed(item, "missing or unknown Status"))?;
        Ok(Self {
            entity_id: item.key().partition_key().to_vec(),
            version,
            chunk_count,
            total_bytes,
            digest: read_digest(item, ATTR_DIGEST)?,
            status,
            writer_region: item.get_str(ATTR_REGION).unwrap_or_default().to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkRecord {
    pub entity_id: Vec<u8>,
    pub version: EntityVersion,
    pub index: u32,
    pub data: Bytes,
    pub chunk_digest: Option<PayloadDigest>,
}

impl ChunkRecord {
    pub fn to_item(&self) -> Result<StoredItem, ProtocolError> {
        let sort_key = encode_chunk_sort_key(&self.version, self.index as u64)
            .map_err(|e| ProtocolError::Config(e.to_string()))?;
        let mut item = StoredItem::new(ItemKey::new(self.entity_id.clone(), sort_key)?)
            .with(ATTR_VER, self.version.sortable())
            .with(ATTR_DATA, self.data.clone());
        if let Some(d) = &self.chunk_digest {
            item.set(ATTR_CHUNK_DIGEST, Bytes::from(d.value().to_vec()));
            item.set(ATTR_DIGEST_KIND, d.kind().name());
        }
        Ok(item)
    }

    pub fn from_item(item: &StoredItem) -> Result<Self, MalformedRecord> {
        let version = read_version(item)?;
        let index = match parse_sort_key(item.key().sort_key()) {
            Ok(SortKey::Chunk { version: v, index }) if v == version => index,
            _ => return Err(malformed(item, "sort key does not match Ver")),
        };
        let data = item
            .get_bytes(ATTR_DATA)
            .cloned()
            .ok_or_else(|| malformed(item, "missing Data"))?;
        let chunk_digest = match item.get(ATTR_CHUNK_DIGEST) {
            Some(_) => Some(read_digest(item, ATTR_CHUNK_DIGEST)?),
            None => None,
        };
        Ok(Self {
            entity_id: item.key().partition_key().to_vec(),
            version,
            index,
            data,
            chunk_digest,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PathTaken {
    Transactional,
    TwoPhase,
    /// Payload in an object bucket, pointer record in the table.
    Pointer,
}

impl PathTaken {
    pub fn as_str(self) -> &'static str {
        match self {
            PathTaken::Transactional => "transactional",
            PathTaken::TwoPhase => "two_phase",
            PathTaken::Pointer => "pointer",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WriteReceipt {
    pub version: EntityVersion,
    pub chunk_count: u32,
    pub path_taken: PathTaken,
    pub bytes_written: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReadResult {
    pub payload: Bytes,
    pub version: EntityVersion,
    /// 0 when the newest committed version was served.
    pub fallback_depth: usize,
}

/// Called after every acknowledged store write with the running ack count.
/// Returning `true` simulates a crash at that point.
pub trait FaultHook {
    fn crash_after(&mut self, acks: usize) -> bool;
}

impl<F: FnMut(usize) -> bool> FaultHook for F {
    fn crash_after(&mut self, acks: usize) -> bool {
        self(acks)
    }
}

pub struct NoFaults;

impl FaultHook for NoFaults {
    fn crash_after(&mut self, _acks: usize) -> bool {
        false
    }
}

/// Crashes once `n` writes have been acknowledged.
pub struct CrashAfter(pub usize);

impl FaultHook for CrashAfter {
    fn crash_after(&mut self, acks: usize) -> bool {
        acks >= self.0
    }
}

/// One store call of a write.
#[derive(Debug, Clone)]
pub enum WriteStep {
    Transact(Vec<(StoredItem, Condition)>),
    /// Conditional flip of the metadata record from WRITING to COMMITTED.
    Commit(StoredItem),
}

/// A fully prepared entity write: the records plus the ordered store calls
/// that persist them.
#[derive(Debug, Clone)]
pub struct WritePlan {
    metadata: EntityMetadata,
    chunks: Vec<ChunkRecord>,
    path: PathTaken,
    steps: Vec<WriteStep>,
}

/// A payload split and hashed once, writable under any number of versions
/// and entity ids.
#[derive(Debug, Clone)]
pub struct PreparedPayload {
    payload: Bytes,
    config: ChunkingConfig,
    slices: Vec<ChunkSlice>,
    chunk_digests: Vec<Option<PayloadDigest>>,
    digest: PayloadDigest,
}

impl PreparedPayload {
    pub fn new(payload: Bytes, config: &ChunkingConfig) -> Result<Self, ProtocolError> {
        if config.max_chunk_bytes == 0 {
            return Err(ProtocolError::Config("max_chunk_bytes must be positive".into()));
        }
        if payload.len() > config.max_entity_bytes {
            return Err(ProtocolError::EntityTooLarge {
                size: payload.len(),
                limit: config.max_entity_bytes,
            });
        }
        let slices = split_payload(&payload, config);
        if slices.len() > codec::MAX_CHUNK_INDEX as usize + 1 {
            return Err(ProtocolError::Config(format!(
                "{} chunks exceed the per-entity maximum",
                slices.len()
            )));
        }
        let chunk_digests = slices
            .iter()
            .map(|s| {
                config
                    .verify_chunk_digests
                    .then(|| compute_digest(&s.data, config.checksum_kind))
            })
            .collect();
        Ok(Self {
            digest: compute_digest(&payload, config.checksum_kind),
            payload,
            config: *config,
            slices,
            chunk_digests,
        })
    }

    pub fn payload(&self) -> &Bytes {
        &self.payload
    }

    pub fn digest(&self) -> &PayloadDigest {
        &self.digest
    }

    pub fn config(&self) -> &ChunkingConfig {
        &self.config
    }
}

impl WritePlan {
    pub fn new(
        limits: &StoreLimits,
        region: &str,
        entity_id: &[u8],
        payload: Bytes,
        config: &ChunkingConfig,
        version: EntityVersion,
    ) -> Result<Self, ProtocolError> {
        if entity_id.is_empty() {
            return Err(ProtocolError::InvalidArgument("entity id must be non-empty".into()));
        }
        Self::from_prepared(
            limits,
            region,
            entity_id,
            &PreparedPayload::new(payload, config)?,
            version,
        )
    }

    pub fn from_prepared(
        limits: &StoreLimits,
        region: &str,
        entity_id: &[u8],
        prepared: &PreparedPayload,
        version: EntityVersion,
    ) -> Result<Self, ProtocolError> {
        if entity_id.is_empty() {
            return Err(ProtocolError::InvalidArgument("entity id must be non-empty".into()));
        }
        let chunks: Vec<ChunkRecord> = prepared
            .slices
            .iter()
            .zip(&prepared.chunk_digests)
            .map(|(s, d)| ChunkRecord {
                entity_id: entity_id.to_vec(),
                version,
                index: s.index,
                chunk_digest: d.clone(),
                data: s.data.clone(),
            })
            .collect();
        let metadata = EntityMetadata {
            entity_id: entity_id.to_vec(),
            version,
            chunk_count: chunks.len() as u32,
            total_bytes: prepared.payload.len() as u64,
            digest: prepared.digest.clone(),
            status: CommitStatus::Committed,
            writer_region: region.to_string(),
        };

        let chunk_items = chunks.iter().map(ChunkRecord::to_item).collect::<Result<Vec<_>, _>>()?;
        if let Some(big) = chunk_items.iter().find(|i| i.serialized_size() > limits.max_item_size) {
            return Err(ProtocolError::Config(format!(
                "chunk item of {} bytes exceeds the {}-byte item limit; lower max_chunk_bytes",
                big.serialized_size(),
                limits.max_item_size
            )));
        }
        let meta_item = metadata.to_item()?;
        let batch_bytes =
            meta_item.serialized_size() + chunk_items.iter().map(StoredItem::serialized_size).sum::<usize>();

        let (path, steps) = if limits.fits_transaction(chunk_items.len() + 1, batch_bytes) {
            let mut batch: Vec<_> = chunk_items
                .into_iter()
                .map(|i| (i, Condition::absent(ATTR_VER)))
                .collect();
            batch.push((meta_item, Condition::absent(ATTR_VER)));
            (PathTaken::Transactional, vec![WriteStep::Transact(batch)])
        } else {
            (PathTaken::TwoPhase, two_phase_steps(limits, chunk_items, &metadata)?)
        };
        Ok(Self {
            metadata,
            chunks,
            path,
            steps,
        })
    }

    pub fn metadata(&self) -> &EntityMetadata {
        &self.metadata
    }

    pub fn chunks(&self) -> &[ChunkRecord] {
        &self.chunks
    }

    pub fn path(&self) -> PathTaken {
        self.path
    }

    pub fn steps(&self) -> &[WriteStep] {
        &self.steps
    }

    /// Performs step `i` against `store`.
    pub fn apply_step(&self, store: &RegionStore, i: usize) -> Result<(), ProtocolError> {
        apply_step(store, &self.steps[i], &self.metadata)
    }

    pub fn execute(&self, store: &RegionStore, hook: &mut dyn FaultHook) -> Result<WriteReceipt, ProtocolError> {
        for (i, step) in self.steps.iter().enumerate() {
            apply_step(store, step, &self.metadata)?;
            if hook.crash_after(i + 1) {
                return Err(ProtocolError::InjectedCrash { acks: i + 1 });
            }
        }
        Ok(self.receipt())
    }

    pub fn receipt(&self) -> WriteReceipt {
        WriteReceipt {
            version: self.metadata.version,
            chunk_count: self.metadata.chunk_count,
            path_taken: self.path,
            bytes_written: self.metadata.total_bytes,
        }
    }
}

fn apply_step(store: &RegionStore, step: &WriteStep, metadata: &EntityMetadata) -> Result<(), ProtocolError> {
    let conflict = |e: KvError, on_condition: ProtocolError| match e {
        KvError::ConditionFailed { .. } => on_condition,
        other => other.into(),
    };
    match step {
        WriteStep::Transact(batch) => store
            .transact_write(batch.clone())
            .map(|_| ())
            .map_err(|e| conflict(e, ProtocolError::VersionConflict(metadata.version))),
        WriteStep::Commit(item) => store
            .put_item(
                item.clone(),
                &Condition::equals(ATTR_STATUS, CommitStatus::Writing.as_str()),
            )
            .map(|_| ())
            .map_err(|e| conflict(e, ProtocolError::CommitConflict(metadata.version))),
    }
}

/// Phase 1: the WRITING metadata record followed by every chunk, packed
/// greedily into batches under the transaction limits. Phase 2: the commit.
fn two_phase_steps(
    limits: &StoreLimits,
    chunk_items: Vec<StoredItem>,
    metadata: &EntityMetadata,
) -> Result<Vec<WriteStep>, ProtocolError> {
    let writing = EntityMetadata {
        status: CommitStatus::Writing,
        ..metadata.clone()
    };
    let committed = EntityMetadata {
        status: CommitStatus::Committed,
        ..metadata.clone()
    };

    let mut steps = Vec::new();
    let mut batch: Vec<(StoredItem, Condition)> = Vec::new();
    let mut batch_bytes = 0usize;
    for item in std::iter::once(writing.to_item()?).chain(chunk_items) {
        let size = item.serialized_size();
        if !batch.is_empty() && !limits.fits_transaction(batch.len() + 1, batch_bytes + size) {
            steps.push(WriteStep::Transact(std::mem::take(&mut batch)));
            batch_bytes = 0;
        }
        batch.push((item, Condition::absent(ATTR_VER)));
        batch_bytes += size;
    }
    if !batch.is_empty() {
        steps.push(WriteStep::Transact(batch));
    }
    steps.push(WriteStep::Commit(committed.to_item()?));
    Ok(steps)
}

/// Persists one entity version, choosing the transactional path when the
/// whole batch fits the store's transaction limits.
pub fn write_entity(
    store: &RegionStore,
    entity_id: &[u8],
    payload: Bytes,
    config: &ChunkingConfig,
    version: EntityVersion,
) -> Result<WriteReceipt, ProtocolError> {
    write_entity_with_hook(store, entity_id, payload, config, version, &mut NoFaults)
}

pub fn write_entity_with_hook(
    store: &RegionStore,
    entity_id: &[u8],
    payload: Bytes,
    config: &ChunkingConfig,
    version: EntityVersion,
    hook: &mut dyn FaultHook,
) -> Result<WriteReceipt, ProtocolError> {
    WritePlan::new(store.limits(), store.region_id(), entity_id, payload, config, version)?.execute(store, hook)
}

/// As [`write_entity`], reusing the split and digests of `prepared`.
pub fn write_prepared(
    store: &RegionStore,
    entity_id: &[u8],
    prepared: &PreparedPayload,
    version: EntityVersion,
) -> Result<WriteReceipt, ProtocolError> {
    WritePlan::from_prepared(store.limits(), store.region_id(), entity_id, prepared, version)?
        .execute(store, &mut NoFaults)
}

/// Writes already-prepared chunk records and metadata through the two-phase
/// path regardless of size.
pub fn two_phase_write(
    store: &RegionStore,
    chunks: &[ChunkRecord],
    metadata: &EntityMetadata,
    hook: &mut dyn FaultHook,
) -> Result<WriteReceipt, ProtocolError> {
    let chunk_items = chunks.iter().map(ChunkRecord::to_item).collect::<Result<Vec<_>, _>>()?;
    let plan = WritePlan {
        metadata: metadata.clone(),
        chunks: chunks.to_vec(),
        path: PathTaken::TwoPhase,
        steps: two_phase_steps(store.limits(), chunk_items, metadata)?,
    };
    plan.execute(store, hook)
}

/// Retries with a fresh version when the chosen version is already taken.
pub fn write_entity_retrying(
    store: &RegionStore,
    entity_id: &[u8],
    payload: Bytes,
    config: &ChunkingConfig,
    versions: &VersionGenerator,
) -> Result<WriteReceipt, ProtocolError> {
    let mut last_err = None;
    for _ in 0..MAX_WRITE_ATTEMPTS {
        let version = versions.next_version()?;
        match write_entity(store, entity_id, payload.clone(), config, version) {
            Err(e @ ProtocolError::VersionConflict(_)) => {
                if let Some(newest) = newest_version(store, entity_id) {
                    versions.observe(&newest);
                }
                last_err = Some(e);
            }
            other => return other,
        }
    }
    Err(last_err.expect("at least one attempt was made"))
}

/// Records of one version found in a partition.
#[derive(Debug, Default, Clone)]
pub struct VersionRecords {
    pub metadata: Option<Result<EntityMetadata, MalformedRecord>>,
    pub chunks: Vec<Result<ChunkRecord, MalformedRecord>>,
    pub item_keys: Vec<ItemKey>,
}

impl VersionRecords {
    pub fn status(&self) -> Option<CommitStatus> {
        match &self.metadata {
            Some(Ok(m)) => Some(m.status),
            _ => None,
        }
    }

    fn validate(&self) -> Result<(EntityMetadata, Bytes), String> {
        let meta = match &self.metadata {
            Some(Ok(m)) => m,
            Some(Err(e)) => return Err(e.to_string()),
            None => return Err("missing metadata".into()),
        };
        let mut slices = Vec::with_capacity(self.chunks.len());
        // Verified per-chunk CRC-32C values determine the whole-payload
        // CRC-32C, which saves a second pass over the payload.
        let mut chunk_crcs = Some(Vec::with_capacity(self.chunks.len()));
        for chunk in &self.chunks {
            let chunk = chunk.as_ref().map_err(|e| e.to_string())?;
            match &chunk.chunk_digest {
                Some(expected) => {
                    let actual = compute_digest(&chunk.data, expected.kind());
                    if actual != *expected {
                        return Err(format!("chunk {}: {}", chunk.index, CodecError::DigestMismatch));
                    }
                    match (expected.kind(), &mut chunk_crcs) {
                        (ChecksumKind::Crc32c, Some(crcs)) => {
                            let crc = u32::from_be_bytes(actual.value().try_into().expect("crc32c is 4 bytes"));
                            crcs.push((crc, chunk.data.len()));
                        }
                        _ => chunk_crcs = None,
                    }
                }
                None => chunk_crcs = None,
            }
            slices.push(ChunkSlice {
                index: chunk.index,
                data: chunk.data.clone(),
            });
        }
        let payload = match chunk_crcs {
            Some(crcs) if meta.digest.kind() == ChecksumKind::Crc32c => {
                let payload = codec::assemble(meta, &slices).map_err(|e| e.to_string())?;
                if codec::combine_crc32c(crcs).to_be_bytes() != meta.digest.value() {
                    return Err(CodecError::DigestMismatch.to_string());
                }
                payload
            }
            _ => codec::reassemble(meta, &slices).map_err(|e| e.to_string())?,
        };
        Ok((meta.clone(), payload))
    }
}

/// Groups the versioned records of a partition, newest version last.
pub fn group_versions(items: &[Arc<StoredItem>]) -> BTreeMap<EntityVersion, VersionRecords> {
    let mut versions: BTreeMap<EntityVersion, VersionRecords> = BTreeMap::new();
    for item in items {
        let Ok(key) = parse_sort_key(item.key().sort_key()) else {
            continue;
        };
        let entry = versions.entry(key.version()).or_default();
        entry.item_keys.push(item.key().clone());
        match key {
            SortKey::Meta { .. } => entry.metadata = Some(EntityMetadata::from_item(item)),
            // Items arrive in sort-key order, so chunks are already index-ordered.
            SortKey::Chunk { .. } => entry.chunks.push(ChunkRecord::from_item(item)),
        }
    }
    versions
}

fn load_versions(store: &RegionStore, entity_id: &[u8]) -> BTreeMap<EntityVersion, VersionRecords> {
    group_versions(&store.query_partition(entity_id, Some(VERSION_PREFIX.as_bytes())))
}

fn newest_version(store: &RegionStore, entity_id: &[u8]) -> Option<EntityVersion> {
    load_versions(store, entity_id).keys().next_back().copied()
}

/// One partition query, then the newest committed version that validates,
/// trying at most `max_fallback` older committed versions after the newest.
pub fn read_entity(store: &RegionStore, entity_id: &[u8], max_fallback: usize) -> Result<ReadResult, ProtocolError> {
    let versions = load_versions(store, entity_id);
    let committed = versions
        .values()
        .rev()
        .filter(|r| r.status() == Some(CommitStatus::Committed));
    let mut tried = 0;
    let mut last = String::new();
    for (depth, records) in committed.take(max_fallback + 1).enumerate() {
        tried += 1;
        match records.validate() {
            Ok((meta, payload)) => {
                return Ok(ReadResult {
                    payload,
                    version: meta.version,
                    fallback_depth: depth,
                })
            }
            Err(e) => last = e,
        }
    }
    if tried == 0 {
        Err(ProtocolError::EntityNotFound)
    } else {
        Err(ProtocolError::EntityCorrupt { tried, last })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VersionSummary {
    pub version: EntityVersion,
    pub status: Option<CommitStatus>,
    pub chunk_records: usize,
    pub records: usize,
}

/// Versions present for an entity, oldest first.
pub fn list_versions(store: &RegionStore, entity_id: &[u8]) -> Vec<VersionSummary> {
    load_versions(store, entity_id)
        .into_iter()
        .map(|(version, r)| VersionSummary {
            version,
            status: r.status(),
            chunk_records: r.chunks.len(),
            records: r.item_keys.len(),
        })
        .collect()
}

/// Deletes committed versions beyond the newest `keep_newest`, and any
/// non-committed version older than the newest committed one. Returns the
/// number of records deleted.
pub fn gc_versions(store: &RegionStore, entity_id: &[u8], keep_newest: usize) -> Result<usize, ProtocolError> {
    if keep_newest == 0 {
        return Err(ProtocolError::InvalidArgument("keep_newest must be at least 1".into()));
    }
    let versions = load_versions(store, entity_id);
    let committed: Vec<EntityVersion> = versions
        .iter()
        .filter(|(_, r)| r.status() == Some(CommitStatus::Committed))
        .map(|(v, _)| *v)
        .collect();
    let Some(&newest_committed) = committed.last() else {
        return Ok(0);
    };
    let keep_from = committed[committed.len().saturating_sub(keep_newest)];

    let mut deleted = 0;
    for (version, records) in &versions {
        let doomed = match records.status() {
            Some(CommitStatus::Committed) => *version < keep_from,
            _ => *version < newest_committed,
        };
        if doomed {
            for key in &records.item_keys {
                store.delete_item(key);
                deleted += 1;
            }
        }
    }
    Ok(deleted)
}
