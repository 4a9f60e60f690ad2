//! The claim-check baseline: payload in an object bucket, a pointer record in
//! the table. Within one region the object is written before the pointer, so
//! a locally visible pointer always resolves. Across regions the two travel on
//! independent channels, and a pointer can arrive before its payload.

use bytes::Bytes;
use thiserror::Error;

use crate::codec::{compute_digest, ChecksumKind, PayloadDigest};
use crate::kv::{Condition, ItemKey, KvError, ObjectStoreModel, RegionStore, StoredItem};
use crate::protocol::{PathTaken, ReadResult, WriteReceipt, ATTR_BYTES, ATTR_DIGEST, ATTR_DIGEST_KIND, ATTR_VER};
use crate::version::EntityVersion;

pub const ATTR_OBJ_KEY: &str = "ObjKey";
pub const POINTER_SORT_KEY: &str = "PTR";

/// Bound on optimistic-lock retries when racing another local writer.
const MAX_POINTER_CAS_ATTEMPTS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PointerError {
    #[error("entity not found")]
    EntityNotFound,
    #[error("dangling pointer: object {object_key:?} not found")]
    DanglingPointer { object_key: String },
    #[error("payload digest mismatch")]
    DigestMismatch,
    #[error("malformed pointer record: {0}")]
    Malformed(String),
    #[error("pointer update kept losing optimistic-lock races")]
    Contended,
    #[error(transparent)]
    Store(#[from] KvError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PointerRecord {
    pub entity_id: Vec<u8>,
    pub version: EntityVersion,
    pub object_key: Vec<u8>,
    pub total_bytes: u64,
    pub digest: PayloadDigest,
}

impl PointerRecord {
    pub fn object_key_for(entity_id: &[u8], version: &EntityVersion) -> Vec<u8> {
        let mut key = entity_id.to_vec();
        key.push(b'/');
        key.extend_from_slice(version.sortable().as_bytes());
        key
    }

    pub fn key(entity_id: &[u8]) -> Result<ItemKey, KvError> {
        ItemKey::new(entity_id.to_vec(), POINTER_SORT_KEY)
    }

    pub fn to_item(&self) -> Result<StoredItem, KvError> {
        Ok(StoredItem::new(Self::key(&self.entity_id)?)
            .with(ATTR_VER, self.version.sortable())
            .with(ATTR_OBJ_KEY, Bytes::from(self.object_key.clone()))
            .with(ATTR_BYTES, self.total_bytes as i64)
            .with(ATTR_DIGEST, Bytes::from(self.digest.value().to_vec()))
            .with(ATTR_DIGEST_KIND, self.digest.kind().name()))
    }

    pub fn from_item(item: &StoredItem) -> Result<Self, PointerError> {
        let bad = |what: &str| PointerError::Malformed(what.to_string());
        let version = item
            .get_str(ATTR_VER)
            .and_then(|t| EntityVersion::parse_sortable(t).ok())
            .ok_or_else(|| bad("Ver"))?;
        let object_key = item.get_bytes(ATTR_OBJ_KEY).ok_or_else(|| bad("ObjKey"))?.to_vec();
        let total_bytes = item
            .get_int(ATTR_BYTES)
            .and_then(|n| u64::try_from(n).ok())
            .ok_or_else(|| bad("Bytes"))?;
        let kind = item
            .get_str(ATTR_DIGEST_KIND)
            .and_then(|k| ChecksumKind::from_name(k).ok())
            .ok_or_else(|| bad("DigestKind"))?;
        let digest = item
            .get_bytes(ATTR_DIGEST)
            .and_then(|d| PayloadDigest::new(kind, d.to_vec()).ok())
            .ok_or_else(|| bad("Digest"))?;
        Ok(Self {
            entity_id: item.key().partition_key().to_vec(),
            version,
            object_key,
            total_bytes,
            digest,
        })
    }
}

/// Puts the payload object, then the pointer. A pointer already holding a
/// newer version is left in place.
pub fn write_pointer_entity(
    store: &RegionStore,
    bucket: &ObjectStoreModel,
    entity_id: &[u8],
    payload: Bytes,
    version: EntityVersion,
    checksum: ChecksumKind,
) -> Result<WriteReceipt, PointerError> {
    let digest = compute_digest(&payload, checksum);
    write_pointer_entity_with_digest(store, bucket, entity_id, payload, version, digest)
}

/// As [`write_pointer_entity`] with the payload digest already computed.
pub fn write_pointer_entity_with_digest(
    store: &RegionStore,
    bucket: &ObjectStoreModel,
    entity_id: &[u8],
    payload: Bytes,
    version: EntityVersion,
    digest: PayloadDigest,
) -> Result<WriteReceipt, PointerError> {
    let record = PointerRecord {
        entity_id: entity_id.to_vec(),
        version,
        object_key: PointerRecord::object_key_for(entity_id, &version),
        total_bytes: payload.len() as u64,
        digest,
    };
    let item = record.to_item()?;
    bucket.object_put(&record.object_key, payload, version)?;

    for _ in 0..MAX_POINTER_CAS_ATTEMPTS {
        let condition = match store.get_item(item.key()) {
            None => Condition::absent(ATTR_VER),
            Some(existing) => {
                let current = existing.get(ATTR_VER).cloned();
                let newer_held = existing
                    .get_str(ATTR_VER)
                    .and_then(|t| EntityVersion::parse_sortable(t).ok())
                    .is_some_and(|held| held >= version);
                if newer_held {
                    break;
                }
                match current {
                    Some(v) => Condition::AttributeEquals(ATTR_VER.to_string(), v),
                    None => Condition::absent(ATTR_VER),
                }
            }
        };
        match store.put_item(item.clone(), &condition) {
            Ok(_) => break,
            Err(KvError::ConditionFailed { .. }) => continue,
            Err(e) => return Err(e.into()),
        }
    }
    let landed = store
        .get_item(item.key())
        .and_then(|i| i.get_str(ATTR_VER).and_then(|t| EntityVersion::parse_sortable(t).ok()))
        .is_some_and(|held| held >= version);
    if !landed {
        return Err(PointerError::Contended);
    }
    Ok(WriteReceipt {
        version,
        chunk_count: 0,
        path_taken: PathTaken::Pointer,
        bytes_written: record.total_bytes,
    })
}

/// Reads the pointer, then fetches the object it names. No retries: a missing
/// object surfaces as [`PointerError::DanglingPointer`].
pub fn read_pointer_entity(
    store: &RegionStore,
    bucket: &ObjectStoreModel,
    entity_id: &[u8],
) -> Result<ReadResult, PointerError> {
    let item = store
        .get_item(&PointerRecord::key(entity_id)?)
        .ok_or(PointerError::EntityNotFound)?;
    let record = PointerRecord::from_item(&item)?;
    let object = bucket.object_get(&record.object_key).map_err(|e| match e {
        KvError::ObjectNotFound(object_key) => PointerError::DanglingPointer { object_key },
        other => other.into(),
    })?;
    if object.payload.len() as u64 != record.total_bytes
        || compute_digest(&object.payload, record.digest.kind()) != record.digest
    {
        return Err(PointerError::DigestMismatch);
    }
    Ok(ReadResult {
        payload: object.payload,
        version: record.version,
        fallback_depth: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::version::WriterId;

    fn v(millis: u64) -> EntityVersion {
        EntityVersion::new(millis, 0, WriterId::new("use1-a").unwrap()).unwrap()
    }

    #[test]
    fn local_round_trip() {
        let (s, b) = (RegionStore::with_defaults("use1"), ObjectStoreModel::new("use1"));
        let p = Bytes::from(vec![9u8; 2_097_152]);
        let r = write_pointer_entity(&s, &b, b"e", p.clone(), v(1), ChecksumKind::Crc32c).unwrap();
        assert_eq!(r.path_taken, PathTaken::Pointer);
        assert_eq!((s.item_count(), b.len()), (1, 1));
        assert_eq!(read_pointer_entity(&s, &b, b"e").unwrap().payload, p);
    }

    #[test]
    fn versions_get_distinct_objects_and_newest_pointer_wins() {
        let (s, b) = (RegionStore::with_defaults("use1"), ObjectStoreModel::new("use1"));
        write_pointer_entity(&s, &b, b"e", Bytes::from_static(b"two"), v(2), ChecksumKind::Crc32c).unwrap();
        write_pointer_entity(&s, &b, b"e", Bytes::from_static(b"one"), v(1), ChecksumKind::Crc32c).unwrap();
        assert_eq!(b.len(), 2);
        let r = read_pointer_entity(&s, &b, b"e").unwrap();
        assert_eq!((r.version, r.payload), (v(2), Bytes::from_static(b"two")));
        assert_eq!(
            PointerRecord::object_key_for(b"e", &v(2)),
            b"e/0000000000000002-000000-use1-a".to_vec()
        );
    }

    #[test]
    fn pointer_without_object_dangles() {
        let (writer, writer_bucket) = (RegionStore::with_defaults("use1"), ObjectStoreModel::new("use1"));
        let (reader, reader_bucket) = (RegionStore::with_defaults("euw1"), ObjectStoreModel::new("euw1"));
        write_pointer_entity(
            &writer,
            &writer_bucket,
            b"e",
            Bytes::from_static(b"data"),
            v(1),
            ChecksumKind::Crc32c,
        )
        .unwrap();

        assert_eq!(
            read_pointer_entity(&reader, &reader_bucket, b"e"),
            Err(PointerError::EntityNotFound)
        );
        // Fast channel: the pointer record arrives first.
        let pointer = writer.get_item(&PointerRecord::key(b"e").unwrap()).unwrap();
        reader.put_item((*pointer).clone(), &Condition::None).unwrap();
        assert!(matches!(
            read_pointer_entity(&reader, &reader_bucket, b"e"),
            Err(PointerError::DanglingPointer { .. })
        ));
        // Slow channel catches up.
        let key = PointerRecord::object_key_for(b"e", &v(1));
        let obj = writer_bucket.object_get(&key).unwrap();
        reader_bucket.object_put(&key, obj.payload, obj.stamp).unwrap();
        assert_eq!(
            read_pointer_entity(&reader, &reader_bucket, b"e").unwrap().payload,
            Bytes::from_static(b"data")
        );
    }

    #[test]
    fn corrupted_object_is_detected() {
        let (s, b) = (RegionStore::with_defaults("use1"), ObjectStoreModel::new("use1"));
        write_pointer_entity(&s, &b, b"e", Bytes::from_static(b"data"), v(1), ChecksumKind::Sha256).unwrap();
        let key = PointerRecord::object_key_for(b"e", &v(1));
        b.object_put(&key, Bytes::from_static(b"dAta"), v(2)).unwrap();
        assert_eq!(read_pointer_entity(&s, &b, b"e"), Err(PointerError::DigestMismatch));
    }
}
