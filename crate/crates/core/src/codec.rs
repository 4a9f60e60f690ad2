//! Payload splitting, checksums, the sort-key scheme and validated reassembly.
//!
//! Sort keys are `V#<version>#CHUNK#<nnnnnn>` and `V#<version>#META`. The
//! version text is fixed width, so all keys of one version share a prefix and
//! versions never interleave.

use bytes::{Bytes, BytesMut};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::protocol::EntityMetadata;
use crate::version::{EntityVersion, SORTABLE_LEN};

pub const DEFAULT_MAX_CHUNK_BYTES: usize = 350_000;
pub const DEFAULT_MAX_ENTITY_BYTES: usize = 16 * 1024 * 1024;
pub const MAX_CHUNK_INDEX: u32 = 999_999;

pub const VERSION_PREFIX: &str = "V#";
const CHUNK_TAG: &str = "#CHUNK#";
const META_TAG: &str = "#META";
const INDEX_DIGITS: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("chunk index {0} exceeds {MAX_CHUNK_INDEX}")]
    IndexOutOfRange(u64),
    #[error("expected {expected} chunks, found {found}")]
    ChunkCountMismatch { expected: u64, found: u64 },
    #[error("expected {expected} bytes, reassembled {found}")]
    SizeMismatch { expected: u64, found: u64 },
    #[error("digest mismatch")]
    DigestMismatch,
    #[error("chunk indices are not contiguous at position {position} (index {index})")]
    NonContiguousIndices { position: usize, index: u32 },
    #[error("digest of kind {kind:?} must be {expected} bytes, got {found}")]
    DigestLength {
        kind: ChecksumKind,
        expected: usize,
        found: usize,
    },
    #[error("unknown checksum kind {0:?}")]
    UnknownChecksumKind(String),
    #[error("malformed sort key {0:?}")]
    MalformedSortKey(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChecksumKind {
    #[default]
    Crc32c,
    Sha256,
}

impl ChecksumKind {
    pub fn digest_len(self) -> usize {
        match self {
            ChecksumKind::Crc32c => 4,
            ChecksumKind::Sha256 => 32,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ChecksumKind::Crc32c => "crc32c",
            ChecksumKind::Sha256 => "sha256",
        }
    }

    pub fn from_name(name: &str) -> Result<Self, CodecError> {
        match name {
            "crc32c" => Ok(ChecksumKind::Crc32c),
            "sha256" => Ok(ChecksumKind::Sha256),
            other => Err(CodecError::UnknownChecksumKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkingConfig {
    pub max_chunk_bytes: usize,
    pub checksum_kind: ChecksumKind,
    /// Store and check a digest on every chunk in addition to the
    /// whole-payload digest.
    pub verify_chunk_digests: bool,
    pub max_entity_bytes: usize,
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        Self {
            max_chunk_bytes: DEFAULT_MAX_CHUNK_BYTES,
            checksum_kind: ChecksumKind::Crc32c,
            verify_chunk_digests: true,
            max_entity_bytes: DEFAULT_MAX_ENTITY_BYTES,
        }
    }
}

impl ChunkingConfig {
    pub fn with_chunk_bytes(max_chunk_bytes: usize) -> Self {
        Self {
            max_chunk_bytes,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkSlice {
    pub index: u32,
    pub data: Bytes,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PayloadDigest {
    kind: ChecksumKind,
    value: Vec<u8>,
}

impl PayloadDigest {
    pub fn new(kind: ChecksumKind, value: Vec<u8>) -> Result<Self, CodecError> {
        if value.len() != kind.digest_len() {
            return Err(CodecError::DigestLength {
                kind,
                expected: kind.digest_len(),
                found: value.len(),
            });
        }
        Ok(Self { kind, value })
    }

    pub fn kind(&self) -> ChecksumKind {
        self.kind
    }

    pub fn value(&self) -> &[u8] {
        &self.value
    }
}

/// Splits into `max_chunk_bytes` slices; the last may be shorter. Slices share
/// the payload's buffer.
///
/// # Panics
/// If `max_chunk_bytes` is zero.
pub fn split_payload(payload: &Bytes, config: &ChunkingConfig) -> Vec<ChunkSlice> {
    assert!(config.max_chunk_bytes > 0, "max_chunk_bytes must be positive");
    (0..payload.len())
        .step_by(config.max_chunk_bytes)
        .enumerate()
        .map(|(i, start)| {
            let end = (start + config.max_chunk_bytes).min(payload.len());
            ChunkSlice {
                index: i as u32,
                data: payload.slice(start..end),
            }
        })
        .collect()
}

/// Number of chunks `split_payload` produces for `len` bytes.
pub fn chunk_count(len: usize, max_chunk_bytes: usize) -> usize {
    len.div_ceil(max_chunk_bytes)
}

pub fn compute_digest(payload: &[u8], kind: ChecksumKind) -> PayloadDigest {
    let value = match kind {
        ChecksumKind::Crc32c => crc32c::crc32c(payload).to_be_bytes().to_vec(),
        ChecksumKind::Sha256 => Sha256::digest(payload).to_vec(),
    };
    PayloadDigest { kind, value }
}

pub fn encode_chunk_sort_key(version: &EntityVersion, index: u64) -> Result<String, CodecError> {
    if index > MAX_CHUNK_INDEX as u64 {
        return Err(CodecError::IndexOutOfRange(index));
    }
    Ok(format!("{VERSION_PREFIX}{version}{CHUNK_TAG}{index:0INDEX_DIGITS$}"))
}

pub fn encode_meta_sort_key(version: &EntityVersion) -> String {
    format!("{VERSION_PREFIX}{version}{META_TAG}")
}

/// `V#<version>#`, shared by every key of one version.
pub fn version_key_prefix(version: &EntityVersion) -> String {
    format!("{VERSION_PREFIX}{version}#")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SortKey {
    Chunk { version: EntityVersion, index: u32 },
    Meta { version: EntityVersion },
}

impl SortKey {
    pub fn version(&self) -> EntityVersion {
        match self {
            SortKey::Chunk { version, .. } | SortKey::Meta { version } => *version,
        }
    }
}

pub fn parse_sort_key(key: &[u8]) -> Result<SortKey, CodecError> {
    let malformed = || CodecError::MalformedSortKey(String::from_utf8_lossy(key).into_owned());
    let text = std::str::from_utf8(key).map_err(|_| malformed())?;
    let rest = text.strip_prefix(VERSION_PREFIX).ok_or_else(malformed)?;
    if rest.len() < SORTABLE_LEN {
        return Err(malformed());
    }
    let (version_text, tail) = rest.split_at(SORTABLE_LEN);
    let version = EntityVersion::parse_sortable(version_text).map_err(|_| malformed())?;
    if tail == META_TAG {
        return Ok(SortKey::Meta { version });
    }
    let digits = tail.strip_prefix(CHUNK_TAG).ok_or_else(malformed)?;
    if digits.len() != INDEX_DIGITS || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(malformed());
    }
    let index = digits.parse().map_err(|_| malformed())?;
    Ok(SortKey::Chunk { version, index })
}

/// Validates chunk count, index contiguity, total size and payload digest,
/// then returns the concatenated payload.
pub fn reassemble(metadata: &EntityMetadata, chunks: &[ChunkSlice]) -> Result<Bytes, CodecError> {
    let payload = assemble(metadata, chunks)?;
    if compute_digest(&payload, metadata.digest.kind()) != metadata.digest {
        return Err(CodecError::DigestMismatch);
    }
    Ok(payload)
}

/// [`reassemble`] without the final digest check.
pub(crate) fn assemble(metadata: &EntityMetadata, chunks: &[ChunkSlice]) -> Result<Bytes, CodecError> {
    if chunks.len() as u64 != metadata.chunk_count as u64 {
        return Err(CodecError::ChunkCountMismatch {
            expected: metadata.chunk_count as u64,
            found: chunks.len() as u64,
        });
    }
    for (position, chunk) in chunks.iter().enumerate() {
        if chunk.index as usize != position {
            return Err(CodecError::NonContiguousIndices {
                position,
                index: chunk.index,
            });
        }
    }
    let total: u64 = chunks.iter().map(|c| c.data.len() as u64).sum();
    if total != metadata.total_bytes {
        return Err(CodecError::SizeMismatch {
            expected: metadata.total_bytes,
            found: total,
        });
    }
    let payload = match chunks {
        [] => Bytes::new(),
        [only] => only.data.clone(),
        many => {
            let mut buf = BytesMut::with_capacity(total as usize);
            for c in many {
                buf.extend_from_slice(&c.data);
            }
            buf.freeze()
        }
    };
    Ok(payload)
}

/// CRC-32C of a concatenation, from the CRC and length of each part.
pub fn combine_crc32c(parts: impl IntoIterator<Item = (u32, usize)>) -> u32 {
    parts
        .into_iter()
        .fold(0, |acc, (crc, len)| crc32c::crc32c_combine(acc, crc, len))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::CommitStatus;
    use crate::version::WriterId;

    fn version(millis: u64, counter: u32) -> EntityVersion {
        EntityVersion::new(millis, counter, WriterId::new("use1-a").unwrap()).unwrap()
    }

    fn metadata_for(payload: &Bytes, config: &ChunkingConfig) -> EntityMetadata {
        EntityMetadata {
            entity_id: b"e".to_vec(),
            version: version(1, 0),
            chunk_count: chunk_count(payload.len(), config.max_chunk_bytes) as u32,
            total_bytes: payload.len() as u64,
            digest: compute_digest(payload, config.checksum_kind),
            status: CommitStatus::Committed,
            writer_region: "use1".into(),
        }
    }

    #[test]
    fn one_mebibyte_splits_into_three() {
        let payload = Bytes::from(vec![7u8; 1_048_576]);
        let sizes: Vec<_> = split_payload(&payload, &ChunkingConfig::default())
            .iter()
            .map(|c| c.data.len())
            .collect();
        assert_eq!(sizes, vec![350_000, 350_000, 348_576]);
    }

    #[test]
    fn empty_and_boundary_payloads() {
        let cfg = ChunkingConfig::default();
        assert!(split_payload(&Bytes::new(), &cfg).is_empty());
        assert_eq!(split_payload(&Bytes::from(vec![0u8; 350_000]), &cfg).len(), 1);
        assert_eq!(split_payload(&Bytes::from(vec![0u8; 350_001]), &cfg).len(), 2);
    }

    #[test]
    fn crc32c_published_vectors() {
        let crc =
            |data: &[u8]| u32::from_be_bytes(compute_digest(data, ChecksumKind::Crc32c).value().try_into().unwrap());
        assert_eq!(crc(b""), 0x0000_0000);
        assert_eq!(crc(b"123456789"), 0xE306_9283);
        assert_eq!(crc(&[0u8; 32]), 0x8A91_36AA);
        assert_eq!(crc(&[0xFFu8; 32]), 0x62A8_AB43);
        let ascending: Vec<u8> = (0..32).collect();
        assert_eq!(crc(&ascending), 0x46DD_794E);
        let descending: Vec<u8> = (0..32).rev().collect();
        assert_eq!(crc(&descending), 0x113F_DB5C);
    }

    #[test]
    fn sha256_published_vectors() {
        let hex = |d: PayloadDigest| d.value().iter().map(|b| format!("{b:02x}")).collect::<String>();
        assert_eq!(
            hex(compute_digest(b"", ChecksumKind::Sha256)),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(
            hex(compute_digest(b"abc", ChecksumKind::Sha256)),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn digest_is_deterministic_and_length_checked() {
        let a = compute_digest(b"payload", ChecksumKind::Crc32c);
        assert_eq!(a, compute_digest(b"payload", ChecksumKind::Crc32c));
        assert!(PayloadDigest::new(ChecksumKind::Sha256, vec![0; 4]).is_err());
        assert!(PayloadDigest::new(ChecksumKind::Crc32c, vec![0; 4]).is_ok());
    }

    #[test]
    fn sort_key_formats() {
        let v = version(1_700_000_000_000, 0);
        assert_eq!(
            encode_chunk_sort_key(&v, 0).unwrap(),
            "V#0001700000000000-000000-use1-a#CHUNK#000000"
        );
        assert_eq!(encode_meta_sort_key(&v), "V#0001700000000000-000000-use1-a#META");
        assert_eq!(
            encode_chunk_sort_key(&v, 1_000_000),
            Err(CodecError::IndexOutOfRange(1_000_000))
        );
        let prefix = version_key_prefix(&v);
        assert!(encode_meta_sort_key(&v).starts_with(&prefix));
        assert!(encode_chunk_sort_key(&v, 999_999).unwrap().starts_with(&prefix));
    }

    #[test]
    fn sort_keys_parse_back() {
        let v = version(42, 9);
        assert_eq!(
            parse_sort_key(encode_meta_sort_key(&v).as_bytes()).unwrap(),
            SortKey::Meta { version: v }
        );
        assert_eq!(
            parse_sort_key(encode_chunk_sort_key(&v, 17).unwrap().as_bytes()).unwrap(),
            SortKey::Chunk { version: v, index: 17 }
        );
        for bad in [
            "PTR",
            "V#junk#META",
            "V#0000000000000042-000009-use1-a#CHUNK#12",
            "V#0000000000000042-000009-use1-a#META#",
        ] {
            assert!(parse_sort_key(bad.as_bytes()).is_err(), "{bad}");
        }
    }

    #[test]
    fn keys_of_older_versions_sort_first() {
        let versions = [
            version(1, 0),
            version(1, 1),
            version(2, 0),
            version(10, 0),
            version(1_700_000_000_000, 5),
        ];
        for a in &versions {
            for b in &versions {
                if a >= b {
                    continue;
                }
                let a_keys = [encode_meta_sort_key(a), encode_chunk_sort_key(a, 999_999).unwrap()];
                let b_keys = [encode_meta_sort_key(b), encode_chunk_sort_key(b, 0).unwrap()];
                for ka in &a_keys {
                    for kb in &b_keys {
                        assert!(ka.as_bytes() < kb.as_bytes());
                    }
                }
            }
        }
    }

    #[test]
    fn reassemble_validates() {
        let cfg = ChunkingConfig::with_chunk_bytes(4);
        let payload = Bytes::from_static(b"0123456789");
        let meta = metadata_for(&payload, &cfg);
        let chunks = split_payload(&payload, &cfg);
        assert_eq!(reassemble(&meta, &chunks).unwrap(), payload);

        let mut dropped = chunks.clone();
        dropped.remove(1);
        assert_eq!(
            reassemble(&meta, &dropped),
            Err(CodecError::ChunkCountMismatch { expected: 3, found: 2 })
        );

        let mut swapped = chunks.clone();
        swapped.swap(0, 1);
        assert!(matches!(
            reassemble(&meta, &swapped),
            Err(CodecError::NonContiguousIndices { position: 0, .. })
        ));

        let mut short = chunks.clone();
        short[2].data = Bytes::from_static(b"8");
        assert!(matches!(
            reassemble(&meta, &short),
            Err(CodecError::SizeMismatch { .. })
        ));

        let mut flipped = chunks;
        flipped[1].data = Bytes::from_static(b"45X7");
        assert_eq!(reassemble(&meta, &flipped), Err(CodecError::DigestMismatch));
    }

    #[test]
    fn empty_payload_reassembles_to_empty() {
        let cfg = ChunkingConfig::default();
        let payload = Bytes::new();
        let meta = metadata_for(&payload, &cfg);
        assert_eq!(meta.chunk_count, 0);
        assert_eq!(reassemble(&meta, &[]).unwrap(), Bytes::new());
    }

    #[test]
    fn combined_crc_equals_direct_crc() {
        let data: Vec<u8> = (0..10_000u32)
            .map(|i| (i.wrapping_mul(2_654_435_761) >> 13) as u8)
            .collect();
        for cut in [0, 1, 333, 5_000, 9_999, 10_000] {
            for cut2 in [cut, (cut + 10_000) / 2, 10_000] {
                let parts = [&data[..cut], &data[cut..cut2], &data[cut2..]];
                let combined = combine_crc32c(parts.iter().map(|p| (crc32c::crc32c(p), p.len())));
                assert_eq!(combined, crc32c::crc32c(&data));
            }
        }
        assert_eq!(combine_crc32c([]), 0);
    }
}
