//! Property tests for the chunked write/read protocol.

use std::sync::Arc;

use bytes::Bytes;
use chunked_objects::codec::{ChecksumKind, ChunkingConfig};
use chunked_objects::kv::{Condition, RegionStore, StoreLimits};
use chunked_objects::protocol::{
    gc_versions, list_versions, read_entity, write_entity, write_entity_retrying, write_entity_with_hook, CommitStatus,
    CrashAfter, PathTaken, ProtocolError, WritePlan, ATTR_DATA,
};
use chunked_objects::version::{EntityVersion, ManualClock, VersionGenerator, WriterId};
use proptest::prelude::*;

fn v(millis: u64) -> EntityVersion {
    EntityVersion::new(millis, 0, WriterId::new("use1-a").unwrap()).unwrap()
}

fn small_limits() -> impl Strategy<Value = StoreLimits> {
    (1usize..=6, 600usize..=3_000).prop_map(|(items, bytes)| StoreLimits {
        max_item_size: 600,
        max_transaction_items: items,
        max_transaction_bytes: bytes,
    })
}

fn payload(max: usize) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(any::<u8>(), 0..=max)
}

fn kind() -> impl Strategy<Value = ChecksumKind> {
    prop_oneof![Just(ChecksumKind::Crc32c), Just(ChecksumKind::Sha256)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn round_trip_any_payload_any_chunk_size(
        data in payload(3_000),
        chunk in 1usize..=300,
        limits in small_limits(),
        checksum in kind(),
    ) {
        let store = RegionStore::new("use1", limits).unwrap();
        let cfg = ChunkingConfig { checksum_kind: checksum, ..ChunkingConfig::with_chunk_bytes(chunk) };
        let receipt = write_entity(&store, b"e", Bytes::from(data.clone()), &cfg, v(1)).unwrap();
        prop_assert_eq!(receipt.chunk_count as usize, data.len().div_ceil(chunk));
        let read = read_entity(&store, b"e", 0).unwrap();
        prop_assert_eq!(read.payload.as_ref(), data.as_slice());
        prop_assert_eq!(read.fallback_depth, 0);
    }

    #[test]
    fn path_is_transactional_exactly_when_one_batch_fits(data in payload(3_000), chunk in 1usize..=300, limits in small_limits()) {
        let cfg = ChunkingConfig::with_chunk_bytes(chunk);
        let plan = WritePlan::new(&limits, "use1", b"e", Bytes::from(data), &cfg, v(1)).unwrap();
        let single = plan.steps().len() == 1;
        prop_assert_eq!(plan.path() == PathTaken::Transactional, single);
    }

    #[test]
    fn crash_anywhere_leaves_previous_version_readable(
        old in payload(500),
        new in payload(2_000),
        chunk in 8usize..=200,
        limits in small_limits(),
        crash_seed in any::<prop::sample::Index>(),
    ) {
        let cfg = ChunkingConfig::with_chunk_bytes(chunk);
        let store = RegionStore::new("use1", limits).unwrap();
        write_entity(&store, b"e", Bytes::from(old.clone()), &cfg, v(1)).unwrap();
        let steps = WritePlan::new(&limits, "use1", b"e", Bytes::from(new.clone()), &cfg, v(2)).unwrap().steps().len();
        prop_assume!(steps > 1);
        let crash_at = 1 + crash_seed.index(steps - 1);
        let err = write_entity_with_hook(&store, b"e", Bytes::from(new), &cfg, v(2), &mut CrashAfter(crash_at)).unwrap_err();
        prop_assert_eq!(err, ProtocolError::InjectedCrash { acks: crash_at });
        let read = read_entity(&store, b"e", 2).unwrap();
        prop_assert_eq!((read.version, read.payload.as_ref()), (v(1), old.as_slice()));

        // A later commit supersedes the abandoned write and gc removes it.
        write_entity(&store, b"e", Bytes::from_static(b"third"), &cfg, v(3)).unwrap();
        gc_versions(&store, b"e", 1).unwrap();
        let left: Vec<_> = list_versions(&store, b"e").into_iter().map(|s| (s.version, s.status)).collect();
        prop_assert_eq!(left, vec![(v(3), Some(CommitStatus::Committed))]);
    }

    #[test]
    fn newest_committed_version_wins_regardless_of_write_order(order in Just(vec![1u64, 2, 3, 4, 5]).prop_shuffle()) {
        let store = RegionStore::with_defaults("use1");
        let cfg = ChunkingConfig::with_chunk_bytes(16);
        for &m in &order {
            write_entity(&store, b"e", Bytes::from(format!("payload of version {m}")), &cfg, v(m)).unwrap();
        }
        let read = read_entity(&store, b"e", 0).unwrap();
        prop_assert_eq!(read.version, v(5));
        prop_assert_eq!(read.payload, Bytes::from("payload of version 5"));
    }
}

fn corrupt_one_chunk(store: &RegionStore, version: &EntityVersion) {
    let prefix = format!("V#{}#CHUNK#", version.sortable());
    let item = store.query_partition(b"e", Some(prefix.as_bytes()))[0].clone();
    let mut bad = item.get_bytes(ATTR_DATA).unwrap().to_vec();
    bad[0] ^= 0x01;
    store
        .put_item((*item).clone().with(ATTR_DATA, Bytes::from(bad)), &Condition::None)
        .unwrap();
}

#[test]
fn corrupt_newest_falls_back_within_the_bound() {
    let store = RegionStore::with_defaults("use1");
    let cfg = ChunkingConfig::with_chunk_bytes(4);
    for m in 1..=4 {
        write_entity(&store, b"e", Bytes::from(format!("version {m}")), &cfg, v(m)).unwrap();
    }
    corrupt_one_chunk(&store, &v(4));
    corrupt_one_chunk(&store, &v(3));
    let read = read_entity(&store, b"e", 2).unwrap();
    assert_eq!((read.version, read.fallback_depth), (v(2), 2));
    assert!(matches!(
        read_entity(&store, b"e", 1),
        Err(ProtocolError::EntityCorrupt { tried: 2, .. })
    ));
}

#[test]
fn sha256_detects_what_crc_combining_would_also_catch() {
    for checksum in [ChecksumKind::Crc32c, ChecksumKind::Sha256] {
        let store = RegionStore::with_defaults("use1");
        let cfg = ChunkingConfig {
            checksum_kind: checksum,
            ..ChunkingConfig::with_chunk_bytes(4)
        };
        write_entity(&store, b"e", Bytes::from_static(b"0123456789abcdef"), &cfg, v(1)).unwrap();
        corrupt_one_chunk(&store, &v(1));
        assert!(
            matches!(read_entity(&store, b"e", 2), Err(ProtocolError::EntityCorrupt { .. })),
            "{checksum:?}"
        );
    }
}

#[test]
fn same_version_twice_conflicts() {
    let store = RegionStore::with_defaults("use1");
    let cfg = ChunkingConfig::default();
    write_entity(&store, b"e", Bytes::from_static(b"a"), &cfg, v(1)).unwrap();
    assert_eq!(
        write_entity(&store, b"e", Bytes::from_static(b"b"), &cfg, v(1)),
        Err(ProtocolError::VersionConflict(v(1)))
    );
    assert_eq!(read_entity(&store, b"e", 2).unwrap().payload, Bytes::from_static(b"a"));
}

#[test]
fn concurrent_writers_with_frozen_clocks_all_commit() {
    let store = Arc::new(RegionStore::with_defaults("use1"));
    let clock = Arc::new(ManualClock::new(1_000));
    std::thread::scope(|s| {
        for w in 0..4 {
            let (store, clock) = (Arc::clone(&store), Arc::clone(&clock));
            s.spawn(move || {
                let gen = VersionGenerator::new(WriterId::new(&format!("wr{w:04}")).unwrap(), clock);
                for i in 0..25 {
                    let data = Bytes::from(format!("{w}:{i}"));
                    write_entity_retrying(&store, b"e", data, &ChunkingConfig::default(), &gen).unwrap();
                }
            });
        }
    });
    let versions = list_versions(&store, b"e");
    assert_eq!(versions.len(), 100);
    assert!(versions.iter().all(|s| s.status == Some(CommitStatus::Committed)));
}

#[test]
fn oversize_entity_is_rejected_before_any_write() {
    let store = RegionStore::with_defaults("use1");
    let cfg = ChunkingConfig::default();
    let big = Bytes::from(vec![0u8; cfg.max_entity_bytes + 1]);
    assert!(matches!(
        write_entity(&store, b"e", big, &cfg, v(1)),
        Err(ProtocolError::EntityTooLarge { .. })
    ));
    assert_eq!(store.last_seq(), 0);
}
