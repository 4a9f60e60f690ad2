//! The pointer baseline across two regions: the pointer record replicates on
//! the fast table channel, the object on the slow bucket channel, and a reader
//! in between sees a dangling pointer. The chunked write replicates as one
//! group and has no such window.
//!
//! ```text
//! cargo run --example pointer_hazard
//! ```

use bytes::Bytes;
use chunked_objects::kv::Mutation;
use chunked_objects::pointer::{read_pointer_entity, write_pointer_entity};
use chunked_objects::protocol::ProtocolError;
use chunked_objects::sim::lww_prefers_incoming;
use chunked_objects::{
    read_entity, write_entity, ChecksumKind, ChunkingConfig, EntityVersion, ObjectStoreModel, RegionStore, WriterId,
};

fn ship_log(from: &RegionStore, to: &RegionStore) -> Result<(), Box<dyn std::error::Error>> {
    for group in from.log_since(0).chunk_by(|a, b| a.txn == b.txn) {
        let muts: Vec<Mutation> = group.iter().map(|e| e.mutation.clone()).collect();
        to.apply_replicated(&muts, lww_prefers_incoming)?;
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let version = EntityVersion::new(1_700_000_000_000, 0, WriterId::new("use1-a")?)?;
    let payload = Bytes::from(vec![42u8; 1_048_576]);

    let (east, east_bucket) = (RegionStore::with_defaults("use1"), ObjectStoreModel::new("use1"));
    let (west, west_bucket) = (RegionStore::with_defaults("euw1"), ObjectStoreModel::new("euw1"));
    write_pointer_entity(
        &east,
        &east_bucket,
        b"img",
        payload.clone(),
        version,
        ChecksumKind::Crc32c,
    )?;

    ship_log(&east, &west)?;
    println!(
        "pointer arrived, object not yet: {:?}",
        read_pointer_entity(&west, &west_bucket, b"img").unwrap_err()
    );
    for (key, obj) in east_bucket.entries() {
        west_bucket.object_put(&key, obj.payload, obj.stamp)?;
    }
    println!(
        "object arrived: {} bytes readable",
        read_pointer_entity(&west, &west_bucket, b"img")?.payload.len()
    );

    let (east, west) = (RegionStore::with_defaults("use1"), RegionStore::with_defaults("euw1"));
    write_entity(&east, b"img", payload, &ChunkingConfig::default(), version)?;
    assert_eq!(read_entity(&west, b"img", 2), Err(ProtocolError::EntityNotFound));
    println!("chunked before replication: entity not found (no dangling state)");
    ship_log(&east, &west)?;
    println!(
        "chunked after one replicated group: {} bytes",
        read_entity(&west, b"img", 2)?.payload.len()
    );
    Ok(())
}
