//! A damaged newest version is skipped in favour of the previous committed
//! one, and garbage collection trims old versions.
//!
//! ```text
//! cargo run --example version_fallback_and_gc
//! ```

use bytes::Bytes;
use chunked_objects::kv::Condition;
use chunked_objects::protocol::{gc_versions, list_versions, ProtocolError, ATTR_DATA};
use chunked_objects::{read_entity, write_entity, ChunkingConfig, EntityVersion, RegionStore, WriterId};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let store = RegionStore::with_defaults("use1");
    let config = ChunkingConfig::with_chunk_bytes(1_000);
    let writer = WriterId::new("use1-a")?;
    for n in 1..=4u64 {
        let payload = Bytes::from(format!("revision {n} ").repeat(300));
        write_entity(&store, b"doc", payload, &config, EntityVersion::new(n, 0, writer)?)?;
    }

    // Flip one byte in the first chunk of the newest version.
    let newest = EntityVersion::new(4, 0, writer)?;
    let prefix = format!("V#{}#CHUNK#", newest.sortable());
    let chunk = store.query_partition(b"doc", Some(prefix.as_bytes()))[0].clone();
    let mut data = chunk.get_bytes(ATTR_DATA).unwrap().to_vec();
    data[0] ^= 1;
    store.put_item((*chunk).clone().with(ATTR_DATA, Bytes::from(data)), &Condition::None)?;

    let read = read_entity(&store, b"doc", 2)?;
    println!(
        "read version {} at fallback depth {}",
        read.version, read.fallback_depth
    );
    match read_entity(&store, b"doc", 0) {
        Err(e @ ProtocolError::EntityCorrupt { .. }) => println!("with no fallback allowed: {e}"),
        other => println!("unexpected: {other:?}"),
    }

    let deleted = gc_versions(&store, b"doc", 2)?;
    println!("gc deleted {deleted} records; remaining:");
    for v in list_versions(&store, b"doc") {
        println!("  {} {:?} ({} records)", v.version, v.status, v.records);
    }
    Ok(())
}
