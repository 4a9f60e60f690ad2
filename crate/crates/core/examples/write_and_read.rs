//! Store a 1 MB payload as chunks in a region-local table and read it back.
//!
//! ```text
//! cargo run --example write_and_read
//! ```

use bytes::Bytes;
use chunked_objects::protocol::list_versions;
use chunked_objects::version::{ManualClock, VersionGenerator};
use chunked_objects::{read_entity, write_entity, ChunkingConfig, RegionStore, WriterId};
use std::sync::Arc;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let store = RegionStore::with_defaults("use1");
    let versions = VersionGenerator::new(WriterId::new("use1-a")?, Arc::new(ManualClock::new(1_700_000_000_000)));
    let config = ChunkingConfig::default();

    let payload = Bytes::from((0..1_048_576u32).map(|i| (i * 7 % 256) as u8).collect::<Vec<_>>());
    let receipt = write_entity(
        &store,
        b"report-2024",
        payload.clone(),
        &config,
        versions.next_version()?,
    )?;
    println!(
        "wrote {} bytes as {} chunks via the {} path, version {}",
        receipt.bytes_written,
        receipt.chunk_count,
        receipt.path_taken.as_str(),
        receipt.version
    );

    for item in store.query_partition(b"report-2024", None) {
        println!(
            "  {:<48} {:>7} bytes",
            String::from_utf8_lossy(item.key().sort_key()),
            item.serialized_size()
        );
    }

    let read = read_entity(&store, b"report-2024", 2)?;
    assert_eq!(read.payload, payload);
    println!("read back {} bytes of version {}", read.payload.len(), read.version);

    // A second write under a fresh version; readers switch to it atomically.
    write_entity(
        &store,
        b"report-2024",
        Bytes::from_static(b"short now"),
        &config,
        versions.next_version()?,
    )?;
    for v in list_versions(&store, b"report-2024") {
        println!("  version {} status {:?} records {}", v.version, v.status, v.records);
    }
    println!("newest: {:?}", read_entity(&store, b"report-2024", 2)?.payload);
    Ok(())
}
