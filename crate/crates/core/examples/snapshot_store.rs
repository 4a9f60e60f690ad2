//! Persist a region store as NDJSON and load it back. The snapshot holds the
//! write log; loading replays it.
//!
//! ```text
//! cargo run --example snapshot_store
//! ```

use bytes::Bytes;
use chunked_objects::{read_entity, write_entity, ChunkingConfig, EntityVersion, RegionStore, StoreLimits, WriterId};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let store = RegionStore::with_defaults("use1");
    let config = ChunkingConfig::with_chunk_bytes(64);
    let writer = WriterId::new("use1-a")?;
    for (n, text) in ["first draft", "second draft, a little longer than the first one"]
        .iter()
        .enumerate()
    {
        write_entity(
            &store,
            b"notes",
            Bytes::from(text.to_string()),
            &config,
            EntityVersion::new(n as u64 + 1, 0, writer)?,
        )?;
    }

    let snapshot = store.snapshot_string();
    println!(
        "{} log records, {} bytes; first record:",
        store.last_seq(),
        snapshot.len()
    );
    println!("  {}", snapshot.lines().next().unwrap_or_default());

    let restored = RegionStore::load_snapshot("use1", StoreLimits::default(), snapshot.as_bytes())?;
    assert_eq!(restored.snapshot_string(), snapshot);
    let read = read_entity(&restored, b"notes", 2)?;
    println!(
        "restored store reads {:?} at {}",
        String::from_utf8_lossy(&read.payload),
        read.version
    );
    Ok(())
}
