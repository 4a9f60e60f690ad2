//! A 5 MB write exceeds one transaction and goes through the two-phase path.
//! Crashing the writer between acknowledged batches never exposes the
//! half-written version.
//!
//! ```text
//! cargo run --example two_phase_crash
//! ```

use bytes::Bytes;
use chunked_objects::protocol::{list_versions, write_entity_with_hook, CrashAfter, WritePlan};
use chunked_objects::{read_entity, write_entity, ChunkingConfig, EntityVersion, RegionStore, WriterId};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let writer = WriterId::new("use1-a")?;
    let config = ChunkingConfig::default();
    let big = Bytes::from(vec![0xAB; 5_000_000]);
    let v1 = EntityVersion::new(1_000, 0, writer)?;
    let v2 = EntityVersion::new(2_000, 0, writer)?;

    let store = RegionStore::with_defaults("use1");
    let plan = WritePlan::new(store.limits(), "use1", b"video", big.clone(), &config, v2)?;
    println!(
        "{} chunks, path {}, {} acknowledged steps",
        plan.chunks().len(),
        plan.path().as_str(),
        plan.steps().len()
    );

    for crash_at in 1..plan.steps().len() {
        let store = RegionStore::with_defaults("use1");
        write_entity(&store, b"video", Bytes::from_static(b"previous cut"), &config, v1)?;
        let err =
            write_entity_with_hook(&store, b"video", big.clone(), &config, v2, &mut CrashAfter(crash_at)).unwrap_err();
        let read = read_entity(&store, b"video", 2)?;
        let statuses: Vec<String> = list_versions(&store, b"video")
            .iter()
            .map(|v| format!("{:?}", v.status.unwrap()))
            .collect();
        println!(
            "crash after {crash_at}: {err}; reader sees {:?} ({})",
            read.payload,
            statuses.join(", ")
        );
        assert_eq!(read.version, v1);
    }

    let receipt = write_entity(&store, b"video", big, &config, v2)?;
    println!("uninterrupted write committed {} chunks", receipt.chunk_count);
    Ok(())
}
