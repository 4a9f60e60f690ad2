//! Two regions accept writes to the same pointer concurrently, exchange logs
//! in opposite orders and still end up identical.
//!
//! ```text
//! cargo run --example lww_convergence
//! ```

use bytes::Bytes;
use chunked_objects::kv::{LogEntry, Mutation};
use chunked_objects::pointer::{read_pointer_entity, write_pointer_entity};
use chunked_objects::sim::lww_prefers_incoming;
use chunked_objects::{ChecksumKind, EntityVersion, ObjectStoreModel, RegionStore, WriterId};

fn groups(log: &[LogEntry]) -> Vec<Vec<Mutation>> {
    log.chunk_by(|a, b| a.txn == b.txn)
        .map(|g| g.iter().map(|e| e.mutation.clone()).collect())
        .collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let regions = [("use1", "use1-a"), ("euw1", "euw1-a")];
    let stores: Vec<_> = regions
        .iter()
        .map(|(r, _)| (RegionStore::with_defaults(*r), ObjectStoreModel::new(*r)))
        .collect();
    for (i, ((_, w), (store, bucket))) in regions.iter().zip(&stores).enumerate() {
        for k in 0..3u64 {
            let v = EntityVersion::new(100 + 2 * k + i as u64, 0, WriterId::new(w)?)?;
            write_pointer_entity(
                store,
                bucket,
                b"cfg",
                Bytes::from(format!("{w} rev {k}")),
                v,
                ChecksumKind::Crc32c,
            )?;
        }
    }
    let logs: Vec<_> = stores.iter().map(|(s, _)| groups(&s.log_since(0))).collect();
    let objects: Vec<_> = stores.iter().map(|(_, b)| b.entries()).collect();

    // East applies west's log newest first; west applies east's oldest first.
    for (me, reverse) in [(0, true), (1, false)] {
        let mut incoming = logs[1 - me].clone();
        if reverse {
            incoming.reverse();
        }
        for g in &incoming {
            let applied = stores[me].0.apply_replicated(g, lww_prefers_incoming)?;
            println!("{} applied {applied} of {} incoming puts", regions[me].0, g.len());
        }
        for (k, o) in &objects[1 - me] {
            stores[me].1.object_put(k, o.payload.clone(), o.stamp)?;
        }
    }
    let reads: Vec<_> = stores
        .iter()
        .map(|(s, b)| read_pointer_entity(s, b, b"cfg"))
        .collect::<Result<_, _>>()?;
    for ((r, _), read) in regions.iter().zip(&reads) {
        println!("{r}: {} -> {:?}", read.version, read.payload);
    }
    assert_eq!(reads[0], reads[1]);
    assert_eq!(stores[0].0.items(), stores[1].0.items());
    Ok(())
}
