//! Chunked large-object storage for key-value stores with per-item size
//! limits.
//!
//! A large entity is stored as one metadata record plus ordered chunk records
//! inside a single partition, so payload and metadata share one replication
//! stream. The crate provides:
//!
//! - [`kv`]: an in-process region table (item/transaction limits, conditional
//!   writes, range queries, write log) and an object bucket model.
//! - [`codec`]: splitting, checksums, the sort-key scheme and reassembly.
//! - [`protocol`]: the write path (transactional or two-phase), the read path
//!   with version fallback, and version GC.
//! - [`pointer`]: the claim-check baseline (object + pointer record).
//! - [`sim`]: a seeded two-region replication simulator measuring
//!   time-to-consistency and dangling-pointer rates for both patterns.
//! - [`cli`]: the command-line driver behind the `chunked-objects` binary.

pub mod cli;
pub mod codec;
pub mod kv;
pub mod pointer;
pub mod protocol;
pub mod sim;
pub mod version;

pub use codec::{ChecksumKind, ChunkingConfig};
pub use kv::{ObjectStoreModel, RegionStore, StoreLimits};
pub use protocol::{read_entity, write_entity, ReadResult, WriteReceipt};
pub use version::{EntityVersion, WriterId};
