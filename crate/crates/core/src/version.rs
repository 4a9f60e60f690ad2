//! Entity version stamps and the hybrid clock that issues them.
//!
//! A version is `(physical_millis, logical_counter, writer_id)`, compared
//! lexicographically. Its sortable text form is fixed width, so bytewise order
//! of the text equals tuple order, which the sort-key scheme relies on.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use thiserror::Error;

pub const MAX_PHYSICAL_MILLIS: u64 = 9_999_999_999_999_999;
pub const MAX_LOGICAL_COUNTER: u32 = 999_999;
pub const WRITER_ID_LEN: usize = 6;
/// Length of [`EntityVersion::sortable`]: 16 + 1 + 6 + 1 + 6.
pub const SORTABLE_LEN: usize = 30;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VersionError {
    #[error("writer id must be {WRITER_ID_LEN} printable ASCII characters without '#', got {0:?}")]
    InvalidWriterId(String),
    #[error("logical counter exhausted within millisecond {0}")]
    CounterExhausted(u64),
    #[error("physical clock value {0} exceeds the 16-digit range")]
    ClockOutOfRange(u64),
    #[error("malformed version text {0:?}")]
    Malformed(String),
}

/// Six-character writer identity, typically region plus node (`use1-a`).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WriterId([u8; WRITER_ID_LEN]);

impl WriterId {
    pub fn new(id: &str) -> Result<Self, VersionError> {
        let bytes = id.as_bytes();
        let valid = bytes.len() == WRITER_ID_LEN && bytes.iter().all(|b| b.is_ascii_graphic() && *b != b'#');
        if !valid {
            return Err(VersionError::InvalidWriterId(id.to_string()));
        }
        let mut buf = [0u8; WRITER_ID_LEN];
        buf.copy_from_slice(bytes);
        Ok(Self(buf))
    }

    pub fn as_str(&self) -> &str {
        // Validated ASCII on construction.
        std::str::from_utf8(&self.0).expect("writer id is ascii")
    }
}

impl fmt::Debug for WriterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "WriterId({})", self.as_str())
    }
}

impl fmt::Display for WriterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WriterId {
    type Err = VersionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

/// Globally ordered, per-writer monotonic version stamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityVersion {
    physical_millis: u64,
    logical_counter: u32,
    writer_id: WriterId,
}

impl EntityVersion {
    pub fn new(physical_millis: u64, logical_counter: u32, writer_id: WriterId) -> Result<Self, VersionError> {
        if physical_millis > MAX_PHYSICAL_MILLIS {
            return Err(VersionError::ClockOutOfRange(physical_millis));
        }
        if logical_counter > MAX_LOGICAL_COUNTER {
            return Err(VersionError::CounterExhausted(physical_millis));
        }
        Ok(Self {
            physical_millis,
            logical_counter,
            writer_id,
        })
    }

    pub fn physical_millis(&self) -> u64 {
        self.physical_millis
    }

    pub fn logical_counter(&self) -> u32 {
        self.logical_counter
    }

    pub fn writer_id(&self) -> WriterId {
        self.writer_id
    }

    /// `pppppppppppppppp-cccccc-wwwwww`
    pub fn sortable(&self) -> String {
        format!(
            "{:016}-{:06}-{}",
            self.physical_millis, self.logical_counter, self.writer_id
        )
    }

    pub fn parse_sortable(text: &str) -> Result<Self, VersionError> {
        let malformed = || VersionError::Malformed(text.to_string());
        let b = text.as_bytes();
        if b.len() != SORTABLE_LEN || b[16] != b'-' || b[23] != b'-' {
            return Err(malformed());
        }
        let digits = |s: &[u8]| s.iter().all(u8::is_ascii_digit);
        if !digits(&b[..16]) || !digits(&b[17..23]) {
            return Err(malformed());
        }
        let millis = text[..16].parse().map_err(|_| malformed())?;
        let counter = text[17..23].parse().map_err(|_| malformed())?;
        let writer = WriterId::new(&text[24..]).map_err(|_| malformed())?;
        Self::new(millis, counter, writer)
    }
}

impl fmt::Display for EntityVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.sortable())
    }
}

/// Issues the next version for `writer_id`.
///
/// When the clock has not advanced past `last_issued`, the last physical
/// component is reused and the logical counter incremented.
pub fn generate_version(
    now_millis: u64,
    writer_id: WriterId,
    last_issued: Option<&EntityVersion>,
) -> Result<EntityVersion, VersionError> {
    match last_issued {
        Some(last) if now_millis <= last.physical_millis => {
            if last.logical_counter >= MAX_LOGICAL_COUNTER {
                return Err(VersionError::CounterExhausted(last.physical_millis));
            }
            EntityVersion::new(last.physical_millis, last.logical_counter + 1, writer_id)
        }
        _ => EntityVersion::new(now_millis, 0, writer_id),
    }
}

pub trait Clock: Send + Sync {
    fn now_millis(&self) -> u64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_millis(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// Clock driven by the caller; clones share the same reading.
#[derive(Debug, Default, Clone)]
pub struct ManualClock(Arc<AtomicU64>);

impl ManualClock {
    pub fn new(millis: u64) -> Self {
        Self(Arc::new(AtomicU64::new(millis)))
    }

    pub fn set(&self, millis: u64) {
        self.0.store(millis, Ordering::SeqCst);
    }

    pub fn advance(&self, millis: u64) {
        self.0.fetch_add(millis, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_millis(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

/// Stateful hybrid clock for one writer.
pub struct VersionGenerator {
    writer_id: WriterId,
    clock: Arc<dyn Clock>,
    last: Mutex<Option<EntityVersion>>,
}

impl VersionGenerator {
    pub fn new(writer_id: WriterId, clock: Arc<dyn Clock>) -> Self {
        Self {
            writer_id,
            clock,
            last: Mutex::new(None),
        }
    }

    pub fn writer_id(&self) -> WriterId {
        self.writer_id
    }

    pub fn next_version(&self) -> Result<EntityVersion, VersionError> {
        let mut last = self.last.lock().expect("version generator poisoned");
        let v = generate_version(self.clock.now_millis(), self.writer_id, last.as_ref())?;
        *last = Some(v);
        Ok(v)
    }

    /// Moves the generator past a version seen elsewhere, so the next stamp
    /// orders after it.
    pub fn observe(&self, seen: &EntityVersion) {
        let mut last = self.last.lock().expect("version generator poisoned");
        let newer = match *last {
            Some(l) => (seen.physical_millis, seen.logical_counter) > (l.physical_millis, l.logical_counter),
            None => true,
        };
        if newer {
            *last = Some(EntityVersion {
                writer_id: self.writer_id,
                ..*seen
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(s: &str) -> WriterId {
        WriterId::new(s).unwrap()
    }

    #[test]
    fn first_issue_uses_clock_reading() {
        let v = generate_version(1_700_000_000_000, w("use1-a"), None).unwrap();
        assert_eq!(v, EntityVersion::new(1_700_000_000_000, 0, w("use1-a")).unwrap());
        assert_eq!(v.sortable(), "0001700000000000-000000-use1-a");
    }

    #[test]
    fn same_millisecond_increments_counter() {
        let t = 1_700_000_000_000;
        let last = EntityVersion::new(t, 0, w("use1-a")).unwrap();
        let v = generate_version(t, w("use1-a"), Some(&last)).unwrap();
        assert_eq!((v.physical_millis(), v.logical_counter()), (t, 1));
        assert!(v > last);
    }

    #[test]
    fn clock_regression_reuses_last_millis() {
        let last = EntityVersion::new(5_000, 3, w("use1-a")).unwrap();
        let v = generate_version(4_000, w("use1-a"), Some(&last)).unwrap();
        assert_eq!((v.physical_millis(), v.logical_counter()), (5_000, 4));
    }

    #[test]
    fn counter_exhaustion_is_an_error() {
        let last = EntityVersion::new(5_000, MAX_LOGICAL_COUNTER, w("use1-a")).unwrap();
        assert_eq!(
            generate_version(5_000, w("use1-a"), Some(&last)),
            Err(VersionError::CounterExhausted(5_000))
        );
    }

    #[test]
    fn writer_id_validation() {
        assert!(WriterId::new("use1-a").is_ok());
        assert!(WriterId::new("use1").is_err());
        assert!(WriterId::new("use1-ab").is_err());
        assert!(WriterId::new("use#-a").is_err());
        assert!(WriterId::new("use a1").is_err());
    }

    #[test]
    fn sortable_round_trip_and_rejects_garbage() {
        let v = EntityVersion::new(MAX_PHYSICAL_MILLIS, MAX_LOGICAL_COUNTER, w("euw1-b")).unwrap();
        assert_eq!(EntityVersion::parse_sortable(&v.sortable()).unwrap(), v);
        for bad in [
            "",
            "0001700000000000-000000-use1-",
            "000170000000000x-000000-use1-a",
            "0001700000000000+000000-use1-a",
        ] {
            assert!(EntityVersion::parse_sortable(bad).is_err(), "{bad}");
        }
    }

    // Oracle: compare tuples directly, independent of the text encoding.
    #[test]
    fn text_order_matches_tuple_order_and_never_ties() {
        let writers = ["use1-a", "use1-b", "euw1-a", "AAAAAA", "zzzzzz"];
        let millis = [0u64, 1, 9, 10, 999, 1_700_000_000_000, MAX_PHYSICAL_MILLIS];
        let counters = [0u32, 1, 9, 10, 99_999, MAX_LOGICAL_COUNTER];
        let mut all = Vec::new();
        for m in millis {
            for c in counters {
                for wr in writers {
                    all.push((m, c, wr));
                }
            }
        }
        for a in &all {
            for b in &all {
                let va = EntityVersion::new(a.0, a.1, w(a.2)).unwrap();
                let vb = EntityVersion::new(b.0, b.1, w(b.2)).unwrap();
                let tuple = (a.0, a.1, a.2.as_bytes()).cmp(&(b.0, b.1, b.2.as_bytes()));
                assert_eq!(va.cmp(&vb), tuple);
                assert_eq!(va.sortable().as_bytes().cmp(vb.sortable().as_bytes()), tuple);
                if a != b {
                    assert_ne!(va, vb);
                }
            }
        }
    }

    #[test]
    fn generator_is_monotonic_under_stalled_clock() {
        let clock = ManualClock::new(100);
        let generator = VersionGenerator::new(w("use1-a"), Arc::new(clock.clone()));
        let mut prev = generator.next_version().unwrap();
        for step in 0..50 {
            if step % 7 == 0 {
                clock.advance(1);
            }
            let v = generator.next_version().unwrap();
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn observe_moves_past_foreign_versions() {
        let clock = ManualClock::new(100);
        let generator = VersionGenerator::new(w("use1-a"), Arc::new(clock));
        let foreign = EntityVersion::new(500, 7, w("zzzzzz")).unwrap();
        generator.observe(&foreign);
        let v = generator.next_version().unwrap();
        assert!(v > foreign);
    }
}
