//! Discrete-event core.
//!
//! Every write gets a fresh entity id, so a probe's outcome depends only on
//! that write's own deliveries. All writes share one seeded payload buffer.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use bytes::Bytes;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::config::{DbLagDraw, PatternSelection, ProbePolicy, SimConfig};
use super::lag::{LagModel, SimTime};
use super::lww::lww_prefers_incoming;
use super::stats::{mean, percentile};
use super::SimError;
use crate::codec::{parse_sort_key, ChunkingConfig, SortKey};
use crate::kv::{LogEntry, Mutation, ObjectStoreModel, RegionStore, StoredItem};
use crate::pointer::{read_pointer_entity, write_pointer_entity_with_digest, POINTER_SORT_KEY};
use crate::protocol::{write_prepared, CommitStatus, PreparedPayload, ATTR_STATUS, DEFAULT_MAX_FALLBACK};
use crate::version::{generate_version, EntityVersion, WriterId};

/// Wall-clock origin of simulated time, used when minting versions.
const EPOCH_MILLIS: u64 = 1_700_000_000_000;

const STREAM_ARRIVALS: u64 = 1;
const STREAM_DB_LAG: u64 = 2;
const STREAM_OBJECT_LAG: u64 = 3;
const STREAM_PAYLOAD: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pattern {
    Chunked,
    Pointer,
}

impl Pattern {
    pub fn as_str(self) -> &'static str {
        match self {
            Pattern::Chunked => "chunked",
            Pattern::Pointer => "pointer",
        }
    }
}

/// Per-write instrumentation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WriteTrace {
    pub entity_id: String,
    pub version: EntityVersion,
    pub written_at: SimTime,
    /// Drawn lag of each table log entry the write produced, in log order.
    pub db_lags: Vec<SimTime>,
    pub object_lag: Option<SimTime>,
    /// When the metadata or pointer record became visible in the reader region.
    pub visible_at: Option<SimTime>,
    /// When the last payload-bearing delivery landed.
    pub payload_at: Option<SimTime>,
    /// When every delivery of the write had landed.
    pub complete_at: Option<SimTime>,
    pub probes: u32,
    pub failed_probes: u32,
    pub first_probe_failed: Option<bool>,
    pending: u32,
}

impl WriteTrace {
    pub fn ttc(&self) -> Option<SimTime> {
        self.complete_at.map(|c| c - self.written_at)
    }

    /// Payload arrival minus metadata or pointer arrival, in microseconds.
    pub fn lag_delta_micros(&self) -> Option<i64> {
        match (self.payload_at, self.visible_at) {
            (Some(p), Some(v)) => Some(p.micros() as i64 - v.micros() as i64),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimMetrics {
    pub pattern: Pattern,
    pub writes: u64,
    /// Time-to-consistency of every write, in write order.
    pub ttc_samples: Vec<SimTime>,
    /// Unclamped payload-minus-visibility deltas, in write order.
    pub lag_deltas_micros: Vec<i64>,
    pub probe_total: u64,
    pub probe_404: u64,
    pub max_ttc: SimTime,
}

impl SimMetrics {
    pub fn ttc_percentile(&self, q: f64) -> Result<SimTime, SimError> {
        percentile(&self.ttc_samples, q)
    }

    pub fn error_rate(&self) -> f64 {
        if self.probe_total == 0 {
            0.0
        } else {
            self.probe_404 as f64 / self.probe_total as f64
        }
    }

    pub fn avg_lag_delta_seconds(&self) -> f64 {
        let secs: Vec<f64> = self.lag_deltas_micros.iter().map(|&d| d as f64 / 1e6).collect();
        mean(&secs).unwrap_or(0.0)
    }

    /// Average with negative deltas counted as zero.
    pub fn avg_lag_delta_clamped_seconds(&self) -> f64 {
        let secs: Vec<f64> = self.lag_deltas_micros.iter().map(|&d| d.max(0) as f64 / 1e6).collect();
        mean(&secs).unwrap_or(0.0)
    }

    pub fn p99_lag_delta_seconds(&self) -> f64 {
        percentile(&self.lag_deltas_micros, 0.99).map_or(0.0, |d| d as f64 / 1e6)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExperimentOutcome {
    pub chunked: Option<SimMetrics>,
    pub pointer: Option<SimMetrics>,
}

#[derive(Debug)]
enum Event {
    Arrival,
    DbDeliver {
        write: usize,
        mutations: Vec<Mutation>,
        makes_visible: bool,
        carries_payload: bool,
    },
    ObjectDeliver {
        write: usize,
        key: Vec<u8>,
    },
    Probe {
        write: usize,
        attempt: u32,
    },
}

struct Scheduled {
    at: SimTime,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// Reversed so the max-heap pops the earliest (at, seq) first.
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn draw(model: &LagModel, rng: &mut ChaCha8Rng) -> SimTime {
    SimTime::from_secs_f64(model.sample(rng))
}

/// The payload every simulated write carries.
pub fn sim_payload(seed: u64, len: usize) -> Bytes {
    let mut buf = vec![0u8; len];
    stream(seed, STREAM_PAYLOAD).fill_bytes(&mut buf);
    Bytes::from(buf)
}

pub struct Simulation {
    config: SimConfig,
    pattern: Pattern,
    writer_id: WriterId,
    payload: PreparedPayload,
    writer: RegionStore,
    reader: RegionStore,
    writer_bucket: ObjectStoreModel,
    reader_bucket: ObjectStoreModel,
    arrivals: ChaCha8Rng,
    db_rng: ChaCha8Rng,
    object_rng: ChaCha8Rng,
    interarrival: Exp<f64>,
    queue: BinaryHeap<Scheduled>,
    next_seq: u64,
    now: SimTime,
    arrival_clock: f64,
    last_version: Option<EntityVersion>,
    traces: Vec<WriteTrace>,
    probe_total: u64,
    probe_404: u64,
}

impl Simulation {
    pub fn new(config: &SimConfig, pattern: Pattern) -> Result<Self, SimError> {
        config.validate()?;
        let interarrival = Exp::new(config.write_rate_per_second)
            .map_err(|e| SimError::InvalidLagModel(format!("write rate: {e}")))?;
        let writer_id = WriterId::new(config.writer_region())
            .map_err(|e| SimError::InvalidLagModel(format!("writer region: {e}")))?;
        let mut sim = Self {
            pattern,
            writer_id,
            payload: PreparedPayload::new(
                sim_payload(config.seed, config.payload_bytes),
                &ChunkingConfig::with_chunk_bytes(config.max_chunk_bytes),
            )
            .map_err(|e| SimError::WritePath(e.to_string()))?,
            writer: RegionStore::with_defaults(config.writer_region()),
            reader: RegionStore::with_defaults(config.reader_region()),
            writer_bucket: ObjectStoreModel::new(config.writer_region()),
            reader_bucket: ObjectStoreModel::new(config.reader_region()),
            arrivals: stream(config.seed, STREAM_ARRIVALS),
            db_rng: stream(config.seed, STREAM_DB_LAG),
            object_rng: stream(config.seed, STREAM_OBJECT_LAG),
            interarrival,
            queue: BinaryHeap::new(),
            next_seq: 0,
            now: SimTime::ZERO,
            arrival_clock: 0.0,
            last_version: None,
            traces: Vec::new(),
            probe_total: 0,
            probe_404: 0,
            config: config.clone(),
        };
        sim.schedule_next_arrival();
        Ok(sim)
    }

    fn schedule(&mut self, at: SimTime, event: Event) {
        self.queue.push(Scheduled {
            at,
            seq: self.next_seq,
            event,
        });
        self.next_seq += 1;
    }

    fn schedule_next_arrival(&mut self) {
        self.arrival_clock += self.interarrival.sample(&mut self.arrivals);
        if self.arrival_clock < self.config.duration_seconds {
            self.schedule(SimTime::from_secs_f64(self.arrival_clock), Event::Arrival);
        }
    }

    /// Runs until every scheduled delivery and probe has been processed.
    pub fn run(&mut self) -> Result<(), SimError> {
        while let Some(Scheduled { at, event, .. }) = self.queue.pop() {
            self.now = at;
            match event {
                Event::Arrival => {
                    self.local_write()?;
                    self.schedule_next_arrival();
                }
                Event::DbDeliver {
                    write,
                    mutations,
                    makes_visible,
                    carries_payload,
                } => {
                    self.reader.apply_replicated(&mutations, lww_prefers_incoming)?;
                    if carries_payload {
                        self.traces[write].payload_at = Some(at);
                    }
                    if makes_visible {
                        self.traces[write].visible_at = Some(at);
                        self.schedule(at, Event::Probe { write, attempt: 0 });
                    }
                    self.delivered(write);
                }
                Event::ObjectDeliver { write, key } => {
                    let object = self
                        .writer_bucket
                        .object_get(&key)
                        .map_err(|e| SimError::WritePath(e.to_string()))?;
                    self.reader_bucket
                        .object_put(&key, object.payload, object.stamp)
                        .map_err(|e| SimError::WritePath(e.to_string()))?;
                    self.traces[write].payload_at = Some(at);
                    self.delivered(write);
                }
                Event::Probe { write, attempt } => self.probe(write, attempt),
            }
        }
        Ok(())
    }

    fn delivered(&mut self, write: usize) {
        let trace = &mut self.traces[write];
        trace.pending -= 1;
        if trace.pending == 0 {
            trace.complete_at = Some(self.now);
        }
    }

    fn local_write(&mut self) -> Result<(), SimError> {
        let now_millis = EPOCH_MILLIS + self.now.micros() / 1_000;
        let version = generate_version(now_millis, self.writer_id, self.last_version.as_ref())
            .map_err(|e| SimError::WritePath(e.to_string()))?;
        self.last_version = Some(version);
        let index = self.traces.len();
        let entity_id = format!("ent-{index:010}");
        let before = self.writer.last_seq();

        let written = match self.pattern {
            Pattern::Chunked => {
                write_prepared(&self.writer, entity_id.as_bytes(), &self.payload, version).map_err(|e| e.to_string())
            }
            Pattern::Pointer => write_pointer_entity_with_digest(
                &self.writer,
                &self.writer_bucket,
                entity_id.as_bytes(),
                self.payload.payload().clone(),
                version,
                self.payload.digest().clone(),
            )
            .map_err(|e| e.to_string()),
        };
        written.map_err(SimError::WritePath)?;

        let mut trace = WriteTrace {
            entity_id,
            version,
            written_at: self.now,
            db_lags: Vec::new(),
            object_lag: None,
            visible_at: None,
            payload_at: None,
            complete_at: None,
            probes: 0,
            failed_probes: 0,
            first_probe_failed: None,
            pending: 0,
        };

        // The object is put before the pointer, so at equal delivery times it
        // is applied first.
        if self.pattern == Pattern::Pointer {
            let lag = draw(&self.config.object_lag, &mut self.object_rng);
            trace.object_lag = Some(lag);
            trace.pending += 1;
            let key = crate::pointer::PointerRecord::object_key_for(trace.entity_id.as_bytes(), &version);
            self.schedule(self.now + lag, Event::ObjectDeliver { write: index, key });
        }

        let entries = self.writer.log_since(before);
        let groups = group_by_txn(&entries);
        let payload_group = groups
            .iter()
            .rposition(|g| !g.iter().any(|e| makes_visible(&e.mutation)));
        for (gi, group) in groups.iter().enumerate() {
            let lags: Vec<SimTime> = match self.config.db_lag_draw {
                DbLagDraw::PerEntry => group
                    .iter()
                    .map(|_| draw(&self.config.db_lag, &mut self.db_rng))
                    .collect(),
                DbLagDraw::PerTransaction => vec![draw(&self.config.db_lag, &mut self.db_rng); group.len()],
            };
            let delay = lags.iter().copied().max().unwrap_or(SimTime::ZERO);
            trace.db_lags.extend(lags);
            let visible = group.iter().any(|e| makes_visible(&e.mutation));
            let carries_payload = match self.pattern {
                Pattern::Pointer => false,
                // The commit group carries the chunks on the transactional path;
                // on the two-phase path the last chunk batch does.
                Pattern::Chunked => payload_group.map_or(visible, |p| p == gi),
            };
            trace.pending += 1;
            self.schedule(
                self.now + delay,
                Event::DbDeliver {
                    write: index,
                    mutations: group.iter().map(|e| e.mutation.clone()).collect(),
                    makes_visible: visible,
                    carries_payload,
                },
            );
        }
        self.traces.push(trace);
        Ok(())
    }

    fn probe(&mut self, write: usize, attempt: u32) {
        let trace = &self.traces[write];
        let id = trace.entity_id.as_bytes();
        let ok = match self.pattern {
            Pattern::Chunked => crate::protocol::read_entity(&self.reader, id, DEFAULT_MAX_FALLBACK)
                .is_ok_and(|r| r.version == trace.version),
            Pattern::Pointer => {
                read_pointer_entity(&self.reader, &self.reader_bucket, id).is_ok_and(|r| r.version == trace.version)
            }
        };
        self.probe_total += 1;
        let trace = &mut self.traces[write];
        trace.probes += 1;
        if attempt == 0 {
            trace.first_probe_failed = Some(!ok);
        }
        if !ok {
            self.probe_404 += 1;
            trace.failed_probes += 1;
            if let ProbePolicy::Retry {
                retries,
                interval_seconds,
            } = self.config.probe_policy
            {
                if attempt < retries {
                    let at = self.now + SimTime::from_secs_f64(interval_seconds);
                    self.schedule(
                        at,
                        Event::Probe {
                            write,
                            attempt: attempt + 1,
                        },
                    );
                }
            }
        }
    }

    pub fn traces(&self) -> &[WriteTrace] {
        &self.traces
    }

    pub fn writer_store(&self) -> &RegionStore {
        &self.writer
    }

    pub fn reader_store(&self) -> &RegionStore {
        &self.reader
    }

    pub fn writer_bucket(&self) -> &ObjectStoreModel {
        &self.writer_bucket
    }

    pub fn reader_bucket(&self) -> &ObjectStoreModel {
        &self.reader_bucket
    }

    /// Metrics over writes whose deliveries have all landed.
    pub fn metrics(&self) -> SimMetrics {
        let done = || self.traces.iter().filter(|t| t.complete_at.is_some());
        let ttc_samples: Vec<SimTime> = done().filter_map(WriteTrace::ttc).collect();
        SimMetrics {
            pattern: self.pattern,
            writes: self.traces.len() as u64,
            max_ttc: ttc_samples.iter().copied().max().unwrap_or(SimTime::ZERO),
            lag_deltas_micros: done().filter_map(WriteTrace::lag_delta_micros).collect(),
            ttc_samples,
            probe_total: self.probe_total,
            probe_404: self.probe_404,
        }
    }
}

fn makes_visible(m: &Mutation) -> bool {
    let Mutation::Put(item) = m else { return false };
    is_visibility_record(item)
}

/// A committed metadata record or a pointer record.
fn is_visibility_record(item: &StoredItem) -> bool {
    let sk = item.key().sort_key();
    if sk == POINTER_SORT_KEY.as_bytes() {
        return true;
    }
    matches!(parse_sort_key(sk), Ok(SortKey::Meta { .. }))
        && item.get_str(ATTR_STATUS).and_then(CommitStatus::parse) == Some(CommitStatus::Committed)
}

fn group_by_txn(entries: &[LogEntry]) -> Vec<&[LogEntry]> {
    entries.chunk_by(|a, b| a.txn == b.txn).collect()
}

pub fn run_pattern(config: &SimConfig, pattern: Pattern) -> Result<SimMetrics, SimError> {
    let mut sim = Simulation::new(config, pattern)?;
    sim.run()?;
    Ok(sim.metrics())
}

/// Runs the selected patterns. When both are selected they run on separate
/// threads; each run owns its stores and random streams.
pub fn run_experiment(config: &SimConfig) -> Result<ExperimentOutcome, SimError> {
    config.validate()?;
    match config.pattern {
        PatternSelection::Chunked => Ok(ExperimentOutcome {
            chunked: Some(run_pattern(config, Pattern::Chunked)?),
            pointer: None,
        }),
        PatternSelection::Pointer => Ok(ExperimentOutcome {
            chunked: None,
            pointer: Some(run_pattern(config, Pattern::Pointer)?),
        }),
        PatternSelection::Both => std::thread::scope(|s| {
            let pointer = s.spawn(|| run_pattern(config, Pattern::Pointer));
            let chunked = run_pattern(config, Pattern::Chunked)?;
            let pointer = pointer.join().expect("pointer run panicked")?;
            Ok(ExperimentOutcome {
                chunked: Some(chunked),
                pointer: Some(pointer),
            })
        }),
    }
}
