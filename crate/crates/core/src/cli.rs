//! Command-line driver. Exit codes: 0 success, 1 internal or I/O failure,
//! 2 configuration or validation error, 3 calibration failure, 4 entity not
//! found, 5 entity corrupt.

use std::ffi::OsString;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use bytes::Bytes;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::codec::ChunkingConfig;
use crate::kv::{RegionStore, StoreLimits};
use crate::protocol::{gc_versions, list_versions, read_entity, write_entity, ProtocolError, DEFAULT_MAX_FALLBACK};
use crate::sim::{
    calibrate_lag_model, run_experiment, verify_calibration, Calibration, QuantileTargets, SimConfig, SimError,
    Verification,
};
use crate::version::{generate_version, Clock, SystemClock, WriterId};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_CALIBRATION: i32 = 3;
pub const EXIT_NOT_FOUND: i32 = 4;
pub const EXIT_CORRUPT: i32 = 5;

#[derive(Debug, Parser)]
#[command(
    name = "chunked-objects",
    version,
    about = "Chunked large objects over an item-size-limited key-value store"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the two-region replication simulation and write report.txt,
    /// metrics.csv and resolved.json.
    Simulate(SimulateArgs),
    /// Fit a lag model to p50/p95/p99 targets and verify it by sampling.
    Calibrate(CalibrateArgs),
    /// Write a file through the chunked protocol, read it back and verify.
    Demo(DemoArgs),
    /// Write an entity from a file into a snapshot-backed store.
    StorePut(StorePutArgs),
    /// Read an entity from a snapshot-backed store into a file.
    StoreGet(StoreGetArgs),
    /// Delete superseded versions of an entity.
    Gc(GcArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "sim-out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Override a config field, e.g. `--set db_lag.cap_seconds=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    p50: f64,
    p95: f64,
    p99: f64,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = crate::sim::VERIFICATION_DRAWS)]
    draws: usize,
}

#[derive(Debug, Args)]
struct WriteOptions {
    #[arg(long, default_value_t = crate::codec::DEFAULT_MAX_CHUNK_BYTES)]
    chunk_bytes: usize,
    /// Six-character writer id stamped into versions.
    #[arg(long, default_value = "local1")]
    writer: String,
    /// Clock reading for the version; the system clock when omitted.
    #[arg(long)]
    now_millis: Option<u64>,
}

#[derive(Debug, Args)]
struct DemoArgs {
    payload: PathBuf,
    #[command(flatten)]
    write: WriteOptions,
    #[arg(long, default_value = "demo-out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct StorePutArgs {
    #[arg(long)]
    snapshot: PathBuf,
    id: String,
    input: PathBuf,
    #[command(flatten)]
    write: WriteOptions,
}

#[derive(Debug, Args)]
struct StoreGetArgs {
    #[arg(long)]
    snapshot: PathBuf,
    id: String,
    output: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MAX_FALLBACK)]
    max_fallback: usize,
}

#[derive(Debug, Args)]
struct GcArgs {
    #[arg(long)]
    snapshot: PathBuf,
    id: String,
    #[arg(long, default_value_t = 1)]
    keep: usize,
}

struct Failure {
    code: i32,
    message: String,
}

fn fail(code: i32, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

fn io_fail(path: &Path, e: std::io::Error) -> Failure {
    fail(EXIT_INTERNAL, format!("{}: {e}", path.display()))
}

fn protocol_fail(e: ProtocolError) -> Failure {
    let code = match e {
        ProtocolError::EntityNotFound => EXIT_NOT_FOUND,
        ProtocolError::EntityCorrupt { .. } => EXIT_CORRUPT,
        ProtocolError::EntityTooLarge { .. } | ProtocolError::Config(_) | ProtocolError::InvalidArgument(_) => {
            EXIT_CONFIG
        }
        _ => EXIT_INTERNAL,
    };
    fail(code, e.to_string())
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(stderr, "{e}");
                return EXIT_CONFIG;
            }
            let _ = write!(stdout, "{e}");
            return EXIT_OK;
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a, stdout),
        Command::Calibrate(a) => calibrate(a, stdout),
        Command::Demo(a) => demo(a, stdout),
        Command::StorePut(a) => store_put(a, stdout),
        Command::StoreGet(a) => store_get(a, stdout),
        Command::Gc(a) => gc(a, stdout),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message);
            f.code
        }
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| io_fail(path, e))
}

fn simulate(args: SimulateArgs, stdout: &mut dyn Write) -> Result<(), Failure> {
    let text = match &args.config {
        Some(p) => Some(fs::read_to_string(p).map_err(|e| io_fail(p, e))?),
        None => None,
    };
    let mut overrides = args.overrides;
    if let Some(seed) = args.seed {
        overrides.push(format!("seed={seed}"));
    }
    let config = SimConfig::resolve(text.as_deref(), &overrides)
        .map_err(|e| fail(EXIT_CONFIG, format!("config error in {e}")))?;
    let outcome = run_experiment(&config).map_err(|e| match e {
        SimError::Config(c) => fail(EXIT_CONFIG, format!("config error in {c}")),
        other => fail(EXIT_INTERNAL, other.to_string()),
    })?;
    let report = crate::sim::render_report(outcome.chunked.as_ref(), outcome.pointer.as_ref());
    let preamble = format!(
        "seed {} ({}), {} s at {} writes/s, {}-byte payloads, probe policy {}\n\n",
        config.seed,
        config.rng,
        config.duration_seconds,
        config.write_rate_per_second,
        config.payload_bytes,
        serde_json::to_string(&config.probe_policy).expect("policy serializes"),
    );
    let text = preamble + &report.text;

    fs::create_dir_all(&args.out).map_err(|e| io_fail(&args.out, e))?;
    write_file(&args.out.join("report.txt"), text.as_bytes())?;
    write_file(&args.out.join("metrics.csv"), report.csv.as_bytes())?;
    write_file(
        &args.out.join("resolved.json"),
        (config.to_json_pretty() + "\n").as_bytes(),
    )?;
    let _ = write!(stdout, "{text}");
    Ok(())
}

#[derive(Serialize)]
struct CalibrationOutput<'a> {
    #[serde(flatten)]
    calibration: &'a Calibration,
    verification: &'a Verification,
}

fn calibrate(args: CalibrateArgs, stdout: &mut dyn Write) -> Result<(), Failure> {
    let targets = QuantileTargets::new(args.p50, args.p95, args.p99).map_err(|e| fail(EXIT_CONFIG, e.to_string()))?;
    let calibration = calibrate_lag_model(&targets).map_err(|e| fail(EXIT_CALIBRATION, e.to_string()))?;
    let verification = verify_calibration(&calibration.model, &targets, args.draws, args.seed);
    let json = serde_json::to_string_pretty(&CalibrationOutput {
        calibration: &calibration,
        verification: &verification,
    })
    .expect("calibration serializes")
        + "\n";
    match &args.out {
        Some(p) => write_file(p, json.as_bytes())?,
        None => {
            let _ = write!(stdout, "{json}");
        }
    }
    if !verification.within_tolerance {
        return Err(fail(
            EXIT_CALIBRATION,
            format!("empirical quantiles {:?} miss the targets", verification.empirical),
        ));
    }
    Ok(())
}

fn load_store(path: &Path, writer: &str) -> Result<RegionStore, Failure> {
    match fs::File::open(path) {
        Ok(f) => RegionStore::load_snapshot(writer, StoreLimits::default(), BufReader::new(f))
            .map_err(|e| fail(EXIT_INTERNAL, format!("{}: {e}", path.display()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(RegionStore::with_defaults(writer)),
        Err(e) => Err(io_fail(path, e)),
    }
}

fn save_store(store: &RegionStore, path: &Path) -> Result<(), Failure> {
    let tmp = path.with_extension("tmp");
    write_file(&tmp, store.snapshot_string().as_bytes())?;
    fs::rename(&tmp, path).map_err(|e| io_fail(path, e))
}

/// Writes `payload` as a new version of `id`, newer than any version already
/// stored for it.
fn put_entity(
    store: &RegionStore,
    id: &str,
    payload: Bytes,
    opts: &WriteOptions,
) -> Result<crate::WriteReceipt, Failure> {
    let writer = WriterId::new(&opts.writer).map_err(|e| fail(EXIT_CONFIG, e.to_string()))?;
    let chunking = ChunkingConfig::with_chunk_bytes(opts.chunk_bytes);
    if payload.len() > chunking.max_entity_bytes {
        return Err(protocol_fail(ProtocolError::EntityTooLarge {
            size: payload.len(),
            limit: chunking.max_entity_bytes,
        }));
    }
    let now = opts.now_millis.unwrap_or_else(|| SystemClock.now_millis());
    let newest = list_versions(store, id.as_bytes()).last().map(|s| s.version);
    let version = generate_version(now, writer, newest.as_ref()).map_err(|e| fail(EXIT_INTERNAL, e.to_string()))?;
    write_entity(store, id.as_bytes(), payload, &chunking, version).map_err(protocol_fail)
}

fn read_payload(path: &Path) -> Result<Bytes, Failure> {
    fs::read(path).map(Bytes::from).map_err(|e| io_fail(path, e))
}

fn demo(args: DemoArgs, stdout: &mut dyn Write) -> Result<(), Failure> {
    let payload = read_payload(&args.payload)?;
    let store = RegionStore::with_defaults(args.write.writer.clone());
    let receipt = put_entity(&store, "demo", payload.clone(), &args.write)?;
    let _ = writeln!(
        stdout,
        "version {}\nchunk_count {}\npath {}",
        receipt.version,
        receipt.chunk_count,
        receipt.path_taken.as_str()
    );
    let read = read_entity(&store, b"demo", DEFAULT_MAX_FALLBACK).map_err(protocol_fail)?;
    if read.payload != payload {
        return Err(fail(EXIT_INTERNAL, "read-back differs from the written payload"));
    }
    fs::create_dir_all(&args.out).map_err(|e| io_fail(&args.out, e))?;
    let snapshot = args.out.join("store.ndjson");
    save_store(&store, &snapshot)?;
    let _ = writeln!(
        stdout,
        "verified {} bytes\nsnapshot {}",
        read.payload.len(),
        snapshot.display()
    );
    Ok(())
}

fn store_put(args: StorePutArgs, stdout: &mut dyn Write) -> Result<(), Failure> {
    let payload = read_payload(&args.input)?;
    let store = load_store(&args.snapshot, &args.write.writer)?;
    let receipt = put_entity(&store, &args.id, payload, &args.write)?;
    save_store(&store, &args.snapshot)?;
    let _ = writeln!(
        stdout,
        "version {} chunk_count {} path {}",
        receipt.version,
        receipt.chunk_count,
        receipt.path_taken.as_str()
    );
    Ok(())
}

fn store_get(args: StoreGetArgs, stdout: &mut dyn Write) -> Result<(), Failure> {
    let store = load_store(&args.snapshot, "local1")?;
    let read = read_entity(&store, args.id.as_bytes(), args.max_fallback).map_err(protocol_fail)?;
    write_file(&args.output, &read.payload)?;
    let _ = writeln!(
        stdout,
        "version {} fallback_depth {} bytes {}",
        read.version,
        read.fallback_depth,
        read.payload.len()
    );
    Ok(())
}

fn gc(args: GcArgs, stdout: &mut dyn Write) -> Result<(), Failure> {
    let store = load_store(&args.snapshot, "local1")?;
    let before = list_versions(&store, args.id.as_bytes());
    if before.is_empty() {
        return Err(protocol_fail(ProtocolError::EntityNotFound));
    }
    let deleted = gc_versions(&store, args.id.as_bytes(), args.keep).map_err(protocol_fail)?;
    let after = list_versions(&store, args.id.as_bytes());
    for v in before.iter().filter(|b| !after.iter().any(|a| a.version == b.version)) {
        let _ = writeln!(stdout, "deleted version {} ({} records)", v.version, v.records);
    }
    let _ = writeln!(stdout, "{deleted} records deleted");
    save_store(&store, &args.snapshot)
}
