//! Replication simulator laws, checked per write against the drawn lags.

use chunked_objects::protocol::read_entity;
use chunked_objects::sim::{
    run_experiment, run_pattern, DbLagDraw, LagModel, Pattern, PatternSelection, ProbePolicy, SimConfig, SimTime,
    Simulation,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small(duration: f64) -> SimConfig {
    SimConfig {
        duration_seconds: duration,
        payload_bytes: 4_096,
        max_chunk_bytes: 1_000,
        ..SimConfig::default()
    }
}

fn simulate(config: &SimConfig, pattern: Pattern) -> Simulation {
    let mut sim = Simulation::new(config, pattern).unwrap();
    sim.run().unwrap();
    sim
}

#[test]
fn chunked_write_is_consistent_when_its_slowest_entry_lands() {
    let sim = simulate(&small(60.0), Pattern::Chunked);
    assert!(sim.traces().len() > 3_000);
    for t in sim.traces() {
        let slowest = *t.db_lags.iter().max().unwrap();
        assert_eq!(t.db_lags.len(), 6, "five chunks and the metadata");
        assert_eq!(t.ttc(), Some(slowest));
        assert_eq!(t.visible_at, t.complete_at, "one atomic group");
        assert_eq!((t.probes, t.failed_probes), (1, 0));
    }
}

#[test]
fn pointer_write_is_consistent_when_both_channels_land() {
    let sim = simulate(&small(60.0), Pattern::Pointer);
    let mut failures = 0;
    for t in sim.traces() {
        let (db, obj) = (t.db_lags[0], t.object_lag.unwrap());
        assert_eq!(t.ttc(), Some(db.max(obj)));
        assert_eq!(t.first_probe_failed, Some(obj > db));
        failures += t.failed_probes;
    }
    assert_eq!(sim.metrics().probe_404, failures as u64);
}

#[test]
fn per_transaction_draw_shares_one_lag_per_group() {
    let config = SimConfig {
        db_lag_draw: DbLagDraw::PerTransaction,
        ..small(30.0)
    };
    let sim = simulate(&config, Pattern::Chunked);
    for t in sim.traces() {
        assert!(t.db_lags.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(t.ttc(), Some(t.db_lags[0]));
    }
}

#[test]
fn regions_converge_after_quiesce() {
    let config = small(20.0);
    let chunked = simulate(&config, Pattern::Chunked);
    assert_eq!(chunked.reader_store().replay_log(), chunked.writer_store().replay_log());
    let last = chunked.traces().last().unwrap();
    let read = read_entity(chunked.reader_store(), last.entity_id.as_bytes(), 0).unwrap();
    assert_eq!(read.version, last.version);

    let pointer = simulate(&config, Pattern::Pointer);
    let (w, r) = (pointer.writer_bucket().entries(), pointer.reader_bucket().entries());
    assert_eq!(w, r);
    assert_eq!(pointer.reader_store().replay_log(), pointer.writer_store().replay_log());
}

#[test]
fn same_seed_same_metrics_different_seed_different_metrics() {
    let config = small(30.0);
    let a = run_experiment(&config).unwrap();
    assert_eq!(a, run_experiment(&config).unwrap());
    let b = run_experiment(&SimConfig { seed: 43, ..config }).unwrap();
    assert_ne!(a.pointer, b.pointer);
}

#[test]
fn pattern_selection_controls_what_runs() {
    let config = SimConfig {
        pattern: PatternSelection::Chunked,
        ..small(5.0)
    };
    let out = run_experiment(&config).unwrap();
    assert!(out.chunked.is_some() && out.pointer.is_none());
}

#[test]
fn retries_turn_pointer_failures_into_delayed_successes() {
    let immediate = run_pattern(&small(120.0), Pattern::Pointer).unwrap();
    let retrying = run_pattern(
        &SimConfig {
            probe_policy: ProbePolicy::Retry {
                retries: 3,
                interval_seconds: 1.0,
            },
            ..small(120.0)
        },
        Pattern::Pointer,
    )
    .unwrap();
    // Same seed, same lags: the first probes fail identically, retries add
    // probes and only some of them fail.
    assert_eq!(immediate.ttc_samples, retrying.ttc_samples);
    assert!(retrying.probe_total > immediate.probe_total);
    let final_failures = |m: &chunked_objects::sim::SimMetrics| m.probe_404 as f64 / m.writes as f64;
    assert!(final_failures(&retrying) > final_failures(&immediate));
    assert!(retrying.error_rate() < immediate.error_rate());
}

#[test]
fn uncapped_table_lag_loses_the_five_second_bound() {
    let config = SimConfig {
        db_lag: SimConfig::default().db_lag.with_cap(None),
        ..small(300.0)
    };
    let m = run_pattern(&config, Pattern::Chunked).unwrap();
    assert!(m.max_ttc > SimTime::from_secs_f64(5.0), "max {}", m.max_ttc);
    let capped = run_pattern(&small(300.0), Pattern::Chunked).unwrap();
    assert!(capped.max_ttc <= SimTime::from_secs_f64(5.0));
}

#[test]
fn pointer_failure_rate_matches_independent_lag_comparison() {
    let config = small(300.0);
    let m = run_pattern(&config, Pattern::Pointer).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = 400_000;
    let hits = (0..n)
        .filter(|_| {
            let db = config.db_lag.sample(&mut rng);
            let obj = config.object_lag.sample(&mut rng);
            // Lags resolve to whole microseconds before they are compared.
            SimTime::from_secs_f64(obj) > SimTime::from_secs_f64(db)
        })
        .count();
    let expected = hits as f64 / n as f64;
    let se = (expected * (1.0 - expected) / m.writes as f64).sqrt();
    assert!(
        (m.error_rate() - expected).abs() < 5.0 * se,
        "sim {} vs {expected}",
        m.error_rate()
    );
}

#[test]
fn constant_lags_give_exact_timings() {
    let config = SimConfig {
        db_lag: LagModel::constant(0.25),
        object_lag: LagModel::constant(2.0),
        ..small(10.0)
    };
    let m = run_pattern(&config, Pattern::Pointer).unwrap();
    assert!(m.ttc_samples.iter().all(|t| *t == SimTime::from_secs_f64(2.0)));
    assert_eq!(m.probe_404, m.writes);
    assert!(m.lag_deltas_micros.iter().all(|d| *d == 1_750_000));
}
