//! Worst-case time to consistency: the table lag cap bounds chunked writes,
//! while the uncapped object channel leaves pointer writes with a long tail.
//!
//! ```text
//! cargo run --release --example worst_case_bounds
//! ```

use chunked_objects::sim::{run_pattern, Pattern, SimConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = SimConfig {
        duration_seconds: 600.0,
        payload_bytes: 64 * 1024,
        ..SimConfig::default()
    };
    for (label, cfg) in [
        ("table lag capped at 5 s", config.clone()),
        (
            "table lag uncapped",
            SimConfig {
                db_lag: config.db_lag.clone().with_cap(None),
                ..config.clone()
            },
        ),
    ] {
        let chunked = run_pattern(&cfg, Pattern::Chunked)?;
        let pointer = run_pattern(&cfg, Pattern::Pointer)?;
        println!("{label}: {} writes each", chunked.writes);
        for m in [&chunked, &pointer] {
            println!(
                "  {:<8} p50 {}  p99 {}  max {}",
                m.pattern.as_str(),
                m.ttc_percentile(0.50)?,
                m.ttc_percentile(0.99)?,
                m.max_ttc
            );
        }
    }
    Ok(())
}
