//! Run both patterns through the two-region simulator and print the
//! comparison table. Pass a duration in seconds (default 1800).
//!
//! ```text
//! cargo run --release --example compare_patterns -- 600
//! ```

use chunked_objects::sim::{render_report, run_experiment, SimConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let duration_seconds = match std::env::args().nth(1) {
        Some(s) => s.parse()?,
        None => 1800.0,
    };
    let config = SimConfig {
        duration_seconds,
        ..SimConfig::default()
    };
    let started = std::time::Instant::now();
    let outcome = run_experiment(&config)?;
    let report = render_report(outcome.chunked.as_ref(), outcome.pointer.as_ref());
    println!("{}", report.text);
    println!("{}", report.csv);
    println!("simulated {duration_seconds} s in {:.1?}", started.elapsed());
    Ok(())
}
