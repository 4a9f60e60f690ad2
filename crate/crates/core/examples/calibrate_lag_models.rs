//! Fit lag models to the published percentile series and check them by
//! sampling.
//!
//! ```text
//! cargo run --example calibrate_lag_models
//! ```

use chunked_objects::sim::{calibrate_lag_model, verify_calibration, QuantileTargets, SimConfig, VERIFICATION_DRAWS};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let series = [
        ("table replication", 0.4, 0.9, 1.8),
        ("object replication", 1.2, 4.5, 28.5),
    ];
    for (name, p50, p95, p99) in series {
        let targets = QuantileTargets::new(p50, p95, p99)?;
        let fit = calibrate_lag_model(&targets)?;
        let check = verify_calibration(&fit.model, &targets, VERIFICATION_DRAWS, 42);
        println!("{name}: {}", serde_json::to_string(&fit.model)?);
        println!(
            "  target {:?}  analytic {:.3?}  sampled {:.3?}  within tolerance: {}",
            targets.as_array(),
            fit.analytic,
            check.empirical,
            check.within_tolerance
        );
    }
    let defaults = SimConfig::default();
    println!(
        "simulator defaults use db_lag {}",
        serde_json::to_string(&defaults.db_lag)?
    );
    Ok(())
}
