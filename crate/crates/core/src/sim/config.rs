use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use super::lag::LagModel;
use crate::codec::{DEFAULT_MAX_CHUNK_BYTES, DEFAULT_MAX_ENTITY_BYTES};
use crate::version::WriterId;

/// Generator behind every random stream of a run.
pub const RNG_ALGORITHM: &str = "chacha8";

/// Invalid configuration, naming the offending field.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{field}: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    fn new(field: &str, message: impl Into<String>) -> Self {
        Self {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternSelection {
    Chunked,
    Pointer,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProbePolicy {
    /// One probe the instant the metadata or pointer becomes visible.
    Immediate,
    /// As `Immediate`, then up to `retries` further probes spaced
    /// `interval_seconds` apart while the read keeps failing.
    Retry { retries: u32, interval_seconds: f64 },
}

/// How lags are drawn for the log entries of one transaction. The
/// transaction becomes visible remotely once its slowest entry arrives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DbLagDraw {
    PerEntry,
    PerTransaction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub duration_seconds: f64,
    pub write_rate_per_second: f64,
    pub payload_bytes: usize,
    pub pattern: PatternSelection,
    pub db_lag: LagModel,
    pub object_lag: LagModel,
    pub probe_policy: ProbePolicy,
    /// Writer region first, reader region second. Each doubles as a
    /// six-character writer id.
    pub regions: Vec<String>,
    pub db_lag_draw: DbLagDraw,
    pub max_chunk_bytes: usize,
    pub rng: String,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            duration_seconds: 300.0,
            write_rate_per_second: 55.0,
            payload_bytes: 1_048_576,
            pattern: PatternSelection::Both,
            db_lag: SimConfig::reference_db_lag().with_cap(Some(5.0)),
            object_lag: SimConfig::reference_object_lag(),
            probe_policy: ProbePolicy::Immediate,
            regions: vec!["use1-a".to_string(), "euw1-a".to_string()],
            db_lag_draw: DbLagDraw::PerEntry,
            max_chunk_bytes: DEFAULT_MAX_CHUNK_BYTES,
            rng: RNG_ALGORITHM.to_string(),
        }
    }
}

impl SimConfig {
    /// Table replication lag fitted to p50/p95/p99 = 0.4 / 0.9 / 1.8 s.
    pub fn reference_db_lag() -> LagModel {
        LagModel::LognormalMixture {
            base_mu: -0.9262380773744595,
            base_sigma: 0.4561248150648252,
            spike_probability: 0.02,
            spike_mu: 0.5323418231857269,
            spike_sigma: 1.0,
            cap_seconds: None,
        }
    }

    /// Object replication lag fitted to p50/p95/p99 = 1.2 / 4.5 / 28.5 s.
    pub fn reference_object_lag() -> LagModel {
        LagModel::LognormalMixture {
            base_mu: 0.15628413366700916,
            base_sigma: 0.6757471497060611,
            spike_probability: 0.03,
            spike_mu: 2.9190749980064274,
            spike_sigma: 1.0,
            cap_seconds: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Self::resolve(Some(text), &[])
    }

    /// Parses an optional JSON document, applies `key=value` overrides
    /// (dotted keys reach into nested objects; values are JSON or bare
    /// strings), fills unspecified fields with defaults and validates.
    pub fn resolve(text: Option<&str>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut doc = match text {
            Some(t) => serde_json::from_str::<Value>(t)
                .map_err(|e| ConfigError::new("<document>", format!("line {} column {}: {e}", e.line(), e.column())))?,
            None => Value::Object(Map::new()),
        };
        if !doc.is_object() {
            return Err(ConfigError::new("<document>", "expected a JSON object"));
        }
        let defaults = serde_json::to_value(Self::default()).expect("default config serializes");
        for o in overrides {
            apply_override(&mut doc, &defaults, o)?;
        }
        let config: SimConfig = serde_path_to_error::deserialize(doc).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::new(
                if path == "." { "<document>" } else { &path },
                e.into_inner().to_string(),
            )
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |field: &str, x: f64| {
            if x.is_finite() && x > 0.0 {
                Ok(())
            } else {
                Err(ConfigError::new(field, format!("must be a positive number, got {x}")))
            }
        };
        positive("duration_seconds", self.duration_seconds)?;
        positive("write_rate_per_second", self.write_rate_per_second)?;
        if self.payload_bytes > DEFAULT_MAX_ENTITY_BYTES {
            return Err(ConfigError::new(
                "payload_bytes",
                format!("exceeds the {DEFAULT_MAX_ENTITY_BYTES}-byte entity cap"),
            ));
        }
        if self.max_chunk_bytes == 0 {
            return Err(ConfigError::new("max_chunk_bytes", "must be positive"));
        }
        self.db_lag
            .validate()
            .map_err(|e| ConfigError::new("db_lag", e.to_string()))?;
        self.object_lag
            .validate()
            .map_err(|e| ConfigError::new("object_lag", e.to_string()))?;
        if let ProbePolicy::Retry { interval_seconds, .. } = self.probe_policy {
            positive("probe_policy.interval_seconds", interval_seconds)?;
        }
        if self.regions.len() != 2 {
            return Err(ConfigError::new(
                "regions",
                format!("exactly 2 regions required, got {}", self.regions.len()),
            ));
        }
        for r in &self.regions {
            WriterId::new(r).map_err(|e| ConfigError::new("regions", e.to_string()))?;
        }
        if self.regions[0] == self.regions[1] {
            return Err(ConfigError::new("regions", "writer and reader regions must differ"));
        }
        if self.rng != RNG_ALGORITHM {
            return Err(ConfigError::new("rng", format!("only {RNG_ALGORITHM:?} is supported")));
        }
        Ok(())
    }

    pub fn writer_region(&self) -> &str {
        &self.regions[0]
    }

    pub fn reader_region(&self) -> &str {
        &self.regions[1]
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn apply_override(doc: &mut Value, defaults: &Value, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::new(assignment, "override must look like key=value"))?;
    let path: Vec<&str> = key.split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::new(key, "empty path segment"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));

    let mut node = doc;
    let mut default_node = Some(defaults);
    for (i, segment) in path.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| ConfigError::new(&path[..i].join("."), "is not an object"))?;
        default_node = default_node.and_then(|d| d.get(segment));
        if i + 1 == path.len() {
            obj.insert(segment.to_string(), value);
            return Ok(());
        }
        // Descending into an unspecified object starts from its default.
        node = obj
            .entry(segment.to_string())
            .or_insert_with(|| default_node.cloned().unwrap_or_else(|| Value::Object(Map::new())));
    }
    unreachable!("path has at least one segment")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::calibrate::{calibrate_lag_model, QuantileTargets};

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = SimConfig::default();
        c.validate().unwrap();
        assert_eq!(SimConfig::from_json(&c.to_json_pretty()).unwrap(), c);
        assert_eq!(SimConfig::from_json("{}").unwrap(), c);
    }

    #[test]
    fn reference_models_match_calibration() {
        let cases = [
            ((0.4, 0.9, 1.8), SimConfig::reference_db_lag()),
            ((1.2, 4.5, 28.5), SimConfig::reference_object_lag()),
        ];
        for ((a, b, c), frozen) in cases {
            let fitted = calibrate_lag_model(&QuantileTargets::new(a, b, c).unwrap())
                .unwrap()
                .model;
            for q in [0.5, 0.95, 0.99] {
                let (x, y) = (fitted.quantile(q), frozen.quantile(q));
                assert!((x / y - 1.0).abs() < 1e-6, "q={q}: fitted {x} frozen {y}");
            }
        }
    }

    #[test]
    fn overrides_apply_with_type_inference() {
        let c = SimConfig::resolve(
            None,
            &[
                "pattern=pointer".into(),
                "write_rate_per_second=55".into(),
                "duration_seconds=1800".into(),
                "db_lag.cap_seconds=2.5".into(),
                "probe_policy={\"kind\":\"retry\",\"retries\":3,\"interval_seconds\":1.0}".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.pattern, PatternSelection::Pointer);
        assert_eq!(c.duration_seconds, 1800.0);
        assert_eq!(c.db_lag.cap_seconds(), Some(2.5));
        assert_eq!(
            c.probe_policy,
            ProbePolicy::Retry {
                retries: 3,
                interval_seconds: 1.0
            }
        );
    }

    #[test]
    fn errors_name_the_field() {
        let err = SimConfig::resolve(None, &["write_rate_per_second=-1".into()]).unwrap_err();
        assert_eq!(err.field, "write_rate_per_second");
        let err = SimConfig::from_json(r#"{"bogus": 1}"#).unwrap_err();
        assert!(err.message.contains("bogus"), "{err}");
        let err = SimConfig::from_json(r#"{"db_lag": {"kind": "constant", "seconds": "x"}}"#).unwrap_err();
        // Tagged enums are buffered before decoding, so the path stops at the field.
        assert_eq!(err.field, "db_lag");
        let err = SimConfig::from_json("{\n  \"seed\": 1,\n  oops\n}").unwrap_err();
        assert!(err.message.starts_with("line 3"), "{err}");
        let err = SimConfig::resolve(None, &["regions=[\"use1-a\"]".into()]).unwrap_err();
        assert_eq!(err.field, "regions");
        let err = SimConfig::resolve(None, &["rng=pcg64".into()]).unwrap_err();
        assert_eq!(err.field, "rng");
    }
}
