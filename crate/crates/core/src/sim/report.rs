use std::fmt::Write as _;

use serde::Deserialize;

use super::engine::SimMetrics;
use super::lag::SimTime;
use super::SimError;

pub const CSV_HEADER: [&str; 8] = ["pattern", "p50", "p95", "p99", "max", "probes", "errors", "error_rate"];

/// Rendered comparison table and metrics CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub text: String,
    pub csv: String,
}

/// One CSV row, as parsed back.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct MetricsRow {
    pub pattern: String,
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
    pub max: f64,
    pub probes: u64,
    pub errors: u64,
    pub error_rate: f64,
}

fn secs(s: f64) -> String {
    let micros = (s.abs() * 1e6).round() as i64;
    let sign = if s < 0.0 && micros != 0 { "-" } else { "" };
    format!("{sign}{}", SimTime(micros as u64))
}

fn percent(rate: f64) -> String {
    format!("{:.4}%", rate * 100.0)
}

fn ttc_or_zero(m: &SimMetrics, q: f64) -> SimTime {
    m.ttc_percentile(q).unwrap_or(SimTime::ZERO)
}

/// Table of lag deltas, 404 rates and TTC for whichever patterns ran, plus
/// the CSV with one row per pattern.
pub fn render_report(chunked: Option<&SimMetrics>, pointer: Option<&SimMetrics>) -> Report {
    let columns: Vec<(&str, Option<&SimMetrics>)> = vec![("Pointer pattern", pointer), ("Chunked pattern", chunked)];
    type Row = (&'static str, fn(&SimMetrics) -> String);
    let rows: [Row; 10] = [
        ("Replication domains", |m| {
            if m.pattern.as_str() == "pointer" {
                "2 (table + bucket)".into()
            } else {
                "1 (table)".into()
            }
        }),
        ("Writes", |m| m.writes.to_string()),
        ("Avg. Lag Delta (s)", |m| secs(m.avg_lag_delta_seconds())),
        ("Avg. Lag Delta, clamped (s)", |m| {
            secs(m.avg_lag_delta_clamped_seconds())
        }),
        ("p99 Lag Delta (s)", |m| secs(m.p99_lag_delta_seconds())),
        ("404 Error Rate", |m| percent(m.error_rate())),
        ("Probes (failed / total)", |m| {
            format!("{} / {}", m.probe_404, m.probe_total)
        }),
        ("TTC p50 / p95 / p99 (s)", |m| {
            format!(
                "{} / {} / {}",
                ttc_or_zero(m, 0.5),
                ttc_or_zero(m, 0.95),
                ttc_or_zero(m, 0.99)
            )
        }),
        ("Max TTC (s)", |m| m.max_ttc.to_string()),
        ("Writes still replicating", |m| {
            (m.writes - m.ttc_samples.len() as u64).to_string()
        }),
    ];

    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|(_, f)| columns.iter().map(|(_, m)| m.map_or("-".to_string(), f)).collect())
        .collect();
    let w0 = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0);
    let widths: Vec<usize> = (0..columns.len())
        .map(|c| {
            cells
                .iter()
                .map(|r| r[c].len())
                .chain([columns[c].0.len()])
                .max()
                .unwrap_or(0)
        })
        .collect();

    let mut text = String::from("Reader-region consistency, pointer vs chunked\n\n");
    let _ = write!(text, "{:w0$}", "Metric");
    for (c, (title, _)) in columns.iter().enumerate() {
        let _ = write!(text, "  {:>w$}", title, w = widths[c]);
    }
    text.push('\n');
    let _ = writeln!(text, "{}", "-".repeat(w0 + widths.iter().map(|w| w + 2).sum::<usize>()));
    for ((label, _), row) in rows.iter().zip(&cells) {
        let _ = write!(text, "{label:w0$}");
        for (c, cell) in row.iter().enumerate() {
            let _ = write!(text, "  {:>w$}", cell, w = widths[c]);
        }
        text.push('\n');
    }

    let mut csv = csv::Writer::from_writer(Vec::new());
    csv.write_record(CSV_HEADER).expect("in-memory csv");
    for m in [chunked, pointer].into_iter().flatten() {
        csv.write_record([
            m.pattern.as_str().to_string(),
            ttc_or_zero(m, 0.5).to_string(),
            ttc_or_zero(m, 0.95).to_string(),
            ttc_or_zero(m, 0.99).to_string(),
            m.max_ttc.to_string(),
            m.probe_total.to_string(),
            m.probe_404.to_string(),
            format!("{:?}", m.error_rate()),
        ])
        .expect("in-memory csv");
    }
    let csv = String::from_utf8(csv.into_inner().expect("in-memory csv")).expect("csv is utf-8");
    Report { text, csv }
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>, SimError> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<Vec<MetricsRow>, _>>()
        .map_err(|e| SimError::MetricsCsv(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Pattern;

    fn metrics(pattern: Pattern, ttc: &[u64], probes: u64, errors: u64) -> SimMetrics {
        let ttc_samples: Vec<SimTime> = ttc.iter().map(|&t| SimTime(t)).collect();
        SimMetrics {
            pattern,
            writes: ttc.len() as u64,
            max_ttc: ttc_samples.iter().copied().max().unwrap_or_default(),
            lag_deltas_micros: ttc.iter().map(|&t| t as i64 - 500_000).collect(),
            ttc_samples,
            probe_total: probes,
            probe_404: errors,
        }
    }

    #[test]
    fn csv_round_trips_exactly() {
        let c = metrics(Pattern::Chunked, &[400_001, 900_000, 1_800_000], 3, 0);
        let p = metrics(Pattern::Pointer, &[1_200_000, 4_500_000, 28_500_000, 190_000_123], 7, 3);
        let report = render_report(Some(&c), Some(&p));
        let rows = parse_metrics_csv(&report.csv).unwrap();
        assert_eq!(rows.len(), 2);
        for (row, m) in rows.iter().zip([&c, &p]) {
            assert_eq!(row.pattern, m.pattern.as_str());
            assert_eq!(row.p50, m.ttc_percentile(0.5).unwrap().as_secs_f64());
            assert_eq!(row.p99, m.ttc_percentile(0.99).unwrap().as_secs_f64());
            assert_eq!(row.max, m.max_ttc.as_secs_f64());
            assert_eq!((row.probes, row.errors), (m.probe_total, m.probe_404));
            assert_eq!(row.error_rate, m.error_rate());
        }
        assert!(report.csv.contains(",190.000123,7,3,0.42857142857142855"));
    }

    #[test]
    fn zero_metrics_render_zeroes() {
        let c = metrics(Pattern::Chunked, &[0, 0], 2, 0);
        let mut p = metrics(Pattern::Pointer, &[0, 0], 2, 0);
        p.lag_deltas_micros = vec![0, 0];
        let mut c2 = c.clone();
        c2.lag_deltas_micros = vec![0, 0];
        let r = render_report(Some(&c2), Some(&p));
        assert!(r.text.contains("0.0000%"));
        let delta_line = r.text.lines().find(|l| l.starts_with("Avg. Lag Delta (s)")).unwrap();
        assert_eq!(delta_line.matches("0.000000").count(), 2);
    }

    #[test]
    fn single_pattern_leaves_other_column_blank() {
        let c = metrics(Pattern::Chunked, &[1], 1, 0);
        let r = render_report(Some(&c), None);
        assert!(r
            .text
            .lines()
            .any(|l| l.starts_with("404 Error Rate") && l.contains(" -")));
        assert_eq!(parse_metrics_csv(&r.csv).unwrap().len(), 1);
    }

    #[test]
    fn negative_seconds_format() {
        assert_eq!(secs(-1.5), "-1.500000");
        assert_eq!(secs(-0.0000001), "0.000000");
    }
}
