//! Metric rows, their CSV form and summary statistics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// One sample: `(time, metric, device, value)`. `device` is empty for
/// metrics that are not tied to a device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub t_s: f64,
    pub metric: String,
    pub device: String,
    pub value: f64,
}

pub const RESPONSE: &str = "response_ms";
pub const RESIDENT: &str = "resident_mb";
pub const OFFLOAD_BYTES: &str = "offload_bytes";
pub const SEARCH_EXPANSIONS: &str = "search_expansions";
pub const PLAN_MOVES: &str = "plan_moves";
pub const PLAN_OVERHEAD: &str = "plan_overhead_ms";
pub const ACK: &str = "ack_atom";
pub const EVICTION: &str = "evict_atom";
pub const EVENT_PREFIX: &str = "event:";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub strategy: String,
    pub rows: Vec<MetricRow>,
}

impl MetricsLog {
    pub fn new(strategy: impl Into<String>) -> Self {
        MetricsLog { strategy: strategy.into(), rows: Vec::new() }
    }

    pub fn push(&mut self, t_s: f64, metric: &str, device: &str, value: f64) {
        self.rows.push(MetricRow { t_s, metric: metric.to_string(), device: device.to_string(), value });
    }

    pub fn rows_of<'a>(&'a self, metric: &'a str) -> impl Iterator<Item = &'a MetricRow> + 'a {
        self.rows.iter().filter(move |r| r.metric == metric)
    }

    /// `(time, value)` pairs of one metric on one device.
    pub fn series(&self, metric: &str, device: &str) -> Vec<(f64, f64)> {
        self.rows_of(metric).filter(|r| r.device == device).map(|r| (r.t_s, r.value)).collect()
    }

    pub fn responses(&self) -> Vec<(f64, f64)> {
        self.series(RESPONSE, "")
    }

    pub fn event_markers(&self) -> Vec<&MetricRow> {
        self.rows.iter().filter(|r| r.metric.starts_with(EVENT_PREFIX)).collect()
    }

    /// CSV with a `t_s,metric,device,value` header.
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.write_record(["t_s", "metric", "device", "value"]).expect("in-memory write");
        for r in &self.rows {
            w.serialize(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }

    pub fn summary(&self) -> Summary {
        Summary::from_rows(&self.strategy, &self.rows)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub strategy: String,
    pub requests: usize,
    pub mean_response_ms: f64,
    pub p50_response_ms: f64,
    pub p95_response_ms: f64,
    pub max_response_ms: f64,
    /// Per device id.
    pub peak_resident_mb: BTreeMap<String, f64>,
    pub offload_bytes: f64,
    pub searches: usize,
    pub evictions: usize,
}

/// Nearest-rank percentile of sorted values; NaN when empty.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

impl Summary {
    pub fn from_rows(strategy: &str, rows: &[MetricRow]) -> Summary {
        let mut resp: Vec<f64> = rows.iter().filter(|r| r.metric == RESPONSE).map(|r| r.value).collect();
        resp.sort_by(f64::total_cmp);
        let mut peak = BTreeMap::new();
        for r in rows.iter().filter(|r| r.metric == RESIDENT) {
            let e = peak.entry(r.device.clone()).or_insert(0.0f64);
            *e = e.max(r.value);
        }
        let mean = if resp.is_empty() { f64::NAN } else { resp.iter().sum::<f64>() / resp.len() as f64 };
        Summary {
            strategy: strategy.to_string(),
            requests: resp.len(),
            mean_response_ms: mean,
            p50_response_ms: percentile(&resp, 50.0),
            p95_response_ms: percentile(&resp, 95.0),
            max_response_ms: resp.last().copied().unwrap_or(f64::NAN),
            peak_resident_mb: peak,
            offload_bytes: rows.iter().filter(|r| r.metric == OFFLOAD_BYTES).fold(0.0, |acc, r| acc + r.value),
            searches: rows.iter().filter(|r| r.metric == SEARCH_EXPANSIONS).count(),
            evictions: rows.iter().filter(|r| r.metric == EVICTION).count(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&v, 50.0), 2.0);
        assert_eq!(percentile(&v, 95.0), 4.0);
        assert!(percentile(&[], 50.0).is_nan());
    }

    #[test]
    fn csv_shape() {
        let mut log = MetricsLog::new("x");
        log.push(0.5, RESPONSE, "", 12.25);
        assert_eq!(log.to_csv(), "t_s,metric,device,value\n0.5,response_ms,,12.25\n");
    }
}
