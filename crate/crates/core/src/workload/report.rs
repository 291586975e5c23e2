//! Benchmark metrics and their JSON, CSV and text renderings.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::time::Duration;

use serde::Serialize;

use super::{EventKind, WorkloadError};

/// Latency statistics in microseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LatencySummary {
    pub count: usize,
    pub mean_us: f64,
    pub p95_us: f64,
    pub max_us: f64,
}

impl LatencySummary {
    /// Nearest-rank p95 over the samples.
    pub fn from_samples(samples: &mut [Duration]) -> Self {
        if samples.is_empty() {
            return LatencySummary::default();
        }
        samples.sort_unstable();
        let us = |d: Duration| d.as_secs_f64() * 1e6;
        let n = samples.len();
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        LatencySummary {
            count: n,
            mean_us: samples.iter().map(|&d| us(d)).sum::<f64>() / n as f64,
            p95_us: us(samples[rank - 1]),
            max_us: us(samples[n - 1]),
        }
    }
}

/// Per-kind event accounting: every emitted event is either consumed or
/// rejected.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct OpCount {
    pub emitted: u64,
    pub consumed: u64,
    pub rejected: u64,
}

impl OpCount {
    pub fn balanced(&self) -> bool {
        self.emitted == self.consumed + self.rejected
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricsReport {
    pub overlay: String,
    pub plan: String,
    pub aggregate: String,
    pub threads: usize,
    pub ratio: Option<f64>,
    pub wall_ms: f64,
    /// Consumed events per second of replay.
    pub throughput: f64,
    pub read_latency: LatencySummary,
    pub write_latency: LatencySummary,
    pub ops: BTreeMap<EventKind, OpCount>,
    pub sharing_index: f64,
    pub mean_depth: f64,
    pub overlay_nodes: usize,
    pub overlay_edges: usize,
    pub push_nodes: usize,
    pub pull_nodes: usize,
    pub plan_cost: f64,
    /// Wall time per preparation or replay phase, in milliseconds.
    pub phases: BTreeMap<String, f64>,
}

impl MetricsReport {
    pub fn consumed(&self) -> u64 {
        self.ops.values().map(|c| c.consumed).sum()
    }

    pub fn rejected(&self) -> u64 {
        self.ops.values().map(|c| c.rejected).sum()
    }

    pub fn balanced(&self) -> bool {
        self.ops.values().all(OpCount::balanced)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Text,
    Json,
    Csv,
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportFormat::Text => "text",
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
        })
    }
}

impl FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            _ => Err(format!("unknown report format {s:?}; expected text|json|csv")),
        }
    }
}

const CSV_HEADER: [&str; 18] = [
    "overlay",
    "plan",
    "aggregate",
    "threads",
    "ratio",
    "wall_ms",
    "throughput",
    "read_mean_us",
    "read_p95_us",
    "read_max_us",
    "write_mean_us",
    "write_p95_us",
    "consumed",
    "rejected",
    "sharing_index",
    "mean_depth",
    "push_nodes",
    "plan_cost",
];

fn csv_row(r: &MetricsReport) -> Vec<String> {
    vec![
        r.overlay.clone(),
        r.plan.clone(),
        r.aggregate.clone(),
        r.threads.to_string(),
        r.ratio.map(|x| x.to_string()).unwrap_or_default(),
        format!("{:.3}", r.wall_ms),
        format!("{:.1}", r.throughput),
        format!("{:.3}", r.read_latency.mean_us),
        format!("{:.3}", r.read_latency.p95_us),
        format!("{:.3}", r.read_latency.max_us),
        format!("{:.3}", r.write_latency.mean_us),
        format!("{:.3}", r.write_latency.p95_us),
        r.consumed().to_string(),
        r.rejected().to_string(),
        format!("{:.4}", r.sharing_index),
        format!("{:.3}", r.mean_depth),
        r.push_nodes.to_string(),
        format!("{:.3}", r.plan_cost),
    ]
}

fn text(r: &MetricsReport, out: &mut String) {
    let ratio = r.ratio.map(|x| format!(" ratio={x}")).unwrap_or_default();
    let _ = writeln!(out, "overlay={} plan={} agg={} threads={}{ratio}", r.overlay, r.plan, r.aggregate, r.threads);
    let _ = writeln!(out, "  throughput  {:.1} ops/s over {:.1} ms", r.throughput, r.wall_ms);
    for (name, l) in [("read", &r.read_latency), ("write", &r.write_latency)] {
        let _ = writeln!(
            out,
            "  {name:<5} lat  n={} mean={:.2}us p95={:.2}us max={:.2}us",
            l.count, l.mean_us, l.p95_us, l.max_us
        );
    }
    let ops: Vec<String> = r
        .ops
        .iter()
        .map(|(k, c)| format!("{k}={}/{}", c.consumed, c.emitted))
        .collect();
    let _ = writeln!(out, "  ops         {}", ops.join(" "));
    let _ = writeln!(
        out,
        "  overlay     nodes={} edges={} SI={:.4} depth={:.2} push={} pull={} cost={:.3}",
        r.overlay_nodes, r.overlay_edges, r.sharing_index, r.mean_depth, r.push_nodes, r.pull_nodes, r.plan_cost
    );
    if !r.phases.is_empty() {
        let phases: Vec<String> = r.phases.iter().map(|(k, v)| format!("{k}={v:.1}ms")).collect();
        let _ = writeln!(out, "  phases      {}", phases.join(" "));
    }
}

pub fn render(reports: &[MetricsReport], format: ReportFormat) -> Result<String, WorkloadError> {
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(reports)? + "\n"),
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(CSV_HEADER)?;
            for r in reports {
                w.write_record(csv_row(r))?;
            }
            let bytes = w.into_inner().map_err(|e| WorkloadError::Io(e.into_error()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
        ReportFormat::Text => {
            let mut out = String::new();
            for r in reports {
                text(r, &mut out);
            }
            Ok(out)
        }
    }
}
