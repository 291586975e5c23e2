//! Replaying web-server access logs as read/write workloads.
//!
//! Each request line becomes one event at a data node chosen by its client.
//! Two timestamp forms are understood: Common Log Format
//! (`[10/Oct/2000:13:55:36 -0700]`) and the day-relative
//! `[DD:HH:MM:SS]` form. Lines without a host and a bracketed timestamp
//! are counted as malformed and skipped.

use std::collections::{HashMap, HashSet};
use std::io::BufRead;

use chrono::DateTime;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{NodeId, Timestamp, Value};

use super::{EventKind, WorkloadError, WorkloadEvent};

/// One request: the client host and its timestamp in seconds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Request {
    pub client: String,
    pub ts: Timestamp,
}

/// Parsed requests in timestamp order, with timestamps relative to the
/// earliest one.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HttpTrace {
    pub requests: Vec<Request>,
    pub malformed: usize,
}

impl HttpTrace {
    /// Distinct clients in order of first appearance.
    pub fn clients(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for r in &self.requests {
            if seen.insert(r.client.as_str()) {
                out.push(r.client.as_str());
            }
        }
        out
    }
}

fn day_relative(s: &str) -> Option<i64> {
    let parts: Vec<i64> = s.split(':').map(|p| p.parse().ok()).collect::<Option<_>>()?;
    match parts[..] {
        [d, h, m, sec] if (0..24).contains(&h) && (0..60).contains(&m) && (0..61).contains(&sec) && d >= 0 => {
            Some(((d * 24 + h) * 60 + m) * 60 + sec)
        }
        _ => None,
    }
}

fn parse_line(line: &str) -> Option<(String, i64)> {
    let client = line.split_whitespace().next()?;
    let open = line.find('[')?;
    let close = open + line[open..].find(']')?;
    let stamp = line[open + 1..close].trim();
    let secs = match DateTime::parse_from_str(stamp, "%d/%b/%Y:%H:%M:%S %z") {
        Ok(t) => t.timestamp(),
        Err(_) => day_relative(stamp)?,
    };
    Some((client.to_string(), secs))
}

pub fn parse_http_trace<R: BufRead>(source: R) -> Result<HttpTrace, WorkloadError> {
    let mut raw = Vec::new();
    let mut malformed = 0;
    for line in source.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(&line) {
            Some(r) => raw.push(r),
            None => malformed += 1,
        }
    }
    let base = raw.iter().map(|r| r.1).min().unwrap_or(0);
    let mut requests: Vec<Request> = raw
        .into_iter()
        .map(|(client, secs)| Request { client, ts: (secs - base) as Timestamp })
        .collect();
    requests.sort_by_key(|r| r.ts);
    Ok(HttpTrace { requests, malformed })
}

/// Turns requests into reads and writes over `nodes`.
///
/// With at least as many clients as nodes, client `i` (by first appearance)
/// drives `nodes[i % n]`. With fewer, the nodes are dealt round-robin into
/// one group per client and each request picks a node of its client's group
/// at random. A request is a write with probability `ratio / (1 + ratio)`.
pub fn http_workload(trace: &HttpTrace, nodes: &[NodeId], ratio: f64, seed: u64) -> Result<Vec<WorkloadEvent>, WorkloadError> {
    if nodes.is_empty() {
        return Err(WorkloadError::Invalid("no nodes to map clients onto".into()));
    }
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(WorkloadError::Invalid(format!("ratio must be positive, got {ratio}")));
    }
    let clients = trace.clients();
    let c = clients.len().max(1);
    let groups: Vec<Vec<NodeId>> = if c >= nodes.len() {
        (0..c).map(|i| vec![nodes[i % nodes.len()]]).collect()
    } else {
        let mut g = vec![Vec::new(); c];
        for (j, &v) in nodes.iter().enumerate() {
            g[j % c].push(v);
        }
        g
    };
    let index: HashMap<&str, usize> = clients.iter().enumerate().map(|(i, &k)| (k, i)).collect();
    let share = ratio / (1.0 + ratio);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(trace
        .requests
        .iter()
        .map(|r| {
            let group = &groups[index[r.client.as_str()]];
            let node = group[rng.random_range(0..group.len())];
            if rng.random_bool(share) {
                let value: Value = rng.random_range(0..1000);
                WorkloadEvent { ts: r.ts, kind: EventKind::Write, node, node2: None, value: Some(value) }
            } else {
                WorkloadEvent { ts: r.ts, kind: EventKind::Read, node, node2: None, value: None }
            }
        })
        .collect())
}
