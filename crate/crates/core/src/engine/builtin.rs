//! Built-in aggregates: SUM, COUNT, MIN, MAX and TOP-K.
//!
//! MIN, MAX and TOP-K keep an exact multiset of values so that deletions
//! (window expiry) are exact. Counts are signed so a delete that overtakes
//! its insert on a concurrent path does not corrupt the state.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::graph::Value;
use crate::overlay::Caps;

use super::uda::{AggValue, Uda};
use super::EngineError;

/// Aggregate identifier as used in queries and on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AggSpec {
    Sum,
    Count,
    Min,
    Max,
    TopK { k: usize, subtractable: bool },
}

impl AggSpec {
    pub fn top_k(k: usize) -> Self {
        AggSpec::TopK { k, subtractable: false }
    }

    pub fn caps(self) -> Caps {
        match self {
            AggSpec::Sum | AggSpec::Count => Caps { duplicate_insensitive: false, subtractable: true },
            AggSpec::Min | AggSpec::Max => Caps { duplicate_insensitive: true, subtractable: false },
            AggSpec::TopK { subtractable, .. } => Caps { duplicate_insensitive: false, subtractable },
        }
    }

    pub fn build(self) -> Builtin {
        Builtin(self)
    }
}

impl fmt::Display for AggSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AggSpec::Sum => f.write_str("sum"),
            AggSpec::Count => f.write_str("count"),
            AggSpec::Min => f.write_str("min"),
            AggSpec::Max => f.write_str("max"),
            AggSpec::TopK { k, .. } => write!(f, "topk:{k}"),
        }
    }
}

impl FromStr for AggSpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sum" => Ok(AggSpec::Sum),
            "count" => Ok(AggSpec::Count),
            "min" => Ok(AggSpec::Min),
            "max" => Ok(AggSpec::Max),
            _ => match s.strip_prefix("topk:") {
                Some(k) => match k.parse::<usize>() {
                    Ok(k) if k > 0 => Ok(AggSpec::top_k(k)),
                    _ => Err(format!("bad top-k size in {s:?}")),
                },
                None => Err(format!("unknown aggregate {s:?}; expected sum|count|min|max|topk:K")),
            },
        }
    }
}

/// State of a built-in aggregate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BuiltinState {
    Scalar(i64),
    Multiset(BTreeMap<Value, i64>),
}

/// A built-in aggregate selected by [`AggSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Builtin(pub AggSpec);

/// The five built-ins.
pub fn builtin_aggregates() -> Vec<Builtin> {
    [AggSpec::Sum, AggSpec::Count, AggSpec::Min, AggSpec::Max, AggSpec::top_k(3)]
        .into_iter()
        .map(Builtin)
        .collect()
}

fn bump(m: &mut BTreeMap<Value, i64>, v: Value, d: i64) {
    let e = m.entry(v).or_insert(0);
    *e += d;
    if *e == 0 {
        m.remove(&v);
    }
}

impl Uda for Builtin {
    type State = BuiltinState;

    fn name(&self) -> String {
        self.0.to_string()
    }

    fn caps(&self) -> Caps {
        self.0.caps()
    }

    fn initialize(&self) -> BuiltinState {
        match self.0 {
            AggSpec::Sum | AggSpec::Count => BuiltinState::Scalar(0),
            _ => BuiltinState::Multiset(BTreeMap::new()),
        }
    }

    fn update(&self, state: &mut BuiltinState, old: Option<Value>, new: Option<Value>) {
        match state {
            BuiltinState::Scalar(s) => match self.0 {
                AggSpec::Sum => *s += new.unwrap_or(0) - old.unwrap_or(0),
                _ => *s += i64::from(new.is_some()) - i64::from(old.is_some()),
            },
            BuiltinState::Multiset(m) => {
                if let Some(v) = old {
                    bump(m, v, -1);
                }
                if let Some(v) = new {
                    bump(m, v, 1);
                }
            }
        }
    }

    fn merge(&self, into: &mut BuiltinState, other: &BuiltinState) {
        match (into, other) {
            (BuiltinState::Scalar(a), BuiltinState::Scalar(b)) => *a += b,
            (BuiltinState::Multiset(a), BuiltinState::Multiset(b)) => {
                for (&v, &c) in b {
                    bump(a, v, c);
                }
            }
            _ => unreachable!("mismatched aggregate states"),
        }
    }

    fn unmerge(&self, from: &mut BuiltinState, other: &BuiltinState) -> Result<(), EngineError> {
        if !self.0.caps().subtractable {
            return Err(EngineError::NotSubtractable(self.name()));
        }
        match (from, other) {
            (BuiltinState::Scalar(a), BuiltinState::Scalar(b)) => *a -= b,
            (BuiltinState::Multiset(a), BuiltinState::Multiset(b)) => {
                for (&v, &c) in b {
                    bump(a, v, -c);
                }
            }
            _ => unreachable!("mismatched aggregate states"),
        }
        Ok(())
    }

    fn finalize(&self, state: &BuiltinState) -> AggValue {
        match (self.0, state) {
            (_, BuiltinState::Scalar(s)) => AggValue::Int(*s),
            (AggSpec::Min, BuiltinState::Multiset(m)) => {
                m.iter().find(|(_, &c)| c > 0).map_or(AggValue::Empty, |(&v, _)| AggValue::Int(v))
            }
            (AggSpec::Max, BuiltinState::Multiset(m)) => m
                .iter()
                .rev()
                .find(|(_, &c)| c > 0)
                .map_or(AggValue::Empty, |(&v, _)| AggValue::Int(v)),
            (AggSpec::TopK { k, .. }, BuiltinState::Multiset(m)) => {
                let mut items: Vec<(Value, u64)> =
                    m.iter().filter(|(_, &c)| c > 0).map(|(&v, &c)| (v, c as u64)).collect();
                if items.is_empty() {
                    return AggValue::Empty;
                }
                items.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
                items.truncate(k);
                AggValue::TopK(items)
            }
            _ => unreachable!("mismatched aggregate state"),
        }
    }
}

/// Direct evaluation over a bag of values; the reference the engine is
/// tested against.
pub fn evaluate_direct(spec: AggSpec, values: &[Value]) -> AggValue {
    let agg = Builtin(spec);
    let mut s = agg.initialize();
    for &v in values {
        agg.update(&mut s, None, Some(v));
    }
    agg.finalize(&s)
}
