//! The user-defined aggregate interface.

use std::fmt;

use serde::Serialize;

use crate::graph::Value;
use crate::overlay::Caps;

use super::EngineError;

/// A finalized aggregate.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum AggValue {
    /// Nothing in the window (MIN, MAX and TOP-K over no values).
    Empty,
    Int(i64),
    /// `(value, frequency)` pairs, most frequent first, ties by value.
    TopK(Vec<(Value, u64)>),
}

impl fmt::Display for AggValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AggValue::Empty => f.write_str("-"),
            AggValue::Int(v) => write!(f, "{v}"),
            AggValue::TopK(items) => {
                let parts: Vec<String> = items.iter().map(|(v, c)| format!("{v}({c})")).collect();
                write!(f, "[{}]", parts.join(" "))
            }
        }
    }
}

/// Incremental aggregate over integer payloads.
///
/// `update(s, None, Some(x))` inserts `x`, `update(s, Some(x), None)` deletes
/// it, and `update(s, Some(x), Some(y))` replaces `x` by `y`. `merge` must be
/// associative and commutative up to `finalize`. Implementations declaring
/// `caps().subtractable` must implement `unmerge` so that
/// `unmerge(merge(a, b), b)` finalizes like `a`.
pub trait Uda: Send + Sync + 'static {
    type State: Clone + Send + Sync + fmt::Debug;

    fn name(&self) -> String;
    fn caps(&self) -> Caps;
    fn initialize(&self) -> Self::State;
    fn update(&self, state: &mut Self::State, old: Option<Value>, new: Option<Value>);
    fn merge(&self, into: &mut Self::State, other: &Self::State);

    fn unmerge(&self, _from: &mut Self::State, _other: &Self::State) -> Result<(), EngineError> {
        Err(EngineError::NotSubtractable(self.name()))
    }

    fn finalize(&self, state: &Self::State) -> AggValue;
}

/// Partial aggregate object: opaque state plus a version bumped per mutation.
#[derive(Debug, Clone)]
pub struct Pao<S> {
    pub state: S,
    pub version: u64,
}

impl<S> Pao<S> {
    pub fn new(state: S) -> Self {
        Pao { state, version: 0 }
    }
}
