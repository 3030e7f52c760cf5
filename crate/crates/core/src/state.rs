//! Per-worker view of the parameter vector.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::value::{CoordinateId, Value};

/// Worker id within a run. Dense `0..m-1`.
pub type WorkerId = usize;

/// Logical clock value attached to broadcasts, strictly increasing per
/// (sender, coordinate).
pub type Clock = u64;

/// Snapshot of every coordinate value known to one worker, together with the
/// last applied clock per (coordinate, origin) pair.
///
/// The clock table is what makes stale broadcasts detectable: an update from
/// origin `s` for coordinate `c` is discarded when its clock is not newer
/// than the last one applied from `s` for `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterState<T: Scalar> {
    values: Vec<Value<T>>,
    version: Vec<HashMap<WorkerId, Clock>>,
}

impl<T: Scalar> ParameterState<T> {
    pub fn new(values: Vec<Value<T>>) -> Self {
        let version = values.iter().map(|_| HashMap::new()).collect();
        ParameterState { values, version }
    }

    pub fn coord_count(&self) -> usize {
        self.values.len()
    }

    pub fn value(&self, coord: CoordinateId) -> &Value<T> {
        &self.values[coord.0]
    }

    /// Replace the payload at `coord`, enforcing the fixed-shape invariant.
    pub fn set_value(&mut self, coord: CoordinateId, value: Value<T>) -> Result<()> {
        let current = &self.values[coord.0];
        if current.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                coord,
                expected: current.shape(),
                got: value.shape(),
            });
        }
        self.values[coord.0] = value;
        Ok(())
    }

    /// Last applied clock from `origin` for `coord`, if any.
    pub fn last_clock(&self, coord: CoordinateId, origin: WorkerId) -> Option<Clock> {
        self.version[coord.0].get(&origin).copied()
    }

    /// Record that an update from `origin` with `clock` was applied.
    /// Clocks per (coordinate, origin) must never decrease.
    pub fn record_clock(&mut self, coord: CoordinateId, origin: WorkerId, clock: Clock) {
        let entry = self.version[coord.0].entry(origin).or_insert(0);
        debug_assert!(clock > *entry || *entry == 0, "clock regression");
        *entry = (*entry).max(clock);
    }

    /// Total number of scalar entries across all coordinates.
    pub fn flat_len(&self) -> usize {
        self.values.iter().map(Value::flat_len).sum()
    }

    /// All entries as `f64` in coordinate order.
    pub fn flatten_f64(&self, out: &mut Vec<f64>) {
        out.clear();
        for v in &self.values {
            v.extend_f64(out);
        }
    }

    pub fn values(&self) -> &[Value<T>] {
        &self.values
    }
}

/// Offsets of each coordinate inside the flattened representation.
#[derive(Debug, Clone, PartialEq)]
pub struct StateLayout {
    offsets: Vec<usize>,
    flat_len: usize,
}

impl StateLayout {
    pub fn of<T: Scalar>(state: &ParameterState<T>) -> Self {
        let mut offsets = Vec::with_capacity(state.coord_count());
        let mut at = 0;
        for v in state.values() {
            offsets.push(at);
            at += v.flat_len();
        }
        StateLayout {
            offsets,
            flat_len: at,
        }
    }

    pub fn offset(&self, coord: CoordinateId) -> usize {
        self.offsets[coord.0]
    }

    pub fn flat_len(&self) -> usize {
        self.flat_len
    }
}
