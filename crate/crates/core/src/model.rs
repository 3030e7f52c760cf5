//! The target-model interface every sampler in this crate runs against.

use crate::error::Result;
use crate::proposal::ProposalDescriptor;
use crate::scalar::{EngineRng, Scalar};
use crate::state::ParameterState;
use crate::value::{CoordinateId, Value, ValueShape};

/// A target distribution factored into full conditionals.
///
/// Implementations must keep two promises:
///
/// * the unnormalized log joint density is finite on the declared support;
/// * [`sample_full_conditional`](TargetModel::sample_full_conditional)
///   returns a descriptor whose density is exactly the distribution the value
///   was drawn from.
///
/// `Cache` holds per-worker derived quantities (sufficient statistics and the
/// like). Models without any use `()`. The engine calls
/// [`note_update`](TargetModel::note_update) after every applied state
/// change, which is the single place caches are maintained.
pub trait TargetModel<T: Scalar>: Send + Sync {
    type Cache: Clone + Send;

    /// Number of full-conditional coordinates, `p`.
    fn coord_count(&self) -> usize;

    fn shape(&self, coord: CoordinateId) -> ValueShape;

    /// Initial values handed to every worker at the start of a run.
    fn initial_state(&self) -> ParameterState<T>;

    fn init_cache(&self, state: &ParameterState<T>) -> Self::Cache;

    /// Hook invoked after `state[coord]` changed from `old` to `new`.
    fn note_update(
        &self,
        _state: &ParameterState<T>,
        _cache: &mut Self::Cache,
        _coord: CoordinateId,
        _old: &Value<T>,
        _new: &Value<T>,
    ) {
    }

    /// Recompute the cache from scratch (used by periodic audits).
    fn refresh_cache(&self, state: &ParameterState<T>, cache: &mut Self::Cache) {
        *cache = self.init_cache(state);
    }

    /// Unnormalized log joint density of the full state.
    fn log_joint(&self, state: &ParameterState<T>) -> Result<T>;

    /// `log f(state with coord ← new_value) − log f(state)`, exact up to
    /// cancellation of terms not involving `coord`.
    fn log_joint_ratio(
        &self,
        state: &ParameterState<T>,
        cache: &Self::Cache,
        coord: CoordinateId,
        new_value: &Value<T>,
    ) -> Result<T>;

    /// Draw from the full conditional of `coord` given the rest of `state`,
    /// returning the value and the descriptor of the distribution it came
    /// from. Deterministic given the RNG state.
    fn sample_full_conditional(
        &self,
        state: &ParameterState<T>,
        cache: &Self::Cache,
        coord: CoordinateId,
        rng: &mut EngineRng,
    ) -> Result<(Value<T>, ProposalDescriptor<T>)>;

    /// Data-point index associated with a coordinate, for exchangeable-model
    /// messages. `None` for coordinates without one.
    fn data_ref(&self, _coord: CoordinateId) -> Option<usize> {
        None
    }
}

/// `log f(state with coord ← new) − log f(state)` computed the slow way, by
/// two full evaluations of the log joint. Test oracle for
/// [`TargetModel::log_joint_ratio`] implementations.
pub fn log_joint_ratio_by_difference<T: Scalar, M: TargetModel<T>>(
    model: &M,
    state: &ParameterState<T>,
    coord: CoordinateId,
    new_value: &Value<T>,
) -> Result<T> {
    let before = model.log_joint(state)?;
    let mut changed = state.clone();
    changed.set_value(coord, new_value.clone())?;
    let after = model.log_joint(&changed)?;
    Ok(after - before)
}
