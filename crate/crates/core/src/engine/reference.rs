//! Single-chain Gibbs samplers used as oracles for the asynchronous engine.
//!
//! These loop over the model's full conditionals directly, with none of the
//! worker/transport machinery, so moment comparisons against them isolate
//! protocol effects.

use crate::diagnostics::OnlineMoments;
use crate::error::Result;
use crate::model::TargetModel;
use crate::scalar::{worker_rng, Scalar};
use crate::state::{ParameterState, StateLayout};
use crate::value::CoordinateId;

/// Output of a reference chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceRun {
    pub moments: OnlineMoments,
    pub traces: Vec<Vec<f64>>,
    pub final_state_flat: Vec<f64>,
}

/// Random-scan Gibbs: each step updates one uniformly chosen coordinate.
/// `steps` counts coordinate updates, matching the per-worker step count of
/// the asynchronous engine with one worker.
pub fn random_scan_gibbs<T: Scalar, M: TargetModel<T>>(
    model: &M,
    steps: u64,
    burn_in: u64,
    seed: u64,
    traced_dims: &[usize],
    track_cross: bool,
) -> Result<ReferenceRun> {
    run_reference(model, steps, burn_in, seed, traced_dims, track_cross, false)
}

/// Sequential-scan Gibbs: coordinates updated in index order; `steps` counts
/// full sweeps.
pub fn sequential_scan_gibbs<T: Scalar, M: TargetModel<T>>(
    model: &M,
    sweeps: u64,
    burn_in: u64,
    seed: u64,
    traced_dims: &[usize],
    track_cross: bool,
) -> Result<ReferenceRun> {
    run_reference(model, sweeps, burn_in, seed, traced_dims, track_cross, true)
}

fn run_reference<T: Scalar, M: TargetModel<T>>(
    model: &M,
    steps: u64,
    burn_in: u64,
    seed: u64,
    traced_dims: &[usize],
    track_cross: bool,
    sequential: bool,
) -> Result<ReferenceRun> {
    let mut rng = worker_rng(seed, 0);
    let mut state: ParameterState<T> = model.initial_state();
    let mut cache = model.init_cache(&state);
    let layout = StateLayout::of(&state);
    let p = model.coord_count();
    let mut moments = OnlineMoments::new(layout.flat_len(), track_cross);
    let mut traces = vec![Vec::new(); traced_dims.len()];
    let mut buf = Vec::new();

    let update_one = |state: &mut ParameterState<T>,
                          cache: &mut M::Cache,
                          coord: CoordinateId,
                          rng: &mut crate::scalar::EngineRng|
     -> Result<()> {
        let (value, _) = model.sample_full_conditional(state, cache, coord, rng)?;
        let old = state.value(coord).clone();
        state.set_value(coord, value.clone())?;
        model.note_update(state, cache, coord, &old, &value);
        Ok(())
    };

    for step in 1..=steps {
        if sequential {
            for c in 0..p {
                update_one(&mut state, &mut cache, CoordinateId(c), &mut rng)?;
            }
        } else {
            let c = (f64::unit_uniform(&mut rng) * p as f64) as usize;
            update_one(&mut state, &mut cache, CoordinateId(c.min(p - 1)), &mut rng)?;
        }
        if step > burn_in {
            state.flatten_f64(&mut buf);
            moments.update(&buf);
            for (k, &dim) in traced_dims.iter().enumerate() {
                traces[k].push(buf[dim]);
            }
        }
    }
    state.flatten_f64(&mut buf);
    Ok(ReferenceRun {
        moments,
        traces,
        final_state_flat: buf,
    })
}
