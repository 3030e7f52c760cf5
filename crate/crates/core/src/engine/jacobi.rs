//! Fully synchronous Jacobi sampling on a Gaussian target.
//!
//! Every coordinate is redrawn in parallel from its full conditional given
//! the *previous* synchronized state. The mean recursion is the Jacobi
//! iteration `x ← μ + D⁻¹(D − Λ)(x − μ)`, so the sampler diverges whenever
//! the Jacobi iteration matrix has spectral radius above one — the canonical
//! failure mode of accept-everything asynchronous sampling.

use nalgebra::DVector;

use crate::diagnostics::{DivergenceMonitor, OnlineMoments};
use crate::error::Result;
use crate::models::gaussian::GaussianTarget;
use crate::scalar::{approx_f64, worker_rng, EngineRng, Scalar};

/// One synchronized sweep: all coordinates drawn from their scalar full
/// conditionals evaluated at the old state.
pub fn jacobi_step<T: Scalar>(
    target: &GaussianTarget<T>,
    state: &DVector<T>,
    rng: &mut EngineRng,
) -> DVector<T> {
    let n = target.dim();
    let precision = target.precision();
    let mean = target.mean();
    let mut next = DVector::zeros(n);
    for i in 0..n {
        let d = precision[(i, i)];
        let mut cross = T::zero();
        for j in 0..n {
            if j != i {
                cross += precision[(i, j)] * (state[j] - mean[j]);
            }
        }
        let cond_mean = mean[i] - cross / d;
        next[i] = cond_mean + T::std_normal(rng) / d.sqrt();
    }
    next
}

/// Outcome of a synchronous Jacobi-sampling run.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobiRun {
    pub moments: OnlineMoments,
    /// Thinned trace of the requested dims.
    pub traces: Vec<Vec<f64>>,
    pub divergence_flagged_at: Option<u64>,
    pub steps_run: u64,
}

/// Iterate [`jacobi_step`] from `init`, recording moments past burn-in and
/// stopping early once the divergence monitor trips.
pub fn run_jacobi<T: Scalar>(
    target: &GaussianTarget<T>,
    init: DVector<T>,
    steps: u64,
    burn_in: u64,
    seed: u64,
    divergence_bound: f64,
    traced_dims: &[usize],
) -> Result<JacobiRun> {
    let mut rng = worker_rng(seed, 0);
    let mut state = init;
    let n = target.dim();
    let mut moments = OnlineMoments::new(n, n <= 64);
    let mut monitor = DivergenceMonitor::new(divergence_bound);
    let mut traces = vec![Vec::new(); traced_dims.len()];
    let mut buf = vec![0.0f64; n];
    let mut steps_run = 0;
    for step in 1..=steps {
        state = jacobi_step(target, &state, &mut rng);
        steps_run = step;
        let inf = state.iter().fold(0.0f64, |a, &x| a.max(approx_f64(x.abs())));
        monitor.observe(step, inf);
        if monitor.flagged_at().is_some() {
            break;
        }
        if step > burn_in {
            for (i, slot) in buf.iter_mut().enumerate() {
                *slot = approx_f64(state[i]);
            }
            moments.update(&buf);
            for (k, &dim) in traced_dims.iter().enumerate() {
                traces[k].push(buf[dim]);
            }
        }
    }
    Ok(JacobiRun {
        moments,
        traces,
        divergence_flagged_at: monitor.flagged_at(),
        steps_run,
    })
}
