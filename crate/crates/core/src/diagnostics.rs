//! Run diagnostics: reservoir-sampled MH acceptance ratios, per-worker
//! traces, online moments, and divergence detection.
//!
//! Everything here records in `f64` regardless of the model scalar type;
//! diagnostics feed summaries and plots, not the samplers.

use rand::{Rng, RngExt};

use crate::error::{Error, Result};
use crate::state::WorkerId;
use crate::value::CoordinateId;

/// One recorded would-be acceptance probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioSample {
    pub alpha: f64,
    pub worker: WorkerId,
    pub coord: CoordinateId,
}

/// Uniform reservoir sample (Algorithm R) of recorded MH ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct Reservoir {
    capacity: usize,
    seen: u64,
    items: Vec<RatioSample>,
}

impl Reservoir {
    pub fn new(capacity: usize) -> Self {
        Reservoir {
            capacity,
            seen: 0,
            items: Vec::new(),
        }
    }

    pub fn observe<R: Rng + ?Sized>(&mut self, sample: RatioSample, rng: &mut R) {
        self.seen += 1;
        if self.items.len() < self.capacity {
            self.items.push(sample);
        } else {
            let slot = rng.random_range(0..self.seen);
            if (slot as usize) < self.capacity {
                self.items[slot as usize] = sample;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Total number of ratios ever offered to the reservoir.
    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn items(&self) -> &[RatioSample] {
        &self.items
    }

    /// Fold another reservoir into this one, keeping the union uniform: each
    /// slot keeps the incumbent with probability `seen / (seen + other.seen)`.
    pub fn merge<R: Rng + ?Sized>(&mut self, other: &Reservoir, rng: &mut R) {
        if other.seen == 0 {
            return;
        }
        if self.seen == 0 {
            *self = other.clone();
            return;
        }
        let total = self.seen + other.seen;
        let p_other = other.seen as f64 / total as f64;
        let cap = self.capacity.min(self.items.len() + other.items.len());
        let mut merged = Vec::with_capacity(cap);
        let mut take_other = 0usize;
        let mut take_self = 0usize;
        for _ in 0..cap {
            if (rng.random_bool(p_other) && take_other < other.items.len())
                || take_self >= self.items.len()
            {
                if take_other < other.items.len() {
                    merged.push(other.items[take_other]);
                    take_other += 1;
                } else {
                    merged.push(self.items[take_self]);
                    take_self += 1;
                }
            } else {
                merged.push(self.items[take_self]);
                take_self += 1;
            }
        }
        self.items = merged;
        self.seen = total;
    }
}

/// Histogram of ratios on [0, 1] with fixed bins.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioHistogram {
    pub bins: Vec<f64>,
}

pub const HISTOGRAM_BINS: usize = 20;

/// Fraction of recorded ratios below `threshold`, plus a 20-bin histogram of
/// the reservoir on [0, 1].
pub fn ratio_diagnostic_summary(reservoir: &Reservoir, threshold: f64) -> Result<(f64, RatioHistogram)> {
    if reservoir.is_empty() {
        return Err(Error::EmptyReservoir);
    }
    let mut bins = vec![0.0; HISTOGRAM_BINS];
    let mut below = 0usize;
    for s in reservoir.items() {
        let a = s.alpha.clamp(0.0, 1.0);
        if a < threshold {
            below += 1;
        }
        let bin = ((a * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
        bins[bin] += 1.0;
    }
    let n = reservoir.len() as f64;
    for b in &mut bins {
        *b /= n;
    }
    Ok((below as f64 / n, RatioHistogram { bins }))
}

/// Numerically stable online mean and (optionally) covariance accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineMoments {
    n: u64,
    mean: Vec<f64>,
    /// Upper triangle of the centered cross-product matrix, row-major;
    /// empty when cross products are not tracked.
    m2: Vec<f64>,
    track_cross: bool,
}

impl OnlineMoments {
    pub fn new(dim: usize, track_cross: bool) -> Self {
        OnlineMoments {
            n: 0,
            mean: vec![0.0; dim],
            m2: if track_cross {
                vec![0.0; dim * (dim + 1) / 2]
            } else {
                vec![0.0; dim]
            },
            track_cross,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn update(&mut self, x: &[f64]) {
        assert_eq!(x.len(), self.mean.len());
        self.n += 1;
        let inv_n = 1.0 / self.n as f64;
        let dim = self.mean.len();
        // delta before the mean moves, delta2 after: Welford.
        let mut delta = Vec::with_capacity(dim);
        for i in 0..dim {
            delta.push(x[i] - self.mean[i]);
            self.mean[i] += delta[i] * inv_n;
        }
        if self.track_cross {
            let mut at = 0;
            for i in 0..dim {
                let d2i = x[i] - self.mean[i];
                for j in i..dim {
                    self.m2[at] += delta[j] * d2i;
                    at += 1;
                }
            }
        } else {
            for i in 0..dim {
                self.m2[i] += delta[i] * (x[i] - self.mean[i]);
            }
        }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Sample variance per dimension (n − 1 normalization).
    pub fn variance(&self) -> Vec<f64> {
        if self.n < 2 {
            return vec![0.0; self.mean.len()];
        }
        let denom = (self.n - 1) as f64;
        if self.track_cross {
            let dim = self.mean.len();
            let mut out = Vec::with_capacity(dim);
            let mut at = 0;
            for i in 0..dim {
                out.push(self.m2[at] / denom);
                at += dim - i;
            }
            out
        } else {
            self.m2.iter().map(|v| v / denom).collect()
        }
    }

    /// Full sample covariance matrix; `None` when cross products were not
    /// tracked.
    pub fn covariance(&self) -> Option<Vec<Vec<f64>>> {
        if !self.track_cross || self.n < 2 {
            return None;
        }
        let dim = self.mean.len();
        let denom = (self.n - 1) as f64;
        let mut cov = vec![vec![0.0; dim]; dim];
        let mut at = 0;
        for i in 0..dim {
            for j in i..dim {
                let v = self.m2[at] / denom;
                cov[i][j] = v;
                cov[j][i] = v;
                at += 1;
            }
        }
        Some(cov)
    }

    /// Pool with another accumulator over the same dimensions (Chan et al.).
    pub fn merge(&mut self, other: &OnlineMoments) {
        assert_eq!(self.mean.len(), other.mean.len());
        assert_eq!(self.track_cross, other.track_cross);
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let total = na + nb;
        let dim = self.mean.len();
        let delta: Vec<f64> = (0..dim).map(|i| other.mean[i] - self.mean[i]).collect();
        if self.track_cross {
            let mut at = 0;
            for i in 0..dim {
                for j in i..dim {
                    self.m2[at] += other.m2[at] + delta[i] * delta[j] * na * nb / total;
                    at += 1;
                }
            }
        } else {
            for i in 0..dim {
                self.m2[i] += other.m2[i] + delta[i] * delta[i] * na * nb / total;
            }
        }
        for i in 0..dim {
            self.mean[i] += delta[i] * nb / total;
        }
        self.n += other.n;
    }
}

/// Mean standard error by the method of batch means.
///
/// Batch size follows the `n^(2/3)` rule, which stays honest for slowly
/// mixing chains whose correlation length grows with the run.
pub fn batch_means_se(trace: &[f64]) -> f64 {
    let n = trace.len();
    if n < 4 {
        return f64::INFINITY;
    }
    let batch = (n as f64).powf(2.0 / 3.0).floor() as usize;
    let n_batches = n / batch;
    let used = n_batches * batch;
    let grand = trace[..used].iter().sum::<f64>() / used as f64;
    let mut var = 0.0;
    for b in 0..n_batches {
        let m = trace[b * batch..(b + 1) * batch].iter().sum::<f64>() / batch as f64;
        var += (m - grand) * (m - grand);
    }
    var /= (n_batches - 1) as f64;
    (var / n_batches as f64).sqrt()
}

/// Sample autocorrelation with the standard biased normalization;
/// `acf[0] == 1`.
pub fn acf(trace: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    if trace.len() <= max_lag {
        return Err(Error::InvalidConfig(format!(
            "trace length {} must exceed max_lag {max_lag}",
            trace.len()
        )));
    }
    let n = trace.len();
    let mean = trace.iter().sum::<f64>() / n as f64;
    let var: f64 = trace.iter().map(|x| (x - mean) * (x - mean)).sum();
    if var == 0.0 {
        return Err(Error::ConstantTrace);
    }
    let mut out = Vec::with_capacity(max_lag + 1);
    for lag in 0..=max_lag {
        let mut acc = 0.0;
        for t in 0..n - lag {
            acc += (trace[t] - mean) * (trace[t + lag] - mean);
        }
        out.push(acc / var);
    }
    Ok(out)
}

/// Flags the first step at which any coordinate magnitude exceeds the bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergenceMonitor {
    pub bound: f64,
    flagged_at: Option<u64>,
}

impl DivergenceMonitor {
    pub fn new(bound: f64) -> Self {
        DivergenceMonitor {
            bound,
            flagged_at: None,
        }
    }

    pub fn observe(&mut self, step: u64, inf_norm: f64) {
        if self.flagged_at.is_none() && (inf_norm >= self.bound || !inf_norm.is_finite()) {
            self.flagged_at = Some(step);
        }
    }

    pub fn flagged_at(&self) -> Option<u64> {
        self.flagged_at
    }
}

/// Everything a run records for later inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsRecord {
    pub mh_ratios: Reservoir,
    /// Thinned traces per worker: `traces[w][dim][step]` over tracked dims.
    pub traces: Vec<Vec<Vec<f64>>>,
    /// Flat dimensions the traces cover.
    pub traced_dims: Vec<usize>,
    pub divergence: DivergenceMonitor,
}

impl DiagnosticsRecord {
    pub fn new(reservoir_capacity: usize, n_workers: usize, traced_dims: Vec<usize>, bound: f64) -> Self {
        DiagnosticsRecord {
            mh_ratios: Reservoir::new(reservoir_capacity),
            traces: vec![vec![Vec::new(); traced_dims.len()]; n_workers],
            traced_dims,
            divergence: DivergenceMonitor::new(bound),
        }
    }
}
