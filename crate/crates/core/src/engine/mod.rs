//! The asynchronous protocol: worker loop, update acceptance, and the
//! transports that carry broadcasts between workers.
//!
//! A worker repeats: select one of its coordinates at random, sample its full
//! conditional given the latest values it knows about, broadcast the draw if
//! the coordinate is transmitted, then process every update sitting in its
//! inbox. Received updates are applied unconditionally in approximate mode;
//! in exact mode they pass a Metropolis-Hastings test whose proposal density
//! is the sender's transmitted full-conditional descriptor.

mod jacobi;
mod reference;
mod sim;
mod threaded;

pub use jacobi::{jacobi_step, run_jacobi, JacobiRun};
pub use reference::{random_scan_gibbs, sequential_scan_gibbs, ReferenceRun};
pub use sim::{run_simulated, DropPolicy, LatencyDist, NetworkConfig, Schedule, TransportEvent};
pub use threaded::run_threaded;

use std::collections::{HashMap, HashSet, VecDeque};

use crate::diagnostics::{DivergenceMonitor, OnlineMoments, RatioSample, Reservoir};
use crate::error::{Error, Result};
use crate::message::{Addressed, UpdateMessage};
use crate::model::TargetModel;
use crate::scalar::{approx_f64, real, worker_rng, EngineRng, Scalar};
use crate::state::{Clock, ParameterState, StateLayout, WorkerId};
use crate::value::{CoordinateId, Value};

/// How a worker treats updates received from its peers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Metropolis-Hastings test against the transmitted proposal.
    Exact,
    /// Accept everything; record would-be ratios for the ratio diagnostic.
    Approximate,
}

/// Static description of one worker.
#[derive(Debug, Clone)]
pub struct WorkerConfig {
    pub worker_id: WorkerId,
    /// Transmitted coordinates this worker samples and broadcasts.
    pub owned_coords: Vec<CoordinateId>,
    /// Top-level coordinates sampled locally on every worker, never sent.
    pub local_coords: Vec<CoordinateId>,
    /// Selection probability per coordinate; strictly positive, sums to 1
    /// over `owned_coords ∪ local_coords`.
    pub selection_probs: Vec<(CoordinateId, f64)>,
    pub mode: Mode,
    /// Probability of recording the MH ratio of a processed update.
    pub diag_sample_prob: f64,
}

impl WorkerConfig {
    /// Uniform selection over the worker's coordinates.
    pub fn uniform(
        worker_id: WorkerId,
        owned_coords: Vec<CoordinateId>,
        local_coords: Vec<CoordinateId>,
        mode: Mode,
        diag_sample_prob: f64,
    ) -> Self {
        let total = owned_coords.len() + local_coords.len();
        let p = 1.0 / total as f64;
        let selection_probs = owned_coords
            .iter()
            .chain(local_coords.iter())
            .map(|&c| (c, p))
            .collect();
        WorkerConfig {
            worker_id,
            owned_coords,
            local_coords,
            selection_probs,
            mode,
            diag_sample_prob,
        }
    }
}

/// Knobs shared by both transports.
#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Iterations of the worker loop per worker.
    pub steps_per_worker: u64,
    /// Worker steps discarded before recording starts.
    pub burn_in: u64,
    /// Record every `thin`-th post-burn-in step.
    pub thin: u64,
    pub seed: u64,
    /// Capacity of the MH-ratio reservoir.
    pub reservoir_capacity: usize,
    /// Flat state dimensions to trace per worker.
    pub traced_dims: Vec<usize>,
    /// Track the full covariance accumulator (quadratic in the flat
    /// dimension; leave off for large models).
    pub track_cross_moments: bool,
    pub divergence_bound: f64,
    /// Inboxes are unbounded; lengths beyond this are reported.
    pub inbox_soft_limit: usize,
    /// Permit a transmitted coordinate to be owned by several workers.
    pub allow_shared_ownership: bool,
}

impl RunOptions {
    /// Defaults: 10% burn-in, no thinning, 10k-ratio reservoir.
    pub fn new(steps_per_worker: u64, seed: u64) -> Self {
        RunOptions {
            steps_per_worker,
            burn_in: steps_per_worker / 10,
            thin: 1,
            seed,
            reservoir_capacity: 10_000,
            traced_dims: Vec::new(),
            track_cross_moments: true,
            divergence_bound: 1e6,
            inbox_soft_limit: 100_000,
            allow_shared_ownership: false,
        }
    }
}

/// Per-worker protocol counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WorkerCounters {
    pub own_samples: u64,
    pub messages_sent: u64,
    pub accepted: u64,
    pub rejected: u64,
    pub stale: u64,
    pub recorded_ratios: u64,
    pub inbox_high_water: usize,
}

/// Transport-level counters; `sent == delivered + dropped` at run end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NetCounters {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
}

/// What one worker hands back after a run.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerResult {
    pub worker_id: WorkerId,
    pub final_values: Vec<Value<f64>>,
    pub moments: OnlineMoments,
    /// One trace per entry of `RunOptions::traced_dims`.
    pub traces: Vec<Vec<f64>>,
    pub counters: WorkerCounters,
}

/// Output of a run on either transport.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub workers: Vec<WorkerResult>,
    pub reservoir: Reservoir,
    pub divergence_flagged_at: Option<u64>,
    pub net: NetCounters,
    pub traced_dims: Vec<usize>,
    /// Flat offset of each coordinate in the recorded vectors.
    pub coord_offsets: Vec<usize>,
    pub flat_len: usize,
}

impl RunResult {
    /// Moments pooled across workers.
    pub fn pooled_moments(&self) -> OnlineMoments {
        let mut it = self.workers.iter();
        let mut acc = it.next().expect("at least one worker").moments.clone();
        for w in it {
            acc.merge(&w.moments);
        }
        acc
    }
}

/// Outcome of processing one received update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProcessOutcome {
    Accepted,
    Rejected,
    Stale,
}

/// Acceptance probability of the exact variant:
/// `min{1, f(new, rest) q(current) / (f(current, rest) q(new))}` evaluated in
/// log space against the receiver's state. Proposal densities of `-inf` drive
/// the probability to 0 or 1; an indeterminate combination is an error.
pub fn exact_acceptance_prob<T: Scalar, M: TargetModel<T>>(
    model: &M,
    state: &ParameterState<T>,
    cache: &M::Cache,
    msg: &UpdateMessage<T>,
) -> Result<T> {
    let current = state.value(msg.coord);
    if current.shape() != msg.new_value.shape() {
        return Err(Error::ShapeMismatch {
            coord: msg.coord,
            expected: current.shape(),
            got: msg.new_value.shape(),
        });
    }
    let ratio = model.log_joint_ratio(state, cache, msg.coord, &msg.new_value)?;
    let q_current = msg.proposal.log_density(current)?;
    let q_new = msg.proposal.log_density(&msg.new_value)?;
    let log_alpha = ratio + q_current - q_new;
    if log_alpha.is_nan() {
        return Err(Error::SupportViolation {
            coord: msg.coord,
            context: "indeterminate acceptance ratio".into(),
        });
    }
    Ok(T::zero().min(log_alpha).exp())
}

/// Live state of one worker inside a transport.
pub(crate) struct Worker<T: Scalar, M: TargetModel<T>> {
    cfg: WorkerConfig,
    peers: Vec<WorkerId>,
    owned: HashSet<CoordinateId>,
    cum_probs: Vec<(CoordinateId, f64)>,
    pub(crate) state: ParameterState<T>,
    cache: M::Cache,
    pub(crate) rng: EngineRng,
    clocks: HashMap<CoordinateId, Clock>,
    pub(crate) inbox: VecDeque<UpdateMessage<T>>,
    moments: OnlineMoments,
    traces: Vec<Vec<f64>>,
    traced_dims: Vec<usize>,
    reservoir: Reservoir,
    divergence: DivergenceMonitor,
    counters: WorkerCounters,
    steps_done: u64,
    burn_in: u64,
    thin: u64,
    inbox_soft_limit: usize,
    inbox_warned: bool,
    flat_buf: Vec<f64>,
}

impl<T: Scalar, M: TargetModel<T>> Worker<T, M> {
    pub(crate) fn new(
        model: &M,
        cfg: WorkerConfig,
        n_workers: usize,
        opts: &RunOptions,
    ) -> Result<Self> {
        let state = model.initial_state();
        let cache = model.init_cache(&state);
        let layout = StateLayout::of(&state);
        for &dim in &opts.traced_dims {
            if dim >= layout.flat_len() {
                return Err(Error::InvalidConfig(format!(
                    "traced dim {dim} out of range (flat length {})",
                    layout.flat_len()
                )));
            }
        }
        let mut cum = 0.0;
        let cum_probs = cfg
            .selection_probs
            .iter()
            .map(|&(c, p)| {
                cum += p;
                (c, cum)
            })
            .collect();
        let peers = (0..n_workers).filter(|&w| w != cfg.worker_id).collect();
        let owned = cfg.owned_coords.iter().copied().collect();
        Ok(Worker {
            peers,
            owned,
            cum_probs,
            rng: worker_rng(opts.seed, cfg.worker_id),
            state,
            cache,
            clocks: HashMap::new(),
            inbox: VecDeque::new(),
            moments: OnlineMoments::new(layout.flat_len(), opts.track_cross_moments),
            traces: vec![Vec::new(); opts.traced_dims.len()],
            traced_dims: opts.traced_dims.clone(),
            reservoir: Reservoir::new(opts.reservoir_capacity),
            divergence: DivergenceMonitor::new(opts.divergence_bound),
            counters: WorkerCounters::default(),
            steps_done: 0,
            burn_in: opts.burn_in,
            thin: opts.thin.max(1),
            inbox_soft_limit: opts.inbox_soft_limit,
            inbox_warned: false,
            flat_buf: Vec::new(),
            cfg,
        })
    }

    pub(crate) fn id(&self) -> WorkerId {
        self.cfg.worker_id
    }

    pub(crate) fn steps_done(&self) -> u64 {
        self.steps_done
    }

    /// Whether this worker's divergence monitor has tripped; transports stop
    /// early rather than run arithmetic on unbounded states.
    pub(crate) fn diverged(&self) -> bool {
        self.divergence.flagged_at().is_some()
    }

    fn select_coord(&mut self) -> CoordinateId {
        let u: f64 = f64::unit_uniform(&mut self.rng);
        for &(c, cum) in &self.cum_probs {
            if u < cum {
                return c;
            }
        }
        self.cum_probs.last().expect("nonempty selection").0
    }

    /// One iteration of the worker loop: select, sample, broadcast, then
    /// drain the inbox. Returns the addressed broadcasts.
    pub(crate) fn step(&mut self, model: &M) -> Result<Vec<Addressed<T>>> {
        let coord = self.select_coord();
        let (value, proposal) = model
            .sample_full_conditional(&self.state, &self.cache, coord, &mut self.rng)
            .map_err(|e| e.in_worker(self.cfg.worker_id, coord))?;
        let old = self.state.value(coord).clone();
        self.state.set_value(coord, value.clone())?;
        model.note_update(&self.state, &mut self.cache, coord, &old, &value);
        self.counters.own_samples += 1;

        let mut out = Vec::new();
        if self.owned.contains(&coord) {
            let clock = self.clocks.entry(coord).or_insert(0);
            *clock += 1;
            let message = UpdateMessage {
                coord,
                new_value: value,
                old_value: old,
                proposal,
                sender: self.cfg.worker_id,
                clock: *clock,
                data_ref: model.data_ref(coord),
            };
            out.reserve(self.peers.len());
            for &receiver in &self.peers {
                out.push(Addressed {
                    receiver,
                    message: message.clone(),
                });
            }
            self.counters.messages_sent += out.len() as u64;
        }

        self.counters.inbox_high_water = self.counters.inbox_high_water.max(self.inbox.len());
        if self.inbox.len() > self.inbox_soft_limit && !self.inbox_warned {
            self.inbox_warned = true;
            eprintln!(
                "worker {}: inbox length {} exceeds the soft limit {}; \
                 queues are unbounded but this worker is falling behind",
                self.cfg.worker_id,
                self.inbox.len(),
                self.inbox_soft_limit
            );
        }
        while let Some(msg) = self.inbox.pop_front() {
            self.process_update(model, msg)?;
        }

        self.steps_done += 1;
        self.record();
        Ok(out)
    }

    /// Apply or reject one received update.
    pub(crate) fn process_update(
        &mut self,
        model: &M,
        msg: UpdateMessage<T>,
    ) -> Result<ProcessOutcome> {
        let current_shape = self.state.value(msg.coord).shape();
        if current_shape != msg.new_value.shape() {
            return Err(Error::ShapeMismatch {
                coord: msg.coord,
                expected: current_shape,
                got: msg.new_value.shape(),
            });
        }
        if let Some(last) = self.state.last_clock(msg.coord, msg.sender) {
            if msg.clock <= last {
                self.counters.stale += 1;
                return Ok(ProcessOutcome::Stale);
            }
        }
        match self.cfg.mode {
            Mode::Approximate => {
                // Would-be ratio recorded at random, then ignored. A run that
                // is busy diverging can overflow this diagnostic evaluation;
                // that must not abort an accept-all experiment, so failed
                // evaluations are simply not recorded.
                if self.cfg.diag_sample_prob > 0.0
                    && f64::unit_uniform(&mut self.rng) < self.cfg.diag_sample_prob
                {
                    if let Ok(alpha) =
                        exact_acceptance_prob(model, &self.state, &self.cache, &msg)
                    {
                        self.record_ratio(approx_f64(alpha), msg.coord);
                    }
                }
                self.apply(model, msg);
                self.counters.accepted += 1;
                Ok(ProcessOutcome::Accepted)
            }
            Mode::Exact => {
                let alpha = exact_acceptance_prob(model, &self.state, &self.cache, &msg)?;
                if self.cfg.diag_sample_prob > 0.0
                    && f64::unit_uniform(&mut self.rng) < self.cfg.diag_sample_prob
                {
                    self.record_ratio(approx_f64(alpha), msg.coord);
                }
                let u: T = real(f64::unit_uniform(&mut self.rng));
                if alpha >= T::one() || u < alpha {
                    self.apply(model, msg);
                    self.counters.accepted += 1;
                    Ok(ProcessOutcome::Accepted)
                } else {
                    self.counters.rejected += 1;
                    Ok(ProcessOutcome::Rejected)
                }
            }
        }
    }

    fn apply(&mut self, model: &M, msg: UpdateMessage<T>) {
        let old = self.state.value(msg.coord).clone();
        self.state
            .set_value(msg.coord, msg.new_value.clone())
            .expect("shape checked above");
        self.state.record_clock(msg.coord, msg.sender, msg.clock);
        model.note_update(&self.state, &mut self.cache, msg.coord, &old, &msg.new_value);
    }

    fn record_ratio(&mut self, alpha: f64, coord: CoordinateId) {
        self.counters.recorded_ratios += 1;
        self.reservoir.observe(
            RatioSample {
                alpha,
                worker: self.cfg.worker_id,
                coord,
            },
            &mut self.rng,
        );
    }

    fn record(&mut self) {
        let inf_norm = self
            .state
            .values()
            .iter()
            .fold(0.0f64, |acc, v| acc.max(approx_f64(v.inf_norm())));
        self.divergence.observe(self.steps_done, inf_norm);
        if self.steps_done <= self.burn_in {
            return;
        }
        if (self.steps_done - self.burn_in - 1) % self.thin != 0 {
            return;
        }
        let mut buf = std::mem::take(&mut self.flat_buf);
        self.state.flatten_f64(&mut buf);
        self.moments.update(&buf);
        for (slot, &dim) in self.traced_dims.iter().enumerate() {
            self.traces[slot].push(buf[dim]);
        }
        self.flat_buf = buf;
    }

    pub(crate) fn into_parts(self) -> (WorkerResult, Reservoir, Option<u64>) {
        let final_values = self
            .state
            .values()
            .iter()
            .map(|v| {
                let mut buf = Vec::new();
                v.extend_f64(&mut buf);
                match v {
                    Value::Scalar(_) => Value::Scalar(buf[0]),
                    Value::Vector(x) => {
                        Value::Vector(nalgebra::DVector::from_vec(buf[..x.len()].to_vec()))
                    }
                    Value::Matrix(m) => Value::Matrix(nalgebra::DMatrix::from_vec(
                        m.nrows(),
                        m.ncols(),
                        buf,
                    )),
                }
            })
            .collect();
        (
            WorkerResult {
                worker_id: self.cfg.worker_id,
                final_values,
                moments: self.moments,
                traces: self.traces,
                counters: self.counters,
            },
            self.reservoir,
            self.divergence.flagged_at(),
        )
    }
}

/// Check a topology against a model before running it.
pub fn validate_topology<T: Scalar, M: TargetModel<T>>(
    model: &M,
    workers: &[WorkerConfig],
    allow_shared_ownership: bool,
) -> Result<()> {
    if workers.is_empty() {
        return Err(Error::InvalidConfig("at least one worker required".into()));
    }
    for (i, w) in workers.iter().enumerate() {
        if w.worker_id != i {
            return Err(Error::InvalidConfig(format!(
                "worker ids must be dense 0..m-1, found {} at position {i}",
                w.worker_id
            )));
        }
        let mut sum = 0.0;
        let mut in_probs = HashSet::new();
        for &(c, p) in &w.selection_probs {
            if p <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "worker {i}: selection probability for {c} must be positive"
                )));
            }
            sum += p;
            in_probs.insert(c);
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "worker {i}: selection probabilities sum to {sum}, expected 1"
            )));
        }
        for &c in w.owned_coords.iter().chain(w.local_coords.iter()) {
            if c.0 >= model.coord_count() {
                return Err(Error::InvalidConfig(format!(
                    "worker {i}: coordinate {c} out of range"
                )));
            }
            if !in_probs.contains(&c) {
                return Err(Error::InvalidConfig(format!(
                    "worker {i}: coordinate {c} has no selection probability"
                )));
            }
        }
        for &c in &w.owned_coords {
            if w.local_coords.contains(&c) {
                return Err(Error::InvalidConfig(format!(
                    "worker {i}: coordinate {c} is both owned and local"
                )));
            }
        }
    }
    // Local sets must agree everywhere: top-level variables live on every
    // worker or on none.
    let local0: HashSet<_> = workers[0].local_coords.iter().copied().collect();
    for w in &workers[1..] {
        let lw: HashSet<_> = w.local_coords.iter().copied().collect();
        if lw != local0 {
            return Err(Error::InvalidConfig(
                "local (top-level) coordinates must be identical across workers".into(),
            ));
        }
    }
    // Every non-local coordinate needs at least one owner.
    let mut owners: HashMap<CoordinateId, usize> = HashMap::new();
    for w in workers {
        for &c in &w.owned_coords {
            *owners.entry(c).or_insert(0) += 1;
        }
    }
    for c in (0..model.coord_count()).map(CoordinateId) {
        if local0.contains(&c) {
            continue;
        }
        match owners.get(&c) {
            None => {
                return Err(Error::InvalidConfig(format!(
                    "coordinate {c} is neither local nor owned by any worker"
                )))
            }
            Some(&n) if n > 1 && !allow_shared_ownership => {
                return Err(Error::InvalidConfig(format!(
                    "coordinate {c} owned by {n} workers; enable shared ownership to permit this"
                )))
            }
            _ => {}
        }
    }
    Ok(())
}

/// Assemble the shared pieces of a [`RunResult`].
pub(crate) fn collect_results<T: Scalar, M: TargetModel<T>>(
    workers: Vec<Worker<T, M>>,
    net: NetCounters,
    opts: &RunOptions,
    model: &M,
) -> RunResult {
    let state = model.initial_state();
    let layout = StateLayout::of(&state);
    let coord_offsets = (0..state.coord_count())
        .map(|c| layout.offset(CoordinateId(c)))
        .collect();
    let mut results = Vec::with_capacity(workers.len());
    let mut reservoir = Reservoir::new(opts.reservoir_capacity);
    let mut merge_rng = crate::scalar::salted_rng(opts.seed, crate::scalar::MERGE_SEED_SALT);
    let mut divergence_flagged_at: Option<u64> = None;
    for w in workers {
        let (res, r, flag) = w.into_parts();
        reservoir.merge(&r, &mut merge_rng);
        divergence_flagged_at = match (divergence_flagged_at, flag) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        results.push(res);
    }
    RunResult {
        workers: results,
        reservoir,
        divergence_flagged_at,
        net,
        traced_dims: opts.traced_dims.clone(),
        coord_offsets,
        flat_len: layout.flat_len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::gaussian::GaussianTarget;
    use crate::proposal::ProposalDescriptor;
    use crate::scalar::real;

    fn two_worker_cfg(mode: Mode) -> Vec<WorkerConfig> {
        vec![
            WorkerConfig::uniform(0, vec![CoordinateId(0)], vec![], mode, 0.0),
            WorkerConfig::uniform(1, vec![CoordinateId(1)], vec![], mode, 0.0),
        ]
    }

    fn message(
        model: &GaussianTarget<f64>,
        state: &ParameterState<f64>,
        coord: CoordinateId,
        sender: WorkerId,
        clock: Clock,
        rng: &mut EngineRng,
    ) -> UpdateMessage<f64> {
        let (value, proposal) = model
            .sample_full_conditional(state, &(), coord, rng)
            .unwrap();
        UpdateMessage {
            coord,
            old_value: state.value(coord).clone(),
            new_value: value,
            proposal,
            sender,
            clock,
            data_ref: None,
        }
    }

    #[test]
    fn acceptance_is_one_for_a_fresh_gibbs_step() {
        // Receiver state equal to the sender's at send time: the proposal is
        // exactly a Gibbs step and must always be accepted.
        let model = GaussianTarget::<f64>::exponential(4, 0.5, 1).unwrap();
        let mut rng = crate::scalar::worker_rng(3, 0);
        let mut state = model.initial_state();
        for c in 0..4 {
            let (v, _) = model
                .sample_full_conditional(&state, &(), CoordinateId(c), &mut rng)
                .unwrap();
            state.set_value(CoordinateId(c), v).unwrap();
        }
        for c in 0..4 {
            let msg = message(&model, &state, CoordinateId(c), 0, 1, &mut rng);
            let alpha = exact_acceptance_prob(&model, &state, &(), &msg).unwrap();
            assert!((alpha - 1.0).abs() < 1e-12, "alpha = {alpha}");
        }
    }

    #[test]
    fn acceptance_is_one_when_value_unchanged() {
        let model = GaussianTarget::<f64>::jacobi(3, 1).unwrap();
        let state = model.initial_state();
        let msg = UpdateMessage {
            coord: CoordinateId(0),
            new_value: state.value(CoordinateId(0)).clone(),
            old_value: state.value(CoordinateId(0)).clone(),
            proposal: ProposalDescriptor::GaussianScalar {
                mean: 0.3,
                variance: 2.0,
            },
            sender: 1,
            clock: 1,
            data_ref: None,
        };
        let alpha = exact_acceptance_prob(&model, &state, &(), &msg).unwrap();
        assert!((alpha - 1.0).abs() < 1e-15);
    }

    #[test]
    fn acceptance_matches_dense_formula_with_one_stale_coordinate() {
        // Receiver lags the sender by one coordinate; the acceptance value
        // must equal the direct density-formula evaluation.
        let model = GaussianTarget::<f64>::exponential(8, 0.5, 1).unwrap();
        let mut rng = crate::scalar::worker_rng(11, 0);
        let mut sender_state = model.initial_state();
        for c in 0..8 {
            let (v, _) = model
                .sample_full_conditional(&sender_state, &(), CoordinateId(c), &mut rng)
                .unwrap();
            sender_state.set_value(CoordinateId(c), v).unwrap();
        }
        // Receiver missed the latest update of coordinate 5.
        let mut receiver_state = sender_state.clone();
        receiver_state
            .set_value(CoordinateId(5), Value::Scalar(0.7))
            .unwrap();
        let msg = message(&model, &sender_state, CoordinateId(2), 0, 1, &mut rng);

        let alpha = exact_acceptance_prob(&model, &receiver_state, &(), &msg).unwrap();

        // Oracle: min{1, f(new, rest) q(cur) / (f(cur, rest) q(new))} from
        // full dense log-density evaluations.
        let log_f = |state: &ParameterState<f64>| model.log_joint(state).unwrap();
        let mut moved = receiver_state.clone();
        moved.set_value(msg.coord, msg.new_value.clone()).unwrap();
        let ratio = log_f(&moved) - log_f(&receiver_state);
        let q_cur = msg
            .proposal
            .log_density(receiver_state.value(msg.coord))
            .unwrap();
        let q_new = msg.proposal.log_density(&msg.new_value).unwrap();
        let want = (ratio + q_cur - q_new).min(0.0).exp();
        assert!((alpha - want).abs() < 1e-12, "{alpha} vs {want}");
    }

    #[test]
    fn point_mass_proposal_drives_alpha_to_zero_or_one() {
        let model = GaussianTarget::<f64>::jacobi(2, 1).unwrap();
        let state = model.initial_state();
        // Proposal cannot reproduce the receiver's current value: q(cur) = 0.
        let msg = UpdateMessage {
            coord: CoordinateId(0),
            new_value: Value::Scalar(0.5),
            old_value: Value::Scalar(0.5),
            proposal: ProposalDescriptor::PointMass {
                value: Value::Scalar(0.5),
            },
            sender: 1,
            clock: 1,
            data_ref: None,
        };
        let alpha = exact_acceptance_prob(&model, &state, &(), &msg).unwrap();
        assert_eq!(alpha, 0.0);
    }

    #[test]
    fn worker_broadcasts_only_owned_coordinates() {
        let model = GaussianTarget::<f64>::exponential(3, 0.5, 1).unwrap();
        let opts = RunOptions::new(1, 5);
        // Worker 0 owns coord 0 and treats coord 2 as local; selection is
        // all but forced onto the local coordinate.
        let cfg = WorkerConfig {
            worker_id: 0,
            owned_coords: vec![CoordinateId(0)],
            local_coords: vec![CoordinateId(2)],
            selection_probs: vec![(CoordinateId(0), 1e-12), (CoordinateId(2), 1.0 - 1e-12)],
            mode: Mode::Approximate,
            diag_sample_prob: 0.0,
        };
        let mut w: Worker<f64, _> = Worker::new(&model, cfg, 3, &opts).unwrap();
        let out = w.step(&model).unwrap();
        assert!(out.is_empty(), "local coordinate must not broadcast");

        // And an owned coordinate fans out to every peer.
        let cfg = WorkerConfig::uniform(0, vec![CoordinateId(0)], vec![], Mode::Approximate, 0.0);
        let mut w: Worker<f64, _> = Worker::new(&model, cfg, 3, &opts).unwrap();
        let out = w.step(&model).unwrap();
        assert_eq!(out.len(), 2);
        let receivers: Vec<_> = out.iter().map(|a| a.receiver).collect();
        assert_eq!(receivers, vec![1, 2]);
        assert_eq!(out[0].message.clock, 1);
    }

    #[test]
    fn stale_messages_are_discarded() {
        let model = GaussianTarget::<f64>::exponential(2, 0.5, 1).unwrap();
        let opts = RunOptions::new(1, 9);
        let cfgs = two_worker_cfg(Mode::Approximate);
        let mut w: Worker<f64, _> = Worker::new(&model, cfgs[1].clone(), 2, &opts).unwrap();
        let mut rng = crate::scalar::worker_rng(42, 7);
        let fresh = message(&model, &w.state, CoordinateId(0), 0, 2, &mut rng);
        let stale = message(&model, &w.state, CoordinateId(0), 0, 1, &mut rng);
        assert_eq!(
            w.process_update(&model, fresh.clone()).unwrap(),
            ProcessOutcome::Accepted
        );
        assert_eq!(
            w.process_update(&model, stale).unwrap(),
            ProcessOutcome::Stale
        );
        // Same clock from the same sender is also stale.
        assert_eq!(
            w.process_update(&model, fresh).unwrap(),
            ProcessOutcome::Stale
        );
        assert_eq!(w.counters.accepted, 1);
        assert_eq!(w.counters.stale, 2);
    }

    #[test]
    fn approximate_mode_applies_everything() {
        let model = GaussianTarget::<f64>::exponential(2, 0.5, 1).unwrap();
        let opts = RunOptions::new(1, 9);
        let cfgs = two_worker_cfg(Mode::Approximate);
        let mut w: Worker<f64, _> = Worker::new(&model, cfgs[1].clone(), 2, &opts).unwrap();
        let mut rng = crate::scalar::worker_rng(1, 3);
        for clock in 1..=20 {
            let msg = message(&model, &w.state, CoordinateId(0), 0, clock, &mut rng);
            let expected = msg.new_value.clone();
            assert_eq!(
                w.process_update(&model, msg).unwrap(),
                ProcessOutcome::Accepted
            );
            assert_eq!(w.state.value(CoordinateId(0)), &expected);
        }
        assert_eq!(w.counters.accepted, 20);
        assert_eq!(w.counters.rejected, 0);
    }

    #[test]
    fn exact_mode_rejects_and_keeps_state() {
        let model = GaussianTarget::<f64>::jacobi(2, 1).unwrap();
        let opts = RunOptions::new(1, 9);
        let cfgs = two_worker_cfg(Mode::Exact);
        let mut w: Worker<f64, _> = Worker::new(&model, cfgs[1].clone(), 2, &opts).unwrap();
        // An absurd value with a proposal that claims it was near-certain:
        // the acceptance probability collapses to ~0.
        let msg = UpdateMessage {
            coord: CoordinateId(0),
            new_value: Value::Scalar(80.0),
            old_value: Value::Scalar(0.0),
            proposal: ProposalDescriptor::GaussianScalar {
                mean: 80.0,
                variance: 1e-6,
            },
            sender: 0,
            clock: 1,
            data_ref: None,
        };
        let before = w.state.value(CoordinateId(0)).clone();
        assert_eq!(
            w.process_update(&model, msg).unwrap(),
            ProcessOutcome::Rejected
        );
        assert_eq!(w.state.value(CoordinateId(0)), &before);
        assert_eq!(w.counters.rejected, 1);
        // A rejected clock does not advance the watermark: a later, older
        // clock from the sender is still considered.
        assert_eq!(w.state.last_clock(CoordinateId(0), 0), None);
    }

    #[test]
    fn applied_clocks_increase_strictly() {
        let model = GaussianTarget::<f64>::exponential(2, 0.5, 1).unwrap();
        let opts = RunOptions::new(1, 9);
        let cfgs = two_worker_cfg(Mode::Approximate);
        let mut w: Worker<f64, _> = Worker::new(&model, cfgs[1].clone(), 2, &opts).unwrap();
        let mut rng = crate::scalar::worker_rng(2, 5);
        let mut last_applied = 0;
        for clock in [1u64, 3, 2, 5, 5, 4, 8] {
            let msg = message(&model, &w.state, CoordinateId(0), 0, clock, &mut rng);
            if w.process_update(&model, msg).unwrap() == ProcessOutcome::Accepted {
                assert!(clock > last_applied);
                last_applied = clock;
            }
        }
        assert_eq!(w.state.last_clock(CoordinateId(0), 0), Some(8));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let model = GaussianTarget::<f64>::exponential(2, 0.5, 1).unwrap();
        let opts = RunOptions::new(1, 9);
        let cfgs = two_worker_cfg(Mode::Approximate);
        let mut w: Worker<f64, _> = Worker::new(&model, cfgs[1].clone(), 2, &opts).unwrap();
        let msg = UpdateMessage {
            coord: CoordinateId(0),
            new_value: Value::Vector(nalgebra::DVector::zeros(2)),
            old_value: Value::Scalar(0.0),
            proposal: ProposalDescriptor::GaussianScalar {
                mean: 0.0,
                variance: 1.0,
            },
            sender: 0,
            clock: 1,
            data_ref: None,
        };
        assert!(w.process_update(&model, msg).is_err());
    }

    #[test]
    fn topology_validation_catches_misconfigurations() {
        let model = GaussianTarget::<f64>::exponential(3, 0.5, 1).unwrap();
        // Uncovered coordinate.
        let cfgs = vec![
            WorkerConfig::uniform(0, vec![CoordinateId(0)], vec![], Mode::Exact, 0.0),
            WorkerConfig::uniform(1, vec![CoordinateId(1)], vec![], Mode::Exact, 0.0),
        ];
        assert!(validate_topology(&model, &cfgs, false).is_err());
        // Duplicate ownership without the override.
        let cfgs = vec![
            WorkerConfig::uniform(
                0,
                vec![CoordinateId(0), CoordinateId(2)],
                vec![],
                Mode::Exact,
                0.0,
            ),
            WorkerConfig::uniform(
                1,
                vec![CoordinateId(1), CoordinateId(2)],
                vec![],
                Mode::Exact,
                0.0,
            ),
        ];
        assert!(validate_topology(&model, &cfgs, false).is_err());
        assert!(validate_topology(&model, &cfgs, true).is_ok());
        // Probabilities that do not normalize.
        let mut bad = WorkerConfig::uniform(
            0,
            vec![CoordinateId(0), CoordinateId(1), CoordinateId(2)],
            vec![],
            Mode::Exact,
            0.0,
        );
        bad.selection_probs[0].1 = 0.9;
        assert!(validate_topology(&model, &[bad], false).is_err());
        // Zero probability on an owned coordinate.
        let mut bad = WorkerConfig::uniform(
            0,
            vec![CoordinateId(0), CoordinateId(1), CoordinateId(2)],
            vec![],
            Mode::Exact,
            0.0,
        );
        bad.selection_probs[1] = (CoordinateId(1), 0.0);
        assert!(validate_topology(&model, &[bad], false).is_err());
    }

    #[test]
    fn exact_acceptance_rate_matches_recorded_ratios() {
        // The empirical accept rate of process_update must agree with the
        // mean recorded alpha within 3 binomial standard errors.
        let model = GaussianTarget::<f64>::jacobi(2, 1).unwrap();
        let opts = {
            let mut o = RunOptions::new(1, 77);
            o.reservoir_capacity = 100_000;
            o
        };
        let mut cfgs = two_worker_cfg(Mode::Exact);
        cfgs[1].diag_sample_prob = 1.0;
        let mut w: Worker<f64, _> = Worker::new(&model, cfgs[1].clone(), 2, &opts).unwrap();
        let mut rng = crate::scalar::worker_rng(13, 0);
        // The receiver conditions on a different second coordinate than the
        // sender, so ratios land strictly inside (0, 1).
        w.state.set_value(CoordinateId(1), Value::Scalar(1.5)).unwrap();
        let mut sender_state = model.initial_state();
        let n = 40_000u64;
        for clock in 1..=n {
            let (v, _) = model
                .sample_full_conditional(&sender_state, &(), CoordinateId(0), &mut rng)
                .unwrap();
            sender_state.set_value(CoordinateId(0), v).unwrap();
            let msg = message(&model, &sender_state, CoordinateId(0), 0, clock, &mut rng);
            w.process_update(&model, msg).unwrap();
        }
        let processed = (w.counters.accepted + w.counters.rejected) as f64;
        let rate = w.counters.accepted as f64 / processed;
        let mean_alpha: f64 = w.reservoir.items().iter().map(|s| s.alpha).sum::<f64>()
            / w.reservoir.len() as f64;
        let se = (mean_alpha * (1.0 - mean_alpha) / processed).sqrt();
        assert!(
            (rate - mean_alpha).abs() < 3.0 * se + 1e-3,
            "rate {rate} vs mean alpha {mean_alpha} (se {se})"
        );
        assert!(rate > 0.05 && rate < 0.999, "degenerate test: rate {rate}");
    }

    #[test]
    fn run_options_defaults() {
        let o = RunOptions::new(1000, 1);
        assert_eq!(o.burn_in, 100);
        assert_eq!(o.thin, 1);
        assert_eq!(o.reservoir_capacity, 10_000);
        let r: T0 = real(0.5);
        assert_eq!(r, 0.5);
    }

    type T0 = f64;
}
