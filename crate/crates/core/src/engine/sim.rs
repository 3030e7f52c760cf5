//! Deterministic discrete-event transport.
//!
//! Every worker step and every message delivery is an event with a virtual
//! timestamp. Events execute in timestamp order with a fixed tie-break, so a
//! run is a pure function of its configuration and seed. Deliveries never
//! precede their sends, workers step until they finish their budget, and
//! positive selection probabilities keep every coordinate active — the three
//! regularity conditions the protocol needs.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::message::Addressed;
use crate::model::TargetModel;
use crate::scalar::{salted_rng, Scalar, NETWORK_SEED_SALT, SCHEDULE_SEED_SALT};
use crate::state::WorkerId;

use super::{
    collect_results, validate_topology, NetCounters, RunOptions, RunResult, Worker, WorkerConfig,
};

/// Latency of one delivery, in virtual time.
#[derive(Debug, Clone, PartialEq)]
pub enum LatencyDist {
    Constant(f64),
    Uniform { lo: f64, hi: f64 },
    /// Number of failures before a success at probability `p`, one unit of
    /// virtual time each.
    Geometric { p: f64 },
}

impl LatencyDist {
    fn draw(&self, rng: &mut crate::scalar::EngineRng) -> f64 {
        let u: f64 = f64::unit_uniform(rng);
        match self {
            LatencyDist::Constant(d) => *d,
            LatencyDist::Uniform { lo, hi } => lo + u * (hi - lo),
            LatencyDist::Geometric { p } => {
                if *p >= 1.0 {
                    0.0
                } else {
                    (1.0 - u).ln() / (1.0 - p).ln()
                }
                .floor()
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            LatencyDist::Constant(d) => *d >= 0.0,
            LatencyDist::Uniform { lo, hi } => *lo >= 0.0 && hi >= lo,
            LatencyDist::Geometric { p } => *p > 0.0 && *p <= 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid latency {self:?}")))
        }
    }
}

/// How the transmit probability is applied to one broadcast.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropPolicy {
    /// Each (message, receiver) pair survives independently.
    PerLink,
    /// One draw per broadcast: the draw reaches every peer or none of them.
    /// Keeps receivers mutually coherent under loss, which is what makes the
    /// strong-dependence accept-all experiments stationary.
    PerBroadcast,
}

/// Link behavior between every ordered pair of workers.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    /// Probability a broadcast reaches each receiver.
    pub transmit_prob: f64,
    pub drop_policy: DropPolicy,
    pub latency: LatencyDist,
    /// Preserve send order per (sender, receiver) link.
    pub fifo_per_link: bool,
    /// Floor on every delivery delay.
    pub min_latency: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            transmit_prob: 1.0,
            drop_policy: DropPolicy::PerLink,
            latency: LatencyDist::Constant(0.0),
            fifo_per_link: true,
            min_latency: 0.0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.transmit_prob > 0.0 && self.transmit_prob <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "transmit_prob {} outside (0, 1]",
                self.transmit_prob
            )));
        }
        if self.min_latency < 0.0 {
            return Err(Error::InvalidConfig("min_latency must be >= 0".into()));
        }
        self.latency.validate()
    }
}

/// When workers take their steps.
#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    /// I.i.d. exponential inter-step times, one shared rate.
    ExponentialRate(f64),
    /// Per-worker exponential rates.
    ExponentialRates(Vec<f64>),
    /// Deterministic rotation: worker `w` steps at `dt·(k·m + w + 1)`.
    RoundRobin { dt: f64 },
}

impl Schedule {
    fn validate(&self, n_workers: usize) -> Result<()> {
        match self {
            Schedule::ExponentialRate(r) if *r > 0.0 => Ok(()),
            Schedule::ExponentialRates(rs) if rs.len() == n_workers && rs.iter().all(|r| *r > 0.0) => {
                Ok(())
            }
            Schedule::RoundRobin { dt } if *dt > 0.0 => Ok(()),
            other => Err(Error::InvalidConfig(format!("invalid schedule {other:?}"))),
        }
    }

    fn first(&self, worker: WorkerId, n_workers: usize, rng: &mut crate::scalar::EngineRng) -> f64 {
        match self {
            Schedule::RoundRobin { dt } => dt * (worker as f64 + 1.0),
            _ => self.interval(worker, n_workers, rng),
        }
    }

    fn interval(
        &self,
        worker: WorkerId,
        n_workers: usize,
        rng: &mut crate::scalar::EngineRng,
    ) -> f64 {
        match self {
            Schedule::ExponentialRate(rate) => exp_draw(*rate, rng),
            Schedule::ExponentialRates(rates) => exp_draw(rates[worker], rng),
            Schedule::RoundRobin { dt } => dt * n_workers as f64,
        }
    }
}

fn exp_draw(rate: f64, rng: &mut crate::scalar::EngineRng) -> f64 {
    let u: f64 = f64::unit_uniform(rng);
    -(1.0 - u).ln() / rate
}

/// A scheduled simulator event.
#[derive(Debug, Clone, PartialEq)]
pub enum TransportEvent<T: Scalar> {
    WorkerStep(WorkerId),
    Deliver(Addressed<T>),
}

struct Event<T: Scalar> {
    time: f64,
    seq: u64,
    kind: TransportEvent<T>,
}

impl<T: Scalar> Event<T> {
    /// Deliveries sort ahead of steps at equal times, so zero-latency
    /// broadcasts are processed before anyone moves again.
    fn key(&self) -> (f64, u8, usize, u64) {
        match &self.kind {
            TransportEvent::Deliver(a) => (self.time, 0, a.receiver, self.seq),
            TransportEvent::WorkerStep(w) => (self.time, 1, *w, self.seq),
        }
    }
}

impl<T: Scalar> PartialEq for Event<T> {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}
impl<T: Scalar> Eq for Event<T> {}
impl<T: Scalar> PartialOrd for Event<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T: Scalar> Ord for Event<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap and we want the earliest event.
        let (ta, ka, wa, sa) = self.key();
        let (tb, kb, wb, sb) = other.key();
        tb.total_cmp(&ta)
            .then_with(|| kb.cmp(&ka))
            .then_with(|| wb.cmp(&wa))
            .then_with(|| sb.cmp(&sa))
    }
}

/// Run the protocol on the simulated transport. Fully deterministic given
/// the configuration and `opts.seed`.
pub fn run_simulated<T: Scalar, M: TargetModel<T>>(
    model: &M,
    worker_cfgs: &[WorkerConfig],
    net: &NetworkConfig,
    schedule: &Schedule,
    opts: &RunOptions,
) -> Result<RunResult> {
    validate_topology(model, worker_cfgs, opts.allow_shared_ownership)?;
    net.validate()?;
    schedule.validate(worker_cfgs.len())?;

    let m = worker_cfgs.len();
    let mut workers: Vec<Worker<T, M>> = worker_cfgs
        .iter()
        .map(|cfg| Worker::new(model, cfg.clone(), m, opts))
        .collect::<Result<_>>()?;
    let mut sched_rng = salted_rng(opts.seed, SCHEDULE_SEED_SALT);
    let mut net_rng = salted_rng(opts.seed, NETWORK_SEED_SALT);

    let mut heap: BinaryHeap<Event<T>> = BinaryHeap::new();
    let mut seq = 0u64;
    for w in 0..m {
        heap.push(Event {
            time: schedule.first(w, m, &mut sched_rng),
            seq,
            kind: TransportEvent::WorkerStep(w),
        });
        seq += 1;
    }

    let mut counters = NetCounters::default();
    // Last delivery time per directed link, for FIFO ordering.
    let mut link_last = vec![0.0f64; m * m];

    let mut halted = false;
    while let Some(ev) = heap.pop() {
        if halted {
            // Drain without executing; in-flight messages count as dropped.
            if matches!(ev.kind, TransportEvent::Deliver(_)) {
                counters.dropped += 1;
            }
            continue;
        }
        let now = ev.time;
        match ev.kind {
            TransportEvent::WorkerStep(w) => {
                let broadcasts = workers[w].step(model)?;
                halted |= workers[w].diverged();
                let whole_broadcast_survives = match net.drop_policy {
                    DropPolicy::PerBroadcast if !broadcasts.is_empty() => {
                        f64::unit_uniform(&mut net_rng) < net.transmit_prob
                    }
                    _ => true,
                };
                for addressed in broadcasts {
                    counters.sent += 1;
                    let delivered = match net.drop_policy {
                        DropPolicy::PerLink => {
                            f64::unit_uniform(&mut net_rng) < net.transmit_prob
                        }
                        DropPolicy::PerBroadcast => whole_broadcast_survives,
                    };
                    if !delivered {
                        counters.dropped += 1;
                        continue;
                    }
                    let mut at = now + net.latency.draw(&mut net_rng).max(net.min_latency);
                    if net.fifo_per_link {
                        let slot = w * m + addressed.receiver;
                        at = at.max(link_last[slot]);
                        link_last[slot] = at;
                    }
                    debug_assert!(at >= now, "delivery may not precede its send");
                    heap.push(Event {
                        time: at,
                        seq,
                        kind: TransportEvent::Deliver(addressed),
                    });
                    seq += 1;
                }
                if workers[w].steps_done() < opts.steps_per_worker {
                    heap.push(Event {
                        time: now + schedule.interval(w, m, &mut sched_rng),
                        seq,
                        kind: TransportEvent::WorkerStep(w),
                    });
                    seq += 1;
                }
            }
            TransportEvent::Deliver(addressed) => {
                counters.delivered += 1;
                // The simulated transport hands a message to its worker the
                // moment it arrives; the buffered-inbox path is what the
                // threaded transport exercises.
                workers[addressed.receiver].process_update(model, addressed.message)?;
            }
        }
    }
    debug_assert_eq!(counters.sent, counters.delivered + counters.dropped);
    Ok(collect_results(workers, counters, opts, model))
}
