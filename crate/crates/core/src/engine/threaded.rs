//! Real threaded transport: one OS thread per worker, unbounded FIFO
//! channels, no shared mutable state.
//!
//! Runs are statistically equivalent to the simulated transport but not
//! bit-reproducible; interleaving depends on the scheduler.

use std::sync::mpsc;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::model::TargetModel;
use crate::scalar::Scalar;

use super::{
    collect_results, validate_topology, NetCounters, RunOptions, RunResult, Worker, WorkerConfig,
};

/// Run the protocol with one thread per worker. Workers that exhaust
/// `wall_clock_limit` stop early; their completed step counts are reported in
/// the per-worker counters.
pub fn run_threaded<T: Scalar, M: TargetModel<T>>(
    model: &M,
    worker_cfgs: &[WorkerConfig],
    opts: &RunOptions,
    wall_clock_limit: Duration,
) -> Result<RunResult> {
    validate_topology(model, worker_cfgs, opts.allow_shared_ownership)?;
    let m = worker_cfgs.len();

    let mut senders = Vec::with_capacity(m);
    let mut receivers = Vec::with_capacity(m);
    for _ in 0..m {
        let (tx, rx) = mpsc::channel();
        senders.push(tx);
        receivers.push(Some(rx));
    }

    let started = Instant::now();
    let mut joined: Vec<(Worker<T, M>, u64, u64)> = Vec::with_capacity(m);

    std::thread::scope(|scope| -> Result<()> {
        let mut handles = Vec::with_capacity(m);
        for cfg in worker_cfgs {
            let id = cfg.worker_id;
            let rx = receivers[id].take().expect("receiver handed out once");
            let peers: Vec<mpsc::Sender<_>> = senders.clone();
            let mut worker = Worker::new(model, cfg.clone(), m, opts)?;
            handles.push(scope.spawn(move || -> Result<(Worker<T, M>, u64, u64)> {
                let mut sent = 0u64;
                let mut send_failures = 0u64;
                for _ in 0..opts.steps_per_worker {
                    if started.elapsed() > wall_clock_limit || worker.diverged() {
                        break;
                    }
                    // Pull everything queued since the last step; the step
                    // drains the inbox after its own sample, so nothing can
                    // linger past the final iteration.
                    while let Ok(msg) = rx.try_recv() {
                        worker.inbox.push_back(msg);
                    }
                    let broadcasts = worker.step(model)?;
                    for a in broadcasts {
                        sent += 1;
                        if peers[a.receiver].send(a.message).is_err() {
                            send_failures += 1;
                        }
                    }
                    // Keep step rates roughly homogeneous when workers
                    // outnumber cores; a spinning worker must not starve its
                    // peers into sampling against frozen remote values.
                    std::thread::yield_now();
                }
                // Whatever is still queued was sent but never handed over.
                let mut leftover = 0u64;
                while rx.try_recv().is_ok() {
                    leftover += 1;
                }
                Ok((worker, sent, send_failures + leftover))
            }));
        }
        drop(senders);
        for handle in handles {
            match handle.join() {
                Ok(Ok(parts)) => joined.push(parts),
                Ok(Err(e)) => return Err(e),
                Err(panic) => {
                    let msg = panic
                        .downcast_ref::<&str>()
                        .map(|s| s.to_string())
                        .or_else(|| panic.downcast_ref::<String>().cloned())
                        .unwrap_or_else(|| "unknown panic".into());
                    return Err(Error::WorkerPanicked(joined.len(), msg));
                }
            }
        }
        Ok(())
    })?;

    joined.sort_by_key(|(w, _, _)| w.id());
    let mut counters = NetCounters::default();
    let mut workers = Vec::with_capacity(m);
    for (w, sent, undelivered) in joined {
        counters.sent += sent;
        counters.dropped += undelivered;
        workers.push(w);
    }
    counters.delivered = counters.sent - counters.dropped;
    Ok(collect_results(workers, counters, opts, model))
}
