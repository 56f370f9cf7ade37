//! Simulated synchronous data-parallel training over in-process workers.
//!
//! Each worker owns a full model replica. Every step all workers compute
//! gradients on their shard from identical weights; batch-norm statistics
//! (and the two per-channel reduction sums of the BN backward pass) are
//! summed across workers through a barrier bus, which makes the sharded
//! pass algebraically equal to one large batch. Gradients are then
//! mean-reduced in a fixed, topology-defined order and every worker applies
//! the same Adam step with the learning rate scaled by the worker count, so
//! replicas never diverge.
//!
//! Sharding contract: with per-worker batch `b` and `W` workers, step `t`
//! of an epoch covers `order[t·W·b .. (t+1)·W·b]` and worker `w` takes the
//! contiguous sub-range `[w·b, (w+1)·b)` of that window; the concatenation
//! of the shards equals the single-worker batch of size `W·b`.

use std::sync::{Arc, Barrier, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{Model, ModelConfig};
use crate::data::{Dataset, PatchSample};
use crate::scalar::Scalar;
use crate::tape::{Collective, Mode, SyncHandle, Tape};
use crate::train::{batch_tensors, epoch_order, lr_schedule, Adam, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum DistError {
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Train(#[from] TrainError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    Ring,
    Tree,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkerPoolConfig {
    pub workers: usize,
    pub per_worker_batch: usize,
    pub topology: Topology,
    /// Per-worker base rate; the effective rate is `base_lr · workers`.
    pub base_lr: f64,
    /// Bitwise replica-equality audit after every step (costs one extra
    /// exchange per step).
    pub verify_replicas: bool,
}

impl WorkerPoolConfig {
    pub fn new(workers: usize, per_worker_batch: usize, base_lr: f64) -> Self {
        Self {
            workers,
            per_worker_batch,
            topology: Topology::Ring,
            base_lr,
            verify_replicas: false,
        }
    }

    pub fn effective_lr(&self) -> f64 {
        self.base_lr * self.workers as f64
    }

    pub fn validate(&self) -> Result<(), DistError> {
        if self.workers == 0 || self.per_worker_batch == 0 {
            return Err(DistError::Pool(
                "workers and per_worker_batch must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

// ── barrier bus for batch-statistic sync ────────────────────────────────

/// All-to-all sum over equally sized buffers. Every worker reads the slots
/// in ascending worker order, so the float summation order is fixed and the
/// result is bitwise identical on all workers.
pub struct ThreadBus<E> {
    slots: Vec<Mutex<Vec<E>>>,
    barrier: Barrier,
}

impl<E: Scalar> ThreadBus<E> {
    pub fn new(workers: usize) -> Self {
        Self {
            slots: (0..workers).map(|_| Mutex::new(Vec::new())).collect(),
            barrier: Barrier::new(workers),
        }
    }
}

impl<E: Scalar> Collective<E> for ThreadBus<E> {
    fn allreduce_sum(&self, rank: usize, buf: &mut [E]) {
        {
            let mut slot = self.slots[rank].lock().expect("bus slot");
            slot.clear();
            slot.extend_from_slice(buf);
        }
        self.barrier.wait();
        buf.fill(E::ZERO);
        for slot in &self.slots {
            let s = slot.lock().expect("bus slot");
            assert_eq!(s.len(), buf.len(), "collective buffer length mismatch");
            for (b, &v) in buf.iter_mut().zip(s.iter()) {
                *b = *b + v;
            }
        }
        self.barrier.wait();
    }

    fn workers(&self) -> usize {
        self.slots.len()
    }
}

// ── sharding ────────────────────────────────────────────────────────────

/// Splits an epoch ordering into per-step, per-worker shards. Only full
/// global steps are kept (`N mod (W·b)` trailing samples are dropped, the
/// same drop-last rule the single-worker loop uses).
pub fn shard_batches(
    order: &[usize],
    workers: usize,
    per_worker_batch: usize,
) -> Vec<Vec<Vec<usize>>> {
    let global = workers * per_worker_batch;
    order
        .chunks_exact(global)
        .map(|step| {
            (0..workers)
                .map(|w| step[w * per_worker_batch..(w + 1) * per_worker_batch].to_vec())
                .collect()
        })
        .collect()
}

// ── gradient reduction ──────────────────────────────────────────────────

/// One worker's gradients, aligned with the model's named parameters.
/// Parameters untouched by the loss carry `None`.
#[derive(Debug, Clone)]
pub struct GradSet<E> {
    pub names: Arc<Vec<String>>,
    pub values: Vec<Option<Vec<E>>>,
}

impl<E: Scalar> GradSet<E> {
    pub fn bytes(&self) -> u64 {
        self.values
            .iter()
            .map(|v| v.as_ref().map_or(0, |g| g.len() * std::mem::size_of::<E>()) as u64)
            .sum()
    }
}

fn combine<E: Scalar>(mut acc: GradSet<E>, next: &GradSet<E>) -> Result<GradSet<E>, DistError> {
    if acc.names != next.names {
        return Err(DistError::Protocol(
            "gradient sets disagree on tensor names".into(),
        ));
    }
    for (i, (a, b)) in acc.values.iter_mut().zip(next.values.iter()).enumerate() {
        match (a.as_mut(), b) {
            (Some(av), Some(bv)) => {
                if av.len() != bv.len() {
                    return Err(DistError::Protocol(format!(
                        "tensor {:?}: gradient lengths {} vs {}",
                        acc.names[i],
                        av.len(),
                        bv.len()
                    )));
                }
                for (x, &y) in av.iter_mut().zip(bv.iter()) {
                    *x = *x + y;
                }
            }
            (None, None) => {}
            _ => {
                return Err(DistError::Protocol(format!(
                    "tensor {:?}: gradient present on one worker only",
                    acc.names[i]
                )));
            }
        }
    }
    Ok(acc)
}

/// Element-wise mean of per-worker gradient sets with a fixed summation
/// order per topology: the ring accumulates in ascending worker order, the
/// tree reduces pairs recursively. Both are deterministic for a given
/// worker count; they differ only in float rounding.
pub fn allreduce_mean<E: Scalar>(
    sets: &[GradSet<E>],
    topology: Topology,
) -> Result<GradSet<E>, DistError> {
    let w = sets.len();
    if w == 0 {
        return Err(DistError::Protocol("no gradient sets to reduce".into()));
    }
    let mut sum = match topology {
        Topology::Ring => {
            let mut acc = sets[0].clone();
            for s in &sets[1..] {
                acc = combine(acc, s)?;
            }
            acc
        }
        Topology::Tree => {
            let mut level: Vec<GradSet<E>> = sets.to_vec();
            while level.len() > 1 {
                let mut next = Vec::with_capacity(level.len().div_ceil(2));
                let mut it = level.into_iter();
                while let Some(a) = it.next() {
                    match it.next() {
                        Some(b) => next.push(combine(a, &b)?),
                        None => next.push(a),
                    }
                }
                level = next;
            }
            level.pop().expect("nonempty")
        }
    };
    let inv = E::from_f64c(1.0 / w as f64);
    for v in sum.values.iter_mut().flatten() {
        for x in v.iter_mut() {
            *x = *x * inv;
        }
    }
    Ok(sum)
}

// ── the worker pool ─────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistStats {
    pub workers: usize,
    pub wall_seconds: f64,
    pub steps: usize,
    pub per_epoch_loss: Vec<f64>,
    /// Max absolute cross-replica weight difference observed after any
    /// step (only populated when `verify_replicas` is on; equality must be
    /// exact, so anything above 0 is a defect).
    pub max_replica_divergence: f64,
    pub reduction_bytes: u64,
    pub per_step_seconds: Vec<f64>,
}

impl DistStats {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,seconds,reduction_bytes\n");
        let per_step_bytes = self.reduction_bytes / self.steps.max(1) as u64;
        for (i, t) in self.per_step_seconds.iter().enumerate() {
            s.push_str(&format!("{i},{t:.6},{per_step_bytes}\n"));
        }
        s
    }
}

struct Exchange<E> {
    grad_slots: Vec<Mutex<Option<GradSet<E>>>>,
    reduced: Mutex<Option<GradSet<E>>>,
    loss_slots: Vec<Mutex<f64>>,
    replica_crc: Vec<Mutex<u64>>,
    barrier: Barrier,
    abort: Mutex<Option<String>>,
    divergence: Mutex<f64>,
    reduction_bytes: Mutex<u64>,
}

fn params_fingerprint<E: Scalar>(model: &Model<E>) -> u64 {
    // FNV-1a over the raw f64 bit patterns
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for e in model.params.entries() {
        for v in &e.data {
            for b in v.to_f64c().to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x1000_0000_01b3);
            }
        }
    }
    h
}

/// Synchronous data-parallel training: builds one replica per worker from
/// the same seed and runs `train_cfg.epochs` epochs over `data`. Returns
/// the (identical) trained model and pool statistics.
pub fn distributed_train<E: Scalar>(
    model_config: &ModelConfig,
    data: &Dataset,
    pool: &WorkerPoolConfig,
    train_cfg: &TrainConfig,
) -> Result<(Model<E>, DistStats), DistError> {
    pool.validate()?;
    let w = pool.workers;
    let global_batch = w * pool.per_worker_batch;
    if data.len() < global_batch {
        return Err(DistError::Pool(format!(
            "dataset of {} samples cannot fill one global batch of {global_batch}",
            data.len()
        )));
    }
    let base = Model::<E>::build(model_config.clone(), train_cfg.seed)
        .map_err(TrainError::Config)?;
    let mut replicas: Vec<Model<E>> = (0..w).map(|_| base.clone()).collect();
    let names: Arc<Vec<String>> = Arc::new(
        base.params
            .entries()
            .iter()
            .map(|e| e.name.clone())
            .collect(),
    );
    let bus = Arc::new(ThreadBus::<E>::new(w));
    let exchange = Exchange {
        grad_slots: (0..w).map(|_| Mutex::new(None)).collect(),
        reduced: Mutex::new(None),
        loss_slots: (0..w).map(|_| Mutex::new(0.0)).collect(),
        replica_crc: (0..w).map(|_| Mutex::new(0)).collect(),
        barrier: Barrier::new(w),
        abort: Mutex::new(None),
        divergence: Mutex::new(0.0),
        reduction_bytes: Mutex::new(0),
    };
    let epochs = train_cfg.epochs;
    let epoch_losses: Vec<Mutex<Vec<f64>>> = (0..w).map(|_| Mutex::new(Vec::new())).collect();
    let step_times: Mutex<Vec<f64>> = Mutex::new(Vec::new());
    let start = Instant::now();
    let mut total_steps = 0usize;

    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for (rank, model) in replicas.iter_mut().enumerate() {
            let bus = Arc::clone(&bus);
            let names = Arc::clone(&names);
            let exchange = &exchange;
            let epoch_losses = &epoch_losses;
            let step_times = &step_times;
            handles.push(scope.spawn(move || -> Result<usize, DistError> {
                let mut adam = Adam::<E>::new(train_cfg);
                let mut trainer_steps = 0usize;
                for epoch in 0..epochs {
                    let order = epoch_order(data.len(), train_cfg.seed, epoch);
                    let steps = shard_batches(&order, w, pool.per_worker_batch);
                    let lr = {
                        let mut cfg = *train_cfg;
                        cfg.base_lr = pool.base_lr;
                        lr_schedule(epoch, &cfg) * w as f64
                    };
                    let mut my_losses = Vec::with_capacity(steps.len());
                    for step in &steps {
                        let t0 = Instant::now();
                        let shard: Vec<&PatchSample> =
                            step[rank].iter().map(|&i| &data.samples[i]).collect();
                        let (x, targets, _) =
                            batch_tensors::<E>(&shard, model.config.num_classes);
                        let mut tape = Tape::with_sync(SyncHandle {
                            bus: bus.clone() as Arc<dyn Collective<E>>,
                            rank,
                        });
                        let binding = model.bind(&mut tape);
                        let xid = tape.leaf(x);
                        let logits = model
                            .forward_bound(&mut tape, &binding, xid, Mode::Train)
                            .map_err(TrainError::Shape)?;
                        let loss = tape
                            .bce_with_logits(logits, &targets)
                            .map_err(TrainError::Shape)?;
                        let loss_val = tape.data(loss)[0].to_f64c();
                        tape.backward(loss).map_err(TrainError::Shape)?;
                        if !loss_val.is_finite() {
                            let mut abort = exchange.abort.lock().expect("abort flag");
                            abort.get_or_insert(format!(
                                "loss became NaN at epoch {epoch} on worker {rank}"
                            ));
                        }
                        let grads = GradSet {
                            names: Arc::clone(&names),
                            values: binding
                                .nodes()
                                .iter()
                                .map(|&n| tape.grad(n).map(|g| g.to_vec()))
                                .collect(),
                        };
                        *exchange.loss_slots[rank].lock().expect("loss slot") = loss_val;
                        *exchange.grad_slots[rank].lock().expect("grad slot") = Some(grads);
                        exchange.barrier.wait();
                        if exchange.abort.lock().expect("abort flag").is_some() {
                            return Ok(trainer_steps);
                        }
                        // One reducer writes the averaged set; everyone else
                        // observes it after the broadcast barrier.
                        if rank == 0 {
                            let sets: Vec<GradSet<E>> = exchange
                                .grad_slots
                                .iter()
                                .map(|s| s.lock().expect("grad slot").clone().expect("posted"))
                                .collect();
                            let bytes: u64 = sets.iter().map(|s| s.bytes()).sum();
                            *exchange.reduction_bytes.lock().expect("bytes") += bytes;
                            match allreduce_mean(&sets, pool.topology) {
                                Ok(r) => {
                                    *exchange.reduced.lock().expect("reduced") = Some(r);
                                }
                                Err(e) => {
                                    let mut abort = exchange.abort.lock().expect("abort flag");
                                    abort.get_or_insert(e.to_string());
                                }
                            }
                        }
                        exchange.barrier.wait();
                        if exchange.abort.lock().expect("abort flag").is_some() {
                            return Ok(trainer_steps);
                        }
                        let reduced = exchange
                            .reduced
                            .lock()
                            .expect("reduced")
                            .clone()
                            .expect("reduced set present");
                        adam.step(&mut model.params, &reduced.values, lr, |_| true);
                        trainer_steps += 1;
                        my_losses.push(loss_val);
                        if pool.verify_replicas {
                            *exchange.replica_crc[rank].lock().expect("crc slot") =
                                params_fingerprint(model);
                            exchange.barrier.wait();
                            if rank == 0 {
                                let first = *exchange.replica_crc[0].lock().expect("crc");
                                let diverged = exchange.replica_crc.iter().any(|c| {
                                    *c.lock().expect("crc") != first
                                });
                                if diverged {
                                    *exchange.divergence.lock().expect("divergence") = f64::MAX;
                                }
                            }
                            exchange.barrier.wait();
                        }
                        if rank == 0 {
                            step_times
                                .lock()
                                .expect("steps")
                                .push(t0.elapsed().as_secs_f64());
                        }
                    }
                    let mean = my_losses.iter().sum::<f64>() / my_losses.len().max(1) as f64;
                    epoch_losses[rank].lock().expect("losses").push(mean);
                }
                Ok(trainer_steps)
            }));
        }
        for h in handles {
            match h.join() {
                Ok(Ok(steps)) => total_steps = steps,
                Ok(Err(e)) => {
                    let mut abort = exchange.abort.lock().expect("abort flag");
                    abort.get_or_insert(e.to_string());
                }
                Err(_) => {
                    let mut abort = exchange.abort.lock().expect("abort flag");
                    abort.get_or_insert("worker panicked".into());
                }
            }
        }
    });

    if let Some(msg) = exchange.abort.lock().expect("abort flag").take() {
        return Err(DistError::Pool(msg));
    }
    // global loss per epoch = mean over workers of their local mean losses
    let n_epochs = epoch_losses[0].lock().expect("losses").len();
    let per_epoch_loss: Vec<f64> = (0..n_epochs)
        .map(|e| {
            epoch_losses
                .iter()
                .map(|l| l.lock().expect("losses")[e])
                .sum::<f64>()
                / w as f64
        })
        .collect();
    let stats = DistStats {
        workers: w,
        wall_seconds: start.elapsed().as_secs_f64(),
        steps: total_steps,
        per_epoch_loss,
        max_replica_divergence: *exchange.divergence.lock().expect("divergence"),
        reduction_bytes: *exchange.reduction_bytes.lock().expect("bytes"),
        per_step_seconds: step_times.into_inner().expect("steps"),
    };
    let model = replicas.into_iter().next().expect("at least one replica");
    Ok((model, stats))
}
