//! Task transmission, CPU allocation at the UAVs and the HAP, store-and-
//! forward of UAV remnants, and the bit ledgers that tie them together.
//!
//! Two schedulers share the ledger:
//!
//! * **elastic**: a task is split freely across slots, subchannels, UAVs and
//!   compute tiers. A fraction `theta` of the bits arriving at a UAV is
//!   processed there, the rest waits at the UAV and is forwarded to the HAP
//!   in a later slot, where a fraction `eta` of the buffered pool is
//!   processed each slot.
//! * **fixed**: a task moves and is processed only as a whole. Transmission
//!   needs one slot's rate to cover the task, each CPU stage needs spare
//!   capacity for the whole task, and `theta`/`eta` act as on/off switches.
//!
//! Bits are real-valued. For every task,
//! `user_remaining + uav remnants + hap pool + processed + written_off`
//! equals the task size up to rounding.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::Dims;
use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::rng::SimRng;

/// A task counts as complete once its unprocessed bits drop to this
/// fraction of its size; the leftover is written off.
pub const COMPLETION_TOLERANCE: f64 = 1e-6;

/// Threshold above which a CPU fraction switches a fixed-scheduler stage on.
pub const FIXED_SWITCH: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TaskRecord {
    pub total_bits: f64,
    pub user_remaining: f64,
    /// Slot at which the task was generated, `None` until then.
    pub gen_time: Option<usize>,
    pub processed_uav: f64,
    pub processed_hap: f64,
    /// Sub-tolerance residue dropped at completion.
    pub written_off: f64,
    pub completed_at: Option<usize>,
}

impl TaskRecord {
    pub fn generated(&self) -> bool {
        self.gen_time.is_some()
    }

    pub fn active(&self) -> bool {
        self.generated() && self.completed_at.is_none()
    }

    pub fn processed(&self) -> f64 {
        self.processed_uav + self.processed_hap
    }
}

/// Bits of one task waiting at a UAV for the backhaul.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Remnant {
    pub arrival_slot: usize,
    pub user: usize,
    pub task: usize,
    pub bits: f64,
}

/// Per-task bookkeeping of where every bit currently is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskLedger {
    pub users: usize,
    pub tasks_per_user: usize,
    pub uavs: usize,
    /// Indexed `user * tasks_per_user + task`.
    pub tasks: Vec<TaskRecord>,
    /// Task currently in flight for each user.
    pub current: Vec<Option<usize>>,
    /// Per-UAV FIFO of remnants.
    pub uav_remnants: Vec<Vec<Remnant>>,
    /// Bits buffered at the HAP per task.
    pub hap_pool: Vec<f64>,
    /// Remnant bits per (UAV, user, task) at the previous slot boundary.
    pub prev_uav_remnants: Vec<f64>,
    /// Cycles spent in the last slot per (UAV, user, task).
    pub uav_cycles: Vec<f64>,
    /// Cycles spent in the last slot at the HAP per task.
    pub hap_cycles: Vec<f64>,
}

impl TaskLedger {
    /// Ledger at slot 0: every user holds its first task, generated at 0.
    pub fn new(cfg: &ScenarioConfig) -> Self {
        let (m, s, u) = (cfg.num_users, cfg.max_tasks_per_user, cfg.num_uavs);
        let mut ledger = Self {
            users: m,
            tasks_per_user: s,
            uavs: u,
            tasks: vec![TaskRecord::default(); m * s],
            current: vec![None; m],
            uav_remnants: vec![Vec::new(); u],
            hap_pool: vec![0.0; m * s],
            prev_uav_remnants: vec![0.0; u * m * s],
            uav_cycles: vec![0.0; u * m * s],
            hap_cycles: vec![0.0; m * s],
        };
        for user in 0..m {
            ledger.activate(user, 0, 0, cfg.task_size);
        }
        ledger
    }

    #[inline]
    pub fn task_index(&self, user: usize, task: usize) -> usize {
        user * self.tasks_per_user + task
    }

    #[inline]
    pub fn uav_task_index(&self, uav: usize, user: usize, task: usize) -> usize {
        uav * self.users * self.tasks_per_user + self.task_index(user, task)
    }

    pub fn task(&self, user: usize, task: usize) -> &TaskRecord {
        &self.tasks[self.task_index(user, task)]
    }

    pub fn is_active(&self, user: usize, task: usize) -> bool {
        self.task(user, task).active()
    }

    fn activate(&mut self, user: usize, task: usize, slot: usize, bits: f64) {
        let i = self.task_index(user, task);
        self.tasks[i] = TaskRecord {
            total_bits: bits,
            user_remaining: bits,
            gen_time: Some(slot),
            ..TaskRecord::default()
        };
        self.current[user] = Some(task);
    }

    /// Number of tasks generated so far by `user`.
    pub fn generated_count(&self, user: usize) -> usize {
        (0..self.tasks_per_user).filter(|&s| self.task(user, s).generated()).count()
    }

    pub fn completed_count(&self) -> usize {
        self.tasks.iter().filter(|t| t.completed_at.is_some()).count()
    }

    pub fn all_done(&self) -> bool {
        self.tasks.iter().all(|t| t.completed_at.is_some())
    }

    /// Remnant bits of `(user, task)` waiting at `uav`.
    pub fn uav_remnant(&self, uav: usize, user: usize, task: usize) -> f64 {
        self.uav_remnants[uav]
            .iter()
            .filter(|r| r.user == user && r.task == task)
            .map(|r| r.bits)
            .sum()
    }

    /// Total remnant bits waiting at `uav`.
    pub fn uav_remnant_total(&self, uav: usize) -> f64 {
        self.uav_remnants[uav].iter().map(|r| r.bits).sum()
    }

    pub fn hap_pool_total(&self) -> f64 {
        self.hap_pool.iter().sum()
    }

    /// Bits of a task not yet processed anywhere.
    pub fn unprocessed(&self, user: usize, task: usize) -> f64 {
        let t = self.task(user, task);
        let at_uavs: f64 = (0..self.uavs).map(|u| self.uav_remnant(u, user, task)).sum();
        t.user_remaining + at_uavs + self.hap_pool[self.task_index(user, task)]
    }

    /// Absolute imbalance of the conservation identity for one task.
    pub fn conservation_error(&self, user: usize, task: usize) -> f64 {
        let t = self.task(user, task);
        if !t.generated() {
            return 0.0;
        }
        (self.unprocessed(user, task) + t.processed() + t.written_off - t.total_bits).abs()
    }

    /// Records the per-(UAV, user, task) remnants as the "previous slot"
    /// snapshot, to be called at the start of every slot.
    pub fn snapshot_remnants(&mut self) {
        let mut snap = vec![0.0; self.prev_uav_remnants.len()];
        for (u, q) in self.uav_remnants.iter().enumerate() {
            for r in q {
                snap[u * self.users * self.tasks_per_user + r.user * self.tasks_per_user + r.task] +=
                    r.bits;
            }
        }
        self.prev_uav_remnants = snap;
    }

    /// Marks tasks whose unprocessed bits fell within tolerance as complete
    /// at `slot`, writing the residue off. Returns `(user, task)` pairs.
    pub fn detect_completions(&mut self, slot: usize) -> Vec<(usize, usize)> {
        let mut done = Vec::new();
        for user in 0..self.users {
            let Some(task) = self.current[user] else { continue };
            let rest = self.unprocessed(user, task);
            let i = self.task_index(user, task);
            if rest > COMPLETION_TOLERANCE * self.tasks[i].total_bits {
                continue;
            }
            for q in self.uav_remnants.iter_mut() {
                q.retain(|r| !(r.user == user && r.task == task));
            }
            let t = &mut self.tasks[i];
            t.written_off += rest;
            t.user_remaining = 0.0;
            t.completed_at = Some(slot);
            self.hap_pool[i] = 0.0;
            self.current[user] = None;
            done.push((user, task));
        }
        done
    }
}

/// Bits of one task that reached a UAV during a slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arrival {
    pub uav: usize,
    pub user: usize,
    pub task: usize,
    pub bits: f64,
}

/// Uplink transmission: each user's current task sends
/// `min(sum_n R[u][m][n], remaining)` bits to every UAV serving it.
/// `rates` is laid out like [`Dims::idx`].
pub fn transmit_user_bits(ledger: &mut TaskLedger, rates: &[f64], dims: Dims) -> Vec<Arrival> {
    let mut arrivals = Vec::new();
    for user in 0..dims.users {
        let Some(task) = ledger.current[user] else { continue };
        let i = ledger.task_index(user, task);
        for uav in 0..dims.uavs {
            let rate: f64 = (0..dims.subchannels).map(|n| rates[dims.idx(uav, user, n)]).sum();
            let rem = ledger.tasks[i].user_remaining;
            let sent = rate.min(rem);
            if sent > 0.0 {
                ledger.tasks[i].user_remaining = rem - sent;
                arrivals.push(Arrival { uav, user, task, bits: sent });
            }
        }
    }
    arrivals
}

/// Whole-task uplink: the task leaves the user only if one UAV's
/// one-slot rate covers all of it.
pub fn transmit_whole_tasks(ledger: &mut TaskLedger, rates: &[f64], dims: Dims) -> Vec<Arrival> {
    let mut arrivals = Vec::new();
    for user in 0..dims.users {
        let Some(task) = ledger.current[user] else { continue };
        let i = ledger.task_index(user, task);
        let rem = ledger.tasks[i].user_remaining;
        if rem <= 0.0 {
            continue;
        }
        for uav in 0..dims.uavs {
            let rate: f64 = (0..dims.subchannels).map(|n| rates[dims.idx(uav, user, n)]).sum();
            if rate >= rem {
                ledger.tasks[i].user_remaining = 0.0;
                arrivals.push(Arrival { uav, user, task, bits: rem });
                break;
            }
        }
    }
    arrivals
}

/// Outcome of one CPU allocation round at a single node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpuAllocation {
    pub processed: Vec<f64>,
    pub remnant: Vec<f64>,
    pub cycles: Vec<f64>,
    pub usage: f64,
    /// Factor applied to every requested fraction (1 when within budget).
    pub scale: f64,
}

/// Processes a fraction of each bit batch, scaling all fractions down
/// proportionally when the requested cycles exceed `capacity`.
pub fn allocate_cpu(
    bits: &[f64],
    fractions: &[f64],
    cycles_per_bit: f64,
    capacity: f64,
) -> Result<CpuAllocation> {
    if bits.len() != fractions.len() {
        return Err(Error::Precondition("bits and fractions differ in length".into()));
    }
    if let Some(f) = fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(Error::Precondition(format!("CPU fraction {f} outside [0, 1]")));
    }
    if let Some(b) = bits.iter().find(|b| !(**b >= 0.0)) {
        return Err(Error::Precondition(format!("negative bit count {b}")));
    }
    let requested: f64 = bits.iter().zip(fractions).map(|(b, f)| f * cycles_per_bit * b).sum();
    let scale = if requested > capacity { capacity / requested } else { 1.0 };
    let mut out = CpuAllocation {
        processed: Vec::with_capacity(bits.len()),
        remnant: Vec::with_capacity(bits.len()),
        cycles: Vec::with_capacity(bits.len()),
        usage: 0.0,
        scale,
    };
    for (&b, &f) in bits.iter().zip(fractions) {
        let eff = (f * scale).min(1.0);
        let processed = eff * b;
        out.processed.push(processed);
        out.remnant.push(b - processed);
        out.cycles.push(processed * cycles_per_bit);
    }
    out.usage = out.cycles.iter().sum();
    Ok(out)
}

pub fn allocate_uav_cpu(
    arrived_bits: &[f64],
    theta: &[f64],
    cfg: &ScenarioConfig,
) -> Result<CpuAllocation> {
    allocate_cpu(arrived_bits, theta, cfg.c_uav, cfg.cpu_max_uav)
}

pub fn allocate_hap_cpu(bits: &[f64], eta: &[f64], cfg: &ScenarioConfig) -> Result<CpuAllocation> {
    allocate_cpu(bits, eta, cfg.c_hap, cfg.cpu_max_hap)
}

/// Bits of one task moved from a UAV to the HAP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Forward {
    pub user: usize,
    pub task: usize,
    pub bits: f64,
}

/// Serves the remnants that arrived before `slot`, oldest first (ties by
/// user then task index), until `capacity_bits` are used. Partially served
/// remnants keep their place at the head of the queue.
pub fn forward_to_hap(queue: &mut Vec<Remnant>, capacity_bits: f64, slot: usize) -> Vec<Forward> {
    queue.sort_by_key(|r| (r.arrival_slot, r.user, r.task));
    let mut left = capacity_bits.max(0.0);
    let mut sent = Vec::new();
    for r in queue.iter_mut() {
        if left <= 0.0 || r.arrival_slot >= slot {
            break;
        }
        let bits = r.bits.min(left);
        if bits > 0.0 {
            r.bits -= bits;
            left -= bits;
            sent.push(Forward { user: r.user, task: r.task, bits });
        }
    }
    queue.retain(|r| r.bits > 0.0);
    sent
}

/// Whole-task forwarding: the head remnant moves only if it fits in the
/// remaining backhaul capacity.
pub fn forward_whole_to_hap(
    queue: &mut Vec<Remnant>,
    capacity_bits: f64,
    slot: usize,
) -> Vec<Forward> {
    queue.sort_by_key(|r| (r.arrival_slot, r.user, r.task));
    let mut left = capacity_bits.max(0.0);
    let mut sent = Vec::new();
    let mut served = 0;
    for r in queue.iter() {
        if r.arrival_slot >= slot || r.bits > left {
            break;
        }
        left -= r.bits;
        sent.push(Forward { user: r.user, task: r.task, bits: r.bits });
        served += 1;
    }
    queue.drain(..served);
    sent
}

/// Possibly activates the next task of every idle user with tasks left.
///
/// One uniform draw is taken per user per slot whether or not the user is
/// eligible, so runs that differ only in scheduling see the same arrival
/// draws. Generation succeeds when the draw is below `task_gen_prob`.
pub fn maybe_generate_task(
    ledger: &mut TaskLedger,
    rng: &mut SimRng,
    cfg: &ScenarioConfig,
    slot: usize,
) -> Vec<(usize, usize)> {
    let mut generated = Vec::new();
    for user in 0..ledger.users {
        let draw: f64 = rng.random();
        if ledger.current[user].is_some() {
            continue;
        }
        let next = ledger.generated_count(user);
        if next >= ledger.tasks_per_user {
            continue;
        }
        if draw < cfg.task_gen_prob {
            ledger.activate(user, next, slot, cfg.task_size);
            generated.push((user, next));
        }
    }
    generated
}

/// Which task-handling discipline a slot runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerKind {
    #[default]
    Elastic,
    Fixed,
}

/// CPU and backhaul decisions for one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComputeDecision {
    /// `theta` per (UAV, user, task), laid out like
    /// [`TaskLedger::uav_task_index`].
    pub theta: Vec<f64>,
    /// `eta` per (user, task).
    pub eta: Vec<f64>,
    /// Backhaul rate of every UAV this slot, bit/s.
    pub backhaul_rate: Vec<f64>,
}

/// Bit and cycle flows of one slot.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SlotFlows {
    /// Bits sent by users, per (UAV, user, task).
    pub sent: Vec<f64>,
    pub uav_processed: Vec<f64>,
    /// Bits forwarded to the HAP, per (UAV, user, task).
    pub forwarded: Vec<f64>,
    /// Bits processed at the HAP, per (user, task).
    pub hap_processed: Vec<f64>,
    pub uav_usage: Vec<f64>,
    pub hap_usage: f64,
}

/// Runs transmission, UAV CPU, forwarding and HAP CPU for one slot.
pub fn run_compute_slot(
    ledger: &mut TaskLedger,
    kind: SchedulerKind,
    rates: &[f64],
    dims: Dims,
    decision: &ComputeDecision,
    cfg: &ScenarioConfig,
    slot: usize,
) -> Result<SlotFlows> {
    let (u_n, ms) = (ledger.uavs, ledger.users * ledger.tasks_per_user);
    if decision.theta.len() != u_n * ms
        || decision.eta.len() != ms
        || decision.backhaul_rate.len() != u_n
    {
        return Err(Error::Precondition("compute decision has wrong shape".into()));
    }
    let mut flows = SlotFlows {
        sent: vec![0.0; u_n * ms],
        uav_processed: vec![0.0; u_n * ms],
        forwarded: vec![0.0; u_n * ms],
        hap_processed: vec![0.0; ms],
        uav_usage: vec![0.0; u_n],
        hap_usage: 0.0,
    };
    ledger.uav_cycles.iter_mut().for_each(|c| *c = 0.0);
    ledger.hap_cycles.iter_mut().for_each(|c| *c = 0.0);

    let arrivals = match kind {
        SchedulerKind::Elastic => transmit_user_bits(ledger, rates, dims),
        SchedulerKind::Fixed => transmit_whole_tasks(ledger, rates, dims),
    };
    for a in &arrivals {
        flows.sent[ledger.uav_task_index(a.uav, a.user, a.task)] += a.bits;
    }

    // UAV CPU on this slot's arrivals
    for uav in 0..u_n {
        let here: Vec<&Arrival> = arrivals.iter().filter(|a| a.uav == uav).collect();
        let frac: Vec<f64> = here
            .iter()
            .map(|a| decision.theta[ledger.uav_task_index(uav, a.user, a.task)])
            .collect();
        let bits: Vec<f64> = here.iter().map(|a| a.bits).collect();
        let alloc = match kind {
            SchedulerKind::Elastic => allocate_uav_cpu(&bits, &frac, cfg)?,
            SchedulerKind::Fixed => whole_task_cpu(&bits, &frac, cfg.c_uav, cfg.cpu_max_uav)?,
        };
        for (k, a) in here.iter().enumerate() {
            let ti = ledger.task_index(a.user, a.task);
            let uti = ledger.uav_task_index(uav, a.user, a.task);
            ledger.tasks[ti].processed_uav += alloc.processed[k];
            ledger.uav_cycles[uti] += alloc.cycles[k];
            flows.uav_processed[uti] += alloc.processed[k];
            if alloc.remnant[k] > 0.0 {
                ledger.uav_remnants[uav].push(Remnant {
                    arrival_slot: slot,
                    user: a.user,
                    task: a.task,
                    bits: alloc.remnant[k],
                });
            }
        }
        flows.uav_usage[uav] = alloc.usage;
    }

    // backhaul: only remnants from earlier slots move
    let mut hap_in = vec![0.0; ms];
    for uav in 0..u_n {
        let cap = decision.backhaul_rate[uav];
        let sent = match kind {
            SchedulerKind::Elastic => forward_to_hap(&mut ledger.uav_remnants[uav], cap, slot),
            SchedulerKind::Fixed => {
                forward_whole_to_hap(&mut ledger.uav_remnants[uav], cap, slot)
            }
        };
        for f in sent {
            let ti = ledger.task_index(f.user, f.task);
            hap_in[ti] += f.bits;
            flows.forwarded[ledger.uav_task_index(uav, f.user, f.task)] += f.bits;
        }
    }

    // HAP CPU on the buffered pool plus this slot's forwards
    let bits: Vec<f64> = ledger.hap_pool.iter().zip(&hap_in).map(|(p, b)| p + b).collect();
    let alloc = match kind {
        SchedulerKind::Elastic => allocate_hap_cpu(&bits, &decision.eta, cfg)?,
        SchedulerKind::Fixed => whole_task_cpu(&bits, &decision.eta, cfg.c_hap, cfg.cpu_max_hap)?,
    };
    for i in 0..ms {
        ledger.tasks[i].processed_hap += alloc.processed[i];
        ledger.hap_pool[i] = alloc.remnant[i];
        ledger.hap_cycles[i] = alloc.cycles[i];
        flows.hap_processed[i] = alloc.processed[i];
    }
    flows.hap_usage = alloc.usage;
    Ok(flows)
}

/// All-or-nothing CPU: batches are taken in order and processed whole when
/// their switch is on and the remaining budget covers them.
fn whole_task_cpu(
    bits: &[f64],
    switches: &[f64],
    cycles_per_bit: f64,
    capacity: f64,
) -> Result<CpuAllocation> {
    if let Some(f) = switches.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(Error::Precondition(format!("CPU fraction {f} outside [0, 1]")));
    }
    let mut out = CpuAllocation {
        processed: vec![0.0; bits.len()],
        remnant: bits.to_vec(),
        cycles: vec![0.0; bits.len()],
        usage: 0.0,
        scale: 1.0,
    };
    for (k, (&b, &f)) in bits.iter().zip(switches).enumerate() {
        let need = b * cycles_per_bit;
        if b > 0.0 && f >= FIXED_SWITCH && out.usage + need <= capacity {
            out.processed[k] = b;
            out.remnant[k] = 0.0;
            out.cycles[k] = need;
            out.usage += need;
        }
    }
    Ok(out)
}
