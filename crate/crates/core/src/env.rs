//! The network as a multi-agent MDP: observation encoding, action decoding
//! with feasibility projection, and the slot transition.
//!
//! Agents `0..U` are the UAVs, agent `U` is the HAP.
//!
//! UAV observation, in order:
//!
//! | block | length | scale |
//! |---|---|---|
//! | UAV poses, own first then the others by index | 3U | area, `h_max` |
//! | user x/y | 2M | area |
//! | task active flags `I[m,s]` | MS | |
//! | user-side remaining bits | MS | task size |
//! | own remnant bits `O[u,m,s]` | MS | task size |
//! | own CPU cycles spent last slot `C[u,m,s]` | MS | `C_max_uav` |
//! | AoI | M | horizon |
//!
//! HAP observation:
//!
//! | block | length | scale |
//! |---|---|---|
//! | UAV poses by index | 3U | area, `h_max` |
//! | task active flags | MS | |
//! | HAP CPU cycles spent last slot | MS | `C_max_hap` |
//! | bits buffered at the HAP | MS | task size |
//! | UAV remnants at the previous slot boundary `O[u,m,s](t-1)` | UMS | task size |
//! | AoI | M | horizon |
//!
//! UAV raw action: velocity (3), subchannel flags `K[m,n]` (MN), powers
//! `p[m,n]` (MN), CPU fractions `theta[m,s]` (MS). HAP raw action: backhaul
//! power entries `[u,m]` (UM, averaged over `m` per UAV), CPU fractions
//! `eta[m,s]` (MS). Raw entries live in `[-1, 1]`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::aoi::Completion;
use crate::channel::{noma_rates, uav_hap_rate, Allocation, ChannelRealization, Dims};
use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::scheduler::{run_compute_slot, ComputeDecision, SlotFlows, COMPLETION_TOLERANCE};
use crate::world::{init_world, move_uav, move_users, BoundingBox, WorldState};

pub use crate::scheduler::SchedulerKind;

/// Relative slack for capacity checks.
const CHECK_SLACK: f64 = 1e-9;

pub fn uav_obs_len(cfg: &ScenarioConfig) -> usize {
    let (u, m, s) = (cfg.num_uavs, cfg.num_users, cfg.max_tasks_per_user);
    2 * m + 4 * (m * s) + 3 * u + m
}

pub fn hap_obs_len(cfg: &ScenarioConfig) -> usize {
    let (u, m, s) = (cfg.num_uavs, cfg.num_users, cfg.max_tasks_per_user);
    3 * u + 3 * (m * s) + m + u * m * s
}

pub fn uav_action_len(cfg: &ScenarioConfig) -> usize {
    let (m, n, s) = (cfg.num_users, cfg.num_subchannels, cfg.max_tasks_per_user);
    3 + 2 * (m * n) + m * s
}

pub fn hap_action_len(cfg: &ScenarioConfig) -> usize {
    let (u, m, s) = (cfg.num_uavs, cfg.num_users, cfg.max_tasks_per_user);
    m * u + m * s
}

/// Observation length of agent `agent`.
pub fn obs_len(cfg: &ScenarioConfig, agent: usize) -> usize {
    if agent < cfg.num_uavs {
        uav_obs_len(cfg)
    } else {
        hap_obs_len(cfg)
    }
}

pub fn action_len(cfg: &ScenarioConfig, agent: usize) -> usize {
    if agent < cfg.num_uavs {
        uav_action_len(cfg)
    } else {
        hap_action_len(cfg)
    }
}

/// Decoded, feasible decisions of all agents for one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointAction {
    /// Requested UAV velocities, m/s per axis (speed-limited when applied).
    pub velocities: Vec<[f64; 3]>,
    pub alloc: Allocation,
    /// Laid out like [`crate::scheduler::TaskLedger::uav_task_index`].
    pub theta: Vec<f64>,
    pub backhaul_power: Vec<f64>,
    /// Per (user, task).
    pub eta: Vec<f64>,
}

impl JointAction {
    /// Hover, transmit nothing, process nothing.
    pub fn idle(cfg: &ScenarioConfig) -> Self {
        let ms = cfg.num_users * cfg.max_tasks_per_user;
        Self {
            velocities: vec![[0.0; 3]; cfg.num_uavs],
            alloc: Allocation::empty(Dims::of(cfg)),
            theta: vec![0.0; cfg.num_uavs * ms],
            backhaul_power: vec![0.0; cfg.num_uavs],
            eta: vec![0.0; ms],
        }
    }

    /// UAV a user transmits to, if any.
    pub fn serving_uav(&self, user: usize) -> Option<usize> {
        (0..self.alloc.dims.uavs).find(|&u| self.alloc.subchannels_of(u, user) > 0)
    }
}

fn clip(x: f64) -> f64 {
    if x.is_nan() {
        -1.0
    } else {
        x.clamp(-1.0, 1.0)
    }
}

/// Maps a raw entry in `[-1, 1]` to `[0, 1]`.
fn unit(x: f64) -> f64 {
    (clip(x) + 1.0) * 0.5
}

/// Keeps the `cap` candidates with the highest raw value (ties by lower
/// index) and returns the discarded ones.
fn over_cap(mut candidates: Vec<(usize, f64)>, cap: usize) -> Vec<usize> {
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    candidates.into_iter().skip(cap).map(|(i, _)| i).collect()
}

/// Decodes raw actor outputs (one vector per agent) into a feasible joint
/// action for the current state of `world`.
///
/// Flags are 1 for raw values in `[0, 1]`. Projection order: each user
/// keeps only the UAV with its strongest flag (ties by lower UAV index),
/// users with nothing left to send lose their flags, the per-user
/// subchannel cap keeps the highest raw flags (ties by subchannel index),
/// the per-subchannel user cap likewise (ties by user index), and a user's
/// powers are scaled down together to meet `p_max_user`. CPU fractions are
/// scaled later by the scheduler.
pub fn decode_action(
    raw: &[Vec<f64>],
    world: &WorldState,
    cfg: &ScenarioConfig,
) -> Result<JointAction> {
    let (un, m_n, n_n, s_n) =
        (cfg.num_uavs, cfg.num_users, cfg.num_subchannels, cfg.max_tasks_per_user);
    if raw.len() != un + 1 {
        return Err(Error::Length { what: "joint action", expected: un + 1, got: raw.len() });
    }
    for (i, r) in raw.iter().enumerate() {
        let want = action_len(cfg, i);
        if r.len() != want {
            return Err(Error::Length { what: "agent action", expected: want, got: r.len() });
        }
    }
    let dims = Dims::of(cfg);
    let mn = m_n * n_n;
    let flag_raw = |u: usize, m: usize, n: usize| clip(raw[u][3 + m * n_n + n]);
    let mut act = JointAction::idle(cfg);

    for u in 0..un {
        let r = &raw[u];
        act.velocities[u] = [clip(r[0]) * cfg.v_max, clip(r[1]) * cfg.v_max, clip(r[2]) * cfg.v_max];
        for m in 0..m_n {
            for s in 0..s_n {
                act.theta[world.ledger.uav_task_index(u, m, s)] = unit(r[3 + 2 * mn + m * s_n + s]);
            }
        }
    }

    let mut flags = vec![false; dims.len()];
    for m in 0..m_n {
        let sending = world.ledger.current[m]
            .is_some_and(|s| world.ledger.task(m, s).user_remaining > 0.0);
        if !sending {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for u in 0..un {
            let strongest =
                (0..n_n).map(|n| flag_raw(u, m, n)).fold(f64::NEG_INFINITY, f64::max);
            if strongest >= 0.0 && best.is_none_or(|(_, b)| strongest > b) {
                best = Some((u, strongest));
            }
        }
        let Some((u, _)) = best else { continue };
        let on: Vec<(usize, f64)> = (0..n_n)
            .map(|n| (n, flag_raw(u, m, n)))
            .filter(|&(_, v)| v >= 0.0)
            .collect();
        let dropped = over_cap(on.clone(), cfg.sc_per_user_cap);
        for (n, _) in on {
            flags[dims.idx(u, m, n)] = !dropped.contains(&n);
        }
    }
    for u in 0..un {
        for n in 0..n_n {
            let on: Vec<(usize, f64)> = (0..m_n)
                .filter(|&m| flags[dims.idx(u, m, n)])
                .map(|m| (m, flag_raw(u, m, n)))
                .collect();
            for m in over_cap(on, cfg.users_per_sc_cap) {
                flags[dims.idx(u, m, n)] = false;
            }
        }
    }

    for u in 0..un {
        for m in 0..m_n {
            let cells: Vec<usize> =
                (0..n_n).map(|n| dims.idx(u, m, n)).filter(|&i| flags[i]).collect();
            if cells.is_empty() {
                continue;
            }
            let powers: Vec<f64> = (0..n_n)
                .filter(|&n| flags[dims.idx(u, m, n)])
                .map(|n| unit(raw[u][3 + mn + m * n_n + n]) * cfg.p_max_user)
                .collect();
            let total: f64 = powers.iter().sum();
            let scale = if total > cfg.p_max_user { cfg.p_max_user / total } else { 1.0 };
            for (i, p) in cells.into_iter().zip(powers) {
                act.alloc.flags[i] = true;
                act.alloc.powers[i] = p * scale;
            }
        }
    }

    let h = &raw[un];
    for u in 0..un {
        let mean = (0..m_n).map(|m| unit(h[u * m_n + m])).sum::<f64>() / m_n as f64;
        act.backhaul_power[u] = (mean * cfg.p_max_uav).min(cfg.p_max_uav);
    }
    for i in 0..m_n * s_n {
        act.eta[i] = unit(h[m_n * un + i]);
    }
    Ok(act)
}

/// Result of one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    /// Index of the slot just simulated.
    pub slot: usize,
    /// Shared reward `-mean(AoI)`.
    pub reward: f64,
    /// Episode over: horizon reached or every task processed.
    pub done: bool,
    /// Every task processed; the state is absorbing.
    pub terminal: bool,
    /// Uplink rates, laid out like [`Dims::idx`].
    pub rates: Vec<f64>,
    pub backhaul_rates: Vec<f64>,
    pub flows: SlotFlows,
    pub completions: Vec<Completion>,
    pub generated: Vec<(usize, usize)>,
}

impl StepOutcome {
    /// Uplink rate of every user summed over UAVs and subchannels.
    pub fn user_rates(&self, dims: Dims) -> Vec<f64> {
        (0..dims.users)
            .map(|m| {
                (0..dims.uavs)
                    .flat_map(|u| (0..dims.subchannels).map(move |n| (u, n)))
                    .map(|(u, n)| self.rates[dims.idx(u, m, n)])
                    .sum()
            })
            .collect()
    }
}

/// One simulation run: configuration, scheduler and evolving world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Env {
    cfg: ScenarioConfig,
    kind: SchedulerKind,
    world: WorldState,
}

impl Env {
    pub fn new(cfg: ScenarioConfig, kind: SchedulerKind) -> Result<Self> {
        let world = init_world(&cfg)?;
        Ok(Self { cfg, kind, world })
    }

    /// Restarts the episode from the initial world of `seed`.
    pub fn reset(&mut self, seed: u64) -> Result<()> {
        self.cfg.rng_seed = seed;
        self.world = init_world(&self.cfg)?;
        Ok(())
    }

    pub fn cfg(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn kind(&self) -> SchedulerKind {
        self.kind
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn num_agents(&self) -> usize {
        self.cfg.num_uavs + 1
    }

    pub fn done(&self) -> bool {
        self.world.t >= self.cfg.horizon || self.world.ledger.all_done()
    }

    pub fn encode_state(&self, agent: usize) -> Result<Vec<f64>> {
        if agent > self.cfg.num_uavs {
            return Err(Error::Precondition(format!("no agent {agent}")));
        }
        Ok(encode(&self.world, &self.cfg, agent))
    }

    /// Observations of all agents, UAVs first.
    pub fn observations(&self) -> Vec<Vec<f64>> {
        (0..self.num_agents()).map(|a| encode(&self.world, &self.cfg, a)).collect()
    }

    pub fn decode_action(&self, raw: &[Vec<f64>]) -> Result<JointAction> {
        decode_action(raw, &self.world, &self.cfg)
    }

    /// Simulates one slot.
    pub fn step(&mut self, action: &JointAction) -> Result<StepOutcome> {
        let cfg = &self.cfg;
        let w = &mut self.world;
        let slot = w.t;
        let dims = Dims::of(cfg);
        if action.velocities.len() != cfg.num_uavs || action.alloc.dims != dims {
            return Err(Error::Precondition("joint action does not match the scenario".into()));
        }
        w.ledger.snapshot_remnants();

        for u in 0..cfg.num_uavs {
            let next = move_uav(u, action.velocities[u], &w.uav_poses, &w.user_poses, cfg);
            w.uav_poses[u] = next;
        }
        move_users(w, cfg);

        let real = ChannelRealization::realize(&w.uav_poses, &w.user_poses, cfg)?;
        let rates = noma_rates(&real, &action.alloc, cfg)?;
        let backhaul_rates = w
            .uav_poses
            .iter()
            .zip(&action.backhaul_power)
            .map(|(p, &pw)| uav_hap_rate(p, &w.hap_pose, pw, cfg))
            .collect::<Result<Vec<f64>>>()?;
        let decision = ComputeDecision {
            theta: action.theta.clone(),
            eta: action.eta.clone(),
            backhaul_rate: backhaul_rates.clone(),
        };
        let flows = run_compute_slot(&mut w.ledger, self.kind, &rates, dims, &decision, cfg, slot)?;

        let completions: Vec<Completion> = w
            .ledger
            .detect_completions(slot)
            .into_iter()
            .map(|(user, task)| Completion {
                user,
                task,
                gen_time: w.ledger.task(user, task).gen_time.unwrap_or(slot),
            })
            .collect();
        w.aoi.update(&completions, slot)?;
        let generated =
            crate::scheduler::maybe_generate_task(&mut w.ledger, &mut w.rngs.tasks, cfg, slot);
        let reward = w.aoi.reward();
        w.t += 1;
        let terminal = w.ledger.all_done();
        Ok(StepOutcome {
            slot,
            reward,
            done: terminal || w.t >= cfg.horizon,
            terminal,
            rates,
            backhaul_rates,
            flows,
            completions,
            generated,
        })
    }
}

fn push_pose(out: &mut Vec<f64>, p: &crate::world::EntityPose, cfg: &ScenarioConfig) {
    out.push(p.x / cfg.area_x);
    out.push(p.y / cfg.area_y);
    out.push(p.z / cfg.h_max);
}

fn encode(w: &WorldState, cfg: &ScenarioConfig, agent: usize) -> Vec<f64> {
    let (un, m_n, s_n) = (cfg.num_uavs, cfg.num_users, cfg.max_tasks_per_user);
    let l = &w.ledger;
    let alpha = cfg.task_size;
    let horizon = cfg.horizon.max(1) as f64;
    let mut out = Vec::with_capacity(obs_len(cfg, agent));
    let active = |out: &mut Vec<f64>| {
        for m in 0..m_n {
            for s in 0..s_n {
                out.push(if l.is_active(m, s) { 1.0 } else { 0.0 });
            }
        }
    };
    if agent < un {
        push_pose(&mut out, &w.uav_poses[agent], cfg);
        for (u, p) in w.uav_poses.iter().enumerate() {
            if u != agent {
                push_pose(&mut out, p, cfg);
            }
        }
        for p in &w.user_poses {
            out.push(p.x / cfg.area_x);
            out.push(p.y / cfg.area_y);
        }
        active(&mut out);
        for t in &l.tasks {
            out.push(t.user_remaining / alpha);
        }
        for m in 0..m_n {
            for s in 0..s_n {
                out.push(l.uav_remnant(agent, m, s) / alpha);
            }
        }
        for m in 0..m_n {
            for s in 0..s_n {
                out.push(l.uav_cycles[l.uav_task_index(agent, m, s)] / cfg.cpu_max_uav);
            }
        }
    } else {
        for p in &w.uav_poses {
            push_pose(&mut out, p, cfg);
        }
        active(&mut out);
        out.extend(l.hap_cycles.iter().map(|c| c / cfg.cpu_max_hap));
        out.extend(l.hap_pool.iter().map(|b| b / alpha));
        out.extend(l.prev_uav_remnants.iter().map(|b| b / alpha));
    }
    out.extend(w.aoi.values().iter().map(|&a| a as f64 / horizon));
    out
}

/// Machine check of every hard constraint for one executed slot, given the
/// world before and after it. Returns the first violation found.
pub fn check_constraints(
    cfg: &ScenarioConfig,
    before: &WorldState,
    after: &WorldState,
    action: &JointAction,
    outcome: &StepOutcome,
) -> Result<()> {
    let fail = |msg: alloc::string::String| Err(Error::Consistency(msg));
    let bbox = BoundingBox::of(&before.user_poses);
    for (u, (p, q)) in before.uav_poses.iter().zip(&after.uav_poses).enumerate() {
        if p.distance(q) > cfg.v_max * (1.0 + CHECK_SLACK) {
            return fail(format!("UAV {u} moved {} m in one slot", p.distance(q)));
        }
        if !(cfg.h_min..=cfg.h_max).contains(&q.z) {
            return fail(format!("UAV {u} altitude {} outside band", q.z));
        }
        if !bbox.contains(q) {
            return fail(format!("UAV {u} left the users' bounding box"));
        }
        for (v, r) in after.uav_poses.iter().enumerate().skip(u + 1) {
            if q.distance(r) < cfg.d_min {
                return fail(format!("UAVs {u} and {v} closer than d_min"));
            }
        }
    }
    action.alloc.check(cfg)?;
    for m in 0..cfg.num_users {
        let serving = (0..cfg.num_uavs).filter(|&u| action.alloc.subchannels_of(u, m) > 0).count();
        if serving > 1 {
            return fail(format!("user {m} served by {serving} UAVs"));
        }
    }
    for (u, &p) in action.backhaul_power.iter().enumerate() {
        if !(0.0..=cfg.p_max_uav).contains(&p) {
            return fail(format!("UAV {u} backhaul power {p} outside [0, p_max]"));
        }
    }
    if action.theta.iter().chain(&action.eta).any(|f| !(0.0..=1.0).contains(f)) {
        return fail("CPU fraction outside [0, 1]".into());
    }
    for (u, &c) in outcome.flows.uav_usage.iter().enumerate() {
        if c > cfg.cpu_max_uav * (1.0 + CHECK_SLACK) {
            return fail(format!("UAV {u} used {c} cycles"));
        }
    }
    if outcome.flows.hap_usage > cfg.cpu_max_hap * (1.0 + CHECK_SLACK) {
        return fail(format!("HAP used {} cycles", outcome.flows.hap_usage));
    }
    if outcome.rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return fail("invalid uplink rate".into());
    }
    let l = &after.ledger;
    for m in 0..l.users {
        for s in 0..l.tasks_per_user {
            let t = l.task(m, s);
            let tol = COMPLETION_TOLERANCE * t.total_bits;
            if l.conservation_error(m, s) > tol {
                return fail(format!("bits of task ({m}, {s}) not conserved"));
            }
            if t.user_remaining < 0.0 || t.user_remaining > t.total_bits {
                return fail(format!("user-side bits of task ({m}, {s}) out of range"));
            }
            if t.completed_at.is_some() && (t.processed() - t.total_bits).abs() > tol {
                return fail(format!("completed task ({m}, {s}) processed {}", t.processed()));
            }
        }
    }
    if l.uav_remnants.iter().flatten().any(|r| !(r.bits > 0.0)) || l.hap_pool.iter().any(|b| *b < 0.0)
    {
        return fail("negative remnant".into());
    }
    Ok(())
}

/// Totals of one finished episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub slots: usize,
    pub avg_aoi: f64,
    pub reward: f64,
    pub completed: usize,
    pub generated: usize,
    /// No bit ever left a user during the episode.
    pub transmission_fail: bool,
}

/// Runs `env` until done, asking `policy` for every slot's action and
/// showing each executed slot to `observe`.
pub fn rollout<P, O>(env: &mut Env, mut policy: P, mut observe: O) -> Result<EpisodeSummary>
where
    P: FnMut(&Env) -> Result<JointAction>,
    O: FnMut(&Env, &JointAction, &StepOutcome) -> Result<()>,
{
    let mut reward = 0.0;
    let mut sent = 0.0;
    let mut slots = 0;
    while !env.done() {
        let action = policy(env)?;
        let out = env.step(&action)?;
        reward += out.reward;
        sent += out.flows.sent.iter().sum::<f64>();
        slots += 1;
        observe(env, &action, &out)?;
    }
    let l = &env.world().ledger;
    Ok(EpisodeSummary {
        slots,
        avg_aoi: env.world().aoi.average(),
        reward,
        completed: l.completed_count(),
        generated: (0..l.users).map(|m| l.generated_count(m)).sum(),
        transmission_fail: slots > 0 && sent == 0.0,
    })
}
