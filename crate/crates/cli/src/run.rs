//! The `simulate`, `evaluate` and `train` modes.

use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use ntn_core::agents::{EpisodeLog, Trainer};
use ntn_core::baselines::{baseline_action, PolicyKind};
use ntn_core::channel::Dims;
use ntn_core::env::{rollout, Env, EpisodeSummary, JointAction, StepOutcome};
use ntn_core::nn::Mlp;
use ntn_core::rng::{derive_seed, stream, Stream};
use ntn_core::ScenarioConfig;
use rayon::prelude::*;
use serde::Serialize;

use crate::checkpoint::{load_actors, load_trainer, save_actors, save_trainer, ActorSnapshot};
use crate::manifest::{Mode, RunManifest};
use crate::metrics::{fmt_f64, write_json, write_table};
use crate::stats::Aggregate;

/// World seed of episode `k` of `seed`.
pub fn world_seed(seed: u64, k: usize) -> u64 {
    derive_seed(seed, k as u64)
}

pub fn trace_header(cfg: &ScenarioConfig) -> Vec<String> {
    let mut h: Vec<String> = ["seed", "episode", "t", "reward"].map(String::from).into();
    h.extend((0..cfg.num_users).map(|m| format!("aoi_{m}")));
    h.extend((0..cfg.num_users).map(|m| format!("rate_{m}")));
    h.extend((0..cfg.num_uavs).map(|u| format!("uav_cpu_{u}")));
    h.push("hap_cpu".into());
    for u in 0..cfg.num_uavs {
        h.extend(["x", "y", "z"].map(|a| format!("uav_{u}_{a}")));
    }
    h.push("completions".into());
    h
}

fn trace_row(seed: u64, k: usize, env: &Env, out: &StepOutcome) -> Vec<String> {
    let w = env.world();
    let mut r = vec![seed.to_string(), k.to_string(), out.slot.to_string(), fmt_f64(out.reward)];
    r.extend(w.aoi.values().iter().map(|a| a.to_string()));
    r.extend(out.user_rates(Dims::of(env.cfg())).into_iter().map(fmt_f64));
    r.extend(out.flows.uav_usage.iter().copied().map(fmt_f64));
    r.push(fmt_f64(out.flows.hap_usage));
    for p in &w.uav_poses {
        r.extend([p.x, p.y, p.z].map(fmt_f64));
    }
    let done: Vec<String> =
        out.completions.iter().map(|c| format!("{}:{}:{}", c.user, c.task, c.gen_time)).collect();
    r.push(done.join(";"));
    r
}

pub const EPISODE_HEADER: [&str; 11] = [
    "seed",
    "episode",
    "world_seed",
    "policy",
    "scheduler",
    "slots",
    "avg_aoi",
    "reward",
    "completed",
    "generated",
    "transmission_fail",
];

/// One finished evaluation episode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub episode: usize,
    pub world_seed: u64,
    pub summary: EpisodeSummary,
}

/// Noise-free joint action of bare actor networks.
pub fn actor_action(actors: &[Mlp], env: &Env) -> ntn_core::Result<JointAction> {
    let raw = env
        .observations()
        .iter()
        .zip(actors)
        .map(|(o, a)| Ok(a.forward(o)?.into_iter().map(|x| x.clamp(-1.0, 1.0)).collect()))
        .collect::<ntn_core::Result<Vec<Vec<f64>>>>()?;
    env.decode_action(&raw)
}

enum Policy<'a> {
    Baseline(PolicyKind),
    Actors(&'a [Mlp]),
}

fn run_episode(
    cfg: &ScenarioConfig,
    policy: &Policy,
    seed: u64,
    k: usize,
    trace: &mut Vec<Vec<String>>,
) -> Result<EpisodeRecord> {
    let ws = world_seed(seed, k);
    let mut c = cfg.clone();
    c.rng_seed = ws;
    let kind = match policy {
        Policy::Baseline(p) => p.scheduler(),
        Policy::Actors(_) => PolicyKind::Learned.scheduler(),
    };
    let mut env = Env::new(c, kind)?;
    let mut rng = stream(ws, Stream::Policy);
    let summary = rollout(
        &mut env,
        |e| match policy {
            Policy::Baseline(p) => baseline_action(*p, e, &mut rng),
            Policy::Actors(a) => actor_action(a, e),
        },
        |e, _, out| {
            trace.push(trace_row(seed, k, e, out));
            Ok(())
        },
    )?;
    Ok(EpisodeRecord { seed, episode: k, world_seed: ws, summary })
}

#[derive(Serialize)]
struct EvalSummary<'a> {
    mode: Mode,
    profile: &'a str,
    policy: PolicyKind,
    scheduler: ntn_core::SchedulerKind,
    seeds: &'a [u64],
    episodes_per_seed: usize,
    checkpoint: Option<&'a Path>,
    avg_aoi: Aggregate,
    completed: usize,
    generated: usize,
    transmission_fail_runs: usize,
    scenario: &'a ScenarioConfig,
    files: [&'a str; 2],
}

/// Runs the manifest's policy (or the checkpoint's actors in `evaluate`
/// mode) and writes `trace.csv`, `episodes.csv` and `summary.json`.
pub fn cmd_simulate(m: &RunManifest) -> Result<Vec<EpisodeRecord>> {
    std::fs::create_dir_all(&m.out).with_context(|| format!("creating {}", m.out.display()))?;
    let snapshot = match m.mode {
        Mode::Evaluate => Some(load_actors(m.checkpoint.as_deref().expect("validated"))?),
        _ => None,
    };
    let (cfg, policy, kind) = match &snapshot {
        Some(s) => (&s.scenario, Policy::Actors(&s.actors), PolicyKind::Learned),
        None => (&m.scenario, Policy::Baseline(m.policy), m.policy),
    };
    let per_seed = m
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut trace = Vec::new();
            let eps = (0..m.episodes)
                .map(|k| run_episode(cfg, &policy, seed, k, &mut trace))
                .collect::<Result<Vec<_>>>()?;
            Ok((trace, eps))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut trace = Vec::new();
    let mut records = Vec::new();
    for (t, e) in per_seed {
        trace.extend(t);
        records.extend(e);
    }
    write_table(&m.out.join("trace.csv"), &trace_header(cfg), &trace)?;
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            let s = &r.summary;
            vec![
                r.seed.to_string(),
                r.episode.to_string(),
                r.world_seed.to_string(),
                kind.name().into(),
                scheduler_name(kind.scheduler()).into(),
                s.slots.to_string(),
                fmt_f64(s.avg_aoi),
                fmt_f64(s.reward),
                s.completed.to_string(),
                s.generated.to_string(),
                s.transmission_fail.to_string(),
            ]
        })
        .collect();
    write_table(&m.out.join("episodes.csv"), &EPISODE_HEADER.map(String::from), &rows)?;

    let aoi: Vec<f64> = records.iter().map(|r| r.summary.avg_aoi).collect();
    write_json(
        &m.out.join("summary.json"),
        &EvalSummary {
            mode: m.mode,
            profile: &m.profile,
            policy: kind,
            scheduler: kind.scheduler(),
            seeds: &m.seeds,
            episodes_per_seed: m.episodes,
            checkpoint: m.checkpoint.as_deref(),
            avg_aoi: Aggregate::of(&aoi, 0),
            completed: records.iter().map(|r| r.summary.completed).sum(),
            generated: records.iter().map(|r| r.summary.generated).sum(),
            transmission_fail_runs: records.iter().filter(|r| r.summary.transmission_fail).count(),
            scenario: cfg,
            files: ["trace.csv", "episodes.csv"],
        },
    )?;
    Ok(records)
}

pub fn scheduler_name(k: ntn_core::SchedulerKind) -> &'static str {
    match k {
        ntn_core::SchedulerKind::Elastic => "elastic",
        ntn_core::SchedulerKind::Fixed => "fixed",
    }
}

pub const LEARNING_HEADER: [&str; 15] = [
    "seed",
    "episode",
    "env_seed",
    "reward",
    "avg_aoi",
    "completed",
    "generated",
    "transmission_fail",
    "critic_loss",
    "actor_objective",
    "noise_std",
    "train_steps",
    "aggregated",
    "param_exchanges",
    "obs_action_shares",
];

fn learning_row(seed: u64, log: &EpisodeLog, t: &Trainer) -> Vec<String> {
    let s = &log.summary;
    vec![
        seed.to_string(),
        log.episode.to_string(),
        log.env_seed.to_string(),
        fmt_f64(s.reward),
        fmt_f64(s.avg_aoi),
        s.completed.to_string(),
        s.generated.to_string(),
        s.transmission_fail.to_string(),
        fmt_f64(log.critic_loss),
        fmt_f64(log.actor_objective),
        fmt_f64(log.noise_std),
        log.train_steps.to_string(),
        log.aggregated.to_string(),
        t.comm.param_exchanges.to_string(),
        t.comm.obs_action_shares.to_string(),
    ]
}

/// Where a seed's resumable training state is written.
pub fn state_path(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("state_seed{seed}.json"))
}

pub fn snapshot_path(out: &Path, seed: u64, episode: usize) -> PathBuf {
    out.join("checkpoints").join(format!("seed{seed}_ep{episode:06}.json"))
}

/// Outcome of one seed's training.
#[derive(Debug, Clone, Serialize)]
pub struct TrainResult {
    pub seed: u64,
    pub algo: ntn_core::agents::Algo,
    pub episodes_done: usize,
    pub episodes_total: usize,
    pub finished: bool,
    pub comm: ntn_core::agents::CommCounters,
    /// Mean training-episode AoI over the last (up to) ten episodes.
    pub recent_avg_aoi: Option<f64>,
}

fn train_seed(m: &RunManifest, mut t: Trainer) -> Result<(Vec<Vec<String>>, TrainResult)> {
    let seed = t.seed;
    let mut rows = Vec::new();
    let mut recent = Vec::new();
    if t.episode == 0 {
        save_actors(&snapshot_path(&m.out, seed, 0), &ActorSnapshot::of(&t))?;
    }
    let mut ran = 0;
    while !t.finished() && m.stop_after.is_none_or(|s| ran < s) {
        let log = t.run_episode()?;
        ran += 1;
        rows.push(learning_row(seed, &log, &t));
        recent.push(log.summary.avg_aoi);
        if m.checkpoint_every > 0 && (t.episode % m.checkpoint_every == 0 || t.finished()) {
            save_actors(&snapshot_path(&m.out, seed, t.episode), &ActorSnapshot::of(&t))?;
        }
    }
    save_trainer(&state_path(&m.out, seed), &t)?;
    let tail = &recent[recent.len().saturating_sub(10)..];
    Ok((
        rows,
        TrainResult {
            seed,
            algo: t.algo,
            episodes_done: t.episode,
            episodes_total: t.train.episodes,
            finished: t.finished(),
            comm: t.comm,
            recent_avg_aoi: crate::stats::mean(tail),
        },
    ))
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    mode: Mode,
    profile: &'a str,
    resumed_from: Option<&'a Path>,
    runs: &'a [TrainResult],
    train: &'a ntn_core::TrainConfig,
    scenario: &'a ScenarioConfig,
    files: [&'a str; 1],
}

/// Trains one learner per seed (or resumes the checkpointed one) and
/// writes `learning.csv`, actor snapshots, resumable states and
/// `summary.json`.
pub fn cmd_train(m: &RunManifest) -> Result<Vec<TrainResult>> {
    std::fs::create_dir_all(m.out.join("checkpoints"))
        .with_context(|| format!("creating {}", m.out.display()))?;
    let trainers = match &m.checkpoint {
        Some(p) => {
            let t = load_trainer(p)?;
            ensure!(t.algo == m.algo, "checkpoint was trained with {}", t.algo.name());
            vec![t]
        }
        None => m
            .seeds
            .iter()
            .map(|&s| Trainer::new(m.scenario.clone(), m.train.clone(), m.algo, s).map_err(Into::into))
            .collect::<Result<Vec<_>>>()?,
    };
    let done = trainers.into_par_iter().map(|t| train_seed(m, t)).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut results = Vec::new();
    for (r, res) in done {
        rows.extend(r);
        results.push(res);
    }
    write_table(&m.out.join("learning.csv"), &LEARNING_HEADER.map(String::from), &rows)?;
    write_json(
        &m.out.join("summary.json"),
        &TrainSummary {
            mode: m.mode,
            profile: &m.profile,
            resumed_from: m.checkpoint.as_deref(),
            runs: &results,
            train: &m.train,
            scenario: &m.scenario,
            files: ["learning.csv"],
        },
    )?;
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_header_width_matches_rows() {
        let c = ScenarioConfig::desk();
        let mut env = Env::new(c.clone(), ntn_core::SchedulerKind::Elastic).unwrap();
        let out = env.step(&JointAction::idle(&c)).unwrap();
        let h = trace_header(&c);
        assert_eq!(h.len(), 4 + 2 * c.num_users + c.num_uavs + 1 + 3 * c.num_uavs + 1);
        assert_eq!(trace_row(0, 0, &env, &out).len(), h.len());
    }

    #[test]
    fn episode_seeds_are_distinct() {
        let s: std::collections::BTreeSet<u64> =
            (0..4).flat_map(|seed| (0..4).map(move |k| world_seed(seed, k))).collect();
        assert_eq!(s.len(), 16);
    }
}
