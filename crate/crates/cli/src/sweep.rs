//! The `sweep` mode: one scenario axis, several values, several seeds.
//!
//! Every (value, seed) pair is an independent run with its own
//! environment and RNG streams; runs execute on the rayon pool and are
//! joined in (value, seed) order, so the tables do not depend on thread
//! scheduling.

use anyhow::{Context, Result};
use ntn_core::baselines::run_baseline;
use rayon::prelude::*;
use serde::Serialize;

use crate::manifest::{Mode, RunManifest, SweepSpec};
use crate::metrics::{fmt_f64, write_json, write_table};
use crate::run::{scheduler_name, world_seed};
use crate::stats::Aggregate;

pub const RUNS_HEADER: [&str; 10] = [
    "axis",
    "value",
    "policy",
    "seed",
    "world_seed",
    "avg_aoi",
    "completed",
    "generated",
    "transmission_fail",
    "slots",
];

pub const SWEEP_HEADER: [&str; 10] = [
    "axis",
    "value",
    "policy",
    "scheduler",
    "runs",
    "mean_aoi",
    "ci_low",
    "ci_high",
    "fail_runs",
    "transmission_fail",
];

/// Aggregate of one axis value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    pub avg_aoi: Aggregate,
    /// Runs in which no bit ever left a user.
    pub fail_runs: usize,
    /// Every run of this point failed to transmit.
    pub transmission_fail: bool,
}

#[derive(Serialize)]
struct SweepSummary<'a> {
    mode: Mode,
    profile: &'a str,
    policy: ntn_core::baselines::PolicyKind,
    seeds: &'a [u64],
    episodes_per_seed: usize,
    sweep: &'a SweepSpec,
    points: &'a [SweepPoint],
    files: [&'a str; 2],
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// Runs the cross product and writes `runs.csv`, `sweep.csv` and
/// `summary.json`.
pub fn cmd_sweep(m: &RunManifest) -> Result<Vec<SweepPoint>> {
    let spec = m.sweep.as_ref().context("sweep mode needs an axis and values")?;
    std::fs::create_dir_all(&m.out).with_context(|| format!("creating {}", m.out.display()))?;
    let jobs: Vec<(usize, f64, u64, usize)> = spec
        .values
        .iter()
        .enumerate()
        .flat_map(|(i, &v)| m.seeds.iter().flat_map(move |&s| (0..m.episodes).map(move |k| (i, v, s, k))))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(_, v, s, k)| {
            let mut cfg = spec.axis.apply(&m.scenario, v)?;
            cfg.rng_seed = world_seed(s, k);
            Ok(run_baseline(&cfg, m.policy)?)
        })
        .collect::<Result<Vec<_>>>()?;

    let name = spec.axis.name();
    let runs: Vec<Vec<String>> = jobs
        .iter()
        .zip(&results)
        .map(|(&(_, v, s, k), r)| {
            vec![
                name.into(),
                fmt_f64(v),
                m.policy.name().into(),
                s.to_string(),
                world_seed(s, k).to_string(),
                fmt_f64(r.avg_aoi),
                r.completed.to_string(),
                r.generated.to_string(),
                r.transmission_fail.to_string(),
                r.slots.to_string(),
            ]
        })
        .collect();
    write_table(&m.out.join("runs.csv"), &RUNS_HEADER.map(String::from), &runs)?;

    let points: Vec<SweepPoint> = spec
        .values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let mine: Vec<_> = jobs.iter().zip(&results).filter(|(j, _)| j.0 == i).map(|(_, r)| r).collect();
            let aoi: Vec<f64> = mine.iter().map(|r| r.avg_aoi).collect();
            let fail_runs = mine.iter().filter(|r| r.transmission_fail).count();
            SweepPoint {
                value: v,
                avg_aoi: Aggregate::of(&aoi, i as u64),
                fail_runs,
                transmission_fail: !mine.is_empty() && fail_runs == mine.len(),
            }
        })
        .collect();
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            vec![
                name.into(),
                fmt_f64(p.value),
                m.policy.name().into(),
                scheduler_name(m.policy.scheduler()).into(),
                p.avg_aoi.runs.to_string(),
                opt(p.avg_aoi.mean),
                opt(p.avg_aoi.ci_low),
                opt(p.avg_aoi.ci_high),
                p.fail_runs.to_string(),
                p.transmission_fail.to_string(),
            ]
        })
        .collect();
    write_table(&m.out.join("sweep.csv"), &SWEEP_HEADER.map(String::from), &rows)?;
    write_json(
        &m.out.join("summary.json"),
        &SweepSummary {
            mode: m.mode,
            profile: &m.profile,
            policy: m.policy,
            seeds: &m.seeds,
            episodes_per_seed: m.episodes,
            sweep: spec,
            points: &points,
            files: ["sweep.csv", "runs.csv"],
        },
    )?;
    Ok(points)
}
