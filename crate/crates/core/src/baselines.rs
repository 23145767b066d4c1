//! Reference policies: uniformly random feasible actions, the full-power
//! transmission overlay, and the non-separable task scheduler.

use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::env::{action_len, rollout, Env, EpisodeSummary, JointAction, SchedulerKind};
use crate::error::Result;
use crate::rng::{stream, SimRng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    RandomFeasible,
    /// Random decisions with maximum transmit powers.
    FullPower,
    /// Random decisions under the whole-task scheduler.
    FixedTask,
    Learned,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] =
        [PolicyKind::RandomFeasible, PolicyKind::FullPower, PolicyKind::FixedTask, PolicyKind::Learned];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::RandomFeasible => "random_feasible",
            PolicyKind::FullPower => "full_power",
            PolicyKind::FixedTask => "fixed_task",
            PolicyKind::Learned => "learned",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }

    pub fn scheduler(self) -> SchedulerKind {
        match self {
            PolicyKind::FixedTask => SchedulerKind::Fixed,
            _ => SchedulerKind::Elastic,
        }
    }
}

/// Uniform raw actions in `[-1, 1]` for every agent, drawn agent by agent.
pub fn random_raw(cfg: &ScenarioConfig, rng: &mut SimRng) -> Vec<Vec<f64>> {
    (0..=cfg.num_uavs)
        .map(|a| (0..action_len(cfg, a)).map(|_| rng.random_range(-1.0..=1.0)).collect())
        .collect()
}

/// Random raw action passed through the feasibility projection.
pub fn random_feasible_policy(env: &Env, rng: &mut SimRng) -> Result<JointAction> {
    env.decode_action(&random_raw(env.cfg(), rng))
}

/// Every assigned user transmits at `p_max_user` split equally over its
/// subchannels, and every UAV uses `p_max_uav` on the backhaul.
pub fn full_power(action: &mut JointAction, cfg: &ScenarioConfig) {
    let d = action.alloc.dims;
    for u in 0..d.uavs {
        for m in 0..d.users {
            let k = action.alloc.subchannels_of(u, m);
            if k == 0 {
                continue;
            }
            for n in 0..d.subchannels {
                let i = d.idx(u, m, n);
                if action.alloc.flags[i] {
                    action.alloc.powers[i] = cfg.p_max_user / k as f64;
                }
            }
        }
    }
    action.backhaul_power.iter_mut().for_each(|p| *p = cfg.p_max_uav);
}

/// Action of a non-learned policy for the current slot.
pub fn baseline_action(kind: PolicyKind, env: &Env, rng: &mut SimRng) -> Result<JointAction> {
    let mut a = random_feasible_policy(env, rng)?;
    if kind == PolicyKind::FullPower {
        full_power(&mut a, env.cfg());
    }
    Ok(a)
}

/// One episode of a non-learned policy on the world of `cfg.rng_seed`,
/// with the policy stream of the same seed.
pub fn run_baseline(cfg: &ScenarioConfig, kind: PolicyKind) -> Result<EpisodeSummary> {
    let mut env = Env::new(cfg.clone(), kind.scheduler())?;
    let mut rng = stream(cfg.rng_seed, Stream::Policy);
    rollout(&mut env, |e| baseline_action(kind, e, &mut rng), |_, _, _| Ok(()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::check_constraints;

    #[test]
    fn names_round_trip() {
        for p in PolicyKind::ALL {
            assert_eq!(PolicyKind::parse(p.name()), Some(p));
        }
        assert_eq!(PolicyKind::parse("greedy"), None);
    }

    #[test]
    fn full_power_split() {
        let mut c = ScenarioConfig::desk();
        c.num_uavs = 1;
        c.num_users = 2;
        c.num_subchannels = 3;
        c.sc_per_user_cap = 2;
        let mut a = JointAction::idle(&c);
        a.alloc.assign(0, 0, 0, 0.01);
        a.alloc.assign(0, 1, 1, 0.01);
        a.alloc.assign(0, 1, 2, 0.0);
        full_power(&mut a, &c);
        assert_eq!(a.alloc.powers[a.alloc.dims.idx(0, 0, 0)], c.p_max_user);
        assert_eq!(a.alloc.powers[a.alloc.dims.idx(0, 1, 1)], c.p_max_user / 2.0);
        assert_eq!(a.alloc.powers[a.alloc.dims.idx(0, 1, 2)], c.p_max_user / 2.0);
        assert_eq!(a.alloc.user_power(0, 1), c.p_max_user);
        assert_eq!(a.backhaul_power, [c.p_max_uav]);
        a.alloc.check(&c).unwrap();
    }

    #[test]
    fn random_policy_is_feasible_and_seeded() {
        let c = ScenarioConfig::desk();
        let mut env = Env::new(c.clone(), SchedulerKind::Elastic).unwrap();
        let mut rng = stream(4, Stream::Policy);
        let mut again = stream(4, Stream::Policy);
        for _ in 0..30 {
            assert_eq!(random_raw(&c, &mut rng.clone()), random_raw(&c, &mut again.clone()));
            let a = random_feasible_policy(&env, &mut rng).unwrap();
            assert_eq!(a, random_feasible_policy(&env, &mut again).unwrap());
            let before = env.world().clone();
            let out = env.step(&a).unwrap();
            check_constraints(&c, &before, env.world(), &a, &out).unwrap();
        }
    }

    #[test]
    fn full_power_policy_meets_caps_with_equality() {
        let c = ScenarioConfig::desk();
        let env = Env::new(c.clone(), SchedulerKind::Elastic).unwrap();
        let mut rng = stream(8, Stream::Policy);
        for _ in 0..20 {
            let a = baseline_action(PolicyKind::FullPower, &env, &mut rng).unwrap();
            a.alloc.check(&c).unwrap();
            for m in 0..c.num_users {
                if let Some(u) = a.serving_uav(m) {
                    assert!((a.alloc.user_power(u, m) - c.p_max_user).abs() < 1e-15);
                }
            }
            assert!(a.backhaul_power.iter().all(|p| *p == c.p_max_uav));
        }
    }
}
