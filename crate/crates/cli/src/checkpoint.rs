//! Versioned JSON checkpoints.
//!
//! Two kinds share one envelope `{format, kind, body}`:
//!
//! - `trainer`: the complete training state (networks, optimizer moments,
//!   replay buffer, counters and RNG states). Resuming from it reproduces
//!   the uninterrupted run exactly.
//! - `actors`: the scenario and the actor networks only, for evaluation.
//!
//! Networks are stored as layer sizes, output head and the flat parameter
//! vector (per layer: weights row-major, one row per output, then biases).

use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use ntn_core::agents::Trainer;
use ntn_core::nn::Mlp;
use ntn_core::ScenarioConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const FORMAT: &str = "ntn-checkpoint/1";

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format: String,
    kind: String,
    body: T,
}

/// Actor networks of a trained run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorSnapshot {
    pub scenario: ScenarioConfig,
    /// Training episodes completed when the snapshot was taken.
    pub episode: usize,
    pub actors: Vec<Mlp>,
}

impl ActorSnapshot {
    pub fn of(t: &Trainer) -> Self {
        Self {
            scenario: t.scenario.clone(),
            episode: t.episode,
            actors: t.agents.iter().map(|a| a.actor.clone()).collect(),
        }
    }
}

fn save<T: Serialize>(path: &Path, kind: &str, body: &T) -> Result<()> {
    let env = Envelope { format: FORMAT.to_string(), kind: kind.to_string(), body };
    let mut text = serde_json::to_string(&env)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn peek(path: &Path) -> Result<(String, serde_json::Value)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v: Envelope<serde_json::Value> =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if v.format != FORMAT {
        bail!("{}: unsupported checkpoint format {:?} (expected {FORMAT})", path.display(), v.format);
    }
    Ok((v.kind, v.body))
}

fn body<T: DeserializeOwned>(path: &Path, v: serde_json::Value) -> Result<T> {
    serde_json::from_value(v).with_context(|| format!("decoding {}", path.display()))
}

fn check_trainer(t: &Trainer) -> Result<()> {
    t.scenario.validate()?;
    t.train.validate()?;
    ensure!(t.agents.len() == t.layout.agents(), "agent count does not match the scenario");
    for (i, a) in t.agents.iter().enumerate() {
        for net in [&a.actor, &a.critic, &a.target_actor, &a.target_critic] {
            net.validate()?;
        }
        ensure!(
            a.actor.input_len() == t.layout.obs[i].1 && a.actor.output_len() == t.layout.act[i].1,
            "agent {i}: actor shape does not match the scenario"
        );
        ensure!(a.critic.input_len() == t.layout.critic_input(), "agent {i}: critic input size");
    }
    Ok(())
}

pub fn save_trainer(path: &Path, t: &Trainer) -> Result<()> {
    save(path, "trainer", t)
}

pub fn load_trainer(path: &Path) -> Result<Trainer> {
    let (kind, v) = peek(path)?;
    ensure!(kind == "trainer", "{}: expected a trainer checkpoint, found {kind:?}", path.display());
    let t: Trainer = body(path, v)?;
    check_trainer(&t).with_context(|| format!("checking {}", path.display()))?;
    Ok(t)
}

pub fn save_actors(path: &Path, s: &ActorSnapshot) -> Result<()> {
    save(path, "actors", s)
}

/// Actor networks from either checkpoint kind.
pub fn load_actors(path: &Path) -> Result<ActorSnapshot> {
    let (kind, v) = peek(path)?;
    let snap = match kind.as_str() {
        "actors" => body::<ActorSnapshot>(path, v)?,
        "trainer" => {
            let t: Trainer = body(path, v)?;
            check_trainer(&t).with_context(|| format!("checking {}", path.display()))?;
            ActorSnapshot::of(&t)
        }
        _ => bail!("{}: unknown checkpoint kind {kind:?}", path.display()),
    };
    snap.scenario.validate()?;
    let agents = snap.scenario.num_uavs + 1;
    ensure!(snap.actors.len() == agents, "{}: {} actors for {agents} agents", path.display(), snap.actors.len());
    for (i, a) in snap.actors.iter().enumerate() {
        a.validate()?;
        ensure!(
            a.input_len() == ntn_core::env::obs_len(&snap.scenario, i)
                && a.output_len() == ntn_core::env::action_len(&snap.scenario, i),
            "{}: actor {i} does not fit the scenario",
            path.display()
        );
    }
    Ok(snap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ntn_core::agents::Algo;
    use ntn_core::TrainConfig;

    fn trainer() -> Trainer {
        let mut t = TrainConfig::tiny();
        t.actor_hidden = vec![16, 8];
        t.critic_hidden = vec![8];
        t.warmup = 16;
        t.episodes = 2;
        let mut s = ScenarioConfig::tiny();
        s.horizon = 20;
        Trainer::new(s, t, Algo::P2pVfrl, 3).unwrap()
    }

    #[test]
    fn trainer_round_trip_is_bit_exact() {
        let mut t = trainer();
        t.run_episode().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        save_trainer(&p, &t).unwrap();
        let back = load_trainer(&p).unwrap();
        assert_eq!(back, t);
        for (a, b) in back.agents.iter().zip(&t.agents) {
            let bits = |m: &Mlp| m.params().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.actor), bits(&b.actor));
            assert_eq!(bits(&a.critic), bits(&b.critic));
        }
    }

    #[test]
    fn actor_snapshot_round_trip_and_fallback() {
        let t = trainer();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.json");
        save_actors(&p, &ActorSnapshot::of(&t)).unwrap();
        assert_eq!(load_actors(&p).unwrap(), ActorSnapshot::of(&t));
        assert!(load_trainer(&p).is_err());
        let q = dir.path().join("t.json");
        save_trainer(&q, &t).unwrap();
        assert_eq!(load_actors(&q).unwrap(), ActorSnapshot::of(&t));
    }

    #[test]
    fn rejects_other_formats_and_bad_shapes() {
        let t = trainer();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.json");
        save_actors(&p, &ActorSnapshot::of(&t)).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        std::fs::write(&p, text.replace(FORMAT, "ntn-checkpoint/9")).unwrap();
        assert!(load_actors(&p).unwrap_err().to_string().contains("unsupported"));

        let mut snap = ActorSnapshot::of(&t);
        snap.scenario.num_users = 3;
        save_actors(&p, &snap).unwrap();
        assert!(load_actors(&p).is_err());
    }
}
