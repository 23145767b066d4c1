//! Multi-agent actor-critic training: replay, exploration, centralized
//! critics (MADDPG), soft target updates and peer-to-peer federated
//! averaging of actors.
//!
//! Every agent owns an actor on its own observation and a critic on the
//! joint observation followed by the joint action, both laid out agent by
//! agent (UAVs first, then the HAP).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::{ScenarioConfig, TrainConfig};
use crate::env::{action_len, obs_len, rollout, Env, EpisodeSummary, JointAction, SchedulerKind};
use crate::error::{Error, Result};
use crate::nn::{Head, Mlp, Optimizer};
use crate::rng::{derive_seed, stream, SimRng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentType {
    Uav,
    Hap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Maddpg,
    P2pVfrl,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Maddpg => "maddpg",
            Algo::P2pVfrl => "p2p_vfrl",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "maddpg" => Some(Algo::Maddpg),
            "p2p_vfrl" => Some(Algo::P2pVfrl),
            _ => None,
        }
    }
}

/// Offsets of every agent's block in the joint observation and action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub obs: Vec<(usize, usize)>,
    pub act: Vec<(usize, usize)>,
}

impl Layout {
    pub fn of(cfg: &ScenarioConfig) -> Self {
        let n = cfg.num_uavs + 1;
        let blocks = |len: &dyn Fn(usize) -> usize| {
            let mut off = 0;
            (0..n)
                .map(|a| {
                    let b = (off, len(a));
                    off += b.1;
                    b
                })
                .collect::<Vec<_>>()
        };
        Self { obs: blocks(&|a| obs_len(cfg, a)), act: blocks(&|a| action_len(cfg, a)) }
    }

    pub fn agents(&self) -> usize {
        self.obs.len()
    }

    pub fn obs_total(&self) -> usize {
        self.obs.iter().map(|b| b.1).sum()
    }

    pub fn act_total(&self) -> usize {
        self.act.iter().map(|b| b.1).sum()
    }

    pub fn critic_input(&self) -> usize {
        self.obs_total() + self.act_total()
    }

    fn obs_of<'a>(&self, joint: &'a [f64], agent: usize) -> &'a [f64] {
        let (o, l) = self.obs[agent];
        &joint[o..o + l]
    }
}

/// One joint transition; observations and actions concatenated over agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub actions: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    /// Absorbing next state: no bootstrapping past it.
    pub terminal: bool,
}

/// Ring buffer of transitions with FIFO eviction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    head: usize,
    written: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), items: Vec::new(), head: 0, written: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Transitions ever inserted.
    pub fn written(&self) -> u64 {
        self.written
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.head] = t;
        }
        self.head = (self.head + 1) % self.capacity;
        self.written += 1;
    }

    /// Stored transitions, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.head };
        self.items[split..].iter().chain(&self.items[..split])
    }

    /// `n` uniform draws with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<&Transition> {
        (0..n).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect()
    }
}

/// Networks and optimizer state of one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentModel {
    pub kind: AgentType,
    pub actor: Mlp,
    pub critic: Mlp,
    pub target_actor: Mlp,
    pub target_critic: Mlp,
    pub actor_opt: Optimizer,
    pub critic_opt: Optimizer,
}

impl AgentModel {
    /// Fresh agent with targets equal to the primaries.
    pub fn new<R: Rng + ?Sized>(
        kind: AgentType,
        obs: usize,
        act: usize,
        critic_input: usize,
        train: &TrainConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let chain = |first: usize, hidden: &[usize], last: usize| {
            let mut s = vec![first];
            s.extend_from_slice(hidden);
            s.push(last);
            s
        };
        let actor = Mlp::new(&chain(obs, &train.actor_hidden, act), Head::Tanh, rng)?;
        let critic = Mlp::new(&chain(critic_input, &train.critic_hidden, 1), Head::Identity, rng)?;
        Ok(Self {
            kind,
            actor_opt: Optimizer::new(train.optimizer, train.actor_lr, actor.params().len()),
            critic_opt: Optimizer::new(train.optimizer, train.critic_lr, critic.params().len()),
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
        })
    }

    /// Copies the primaries into the targets.
    pub fn hard_sync(&mut self) {
        self.target_actor = self.actor.clone();
        self.target_critic = self.critic.clone();
    }
}

/// Actor output for `obs`, plus clipped Gaussian noise of standard
/// deviation `noise.0` when exploring.
pub fn act(agent: &AgentModel, obs: &[f64], noise: Option<(f64, &mut SimRng)>) -> Result<Vec<f64>> {
    let mut a = agent.actor.forward(obs)?;
    if let Some((std, rng)) = noise {
        for x in a.iter_mut() {
            let n: f64 = rng.sample(StandardNormal);
            *x = (*x + std * n).clamp(-1.0, 1.0);
        }
    }
    Ok(a)
}

/// `target <- tau * primary + (1 - tau) * target`, parameter-wise.
pub fn soft_update(target: &mut Mlp, primary: &Mlp, tau: f64) -> Result<()> {
    if !target.same_shape(primary) {
        return Err(Error::Precondition("soft update between different shapes".into()));
    }
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::Precondition(format!("tau {tau} outside (0, 1]")));
    }
    for (t, p) in target.params_mut().iter_mut().zip(primary.params()) {
        *t = if tau == 1.0 { *p } else { tau * p + (1.0 - tau) * *t };
    }
    Ok(())
}

/// Weights `(own, each other)` for `n` participants: `1/n` and
/// `(1 - 1/n) / (n - 1)`.
pub fn paper_weights(n: usize) -> (f64, f64) {
    let own = 1.0 / n as f64;
    let other = if n > 1 { (1.0 - own) / (n - 1) as f64 } else { 0.0 };
    (own, other)
}

fn check_group(nets: &[&mut Mlp]) -> Result<()> {
    if let Some(first) = nets.first() {
        if nets.iter().any(|n| !n.same_shape(first)) {
            return Err(Error::Aggregation("participants have different shapes".into()));
        }
    }
    Ok(())
}

/// Replaces every network with the uniform parameter mean of the group.
///
/// The mean is formed as `x_0 + sum(x_k - x_0) / n`, so identical
/// participants are an exact fixed point and a second application changes
/// nothing.
pub fn frl_aggregate(nets: &mut [&mut Mlp]) -> Result<()> {
    check_group(nets)?;
    let n = nets.len();
    if n < 2 {
        return Ok(());
    }
    let len = nets[0].params().len();
    let mut mean = vec![0.0; len];
    for (i, m) in mean.iter_mut().enumerate() {
        let base = nets[0].params()[i];
        let spread: f64 = nets[1..].iter().map(|net| net.params()[i] - base).sum();
        *m = base + spread / n as f64;
    }
    for net in nets.iter_mut() {
        net.params_mut().copy_from_slice(&mean);
    }
    Ok(())
}

/// `x_i <- w_own x_i + w_other sum_{k != i} x_k` for every participant.
pub fn frl_aggregate_weighted(nets: &mut [&mut Mlp], w_own: f64, w_other: f64) -> Result<()> {
    check_group(nets)?;
    if nets.len() < 2 {
        return Ok(());
    }
    let len = nets[0].params().len();
    let sums: Vec<f64> =
        (0..len).map(|i| nets.iter().map(|net| net.params()[i]).sum()).collect();
    let updated: Vec<Vec<f64>> = nets
        .iter()
        .map(|net| {
            net.params()
                .iter()
                .zip(&sums)
                .map(|(x, s)| w_own * x + w_other * (s - x))
                .collect()
        })
        .collect();
    for (net, p) in nets.iter_mut().zip(updated) {
        net.params_mut().copy_from_slice(&p);
    }
    Ok(())
}

/// Aggregation groups: agents of the same type.
pub fn aggregation_groups(agents: &[AgentModel]) -> Vec<Vec<usize>> {
    let mut groups: Vec<(AgentType, Vec<usize>)> = Vec::new();
    for (i, a) in agents.iter().enumerate() {
        match groups.iter_mut().find(|(k, _)| *k == a.kind) {
            Some((_, g)) => g.push(i),
            None => groups.push((a.kind, vec![i])),
        }
    }
    groups.into_iter().map(|(_, g)| g).collect()
}

/// Averages the actors within every aggregation group.
pub fn aggregate_actors(agents: &mut [AgentModel]) -> Result<()> {
    for group in aggregation_groups(agents) {
        let mut nets: Vec<&mut Mlp> = agents
            .iter_mut()
            .enumerate()
            .filter(|(i, _)| group.contains(i))
            .map(|(_, a)| &mut a.actor)
            .collect();
        frl_aggregate(&mut nets)?;
    }
    Ok(())
}

/// Losses of one agent from one training step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    pub critic: f64,
    /// Mean critic value of the actor's own actions.
    pub actor_objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainStatus {
    /// Too few transitions stored; nothing changed.
    Warmup,
    Trained(Vec<Losses>),
}

/// One MADDPG update of every agent on a sampled mini-batch.
pub fn train_step_maddpg(
    agents: &mut [AgentModel],
    layout: &Layout,
    buffer: &ReplayBuffer,
    cfg: &TrainConfig,
    rng: &mut SimRng,
) -> Result<TrainStatus> {
    if buffer.len() < cfg.warmup.max(cfg.minibatch) || cfg.minibatch == 0 {
        return Ok(TrainStatus::Warmup);
    }
    if agents.len() != layout.agents() {
        return Err(Error::Precondition("agent count does not match layout".into()));
    }
    let batch = buffer.sample(rng, cfg.minibatch);
    let d = batch.len() as f64;
    let obs_total = layout.obs_total();

    let mut next_inputs = Vec::with_capacity(batch.len());
    for t in &batch {
        let mut x = t.next_obs.clone();
        for (i, a) in agents.iter().enumerate() {
            x.extend(a.target_actor.forward(layout.obs_of(&t.next_obs, i))?);
        }
        next_inputs.push(x);
    }

    let mut out = Vec::with_capacity(agents.len());
    for i in 0..agents.len() {
        let agent = &mut agents[i];
        let mut grads = vec![0.0; agent.critic.params().len()];
        let mut loss = 0.0;
        for (t, next) in batch.iter().zip(&next_inputs) {
            let y = if t.terminal || cfg.gamma == 0.0 {
                t.reward
            } else {
                t.reward + cfg.gamma * agent.target_critic.forward(next)?[0]
            };
            let mut x = t.obs.clone();
            x.extend_from_slice(&t.actions);
            let cache = agent.critic.forward_cached(&x)?;
            let q = cache.output()[0];
            loss += (y - q) * (y - q) / d;
            agent.critic.backward_into(&cache, &[2.0 * (q - y) / d], &mut grads)?;
        }
        agent.critic_opt.step(agent.critic.params_mut(), &grads)?;

        let (a_off, a_len) = layout.act[i];
        let mut grads = vec![0.0; agent.actor.params().len()];
        let mut objective = 0.0;
        for t in &batch {
            let own = layout.obs_of(&t.obs, i);
            let acache = agent.actor.forward_cached(own)?;
            let mut x = t.obs.clone();
            x.extend_from_slice(&t.actions);
            x[obs_total + a_off..obs_total + a_off + a_len].copy_from_slice(acache.output());
            let ccache = agent.critic.forward_cached(&x)?;
            objective += ccache.output()[0] / d;
            let dq = agent.critic.input_gradient(&ccache, &[1.0])?;
            let up: Vec<f64> =
                dq[obs_total + a_off..obs_total + a_off + a_len].iter().map(|g| -g / d).collect();
            agent.actor.backward_into(&acache, &up, &mut grads)?;
        }
        agent.actor_opt.step(agent.actor.params_mut(), &grads)?;
        out.push(Losses { critic: loss, actor_objective: objective });
    }
    Ok(TrainStatus::Trained(out))
}

/// Communication counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CommCounters {
    /// Actor parameter exchanges (one per agent per aggregation round).
    pub param_exchanges: u64,
    pub aggregation_rounds: u64,
    /// Observation/action shares feeding centralized critics, `N(N-1)` per
    /// training step.
    pub obs_action_shares: u64,
    pub train_steps: u64,
}

/// Per-episode training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub env_seed: u64,
    pub summary: EpisodeSummary,
    /// Mean over the episode's training steps and agents; 0 while warming up.
    pub critic_loss: f64,
    pub actor_objective: f64,
    pub noise_std: f64,
    pub train_steps: u64,
    pub aggregated: bool,
}

/// Complete, serializable training state; resuming from a saved copy
/// reproduces the uninterrupted run exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trainer {
    pub scenario: ScenarioConfig,
    pub train: TrainConfig,
    pub algo: Algo,
    pub kind: SchedulerKind,
    pub seed: u64,
    pub layout: Layout,
    pub agents: Vec<AgentModel>,
    pub buffer: ReplayBuffer,
    /// Episodes completed so far.
    pub episode: usize,
    pub steps: u64,
    pub comm: CommCounters,
    #[serde(with = "crate::rng::state")]
    explore_rng: SimRng,
    #[serde(with = "crate::rng::state")]
    replay_rng: SimRng,
}

impl Trainer {
    pub fn new(scenario: ScenarioConfig, train: TrainConfig, algo: Algo, seed: u64) -> Result<Self> {
        scenario.validate()?;
        train.validate()?;
        let layout = Layout::of(&scenario);
        let mut init = stream(seed, Stream::Init);
        let agents = (0..layout.agents())
            .map(|a| {
                let kind = if a < scenario.num_uavs { AgentType::Uav } else { AgentType::Hap };
                AgentModel::new(
                    kind,
                    layout.obs[a].1,
                    layout.act[a].1,
                    layout.critic_input(),
                    &train,
                    &mut init,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            buffer: ReplayBuffer::new(train.replay_capacity),
            scenario,
            train,
            algo,
            kind: SchedulerKind::Elastic,
            seed,
            layout,
            agents,
            episode: 0,
            steps: 0,
            comm: CommCounters::default(),
            explore_rng: stream(seed, Stream::Exploration),
            replay_rng: stream(seed, Stream::Replay),
        })
    }

    /// Exploration std for episode `e`: linear from `noise_start` to
    /// `noise_end` over the first half of training, then constant.
    pub fn noise_std(&self, e: usize) -> f64 {
        let half = self.train.episodes / 2;
        if half == 0 || e >= half {
            return self.train.noise_end;
        }
        let f = e as f64 / half as f64;
        self.train.noise_start + (self.train.noise_end - self.train.noise_start) * f
    }

    /// World seed of training episode `e`.
    pub fn episode_seed(&self, e: usize) -> u64 {
        derive_seed(self.seed, e as u64)
    }

    pub fn finished(&self) -> bool {
        self.episode >= self.train.episodes
    }

    /// Runs one training episode: act, step, store, train, soft-update;
    /// aggregates actors after every `t_fl`-th episode in federated mode.
    pub fn run_episode(&mut self) -> Result<EpisodeLog> {
        let e = self.episode;
        let mut cfg = self.scenario.clone();
        cfg.rng_seed = self.episode_seed(e);
        let mut env = Env::new(cfg, self.kind)?;
        let std = self.noise_std(e);
        let n = self.agents.len() as u64;
        let (mut closs, mut aobj, mut trained) = (0.0, 0.0, 0u64);
        let mut reward = 0.0;
        let mut sent = 0.0;
        let mut slots = 0;

        while !env.done() {
            let obs = env.observations();
            let raw = obs
                .iter()
                .zip(&self.agents)
                .map(|(o, a)| act(a, o, Some((std, &mut self.explore_rng))))
                .collect::<Result<Vec<_>>>()?;
            let action = env.decode_action(&raw)?;
            let out = env.step(&action)?;
            reward += out.reward;
            sent += out.flows.sent.iter().sum::<f64>();
            slots += 1;
            self.buffer.push(Transition {
                obs: obs.concat(),
                actions: raw.concat(),
                reward: out.reward * self.train.reward_scale,
                next_obs: env.observations().concat(),
                terminal: out.terminal,
            });
            self.steps += 1;
            let status = train_step_maddpg(
                &mut self.agents,
                &self.layout,
                &self.buffer,
                &self.train,
                &mut self.replay_rng,
            )?;
            if let TrainStatus::Trained(losses) = status {
                trained += 1;
                self.comm.train_steps += 1;
                self.comm.obs_action_shares += n * (n - 1);
                for l in &losses {
                    closs += l.critic / n as f64;
                    aobj += l.actor_objective / n as f64;
                }
                if self.comm.train_steps % self.train.t_up as u64 == 0 {
                    for a in self.agents.iter_mut() {
                        soft_update(&mut a.target_actor, &a.actor, self.train.tau)?;
                        soft_update(&mut a.target_critic, &a.critic, self.train.tau)?;
                    }
                }
            }
        }
        self.episode += 1;
        let aggregated = self.algo == Algo::P2pVfrl && self.episode % self.train.t_fl == 0;
        if aggregated {
            aggregate_actors(&mut self.agents)?;
            self.comm.param_exchanges += n;
            self.comm.aggregation_rounds += 1;
        }
        let l = &env.world().ledger;
        let summary = EpisodeSummary {
            slots,
            avg_aoi: env.world().aoi.average(),
            reward,
            completed: l.completed_count(),
            generated: (0..l.users).map(|m| l.generated_count(m)).sum(),
            transmission_fail: slots > 0 && sent == 0.0,
        };
        let per = |x: f64| if trained > 0 { x / trained as f64 } else { 0.0 };
        Ok(EpisodeLog {
            episode: e,
            env_seed: self.episode_seed(e),
            summary,
            critic_loss: per(closs),
            actor_objective: per(aobj),
            noise_std: std,
            train_steps: trained,
            aggregated,
        })
    }

    /// Noise-free joint action of the current actors.
    pub fn greedy_action(&self, env: &Env) -> Result<JointAction> {
        greedy_action(&self.agents, env)
    }

    /// Greedy episode on the world of `seed`.
    pub fn evaluate(&self, seed: u64) -> Result<EpisodeSummary> {
        let mut cfg = self.scenario.clone();
        cfg.rng_seed = seed;
        let mut env = Env::new(cfg, self.kind)?;
        rollout(&mut env, |e| self.greedy_action(e), |_, _, _| Ok(()))
    }
}

pub fn greedy_action(agents: &[AgentModel], env: &Env) -> Result<JointAction> {
    let raw = env
        .observations()
        .iter()
        .zip(agents)
        .map(|(o, a)| act(a, o, None))
        .collect::<Result<Vec<_>>>()?;
    env.decode_action(&raw)
}
