//! Scenario and training configuration, with the two shipped profiles.
//!
//! All quantities are SI and linear (watts, hertz, bits, cycles). The slot
//! length is one second, so a rate in bit/s is also a bit count per slot.

use alloc::format;
use alloc::vec::Vec;
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical scenario of one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub num_uavs: usize,
    pub num_users: usize,
    pub num_subchannels: usize,
    /// Tasks each user generates over an episode.
    pub max_tasks_per_user: usize,
    /// Episode horizon in slots.
    pub horizon: usize,
    pub area_x: f64,
    pub area_y: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub h_hap: f64,
    pub hap_xy: [f64; 2],
    pub d_min: f64,
    pub v_max: f64,
    /// Per-axis standard deviation of the user random-walk step, meters/slot.
    pub user_speed_std: f64,
    /// Task size in bits.
    pub task_size: f64,
    pub task_gen_prob: f64,
    /// Total uplink bandwidth of one UAV, split evenly over the subchannels.
    pub bandwidth: f64,
    pub uav_hap_bandwidth: f64,
    pub p_max_user: f64,
    pub p_max_uav: f64,
    /// CPU cycles per bit at a UAV.
    pub c_uav: f64,
    /// CPU cycles per bit at the HAP.
    pub c_hap: f64,
    pub cpu_max_uav: f64,
    pub cpu_max_hap: f64,
    /// Channel power gain at the 1 m reference distance.
    pub beta0: f64,
    /// Noise power spectral density, W/Hz.
    pub noise_psd: f64,
    pub k_boltzmann: f64,
    pub noise_temp: f64,
    pub antenna_gain: f64,
    pub line_loss: f64,
    pub carrier_hz: f64,
    pub r_min: f64,
    pub epsilon_outage: f64,
    /// CSI error standard deviation as a fraction of the estimated gain.
    pub csi_uncertainty: f64,
    pub sc_per_user_cap: usize,
    pub users_per_sc_cap: usize,
    pub rng_seed: u64,
}

pub fn db_to_linear(db: f64) -> f64 {
    Float::powf(10.0, db / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm) * 1e-3
}

impl ScenarioConfig {
    /// Full-scale parameters of the reference simulation setup.
    pub fn paper() -> Self {
        Self {
            num_uavs: 2,
            num_users: 20,
            num_subchannels: 8,
            max_tasks_per_user: 5,
            horizon: 400,
            area_x: 200_000.0,
            area_y: 200_000.0,
            h_min: 300.0,
            h_max: 500.0,
            h_hap: 20_000.0,
            hap_xy: [100_000.0, 100_000.0],
            d_min: 100.0,
            v_max: 50.0,
            user_speed_std: 1.0,
            task_size: 1e7,
            task_gen_prob: 0.5,
            bandwidth: 10e6,
            uav_hap_bandwidth: 20e6,
            p_max_user: 0.2,
            p_max_uav: 0.5,
            c_uav: 200.0,
            c_hap: 500.0,
            cpu_max_uav: 1e9,
            cpu_max_hap: 5e9,
            beta0: 1e-3,
            noise_psd: dbm_to_watts(-174.0),
            k_boltzmann: 1.38e-23,
            noise_temp: 1000.0,
            antenna_gain: db_to_linear(15.0),
            line_loss: 1.0,
            carrier_hz: 2.4e9,
            r_min: 1e5,
            epsilon_outage: 0.05,
            csi_uncertainty: 0.0,
            sc_per_user_cap: 1,
            users_per_sc_cap: 2,
            rng_seed: 0,
        }
    }

    /// Laptop-scale scenario: same radio and compute constants, fewer
    /// entities, a 20 km square, and a weaker reference gain so that one
    /// slot of uplink carries roughly one task.
    pub fn desk() -> Self {
        Self {
            num_uavs: 2,
            num_users: 6,
            num_subchannels: 4,
            max_tasks_per_user: 3,
            horizon: 400,
            area_x: 20_000.0,
            area_y: 20_000.0,
            hap_xy: [10_000.0, 10_000.0],
            task_size: 1e6,
            beta0: 1e-6,
            ..Self::paper()
        }
    }

    /// Tiny single-UAV scenario used for learning sanity checks.
    pub fn tiny() -> Self {
        Self {
            num_uavs: 1,
            num_users: 2,
            num_subchannels: 2,
            max_tasks_per_user: 3,
            horizon: 100,
            task_size: 1e5,
            ..Self::desk()
        }
    }

    pub fn profile(name: &str) -> Option<Self> {
        match name {
            "paper" => Some(Self::paper()),
            "desk" => Some(Self::desk()),
            "tiny" => Some(Self::tiny()),
            _ => None,
        }
    }

    /// Bandwidth of one subchannel.
    pub fn subchannel_bandwidth(&self) -> f64 {
        self.bandwidth / self.num_subchannels as f64
    }

    /// Noise power on one subchannel.
    pub fn subchannel_noise(&self) -> f64 {
        self.noise_psd * self.subchannel_bandwidth()
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems: Vec<&str> = Vec::new();
        if self.num_uavs == 0
            || self.num_users == 0
            || self.num_subchannels == 0
            || self.max_tasks_per_user == 0
            || self.horizon == 0
        {
            problems.push("all counts must be >= 1");
        }
        if !(self.h_min <= self.h_max && self.h_max < self.h_hap) {
            problems.push("need h_min <= h_max < h_hap");
        }
        if !(self.h_min > 0.0) {
            problems.push("h_min must be positive");
        }
        if !(0.0..=1.0).contains(&self.task_gen_prob) {
            problems.push("task_gen_prob must lie in [0, 1]");
        }
        if !(self.epsilon_outage > 0.0 && self.epsilon_outage < 1.0) {
            problems.push("epsilon_outage must lie in (0, 1)");
        }
        if self.sc_per_user_cap == 0 || self.users_per_sc_cap == 0 {
            problems.push("caps must be >= 1");
        }
        let positive = [
            self.area_x,
            self.area_y,
            self.bandwidth,
            self.uav_hap_bandwidth,
            self.p_max_user,
            self.p_max_uav,
            self.c_uav,
            self.c_hap,
            self.cpu_max_uav,
            self.cpu_max_hap,
            self.beta0,
            self.noise_psd,
            self.k_boltzmann,
            self.noise_temp,
            self.antenna_gain,
            self.line_loss,
            self.carrier_hz,
            self.task_size,
            self.v_max,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            problems.push("powers, bandwidths, capacities and physical constants must be positive");
        }
        if !(self.d_min >= 0.0 && self.user_speed_std >= 0.0 && self.csi_uncertainty >= 0.0) {
            problems.push("d_min, user_speed_std and csi_uncertainty must be non-negative");
        }
        if !(self.r_min >= 0.0) {
            problems.push("r_min must be non-negative");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// First-order optimizer used for network updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    /// Plain gradient descent, `w <- w - lr * g`.
    Sgd,
}

/// Hyper-parameters of the actor-critic learners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub optimizer: OptimizerKind,
    pub gamma: f64,
    pub tau: f64,
    pub replay_capacity: usize,
    /// Mini-batch size D.
    pub minibatch: usize,
    /// Transitions required in the buffer before training starts (B).
    pub warmup: usize,
    /// Episodes between federated aggregation rounds.
    pub t_fl: usize,
    /// Training steps between target-network updates.
    pub t_up: usize,
    pub noise_start: f64,
    pub noise_end: f64,
    /// Total training episodes; exploration anneals over the first half.
    pub episodes: usize,
    /// Factor applied to rewards before they enter the replay buffer.
    #[serde(default = "unit_scale")]
    pub reward_scale: f64,
}

fn unit_scale() -> f64 {
    1.0
}

impl TrainConfig {
    pub fn paper() -> Self {
        Self {
            actor_hidden: alloc::vec![1024, 512],
            critic_hidden: alloc::vec![512, 256],
            actor_lr: 1e-5,
            critic_lr: 1e-4,
            optimizer: OptimizerKind::Adam,
            gamma: 0.99,
            tau: 0.0005,
            replay_capacity: 50_000,
            minibatch: 8,
            warmup: 64,
            t_fl: 10,
            t_up: 1,
            noise_start: 0.3,
            noise_end: 0.05,
            episodes: 2000,
            reward_scale: 1.0,
        }
    }

    pub fn desk() -> Self {
        Self {
            actor_hidden: alloc::vec![128, 64],
            critic_hidden: alloc::vec![64, 32],
            ..Self::paper()
        }
    }

    /// Desk networks with faster learning for the one-UAV tiny scenario:
    /// larger steps and target mixing, rewards scaled by 0.1, 300 episodes.
    pub fn tiny() -> Self {
        Self {
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            tau: 0.01,
            reward_scale: 0.1,
            episodes: 300,
            ..Self::desk()
        }
    }

    pub fn profile(name: &str) -> Option<Self> {
        match name {
            "paper" => Some(Self::paper()),
            "desk" => Some(Self::desk()),
            "tiny" => Some(Self::tiny()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("training: {msg}")));
        if self.actor_hidden.iter().chain(&self.critic_hidden).any(|&h| h == 0) {
            return bad("hidden layer sizes must be >= 1");
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if self.minibatch == 0 || self.replay_capacity < self.minibatch {
            return bad("need 1 <= minibatch <= replay_capacity");
        }
        if self.warmup < self.minibatch {
            return bad("warmup must be at least the minibatch size");
        }
        if self.t_fl == 0 || self.t_up == 0 {
            return bad("t_fl and t_up must be >= 1");
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return bad("reward_scale must be positive");
        }
        if !(self.noise_start >= 0.0 && self.noise_end >= 0.0) {
            return bad("noise std must be non-negative");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_validate() {
        for name in ["paper", "desk", "tiny"] {
            ScenarioConfig::profile(name).unwrap().validate().unwrap();
            TrainConfig::profile(name).unwrap().validate().unwrap();
        }
        assert!(ScenarioConfig::profile("huge").is_none());
    }

    #[test]
    fn paper_profile_matches_reference_table() {
        let c = ScenarioConfig::paper();
        assert_eq!(c.c_uav, 200.0);
        assert_eq!(c.c_hap, 500.0);
        assert_eq!(c.p_max_uav, 0.5);
        assert_eq!(c.p_max_user, 0.2);
        assert_eq!(c.k_boltzmann, 1.38e-23);
        assert_eq!(c.noise_temp, 1000.0);
        assert!((c.antenna_gain - 31.622776601683793).abs() < 1e-9);
        assert_eq!(c.uav_hap_bandwidth, 20e6);
        assert_eq!(c.carrier_hz, 2.4e9);
        assert_eq!(c.v_max, 50.0);
        assert_eq!(c.cpu_max_uav, 1e9);
        assert_eq!(c.cpu_max_hap, 5e9);
        assert_eq!(c.h_hap, 20_000.0);
        assert_eq!(c.task_size, 1e7);
        assert_eq!(c.task_gen_prob, 0.5);
        assert_eq!(c.bandwidth, 10e6);
        assert_eq!(c.num_subchannels, 8);
        assert_eq!(c.subchannel_bandwidth(), 1.25e6);
        // -174 dBm/Hz
        assert!((c.noise_psd / 3.981071705534969e-21 - 1.0).abs() < 1e-12);
        // default altitude is the middle of the allowed band
        assert_eq!((c.h_min + c.h_max) / 2.0, 400.0);

        let t = TrainConfig::paper();
        assert_eq!(t.replay_capacity, 50_000);
        assert_eq!(t.minibatch, 8);
        assert_eq!(t.actor_hidden, [1024, 512]);
        assert_eq!(t.critic_hidden, [512, 256]);
        assert_eq!(t.critic_lr, 1e-4);
        assert_eq!(t.actor_lr, 1e-5);
        assert_eq!(t.gamma, 0.99);
        assert_eq!(t.tau, 0.0005);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = ScenarioConfig::desk();
        c.h_max = c.h_hap;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = ScenarioConfig::desk();
        c.epsilon_outage = 1.0;
        assert!(c.validate().is_err());
        let mut c = ScenarioConfig::desk();
        c.num_users = 0;
        assert!(c.validate().is_err());
        let mut c = ScenarioConfig::desk();
        c.p_max_uav = 0.0;
        assert!(c.validate().is_err());
        let mut t = TrainConfig::desk();
        t.tau = 0.0;
        assert!(t.validate().is_err());
    }
}
