//! Channel model: user-to-UAV path gains, CSI-robust effective gains, SIC
//! ordering, uplink NOMA rates and the UAV-to-HAP backhaul link.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::world::EntityPose;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Relative slack allowed when checking power caps.
const CAP_SLACK: f64 = 1e-12;

/// Shape of the per-(UAV, user, subchannel) arrays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub uavs: usize,
    pub users: usize,
    pub subchannels: usize,
}

impl Dims {
    pub fn of(cfg: &ScenarioConfig) -> Self {
        Self { uavs: cfg.num_uavs, users: cfg.num_users, subchannels: cfg.num_subchannels }
    }

    pub fn len(&self) -> usize {
        self.uavs * self.users * self.subchannels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn idx(&self, uav: usize, user: usize, sc: usize) -> usize {
        (uav * self.users + user) * self.subchannels + sc
    }
}

/// Power gain `beta0 / d^2` between a UAV and a ground user.
pub fn path_gain(uav: &EntityPose, user: &EntityPose, beta0: f64) -> Result<f64> {
    let d = uav.distance(user);
    if !(d > 0.0) {
        return Err(Error::Domain(format!("zero UAV-user distance (d = {d})")));
    }
    Ok(beta0 / (d * d))
}

/// Inverse of the standard normal CDF.
///
/// Rational approximation (Acklam) polished with one Halley step, accurate
/// to about 1e-15 relative over (0, 1).
pub fn inv_normal_cdf(p: f64) -> f64 {
    if !(p > 0.0) {
        return if p == 0.0 { f64::NEG_INFINITY } else { f64::NAN };
    }
    if p >= 1.0 {
        return if p == 1.0 { f64::INFINITY } else { f64::NAN };
    }
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.383577518672690e2,
        -3.066479806614716e1,
        2.506628277459239,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e1,
        1.615858368580409e2,
        -1.556989798598866e2,
        6.680131188771972e1,
        -1.328068155288572e1,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838,
        -2.549732539343734,
        4.374664141464968,
        2.938163982698783,
    ];
    const D: [f64; 4] =
        [7.784695709041462e-3, 3.224671290700398e-1, 2.445134137142996, 3.754408661907416];
    const LOW: f64 = 0.02425;

    let x = if p < LOW {
        let q = Float::sqrt(-2.0 * Float::ln(p));
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = Float::sqrt(-2.0 * Float::ln(1.0 - p));
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };

    let e = 0.5 * libm::erfc(-x / core::f64::consts::SQRT_2) - p;
    let u = e * Float::sqrt(2.0 * core::f64::consts::PI) * Float::exp(x * x / 2.0);
    x - u / (1.0 + x * u / 2.0)
}

/// Gain value exceeded with probability `1 - eps` under a Gaussian
/// estimation error of standard deviation `err_std`, floored at zero.
///
/// A rate computed from this gain falls short of its nominal value with
/// probability at most `eps`.
pub fn robust_effective_gain(est: f64, err_std: f64, eps: f64) -> f64 {
    if err_std == 0.0 {
        return est.max(0.0);
    }
    (est + inv_normal_cdf(eps) * err_std).max(0.0)
}

/// Decoding order for the users sharing one (UAV, subchannel): strongest
/// effective gain first, ties by ascending user index. A user only suffers
/// interference from users decoded after it.
pub fn sic_order(assigned_users: &[usize], eff_gains: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = assigned_users.to_vec();
    order.sort_by(|&a, &b| eff_gains[b].total_cmp(&eff_gains[a]).then(a.cmp(&b)));
    order
}

/// Channel state seen by the receivers in one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    pub dims: Dims,
    /// Estimated gains normalized to the subchannel noise power.
    pub est_gain: Vec<f64>,
    pub err_std: Vec<f64>,
    /// Robust gains used for rate allocation and SIC ordering.
    pub eff_gain: Vec<f64>,
}

impl ChannelRealization {
    /// Computes normalized estimated gains from geometry, the CSI error
    /// spread (a fraction of the estimate) and the robust effective gains.
    pub fn realize(
        uav_poses: &[EntityPose],
        user_poses: &[EntityPose],
        cfg: &ScenarioConfig,
    ) -> Result<Self> {
        let dims = Dims::of(cfg);
        let noise = cfg.subchannel_noise();
        let mut est_gain = vec![0.0; dims.len()];
        let mut err_std = vec![0.0; dims.len()];
        let mut eff_gain = vec![0.0; dims.len()];
        for (u, uav) in uav_poses.iter().enumerate() {
            for (m, user) in user_poses.iter().enumerate() {
                let g = path_gain(uav, user, cfg.beta0)? / noise;
                let sd = cfg.csi_uncertainty * g;
                let eff = robust_effective_gain(g, sd, cfg.epsilon_outage);
                for n in 0..dims.subchannels {
                    let i = dims.idx(u, m, n);
                    est_gain[i] = g;
                    err_std[i] = sd;
                    eff_gain[i] = eff;
                }
            }
        }
        Ok(Self { dims, est_gain, err_std, eff_gain })
    }

    /// Builds a realization directly from effective gains (no estimation
    /// error), mainly for tests and oracles.
    pub fn from_effective(dims: Dims, eff_gain: Vec<f64>) -> Self {
        assert_eq!(eff_gain.len(), dims.len());
        Self { dims, est_gain: eff_gain.clone(), err_std: vec![0.0; dims.len()], eff_gain }
    }

    /// SIC order of every (UAV, subchannel) cell under `alloc`, indexed
    /// `uav * subchannels + sc`.
    pub fn sic_orders(&self, alloc: &Allocation) -> Vec<Vec<usize>> {
        let d = self.dims;
        let mut orders = Vec::with_capacity(d.uavs * d.subchannels);
        let mut gains = vec![0.0; d.users];
        for u in 0..d.uavs {
            for n in 0..d.subchannels {
                let assigned: Vec<usize> =
                    (0..d.users).filter(|&m| alloc.flags[d.idx(u, m, n)]).collect();
                for (m, g) in gains.iter_mut().enumerate() {
                    *g = self.eff_gain[d.idx(u, m, n)];
                }
                orders.push(sic_order(&assigned, &gains));
            }
        }
        orders
    }
}

/// Subchannel flags `K` and transmit powers `p` of every (UAV, user, SC).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub dims: Dims,
    pub flags: Vec<bool>,
    pub powers: Vec<f64>,
}

impl Allocation {
    pub fn empty(dims: Dims) -> Self {
        Self { dims, flags: vec![false; dims.len()], powers: vec![0.0; dims.len()] }
    }

    pub fn assign(&mut self, uav: usize, user: usize, sc: usize, power: f64) {
        let i = self.dims.idx(uav, user, sc);
        self.flags[i] = true;
        self.powers[i] = power;
    }

    /// Transmit power of `user` towards `uav` summed over its subchannels.
    pub fn user_power(&self, uav: usize, user: usize) -> f64 {
        (0..self.dims.subchannels)
            .map(|n| self.dims.idx(uav, user, n))
            .filter(|&i| self.flags[i])
            .map(|i| self.powers[i])
            .sum()
    }

    pub fn subchannels_of(&self, uav: usize, user: usize) -> usize {
        (0..self.dims.subchannels).filter(|&n| self.flags[self.dims.idx(uav, user, n)]).count()
    }

    pub fn users_on(&self, uav: usize, sc: usize) -> usize {
        (0..self.dims.users).filter(|&m| self.flags[self.dims.idx(uav, m, sc)]).count()
    }

    /// Checks the per-user and per-subchannel caps and the user power cap.
    pub fn check(&self, cfg: &ScenarioConfig) -> Result<()> {
        let d = self.dims;
        if self.flags.len() != d.len() || self.powers.len() != d.len() {
            return Err(Error::Precondition("allocation arrays do not match dims".into()));
        }
        for u in 0..d.uavs {
            for m in 0..d.users {
                if self.subchannels_of(u, m) > cfg.sc_per_user_cap {
                    return Err(Error::Precondition(format!(
                        "user {m} holds more than {} subchannels of UAV {u}",
                        cfg.sc_per_user_cap
                    )));
                }
                for n in 0..d.subchannels {
                    let p = self.powers[d.idx(u, m, n)];
                    if !(p >= 0.0 && p.is_finite()) {
                        return Err(Error::Precondition(format!("invalid power {p}")));
                    }
                }
                if self.user_power(u, m) > cfg.p_max_user * (1.0 + CAP_SLACK) {
                    return Err(Error::Precondition(format!(
                        "user {m} exceeds p_max on UAV {u}"
                    )));
                }
            }
            for n in 0..d.subchannels {
                if self.users_on(u, n) > cfg.users_per_sc_cap {
                    return Err(Error::Precondition(format!(
                        "subchannel {n} of UAV {u} carries more than {} users",
                        cfg.users_per_sc_cap
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Uplink NOMA rates in bit/s, laid out like [`Dims::idx`]; zero where no
/// subchannel is assigned.
///
/// On cell `(u, n)` the user at SIC position `k` sees intra-cell interference
/// from the users at positions `> k` of the same cell, and inter-cell
/// interference from the users at positions `> k` of cell `(u', n)` for
/// every other UAV `u'`, each weighted by its gain and power on its own
/// cell. Gains are normalized to the noise power, hence the `+ 1`.
pub fn noma_rates(
    real: &ChannelRealization,
    alloc: &Allocation,
    cfg: &ScenarioConfig,
) -> Result<Vec<f64>> {
    alloc.check(cfg)?;
    let d = real.dims;
    if alloc.dims != d {
        return Err(Error::Precondition("allocation and realization dims differ".into()));
    }
    let bn = cfg.subchannel_bandwidth();
    let orders = real.sic_orders(alloc);
    let rx = |u: usize, m: usize, n: usize| {
        let i = d.idx(u, m, n);
        real.eff_gain[i] * alloc.powers[i]
    };
    let mut rates = vec![0.0; d.len()];
    for u in 0..d.uavs {
        for n in 0..d.subchannels {
            let order = &orders[u * d.subchannels + n];
            for (k, &m) in order.iter().enumerate() {
                let intra: f64 = order[k + 1..].iter().map(|&j| rx(u, j, n)).sum();
                let inter: f64 = (0..d.uavs)
                    .filter(|&v| v != u)
                    .map(|v| {
                        let other = &orders[v * d.subchannels + n];
                        other.iter().skip(k + 1).map(|&j| rx(v, j, n)).sum::<f64>()
                    })
                    .sum();
                let sinr = rx(u, m, n) / (intra + inter + 1.0);
                rates[d.idx(u, m, n)] = bn * Float::log2(1.0 + sinr);
            }
        }
    }
    Ok(rates)
}

/// Backhaul link budget of one UAV towards the HAP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    /// Free-space path loss as a linear power ratio (< 1).
    pub fspl: f64,
    pub noise_power: f64,
    pub snr: f64,
    pub rate: f64,
}

pub fn free_space_loss(distance: f64, carrier_hz: f64) -> f64 {
    let r = SPEED_OF_LIGHT / (4.0 * core::f64::consts::PI * distance * carrier_hz);
    r * r
}

/// UAV-to-HAP rate at transmit power `p_uav`. Backhaul links are
/// orthogonal, so there is no interference term.
pub fn uav_hap_link(
    uav: &EntityPose,
    hap: &EntityPose,
    p_uav: f64,
    cfg: &ScenarioConfig,
) -> Result<LinkBudget> {
    if !(p_uav >= 0.0) || p_uav > cfg.p_max_uav * (1.0 + CAP_SLACK) {
        return Err(Error::Precondition(format!(
            "UAV backhaul power {p_uav} outside [0, {}]",
            cfg.p_max_uav
        )));
    }
    let d = uav.distance(hap);
    if !(d > 0.0) {
        return Err(Error::Domain("zero UAV-HAP distance".into()));
    }
    let fspl = free_space_loss(d, cfg.carrier_hz);
    let noise_power = cfg.k_boltzmann * cfg.noise_temp * cfg.uav_hap_bandwidth;
    let snr = p_uav * cfg.antenna_gain * fspl * cfg.line_loss / noise_power;
    let rate = cfg.uav_hap_bandwidth * Float::log2(1.0 + snr);
    Ok(LinkBudget { fspl, noise_power, snr, rate })
}

pub fn uav_hap_rate(
    uav: &EntityPose,
    hap: &EntityPose,
    p_uav: f64,
    cfg: &ScenarioConfig,
) -> Result<f64> {
    uav_hap_link(uav, hap, p_uav, cfg).map(|l| l.rate)
}
