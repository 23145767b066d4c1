//! World geometry, kinematics and mobility.

use alloc::vec::Vec;
use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::aoi::AoiTracker;
use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::rng::{stream, SimRng, Stream};
use crate::scheduler::TaskLedger;

/// Attempts made to find a UAV placement honoring the separation distance.
pub const PLACEMENT_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EntityPose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl EntityPose {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn distance(&self, other: &EntityPose) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        Float::sqrt(dx * dx + dy * dy + dz * dz)
    }
}

/// Axis-aligned x/y bounding box of a set of poses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub min_x: f64,
    pub max_x: f64,
    pub min_y: f64,
    pub max_y: f64,
}

impl BoundingBox {
    pub fn of(poses: &[EntityPose]) -> Self {
        let mut b = Self {
            min_x: f64::INFINITY,
            max_x: f64::NEG_INFINITY,
            min_y: f64::INFINITY,
            max_y: f64::NEG_INFINITY,
        };
        for p in poses {
            b.min_x = b.min_x.min(p.x);
            b.max_x = b.max_x.max(p.x);
            b.min_y = b.min_y.min(p.y);
            b.max_y = b.max_y.max(p.y);
        }
        b
    }

    pub fn contains(&self, p: &EntityPose) -> bool {
        p.x >= self.min_x && p.x <= self.max_x && p.y >= self.min_y && p.y <= self.max_y
    }
}

/// Random streams carried by a world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldRngs {
    #[serde(with = "crate::rng::state")]
    pub mobility: SimRng,
    #[serde(with = "crate::rng::state")]
    pub tasks: SimRng,
}

/// Complete simulator state at a slot boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    /// Index of the next slot to be simulated.
    pub t: usize,
    pub user_poses: Vec<EntityPose>,
    pub uav_poses: Vec<EntityPose>,
    pub hap_pose: EntityPose,
    pub ledger: TaskLedger,
    pub aoi: AoiTracker,
    pub rngs: WorldRngs,
}

/// Builds the initial world for `cfg.rng_seed`.
///
/// Users are uniform over the area. UAVs are uniform over the users'
/// bounding box (so the coverage box constraint holds from the first slot)
/// with altitude uniform in `[h_min, h_max]`; placements closer than
/// `d_min` are redrawn up to [`PLACEMENT_ATTEMPTS`] times.
pub fn init_world(cfg: &ScenarioConfig) -> Result<WorldState> {
    cfg.validate()?;
    let mut rng = stream(cfg.rng_seed, Stream::Placement);
    let user_poses: Vec<EntityPose> = (0..cfg.num_users)
        .map(|_| {
            let x = rng.random::<f64>() * cfg.area_x;
            let y = rng.random::<f64>() * cfg.area_y;
            EntityPose::new(x, y, 0.0)
        })
        .collect();
    let bbox = BoundingBox::of(&user_poses);

    let mut uav_poses = Vec::with_capacity(cfg.num_uavs);
    let mut placed = false;
    for _ in 0..PLACEMENT_ATTEMPTS {
        uav_poses.clear();
        for _ in 0..cfg.num_uavs {
            let x = bbox.min_x + rng.random::<f64>() * (bbox.max_x - bbox.min_x);
            let y = bbox.min_y + rng.random::<f64>() * (bbox.max_y - bbox.min_y);
            let z = cfg.h_min + rng.random::<f64>() * (cfg.h_max - cfg.h_min);
            uav_poses.push(EntityPose::new(x, y, z));
        }
        if separation_ok(&uav_poses, cfg.d_min) {
            placed = true;
            break;
        }
    }
    if !placed {
        return Err(Error::Config(alloc::format!(
            "could not place {} UAVs at least {} m apart after {} attempts",
            cfg.num_uavs,
            cfg.d_min,
            PLACEMENT_ATTEMPTS
        )));
    }

    Ok(WorldState {
        t: 0,
        user_poses,
        uav_poses,
        hap_pose: EntityPose::new(cfg.hap_xy[0], cfg.hap_xy[1], cfg.h_hap),
        ledger: TaskLedger::new(cfg),
        aoi: AoiTracker::new(cfg.num_users),
        rngs: WorldRngs {
            mobility: stream(cfg.rng_seed, Stream::UserMobility),
            tasks: stream(cfg.rng_seed, Stream::TaskArrivals),
        },
    })
}

fn separation_ok(poses: &[EntityPose], d_min: f64) -> bool {
    poses.iter().enumerate().all(|(i, a)| poses[i + 1..].iter().all(|b| a.distance(b) >= d_min))
}

/// Gaussian random-walk step for every user, clamped to the area.
///
/// Two normal draws (x then y) are taken per user in index order, even when
/// the step size is zero.
pub fn move_users(world: &mut WorldState, cfg: &ScenarioConfig) {
    let rng = &mut world.rngs.mobility;
    for p in world.user_poses.iter_mut() {
        let dx: f64 = rng.sample(StandardNormal);
        let dy: f64 = rng.sample(StandardNormal);
        p.x = (p.x + cfg.user_speed_std * dx).clamp(0.0, cfg.area_x);
        p.y = (p.y + cfg.user_speed_std * dy).clamp(0.0, cfg.area_y);
    }
}

/// Scales `v` down so that its norm does not exceed `v_max`.
pub fn limit_speed(v: [f64; 3], v_max: f64) -> [f64; 3] {
    let norm = Float::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if norm > v_max && norm > 0.0 {
        let s = v_max / norm;
        [v[0] * s, v[1] * s, v[2] * s]
    } else {
        v
    }
}

fn project(p: EntityPose, bbox: &BoundingBox, cfg: &ScenarioConfig) -> EntityPose {
    EntityPose::new(
        p.x.clamp(bbox.min_x, bbox.max_x),
        p.y.clamp(bbox.min_y, bbox.max_y),
        p.z.clamp(cfg.h_min, cfg.h_max),
    )
}

/// Moves UAV `index` by `velocity` for one slot.
///
/// The velocity is first limited to `v_max`. The candidate position is
/// projected onto the users' bounding box and the altitude band; if that
/// projection would make the executed displacement longer than `v_max`, the
/// step is shortened (the largest feasible fraction of the velocity is
/// found by bisection). A candidate closer than `d_min` to any other UAV is
/// rejected and the UAV holds its position.
pub fn move_uav(
    index: usize,
    velocity: [f64; 3],
    uav_poses: &[EntityPose],
    user_poses: &[EntityPose],
    cfg: &ScenarioConfig,
) -> EntityPose {
    let prev = uav_poses[index];
    let v = if velocity.iter().all(|c| c.is_finite()) {
        limit_speed(velocity, cfg.v_max)
    } else {
        [0.0; 3]
    };
    let bbox = BoundingBox::of(user_poses);
    let at = |frac: f64| {
        project(
            EntityPose::new(prev.x + frac * v[0], prev.y + frac * v[1], prev.z + frac * v[2]),
            &bbox,
            cfg,
        )
    };
    let fits = |p: &EntityPose| p.distance(&prev) <= cfg.v_max;

    let mut candidate = at(1.0);
    if !fits(&candidate) {
        let start = at(0.0);
        if !fits(&start) {
            candidate = prev;
        } else {
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if fits(&at(mid)) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            candidate = at(lo);
        }
    }

    let clear = |p: &EntityPose| {
        uav_poses
            .iter()
            .enumerate()
            .all(|(j, other)| j == index || p.distance(other) >= cfg.d_min)
    };
    if clear(&candidate) {
        return candidate;
    }
    let hold = at(0.0);
    if hold != candidate && fits(&hold) && clear(&hold) {
        hold
    } else {
        prev
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ScenarioConfig {
        ScenarioConfig::desk()
    }

    #[test]
    fn single_uav_init() {
        let mut c = cfg();
        c.num_uavs = 1;
        let w = init_world(&c).unwrap();
        assert_eq!(w.uav_poses.len(), 1);
        assert_eq!(w.user_poses.len(), c.num_users);
        assert!(w.aoi.values().iter().all(|&a| a == 0));
        for m in 0..c.num_users {
            assert!(w.ledger.is_active(m, 0));
        }
    }

    #[test]
    fn init_is_deterministic() {
        let mut c = cfg();
        c.rng_seed = 7;
        assert_eq!(init_world(&c).unwrap(), init_world(&c).unwrap());
        c.rng_seed = 8;
        let other = init_world(&c).unwrap();
        c.rng_seed = 7;
        assert_ne!(init_world(&c).unwrap().user_poses, other.user_poses);
    }

    #[test]
    fn impossible_separation_is_config_error() {
        // 10 m x 10 m area: diagonal 14.1 m, altitude band 1 m, d_min 50 m
        let mut c = cfg();
        c.area_x = 10.0;
        c.area_y = 10.0;
        c.hap_xy = [5.0, 5.0];
        c.h_min = 400.0;
        c.h_max = 401.0;
        c.d_min = 50.0;
        assert!(matches!(init_world(&c), Err(Error::Config(_))));
    }

    #[test]
    fn uavs_start_inside_user_box_and_band() {
        for seed in 0..20 {
            let mut c = cfg();
            c.rng_seed = seed;
            let w = init_world(&c).unwrap();
            let b = BoundingBox::of(&w.user_poses);
            for p in &w.uav_poses {
                assert!(b.contains(p));
                assert!(p.z >= c.h_min && p.z <= c.h_max);
            }
        }
    }

    #[test]
    fn zero_std_users_do_not_move() {
        let mut c = cfg();
        c.user_speed_std = 0.0;
        let mut w = init_world(&c).unwrap();
        let before = w.user_poses.clone();
        move_users(&mut w, &c);
        assert_eq!(w.user_poses, before);
    }

    #[test]
    fn users_clamped_at_corner() {
        let mut c = cfg();
        c.user_speed_std = 1e9;
        let mut w = init_world(&c).unwrap();
        w.user_poses[0] = EntityPose::new(c.area_x, c.area_y, 0.0);
        move_users(&mut w, &c);
        for p in &w.user_poses {
            assert!(p.x == 0.0 || p.x == c.area_x);
            assert!(p.y == 0.0 || p.y == c.area_y);
        }
    }

    #[test]
    fn user_walk_replays_rng_stream() {
        let mut c = cfg();
        c.num_users = 1;
        c.num_uavs = 1;
        c.rng_seed = 3;
        c.user_speed_std = 4.0;
        let mut w = init_world(&c).unwrap();
        let start = w.user_poses[0];
        move_users(&mut w, &c);
        move_users(&mut w, &c);

        let mut oracle = stream(3, Stream::UserMobility);
        let mut draws = [0.0f64; 4];
        for d in draws.iter_mut() {
            *d = oracle.sample(StandardNormal);
        }
        let x = (start.x + 4.0 * draws[0]).clamp(0.0, c.area_x) + 4.0 * draws[2];
        let y = (start.y + 4.0 * draws[1]).clamp(0.0, c.area_y) + 4.0 * draws[3];
        assert_eq!(w.user_poses[0].x, x.clamp(0.0, c.area_x));
        assert_eq!(w.user_poses[0].y, y.clamp(0.0, c.area_y));
    }

    fn square_users() -> Vec<EntityPose> {
        alloc::vec![EntityPose::new(0.0, 0.0, 0.0), EntityPose::new(1000.0, 1000.0, 0.0)]
    }

    #[test]
    fn zero_velocity_is_identity() {
        let c = cfg();
        let uavs = [EntityPose::new(500.0, 500.0, 400.0)];
        assert_eq!(move_uav(0, [0.0; 3], &uavs, &square_users(), &c), uavs[0]);
    }

    #[test]
    fn double_speed_is_scaled_to_v_max() {
        let c = cfg();
        let uavs = [EntityPose::new(500.0, 500.0, 400.0)];
        let v = [2.0 * c.v_max * 0.6, 2.0 * c.v_max * 0.8, 0.0];
        let p = move_uav(0, v, &uavs, &square_users(), &c);
        assert!((p.distance(&uavs[0]) - c.v_max).abs() < 1e-9);
    }

    #[test]
    fn collision_move_rejected() {
        let mut c = cfg();
        c.d_min = 5.0;
        let uavs = [EntityPose::new(500.0, 500.0, 400.0), EntityPose::new(501.0, 500.0, 400.0)];
        let p = move_uav(0, [0.5, 0.0, 0.0], &uavs, &square_users(), &c);
        assert_eq!(p, uavs[0]);
    }

    #[test]
    fn projection_onto_box_and_band() {
        let c = cfg();
        let uavs = [EntityPose::new(990.0, 10.0, c.h_max - 1.0)];
        let p = move_uav(0, [30.0, -30.0, 30.0], &uavs, &square_users(), &c);
        assert_eq!(p.x, 1000.0);
        assert_eq!(p.y, 0.0);
        assert_eq!(p.z, c.h_max);
    }

    #[test]
    fn box_shift_does_not_exceed_speed() {
        let c = cfg();
        // UAV 3 m outside the box after users moved, full-speed command outward
        let uavs = [EntityPose::new(1003.0, 500.0, 400.0)];
        let p = move_uav(0, [0.0, c.v_max, 0.0], &uavs, &square_users(), &c);
        assert!(p.distance(&uavs[0]) <= c.v_max + 1e-9);
        assert!(BoundingBox::of(&square_users()).contains(&p));
    }
}
