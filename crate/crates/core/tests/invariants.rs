use ntn_core::agents::{frl_aggregate, soft_update, ReplayBuffer, Transition};
use ntn_core::baselines::{random_feasible_policy, random_raw, run_baseline, PolicyKind};
use ntn_core::channel::{noma_rates, Allocation, ChannelRealization, Dims};
use ntn_core::env::{check_constraints, Env};
use ntn_core::nn::{param_count, Head, Mlp};
use ntn_core::rng::{stream, Stream};
use ntn_core::{ScenarioConfig, SchedulerKind};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small(seed: u64) -> ScenarioConfig {
    let mut c = ScenarioConfig::desk();
    c.rng_seed = seed;
    c.horizon = 80;
    c
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn every_slot_satisfies_the_constraint_set(seed in 0u64..10_000, sched in prop::bool::ANY) {
        let cfg = small(seed);
        let kind = if sched { SchedulerKind::Elastic } else { SchedulerKind::Fixed };
        let mut env = Env::new(cfg.clone(), kind).unwrap();
        let mut rng = stream(seed, Stream::Policy);
        while !env.done() {
            let before = env.world().clone();
            let a = random_feasible_policy(&env, &mut rng).unwrap();
            let out = env.step(&a).unwrap();
            prop_assert!(check_constraints(&cfg, &before, env.world(), &a, &out).is_ok());
            for (p, q) in before.uav_poses.iter().zip(&env.world().uav_poses) {
                prop_assert!(p.distance(q) <= cfg.v_max * (1.0 + 1e-12));
                prop_assert!((cfg.h_min..=cfg.h_max).contains(&q.z));
            }
            // Separation is never newly violated.
            let w = env.world();
            for u in 0..cfg.num_uavs {
                for v in u + 1..cfg.num_uavs {
                    let was_ok = before.uav_poses[u].distance(&before.uav_poses[v]) >= cfg.d_min;
                    prop_assert!(!was_ok || w.uav_poses[u].distance(&w.uav_poses[v]) >= cfg.d_min);
                }
            }
        }
    }

    #[test]
    fn step_is_a_function_of_world_and_action(seed in 0u64..10_000) {
        let cfg = small(seed);
        let mut env = Env::new(cfg.clone(), SchedulerKind::Elastic).unwrap();
        let mut rng = stream(seed, Stream::Policy);
        for _ in 0..20 {
            let a = random_feasible_policy(&env, &mut rng).unwrap();
            let mut twin = env.clone();
            let x = env.step(&a).unwrap();
            let y = twin.step(&a).unwrap();
            prop_assert_eq!(x, y);
            prop_assert_eq!(env.world(), twin.world());
        }
    }

    #[test]
    fn aoi_recomputes_from_completions(seed in 0u64..10_000) {
        let cfg = small(seed);
        let mut env = Env::new(cfg.clone(), SchedulerKind::Elastic).unwrap();
        let mut rng = stream(seed, Stream::Policy);
        let mut ages = vec![0u64; cfg.num_users];
        let mut total = 0u64;
        while !env.done() {
            let a = random_feasible_policy(&env, &mut rng).unwrap();
            let out = env.step(&a).unwrap();
            for (m, age) in ages.iter_mut().enumerate() {
                *age = match out.completions.iter().find(|c| c.user == m) {
                    Some(c) => (out.slot - c.gen_time) as u64,
                    None => *age + 1,
                };
            }
            prop_assert_eq!(env.world().aoi.values(), ages.as_slice());
            let mean = ages.iter().sum::<u64>() as f64 / ages.len() as f64;
            prop_assert_eq!(out.reward, -mean);
            total += ages.iter().sum::<u64>();
        }
        prop_assert_eq!(env.world().aoi.cumulative(), total);
    }

    #[test]
    fn uav_only_processes_fresh_arrivals(seed in 0u64..10_000) {
        let cfg = small(seed);
        let mut env = Env::new(cfg.clone(), SchedulerKind::Elastic).unwrap();
        let mut rng = stream(seed, Stream::Policy);
        while !env.done() {
            let a = random_feasible_policy(&env, &mut rng).unwrap();
            let out = env.step(&a).unwrap();
            for (p, s) in out.flows.uav_processed.iter().zip(&out.flows.sent) {
                prop_assert!(*p <= *s * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn fixed_scheduler_moves_whole_tasks(seed in 0u64..10_000) {
        let cfg = small(seed);
        let mut env = Env::new(cfg.clone(), SchedulerKind::Fixed).unwrap();
        let mut rng = stream(seed, Stream::Policy);
        let alpha = cfg.task_size;
        let whole = |x: f64| x == 0.0 || x == alpha;
        while !env.done() {
            let a = random_feasible_policy(&env, &mut rng).unwrap();
            let out = env.step(&a).unwrap();
            let f = &out.flows;
            prop_assert!(f.sent.iter().chain(&f.uav_processed).chain(&f.forwarded).chain(&f.hap_processed).all(|x| whole(*x)));
            let l = &env.world().ledger;
            for m in 0..l.users {
                for s in 0..l.tasks_per_user {
                    let t = l.task(m, s);
                    prop_assert!(t.processed_uav == 0.0 || t.processed_hap == 0.0);
                    prop_assert!(whole(t.user_remaining));
                }
            }
        }
    }

    #[test]
    fn last_decoded_user_sees_no_intra_cell_interference(
        gains in prop::collection::vec(1e-2f64..1e4, 1..4),
        fracs in prop::collection::vec(0.0f64..=1.0, 3),
    ) {
        let mut cfg = ScenarioConfig::desk();
        cfg.num_uavs = 1;
        cfg.num_users = gains.len();
        cfg.num_subchannels = 1;
        cfg.users_per_sc_cap = 3;
        let dims = Dims::of(&cfg);
        let mut alloc = Allocation::empty(dims);
        for m in 0..gains.len() {
            alloc.assign(0, m, 0, fracs[m] * cfg.p_max_user);
        }
        let real = ChannelRealization::from_effective(dims, gains.clone());
        let rates = noma_rates(&real, &alloc, &cfg).unwrap();
        let last = *real.sic_orders(&alloc)[0].last().unwrap();
        let p = alloc.powers[dims.idx(0, last, 0)];
        let shannon = cfg.subchannel_bandwidth() * (1.0 + gains[last] * p).log2();
        prop_assert_eq!(rates[dims.idx(0, last, 0)], shannon);
    }

    #[test]
    fn rate_falls_as_an_interferer_gets_louder(
        g_strong in 10.0f64..1e4, ratio in 0.01f64..0.99, p0 in 0.01f64..0.2, p1 in 0.0f64..0.1, extra in 0.0f64..0.1,
    ) {
        let mut cfg = ScenarioConfig::desk();
        cfg.num_uavs = 1;
        cfg.num_users = 2;
        cfg.num_subchannels = 1;
        let dims = Dims::of(&cfg);
        let real = ChannelRealization::from_effective(dims, vec![g_strong, g_strong * ratio]);
        let rate = |q1: f64| {
            let mut a = Allocation::empty(dims);
            a.assign(0, 0, 0, p0);
            a.assign(0, 1, 0, q1);
            noma_rates(&real, &a, &cfg).unwrap()[dims.idx(0, 0, 0)]
        };
        prop_assert!(rate(p1 + extra) <= rate(p1));
    }

    #[test]
    fn forward_is_pure_and_params_match_layer_sum(
        sizes in prop::collection::vec(1usize..12, 2..5), seed in 0u64..1000,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Mlp::new(&sizes, Head::Tanh, &mut rng).unwrap();
        let layer_sum: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        prop_assert_eq!(param_count(&sizes), layer_sum);
        prop_assert_eq!(net.params().len(), layer_sum);
        let x: Vec<f64> = (0..sizes[0]).map(|_| rng.random_range(-2.0..2.0)).collect();
        let before = net.clone();
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        prop_assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(net, before);
    }

    #[test]
    fn replay_evicts_oldest_first(cap in 1usize..40, extra in 0usize..40) {
        let mut b = ReplayBuffer::new(cap);
        for i in 0..cap + extra {
            b.push(Transition { obs: vec![i as f64], actions: vec![], reward: 0.0, next_obs: vec![], terminal: false });
        }
        prop_assert_eq!(b.len(), cap);
        let kept: Vec<f64> = b.iter().map(|t| t.obs[0]).collect();
        let want: Vec<f64> = (extra..cap + extra).map(|i| i as f64).collect();
        prop_assert_eq!(kept, want);
    }

    #[test]
    fn aggregation_preserves_shared_affine_invariants(n in 2usize..6, seed in 0u64..1000) {
        // Every agent satisfies p[0] + 2 p[1] = 3; so must the aggregate.
        let sizes = [2, 3, 1];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut nets: Vec<Mlp> = (0..n)
            .map(|_| {
                let mut p: Vec<f64> = (0..param_count(&sizes)).map(|_| rng.random_range(-1.0..1.0)).collect();
                p[0] = 3.0 - 2.0 * p[1];
                Mlp::from_params(&sizes, Head::Tanh, p).unwrap()
            })
            .collect();
        frl_aggregate(&mut nets.iter_mut().collect::<Vec<_>>()).unwrap();
        let once = nets.clone();
        frl_aggregate(&mut nets.iter_mut().collect::<Vec<_>>()).unwrap();
        prop_assert_eq!(&nets, &once);
        for m in &nets {
            prop_assert!((m.params()[0] + 2.0 * m.params()[1] - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn soft_update_contracts(tau in 1e-4f64..=1.0, seed in 0u64..1000) {
        let sizes = [3, 4, 2];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let primary = Mlp::new(&sizes, Head::Tanh, &mut rng).unwrap();
        let mut target = Mlp::new(&sizes, Head::Tanh, &mut rng).unwrap();
        let dist = |a: &Mlp, b: &Mlp| a.params().iter().zip(b.params()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let d0 = dist(&target, &primary);
        soft_update(&mut target, &primary, tau).unwrap();
        prop_assert!(dist(&target, &primary) < d0);
    }
}

#[test]
fn same_seed_same_trajectory() {
    let cfg = small(77);
    let run = || {
        let mut env = Env::new(cfg.clone(), SchedulerKind::Elastic).unwrap();
        let mut rng = stream(77, Stream::Policy);
        let mut worlds = Vec::new();
        while !env.done() {
            let raw = random_raw(&cfg, &mut rng);
            let a = env.decode_action(&raw).unwrap();
            env.step(&a).unwrap();
            worlds.push(env.world().clone());
        }
        worlds
    };
    assert_eq!(run(), run());
}

/// Largest uplink rate any single user can reach in one slot: best gain
/// (UAV straight above at minimum altitude), full power, no interference,
/// on every subchannel it may hold.
fn max_one_slot_rate(cfg: &ScenarioConfig) -> f64 {
    let g = cfg.beta0 / (cfg.h_min * cfg.h_min) / cfg.subchannel_noise();
    cfg.sc_per_user_cap as f64 * cfg.subchannel_bandwidth() * (1.0 + cfg.p_max_user * g).log2()
}

#[test]
fn paper_profile_whole_tasks_above_the_rate_bound_never_transmit() {
    let mut cfg = ScenarioConfig::paper();
    cfg.task_size = 1.5 * max_one_slot_rate(&cfg);
    cfg.horizon = 100;
    for seed in 0..3 {
        cfg.rng_seed = seed;
        let s = run_baseline(&cfg, PolicyKind::FixedTask).unwrap();
        assert!(s.transmission_fail && s.completed == 0, "seed {seed}: {s:?}");
        assert_eq!(s.avg_aoi, (1..=100).sum::<usize>() as f64 / 100.0);
    }
}

#[test]
fn fixed_equals_elastic_when_nothing_binds() {
    // One user, one UAV, tasks far below a slot of rate and CPU: both
    // schedulers move each task whole and finish it in the same slot.
    let mut cfg = ScenarioConfig::tiny();
    cfg.num_users = 1;
    cfg.task_size = 1e3;
    cfg.horizon = 60;
    let mut e = Env::new(cfg.clone(), SchedulerKind::Elastic).unwrap();
    let mut f = Env::new(cfg.clone(), SchedulerKind::Fixed).unwrap();
    let mut rng = stream(5, Stream::Policy);
    while !e.done() {
        let mut a = random_feasible_policy(&e, &mut rng).unwrap();
        a.theta.iter_mut().for_each(|x| *x = 1.0);
        a.eta.iter_mut().for_each(|x| *x = 1.0);
        a.backhaul_power.iter_mut().for_each(|p| *p = cfg.p_max_uav);
        let x = e.step(&a).unwrap();
        let y = f.step(&a).unwrap();
        assert_eq!(x.completions, y.completions);
        assert_eq!(e.world().aoi, f.world().aoi);
    }
    assert!(e.world().ledger.completed_count() > 0);
}
