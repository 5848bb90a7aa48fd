mod common;

use common::{random_kernel, random_reward, soft_optimal_policy};
use perfrl_core::{
    lmo, random_floored_policy, repeated_retraining, run_zfw, seeded, ActionTable, FwConfig, PerformativeEnv,
    Policy, RegCoefficient, RewardTable, SamplingScheme, TabularMdpBase,
};
use proptest::prelude::*;
use rand::Rng;

/// Best vertex of Π_floor for a linear objective, found by trying every vertex.
fn brute_force_lmo(g: &ActionTable, floor: f64) -> Policy {
    let (n_s, n_a) = (g.n_states(), g.n_actions());
    let top = 1.0 - floor * (n_a - 1) as f64;
    let vertex = |choice: &[usize]| {
        Policy::from_table(ActionTable::from_fn(n_s, n_a, |s, a| if choice[s] == a { top } else { floor }))
            .unwrap()
    };
    let mut choice = vec![0usize; n_s];
    let mut best = vertex(&choice);
    let mut best_v = g.dot(best.table());
    loop {
        let mut k = 0;
        while k < n_s {
            choice[k] += 1;
            if choice[k] < n_a {
                break;
            }
            choice[k] = 0;
            k += 1;
        }
        if k == n_s {
            return best;
        }
        let v = vertex(&choice);
        let val = g.dot(v.table());
        if val > best_v {
            best = v;
            best_v = val;
        }
    }
}

#[test]
fn lmo_agrees_with_vertex_enumeration() {
    let mut rng = seeded(31);
    for _ in 0..200 {
        let n_s = rng.random_range(1..=4);
        let n_a = rng.random_range(1..=4);
        let floor = rng.random_range(0.0..=1.0 / n_a as f64);
        let g = ActionTable::from_fn(n_s, n_a, |_, _| rng.random_range(-1.0..1.0));
        let base = TabularMdpBase::uniform_start(n_s, n_a, 0.9).unwrap();
        let fast = lmo(&g, floor, &base).unwrap();
        assert_eq!(fast, brute_force_lmo(&g, floor));
        // and it beats interior points of the polytope
        for _ in 0..5 {
            let other = random_floored_policy(n_s, n_a, floor, &mut rng);
            assert!(g.dot(fast.table()) >= g.dot(other.table()) - 1e-12);
        }
    }
}

fn small_config(seed: u64) -> FwConfig {
    FwConfig {
        iterations: 8,
        batch: 16,
        floor: 0.05,
        probe: 0.01,
        step: 0.2,
        eval_noise: 1e-4,
        seed,
        sampling: SamplingScheme::Gaussian,
        oracle_gap: false,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn runs_stay_floored_and_pick_the_smallest_gap(
        n_s in 1usize..=4, n_a in 2usize..=4, seed in any::<u64>(), lambda in 0.0f64..1.0
    ) {
        let base = TabularMdpBase::uniform_start(n_s, n_a, 0.9).unwrap();
        let env = PerformativeEnv::affine_mix(base);
        let reg = RegCoefficient::entropy(lambda).unwrap();
        let cfg = small_config(seed);
        let init = random_floored_policy(n_s, n_a, cfg.floor, &mut seeded(seed ^ 1));
        let res = run_zfw(&env, reg, &cfg, &init).unwrap();
        prop_assert_eq!(res.trace.len(), cfg.iterations);
        for rec in &res.trace {
            prop_assert!(rec.min_mass >= cfg.floor - 1e-12);
            prop_assert!(rec.v_unreg <= rec.v_reg + 1e-12);
        }
        prop_assert!(res.final_policy.in_floored(cfg.floor - 1e-12));
        let best = res.trace[res.output_index].fw_gap;
        prop_assert!(res.trace.iter().all(|r| r.fw_gap >= best));
        prop_assert!(res.trace[..res.output_index].iter().all(|r| r.fw_gap > best));

        let again = run_zfw(&env, reg, &cfg, &init).unwrap();
        prop_assert_eq!(&again.output_policy, &res.output_policy);
        prop_assert_eq!(
            again.trace.iter().map(|r| r.fw_gap).collect::<Vec<_>>(),
            res.trace.iter().map(|r| r.fw_gap).collect::<Vec<_>>()
        );
    }
}

#[test]
fn ties_resolve_to_the_earliest_iterate() {
    // zero reward and no regularization: every estimate is exactly zero
    let base = TabularMdpBase::uniform_start(2, 3, 0.9).unwrap();
    let mut rng = seeded(4);
    let env = PerformativeEnv::fixed(
        base,
        random_kernel(2, 3, &mut rng),
        RewardTable::constant(2, 3, 0.0).unwrap(),
    )
    .unwrap();
    let cfg = FwConfig {
        eval_noise: 0.0,
        ..small_config(1)
    };
    let res = run_zfw(&env, RegCoefficient::entropy(0.0).unwrap(), &cfg, &Policy::uniform(2, 3)).unwrap();
    assert!(res.trace.iter().all(|r| r.fw_gap == 0.0));
    assert_eq!(res.output_index, 0);
}

#[test]
fn retraining_on_fixed_dynamics_finds_the_soft_optimum() {
    let mut rng = seeded(8);
    let base = TabularMdpBase::uniform_start(4, 3, 0.5).unwrap();
    let p = random_kernel(4, 3, &mut rng);
    let r = random_reward(4, 3, &mut rng);
    let env = PerformativeEnv::fixed(base.clone(), p.clone(), r.clone()).unwrap();
    let reg = RegCoefficient::entropy(1.0).unwrap();
    let res = repeated_retraining(&env, reg, 3, 200, 0.4, &Policy::uniform(4, 3)).unwrap();
    let oracle = soft_optimal_policy(&p, &r, &base, 1.0, 500);
    let dist = res.final_policy.table().sub(oracle.table()).norm();
    assert!(dist <= 1e-9, "distance to soft optimum {dist:e}");
    assert_eq!(res.trace.len(), 4);
    assert!(res.trace.last().unwrap().fw_gap <= 1e-9);
}

#[test]
fn uniform_policy_is_a_fixed_point_of_retraining_on_the_mix_env() {
    let base = TabularMdpBase::uniform_start(5, 4, 0.95).unwrap();
    let env = PerformativeEnv::affine_mix(base);
    let reg = RegCoefficient::entropy(0.5).unwrap();
    let u = Policy::uniform(5, 4);
    let res = repeated_retraining(&env, reg, 2, 20, 0.01, &u).unwrap();
    assert!(res.final_policy.table().sub(u.table()).norm() <= 1e-12);
}
