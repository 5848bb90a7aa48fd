mod common;

use common::{random_kernel, random_reward};
use perfrl_core::theory::{
    check_gradient_dominance, check_policy_lower_bound, check_prop2, check_stationary_to_po, dominance_excess,
    grid_optimum,
};
use perfrl_core::{
    compute_constants, guaranteed_d_min, random_floored_policy, run_zfw, seeded, Error, FwConfig,
    PerformativeEnv, Policy, RegCoefficient, SamplingScheme, SensitivityConstants, TabularMdpBase,
    TheoryConstants,
};

fn fixed_env(n_s: usize, n_a: usize, gamma: f64, seed: u64) -> PerformativeEnv {
    let mut rng = seeded(seed);
    let base = TabularMdpBase::uniform_start(n_s, n_a, gamma).unwrap();
    PerformativeEnv::fixed(base, random_kernel(n_s, n_a, &mut rng), random_reward(n_s, n_a, &mut rng)).unwrap()
}

/// Interpolated env with κ halved until the declared constants give μ >= 0.
fn tuned_env(n_s: usize, n_a: usize, gamma: f64, reg: RegCoefficient) -> (PerformativeEnv, TheoryConstants) {
    let mut rng = seeded(99);
    let base = TabularMdpBase::uniform_start(n_s, n_a, gamma).unwrap();
    let (p0, r0) = (random_kernel(n_s, n_a, &mut rng), random_reward(n_s, n_a, &mut rng));
    let mut kappa = 0.5;
    loop {
        let env = PerformativeEnv::interpolated(base.clone(), kappa, p0.clone(), r0.clone()).unwrap();
        let c = env.default_constants(500, &mut seeded(7)).unwrap();
        let tc = compute_constants(c, &base, reg).unwrap();
        if tc.mu >= 0.0 {
            return (env.with_declared(c).unwrap(), tc);
        }
        kappa *= 0.5;
    }
}

fn constants_for(env: &PerformativeEnv, reg: RegCoefficient) -> TheoryConstants {
    let c = env.default_constants(500, &mut seeded(7)).unwrap();
    compute_constants(c, env.base(), reg).unwrap()
}

#[test]
fn dominance_holds_without_shift() {
    let reg = RegCoefficient::entropy(0.5).unwrap();
    for seed in 0..3 {
        let env = fixed_env(3, 3, 0.9, seed);
        let tc = constants_for(&env, reg);
        assert!(tc.mu > 0.0);
        let rep = check_gradient_dominance(&env, reg, &tc, 50, &mut seeded(seed)).unwrap();
        assert_eq!(rep.cases, 50);
        assert!(rep.passed(), "{rep:?}");
    }
}

#[test]
fn dominance_holds_in_the_regularizer_dominated_regime() {
    let reg = RegCoefficient::entropy(1.0).unwrap();
    let (env, tc) = tuned_env(3, 2, 0.5, reg);
    let rep = check_gradient_dominance(&env, reg, &tc, 50, &mut seeded(1)).unwrap();
    assert!(rep.passed(), "{rep:?}");
}

#[test]
fn dominance_is_trivial_for_equal_policies() {
    let reg = RegCoefficient::entropy(0.5).unwrap();
    let env = PerformativeEnv::affine_mix(TabularMdpBase::uniform_start(3, 3, 0.9).unwrap());
    let tc = constants_for(&env, reg);
    let pi = random_floored_policy(3, 3, 0.05, &mut seeded(2));
    assert!(dominance_excess(&env, reg, &tc, &pi, &pi).unwrap() <= 0.0);
}

#[test]
fn dominance_check_is_deterministic() {
    let reg = RegCoefficient::entropy(0.5).unwrap();
    let env = fixed_env(2, 3, 0.9, 5);
    let tc = constants_for(&env, reg);
    let a = check_gradient_dominance(&env, reg, &tc, 10, &mut seeded(3)).unwrap();
    let b = check_gradient_dominance(&env, reg, &tc, 10, &mut seeded(3)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn lower_bound_at_uniform_and_random_policies() {
    let reg = RegCoefficient::entropy(0.5).unwrap();
    let env = PerformativeEnv::affine_mix(TabularMdpBase::uniform_start(5, 4, 0.95).unwrap());
    let tc = constants_for(&env, reg);
    let rep = check_policy_lower_bound(&env, reg, &tc, &Policy::uniform(5, 4)).unwrap();
    assert!(rep.report.passed());
    assert!(rep.swap_inner_product.abs() <= 1e-15);

    let mut rng = seeded(4);
    for _ in 0..100 {
        let pi = random_floored_policy(5, 4, 0.01, &mut rng);
        let rep = check_policy_lower_bound(&env, reg, &tc, &pi).unwrap();
        assert!(rep.report.passed(), "{rep:?}");
    }
}

fn near_stationary(env: &PerformativeEnv, reg: RegCoefficient, floor: f64, init: &Policy) -> Policy {
    let cfg = FwConfig {
        iterations: 150,
        batch: 200,
        floor,
        probe: floor / 4.0,
        step: 0.05,
        eval_noise: 0.0,
        seed: 17,
        sampling: SamplingScheme::Gaussian,
        oracle_gap: false,
    };
    run_zfw(env, reg, &cfg, init).unwrap().output_policy
}

#[test]
fn lower_bound_and_gap_comparison_at_near_stationary_points() {
    let reg = RegCoefficient::entropy(1.0).unwrap();
    let (env, tc) = tuned_env(2, 2, 0.5, reg);
    let floor = tc.pi_min.unwrap() / 3.0;
    let pi = near_stationary(&env, reg, floor, &Policy::uniform(2, 2));

    let lb = check_policy_lower_bound(&env, reg, &tc, &pi).unwrap();
    assert!(lb.report.passed(), "{lb:?}");

    let rep = check_prop2(&env, reg, &tc, &pi, floor).unwrap();
    assert!(rep.premise_met, "{rep:?}");
    assert!(!rep.violated, "{rep:?}");
}

#[test]
fn gap_comparison_reports_unmet_premise() {
    let reg = RegCoefficient::entropy(1.0).unwrap();
    let (env, tc) = tuned_env(2, 2, 0.5, reg);
    let floor = tc.pi_min.unwrap() / 3.0;
    // a policy far from stationary: put the mass on the worse action everywhere
    let g = perfrl_core::fd_performative_gradient(&env, &Policy::uniform(2, 2), reg, 1e-5).unwrap().g;
    let worse: Vec<usize> = (0..2).map(|s| if g.get(s, 0) < g.get(s, 1) { 0 } else { 1 }).collect();
    let mut probs = vec![floor; 4];
    for (s, &a) in worse.iter().enumerate() {
        probs[s * 2 + a] = 1.0 - floor;
    }
    let pi = Policy::new(2, 2, probs).unwrap();
    let rep = check_prop2(&env, reg, &tc, &pi, floor).unwrap();
    if !rep.premise_met {
        assert!(!rep.violated);
    }
    assert!(matches!(
        check_prop2(&env, reg, &tc, &pi, tc.pi_min.unwrap()),
        Err(Error::Precondition(_))
    ));
}

#[test]
fn stationary_gap_bounds_suboptimality_on_tiny_envs() {
    let reg = RegCoefficient::entropy(0.5).unwrap();

    let env = fixed_env(1, 2, 0.5, 11);
    let tc = constants_for(&env, reg);
    let (_, best) = grid_optimum(&env, reg).unwrap();
    let best = if perfrl_core::min_policy_mass(&best) > 1e-4 { best } else { Policy::uniform(1, 2) };
    let rep = check_stationary_to_po(&env, reg, &tc, &best).unwrap();
    assert!(rep.holds, "{rep:?}");

    let base = TabularMdpBase::uniform_start(1, 2, 0.5).unwrap();
    let env = PerformativeEnv::affine_mix(base.clone());
    let tc = constants_for(&env, reg);
    let mut rng = seeded(12);
    for _ in 0..20 {
        let pi = random_floored_policy(1, 2, 0.01, &mut rng);
        let rep = check_stationary_to_po(&env, reg, &tc, &pi).unwrap();
        assert!(rep.holds, "{rep:?}");
    }
    // the uniform policy is a symmetric saddle here, so start off it
    let out = near_stationary(&env, reg, 0.01, &Policy::new(1, 2, vec![0.3, 0.7]).unwrap());
    let rep = check_stationary_to_po(&env, reg, &tc, &out).unwrap();
    assert!(rep.holds, "{rep:?}");
    assert!(rep.suboptimality <= 1e-2, "{rep:?}");
}

#[test]
fn grid_search_refuses_large_instances() {
    let reg = RegCoefficient::entropy(0.5).unwrap();
    let env = fixed_env(2, 3, 0.5, 1);
    let c = SensitivityConstants::new(0.0, 0.0, 0.0, 0.0, guaranteed_d_min(env.base())).unwrap();
    let tc = compute_constants(c, env.base(), reg).unwrap();
    let err = check_stationary_to_po(&env, reg, &tc, &Policy::uniform(2, 3));
    assert!(matches!(err, Err(Error::Domain(_))));
}
