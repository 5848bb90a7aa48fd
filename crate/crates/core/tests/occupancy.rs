mod common;

use common::{random_kernel, random_reward, random_rho};
use perfrl_core::{
    eval_decomposition, occupancy_measure, random_policy, seeded, RegCoefficient, TabularMdpBase,
};
use proptest::prelude::*;

fn instance() -> impl Strategy<Value = (usize, usize, f64, u64)> {
    (1usize..=6, 1usize..=5, prop::sample::select(vec![0.5, 0.9, 0.95]), any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn flow_equation_and_unit_mass((n_s, n_a, gamma, seed) in instance()) {
        let mut rng = seeded(seed);
        let base = TabularMdpBase::new(n_s, n_a, gamma, random_rho(n_s, &mut rng)).unwrap();
        let pi = random_policy(n_s, n_a, &mut rng);
        let p = random_kernel(n_s, n_a, &mut rng);
        let d = occupancy_measure(&pi, &p, &base).unwrap();
        prop_assert!(d.flow_residual(&pi, &p, &base) <= 1e-10);
        let mass: f64 = d.joint.as_slice().iter().sum();
        prop_assert!((mass - 1.0).abs() <= 1e-10);
        prop_assert!(d.joint.as_slice().iter().all(|&x| x >= -1e-15));
    }

    #[test]
    fn value_range_and_occupancy_route((n_s, n_a, gamma, seed) in instance(), lambda in 0.0f64..2.0) {
        let mut rng = seeded(seed);
        let base = TabularMdpBase::new(n_s, n_a, gamma, random_rho(n_s, &mut rng)).unwrap();
        let pi = random_policy(n_s, n_a, &mut rng);
        let p = random_kernel(n_s, n_a, &mut rng);
        let r = random_reward(n_s, n_a, &mut rng);
        let reg = RegCoefficient::entropy(lambda).unwrap();
        let j = eval_decomposition(&pi, &pi, &p, &r, &base, reg).unwrap().scalar_value;

        let upper = (1.0 + lambda * (n_a as f64).ln()) / (1.0 - gamma);
        prop_assert!(j >= -1e-12 && j <= upper + 1e-12);

        let d = occupancy_measure(&pi, &p, &base).unwrap();
        let mut via_d = 0.0;
        for s in 0..n_s {
            for a in 0..n_a {
                let x = pi.prob(s, a);
                let ent = if x > 0.0 { -lambda * x.ln() } else { 0.0 };
                via_d += d.joint.get(s, a) * (r.get(s, a) + ent);
            }
        }
        via_d /= 1.0 - gamma;
        prop_assert!((j - via_d).abs() <= 1e-9 * j.abs().max(1.0), "{} vs {}", j, via_d);
    }
}
