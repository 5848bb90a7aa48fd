#![allow(dead_code)]

use perfrl_core::{
    random_policy, Policy, RewardTable, SeededRng, TabularMdpBase, TransitionKernel,
};
use rand::Rng;

pub fn random_kernel(n_s: usize, n_a: usize, rng: &mut SeededRng) -> TransitionKernel {
    let rows = random_policy(n_s * n_a, n_s, rng).into_table().into_vec();
    TransitionKernel::new(n_s, n_a, rows).unwrap()
}

pub fn random_reward(n_s: usize, n_a: usize, rng: &mut SeededRng) -> RewardTable {
    RewardTable::new(n_s, n_a, (0..n_s * n_a).map(|_| rng.random::<f64>()).collect()).unwrap()
}

pub fn random_rho(n_s: usize, rng: &mut SeededRng) -> Vec<f64> {
    random_policy(1, n_s, rng).into_table().into_vec()
}

/// Soft-optimal policy of a fixed MDP by value iteration on
/// `V(s) = λ log Σ_a exp((r(s,a) + γ Σ p V)/λ)`.
pub fn soft_optimal_policy(
    p: &TransitionKernel,
    r: &RewardTable,
    base: &TabularMdpBase,
    lambda: f64,
    sweeps: usize,
) -> Policy {
    let (n_s, n_a, g) = (base.n_states(), base.n_actions(), base.gamma());
    let q_of = |v: &[f64]| -> Vec<f64> {
        let mut q = vec![0.0; n_s * n_a];
        for s in 0..n_s {
            for a in 0..n_a {
                let next: f64 = p.next(s, a).iter().zip(v).map(|(x, y)| x * y).sum();
                q[s * n_a + a] = r.get(s, a) + g * next;
            }
        }
        q
    };
    let mut v = vec![0.0; n_s];
    for _ in 0..sweeps {
        let q = q_of(&v);
        for s in 0..n_s {
            let row = &q[s * n_a..(s + 1) * n_a];
            let top = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            v[s] = top + lambda * row.iter().map(|x| ((x - top) / lambda).exp()).sum::<f64>().ln();
        }
    }
    let q = q_of(&v);
    let mut probs = vec![0.0; n_s * n_a];
    for s in 0..n_s {
        let row = &q[s * n_a..(s + 1) * n_a];
        let top = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = row.iter().map(|x| ((x - top) / lambda).exp()).collect();
        let total: f64 = w.iter().sum();
        for a in 0..n_a {
            probs[s * n_a + a] = w[a] / total;
        }
    }
    Policy::new(n_s, n_a, probs).unwrap()
}
