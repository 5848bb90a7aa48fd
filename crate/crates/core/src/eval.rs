//! Exact evaluation of regularized value functions.
//!
//! `J(π, π', p, r)` is the discounted return of `π` under `p` with per-step
//! reward `r(s,a) - λ log π'(a|s)`; the performative value of `π` is
//! `J(π, π, p_π, r_π)`.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::PerformativeEnv;
use crate::error::{Error, Result};
use crate::mdp::{
    occupancy_measure, solve_discounted, state_transition_matrix, Policy, RewardTable,
    TabularMdpBase, TransitionKernel,
};
use crate::rng::SeededRng;
use crate::table::ActionTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegKind {
    /// `-λ E[Σ γ^t log π(a_t|s_t)]`
    Entropy,
    /// `-λ ‖d_{π,p_π}‖²` on the occupancy measure.
    Quadratic,
}

/// Regularizer choice and strength λ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegCoefficient {
    pub lambda: f64,
    pub kind: RegKind,
}

impl RegCoefficient {
    pub fn entropy(lambda: f64) -> Result<Self> {
        Self::new(lambda, RegKind::Entropy)
    }

    pub fn quadratic(lambda: f64) -> Result<Self> {
        Self::new(lambda, RegKind::Quadratic)
    }

    pub fn new(lambda: f64, kind: RegKind) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::invalid("regularizer", format!("lambda must be >= 0, got {lambda}")));
        }
        Ok(Self { lambda, kind })
    }

    /// Same kind with λ = 0 (the unregularized value).
    pub fn unregularized(self) -> Self {
        Self {
            lambda: 0.0,
            kind: self.kind,
        }
    }

    pub(crate) fn require_entropy(&self, op: &str) -> Result<()> {
        if self.kind != RegKind::Entropy {
            return Err(Error::Precondition(format!("{op} requires the entropy regularizer")));
        }
        Ok(())
    }
}

/// `J`, `V(·;s)` and `Q(·;s,a)` for one evaluation.
///
/// `q_values` is `+∞` for actions that `pi_log` gives zero mass when λ > 0;
/// those actions carry no weight under the sampling policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueDecomposition {
    pub scalar_value: f64,
    pub state_values: Vec<f64>,
    pub q_values: ActionTable,
}

/// Solves the evaluation system for `π_sample` under `p` with reward `r - λ log π_log`.
pub fn eval_decomposition(
    pi_sample: &Policy,
    pi_log: &Policy,
    p: &TransitionKernel,
    r: &RewardTable,
    base: &TabularMdpBase,
    reg: RegCoefficient,
) -> Result<ValueDecomposition> {
    reg.require_entropy("eval_decomposition")?;
    pi_sample.check_shape(base)?;
    pi_log.check_shape(base)?;
    p.check_shape(base)?;
    r.check_shape(base)?;

    let (n_s, n_a) = (base.n_states(), base.n_actions());
    let mut modified = ActionTable::zeros(n_s, n_a);
    let mut reward_pi = DVector::zeros(n_s);
    for s in 0..n_s {
        for a in 0..n_a {
            let w = pi_sample.prob(s, a);
            let l = pi_log.prob(s, a);
            let m = if reg.lambda == 0.0 {
                r.get(s, a)
            } else if l > 0.0 {
                r.get(s, a) - reg.lambda * l.ln()
            } else if w > 0.0 {
                return Err(Error::Domain(format!(
                    "log of zero: pi_log({a}|{s}) = 0 where the sampling policy has mass {w}"
                )));
            } else {
                f64::INFINITY
            };
            modified.set(s, a, m);
            if w > 0.0 {
                reward_pi[s] += w * m;
            }
        }
    }

    let m = state_transition_matrix(pi_sample, p);
    let v = solve_discounted(&m, base.gamma(), reward_pi)?;
    let state_values: Vec<f64> = v.iter().copied().collect();
    let q_values = ActionTable::from_fn(n_s, n_a, |s, a| {
        let cont: f64 = p
            .next(s, a)
            .iter()
            .zip(&state_values)
            .map(|(q, v)| q * v)
            .sum();
        modified.get(s, a) + base.gamma() * cont
    });
    let scalar_value = base
        .rho()
        .iter()
        .zip(&state_values)
        .map(|(r, v)| r * v)
        .sum();
    Ok(ValueDecomposition {
        scalar_value,
        state_values,
        q_values,
    })
}

/// `V^π_{λ,π}`: the value of `π` deployed in the environment it induces.
pub fn performative_value(env: &PerformativeEnv, pi: &Policy, reg: RegCoefficient) -> Result<f64> {
    let (p, r) = env.dynamics(pi)?;
    match reg.kind {
        RegKind::Entropy => {
            Ok(eval_decomposition(pi, pi, &p, &r, env.base(), reg)?.scalar_value)
        }
        RegKind::Quadratic => {
            let d = occupancy_measure(pi, &p, env.base())?;
            let linear = d.joint.dot(r.table());
            let sq = d.joint.dot(&d.joint);
            Ok(linear - reg.lambda * sq)
        }
    }
}

/// Performative value plus uniform noise on `[-eps_v, eps_v]`.
pub fn noisy_value(
    env: &PerformativeEnv,
    pi: &Policy,
    reg: RegCoefficient,
    eps_v: f64,
    rng: &mut SeededRng,
) -> Result<f64> {
    if !(eps_v >= 0.0) {
        return Err(Error::Precondition(format!("eps_v must be >= 0, got {eps_v}")));
    }
    let v = performative_value(env, pi, reg)?;
    if eps_v == 0.0 {
        return Ok(v);
    }
    Ok(v + rng.random_range(-eps_v..=eps_v))
}

/// Gradient of `J(π, π, p, r)` in `π` for fixed dynamics:
/// `d_{π,p}(s) [Q(s,a) - λ] / (1-γ)`.
pub fn analytic_grad_fixed(
    pi: &Policy,
    p: &TransitionKernel,
    r: &RewardTable,
    base: &TabularMdpBase,
    reg: RegCoefficient,
) -> Result<ActionTable> {
    reg.require_entropy("analytic_grad_fixed")?;
    if reg.lambda > 0.0 && crate::mdp::min_policy_mass(pi) <= 0.0 {
        return Err(Error::Domain(
            "policy has a zero entry; the entropy gradient is unbounded there".into(),
        ));
    }
    let dec = eval_decomposition(pi, pi, p, r, base, reg)?;
    let d = occupancy_measure(pi, p, base)?;
    let scale = 1.0 / (1.0 - base.gamma());
    Ok(ActionTable::from_fn(base.n_states(), base.n_actions(), |s, a| {
        d.marginal[s] * (dec.q_values.get(s, a) - reg.lambda) * scale
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::PerformativeEnv;

    fn single_state(n_actions: usize, gamma: f64) -> TabularMdpBase {
        TabularMdpBase::new(1, n_actions, gamma, vec![1.0]).unwrap()
    }

    #[test]
    fn geometric_series() {
        let base = single_state(1, 0.9);
        let pi = Policy::uniform(1, 1);
        let p = TransitionKernel::uniform(1, 1);
        let r = RewardTable::constant(1, 1, 1.0).unwrap();
        let dec = eval_decomposition(&pi, &pi, &p, &r, &base, RegCoefficient::entropy(0.0).unwrap()).unwrap();
        assert!((dec.scalar_value - 10.0).abs() < 1e-12);
    }

    #[test]
    fn pure_entropy_closed_form() {
        let base = single_state(4, 0.95);
        let pi = Policy::uniform(1, 4);
        let p = TransitionKernel::uniform(1, 4);
        let r = RewardTable::constant(1, 4, 0.0).unwrap();
        let dec = eval_decomposition(&pi, &pi, &p, &r, &base, RegCoefficient::entropy(0.5).unwrap()).unwrap();
        let expected = 0.5 * 4f64.ln() / 0.05;
        assert!((dec.scalar_value - expected).abs() < 1e-10);
        assert!((dec.scalar_value - 13.862944).abs() < 1e-6);
    }

    #[test]
    fn deterministic_policy_has_no_entropy_cost() {
        let base = TabularMdpBase::uniform_start(3, 2, 0.9).unwrap();
        let pi = Policy::deterministic(2, &[0, 1, 1]).unwrap();
        let p = TransitionKernel::uniform(3, 2);
        let r = RewardTable::constant(3, 2, 1.0).unwrap();
        for lambda in [0.0, 0.3, 2.0] {
            let dec = eval_decomposition(&pi, &pi, &p, &r, &base, RegCoefficient::entropy(lambda).unwrap()).unwrap();
            assert!((dec.scalar_value - 10.0).abs() < 1e-10);
        }
    }

    #[test]
    fn log_of_zero_is_a_domain_error() {
        let base = single_state(2, 0.5);
        let sample = Policy::uniform(1, 2);
        let log = Policy::deterministic(2, &[0]).unwrap();
        let p = TransitionKernel::uniform(1, 2);
        let r = RewardTable::constant(1, 2, 0.0).unwrap();
        let err = eval_decomposition(&sample, &log, &p, &r, &base, RegCoefficient::entropy(1.0).unwrap());
        assert!(matches!(err, Err(Error::Domain(_))));
    }

    #[test]
    fn quadratic_single_state_deterministic() {
        let base = single_state(2, 0.9);
        let env = PerformativeEnv::fixed(
            base,
            TransitionKernel::uniform(1, 2),
            RewardTable::constant(1, 2, 0.0).unwrap(),
        )
        .unwrap();
        let pi = Policy::deterministic(2, &[0]).unwrap();
        let v = performative_value(&env, &pi, RegCoefficient::quadratic(1.0).unwrap()).unwrap();
        assert!((v + 1.0).abs() < 1e-12);
    }

    #[test]
    fn dj5_single_state_one_step() {
        let base = single_state(2, 0.0);
        let pi = Policy::uniform(1, 2);
        let p = TransitionKernel::uniform(1, 2);
        let r = RewardTable::new(1, 2, vec![1.0, 0.0]).unwrap();
        let g = analytic_grad_fixed(&pi, &p, &r, &base, RegCoefficient::entropy(1.0).unwrap()).unwrap();
        let ln_half = 0.5f64.ln();
        assert!((g.get(0, 0) - (1.0 - 1.0 - ln_half)).abs() < 1e-12);
        assert!((g.get(0, 1) - (0.0 - 1.0 - ln_half)).abs() < 1e-12);
        assert!((g.get(0, 0) - std::f64::consts::LN_2).abs() < 1e-6);
        assert!((g.get(0, 1) + 0.306853).abs() < 1e-6);

        let g0 = analytic_grad_fixed(&pi, &p, &r, &base, RegCoefficient::entropy(0.0).unwrap()).unwrap();
        assert!((g0.get(0, 0) - 1.0).abs() < 1e-15);
        assert!(g0.get(0, 1).abs() < 1e-15);
    }

    #[test]
    fn zero_entry_gradient_is_a_domain_error() {
        let base = single_state(2, 0.5);
        let pi = Policy::deterministic(2, &[1]).unwrap();
        let p = TransitionKernel::uniform(1, 2);
        let r = RewardTable::constant(1, 2, 0.5).unwrap();
        let err = analytic_grad_fixed(&pi, &p, &r, &base, RegCoefficient::entropy(0.5).unwrap());
        assert!(matches!(err, Err(Error::Domain(_))));
    }

    #[test]
    fn noise_is_bounded_and_seeded() {
        let env = PerformativeEnv::affine_mix(TabularMdpBase::uniform_start(5, 4, 0.95).unwrap());
        let pi = Policy::uniform(5, 4);
        let reg = RegCoefficient::entropy(0.5).unwrap();
        let exact = performative_value(&env, &pi, reg).unwrap();
        let mut rng = crate::rng::seeded(1);
        assert_eq!(noisy_value(&env, &pi, reg, 0.0, &mut rng).unwrap().to_bits(), exact.to_bits());
        let a = noisy_value(&env, &pi, reg, 0.01, &mut crate::rng::seeded(9)).unwrap();
        let b = noisy_value(&env, &pi, reg, 0.01, &mut crate::rng::seeded(9)).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        let mut rng = crate::rng::seeded(2);
        let worst = (0..1000)
            .map(|_| (noisy_value(&env, &pi, reg, 0.01, &mut rng).unwrap() - exact).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 0.01);
    }
}
