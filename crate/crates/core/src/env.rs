//! Performative environments `π ↦ (p_π, r_π)` and empirical sensitivity estimates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{
    occupancy_measure, random_policy, Policy, RewardTable, TabularMdpBase, TransitionKernel,
};
use crate::rng::SeededRng;
use crate::table::ActionTable;

/// Sensitivity `ε_p, ε_r`, smoothness `S_p, S_r` and the visitation floor `D`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityConstants {
    pub eps_p: f64,
    pub eps_r: f64,
    pub s_p: f64,
    pub s_r: f64,
    pub d_min: f64,
}

impl SensitivityConstants {
    pub fn new(eps_p: f64, eps_r: f64, s_p: f64, s_r: f64, d_min: f64) -> Result<Self> {
        let c = Self {
            eps_p,
            eps_r,
            s_p,
            s_r,
            d_min,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eps_p", self.eps_p),
            ("eps_r", self.eps_r),
            ("s_p", self.s_p),
            ("s_r", self.s_r),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid("sensitivity constants", format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.d_min > 0.0 && self.d_min <= 1.0) {
            return Err(Error::invalid(
                "sensitivity constants",
                format!("d_min must lie in (0,1], got {}", self.d_min),
            ));
        }
        Ok(())
    }
}

/// How the environment responds to the deployed policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DynamicsRule {
    /// Policy-independent `(p, r)`.
    Fixed { p: TransitionKernel, r: RewardTable },
    /// `p_π(s'|s,a) ∝ π(a|s) + π(a|s') + 1`, `r_π(s,a) = π(a|s)`.
    AffineMix,
    /// `(1-κ)(p₀, r₀) + κ·(affine-mix response)`; κ dials the sensitivity.
    Interpolated {
        kappa: f64,
        p0: TransitionKernel,
        r0: RewardTable,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformativeEnv {
    base: TabularMdpBase,
    rule: DynamicsRule,
    declared: Option<SensitivityConstants>,
}

impl PerformativeEnv {
    pub fn new(base: TabularMdpBase, rule: DynamicsRule) -> Result<Self> {
        match &rule {
            DynamicsRule::Fixed { p, r } => {
                p.check_shape(&base)?;
                r.check_shape(&base)?;
            }
            DynamicsRule::AffineMix => {}
            DynamicsRule::Interpolated { kappa, p0, r0 } => {
                if !(0.0..=1.0).contains(kappa) {
                    return Err(Error::invalid("environment", format!("kappa must lie in [0,1], got {kappa}")));
                }
                p0.check_shape(&base)?;
                r0.check_shape(&base)?;
            }
        }
        Ok(Self {
            base,
            rule,
            declared: None,
        })
    }

    pub fn fixed(base: TabularMdpBase, p: TransitionKernel, r: RewardTable) -> Result<Self> {
        Self::new(base, DynamicsRule::Fixed { p, r })
    }

    /// The policy-dependent environment used in the reference experiment.
    pub fn affine_mix(base: TabularMdpBase) -> Self {
        Self {
            base,
            rule: DynamicsRule::AffineMix,
            declared: None,
        }
    }

    pub fn interpolated(
        base: TabularMdpBase,
        kappa: f64,
        p0: TransitionKernel,
        r0: RewardTable,
    ) -> Result<Self> {
        Self::new(base, DynamicsRule::Interpolated { kappa, p0, r0 })
    }

    pub fn with_declared(mut self, consts: SensitivityConstants) -> Result<Self> {
        consts.validate()?;
        self.declared = Some(consts);
        Ok(self)
    }

    pub fn base(&self) -> &TabularMdpBase {
        &self.base
    }

    pub fn rule(&self) -> &DynamicsRule {
        &self.rule
    }

    pub fn declared(&self) -> Option<&SensitivityConstants> {
        self.declared.as_ref()
    }

    /// The MDP `(p_π, r_π)` induced by deploying `pi`.
    pub fn dynamics(&self, pi: &Policy) -> Result<(TransitionKernel, RewardTable)> {
        pi.check_shape(&self.base)?;
        match &self.rule {
            DynamicsRule::Fixed { p, r } => Ok((p.clone(), r.clone())),
            DynamicsRule::AffineMix => Ok((affine_mix_kernel(pi)?, policy_reward(pi)?)),
            DynamicsRule::Interpolated { kappa, p0, r0 } => {
                let k = *kappa;
                let mix = affine_mix_kernel(pi)?;
                let probs = p0
                    .as_slice()
                    .iter()
                    .zip(mix.as_slice())
                    .map(|(a, b)| (1.0 - k) * a + k * b)
                    .collect();
                let p = TransitionKernel::new(pi.n_states(), pi.n_actions(), probs)?;
                let r = ActionTable::from_fn(pi.n_states(), pi.n_actions(), |s, a| {
                    ((1.0 - k) * r0.get(s, a) + k * pi.prob(s, a)).clamp(0.0, 1.0)
                });
                Ok((p, RewardTable::from_table(r)?))
            }
        }
    }
}

/// Safety factor applied to sampled sensitivity estimates, which are lower bounds.
pub const ESTIMATE_SAFETY: f64 = 2.0;

impl PerformativeEnv {
    /// Constants for the theory module: the declared ones if present, otherwise
    /// values derived from the rule.
    ///
    /// Fixed dynamics have zero shift. The reward response is linear in `π`, so
    /// `ε_r` is exact (1 for the mix rule, κ when interpolated) and `S_r = 0`.
    /// The transition sensitivity is sampled over `n_pairs` pairs and inflated by
    /// [`ESTIMATE_SAFETY`]; `S_p` is taken as 0. `D` is [`guaranteed_d_min`].
    pub fn default_constants(&self, n_pairs: usize, rng: &mut SeededRng) -> Result<SensitivityConstants> {
        if let Some(c) = self.declared {
            return Ok(c);
        }
        let d = guaranteed_d_min(&self.base);
        let mix_eps_p = |rng: &mut SeededRng| -> Result<f64> {
            let mix = PerformativeEnv::affine_mix(self.base.clone());
            Ok(ESTIMATE_SAFETY * estimate_sensitivity(&mix, n_pairs, rng)?.eps_p)
        };
        match &self.rule {
            DynamicsRule::Fixed { .. } => SensitivityConstants::new(0.0, 0.0, 0.0, 0.0, d),
            DynamicsRule::AffineMix => SensitivityConstants::new(mix_eps_p(rng)?, 1.0, 0.0, 0.0, d),
            DynamicsRule::Interpolated { kappa, .. } => {
                SensitivityConstants::new(kappa * mix_eps_p(rng)?, *kappa, 0.0, 0.0, d)
            }
        }
    }
}

fn affine_mix_kernel(pi: &Policy) -> Result<TransitionKernel> {
    let (n_s, n_a) = (pi.n_states(), pi.n_actions());
    let mut probs = Vec::with_capacity(n_s * n_a * n_s);
    for s in 0..n_s {
        for a in 0..n_a {
            let start = probs.len();
            let x = pi.prob(s, a);
            probs.extend((0..n_s).map(|next| x + pi.prob(next, a) + 1.0));
            let total: f64 = probs[start..].iter().sum();
            probs[start..].iter_mut().for_each(|q| *q /= total);
        }
    }
    TransitionKernel::new(n_s, n_a, probs)
}

fn policy_reward(pi: &Policy) -> Result<RewardTable> {
    RewardTable::from_table(pi.table().clone())
}

/// Lower bounds on `ε_p`, `ε_r` from sampled policy pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityEstimate {
    pub eps_p: f64,
    pub eps_r: f64,
}

/// Largest observed `‖p_{π'} - p_π‖ / ‖π' - π‖` (and the same for `r`) over `n_pairs`
/// random policy pairs.
///
/// Pairs are drawn sequentially from `rng`, so with a fixed seed the estimate is
/// non-decreasing in `n_pairs`.
pub fn estimate_sensitivity(
    env: &PerformativeEnv,
    n_pairs: usize,
    rng: &mut SeededRng,
) -> Result<SensitivityEstimate> {
    if n_pairs == 0 {
        return Err(Error::Precondition("n_pairs must be >= 1".into()));
    }
    let (n_s, n_a) = (env.base.n_states(), env.base.n_actions());
    let mut est = SensitivityEstimate {
        eps_p: 0.0,
        eps_r: 0.0,
    };
    let mut done = 0;
    while done < n_pairs {
        let pi = random_policy(n_s, n_a, rng);
        let pi2 = random_policy(n_s, n_a, rng);
        let dist = pi2.table().sub(pi.table()).norm();
        if dist < 1e-12 {
            continue;
        }
        let (p, r) = env.dynamics(&pi)?;
        let (p2, r2) = env.dynamics(&pi2)?;
        est.eps_p = est.eps_p.max(p2.distance(&p) / dist);
        est.eps_r = est.eps_r.max(r2.table().sub(r.table()).norm() / dist);
        done += 1;
    }
    Ok(est)
}

/// `min_s d_{π,p_π}(s)` over `n_samples` random policies.
///
/// This is an upper bound on the true visitation floor and serves only as a
/// practical stand-in for it.
pub fn estimate_d_min(env: &PerformativeEnv, n_samples: usize, rng: &mut SeededRng) -> Result<f64> {
    if n_samples == 0 {
        return Err(Error::Precondition("n_samples must be >= 1".into()));
    }
    let (n_s, n_a) = (env.base.n_states(), env.base.n_actions());
    let mut best = f64::INFINITY;
    for _ in 0..n_samples {
        let pi = random_policy(n_s, n_a, rng);
        let (p, _) = env.dynamics(&pi)?;
        let d = occupancy_measure(&pi, &p, &env.base)?;
        best = d.marginal.iter().copied().fold(best, f64::min);
    }
    Ok(best)
}

/// `(1-γ)·min_s ρ(s)`: a visitation floor valid for every policy and every kernel.
pub fn guaranteed_d_min(base: &TabularMdpBase) -> f64 {
    (1.0 - base.gamma()) * base.rho().iter().copied().fold(f64::INFINITY, f64::min)
}
