//! Zeroth-order Frank-Wolfe over the floored policy set, stationarity gaps,
//! and the repeated-retraining baseline.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::env::PerformativeEnv;
use crate::error::{Error, Result};
use crate::eval::{analytic_grad_fixed, eval_decomposition, performative_value, RegCoefficient};
use crate::grad::{fd_performative_gradient, zo_gradient_with, GradEstimate, SamplingScheme};
use crate::mdp::{min_policy_mass, Policy, TabularMdpBase};
use crate::rng::seeded;
use crate::table::{argmax_first, ActionTable};

/// Iterates may undershoot the floor by at most this much before a run aborts.
pub const FLOOR_SLACK: f64 = 1e-9;

/// Hyperparameters of one zeroth-order Frank-Wolfe run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FwConfig {
    /// Number of iterations `T`.
    pub iterations: usize,
    /// Directions per gradient estimate `N`.
    pub batch: usize,
    /// Policy floor `Δ`.
    pub floor: f64,
    /// Probe radius `δ`.
    pub probe: f64,
    /// Step size `β`.
    pub step: f64,
    /// Evaluation noise bound `ε_V`.
    pub eval_noise: f64,
    pub seed: u64,
    #[serde(default)]
    pub sampling: SamplingScheme,
    /// Also record the finite-difference gap on Π at every iterate (diagnostic, costly).
    #[serde(default)]
    pub oracle_gap: bool,
}

impl FwConfig {
    pub fn validate(&self, n_actions: usize) -> Result<()> {
        let bad = |reason: String| Err(Error::invalid("frank-wolfe config", reason));
        if self.iterations == 0 {
            return bad("iterations must be >= 1".into());
        }
        if self.batch == 0 {
            return bad("batch must be >= 1".into());
        }
        if !(self.probe > 0.0) {
            return bad(format!("probe must be > 0, got {}", self.probe));
        }
        if !(self.probe < self.floor) {
            return bad(format!("probe {} must be below floor {}", self.probe, self.floor));
        }
        if self.floor > 1.0 / n_actions as f64 {
            return bad(format!("floor {} exceeds 1/|A| = {}", self.floor, 1.0 / n_actions as f64));
        }
        if !(0.0..=1.0).contains(&self.step) {
            return bad(format!("step must lie in [0,1], got {}", self.step));
        }
        if !(self.eval_noise >= 0.0) {
            return bad(format!("eval_noise must be >= 0, got {}", self.eval_noise));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: usize,
    pub v_reg: f64,
    pub v_unreg: f64,
    pub fw_gap: f64,
    pub min_mass: f64,
    pub elapsed_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub trace: Vec<IterationRecord>,
    pub output_index: usize,
    pub output_policy: Policy,
    /// The iterate left after the last update.
    pub final_policy: Policy,
}

/// Linear maximization over Π_floor: per state, the (first) largest-gradient
/// action gets `1 - floor(|A|-1)`, every other action gets `floor`.
pub fn lmo(g: &ActionTable, floor: f64, base: &TabularMdpBase) -> Result<Policy> {
    let n_a = base.n_actions();
    if !(floor >= 0.0 && floor <= 1.0 / n_a as f64) {
        return Err(Error::Precondition(format!("floor {floor} must lie in [0, 1/|A|]")));
    }
    if g.n_states() != base.n_states() || g.n_actions() != n_a {
        return Err(Error::invalid("gradient", "shape does not match the MDP"));
    }
    let top = 1.0 - floor * (n_a - 1) as f64;
    let mut t = ActionTable::zeros(base.n_states(), n_a);
    for s in 0..base.n_states() {
        let best = argmax_first(g.row(s));
        t.row_mut(s)
            .iter_mut()
            .enumerate()
            .for_each(|(a, x)| *x = if a == best { top } else { floor });
    }
    Policy::from_table(t)
}

/// `pi + step·(target - pi)`
pub fn fw_step(pi: &Policy, target: &Policy, step: f64) -> Result<Policy> {
    if !(0.0..=1.0).contains(&step) {
        return Err(Error::Precondition(format!("step must lie in [0,1], got {step}")));
    }
    if pi.n_states() != target.n_states() || pi.n_actions() != target.n_actions() {
        return Err(Error::invalid("policy", "shapes differ"));
    }
    let mut t = pi.table().clone();
    t.axpy(step, &target.table().sub(pi.table()));
    Policy::from_table(t)
}

/// Domain over which a stationarity gap is maximized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapDomain {
    /// All of Π.
    Full,
    /// Π_floor.
    Floored(f64),
}

pub enum GradSource<'a> {
    /// Central finite differences with step `h`.
    Oracle { h: f64 },
    Estimate(&'a GradEstimate),
}

/// `max_{π̃ ∈ domain} ⟨g, π̃ - π⟩` for a given gradient table.
pub fn gap_from_gradient(g: &ActionTable, pi: &Policy, domain: GapDomain) -> Result<f64> {
    match domain {
        GapDomain::Full => Ok((0..pi.n_states())
            .map(|s| {
                let row = g.row(s);
                let best = row[argmax_first(row)];
                let mean: f64 = row.iter().zip(pi.row(s)).map(|(x, p)| x * p).sum();
                best - mean
            })
            .sum()),
        GapDomain::Floored(floor) => {
            let base = TabularMdpBase::uniform_start(pi.n_states(), pi.n_actions(), 0.5)?;
            let target = lmo(g, floor, &base)?;
            Ok(g.dot(&target.table().sub(pi.table())))
        }
    }
}

/// Default finite-difference step for oracle gradients at `pi`.
pub fn oracle_step(pi: &Policy) -> f64 {
    (0.5 * min_policy_mass(pi)).min(1e-5)
}

pub fn stationarity_gap(
    env: &PerformativeEnv,
    pi: &Policy,
    reg: RegCoefficient,
    domain: GapDomain,
    source: GradSource<'_>,
) -> Result<f64> {
    if let GapDomain::Floored(floor) = domain {
        if min_policy_mass(pi) < floor - FLOOR_SLACK {
            return Err(Error::Precondition(format!("policy is not in Π_{floor}")));
        }
    }
    match source {
        GradSource::Oracle { h } => {
            let g = fd_performative_gradient(env, pi, reg, h)?;
            gap_from_gradient(&g.g, pi, domain)
        }
        GradSource::Estimate(g) => gap_from_gradient(&g.g, pi, domain),
    }
}

/// Runs `cfg.iterations` rounds of estimate → linear maximization → convex step and
/// returns the iterate with the smallest estimated gap (earliest on ties).
pub fn run_zfw(
    env: &PerformativeEnv,
    reg: RegCoefficient,
    cfg: &FwConfig,
    init: &Policy,
) -> Result<RunResult> {
    let base = env.base();
    cfg.validate(base.n_actions())?;
    init.check_shape(base)?;
    if min_policy_mass(init) < cfg.floor - 1e-12 {
        return Err(Error::Precondition(format!(
            "initial policy has mass {} below the floor {}",
            min_policy_mass(init),
            cfg.floor
        )));
    }

    let mut rng = seeded(cfg.seed);
    let mut pi = init.clone();
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut best: Option<(usize, f64, Policy)> = None;
    let unreg = reg.unregularized();

    for t in 0..cfg.iterations {
        let started = Instant::now();
        let g = zo_gradient_with(env, &pi, reg, cfg.probe, cfg.batch, cfg.eval_noise, cfg.sampling, &mut rng)?;
        let target = lmo(&g.g, cfg.floor, base)?;
        let fw_gap = g.g.dot(&target.table().sub(pi.table()));
        let v_reg = performative_value(env, &pi, reg)?;
        let v_unreg = performative_value(env, &pi, unreg)?;
        let oracle_gap = if cfg.oracle_gap {
            Some(stationarity_gap(env, &pi, reg, GapDomain::Full, GradSource::Oracle { h: oracle_step(&pi) })?)
        } else {
            None
        };
        let min_mass = min_policy_mass(&pi);

        if best.as_ref().is_none_or(|(_, gap, _)| fw_gap < *gap) {
            best = Some((t, fw_gap, pi.clone()));
        }

        let next = fw_step(&pi, &target, cfg.step)?;
        let next_mass = min_policy_mass(&next);
        if next_mass < cfg.floor - FLOOR_SLACK {
            return Err(Error::Internal(format!(
                "iterate {} left the floored set: min mass {next_mass} < {}",
                t + 1,
                cfg.floor
            )));
        }
        pi = next;

        trace.push(IterationRecord {
            t,
            v_reg,
            v_unreg,
            fw_gap,
            min_mass,
            elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
            oracle_gap,
        });
    }

    let (output_index, _, output_policy) = best.expect("at least one iteration");
    Ok(RunResult {
        trace,
        output_index,
        output_policy,
        final_policy: pi,
    })
}

/// Multiplicative entropy-regularized natural policy gradient on a frozen MDP:
/// `π'(a|s) ∝ π(a|s)^{1-ηλ/(1-γ)} exp(η Q(s,a)/(1-γ))` with the soft
/// `Q(s,a) = r(s,a) + γ Σ p(s'|s,a) V(s')`. Its fixed point is the regularized optimum.
pub fn npg_solve(
    init: &Policy,
    p: &crate::mdp::TransitionKernel,
    r: &crate::mdp::RewardTable,
    base: &TabularMdpBase,
    reg: RegCoefficient,
    iters: usize,
    step: f64,
) -> Result<Policy> {
    reg.require_entropy("npg_solve")?;
    let horizon = 1.0 / (1.0 - base.gamma());
    let keep = 1.0 - step * reg.lambda * horizon;
    if !(step > 0.0) {
        return Err(Error::invalid("retraining config", format!("inner step must be > 0, got {step}")));
    }
    if keep <= 0.0 {
        return Err(Error::invalid(
            "retraining config",
            format!("inner_step·λ/(1-γ) = {} must be < 1", 1.0 - keep),
        ));
    }
    let mut pi = init.clone();
    for _ in 0..iters {
        let q = eval_decomposition(&pi, &pi, p, r, base, reg)?.q_values;
        let mut t = ActionTable::zeros(base.n_states(), base.n_actions());
        for s in 0..base.n_states() {
            let row = t.row_mut(s);
            for (a, x) in row.iter_mut().enumerate() {
                let log_pi = pi.prob(s, a).ln();
                // soft Q: the evaluated Q carries the -λ log π(a|s) bonus, which the
                // multiplicative update already applies through `keep`
                let soft_q = q.get(s, a) + reg.lambda * log_pi;
                *x = keep * log_pi + step * horizon * soft_q;
            }
            let top = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.iter_mut().for_each(|x| *x = (*x - top).exp());
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= total);
        }
        pi = Policy::from_table(t)?;
    }
    Ok(pi)
}

/// Repeated retraining: freeze `(p_{π_t}, r_{π_t})`, solve the frozen MDP with
/// `inner_iters` NPG steps, deploy the result.
///
/// The trace has `outer_iters + 1` records (`π_0 … π_{outer}`); `fw_gap` holds the
/// full-domain gap of the frozen-dynamics gradient, which vanishes at a stable
/// point. The output is the last iterate.
pub fn repeated_retraining(
    env: &PerformativeEnv,
    reg: RegCoefficient,
    outer_iters: usize,
    inner_iters: usize,
    inner_step: f64,
    init: &Policy,
) -> Result<RunResult> {
    reg.require_entropy("repeated_retraining")?;
    let base = env.base();
    init.check_shape(base)?;
    if min_policy_mass(init) <= 0.0 {
        return Err(Error::Precondition("retraining needs a strictly positive initial policy".into()));
    }
    if inner_step * reg.lambda / (1.0 - base.gamma()) >= 1.0 {
        return Err(Error::invalid(
            "retraining config",
            "inner_step·λ/(1-γ) must be < 1".to_string(),
        ));
    }
    let unreg = reg.unregularized();
    let mut pi = init.clone();
    let mut trace = Vec::with_capacity(outer_iters + 1);
    let mut started = Instant::now();
    for t in 0..=outer_iters {
        let (p, r) = env.dynamics(&pi)?;
        let frozen_grad = analytic_grad_fixed(&pi, &p, &r, base, reg)?;
        trace.push(IterationRecord {
            t,
            v_reg: performative_value(env, &pi, reg)?,
            v_unreg: performative_value(env, &pi, unreg)?,
            fw_gap: gap_from_gradient(&frozen_grad, &pi, GapDomain::Full)?,
            min_mass: min_policy_mass(&pi),
            elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
            oracle_gap: None,
        });
        if t == outer_iters {
            break;
        }
        started = Instant::now();
        pi = npg_solve(&pi, &p, &r, base, reg, inner_iters, inner_step)?;
    }
    Ok(RunResult {
        output_index: outer_iters,
        output_policy: pi.clone(),
        final_policy: pi,
        trace,
    })
}
