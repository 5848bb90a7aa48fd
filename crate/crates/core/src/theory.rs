//! Closed-form constants from the convergence analysis and numerical checks of
//! the inequalities they enter.
//!
//! Every checker uses finite-difference gradients; the inequalities are stated
//! for exact gradients, so stochastic estimates would only blur them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{PerformativeEnv, SensitivityConstants};
use crate::error::{Error, Result};
use crate::eval::{performative_value, RegCoefficient};
use crate::grad::fd_performative_gradient;
use crate::mdp::{min_policy_mass, random_floored_policy, Policy, TabularMdpBase};
use crate::optim::{gap_from_gradient, oracle_step, FwConfig, GapDomain};
use crate::rng::{SeededRng, StreamKey};
use crate::table::{argmax_first, argmin_first, ActionTable};

/// Slack for the gradient-dominance inequality.
pub const DOMINANCE_TOL: f64 = 1e-8;
/// Slack for the policy lower bound.
pub const LOWER_BOUND_TOL: f64 = 1e-9;
/// Slack for the floored-versus-full gap comparison.
pub const GAP_RATIO_TOL: f64 = 1e-10;
/// Slack for the grid-search optimality comparison. Covers the fd gradient error
/// and the refinement stopping radius.
pub const GRID_TOL: f64 = 1e-6;
/// Largest number of free coordinates the grid search accepts.
pub const GRID_MAX_DIM: usize = 3;
/// Floor of the policy set sampled by the gradient-dominance check.
pub const DOMINANCE_SAMPLE_FLOOR: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    /// Gradient-dominance modulus, `mu1 - mu2`.
    pub mu: f64,
    pub mu1: f64,
    pub mu2: f64,
    /// Lower bound on action probabilities at stationary points. `None` when λ = 0;
    /// may underflow to 0, in which case `log_pi_min` is still finite.
    pub pi_min: Option<f64>,
    pub log_pi_min: Option<f64>,
    /// Lipschitz constant of the value on Π_Δ.
    pub l_lambda: f64,
    /// Lipschitz constant of its gradient on Π_Δ.
    pub ell_lambda: f64,
    pub l_pi: f64,
    pub l_p: f64,
    pub ell_pi: f64,
    pub ell_p: f64,
    /// Occupancy floor `D` the constants were computed with.
    pub d_min: f64,
}

struct Dims {
    s: f64,
    a: f64,
    gamma: f64,
    lambda: f64,
    /// `1 + λ log|A|`
    ent: f64,
}

impl Dims {
    fn new(base: &TabularMdpBase, reg: RegCoefficient) -> Self {
        let a = base.n_actions() as f64;
        Dims {
            s: base.n_states() as f64,
            a,
            gamma: base.gamma(),
            lambda: reg.lambda,
            ent: 1.0 + reg.lambda * a.ln(),
        }
    }
}

/// Shift-free part of the modulus minus the transition-shift penalty.
fn mu_transition(c: &SensitivityConstants, x: &Dims) -> f64 {
    let d = c.d_min;
    let om = 1.0 - x.gamma;
    d * x.lambda / om
        - 6.0 * x.gamma * x.s * x.ent / (d * om.powi(3))
            * (c.eps_p * (x.a.sqrt() + x.gamma * c.eps_p * x.s.sqrt()) + c.s_p * om)
}

fn mu_reward(c: &SensitivityConstants, x: &Dims) -> f64 {
    let om = 1.0 - x.gamma;
    (4.0 * c.eps_r * (x.a.sqrt() + c.eps_p * x.s.sqrt()) + c.s_r * om) / (c.d_min.powi(2) * om.powi(2))
}

/// The modulus written as one expression rather than as `mu1 - mu2`.
pub fn mu_direct(consts: &SensitivityConstants, base: &TabularMdpBase, reg: RegCoefficient) -> f64 {
    let (s, a, g, l) = (
        base.n_states() as f64,
        base.n_actions() as f64,
        base.gamma(),
        reg.lambda,
    );
    let c = consts;
    let d = c.d_min;
    d * l / (1.0 - g)
        - 6.0 * g * s * (1.0 + l * a.ln()) / (d * (1.0 - g).powi(3))
            * (c.eps_p * (a.sqrt() + g * c.eps_p * s.sqrt()) + c.s_p * (1.0 - g))
        - (c.s_r * (1.0 - g) + 4.0 * c.eps_r * (a.sqrt() + c.eps_p * s.sqrt())) / (d * d * (1.0 - g).powi(2))
}

fn log_pi_min(c: &SensitivityConstants, x: &Dims) -> f64 {
    let om = 1.0 - x.gamma;
    let shift = c.eps_p * x.s.sqrt() * x.ent / om + c.eps_r;
    -(2.0f64).ln() - x.a.ln() / om - 1.0 / (x.lambda * om) - 2.0 * x.a * (2.0 * x.s).sqrt() / x.lambda * shift
}

pub fn compute_constants(
    consts: SensitivityConstants,
    base: &TabularMdpBase,
    reg: RegCoefficient,
) -> Result<TheoryConstants> {
    reg.require_entropy("compute_constants")?;
    consts.validate()?;
    let x = Dims::new(base, reg);
    let c = &consts;
    let om = 1.0 - x.gamma;
    let (sa, ss) = (x.a.sqrt(), x.s.sqrt());
    let la = x.lambda * x.a.ln();

    let mu1 = mu_transition(c, &x);
    let mu2 = mu_reward(c, &x);

    let l_lambda = (sa * (2.0 - x.gamma + x.gamma * la) + c.eps_p * ss * x.ent) / om.powi(2) + c.eps_r / om;
    let ell_lambda = 3.0 * x.a * x.ent / om.powi(2)
        + c.eps_p * (x.s * x.a).sqrt() * (5.0 + 6.0 * la) / om.powi(3)
        + c.eps_r * (sa * om + ss * (x.gamma + 2.0 * c.eps_p)) / (x.a * om.powi(2))
        + (c.s_p * ss * x.ent + c.s_r * om) / (x.a * om.powi(2));

    let log_pm = (x.lambda > 0.0).then(|| log_pi_min(c, &x));

    Ok(TheoryConstants {
        mu: mu1 - mu2,
        mu1,
        mu2,
        pi_min: log_pm.map(f64::exp),
        log_pi_min: log_pm,
        l_lambda,
        ell_lambda,
        l_pi: sa * (2.0 - x.gamma + x.gamma * la) / om.powi(2),
        l_p: ss * x.ent / om.powi(2),
        ell_pi: (x.s * x.a).sqrt() * (2.0 + 3.0 * x.gamma * la) / om.powi(3),
        ell_p: 2.0 * x.gamma * x.s * x.ent / om.powi(3),
        d_min: c.d_min,
    })
}

impl TheoryConstants {
    pub fn require_pi_min(&self) -> Result<(f64, f64)> {
        match (self.pi_min, self.log_pi_min) {
            (Some(p), Some(l)) => Ok((p, l)),
            _ => Err(Error::Domain("π_min is undefined for λ = 0".into())),
        }
    }
}

/// Largest admissible target accuracy: the minimum of three terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsCeiling {
    /// From bounding the probe radius.
    pub probe_term: f64,
    /// From the floored/full gap comparison.
    pub gap_term: f64,
    /// From the batch-size bound.
    pub batch_term: f64,
}

impl EpsCeiling {
    pub fn value(&self) -> f64 {
        self.probe_term.min(self.gap_term).min(self.batch_term)
    }

    pub fn binding(&self) -> &'static str {
        let v = self.value();
        if v == self.probe_term {
            "probe radius bound"
        } else if v == self.gap_term {
            "floored/full gap comparison"
        } else {
            "batch size bound"
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheorySchedule {
    pub floor: f64,
    pub step: f64,
    pub iterations: u64,
    pub probe: f64,
    pub eval_noise: f64,
    pub batch: u64,
    pub target_eps: f64,
    pub fail_prob: f64,
    pub ceiling: EpsCeiling,
}

impl TheorySchedule {
    /// Converts to a runnable config. Fails if a count does not fit in `usize`.
    pub fn to_fw_config(&self, seed: u64) -> Result<FwConfig> {
        let iterations = usize::try_from(self.iterations)
            .map_err(|_| Error::Domain(format!("iteration count {} does not fit in usize", self.iterations)))?;
        let batch = usize::try_from(self.batch)
            .map_err(|_| Error::Domain(format!("batch size {} does not fit in usize", self.batch)))?;
        Ok(FwConfig {
            iterations,
            batch,
            floor: self.floor,
            probe: self.probe,
            step: self.step,
            eval_noise: self.eval_noise,
            seed,
            sampling: Default::default(),
            oracle_gap: false,
        })
    }
}

pub fn eps_ceiling(tc: &TheoryConstants, base: &TabularMdpBase, reg: RegCoefficient) -> Result<EpsCeiling> {
    let (pi_min, _) = tc.require_pi_min()?;
    let (s, a, g) = (base.n_states() as f64, base.n_actions() as f64, base.gamma());
    let d = tc.d_min;
    Ok(EpsCeiling {
        probe_term: 24.0 * (2.0 * s).sqrt() * tc.ell_lambda / d,
        gap_term: 2.0 * reg.lambda / (5.0 * a * d * d * (1.0 - g)),
        batch_term: 288.0 * tc.l_lambda * s.powf(1.5) * a / (d * pi_min),
    })
}

fn ceil_count(x: f64, what: &str) -> Result<u64> {
    let c = x.ceil();
    if !c.is_finite() || c >= u64::MAX as f64 {
        return Err(Error::Domain(format!("{what} {x:e} is not representable")));
    }
    Ok((c as u64).max(1))
}

pub fn theory_hyperparams(
    tc: &TheoryConstants,
    consts: &SensitivityConstants,
    base: &TabularMdpBase,
    reg: RegCoefficient,
    target_eps: f64,
    fail_prob: f64,
) -> Result<TheorySchedule> {
    if !(fail_prob > 0.0 && fail_prob < 1.0) {
        return Err(Error::invalid("fail_prob", format!("must lie in (0,1), got {fail_prob}")));
    }
    if !(target_eps > 0.0) {
        return Err(Error::invalid("target_eps", format!("must be > 0, got {target_eps}")));
    }
    let (pi_min, _) = tc.require_pi_min()?;
    if !(pi_min > 0.0) {
        return Err(Error::Domain(format!(
            "π_min underflows (log π_min = {:.6e}); no finite schedule exists",
            tc.log_pi_min.unwrap_or(f64::NEG_INFINITY)
        )));
    }
    let ceiling = eps_ceiling(tc, base, reg)?;
    if target_eps > ceiling.value() {
        return Err(Error::Domain(format!(
            "target_eps {target_eps} exceeds the admissible ceiling {} set by the {}",
            ceiling.value(),
            ceiling.binding()
        )));
    }

    let (s, a, g) = (base.n_states() as f64, base.n_actions() as f64, base.gamma());
    let x = Dims::new(base, reg);
    let d = consts.d_min;
    let (ell, big_l, eps, eta) = (tc.ell_lambda, tc.l_lambda, target_eps, fail_prob);

    let floor = pi_min / 3.0;
    let step = d * pi_min * eps / (36.0 * ell * s);
    let iterations = ceil_count(
        432.0 * ell * s * x.ent / (pi_min * d * d * (1.0 - g) * eps * eps),
        "iteration count",
    )?;
    let probe = d * pi_min * eps / (144.0 * (2.0 * s).sqrt() * ell);
    let eval_noise = pi_min * d * d * eps * eps / (13824.0 * ell * s * s * a);

    let core = big_l * big_l * s.powi(3) * a * a / (d * d * pi_min * pi_min * eps * eps);
    let other = 1296.0 * ell * s * s * a * x.ent / (d * d * eta * pi_min * (1.0 - g) * eps * eps);
    let batch = ceil_count(
        663552.0 * core * (165888.0 * core).max(other).ln() + 2.0 * (3.0 * s * a / eta).ln() + 3.0,
        "batch size",
    )?;

    let sched = TheorySchedule {
        floor,
        step,
        iterations,
        probe,
        eval_noise,
        batch,
        target_eps,
        fail_prob,
        ceiling,
    };
    if !(probe < floor) || !(step <= 1.0) {
        return Err(Error::Internal(format!("schedule violates run invariants: {sched:?}")));
    }
    Ok(sched)
}

/// Outcome of a sampled inequality check. `worst_excess` is the largest
/// `lhs - rhs` seen before slack; a case counts as a violation when it exceeds `tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub check: String,
    pub cases: usize,
    pub violations: usize,
    pub worst_excess: f64,
    pub tolerance: f64,
}

impl ViolationReport {
    fn from_excesses(check: &str, excesses: &[f64], tolerance: f64) -> Self {
        ViolationReport {
            check: check.to_string(),
            cases: excesses.len(),
            violations: excesses.iter().filter(|&&e| e > tolerance || e.is_nan()).count(),
            worst_excess: excesses.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            tolerance,
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

fn require_positive_lambda(reg: RegCoefficient, op: &str) -> Result<()> {
    reg.require_entropy(op)?;
    if !(reg.lambda > 0.0) {
        return Err(Error::Precondition(format!("{op} requires λ > 0")));
    }
    Ok(())
}

fn oracle_grad(env: &PerformativeEnv, pi: &Policy, reg: RegCoefficient) -> Result<ActionTable> {
    Ok(fd_performative_gradient(env, pi, reg, oracle_step(pi))?.g)
}

/// Excess of `V(π1)` over the gradient-dominance upper bound at `π0`.
pub fn dominance_excess(
    env: &PerformativeEnv,
    reg: RegCoefficient,
    tc: &TheoryConstants,
    pi0: &Policy,
    pi1: &Policy,
) -> Result<f64> {
    let g = oracle_grad(env, pi0, reg)?;
    let gap = gap_from_gradient(&g, pi0, GapDomain::Full)?;
    let v0 = performative_value(env, pi0, reg)?;
    let v1 = performative_value(env, pi1, reg)?;
    let dist2 = pi1.table().sub(pi0.table()).norm().powi(2);
    Ok(v1 - (v0 + gap / tc.d_min - 0.5 * tc.mu * dist2))
}

/// Samples `n_pairs` policy pairs from Π_0.01 and checks the gradient-dominance inequality.
pub fn check_gradient_dominance(
    env: &PerformativeEnv,
    reg: RegCoefficient,
    tc: &TheoryConstants,
    n_pairs: usize,
    rng: &mut SeededRng,
) -> Result<ViolationReport> {
    require_positive_lambda(reg, "check_gradient_dominance")?;
    let base = env.base();
    let key = StreamKey::draw(rng);
    let excesses = (0..n_pairs as u64)
        .into_par_iter()
        .map(|i| {
            let mut r = key.stream(i);
            let pi0 = random_floored_policy(base.n_states(), base.n_actions(), DOMINANCE_SAMPLE_FLOOR, &mut r);
            let pi1 = random_floored_policy(base.n_states(), base.n_actions(), DOMINANCE_SAMPLE_FLOOR, &mut r);
            dominance_excess(env, reg, tc, &pi0, &pi1)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ViolationReport::from_excesses("gradient_dominance", &excesses, DOMINANCE_TOL))
}

/// Per state, swaps the masses of the (first) largest and (first) smallest actions.
/// Uniform rows are left alone.
pub fn swap_extremes(pi: &Policy) -> Policy {
    let mut t = pi.table().clone();
    for s in 0..t.n_states() {
        let row = t.row_mut(s);
        let (hi, lo) = (argmax_first(row), argmin_first(row));
        row.swap(hi, lo);
    }
    Policy::from_table(t).expect("a permuted row is still a distribution")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundReport {
    pub report: ViolationReport,
    /// `⟨∇V(π), π' - π⟩` with π' from [`swap_extremes`].
    pub swap_inner_product: f64,
    pub log_bound: f64,
    pub min_mass: f64,
}

pub fn check_policy_lower_bound(
    env: &PerformativeEnv,
    reg: RegCoefficient,
    tc: &TheoryConstants,
    pi: &Policy,
) -> Result<LowerBoundReport> {
    require_positive_lambda(reg, "check_policy_lower_bound")?;
    pi.check_shape(env.base())?;
    if !(min_policy_mass(pi) > 0.0) {
        return Err(Error::Precondition("policy lower bound check needs a strictly positive policy".into()));
    }
    let (_, log_pm) = tc.require_pi_min()?;
    let n_a = env.base().n_actions() as f64;
    let g = oracle_grad(env, pi, reg)?;
    let swapped = swap_extremes(pi);
    let ip = g.dot(&swapped.table().sub(pi.table()));
    let log_bound = log_pm - 2.0 * n_a / reg.lambda * (1.0 - env.base().gamma()) * ip;
    let bound = log_bound.exp();
    let excesses: Vec<f64> = pi.table().as_slice().iter().map(|&p| bound - p).collect();
    Ok(LowerBoundReport {
        report: ViolationReport::from_excesses("policy_lower_bound", &excesses, LOWER_BOUND_TOL),
        swap_inner_product: ip,
        log_bound,
        min_mass: min_policy_mass(pi),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapComparisonReport {
    pub gap_full: f64,
    pub gap_floored: f64,
    /// The floored gap must be at most this for the comparison to apply.
    pub premise_threshold: f64,
    pub premise_met: bool,
    /// `gap_full - 2·gap_floored`, reported whether or not the premise holds.
    pub excess: f64,
    pub tolerance: f64,
    pub violated: bool,
}

pub fn check_prop2(
    env: &PerformativeEnv,
    reg: RegCoefficient,
    tc: &TheoryConstants,
    pi: &Policy,
    floor: f64,
) -> Result<GapComparisonReport> {
    require_positive_lambda(reg, "check_prop2")?;
    let (pi_min, _) = tc.require_pi_min()?;
    if floor > pi_min / 3.0 * (1.0 + 1e-12) {
        return Err(Error::Precondition(format!("floor {floor} exceeds π_min/3 = {}", pi_min / 3.0)));
    }
    if min_policy_mass(pi) < floor - crate::optim::FLOOR_SLACK {
        return Err(Error::Precondition(format!("policy is not in Π_{floor}")));
    }
    let base = env.base();
    let g = oracle_grad(env, pi, reg)?;
    let gap_full = gap_from_gradient(&g, pi, GapDomain::Full)?;
    let gap_floored = gap_from_gradient(&g, pi, GapDomain::Floored(floor))?;
    let premise_threshold = tc.d_min * reg.lambda / (5.0 * base.n_actions() as f64 * (1.0 - base.gamma()));
    let premise_met = gap_floored <= premise_threshold;
    let excess = gap_full - 2.0 * gap_floored;
    Ok(GapComparisonReport {
        gap_full,
        gap_floored,
        premise_threshold,
        premise_met,
        excess,
        tolerance: GAP_RATIO_TOL,
        violated: premise_met && excess > GAP_RATIO_TOL,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalityReport {
    /// Best value found by the grid search.
    pub v_star: f64,
    pub v_policy: f64,
    pub suboptimality: f64,
    pub gap_full: f64,
    /// `gap_full / D + |μ|·|S|`.
    pub bound: f64,
    pub tolerance: f64,
    pub holds: bool,
    pub best_policy: Policy,
}

/// Coordinates: the first `|A|-1` masses of each state; the last mass is implied.
fn policy_from_coords(coords: &[f64], n_s: usize, n_a: usize) -> Option<Policy> {
    let mut t = ActionTable::zeros(n_s, n_a);
    for s in 0..n_s {
        let free = &coords[s * (n_a - 1)..(s + 1) * (n_a - 1)];
        let used: f64 = free.iter().sum();
        if free.iter().any(|&x| x < -1e-15) || used > 1.0 + 1e-12 {
            return None;
        }
        let row = t.row_mut(s);
        row[..n_a - 1]
            .iter_mut()
            .zip(free)
            .for_each(|(x, &c)| *x = c.max(0.0));
        row[n_a - 1] = (1.0 - used).max(0.0);
    }
    Policy::from_table(t).ok()
}

/// Every point of a `1/steps` lattice on the product of simplices.
fn lattice(n_s: usize, n_a: usize, steps: usize) -> Vec<Vec<f64>> {
    let dim = n_s * (n_a - 1);
    let mut out = Vec::new();
    let mut idx = vec![0usize; dim];
    loop {
        let feasible = (0..n_s).all(|s| idx[s * (n_a - 1)..(s + 1) * (n_a - 1)].iter().sum::<usize>() <= steps);
        if feasible {
            out.push(idx.iter().map(|&k| k as f64 / steps as f64).collect());
        }
        let mut k = 0;
        loop {
            if k == dim {
                return out;
            }
            idx[k] += 1;
            if idx[k] <= steps {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// Grid search for the performatively optimal value: a 0.01 lattice followed by
/// pattern search down to radius 1e-4.
pub fn grid_optimum(env: &PerformativeEnv, reg: RegCoefficient) -> Result<(f64, Policy)> {
    let base = env.base();
    let (n_s, n_a) = (base.n_states(), base.n_actions());
    let dim = n_s * (n_a - 1);
    if dim > GRID_MAX_DIM {
        return Err(Error::Domain(format!(
            "grid search needs |S|(|A|-1) <= {GRID_MAX_DIM}, got {dim}"
        )));
    }
    if dim == 0 {
        let pi = Policy::uniform(n_s, n_a);
        return Ok((performative_value(env, &pi, reg)?, pi));
    }
    let value = |c: &[f64]| -> Result<Option<f64>> {
        match policy_from_coords(c, n_s, n_a) {
            Some(pi) => performative_value(env, &pi, reg).map(Some),
            None => Ok(None),
        }
    };

    let points = lattice(n_s, n_a, 100);
    let values = points
        .par_iter()
        .map(|c| value(c).map(|v| v.unwrap_or(f64::NEG_INFINITY)))
        .collect::<Result<Vec<_>>>()?;
    let mut best_i = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best_i] {
            best_i = i;
        }
    }
    let mut best = points[best_i].clone();
    let mut best_v = values[best_i];

    let mut radius = 5e-3;
    while radius >= 1e-4 {
        let mut improved = false;
        for k in 0..dim {
            for sign in [1.0, -1.0] {
                let mut c = best.clone();
                c[k] += sign * radius;
                // keep the move inside the simplex by trading with the implied coordinate
                if let Some(v) = value(&c)? {
                    if v > best_v {
                        best = c;
                        best_v = v;
                        improved = true;
                    }
                }
            }
        }
        if !improved {
            radius *= 0.5;
        }
    }
    let pi = policy_from_coords(&best, n_s, n_a).expect("search stays feasible");
    Ok((best_v, pi))
}

pub fn check_stationary_to_po(
    env: &PerformativeEnv,
    reg: RegCoefficient,
    tc: &TheoryConstants,
    pi: &Policy,
) -> Result<OptimalityReport> {
    require_positive_lambda(reg, "check_stationary_to_po")?;
    pi.check_shape(env.base())?;
    let (v_star, best_policy) = grid_optimum(env, reg)?;
    let v_policy = performative_value(env, pi, reg)?;
    let g = oracle_grad(env, pi, reg)?;
    let gap_full = gap_from_gradient(&g, pi, GapDomain::Full)?;
    let bound = gap_full / tc.d_min + tc.mu.abs() * env.base().n_states() as f64;
    let suboptimality = v_star - v_policy;
    Ok(OptimalityReport {
        v_star,
        v_policy,
        suboptimality,
        gap_full,
        bound,
        tolerance: GRID_TOL,
        holds: suboptimality <= bound + GRID_TOL,
        best_policy,
    })
}
