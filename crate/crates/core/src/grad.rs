//! Geometry of the zero-row-sum subspace L₀ and performative gradient estimators.
//!
//! Policy differences live in `L₀ = {u : Σ_a u(a|s) = 0 ∀s}`, so every estimator
//! here returns a table in L₀: the projection of the performative gradient,
//! which is all a stationarity measure over policies can see.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::PerformativeEnv;
use crate::error::{Error, Result};
use crate::eval::{noisy_value, performative_value, RegCoefficient};
use crate::mdp::{min_policy_mass, Policy, TabularMdpBase};
use crate::rng::{SeededRng, StreamKey};
use crate::table::ActionTable;

/// Unit-norm direction in L₀.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionSample {
    pub u: ActionTable,
}

/// Estimate of the projected performative policy gradient; rows sum to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradEstimate {
    pub g: ActionTable,
}

/// How directions on the unit sphere of L₀ are drawn. Both give the same law.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingScheme {
    /// Standard normal table, projected onto L₀, normalized.
    #[default]
    Gaussian,
    /// Uniform point on the full unit sphere, projected onto L₀, normalized.
    SphereProject,
}

/// Subtract each row's mean.
pub fn project_l0(v: &ActionTable) -> ActionTable {
    let mut out = v.clone();
    let n_a = v.n_actions() as f64;
    for s in 0..v.n_states() {
        let row = out.row_mut(s);
        let mean = row.iter().sum::<f64>() / n_a;
        row.iter_mut().for_each(|x| *x -= mean);
    }
    out
}

fn gaussian_table(n_states: usize, n_actions: usize, rng: &mut SeededRng) -> ActionTable {
    ActionTable::from_fn(n_states, n_actions, |_, _| StandardNormal.sample(rng))
}

pub fn sample_direction(base: &TabularMdpBase, rng: &mut SeededRng) -> Result<DirectionSample> {
    sample_direction_with(base, SamplingScheme::Gaussian, rng)
}

pub fn sample_direction_with(
    base: &TabularMdpBase,
    scheme: SamplingScheme,
    rng: &mut SeededRng,
) -> Result<DirectionSample> {
    if base.n_actions() < 2 {
        return Err(Error::Precondition("direction sampling needs |A| >= 2".into()));
    }
    loop {
        let mut v = gaussian_table(base.n_states(), base.n_actions(), rng);
        if scheme == SamplingScheme::SphereProject {
            let n = v.norm();
            if n < 1e-12 {
                continue;
            }
            v.scale(1.0 / n);
        }
        let mut u = project_l0(&v);
        let n = u.norm();
        if n < 1e-12 {
            continue;
        }
        u.scale(1.0 / n);
        return Ok(DirectionSample { u });
    }
}

/// Orthonormal basis of the zero-sum subspace of `R^{|A|}`:
/// `e_k = (1,…,1, -k, 0,…,0)/√(k(k+1))` with `k` leading ones, `k = 1..|A|-1`.
pub fn l0_basis(n_actions: usize) -> Result<Vec<Vec<f64>>> {
    if n_actions < 2 {
        return Err(Error::Precondition("the L0 basis needs |A| >= 2".into()));
    }
    Ok((1..n_actions)
        .map(|k| {
            let c = 1.0 / ((k * (k + 1)) as f64).sqrt();
            (0..n_actions)
                .map(|i| match i.cmp(&k) {
                    std::cmp::Ordering::Less => c,
                    std::cmp::Ordering::Equal => -(k as f64) * c,
                    std::cmp::Ordering::Greater => 0.0,
                })
                .collect()
        })
        .collect())
}

fn perturbed(pi: &Policy, dir: &ActionTable, step: f64) -> Result<Policy> {
    let mut t = pi.table().clone();
    t.axpy(step, dir);
    Policy::from_table(t)
}

/// Two-point zeroth-order estimate
/// `|S|(|A|-1)/(2Nδ) Σ_i (V̂(π+δu_i) - V̂(π-δu_i)) u_i`.
pub fn zo_gradient(
    env: &PerformativeEnv,
    pi: &Policy,
    reg: RegCoefficient,
    delta: f64,
    n: usize,
    eps_v: f64,
    rng: &mut SeededRng,
) -> Result<GradEstimate> {
    zo_gradient_with(env, pi, reg, delta, n, eps_v, SamplingScheme::Gaussian, rng)
}

/// [`zo_gradient`] with an explicit direction sampler.
///
/// One key is drawn from `rng`; direction `i` and its two noisy evaluations use
/// stream `i` of that key. The `2N` evaluations run in parallel and are summed in
/// index order, so the result is independent of the thread count.
#[allow(clippy::too_many_arguments)]
pub fn zo_gradient_with(
    env: &PerformativeEnv,
    pi: &Policy,
    reg: RegCoefficient,
    delta: f64,
    n: usize,
    eps_v: f64,
    scheme: SamplingScheme,
    rng: &mut SeededRng,
) -> Result<GradEstimate> {
    let base = env.base();
    pi.check_shape(base)?;
    if n == 0 {
        return Err(Error::Precondition("batch size must be >= 1".into()));
    }
    if !(delta > 0.0) {
        return Err(Error::Precondition(format!("probe radius must be > 0, got {delta}")));
    }
    let mass = min_policy_mass(pi);
    if mass <= delta {
        return Err(Error::Precondition(format!(
            "min policy mass {mass} must exceed the probe radius {delta}"
        )));
    }

    let key = StreamKey::draw(rng);
    let terms = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut stream = key.stream(i as u64);
            let dir = sample_direction_with(base, scheme, &mut stream)?;
            let plus = perturbed(pi, &dir.u, delta)?;
            let minus = perturbed(pi, &dir.u, -delta)?;
            let v_plus = noisy_value(env, &plus, reg, eps_v, &mut stream)?;
            let v_minus = noisy_value(env, &minus, reg, eps_v, &mut stream)?;
            Ok((v_plus - v_minus, dir.u))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut g = ActionTable::zeros(base.n_states(), base.n_actions());
    for (diff, u) in &terms {
        g.axpy(*diff, u);
    }
    let dim = (base.n_states() * (base.n_actions() - 1)) as f64;
    g.scale(dim / (2.0 * n as f64 * delta));
    Ok(GradEstimate { g })
}

/// Central differences of the performative value along the orthonormal L₀ basis,
/// reassembled in L₀. Accurate to `O(h²)`.
pub fn fd_performative_gradient(
    env: &PerformativeEnv,
    pi: &Policy,
    reg: RegCoefficient,
    h: f64,
) -> Result<GradEstimate> {
    let base = env.base();
    pi.check_shape(base)?;
    let mass = min_policy_mass(pi);
    if !(h > 0.0) || mass <= h {
        return Err(Error::Precondition(format!(
            "min policy mass {mass} must exceed the finite-difference step {h}"
        )));
    }
    let basis = l0_basis(base.n_actions())?;
    let (n_s, n_a) = (base.n_states(), base.n_actions());
    let mut g = ActionTable::zeros(n_s, n_a);
    for s in 0..n_s {
        for e in &basis {
            let mut dir = ActionTable::zeros(n_s, n_a);
            dir.row_mut(s).copy_from_slice(e);
            let v_plus = performative_value(env, &perturbed(pi, &dir, h)?, reg)?;
            let v_minus = performative_value(env, &perturbed(pi, &dir, -h)?, reg)?;
            let slope = (v_plus - v_minus) / (2.0 * h);
            g.row_mut(s)
                .iter_mut()
                .zip(e)
                .for_each(|(x, b)| *x += slope * b);
        }
    }
    Ok(GradEstimate { g })
}
