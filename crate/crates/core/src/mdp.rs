//! Tabular MDP building blocks and exact occupancy measures.
//!
//! All probability tables are dense and state-major. Constructors validate
//! stochasticity to [`ROW_SUM_TOL`] and reject (never renormalize) inputs that
//! fail it.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::table::ActionTable;

/// Tolerance on the row sums of every probability table.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// State/action counts, discount factor and initial distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdpBase {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    rho: Vec<f64>,
}

impl TabularMdpBase {
    /// `gamma` must lie in `[0, 1)`; `gamma = 0` is accepted as the one-step limit.
    pub fn new(n_states: usize, n_actions: usize, gamma: f64, rho: Vec<f64>) -> Result<Self> {
        if n_states == 0 {
            return Err(Error::invalid("mdp base", "n_states must be positive"));
        }
        if n_actions == 0 {
            return Err(Error::invalid("mdp base", "n_actions must be positive"));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::invalid(
                "mdp base",
                format!("gamma must lie in (0,1), got {gamma}"),
            ));
        }
        if rho.len() != n_states {
            return Err(Error::invalid(
                "mdp base",
                format!("rho has {} entries, expected {}", rho.len(), n_states),
            ));
        }
        check_distribution("initial distribution", &rho)?;
        Ok(Self {
            n_states,
            n_actions,
            gamma,
            rho,
        })
    }

    /// Base with a uniform initial distribution.
    pub fn uniform_start(n_states: usize, n_actions: usize, gamma: f64) -> Result<Self> {
        Self::new(n_states, n_actions, gamma, vec![1.0 / n_states as f64; n_states.max(1)])
    }

    #[inline]
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    #[inline]
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }
}

fn check_distribution(what: &'static str, p: &[f64]) -> Result<()> {
    if let Some(x) = p.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(Error::invalid(what, format!("entry {x} is negative or not finite")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOL {
        return Err(Error::invalid(what, format!("entries sum to {sum}, not 1")));
    }
    Ok(())
}

/// Row-stochastic `|S|×|A|` table `π(a|s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy(ActionTable);

impl Policy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        Self::from_table(ActionTable::from_vec(n_states, n_actions, probs)?)
    }

    pub fn from_table(table: ActionTable) -> Result<Self> {
        if table.n_states() == 0 || table.n_actions() == 0 {
            return Err(Error::invalid("policy", "empty table"));
        }
        for s in 0..table.n_states() {
            check_distribution("policy row", table.row(s))?;
        }
        Ok(Self(table))
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self(ActionTable::from_fn(n_states, n_actions, |_, _| {
            1.0 / n_actions as f64
        }))
    }

    /// Deterministic policy choosing `actions[s]` in state `s`.
    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Self> {
        if let Some(&a) = actions.iter().find(|&&a| a >= n_actions) {
            return Err(Error::invalid("policy", format!("action {a} out of range")));
        }
        Ok(Self(ActionTable::from_fn(actions.len(), n_actions, |s, a| {
            if actions[s] == a {
                1.0
            } else {
                0.0
            }
        })))
    }

    #[inline]
    pub fn n_states(&self) -> usize {
        self.0.n_states()
    }

    #[inline]
    pub fn n_actions(&self) -> usize {
        self.0.n_actions()
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.0.get(s, a)
    }

    pub fn row(&self, s: usize) -> &[f64] {
        self.0.row(s)
    }

    pub fn table(&self) -> &ActionTable {
        &self.0
    }

    pub fn into_table(self) -> ActionTable {
        self.0
    }

    /// True when every entry is at least `floor` (membership in Π_Δ).
    pub fn in_floored(&self, floor: f64) -> bool {
        min_policy_mass(self) >= floor
    }

    pub fn matches(&self, base: &TabularMdpBase) -> bool {
        self.n_states() == base.n_states() && self.n_actions() == base.n_actions()
    }

    pub(crate) fn check_shape(&self, base: &TabularMdpBase) -> Result<()> {
        if !self.matches(base) {
            return Err(Error::invalid(
                "policy",
                format!(
                    "shape {}x{} does not match the MDP ({}x{})",
                    self.n_states(),
                    self.n_actions(),
                    base.n_states(),
                    base.n_actions()
                ),
            ));
        }
        Ok(())
    }
}

/// Transition kernel `p(s'|s,a)`, indexed `[(s * |A| + a) * |S| + s']`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionKernel {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl TransitionKernel {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions * n_states {
            return Err(Error::invalid(
                "transition kernel",
                format!(
                    "expected {} entries, got {}",
                    n_states * n_actions * n_states,
                    probs.len()
                ),
            ));
        }
        for sa in probs.chunks(n_states) {
            check_distribution("transition kernel slice", sa)?;
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            probs: vec![1.0 / n_states as f64; n_states * n_actions * n_states],
        }
    }

    #[inline]
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    #[inline]
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.probs[(s * self.n_actions + a) * self.n_states + next]
    }

    /// Distribution over next states from `(s, a)`.
    #[inline]
    pub fn next(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.probs[start..start + self.n_states]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    /// Euclidean norm of the flattened difference.
    pub fn distance(&self, other: &TransitionKernel) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }

    pub(crate) fn check_shape(&self, base: &TabularMdpBase) -> Result<()> {
        if self.n_states != base.n_states() || self.n_actions != base.n_actions() {
            return Err(Error::invalid("transition kernel", "shape does not match the MDP"));
        }
        Ok(())
    }
}

/// Rewards `r(s,a) ∈ [0,1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardTable(ActionTable);

impl RewardTable {
    pub fn new(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        Self::from_table(ActionTable::from_vec(n_states, n_actions, values)?)
    }

    pub fn from_table(table: ActionTable) -> Result<Self> {
        if let Some(x) = table
            .as_slice()
            .iter()
            .find(|x| !(0.0..=1.0).contains(*x))
        {
            return Err(Error::invalid("reward table", format!("entry {x} outside [0,1]")));
        }
        Ok(Self(table))
    }

    pub fn constant(n_states: usize, n_actions: usize, value: f64) -> Result<Self> {
        Self::from_table(ActionTable::from_fn(n_states, n_actions, |_, _| value))
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.0.get(s, a)
    }

    pub fn table(&self) -> &ActionTable {
        &self.0
    }

    pub(crate) fn check_shape(&self, base: &TabularMdpBase) -> Result<()> {
        if self.0.n_states() != base.n_states() || self.0.n_actions() != base.n_actions() {
            return Err(Error::invalid("reward table", "shape does not match the MDP"));
        }
        Ok(())
    }
}

/// Discounted state-action visitation distribution `d_{π,p}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyMeasure {
    pub joint: ActionTable,
    pub marginal: Vec<f64>,
}

impl OccupancyMeasure {
    /// Largest per-state residual of the flow equation
    /// `d(s') = (1-γ)ρ(s') + γ Σ_{s,a} d(s)π(a|s)p(s'|s,a)`.
    pub fn flow_residual(&self, pi: &Policy, p: &TransitionKernel, base: &TabularMdpBase) -> f64 {
        let n = base.n_states();
        let gamma = base.gamma();
        let mut inflow: Vec<f64> = base.rho().iter().map(|r| (1.0 - gamma) * r).collect();
        for s in 0..n {
            for a in 0..base.n_actions() {
                let w = gamma * self.marginal[s] * pi.prob(s, a);
                for (next, q) in p.next(s, a).iter().enumerate() {
                    inflow[next] += w * q;
                }
            }
        }
        inflow
            .iter()
            .zip(&self.marginal)
            .map(|(x, d)| (x - d).abs())
            .fold(0.0, f64::max)
    }
}

/// State-to-state matrix `P_π(s, s') = Σ_a π(a|s) p(s'|s,a)`.
pub(crate) fn state_transition_matrix(pi: &Policy, p: &TransitionKernel) -> DMatrix<f64> {
    let n = p.n_states();
    let mut m = DMatrix::zeros(n, n);
    for s in 0..n {
        for a in 0..p.n_actions() {
            let w = pi.prob(s, a);
            if w == 0.0 {
                continue;
            }
            for (next, q) in p.next(s, a).iter().enumerate() {
                m[(s, next)] += w * q;
            }
        }
    }
    m
}

/// Solves `(I - γ M) x = b`.
pub(crate) fn solve_discounted(m: &DMatrix<f64>, gamma: f64, b: DVector<f64>) -> Result<DVector<f64>> {
    let n = m.nrows();
    let a = DMatrix::identity(n, n) - m * gamma;
    a.lu()
        .solve(&b)
        .ok_or_else(|| Error::Internal("singular discounted linear system".into()))
}

/// Exact occupancy measure from a dense solve of the `|S|`-dimensional flow system.
pub fn occupancy_measure(
    pi: &Policy,
    p: &TransitionKernel,
    base: &TabularMdpBase,
) -> Result<OccupancyMeasure> {
    pi.check_shape(base)?;
    p.check_shape(base)?;
    let gamma = base.gamma();
    let m = state_transition_matrix(pi, p).transpose();
    let b = DVector::from_iterator(base.n_states(), base.rho().iter().map(|r| (1.0 - gamma) * r));
    let marginal: Vec<f64> = solve_discounted(&m, gamma, b)?.iter().copied().collect();
    let joint = ActionTable::from_fn(base.n_states(), base.n_actions(), |s, a| {
        marginal[s] * pi.prob(s, a)
    });
    Ok(OccupancyMeasure { joint, marginal })
}

/// Policy with each row drawn uniformly from the probability simplex.
pub fn random_policy(n_states: usize, n_actions: usize, rng: &mut SeededRng) -> Policy {
    let mut t = ActionTable::zeros(n_states, n_actions);
    for s in 0..n_states {
        let row = t.row_mut(s);
        for x in row.iter_mut() {
            *x = Exp1.sample(rng);
        }
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= total);
        fix_row_sum(row);
    }
    Policy(t)
}

/// Random member of Π_floor: `floor + (1 - floor·|A|)·x` with `x` uniform on the simplex.
pub fn random_floored_policy(
    n_states: usize,
    n_actions: usize,
    floor: f64,
    rng: &mut SeededRng,
) -> Policy {
    let free = 1.0 - floor * n_actions as f64;
    let mut t = random_policy(n_states, n_actions, rng).into_table();
    for s in 0..n_states {
        let row = t.row_mut(s);
        row.iter_mut().for_each(|x| *x = floor + free * *x);
        fix_row_sum(row);
    }
    Policy(t)
}

// Push the rounding residue into the largest entry so the row sums to 1 within an ulp or two.
fn fix_row_sum(row: &mut [f64]) {
    let total: f64 = row.iter().sum();
    let i = crate::table::argmax_first(row);
    row[i] += 1.0 - total;
}

/// `min_{s,a} π(a|s)`.
pub fn min_policy_mass(pi: &Policy) -> f64 {
    pi.table()
        .as_slice()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}
