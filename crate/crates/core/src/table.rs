use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense `|S|×|A|` table of reals stored state-major.
///
/// Used for gradients, directions and anything else shaped like a policy but
/// without the stochasticity constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionTable {
    n_states: usize,
    n_actions: usize,
    data: Vec<f64>,
}

impl ActionTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            data: vec![0.0; n_states * n_actions],
        }
    }

    pub fn from_vec(n_states: usize, n_actions: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_states * n_actions {
            return Err(Error::invalid(
                "table",
                format!(
                    "expected {} entries for a {}x{} table, got {}",
                    n_states * n_actions,
                    n_states,
                    n_actions,
                    data.len()
                ),
            ));
        }
        Ok(Self {
            n_states,
            n_actions,
            data,
        })
    }

    pub fn from_fn(n_states: usize, n_actions: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n_states * n_actions);
        for s in 0..n_states {
            for a in 0..n_actions {
                data.push(f(s, a));
            }
        }
        Self {
            n_states,
            n_actions,
            data,
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
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.data[s * self.n_actions + a]
    }

    #[inline]
    pub fn set(&mut self, s: usize, a: usize, value: f64) {
        self.data[s * self.n_actions + a] = value;
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        &self.data[s * self.n_actions..(s + 1) * self.n_actions]
    }

    #[inline]
    pub fn row_mut(&mut self, s: usize) -> &mut [f64] {
        &mut self.data[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &ActionTable) -> bool {
        self.n_states == other.n_states && self.n_actions == other.n_actions
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &ActionTable) -> f64 {
        debug_assert!(self.same_shape(other));
        self.data.iter().zip(&other.data).map(|(x, y)| x * y).sum()
    }

    /// Frobenius norm of the flattened table.
    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(&mut self, k: f64) {
        self.data.iter_mut().for_each(|x| *x *= k);
    }

    /// `self += k * other`
    pub fn axpy(&mut self, k: f64, other: &ActionTable) {
        debug_assert!(self.same_shape(other));
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(x, y)| *x += k * y);
    }

    pub fn sub(&self, other: &ActionTable) -> ActionTable {
        debug_assert!(self.same_shape(other));
        let data = self.data.iter().zip(&other.data).map(|(x, y)| x - y).collect();
        ActionTable {
            n_states: self.n_states,
            n_actions: self.n_actions,
            data,
        }
    }

    pub fn max_abs_row_sum(&self) -> f64 {
        (0..self.n_states)
            .map(|s| self.row(s).iter().sum::<f64>().abs())
            .fold(0.0, f64::max)
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub(crate) fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Index of the smallest entry; ties go to the lowest index.
pub(crate) fn argmin_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_mismatch_rejected() {
        assert!(ActionTable::from_vec(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn argmax_ties_pick_lowest_index() {
        assert_eq!(argmax_first(&[0.5, 0.5, 0.1]), 0);
        assert_eq!(argmax_first(&[0.1, 0.5, 0.5]), 1);
        assert_eq!(argmin_first(&[0.2, 0.1, 0.1]), 1);
    }

    #[test]
    fn dot_and_norm() {
        let t = ActionTable::from_vec(1, 2, vec![3.0, 4.0]).unwrap();
        assert_eq!(t.norm(), 5.0);
        let mut u = t.clone();
        u.axpy(-1.0, &t);
        assert_eq!(u.norm(), 0.0);
    }
}
