//! The hamiltonian `f(t, x, z(·))` and its minimizing selector.
//!
//! For a grid cell with data `(l, r, φ)` and a field `z` over marks,
//!
//! ```text
//! f(x, z) = min_u [ l(x, u) + Σ_y z(y) (r(y, u) − 1) φ(y) ]
//! ```
//!
//! Ties are broken toward the lowest action index so repeated evaluation is
//! deterministic.

use crate::hjb::ValueField;
use crate::model::Model;
use crate::sim::Policy;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonianResult {
    pub value: f64,
    pub argmin_action: usize,
}

/// Evaluates the hamiltonian on one grid cell at the field `z` over marks.
pub fn hamiltonian(model: &Model, cell: usize, x: usize, z: &[f64]) -> HamiltonianResult {
    debug_assert_eq!(z.len(), model.n_states());
    let phi = model.mark_dist(cell);
    let mut best = f64::INFINITY;
    let mut best_u = 0;
    for u in 0..model.n_actions() {
        let tilt: f64 = (0..model.n_states())
            .map(|y| z[y] * (model.rate(cell, y, u) - 1.0) * phi[y])
            .sum();
        let val = model.cost(cell, x, u) + tilt;
        if val < best {
            best = val;
            best_u = u;
        }
    }
    HamiltonianResult {
        value: best,
        argmin_action: best_u,
    }
}

/// The full Bellman rate `min_u [ l(x,u) + Σ_y (w(y) − w(x)) r(y,u) φ(y) ]`
/// for a value vector `w` over states. Equals the hamiltonian at
/// `z = w − w(x)` plus the u-independent drift `Σ_y (w(y) − w(x)) φ(y)`,
/// so it shares its argmin with the hamiltonian.
pub fn bellman_rate(model: &Model, cell: usize, x: usize, w: &[f64]) -> HamiltonianResult {
    let phi = model.mark_dist(cell);
    let mut best = f64::INFINITY;
    let mut best_u = 0;
    for u in 0..model.n_actions() {
        let jump: f64 = (0..model.n_states())
            .map(|y| (w[y] - w[x]) * model.rate(cell, y, u) * phi[y])
            .sum();
        let val = model.cost(cell, x, u) + jump;
        if val < best {
            best = val;
            best_u = u;
        }
    }
    HamiltonianResult {
        value: best,
        argmin_action: best_u,
    }
}

/// Extracts the feedback selector from a value field: on each cell of the
/// field's grid, `u*(j, x)` minimizes the hamiltonian at the difference
/// field `z(y) = v(t_j, y) − v(t_j, x)` taken at the cell's left node.
pub fn policy_from_value(model: &Model, v: &ValueField) -> Policy {
    let n_states = model.n_states();
    let actions = (0..v.grid.len() - 1)
        .map(|j| {
            let cell = model.cell_index(v.grid[j]);
            let w = &v.values[j];
            (0..n_states)
                .map(|x| {
                    let z: Vec<f64> = (0..n_states).map(|y| w[y] - w[x]).collect();
                    hamiltonian(model, cell, x, &z).argmin_action
                })
                .collect()
        })
        .collect();
    Policy {
        grid: v.grid.clone(),
        actions,
    }
}
