//! Backward solvers for the dynamic programming equation on a finite state
//! space, in the deterministic-coefficient reduction where the martingale
//! kernel of the backward field vanishes.
//!
//! The value field solves, in the `dA` clock,
//!
//! ```text
//! -dv(t,x)/dA_t = min_u [ l_t(x,u) + Σ_y (v(t,y) − v(t,x)) r_t(y,u) φ_t(y) ],   v(T,·) = g
//! ```
//!
//! Two routes are implemented: explicit backward Euler time marching
//! ([`hjb_march`]) and the contraction iteration ([`hjb_picard`]) whose
//! sweep [`picard_step`] integrates the frozen field with the trapezoidal
//! rule. Policy evaluation ([`policy_value`]) is the same marching scheme
//! with the action fixed by a feedback policy.

use serde::Serialize;
use thiserror::Error;

use crate::hamiltonian::bellman_rate;
use crate::model::{contraction_constants, Model};
use crate::pathwise::TimeGrid;
use crate::sim::Policy;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("marching step dA = {da} violates the stability bound dA * C_r <= 1 (C_r = {c_r}); refine the grid")]
    StepTooLarge { da: f64, c_r: f64 },
    #[error("no convergence after {iterations} sweeps (last weighted delta {last_delta}, tol {tol})")]
    NoConvergence {
        iterations: usize,
        last_delta: f64,
        tol: f64,
    },
}

/// Grid values `v(t_j, x)`, interpreted as continuous piecewise-linear in
/// time; `values[j][x]` sits at node `grid[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    pub grid: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl ValueField {
    pub fn n_states(&self) -> usize {
        self.values[0].len()
    }

    /// Piecewise-linear evaluation, clamped to the grid range.
    pub fn eval(&self, t: f64, x: usize) -> f64 {
        let n = self.grid.len();
        if t <= self.grid[0] {
            return self.values[0][x];
        }
        if t >= self.grid[n - 1] {
            return self.values[n - 1][x];
        }
        let j = self.grid.partition_point(|&g| g <= t) - 1;
        let (t0, t1) = (self.grid[j], self.grid[j + 1]);
        let w = (t - t0) / (t1 - t0);
        self.values[j][x] * (1.0 - w) + self.values[j + 1][x] * w
    }

    /// `v` at the first grid node.
    pub fn at_start(&self, x: usize) -> f64 {
        self.values[0][x]
    }

    /// Largest absolute difference against `other`, sampled at this field's
    /// nodes.
    pub fn sup_gap(&self, other: &ValueField) -> f64 {
        let mut gap = 0.0f64;
        for (j, &t) in self.grid.iter().enumerate() {
            for x in 0..self.n_states() {
                gap = gap.max((self.values[j][x] - other.eval(t, x)).abs());
            }
        }
        gap
    }

    /// CSV export with header `t,state,v`.
    pub fn write_csv<W: std::io::Write>(
        &self,
        states: &[String],
        mut out: W,
    ) -> std::io::Result<()> {
        writeln!(out, "t,state,v")?;
        for (j, &t) in self.grid.iter().enumerate() {
            for (x, name) in states.iter().enumerate() {
                writeln!(out, "{},{},{}", t, name, self.values[j][x])?;
            }
        }
        Ok(())
    }
}

/// Per-iteration diagnostics of the contraction run. `deltas` holds the
/// `e^{β A_t / 2}`-weighted sup-norm of successive sweep differences;
/// `empirical_ratio` is the largest ratio of consecutive deltas observed
/// once past the second sweep, to be compared with the theoretical
/// `c_beta = c1_beta + c2_beta`.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub beta: f64,
    pub deltas: Vec<f64>,
    pub iterations: usize,
    pub empirical_ratio: f64,
    pub c1_beta: f64,
    pub c2_beta: f64,
    pub c_beta: f64,
}

/// Explicit backward Euler in the `dA` clock over a merged grid; `gen`
/// evaluates the per-state rate from the value row at the cell's right node.
fn backward_march(
    model: &Model,
    grid: &TimeGrid,
    gen: impl Fn(usize, usize, usize, &[f64]) -> f64,
) -> Result<Vec<Vec<f64>>, SolveError> {
    let n = model.n_states();
    let cells = grid.n_cells();
    let mut values = vec![Vec::new(); cells + 1];
    values[cells] = model.terminal_cost().to_vec();
    for i in (0..cells).rev() {
        let da = grid.cum_a[i + 1] - grid.cum_a[i];
        if da * model.c_r() > 1.0 {
            return Err(SolveError::StepTooLarge {
                da,
                c_r: model.c_r(),
            });
        }
        let mc = grid.model_cell[i];
        let w = &values[i + 1];
        let row = (0..n).map(|x| w[x] + da * gen(i, mc, x, w)).collect();
        values[i] = row;
    }
    Ok(values)
}

/// Solves the dynamic programming equation by explicit backward Euler with
/// each model cell subdivided into `substeps` parts. Fails with
/// [`SolveError::StepTooLarge`] when `dA · C_r > 1` on some substep.
pub fn hjb_march(model: &Model, substeps: usize) -> Result<ValueField, SolveError> {
    let fine = model.refine(substeps);
    let grid = TimeGrid::new(&fine, &[]);
    let values = backward_march(&fine, &grid, |_, mc, x, w| {
        bellman_rate(&fine, mc, x, w).value
    })?;
    Ok(ValueField {
        grid: grid.nodes,
        values,
    })
}

/// Value of a fixed feedback policy: the marching scheme with the action
/// pinned by the policy, on the refined grid merged with the policy's own
/// cell boundaries. Equals the expected residual cost of the policy.
pub fn policy_value(
    model: &Model,
    policy: &Policy,
    substeps: usize,
) -> Result<ValueField, SolveError> {
    let fine = model.refine(substeps);
    let grid = TimeGrid::new(&fine, &policy.grid);
    let nodes = grid.nodes.clone();
    let values = backward_march(&fine, &grid, |gc, mc, x, w| {
        let u = policy.action_at(nodes[gc], x);
        let phi = fine.mark_dist(mc);
        let jump: f64 = (0..fine.n_states())
            .map(|y| (w[y] - w[x]) * fine.rate(mc, y, u) * phi[y])
            .sum();
        fine.cost(mc, x, u) + jump
    })?;
    Ok(ValueField {
        grid: grid.nodes,
        values,
    })
}

/// One sweep of the contraction map: integrates the frozen field,
///
/// ```text
/// v_out(t,x) = g(x) + ∫_t^T [ Σ_y (v_in(s,y) − v_in(s,x)) φ_s(y)
///                             + f(s, x, v_in(s,·) − v_in(s,x)) ] dA_s,
/// ```
///
/// with the trapezoidal rule on the cells of `v_in`'s grid.
pub fn picard_step(model: &Model, v_in: &ValueField) -> ValueField {
    let grid = TimeGrid::new(model, &v_in.grid);
    let n = model.n_states();
    let cells = grid.n_cells();
    // Integrand rows at every node; at interior nodes the cell data differ
    // left and right, so each cell evaluates both its endpoints itself.
    let node_values: Vec<Vec<f64>> = grid
        .nodes
        .iter()
        .map(|&t| (0..n).map(|x| v_in.eval(t, x)).collect())
        .collect();
    let mut values = vec![Vec::new(); cells + 1];
    values[cells] = model.terminal_cost().to_vec();
    for i in (0..cells).rev() {
        let da = grid.cum_a[i + 1] - grid.cum_a[i];
        let mc = grid.model_cell[i];
        let row = (0..n)
            .map(|x| {
                let f_lo = bellman_rate(model, mc, x, &node_values[i]).value;
                let f_hi = bellman_rate(model, mc, x, &node_values[i + 1]).value;
                values[i + 1][x] + 0.5 * da * (f_lo + f_hi)
            })
            .collect();
        values[i] = row;
    }
    ValueField {
        grid: grid.nodes,
        values,
    }
}

/// Iterates [`picard_step`] from `v⁰ ≡ g` until the `e^{β A_t / 2}`-weighted
/// sup norm of a sweep difference drops below `tol`. Callers should pass a
/// `beta` at or above the model's minimal admissible weight, which puts the
/// theoretical per-sweep ratio `c_beta` below 1.
pub fn hjb_picard(
    model: &Model,
    beta: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(ValueField, ConvergenceReport), SolveError> {
    assert!(tol > 0.0, "tolerance must be positive");
    let l = model.lipschitz_constants().l;
    let (c1, c2) = contraction_constants(l, beta);
    let nodes = model.time_grid().to_vec();
    let weights: Vec<f64> = (0..nodes.len())
        .map(|j| (0.5 * beta * model.cum_a_node(j)).exp())
        .collect();
    let g = model.terminal_cost().to_vec();
    let mut v = ValueField {
        grid: nodes,
        values: vec![g; model.time_grid().len()],
    };
    let mut deltas = Vec::new();
    for _ in 0..max_iter {
        let next = picard_step(model, &v);
        let mut delta = 0.0f64;
        for (j, w) in weights.iter().enumerate() {
            for x in 0..model.n_states() {
                delta = delta.max(w * (next.values[j][x] - v.values[j][x]).abs());
            }
        }
        deltas.push(delta);
        v = next;
        if delta < tol {
            let empirical_ratio = deltas
                .windows(2)
                .skip(1)
                .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 })
                .fold(0.0f64, f64::max);
            let report = ConvergenceReport {
                beta,
                iterations: deltas.len(),
                deltas,
                empirical_ratio,
                c1_beta: c1,
                c2_beta: c2,
                c_beta: c1 + c2,
            };
            return Ok((v, report));
        }
    }
    Err(SolveError::NoConvergence {
        iterations: max_iter,
        last_delta: deltas.last().copied().unwrap_or(f64::NAN),
        tol,
    })
}
