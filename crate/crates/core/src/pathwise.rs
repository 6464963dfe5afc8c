//! Internal machinery for exact pathwise integrals against `dA_t`.
//!
//! All coefficients are piecewise constant on grid cells and every pathwise
//! integrand is smooth between the breakpoints formed by grid nodes and
//! jump times, so integrals split into per-segment pieces. Deterministic
//! integrands of the form `F(cell, state, s)` are pre-integrated per cell
//! into prefix tables; a path then costs O(jumps) table lookups plus two
//! partial pieces per jump.

use rayon::prelude::*;

use crate::model::Model;
use crate::sim::Trajectory;

/// 5-point Gauss-Legendre nodes and weights on [-1, 1]. Exact for
/// polynomials up to degree 9; for the smooth weighted integrands used here
/// the per-cell error is far below double-precision noise.
const GL5_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GL5_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189,
    0.478_628_670_499_366,
    0.568_888_888_888_889,
    0.478_628_670_499_366,
    0.236_926_885_056_189,
];

/// An integration grid over `[0, T]`: the model grid possibly merged with
/// extra breakpoints (policy cells, value-field nodes). Every cell of the
/// merged grid lies inside a single model cell.
#[derive(Debug, Clone)]
pub(crate) struct TimeGrid {
    pub nodes: Vec<f64>,
    /// A_t at each node.
    pub cum_a: Vec<f64>,
    /// Model cell containing each merged cell.
    pub model_cell: Vec<usize>,
}

impl TimeGrid {
    pub fn new(model: &Model, extra: &[f64]) -> TimeGrid {
        let mut nodes: Vec<f64> = model
            .time_grid()
            .iter()
            .chain(extra.iter())
            .copied()
            .filter(|&t| (0.0..=model.horizon()).contains(&t))
            .collect();
        nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
        nodes.dedup();
        let cum_a = nodes
            .iter()
            .map(|&t| model.cumulative_a(t).expect("node within horizon"))
            .collect();
        let model_cell = nodes
            .windows(2)
            .map(|w| model.cell_index(w[0]))
            .collect();
        TimeGrid { nodes, cum_a, model_cell }
    }

    pub fn n_cells(&self) -> usize {
        self.nodes.len() - 1
    }
}

/// Inter-jump spans of a trajectory: `[t0, T1), [T1, T2), …, [Tn, T]`,
/// each carrying the state holding on it. Self-jumps do not change the
/// state, so consecutive spans in the same state are coalesced; this keeps
/// state-only integrands bitwise independent of where self-jumps fall.
pub(crate) fn spans(traj: &Trajectory, horizon: f64) -> Vec<(f64, f64, usize)> {
    let mut out: Vec<(f64, f64, usize)> = Vec::with_capacity(traj.jumps.len() + 1);
    let mut lo = traj.start_time;
    let mut state = traj.start_state;
    for &(t, y) in &traj.jumps {
        if y != state {
            out.push((lo, t, state));
            lo = t;
            state = y;
        }
    }
    out.push((lo, horizon, state));
    out
}

/// Pre-integrated deterministic integrands, `LANES` of them at once.
///
/// `f(grid_cell, model_cell, state, s)` returns the integrand values; the
/// integral is taken against `dA_s`, i.e. each lane accumulates
/// `∫ f_lane(s) a(s) ds` over the path's occupation of each state.
pub(crate) struct LaneIntegrator<'m, F, const LANES: usize>
where
    F: Fn(usize, usize, usize, f64) -> [f64; LANES] + Sync,
{
    model: &'m Model,
    grid: TimeGrid,
    f: F,
    /// prefix[x][i] = lane integrals over [0, nodes[i]] in state x.
    prefix: Vec<Vec<[f64; LANES]>>,
}

impl<'m, F, const LANES: usize> LaneIntegrator<'m, F, LANES>
where
    F: Fn(usize, usize, usize, f64) -> [f64; LANES] + Sync,
{
    pub fn new(model: &'m Model, extra: &[f64], f: F) -> Self {
        let grid = TimeGrid::new(model, extra);
        let n_states = model.n_states();
        let mut prefix = vec![vec![[0.0; LANES]; grid.nodes.len()]; n_states];
        for x in 0..n_states {
            for i in 0..grid.n_cells() {
                let cell_int = Self::cell_integral(model, &grid, &f, i, x, grid.nodes[i], grid.nodes[i + 1]);
                for lane in 0..LANES {
                    prefix[x][i + 1][lane] = prefix[x][i][lane] + cell_int[lane];
                }
            }
        }
        LaneIntegrator { model, grid, f, prefix }
    }

    fn cell_integral(
        model: &Model,
        grid: &TimeGrid,
        f: &F,
        grid_cell: usize,
        x: usize,
        lo: f64,
        hi: f64,
    ) -> [f64; LANES] {
        let mc = grid.model_cell[grid_cell];
        let a = model.base_rate(mc);
        if a == 0.0 || hi <= lo {
            return [0.0; LANES];
        }
        let mut acc = [0.0; LANES];
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (lo + hi);
        for (&node, &w) in GL5_NODES.iter().zip(&GL5_WEIGHTS) {
            let s = mid + half * node;
            let vals = f(grid_cell, mc, x, s);
            for lane in 0..LANES {
                acc[lane] += w * vals[lane];
            }
        }
        for lane in 0..LANES {
            acc[lane] *= half * a;
        }
        acc
    }

    /// Lane integrals over `[0, t]` in state `x`.
    fn cum_to(&self, t: f64, x: usize) -> [f64; LANES] {
        let pos = self.grid.nodes.partition_point(|&g| g <= t);
        let i = pos.saturating_sub(1).min(self.grid.nodes.len() - 1);
        let mut acc = self.prefix[x][i];
        if i < self.grid.n_cells() && t > self.grid.nodes[i] {
            let partial =
                Self::cell_integral(self.model, &self.grid, &self.f, i, x, self.grid.nodes[i], t);
            for lane in 0..LANES {
                acc[lane] += partial[lane];
            }
        }
        acc
    }

    /// Lane integrals of `f(s, X_s)` against `dA_s` over the whole path.
    pub fn integrate(&self, traj: &Trajectory) -> [f64; LANES] {
        let mut acc = [0.0; LANES];
        for (lo, hi, x) in spans(traj, self.model.horizon()) {
            if hi <= lo {
                continue;
            }
            let upper = self.cum_to(hi, x);
            let lower = self.cum_to(lo, x);
            for lane in 0..LANES {
                acc[lane] += upper[lane] - lower[lane];
            }
        }
        acc
    }
}

/// Sample mean and standard error (zero for constant or singleton samples).
pub(crate) fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    if xs.iter().all(|&x| x == xs[0]) {
        return (xs[0], 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt().max(0.0))
}

/// Maps `f` over path indices in parallel, collecting results in index
/// order so reductions are independent of the worker count.
pub(crate) fn par_paths<T: Send>(n: usize, f: impl Fn(u64) -> T + Sync + Send) -> Vec<T> {
    (0..n as u64).into_par_iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;

    #[test]
    fn lane_integrator_matches_closed_forms_on_still_path() {
        let model = instances::two_state_model().refine(32);
        // ∫ dA = A_T, ∫ A dA = A_T²/2, ∫ e^{2A} dA = (e^{2 A_T} − 1)/2.
        let integ = LaneIntegrator::new(&model, &[], |_, _, _, s| {
            let a = model.cumulative_a(s).unwrap();
            [1.0, a, (2.0 * a).exp()]
        });
        let still = Trajectory {
            start_time: 0.0,
            start_state: 0,
            jumps: vec![],
            stream_id: 0,
        };
        let a_t = model.total_a();
        let [total, half_sq, weighted] = integ.integrate(&still);
        assert!((total - a_t).abs() < 1e-14);
        assert!((half_sq - a_t * a_t / 2.0).abs() < 1e-14);
        assert!((weighted - ((2.0 * a_t).exp() - 1.0) / 2.0).abs() < 1e-14);
    }

    #[test]
    fn lane_integrator_splits_exactly_at_jumps() {
        let model = instances::two_state_model();
        // State-dependent density: 1 in state 0, 3 in state 1.
        let integ = LaneIntegrator::new(&model, &[], |_, _, x, _| [if x == 0 { 1.0 } else { 3.0 }]);
        let traj = Trajectory {
            start_time: 0.0,
            start_state: 0,
            jumps: vec![(0.25, 1), (0.75, 0)],
            stream_id: 0,
        };
        // A on [0, .25] = .1, on [.25, .75] = .25, on [.75, 1] = .15
        let expected = 0.1 + 3.0 * 0.25 + 0.15;
        let [val] = integ.integrate(&traj);
        assert!((val - expected).abs() < 1e-14);
    }

    #[test]
    fn mean_se_of_constant_sample_is_exact() {
        let (m, se) = mean_se(&[2.5; 40]);
        assert_eq!(m, 2.5);
        assert_eq!(se, 0.0);
    }
}
