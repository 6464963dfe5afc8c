//! Monte Carlo cost estimation (direct and reweighted routes), brute-force
//! policy enumeration used as an optimality oracle, and the cost-functional
//! reductions that fold intensity-weighted and per-jump costs into the
//! standard running-cost form.

use serde::Serialize;
use thiserror::Error;

use crate::hjb::{policy_value, SolveError, ValueField};
use crate::model::{Model, ModelSpec};
use crate::pathwise::{mean_se, par_paths, LaneIntegrator};
use crate::sim::{simulate_controlled, simulate_reference, Policy, REFERENCE_STREAM_BLOCK};

/// Cap on the number of policies the oracle will enumerate.
pub const MAX_ORACLE_POLICIES: u64 = 1_000_000;

/// The oracle evaluates policies on a grid with at least this many cells.
const ORACLE_EVAL_CELLS: usize = 1000;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{count} feedback policies exceed the enumeration cap {cap}")]
    TooManyPolicies { count: f64, cap: u64 },
    #[error(transparent)]
    Solve(#[from] SolveError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Direct,
    Reweighted,
}

#[derive(Debug, Clone, Serialize)]
pub struct CostEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub route: Route,
}

/// Pooled z-score between two independent estimates.
pub fn route_z(a: &CostEstimate, b: &CostEstimate) -> f64 {
    let denom = (a.std_error * a.std_error + b.std_error * b.std_error).sqrt();
    if denom == 0.0 {
        if (a.estimate - b.estimate).abs() < 1e-12 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (a.estimate - b.estimate).abs() / denom
    }
}

fn running_cost_lane<'a>(
    model: &'a Model,
    policy: &'a Policy,
) -> impl Fn(usize, usize, usize, f64) -> [f64; 1] + Sync + 'a {
    move |_, mc, x, s| [model.cost(mc, x, policy.action_at(s, x))]
}

/// Averages `∫ l_s(X_s, u_s) dA_s + g(X_T)` over controlled paths from
/// `(t0, x0)`; the running-cost integral is exact per path.
pub fn mc_cost_direct(
    model: &Model,
    policy: &Policy,
    t0: f64,
    x0: usize,
    n_paths: usize,
    seed: u64,
) -> CostEstimate {
    let integ = LaneIntegrator::new(model, &policy.grid, running_cost_lane(model, policy));
    let g = model.terminal_cost();
    let samples = par_paths(n_paths, |i| {
        let traj = simulate_controlled(model, policy, t0, x0, seed, i);
        let [run] = integ.integrate(&traj);
        run + g[traj.state_at(model.horizon()).unwrap()]
    });
    let (estimate, std_error) = mean_se(&samples);
    CostEstimate {
        estimate,
        std_error,
        n_paths,
        route: Route::Direct,
    }
}

/// Same target as [`mc_cost_direct`], estimated as `E[L_T · cost]` over
/// reference-measure paths.
pub fn mc_cost_reweighted(
    model: &Model,
    policy: &Policy,
    t0: f64,
    x0: usize,
    n_paths: usize,
    seed: u64,
) -> CostEstimate {
    let integ = LaneIntegrator::new(model, &policy.grid, {
        move |_, mc, x, s| {
            let u = policy.action_at(s, x);
            [model.cost(mc, x, u), 1.0 - model.tilt_sum(mc, u)]
        }
    });
    let g = model.terminal_cost();
    let samples = par_paths(n_paths, |i| {
        let traj = simulate_reference(model, t0, x0, seed, REFERENCE_STREAM_BLOCK + i);
        let [run, exponent] = integ.integrate(&traj);
        let mut log_l = exponent;
        let mut x = traj.start_state;
        let mut dead = false;
        for &(t, y) in &traj.jumps {
            let r = model.rate(model.cell_index(t), y, policy.action_at(t, x));
            if r == 0.0 {
                dead = true;
                break;
            }
            log_l += r.ln();
            x = y;
        }
        if dead {
            0.0
        } else {
            log_l.exp() * (run + g[traj.state_at(model.horizon()).unwrap()])
        }
    });
    let (estimate, std_error) = mean_se(&samples);
    CostEstimate {
        estimate,
        std_error,
        n_paths,
        route: Route::Reweighted,
    }
}

/// Per-jump cost table `c(t, y, u)`, piecewise constant per grid cell.
#[derive(Debug, Clone)]
pub struct JumpCostField {
    pub values: Vec<Vec<Vec<f64>>>,
}

impl JumpCostField {
    pub fn from_fn(model: &Model, mut f: impl FnMut(usize, usize, usize) -> f64) -> JumpCostField {
        let values = (0..model.n_cells())
            .map(|c| {
                (0..model.n_states())
                    .map(|y| (0..model.n_actions()).map(|u| f(c, y, u)).collect())
                    .collect()
            })
            .collect();
        JumpCostField { values }
    }

    pub fn max_abs(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .flatten()
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Monte Carlo estimate of the raw per-jump cost functional
/// `E_u Σ_{T_n ≤ T} c(T_n, ξ_n, u_{T_n})` under the controlled law.
pub fn mc_jump_cost(
    model: &Model,
    policy: &Policy,
    jump_cost: &JumpCostField,
    t0: f64,
    x0: usize,
    n_paths: usize,
    seed: u64,
) -> CostEstimate {
    let samples = par_paths(n_paths, |i| {
        let traj = simulate_controlled(model, policy, t0, x0, seed, i);
        let mut x = traj.start_state;
        let mut total = 0.0;
        for &(t, y) in &traj.jumps {
            let cell = model.cell_index(t);
            total += jump_cost.values[cell][y][policy.action_at(t, x)];
            x = y;
        }
        total
    });
    let (estimate, std_error) = mean_se(&samples);
    CostEstimate {
        estimate,
        std_error,
        n_paths,
        route: Route::Direct,
    }
}

/// Rewrites the cost so that the running cost is paid in the controlled
/// clock `dA^u`: `l⁰(x, u) = l(x, u) Σ_y r(y, u) φ(y)`, with the declared
/// bound scaled to `C_l · C_r`.
pub fn transform_dau_cost(model: &Model) -> Model {
    let mut spec: ModelSpec = model.spec().clone();
    for c in 0..model.n_cells() {
        for x in 0..model.n_states() {
            for u in 0..model.n_actions() {
                spec.running_cost[c][x][u] *= model.tilt_sum(c, u);
            }
        }
    }
    spec.c_l = model.c_l() * model.c_r();
    Model::validate(spec).expect("transformed cost respects the scaled bound")
}

/// Folds a per-jump cost `c(t, y, u)` into an equivalent running cost
/// `l¹(x, u) = Σ_y c(t, y, u) r(t, y, u) φ_t(y)` with zero terminal cost.
pub fn transform_jump_cost(model: &Model, jump_cost: &JumpCostField) -> Model {
    let mut spec: ModelSpec = model.spec().clone();
    for c in 0..model.n_cells() {
        let phi = model.mark_dist(c);
        for u in 0..model.n_actions() {
            let l1: f64 = (0..model.n_states())
                .map(|y| jump_cost.values[c][y][u] * model.rate(c, y, u) * phi[y])
                .sum();
            for x in 0..model.n_states() {
                spec.running_cost[c][x][u] = l1;
            }
        }
    }
    spec.terminal_cost = vec![0.0; model.n_states()];
    let bound = jump_cost.max_abs() * model.c_r();
    spec.c_l = if bound > 0.0 { bound } else { model.c_l() };
    Model::validate(spec).expect("reduced cost respects the scaled bound")
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleRow {
    pub policy_id: u64,
    pub start_state: usize,
    pub cost: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleBest {
    pub start_state: String,
    pub policy_id: u64,
    pub cost: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleOutcome {
    pub coarse_cells: usize,
    pub n_policies: u64,
    pub best: Vec<OracleBest>,
    #[serde(skip)]
    pub rows: Vec<OracleRow>,
}

impl OracleOutcome {
    /// CSV export with header `policy_id,start_state,cost`.
    pub fn write_csv<W: std::io::Write>(
        &self,
        states: &[String],
        mut out: W,
    ) -> std::io::Result<()> {
        writeln!(out, "policy_id,start_state,cost")?;
        for row in &self.rows {
            writeln!(out, "{},{},{}", row.policy_id, states[row.start_state], row.cost)?;
        }
        Ok(())
    }
}

/// Decodes policy `id` (base-`n_actions` digits over coarse-cell × state
/// slots) into a feedback policy on `coarse_cells` equal subdivisions.
pub fn coarse_policy(
    horizon: f64,
    coarse_cells: usize,
    n_states: usize,
    n_actions: usize,
    id: u64,
) -> Policy {
    let grid = (0..=coarse_cells)
        .map(|i| horizon * i as f64 / coarse_cells as f64)
        .collect();
    let mut digits = id;
    let actions = (0..coarse_cells)
        .map(|_| {
            (0..n_states)
                .map(|_| {
                    let a = (digits % n_actions as u64) as usize;
                    digits /= n_actions as u64;
                    a
                })
                .collect()
        })
        .collect();
    Policy { grid, actions }
}

/// Restricts a (possibly finer) feedback policy to `coarse_cells` equal
/// subdivisions by sampling it at each coarse cell's left node, and returns
/// the id of that policy in the oracle's enumeration.
pub fn restrict_policy_id(policy: &Policy, horizon: f64, coarse_cells: usize, n_states: usize, n_actions: usize) -> u64 {
    let mut id = 0u64;
    let mut weight = 1u64;
    for j in 0..coarse_cells {
        let t = horizon * j as f64 / coarse_cells as f64;
        for x in 0..n_states {
            id += policy.action_at(t, x) as u64 * weight;
            weight *= n_actions as u64;
        }
    }
    id
}

/// Enumerates every feedback policy that is piecewise constant on
/// `coarse_cells` equal subdivisions, evaluates each by the backward linear
/// solve on a fine grid, and returns the per-start-state minimum (ties
/// resolved toward the lowest policy id).
pub fn brute_force_value(model: &Model, coarse_cells: usize) -> Result<OracleOutcome, EvalError> {
    let n_states = model.n_states();
    let n_actions = model.n_actions();
    let slots = (n_states * coarse_cells) as u32;
    let count_estimate = (n_actions as f64).powi(slots as i32);
    if !(count_estimate <= MAX_ORACLE_POLICIES as f64) {
        return Err(EvalError::TooManyPolicies {
            count: count_estimate,
            cap: MAX_ORACLE_POLICIES,
        });
    }
    let n_policies = (n_actions as u64).pow(slots);
    let fine = model.refine_to(ORACLE_EVAL_CELLS);

    let values: Vec<Vec<f64>> = (0..n_policies)
        .map(|id| {
            let policy = coarse_policy(model.horizon(), coarse_cells, n_states, n_actions, id);
            let field: ValueField = policy_value(&fine, &policy, 1)?;
            Ok((0..n_states).map(|x| field.at_start(x)).collect())
        })
        .collect::<Result<_, SolveError>>()?;

    let mut rows = Vec::with_capacity(n_policies as usize * n_states);
    let mut best: Vec<OracleBest> = (0..n_states)
        .map(|x| OracleBest {
            start_state: model.states()[x].clone(),
            policy_id: 0,
            cost: f64::INFINITY,
        })
        .collect();
    for (id, costs) in values.iter().enumerate() {
        for (x, &cost) in costs.iter().enumerate() {
            rows.push(OracleRow {
                policy_id: id as u64,
                start_state: x,
                cost,
            });
            if cost < best[x].cost {
                best[x].cost = cost;
                best[x].policy_id = id as u64;
            }
        }
    }
    Ok(OracleOutcome {
        coarse_cells,
        n_policies,
        best,
        rows,
    })
}
