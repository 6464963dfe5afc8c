//! Reference model instances shared by the test suites, the shipped JSON
//! model files, and the command-line examples.

use crate::model::{Model, ModelSpec, MODEL_SCHEMA};

fn spec(
    states: &[&str],
    actions: &[&str],
    time_grid: Vec<f64>,
    base_rate: Vec<f64>,
    mark_dist: Vec<Vec<f64>>,
    rate_modifier: Vec<Vec<Vec<f64>>>,
    running_cost: Vec<Vec<Vec<f64>>>,
    terminal_cost: Vec<f64>,
    c_r: f64,
    c_l: f64,
) -> ModelSpec {
    ModelSpec {
        schema: MODEL_SCHEMA.to_string(),
        states: states.iter().map(|s| s.to_string()).collect(),
        actions: actions.iter().map(|a| a.to_string()).collect(),
        horizon: *time_grid.last().unwrap(),
        time_grid,
        base_rate,
        mark_dist,
        rate_modifier,
        running_cost,
        terminal_cost,
        c_r,
        c_l,
    }
}

/// Two states, two actions, two grid cells with distinct coefficients on
/// each; the rate modifier takes the values {1, 2, 0.5} so `L = 1`, and
/// `C_r = 2`. The main nontrivial benchmark instance.
pub fn two_state_model() -> Model {
    // r[y][u], identical on both cells.
    let r = vec![vec![1.0, 0.5], vec![2.0, 1.0]];
    let spec = spec(
        &["s0", "s1"],
        &["a0", "a1"],
        vec![0.0, 0.5, 1.0],
        vec![0.4, 0.6],
        vec![vec![0.5, 0.5], vec![0.3, 0.7]],
        vec![r.clone(), r],
        vec![
            vec![vec![1.0, 0.3], vec![-0.5, 0.8]],
            vec![vec![0.2, 0.9], vec![0.4, -0.3]],
        ],
        vec![0.5, -0.25],
        2.0,
        1.0,
    );
    Model::validate(spec).expect("two-state instance is valid")
}

/// Two states, two actions, state-independent running cost (1 and 0.5),
/// zero terminal cost, identity rate modifier, unit base rate on [0, 1].
/// The value function is `v(t, x) = 0.5 (1 - t)` in closed form: the jump
/// term cancels by symmetry and the cheaper action wins everywhere.
pub fn flat_cost_model() -> Model {
    let r = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
    let l = vec![vec![1.0, 0.5], vec![1.0, 0.5]];
    let spec = spec(
        &["s0", "s1"],
        &["a0", "a1"],
        vec![0.0, 0.25, 0.5, 0.75, 1.0],
        vec![1.0; 4],
        vec![vec![0.5, 0.5]; 4],
        vec![r; 4],
        vec![l; 4],
        vec![0.0, 0.0],
        1.5,
        1.0,
    );
    Model::validate(spec).expect("flat-cost instance is valid")
}

/// Single action, constant rate modifier `r ≡ rho`, unit base rate on
/// [0, 1], two equally likely marks, zero costs. Under the tilted measure
/// the jump count is Poisson with mean `rho`, and the likelihood ratio has
/// the closed form `L_T = e^{1-rho} rho^N`.
pub fn constant_rate_model(rho: f64) -> Model {
    let c_r = if rho > 2.0 { rho } else { 2.0 };
    let spec = spec(
        &["s0", "s1"],
        &["a0"],
        vec![0.0, 1.0],
        vec![1.0],
        vec![vec![0.5, 0.5]],
        vec![vec![vec![rho], vec![rho]]],
        vec![vec![vec![0.0], vec![0.0]]],
        vec![0.0, 0.0],
        c_r,
        1.0,
    );
    Model::validate(spec).expect("constant-rate instance is valid")
}

/// Single action, identity rate modifier, unit base rate on [0, 1], zero
/// costs. Base model for the per-jump cost reduction: charging one unit per
/// jump turns into running cost `l ≡ 1`, whose value is `E N_T = 1`.
pub fn unit_jump_model() -> Model {
    let spec = spec(
        &["s0", "s1"],
        &["a0"],
        vec![0.0, 1.0],
        vec![1.0],
        vec![vec![0.5, 0.5]],
        vec![vec![vec![1.0], vec![1.0]]],
        vec![vec![vec![0.0], vec![0.0]]],
        vec![0.0, 0.0],
        2.0,
        1.0,
    );
    Model::validate(spec).expect("unit-jump instance is valid")
}

/// One state, two actions. Every jump is a self-loop, so the value function
/// solves a scalar linear equation: `v(t) = g + (T - t) · min_u l`.
pub fn single_state_model() -> Model {
    let spec = spec(
        &["s0"],
        &["a0", "a1"],
        vec![0.0, 1.0],
        vec![1.0],
        vec![vec![1.0]],
        vec![vec![vec![1.0, 1.0]]],
        vec![vec![vec![0.7, 0.3]]],
        vec![0.4],
        2.0,
        1.0,
    );
    Model::validate(spec).expect("single-state instance is valid")
}
