//! Problem data for controlled marked point processes.
//!
//! A model fixes a finite mark space `K`, a finite action space `U`, a time
//! horizon `T`, and piecewise-constant coefficients on a shared time grid:
//! the base jump rate `a(t)` (so `A_t = ∫₀ᵗ a(s) ds` is continuous and
//! piecewise linear), the mark distribution `φ_t(y)`, the controlled rate
//! modifier `r_t(y, u)`, the running cost `l_t(x, u)` and the terminal cost
//! `g(x)`. The bounds `0 ≤ r ≤ C_r` (with `C_r > 1`) and `|l| ≤ C_l` are
//! part of the data and enforced at validation time.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Schema tag expected in model JSON files.
pub const MODEL_SCHEMA: &str = "mpp-control/model/v1";

/// Mark-distribution rows must sum to 1 within this tolerance.
pub const DIST_TOL: f64 = 1e-12;

/// Upper end of the bisection bracket used when searching for the minimal
/// admissible HJB weight.
const BETA_SEARCH_LIMIT: f64 = 1e6;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("schema tag `{found}`, expected `{expected}`")]
    Schema { found: String, expected: &'static str },
    #[error("bad grid: {0}")]
    BadGrid(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("mark distribution in cell {cell} is not a probability vector (sum = {sum})")]
    MalformedDistribution { cell: usize, sum: f64 },
    #[error("bound violation: {0}")]
    BoundViolation(String),
    #[error("time {t} outside horizon [0, {horizon}]")]
    OutOfHorizon { t: f64, horizon: f64 },
    #[error("no admissible beta below {limit} for L = {lipschitz}")]
    NoRoot { limit: f64, lipschitz: f64 },
    #[error("unknown state `{0}`")]
    UnknownState(String),
    #[error("unknown action `{0}`")]
    UnknownAction(String),
}

/// Raw problem data, mirrored field-for-field by the JSON model file.
///
/// Shapes: `time_grid` has `M + 1` nodes `0 = t_0 < … < t_M = horizon`;
/// `base_rate`, `mark_dist`, `rate_modifier` and `running_cost` have one
/// entry per cell `[t_j, t_{j+1})`. Per cell, `mark_dist[j][y]` is a
/// probability vector over states, `rate_modifier[j][y][u]` and
/// `running_cost[j][x][u]` are states × actions matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub schema: String,
    pub states: Vec<String>,
    pub actions: Vec<String>,
    pub horizon: f64,
    pub time_grid: Vec<f64>,
    pub base_rate: Vec<f64>,
    pub mark_dist: Vec<Vec<f64>>,
    pub rate_modifier: Vec<Vec<Vec<f64>>>,
    pub running_cost: Vec<Vec<Vec<f64>>>,
    pub terminal_cost: Vec<f64>,
    #[serde(rename = "C_r")]
    pub c_r: f64,
    #[serde(rename = "C_l")]
    pub c_l: f64,
}

impl ModelSpec {
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let spec: ModelSpec = serde_json::from_str(text)
            .map_err(|e| ModelError::Shape(format!("model JSON: {e}")))?;
        if spec.schema != MODEL_SCHEMA {
            return Err(ModelError::Schema {
                found: spec.schema,
                expected: MODEL_SCHEMA,
            });
        }
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model spec serializes")
    }
}

/// Lipschitz data of the hamiltonian generator: `L = max |r - 1|` over all
/// cells, marks and actions, and `L' = 0` (no dependence on the Y argument).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LipschitzConstants {
    pub l: f64,
    pub l_prime: f64,
}

/// The three weight thresholds used by the solvers and checks.
///
/// `beta_bsde` exceeds `L² + 2L'` (well-posedness of the backward equation;
/// the margin is fixed to +1 so runs are reproducible), `beta_hjb` is the
/// minimal weight admitted by the HJB contraction inequality, and
/// `beta_girsanov = 3 + C_r⁴` is the exponent controlling second moments of
/// the likelihood ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BetaReport {
    pub beta_bsde: f64,
    pub beta_hjb: f64,
    pub beta_girsanov: f64,
}

/// Left-hand side of the contraction condition for the HJB weight: the
/// equation is solvable for every `beta` with `hjb_weight_gap(l, beta) < 1`.
pub fn hjb_weight_gap(l: f64, beta: f64) -> f64 {
    let k = 2.0 * l * l + 3.0;
    2.0 * k / (beta - 1.0) + 8.0 * k / beta * (1.0 + 1.0 / beta)
}

/// Contraction constants of one solver sweep at weight `beta`:
/// `c1 = 2(2L²+3)/(β−1)` and `c2 = (8(2L²+3)/β)(1+1/β)`; the per-iteration
/// ratio of the weighted norms is bounded by `c1 + c2`.
pub fn contraction_constants(l: f64, beta: f64) -> (f64, f64) {
    let k = 2.0 * l * l + 3.0;
    (2.0 * k / (beta - 1.0), 8.0 * k / beta * (1.0 + 1.0 / beta))
}

/// A validated model. Immutable once constructed; cheap to share between
/// worker threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    /// A_t at every grid node (exact piecewise-linear accumulation).
    cum_a: Vec<f64>,
}

impl Model {
    /// Checks every structural invariant of the raw data and returns the
    /// validated model.
    pub fn validate(spec: ModelSpec) -> Result<Model, ModelError> {
        let n_k = spec.states.len();
        let n_u = spec.actions.len();
        if n_k == 0 {
            return Err(ModelError::Shape("empty state set".into()));
        }
        if n_u == 0 {
            return Err(ModelError::Shape("empty action set".into()));
        }
        if !(spec.horizon > 0.0) || !spec.horizon.is_finite() {
            return Err(ModelError::BadGrid(format!(
                "horizon must be positive and finite, got {}",
                spec.horizon
            )));
        }
        if spec.time_grid.len() < 2 {
            return Err(ModelError::BadGrid("grid needs at least two nodes".into()));
        }
        if spec.time_grid[0] != 0.0 {
            return Err(ModelError::BadGrid(format!(
                "grid must start at 0, got {}",
                spec.time_grid[0]
            )));
        }
        if *spec.time_grid.last().unwrap() != spec.horizon {
            return Err(ModelError::BadGrid(format!(
                "grid must end at the horizon {}, got {}",
                spec.horizon,
                spec.time_grid.last().unwrap()
            )));
        }
        if spec.time_grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(ModelError::BadGrid("grid nodes must be strictly increasing".into()));
        }
        let m = spec.time_grid.len() - 1;
        if spec.base_rate.len() != m
            || spec.mark_dist.len() != m
            || spec.rate_modifier.len() != m
            || spec.running_cost.len() != m
        {
            return Err(ModelError::Shape(format!(
                "per-cell data must have {m} entries (one per grid cell)"
            )));
        }
        if spec.terminal_cost.len() != n_k {
            return Err(ModelError::Shape("terminal cost must have one entry per state".into()));
        }
        if !spec.terminal_cost.iter().all(|g| g.is_finite()) {
            return Err(ModelError::BoundViolation("terminal cost must be finite".into()));
        }
        if !(spec.c_r > 1.0) || !spec.c_r.is_finite() {
            return Err(ModelError::BoundViolation(format!(
                "C_r must be finite and > 1, got {}",
                spec.c_r
            )));
        }
        if !(spec.c_l > 0.0) || !spec.c_l.is_finite() {
            return Err(ModelError::BoundViolation(format!(
                "C_l must be finite and > 0, got {}",
                spec.c_l
            )));
        }
        for (j, &a) in spec.base_rate.iter().enumerate() {
            if !(a >= 0.0) || !a.is_finite() {
                return Err(ModelError::BoundViolation(format!(
                    "base rate in cell {j} must be a finite nonnegative real, got {a}"
                )));
            }
        }
        for (j, phi) in spec.mark_dist.iter().enumerate() {
            if phi.len() != n_k {
                return Err(ModelError::Shape(format!(
                    "mark distribution in cell {j} must have one entry per state"
                )));
            }
            if phi.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(ModelError::MalformedDistribution {
                    cell: j,
                    sum: f64::NAN,
                });
            }
            let sum: f64 = phi.iter().sum();
            if (sum - 1.0).abs() > DIST_TOL {
                return Err(ModelError::MalformedDistribution { cell: j, sum });
            }
        }
        for (j, r_cell) in spec.rate_modifier.iter().enumerate() {
            if r_cell.len() != n_k || r_cell.iter().any(|row| row.len() != n_u) {
                return Err(ModelError::Shape(format!(
                    "rate modifier in cell {j} must be states x actions"
                )));
            }
            for (y, row) in r_cell.iter().enumerate() {
                for (u, &r) in row.iter().enumerate() {
                    if !r.is_finite() || r < 0.0 || r > spec.c_r {
                        return Err(ModelError::BoundViolation(format!(
                            "r(cell {j}, mark {y}, action {u}) = {r} outside [0, C_r = {}]",
                            spec.c_r
                        )));
                    }
                }
            }
        }
        for (j, l_cell) in spec.running_cost.iter().enumerate() {
            if l_cell.len() != n_k || l_cell.iter().any(|row| row.len() != n_u) {
                return Err(ModelError::Shape(format!(
                    "running cost in cell {j} must be states x actions"
                )));
            }
            for (x, row) in l_cell.iter().enumerate() {
                for (u, &l) in row.iter().enumerate() {
                    if !l.is_finite() || l.abs() > spec.c_l {
                        return Err(ModelError::BoundViolation(format!(
                            "|l(cell {j}, state {x}, action {u})| = {} exceeds C_l = {}",
                            l.abs(),
                            spec.c_l
                        )));
                    }
                }
            }
        }

        let mut cum_a = Vec::with_capacity(m + 1);
        cum_a.push(0.0);
        for j in 0..m {
            let da = spec.base_rate[j] * (spec.time_grid[j + 1] - spec.time_grid[j]);
            cum_a.push(cum_a[j] + da);
        }
        Ok(Model { spec, cum_a })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn states(&self) -> &[String] {
        &self.spec.states
    }

    pub fn actions(&self) -> &[String] {
        &self.spec.actions
    }

    pub fn n_states(&self) -> usize {
        self.spec.states.len()
    }

    pub fn n_actions(&self) -> usize {
        self.spec.actions.len()
    }

    pub fn horizon(&self) -> f64 {
        self.spec.horizon
    }

    pub fn time_grid(&self) -> &[f64] {
        &self.spec.time_grid
    }

    pub fn n_cells(&self) -> usize {
        self.spec.time_grid.len() - 1
    }

    pub fn base_rate(&self, cell: usize) -> f64 {
        self.spec.base_rate[cell]
    }

    pub fn mark_dist(&self, cell: usize) -> &[f64] {
        &self.spec.mark_dist[cell]
    }

    pub fn rate(&self, cell: usize, y: usize, u: usize) -> f64 {
        self.spec.rate_modifier[cell][y][u]
    }

    pub fn cost(&self, cell: usize, x: usize, u: usize) -> f64 {
        self.spec.running_cost[cell][x][u]
    }

    pub fn terminal_cost(&self) -> &[f64] {
        &self.spec.terminal_cost
    }

    pub fn c_r(&self) -> f64 {
        self.spec.c_r
    }

    pub fn c_l(&self) -> f64 {
        self.spec.c_l
    }

    pub fn state_index(&self, name: &str) -> Result<usize, ModelError> {
        self.spec
            .states
            .iter()
            .position(|s| s == name)
            .ok_or_else(|| ModelError::UnknownState(name.to_string()))
    }

    pub fn action_index(&self, name: &str) -> Result<usize, ModelError> {
        self.spec
            .actions
            .iter()
            .position(|a| a == name)
            .ok_or_else(|| ModelError::UnknownAction(name.to_string()))
    }

    /// Index of the grid cell containing `t`, with `t = horizon` mapped to
    /// the last cell. Cells are half-open: `t ∈ [t_j, t_{j+1}) → j`.
    pub fn cell_index(&self, t: f64) -> usize {
        let grid = &self.spec.time_grid;
        let pos = grid.partition_point(|&g| g <= t);
        pos.saturating_sub(1).min(grid.len() - 2)
    }

    /// `A_t = Σ_j a_j · |cell_j ∩ [0, t]|`, exact for the piecewise-constant
    /// rate. Nondecreasing and continuous in `t`.
    pub fn cumulative_a(&self, t: f64) -> Result<f64, ModelError> {
        if !(0.0..=self.spec.horizon).contains(&t) {
            return Err(ModelError::OutOfHorizon {
                t,
                horizon: self.spec.horizon,
            });
        }
        let j = self.cell_index(t);
        Ok(self.cum_a[j] + self.spec.base_rate[j] * (t - self.spec.time_grid[j]))
    }

    /// A_T.
    pub fn total_a(&self) -> f64 {
        *self.cum_a.last().unwrap()
    }

    /// A_t at grid node `j`.
    pub fn cum_a_node(&self, j: usize) -> f64 {
        self.cum_a[j]
    }

    /// The largest base rate over all cells (envelope for thinning).
    pub fn max_base_rate(&self) -> f64 {
        self.spec.base_rate.iter().cloned().fold(0.0, f64::max)
    }

    /// `Σ_y r(y, u) φ(y)` on a cell: the factor multiplying the base rate in
    /// the controlled jump intensity.
    pub fn tilt_sum(&self, cell: usize, u: usize) -> f64 {
        self.spec.rate_modifier[cell]
            .iter()
            .zip(&self.spec.mark_dist[cell])
            .map(|(row, &phi)| row[u] * phi)
            .sum()
    }

    /// Inverse of `t ↦ A_t` for `a_target ∈ [0, A_T]`; cells with zero rate
    /// carry no A-mass and are skipped.
    pub fn inverse_a(&self, a_target: f64) -> f64 {
        debug_assert!(a_target >= 0.0 && a_target <= self.total_a() + 1e-12);
        let mut j = self.cum_a.partition_point(|&c| c < a_target);
        // partition_point gives the first node with cum >= target; the cell
        // covering the target ends at that node.
        j = j.saturating_sub(1).min(self.n_cells() - 1);
        while self.spec.base_rate[j] == 0.0 && j + 1 < self.n_cells() {
            j += 1;
        }
        let a_j = self.spec.base_rate[j];
        if a_j == 0.0 {
            return self.spec.time_grid[j + 1];
        }
        let t = self.spec.time_grid[j] + (a_target - self.cum_a[j]) / a_j;
        t.clamp(self.spec.time_grid[j], self.spec.time_grid[j + 1])
    }

    /// `L = max |r - 1|` over all cells, marks and actions; `L' = 0`.
    pub fn lipschitz_constants(&self) -> LipschitzConstants {
        let l = self
            .spec
            .rate_modifier
            .iter()
            .flatten()
            .flatten()
            .map(|r| (r - 1.0).abs())
            .fold(0.0, f64::max);
        LipschitzConstants { l, l_prime: 0.0 }
    }

    /// Weight exceeding `L² + 2L'` by the fixed margin 1: the backward
    /// equation is well posed at this weight.
    pub fn beta_bsde(&self) -> f64 {
        let lip = self.lipschitz_constants();
        lip.l * lip.l + 2.0 * lip.l_prime + 1.0
    }

    /// `3 + C_r⁴`: the exponent controlling second moments of the
    /// likelihood ratio (γ = 2).
    pub fn beta_girsanov(&self) -> f64 {
        3.0 + self.spec.c_r.powi(4)
    }

    /// Computes the three weight thresholds. `beta_hjb` is found by
    /// bisection on `(1, 10⁶)` to absolute tolerance 1e-9.
    pub fn beta_thresholds(&self) -> Result<BetaReport, ModelError> {
        let lip = self.lipschitz_constants();
        let beta_bsde = self.beta_bsde();
        let beta_girsanov = self.beta_girsanov();

        if hjb_weight_gap(lip.l, BETA_SEARCH_LIMIT) >= 1.0 {
            return Err(ModelError::NoRoot {
                limit: BETA_SEARCH_LIMIT,
                lipschitz: lip.l,
            });
        }
        let mut lo = 1.0;
        let mut hi = BETA_SEARCH_LIMIT;
        while hi - lo > 1e-9 {
            let mid = 0.5 * (lo + hi);
            if hjb_weight_gap(lip.l, mid) < 1.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(BetaReport {
            beta_bsde,
            beta_hjb: hi,
            beta_girsanov,
        })
    }

    /// Splits every grid cell into `substeps` equal parts, repeating the
    /// per-cell data. The refined model carries exactly the same
    /// coefficients as functions of time.
    pub fn refine(&self, substeps: usize) -> Model {
        assert!(substeps >= 1, "substeps must be >= 1");
        if substeps == 1 {
            return self.clone();
        }
        let m = self.n_cells();
        let mut grid = Vec::with_capacity(m * substeps + 1);
        grid.push(0.0);
        let mut base_rate = Vec::with_capacity(m * substeps);
        let mut mark_dist = Vec::with_capacity(m * substeps);
        let mut rate_modifier = Vec::with_capacity(m * substeps);
        let mut running_cost = Vec::with_capacity(m * substeps);
        for j in 0..m {
            let (t0, t1) = (self.spec.time_grid[j], self.spec.time_grid[j + 1]);
            for k in 1..=substeps {
                if k == substeps {
                    grid.push(t1);
                } else {
                    grid.push(t0 + (t1 - t0) * k as f64 / substeps as f64);
                }
                base_rate.push(self.spec.base_rate[j]);
                mark_dist.push(self.spec.mark_dist[j].clone());
                rate_modifier.push(self.spec.rate_modifier[j].clone());
                running_cost.push(self.spec.running_cost[j].clone());
            }
        }
        let spec = ModelSpec {
            schema: self.spec.schema.clone(),
            states: self.spec.states.clone(),
            actions: self.spec.actions.clone(),
            horizon: self.spec.horizon,
            time_grid: grid,
            base_rate,
            mark_dist,
            rate_modifier,
            running_cost,
            terminal_cost: self.spec.terminal_cost.clone(),
            c_r: self.spec.c_r,
            c_l: self.spec.c_l,
        };
        Model::validate(spec).expect("refinement preserves validity")
    }

    /// Refines so that the total cell count is at least `min_cells`.
    pub fn refine_to(&self, min_cells: usize) -> Model {
        let per = min_cells.div_ceil(self.n_cells()).max(1);
        self.refine(per)
    }
}
