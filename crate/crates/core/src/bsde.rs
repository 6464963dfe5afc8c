//! Pathwise and Monte Carlo certification of the backward-equation
//! identities: the Itô-type change-of-variable formulas for stochastic
//! fields driven by the jump measure, the pathwise backward-equation
//! residual, the weighted energy identity, and the a priori stability
//! estimates.

use serde::Serialize;
use thiserror::Error;

use crate::hamiltonian::hamiltonian;
use crate::hjb::{hjb_march, ValueField};
use crate::model::{Model, ModelSpec};
use crate::pathwise::{mean_se, par_paths, LaneIntegrator};
use crate::sim::{simulate_reference, Trajectory, REFERENCE_STREAM_BLOCK};

#[derive(Debug, Error)]
pub enum CheckError {
    #[error("beta = {beta} must exceed 2L' + L² = {required} for the pooled Lipschitz constant")]
    BetaTooSmall { beta: f64, required: f64 },
    #[error("models are not comparable: {0}")]
    Incompatible(String),
}

/// Deterministic drift field `f̂(t, x)`, piecewise constant per grid cell.
#[derive(Debug, Clone)]
pub struct DriftField {
    pub values: Vec<Vec<f64>>,
}

impl DriftField {
    pub fn from_fn(model: &Model, mut f: impl FnMut(usize, usize) -> f64) -> DriftField {
        let values = (0..model.n_cells())
            .map(|c| (0..model.n_states()).map(|x| f(c, x)).collect())
            .collect();
        DriftField { values }
    }

    pub fn zeros(model: &Model) -> DriftField {
        Self::from_fn(model, |_, _| 0.0)
    }
}

/// Deterministic kernel field `V(t, x, y)`, piecewise constant per grid
/// cell; the integrand of the martingale part of a backward field.
#[derive(Debug, Clone)]
pub struct KernelField {
    pub values: Vec<Vec<Vec<f64>>>,
}

impl KernelField {
    pub fn from_fn(model: &Model, mut f: impl FnMut(usize, usize, usize) -> f64) -> KernelField {
        let values = (0..model.n_cells())
            .map(|c| {
                (0..model.n_states())
                    .map(|x| (0..model.n_states()).map(|y| f(c, x, y)).collect())
                    .collect()
            })
            .collect();
        KernelField { values }
    }

    pub fn zeros(model: &Model) -> KernelField {
        Self::from_fn(model, |_, _, _| 0.0)
    }
}

/// Solves the linear backward system
/// `-dw(t,x)/dA = f̂(t,x) + Σ_y (w(t,y) − w(t,x)) φ_t(y)`, `w(T,·) = g`,
/// with one Heun (trapezoidal predictor-corrector) step per grid cell.
pub fn linear_value_field(model: &Model, drift: &DriftField) -> ValueField {
    assert_eq!(drift.values.len(), model.n_cells());
    let n = model.n_states();
    let cells = model.n_cells();
    let rate = |c: usize, w: &[f64]| -> Vec<f64> {
        let phi = model.mark_dist(c);
        let mixed: f64 = (0..n).map(|y| w[y] * phi[y]).sum();
        (0..n).map(|x| drift.values[c][x] + mixed - w[x]).collect()
    };
    let mut values = vec![Vec::new(); cells + 1];
    values[cells] = model.terminal_cost().to_vec();
    for c in (0..cells).rev() {
        let da = model.cum_a_node(c + 1) - model.cum_a_node(c);
        let w = &values[c + 1];
        let k1 = rate(c, w);
        let predictor: Vec<f64> = (0..n).map(|x| w[x] + da * k1[x]).collect();
        let k2 = rate(c, &predictor);
        values[c] = (0..n)
            .map(|x| w[x] + 0.5 * da * (k1[x] + k2[x]))
            .collect();
    }
    ValueField {
        grid: model.time_grid().to_vec(),
        values,
    }
}

/// Residuals of the two Itô-type identities, evaluated at the horizon.
/// Both identities are exact algebra for arbitrary deterministic fields, so
/// the residuals are pure floating-point noise and must stay below
/// `1e-9 · (1 + n_jumps)`.
#[derive(Debug, Clone, Serialize)]
pub struct ItoResiduals {
    pub residual_prima: f64,
    pub residual_seconda: f64,
    pub n_jumps: usize,
}

/// Builds the random field `v(t,x) = v0(x) + ∫₀ᵗ f̂(s,x) dA_s + ∫₀ᵗ∫ V dq`
/// along one trajectory (all integrals exact for piecewise-constant data)
/// and evaluates both expansion identities for `v(t, X_t)` at `t = T`:
/// the first against the jump measure, the second against its compensated
/// form.
pub fn ito_identity_check(
    model: &Model,
    drift: &DriftField,
    kernel: &KernelField,
    v0: &[f64],
    traj: &Trajectory,
) -> ItoResiduals {
    let n = model.n_states();
    assert_eq!(v0.len(), n);
    assert_eq!(drift.values.len(), model.n_cells());
    assert_eq!(kernel.values.len(), model.n_cells());
    let horizon = model.horizon();

    // Event times: grid nodes strictly inside the window plus jumps, ending
    // at the horizon. Coinciding times are harmless (zero-length segments).
    let mut events: Vec<(f64, Option<usize>)> = model
        .time_grid()
        .iter()
        .filter(|&&g| g > traj.start_time && g < horizon)
        .map(|&g| (g, None))
        .collect();
    events.extend(traj.jumps.iter().map(|&(t, y)| (t, Some(y))));
    events.push((horizon, None));
    events.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let mut v: Vec<f64> = v0.to_vec();
    let mut t_cur = traj.start_time;
    let mut x_cur = traj.start_state;
    let mut i_f = 0.0; // ∫ f̂(s, X_s) dA
    let mut i_vcomp = 0.0; // ∫ Σ_y V(s, X_s, y) φ(y) dA
    let mut i_hcomp = 0.0; // ∫ Σ_y (v(s,y) − v(s,X_s) + V(s,y,y)) φ(y) dA
    let mut i_second = 0.0; // ∫ Σ_y (v(s,y) − v(s,X_s) + V(s,y,y) − V(s,X_s,y)) φ(y) dA
    let mut p_sum = 0.0; // Σ_n v(T_n−,ξ_n) − v(T_n−,X_{T_n−}) + V(T_n,ξ_n,ξ_n)

    for &(t_next, jump_mark) in &events {
        if t_next > t_cur {
            let c = model.cell_index(t_cur);
            let phi = model.mark_dist(c);
            let da =
                model.cumulative_a(t_next).unwrap() - model.cumulative_a(t_cur).unwrap();
            // Per-state dA-slope of the field between jumps.
            let slope: Vec<f64> = (0..n)
                .map(|x| {
                    let comp: f64 = (0..n).map(|y| kernel.values[c][x][y] * phi[y]).sum();
                    drift.values[c][x] - comp
                })
                .collect();
            let v_hi: Vec<f64> = (0..n).map(|x| v[x] + slope[x] * da).collect();

            i_f += drift.values[c][x_cur] * da;
            i_vcomp += (0..n)
                .map(|y| kernel.values[c][x_cur][y] * phi[y])
                .sum::<f64>()
                * da;
            let h_of = |w: &[f64]| -> f64 {
                (0..n)
                    .map(|y| (w[y] - w[x_cur] + kernel.values[c][y][y]) * phi[y])
                    .sum()
            };
            let second_of = |w: &[f64]| -> f64 {
                (0..n)
                    .map(|y| {
                        (w[y] - w[x_cur] + kernel.values[c][y][y] - kernel.values[c][x_cur][y])
                            * phi[y]
                    })
                    .sum()
            };
            // The integrands vary linearly in A between events, so the
            // trapezoid in dA is exact.
            i_hcomp += 0.5 * da * (h_of(&v) + h_of(&v_hi));
            i_second += 0.5 * da * (second_of(&v) + second_of(&v_hi));
            v = v_hi;
            t_cur = t_next;
        }
        if let Some(mark) = jump_mark {
            let c = model.cell_index(t_next);
            p_sum += v[mark] - v[x_cur] + kernel.values[c][mark][mark];
            for x in 0..n {
                v[x] += kernel.values[c][x][mark];
            }
            x_cur = mark;
        }
    }

    let lhs = v[x_cur] - v0[traj.start_state];
    let rhs_prima = i_f + p_sum - i_vcomp;
    let rhs_seconda = i_f + p_sum + (i_second - i_hcomp);
    ItoResiduals {
        residual_prima: (lhs - rhs_prima).abs(),
        residual_seconda: (lhs - rhs_seconda).abs(),
        n_jumps: traj.n_jumps(),
    }
}

/// The solution pair read off a value field along one trajectory:
/// `Y_s = v(s, X_s)` and `Z_s(y) = v(s, y) − v(s, X_{s−})`. With
/// deterministic coefficients the field is continuous in time, so the left
/// limit only matters through the pre-jump state.
pub struct BsdePathFields<'a> {
    v: &'a ValueField,
    traj: &'a Trajectory,
}

impl<'a> BsdePathFields<'a> {
    pub fn new(v: &'a ValueField, traj: &'a Trajectory) -> BsdePathFields<'a> {
        BsdePathFields { v, traj }
    }

    /// `Y_s = v(s, X_s)`.
    pub fn y_at(&self, s: f64) -> f64 {
        self.v.eval(s, self.traj.state_at(s).expect("s within path window"))
    }

    /// `Z_s(y) = v(s, y) − v(s, X_{s−})`.
    pub fn z_at(&self, s: f64, y: usize) -> f64 {
        let pre = self.traj.state_before(s).expect("s within path window");
        self.v.eval(s, y) - self.v.eval(s, pre)
    }
}

/// Pathwise residual of the backward equation under the identification
/// `Y_s = v(s, X_s)`, `Z_s(y) = v(s, y) − v(s, X_{s−})`:
///
/// ```text
/// | Y_{t0} + ∫∫ Z dq − g(X_T) − ∫ f(s, X_s, Z_s(·)) dA_s |
/// ```
///
/// For the exact solution the residual vanishes; for a grid solution it
/// shrinks at first order in the cell width.
pub fn bsde_residual(model: &Model, v: &ValueField, traj: &Trajectory) -> f64 {
    let n = model.n_states();
    let horizon = model.horizon();

    let mut breaks: Vec<f64> = model
        .time_grid()
        .iter()
        .chain(v.grid.iter())
        .copied()
        .collect();
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    breaks.dedup();

    let fields = BsdePathFields::new(v, traj);
    let mut jump_sum = 0.0;
    for &(t, y) in &traj.jumps {
        jump_sum += fields.z_at(t, y);
    }

    // ∫ Σ_y Z_s(y) φ(y) dA and ∫ f(s, X_s, Z_s) dA over the inter-jump
    // spans, split at every grid breakpoint; Z is linear on each piece.
    let mut i_zcomp = 0.0;
    let mut i_f = 0.0;
    let mut integrate_piece = |lo: f64, hi: f64, x: usize| {
        if hi <= lo {
            return;
        }
        let c = model.cell_index(lo);
        let phi = model.mark_dist(c);
        let da = model.cumulative_a(hi).unwrap() - model.cumulative_a(lo).unwrap();
        let z_at = |s: f64| -> Vec<f64> {
            let vx = v.eval(s, x);
            (0..n).map(|y| v.eval(s, y) - vx).collect()
        };
        let (z_lo, z_hi) = (z_at(lo), z_at(hi));
        let comp = |z: &[f64]| -> f64 { (0..n).map(|y| z[y] * phi[y]).sum() };
        i_zcomp += 0.5 * da * (comp(&z_lo) + comp(&z_hi));
        i_f += 0.5
            * da
            * (hamiltonian(model, c, x, &z_lo).value + hamiltonian(model, c, x, &z_hi).value);
    };
    for (lo, hi, x) in crate::pathwise::spans(traj, horizon) {
        let mut cur = lo;
        let from = breaks.partition_point(|&b| b <= lo);
        for &b in &breaks[from..] {
            if b >= hi {
                break;
            }
            integrate_piece(cur, b, x);
            cur = b;
        }
        integrate_piece(cur, hi, x);
    }

    let x_t = traj.state_at(horizon).expect("horizon after start");
    let y0 = fields.y_at(traj.start_time);
    (y0 + jump_sum - i_zcomp - model.terminal_cost()[x_t] - i_f).abs()
}

/// Both sides of the weighted energy identity at `t = 0` for linear data
/// (terminal value `g(X_T)`, generator `f̂(s, X_s)`), plus the linear a
/// priori bound with constants `c1 = 4(1 + 1/β)`, `c2 = (8/β)(1 + 1/β)`.
#[derive(Debug, Clone, Serialize)]
pub struct EnergyReport {
    pub beta: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub rel_error: f64,
    pub combined_se: f64,
    pub bound_lhs: f64,
    pub bound_rhs: f64,
    pub bound_se: f64,
    pub c1: f64,
    pub c2: f64,
}

/// Monte Carlo check of the energy identity
///
/// ```text
/// E|Y_0|² + β E ∫ e^{βA} |Y|² dA + E ∫∫ e^{βA} |Z(y)|² φ(dy) dA
///   = E e^{βA_T} |ξ|² + 2 E ∫ e^{βA} Y f̂ dA
/// ```
///
/// with `Y_s = w(s, X_s)` built from the linear field for `f̂` and
/// `Z_s(y) = w(s, y) − w(s, X_s)`. Callers assert
/// `|lhs − rhs| ≤ 3 · combined_se + grid tolerance`, and the same for the
/// bound row.
pub fn energy_identity_check(
    model: &Model,
    drift: &DriftField,
    x0: usize,
    beta: f64,
    n_paths: usize,
    seed: u64,
) -> EnergyReport {
    assert!(beta > 0.0);
    let w = linear_value_field(model, drift);
    let n = model.n_states();
    let integ = LaneIntegrator::new(model, &[], |_, mc, x, s| {
        let weight = (beta * model.cumulative_a(s).unwrap()).exp();
        let y = w.eval(s, x);
        let phi = model.mark_dist(mc);
        let z2: f64 = (0..n)
            .map(|yy| {
                let z = w.eval(s, yy) - y;
                z * z * phi[yy]
            })
            .sum();
        let f = drift.values[mc][x];
        [weight * y * y, weight * z2, weight * y * f, weight * f * f]
    });
    let y0 = w.at_start(x0);
    let weight_t = (beta * model.total_a()).exp();
    let g = model.terminal_cost();

    let rows = par_paths(n_paths, |i| {
        let traj = simulate_reference(model, 0.0, x0, seed, REFERENCE_STREAM_BLOCK + i);
        let [ay, az, ayf, af2] = integ.integrate(&traj);
        let xi = g[traj.state_at(model.horizon()).unwrap()];
        let xi2 = weight_t * xi * xi;
        (ay, az, ayf, af2, xi2)
    });

    let (c1, c2) = (4.0 * (1.0 + 1.0 / beta), 8.0 / beta * (1.0 + 1.0 / beta));
    let lhs_rows: Vec<f64> = rows
        .iter()
        .map(|(ay, az, ..)| y0 * y0 + beta * ay + az)
        .collect();
    let rhs_rows: Vec<f64> = rows
        .iter()
        .map(|(_, _, ayf, _, xi2)| xi2 + 2.0 * ayf)
        .collect();
    let diff_rows: Vec<f64> = lhs_rows
        .iter()
        .zip(&rhs_rows)
        .map(|(l, r)| l - r)
        .collect();
    let bound_lhs_rows: Vec<f64> = rows.iter().map(|(ay, az, ..)| ay + az).collect();
    let bound_rhs_rows: Vec<f64> = rows
        .iter()
        .map(|(_, _, _, af2, xi2)| c1 * xi2 + c2 * af2)
        .collect();
    let bound_diff: Vec<f64> = bound_rhs_rows
        .iter()
        .zip(&bound_lhs_rows)
        .map(|(r, l)| r - l)
        .collect();

    let (lhs, _) = mean_se(&lhs_rows);
    let (rhs, _) = mean_se(&rhs_rows);
    let (_, combined_se) = mean_se(&diff_rows);
    let (bound_lhs, _) = mean_se(&bound_lhs_rows);
    let (bound_rhs, _) = mean_se(&bound_rhs_rows);
    let (_, bound_se) = mean_se(&bound_diff);
    let scale = lhs.abs().max(rhs.abs());
    EnergyReport {
        beta,
        lhs,
        rhs,
        rel_error: if scale == 0.0 {
            0.0
        } else {
            (lhs - rhs).abs() / scale
        },
        combined_se,
        bound_lhs,
        bound_rhs,
        bound_se,
        c1,
        c2,
    }
}

/// Weighted-norm stability comparison of two backward solutions under a
/// shared jump mechanism.
#[derive(Debug, Clone, Serialize)]
pub struct AprioriReport {
    pub beta: f64,
    pub beta_margin: f64,
    pub lhs_y: f64,
    pub rhs_y: f64,
    pub slack_se_y: f64,
    pub pass_y: bool,
    pub lhs_z: f64,
    pub rhs_z: f64,
    pub slack_se_z: f64,
    pub pass_z: bool,
}

impl AprioriReport {
    pub fn pass(&self) -> bool {
        self.pass_y && self.pass_z
    }
}

fn require_shared_mechanism(a: &ModelSpec, b: &ModelSpec) -> Result<(), CheckError> {
    if a.states != b.states {
        return Err(CheckError::Incompatible("state sets differ".into()));
    }
    if a.time_grid != b.time_grid {
        return Err(CheckError::Incompatible("time grids differ".into()));
    }
    if a.base_rate != b.base_rate {
        return Err(CheckError::Incompatible("base rates differ".into()));
    }
    if a.mark_dist != b.mark_dist {
        return Err(CheckError::Incompatible("mark distributions differ".into()));
    }
    Ok(())
}

/// Checks the a priori estimates for the difference of the two solutions:
/// with `β_L = β − 2L' − L²` (pooled Lipschitz constant) and
/// `f̄ = f¹ − f²` evaluated along the second solution's field,
///
/// ```text
/// |Ȳ|²_β ≤ (2/β_L) E e^{βA_T} |ξ̄|² + (4/β_L²) E ∫ e^{βA} |f̄|² dA
/// ‖Z̄‖²_β ≤ (2 + 16/β_L) E e^{βA_T} |ξ̄|²
///            + (2/β_L)(1 + 16/β_L) E ∫ e^{βA} |f̄|² dA
/// ```
///
/// Both inequalities are asserted with a 3-standard-error slack.
pub fn apriori_check(
    model1: &Model,
    model2: &Model,
    x0: usize,
    beta: f64,
    n_paths: usize,
    seed: u64,
) -> Result<AprioriReport, CheckError> {
    require_shared_mechanism(model1.spec(), model2.spec())?;
    let pooled_l = model1
        .lipschitz_constants()
        .l
        .max(model2.lipschitz_constants().l);
    let required = pooled_l * pooled_l;
    if beta <= required {
        return Err(CheckError::BetaTooSmall { beta, required });
    }
    let beta_margin = beta - required;

    let v1 = hjb_march(model1, 1).expect("grid fine enough for marching");
    let v2 = hjb_march(model2, 1).expect("grid fine enough for marching");
    let n = model1.n_states();

    let integ = LaneIntegrator::new(model1, &[], |_, mc, x, s| {
        let weight = (beta * model1.cumulative_a(s).unwrap()).exp();
        let phi = model1.mark_dist(mc);
        let (y1, y2) = (v1.eval(s, x), v2.eval(s, x));
        let ybar = y1 - y2;
        let mut zbar2 = 0.0;
        let mut z2 = vec![0.0; n];
        for y in 0..n {
            let z1y = v1.eval(s, y) - y1;
            let z2y = v2.eval(s, y) - y2;
            z2[y] = z2y;
            let d = z1y - z2y;
            zbar2 += d * d * phi[y];
        }
        let fbar = hamiltonian(model1, mc, x, &z2).value - hamiltonian(model2, mc, x, &z2).value;
        [weight * ybar * ybar, weight * zbar2, weight * fbar * fbar]
    });

    let weight_t = (beta * model1.total_a()).exp();
    let (g1, g2) = (model1.terminal_cost(), model2.terminal_cost());
    let rows = par_paths(n_paths, |i| {
        let traj = simulate_reference(model1, 0.0, x0, seed, REFERENCE_STREAM_BLOCK + i);
        let [ybar2, zbar2, fbar2] = integ.integrate(&traj);
        let x_t = traj.state_at(model1.horizon()).unwrap();
        let xibar = g1[x_t] - g2[x_t];
        (ybar2, zbar2, fbar2, weight_t * xibar * xibar)
    });

    let y_coeff = (2.0 / beta_margin, 4.0 / (beta_margin * beta_margin));
    let z_coeff = (
        2.0 + 16.0 / beta_margin,
        2.0 / beta_margin * (1.0 + 16.0 / beta_margin),
    );
    let lhs_y_rows: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let rhs_y_rows: Vec<f64> = rows.iter().map(|r| y_coeff.0 * r.3 + y_coeff.1 * r.2).collect();
    let lhs_z_rows: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let rhs_z_rows: Vec<f64> = rows.iter().map(|r| z_coeff.0 * r.3 + z_coeff.1 * r.2).collect();

    let (lhs_y, _) = mean_se(&lhs_y_rows);
    let (rhs_y, _) = mean_se(&rhs_y_rows);
    let slack_y: Vec<f64> = rhs_y_rows
        .iter()
        .zip(&lhs_y_rows)
        .map(|(r, l)| r - l)
        .collect();
    let (margin_y, se_y) = mean_se(&slack_y);
    let (lhs_z, _) = mean_se(&lhs_z_rows);
    let (rhs_z, _) = mean_se(&rhs_z_rows);
    let slack_z: Vec<f64> = rhs_z_rows
        .iter()
        .zip(&lhs_z_rows)
        .map(|(r, l)| r - l)
        .collect();
    let (margin_z, se_z) = mean_se(&slack_z);

    Ok(AprioriReport {
        beta,
        beta_margin,
        lhs_y,
        rhs_y,
        slack_se_y: se_y,
        pass_y: margin_y >= -3.0 * se_y,
        lhs_z,
        rhs_z,
        slack_se_z: se_z,
        pass_z: margin_z >= -3.0 * se_z,
    })
}
