//! Likelihood ratios for the change of measure that tilts the jump
//! intensity, and Monte Carlo certification of their defining properties.
//!
//! Along a trajectory with jumps `(T_n, ξ_n)` and feedback control `u`,
//!
//! ```text
//! L_t = exp( ∫_{t0}^t Σ_y (1 − r_s(y, u_s)) φ_s(y) dA_s ) · Π_{T_n ≤ t} r_{T_n}(ξ_n, u_{T_n})
//! ```
//!
//! with the empty product equal to 1. The product is accumulated in the log
//! domain; a genuine zero factor short-circuits the path to `L ≡ 0` from
//! that jump on.

use serde::Serialize;

use crate::model::Model;
use crate::pathwise::{mean_se, par_paths, LaneIntegrator};
use crate::sim::{simulate_controlled, simulate_reference, Policy, Trajectory, REFERENCE_STREAM_BLOCK};

/// The running density sampled at the start time, at every jump (right
/// after the jump factor is applied), and at the horizon.
#[derive(Debug, Clone)]
pub struct LikelihoodPath {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl LikelihoodPath {
    /// `L_T`.
    pub fn terminal(&self) -> f64 {
        *self.values.last().unwrap()
    }
}

/// Exponent density `Σ_y (1 − r(y, u)) φ(y) = 1 − Σ_y r(y, u) φ(y)` on one
/// cell under the policy's action for state `x`.
fn exponent_lane<'a>(
    model: &'a Model,
    policy: &'a Policy,
) -> impl Fn(usize, usize, usize, f64) -> [f64; 1] + Sync + 'a {
    move |_, mc, x, s| [1.0 - model.tilt_sum(mc, policy.action_at(s, x))]
}

/// `L_T` for one trajectory, using a prebuilt exponent integrator.
fn terminal_with<F>(
    model: &Model,
    policy: &Policy,
    integ: &LaneIntegrator<'_, F, 1>,
    traj: &Trajectory,
) -> f64
where
    F: Fn(usize, usize, usize, f64) -> [f64; 1] + Sync,
{
    let [exponent] = integ.integrate(traj);
    let mut log_l = exponent;
    let mut x = traj.start_state;
    for &(t, y) in &traj.jumps {
        let r = model.rate(model.cell_index(t), y, policy.action_at(t, x));
        if r == 0.0 {
            return 0.0;
        }
        log_l += r.ln();
        x = y;
    }
    log_l.exp()
}

/// Computes the full likelihood path of one trajectory. The `dA` integral
/// in the exponent is exact for the piecewise-constant data.
pub fn likelihood(model: &Model, policy: &Policy, traj: &Trajectory) -> LikelihoodPath {
    // Breakpoints where the exponent density may change between jumps.
    let mut breaks: Vec<f64> = model
        .time_grid()
        .iter()
        .chain(policy.grid.iter())
        .copied()
        .collect();
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    breaks.dedup();

    let exponent_over = |lo: f64, hi: f64, x: usize| -> f64 {
        let mut acc = 0.0;
        let mut cur = lo;
        let from = breaks.partition_point(|&b| b <= lo);
        for &b in &breaks[from..] {
            if b >= hi {
                break;
            }
            acc += piece(model, policy, cur, b, x);
            cur = b;
        }
        acc + piece(model, policy, cur, hi, x)
    };

    fn piece(model: &Model, policy: &Policy, lo: f64, hi: f64, x: usize) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        let cell = model.cell_index(lo);
        let da = model.cumulative_a(hi).unwrap() - model.cumulative_a(lo).unwrap();
        (1.0 - model.tilt_sum(cell, policy.action_at(lo, x))) * da
    }

    let mut times = vec![traj.start_time];
    let mut values = vec![1.0];
    let mut log_l = 0.0;
    let mut dead = false;
    let mut t_prev = traj.start_time;
    let mut x = traj.start_state;
    for &(t, y) in &traj.jumps {
        log_l += exponent_over(t_prev, t, x);
        let r = model.rate(model.cell_index(t), y, policy.action_at(t, x));
        if r == 0.0 {
            dead = true;
        } else if !dead {
            log_l += r.ln();
        }
        times.push(t);
        values.push(if dead { 0.0 } else { log_l.exp() });
        t_prev = t;
        x = y;
    }
    log_l += exponent_over(t_prev, model.horizon(), x);
    times.push(model.horizon());
    values.push(if dead { 0.0 } else { log_l.exp() });
    LikelihoodPath { times, values }
}

/// Summary shape shared by the likelihood checks when serialized.
#[derive(Debug, Clone, Serialize)]
pub struct GirsanovReport {
    pub estimate: f64,
    pub std_error: f64,
    pub bound: Option<f64>,
    pub z_max: Option<f64>,
}

/// Monte Carlo estimate of `E L_T` over reference-measure paths started at
/// `(0, x0)`. The expectation equals 1; callers assert
/// `|estimate − 1| ≤ 3 · std_error`.
pub fn verify_normalization(
    model: &Model,
    policy: &Policy,
    x0: usize,
    n_paths: usize,
    seed: u64,
) -> GirsanovReport {
    let integ = LaneIntegrator::new(model, &policy.grid, exponent_lane(model, policy));
    let samples = par_paths(n_paths, |i| {
        let traj = simulate_reference(model, 0.0, x0, seed, REFERENCE_STREAM_BLOCK + i);
        terminal_with(model, policy, &integ, &traj)
    });
    let (estimate, std_error) = mean_se(&samples);
    GirsanovReport {
        estimate,
        std_error,
        bound: None,
        z_max: None,
    }
}

/// Monte Carlo estimate of `E L_T²` with the analytic bound
/// `exp((3 + C_r⁴) A_T / 2)` (second-moment exponent at γ = 2). Callers
/// assert `estimate ≤ bound + 3 · std_error`.
pub fn verify_moment_bound(
    model: &Model,
    policy: &Policy,
    x0: usize,
    n_paths: usize,
    seed: u64,
) -> GirsanovReport {
    let integ = LaneIntegrator::new(model, &policy.grid, exponent_lane(model, policy));
    let samples = par_paths(n_paths, |i| {
        let traj = simulate_reference(model, 0.0, x0, seed, REFERENCE_STREAM_BLOCK + i);
        let l = terminal_with(model, policy, &integ, &traj);
        l * l
    });
    let (estimate, std_error) = mean_se(&samples);
    GirsanovReport {
        estimate,
        std_error,
        bound: Some((0.5 * model.beta_girsanov() * model.total_a()).exp()),
        z_max: None,
    }
}

/// Two-route agreement for one mark (or for the total jump count).
#[derive(Debug, Clone, Serialize)]
pub struct MarkAgreement {
    pub state: String,
    pub direct: f64,
    pub direct_se: f64,
    pub reweighted: f64,
    pub reweighted_se: f64,
    pub z: f64,
}

/// Per-mark comparison of expected jump counts under the tilted measure:
/// direct counts from controlled simulation against `E[L_T · #jumps]` under
/// the reference measure.
#[derive(Debug, Clone, Serialize)]
pub struct CompensatorReport {
    pub marks: Vec<MarkAgreement>,
    pub total: MarkAgreement,
    pub z_max: f64,
}

fn z_score(a: f64, se_a: f64, b: f64, se_b: f64) -> f64 {
    let denom = (se_a * se_a + se_b * se_b).sqrt();
    if denom == 0.0 {
        if (a - b).abs() < 1e-12 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (a - b).abs() / denom
    }
}

/// Estimates the mean number of jumps per mark by the two routes and
/// reports the largest disagreement z-score.
pub fn empirical_compensator_check(
    model: &Model,
    policy: &Policy,
    x0: usize,
    n_paths: usize,
    seed: u64,
) -> CompensatorReport {
    let n_k = model.n_states();
    let direct_counts = par_paths(n_paths, |i| {
        simulate_controlled(model, policy, 0.0, x0, seed, i).mark_counts(n_k)
    });
    let integ = LaneIntegrator::new(model, &policy.grid, exponent_lane(model, policy));
    let reweighted_counts = par_paths(n_paths, |i| {
        let traj = simulate_reference(model, 0.0, x0, seed, REFERENCE_STREAM_BLOCK + i);
        let l = terminal_with(model, policy, &integ, &traj);
        let counts = traj.mark_counts(n_k);
        (l, counts)
    });

    let column = |sel: &dyn Fn(&Vec<u64>) -> f64| -> ((f64, f64), (f64, f64)) {
        let d: Vec<f64> = direct_counts.iter().map(sel).collect();
        let r: Vec<f64> = reweighted_counts
            .iter()
            .map(|(l, c)| l * sel(c))
            .collect();
        (mean_se(&d), mean_se(&r))
    };

    let mut marks = Vec::with_capacity(n_k);
    let mut z_max = 0.0f64;
    for y in 0..n_k {
        let ((d, d_se), (r, r_se)) = column(&|c| c[y] as f64);
        let z = z_score(d, d_se, r, r_se);
        z_max = z_max.max(z);
        marks.push(MarkAgreement {
            state: model.states()[y].clone(),
            direct: d,
            direct_se: d_se,
            reweighted: r,
            reweighted_se: r_se,
            z,
        });
    }
    let ((d, d_se), (r, r_se)) = column(&|c| c.iter().sum::<u64>() as f64);
    let z = z_score(d, d_se, r, r_se);
    z_max = z_max.max(z);
    let total = MarkAgreement {
        state: "<total>".to_string(),
        direct: d,
        direct_se: d_se,
        reweighted: r,
        reweighted_se: r_se,
        z,
    };
    CompensatorReport {
        marks,
        total,
        z_max,
    }
}

impl From<&CompensatorReport> for GirsanovReport {
    fn from(report: &CompensatorReport) -> GirsanovReport {
        GirsanovReport {
            estimate: report.total.direct,
            std_error: report.total.direct_se,
            bound: None,
            z_max: Some(report.z_max),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;

    #[test]
    fn identity_modifier_gives_constant_density() {
        let model = instances::constant_rate_model(1.0);
        let policy = Policy::constant(&model, 0);
        for stream in 0..100 {
            let traj = simulate_reference(&model, 0.0, 0, 1, stream);
            let path = likelihood(&model, &policy, &traj);
            assert!(path.values.iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn constant_modifier_matches_closed_form() {
        // L_T = e^{(1 - rho) A_T} rho^N with A_T = 1.
        let rho = 2.0;
        let model = instances::constant_rate_model(rho);
        let policy = Policy::constant(&model, 0);
        for stream in 0..200 {
            let traj = simulate_reference(&model, 0.0, 0, 3, stream);
            let l = likelihood(&model, &policy, &traj).terminal();
            let expected = (1.0f64 - rho).exp() * rho.powi(traj.n_jumps() as i32);
            assert!((l - expected).abs() <= 1e-12 * expected.max(1.0));
        }
    }

    #[test]
    fn zero_factor_kills_the_density() {
        let model = instances::constant_rate_model(0.0);
        let policy = Policy::constant(&model, 0);
        // Reference paths still jump; any jump hits r = 0.
        for stream in 0..50 {
            let traj = simulate_reference(&model, 0.0, 0, 5, stream);
            let path = likelihood(&model, &policy, &traj);
            if traj.n_jumps() > 0 {
                assert!(path.values[1..].iter().all(|&v| v == 0.0));
            }
            assert_eq!(path.values[0], 1.0);
        }
    }

    #[test]
    fn density_is_multiplicative_over_subintervals() {
        let model = instances::two_state_model();
        let policy = Policy::constant(&model, 1);
        for stream in 0..200 {
            let traj = simulate_reference(&model, 0.0, 0, 7, stream);
            for &s in &[0.2, 0.5, 0.77] {
                let left = likelihood(
                    &model,
                    &policy,
                    &Trajectory {
                        start_time: 0.0,
                        start_state: 0,
                        jumps: traj.jumps.iter().copied().filter(|&(t, _)| t <= s).collect(),
                        stream_id: 0,
                    },
                );
                // Left factor evaluated at s: exponent up to s, jumps up to s.
                let l_left = left.terminal() * exponent_tail_correction(&model, &policy, &traj, s);
                let right = likelihood(&model, &policy, &traj.restart(s).unwrap());
                let full = likelihood(&model, &policy, &traj).terminal();
                let product = l_left * right.terminal();
                if full == 0.0 {
                    assert_eq!(product, 0.0);
                } else {
                    assert!((product - full).abs() / full.abs() < 1e-12);
                }
            }
        }
    }

    // likelihood() always integrates the exponent to the horizon; dividing
    // by the post-s exponential (state frozen at X_s) recovers L_s.
    fn exponent_tail_correction(
        model: &Model,
        policy: &Policy,
        traj: &Trajectory,
        s: f64,
    ) -> f64 {
        let x = traj.state_at(s).unwrap();
        let frozen = Trajectory {
            start_time: s,
            start_state: x,
            jumps: vec![],
            stream_id: 0,
        };
        1.0 / likelihood(model, policy, &frozen).terminal()
    }

    #[test]
    fn normalization_is_exact_for_identity_modifier() {
        let model = instances::constant_rate_model(1.0);
        let policy = Policy::constant(&model, 0);
        let report = verify_normalization(&model, &policy, 0, 500, 11);
        assert_eq!(report.estimate, 1.0);
        assert_eq!(report.std_error, 0.0);
    }

    #[test]
    fn normalization_holds_for_doubling_tilt() {
        let model = instances::constant_rate_model(2.0);
        let policy = Policy::constant(&model, 0);
        let report = verify_normalization(&model, &policy, 0, 20_000, 13);
        assert!(report.std_error > 0.0);
        assert!((report.estimate - 1.0).abs() <= 3.0 * report.std_error);
    }

    #[test]
    fn second_moment_stays_below_analytic_bound() {
        // E L_T² = e for rho = 2 (Poisson generating function), far below
        // the bound e^{19/2}.
        let model = instances::constant_rate_model(2.0);
        let policy = Policy::constant(&model, 0);
        let report = verify_moment_bound(&model, &policy, 0, 20_000, 17);
        let bound = report.bound.unwrap();
        assert!((bound - (19.0f64 / 2.0).exp()).abs() < 1e-9);
        assert!((report.estimate - std::f64::consts::E).abs() <= 4.0 * report.std_error);
        assert!(report.estimate <= bound + 3.0 * report.std_error);
    }

    #[test]
    fn compensator_routes_agree_for_identity_tilt() {
        let model = instances::constant_rate_model(1.0);
        let policy = Policy::constant(&model, 0);
        let report = empirical_compensator_check(&model, &policy, 0, 20_000, 19);
        assert!(report.z_max <= 3.0, "z_max = {}", report.z_max);
        // Mean total count is A_T = 1 under both routes.
        assert!((report.total.direct - 1.0).abs() <= 3.0 * report.total.direct_se);
    }

    #[test]
    fn compensator_routes_agree_on_two_state_instance() {
        let model = instances::two_state_model();
        let policy = Policy::constant(&model, 0);
        let report = empirical_compensator_check(&model, &policy, 0, 20_000, 23);
        assert!(report.z_max <= 3.0, "z_max = {}", report.z_max);
    }

    #[test]
    fn all_shipped_instances_pass_the_three_checks() {
        for (name, model) in [
            ("two_state", instances::two_state_model()),
            ("flat_cost", instances::flat_cost_model()),
            ("constant_rate_2", instances::constant_rate_model(2.0)),
            ("unit_jump", instances::unit_jump_model()),
            ("single_state", instances::single_state_model()),
        ] {
            let field = crate::hjb::hjb_march(&model, 20).unwrap();
            let policy = crate::hamiltonian::policy_from_value(&model, &field);
            let norm = verify_normalization(&model, &policy, 0, 10_000, 29);
            assert!(
                (norm.estimate - 1.0).abs() <= 3.0 * norm.std_error,
                "{name}: E L_T = {} ± {}",
                norm.estimate,
                norm.std_error
            );
            let moment = verify_moment_bound(&model, &policy, 0, 10_000, 31);
            assert!(
                moment.estimate <= moment.bound.unwrap() + 3.0 * moment.std_error,
                "{name}: E L_T² = {} vs bound {:?}",
                moment.estimate,
                moment.bound
            );
            let comp = empirical_compensator_check(&model, &policy, 0, 10_000, 37);
            assert!(comp.z_max <= 3.0, "{name}: z_max = {}", comp.z_max);
        }
    }
}
