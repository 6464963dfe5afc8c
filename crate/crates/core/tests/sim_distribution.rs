//! Distributional checks on the simulators: jump-count laws under both
//! measures, thinning correctness via a two-sample test, and the envelope
//! bound on the acceptance probability.

mod common;

use common::ks_two_sample;
use mpp_control::{instances, simulate_controlled, simulate_reference, Policy};

#[test]
fn reference_jump_count_matches_compensator() {
    // Unit rate over [0, 1]: counts are Poisson(1).
    let model = instances::constant_rate_model(1.0);
    let counts: Vec<f64> = (0..100_000)
        .map(|s| simulate_reference(&model, 0.0, 0, 101, s).n_jumps() as f64)
        .collect();
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<f64>() / n;
    let var = counts.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    assert!(
        (mean - model.total_a()).abs() <= 3.0 * se,
        "mean {mean} vs A_T {} (se {se})",
        model.total_a()
    );
}

#[test]
fn controlled_jump_count_matches_tilted_compensator() {
    // r ≡ 2 doubles the intensity: counts are Poisson(2).
    let model = instances::constant_rate_model(2.0);
    let policy = Policy::constant(&model, 0);
    let counts: Vec<f64> = (0..100_000)
        .map(|s| simulate_controlled(&model, &policy, 0.0, 0, 103, s).n_jumps() as f64)
        .collect();
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<f64>() / n;
    let var = counts.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    assert!((mean - 2.0).abs() <= 3.0 * se, "mean {mean} (se {se})");
}

#[test]
fn identity_tilt_reproduces_the_reference_law() {
    // With r ≡ 1 the thinning route and the inversion route sample the same
    // first-jump-time distribution (two-sample KS on paths that jump).
    let model = instances::constant_rate_model(1.0);
    let policy = Policy::constant(&model, 0);
    let first = |jumps: &[(f64, usize)]| jumps.first().map(|&(t, _)| t);
    let a: Vec<f64> = (0..10_000)
        .filter_map(|s| first(&simulate_reference(&model, 0.0, 0, 107, s).jumps))
        .collect();
    let b: Vec<f64> = (0..10_000)
        .filter_map(|s| first(&simulate_controlled(&model, &policy, 0.0, 0, 109, s).jumps))
        .collect();
    let (d, p) = ks_two_sample(a, b);
    assert!(p > 0.01, "KS D = {d}, p = {p}");
}

#[test]
fn thinning_acceptance_probability_never_exceeds_one() {
    // lambda^u(t) <= C_r * max_j a_j on every cell, action and state.
    let model = instances::two_state_model();
    let envelope = model.c_r() * model.max_base_rate();
    for cell in 0..model.n_cells() {
        for u in 0..model.n_actions() {
            let lambda = model.base_rate(cell) * model.tilt_sum(cell, u);
            assert!(lambda <= envelope + 1e-15);
        }
    }
}

#[test]
fn controlled_mark_frequencies_follow_tilted_weights() {
    // On the two-state instance under action a0 the mark weights are
    // r(y, a0) φ(y); compare empirical mark fractions per cell half.
    let model = instances::two_state_model();
    let policy = Policy::constant(&model, 0);
    let mut counts = [[0u64; 2]; 2]; // [cell][mark]
    for s in 0..40_000u64 {
        let traj = simulate_controlled(&model, &policy, 0.0, 0, 113, s);
        for &(t, y) in &traj.jumps {
            counts[model.cell_index(t)][y] += 1;
        }
    }
    for cell in 0..2 {
        let phi = model.mark_dist(cell);
        let w0 = model.rate(cell, 0, 0) * phi[0];
        let w1 = model.rate(cell, 1, 0) * phi[1];
        let expected = w0 / (w0 + w1);
        let total = (counts[cell][0] + counts[cell][1]) as f64;
        let observed = counts[cell][0] as f64 / total;
        let se = (expected * (1.0 - expected) / total).sqrt();
        assert!(
            (observed - expected).abs() <= 4.0 * se,
            "cell {cell}: observed {observed} expected {expected} (se {se})"
        );
    }
}
