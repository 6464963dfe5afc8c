//! Invariants asserted across every shipped model: the weighted energy
//! identity at Monte Carlo scale and the agreement of the two cost routes
//! for every constant feedback policy.

use mpp_control::bsde::{energy_identity_check, DriftField};
use mpp_control::control::{mc_cost_direct, mc_cost_reweighted, route_z};
use mpp_control::model::Model;
use mpp_control::{instances, Policy};

fn shipped() -> Vec<(&'static str, Model)> {
    vec![
        ("two_state", instances::two_state_model()),
        ("flat_cost", instances::flat_cost_model()),
        ("constant_rate_2", instances::constant_rate_model(2.0)),
        ("unit_jump", instances::unit_jump_model()),
        ("single_state", instances::single_state_model()),
    ]
}

#[test]
fn energy_identity_holds_on_every_shipped_model() {
    for (name, model) in shipped() {
        let fine = model.refine_to(128);
        let drift = DriftField::from_fn(&fine, |c, x| fine.cost(c, x, 0));
        let beta = fine.beta_bsde();
        let rep = energy_identity_check(&fine, &drift, 0, beta, 100_000, 311);
        assert!(
            (rep.lhs - rep.rhs).abs() <= 3.0 * rep.combined_se + 1e-3,
            "{name}: lhs {} rhs {} se {}",
            rep.lhs,
            rep.rhs,
            rep.combined_se
        );
        assert!(
            rep.bound_lhs <= rep.bound_rhs + 3.0 * rep.bound_se + 1e-3,
            "{name}: bound {} vs {}",
            rep.bound_lhs,
            rep.bound_rhs
        );
    }
}

#[test]
fn cost_routes_agree_on_every_shipped_model_and_constant_policy() {
    for (name, model) in shipped() {
        for action in 0..model.n_actions() {
            let policy = Policy::constant(&model, action);
            for x0 in 0..model.n_states() {
                let direct = mc_cost_direct(&model, &policy, 0.0, x0, 10_000, 313);
                let rew = mc_cost_reweighted(&model, &policy, 0.0, x0, 10_000, 313);
                let z = route_z(&direct, &rew);
                assert!(
                    z <= 3.0,
                    "{name}, action {action}, x0 {x0}: direct {} ± {} vs reweighted {} ± {} (z = {z})",
                    direct.estimate,
                    direct.std_error,
                    rew.estimate,
                    rew.std_error
                );
            }
        }
    }
}
