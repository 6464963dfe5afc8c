//! Cross-module optimality checks: the dynamic programming inequality, the
//! fundamental relation between the solved field and Monte Carlo costs of
//! arbitrary feedback policies, and oracle consistency.

use mpp_control::control::{brute_force_value, coarse_policy, mc_cost_direct, mc_cost_reweighted, route_z};
use mpp_control::hamiltonian::policy_from_value;
use mpp_control::{hjb_march, hjb_picard, instances, policy_value, Policy};

#[test]
fn policy_values_dominate_the_solved_field() {
    // Every fixed feedback policy costs at least the value function.
    let model = instances::two_state_model();
    let v = hjb_march(&model, 500).unwrap();
    for id in 0..16 {
        let policy = coarse_policy(model.horizon(), 2, 2, 2, id);
        let vu = policy_value(&model.refine_to(1000), &policy, 1).unwrap();
        for (j, &t) in vu.grid.iter().enumerate() {
            for x in 0..2 {
                assert!(
                    vu.values[j][x] >= v.eval(t, x) - 1e-3,
                    "policy {id} at (t={t}, x={x}): {} < {}",
                    vu.values[j][x],
                    v.eval(t, x)
                );
            }
        }
    }
}

#[test]
fn selector_policy_attains_the_field_value() {
    let model = instances::two_state_model();
    let fine = model.refine(500);
    let beta = model.beta_thresholds().unwrap().beta_hjb;
    let (v, _) = hjb_picard(&fine, beta, 1e-9, 200).unwrap();
    let best = policy_from_value(&fine, &v);
    let vu = policy_value(&fine, &best, 1).unwrap();
    assert!(vu.sup_gap(&v) <= 1e-3, "gap {}", vu.sup_gap(&v));
}

#[test]
fn fundamental_relation_against_monte_carlo() {
    // v(0, x) <= MC cost of every enumerated coarse policy, and equality
    // for the selector policy, both within 3 SE + grid slack.
    let model = instances::two_state_model();
    let fine = model.refine(500);
    let beta = model.beta_thresholds().unwrap().beta_hjb;
    let (v, _) = hjb_picard(&fine, beta, 1e-9, 200).unwrap();

    for id in 0..16 {
        let policy = coarse_policy(model.horizon(), 2, 2, 2, id);
        for x0 in 0..2 {
            let est = mc_cost_direct(&model, &policy, 0.0, x0, 4000, 200 + id);
            assert!(
                v.at_start(x0) <= est.estimate + 3.0 * est.std_error + 1e-3,
                "policy {id}, x0 {x0}: v {} vs cost {} ± {}",
                v.at_start(x0),
                est.estimate,
                est.std_error
            );
        }
    }

    let best = policy_from_value(&fine, &v);
    for x0 in 0..2 {
        let est = mc_cost_direct(&model, &best, 0.0, x0, 40_000, 390);
        assert!(
            (v.at_start(x0) - est.estimate).abs() <= 3.0 * est.std_error + 1e-3,
            "selector from x0 {x0}: v {} vs cost {} ± {}",
            v.at_start(x0),
            est.estimate,
            est.std_error
        );
    }
}

#[test]
fn constant_feedback_policy_values_match_monte_carlo() {
    // All four constant-in-time feedback maps state -> action: the linear
    // solve and the direct Monte Carlo route estimate the same cost.
    let model = instances::two_state_model();
    for id in 0..4u64 {
        let policy = Policy::from_fn(vec![0.0, model.horizon()], 2, |_, x| {
            ((id >> x) & 1) as usize
        });
        let field = policy_value(&model.refine_to(1000), &policy, 1).unwrap();
        for x0 in 0..2 {
            let est = mc_cost_direct(&model, &policy, 0.0, x0, 20_000, 500 + id);
            assert!(
                (est.estimate - field.at_start(x0)).abs() <= 3.0 * est.std_error + 1e-3,
                "policy {id}, x0 {x0}: mc {} ± {} vs solve {}",
                est.estimate,
                est.std_error,
                field.at_start(x0)
            );
        }
    }
}

#[test]
fn cost_routes_agree_for_selector_policy() {
    let model = instances::two_state_model();
    let fine = model.refine(200);
    let beta = model.beta_thresholds().unwrap().beta_hjb;
    let (v, _) = hjb_picard(&fine, beta, 1e-8, 200).unwrap();
    let best = policy_from_value(&fine, &v);
    for x0 in 0..2 {
        let direct = mc_cost_direct(&model, &best, 0.0, x0, 20_000, 41);
        let rew = mc_cost_reweighted(&model, &best, 0.0, x0, 20_000, 41);
        assert!(route_z(&direct, &rew) <= 3.0);
    }
}

#[test]
fn oracle_minimum_improves_with_finer_policy_classes() {
    let model = instances::two_state_model();
    let coarse = brute_force_value(&model, 1).unwrap();
    let fine = brute_force_value(&model, 2).unwrap();
    let v = hjb_march(&model, 500).unwrap();
    for x in 0..2 {
        // Restricting to a policy subclass cannot beat the value function,
        // and the finer class can only improve on the coarser one.
        assert!(fine.best[x].cost <= coarse.best[x].cost + 1e-12);
        assert!(coarse.best[x].cost >= v.at_start(x) - 1e-3);
        assert!(fine.best[x].cost >= v.at_start(x) - 1e-3);
    }
}

#[test]
fn selector_policy_is_stable_under_constant_value_shift() {
    let model = instances::two_state_model();
    let fine = model.refine(100);
    let v = hjb_march(&model, 100).unwrap();
    let mut shifted = v.clone();
    for row in &mut shifted.values {
        for val in row.iter_mut() {
            *val += 3.7;
        }
    }
    let a = policy_from_value(&fine, &v);
    let b = policy_from_value(&fine, &shifted);
    assert_eq!(a, b);
}

#[test]
fn single_action_model_has_unique_policy_everywhere() {
    let model = instances::unit_jump_model();
    let v = hjb_march(&model, 10).unwrap();
    let policy = policy_from_value(&model, &v);
    assert!(policy.actions.iter().flatten().all(|&u| u == 0));
}

#[test]
fn flat_cost_policy_picks_cheaper_action_everywhere() {
    let model = instances::flat_cost_model();
    let v = hjb_march(&model, 10).unwrap();
    let policy = policy_from_value(&model, &v);
    assert!(policy.actions.iter().flatten().all(|&u| u == 1));
}
