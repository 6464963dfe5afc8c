//! Simulation of marked point process trajectories.
//!
//! Under the reference measure the counting process is inhomogeneous Poisson
//! with rate `a(t)`; jump times are produced by exact inversion of the
//! piecewise-linear compensator `A_t` and marks are drawn from `φ` at the
//! jump time. Controlled trajectories (mark-`y` intensity
//! `r_t(y, u) φ_t(y) a(t)`) are produced by thinning against the constant
//! envelope `C_r · max_j a_j`.
//!
//! Every trajectory owns a counter-based RNG stream derived from
//! `(seed, stream)`, with a fixed draw order (candidate time, acceptance
//! uniform, mark uniform), so generation is reproducible regardless of
//! worker count or execution order.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Model;

/// Stream ids at or above this offset are reserved for reference-measure
/// sampling inside estimators that compare two Monte Carlo routes, so the
/// two routes never share randomness.
pub const REFERENCE_STREAM_BLOCK: u64 = 1 << 32;

/// Stream block reserved for auxiliary draws (random test fields etc.).
pub const AUX_STREAM_BLOCK: u64 = 1 << 33;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("time {t} precedes the trajectory start {start}")]
    OutOfRange { t: f64, start: f64 },
}

/// The RNG stream owned by trajectory `stream` under master seed `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Strictly positive unit-exponential draw (one uniform consumed).
fn exp_draw(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.gen();
    (-(1.0 - u).ln()).max(f64::MIN_POSITIVE)
}

/// Draws an index proportionally to `weights` (one uniform consumed).
/// Returns `None` when all weights vanish.
fn sample_weighted(weights: &[f64], rng: &mut ChaCha8Rng) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return None;
    }
    let target: f64 = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if target < acc {
            return Some(i);
        }
    }
    Some(weights.len() - 1)
}

/// One realized marked point process path on `[start_time, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub start_time: f64,
    pub start_state: usize,
    /// Strictly increasing jump times with their marks.
    pub jumps: Vec<(f64, usize)>,
    pub stream_id: u64,
}

impl Trajectory {
    pub fn n_jumps(&self) -> usize {
        self.jumps.len()
    }

    /// State at time `t`, right-continuous: the mark of the last jump `≤ t`,
    /// or the start state before the first jump.
    pub fn state_at(&self, t: f64) -> Result<usize, SimError> {
        if t < self.start_time {
            return Err(SimError::OutOfRange {
                t,
                start: self.start_time,
            });
        }
        let pos = self.jumps.partition_point(|&(s, _)| s <= t);
        Ok(if pos == 0 {
            self.start_state
        } else {
            self.jumps[pos - 1].1
        })
    }

    /// Left limit `X_{t-}`: the state just before `t`.
    pub fn state_before(&self, t: f64) -> Result<usize, SimError> {
        if t < self.start_time {
            return Err(SimError::OutOfRange {
                t,
                start: self.start_time,
            });
        }
        let pos = self.jumps.partition_point(|&(s, _)| s < t);
        Ok(if pos == 0 {
            self.start_state
        } else {
            self.jumps[pos - 1].1
        })
    }

    /// The path restarted at `(t, X_t)`: it keeps exactly the jumps after
    /// `t`, so it is driven by the same post-`t` randomness and satisfies
    /// the flow property with the original path.
    pub fn restart(&self, t: f64) -> Result<Trajectory, SimError> {
        let state = self.state_at(t)?;
        Ok(Trajectory {
            start_time: t,
            start_state: state,
            jumps: self
                .jumps
                .iter()
                .copied()
                .filter(|&(s, _)| s > t)
                .collect(),
            stream_id: self.stream_id,
        })
    }

    /// Number of jumps carrying each mark.
    pub fn mark_counts(&self, n_states: usize) -> Vec<u64> {
        let mut counts = vec![0u64; n_states];
        for &(_, y) in &self.jumps {
            counts[y] += 1;
        }
        counts
    }
}

/// A feedback control, piecewise constant in time on its own grid:
/// `actions[j][x]` is the action used on `[grid[j], grid[j+1])` in state `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub grid: Vec<f64>,
    pub actions: Vec<Vec<usize>>,
}

impl Policy {
    /// The policy using `action` everywhere.
    pub fn constant(model: &Model, action: usize) -> Policy {
        assert!(action < model.n_actions());
        Policy {
            grid: vec![0.0, model.horizon()],
            actions: vec![vec![action; model.n_states()]],
        }
    }

    /// Builds a policy on the given grid from a per-cell, per-state rule.
    pub fn from_fn(grid: Vec<f64>, n_states: usize, mut f: impl FnMut(usize, usize) -> usize) -> Policy {
        let cells = grid.len() - 1;
        let actions = (0..cells)
            .map(|j| (0..n_states).map(|x| f(j, x)).collect())
            .collect();
        Policy { grid, actions }
    }

    pub fn cell_index(&self, t: f64) -> usize {
        let pos = self.grid.partition_point(|&g| g <= t);
        pos.saturating_sub(1).min(self.grid.len() - 2)
    }

    pub fn action_at(&self, t: f64, x: usize) -> usize {
        self.actions[self.cell_index(t)][x]
    }
}

/// Simulates one trajectory under the reference measure: inhomogeneous
/// Poisson jump times via inversion of `A_t`, marks drawn from `φ` at the
/// jump time. Draw order per jump: exponential increment, mark uniform.
pub fn simulate_reference(
    model: &Model,
    t0: f64,
    x0: usize,
    seed: u64,
    stream: u64,
) -> Trajectory {
    debug_assert!((0.0..=model.horizon()).contains(&t0));
    debug_assert!(x0 < model.n_states());
    let mut rng = stream_rng(seed, stream);
    let total = model.total_a();
    let mut a_cur = model.cumulative_a(t0).expect("t0 within horizon");
    let mut jumps = Vec::new();
    loop {
        a_cur += exp_draw(&mut rng);
        if a_cur > total {
            break;
        }
        let t = model.inverse_a(a_cur);
        let cell = model.cell_index(t);
        let y = sample_weighted(model.mark_dist(cell), &mut rng)
            .expect("mark distribution sums to one");
        debug_assert!(jumps.last().is_none_or(|&(s, _)| t > s));
        jumps.push((t, y));
    }
    Trajectory {
        start_time: t0,
        start_state: x0,
        jumps,
        stream_id: stream,
    }
}

/// Simulates one trajectory whose mark-`y` jump intensity is
/// `r_t(y, u(t, X_{t-})) φ_t(y) a(t)`, by thinning against the envelope
/// `C_r · max_j a_j`. Draw order per candidate: exponential increment,
/// acceptance uniform, then (on acceptance only) mark uniform.
pub fn simulate_controlled(
    model: &Model,
    policy: &Policy,
    t0: f64,
    x0: usize,
    seed: u64,
    stream: u64,
) -> Trajectory {
    debug_assert!((0.0..=model.horizon()).contains(&t0));
    debug_assert!(x0 < model.n_states());
    let mut rng = stream_rng(seed, stream);
    let envelope = model.c_r() * model.max_base_rate();
    let mut jumps = Vec::new();
    if envelope > 0.0 {
        let horizon = model.horizon();
        let mut t = t0;
        let mut x = x0;
        let mut weights = vec![0.0; model.n_states()];
        loop {
            t += exp_draw(&mut rng) / envelope;
            if t > horizon {
                break;
            }
            let cell = model.cell_index(t);
            let u = policy.action_at(t, x);
            let lambda = model.base_rate(cell) * model.tilt_sum(cell, u);
            debug_assert!(lambda <= envelope * (1.0 + 1e-12));
            let accept: f64 = rng.gen();
            if accept * envelope < lambda {
                let phi = model.mark_dist(cell);
                for y in 0..model.n_states() {
                    weights[y] = model.rate(cell, y, u) * phi[y];
                }
                let y = sample_weighted(&weights, &mut rng)
                    .expect("accepted candidate has positive total weight");
                debug_assert!(jumps.last().is_none_or(|&(s, _)| t > s));
                jumps.push((t, y));
                x = y;
            }
        }
    }
    Trajectory {
        start_time: t0,
        start_state: x0,
        jumps,
        stream_id: stream,
    }
}

/// One line of the trajectory dump format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub stream: u64,
    pub t0: f64,
    pub x0: String,
    pub jumps: Vec<(f64, String)>,
}

impl TrajectoryRecord {
    pub fn from_trajectory(model: &Model, traj: &Trajectory) -> TrajectoryRecord {
        TrajectoryRecord {
            stream: traj.stream_id,
            t0: traj.start_time,
            x0: model.states()[traj.start_state].clone(),
            jumps: traj
                .jumps
                .iter()
                .map(|&(t, y)| (t, model.states()[y].clone()))
                .collect(),
        }
    }

    pub fn into_trajectory(self, model: &Model) -> Result<Trajectory, crate::model::ModelError> {
        let start_state = model.state_index(&self.x0)?;
        let mut jumps = Vec::with_capacity(self.jumps.len());
        for (t, name) in self.jumps {
            jumps.push((t, model.state_index(&name)?));
        }
        Ok(Trajectory {
            start_time: self.t0,
            start_state,
            jumps,
            stream_id: self.stream,
        })
    }
}

/// Writes trajectories as JSON lines, one per trajectory.
pub fn write_jsonl<W: std::io::Write>(
    model: &Model,
    trajectories: &[Trajectory],
    mut out: W,
) -> std::io::Result<()> {
    for traj in trajectories {
        let record = TrajectoryRecord::from_trajectory(model, traj);
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
