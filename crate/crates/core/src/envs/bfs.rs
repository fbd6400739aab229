//! Breadth-first step-count oracle for the point-mass environment.
//!
//! Searches over the quantized thrust set {-1, 0, +1}^2 with states
//! deduplicated on a quantization grid. Every path found is realizable
//! under the true dynamics, so the returned count is an upper bound on the
//! continuous-action optimum; it is used for rank-correlation checks, not
//! as an exact distance.

use std::collections::{HashSet, VecDeque};

use crate::envs::{goal_achieved, Action, EnvInstance, EnvKind, Goal, State};
use crate::error::{Error, Result};
use crate::num::Scalar;

const MAX_EXPANSIONS: usize = 4_000_000;

fn bucket_key<F: Scalar>(state: &[F], quantization: u32) -> u64 {
    let q = quantization as f64;
    let mut key = 0u64;
    for &c in state {
        let b = (c.to_f64() * q).round() as i64;
        key = (key << 16) | ((b + 0x4000) as u64 & 0xffff);
    }
    key
}

/// Minimum number of `step` applications from `start` to a state satisfying
/// `target`, over the quantized action set. Errors if the search budget
/// (depth or node count) is exhausted first.
pub fn pointmass_steps_oracle<F: Scalar>(
    env: &EnvInstance<F>,
    start: &[F],
    target: &Goal<F>,
    quantization: u32,
    max_depth: usize,
) -> Result<usize> {
    assert!(
        matches!(env.kind(), EnvKind::PointMass),
        "pointmass_steps_oracle called on {}",
        env.name()
    );
    assert!(quantization > 0, "quantization must be positive");

    if goal_achieved(start, target) {
        return Ok(0);
    }

    let actions: Vec<Action<F>> = {
        let levels = [F::from_f64(-1.0), F::zero(), F::from_f64(1.0)];
        let mut out = Vec::with_capacity(9);
        for &a0 in &levels {
            for &a1 in &levels {
                out.push(Action::Continuous(vec![a0, a1]));
            }
        }
        out
    };

    let mut visited: HashSet<u64> = HashSet::new();
    visited.insert(bucket_key(start, quantization));
    let mut frontier: VecDeque<(State<F>, usize)> = VecDeque::new();
    frontier.push_back((start.to_vec(), 0));
    let mut expansions = 0usize;

    while let Some((state, depth)) = frontier.pop_front() {
        if depth >= max_depth {
            continue;
        }
        for action in &actions {
            expansions += 1;
            if expansions > MAX_EXPANSIONS {
                return Err(Error::UnreachableWithinBudget(format!(
                    "BFS exceeded {MAX_EXPANSIONS} expansions at depth {depth}"
                )));
            }
            let next = env.step(&state, action);
            if goal_achieved(&next, target) {
                return Ok(depth + 1);
            }
            let key = bucket_key(&next, quantization);
            if visited.insert(key) {
                frontier.push_back((next, depth + 1));
            }
        }
    }
    Err(Error::UnreachableWithinBudget(format!(
        "BFS exhausted reachable set within depth {max_depth}"
    )))
}
