//! Goal-conditioned DQN+HER baseline for the bit-flip environment.
//!
//! Q(s, g, .) is one network over the state concatenated with the goal's
//! masked target values. Rewards are -1 per non-terminal step and 0 at the
//! goal, the Bellman target is masked at terminals and clipped to
//! [-horizon, 0], and the update shares the replay buffer, the networks,
//! and the schedule with the PQM learner so comparisons differ only in the
//! learner.

use crate::envs::Goal;
use crate::error::{Error, Result};
use crate::nn::{AdamState, Gradient, HiddenActivation, Mlp, OutputActivation};
use crate::num::Scalar;
use crate::pqm::concat2;
use crate::replay::DqnBatchItem;
use crate::rng::SeedStream;

/// Q network and its target copy.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork<F> {
    pub net: Mlp<F>,
    pub target_net: Mlp<F>,
}

impl<F: Scalar> QNetwork<F> {
    pub fn new(state_dim: usize, goal_dim: usize, n_actions: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut sizes = vec![state_dim + goal_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(n_actions);
        let net = Mlp::init(&sizes, HiddenActivation::Relu, OutputActivation::Linear, seed)?;
        let target_net = net.clone();
        Ok(QNetwork { net, target_net })
    }

    pub fn n_actions(&self) -> usize {
        self.net.output_dim()
    }

    /// Q values for every action, online net.
    pub fn q_values(&self, s: &[F], g: &Goal<F>) -> Vec<F> {
        self.net.forward(&concat2(s, &g.masked_target_values()))
    }

    pub fn q_values_target(&self, s: &[F], g: &Goal<F>) -> Vec<F> {
        self.target_net.forward(&concat2(s, &g.masked_target_values()))
    }
}

/// Argmax with ties broken toward the lowest index.
fn argmax<F: Scalar>(values: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Epsilon-greedy action.
pub fn dqn_act<F: Scalar>(
    qnet: &QNetwork<F>,
    s: &[F],
    g: &Goal<F>,
    epsilon: f64,
    stream: &mut SeedStream,
) -> usize {
    if stream.bernoulli(epsilon) {
        stream.index(qnet.n_actions())
    } else {
        argmax(&qnet.q_values(s, g))
    }
}

/// Bellman targets from the target network only:
/// `r + gamma * max_a Q~(s_next, g, a) * (1 - done)`, clipped to
/// [-horizon, 0]. Exposed for the target-isolation tests.
pub fn dqn_targets<F: Scalar>(
    qnet: &QNetwork<F>,
    batch: &[DqnBatchItem<F>],
    gamma: F,
    horizon: usize,
) -> Vec<F> {
    let lo = -F::from_f64(horizon as f64);
    batch
        .iter()
        .map(|item| {
            let boot = if item.done {
                F::zero()
            } else {
                let tvals = qnet.q_values_target(&item.s_next, &item.goal);
                gamma * tvals[argmax(&tvals)]
            };
            (item.reward + boot).max(lo).min(F::zero())
        })
        .collect()
}

/// One DQN update: squared error against the clipped Bellman target,
/// averaged over the batch, one Adam step. Returns the pre-step mean loss.
pub fn dqn_update<F: Scalar>(
    qnet: &mut QNetwork<F>,
    batch: &[DqnBatchItem<F>],
    optimizer: &mut AdamState<F>,
    gamma: F,
    horizon: usize,
) -> Result<F> {
    if batch.is_empty() {
        return Err(Error::Config("dqn_update: empty batch".into()));
    }
    let targets = dqn_targets(qnet, batch, gamma, horizon);
    let n = F::from_f64(batch.len() as f64);
    let two = F::from_f64(2.0);
    let n_actions = qnet.n_actions();
    let mut grad = Gradient::zeros(&qnet.net);
    let mut loss = F::zero();

    for (item, &target) in batch.iter().zip(targets.iter()) {
        if item.a_t >= n_actions {
            return Err(Error::Config(format!("action index {} out of range", item.a_t)));
        }
        let trace = qnet
            .net
            .forward_trace(&concat2(&item.s_t, &item.goal.masked_target_values()));
        let q = trace.output()[item.a_t];
        let r = q - target;
        loss += r * r;
        let mut cot = vec![F::zero(); n_actions];
        cot[item.a_t] = two * r / n;
        qnet.net.backward_acc(&trace, &cot, None, &mut grad);
    }

    loss /= n;
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("dqn loss is {loss}")));
    }
    optimizer.step(&mut qnet.net, &grad)?;
    Ok(loss)
}
