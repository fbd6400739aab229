//! The planning quasi-metric: critic, actors, and their updates.
//!
//! The critic estimates f(s, s', a), the number of steps to go from `s` to
//! `s'` when starting with action `a`. With a discrete action set it is a
//! single network phi_a(s, s') with one output per action and the actor is
//! an explicit argmin; with a continuous action set it is a scalar network
//! over (s, s', a) and a parameterized actor approximates the argmin.
//!
//! The critic update drives f toward 1 on real consecutive states and
//! toward Bellman consistency against the target networks on relabeled
//! pairs. Bellman targets are computed from target networks only and
//! clamped to `[0, clamp_max]`.

use crate::envs::{Action, State};
use crate::error::{Error, Result};
use crate::nn::{AdamState, Gradient, HiddenActivation, Mlp, OutputActivation};
use crate::num::Scalar;
use crate::replay::PqmBatchItem;
use crate::rng::SeedStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriticKind {
    Discrete { n_actions: usize },
    Continuous { action_dim: usize },
}

/// The quasi-metric network and its target copy.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic<F> {
    kind: CriticKind,
    pub net: Mlp<F>,
    pub target_net: Mlp<F>,
}

impl<F: Scalar> Critic<F> {
    /// Discrete critic: maps concat(s, s') to one value per action.
    pub fn discrete(state_dim: usize, n_actions: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut sizes = vec![2 * state_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(n_actions);
        let net = Mlp::init(&sizes, HiddenActivation::Relu, OutputActivation::Linear, seed)?;
        let target_net = net.clone();
        Ok(Critic {
            kind: CriticKind::Discrete { n_actions },
            net,
            target_net,
        })
    }

    /// Continuous critic: maps concat(s, s', a) to a scalar.
    pub fn continuous(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        seed: u64,
    ) -> Result<Self> {
        let mut sizes = vec![2 * state_dim + action_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let net = Mlp::init(&sizes, HiddenActivation::Relu, OutputActivation::Linear, seed)?;
        let target_net = net.clone();
        Ok(Critic {
            kind: CriticKind::Continuous { action_dim },
            net,
            target_net,
        })
    }

    /// Rebuild a critic from deserialized nets, validating dimensions.
    pub fn from_nets(kind: CriticKind, state_dim: usize, net: Mlp<F>, target_net: Mlp<F>) -> Result<Self> {
        let expected_in = match kind {
            CriticKind::Discrete { .. } => 2 * state_dim,
            CriticKind::Continuous { action_dim } => 2 * state_dim + action_dim,
        };
        let expected_out = match kind {
            CriticKind::Discrete { n_actions } => n_actions,
            CriticKind::Continuous { .. } => 1,
        };
        if net.input_dim() != expected_in || net.output_dim() != expected_out {
            return Err(Error::Shape(format!(
                "critic net is {}x{}, expected {}x{}",
                net.input_dim(),
                net.output_dim(),
                expected_in,
                expected_out
            )));
        }
        if target_net.layer_sizes() != net.layer_sizes() {
            return Err(Error::Shape("critic target net shape differs from online net".into()));
        }
        Ok(Critic { kind, net, target_net })
    }

    pub fn kind(&self) -> CriticKind {
        self.kind
    }

    pub fn state_dim(&self) -> usize {
        match self.kind {
            CriticKind::Discrete { .. } => self.net.input_dim() / 2,
            CriticKind::Continuous { action_dim } => (self.net.input_dim() - action_dim) / 2,
        }
    }

    /// One forward pass of the online net; entry `a` is f(s, s', a).
    pub fn values_discrete(&self, s: &[F], s_prime: &[F]) -> Vec<F> {
        self.net.forward(&concat2(s, s_prime))
    }

    /// Same through the target net.
    pub fn values_discrete_target(&self, s: &[F], s_prime: &[F]) -> Vec<F> {
        self.target_net.forward(&concat2(s, s_prime))
    }

    /// f(s, s', a) for a continuous action.
    pub fn value_continuous(&self, s: &[F], s_prime: &[F], a: &[F]) -> F {
        self.net.forward(&concat3(s, s_prime, a))[0]
    }

    pub fn value_continuous_target(&self, s: &[F], s_prime: &[F], a: &[F]) -> F {
        self.target_net.forward(&concat3(s, s_prime, a))[0]
    }
}

/// Parameterized actor approximating argmin_a f(s, s', a); tanh output, so
/// components lie in (-1, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Actor<F> {
    pub net: Mlp<F>,
    pub target_net: Mlp<F>,
}

impl<F: Scalar> Actor<F> {
    pub fn new(state_dim: usize, action_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut sizes = vec![2 * state_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(action_dim);
        let net = Mlp::init(&sizes, HiddenActivation::Relu, OutputActivation::Tanh, seed)?;
        let target_net = net.clone();
        Ok(Actor { net, target_net })
    }

    /// Rebuild an actor from deserialized nets, validating dimensions.
    pub fn from_nets(state_dim: usize, action_dim: usize, net: Mlp<F>, target_net: Mlp<F>) -> Result<Self> {
        if net.input_dim() != 2 * state_dim || net.output_dim() != action_dim {
            return Err(Error::Shape(format!(
                "actor net is {}x{}, expected {}x{}",
                net.input_dim(),
                net.output_dim(),
                2 * state_dim,
                action_dim
            )));
        }
        if target_net.layer_sizes() != net.layer_sizes() {
            return Err(Error::Shape("actor target net shape differs from online net".into()));
        }
        Ok(Actor { net, target_net })
    }

    pub fn action(&self, s: &[F], s_prime: &[F]) -> Vec<F> {
        self.net.forward(&concat2(s, s_prime))
    }

    pub fn action_target(&self, s: &[F], s_prime: &[F]) -> Vec<F> {
        self.target_net.forward(&concat2(s, s_prime))
    }

    pub fn action_dim(&self) -> usize {
        self.net.output_dim()
    }
}

/// Exploration parameters for both action kinds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExplorationSpec {
    /// Discrete: probability of a uniform random action.
    pub epsilon: f64,
    /// Continuous: stddev of Gaussian noise added to the actor output.
    pub gaussian_sigma: f64,
    /// Continuous: probability of a fully random action.
    pub random_action_prob: f64,
}

impl Default for ExplorationSpec {
    fn default() -> Self {
        ExplorationSpec {
            epsilon: 0.2,
            gaussian_sigma: 0.2,
            random_action_prob: 0.3,
        }
    }
}

/// Argmin with ties broken toward the lowest index.
pub fn argmin<F: Scalar>(values: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// The greedy action toward `s_prime`: explicit argmin over the discrete
/// critic outputs, or the actor's forward pass.
pub fn greedy_action<F: Scalar>(
    critic: &Critic<F>,
    actor: Option<&Actor<F>>,
    s: &[F],
    s_prime: &[F],
) -> Action<F> {
    match critic.kind() {
        CriticKind::Discrete { .. } => Action::Discrete(argmin(&critic.values_discrete(s, s_prime))),
        CriticKind::Continuous { .. } => {
            let actor = actor.expect("continuous critic needs an actor");
            Action::Continuous(actor.action(s, s_prime))
        }
    }
}

/// Exploration policy around the greedy action.
pub fn explore_action<F: Scalar>(
    spec: &ExplorationSpec,
    critic: &Critic<F>,
    actor: Option<&Actor<F>>,
    s: &[F],
    s_prime: &[F],
    stream: &mut SeedStream,
) -> Action<F> {
    match critic.kind() {
        CriticKind::Discrete { n_actions } => {
            if stream.bernoulli(spec.epsilon) {
                Action::Discrete(stream.index(n_actions))
            } else {
                greedy_action(critic, actor, s, s_prime)
            }
        }
        CriticKind::Continuous { action_dim } => {
            let one = F::one();
            if stream.bernoulli(spec.random_action_prob) {
                let a = (0..action_dim).map(|_| stream.uniform(-one, one)).collect();
                Action::Continuous(a)
            } else {
                let actor = actor.expect("continuous critic needs an actor");
                let sigma = F::from_f64(spec.gaussian_sigma);
                let a = actor
                    .action(s, s_prime)
                    .into_iter()
                    .map(|v| {
                        let noisy = v + sigma * stream.standard_normal::<F>();
                        noisy.max(-one).min(one)
                    })
                    .collect();
                Action::Continuous(a)
            }
        }
    }
}

/// Bellman targets for a batch, computed from target networks only and
/// clamped to [0, clamp_max]. Exposed so tests can assert that mutating the
/// online nets leaves the targets untouched.
pub fn bellman_targets<F: Scalar>(
    critic: &Critic<F>,
    actor: Option<&Actor<F>>,
    batch: &[PqmBatchItem<F>],
    clamp_max: F,
) -> Vec<F> {
    batch
        .iter()
        .map(|item| {
            let raw = match critic.kind() {
                CriticKind::Discrete { .. } => {
                    let tvals = critic.values_discrete_target(&item.s_next, &item.s_prime);
                    F::one() + tvals[argmin(&tvals)]
                }
                CriticKind::Continuous { .. } => {
                    let actor = actor.expect("continuous critic needs an actor");
                    let a_tilde = actor.action_target(&item.s_next, &item.s_prime);
                    F::one() + critic.value_continuous_target(&item.s_next, &item.s_prime, &a_tilde)
                }
            };
            raw.max(F::zero()).min(clamp_max)
        })
        .collect()
}

/// One critic update on a batch:
/// loss = (f(s_t, s_next, a_t) - 1)^2 + (f(s_t, s', a_t) - target)^2,
/// averaged over the batch, with target = 1 + min_alpha f~(s_next, s', alpha)
/// (discrete) or 1 + f~(s_next, s', a~(s_next, s')) (continuous), clamped.
/// Returns the pre-step mean loss.
pub fn critic_update<F: Scalar>(
    critic: &mut Critic<F>,
    actor: Option<&Actor<F>>,
    batch: &[PqmBatchItem<F>],
    optimizer: &mut AdamState<F>,
    clamp_max: F,
) -> Result<F> {
    if batch.is_empty() {
        return Err(Error::Config("critic_update: empty batch".into()));
    }
    let targets = bellman_targets(critic, actor, batch, clamp_max);
    let n = F::from_f64(batch.len() as f64);
    let two = F::from_f64(2.0);
    let mut grad = Gradient::zeros(&critic.net);
    let mut loss = F::zero();

    for (item, &target) in batch.iter().zip(targets.iter()) {
        match (critic.kind(), &item.a_t) {
            (CriticKind::Discrete { n_actions }, Action::Discrete(a)) => {
                let a = *a;
                if a >= n_actions {
                    return Err(Error::Config(format!("action index {a} out of range")));
                }
                let trace1 = critic.net.forward_trace(&concat2(&item.s_t, &item.s_next));
                let y1 = trace1.output()[a];
                let trace2 = critic.net.forward_trace(&concat2(&item.s_t, &item.s_prime));
                let y2 = trace2.output()[a];
                let r1 = y1 - F::one();
                let r2 = y2 - target;
                loss += r1 * r1 + r2 * r2;

                let mut cot1 = vec![F::zero(); n_actions];
                cot1[a] = two * r1 / n;
                critic.net.backward_acc(&trace1, &cot1, None, &mut grad);
                let mut cot2 = vec![F::zero(); n_actions];
                cot2[a] = two * r2 / n;
                critic.net.backward_acc(&trace2, &cot2, None, &mut grad);
            }
            (CriticKind::Continuous { .. }, Action::Continuous(a)) => {
                let trace1 = critic
                    .net
                    .forward_trace(&concat3(&item.s_t, &item.s_next, a));
                let y1 = trace1.output()[0];
                let trace2 = critic
                    .net
                    .forward_trace(&concat3(&item.s_t, &item.s_prime, a));
                let y2 = trace2.output()[0];
                let r1 = y1 - F::one();
                let r2 = y2 - target;
                loss += r1 * r1 + r2 * r2;

                critic
                    .net
                    .backward_acc(&trace1, &[two * r1 / n], None, &mut grad);
                critic
                    .net
                    .backward_acc(&trace2, &[two * r2 / n], None, &mut grad);
            }
            _ => return Err(Error::Config("action kind does not match critic kind".into())),
        }
    }

    loss /= n;
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("critic loss is {loss}")));
    }
    optimizer.step(&mut critic.net, &grad)?;
    Ok(loss)
}

/// One actor update on a batch: descend f(s_t, s', a(s_t, s')) through the
/// frozen online critic, plus `preact_weight` times the mean squared
/// pre-tanh activations of the actor output layer. The critic parameters
/// receive no update; only its input gradient with respect to the action
/// coordinates is chained into the actor. Returns the pre-step objective.
pub fn actor_update<F: Scalar>(
    critic: &Critic<F>,
    actor: &mut Actor<F>,
    batch: &[PqmBatchItem<F>],
    optimizer: &mut AdamState<F>,
    preact_weight: F,
) -> Result<F> {
    let CriticKind::Continuous { action_dim } = critic.kind() else {
        return Err(Error::Config("actor_update needs a continuous critic".into()));
    };
    if batch.is_empty() {
        return Err(Error::Config("actor_update: empty batch".into()));
    }
    let n = F::from_f64(batch.len() as f64);
    let d_a = F::from_f64(action_dim as f64);
    let two = F::from_f64(2.0);
    let state_dim = critic.state_dim();
    let mut grad = Gradient::zeros(&actor.net);
    let mut objective = F::zero();

    for item in batch {
        let a_trace = actor.net.forward_trace(&concat2(&item.s_t, &item.s_prime));
        let a = a_trace.output().to_vec();
        let f_trace = critic.net.forward_trace(&concat3(&item.s_t, &item.s_prime, &a));
        let f_val = f_trace.output()[0];
        let z = a_trace.output_preactivation();
        let penalty: F = z.iter().map(|&v| v * v).fold(F::zero(), |acc, v| acc + v) / d_a;
        objective += f_val + preact_weight * penalty;

        // d f / d a through the critic's input gradient.
        let critic_grad = critic.net.backward(&f_trace, &[F::one() / n]);
        let dfda = &critic_grad.d_input[2 * state_dim..];
        let preact_cot: Vec<F> = z.iter().map(|&v| two * preact_weight * v / (d_a * n)).collect();
        actor
            .net
            .backward_acc(&a_trace, dfda, Some(&preact_cot), &mut grad);
    }

    objective /= n;
    if !objective.is_finite() {
        return Err(Error::Divergence(format!("actor objective is {objective}")));
    }
    optimizer.step(&mut actor.net, &grad)?;
    Ok(objective)
}

pub(crate) fn concat2<F: Scalar>(a: &[F], b: &[F]) -> State<F> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    out.extend_from_slice(a);
    out.extend_from_slice(b);
    out
}

pub(crate) fn concat3<F: Scalar>(a: &[F], b: &[F], c: &[F]) -> State<F> {
    let mut out = Vec::with_capacity(a.len() + b.len() + c.len());
    out.extend_from_slice(a);
    out.extend_from_slice(b);
    out.extend_from_slice(c);
    out
}
