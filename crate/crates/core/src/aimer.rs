//! The task-specific aimer: maps (state, goal) to a target state.
//!
//! Training minimizes, through the frozen critic (and frozen actor in the
//! continuous case),
//!
//! ```text
//! f(s, h(s,g), a(s, h(s,g))) + lambda1 * d(h(s,g), g) + lambda2 * v(h(s,g))
//! ```
//!
//! where `d` is the squared masked distance to the goal set and `v` the
//! validity penalty of the environment. The first term estimates the
//! quasi-metric from `s` to the proposed target; the penalties replace the
//! hard constraint that the target lie inside the goal set and the state
//! box. In the discrete case the action is the critic argmin and the
//! metric gradient flows through the selected critic output only.

use crate::envs::{goal_distance, EnvInstance, Goal, State, Task};
use crate::error::{Error, Result};
use crate::nn::{AdamState, Gradient, HiddenActivation, Mlp, OutputActivation};
use crate::num::Scalar;
use crate::pqm::{argmin, concat2, concat3, Actor, Critic, CriticKind};
use crate::replay::ReplayBuffer;
use crate::rng::SeedStream;

/// Aimer network plus its penalty weights. Input is the state concatenated
/// with the goal's masked target values; output is a full state vector.
/// Bit-flip aimers use a sigmoid output (components in (0,1), fed to the
/// critic unrounded); point-mass aimers use a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Aimer<F> {
    pub net: Mlp<F>,
    pub lambda1: F,
    pub lambda2: F,
}

impl<F: Scalar> Aimer<F> {
    pub fn new(
        state_dim: usize,
        goal_dim: usize,
        hidden: &[usize],
        output_activation: OutputActivation,
        lambda1: F,
        lambda2: F,
        seed: u64,
    ) -> Result<Self> {
        if lambda1 <= F::zero() {
            return Err(Error::Config("aimer lambda1 must be positive".into()));
        }
        if lambda2 < F::zero() {
            return Err(Error::Config("aimer lambda2 must be non-negative".into()));
        }
        let mut sizes = vec![state_dim + goal_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(state_dim);
        let net = Mlp::init(&sizes, HiddenActivation::Relu, output_activation, seed)?;
        Ok(Aimer { net, lambda1, lambda2 })
    }

    /// The proposed target state for (s, g); no rounding is applied.
    pub fn predict(&self, s: &[F], g: &Goal<F>) -> State<F> {
        self.net.forward(&concat2(s, &g.masked_target_values()))
    }
}

/// A training pair for the aimer. `hindsight` records whether the goal was
/// projected from an achieved state (bookkeeping for tests and stats).
#[derive(Debug, Clone, PartialEq)]
pub struct AimerPair<F> {
    pub s: State<F>,
    pub goal: Goal<F>,
    pub hindsight: bool,
}

/// Draw (state, goal) training pairs: states via the uniform-transition
/// skeleton, goals 50% from the task's sampler and 50% by masking future
/// achieved states from the same episode.
pub fn sample_aimer_pairs<F: Scalar>(
    buffer: &ReplayBuffer<F>,
    task: &Task<F>,
    batch_size: usize,
    stream: &mut SeedStream,
) -> Result<Vec<AimerPair<F>>> {
    if buffer.is_empty() {
        return Err(Error::Config("sample_aimer_pairs on empty buffer".into()));
    }
    let mut pairs = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let (ep, t) = buffer.draw_transition(stream);
        let hindsight = stream.bernoulli(0.5);
        let goal = if hindsight {
            let t_prime = t + stream.index(ep.len() - t);
            task.goal_from_achieved(ep.achieved(t_prime))
        } else {
            task.sample_goal(stream)
        };
        pairs.push(AimerPair {
            s: ep.steps[t].s.clone(),
            goal,
            hindsight,
        });
    }
    Ok(pairs)
}

/// One aimer update on a batch of (state, goal) pairs. The critic (and
/// actor) are read-only: their parameters are bit-unchanged afterwards,
/// only their input gradients with respect to the proposed target state
/// are chained into the aimer. Returns the pre-step mean loss.
pub fn aimer_update<F: Scalar>(
    aimer: &mut Aimer<F>,
    critic: &Critic<F>,
    actor: Option<&Actor<F>>,
    pairs: &[AimerPair<F>],
    env: &EnvInstance<F>,
    optimizer: &mut AdamState<F>,
) -> Result<F> {
    if pairs.is_empty() {
        return Err(Error::Config("aimer_update: empty batch".into()));
    }
    let state_dim = critic.state_dim();
    let n = F::from_f64(pairs.len() as f64);
    let two = F::from_f64(2.0);
    let mut grad = Gradient::zeros(&aimer.net);
    let mut loss = F::zero();

    for pair in pairs {
        let h_trace = aimer
            .net
            .forward_trace(&concat2(&pair.s, &pair.goal.masked_target_values()));
        let h = h_trace.output().to_vec();

        // Metric term and its gradient with respect to h.
        let (f_val, mut dh) = match critic.kind() {
            CriticKind::Discrete { n_actions } => {
                let v_trace = critic.net.forward_trace(&concat2(&pair.s, &h));
                let values = v_trace.output();
                let a_star = argmin(values);
                let f_val = values[a_star];
                let mut cot = vec![F::zero(); n_actions];
                cot[a_star] = F::one();
                let cgrad = critic.net.backward(&v_trace, &cot);
                (f_val, cgrad.d_input[state_dim..2 * state_dim].to_vec())
            }
            CriticKind::Continuous { .. } => {
                let actor = actor.ok_or_else(|| {
                    Error::Config("aimer_update with continuous critic needs an actor".into())
                })?;
                let a_trace = actor.net.forward_trace(&concat2(&pair.s, &h));
                let a = a_trace.output().to_vec();
                let f_trace = critic.net.forward_trace(&concat3(&pair.s, &h, &a));
                let f_val = f_trace.output()[0];
                let cgrad = critic.net.backward(&f_trace, &[F::one()]);
                let mut dh = cgrad.d_input[state_dim..2 * state_dim].to_vec();
                // Path through the frozen actor: df/da chained to the
                // actor's input gradient, s' slice.
                let dfda = &cgrad.d_input[2 * state_dim..];
                let agrad = actor.net.backward(&a_trace, dfda);
                for (d, &g) in dh.iter_mut().zip(agrad.d_input[state_dim..].iter()) {
                    *d += g;
                }
                (f_val, dh)
            }
        };

        // Goal-set distance penalty: squared masked L2.
        let d_val = goal_distance(&h, &pair.goal);
        for i in 0..state_dim {
            if pair.goal.mask[i] {
                dh[i] += aimer.lambda1 * two * (h[i] - pair.goal.target[i]);
            }
        }

        // Validity penalty.
        let (v_val, v_grad) = env.validity_penalty_with_grad(&h);
        for (d, &g) in dh.iter_mut().zip(v_grad.iter()) {
            *d += aimer.lambda2 * g;
        }

        loss += f_val + aimer.lambda1 * d_val + aimer.lambda2 * v_val;
        for d in &mut dh {
            *d /= n;
        }
        aimer.net.backward_acc(&h_trace, &dh, None, &mut grad);
    }

    loss /= n;
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("aimer loss is {loss}")));
    }
    optimizer.step(&mut aimer.net, &grad)?;
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{Action, EnvInstance};
    use crate::replay::{Episode, Step};

    fn stream(seed: u64) -> SeedStream {
        SeedStream::derive(seed, &[4000])
    }

    fn zero_critic(state_dim: usize, n_actions: usize) -> Critic<f64> {
        let mut critic = Critic::<f64>::discrete(state_dim, n_actions, &[4], 0).unwrap();
        let sizes = critic.net.layer_sizes().to_vec();
        for l in 0..critic.net.num_layers() {
            let w = vec![0.0; sizes[l] * sizes[l + 1]];
            let b = vec![0.0; sizes[l + 1]];
            critic.net.set_layer(l, w.clone(), b.clone()).unwrap();
            critic.target_net.set_layer(l, w, b).unwrap();
        }
        critic
    }

    fn goal(mask: Vec<bool>, target: Vec<f64>) -> Goal<f64> {
        Goal { mask, target, tolerance: 0.0 }
    }

    #[test]
    fn predict_is_deterministic_and_sigmoid_bounded() {
        let aimer =
            Aimer::<f64>::new(6, 3, &[16], OutputActivation::Sigmoid, 100.0, 0.0, 1).unwrap();
        let g = goal(
            vec![true, true, true, false, false, false],
            vec![1.0, 0.0, 1.0, 0.0, 0.0, 0.0],
        );
        let s = vec![0.0, 1.0, 0.0, 1.0, 1.0, 0.0];
        let h1 = aimer.predict(&s, &g);
        let h2 = aimer.predict(&s, &g);
        assert_eq!(h1, h2);
        assert!(h1.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn lambda1_alone_drives_masked_coords_to_target() {
        // Critic frozen at zero, lambda2 = 0: only the goal penalty acts, so
        // the masked output coordinates must converge to the goal target.
        let env = EnvInstance::<f64>::pointmass();
        let critic = zero_critic(4, 1);
        let mut aimer =
            Aimer::<f64>::new(4, 2, &[16], OutputActivation::Linear, 1.0, 0.0, 2).unwrap();
        let mut adam = AdamState::new(&aimer.net, 0.01);
        let g = goal(vec![true, true, false, false], vec![0.4, -0.3, 0.0, 0.0]);
        let pairs = vec![AimerPair { s: vec![0.1, 0.2, 0.0, 0.0], goal: g.clone(), hindsight: false }];
        for _ in 0..500 {
            aimer_update(&mut aimer, &critic, None, &pairs, &env, &mut adam).unwrap();
        }
        let h = aimer.predict(&pairs[0].s, &g);
        assert!((h[0] - 0.4).abs() < 0.02, "h {h:?}");
        assert!((h[1] + 0.3).abs() < 0.02, "h {h:?}");
    }

    #[test]
    fn update_freezes_critic_and_actor() {
        let env = EnvInstance::<f64>::pointmass();
        let critic = Critic::<f64>::continuous(4, 2, &[8], 3).unwrap();
        let actor = Actor::<f64>::new(4, 2, &[8], 4).unwrap();
        let critic_before = critic.clone();
        let actor_before = actor.clone();
        let mut aimer =
            Aimer::<f64>::new(4, 2, &[8], OutputActivation::Linear, 500.0, 50.0, 5).unwrap();
        let mut adam = AdamState::new(&aimer.net, 0.001);
        let g = goal(vec![true, true, false, false], vec![0.5, 0.5, 0.0, 0.0]);
        let pairs = vec![AimerPair { s: vec![-0.5, -0.5, 0.0, 0.0], goal: g, hindsight: false }];
        aimer_update(&mut aimer, &critic, Some(&actor), &pairs, &env, &mut adam).unwrap();
        assert_eq!(critic, critic_before);
        assert_eq!(actor, actor_before);
    }

    #[test]
    fn loss_decreases_on_fixed_batch() {
        let env = EnvInstance::<f64>::bitflip(4).unwrap();
        let critic = Critic::<f64>::discrete(4, 4, &[16], 6).unwrap();
        let mut aimer =
            Aimer::<f64>::new(4, 2, &[16], OutputActivation::Sigmoid, 10.0, 0.0, 7).unwrap();
        let mut adam = AdamState::new(&aimer.net, 0.001);
        let mut st = stream(8);
        let task = env.task("first-half").unwrap();
        let pairs: Vec<AimerPair<f64>> = (0..16)
            .map(|_| {
                let s: Vec<f64> = (0..4).map(|_| st.bit()).collect();
                AimerPair { s, goal: task.sample_goal(&mut st), hindsight: false }
            })
            .collect();
        let first = aimer_update(&mut aimer, &critic, None, &pairs, &env, &mut adam).unwrap();
        let mut last = first;
        for _ in 0..199 {
            last = aimer_update(&mut aimer, &critic, None, &pairs, &env, &mut adam).unwrap();
        }
        assert!(last < first, "aimer loss did not decrease: {first} -> {last}");
    }

    #[test]
    fn collapse_witness_without_lambda1() {
        // Hand-built critic f(s, c, a) = |c0| + |c1|: with lambda1 = 0 the
        // aimer ignores the goal entirely and collapses onto the critic's
        // minimum, leaving near-zero predicted distance. This documents why
        // lambda1 > 0 is required.
        let env = EnvInstance::<f64>::bitflip(2).unwrap();
        let mut critic = Critic::<f64>::discrete(2, 1, &[4], 0).unwrap();
        // Inputs are (s0, s1, c0, c1); only the candidate half is wired.
        critic
            .net
            .set_layer(
                0,
                vec![
                    0.0, 0.0, 1.0, 0.0, //  relu(c0)
                    0.0, 0.0, -1.0, 0.0, // relu(-c0)
                    0.0, 0.0, 0.0, 1.0, //  relu(c1)
                    0.0, 0.0, 0.0, -1.0, // relu(-c1)
                ],
                vec![0.0; 4],
            )
            .unwrap();
        critic.net.set_layer(1, vec![1.0, 1.0, 1.0, 1.0], vec![0.0]).unwrap();
        let mut aimer =
            Aimer::<f64>::new(2, 1, &[8], OutputActivation::Linear, 1.0, 0.0, 9).unwrap();
        aimer.lambda1 = 0.0;
        let mut adam = AdamState::new(&aimer.net, 0.01);
        let g = goal(vec![true, false], vec![1.0, 0.0]);
        let pairs = vec![AimerPair { s: vec![0.0, 1.0], goal: g.clone(), hindsight: false }];
        for _ in 0..500 {
            aimer_update(&mut aimer, &critic, None, &pairs, &env, &mut adam).unwrap();
        }
        let h = aimer.predict(&[0.0, 1.0], &g);
        // The goal wants h[0] = 1.0; the collapsed aimer sits at the
        // critic's minimum instead.
        assert!(h[0].abs() < 0.05 && h[1].abs() < 0.05, "expected collapse to 0, got {h:?}");
        let pred = critic.values_discrete(&pairs[0].s, &h)[0];
        assert!(pred < 0.1, "predicted distance {pred}");
    }

    #[test]
    fn sampled_pairs_carry_task_mask_and_future_witness() {
        let env = EnvInstance::<f64>::bitflip(6).unwrap();
        let task = env.task("first-half").unwrap();
        let mut buf = ReplayBuffer::new(1000);
        let mut st = stream(10);
        for _ in 0..4 {
            let (mut s, g) = env.reset(&task, &mut st).unwrap();
            let mut steps = Vec::new();
            for _ in 0..6 {
                let a = st.index(6);
                let s_next = env.step(&s, &Action::Discrete(a));
                steps.push(Step { s: s.clone(), a: Action::Discrete(a), s_next: s_next.clone() });
                s = s_next;
            }
            buf.store(Episode { steps, goal: g }).unwrap();
        }
        let pairs = sample_aimer_pairs(&buf, &task, 64, &mut stream(11)).unwrap();
        let again = sample_aimer_pairs(&buf, &task, 64, &mut stream(11)).unwrap();
        assert_eq!(pairs, again);
        for p in &pairs {
            assert_eq!(p.goal.mask, task.mask);
            if p.hindsight {
                let witness = buf.episodes().any(|ep| {
                    (0..ep.len()).any(|t| {
                        ep.steps[t].s == p.s
                            && (t..ep.len()).any(|tp| {
                                task.goal_from_achieved(ep.achieved(tp)).target == p.goal.target
                            })
                    })
                });
                assert!(witness, "hindsight goal without future witness");
            }
        }
        assert!(pairs.iter().any(|p| p.hindsight));
        assert!(pairs.iter().any(|p| !p.hindsight));
    }
}
