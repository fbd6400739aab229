//! Episode-structured replay with hindsight ("future") relabeling.
//!
//! The buffer stores whole episodes and evicts whole episodes, oldest
//! first, so the chained-transition invariant that "future" relabeling
//! depends on always holds. Capacity is counted in transitions.
//!
//! Relabeling happens at sample time. Each sampled transition keeps its
//! real `(s_t, a_t, s_next)`; with probability `p_relabel` the target is
//! replaced by a state actually achieved later in the same episode. The
//! PQM view relabels with future achieved *states*; the DQN view relabels
//! with future achieved *goals* (the task mask applied to the achieved
//! state) and recomputes reward/done against the relabeled goal.

use std::collections::VecDeque;

use crate::envs::{goal_achieved, Action, Goal, State};
use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::rng::SeedStream;

/// One environment transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Step<F> {
    pub s: State<F>,
    pub a: Action<F>,
    pub s_next: State<F>,
}

/// A chained sequence of steps plus the goal pursued while collecting it.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode<F> {
    pub steps: Vec<Step<F>>,
    pub goal: Goal<F>,
}

impl<F: Scalar> Episode<F> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// The state achieved after step `t` (i.e. `s_next` of step `t`).
    pub fn achieved(&self, t: usize) -> &State<F> {
        &self.steps[t].s_next
    }

    pub fn final_achieved(&self) -> &State<F> {
        &self.steps.last().expect("episode non-empty").s_next
    }

    fn is_chained(&self) -> bool {
        self.steps.windows(2).all(|w| w[0].s_next == w[1].s)
    }
}

/// A PQM training tuple `(s_t, a_t, s_next, s')`.
#[derive(Debug, Clone, PartialEq)]
pub struct PqmBatchItem<F> {
    pub s_t: State<F>,
    pub a_t: Action<F>,
    pub s_next: State<F>,
    /// Relabeled target state.
    pub s_prime: State<F>,
    /// Bookkeeping: true when `s_prime` came from the future-achieved branch.
    pub relabeled: bool,
}

/// A DQN training tuple with goal, reward, and terminal flag.
#[derive(Debug, Clone, PartialEq)]
pub struct DqnBatchItem<F> {
    pub s_t: State<F>,
    pub a_t: usize,
    pub s_next: State<F>,
    pub goal: Goal<F>,
    pub reward: F,
    pub done: bool,
    pub relabeled: bool,
}

/// Ring buffer of episodes bounded by a transition count.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<F> {
    episodes: VecDeque<Episode<F>>,
    capacity: usize,
    total_transitions: usize,
}

impl<F: Scalar> ReplayBuffer<F> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            episodes: VecDeque::new(),
            capacity,
            total_transitions: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn total_transitions(&self) -> usize {
        self.total_transitions
    }

    pub fn num_episodes(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn episodes(&self) -> impl Iterator<Item = &Episode<F>> {
        self.episodes.iter()
    }

    /// Append an episode, then evict oldest episodes until the transition
    /// count is back under capacity. Empty or broken-chain episodes are
    /// rejected.
    pub fn store(&mut self, episode: Episode<F>) -> Result<()> {
        if episode.is_empty() {
            return Err(Error::Config("cannot store an empty episode".into()));
        }
        if !episode.is_chained() {
            return Err(Error::Config(
                "episode steps do not chain (s_next of step t must equal s of step t+1)".into(),
            ));
        }
        self.total_transitions += episode.len();
        self.episodes.push_back(episode);
        while self.total_transitions > self.capacity {
            let evicted = self.episodes.pop_front().expect("non-empty while over capacity");
            self.total_transitions -= evicted.len();
        }
        Ok(())
    }

    /// Uniform transition draw: episode weighted by length, step uniform.
    /// Returns the episode and the step index within it.
    pub fn draw_transition(&self, stream: &mut SeedStream) -> (&Episode<F>, usize) {
        assert!(!self.is_empty(), "draw_transition on empty buffer");
        let mut idx = stream.index(self.total_transitions);
        for ep in &self.episodes {
            if idx < ep.len() {
                return (ep, idx);
            }
            idx -= ep.len();
        }
        unreachable!("transition index within total count")
    }

    /// Sample PQM training tuples with the "future" strategy: with
    /// probability `p_relabel` the target state is a future achieved state
    /// of the same episode; otherwise it is the episode's final achieved
    /// state with the masked coordinates overwritten by the original goal.
    pub fn sample_pqm_batch(
        &self,
        batch_size: usize,
        p_relabel: f64,
        stream: &mut SeedStream,
    ) -> Result<Vec<PqmBatchItem<F>>> {
        if self.is_empty() {
            return Err(Error::Config("sample_pqm_batch on empty buffer".into()));
        }
        let mut batch = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let (ep, t) = self.draw_transition(stream);
            let relabeled = stream.bernoulli(p_relabel);
            let s_prime = if relabeled {
                let t_prime = t + stream.index(ep.len() - t);
                ep.achieved(t_prime).clone()
            } else {
                ep.goal.overwrite(ep.final_achieved())
            };
            let step = &ep.steps[t];
            batch.push(PqmBatchItem {
                s_t: step.s.clone(),
                a_t: step.a.clone(),
                s_next: step.s_next.clone(),
                s_prime,
                relabeled,
            });
        }
        Ok(batch)
    }

    /// Sample DQN training tuples: same skeleton, but the relabeled target
    /// is a goal (the episode's mask applied to a future achieved state),
    /// and reward/done are computed against the possibly relabeled goal.
    pub fn sample_dqn_batch(
        &self,
        batch_size: usize,
        p_relabel: f64,
        stream: &mut SeedStream,
    ) -> Result<Vec<DqnBatchItem<F>>> {
        if self.is_empty() {
            return Err(Error::Config("sample_dqn_batch on empty buffer".into()));
        }
        let mut batch = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let (ep, t) = self.draw_transition(stream);
            let relabeled = stream.bernoulli(p_relabel);
            let goal = if relabeled {
                let t_prime = t + stream.index(ep.len() - t);
                project_goal(&ep.goal, ep.achieved(t_prime))
            } else {
                ep.goal.clone()
            };
            let step = &ep.steps[t];
            let a_t = match step.a {
                Action::Discrete(a) => a,
                Action::Continuous(_) => {
                    return Err(Error::Config(
                        "sample_dqn_batch requires discrete actions".into(),
                    ))
                }
            };
            let done = goal_achieved(&step.s_next, &goal);
            let reward = if done { F::zero() } else { -F::one() };
            batch.push(DqnBatchItem {
                s_t: step.s.clone(),
                a_t,
                s_next: step.s_next.clone(),
                goal,
                reward,
                done,
                relabeled,
            });
        }
        Ok(batch)
    }
}

/// Apply a goal's mask to an achieved state: the hindsight goal.
pub(crate) fn project_goal<F: Scalar>(template: &Goal<F>, achieved: &[F]) -> Goal<F> {
    let mut target = vec![F::zero(); template.mask.len()];
    for (i, &m) in template.mask.iter().enumerate() {
        if m {
            target[i] = achieved[i];
        }
    }
    Goal {
        mask: template.mask.clone(),
        target,
        tolerance: template.tolerance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EnvInstance;
    use proptest::prelude::*;

    fn stream(seed: u64) -> SeedStream {
        SeedStream::derive(seed, &[2000])
    }

    /// Random but chained bit-flip episode of the given length.
    fn bitflip_episode(n: usize, len: usize, seed: u64) -> Episode<f64> {
        let env = EnvInstance::<f64>::bitflip(n).unwrap();
        let task = env.task("first-half").unwrap();
        let mut st = stream(seed);
        let (mut s, goal) = env.reset(&task, &mut st).unwrap();
        let mut steps = Vec::new();
        for _ in 0..len {
            let a = st.index(n);
            let s_next = env.step(&s, &Action::Discrete(a));
            steps.push(Step {
                s: s.clone(),
                a: Action::Discrete(a),
                s_next: s_next.clone(),
            });
            s = s_next;
        }
        Episode { steps, goal }
    }

    #[test]
    fn store_counts_transitions() {
        let mut buf = ReplayBuffer::new(100);
        buf.store(bitflip_episode(6, 6, 1)).unwrap();
        assert_eq!(buf.total_transitions(), 6);
        assert_eq!(buf.num_episodes(), 1);
    }

    #[test]
    fn whole_episode_eviction() {
        let mut buf = ReplayBuffer::new(10);
        buf.store(bitflip_episode(6, 6, 1)).unwrap();
        buf.store(bitflip_episode(6, 6, 2)).unwrap();
        assert_eq!(buf.total_transitions(), 6);
        assert_eq!(buf.num_episodes(), 1);
    }

    #[test]
    fn rejects_empty_and_broken_episodes() {
        let mut buf = ReplayBuffer::<f64>::new(10);
        let empty = Episode {
            steps: vec![],
            goal: Goal {
                mask: vec![true],
                target: vec![0.0],
                tolerance: 0.0,
            },
        };
        assert!(buf.store(empty).is_err());

        let mut tampered = bitflip_episode(6, 4, 3);
        tampered.steps[1].s[0] = 1.0 - tampered.steps[1].s[0];
        assert!(buf.store(tampered).is_err());
    }

    #[test]
    fn one_step_episode_relabels_to_its_own_next_state() {
        let mut buf = ReplayBuffer::new(100);
        let ep = bitflip_episode(6, 1, 4);
        let expected = ep.steps[0].s_next.clone();
        buf.store(ep).unwrap();
        let batch = buf.sample_pqm_batch(32, 1.0, &mut stream(5)).unwrap();
        for item in batch {
            assert!(item.relabeled);
            assert_eq!(item.s_prime, expected);
        }
    }

    #[test]
    fn p_relabel_zero_derives_from_goal() {
        let mut buf = ReplayBuffer::new(100);
        let ep = bitflip_episode(6, 5, 6);
        let expected = ep.goal.overwrite(ep.final_achieved());
        buf.store(ep).unwrap();
        let batch = buf.sample_pqm_batch(32, 0.0, &mut stream(7)).unwrap();
        for item in batch {
            assert!(!item.relabeled);
            assert_eq!(item.s_prime, expected);
        }
    }

    #[test]
    fn dqn_relabel_at_t_is_terminal_with_zero_reward() {
        let mut buf = ReplayBuffer::new(100);
        // Length-1 episodes force t' = t, so the relabeled goal is achieved
        // at s_next by construction.
        buf.store(bitflip_episode(6, 1, 8)).unwrap();
        let batch = buf.sample_dqn_batch(32, 1.0, &mut stream(9)).unwrap();
        for item in batch {
            assert!(item.done);
            assert_eq!(item.reward, 0.0);
            assert_eq!(item.goal.mask, vec![true, true, true, false, false, false]);
        }
    }

    #[test]
    fn dqn_non_achieving_transition_has_minus_one_reward() {
        let mut buf = ReplayBuffer::new(1000);
        for seed in 0..5 {
            buf.store(bitflip_episode(6, 6, 100 + seed)).unwrap();
        }
        let batch = buf.sample_dqn_batch(200, 0.0, &mut stream(11)).unwrap();
        for item in &batch {
            if !item.done {
                assert_eq!(item.reward, -1.0);
            }
        }
        assert!(batch.iter().any(|i| !i.done));
    }

    #[test]
    fn sampling_is_deterministic_given_stream() {
        let mut buf = ReplayBuffer::new(1000);
        for seed in 0..4 {
            buf.store(bitflip_episode(6, 6, 200 + seed)).unwrap();
        }
        let a = buf.sample_pqm_batch(64, 0.8, &mut stream(12)).unwrap();
        let b = buf.sample_pqm_batch(64, 0.8, &mut stream(12)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn relabel_fraction_matches_probability() {
        let mut buf = ReplayBuffer::new(10_000);
        for seed in 0..8 {
            buf.store(bitflip_episode(6, 6, 300 + seed)).unwrap();
        }
        let batch = buf.sample_pqm_batch(10_000, 0.8, &mut stream(13)).unwrap();
        let frac = batch.iter().filter(|i| i.relabeled).count() as f64 / 10_000.0;
        assert!((frac - 0.8).abs() < 0.02, "relabel fraction {frac}");
    }

    proptest! {
        /// Relabel soundness: every relabeled PQM target is an achieved
        /// state at some index >= t in its source episode; every relabeled
        /// DQN goal is the masked projection of one.
        #[test]
        fn relabels_come_from_the_future(ep_seeds in proptest::collection::vec(0u64..1000, 1..6),
                                         sample_seed in 0u64..1000) {
            let mut buf = ReplayBuffer::new(10_000);
            for (i, &seed) in ep_seeds.iter().enumerate() {
                let len = 1 + (seed as usize % 6);
                buf.store(bitflip_episode(6, len, seed * 31 + i as u64)).unwrap();
            }
            let batch = buf.sample_pqm_batch(64, 0.8, &mut stream(sample_seed)).unwrap();
            for item in &batch {
                if item.relabeled {
                    let witness = buf.episodes().any(|ep| {
                        (0..ep.len()).any(|t| {
                            ep.steps[t].s == item.s_t
                                && ep.steps[t].s_next == item.s_next
                                && (t..ep.len()).any(|tp| ep.achieved(tp) == &item.s_prime)
                        })
                    });
                    prop_assert!(witness, "PQM relabel without future witness");
                }
            }
            let dqn = buf.sample_dqn_batch(64, 0.8, &mut stream(sample_seed + 1)).unwrap();
            for item in &dqn {
                if item.relabeled {
                    let witness = buf.episodes().any(|ep| {
                        (0..ep.len()).any(|t| {
                            ep.steps[t].s == item.s_t
                                && (t..ep.len()).any(|tp| {
                                    let proj = super::project_goal(&ep.goal, ep.achieved(tp));
                                    proj.target == item.goal.target
                                })
                        })
                    });
                    prop_assert!(witness, "DQN relabel without future witness");
                }
            }
        }

        /// Transition count never exceeds capacity after any store sequence.
        #[test]
        fn capacity_never_exceeded(lens in proptest::collection::vec(1usize..8, 1..20),
                                   capacity in 8usize..40) {
            let mut buf = ReplayBuffer::new(capacity);
            for (i, &len) in lens.iter().enumerate() {
                buf.store(bitflip_episode(6, len, 400 + i as u64)).unwrap();
                prop_assert!(buf.total_transitions() <= capacity);
            }
        }
    }
}
