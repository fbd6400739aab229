//! Environments, goal spaces, and ground-truth distance oracles.
//!
//! Two environments are provided:
//!
//! - `bitflip(n)`: states are Boolean vectors of `n` bits, one discrete
//!   action per bit toggles that bit; the horizon equals the number of
//!   goal bits of the active task.
//! - `pointmass`: a 2-d point with inertia. State is `[x0, x1, v0, v1]`,
//!   actions are continuous thrust in `[-1, 1]^2`, dynamics
//!   `v' = clamp(v + 0.1 a, ±0.25)`, `x' = clamp(x + v', ±1)`. The inertia
//!   makes step counts between states asymmetric, which is what the
//!   quasi-metric is supposed to pick up.
//!
//! A goal is a set of states: a coordinate mask plus target values for the
//! masked coordinates. A task fixes the mask and samples goals over it.

mod bfs;

pub use bfs::pointmass_steps_oracle;

use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::rng::SeedStream;

/// A state is a plain real vector of environment-specific dimension.
pub type State<F> = Vec<F>;

/// An action: a discrete index or a continuous vector in `[-1, 1]^d`.
#[derive(Debug, Clone, PartialEq)]
pub enum Action<F> {
    Discrete(usize),
    Continuous(Vec<F>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionSpec {
    Discrete { n_actions: usize },
    Continuous { dim: usize },
}

/// A set of states: constrained coordinates (mask) and their target values.
#[derive(Debug, Clone, PartialEq)]
pub struct Goal<F> {
    pub mask: Vec<bool>,
    /// Full-length vector; meaningful only where `mask` is true.
    pub target: Vec<F>,
    pub tolerance: F,
}

impl<F: Scalar> Goal<F> {
    pub fn goal_dim(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// The masked target values, compressed to length `goal_dim()`. This is
    /// the goal encoding fed to aimer and Q networks.
    pub fn masked_target_values(&self) -> Vec<F> {
        self.mask
            .iter()
            .zip(self.target.iter())
            .filter_map(|(&m, &t)| m.then_some(t))
            .collect()
    }

    /// Treat a concrete state as a goal over all coordinates.
    pub fn from_state(state: &[F], tolerance: F) -> Self {
        Goal {
            mask: vec![true; state.len()],
            target: state.to_vec(),
            tolerance,
        }
    }

    /// Overwrite the masked coordinates of `base` with this goal's targets.
    /// The minimal embedding of a goal into the state space.
    pub fn overwrite(&self, base: &[F]) -> State<F> {
        assert_eq!(base.len(), self.mask.len(), "state/goal dimension mismatch");
        base.iter()
            .zip(self.mask.iter().zip(self.target.iter()))
            .map(|(&b, (&m, &t))| if m { t } else { b })
            .collect()
    }
}

/// A family of goals sharing one mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Task<F> {
    pub name: String,
    pub mask: Vec<bool>,
    pub tolerance: F,
    sampler: GoalSampler,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum GoalSampler {
    /// Uniform bit per masked coordinate.
    UniformBits,
    /// Uniform in [-1, 1] per masked coordinate.
    UniformBox,
}

impl<F: Scalar> Task<F> {
    pub fn goal_dim(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Draw a goal carrying exactly this task's mask.
    pub fn sample_goal(&self, stream: &mut SeedStream) -> Goal<F> {
        let mut target = vec![F::zero(); self.mask.len()];
        for (i, &m) in self.mask.iter().enumerate() {
            if m {
                target[i] = match self.sampler {
                    GoalSampler::UniformBits => stream.bit(),
                    GoalSampler::UniformBox => stream.uniform(F::from_f64(-1.0), F::from_f64(1.0)),
                };
            }
        }
        Goal {
            mask: self.mask.clone(),
            target,
            tolerance: self.tolerance,
        }
    }

    /// Project an achieved state onto this task's goal space
    /// (hindsight relabeling).
    pub fn goal_from_achieved(&self, achieved: &[F]) -> Goal<F> {
        assert_eq!(achieved.len(), self.mask.len(), "state/task dimension mismatch");
        let mut target = vec![F::zero(); self.mask.len()];
        for (i, &m) in self.mask.iter().enumerate() {
            if m {
                target[i] = achieved[i];
            }
        }
        Goal {
            mask: self.mask.clone(),
            target,
            tolerance: self.tolerance,
        }
    }
}

const POINTMASS_ACCEL: f64 = 0.1;
const POINTMASS_VMAX: f64 = 0.25;
const POINTMASS_BOX: f64 = 1.0;
const POINTMASS_TOL: f64 = 0.05;
const POINTMASS_HORIZON: usize = 50;
const RESET_RETRIES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    BitFlip { n: usize },
    PointMass,
}

/// An environment instance: dimensions, action spec, dynamics, tasks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnvInstance<F> {
    kind: EnvKind,
    _scalar: std::marker::PhantomData<F>,
}

impl<F: Scalar> EnvInstance<F> {
    pub fn bitflip(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Config(format!("bitflip needs n >= 2, got {n}")));
        }
        Ok(EnvInstance {
            kind: EnvKind::BitFlip { n },
            _scalar: std::marker::PhantomData,
        })
    }

    pub fn pointmass() -> Self {
        EnvInstance {
            kind: EnvKind::PointMass,
            _scalar: std::marker::PhantomData,
        }
    }

    pub fn from_name(name: &str, bits: usize) -> Result<Self> {
        match name {
            "bitflip" => Self::bitflip(bits),
            "pointmass" => Ok(Self::pointmass()),
            other => Err(Error::Config(format!(
                "unknown env '{other}' (expected bitflip or pointmass)"
            ))),
        }
    }

    pub fn kind(&self) -> EnvKind {
        self.kind
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            EnvKind::BitFlip { .. } => "bitflip",
            EnvKind::PointMass => "pointmass",
        }
    }

    pub fn state_dim(&self) -> usize {
        match self.kind {
            EnvKind::BitFlip { n } => n,
            EnvKind::PointMass => 4,
        }
    }

    pub fn action_spec(&self) -> ActionSpec {
        match self.kind {
            EnvKind::BitFlip { n } => ActionSpec::Discrete { n_actions: n },
            EnvKind::PointMass => ActionSpec::Continuous { dim: 2 },
        }
    }

    /// Maximum episode length. For bit-flip this equals the number of goal
    /// bits of the active task; for pointmass it is fixed.
    pub fn horizon(&self, task: &Task<F>) -> usize {
        match self.kind {
            EnvKind::BitFlip { .. } => task.goal_dim(),
            EnvKind::PointMass => POINTMASS_HORIZON,
        }
    }

    /// The tasks defined for this environment.
    pub fn tasks(&self) -> Vec<Task<F>> {
        match self.kind {
            EnvKind::BitFlip { n } => {
                let half = n / 2;
                let first = Task {
                    name: "first-half".into(),
                    mask: (0..n).map(|i| i < half).collect(),
                    tolerance: F::zero(),
                    sampler: GoalSampler::UniformBits,
                };
                let last = Task {
                    name: "last-half".into(),
                    mask: (0..n).map(|i| i >= n - half).collect(),
                    tolerance: F::zero(),
                    sampler: GoalSampler::UniformBits,
                };
                vec![first, last]
            }
            EnvKind::PointMass => {
                let tol = F::from_f64(POINTMASS_TOL);
                let reach_pos = Task {
                    name: "reach-pos".into(),
                    mask: vec![true, true, false, false],
                    tolerance: tol,
                    sampler: GoalSampler::UniformBox,
                };
                let reach_x = Task {
                    name: "reach-x".into(),
                    mask: vec![true, false, false, false],
                    tolerance: tol,
                    sampler: GoalSampler::UniformBox,
                };
                vec![reach_pos, reach_x]
            }
        }
    }

    pub fn task(&self, name: &str) -> Result<Task<F>> {
        self.tasks()
            .into_iter()
            .find(|t| t.name == name)
            .ok_or_else(|| {
                let names: Vec<String> = self.tasks().iter().map(|t| t.name.clone()).collect();
                Error::Config(format!(
                    "unknown task '{name}' for env {} (available: {})",
                    self.name(),
                    names.join(", ")
                ))
            })
    }

    /// Draw an initial state and goal. If the state already satisfies the
    /// goal, both are resampled (bounded retries) so episodes are never
    /// zero-length.
    pub fn reset(&self, task: &Task<F>, stream: &mut SeedStream) -> Result<(State<F>, Goal<F>)> {
        for _ in 0..RESET_RETRIES {
            let state = match self.kind {
                EnvKind::BitFlip { n } => (0..n).map(|_| stream.bit()).collect::<Vec<F>>(),
                EnvKind::PointMass => {
                    let x0 = stream.uniform(F::from_f64(-1.0), F::from_f64(1.0));
                    let x1 = stream.uniform(F::from_f64(-1.0), F::from_f64(1.0));
                    vec![x0, x1, F::zero(), F::zero()]
                }
            };
            let goal = task.sample_goal(stream);
            if !goal_achieved(&state, &goal) {
                return Ok((state, goal));
            }
        }
        Err(Error::Config(format!(
            "env_reset: could not sample a non-satisfied (state, goal) pair for task '{}' in {} tries",
            task.name, RESET_RETRIES
        )))
    }

    /// Deterministic transition. Continuous action components outside
    /// `[-1, 1]` are clamped; an out-of-range discrete index panics.
    pub fn step(&self, state: &[F], action: &Action<F>) -> State<F> {
        assert_eq!(state.len(), self.state_dim(), "state dimension mismatch");
        match (self.kind, action) {
            (EnvKind::BitFlip { n }, Action::Discrete(a)) => {
                assert!(*a < n, "bitflip action {a} out of range (n = {n})");
                let mut next = state.to_vec();
                next[*a] = F::one() - next[*a];
                next
            }
            (EnvKind::PointMass, Action::Continuous(a)) => {
                assert_eq!(a.len(), 2, "pointmass action dimension");
                let one = F::from_f64(1.0);
                let accel = F::from_f64(POINTMASS_ACCEL);
                let vmax = F::from_f64(POINTMASS_VMAX);
                let bound = F::from_f64(POINTMASS_BOX);
                let mut next = state.to_vec();
                for axis in 0..2 {
                    let thrust = clamp(a[axis], -one, one);
                    let v = clamp(state[2 + axis] + accel * thrust, -vmax, vmax);
                    let x = clamp(state[axis] + v, -bound, bound);
                    next[axis] = x;
                    next[2 + axis] = v;
                }
                next
            }
            _ => panic!("action kind does not match env {}", self.name()),
        }
    }

    /// Penalty for leaving the valid state box; zero exactly on the box.
    pub fn validity_penalty(&self, state: &[F]) -> F {
        self.validity_penalty_with_grad(state).0
    }

    /// Penalty plus its gradient with respect to the state (needed when the
    /// penalty is part of a training objective).
    pub fn validity_penalty_with_grad(&self, state: &[F]) -> (F, Vec<F>) {
        assert_eq!(state.len(), self.state_dim(), "state dimension mismatch");
        let two = F::from_f64(2.0);
        let mut value = F::zero();
        let mut grad = vec![F::zero(); state.len()];
        match self.kind {
            EnvKind::BitFlip { .. } => {
                // Squared distance to the nearest point of [0, 1]^n.
                for (i, &s) in state.iter().enumerate() {
                    let below = (-s).max(F::zero());
                    let above = (s - F::one()).max(F::zero());
                    value += below * below + above * above;
                    grad[i] = -two * below + two * above;
                }
            }
            EnvKind::PointMass => {
                let bound = F::from_f64(POINTMASS_BOX);
                let vmax = F::from_f64(POINTMASS_VMAX);
                for axis in 0..2 {
                    let x = state[axis];
                    let over_x = (x.abs() - bound).max(F::zero());
                    value += over_x * over_x;
                    grad[axis] = two * over_x * x.signum();
                    let v = state[2 + axis];
                    let over_v = (v.abs() - vmax).max(F::zero());
                    value += over_v * over_v;
                    grad[2 + axis] = two * over_v * v.signum();
                }
            }
        }
        (value, grad)
    }
}

fn clamp<F: Scalar>(v: F, lo: F, hi: F) -> F {
    if v < lo {
        lo
    } else if v > hi {
        hi
    } else {
        v
    }
}

/// Squared L2 norm of `(s - target)` over the masked coordinates. This is
/// the differentiable goal-set distance used by the aimer penalty.
pub fn goal_distance<F: Scalar>(state: &[F], goal: &Goal<F>) -> F {
    assert_eq!(state.len(), goal.mask.len(), "state/goal dimension mismatch");
    let mut acc = F::zero();
    for i in 0..state.len() {
        if goal.mask[i] {
            let d = state[i] - goal.target[i];
            acc += d * d;
        }
    }
    acc
}

/// Success predicate: squared masked L2 within tolerance^2. With tolerance
/// zero (bit-flip) this is exact masked equality.
pub fn goal_achieved<F: Scalar>(state: &[F], goal: &Goal<F>) -> bool {
    goal_distance(state, goal) <= goal.tolerance * goal.tolerance
}

/// Count of differing coordinates between two Boolean states; equals the
/// true minimum step count in the bit-flip environment.
pub fn hamming_oracle<F: Scalar>(a: &[F], b: &[F]) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "hamming_oracle: lengths {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let is_bit = |v: F| v == F::zero() || v == F::one();
    if !a.iter().chain(b.iter()).all(|&v| is_bit(v)) {
        return Err(Error::Config("hamming_oracle: non-boolean state".into()));
    }
    Ok(a.iter().zip(b.iter()).filter(|(x, y)| x != y).count())
}
