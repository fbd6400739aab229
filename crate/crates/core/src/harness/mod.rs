//! Training loop, evaluation protocols, transfer, and run outputs.
//!
//! One epoch runs `cycles_per_epoch` cycles; each cycle collects
//! `episodes_per_cycle` episodes with the exploration policy, stores them,
//! and performs `opt_steps_per_cycle` optimization steps (critic, then
//! actor when continuous, then aimer, each on an independently sampled
//! batch). Target networks are updated by polyak averaging after every
//! optimization step (bit-flip schedule) or after every cycle (point-mass
//! schedule). After the cycles, the policy is evaluated greedily on a
//! dedicated seed stream and one metrics row is emitted.
//!
//! Determinism: every random draw comes from a stream derived from
//! (seed, purpose, epoch, ...), so a run is a pure function of its config,
//! and resuming from a checkpoint at epoch k regenerates exactly the
//! streams of an uninterrupted run. The replay buffer is not checkpointed;
//! resume-exactness therefore holds for configs whose buffer capacity is
//! at most one epoch's collected transitions (every epoch flushes the
//! buffer), which the determinism tests use.

pub mod checkpoint;
pub mod config;
pub mod metrics;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{AimerRecompute, LearnerKind, TargetUpdate, TrainConfig};
pub use metrics::{
    format_significant, metrics_csv_row, write_accuracy_csv, write_metrics_csv, EpochMetrics,
    METRICS_CSV_HEADER,
};

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::aimer::{aimer_update, sample_aimer_pairs};
use crate::dqn::{dqn_act, dqn_update};
use crate::envs::goal_achieved;
use crate::error::{Error, Result};
use crate::nn::{polyak_update, OutputActivation};
use crate::pqm::{actor_update, critic_update, explore_action, greedy_action, CriticKind, ExplorationSpec};
use crate::replay::Step;
use crate::rng::{tag, SeedStream};
use crate::stats::median;
use crate::{
    Action, Actor, AdamState, Aimer, Critic, EnvInstance, Episode, Goal, Mlp, QNetwork, Real,
    ReplayBuffer, Task,
};

/// PQM learner state: critic (+actor for continuous actions), aimer, and
/// their optimizers.
#[derive(Debug, Clone)]
pub struct PqmLearner {
    pub critic: Critic,
    pub actor: Option<Actor>,
    pub aimer: Aimer,
    pub critic_opt: AdamState,
    pub actor_opt: Option<AdamState>,
    pub aimer_opt: AdamState,
}

/// DQN learner state.
#[derive(Debug, Clone)]
pub struct DqnLearner {
    pub qnet: QNetwork,
    pub opt: AdamState,
}

#[derive(Debug, Clone)]
pub enum Learner {
    Pqm(PqmLearner),
    Dqn(DqnLearner),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RolloutMode {
    Explore,
    Greedy,
}

/// Where a run writes its outputs. `metrics.csv` and periodic checkpoints
/// go under `out_dir`; the final checkpoint path can be overridden.
#[derive(Debug, Clone)]
pub struct RunIo {
    pub out_dir: PathBuf,
    pub final_checkpoint: Option<PathBuf>,
}

impl RunIo {
    pub fn new(out_dir: impl Into<PathBuf>) -> Result<Self> {
        let out_dir = out_dir.into();
        std::fs::create_dir_all(&out_dir)?;
        Ok(RunIo { out_dir, final_checkpoint: None })
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.out_dir.join("metrics.csv")
    }

    fn final_checkpoint_path(&self) -> PathBuf {
        self.final_checkpoint
            .clone()
            .unwrap_or_else(|| self.out_dir.join("final.pqm"))
    }

    fn periodic_checkpoint_path(&self, completed_epochs: usize) -> PathBuf {
        self.out_dir.join(format!("ckpt_epoch_{completed_epochs:04}.pqm"))
    }

    fn diagnostic_checkpoint_path(&self) -> PathBuf {
        self.out_dir.join("diverged.pqm")
    }
}

/// Result of a training call: the metrics rows produced by the epochs this
/// call executed, the trained learner, and any non-fatal warnings.
#[derive(Debug)]
pub struct TrainOutcome {
    pub metrics: Vec<EpochMetrics>,
    pub learner: Learner,
    pub warnings: Vec<String>,
}

fn net_seed(seed: u64, role: u64) -> u64 {
    SeedStream::derive(seed, &[tag::INIT, role]).next_u64()
}

/// Build a fresh learner for the config.
pub fn init_learner(config: &TrainConfig, env: &EnvInstance, task: &Task) -> Result<Learner> {
    let d_s = env.state_dim();
    let d_g = task.goal_dim();
    match config.learner {
        LearnerKind::Pqm => {
            let (critic, actor, aimer_out) = match env.action_spec() {
                crate::envs::ActionSpec::Discrete { n_actions } => {
                    let critic =
                        Critic::discrete(d_s, n_actions, &config.hidden, net_seed(config.seed, 0))?;
                    (critic, None, OutputActivation::Sigmoid)
                }
                crate::envs::ActionSpec::Continuous { dim } => {
                    let critic =
                        Critic::continuous(d_s, dim, &config.hidden, net_seed(config.seed, 0))?;
                    let actor = Actor::new(d_s, dim, &config.hidden, net_seed(config.seed, 1))?;
                    (critic, Some(actor), OutputActivation::Linear)
                }
            };
            let aimer = Aimer::new(
                d_s,
                d_g,
                &config.hidden,
                aimer_out,
                config.lambda1,
                config.lambda2,
                net_seed(config.seed, 2),
            )?;
            let critic_opt = AdamState::new(&critic.net, config.learning_rate);
            let actor_opt = actor.as_ref().map(|a| AdamState::new(&a.net, config.learning_rate));
            let aimer_opt = AdamState::new(&aimer.net, config.learning_rate);
            Ok(Learner::Pqm(PqmLearner {
                critic,
                actor,
                aimer,
                critic_opt,
                actor_opt,
                aimer_opt,
            }))
        }
        LearnerKind::Dqn => {
            let crate::envs::ActionSpec::Discrete { n_actions } = env.action_spec() else {
                return Err(Error::Config("dqn learner needs a discrete env".into()));
            };
            let qnet = QNetwork::new(d_s, d_g, n_actions, &config.hidden, net_seed(config.seed, 3))?;
            let opt = AdamState::new(&qnet.net, config.learning_rate);
            Ok(Learner::Dqn(DqnLearner { qnet, opt }))
        }
    }
}

/// Run one episode. In `Greedy` mode no randomness is drawn after the
/// reset. Returns the episode, whether the goal was reached, and the
/// steps-to-goal (the horizon when the goal was never reached).
pub fn run_episode(
    learner: &Learner,
    config: &TrainConfig,
    env: &EnvInstance,
    task: &Task,
    stream: &mut SeedStream,
    mode: RolloutMode,
) -> Result<(Episode, bool, usize)> {
    let (mut s, goal) = env.reset(task, stream)?;
    let horizon = env.horizon(task);
    let spec = ExplorationSpec {
        epsilon: config.epsilon,
        gaussian_sigma: config.gaussian_sigma,
        random_action_prob: config.random_action_prob,
    };
    let mut steps = Vec::with_capacity(horizon);
    let mut success = false;
    let mut steps_to_goal = horizon;

    match learner {
        Learner::Pqm(l) => {
            let fixed_target = match config.aimer_recompute {
                AimerRecompute::PerEpisode => Some(l.aimer.predict(&s, &goal)),
                AimerRecompute::PerStep => None,
            };
            for t in 0..horizon {
                let s_prime = match &fixed_target {
                    Some(sp) => sp.clone(),
                    None => l.aimer.predict(&s, &goal),
                };
                let action = match mode {
                    RolloutMode::Greedy => greedy_action(&l.critic, l.actor.as_ref(), &s, &s_prime),
                    RolloutMode::Explore => {
                        explore_action(&spec, &l.critic, l.actor.as_ref(), &s, &s_prime, stream)
                    }
                };
                let s_next = env.step(&s, &action);
                steps.push(Step { s: s.clone(), a: action, s_next: s_next.clone() });
                s = s_next;
                if goal_achieved(&s, &goal) {
                    success = true;
                    steps_to_goal = t + 1;
                    break;
                }
            }
        }
        Learner::Dqn(l) => {
            let epsilon = match mode {
                RolloutMode::Greedy => 0.0,
                RolloutMode::Explore => config.epsilon,
            };
            for t in 0..horizon {
                let a = dqn_act(&l.qnet, &s, &goal, epsilon, stream);
                let s_next = env.step(&s, &Action::Discrete(a));
                steps.push(Step { s: s.clone(), a: Action::Discrete(a), s_next: s_next.clone() });
                s = s_next;
                if goal_achieved(&s, &goal) {
                    success = true;
                    steps_to_goal = t + 1;
                    break;
                }
            }
        }
    }

    Ok((Episode { steps, goal }, success, steps_to_goal))
}

/// Greedy evaluation on a dedicated seed stream, disjoint from training's.
/// Returns (success rate, median time to goal with failures counted as the
/// horizon). Never touches the replay buffer or learner state.
pub fn evaluate(
    learner: &Learner,
    config: &TrainConfig,
    env: &EnvInstance,
    task: &Task,
    n_episodes: usize,
    epoch: u64,
) -> Result<(f64, f64)> {
    assert!(n_episodes >= 1, "evaluate needs at least one episode");
    let mut successes = 0usize;
    let mut times = Vec::with_capacity(n_episodes);
    for i in 0..n_episodes {
        let mut stream =
            SeedStream::derive(config.seed, &[tag::EVAL, epoch, i as u64]);
        let (_, success, steps) =
            run_episode(learner, config, env, task, &mut stream, RolloutMode::Greedy)?;
        if success {
            successes += 1;
        }
        times.push(steps as f64);
    }
    Ok((successes as f64 / n_episodes as f64, median(&times)))
}

/// Snapshot the learner into a checkpoint.
pub fn make_checkpoint(config: &TrainConfig, epoch: usize, learner: &Learner) -> Checkpoint {
    let mut nets: Vec<(String, Mlp)> = Vec::new();
    let mut adams: Vec<(String, AdamState)> = Vec::new();
    match learner {
        Learner::Pqm(l) => {
            nets.push(("critic.online".into(), l.critic.net.clone()));
            nets.push(("critic.target".into(), l.critic.target_net.clone()));
            adams.push(("critic".into(), l.critic_opt.clone()));
            if let (Some(actor), Some(opt)) = (&l.actor, &l.actor_opt) {
                nets.push(("actor.online".into(), actor.net.clone()));
                nets.push(("actor.target".into(), actor.target_net.clone()));
                adams.push(("actor".into(), opt.clone()));
            }
            nets.push(("aimer.online".into(), l.aimer.net.clone()));
            adams.push(("aimer".into(), l.aimer_opt.clone()));
        }
        Learner::Dqn(l) => {
            nets.push(("q.online".into(), l.qnet.net.clone()));
            nets.push(("q.target".into(), l.qnet.target_net.clone()));
            adams.push(("q".into(), l.opt.clone()));
        }
    }
    Checkpoint { config: config.clone(), epoch, nets, adams }
}

fn find_net(ckpt: &Checkpoint, name: &str) -> Result<Mlp> {
    ckpt.nets
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, net)| net.clone())
        .ok_or_else(|| Error::Config(format!("checkpoint has no net '{name}'")))
}

fn find_adam(ckpt: &Checkpoint, name: &str) -> Result<AdamState> {
    ckpt.adams
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, a)| a.clone())
        .ok_or_else(|| Error::Config(format!("checkpoint has no optimizer state '{name}'")))
}

/// Rebuild the full learner stored in a checkpoint (resume path).
pub fn learner_from_checkpoint(ckpt: &Checkpoint) -> Result<Learner> {
    let config = &ckpt.config;
    let env = config.env_instance()?;
    let task = env.task(&config.task)?;
    let d_s = env.state_dim();
    match config.learner {
        LearnerKind::Pqm => {
            let (kind, actor) = match env.action_spec() {
                crate::envs::ActionSpec::Discrete { n_actions } => {
                    (CriticKind::Discrete { n_actions }, None)
                }
                crate::envs::ActionSpec::Continuous { dim } => {
                    let actor = Actor::from_nets(
                        d_s,
                        dim,
                        find_net(ckpt, "actor.online")?,
                        find_net(ckpt, "actor.target")?,
                    )?;
                    (CriticKind::Continuous { action_dim: dim }, Some(actor))
                }
            };
            let critic = Critic::from_nets(
                kind,
                d_s,
                find_net(ckpt, "critic.online")?,
                find_net(ckpt, "critic.target")?,
            )?;
            let aimer_net = find_net(ckpt, "aimer.online")?;
            if aimer_net.input_dim() != d_s + task.goal_dim() || aimer_net.output_dim() != d_s {
                return Err(Error::Config("checkpoint aimer does not match env/task dims".into()));
            }
            let aimer = Aimer {
                net: aimer_net,
                lambda1: config.lambda1,
                lambda2: config.lambda2,
            };
            Ok(Learner::Pqm(PqmLearner {
                critic_opt: find_adam(ckpt, "critic")?,
                actor_opt: actor.as_ref().map(|_| find_adam(ckpt, "actor")).transpose()?,
                aimer_opt: find_adam(ckpt, "aimer")?,
                critic,
                actor,
                aimer,
            }))
        }
        LearnerKind::Dqn => {
            let qnet = QNetwork {
                net: find_net(ckpt, "q.online")?,
                target_net: find_net(ckpt, "q.target")?,
            };
            Ok(Learner::Dqn(DqnLearner { opt: find_adam(ckpt, "q")?, qnet }))
        }
    }
}

/// Build a learner for a new task from a source checkpoint: the
/// quasi-metric (and actor, when continuous) transfers with its target
/// nets and optimizer states; the aimer is initialized fresh.
pub fn transfer_learner(
    config: &TrainConfig,
    env: &EnvInstance,
    task: &Task,
    source: &Checkpoint,
) -> Result<(Learner, Vec<String>)> {
    if config.learner != LearnerKind::Pqm || source.config.learner != LearnerKind::Pqm {
        return Err(Error::Config("transfer is defined for the pqm learner only".into()));
    }
    if source.config.env != config.env || source.config.bits != config.bits {
        return Err(Error::Config(format!(
            "transfer env mismatch: source {}({}) vs target {}({})",
            source.config.env, source.config.bits, config.env, config.bits
        )));
    }
    let mut warnings = Vec::new();
    if source.config.task == config.task {
        warnings.push(format!(
            "transfer source and target use the same task '{}'",
            config.task
        ));
    }

    let d_s = env.state_dim();
    let (kind, actor, actor_opt, aimer_out) = match env.action_spec() {
        crate::envs::ActionSpec::Discrete { n_actions } => (
            CriticKind::Discrete { n_actions },
            None,
            None,
            OutputActivation::Sigmoid,
        ),
        crate::envs::ActionSpec::Continuous { dim } => {
            let actor = Actor::from_nets(
                d_s,
                dim,
                find_net(source, "actor.online")?,
                find_net(source, "actor.target")?,
            )?;
            let opt = find_adam(source, "actor")?;
            (
                CriticKind::Continuous { action_dim: dim },
                Some(actor),
                Some(opt),
                OutputActivation::Linear,
            )
        }
    };
    let critic = Critic::from_nets(
        kind,
        d_s,
        find_net(source, "critic.online")?,
        find_net(source, "critic.target")?,
    )?;
    let critic_opt = find_adam(source, "critic")?;

    let aimer = Aimer::new(
        d_s,
        task.goal_dim(),
        &config.hidden,
        aimer_out,
        config.lambda1,
        config.lambda2,
        net_seed(config.seed, 2),
    )?;
    let aimer_opt = AdamState::new(&aimer.net, config.learning_rate);

    Ok((
        Learner::Pqm(PqmLearner {
            critic,
            actor,
            aimer,
            critic_opt,
            actor_opt,
            aimer_opt,
        }),
        warnings,
    ))
}

fn polyak_all(learner: &mut Learner, decay: Real) -> Result<()> {
    match learner {
        Learner::Pqm(l) => {
            polyak_update(&mut l.critic.target_net, &l.critic.net, decay)?;
            if let Some(actor) = &mut l.actor {
                polyak_update(&mut actor.target_net, &actor.net, decay)?;
            }
        }
        Learner::Dqn(l) => {
            polyak_update(&mut l.qnet.target_net, &l.qnet.net, decay)?;
        }
    }
    Ok(())
}

/// One optimization step; returns (critic, actor, aimer) losses, with 0 for
/// components the learner does not have.
#[allow(clippy::too_many_arguments)]
fn optimization_step(
    learner: &mut Learner,
    config: &TrainConfig,
    env: &EnvInstance,
    task: &Task,
    buffer: &ReplayBuffer,
    clamp_max: Real,
    horizon: usize,
    path: [u64; 3],
) -> Result<(Real, Real, Real)> {
    let [epoch, cycle, step] = path;
    match learner {
        Learner::Pqm(l) => {
            let mut stream =
                SeedStream::derive(config.seed, &[tag::UPDATE, epoch, cycle, step, 0]);
            let batch = buffer.sample_pqm_batch(config.batch_size, config.p_relabel, &mut stream)?;
            let critic_loss =
                critic_update(&mut l.critic, l.actor.as_ref(), &batch, &mut l.critic_opt, clamp_max)?;

            let actor_loss = match (&mut l.actor, &mut l.actor_opt) {
                (Some(actor), Some(opt)) => {
                    let mut stream =
                        SeedStream::derive(config.seed, &[tag::UPDATE, epoch, cycle, step, 1]);
                    let batch =
                        buffer.sample_pqm_batch(config.batch_size, config.p_relabel, &mut stream)?;
                    actor_update(&l.critic, actor, &batch, opt, config.actor_preact_weight)?
                }
                _ => 0.0,
            };

            let mut stream =
                SeedStream::derive(config.seed, &[tag::UPDATE, epoch, cycle, step, 2]);
            let pairs = sample_aimer_pairs(buffer, task, config.batch_size, &mut stream)?;
            let aimer_loss = aimer_update(
                &mut l.aimer,
                &l.critic,
                l.actor.as_ref(),
                &pairs,
                env,
                &mut l.aimer_opt,
            )?;
            Ok((critic_loss, actor_loss, aimer_loss))
        }
        Learner::Dqn(l) => {
            let mut stream =
                SeedStream::derive(config.seed, &[tag::UPDATE, epoch, cycle, step, 0]);
            let batch = buffer.sample_dqn_batch(config.batch_size, config.p_relabel, &mut stream)?;
            let loss = dqn_update(&mut l.qnet, &batch, &mut l.opt, config.gamma, horizon)?;
            Ok((loss, 0.0, 0.0))
        }
    }
}

/// Run training per the config. With `transfer_from` set, the quasi-metric
/// is loaded from that checkpoint first. Emits metrics incrementally and
/// saves periodic plus final checkpoints when `io` is given; on divergence
/// a diagnostic checkpoint is saved and the error propagates.
pub fn run_training(config: &TrainConfig, io: Option<&RunIo>) -> Result<TrainOutcome> {
    config.validate()?;
    let env = config.env_instance()?;
    let task = env.task(&config.task)?;
    let (learner, warnings) = match &config.transfer_from {
        Some(path) => {
            let source = load_checkpoint(Path::new(path))?;
            transfer_learner(config, &env, &task, &source)?
        }
        None => (init_learner(config, &env, &task)?, Vec::new()),
    };
    let mut outcome = train_loop(config, &env, &task, learner, 0, io)?;
    outcome.warnings.extend(warnings);
    Ok(outcome)
}

/// Transfer with an already-loaded source checkpoint.
pub fn run_transfer(
    config: &TrainConfig,
    source: &Checkpoint,
    io: Option<&RunIo>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let env = config.env_instance()?;
    let task = env.task(&config.task)?;
    let (learner, warnings) = transfer_learner(config, &env, &task, source)?;
    let mut outcome = train_loop(config, &env, &task, learner, 0, io)?;
    outcome.warnings.extend(warnings);
    Ok(outcome)
}

/// Continue a checkpointed run up to its configured epoch count. The
/// metrics returned cover only the epochs executed here.
pub fn resume_training(source: &Checkpoint, io: Option<&RunIo>) -> Result<TrainOutcome> {
    let config = source.config.clone();
    config.validate()?;
    let env = config.env_instance()?;
    let task = env.task(&config.task)?;
    let learner = learner_from_checkpoint(source)?;
    train_loop(&config, &env, &task, learner, source.epoch, io)
}

fn train_loop(
    config: &TrainConfig,
    env: &EnvInstance,
    task: &Task,
    mut learner: Learner,
    start_epoch: usize,
    io: Option<&RunIo>,
) -> Result<TrainOutcome> {
    let horizon = env.horizon(task);
    let clamp_max = 2.0 * horizon as Real;
    let mut buffer = ReplayBuffer::new(config.buffer_capacity);
    let mut metrics = Vec::new();

    let mut csv = match io {
        Some(io) => {
            let mut file = std::fs::File::create(io.metrics_path())?;
            writeln!(file, "{METRICS_CSV_HEADER}")?;
            file.flush()?;
            Some(file)
        }
        None => None,
    };

    for epoch in start_epoch..config.epochs {
        let t0 = Instant::now();
        let mut losses = (Vec::new(), Vec::new(), Vec::new());

        for cycle in 0..config.cycles_per_epoch {
            for ep_i in 0..config.episodes_per_cycle {
                let mut stream = SeedStream::derive(
                    config.seed,
                    &[tag::COLLECT, epoch as u64, cycle as u64, ep_i as u64],
                );
                let (episode, _, _) =
                    run_episode(&learner, config, env, task, &mut stream, RolloutMode::Explore)?;
                buffer.store(episode)?;
            }
            for step in 0..config.opt_steps_per_cycle {
                let result = optimization_step(
                    &mut learner,
                    config,
                    env,
                    task,
                    &buffer,
                    clamp_max,
                    horizon,
                    [epoch as u64, cycle as u64, step as u64],
                );
                match result {
                    Ok((c, a, h)) => {
                        losses.0.push(c);
                        losses.1.push(a);
                        losses.2.push(h);
                    }
                    Err(err) => {
                        if matches!(err, Error::Divergence(_)) {
                            if let Some(io) = io {
                                let ckpt = make_checkpoint(config, epoch, &learner);
                                save_checkpoint(&io.diagnostic_checkpoint_path(), &ckpt)?;
                            }
                        }
                        return Err(err);
                    }
                }
                if config.target_update == TargetUpdate::PerStep {
                    polyak_all(&mut learner, config.polyak_decay)?;
                }
            }
            if config.target_update == TargetUpdate::PerCycle {
                polyak_all(&mut learner, config.polyak_decay)?;
            }
        }

        let (success_rate, median_time) =
            evaluate(&learner, config, env, task, config.eval_episodes, epoch as u64)?;
        let mean = |v: &[Real]| if v.is_empty() { 0.0 } else { v.iter().sum::<Real>() / v.len() as Real };
        let row = EpochMetrics {
            epoch,
            success_rate,
            median_time_to_goal: median_time,
            critic_loss: mean(&losses.0),
            actor_loss: mean(&losses.1),
            aimer_loss: mean(&losses.2),
            wall_seconds: t0.elapsed().as_secs_f64(),
        };
        if let Some(file) = csv.as_mut() {
            writeln!(file, "{}", metrics_csv_row(&row))?;
            file.flush()?;
        }
        metrics.push(row);

        if let Some(io) = io {
            if (epoch + 1) % config.checkpoint_every == 0 && epoch + 1 < config.epochs {
                let ckpt = make_checkpoint(config, epoch + 1, &learner);
                save_checkpoint(&io.periodic_checkpoint_path(epoch + 1), &ckpt)?;
            }
        }
        if let Some(threshold) = config.stop_success {
            if success_rate >= threshold {
                break;
            }
        }
    }

    if let Some(io) = io {
        let completed = start_epoch + metrics.len();
        let ckpt = make_checkpoint(config, completed, &learner);
        save_checkpoint(&io.final_checkpoint_path(), &ckpt)?;
    }

    Ok(TrainOutcome { metrics, learner, warnings: Vec::new() })
}

/// Pair-sampling mode for the metric-accuracy protocol: `InTask` pairs
/// differ only on the task's masked coordinates; `Random` pairs are
/// arbitrary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairMode {
    InTask,
    Random,
}

impl PairMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "in-task" => Ok(PairMode::InTask),
            "random" => Ok(PairMode::Random),
            other => Err(Error::Config(format!("unknown pair mode '{other}'"))),
        }
    }
}

/// States reachable by random quantized-thrust rollouts; start positions
/// uniform, velocities start at zero and stay on the thrust lattice, so
/// the BFS oracle can hit them exactly.
pub fn pointmass_rollout_states(
    env: &EnvInstance,
    n_states: usize,
    stream: &mut SeedStream,
) -> Vec<crate::State> {
    assert_eq!(env.name(), "pointmass");
    let levels = [-1.0, 0.0, 1.0];
    let mut states = Vec::with_capacity(n_states);
    'outer: loop {
        let mut s = vec![
            stream.uniform(-1.0, 1.0),
            stream.uniform(-1.0, 1.0),
            0.0,
            0.0,
        ];
        for _ in 0..30 {
            let a = Action::Continuous(vec![
                levels[stream.index(3)],
                levels[stream.index(3)],
            ]);
            s = env.step(&s, &a);
            states.push(s.clone());
            if states.len() >= n_states {
                break 'outer;
            }
        }
    }
    states
}

/// The (true distance, estimate) table behind the metric-accuracy plots.
/// Bit-flip pairs use the Hamming oracle; point-mass pairs use the BFS
/// oracle over rollout-reachable states, skipping pairs the search cannot
/// resolve within budget.
pub fn eval_metric_accuracy(
    learner: &Learner,
    env: &EnvInstance,
    task: &Task,
    n_pairs: usize,
    mode: PairMode,
    stream: &mut SeedStream,
) -> Result<Vec<(f64, f64)>> {
    let Learner::Pqm(l) = learner else {
        return Err(Error::Config("metric accuracy is defined for the pqm learner".into()));
    };
    let d_s = env.state_dim();
    let mut table = Vec::with_capacity(n_pairs);

    match l.critic.kind() {
        CriticKind::Discrete { .. } => {
            for _ in 0..n_pairs {
                let s: Vec<Real> = (0..d_s).map(|_| stream.bit()).collect();
                let s_prime: Vec<Real> = match mode {
                    PairMode::InTask => task.sample_goal(stream).overwrite(&s),
                    PairMode::Random => (0..d_s).map(|_| stream.bit()).collect(),
                };
                let truth = crate::envs::hamming_oracle(&s, &s_prime)? as f64;
                let values = l.critic.values_discrete(&s, &s_prime);
                let estimate = values[crate::pqm::argmin(&values)];
                table.push((truth, estimate));
            }
        }
        CriticKind::Continuous { .. } => {
            let actor = l.actor.as_ref().expect("continuous learner has an actor");
            let pool = pointmass_rollout_states(env, 4 * n_pairs.max(8), stream);
            let mut attempts = 0;
            while table.len() < n_pairs && attempts < 8 * n_pairs {
                attempts += 1;
                let s = pool[stream.index(pool.len())].clone();
                let s_prime = match mode {
                    PairMode::InTask => task.sample_goal(stream).overwrite(&s),
                    PairMode::Random => pool[stream.index(pool.len())].clone(),
                };
                let target = Goal::from_state(&s_prime, task.tolerance);
                match crate::envs::pointmass_steps_oracle(env, &s, &target, 40, 120) {
                    Ok(steps) => {
                        let a = actor.action(&s, &s_prime);
                        let estimate = l.critic.value_continuous(&s, &s_prime, &a);
                        table.push((steps as f64, estimate));
                    }
                    Err(Error::UnreachableWithinBudget(_)) => continue,
                    Err(e) => return Err(e),
                }
            }
        }
    }
    Ok(table)
}
