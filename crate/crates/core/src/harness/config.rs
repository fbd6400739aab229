//! Experiment configuration: defaults per environment, key=value parsing,
//! and the canonical serialization embedded in checkpoints.

use crate::envs::EnvInstance;
use crate::error::{Error, Result};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LearnerKind {
    Pqm,
    Dqn,
}

impl LearnerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LearnerKind::Pqm => "pqm",
            LearnerKind::Dqn => "dqn",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pqm" => Ok(LearnerKind::Pqm),
            "dqn" => Ok(LearnerKind::Dqn),
            other => Err(Error::Config(format!("unknown learner '{other}'"))),
        }
    }
}

/// Whether the aimer target is recomputed at every step of a rollout or
/// once per episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AimerRecompute {
    PerStep,
    PerEpisode,
}

impl AimerRecompute {
    pub fn as_str(self) -> &'static str {
        match self {
            AimerRecompute::PerStep => "per_step",
            AimerRecompute::PerEpisode => "per_episode",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "per_step" => Ok(AimerRecompute::PerStep),
            "per_episode" => Ok(AimerRecompute::PerEpisode),
            other => Err(Error::Config(format!("unknown aimer_recompute '{other}'"))),
        }
    }
}

/// Target-network update cadence; the bit-flip schedule updates after
/// every optimization step, the point-mass schedule after every cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetUpdate {
    PerStep,
    PerCycle,
}

impl TargetUpdate {
    pub fn as_str(self) -> &'static str {
        match self {
            TargetUpdate::PerStep => "per_step",
            TargetUpdate::PerCycle => "per_cycle",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "per_step" => Ok(TargetUpdate::PerStep),
            "per_cycle" => Ok(TargetUpdate::PerCycle),
            other => Err(Error::Config(format!("unknown target_update '{other}'"))),
        }
    }
}

/// Everything that determines a run given the code version.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub env: String,
    /// Bit count for the bit-flip environment; ignored by pointmass.
    pub bits: usize,
    pub task: String,
    pub learner: LearnerKind,
    pub epochs: usize,
    pub cycles_per_epoch: usize,
    pub episodes_per_cycle: usize,
    pub opt_steps_per_cycle: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub polyak_decay: Real,
    pub lambda1: Real,
    pub lambda2: Real,
    pub p_relabel: f64,
    pub epsilon: f64,
    pub gaussian_sigma: f64,
    pub random_action_prob: f64,
    pub learning_rate: Real,
    /// DQN discount.
    pub gamma: Real,
    pub hidden: Vec<usize>,
    pub actor_preact_weight: Real,
    pub seed: u64,
    pub eval_episodes: usize,
    pub aimer_recompute: AimerRecompute,
    pub target_update: TargetUpdate,
    /// Stop once the evaluation success rate reaches this value.
    pub stop_success: Option<f64>,
    pub checkpoint_every: usize,
    pub transfer_from: Option<String>,
}

impl TrainConfig {
    /// Desk-scale bit-flip defaults: n = 12, 6-bit task, one cycle of 16
    /// episodes per epoch, 40 optimization steps on minibatches of 256 from
    /// a 10^6-transition buffer, polyak decay 0.95 applied after every
    /// optimization step, lambda1 = 100.
    pub fn bitflip_defaults() -> Self {
        TrainConfig {
            env: "bitflip".into(),
            bits: 12,
            task: "first-half".into(),
            learner: LearnerKind::Pqm,
            epochs: 200,
            cycles_per_epoch: 1,
            episodes_per_cycle: 16,
            opt_steps_per_cycle: 40,
            batch_size: 256,
            buffer_capacity: 1_000_000,
            polyak_decay: 0.95,
            lambda1: 100.0,
            lambda2: 0.0,
            p_relabel: 0.8,
            epsilon: 0.2,
            gaussian_sigma: 0.2,
            random_action_prob: 0.3,
            learning_rate: 0.001,
            gamma: 0.98,
            hidden: vec![256],
            actor_preact_weight: 1.0,
            seed: 0,
            eval_episodes: 100,
            aimer_recompute: AimerRecompute::PerStep,
            target_update: TargetUpdate::PerStep,
            stop_success: None,
            checkpoint_every: 10,
            transfer_from: None,
        }
    }

    /// Desk-scale point-mass defaults: 10 cycles of 2 episodes per epoch,
    /// three hidden layers, lambda1 = 500, lambda2 = 50, target update
    /// after every cycle.
    pub fn pointmass_defaults() -> Self {
        TrainConfig {
            env: "pointmass".into(),
            bits: 12,
            task: "reach-pos".into(),
            learner: LearnerKind::Pqm,
            epochs: 60,
            cycles_per_epoch: 10,
            episodes_per_cycle: 2,
            opt_steps_per_cycle: 40,
            batch_size: 256,
            buffer_capacity: 1_000_000,
            polyak_decay: 0.95,
            lambda1: 500.0,
            lambda2: 50.0,
            p_relabel: 0.8,
            epsilon: 0.2,
            gaussian_sigma: 0.2,
            random_action_prob: 0.3,
            learning_rate: 0.001,
            gamma: 0.98,
            hidden: vec![64, 64, 64],
            actor_preact_weight: 1.0,
            seed: 0,
            eval_episodes: 100,
            aimer_recompute: AimerRecompute::PerStep,
            target_update: TargetUpdate::PerCycle,
            stop_success: None,
            checkpoint_every: 10,
            transfer_from: None,
        }
    }

    pub fn defaults_for_env(env: &str) -> Result<Self> {
        match env {
            "bitflip" => Ok(Self::bitflip_defaults()),
            "pointmass" => Ok(Self::pointmass_defaults()),
            other => Err(Error::Config(format!(
                "unknown env '{other}' (expected bitflip or pointmass)"
            ))),
        }
    }

    pub fn env_instance(&self) -> Result<EnvInstance<Real>> {
        EnvInstance::from_name(&self.env, self.bits)
    }

    pub fn validate(&self) -> Result<()> {
        let env = self.env_instance()?;
        let task = env.task(&self.task)?;
        let _ = task;
        // epochs == 0 is a valid empty run.
        let positive = [
            ("cycles_per_epoch", self.cycles_per_epoch > 0),
            ("episodes_per_cycle", self.episodes_per_cycle > 0),
            ("opt_steps_per_cycle", self.opt_steps_per_cycle > 0),
            ("batch_size", self.batch_size > 0),
            ("buffer_capacity", self.buffer_capacity > 0),
            ("eval_episodes", self.eval_episodes > 0),
            ("checkpoint_every", self.checkpoint_every > 0),
        ];
        for (name, ok) in positive {
            if !ok {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.hidden.is_empty() || self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("hidden layer sizes must be positive".into()));
        }
        for (name, v) in [
            ("polyak_decay", self.polyak_decay),
            ("p_relabel", self.p_relabel),
            ("epsilon", self.epsilon),
            ("random_action_prob", self.random_action_prob),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if self.gaussian_sigma < 0.0 {
            return Err(Error::Config("gaussian_sigma must be non-negative".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.lambda2 < 0.0 {
            return Err(Error::Config("lambda2 must be non-negative".into()));
        }
        match self.learner {
            LearnerKind::Pqm => {
                if self.lambda1 <= 0.0 {
                    return Err(Error::Config("lambda1 must be positive for the pqm learner".into()));
                }
            }
            LearnerKind::Dqn => {
                if self.env != "bitflip" {
                    return Err(Error::Config("the dqn learner supports only the bitflip env".into()));
                }
                if !(0.0..=1.0).contains(&self.gamma) {
                    return Err(Error::Config(format!("gamma = {} outside [0, 1]", self.gamma)));
                }
            }
        }
        if let Some(s) = self.stop_success {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::Config(format!("stop_success = {s} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Canonical key=value serialization, one pair per line, fixed order.
    /// Reparsing the output reproduces the config exactly.
    pub fn to_kv_lines(&self) -> String {
        let hidden = self
            .hidden
            .iter()
            .map(|h| h.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let stop = match self.stop_success {
            Some(v) => v.to_string(),
            None => "none".into(),
        };
        let transfer = self.transfer_from.clone().unwrap_or_else(|| "none".into());
        let mut out = String::new();
        for (k, v) in [
            ("env", self.env.clone()),
            ("bits", self.bits.to_string()),
            ("task", self.task.clone()),
            ("learner", self.learner.as_str().into()),
            ("epochs", self.epochs.to_string()),
            ("cycles_per_epoch", self.cycles_per_epoch.to_string()),
            ("episodes_per_cycle", self.episodes_per_cycle.to_string()),
            ("opt_steps_per_cycle", self.opt_steps_per_cycle.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("buffer_capacity", self.buffer_capacity.to_string()),
            ("polyak_decay", self.polyak_decay.to_string()),
            ("lambda1", self.lambda1.to_string()),
            ("lambda2", self.lambda2.to_string()),
            ("p_relabel", self.p_relabel.to_string()),
            ("epsilon", self.epsilon.to_string()),
            ("gaussian_sigma", self.gaussian_sigma.to_string()),
            ("random_action_prob", self.random_action_prob.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("gamma", self.gamma.to_string()),
            ("hidden", hidden),
            ("actor_preact_weight", self.actor_preact_weight.to_string()),
            ("seed", self.seed.to_string()),
            ("eval_episodes", self.eval_episodes.to_string()),
            ("aimer_recompute", self.aimer_recompute.as_str().into()),
            ("target_update", self.target_update.as_str().into()),
            ("stop_success", stop),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("transfer_from", transfer),
        ] {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    /// Apply one key=value override.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("invalid {what} value '{value}'"));
        match key {
            "env" => self.env = value.into(),
            "bits" => self.bits = value.parse().map_err(|_| bad("bits"))?,
            "task" => self.task = value.into(),
            "learner" => self.learner = LearnerKind::parse(value)?,
            "epochs" => self.epochs = value.parse().map_err(|_| bad("epochs"))?,
            "cycles_per_epoch" => {
                self.cycles_per_epoch = value.parse().map_err(|_| bad("cycles_per_epoch"))?
            }
            "episodes_per_cycle" => {
                self.episodes_per_cycle = value.parse().map_err(|_| bad("episodes_per_cycle"))?
            }
            "opt_steps_per_cycle" => {
                self.opt_steps_per_cycle = value.parse().map_err(|_| bad("opt_steps_per_cycle"))?
            }
            "batch_size" => self.batch_size = value.parse().map_err(|_| bad("batch_size"))?,
            "buffer_capacity" => {
                self.buffer_capacity = value.parse().map_err(|_| bad("buffer_capacity"))?
            }
            "polyak_decay" => self.polyak_decay = value.parse().map_err(|_| bad("polyak_decay"))?,
            "lambda1" => self.lambda1 = value.parse().map_err(|_| bad("lambda1"))?,
            "lambda2" => self.lambda2 = value.parse().map_err(|_| bad("lambda2"))?,
            "p_relabel" => self.p_relabel = value.parse().map_err(|_| bad("p_relabel"))?,
            "epsilon" => self.epsilon = value.parse().map_err(|_| bad("epsilon"))?,
            "gaussian_sigma" => {
                self.gaussian_sigma = value.parse().map_err(|_| bad("gaussian_sigma"))?
            }
            "random_action_prob" => {
                self.random_action_prob = value.parse().map_err(|_| bad("random_action_prob"))?
            }
            "learning_rate" => {
                self.learning_rate = value.parse().map_err(|_| bad("learning_rate"))?
            }
            "gamma" => self.gamma = value.parse().map_err(|_| bad("gamma"))?,
            "hidden" => {
                self.hidden = value
                    .split(',')
                    .map(|s| s.trim().parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| bad("hidden"))?;
            }
            "actor_preact_weight" => {
                self.actor_preact_weight = value.parse().map_err(|_| bad("actor_preact_weight"))?
            }
            "seed" => self.seed = value.parse().map_err(|_| bad("seed"))?,
            "eval_episodes" => {
                self.eval_episodes = value.parse().map_err(|_| bad("eval_episodes"))?
            }
            "aimer_recompute" => self.aimer_recompute = AimerRecompute::parse(value)?,
            "target_update" => self.target_update = TargetUpdate::parse(value)?,
            "stop_success" => {
                self.stop_success = if value == "none" {
                    None
                } else {
                    Some(value.parse().map_err(|_| bad("stop_success"))?)
                }
            }
            "checkpoint_every" => {
                self.checkpoint_every = value.parse().map_err(|_| bad("checkpoint_every"))?
            }
            "transfer_from" => {
                self.transfer_from = if value == "none" { None } else { Some(value.into()) }
            }
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Parse a key=value block (comments with '#', blank lines allowed)
    /// into (key, value) pairs without applying them.
    pub fn parse_kv_block(text: &str) -> Result<Vec<(String, String)>> {
        let mut pairs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("config line {} is not key=value: '{raw}'", lineno + 1))
            })?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(pairs)
    }

    /// Reconstruct a config from its canonical serialization.
    pub fn from_kv_lines(text: &str) -> Result<Self> {
        let pairs = Self::parse_kv_block(text)?;
        let env = pairs
            .iter()
            .find(|(k, _)| k == "env")
            .map(|(_, v)| v.clone())
            .ok_or_else(|| Error::Config("config block missing 'env'".into()))?;
        let mut config = Self::defaults_for_env(&env)?;
        for (k, v) in &pairs {
            config.apply_kv(k, v)?;
        }
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_roundtrip_is_exact() {
        let mut config = TrainConfig::bitflip_defaults();
        config.seed = 17;
        config.lambda1 = 250.0;
        config.stop_success = Some(0.85);
        config.hidden = vec![128, 64];
        let text = config.to_kv_lines();
        let parsed = TrainConfig::from_kv_lines(&text).unwrap();
        assert_eq!(parsed, config);
        assert_eq!(parsed.to_kv_lines(), text);
    }

    #[test]
    fn defaults_validate() {
        TrainConfig::bitflip_defaults().validate().unwrap();
        TrainConfig::pointmass_defaults().validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let mut config = TrainConfig::bitflip_defaults();
        config.p_relabel = 1.5;
        assert!(config.validate().is_err());

        let mut config = TrainConfig::bitflip_defaults();
        config.apply_kv("learner", "dqn").unwrap();
        config.apply_kv("env", "pointmass").unwrap();
        assert!(config.validate().is_err());

        let mut config = TrainConfig::bitflip_defaults();
        assert!(config.apply_kv("nonsense", "1").is_err());
        assert!(config.apply_kv("epochs", "abc").is_err());
    }

    #[test]
    fn config_file_comments_and_overrides() {
        let text = "# experiment\nenv=bitflip\nbits = 8\n\nseed=42\n";
        let pairs = TrainConfig::parse_kv_block(text).unwrap();
        let mut config = TrainConfig::bitflip_defaults();
        for (k, v) in &pairs {
            config.apply_kv(k, v).unwrap();
        }
        assert_eq!(config.bits, 8);
        assert_eq!(config.seed, 42);
    }
}
