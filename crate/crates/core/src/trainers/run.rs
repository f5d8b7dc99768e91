//! The training loop shared by every algorithm.

use std::collections::VecDeque;
use std::path::Path;

use crate::config::{Algo, EnvKind, Mode, RunConfig};
use crate::env::{ExprEnv, TabularEnv, TabularEnvSpec, TokenEnv};
use crate::error::{Error, Result};
use crate::metrics::{MetricsLog, MetricsRow};
use crate::oracle::{action_kl, soft_value_iteration, ActionPolicy};
use crate::policy::{sample_action, Checkpoint, Context, FeatureMap, Policy};
use crate::rng::{seeded_rng, SeededRng};
use crate::soft_bellman::kl_term;
use crate::transition::Transition;
use crate::vocab::TokenSeq;

use super::{Episode, EtpoLearner, PpoLearner, ReplayBuffer};

/// Action length of generated tabular environments when none is configured.
pub const DEFAULT_TABULAR_ACTION_LEN: usize = 2;
/// Probability that a generated tabular state other than 0 is terminal.
pub const TABULAR_TERMINAL_PROB: f64 = 0.2;

/// The tabular environment described by `cfg`: loaded from `spec_file` if
/// set, otherwise generated from `spec_seed`.
pub fn tabular_spec(cfg: &RunConfig) -> Result<TabularEnvSpec> {
    match &cfg.spec_file {
        Some(path) => TabularEnvSpec::load(path),
        None => TabularEnvSpec::random(
            cfg.n_states,
            cfg.vocab_size,
            cfg.max_action_len.unwrap_or(DEFAULT_TABULAR_ACTION_LEN),
            TABULAR_TERMINAL_PROB,
            cfg.spec_seed,
        ),
    }
}

/// Builds the environment selected by `cfg`, with its length limits applied.
pub fn make_env(cfg: &RunConfig) -> Result<Box<dyn TokenEnv>> {
    let mut env: Box<dyn TokenEnv> = match cfg.env {
        EnvKind::Tabular => Box::new(TabularEnv::new(tabular_spec(cfg)?)?),
        EnvKind::Expr => {
            let mut env = ExprEnv::new(cfg.target, cfg.scale)?;
            if let Some(len) = cfg.max_action_len {
                env = env.with_max_action_len(len);
            }
            Box::new(env)
        }
    };
    if let Some(t) = cfg.max_episode_steps {
        env.set_max_episode_steps(t);
    }
    Ok(env)
}

/// `sum_j KL(pi || pibar)` over the contexts visited while emitting `action`.
pub fn chain_kl(
    pi: &impl Policy,
    pibar: &impl Policy,
    state: &TokenSeq,
    action: &TokenSeq,
) -> Result<f64> {
    let mut ctx = Context::root(state);
    let mut total = 0.0;
    for &w in action.iter() {
        total += kl_term(pi, pibar, &ctx)?;
        ctx.prefix.push(w);
    }
    Ok(total)
}

enum Agent {
    Etpo {
        learner: Box<EtpoLearner>,
        buffer: ReplayBuffer,
    },
    Ppo {
        learner: Box<PpoLearner>,
        episode: Episode,
        rollout: Vec<Episode>,
        rollout_steps: usize,
    },
    Oracle {
        spec: TabularEnvSpec,
        policy: ActionPolicy,
        reference: ActionPolicy,
    },
}

/// One training job: owns the learner, the sampling RNG and the metrics, and
/// drives a borrowed environment one step at a time.
pub struct TrainRun<'e> {
    cfg: RunConfig,
    env: &'e mut dyn TokenEnv,
    agent: Agent,
    rng: SeededRng,
    state: TokenSeq,
    env_steps: u64,
    metrics: MetricsLog,
    best: f64,
    recent: VecDeque<f64>,
    q_loss: f64,
    policy_kl: f64,
    episode_len: usize,
    episode_lengths: Vec<usize>,
}

impl<'e> TrainRun<'e> {
    pub fn new(cfg: &RunConfig, env: &'e mut dyn TokenEnv) -> Result<Self> {
        cfg.validate()?;
        if cfg.algo == Algo::Etpo1Step {
            env.set_max_episode_steps(1);
        }
        let mut rng = seeded_rng(cfg.seed);
        let reference = env.reference();
        let features = FeatureMap {
            vocab_size: env.vocab().len(),
            max_state_len: env.max_state_len(),
            max_prefix_len: env.max_action_len(),
        };
        let agent = match cfg.algo {
            Algo::Etpo | Algo::EtpoDisc | Algo::Etpo1Step => {
                let params = cfg.backup_params();
                let learner = match cfg.mode {
                    Mode::Tabular => EtpoLearner::tabular(reference, params, cfg.polyak),
                    Mode::Parametric => EtpoLearner::parametric(
                        reference, features, cfg.hidden, params, cfg.polyak, cfg.lr, &mut rng,
                    ),
                };
                Agent::Etpo {
                    learner: Box::new(learner),
                    buffer: ReplayBuffer::new(cfg.buffer_capacity),
                }
            }
            Algo::PpoKl => {
                let learner = match cfg.mode {
                    Mode::Tabular => PpoLearner::tabular(reference, cfg.beta, cfg.gamma, cfg.lr),
                    Mode::Parametric => PpoLearner::parametric(
                        reference, features, cfg.hidden, cfg.beta, cfg.gamma, cfg.lr, &mut rng,
                    ),
                };
                Agent::Ppo {
                    learner: Box::new(learner),
                    episode: Vec::new(),
                    rollout: Vec::new(),
                    rollout_steps: 0,
                }
            }
            Algo::Oracle => {
                if cfg.env != EnvKind::Tabular {
                    return Err(Error::config("the oracle algorithm needs the tabular env"));
                }
                let spec = tabular_spec(cfg)?;
                let reference = ActionPolicy::uniform(&spec);
                let opt =
                    soft_value_iteration(&spec, &reference, cfg.beta, cfg.gamma, 1e-10, 100_000)?;
                Agent::Oracle {
                    spec,
                    policy: opt.policy,
                    reference,
                }
            }
        };
        let state = env.reset();
        Ok(Self {
            cfg: cfg.clone(),
            env,
            agent,
            rng,
            state,
            env_steps: 0,
            metrics: MetricsLog::new(),
            best: f64::NEG_INFINITY,
            recent: VecDeque::with_capacity(cfg.batch_size),
            q_loss: f64::NAN,
            policy_kl: f64::NAN,
            episode_len: 0,
            episode_lengths: Vec::new(),
        })
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn metrics(&self) -> &MetricsLog {
        &self.metrics
    }

    pub fn into_metrics(self) -> MetricsLog {
        self.metrics
    }

    /// Lengths of the episodes completed so far.
    pub fn episode_lengths(&self) -> &[usize] {
        &self.episode_lengths
    }

    pub fn etpo(&self) -> Option<&EtpoLearner> {
        match &self.agent {
            Agent::Etpo { learner, .. } => Some(learner),
            _ => None,
        }
    }

    pub fn ppo(&self) -> Option<&PpoLearner> {
        match &self.agent {
            Agent::Ppo { learner, .. } => Some(learner),
            _ => None,
        }
    }

    /// Mean age of replay data (ETPO variants only): how many insertions ago
    /// the stored transitions were collected.
    pub fn buffer_age(&self) -> Option<f64> {
        match &self.agent {
            Agent::Etpo { buffer, .. } => Some(buffer.mean_age()),
            _ => None,
        }
    }

    /// Learner parameters; only ETPO variants have a checkpoint format.
    pub fn checkpoint(&self) -> Option<Checkpoint> {
        self.etpo()
            .map(|l| l.checkpoint(self.env.vocab(), self.env_steps))
    }

    /// One environment interaction, followed by whatever update the
    /// algorithm schedules at this point.
    pub fn step(&mut self) -> Result<()> {
        let max_len = self.env.max_action_len();
        let eos = self.env.eos();
        let state = self.state.clone();
        let (action, kl_to_ref) = match &self.agent {
            Agent::Etpo { learner, .. } => {
                let a = sample_action(learner.as_ref(), &state, max_len, eos, &mut self.rng);
                let kl = chain_kl(learner.as_ref(), learner.reference(), &state, &a)?;
                (a, kl)
            }
            Agent::Ppo { learner, .. } => {
                let a = sample_action(learner.as_ref(), &state, max_len, eos, &mut self.rng);
                let kl = chain_kl(learner.as_ref(), learner.reference(), &state, &a)?;
                (a, kl)
            }
            Agent::Oracle {
                spec,
                policy,
                reference,
            } => {
                let s = spec
                    .decode_state(&state)
                    .ok_or_else(|| Error::config("oracle run on a foreign state"))?;
                let a = policy.sample(s, &mut self.rng);
                (spec.action_tokens(a), action_kl(policy, reference, s)?)
            }
        };
        let out = self.env.step(&action)?;
        self.env_steps += 1;
        self.episode_len += 1;

        match &mut self.agent {
            Agent::Etpo { learner, buffer } => {
                buffer.push(Transition {
                    state: state.clone(),
                    action: action.clone(),
                    reward: out.reward,
                    next_state: out.next_state.clone(),
                    done: out.done,
                });
                if buffer.len() >= self.cfg.batch_size {
                    let batch = buffer.sample(self.cfg.batch_size, &mut self.rng);
                    let stats = learner.update(&batch)?;
                    self.q_loss = stats.q_loss;
                    self.policy_kl = stats.policy_objective;
                }
            }
            Agent::Ppo {
                learner,
                episode,
                rollout,
                rollout_steps,
            } => {
                episode.push(learner.record(state.clone(), action.clone(), out.reward));
                if out.done {
                    *rollout_steps += episode.len();
                    rollout.push(std::mem::take(episode));
                    if *rollout_steps >= self.cfg.batch_size {
                        let stats = learner.update(rollout)?;
                        self.q_loss = stats.value_loss;
                        self.policy_kl = stats.policy_loss;
                        rollout.clear();
                        *rollout_steps = 0;
                    }
                }
            }
            Agent::Oracle { .. } => {}
        }

        self.best = self.best.max(out.reward);
        if self.recent.len() == self.cfg.batch_size {
            self.recent.pop_front();
        }
        self.recent.push_back(out.reward);
        let avg = self.recent.iter().sum::<f64>() / self.recent.len() as f64;
        self.metrics.push(MetricsRow {
            env_step: self.env_steps,
            episode_reward: out.reward,
            best_reward: self.best,
            avg_batch_reward: avg,
            q_loss: self.q_loss,
            policy_kl: self.policy_kl,
            kl_to_ref,
        });

        self.state = if out.done {
            self.episode_lengths.push(self.episode_len);
            self.episode_len = 0;
            self.env.reset()
        } else {
            out.next_state
        };
        Ok(())
    }

    /// Steps until the configured budget is spent. With `checkpoint_dir`
    /// and a nonzero `checkpoint_every`, writes `checkpoint_<step>.txt`
    /// files along the way.
    pub fn run(&mut self, checkpoint_dir: Option<&Path>) -> Result<()> {
        if let (Some(dir), true) = (checkpoint_dir, self.cfg.checkpoint_every > 0) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        while self.env_steps < self.cfg.steps {
            self.step()?;
            let every = self.cfg.checkpoint_every;
            if let (Some(dir), true) = (checkpoint_dir, every > 0) {
                if self.env_steps.is_multiple_of(every) {
                    if let Some(ck) = self.checkpoint() {
                        ck.save(&dir.join(format!("checkpoint_{}.txt", self.env_steps)))?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Trains with `cfg` on `env` for `cfg.steps` environment steps.
pub fn run_training(cfg: &RunConfig, env: &mut dyn TokenEnv) -> Result<MetricsLog> {
    let mut run = TrainRun::new(cfg, env)?;
    run.run(None)?;
    Ok(run.into_metrics())
}

/// Monte Carlo estimate of `E[sum_t gamma^t (r_t - beta KL_t)]`, where
/// `KL_t` is the token KL summed along the sampled action.
#[allow(clippy::too_many_arguments)]
pub fn entropy_regularized_return_estimate(
    policy: &impl Policy,
    pibar: &impl Policy,
    env: &mut dyn TokenEnv,
    beta: f64,
    gamma: f64,
    n_episodes: usize,
    rng: &mut SeededRng,
) -> Result<f64> {
    assert!(n_episodes >= 1, "n_episodes must be >= 1");
    let max_len = env.max_action_len();
    let eos = env.eos();
    let mut total = 0.0;
    for _ in 0..n_episodes {
        let mut state = env.reset();
        let mut discount = 1.0;
        loop {
            let action = sample_action(policy, &state, max_len, eos, rng);
            let kl = if beta == 0.0 {
                0.0
            } else {
                chain_kl(policy, pibar, &state, &action)?
            };
            let out = env.step(&action)?;
            total += discount * (out.reward - beta * kl);
            discount *= gamma;
            if out.done {
                break;
            }
            state = out.next_state;
        }
    }
    Ok(total / n_episodes as f64)
}
