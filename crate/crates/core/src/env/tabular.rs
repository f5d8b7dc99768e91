//! A small random MDP whose actions are fixed-length token sequences.
//!
//! Small enough (at most 8 states, 4 action tokens, 3 tokens per action) to
//! enumerate every `(state, action)` pair, which is what the oracle needs.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::policy::Reference;
use crate::rng::SeededRng;
use crate::transition::Transition;
use crate::vocab::{TokenId, TokenSeq, Vocabulary};

use super::{check_action_len, enumerate_fixed_length, StepOutcome, TokenEnv};

pub const MAX_STATES: usize = 8;
pub const MAX_VOCAB: usize = 4;
pub const MAX_ACTION_LEN: usize = 3;

const SPEC_HEADER: &str = "# toksoft tabular env spec";
const SPEC_VERSION: u32 = 1;

/// Reward and transition tables of a tabular environment.
///
/// Actions are indexed by reading their token ids as a base-`vocab_size`
/// number, most significant token first, so index order is lexicographic.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularEnvSpec {
    pub n_states: usize,
    pub vocab_size: usize,
    pub action_len: usize,
    /// `rewards[s * n_actions + a]`
    pub rewards: Vec<f64>,
    /// `transitions[s * n_actions + a]`
    pub transitions: Vec<usize>,
    pub terminal: Vec<bool>,
    pub spec_seed: u64,
}

impl TabularEnvSpec {
    pub fn n_actions(&self) -> usize {
        self.vocab_size.pow(self.action_len as u32)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(1..=MAX_STATES).contains(&self.n_states) {
            return bad(format!("n_states must be in 1..={MAX_STATES}"));
        }
        if !(2..=MAX_VOCAB).contains(&self.vocab_size) {
            return bad(format!("vocab_size must be in 2..={MAX_VOCAB}"));
        }
        if !(1..=MAX_ACTION_LEN).contains(&self.action_len) {
            return bad(format!("action_len must be in 1..={MAX_ACTION_LEN}"));
        }
        let cells = self.n_states * self.n_actions();
        if self.rewards.len() != cells || self.transitions.len() != cells {
            return bad(format!("tables must have {cells} entries"));
        }
        if self.terminal.len() != self.n_states {
            return bad("terminal flags must cover every state".into());
        }
        if let Some(r) = self.rewards.iter().find(|r| !r.is_finite()) {
            return bad(format!("non-finite reward {r}"));
        }
        if let Some(s) = self.transitions.iter().find(|&&s| s >= self.n_states) {
            return bad(format!("transition to unknown state {s}"));
        }
        if self.terminal[0] {
            return bad("initial state 0 must not be terminal".into());
        }
        Ok(())
    }

    /// Rewards uniform in `[-1, 1]`, successors uniform over states, and each
    /// state other than 0 terminal with probability `terminal_prob`.
    pub fn random(
        n_states: usize,
        vocab_size: usize,
        action_len: usize,
        terminal_prob: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = SeededRng::new(seed);
        let n_actions = vocab_size.pow(action_len as u32);
        let cells = n_states * n_actions;
        let rewards = (0..cells).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let transitions = (0..cells).map(|_| rng.below(n_states)).collect();
        let terminal = (0..n_states)
            .map(|s| s != 0 && rng.uniform() < terminal_prob)
            .collect();
        let spec = Self {
            n_states,
            vocab_size,
            action_len,
            rewards,
            transitions,
            terminal,
            spec_seed: seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// One non-terminal state whose every action ends the episode with the
    /// given per-action reward.
    pub fn bandit(vocab_size: usize, action_len: usize, rewards: &[f64]) -> Result<Self> {
        let n_actions = vocab_size.pow(action_len as u32);
        if rewards.len() != n_actions {
            return Err(Error::InvalidAction(format!(
                "bandit needs {n_actions} rewards, got {}",
                rewards.len()
            )));
        }
        let mut table = rewards.to_vec();
        table.extend(std::iter::repeat_n(0.0, n_actions));
        let spec = Self {
            n_states: 2,
            vocab_size,
            action_len,
            rewards: table,
            transitions: vec![1; 2 * n_actions],
            terminal: vec![false, true],
            spec_seed: 0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn action_index(&self, action: &[TokenId]) -> Result<usize> {
        if action.len() != self.action_len {
            return Err(Error::InvalidAction(format!(
                "expected {} tokens, got {}",
                self.action_len,
                action.len()
            )));
        }
        action.iter().try_fold(0usize, |acc, &w| {
            if w >= self.vocab_size {
                Err(Error::InvalidAction(format!(
                    "token {w} is not an action token"
                )))
            } else {
                Ok(acc * self.vocab_size + w)
            }
        })
    }

    pub fn action_tokens(&self, mut index: usize) -> TokenSeq {
        let mut ids = vec![0; self.action_len];
        for slot in ids.iter_mut().rev() {
            *slot = index % self.vocab_size;
            index /= self.vocab_size;
        }
        TokenSeq::from(ids)
    }

    pub fn reward(&self, state: usize, action: usize) -> f64 {
        self.rewards[state * self.n_actions() + action]
    }

    pub fn next_state(&self, state: usize, action: usize) -> usize {
        self.transitions[state * self.n_actions() + action]
    }

    pub fn is_terminal(&self, state: usize) -> bool {
        self.terminal[state]
    }

    /// Token encoding of a state: the single symbol `s<id>`.
    pub fn encode_state(&self, state: usize) -> TokenSeq {
        TokenSeq::from(vec![self.vocab_size + state])
    }

    pub fn decode_state(&self, seq: &[TokenId]) -> Option<usize> {
        match seq {
            [id] if *id >= self.vocab_size && *id < self.vocab_size + self.n_states => {
                Some(id - self.vocab_size)
            }
            _ => None,
        }
    }

    pub fn vocabulary(&self) -> Vocabulary {
        let actions = (0..self.vocab_size).map(|i| format!("a{i}"));
        let states = (0..self.n_states).map(|i| format!("s{i}"));
        Vocabulary::new(actions.chain(states)).expect("generated symbols are unique")
    }

    /// Every transition out of a non-terminal state, ignoring the step limit.
    pub fn all_transitions(&self) -> Vec<Transition> {
        let mut out = Vec::new();
        for s in (0..self.n_states).filter(|&s| !self.is_terminal(s)) {
            for a in 0..self.n_actions() {
                let next = self.next_state(s, a);
                out.push(Transition {
                    state: self.encode_state(s),
                    action: self.action_tokens(a),
                    reward: self.reward(s, a),
                    next_state: self.encode_state(next),
                    done: self.is_terminal(next),
                });
            }
        }
        out
    }

    /// Plain-text form:
    ///
    /// ```text
    /// # toksoft tabular env spec
    /// version = 1
    /// n_states = 2
    /// vocab_size = 2
    /// action_len = 2
    /// spec_seed = 0
    /// terminal = 1
    /// reward 0 = 0 0.5 0.2 1
    /// next 0 = 1 1 1 1
    /// ```
    ///
    /// One `reward`/`next` row per state, `n_actions` entries in action-index
    /// order. Rewards are written in shortest round-trip form.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let n = self.n_actions();
        let _ = writeln!(out, "{SPEC_HEADER}");
        let _ = writeln!(out, "version = {SPEC_VERSION}");
        let _ = writeln!(out, "n_states = {}", self.n_states);
        let _ = writeln!(out, "vocab_size = {}", self.vocab_size);
        let _ = writeln!(out, "action_len = {}", self.action_len);
        let _ = writeln!(out, "spec_seed = {}", self.spec_seed);
        let terminal: Vec<String> = (0..self.n_states)
            .filter(|&s| self.terminal[s])
            .map(|s| s.to_string())
            .collect();
        let _ = writeln!(out, "terminal = {}", terminal.join(" "));
        for s in 0..self.n_states {
            let row: Vec<String> = (0..n).map(|a| format!("{:?}", self.reward(s, a))).collect();
            let _ = writeln!(out, "reward {s} = {}", row.join(" "));
        }
        for s in 0..self.n_states {
            let row: Vec<String> = (0..n).map(|a| self.next_state(s, a).to_string()).collect();
            let _ = writeln!(out, "next {s} = {}", row.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::parse(text, Path::new("<string>"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    fn parse(text: &str, origin: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            msg,
        };
        let mut n_states = None;
        let mut vocab_size = None;
        let mut action_len = None;
        let mut spec_seed = 0;
        let mut terminal_ids = Vec::new();
        let mut reward_rows: Vec<(usize, usize, Vec<f64>)> = Vec::new();
        let mut next_rows: Vec<(usize, usize, Vec<usize>)> = Vec::new();

        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(n, format!("expected key = value, got {line:?}")))?;
            let mut key_parts = key.split_whitespace();
            let name = key_parts.next().unwrap_or("");
            let int = |v: &str| -> Result<usize> {
                v.trim()
                    .parse()
                    .map_err(|_| err(n, format!("invalid integer {v:?}")))
            };
            match name {
                "version" => {
                    if int(value)? != SPEC_VERSION as usize {
                        return Err(err(n, format!("unsupported version {}", value.trim())));
                    }
                }
                "n_states" => n_states = Some(int(value)?),
                "vocab_size" => vocab_size = Some(int(value)?),
                "action_len" => action_len = Some(int(value)?),
                "spec_seed" => {
                    spec_seed = value
                        .trim()
                        .parse()
                        .map_err(|_| err(n, format!("invalid seed {value:?}")))?
                }
                "terminal" => {
                    terminal_ids = value.split_whitespace().map(int).collect::<Result<_>>()?
                }
                "reward" | "next" => {
                    let state = int(key_parts
                        .next()
                        .ok_or_else(|| err(n, "missing state id".into()))?)?;
                    if name == "reward" {
                        let row = value
                            .split_whitespace()
                            .map(|v| {
                                v.parse::<f64>()
                                    .map_err(|_| err(n, format!("invalid reward {v:?}")))
                            })
                            .collect::<Result<Vec<_>>>()?;
                        reward_rows.push((n, state, row));
                    } else {
                        let row = value
                            .split_whitespace()
                            .map(int)
                            .collect::<Result<Vec<_>>>()?;
                        next_rows.push((n, state, row));
                    }
                }
                other => return Err(err(n, format!("unknown key {other:?}"))),
            }
        }

        let missing = |k: &str| err(0, format!("missing {k}"));
        let n_states = n_states.ok_or_else(|| missing("n_states"))?;
        let vocab_size = vocab_size.ok_or_else(|| missing("vocab_size"))?;
        let action_len = action_len.ok_or_else(|| missing("action_len"))?;
        if n_states > MAX_STATES || vocab_size > MAX_VOCAB || action_len > MAX_ACTION_LEN {
            return Err(err(0, "dimensions exceed tabular limits".into()));
        }
        let n_actions = vocab_size.pow(action_len as u32);
        let mut rewards = vec![f64::NAN; n_states * n_actions];
        let mut transitions = vec![usize::MAX; n_states * n_actions];
        for (n, s, row) in reward_rows {
            if s >= n_states || row.len() != n_actions {
                return Err(err(n, format!("reward row {s} malformed")));
            }
            rewards[s * n_actions..(s + 1) * n_actions].copy_from_slice(&row);
        }
        for (n, s, row) in next_rows {
            if s >= n_states || row.len() != n_actions {
                return Err(err(n, format!("next row {s} malformed")));
            }
            transitions[s * n_actions..(s + 1) * n_actions].copy_from_slice(&row);
        }
        let mut terminal = vec![false; n_states];
        for t in terminal_ids {
            *terminal
                .get_mut(t)
                .ok_or_else(|| err(0, format!("terminal state {t} out of range")))? = true;
        }
        let spec = Self {
            n_states,
            vocab_size,
            action_len,
            rewards,
            transitions,
            terminal,
            spec_seed,
        };
        spec.validate().map_err(|e| err(0, e.to_string()))?;
        Ok(spec)
    }
}

#[derive(Debug, Clone)]
pub struct TabularEnv {
    spec: TabularEnvSpec,
    vocab: Vocabulary,
    max_steps: usize,
    state: usize,
    steps: usize,
}

impl TabularEnv {
    pub const DEFAULT_MAX_STEPS: usize = 10;

    pub fn new(spec: TabularEnvSpec) -> Result<Self> {
        spec.validate()?;
        let vocab = spec.vocabulary();
        Ok(Self {
            spec,
            vocab,
            max_steps: Self::DEFAULT_MAX_STEPS,
            state: 0,
            steps: 0,
        })
    }

    pub fn with_max_episode_steps(mut self, steps: usize) -> Self {
        self.max_steps = steps.max(1);
        self
    }

    pub fn spec(&self) -> &TabularEnvSpec {
        &self.spec
    }

    pub fn current_state(&self) -> usize {
        self.state
    }
}

impl TokenEnv for TabularEnv {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn action_vocab_size(&self) -> usize {
        self.spec.vocab_size
    }

    fn max_action_len(&self) -> usize {
        self.spec.action_len
    }

    fn max_episode_steps(&self) -> usize {
        self.max_steps
    }

    fn set_max_episode_steps(&mut self, steps: usize) {
        self.max_steps = steps.max(1);
    }

    fn max_state_len(&self) -> usize {
        1
    }

    fn reset(&mut self) -> TokenSeq {
        self.state = 0;
        self.steps = 0;
        self.spec.encode_state(0)
    }

    fn step(&mut self, action: &TokenSeq) -> Result<StepOutcome> {
        check_action_len(action, self.spec.action_len)?;
        let a = self.spec.action_index(action)?;
        let reward = self.spec.reward(self.state, a);
        let next = self.spec.next_state(self.state, a);
        self.state = next;
        self.steps += 1;
        Ok(StepOutcome {
            next_state: self.spec.encode_state(next),
            reward,
            done: self.spec.is_terminal(next) || self.steps >= self.max_steps,
        })
    }

    fn enumerate_actions(&self) -> Result<Vec<TokenSeq>> {
        enumerate_fixed_length(self.spec.vocab_size, self.spec.action_len)
    }

    fn reference(&self) -> Reference {
        Reference::uniform(self.spec.vocab_size)
    }
}
