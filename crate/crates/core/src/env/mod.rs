//! Environments whose states and actions are token sequences.
//!
//! Both environments lay out their vocabulary the same way: action tokens
//! occupy ids `0..action_vocab_size()`, and any state-only symbols (prompt
//! markers, error codes, state labels) follow. Policies and Q-functions range
//! over action tokens only.

mod expr;
mod tabular;

pub use expr::{parse_expression, ExprEnv, ExprError};
pub use tabular::{TabularEnv, TabularEnvSpec};

use crate::error::{Error, Result};
use crate::policy::Reference;
use crate::vocab::{TokenId, TokenSeq, Vocabulary};

/// Upper bound on the number of actions [`TokenEnv::enumerate_actions`] will produce.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: TokenSeq,
    pub reward: f64,
    pub done: bool,
}

pub trait TokenEnv {
    fn vocab(&self) -> &Vocabulary;

    /// Number of action tokens; they are ids `0..n`.
    fn action_vocab_size(&self) -> usize;

    fn max_action_len(&self) -> usize;

    fn max_episode_steps(&self) -> usize;

    fn set_max_episode_steps(&mut self, steps: usize);

    /// Longest state this environment can emit.
    fn max_state_len(&self) -> usize;

    fn reset(&mut self) -> TokenSeq;

    fn step(&mut self, action: &TokenSeq) -> Result<StepOutcome>;

    /// Every legal action in lexicographic id order.
    fn enumerate_actions(&self) -> Result<Vec<TokenSeq>>;

    /// Frozen prior over action tokens for this task.
    fn reference(&self) -> Reference;

    fn eos(&self) -> Option<TokenId> {
        self.vocab().eos()
    }
}

pub(crate) fn check_action_len(action: &TokenSeq, max: usize) -> Result<()> {
    if action.is_empty() {
        Err(Error::EmptyAction)
    } else if action.len() > max {
        Err(Error::ActionTooLong {
            len: action.len(),
            max,
        })
    } else {
        Ok(())
    }
}

/// All `n_tokens^len` sequences of exactly `len` tokens, lexicographically.
pub fn enumerate_fixed_length(n_tokens: usize, len: usize) -> Result<Vec<TokenSeq>> {
    let count = (n_tokens as u128)
        .checked_pow(len as u32)
        .unwrap_or(u128::MAX);
    if count > ENUMERATION_LIMIT {
        return Err(Error::SpaceTooLarge {
            size: count,
            limit: ENUMERATION_LIMIT,
        });
    }
    let count = count as usize;
    let mut out = Vec::with_capacity(count);
    for mut idx in 0..count {
        let mut ids = vec![0; len];
        for slot in ids.iter_mut().rev() {
            *slot = idx % n_tokens;
            idx /= n_tokens;
        }
        out.push(TokenSeq::from(ids));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_length_enumeration_is_lexicographic() {
        let all = enumerate_fixed_length(2, 2).unwrap();
        let ids: Vec<Vec<usize>> = all.into_iter().map(TokenSeq::into_inner).collect();
        assert_eq!(ids, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);

        let all = enumerate_fixed_length(3, 3).unwrap();
        assert_eq!(all.len(), 27);
        assert!(all.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn enumeration_guard() {
        assert!(matches!(
            enumerate_fixed_length(14, 6),
            Err(Error::SpaceTooLarge { .. })
        ));
    }
}
