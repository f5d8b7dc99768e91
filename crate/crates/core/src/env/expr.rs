//! Arithmetic expression synthesis with a reflection loop.
//!
//! The agent writes an infix expression over single digits and `+ - *`,
//! evaluated strictly left to right with equal precedence. A parseable
//! expression ends the episode with a closeness score in `[0, 1]`; an
//! unparseable one costs `-1` and the agent sees its failed attempt together
//! with an error code on the next step.

use crate::error::{Error, Result};
use crate::policy::{GrammarPrior, Reference};
use crate::vocab::{TokenId, TokenSeq, Vocabulary};

use super::{check_action_len, StepOutcome, TokenEnv, ENUMERATION_LIMIT};

const DIGITS: usize = 10;
const PLUS: TokenId = 10;
const MINUS: TokenId = 11;
const TIMES: TokenId = 12;
const EOS: TokenId = 13;
const ACTION_TOKENS: usize = 14;
const GOAL: TokenId = 14;
const SEP: TokenId = 15;
const ERR_BASE: TokenId = 16;
const DONE: TokenId = 21;

const SYMBOLS: [&str; 22] = [
    "0",
    "1",
    "2",
    "3",
    "4",
    "5",
    "6",
    "7",
    "8",
    "9",
    "+",
    "-",
    "*",
    "<eos>",
    "GOAL",
    "|",
    "E_EMPTY",
    "E_LEAD",
    "E_TRAIL",
    "E_ADJ_OP",
    "E_ADJ_DIGIT",
    "<done>",
];

pub const INVALID_REWARD: f64 = -1.0;

/// Why an action failed to parse; each maps to one error-code token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExprError {
    Empty,
    LeadingOperator,
    TrailingOperator,
    AdjacentOperators,
    AdjacentDigits,
}

impl ExprError {
    pub fn token(self) -> TokenId {
        ERR_BASE
            + match self {
                ExprError::Empty => 0,
                ExprError::LeadingOperator => 1,
                ExprError::TrailingOperator => 2,
                ExprError::AdjacentOperators => 3,
                ExprError::AdjacentDigits => 4,
            }
    }
}

fn is_digit(t: TokenId) -> bool {
    t < DIGITS
}

/// Evaluates action tokens up to the first EOS.
///
/// Errors are reported in scan order: empty input, a leading operator, the
/// first adjacent pair, then a trailing operator.
pub fn parse_expression(tokens: &[TokenId]) -> std::result::Result<i64, ExprError> {
    let end = tokens
        .iter()
        .position(|&t| t == EOS)
        .unwrap_or(tokens.len());
    let body = &tokens[..end];
    let Some(&first) = body.first() else {
        return Err(ExprError::Empty);
    };
    if !is_digit(first) {
        return Err(ExprError::LeadingOperator);
    }
    for pair in body.windows(2) {
        match (is_digit(pair[0]), is_digit(pair[1])) {
            (true, true) => return Err(ExprError::AdjacentDigits),
            (false, false) => return Err(ExprError::AdjacentOperators),
            _ => {}
        }
    }
    if !is_digit(body[body.len() - 1]) {
        return Err(ExprError::TrailingOperator);
    }
    let mut value = first as i64;
    for pair in body[1..].chunks_exact(2) {
        let rhs = pair[1] as i64;
        value = match pair[0] {
            PLUS => value.saturating_add(rhs),
            MINUS => value.saturating_sub(rhs),
            TIMES => value.saturating_mul(rhs),
            _ => unreachable!("operators are checked above"),
        };
    }
    Ok(value)
}

#[derive(Debug, Clone)]
pub struct ExprEnv {
    target: i64,
    scale: f64,
    max_action_len: usize,
    max_steps: usize,
    vocab: Vocabulary,
    prompt: TokenSeq,
    steps: usize,
}

impl ExprEnv {
    pub const DEFAULT_ACTION_LEN: usize = 6;
    pub const DEFAULT_MAX_STEPS: usize = 5;

    pub fn new(target: i64, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Config(format!(
                "scale must be positive, got {scale}"
            )));
        }
        let vocab = Vocabulary::new(SYMBOLS)?.with_eos("<eos>")?;
        let mut prompt = vec![GOAL];
        if target < 0 {
            prompt.push(MINUS);
        }
        prompt.extend(
            target
                .unsigned_abs()
                .to_string()
                .bytes()
                .map(|b| (b - b'0') as TokenId),
        );
        Ok(Self {
            target,
            scale,
            max_action_len: Self::DEFAULT_ACTION_LEN,
            max_steps: Self::DEFAULT_MAX_STEPS,
            vocab,
            prompt: TokenSeq::from(prompt),
            steps: 0,
        })
    }

    pub fn with_max_action_len(mut self, len: usize) -> Self {
        self.max_action_len = len.max(1);
        self
    }

    pub fn with_max_episode_steps(mut self, steps: usize) -> Self {
        self.max_steps = steps.max(1);
        self
    }

    pub fn target(&self) -> i64 {
        self.target
    }

    pub fn prompt(&self) -> &TokenSeq {
        &self.prompt
    }

    pub fn terminal_state() -> TokenSeq {
        TokenSeq::from(vec![DONE])
    }

    /// Reward of an already-parsed value.
    pub fn score(&self, value: i64) -> f64 {
        let gap = (value as f64 - self.target as f64).abs();
        (1.0 - gap / self.scale).max(0.0)
    }

    /// Prompt, separator, failed attempt, separator, error code.
    pub fn reflection_state(&self, attempt: &[TokenId], err: ExprError) -> TokenSeq {
        let end = attempt
            .iter()
            .position(|&t| t == EOS)
            .unwrap_or(attempt.len());
        let mut ids = self.prompt.to_vec();
        ids.push(SEP);
        ids.extend_from_slice(&attempt[..end]);
        ids.push(SEP);
        ids.push(err.token());
        TokenSeq::from(ids)
    }
}

impl TokenEnv for ExprEnv {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn action_vocab_size(&self) -> usize {
        ACTION_TOKENS
    }

    fn max_action_len(&self) -> usize {
        self.max_action_len
    }

    fn max_episode_steps(&self) -> usize {
        self.max_steps
    }

    fn set_max_episode_steps(&mut self, steps: usize) {
        self.max_steps = steps.max(1);
    }

    fn max_state_len(&self) -> usize {
        self.prompt.len() + self.max_action_len + 3
    }

    fn reset(&mut self) -> TokenSeq {
        self.steps = 0;
        self.prompt.clone()
    }

    fn step(&mut self, action: &TokenSeq) -> Result<StepOutcome> {
        check_action_len(action, self.max_action_len)?;
        if let Some(&t) = action.iter().find(|&&t| t >= ACTION_TOKENS) {
            return Err(Error::InvalidAction(format!(
                "token {t} is not an action token"
            )));
        }
        self.steps += 1;
        Ok(match parse_expression(action) {
            Ok(value) => StepOutcome {
                next_state: Self::terminal_state(),
                reward: self.score(value),
                done: true,
            },
            Err(err) => StepOutcome {
                next_state: self.reflection_state(action, err),
                reward: INVALID_REWARD,
                done: self.steps >= self.max_steps,
            },
        })
    }

    /// Sequences of up to `L` tokens where EOS may appear only last.
    fn enumerate_actions(&self) -> Result<Vec<TokenSeq>> {
        let full = (ACTION_TOKENS as u128)
            .checked_pow(self.max_action_len as u32)
            .unwrap_or(u128::MAX);
        if full > ENUMERATION_LIMIT {
            return Err(Error::SpaceTooLarge {
                size: full,
                limit: ENUMERATION_LIMIT,
            });
        }
        let mut out = Vec::new();
        let mut prefix = Vec::new();
        fn rec(prefix: &mut Vec<TokenId>, max: usize, out: &mut Vec<TokenSeq>) {
            for t in 0..ACTION_TOKENS {
                prefix.push(t);
                if t == EOS || prefix.len() == max {
                    out.push(TokenSeq::from(prefix.clone()));
                } else {
                    rec(prefix, max, out);
                }
                prefix.pop();
            }
        }
        rec(&mut prefix, self.max_action_len, &mut out);
        out.sort();
        Ok(out)
    }

    fn reference(&self) -> Reference {
        Reference::Grammar(GrammarPrior::new(
            ACTION_TOKENS,
            DIGITS,
            EOS,
            self.max_action_len,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn enc(env: &ExprEnv, s: &str) -> TokenSeq {
        let symbols: Vec<String> = s.chars().map(|c| c.to_string()).collect();
        env.vocab().encode(&symbols).unwrap()
    }

    #[test]
    fn reset_is_goal_prompt() {
        let mut env = ExprEnv::new(12, 12.0).unwrap();
        let s = env.reset();
        assert_eq!(env.vocab().decode(&s).unwrap(), vec!["GOAL", "1", "2"]);
        assert_eq!(env.reset(), s);
        let neg = ExprEnv::new(-7, 1.0).unwrap();
        assert_eq!(
            neg.vocab().decode(neg.prompt()).unwrap(),
            vec!["GOAL", "-", "7"]
        );
    }

    #[test]
    fn exact_expression_scores_one() {
        let mut env = ExprEnv::new(12, 12.0).unwrap();
        env.reset();
        let out = env.step(&enc(&env, "3*4")).unwrap();
        assert_eq!(out.reward, 1.0);
        assert!(out.done);
        assert_eq!(out.next_state, ExprEnv::terminal_state());
    }

    #[test]
    fn left_to_right_evaluation() {
        let env = ExprEnv::new(0, 1.0).unwrap();
        assert_eq!(parse_expression(&enc(&env, "2+3*4")), Ok(20));
        assert_eq!(parse_expression(&enc(&env, "9-9-9")), Ok(-9));
        assert_eq!(parse_expression(&enc(&env, "7")), Ok(7));
        let mut with_eos = enc(&env, "5+1").into_inner();
        with_eos.extend([EOS, PLUS, PLUS]);
        assert_eq!(parse_expression(&with_eos), Ok(6));
    }

    #[test]
    fn error_categories() {
        let env = ExprEnv::new(0, 1.0).unwrap();
        assert_eq!(parse_expression(&[EOS]), Err(ExprError::Empty));
        assert_eq!(
            parse_expression(&enc(&env, "+*3")),
            Err(ExprError::LeadingOperator)
        );
        assert_eq!(
            parse_expression(&enc(&env, "3+")),
            Err(ExprError::TrailingOperator)
        );
        assert_eq!(
            parse_expression(&enc(&env, "3+*4")),
            Err(ExprError::AdjacentOperators)
        );
        assert_eq!(
            parse_expression(&enc(&env, "34")),
            Err(ExprError::AdjacentDigits)
        );
        assert_eq!(
            parse_expression(&enc(&env, "3++")),
            Err(ExprError::AdjacentOperators)
        );
    }

    #[test]
    fn invalid_action_reflects() {
        let mut env = ExprEnv::new(12, 12.0).unwrap();
        env.reset();
        let action = enc(&env, "+*3");
        let out = env.step(&action).unwrap();
        assert_eq!(out.reward, -1.0);
        assert!(!out.done);
        let symbols = env.vocab().decode(&out.next_state).unwrap();
        assert_eq!(
            symbols,
            vec!["GOAL", "1", "2", "|", "+", "*", "3", "|", "E_LEAD"]
        );
    }

    #[test]
    fn fifth_invalid_action_ends_episode() {
        let mut env = ExprEnv::new(12, 12.0).unwrap();
        env.reset();
        let bad = enc(&env, "33");
        let dones: Vec<bool> = (0..5).map(|_| env.step(&bad).unwrap().done).collect();
        assert_eq!(dones, vec![false, false, false, false, true]);
    }

    #[test]
    fn score_is_clamped() {
        let env = ExprEnv::new(12, 4.0).unwrap();
        assert_eq!(env.score(12), 1.0);
        assert_eq!(env.score(10), 0.5);
        assert_eq!(env.score(100), 0.0);
    }

    #[test]
    fn rejects_long_and_non_action_tokens() {
        let mut env = ExprEnv::new(1, 1.0).unwrap();
        env.reset();
        assert!(matches!(
            env.step(&TokenSeq::from(vec![1; 7])),
            Err(Error::ActionTooLong { len: 7, max: 6 })
        ));
        assert!(matches!(
            env.step(&TokenSeq::from(vec![GOAL])),
            Err(Error::InvalidAction(_))
        ));
    }

    #[test]
    fn enumeration_guard_and_small_space() {
        let env = ExprEnv::new(3, 3.0).unwrap();
        assert!(matches!(
            env.enumerate_actions(),
            Err(Error::SpaceTooLarge { .. })
        ));
        let env = env.with_max_action_len(2);
        let all = env.enumerate_actions().unwrap();
        // [EOS] plus 13 one-token prefixes followed by any of 14 tokens
        assert_eq!(all.len(), 1 + 13 * 14);
        assert!(all.windows(2).all(|w| w[0] < w[1]));
    }
}
