//! KL terms, soft state values, per-token soft Bellman targets, and the
//! closed-form optimal soft policy.
//!
//! All expectations over the next token are exact sums over the action
//! vocabulary.

use crate::config::BackupParams;
use crate::error::{Error, Result};
use crate::policy::{Context, Policy, SoftQ};
use crate::transition::Transition;
use crate::vocab::TokenId;

/// Bound on `|Q/beta|` (after max-subtraction) fed to `exp`.
pub const EXP_CLAMP: f64 = 60.0;

/// `sum_w pi(w) ln(pi(w) / pibar(w))` with `0 ln 0 = 0`.
pub fn kl_divergence(pi: &[f64], pibar: &[f64]) -> Result<f64> {
    debug_assert_eq!(pi.len(), pibar.len());
    let mut kl = 0.0;
    for (w, (&p, &r)) in pi.iter().zip(pibar).enumerate() {
        if p > 0.0 {
            if r <= 0.0 {
                return Err(Error::SupportViolation { token: w });
            }
            kl += p * (p.ln() - r.ln());
        }
    }
    // Gibbs: negative values are rounding
    Ok(kl.max(0.0))
}

/// KL divergence between two policies at one context.
pub fn kl_term(pi: &impl Policy, pibar: &impl Policy, ctx: &Context) -> Result<f64> {
    kl_divergence(&pi.probs(ctx), &pibar.probs(ctx))
}

/// `E_{w~pi}[q(w)] - beta * KL(pi || pibar)` for explicit rows.
pub fn soft_value(pi: &[f64], pibar: &[f64], q: &[f64], beta: f64) -> Result<f64> {
    let expected: f64 = pi.iter().zip(q).map(|(p, v)| p * v).sum();
    Ok(expected - beta * kl_divergence(pi, pibar)?)
}

/// Soft value of a context under `pi`, with `q` evaluated at that context.
pub fn soft_state_value(
    pi: &impl Policy,
    pibar: &impl Policy,
    q: &impl SoftQ,
    ctx: &Context,
    beta: f64,
) -> Result<f64> {
    soft_value(&pi.probs(ctx), &pibar.probs(ctx), &q.q_values(ctx), beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetCase {
    /// `j < |a|`: bootstrap from the next token of the same action.
    WithinAction,
    /// `j = |a|`: reward plus the discounted value of the next state.
    ActionBoundary,
}

/// Regression target for `Q(state, w_1..w_{j-1}, w_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenTarget {
    pub ctx: Context,
    pub token: TokenId,
    pub target_value: f64,
    pub case: TargetCase,
}

/// Per-token soft Bellman target for token `j` (1-based) of `tr.action`.
///
/// Inside the action the target is the soft value of the extended prefix,
/// scaled by `params.within_discount` (1 for ETPO). At the last token it is
/// the reward plus `gamma` times the soft value of the next state's first
/// token, with no bootstrap when the transition is terminal.
pub fn per_token_target(
    tr: &Transition,
    j: usize,
    pi: &impl Policy,
    pibar: &impl Policy,
    q_target: &impl SoftQ,
    params: BackupParams,
) -> Result<TokenTarget> {
    let len = tr.action.len();
    if j == 0 || j > len {
        return Err(Error::IndexOutOfRange { j, len });
    }
    let ctx = Context::before_token(&tr.state, &tr.action, j);
    let token = tr.action[j - 1];
    let (target_value, case) = if j < len {
        let next = Context::new(tr.state.clone(), tr.action.prefix(j));
        let v = soft_state_value(pi, pibar, q_target, &next, params.beta)?;
        (params.within_discount * v, TargetCase::WithinAction)
    } else if tr.done {
        (tr.reward, TargetCase::ActionBoundary)
    } else {
        let next = Context::root(&tr.next_state);
        let v = soft_state_value(pi, pibar, q_target, &next, params.beta)?;
        (tr.reward + params.gamma * v, TargetCase::ActionBoundary)
    };
    Ok(TokenTarget {
        ctx,
        token,
        target_value,
        case,
    })
}

/// Targets for every token of a transition, `j = 1..=|a|`.
pub fn transition_targets(
    tr: &Transition,
    pi: &impl Policy,
    pibar: &impl Policy,
    q_target: &impl SoftQ,
    params: BackupParams,
) -> Result<Vec<TokenTarget>> {
    (1..=tr.action.len())
        .map(|j| per_token_target(tr, j, pi, pibar, q_target, params))
        .collect()
}

/// `pi*(w) ∝ pibar(w) exp(q(w) / beta)`.
///
/// Exponents are shifted by `max q` and clamped to `[-60, 60]`, which keeps
/// every entry finite and nonzero for any `beta > 0` without changing which
/// token is most likely.
pub fn optimal_soft_policy(pibar: &[f64], q: &[f64], beta: f64) -> Vec<f64> {
    debug_assert!(beta > 0.0);
    let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = pibar
        .iter()
        .zip(q)
        .map(|(&r, &v)| r * ((v - max) / beta).clamp(-EXP_CLAMP, EXP_CLAMP).exp())
        .collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    out
}

pub fn optimal_soft_policy_at(
    pibar: &impl Policy,
    q: &impl SoftQ,
    ctx: &Context,
    beta: f64,
) -> Vec<f64> {
    optimal_soft_policy(&pibar.probs(ctx), &q.q_values(ctx), beta)
}

/// `KL(pi || pi*_q)`, the per-token policy objective.
pub fn policy_kl_objective(pi: &[f64], pibar: &[f64], q: &[f64], beta: f64) -> Result<f64> {
    kl_divergence(pi, &optimal_soft_policy(pibar, q, beta))
}

/// Gradient of [`policy_kl_objective`] with respect to the logits of a
/// softmax policy `pi`: `pi_k (ln pi_k - ln pi*_k - KL)`.
pub fn policy_kl_logit_grad(pi: &[f64], pibar: &[f64], q: &[f64], beta: f64) -> Vec<f64> {
    let star = optimal_soft_policy(pibar, q, beta);
    let log_ratio: Vec<f64> = pi
        .iter()
        .zip(&star)
        .map(|(&p, &s)| if p > 0.0 { p.ln() - s.ln() } else { 0.0 })
        .collect();
    let kl: f64 = pi.iter().zip(&log_ratio).map(|(p, l)| p * l).sum();
    pi.iter()
        .zip(&log_ratio)
        .map(|(p, l)| p * (l - kl))
        .collect()
}
