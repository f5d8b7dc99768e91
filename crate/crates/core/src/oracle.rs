//! Brute-force ground truth over enumerated action spaces.
//!
//! Everything here works with whole actions: action-level soft backups, exact
//! soft value iteration, and residual checks that compare token-level
//! quantities against direct enumeration. Action-level KL terms are computed
//! from enumerated action probabilities, never via the token chain rule, so
//! the chain-rule identity is tested rather than assumed.

use crate::config::BackupParams;
use crate::env::{enumerate_fixed_length, TabularEnvSpec};
use crate::error::{Error, Result};
use crate::policy::{action_prob, Context, Policy, PolicyTable, QTable, Reference, SoftQ};
use crate::rng::SeededRng;
use crate::soft_bellman::{kl_divergence, per_token_target};
use crate::transition::Transition;
use crate::vocab::TokenSeq;

/// `Q(s, a)` for every state and enumerated action index.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionLevelQ {
    pub n_states: usize,
    pub n_actions: usize,
    values: Vec<f64>,
}

impl ActionLevelQ {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            values: vec![0.0; n_states * n_actions],
        }
    }

    pub fn for_spec(spec: &TabularEnvSpec) -> Self {
        Self::zeros(spec.n_states, spec.n_actions())
    }

    pub fn random(spec: &TabularEnvSpec, lo: f64, hi: f64, rng: &mut SeededRng) -> Self {
        let mut q = Self::for_spec(spec);
        q.values
            .iter_mut()
            .for_each(|v| *v = rng.uniform_range(lo, hi));
        q
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.n_actions + a] = v;
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn sup_distance(&self, other: &ActionLevelQ) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// A distribution over enumerated actions for every state.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionPolicy {
    pub n_states: usize,
    pub n_actions: usize,
    probs: Vec<f64>,
}

impl ActionPolicy {
    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// Action distribution induced by a token-level policy (product of
    /// token conditionals).
    pub fn from_token_policy(policy: &impl Policy, spec: &TabularEnvSpec) -> Self {
        let n_actions = spec.n_actions();
        let mut probs = Vec::with_capacity(spec.n_states * n_actions);
        for s in 0..spec.n_states {
            let state = spec.encode_state(s);
            for a in 0..n_actions {
                probs.push(action_prob(policy, &state, &spec.action_tokens(a)));
            }
        }
        Self {
            n_states: spec.n_states,
            n_actions,
            probs,
        }
    }

    pub fn uniform(spec: &TabularEnvSpec) -> Self {
        let n_actions = spec.n_actions();
        Self {
            n_states: spec.n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; spec.n_states * n_actions],
        }
    }

    /// Samples an action index at state `s`.
    pub fn sample(&self, s: usize, rng: &mut SeededRng) -> usize {
        rng.categorical(self.row(s))
    }
}

/// Action-level KL at state `s`, summed directly over enumerated actions.
pub fn action_kl(pi: &ActionPolicy, pibar: &ActionPolicy, s: usize) -> Result<f64> {
    kl_divergence(pi.row(s), pibar.row(s))
}

/// Soft value `E_{a~pi}[Q(s,a)] - beta KL(s)` of every state; terminal states
/// are worth 0.
pub fn action_soft_values(
    q: &ActionLevelQ,
    pi: &ActionPolicy,
    pibar: &ActionPolicy,
    spec: &TabularEnvSpec,
    beta: f64,
) -> Result<Vec<f64>> {
    (0..spec.n_states)
        .map(|s| {
            if spec.is_terminal(s) {
                return Ok(0.0);
            }
            let expected: f64 = pi.row(s).iter().zip(q.row(s)).map(|(p, v)| p * v).sum();
            Ok(expected - beta * action_kl(pi, pibar, s)?)
        })
        .collect()
}

/// One synchronous action-level soft Bellman sweep:
/// `Q(s,a) <- r + gamma (E_{a'~pi}[Q(s',a')] - beta KL(s'))`, with no
/// bootstrap into terminal states.
pub fn action_soft_backup(
    q: &ActionLevelQ,
    pi: &ActionPolicy,
    pibar: &ActionPolicy,
    spec: &TabularEnvSpec,
    beta: f64,
    gamma: f64,
) -> Result<ActionLevelQ> {
    let v = action_soft_values(q, pi, pibar, spec, beta)?;
    let mut out = ActionLevelQ::for_spec(spec);
    for s in 0..spec.n_states {
        for a in 0..spec.n_actions() {
            let next = spec.next_state(s, a);
            out.set(s, a, spec.reward(s, a) + gamma * v[next]);
        }
    }
    Ok(out)
}

/// `pi*(a|s) ∝ pibar(a|s) exp(Q(s,a)/beta)` for every state.
pub fn action_optimal_policy(q: &ActionLevelQ, pibar: &ActionPolicy, beta: f64) -> ActionPolicy {
    let mut probs = Vec::with_capacity(q.values.len());
    for s in 0..q.n_states {
        probs.extend(crate::soft_bellman::optimal_soft_policy(
            pibar.row(s),
            q.row(s),
            beta,
        ));
    }
    ActionPolicy {
        n_states: q.n_states,
        n_actions: q.n_actions,
        probs,
    }
}

#[derive(Debug, Clone)]
pub struct SoftOptimum {
    pub q: ActionLevelQ,
    pub policy: ActionPolicy,
    /// `V*(s) = E_{a~pi*}[Q*(s,a)] - beta KL*(s)`; 0 at terminal states.
    pub values: Vec<f64>,
    /// Sup-norm change of Q at each iteration.
    pub deltas: Vec<f64>,
}

/// Exact soft value iteration: alternate a soft backup under the current
/// policy with the closed-form policy for the new Q, until the sup-norm
/// change drops below `tol`.
pub fn soft_value_iteration(
    spec: &TabularEnvSpec,
    pibar: &ActionPolicy,
    beta: f64,
    gamma: f64,
    tol: f64,
    max_iterations: usize,
) -> Result<SoftOptimum> {
    let mut q = ActionLevelQ::for_spec(spec);
    let mut policy = action_optimal_policy(&q, pibar, beta);
    let mut deltas = Vec::new();
    for _ in 0..max_iterations {
        let next = action_soft_backup(&q, &policy, pibar, spec, beta, gamma)?;
        let delta = next.sup_distance(&q);
        deltas.push(delta);
        q = next;
        policy = action_optimal_policy(&q, pibar, beta);
        if delta < tol {
            let values = action_soft_values(&q, &policy, pibar, spec, beta)?;
            return Ok(SoftOptimum {
                q,
                policy,
                values,
                deltas,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iterations,
        delta: deltas.last().copied().unwrap_or(f64::INFINITY),
    })
}

fn last_token_context(state: &TokenSeq, action: &TokenSeq) -> Context {
    Context::before_token(state, action, action.len())
}

/// Copies action-level values onto the last-token entries of a token Q table.
pub fn last_token_table(q: &ActionLevelQ, spec: &TabularEnvSpec) -> QTable {
    let mut table = QTable::new(spec.vocab_size);
    for s in 0..spec.n_states {
        let state = spec.encode_state(s);
        for a in 0..spec.n_actions() {
            let action = spec.action_tokens(a);
            table.set(
                last_token_context(&state, &action),
                action[action.len() - 1],
                q.get(s, a),
            );
        }
    }
    table
}

/// Applies within-action targets from the deepest prefix up to the first
/// token, in place, so that every earlier token's Q is the soft value of its
/// continuation.
pub fn compose_within_action(
    q: &mut QTable,
    pi: &impl Policy,
    pibar: &impl Policy,
    state: &TokenSeq,
    actions: &[TokenSeq],
    params: BackupParams,
) -> Result<()> {
    let len = actions.first().map_or(0, |a| a.len());
    for j in (1..len).rev() {
        for action in actions {
            let tr = Transition {
                state: state.clone(),
                action: action.clone(),
                reward: 0.0,
                next_state: TokenSeq::empty(),
                done: true,
            };
            let t = per_token_target(&tr, j, pi, pibar, &*q, params)?;
            q.set(t.ctx, t.token, t.target_value);
        }
    }
    Ok(())
}

/// Residual of the within-action identity at one state:
///
/// `E_{w1~pi}[Q(s,w1)] - beta KL(w1|s)` (after composing within-action
/// backups from the last-token values in `q`) versus
/// `E_{a~pi}[Q(s,a)] - beta KL(a|s)` with `KL(a|s)` enumerated directly.
///
/// `within_discount` other than 1 reproduces the discounted ablation, for
/// which the identity does not hold.
#[allow(clippy::too_many_arguments)]
pub fn check_within_action_identity(
    q: &QTable,
    pi: &impl Policy,
    pibar: &impl Policy,
    state: &TokenSeq,
    beta: f64,
    action_len: usize,
    within_discount: f64,
) -> Result<f64> {
    let actions = enumerate_fixed_length(pi.n_tokens(), action_len)?;
    let mut composed = q.clone();
    let params = BackupParams {
        beta,
        gamma: 1.0,
        within_discount,
    };
    compose_within_action(&mut composed, pi, pibar, state, &actions, params)?;
    let root = Context::root(state);
    let lhs = crate::soft_bellman::soft_state_value(pi, pibar, &composed, &root, beta)?;

    let mut expected_q = 0.0;
    let mut kl = 0.0;
    for action in &actions {
        let p = action_prob(pi, state, action);
        let p_ref = action_prob(pibar, state, action);
        let q_sa = q.q_value(&last_token_context(state, action), action[action.len() - 1]);
        expected_q += p * q_sa;
        if p > 0.0 {
            if p_ref <= 0.0 {
                return Err(Error::SupportViolation { token: action[0] });
            }
            kl += p * (p.ln() - p_ref.ln());
        }
    }
    let rhs = expected_q - beta * kl;
    Ok((lhs - rhs).abs())
}

/// One token-level backup through whole actions: compose within-action values
/// from `q_last` at every state, then apply the boundary target to every
/// `(s, a)`. The result is read back as action-level values.
pub fn token_level_backup(
    spec: &TabularEnvSpec,
    q_last: &ActionLevelQ,
    pi: &impl Policy,
    pibar: &impl Policy,
    beta: f64,
    gamma: f64,
) -> Result<ActionLevelQ> {
    let params = BackupParams::new(beta, gamma);
    let actions = enumerate_fixed_length(spec.vocab_size, spec.action_len)?;
    let mut target = last_token_table(q_last, spec);
    for s in 0..spec.n_states {
        compose_within_action(
            &mut target,
            pi,
            pibar,
            &spec.encode_state(s),
            &actions,
            params,
        )?;
    }
    let mut out = ActionLevelQ::for_spec(spec);
    for s in 0..spec.n_states {
        for (a, action) in actions.iter().enumerate() {
            let next = spec.next_state(s, a);
            let tr = Transition {
                state: spec.encode_state(s),
                action: action.clone(),
                reward: spec.reward(s, a),
                next_state: spec.encode_state(next),
                done: spec.is_terminal(next),
            };
            let t = per_token_target(&tr, action.len(), pi, pibar, &target, params)?;
            out.set(s, a, t.target_value);
        }
    }
    Ok(out)
}

/// `max_s |E_{a~pi}[Q_token(s,a)] - E_{a~pi}[Q_action(s,a)]|`.
pub fn check_cross_action_identity(
    token_result: &ActionLevelQ,
    action_result: &ActionLevelQ,
    pi: &ActionPolicy,
) -> f64 {
    (0..pi.n_states)
        .map(|s| {
            let diff: f64 = pi
                .row(s)
                .iter()
                .zip(token_result.row(s).iter().zip(action_result.row(s)))
                .map(|(p, (t, a))| p * (t - a))
                .sum();
            diff.abs()
        })
        .fold(0.0, f64::max)
}

/// A strictly positive random distribution for every context reachable in
/// `spec`.
pub fn random_token_policy(spec: &TabularEnvSpec, rng: &mut SeededRng) -> PolicyTable {
    let mut pi = PolicyTable::new(Reference::uniform(spec.vocab_size));
    for s in 0..spec.n_states {
        let state = spec.encode_state(s);
        for len in 0..spec.action_len {
            for prefix in enumerate_fixed_length(spec.vocab_size, len).expect("tiny space") {
                let raw: Vec<f64> = (0..spec.vocab_size).map(|_| 0.05 + rng.uniform()).collect();
                let total: f64 = raw.iter().sum();
                pi.set_row(
                    Context::new(state.clone(), prefix),
                    raw.into_iter().map(|p| p / total).collect(),
                );
            }
        }
    }
    pi
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    fn bandit() -> TabularEnvSpec {
        TabularEnvSpec::bandit(2, 2, &[0.0, 0.5, 0.2, 1.0]).unwrap()
    }

    /// `beta * ln mean exp(r / beta)` computed directly.
    fn log_mean_exp(rewards: &[f64], beta: f64) -> f64 {
        let m = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean =
            rewards.iter().map(|r| ((r - m) / beta).exp()).sum::<f64>() / rewards.len() as f64;
        m + beta * mean.ln()
    }

    #[test]
    fn terminal_successors_back_up_to_reward() {
        let spec = bandit();
        let pi = ActionPolicy::uniform(&spec);
        let mut rng = seeded_rng(1);
        let q = ActionLevelQ::random(&spec, -1.0, 1.0, &mut rng);
        let out = action_soft_backup(&q, &pi, &pi, &spec, 1.0, 0.99).unwrap();
        for a in 0..4 {
            assert_eq!(out.get(0, a), spec.reward(0, a));
        }
    }

    #[test]
    fn zero_gamma_gives_reward_table() {
        let spec = TabularEnvSpec::random(4, 2, 2, 0.0, 3).unwrap();
        let mut rng = seeded_rng(2);
        let q = ActionLevelQ::random(&spec, -1.0, 1.0, &mut rng);
        let pi = ActionPolicy::from_token_policy(&random_token_policy(&spec, &mut rng), &spec);
        let out =
            action_soft_backup(&q, &pi, &ActionPolicy::uniform(&spec), &spec, 1.0, 0.0).unwrap();
        for s in 0..4 {
            for a in 0..4 {
                assert_eq!(out.get(s, a), spec.reward(s, a));
            }
        }
    }

    #[test]
    fn bandit_soft_optimum_is_log_mean_exp() {
        let spec = bandit();
        let pibar = ActionPolicy::uniform(&spec);
        let opt = soft_value_iteration(&spec, &pibar, 1.0, 0.99, 1e-13, 100).unwrap();
        let expect = log_mean_exp(&[0.0, 0.5, 0.2, 1.0], 1.0);
        assert!((expect - 0.499_017_054_841_272).abs() < 1e-12);
        assert!((opt.values[0] - expect).abs() < 1e-12, "{}", opt.values[0]);
    }

    #[test]
    fn bandit_greedy_limit() {
        let spec = bandit();
        let pibar = ActionPolicy::uniform(&spec);
        let opt = soft_value_iteration(&spec, &pibar, 1e-6, 0.99, 1e-13, 100).unwrap();
        assert!((opt.values[0] - 1.0).abs() < 1e-5);
        let row = opt.policy.row(0);
        let best = (0..4).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        assert_eq!(spec.action_tokens(best), TokenSeq::from(vec![1, 1]));
    }

    #[test]
    fn bandit_infinite_beta_is_reference() {
        let spec = bandit();
        let pibar = ActionPolicy::uniform(&spec);
        let opt = soft_value_iteration(&spec, &pibar, 1e6, 0.99, 1e-13, 100).unwrap();
        for p in opt.policy.row(0) {
            assert!((p - 0.25).abs() < 1e-6);
        }
    }

    #[test]
    fn value_iteration_contracts() {
        let spec = TabularEnvSpec::random(5, 3, 2, 0.0, 9).unwrap();
        let pibar = ActionPolicy::uniform(&spec);
        let opt = soft_value_iteration(&spec, &pibar, 0.5, 0.9, 1e-10, 10_000).unwrap();
        // eventually monotone: the second half of the deltas never increases
        let tail = &opt.deltas[opt.deltas.len() / 2..];
        assert!(tail.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9)));
    }

    #[test]
    fn undiscounted_loop_does_not_converge() {
        // every action returns to state 0 with reward 1
        let mut spec = TabularEnvSpec::random(1, 2, 1, 0.0, 1).unwrap();
        spec.rewards = vec![1.0, 1.0];
        let pibar = ActionPolicy::uniform(&spec);
        assert!(matches!(
            soft_value_iteration(&spec, &pibar, 1.0, 1.0, 1e-9, 50),
            Err(Error::NonConvergence { iterations: 50, .. })
        ));
    }

    #[test]
    fn within_identity_trivial_cases() {
        let spec = TabularEnvSpec::random(2, 3, 1, 0.0, 4).unwrap();
        let mut rng = seeded_rng(5);
        let pi = random_token_policy(&spec, &mut rng);
        let q = last_token_table(&ActionLevelQ::random(&spec, -1.0, 1.0, &mut rng), &spec);
        let s = spec.encode_state(0);
        let r =
            check_within_action_identity(&q, &pi, &Reference::uniform(3), &s, 0.7, 1, 1.0).unwrap();
        assert!(r < 1e-15, "{r}");

        let pibar = Reference::uniform(3);
        let zero = QTable::new(3);
        let r = check_within_action_identity(&zero, &pibar, &pibar, &s, 0.7, 3, 1.0).unwrap();
        assert!(r < 1e-15);
    }

    #[test]
    fn within_identity_random_instance() {
        let spec = TabularEnvSpec::random(3, 3, 2, 0.0, 6).unwrap();
        let mut rng = seeded_rng(7);
        let pi = random_token_policy(&spec, &mut rng);
        let q = last_token_table(&ActionLevelQ::random(&spec, -1.0, 1.0, &mut rng), &spec);
        for s in 0..3 {
            let r = check_within_action_identity(
                &q,
                &pi,
                &Reference::uniform(3),
                &spec.encode_state(s),
                0.7,
                2,
                1.0,
            )
            .unwrap();
            assert!(r < 1e-10, "{r}");
        }
    }

    #[test]
    fn discounting_inside_actions_breaks_the_identity() {
        let spec = TabularEnvSpec::random(2, 3, 2, 0.0, 8).unwrap();
        let mut rng = seeded_rng(9);
        let pi = random_token_policy(&spec, &mut rng);
        let q = last_token_table(&ActionLevelQ::random(&spec, 1.0, 2.0, &mut rng), &spec);
        let r = check_within_action_identity(
            &q,
            &pi,
            &Reference::uniform(3),
            &spec.encode_state(0),
            0.1,
            2,
            0.99,
        )
        .unwrap();
        assert!(r > 1e-3, "{r}");
    }

    #[test]
    fn cross_identity_trivial_cases() {
        let mut rng = seeded_rng(10);
        let spec = bandit();
        let pi = random_token_policy(&spec, &mut rng);
        let pibar = Reference::uniform(2);
        let q0 = ActionLevelQ::random(&spec, -1.0, 1.0, &mut rng);
        let pa = ActionPolicy::from_token_policy(&pi, &spec);
        let tok = token_level_backup(&spec, &q0, &pi, &pibar, 1.0, 0.9).unwrap();
        let act =
            action_soft_backup(&q0, &pa, &ActionPolicy::uniform(&spec), &spec, 1.0, 0.9).unwrap();
        assert_eq!(check_cross_action_identity(&tok, &act, &pa), 0.0);

        let spec = TabularEnvSpec::random(4, 2, 2, 0.3, 11).unwrap();
        let tok = token_level_backup(
            &spec,
            &ActionLevelQ::for_spec(&spec),
            &pi,
            &pibar,
            1.0,
            1e-300,
        )
        .unwrap();
        for s in 0..4 {
            for a in 0..4 {
                assert!((tok.get(s, a) - spec.reward(s, a)).abs() < 1e-250);
            }
        }
    }

    #[test]
    fn cross_identity_random_instance() {
        let mut rng = seeded_rng(12);
        let spec = TabularEnvSpec::random(5, 3, 3, 0.3, 13).unwrap();
        let pi = random_token_policy(&spec, &mut rng);
        let pibar = Reference::uniform(3);
        let q0 = ActionLevelQ::random(&spec, -1.0, 1.0, &mut rng);
        let pa = ActionPolicy::from_token_policy(&pi, &spec);
        for beta in [0.1, 1.0, 10.0] {
            let tok = token_level_backup(&spec, &q0, &pi, &pibar, beta, 0.9).unwrap();
            let act = action_soft_backup(&q0, &pa, &ActionPolicy::uniform(&spec), &spec, beta, 0.9)
                .unwrap();
            assert!(check_cross_action_identity(&tok, &act, &pa) < 1e-9);
            assert!(tok.sup_distance(&act) < 1e-9);
        }
    }
}
