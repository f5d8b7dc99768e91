//! Action-level PPO with the KL penalty folded into the reward.
//!
//! The shaped reward is `r - beta ln(pi_old(a|s) / pibar(a|s))`. Every token
//! of an action is weighted by the same advantage `G_t - V(s_t)`.

use crate::error::{Error, Result};
use crate::policy::{
    token_probs, Context, FeatureMap, LogitTable, NetPolicy, Policy, Reference, ValueNet,
    ValueTable,
};
use crate::rng::SeededRng;
use crate::vocab::TokenSeq;

pub const CLIP_EPS: f64 = 0.2;
pub const VALUE_WEIGHT: f64 = 0.5;
pub const EPOCHS: usize = 4;

/// One step of an on-policy rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoStep {
    pub state: TokenSeq,
    pub action: TokenSeq,
    pub reward: f64,
    /// `pi_old(w_j | ...)` for each token, recorded at sampling time.
    pub old_token_probs: Vec<f64>,
    /// `ln pibar(a | s)`.
    pub ref_log_prob: f64,
}

impl PpoStep {
    pub fn shaped_reward(&self, beta: f64) -> f64 {
        let log_old: f64 = self.old_token_probs.iter().map(|p| p.ln()).sum();
        self.reward - beta * (log_old - self.ref_log_prob)
    }
}

/// A complete episode.
pub type Episode = Vec<PpoStep>;

/// `min(ratio A, clip(ratio) A)` and its derivative in `ratio`. The
/// derivative is zero whenever the clipped branch is the active one.
pub fn clipped_surrogate(ratio: f64, advantage: f64, eps: f64) -> (f64, f64) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * advantage;
    if unclipped <= clipped {
        (unclipped, advantage)
    } else {
        (clipped, 0.0)
    }
}

/// Discounted returns of shaped rewards, one per step.
pub fn shaped_returns(episode: &[PpoStep], beta: f64, gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; episode.len()];
    let mut g = 0.0;
    for (t, step) in episode.iter().enumerate().rev() {
        g = step.shaped_reward(beta) + gamma * g;
        out[t] = g;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
}

#[derive(Debug, Clone)]
pub enum PpoModel {
    Tabular {
        policy: LogitTable,
        value: ValueTable,
    },
    Parametric {
        policy: NetPolicy,
        value: ValueNet,
    },
}

#[derive(Debug, Clone)]
pub struct PpoLearner {
    pub model: PpoModel,
    reference: Reference,
    pub beta: f64,
    pub gamma: f64,
    pub lr: f64,
}

impl PpoLearner {
    pub fn tabular(reference: Reference, beta: f64, gamma: f64, lr: f64) -> Self {
        Self {
            model: PpoModel::Tabular {
                policy: LogitTable::new(reference.clone()),
                value: ValueTable::new(),
            },
            reference,
            beta,
            gamma,
            lr,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn parametric(
        reference: Reference,
        features: FeatureMap,
        hidden: usize,
        beta: f64,
        gamma: f64,
        lr: f64,
        rng: &mut SeededRng,
    ) -> Self {
        let policy = NetPolicy::new(features, hidden, reference.clone(), rng);
        let value = ValueNet::new(features.max_state_len, features.vocab_size, hidden, rng);
        Self {
            model: PpoModel::Parametric { policy, value },
            reference,
            beta,
            gamma,
            lr,
        }
    }

    pub fn reference(&self) -> &Reference {
        &self.reference
    }

    pub fn value(&self, state: &TokenSeq) -> f64 {
        match &self.model {
            PpoModel::Tabular { value, .. } => value.value(state),
            PpoModel::Parametric { value, .. } => value.value(state),
        }
    }

    /// Records a freshly sampled step with the current policy's probabilities.
    pub fn record(&self, state: TokenSeq, action: TokenSeq, reward: f64) -> PpoStep {
        let old_token_probs = token_probs(self, &state, &action);
        let ref_log_prob = token_probs(&self.reference, &state, &action)
            .iter()
            .map(|p| p.ln())
            .sum();
        PpoStep {
            state,
            action,
            reward,
            old_token_probs,
            ref_log_prob,
        }
    }

    /// `EPOCHS` full-batch passes over the rollout. Returns the losses of the
    /// first pass, i.e. before any parameter change.
    pub fn update(&mut self, episodes: &[Episode]) -> Result<PpoStats> {
        let mut steps = Vec::new();
        for ep in episodes {
            let returns = shaped_returns(ep, self.beta, self.gamma);
            steps.extend(ep.iter().zip(returns));
        }
        if steps.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let advantages: Vec<f64> = steps
            .iter()
            .map(|(s, g)| g - self.value(&s.state))
            .collect();
        let n_tokens: usize = steps.iter().map(|(s, _)| s.action.len()).sum();
        let mut first = None;
        for _ in 0..EPOCHS {
            let stats = self.epoch(&steps, &advantages, n_tokens as f64);
            first.get_or_insert(stats);
        }
        Ok(first.expect("EPOCHS > 0"))
    }

    fn epoch(&mut self, steps: &[(&PpoStep, f64)], advantages: &[f64], n_tokens: f64) -> PpoStats {
        let n_steps = steps.len() as f64;
        let lr = self.lr;
        let mut policy_loss = 0.0;
        let mut value_loss = 0.0;
        match &mut self.model {
            PpoModel::Tabular { policy, value } => {
                let mut grads: Vec<(Context, Vec<f64>)> = Vec::new();
                for ((step, _), &adv) in steps.iter().zip(advantages) {
                    let mut ctx = Context::root(&step.state);
                    for (j, &w) in step.action.iter().enumerate() {
                        let pi = policy.probs(&ctx);
                        let (loss, dz) =
                            token_surrogate_grad(&pi, w, step.old_token_probs[j], adv, n_tokens);
                        policy_loss += loss;
                        grads.push((ctx.clone(), dz));
                        ctx.prefix.push(w);
                    }
                }
                for (ctx, dz) in &grads {
                    policy.descend(ctx, dz, lr);
                }
                let mut vgrads = Vec::new();
                for (step, g) in steps {
                    let err = value.value(&step.state) - g;
                    value_loss += VALUE_WEIGHT * err * err / n_steps;
                    vgrads.push((&step.state, 2.0 * VALUE_WEIGHT * err / n_steps));
                }
                for (s, g) in vgrads {
                    value.descend(s, g, lr);
                }
            }
            PpoModel::Parametric { policy, value } => {
                let mut grad = vec![0.0; policy.net.params().len()];
                for ((step, _), &adv) in steps.iter().zip(advantages) {
                    let mut ctx = Context::root(&step.state);
                    for (j, &w) in step.action.iter().enumerate() {
                        let (cache, pi) = policy.forward(&ctx);
                        let (loss, dz) =
                            token_surrogate_grad(&pi, w, step.old_token_probs[j], adv, n_tokens);
                        policy_loss += loss;
                        policy.net.backward(&cache, &dz, &mut grad);
                        ctx.prefix.push(w);
                    }
                }
                policy.net.descend(&grad, lr);
                let mut grad = vec![0.0; value.net.params().len()];
                for (step, g) in steps {
                    let cache = value.forward(&step.state);
                    let err = cache.output[0] - g;
                    value_loss += VALUE_WEIGHT * err * err / n_steps;
                    value
                        .net
                        .backward(&cache, &[2.0 * VALUE_WEIGHT * err / n_steps], &mut grad);
                }
                value.net.descend(&grad, lr);
            }
        }
        PpoStats {
            policy_loss,
            value_loss,
        }
    }
}

/// Loss contribution `-surrogate / n` of one token and its gradient with
/// respect to the softmax logits.
fn token_surrogate_grad(
    pi: &[f64],
    token: usize,
    old_prob: f64,
    adv: f64,
    n: f64,
) -> (f64, Vec<f64>) {
    let ratio = pi[token] / old_prob;
    let (surr, dsurr) = clipped_surrogate(ratio, adv, CLIP_EPS);
    // d ratio / d z_k = ratio (1[k = token] - pi_k)
    let dz = pi
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let onehot = if k == token { 1.0 } else { 0.0 };
            -dsurr * ratio * (onehot - p) / n
        })
        .collect();
    (-surr / n, dz)
}

impl Policy for PpoLearner {
    fn n_tokens(&self) -> usize {
        self.reference.n_tokens()
    }

    fn probs(&self, ctx: &Context) -> Vec<f64> {
        match &self.model {
            PpoModel::Tabular { policy, .. } => policy.probs(ctx),
            PpoModel::Parametric { policy, .. } => policy.probs(ctx),
        }
    }
}
