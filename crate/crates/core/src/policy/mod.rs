//! Next-token policies and token-level soft Q-functions.
//!
//! Everything here is keyed by a [`Context`]: the environment state plus the
//! tokens of the current action emitted so far. Tabular forms store one row
//! per context; parametric forms compute rows from a fixed feature encoding.

mod checkpoint;
mod net;
mod reference;
mod table;

pub use checkpoint::{Checkpoint, Section};
pub use net::{
    net_backward, FeatureMap, ForwardCache, NetPolicy, NetShape, ParametricNet, QNet, ValueNet,
};
pub use reference::{GrammarPrior, Reference};
pub use table::{LogitTable, PolicyTable, QTable, ValueTable};

use crate::rng::SeededRng;
use crate::vocab::{TokenId, TokenSeq};

/// A textual state together with the partial action generated so far.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Context {
    pub state: TokenSeq,
    pub prefix: TokenSeq,
}

impl Context {
    pub fn new(state: TokenSeq, prefix: TokenSeq) -> Self {
        Self { state, prefix }
    }

    /// Context at the start of an action.
    pub fn root(state: &TokenSeq) -> Self {
        Self::new(state.clone(), TokenSeq::empty())
    }

    /// Context before the `j`-th token (1-based) of `action`.
    pub fn before_token(state: &TokenSeq, action: &TokenSeq, j: usize) -> Self {
        Self::new(state.clone(), action.prefix(j - 1))
    }
}

/// A conditional distribution over action tokens.
pub trait Policy {
    fn n_tokens(&self) -> usize;

    fn probs(&self, ctx: &Context) -> Vec<f64>;
}

impl<P: Policy + ?Sized> Policy for &P {
    fn n_tokens(&self) -> usize {
        (**self).n_tokens()
    }

    fn probs(&self, ctx: &Context) -> Vec<f64> {
        (**self).probs(ctx)
    }
}

/// A token-level soft Q-function.
pub trait SoftQ {
    fn n_tokens(&self) -> usize;

    fn q_values(&self, ctx: &Context) -> Vec<f64>;

    fn q_value(&self, ctx: &Context, token: TokenId) -> f64 {
        self.q_values(ctx)[token]
    }
}

impl<Q: SoftQ + ?Sized> SoftQ for &Q {
    fn n_tokens(&self) -> usize {
        (**self).n_tokens()
    }

    fn q_values(&self, ctx: &Context) -> Vec<f64> {
        (**self).q_values(ctx)
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    out
}

/// Samples an action token by token until EOS or `max_len` tokens.
pub fn sample_action(
    policy: &impl Policy,
    state: &TokenSeq,
    max_len: usize,
    eos: Option<TokenId>,
    rng: &mut SeededRng,
) -> TokenSeq {
    let mut ctx = Context::root(state);
    loop {
        let w = rng.categorical(&policy.probs(&ctx));
        ctx.prefix.push(w);
        if Some(w) == eos || ctx.prefix.len() >= max_len {
            return ctx.prefix;
        }
    }
}

/// Probability of a whole action as the product of its token conditionals.
pub fn action_prob(policy: &impl Policy, state: &TokenSeq, action: &TokenSeq) -> f64 {
    token_probs(policy, state, action).iter().product()
}

/// `pi(w_j | state, w_1..w_{j-1})` for each token of `action`.
pub fn token_probs(policy: &impl Policy, state: &TokenSeq, action: &TokenSeq) -> Vec<f64> {
    let mut ctx = Context::root(state);
    let mut out = Vec::with_capacity(action.len());
    for &w in action.iter() {
        out.push(policy.probs(&ctx)[w]);
        ctx.prefix.push(w);
    }
    out
}
