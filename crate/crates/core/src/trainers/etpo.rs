//! The token-level soft Q learner: per-token targets from a target network,
//! a Q regression step, a policy step toward `pi*_Q`, then Polyak averaging.

use std::collections::HashMap;

use crate::config::BackupParams;
use crate::error::{Error, Result};
use crate::policy::{
    Checkpoint, Context, FeatureMap, NetPolicy, Policy, PolicyTable, QNet, QTable, Reference, SoftQ,
};
use crate::rng::SeededRng;
use crate::soft_bellman::{
    optimal_soft_policy, policy_kl_logit_grad, policy_kl_objective, transition_targets,
};
use crate::transition::Transition;
use crate::vocab::{TokenId, TokenSeq, Vocabulary};

/// Losses measured before an update was applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    /// Mean squared error between online Q and the per-token targets.
    pub q_loss: f64,
    /// Mean `KL(pi || pi*_Q)` over the token contexts in the batch.
    pub policy_objective: f64,
}

#[derive(Debug, Clone)]
pub enum EtpoModel {
    /// Exact assignment: `Q <- target`, `pi <- pi*_Q` at every touched context.
    Tabular {
        policy: PolicyTable,
        q: QTable,
        q_target: QTable,
    },
    /// One gradient step per update on each of Q and the policy.
    Parametric {
        policy: NetPolicy,
        q: QNet,
        q_target: QNet,
        lr: f64,
    },
}

#[derive(Debug, Clone)]
pub struct EtpoLearner {
    pub model: EtpoModel,
    reference: Reference,
    pub params: BackupParams,
    /// Target-network retention `lambda` in `target <- lambda target + (1 - lambda) online`.
    pub polyak: f64,
}

/// Read-only view of either Q representation.
#[derive(Debug, Clone, Copy)]
pub enum QView<'a> {
    Table(&'a QTable),
    Net(&'a QNet),
}

impl SoftQ for QView<'_> {
    fn n_tokens(&self) -> usize {
        match self {
            QView::Table(q) => q.n_tokens(),
            QView::Net(q) => q.n_tokens(),
        }
    }

    fn q_values(&self, ctx: &Context) -> Vec<f64> {
        match self {
            QView::Table(q) => q.q_values(ctx),
            QView::Net(q) => q.q_values(ctx),
        }
    }

    fn q_value(&self, ctx: &Context, token: TokenId) -> f64 {
        match self {
            QView::Table(q) => q.q_value(ctx, token),
            QView::Net(q) => q.q_values(ctx)[token],
        }
    }
}

impl EtpoLearner {
    /// Tabular learner; policy starts at the reference and Q at zero.
    pub fn tabular(reference: Reference, params: BackupParams, polyak: f64) -> Self {
        let n = reference.n_tokens();
        Self {
            model: EtpoModel::Tabular {
                policy: PolicyTable::new(reference.clone()),
                q: QTable::new(n),
                q_target: QTable::new(n),
            },
            reference,
            params,
            polyak,
        }
    }

    /// Network learner. The target Q starts as a copy of the online Q.
    pub fn parametric(
        reference: Reference,
        features: FeatureMap,
        hidden: usize,
        params: BackupParams,
        polyak: f64,
        lr: f64,
        rng: &mut SeededRng,
    ) -> Self {
        let policy = NetPolicy::new(features, hidden, reference.clone(), rng);
        let q = QNet::new(features, hidden, reference.n_tokens(), rng);
        Self {
            model: EtpoModel::Parametric {
                policy,
                q_target: q.clone(),
                q,
                lr,
            },
            reference,
            params,
            polyak,
        }
    }

    pub fn reference(&self) -> &Reference {
        &self.reference
    }

    pub fn q_online(&self) -> QView<'_> {
        match &self.model {
            EtpoModel::Tabular { q, .. } => QView::Table(q),
            EtpoModel::Parametric { q, .. } => QView::Net(q),
        }
    }

    pub fn q_target(&self) -> QView<'_> {
        match &self.model {
            EtpoModel::Tabular { q_target, .. } => QView::Table(q_target),
            EtpoModel::Parametric { q_target, .. } => QView::Net(q_target),
        }
    }

    /// Soft value of the first token at `state` under the current policy and
    /// online Q.
    pub fn first_token_value(&self, state: &TokenSeq) -> Result<f64> {
        crate::soft_bellman::soft_state_value(
            self,
            &self.reference,
            &self.q_online(),
            &Context::root(state),
            self.params.beta,
        )
    }

    /// One update on `batch`. Returns the losses before the update.
    pub fn update(&mut self, batch: &[Transition]) -> Result<UpdateStats> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let targets = self.batch_targets(batch)?;
        let stats = self.pre_update_stats(&targets)?;
        let beta = self.params.beta;
        let reference = &self.reference;
        match &mut self.model {
            EtpoModel::Tabular {
                policy,
                q,
                q_target,
            } => {
                // duplicates of one (context, token) get their mean target,
                // the minimizer of the squared error
                let mut merged: HashMap<(&Context, TokenId), (f64, usize)> = HashMap::new();
                for (ctx, w, t) in &targets {
                    let e = merged.entry((ctx, *w)).or_insert((0.0, 0));
                    e.0 += t;
                    e.1 += 1;
                }
                for ((ctx, w), (sum, n)) in &merged {
                    q.set((*ctx).clone(), *w, sum / *n as f64);
                }
                let touched: std::collections::BTreeSet<&Context> =
                    merged.keys().map(|(ctx, _)| *ctx).collect();
                for ctx in touched {
                    let row = optimal_soft_policy(&reference.probs(ctx), &q.q_values(ctx), beta);
                    policy.set_row(ctx.clone(), row);
                }
                q_target.polyak_update(q, self.polyak);
            }
            EtpoModel::Parametric {
                policy,
                q,
                q_target,
                lr,
            } => {
                let n = targets.len() as f64;
                let mut grad = vec![0.0; q.net.params().len()];
                for (ctx, w, t) in &targets {
                    let cache = q.forward(ctx);
                    let mut dout = vec![0.0; cache.output.len()];
                    dout[*w] = 2.0 * (cache.output[*w] - t) / n;
                    q.net.backward(&cache, &dout, &mut grad);
                }
                q.net.descend(&grad, *lr);

                let mut grad = vec![0.0; policy.net.params().len()];
                for (ctx, _, _) in &targets {
                    let (cache, pi) = policy.forward(ctx);
                    let dz: Vec<f64> =
                        policy_kl_logit_grad(&pi, &reference.probs(ctx), &q.q_values(ctx), beta)
                            .into_iter()
                            .map(|g| g / n)
                            .collect();
                    policy.net.backward(&cache, &dz, &mut grad);
                }
                policy.net.descend(&grad, *lr);
                q_target.net.polyak_update(&q.net, self.polyak);
            }
        }
        Ok(stats)
    }

    /// `(context, token, target)` for every token of every transition,
    /// computed with the target Q and the current policy.
    pub fn batch_targets(&self, batch: &[Transition]) -> Result<Vec<(Context, TokenId, f64)>> {
        let q_target = self.q_target();
        let mut out = Vec::new();
        for tr in batch {
            for t in transition_targets(tr, self, &self.reference, &q_target, self.params)? {
                out.push((t.ctx, t.token, t.target_value));
            }
        }
        Ok(out)
    }

    fn pre_update_stats(&self, targets: &[(Context, TokenId, f64)]) -> Result<UpdateStats> {
        let q = self.q_online();
        let n = targets.len() as f64;
        let mut q_loss = 0.0;
        let mut objective = 0.0;
        for (ctx, w, t) in targets {
            let qs = q.q_values(ctx);
            q_loss += (qs[*w] - t).powi(2);
            objective += policy_kl_objective(
                &self.probs(ctx),
                &self.reference.probs(ctx),
                &qs,
                self.params.beta,
            )?;
        }
        Ok(UpdateStats {
            q_loss: q_loss / n,
            policy_objective: objective / n,
        })
    }

    /// Writes the policy, online Q and target Q.
    pub fn checkpoint(&self, vocab: &Vocabulary, env_steps: u64) -> Checkpoint {
        let mut ck = Checkpoint::new(vocab, env_steps);
        match &self.model {
            EtpoModel::Tabular {
                policy,
                q,
                q_target,
            } => {
                ck.add_policy("policy", policy);
                ck.add_q("q", q);
                ck.add_q("q_target", q_target);
            }
            EtpoModel::Parametric {
                policy,
                q,
                q_target,
                ..
            } => {
                ck.add_net("policy", &policy.net);
                ck.add_net("q", &q.net);
                ck.add_net("q_target", &q_target.net);
            }
        }
        ck
    }

    /// Loads parameters written by [`EtpoLearner::checkpoint`] into a learner
    /// of the same mode and shape.
    pub fn restore(&mut self, ck: &Checkpoint) -> Result<()> {
        match &mut self.model {
            EtpoModel::Tabular {
                policy,
                q,
                q_target,
            } => {
                *policy = ck.policy_table("policy", self.reference.clone())?;
                *q = ck.q_table("q")?;
                *q_target = ck.q_table("q_target")?;
            }
            EtpoModel::Parametric {
                policy,
                q,
                q_target,
                ..
            } => {
                for (name, net) in [
                    ("policy", &mut policy.net),
                    ("q", &mut q.net),
                    ("q_target", &mut q_target.net),
                ] {
                    let loaded = ck.net(name)?;
                    if loaded.shape() != net.shape() {
                        return Err(Error::Checkpoint(format!("section {name}: shape mismatch")));
                    }
                    *net = loaded;
                }
            }
        }
        Ok(())
    }
}

impl Policy for EtpoLearner {
    fn n_tokens(&self) -> usize {
        self.reference.n_tokens()
    }

    fn probs(&self, ctx: &Context) -> Vec<f64> {
        match &self.model {
            EtpoModel::Tabular { policy, .. } => policy.probs(ctx),
            EtpoModel::Parametric { policy, .. } => policy.probs(ctx),
        }
    }
}

/// Runs exact tabular sweeps over `batch` (typically every transition of an
/// enumerable environment) until the largest change of any first-token soft
/// value and Q entry drops below `tol`. Returns the number of sweeps.
pub fn iterate_to_convergence(
    learner: &mut EtpoLearner,
    batch: &[Transition],
    tol: f64,
    max_sweeps: usize,
) -> Result<usize> {
    let mut prev: Option<Vec<f64>> = None;
    let mut last_delta = f64::INFINITY;
    for sweep in 1..=max_sweeps {
        learner.update(batch)?;
        let q = learner.q_online();
        let snapshot: Vec<f64> = batch
            .iter()
            .flat_map(|tr| (1..=tr.action.len()).map(move |j| (tr, j)))
            .map(|(tr, j)| {
                q.q_value(
                    &Context::before_token(&tr.state, &tr.action, j),
                    tr.action[j - 1],
                )
            })
            .collect();
        if let Some(p) = &prev {
            last_delta = p
                .iter()
                .zip(&snapshot)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if last_delta < tol {
                return Ok(sweep);
            }
        }
        prev = Some(snapshot);
    }
    Err(Error::NonConvergence {
        iterations: max_sweeps,
        delta: last_delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::TabularEnvSpec;
    use crate::oracle::{soft_value_iteration, ActionPolicy};
    use crate::rng::seeded_rng;

    fn transition(state: usize, action: Vec<usize>, reward: f64, done: bool) -> Transition {
        Transition {
            state: TokenSeq::from(vec![10 + state]),
            action: TokenSeq::from(action),
            reward,
            next_state: TokenSeq::from(vec![11 + state]),
            done,
        }
    }

    #[test]
    fn terminal_single_token_target_is_assigned() {
        let mut l =
            EtpoLearner::tabular(Reference::uniform(2), BackupParams::new(1.0, 0.99), 0.995);
        let tr = transition(0, vec![1], 0.8, true);
        let stats = l.update(std::slice::from_ref(&tr)).unwrap();
        assert!((stats.q_loss - 0.64).abs() < 1e-12);
        assert_eq!(l.q_online().q_value(&Context::root(&tr.state), 1), 0.8);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let mut l = EtpoLearner::tabular(Reference::uniform(2), BackupParams::new(1.0, 0.99), 0.5);
        assert!(matches!(l.update(&[]), Err(Error::EmptyBatch)));
    }

    #[test]
    fn tabular_policy_rows_are_soft_optimal_after_update() {
        let spec = TabularEnvSpec::random(3, 3, 2, 0.3, 4).unwrap();
        let mut l = EtpoLearner::tabular(Reference::uniform(3), BackupParams::new(0.5, 0.9), 0.3);
        let batch = spec.all_transitions();
        for _ in 0..5 {
            l.update(&batch).unwrap();
            let EtpoModel::Tabular { policy, q, .. } = &l.model else {
                unreachable!()
            };
            for (ctx, row) in policy.rows() {
                assert_eq!(
                    row,
                    &optimal_soft_policy(&[1.0 / 3.0; 3], &q.q_values(ctx), 0.5)
                );
            }
        }
    }

    #[test]
    fn reference_is_untouched_by_updates() {
        let spec = TabularEnvSpec::random(3, 2, 2, 0.3, 5).unwrap();
        let mut rng = seeded_rng(1);
        let features = FeatureMap {
            vocab_size: 5,
            max_state_len: 1,
            max_prefix_len: 2,
        };
        let mut l = EtpoLearner::parametric(
            Reference::uniform(2),
            features,
            8,
            BackupParams::new(1.0, 0.9),
            0.9,
            0.05,
            &mut rng,
        );
        let before = l.reference().clone();
        for _ in 0..20 {
            l.update(&spec.all_transitions()).unwrap();
        }
        assert_eq!(&before, l.reference());
    }

    #[test]
    fn exact_sweeps_reach_the_bandit_optimum() {
        let spec = TabularEnvSpec::bandit(2, 2, &[0.0, 0.5, 0.2, 1.0]).unwrap();
        let mut l = EtpoLearner::tabular(Reference::uniform(2), BackupParams::new(1.0, 0.99), 0.0);
        iterate_to_convergence(&mut l, &spec.all_transitions(), 1e-13, 100).unwrap();
        let opt = soft_value_iteration(&spec, &ActionPolicy::uniform(&spec), 1.0, 0.99, 1e-13, 100)
            .unwrap();
        let v = l.first_token_value(&spec.encode_state(0)).unwrap();
        assert!(
            (v - opt.values[0]).abs() < 1e-12,
            "{v} vs {}",
            opt.values[0]
        );
    }

    #[test]
    fn kl_to_reference_shrinks_with_beta() {
        let spec = TabularEnvSpec::bandit(2, 2, &[0.0, 0.5, 0.2, 1.0]).unwrap();
        let root = Context::root(&spec.encode_state(0));
        let mut kls = Vec::new();
        for beta in [0.1, 1.0, 10.0] {
            let mut l =
                EtpoLearner::tabular(Reference::uniform(2), BackupParams::new(beta, 0.99), 0.0);
            iterate_to_convergence(&mut l, &spec.all_transitions(), 1e-13, 100).unwrap();
            kls.push(crate::soft_bellman::kl_term(&l, l.reference(), &root).unwrap());
        }
        assert!(kls[0] >= kls[1] && kls[1] >= kls[2], "{kls:?}");
    }

    #[test]
    fn parametric_q_loss_descends_on_fixed_buffer() {
        let spec = TabularEnvSpec::random(4, 2, 2, 0.3, 6).unwrap();
        let buffer: Vec<Transition> = spec.all_transitions().into_iter().take(10).collect();
        let mut rng = seeded_rng(2);
        let features = FeatureMap {
            vocab_size: 6,
            max_state_len: 1,
            max_prefix_len: 2,
        };
        let mut l = EtpoLearner::parametric(
            Reference::uniform(2),
            features,
            16,
            BackupParams::new(1.0, 0.9),
            0.99,
            0.05,
            &mut rng,
        );
        let first = l.update(&buffer).unwrap().q_loss;
        let mut last = first;
        for _ in 0..200 {
            last = l.update(&buffer).unwrap().q_loss;
        }
        assert!(last < first, "{last} !< {first}");
    }

    #[test]
    fn checkpoint_restores_tabular_and_parametric() {
        let spec = TabularEnvSpec::random(3, 2, 2, 0.3, 7).unwrap();
        let vocab = spec.vocabulary();
        let mut l = EtpoLearner::tabular(Reference::uniform(2), BackupParams::new(1.0, 0.9), 0.5);
        l.update(&spec.all_transitions()).unwrap();
        let ck = Checkpoint::from_text(&l.checkpoint(&vocab, 7).to_text()).unwrap();
        let mut fresh =
            EtpoLearner::tabular(Reference::uniform(2), BackupParams::new(1.0, 0.9), 0.5);
        fresh.restore(&ck).unwrap();
        let s = spec.encode_state(0);
        assert_eq!(
            fresh.first_token_value(&s).unwrap(),
            l.first_token_value(&s).unwrap()
        );

        let features = FeatureMap {
            vocab_size: 5,
            max_state_len: 1,
            max_prefix_len: 2,
        };
        let mk = |seed| {
            EtpoLearner::parametric(
                Reference::uniform(2),
                features,
                4,
                BackupParams::new(1.0, 0.9),
                0.5,
                0.1,
                &mut seeded_rng(seed),
            )
        };
        let mut p = mk(1);
        p.update(&spec.all_transitions()).unwrap();
        let ck = Checkpoint::from_text(&p.checkpoint(&vocab, 1).to_text()).unwrap();
        let mut q = mk(2);
        q.restore(&ck).unwrap();
        assert_eq!(
            q.first_token_value(&s).unwrap(),
            p.first_token_value(&s).unwrap()
        );
        assert!(fresh.restore(&ck).is_err());
    }
}
