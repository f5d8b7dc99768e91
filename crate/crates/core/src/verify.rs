//! Randomized identity checks against the enumeration oracle.
//!
//! Each check runs over random tabular instances and reports its worst
//! residual together with the instances that violated the tolerance, so a
//! failure can be replayed from the saved spec.

use std::fmt;

use crate::config::BackupParams;
use crate::env::TabularEnvSpec;
use crate::error::Result;
use crate::oracle::{
    action_soft_backup, check_cross_action_identity, check_within_action_identity,
    last_token_table, random_token_policy, soft_value_iteration, token_level_backup, ActionLevelQ,
    ActionPolicy,
};
use crate::policy::Reference;
use crate::rng::SeededRng;
use crate::trainers::{iterate_to_convergence, EtpoLearner};

pub const BETAS: [f64; 3] = [0.1, 1.0, 10.0];
pub const IDENTITY_TOL: f64 = 1e-9;
pub const FIXED_POINT_TOL: f64 = 1e-6;
/// Smallest residual that counts as a broken identity for the discounted
/// ablation.
pub const WITNESS_MIN: f64 = 1e-3;
pub const GAMMA: f64 = 0.9;
pub const DISC_GAMMA: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyConfig {
    pub instances: usize,
    pub seed: u64,
    /// Instances used for the fixed-point check, which is the slowest.
    pub fixed_point_instances: usize,
    /// Discount inside actions for the within-action check. Anything but 1
    /// reproduces the discounted ablation, which is expected to fail.
    pub within_discount: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            instances: 100,
            seed: 0,
            fixed_point_instances: 20,
            within_discount: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub spec: TabularEnvSpec,
    pub beta: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    /// Worst residual seen; for the witness, the smallest one.
    pub residual: f64,
    pub tol: f64,
    pub cases: usize,
    pub failures: Vec<Failure>,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        let (label, cmp) = if self.name == "disc_witness" {
            ("min_residual", ">")
        } else {
            ("max_residual", "<")
        };
        write!(
            f,
            "{verdict} {} {label}={:.3e} ({cmp} {:.0e}) cases={}",
            self.name, self.residual, self.tol, self.cases
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        let worst = self
            .checks
            .iter()
            .filter(|c| c.name != "disc_witness")
            .map(|c| c.residual)
            .fold(0.0, f64::max);
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        write!(f, "{verdict} max_residual={worst:.3e}")
    }
}

/// A random enumerable instance: up to 5 states, 2 or 3 action tokens,
/// actions of 1 to 3 tokens.
pub fn random_instance(rng: &mut SeededRng) -> TabularEnvSpec {
    let n_states = 1 + rng.below(5);
    let vocab_size = 2 + rng.below(2);
    let action_len = 1 + rng.below(3);
    TabularEnvSpec::random(n_states, vocab_size, action_len, 0.3, rng.next_u64())
        .expect("generated parameters are in range")
}

/// Like [`random_instance`] with at least two tokens per action.
pub fn random_multi_token_instance(rng: &mut SeededRng) -> TabularEnvSpec {
    let n_states = 1 + rng.below(5);
    let vocab_size = 2 + rng.below(2);
    let action_len = 2 + rng.below(2);
    TabularEnvSpec::random(n_states, vocab_size, action_len, 0.3, rng.next_u64())
        .expect("generated parameters are in range")
}

struct Tracker {
    result: CheckResult,
    worst_is_max: bool,
}

impl Tracker {
    fn new(name: &'static str, tol: f64, worst_is_max: bool) -> Self {
        Self {
            result: CheckResult {
                name,
                residual: if worst_is_max { 0.0 } else { f64::INFINITY },
                tol,
                cases: 0,
                failures: Vec::new(),
            },
            worst_is_max,
        }
    }

    fn record(&mut self, spec: &TabularEnvSpec, beta: f64, residual: f64) {
        let r = &mut self.result;
        r.cases += 1;
        let bad = if self.worst_is_max {
            r.residual = r.residual.max(residual);
            residual.is_nan() || residual >= r.tol
        } else {
            r.residual = r.residual.min(residual);
            residual.is_nan() || residual <= r.tol
        };
        if bad {
            r.failures.push(Failure {
                spec: spec.clone(),
                beta,
                residual,
            });
        }
    }
}

/// Within-action identity: composed first-token value versus enumerated
/// action-level value, for every state of every instance and each beta.
pub fn within_action_check(cfg: &VerifyConfig) -> Result<CheckResult> {
    let mut rng = SeededRng::new(cfg.seed);
    let mut t = Tracker::new("within_action", IDENTITY_TOL, true);
    for _ in 0..cfg.instances {
        let spec = random_instance(&mut rng);
        let pi = random_token_policy(&spec, &mut rng);
        let q = last_token_table(&ActionLevelQ::random(&spec, -1.0, 1.0, &mut rng), &spec);
        let pibar = Reference::uniform(spec.vocab_size);
        for beta in BETAS {
            let mut worst: f64 = 0.0;
            for s in 0..spec.n_states {
                let r = check_within_action_identity(
                    &q,
                    &pi,
                    &pibar,
                    &spec.encode_state(s),
                    beta,
                    spec.action_len,
                    cfg.within_discount,
                )?;
                worst = worst.max(r);
            }
            t.record(&spec, beta, worst);
        }
    }
    Ok(t.result)
}

/// Cross-action identity: one token-level backup through whole actions
/// versus one action-level backup under the same policy.
pub fn cross_action_check(cfg: &VerifyConfig) -> Result<CheckResult> {
    let mut rng = SeededRng::new(cfg.seed.wrapping_add(1));
    let mut t = Tracker::new("cross_action", IDENTITY_TOL, true);
    for _ in 0..cfg.instances {
        let spec = random_instance(&mut rng);
        let pi = random_token_policy(&spec, &mut rng);
        let pa = ActionPolicy::from_token_policy(&pi, &spec);
        let q0 = ActionLevelQ::random(&spec, -1.0, 1.0, &mut rng);
        let pibar = Reference::uniform(spec.vocab_size);
        let pibar_a = ActionPolicy::uniform(&spec);
        for beta in BETAS {
            let tok = token_level_backup(&spec, &q0, &pi, &pibar, beta, GAMMA)?;
            let act = action_soft_backup(&q0, &pa, &pibar_a, &spec, beta, GAMMA)?;
            t.record(&spec, beta, check_cross_action_identity(&tok, &act, &pa));
        }
    }
    Ok(t.result)
}

/// Sup-norm gap between converged exact tabular ETPO first-token values and
/// the action-level soft optimum, for one instance.
pub fn fixed_point_gap(spec: &TabularEnvSpec, params: BackupParams) -> Result<f64> {
    let mut learner = EtpoLearner::tabular(Reference::uniform(spec.vocab_size), params, 0.0);
    iterate_to_convergence(&mut learner, &spec.all_transitions(), 1e-12, 100_000)?;
    let opt = soft_value_iteration(
        spec,
        &ActionPolicy::uniform(spec),
        params.beta,
        params.gamma,
        1e-12,
        100_000,
    )?;
    let mut gap: f64 = 0.0;
    for s in 0..spec.n_states {
        let v = learner.first_token_value(&spec.encode_state(s))?;
        gap = gap.max((v - opt.values[s]).abs());
    }
    Ok(gap)
}

/// Fixed-point equivalence between exact tabular ETPO and soft value
/// iteration.
pub fn fixed_point_check(cfg: &VerifyConfig) -> Result<CheckResult> {
    let mut rng = SeededRng::new(cfg.seed.wrapping_add(2));
    let mut t = Tracker::new("fixed_point", FIXED_POINT_TOL, true);
    for _ in 0..cfg.fixed_point_instances {
        let spec = random_instance(&mut rng);
        for beta in BETAS {
            t.record(
                &spec,
                beta,
                fixed_point_gap(&spec, BackupParams::new(beta, GAMMA))?,
            );
        }
    }
    Ok(t.result)
}

/// The discounted ablation must break the within-action identity: Q values
/// in `[1, 2]`, `beta = 0.1`, discount 0.99 inside actions of length >= 2.
pub fn disc_witness_check(cfg: &VerifyConfig) -> Result<CheckResult> {
    let mut rng = SeededRng::new(cfg.seed.wrapping_add(3));
    let mut t = Tracker::new("disc_witness", WITNESS_MIN, false);
    let beta = 0.1;
    for _ in 0..cfg.instances {
        let spec = random_multi_token_instance(&mut rng);
        let pi = random_token_policy(&spec, &mut rng);
        let q = last_token_table(&ActionLevelQ::random(&spec, 1.0, 2.0, &mut rng), &spec);
        let pibar = Reference::uniform(spec.vocab_size);
        let mut worst = f64::INFINITY;
        for s in 0..spec.n_states {
            let r = check_within_action_identity(
                &q,
                &pi,
                &pibar,
                &spec.encode_state(s),
                beta,
                spec.action_len,
                DISC_GAMMA,
            )?;
            worst = worst.min(r);
        }
        t.record(&spec, beta, worst);
    }
    Ok(t.result)
}

/// Runs every check.
pub fn run_verify(cfg: &VerifyConfig) -> Result<VerifyReport> {
    Ok(VerifyReport {
        checks: vec![
            within_action_check(cfg)?,
            cross_action_check(cfg)?,
            fixed_point_check(cfg)?,
            disc_witness_check(cfg)?,
        ],
    })
}
