use std::collections::HashMap;

use crate::vocab::TokenSeq;

use super::{softmax, Context, Policy, Reference, SoftQ};

/// Tabular policy; contexts without a stored row follow the reference.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    reference: Reference,
    rows: HashMap<Context, Vec<f64>>,
}

impl PolicyTable {
    pub fn new(reference: Reference) -> Self {
        Self {
            reference,
            rows: HashMap::new(),
        }
    }

    pub fn reference(&self) -> &Reference {
        &self.reference
    }

    /// Stores a row. Panics if it is not a probability vector of the right size.
    pub fn set_row(&mut self, ctx: Context, row: Vec<f64>) {
        assert_eq!(row.len(), self.reference.n_tokens(), "row size");
        assert!(
            row.iter().all(|&p| p >= 0.0) && (row.iter().sum::<f64>() - 1.0).abs() < 1e-9,
            "not a distribution: {row:?}"
        );
        self.rows.insert(ctx, row);
    }

    pub fn stored_row(&self, ctx: &Context) -> Option<&[f64]> {
        self.rows.get(ctx).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Stored rows in context order.
    pub fn rows(&self) -> Vec<(&Context, &Vec<f64>)> {
        let mut rows: Vec<_> = self.rows.iter().collect();
        rows.sort_by(|a, b| a.0.cmp(b.0));
        rows
    }
}

impl Policy for PolicyTable {
    fn n_tokens(&self) -> usize {
        self.reference.n_tokens()
    }

    fn probs(&self, ctx: &Context) -> Vec<f64> {
        match self.rows.get(ctx) {
            Some(row) => row.clone(),
            None => self.reference.probs(ctx),
        }
    }
}

/// Tabular token-level Q; unseen entries read as 0.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    n_tokens: usize,
    rows: HashMap<Context, Vec<f64>>,
}

impl QTable {
    pub fn new(n_tokens: usize) -> Self {
        Self {
            n_tokens,
            rows: HashMap::new(),
        }
    }

    pub fn set(&mut self, ctx: Context, token: usize, value: f64) {
        debug_assert!(value.is_finite());
        self.row_mut(ctx)[token] = value;
    }

    pub fn row_mut(&mut self, ctx: Context) -> &mut Vec<f64> {
        let n = self.n_tokens;
        self.rows.entry(ctx).or_insert_with(|| vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> Vec<(&Context, &Vec<f64>)> {
        let mut rows: Vec<_> = self.rows.iter().collect();
        rows.sort_by(|a, b| a.0.cmp(b.0));
        rows
    }

    pub fn contexts(&self) -> impl Iterator<Item = &Context> {
        self.rows.keys()
    }

    /// `self <- lambda * self + (1 - lambda) * online` over the union of keys.
    pub fn polyak_update(&mut self, online: &QTable, lambda: f64) {
        if lambda == 0.0 {
            self.clone_from(online);
            return;
        }
        if lambda == 1.0 {
            return;
        }
        for row in self.rows.values_mut() {
            row.iter_mut().for_each(|v| *v *= lambda);
        }
        for (ctx, src) in &online.rows {
            let dst = self.row_mut(ctx.clone());
            for (d, s) in dst.iter_mut().zip(src) {
                *d += (1.0 - lambda) * s;
            }
        }
    }
}

impl SoftQ for QTable {
    fn n_tokens(&self) -> usize {
        self.n_tokens
    }

    fn q_values(&self, ctx: &Context) -> Vec<f64> {
        self.rows
            .get(ctx)
            .cloned()
            .unwrap_or_else(|| vec![0.0; self.n_tokens])
    }

    fn q_value(&self, ctx: &Context, token: usize) -> f64 {
        self.rows.get(ctx).map_or(0.0, |r| r[token])
    }
}

/// Softmax policy with one free logit row per context, initialized to the
/// log-reference so that an untouched table equals the reference.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitTable {
    reference: Reference,
    rows: HashMap<Context, Vec<f64>>,
}

impl LogitTable {
    pub fn new(reference: Reference) -> Self {
        Self {
            reference,
            rows: HashMap::new(),
        }
    }

    pub fn logits(&self, ctx: &Context) -> Vec<f64> {
        match self.rows.get(ctx) {
            Some(row) => row.clone(),
            None => self.reference.probs(ctx).iter().map(|p| p.ln()).collect(),
        }
    }

    /// `logits <- logits - lr * grad` at `ctx`.
    pub fn descend(&mut self, ctx: &Context, grad: &[f64], lr: f64) {
        if !self.rows.contains_key(ctx) {
            let init = self.logits(ctx);
            self.rows.insert(ctx.clone(), init);
        }
        let row = self.rows.get_mut(ctx).expect("row inserted above");
        for (z, g) in row.iter_mut().zip(grad) {
            *z -= lr * g;
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

impl Policy for LogitTable {
    fn n_tokens(&self) -> usize {
        self.reference.n_tokens()
    }

    fn probs(&self, ctx: &Context) -> Vec<f64> {
        match self.rows.get(ctx) {
            Some(row) => softmax(row),
            None => self.reference.probs(ctx),
        }
    }
}

/// Tabular state-value baseline; unseen states read as 0.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValueTable {
    values: HashMap<TokenSeq, f64>,
}

impl ValueTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, state: &TokenSeq) -> f64 {
        self.values.get(state).copied().unwrap_or(0.0)
    }

    pub fn descend(&mut self, state: &TokenSeq, grad: f64, lr: f64) {
        *self.values.entry(state.clone()).or_insert(0.0) -= lr * grad;
    }
}
