use crate::vocab::TokenId;

use super::{Context, Policy};

/// The frozen reference policy every learner is anchored to.
#[derive(Debug, Clone, PartialEq)]
pub enum Reference {
    Uniform { n_tokens: usize },
    Grammar(GrammarPrior),
}

impl Reference {
    pub fn uniform(n_tokens: usize) -> Self {
        Reference::Uniform { n_tokens }
    }
}

impl Policy for Reference {
    fn n_tokens(&self) -> usize {
        match self {
            Reference::Uniform { n_tokens } => *n_tokens,
            Reference::Grammar(g) => g.n_tokens,
        }
    }

    fn probs(&self, ctx: &Context) -> Vec<f64> {
        match self {
            Reference::Uniform { n_tokens } => vec![1.0 / *n_tokens as f64; *n_tokens],
            Reference::Grammar(g) => g.probs(&ctx.prefix),
        }
    }
}

/// Prior over expression tokens that spreads `legal_mass` uniformly over
/// tokens that can still lead to a well-formed expression within the length
/// budget, and the remainder uniformly over all other tokens.
///
/// Token layout: digits `0..n_digits`, then operators, with `eos` somewhere
/// after the digits.
#[derive(Debug, Clone, PartialEq)]
pub struct GrammarPrior {
    pub n_tokens: usize,
    pub n_digits: usize,
    pub eos: TokenId,
    pub max_len: usize,
    pub legal_mass: f64,
}

impl GrammarPrior {
    pub const DEFAULT_LEGAL_MASS: f64 = 0.9;

    pub fn new(n_tokens: usize, n_digits: usize, eos: TokenId, max_len: usize) -> Self {
        Self {
            n_tokens,
            n_digits,
            eos,
            max_len,
            legal_mass: Self::DEFAULT_LEGAL_MASS,
        }
    }

    pub fn is_legal(&self, prefix: &[TokenId], next: TokenId) -> bool {
        let remaining = self.max_len.saturating_sub(prefix.len());
        let digit = next < self.n_digits;
        match prefix.last() {
            // expecting an operand
            None => digit,
            Some(&last) if last >= self.n_digits => digit,
            // after an operand: stop, or an operator if a digit still fits
            Some(_) => next == self.eos || (!digit && remaining >= 2),
        }
    }

    pub fn probs(&self, prefix: &[TokenId]) -> Vec<f64> {
        let legal: Vec<bool> = (0..self.n_tokens)
            .map(|w| self.is_legal(prefix, w))
            .collect();
        let n_legal = legal.iter().filter(|&&l| l).count();
        let n_illegal = self.n_tokens - n_legal;
        let (on, off) = match (n_legal, n_illegal) {
            (0, _) => (0.0, 1.0 / self.n_tokens as f64),
            (_, 0) => (1.0 / n_legal as f64, 0.0),
            _ => (
                self.legal_mass / n_legal as f64,
                (1.0 - self.legal_mass) / n_illegal as f64,
            ),
        };
        legal
            .into_iter()
            .map(|l| if l { on } else { off })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // 0-9 digits, 10-12 operators, 13 eos
    fn prior() -> GrammarPrior {
        GrammarPrior::new(14, 10, 13, 6)
    }

    #[test]
    fn rows_sum_to_one_and_are_positive() {
        let g = prior();
        for prefix in [vec![], vec![3], vec![3, 10], vec![1, 10, 2, 11, 4]] {
            let p = g.probs(&prefix);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|&x| x > 0.0));
        }
    }

    #[test]
    fn legal_tokens_carry_ninety_percent() {
        let g = prior();
        let p = g.probs(&[]);
        let digit_mass: f64 = p[..10].iter().sum();
        assert!((digit_mass - 0.9).abs() < 1e-12);

        // after a digit: three operators and EOS are legal
        let p = g.probs(&[7]);
        assert!((p[10] - 0.9 / 4.0).abs() < 1e-15);
        assert!((p[13] - 0.9 / 4.0).abs() < 1e-15);
        assert!((p[0] - 0.1 / 10.0).abs() < 1e-15);
    }

    #[test]
    fn last_slot_forbids_operators() {
        let g = prior();
        // five tokens emitted, the sixth is the last
        assert!(!g.is_legal(&[1, 10, 2, 11, 3], 10));
        assert!(g.is_legal(&[1, 10, 2, 11, 3], 13));
        assert!(g.is_legal(&[1, 10, 2, 11], 5));
    }

    #[test]
    fn uniform_reference() {
        let r = Reference::uniform(4);
        let ctx = Context::default_for_tests();
        assert_eq!(r.probs(&ctx), vec![0.25; 4]);
    }

    impl Context {
        fn default_for_tests() -> Self {
            Context::new(Default::default(), Default::default())
        }
    }
}
