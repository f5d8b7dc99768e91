//! Vocabularies and token sequences.

use std::collections::HashMap;
use std::fmt;
use std::ops::Deref;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type TokenId = usize;

/// An ordered, duplicate-free list of token symbols with dense ids `0..len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    eos: Option<TokenId>,
}

impl Vocabulary {
    pub fn new<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Result<Self> {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.is_empty() {
            return Err(Error::InvalidVocabulary("no tokens".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), id).is_some() {
                return Err(Error::InvalidVocabulary(format!(
                    "duplicate symbol {tok:?}"
                )));
            }
        }
        Ok(Self {
            tokens,
            index,
            eos: None,
        })
    }

    /// Marks `symbol` as the end-of-action token.
    pub fn with_eos(mut self, symbol: &str) -> Result<Self> {
        self.eos = Some(self.id(symbol)?);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn eos(&self) -> Option<TokenId> {
        self.eos
    }

    pub fn symbols(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, symbol: &str) -> Result<TokenId> {
        self.index
            .get(symbol)
            .copied()
            .ok_or_else(|| Error::UnknownSymbol(symbol.to_string()))
    }

    pub fn symbol(&self, id: TokenId) -> Result<&str> {
        self.tokens
            .get(id)
            .map(String::as_str)
            .ok_or(Error::TokenOutOfRange {
                id,
                size: self.len(),
            })
    }

    pub fn encode<S: AsRef<str>>(&self, text: &[S]) -> Result<TokenSeq> {
        text.iter()
            .map(|s| self.id(s.as_ref()))
            .collect::<Result<Vec<_>>>()
            .map(TokenSeq)
    }

    pub fn decode(&self, seq: &TokenSeq) -> Result<Vec<String>> {
        seq.iter()
            .map(|&id| self.symbol(id).map(str::to_string))
            .collect()
    }

    /// Checks that every id in `seq` is a valid token id.
    pub fn check(&self, seq: &[TokenId]) -> Result<()> {
        match seq.iter().find(|&&id| id >= self.len()) {
            Some(&id) => Err(Error::TokenOutOfRange {
                id,
                size: self.len(),
            }),
            None => Ok(()),
        }
    }

    /// Short content hash used to tie checkpoints to a vocabulary.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for tok in &self.tokens {
            hasher.update(tok.as_bytes());
            hasher.update([0u8]);
        }
        if let Some(eos) = self.eos {
            hasher.update(format!("eos={eos}").as_bytes());
        }
        let digest = hasher.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// A sequence of token ids: a state, an action, or a partial action.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenSeq(Vec<TokenId>);

impl TokenSeq {
    pub const fn empty() -> Self {
        TokenSeq(Vec::new())
    }

    pub fn push(&mut self, id: TokenId) {
        self.0.push(id);
    }

    pub fn prefix(&self, len: usize) -> TokenSeq {
        TokenSeq(self.0[..len].to_vec())
    }

    pub fn into_inner(self) -> Vec<TokenId> {
        self.0
    }
}

impl Deref for TokenSeq {
    type Target = [TokenId];

    fn deref(&self) -> &[TokenId] {
        &self.0
    }
}

impl From<Vec<TokenId>> for TokenSeq {
    fn from(ids: Vec<TokenId>) -> Self {
        TokenSeq(ids)
    }
}

impl From<&[TokenId]> for TokenSeq {
    fn from(ids: &[TokenId]) -> Self {
        TokenSeq(ids.to_vec())
    }
}

impl FromIterator<TokenId> for TokenSeq {
    fn from_iter<I: IntoIterator<Item = TokenId>>(iter: I) -> Self {
        TokenSeq(iter.into_iter().collect())
    }
}

impl fmt::Display for TokenSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, id) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{id}")?;
        }
        f.write_str("]")
    }
}
