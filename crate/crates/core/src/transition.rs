use crate::vocab::TokenSeq;

/// One environment interaction, as stored in the replay buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: TokenSeq,
    pub action: TokenSeq,
    pub reward: f64,
    pub next_state: TokenSeq,
    pub done: bool,
}
