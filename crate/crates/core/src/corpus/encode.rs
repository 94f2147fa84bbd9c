use serde::{Deserialize, Serialize};

use super::sample::{DialogSample, Role};
use super::vocab::{Vocabulary, BOS, BOU, CLS, EOS, EOU};

/// Role id used by `[CLS]` and padding.
pub const GLOBAL_ROLE: usize = 2;

/// Parallel id sequences fed to the encoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedInput {
    pub token_ids: Vec<usize>,
    pub role_ids: Vec<usize>,
    /// Reverse turn order: the latest turn is 0.
    pub turn_ids: Vec<usize>,
    /// Position inside the owning utterance; `[CLS]` is 0.
    pub position_ids: Vec<usize>,
}

impl EncodedInput {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    fn push(&mut self, token: usize, role: usize, turn: usize, position: usize) {
        self.token_ids.push(token);
        self.role_ids.push(role);
        self.turn_ids.push(turn);
        self.position_ids.push(position);
    }
}

/// Encodes a dialog context as `[CLS]` followed by each turn wrapped in
/// `[BOU]..[EOU]` (user) or `[BOS]..[EOS]` (system).
///
/// Contexts longer than `max_len` drop whole turns from the oldest end. If
/// the latest turn alone does not fit, its trailing words are cut but its
/// boundary tokens are kept.
pub fn encode_sample(sample: &DialogSample, vocab: &Vocabulary, max_len: usize) -> EncodedInput {
    assert!(max_len >= 3, "max_len must fit [CLS] and one pair of boundary tokens");
    let turns: Vec<(Role, Vec<usize>)> = sample
        .turns
        .iter()
        .map(|t| (t.role, vocab.encode_text(&t.text)))
        .collect();

    // Walk back from the latest turn while whole turns still fit.
    let mut budget = max_len - 1;
    let mut first_kept = turns.len();
    for (idx, (_, ids)) in turns.iter().enumerate().rev() {
        let need = ids.len() + 2;
        if need > budget {
            break;
        }
        budget -= need;
        first_kept = idx;
    }

    let mut out = EncodedInput {
        token_ids: Vec::with_capacity(max_len),
        role_ids: Vec::with_capacity(max_len),
        turn_ids: Vec::with_capacity(max_len),
        position_ids: Vec::with_capacity(max_len),
    };
    out.push(CLS, GLOBAL_ROLE, 0, 0);

    let kept: &[(Role, Vec<usize>)] = if first_kept == turns.len() {
        // Not even the latest turn fits whole.
        &turns[turns.len() - 1..]
    } else {
        &turns[first_kept..]
    };
    let last = kept.len() - 1;
    for (idx, (role, ids)) in kept.iter().enumerate() {
        let turn = last - idx;
        let (open, close) = match role {
            Role::User => (BOU, EOU),
            Role::System => (BOS, EOS),
        };
        let room = max_len - out.len() - 2;
        let r = role.id();
        out.push(open, r, turn, 0);
        for (p, &id) in ids.iter().take(room).enumerate() {
            out.push(id, r, turn, p + 1);
        }
        let pos = ids.len().min(room) + 1;
        out.push(close, r, turn, pos);
    }
    out
}
