//! Backbone port and the deterministic stub used everywhere in tests.
//!
//! A real backbone would read the token stream and both audio segments and
//! return contextual hidden states. The stub ignores audio and returns
//! `H[t] = E_tok(token_t) + E_pos(t)`, with both tables derived from a seeded
//! hash, so row `t` depends on nothing but the token at `t` and its position.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::prosody::LogMel;
use crate::text::tokenize;

pub type TokenId = u32;

pub const S1_OPEN: TokenId = 1;
pub const S1_CLOSE: TokenId = 2;
pub const S2_OPEN: TokenId = 3;
pub const S2_CLOSE: TokenId = 4;
const FIRST_WORD_ID: TokenId = 16;
pub const VOCAB_SIZE: TokenId = 50_000;

/// Word-hash tokenizer: lowercase word tokens mapped by FNV-1a into a fixed
/// vocabulary, with reserved ids for the span markers.
pub fn word_id(word: &str) -> TokenId {
    let mut h: u32 = 0x811c_9dc5;
    for b in word.bytes() {
        h ^= b as u32;
        h = h.wrapping_mul(0x0100_0193);
    }
    FIRST_WORD_ID + h % (VOCAB_SIZE - FIRST_WORD_ID)
}

/// `<S1> arg1 </S1> <S2> arg2 </S2>`
pub fn encode_pair(arg1: &str, arg2: &str) -> Vec<TokenId> {
    let mut ids = vec![S1_OPEN];
    ids.extend(tokenize(arg1).iter().map(|t| word_id(&t.text)));
    ids.push(S1_CLOSE);
    ids.push(S2_OPEN);
    ids.extend(tokenize(arg2).iter().map(|t| word_id(&t.text)));
    ids.push(S2_CLOSE);
    ids
}

/// Content ranges `[start, end)` of both argument spans, markers excluded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MarkerSpans {
    pub s1_start: usize,
    pub s1_end: usize,
    pub s2_start: usize,
    pub s2_end: usize,
}

pub fn locate_markers(tokens: &[TokenId]) -> Result<MarkerSpans> {
    let find = |id: TokenId, name: &str| -> Result<usize> {
        let mut it = tokens.iter().enumerate().filter(|(_, &t)| t == id).map(|(i, _)| i);
        match (it.next(), it.next()) {
            (Some(i), None) => Ok(i),
            (None, _) => Err(Error::Contract(format!("marker {name} missing from token stream"))),
            (Some(_), Some(_)) => Err(Error::Contract(format!("marker {name} occurs more than once"))),
        }
    };
    let (a, b) = (find(S1_OPEN, "<S1>")?, find(S1_CLOSE, "</S1>")?);
    let (c, d) = (find(S2_OPEN, "<S2>")?, find(S2_CLOSE, "</S2>")?);
    if !(a < b && b < c && c < d) {
        return Err(Error::Contract("markers out of order".into()));
    }
    if b == a + 1 || d == c + 1 {
        return Err(Error::Contract("empty argument span".into()));
    }
    Ok(MarkerSpans {
        s1_start: a + 1,
        s1_end: b,
        s2_start: c + 1,
        s2_end: d,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenStates {
    pub h: Array2<f64>,
    pub spans: MarkerSpans,
}

impl TokenStates {
    pub fn arg1(&self) -> Array2<f64> {
        self.h.slice(ndarray::s![self.spans.s1_start..self.spans.s1_end, ..]).to_owned()
    }

    pub fn arg2(&self) -> Array2<f64> {
        self.h.slice(ndarray::s![self.spans.s2_start..self.spans.s2_end, ..]).to_owned()
    }
}

pub trait BackbonePort: Send + Sync {
    fn hidden_size(&self) -> usize;
    fn encode(&self, tokens: &[TokenId], logmel_pair: (&LogMel, &LogMel)) -> Result<TokenStates>;
}

/// Seeded hash embedding; has no trainable parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StubBackbone {
    pub d: usize,
    pub seed: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl StubBackbone {
    pub fn new(d: usize, seed: u64) -> Self {
        StubBackbone { d, seed }
    }

    /// Uniform on [-sqrt 3, sqrt 3): unit variance per coordinate.
    fn value(&self, table: u64, row: u64, col: usize) -> f64 {
        let h = splitmix(self.seed ^ splitmix(table ^ splitmix(row ^ splitmix(col as u64))));
        let u = (h >> 11) as f64 / (1u64 << 53) as f64;
        (2.0 * u - 1.0) * 3f64.sqrt()
    }

    pub fn states(&self, tokens: &[TokenId]) -> Array2<f64> {
        Array2::from_shape_fn((tokens.len(), self.d), |(t, j)| {
            self.value(1, tokens[t] as u64, j) + self.value(2, t as u64, j)
        })
    }
}

impl BackbonePort for StubBackbone {
    fn hidden_size(&self) -> usize {
        self.d
    }

    fn encode(&self, tokens: &[TokenId], _logmel_pair: (&LogMel, &LogMel)) -> Result<TokenStates> {
        let spans = locate_markers(tokens)?;
        Ok(TokenStates {
            h: self.states(tokens),
            spans,
        })
    }
}
