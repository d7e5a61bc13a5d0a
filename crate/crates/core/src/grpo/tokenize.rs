use std::ops::Range;

/// Id reserved for masked observation tokens.
pub const PAD_TOKEN_ID: u32 = 0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSpan {
    pub id: u32,
    /// Char offsets into the tokenized text.
    pub span: Range<usize>,
}

/// Splits text into tokens whose spans tile it exactly.
pub trait Tokenizer: Send + Sync {
    fn tokenize(&self, text: &str) -> Vec<TokenSpan>;
}

/// Word-piece stand-in for desk runs: alphanumeric runs, whitespace runs and
/// single other characters, each hashed into `1..vocab_size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashTokenizer {
    pub vocab_size: u32,
}

impl Default for HashTokenizer {
    fn default() -> Self {
        Self { vocab_size: 50_000 }
    }
}

impl HashTokenizer {
    pub fn token_id(&self, piece: &str) -> u32 {
        let mut h: u32 = 0x811c_9dc5;
        for b in piece.bytes() {
            h ^= u32::from(b);
            h = h.wrapping_mul(0x0100_0193);
        }
        1 + h % (self.vocab_size.max(2) - 1)
    }
}

#[derive(PartialEq, Clone, Copy)]
enum Class {
    Word,
    Space,
    Other,
}

fn class(c: char) -> Class {
    if c.is_alphanumeric() {
        Class::Word
    } else if c.is_whitespace() {
        Class::Space
    } else {
        Class::Other
    }
}

impl Tokenizer for HashTokenizer {
    fn tokenize(&self, text: &str) -> Vec<TokenSpan> {
        let mut out = Vec::new();
        let mut piece = String::new();
        let mut start = 0;
        let mut current: Option<Class> = None;
        for (i, c) in text.chars().enumerate() {
            let k = class(c);
            let extend = current == Some(k) && k != Class::Other;
            if !extend && !piece.is_empty() {
                out.push(TokenSpan {
                    id: self.token_id(&piece),
                    span: start..i,
                });
                piece.clear();
                start = i;
            }
            piece.push(c);
            current = Some(k);
        }
        if !piece.is_empty() {
            let end = start + piece.chars().count();
            out.push(TokenSpan {
                id: self.token_id(&piece),
                span: start..end,
            });
        }
        out
    }
}
