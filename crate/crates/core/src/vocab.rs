//! Token vocabulary and the code-aware tokenizer.
//!
//! The lexer splits source text into identifiers/keywords, numbers, string and
//! character literals, single punctuation characters and an explicit `<EOL>`
//! for every newline. Literals are normalized to `<STR_LIT>`, `<NUM_LIT>` and
//! `<CHAR_LIT>` so that line comparisons ignore literal contents. Special token
//! spellings appearing in the text (e.g. `<NUM_LIT>`) lex back to the special
//! token, which makes `tokenize ∘ detokenize` the identity on token sequences.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EOL: &str = "<EOL>";
pub const UNK: &str = "<UNK>";
pub const STR_LIT: &str = "<STR_LIT>";
pub const NUM_LIT: &str = "<NUM_LIT>";
pub const CHAR_LIT: &str = "<CHAR_LIT>";
pub const BOS: &str = "<BOS>";

/// Special tokens in the order used by the vocab file header.
pub const SPECIAL_TOKENS: [&str; 6] = [EOL, UNK, STR_LIT, NUM_LIT, CHAR_LIT, BOS];

const SPECIAL_HEADER_PREFIX: &str = "#special:";

/// Dense integer id of a token.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for TokenId {
    fn from(i: usize) -> Self {
        TokenId(i as u32)
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Ids of the designated special tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Specials {
    pub eol: TokenId,
    pub unk: TokenId,
    pub str_lit: TokenId,
    pub num_lit: TokenId,
    pub char_lit: TokenId,
    pub bos: TokenId,
}

impl Specials {
    pub fn all(&self) -> [TokenId; 6] {
        [self.eol, self.unk, self.str_lit, self.num_lit, self.char_lit, self.bos]
    }
}

/// Whether unseen tokens extend the vocabulary or map to `<UNK>`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VocabMode {
    Build,
    Lookup,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    specials: Specials,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    /// A vocabulary holding only the special tokens, at ids 0..6.
    pub fn new() -> Self {
        let tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        Self::from_tokens(tokens).expect("special tokens form a valid vocab")
    }

    /// Builds a vocabulary from an ordered token list; position is the id.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if tok.is_empty() || tok.contains('\n') {
                return Err(Error::invalid(format!("token {i} is empty or contains a newline")));
            }
            if index.insert(tok.clone(), TokenId::from(i)).is_some() {
                return Err(Error::invalid(format!("duplicate token {tok:?} at id {i}")));
            }
        }
        let find = |s: &str| {
            index.get(s).copied().ok_or_else(|| Error::invalid(format!("special token {s} missing from vocab")))
        };
        let specials = Specials {
            eol: find(EOL)?,
            unk: find(UNK)?,
            str_lit: find(STR_LIT)?,
            num_lit: find(NUM_LIT)?,
            char_lit: find(CHAR_LIT)?,
            bos: find(BOS)?,
        };
        Ok(Self { tokens, index, specials })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn specials(&self) -> Specials {
        self.specials
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn contains(&self, id: TokenId) -> bool {
        id.index() < self.tokens.len()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id.index()).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    /// Returns the id of `token`, appending it if unseen.
    pub fn intern(&mut self, token: &str) -> TokenId {
        if let Some(id) = self.index.get(token) {
            return *id;
        }
        let id = TokenId::from(self.tokens.len());
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    /// Tokenizes in lookup mode; unseen tokens become `<UNK>`.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        lex(text)
            .into_iter()
            .map(|lx| match lx {
                Lexeme::Word(w) => self.id(w).unwrap_or(self.specials.unk),
                other => self.special_for(&other),
            })
            .collect()
    }

    /// Tokenizes in build mode; unseen tokens extend the vocabulary.
    pub fn encode_extend(&mut self, text: &str) -> Vec<TokenId> {
        lex(text)
            .into_iter()
            .map(|lx| match lx {
                Lexeme::Word(w) => self.intern(w),
                other => self.special_for(&other),
            })
            .collect()
    }

    /// Joins token strings with single spaces; `<EOL>` becomes a newline.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            let tok = self
                .token(id)
                .ok_or_else(|| Error::invalid(format!("token id {id} out of range (v = {})", self.len())))?;
            if id == self.specials.eol {
                out.push('\n');
                continue;
            }
            if !out.is_empty() && !out.ends_with('\n') {
                out.push(' ');
            }
            out.push_str(tok);
        }
        Ok(out)
    }

    fn special_for(&self, lx: &Lexeme<'_>) -> TokenId {
        match lx {
            Lexeme::Eol => self.specials.eol,
            Lexeme::Str => self.specials.str_lit,
            Lexeme::Num => self.specials.num_lit,
            Lexeme::Char => self.specials.char_lit,
            Lexeme::Special(s) => self.id(s).unwrap_or(self.specials.unk),
            Lexeme::Word(_) => unreachable!("words are resolved by the caller"),
        }
    }

    /// Serializes to the text vocab format: header line, then one token per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(SPECIAL_HEADER_PREFIX);
        out.push_str(&SPECIAL_TOKENS.join(","));
        out.push('\n');
        for tok in &self.tokens {
            out.push_str(tok);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.split('\n');
        let header = lines.next().unwrap_or("");
        let Some(listed) = header.strip_prefix(SPECIAL_HEADER_PREFIX) else {
            return Err(Error::format(0, "vocab file must start with a #special: header"));
        };
        let listed: Vec<&str> = listed.trim_end_matches('\r').split(',').collect();
        for s in SPECIAL_TOKENS {
            if !listed.contains(&s) {
                return Err(Error::format(0, format!("header does not list {s}")));
            }
        }
        let mut tokens: Vec<String> = lines.map(str::to_string).collect();
        // A final newline leaves one empty trailing element.
        if tokens.last().is_some_and(|t| t.is_empty()) {
            tokens.pop();
        }
        let mut offset = header.len() as u64 + 1;
        for tok in &tokens {
            if tok.is_empty() {
                return Err(Error::format(offset, "empty token line"));
            }
            offset += tok.len() as u64 + 1;
        }
        Self::from_tokens(tokens).map_err(|e| match e {
            Error::InvalidInput(m) => Error::format(0, m),
            other => other,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_text(&text)
    }
}

/// Tokenizes `text` under the given mode.
pub fn tokenize(text: &str, vocab: &mut Vocab, mode: VocabMode) -> Vec<TokenId> {
    match mode {
        VocabMode::Build => vocab.encode_extend(text),
        VocabMode::Lookup => vocab.encode(text),
    }
}

pub fn detokenize(ids: &[TokenId], vocab: &Vocab) -> Result<String> {
    vocab.decode(ids)
}

/// Collapses runs of intra-line whitespace to single spaces and trims each line.
pub fn normalize_whitespace(s: &str) -> String {
    s.split('\n').map(|line| line.split_whitespace().collect::<Vec<_>>().join(" ")).collect::<Vec<_>>().join("\n")
}

/// A raw lexical unit before vocabulary lookup.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Lexeme<'a> {
    Word(&'a str),
    Special(&'static str),
    Eol,
    Str,
    Num,
    Char,
}

pub fn lex(text: &str) -> Vec<Lexeme<'_>> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < text.len() {
        let rest = &text[i..];
        let c = rest.chars().next().expect("non-empty");
        if c == '\n' {
            out.push(Lexeme::Eol);
            i += 1;
        } else if c.is_whitespace() {
            i += c.len_utf8();
        } else if c == '<' {
            match SPECIAL_TOKENS.iter().find(|s| rest.starts_with(**s)) {
                Some(&s) if s == EOL => {
                    out.push(Lexeme::Eol);
                    i += s.len();
                }
                Some(&s) => {
                    out.push(Lexeme::Special(s));
                    i += s.len();
                }
                None => {
                    out.push(Lexeme::Word(&rest[..1]));
                    i += 1;
                }
            }
        } else if c.is_alphabetic() || c == '_' {
            let len = word_len(rest);
            out.push(Lexeme::Word(&rest[..len]));
            i += len;
        } else if c.is_ascii_digit() {
            let len = rest
                .char_indices()
                .find(|&(_, ch)| !(ch.is_alphanumeric() || ch == '_' || ch == '.'))
                .map_or(rest.len(), |(j, _)| j);
            out.push(Lexeme::Num);
            i += len;
        } else if c == '"' || c == '\'' {
            i += quoted_len(&bytes[i..], c as u8);
            out.push(if c == '"' { Lexeme::Str } else { Lexeme::Char });
        } else {
            let len = c.len_utf8();
            out.push(Lexeme::Word(&rest[..len]));
            i += len;
        }
    }
    out
}

fn word_len(s: &str) -> usize {
    s.char_indices().find(|&(_, ch)| !(ch.is_alphanumeric() || ch == '_')).map_or(s.len(), |(j, _)| j)
}

/// Length of a quoted literal starting at `b[0] == quote`. Unterminated
/// literals end before the newline (or at end of input).
fn quoted_len(b: &[u8], quote: u8) -> usize {
    let mut j = 1;
    while j < b.len() {
        match b[j] {
            b'\\' if j + 1 < b.len() && b[j + 1] != b'\n' => j += 2,
            b'\n' => return j,
            x if x == quote => return j + 1,
            _ => j += 1,
        }
    }
    b.len().min(j)
}
