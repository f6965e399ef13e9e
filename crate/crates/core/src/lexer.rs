//! Identifier-preserving tokenizer for C-like function bodies.
//!
//! Identifiers are lexed by maximal munch over `[A-Za-z_][A-Za-z0-9_]*`, so a
//! name such as `ff_insert_inpad` is always exactly one token. Preprocessor
//! lines become single opaque tokens. Comments are recognised but dropped from
//! the stream returned by [`tokenize`]; [`lex_all`] keeps them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default sequence cap.
pub const DEFAULT_MAX_TOKENS: usize = 512;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LexError {
    #[error("unterminated string literal starting at byte {0}")]
    UnterminatedString(usize),
    #[error("unterminated character literal starting at byte {0}")]
    UnterminatedChar(usize),
    #[error("unterminated block comment starting at byte {0}")]
    UnterminatedComment(usize),
    #[error("invalid UTF-8 at byte {0}")]
    InvalidUtf8(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    Identifier,
    Keyword,
    Number,
    StringLiteral,
    CharLiteral,
    Operator,
    Punctuation,
    Comment,
}

/// Byte range `[start, end)` into the source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl From<[usize; 2]> for Span {
    fn from([start, end]: [usize; 2]) -> Self {
        Self { start, end }
    }
}

impl From<Span> for [usize; 2] {
    fn from(s: Span) -> Self {
        [s.start, s.end]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub kind: TokenKind,
    pub span: Span,
}

impl Token {
    /// True for preprocessor directives lexed as opaque punctuation.
    pub fn is_directive(&self) -> bool {
        self.kind == TokenKind::Punctuation && self.text.starts_with('#')
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenStream {
    pub tokens: Vec<Token>,
    pub truncated: bool,
    pub original_length: usize,
}

impl TokenStream {
    pub fn new(tokens: Vec<Token>) -> Self {
        let original_length = tokens.len();
        Self { tokens, truncated: false, original_length }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.text.as_str()).collect()
    }
}

const KEYWORDS: &[&str] = &[
    "auto", "break", "case", "char", "const", "continue", "default", "do", "double", "else", "enum", "extern",
    "float", "for", "goto", "if", "inline", "int", "long", "register", "restrict", "return", "short", "signed",
    "sizeof", "static", "struct", "switch", "typedef", "union", "unsigned", "void", "volatile", "while", "_Alignas",
    "_Alignof", "_Atomic", "_Bool", "_Complex", "_Generic", "_Imaginary", "_Noreturn", "_Static_assert",
    "_Thread_local",
];

pub fn is_keyword(text: &str) -> bool {
    KEYWORDS.contains(&text)
}

// Longest first within each leading character so a linear scan is maximal munch.
const OPERATORS: &[&str] = &[
    "<<=", ">>=", "...", "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||", "+=", "-=", "*=", "/=",
    "%=", "&=", "|=", "^=", "##",
];

const PUNCTUATION: &[u8] = b"()[]{};,";

/// Lexes `source` and drops comments from the resulting stream.
pub fn tokenize(source: &str) -> Result<TokenStream, LexError> {
    let mut tokens = lex_all(source)?;
    tokens.retain(|t| t.kind != TokenKind::Comment);
    Ok(TokenStream::new(tokens))
}

/// Validates UTF-8 first, then behaves like [`tokenize`].
pub fn tokenize_bytes(source: &[u8]) -> Result<TokenStream, LexError> {
    let text = std::str::from_utf8(source).map_err(|e| LexError::InvalidUtf8(e.valid_up_to()))?;
    tokenize(text)
}

/// Lexes every token, comments included.
pub fn lex_all(source: &str) -> Result<Vec<Token>, LexError> {
    let bytes = source.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    // Directives are only recognised as the first non-blank item on a line.
    let mut line_start = true;
    while i < bytes.len() {
        let c = bytes[i];
        if c == b'\n' {
            line_start = true;
            i += 1;
            continue;
        }
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let kind = if c == b'#' && line_start {
            i = directive_end(bytes, i);
            TokenKind::Punctuation
        } else if c == b'/' && bytes.get(i + 1) == Some(&b'/') {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            TokenKind::Comment
        } else if c == b'/' && bytes.get(i + 1) == Some(&b'*') {
            i = block_comment_end(bytes, i)?;
            TokenKind::Comment
        } else if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            if is_keyword(&source[start..i]) {
                TokenKind::Keyword
            } else {
                TokenKind::Identifier
            }
        } else if c.is_ascii_digit() || (c == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) {
            i = number_end(bytes, i);
            TokenKind::Number
        } else if c == b'"' {
            i = quoted_end(bytes, i, b'"').ok_or(LexError::UnterminatedString(start))?;
            TokenKind::StringLiteral
        } else if c == b'\'' {
            i = quoted_end(bytes, i, b'\'').ok_or(LexError::UnterminatedChar(start))?;
            TokenKind::CharLiteral
        } else if PUNCTUATION.contains(&c) {
            i += 1;
            TokenKind::Punctuation
        } else if let Some(op) = OPERATORS.iter().find(|op| bytes[i..].starts_with(op.as_bytes())) {
            i += op.len();
            TokenKind::Operator
        } else {
            // Any other character, including non-ASCII, is a one-character operator.
            i += source[i..].chars().next().map_or(1, char::len_utf8);
            TokenKind::Operator
        };
        line_start = false;
        // A line comment or directive stops before its newline, so the next
        // iteration resets `line_start`.
        out.push(Token { text: source[start..i].to_string(), kind, span: Span { start, end: i } });
    }
    Ok(out)
}

fn directive_end(bytes: &[u8], mut i: usize) -> usize {
    while i < bytes.len() {
        match bytes[i] {
            b'\\' if bytes.get(i + 1) == Some(&b'\n') => i += 2,
            b'\\' if bytes.get(i + 1) == Some(&b'\r') && bytes.get(i + 2) == Some(&b'\n') => i += 3,
            b'\n' => break,
            _ => i += 1,
        }
    }
    // Exclude trailing whitespace such as '\r' from the token text.
    while i > 0 && bytes[i - 1].is_ascii_whitespace() {
        i -= 1;
    }
    i
}

fn block_comment_end(bytes: &[u8], start: usize) -> Result<usize, LexError> {
    let mut i = start + 2;
    while i + 1 < bytes.len() {
        if bytes[i] == b'*' && bytes[i + 1] == b'/' {
            return Ok(i + 2);
        }
        i += 1;
    }
    Err(LexError::UnterminatedComment(start))
}

fn number_end(bytes: &[u8], mut i: usize) -> usize {
    // pp-number: digits, letters, '_', '.', and a sign directly after an exponent marker.
    while i < bytes.len() {
        let c = bytes[i];
        let signed_exponent = (c == b'+' || c == b'-') && matches!(bytes[i - 1], b'e' | b'E' | b'p' | b'P');
        if c.is_ascii_alphanumeric() || c == b'_' || c == b'.' || signed_exponent {
            i += 1;
        } else {
            break;
        }
    }
    i
}

fn quoted_end(bytes: &[u8], start: usize, quote: u8) -> Option<usize> {
    let mut i = start + 1;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' => i += 2,
            b'\n' => return None,
            c if c == quote => return Some(i + 1),
            _ => i += 1,
        }
    }
    None
}

/// Keeps the first `max_tokens` tokens. `original_length` is preserved, so
/// truncating an already-truncated stream stays consistent.
pub fn truncate(ts: &TokenStream, max_tokens: usize) -> TokenStream {
    let max_tokens = max_tokens.max(1);
    let keep = ts.tokens.len().min(max_tokens);
    TokenStream {
        tokens: ts.tokens[..keep].to_vec(),
        truncated: ts.original_length > max_tokens,
        original_length: ts.original_length,
    }
}
