use std::ops::Range;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    /// Lowercased word; may contain `_`, `'` and `-`.
    Word(String),
    Number(String),
    Hash,
    Comma,
    Other(char),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Token {
    pub tok: Tok,
    pub span: Range<usize>,
}

impl Token {
    pub fn word(&self) -> Option<&str> {
        match &self.tok {
            Tok::Word(w) => Some(w),
            _ => None,
        }
    }
}

/// Length of `text` once trailing sentence punctuation and whitespace are
/// dropped.
fn trimmed_len(text: &str) -> usize {
    text.trim_end_matches(|c: char| c.is_whitespace() || matches!(c, '.' | '!' | '?')).len()
}

pub(crate) fn lex(text: &str) -> Vec<Token> {
    let end = trimmed_len(text);
    let s = &text[..end];
    let mut out = Vec::new();
    let mut chars = s.char_indices().peekable();
    while let Some(&(i, c)) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
        } else if c == '#' || c == ',' {
            chars.next();
            let tok = if c == '#' { Tok::Hash } else { Tok::Comma };
            out.push(Token { tok, span: i..i + 1 });
        } else if c.is_ascii_digit() {
            let mut j = i;
            let mut seen_dot = false;
            while let Some(&(k, d)) = chars.peek() {
                let dot_ok = d == '.'
                    && !seen_dot
                    && s[k + 1..].chars().next().is_some_and(|n| n.is_ascii_digit());
                if d.is_ascii_digit() || dot_ok {
                    seen_dot |= d == '.';
                    j = k + d.len_utf8();
                    chars.next();
                } else {
                    break;
                }
            }
            out.push(Token {
                tok: Tok::Number(s[i..j].to_string()),
                span: i..j,
            });
        } else if c.is_alphabetic() || c == '_' {
            let mut j = i;
            while let Some(&(k, d)) = chars.peek() {
                if d.is_alphanumeric() || matches!(d, '_' | '\'' | '-') {
                    j = k + d.len_utf8();
                    chars.next();
                } else {
                    break;
                }
            }
            out.push(Token {
                tok: Tok::Word(s[i..j].to_lowercase()),
                span: i..j,
            });
        } else {
            chars.next();
            out.push(Token {
                tok: Tok::Other(c),
                span: i..i + c.len_utf8(),
            });
        }
    }
    out
}
