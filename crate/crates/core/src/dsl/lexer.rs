use std::ops::Range;

use super::DslError;

#[derive(Clone, Debug, PartialEq)]
pub enum Tok {
    /// Bare or double-quoted identifier; keywords are identifiers too and
    /// are matched case-insensitively by the parser.
    Ident { text: String, quoted: bool },
    Str(String),
    Int(i64),
    Real(f64),
    /// `date'...'`, `datetime'...'`, `timestamp'...'` with no gap.
    Typed { type_name: String, text: String },
    /// `$n`
    Param(usize),
    Sym(&'static str),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub span: Range<usize>,
}

const SYMBOLS: [&str; 19] = [
    "<>", "!=", "<=", ">=", "^^", "(", ")", ",", ";", "*", "+", "-", "/", "=", "<", ">", ".", ":", "|",
];

pub fn tokenize(text: &str) -> Result<Vec<Token>, DslError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if text[i..].starts_with("/*") {
            match text[i + 2..].find("*/") {
                Some(end) => i = i + 2 + end + 2,
                None => return Err(DslError::lex(i, "unterminated comment")),
            }
            continue;
        }
        if text[i..].starts_with("--") {
            i = text[i..].find('\n').map(|n| i + n + 1).unwrap_or(bytes.len());
            continue;
        }
        let start = i;
        if c == b'\'' {
            let (s, end) = string_body(text, i)?;
            out.push(Token {
                tok: Tok::Str(s),
                span: start..end,
            });
            i = end;
            continue;
        }
        if c == b'"' {
            let Some(len) = text[i + 1..].find('"') else {
                return Err(DslError::lex(i, "unterminated quoted identifier"));
            };
            if len == 0 {
                return Err(DslError::lex(i, "empty quoted identifier"));
            }
            out.push(Token {
                tok: Tok::Ident {
                    text: text[i + 1..i + 1 + len].to_string(),
                    quoted: true,
                },
                span: start..i + len + 2,
            });
            i += len + 2;
            continue;
        }
        if c == b'$' {
            let digits = text[i + 1..].bytes().take_while(u8::is_ascii_digit).count();
            let n: usize = text[i + 1..i + 1 + digits]
                .parse()
                .map_err(|_| DslError::lex(i, "expected digits after '$'"))?;
            if n == 0 {
                return Err(DslError::lex(i, "positional references start at $1"));
            }
            out.push(Token {
                tok: Tok::Param(n),
                span: start..i + 1 + digits,
            });
            i += 1 + digits;
            continue;
        }
        if c.is_ascii_digit() {
            let mut j = i;
            while j < bytes.len() && bytes[j].is_ascii_digit() {
                j += 1;
            }
            // `10to20` is an identifier in the example schema.
            if j < bytes.len() && (bytes[j].is_ascii_alphabetic() || bytes[j] == b'_') {
                while j < bytes.len() && is_ident_byte(bytes[j]) {
                    j += 1;
                }
                out.push(Token {
                    tok: Tok::Ident {
                        text: text[i..j].to_string(),
                        quoted: false,
                    },
                    span: start..j,
                });
                i = j;
                continue;
            }
            if j + 1 < bytes.len() && bytes[j] == b'.' && bytes[j + 1].is_ascii_digit() {
                j += 1;
                while j < bytes.len() && bytes[j].is_ascii_digit() {
                    j += 1;
                }
                let r: f64 = text[i..j].parse().map_err(|_| DslError::lex(i, "bad number"))?;
                out.push(Token {
                    tok: Tok::Real(r),
                    span: start..j,
                });
            } else {
                let n: i64 = text[i..j].parse().map_err(|_| DslError::lex(i, "integer out of range"))?;
                out.push(Token {
                    tok: Tok::Int(n),
                    span: start..j,
                });
            }
            i = j;
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            let mut j = i;
            while j < bytes.len() && is_ident_byte(bytes[j]) {
                j += 1;
            }
            let word = &text[i..j];
            let lower = word.to_ascii_lowercase();
            if j < bytes.len() && bytes[j] == b'\'' && matches!(lower.as_str(), "date" | "datetime" | "timestamp") {
                let (s, end) = string_body(text, j)?;
                out.push(Token {
                    tok: Tok::Typed {
                        type_name: lower,
                        text: s,
                    },
                    span: start..end,
                });
                i = end;
                continue;
            }
            out.push(Token {
                tok: Tok::Ident {
                    text: word.to_string(),
                    quoted: false,
                },
                span: start..j,
            });
            i = j;
            continue;
        }
        match SYMBOLS.iter().find(|s| text[i..].starts_with(**s)) {
            Some(sym) => {
                out.push(Token {
                    tok: Tok::Sym(sym),
                    span: start..i + sym.len(),
                });
                i += sym.len();
            }
            None => {
                let ch = text[i..].chars().next().unwrap_or('?');
                return Err(DslError::lex(i, &format!("unexpected character {ch:?}")));
            }
        }
    }
    Ok(out)
}

fn is_ident_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

/// Reads a quoted string starting at the opening quote; `''` escapes a quote.
fn string_body(text: &str, open: usize) -> Result<(String, usize), DslError> {
    let mut out = String::new();
    let mut chars = text[open + 1..].char_indices();
    while let Some((k, ch)) = chars.next() {
        if ch == '\'' {
            if text[open + 1 + k + 1..].starts_with('\'') {
                out.push('\'');
                chars.next();
                continue;
            }
            return Ok((out, open + 1 + k + 1));
        }
        out.push(ch);
    }
    Err(DslError::lex(open, "unterminated string"))
}
