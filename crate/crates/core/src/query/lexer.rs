use alloc::string::{String, ToString};

use super::ParseError;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    Ident(String),
    Num(f64),
    Str(String),
    Sym(&'static str),
    Eof,
}

/// On-demand tokenizer. The parser occasionally needs a raw
/// whitespace-delimited word (executable paths, timestamps), so tokens are
/// produced lazily from the current byte offset rather than up front.
pub(crate) struct Lexer<'a> {
    src: &'a str,
    pub(crate) pos: usize,
}

const SYMBOLS: [&str; 19] = [
    "<=", ">=", "!=", "<>", "(", ")", "[", "]", ",", ";", ":", "=", "*", "+", "-", "/", "<", ">", ".",
];

impl<'a> Lexer<'a> {
    pub(crate) fn new(src: &'a str) -> Self {
        Lexer { src, pos: 0 }
    }

    pub(crate) fn err(&self, pos: usize, msg: impl Into<String>) -> ParseError {
        ParseError { pos, msg: msg.into() }
    }

    fn skip_trivia(&self, mut pos: usize) -> Result<usize, ParseError> {
        let bytes = self.src.as_bytes();
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if self.src[pos..].starts_with("/*") {
                match self.src[pos + 2..].find("*/") {
                    Some(end) => pos += end + 4,
                    None => return Err(self.err(pos, "unterminated comment")),
                }
            } else if self.src[pos..].starts_with("--") {
                pos = self.src[pos..].find('\n').map_or(self.src.len(), |e| pos + e);
            } else {
                return Ok(pos);
            }
        }
    }

    /// Token at the cursor as `(token, start, end)` without consuming it.
    pub(crate) fn peek(&self) -> Result<(Tok, usize, usize), ParseError> {
        let start = self.skip_trivia(self.pos)?;
        let rest = &self.src[start..];
        let Some(c) = rest.chars().next() else {
            return Ok((Tok::Eof, start, start));
        };
        if c.is_ascii_alphabetic() || c == '_' {
            let len = rest
                .find(|ch: char| !(ch.is_ascii_alphanumeric() || ch == '_'))
                .unwrap_or(rest.len());
            return Ok((Tok::Ident(rest[..len].to_string()), start, start + len));
        }
        if c.is_ascii_digit() {
            let b = rest.as_bytes();
            let mut i = 0;
            while i < b.len() && b[i].is_ascii_digit() {
                i += 1;
            }
            if i + 1 < b.len() && b[i] == b'.' && b[i + 1].is_ascii_digit() {
                i += 1;
                while i < b.len() && b[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
                let mut j = i + 1;
                if j < b.len() && (b[j] == b'+' || b[j] == b'-') {
                    j += 1;
                }
                if j < b.len() && b[j].is_ascii_digit() {
                    while j < b.len() && b[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let v: f64 = rest[..i].parse().map_err(|_| self.err(start, "malformed number"))?;
            return Ok((Tok::Num(v), start, start + i));
        }
        if c == '"' || c == '\'' {
            let mut out = String::new();
            let mut chars = rest.char_indices().skip(1);
            while let Some((i, ch)) = chars.next() {
                match ch {
                    '\\' => match chars.next() {
                        Some((_, 'n')) => out.push('\n'),
                        Some((_, 't')) => out.push('\t'),
                        Some((_, e)) => out.push(e),
                        None => break,
                    },
                    ch if ch == c => return Ok((Tok::Str(out), start, start + i + 1)),
                    ch => out.push(ch),
                }
            }
            return Err(self.err(start, "unterminated string"));
        }
        for sym in SYMBOLS {
            if rest.starts_with(sym) {
                return Ok((Tok::Sym(sym), start, start + sym.len()));
            }
        }
        Err(self.err(start, alloc::format!("unexpected character {c:?}")))
    }

    pub(crate) fn next(&mut self) -> Result<(Tok, usize), ParseError> {
        let (tok, start, end) = self.peek()?;
        self.pos = end;
        Ok((tok, start))
    }

    /// A whitespace-delimited word (stops before `;`), quotes stripped.
    pub(crate) fn raw_word(&mut self) -> Result<(String, usize), ParseError> {
        let start = self.skip_trivia(self.pos)?;
        let rest = &self.src[start..];
        if rest.starts_with(['"', '\'']) {
            if let (Tok::Str(s), _, end) = self.peek()? {
                self.pos = end;
                return Ok((s, start));
            }
        }
        let len = rest
            .find(|ch: char| ch.is_whitespace() || ch == ';')
            .unwrap_or(rest.len());
        if len == 0 {
            return Err(self.err(start, "expected a word"));
        }
        self.pos = start + len;
        Ok((rest[..len].to_string(), start))
    }
}
