//! Minimal s-expression reader shared by every text format in the toolkit.
//!
//! Atoms are bare symbol/number tokens; `;` starts a comment running to end
//! of line. Every datum carries the line/column where it started so parse
//! errors can point at the offending token.

use std::fmt;

/// 1-based source position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

/// A parsed datum: an atom token or a parenthesized list.
#[derive(Debug, Clone, PartialEq)]
pub enum Sexpr {
    Atom { text: String, span: Span },
    List { items: Vec<Sexpr>, span: Span },
}

impl Sexpr {
    pub fn span(&self) -> Span {
        match self {
            Sexpr::Atom { span, .. } | Sexpr::List { span, .. } => *span,
        }
    }

    /// The token text if this datum is an atom.
    pub fn atom(&self) -> Option<&str> {
        match self {
            Sexpr::Atom { text, .. } => Some(text),
            Sexpr::List { .. } => None,
        }
    }

    /// The element slice if this datum is a list.
    pub fn list(&self) -> Option<&[Sexpr]> {
        match self {
            Sexpr::List { items, .. } => Some(items),
            Sexpr::Atom { .. } => None,
        }
    }
}

impl fmt::Display for Sexpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sexpr::Atom { text, .. } => f.write_str(text),
            Sexpr::List { items, .. } => {
                f.write_str("(")?;
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" ")?;
                    }
                    write!(f, "{item}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// Reader failure with the position it occurred at.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{span}: {message}")]
pub struct SexprError {
    pub span: Span,
    pub message: String,
}

struct Reader<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: u32,
    col: u32,
}

impl<'a> Reader<'a> {
    fn new(source: &'a str) -> Reader<'a> {
        Reader {
            chars: source.chars().peekable(),
            line: 1,
            col: 1,
        }
    }

    fn span(&self) -> Span {
        Span {
            line: self.line,
            col: self.col,
        }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn skip_blank(&mut self) {
        while let Some(&c) = self.chars.peek() {
            if c.is_whitespace() {
                self.bump();
            } else if c == ';' {
                while let Some(&c) = self.chars.peek() {
                    if c == '\n' {
                        break;
                    }
                    self.bump();
                }
            } else {
                break;
            }
        }
    }

    fn read_datum(&mut self) -> Result<Sexpr, SexprError> {
        self.skip_blank();
        let span = self.span();
        match self.chars.peek() {
            None => Err(SexprError {
                span,
                message: "unexpected end of input".into(),
            }),
            Some('(') => {
                self.bump();
                let mut items = Vec::new();
                loop {
                    self.skip_blank();
                    match self.chars.peek() {
                        Some(')') => {
                            self.bump();
                            return Ok(Sexpr::List { items, span });
                        }
                        None => {
                            return Err(SexprError {
                                span,
                                message: "unclosed list".into(),
                            })
                        }
                        Some(_) => items.push(self.read_datum()?),
                    }
                }
            }
            Some(')') => Err(SexprError {
                span,
                message: "unbalanced `)`".into(),
            }),
            Some(_) => {
                let mut text = String::new();
                while let Some(&c) = self.chars.peek() {
                    if c.is_whitespace() || c == '(' || c == ')' || c == ';' {
                        break;
                    }
                    text.push(c);
                    self.bump();
                }
                Ok(Sexpr::Atom { text, span })
            }
        }
    }
}

/// Read every top-level datum in `source`.
pub fn parse_all(source: &str) -> Result<Vec<Sexpr>, SexprError> {
    let mut reader = Reader::new(source);
    let mut out = Vec::new();
    loop {
        reader.skip_blank();
        if reader.chars.peek().is_none() {
            return Ok(out);
        }
        out.push(reader.read_datum()?);
    }
}
