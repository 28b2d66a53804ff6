use super::{BinOp, Expr, ExprError, Func};

pub const MAX_SOURCE_BYTES: usize = 64 * 1024;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(v) => format!("number {v:?}"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Caret => "`^`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::End => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Pos {
    line: usize,
    column: usize,
}

fn lex(src: &str) -> Result<Vec<(Tok, Pos)>, ExprError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut line, mut column) = (1usize, 1usize);
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, column };
        if c == '\n' {
            line += 1;
            column = 1;
            i += 1;
            continue;
        }
        if c.is_whitespace() {
            column += 1;
            i += 1;
            continue;
        }
        let single = match c {
            '+' => Some(Tok::Plus),
            '-' | '\u{2212}' => Some(Tok::Minus),
            '*' => Some(Tok::Star),
            '/' => Some(Tok::Slash),
            '^' => Some(Tok::Caret),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            ',' => Some(Tok::Comma),
            _ => None,
        };
        if let Some(t) = single {
            out.push((t, pos));
            column += 1;
            i += 1;
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            if i < chars.len() && chars[i] == '.' {
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let value: f64 = text.parse().map_err(|_| ExprError::Syntax {
                line,
                column,
                expected: vec!["number".into()],
                found: text.clone(),
            })?;
            if !value.is_finite() {
                return Err(ExprError::Syntax {
                    line,
                    column,
                    expected: vec!["finite number".into()],
                    found: text,
                });
            }
            column += i - start;
            out.push((Tok::Num(value), pos));
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let text: String = chars[start..i].iter().collect();
            column += i - start;
            out.push((Tok::Ident(text), pos));
            continue;
        }
        return Err(ExprError::Syntax {
            line,
            column,
            expected: vec!["expression".into()],
            found: format!("`{c}`"),
        });
    }
    out.push((Tok::End, Pos { line, column }));
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(Tok, Pos)>,
    at: usize,
    allowed: Option<&'a [&'a str]>,
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn pos(&self) -> Pos {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> (Tok, Pos) {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn error(&self, expected: &[&str]) -> ExprError {
        let Pos { line, column } = self.pos();
        ExprError::Syntax {
            line,
            column,
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: self.peek().describe(),
        }
    }

    fn expect(&mut self, tok: Tok, label: &str) -> Result<(), ExprError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            Err(self.error(&[label]))
        }
    }

    // expr := term (('+' | '-') term)*
    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    // term := unary (('*' | '/') unary)*
    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    // unary := '-' unary | power      (so -2^2 == -(2^2))
    fn unary(&mut self) -> Result<Expr, ExprError> {
        if *self.peek() == Tok::Minus {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    // power := primary ('^' unary)?   (right associative)
    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.primary()?;
        if *self.peek() == Tok::Caret {
            self.bump();
            let exponent = self.unary()?;
            return Ok(Expr::Binary(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(Expr::Num(v))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.bump();
                if *self.peek() == Tok::LParen {
                    let func = Func::from_name(&name).ok_or(ExprError::UnknownIdentifier {
                        name: name.clone(),
                        line: pos.line,
                        column: pos.column,
                    })?;
                    self.bump();
                    let mut args = vec![self.expr()?];
                    while *self.peek() == Tok::Comma {
                        self.bump();
                        args.push(self.expr()?);
                    }
                    self.expect(Tok::RParen, "`)` or `,`")?;
                    if args.len() != func.arity() {
                        return Err(ExprError::Syntax {
                            line: pos.line,
                            column: pos.column,
                            expected: vec![format!("{} argument(s) to {}", func.arity(), func.name())],
                            found: format!("{} argument(s)", args.len()),
                        });
                    }
                    return Ok(Expr::Call(func, args));
                }
                let canonical = if name == "\u{3be}" { "xi".to_string() } else { name };
                if let Some(allowed) = self.allowed {
                    if !allowed.contains(&canonical.as_str()) {
                        return Err(ExprError::UnknownIdentifier {
                            name: canonical,
                            line: pos.line,
                            column: pos.column,
                        });
                    }
                }
                Ok(Expr::Var(canonical))
            }
            _ => Err(self.error(&["number", "identifier", "`(`", "`-`"])),
        }
    }
}

fn parse_inner(src: &str, allowed: Option<&[&str]>) -> Result<Expr, ExprError> {
    if src.len() > MAX_SOURCE_BYTES {
        return Err(ExprError::TooLong { bytes: src.len() });
    }
    let toks = lex(src)?;
    let mut p = Parser { toks, at: 0, allowed };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return Err(p.error(&["operator", "end of input"]));
    }
    Ok(e)
}

/// Parse an expression; any identifier is accepted as a variable.
pub fn parse(src: &str) -> Result<Expr, ExprError> {
    parse_inner(src, None)
}

/// Parse an expression whose free identifiers must come from `allowed`.
/// The Greek letter `ξ` is read as `xi`.
pub fn parse_with(src: &str, allowed: &[&str]) -> Result<Expr, ExprError> {
    parse_inner(src, Some(allowed))
}
