use thiserror::Error;

use super::{BinOp, Expr, Func, RhsExpr, Span};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("delay offset {value} outside [{lo}, 0] at byte {offset}")]
    DelayOutOfRange { offset: usize, value: f64, lo: f64 },
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    LParen,
    RParen,
    Comma,
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    End,
}

fn lex(src: &str) -> Result<Vec<(Tok, Span)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let single = match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'(' => Some(Tok::LParen),
            b')' => Some(Tok::RParen),
            b',' => Some(Tok::Comma),
            b'+' => Some(Tok::Plus),
            b'-' => Some(Tok::Minus),
            b'*' => Some(Tok::Star),
            b'/' => Some(Tok::Slash),
            b'^' => Some(Tok::Caret),
            _ => None,
        };
        if let Some(tok) = single {
            i += 1;
            out.push((tok, Span { start, end: i }));
            continue;
        }
        if c.is_ascii_digit() || c == b'.' {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let text = &src[start..i];
            let value: f64 = text.parse().map_err(|_| ParseError::Syntax {
                offset: start,
                message: format!("malformed number '{text}'"),
            })?;
            out.push((Tok::Num(value), Span { start, end: i }));
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((Tok::Ident(src[start..i].to_string()), Span { start, end: i }));
            continue;
        }
        let ch = src[start..].chars().next().unwrap();
        return Err(ParseError::Syntax {
            offset: start,
            message: format!("unexpected character '{ch}'"),
        });
    }
    out.push((Tok::End, Span { start: src.len(), end: src.len() }));
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, Span)>,
    pos: usize,
    history: f64,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn span(&self) -> Span {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, Span) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError::Syntax {
            offset: self.span().start,
            message: message.into(),
        })
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<Span, ParseError> {
        if *self.peek() == tok {
            Ok(self.bump().1)
        } else {
            self.error(format!("expected {what}"))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let start = self.span().start;
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            let end = self.toks[self.pos.saturating_sub(1)].1.end;
            lhs = Expr::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
                span: Span { start, end },
            };
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let start = self.span().start;
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.factor()?;
            let end = self.toks[self.pos.saturating_sub(1)].1.end;
            lhs = Expr::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
                span: Span { start, end },
            };
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        let start = self.span().start;
        let base = self.unary()?;
        if *self.peek() == Tok::Caret {
            self.bump();
            let exp = self.factor()?;
            let end = self.toks[self.pos.saturating_sub(1)].1.end;
            return Ok(Expr::Binary {
                op: BinOp::Pow,
                lhs: Box::new(base),
                rhs: Box::new(exp),
                span: Span { start, end },
            });
        }
        Ok(base)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Minus {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.atom()
    }

    fn signed_number(&mut self) -> Result<f64, ParseError> {
        let sign = match self.peek() {
            Tok::Minus => {
                self.bump();
                -1.0
            }
            Tok::Plus => {
                self.bump();
                1.0
            }
            _ => 1.0,
        };
        match self.bump() {
            (Tok::Num(v), _) => Ok(sign * v),
            _ => {
                self.pos -= 1;
                self.error("expected a constant delay offset")
            }
        }
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let (tok, span) = self.bump();
        match tok {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(e)
            }
            Tok::Ident(name) => match name.as_str() {
                "pi" => Ok(Expr::Pi),
                "e" => Ok(Expr::E),
                "t" => Ok(Expr::Time),
                "x" => {
                    self.expect(Tok::LParen, "'(' after x")?;
                    let at = self.span().start;
                    let c = self.signed_number()?;
                    self.expect(Tok::RParen, "')'")?;
                    if !(c <= 0.0 && c >= -self.history) {
                        return Err(ParseError::DelayOutOfRange {
                            offset: at,
                            value: c,
                            lo: -self.history,
                        });
                    }
                    Ok(Expr::Delay(c))
                }
                "beta" => {
                    self.expect(Tok::LParen, "'(' after beta")?;
                    match self.bump() {
                        (Tok::Ident(v), _) if v == "t" => {}
                        _ => {
                            self.pos -= 1;
                            return self.error("beta accepts only the argument 't'");
                        }
                    }
                    self.expect(Tok::RParen, "')'")?;
                    Ok(Expr::Beta)
                }
                other => match Func::from_name(other) {
                    Some(func) => {
                        self.expect(Tok::LParen, "'(' after function name")?;
                        let mut args = vec![self.expr()?];
                        if *self.peek() == Tok::Comma {
                            self.bump();
                            args.push(self.expr()?);
                        }
                        let close = self.expect(Tok::RParen, "')'")?;
                        if args.len() != func.arity() {
                            return Err(ParseError::Syntax {
                                offset: span.start,
                                message: format!(
                                    "{} takes {} argument(s), got {}",
                                    func.name(),
                                    func.arity(),
                                    args.len()
                                ),
                            });
                        }
                        Ok(Expr::Call {
                            func,
                            args,
                            span: Span {
                                start: span.start,
                                end: close.end,
                            },
                        })
                    }
                    None => Err(ParseError::Syntax {
                        offset: span.start,
                        message: format!("unknown identifier '{other}'"),
                    }),
                },
            },
            Tok::End => Err(ParseError::Syntax {
                offset: span.start,
                message: "unexpected end of input".into(),
            }),
            _ => Err(ParseError::Syntax {
                offset: span.start,
                message: "expected an operand".into(),
            }),
        }
    }
}

/// Parses `source`, checking every delay offset against the history length `r`.
pub fn parse(source: &str, r: f64) -> Result<RhsExpr, ParseError> {
    let toks = lex(source)?;
    let mut p = Parser {
        toks,
        pos: 0,
        history: r,
    };
    let root = p.expr()?;
    if *p.peek() != Tok::End {
        return p.error("unexpected trailing input");
    }
    Ok(RhsExpr {
        root,
        source: source.to_string(),
    })
}
