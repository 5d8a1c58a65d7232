//! Recursive-descent parser for `.ski` scripts.

use super::ast::{BinOp, Expr, SkiAst, StepMode, StepSpec, Stmt};
use super::lexer::{tokenize, Tok, Token};
use crate::error::{Error, Result};

/// Words with a fixed meaning in the grammar.
pub const KEYWORDS: &[&str] = &[
    "measure",
    "begin",
    "end",
    "measurement",
    "for",
    "to",
    "step",
    "do",
    "od",
];

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    /// Whether a `begin measurement` block is open.
    in_block: bool,
}

/// Parses a script.
pub fn parse(text: &str) -> Result<SkiAst> {
    let mut p = Parser {
        toks: tokenize(text)?,
        pos: 0,
        in_block: false,
    };
    let items = p.stmts(&[])?;
    p.expect_tok(&Tok::Eof)?;
    Ok(SkiAst { items })
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if t.tok != Tok::Eof {
            self.pos += 1;
        }
        t
    }

    fn error_at(&self, t: &Token, message: impl Into<String>) -> Error {
        Error::Syntax {
            line: t.line,
            col: t.col,
            message: message.into(),
        }
    }

    fn unexpected(&self, t: &Token, wanted: &str) -> Error {
        self.error_at(t, format!("expected {wanted}, found {}", t.tok.describe()))
    }

    fn is_word(&self, word: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(s) if s == word)
    }

    fn expect_word(&mut self, word: &str) -> Result<()> {
        let t = self.next();
        match &t.tok {
            Tok::Ident(s) if s == word => Ok(()),
            _ => Err(self.unexpected(&t, &format!("`{word}`"))),
        }
    }

    fn expect_tok(&mut self, tok: &Tok) -> Result<()> {
        let t = self.next();
        if &t.tok == tok {
            Ok(())
        } else {
            Err(self.unexpected(&t, &tok.describe()))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String> {
        let t = self.next();
        match t.tok {
            Tok::Ident(ref s) if !KEYWORDS.contains(&s.as_str()) => Ok(s.clone()),
            Tok::Ident(ref s) => {
                Err(self.error_at(&t, format!("keyword `{s}` cannot be used as {what}")))
            }
            _ => Err(self.unexpected(&t, what)),
        }
    }

    fn skip_newlines(&mut self) {
        while self.peek().tok == Tok::Newline {
            self.pos += 1;
        }
    }

    /// Statements up to (not including) one of the `closers` keywords or
    /// the end of input.
    fn stmts(&mut self, closers: &[&str]) -> Result<Vec<Stmt>> {
        let mut out = Vec::new();
        loop {
            self.skip_newlines();
            if self.peek().tok == Tok::Eof || closers.iter().any(|c| self.is_word(c)) {
                return Ok(out);
            }
            out.push(self.stmt()?);
            let t = self.peek().clone();
            match t.tok {
                Tok::Newline | Tok::Eof => {}
                Tok::Ident(ref s) if closers.contains(&s.as_str()) => {}
                _ => return Err(self.unexpected(&t, "end of line")),
            }
        }
    }

    fn stmt(&mut self) -> Result<Stmt> {
        let t = self.peek().clone();
        let Tok::Ident(word) = &t.tok else {
            return Err(self.unexpected(&t, "a statement"));
        };
        match word.as_str() {
            "measure" => self.measure(),
            "begin" => self.block(),
            "for" => self.for_loop(),
            w if KEYWORDS.contains(&w) => {
                Err(self.error_at(&t, format!("unexpected keyword `{w}`")))
            }
            _ => {
                let name = self.ident("a name")?;
                let t = self.next();
                match t.tok {
                    Tok::Assign => Ok(Stmt::Assign {
                        name,
                        value: self.expr()?,
                    }),
                    Tok::LParen => Ok(Stmt::Call {
                        name,
                        args: self.args()?,
                    }),
                    _ => Err(self.unexpected(&t, "`=` or `(`")),
                }
            }
        }
    }

    fn measure(&mut self) -> Result<Stmt> {
        self.expect_word("measure")?;
        let comm = self.ident("a communicator name")?;
        self.expect_tok(&Tok::Colon)?;
        let routine = self.ident("a routine name")?;
        self.expect_tok(&Tok::LParen)?;
        let args = self.args()?;
        Ok(Stmt::Measure {
            comm,
            routine,
            args,
        })
    }

    fn block(&mut self) -> Result<Stmt> {
        let start = self.peek().clone();
        self.expect_word("begin")?;
        self.expect_word("measurement")?;
        if self.in_block {
            return Err(self.error_at(&start, "measurement blocks cannot be nested"));
        }
        let t = self.next();
        let Tok::Str(title) = t.tok else {
            return Err(self.unexpected(&t, "a quoted block title"));
        };
        self.in_block = true;
        let body = self.stmts(&["end"]);
        self.in_block = false;
        let body = body?;
        let t = self.peek().clone();
        if t.tok == Tok::Eof {
            return Err(self.error_at(&t, "missing `end measurement`"));
        }
        self.expect_word("end")?;
        self.expect_word("measurement")?;
        Ok(Stmt::MeasureBlock { title, body })
    }

    fn for_loop(&mut self) -> Result<Stmt> {
        self.expect_word("for")?;
        let var = self.ident("a loop variable")?;
        self.expect_tok(&Tok::Assign)?;
        let from = self.expr()?;
        self.expect_word("to")?;
        let to = self.expr()?;
        self.expect_word("step")?;
        let mode = if self.peek().tok == Tok::Star {
            self.next();
            StepMode::Multiplicative
        } else {
            StepMode::Additive
        };
        let factor = self.expr()?;
        self.expect_word("do")?;
        let body = self.stmts(&["od"])?;
        let t = self.peek().clone();
        if t.tok == Tok::Eof {
            return Err(self.error_at(&t, "missing `od`"));
        }
        self.expect_word("od")?;
        Ok(Stmt::For {
            var,
            from,
            to,
            step: StepSpec { mode, factor },
            body,
        })
    }

    /// Comma-separated arguments after an opening parenthesis.
    fn args(&mut self) -> Result<Vec<Expr>> {
        let mut out = Vec::new();
        if self.peek().tok == Tok::RParen {
            self.next();
            return Ok(out);
        }
        loop {
            out.push(self.expr()?);
            let t = self.next();
            match t.tok {
                Tok::Comma => {}
                Tok::RParen => return Ok(out),
                _ => return Err(self.unexpected(&t, "`,` or `)`")),
            }
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek().tok {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.next();
            lhs = Expr::bin(lhs, op, self.term()?);
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek().tok {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.next();
            lhs = Expr::bin(lhs, op, self.factor()?);
        }
    }

    fn factor(&mut self) -> Result<Expr> {
        let t = self.peek().clone();
        match t.tok {
            Tok::Number(n) => {
                self.next();
                Ok(Expr::Num(n))
            }
            Tok::LParen => {
                self.next();
                let e = self.expr()?;
                self.expect_tok(&Tok::RParen)?;
                Ok(e)
            }
            Tok::Ident(_) => {
                let name = self.ident("a value")?;
                if self.peek().tok == Tok::LParen {
                    self.next();
                    Ok(Expr::Call(name, self.args()?))
                } else {
                    Ok(Expr::Var(name))
                }
            }
            _ => Err(self.unexpected(&t, "a number, name or `(`")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn num(n: f64) -> Expr {
        Expr::Num(n)
    }

    #[test]
    fn set_unit_call() {
        let ast = parse("set_unit(1000000000)").unwrap();
        assert_eq!(
            ast.items,
            vec![Stmt::Call {
                name: "set_unit".into(),
                args: vec![num(1e9)]
            }]
        );
    }

    #[test]
    fn precedence_and_associativity() {
        let ast = parse("x = 1 - 2 - 3 * 4 / 5").unwrap();
        let want = Expr::bin(
            Expr::bin(num(1.0), BinOp::Sub, num(2.0)),
            BinOp::Sub,
            Expr::bin(
                Expr::bin(num(3.0), BinOp::Mul, num(4.0)),
                BinOp::Div,
                num(5.0),
            ),
        );
        assert_eq!(
            ast.items,
            vec![Stmt::Assign {
                name: "x".into(),
                value: want
            }]
        );
    }

    #[test]
    fn empty_for_body_on_one_line() {
        let ast = parse("for count = 1 to 8 step *2 do od").unwrap();
        let Stmt::For { step, body, .. } = &ast.items[0] else {
            panic!("not a loop")
        };
        assert_eq!(step.mode, StepMode::Multiplicative);
        assert!(body.is_empty());
    }

    #[test]
    fn additive_step() {
        let ast = parse("for c = 2 to 10 step 4 do\nod\n").unwrap();
        let Stmt::For { step, .. } = &ast.items[0] else {
            panic!("not a loop")
        };
        assert_eq!(step.mode, StepMode::Additive);
        assert_eq!(step.factor, num(4.0));
    }

    #[test]
    fn missing_step_is_a_syntax_error() {
        let err = parse("for count = 1 to 8 do").unwrap_err();
        assert!(
            matches!(
                err,
                Error::Syntax {
                    line: 1,
                    col: 20,
                    ..
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn nested_blocks_are_rejected() {
        let src =
            "begin measurement \"a\"\nbegin measurement \"b\"\nend measurement\nend measurement\n";
        let err = parse(src).unwrap_err();
        assert!(
            matches!(
                err,
                Error::Syntax {
                    line: 2,
                    col: 1,
                    ..
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn statements_need_line_breaks() {
        assert!(parse("a = 1 b = 2").is_err());
        assert!(parse("a = 1\n\n\nb = 2\n").is_ok());
    }

    #[test]
    fn unknown_keyword_is_reported_with_location() {
        let err = parse("x = 1\n  begin measurment \"t\"\n").unwrap_err();
        assert!(
            matches!(
                err,
                Error::Syntax {
                    line: 2,
                    col: 9,
                    ..
                }
            ),
            "{err}"
        );
        assert!(parse("od").is_err());
        assert!(parse("measure = 3").is_err());
    }

    #[test]
    fn missing_terminators() {
        assert!(parse("for i = 1 to 2 step 1 do\n").is_err());
        assert!(parse("begin measurement \"t\"\n").is_err());
    }

    #[test]
    fn printer_round_trips() {
        let src = "a = (1 + 2) * 3 - 4 / (5 - 6)\nbegin measurement \"x y\"\n  for c = 1 to a / 2 step *sqrt(2) do\n    measure w : R(c, 0.5)\n  od\nend measurement\nset_unit(1000)\n";
        let ast = parse(src).unwrap();
        let printed = ast.to_string();
        assert_eq!(printed, src);
        assert_eq!(parse(&printed).unwrap(), ast);
    }
}
