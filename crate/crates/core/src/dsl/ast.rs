//! Script syntax tree and its canonical printer.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(String),
    Call(String, Vec<Expr>),
    Bin(Box<Expr>, BinOp, Box<Expr>),
}

impl Expr {
    pub fn bin(l: Expr, op: BinOp, r: Expr) -> Expr {
        Expr::Bin(Box::new(l), op, Box::new(r))
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        match self {
            Expr::Num(n) => write!(f, "{n}"),
            Expr::Var(v) => f.write_str(v),
            Expr::Call(name, args) => {
                write!(f, "{name}(")?;
                write_list(f, args)?;
                f.write_str(")")
            }
            Expr::Bin(l, op, r) => {
                let p = op.precedence();
                if p < min {
                    f.write_str("(")?;
                }
                l.fmt_prec(f, p)?;
                write!(f, " {} ", op.symbol())?;
                r.fmt_prec(f, p + 1)?;
                if p < min {
                    f.write_str(")")?;
                }
                Ok(())
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

fn write_list(f: &mut fmt::Formatter<'_>, items: &[Expr]) -> fmt::Result {
    for (i, e) in items.iter().enumerate() {
        if i > 0 {
            f.write_str(", ")?;
        }
        write!(f, "{e}")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepMode {
    Multiplicative,
    Additive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepSpec {
    pub mode: StepMode,
    pub factor: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stmt {
    Assign {
        name: String,
        value: Expr,
    },
    Call {
        name: String,
        args: Vec<Expr>,
    },
    Measure {
        comm: String,
        routine: String,
        args: Vec<Expr>,
    },
    MeasureBlock {
        title: String,
        body: Vec<Stmt>,
    },
    For {
        var: String,
        from: Expr,
        to: Expr,
        step: StepSpec,
        body: Vec<Stmt>,
    },
}

impl Stmt {
    fn write(&self, f: &mut fmt::Formatter<'_>, depth: usize) -> fmt::Result {
        let pad = "  ".repeat(depth);
        match self {
            Stmt::Assign { name, value } => writeln!(f, "{pad}{name} = {value}"),
            Stmt::Call { name, args } => {
                write!(f, "{pad}{name}(")?;
                write_list(f, args)?;
                writeln!(f, ")")
            }
            Stmt::Measure {
                comm,
                routine,
                args,
            } => {
                write!(f, "{pad}measure {comm} : {routine}(")?;
                write_list(f, args)?;
                writeln!(f, ")")
            }
            Stmt::MeasureBlock { title, body } => {
                writeln!(f, "{pad}begin measurement \"{title}\"")?;
                for s in body {
                    s.write(f, depth + 1)?;
                }
                writeln!(f, "{pad}end measurement")
            }
            Stmt::For {
                var,
                from,
                to,
                step,
                body,
            } => {
                let star = match step.mode {
                    StepMode::Multiplicative => "*",
                    StepMode::Additive => "",
                };
                writeln!(
                    f,
                    "{pad}for {var} = {from} to {to} step {star}{} do",
                    step.factor
                )?;
                for s in body {
                    s.write(f, depth + 1)?;
                }
                writeln!(f, "{pad}od")
            }
        }
    }
}

/// A parsed script.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SkiAst {
    pub items: Vec<Stmt>,
}

impl fmt::Display for SkiAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.items {
            s.write(f, 0)?;
        }
        Ok(())
    }
}
