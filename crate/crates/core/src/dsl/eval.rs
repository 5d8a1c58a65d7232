//! SPMD evaluation of a parsed script.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use super::ast::{BinOp, Expr, SkiAst, StepMode, StepSpec, Stmt};
use crate::error::{Error, Result};
use crate::measure::{
    run_measurement, sync_clocks, ClockSync, MeasureEnv, MeasurementRecord, DEFAULT_UNIT,
};
use crate::routines::{self, RoutineDef};
use crate::runtime::{Pe, World, WorldConfig, MIB};

/// Loops producing more values than this are rejected as runaway ranges.
const MAX_LOOP_VALUES: usize = 1 << 20;

/// Name of the predefined world communicator.
pub const WORLD_COMM: &str = "MPI_COMM_WORLD";

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    Num(f64),
    /// The world team.
    World,
}

/// Interpreter state shared by every statement of a script.
#[derive(Debug, Clone)]
pub struct Env {
    pub bindings: HashMap<String, Value>,
    /// Timings are reported in seconds times `unit`.
    pub unit: f64,
    /// Element capacity of the staging buffer used for strided transfers.
    pub skampi_buffer: usize,
}

impl Default for Env {
    fn default() -> Self {
        Env::new(MIB)
    }
}

impl Env {
    pub fn new(skampi_buffer: usize) -> Self {
        let mut bindings = HashMap::new();
        bindings.insert(WORLD_COMM.to_string(), Value::World);
        Env {
            bindings,
            unit: DEFAULT_UNIT,
            skampi_buffer,
        }
    }

    fn lookup(&self, name: &str) -> Result<Value> {
        self.bindings
            .get(name)
            .copied()
            .ok_or_else(|| Error::Script(format!("undefined variable `{name}`")))
    }

    fn num(&self, e: &Expr) -> Result<f64> {
        match self.eval(e)? {
            Value::Num(n) => Ok(n),
            Value::World => Err(Error::Script(format!(
                "`{e}` is a communicator, not a number"
            ))),
        }
    }

    pub fn eval(&self, e: &Expr) -> Result<Value> {
        Ok(match e {
            Expr::Num(n) => Value::Num(*n),
            Expr::Var(v) => self.lookup(v)?,
            Expr::Call(name, args) => match (name.as_str(), args.as_slice()) {
                ("sqrt", [x]) => {
                    let x = self.num(x)?;
                    if x < 0.0 {
                        return Err(Error::Script(format!("sqrt of negative value {x}")));
                    }
                    Value::Num(x.sqrt())
                }
                ("sqrt", _) => return Err(Error::Script("sqrt takes exactly one argument".into())),
                _ => return Err(Error::Script(format!("unknown function `{name}`"))),
            },
            Expr::Bin(l, op, r) => {
                let (a, b) = (self.num(l)?, self.num(r)?);
                let v = match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                };
                if !v.is_finite() {
                    return Err(Error::Script(format!(
                        "`{e}` does not evaluate to a finite number"
                    )));
                }
                Value::Num(v)
            }
        })
    }

    /// Evaluates `e` where an integer is consumed.
    fn int(&self, e: &Expr) -> Result<i64> {
        to_int(self.num(e)?)
            .ok_or_else(|| Error::Script(format!("`{e}` is not a representable integer")))
    }
}

/// Rounds to the nearest integer, ties away from negative infinity.
pub fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

fn to_int(x: f64) -> Option<i64> {
    let r = round_half_up(x);
    (r.is_finite() && r.abs() < 9.0e15).then_some(r as i64)
}

/// Values taken by a loop variable: rounded, deduplicated, strictly
/// increasing and never above `to`.
pub fn expand_for(from: f64, to: f64, mode: StepMode, factor: f64) -> Result<Vec<i64>> {
    let bad = |msg: String| Err(Error::Script(msg));
    if !from.is_finite() || !to.is_finite() || !factor.is_finite() {
        return bad("loop bounds and step must be finite".into());
    }
    let (Some(start), Some(end)) = (to_int(from), to_int(to)) else {
        return bad("loop bounds are out of range".into());
    };
    match mode {
        StepMode::Multiplicative if factor <= 1.0 => {
            return bad(format!(
                "multiplicative step {factor} must be greater than 1"
            ));
        }
        StepMode::Multiplicative if start < 1 => {
            return bad(format!(
                "multiplicative loop must start at 1 or more, got {from}"
            ));
        }
        StepMode::Additive if factor <= 0.0 => {
            return bad(format!("additive step {factor} must be greater than 0"));
        }
        _ => {}
    }
    let mut out: Vec<i64> = Vec::new();
    let mut x = start as f64;
    while x <= end as f64 {
        let v = round_half_up(x) as i64;
        if out.last() != Some(&v) {
            if out.len() == MAX_LOOP_VALUES {
                return bad(format!("loop produces more than {MAX_LOOP_VALUES} values"));
            }
            out.push(v);
        }
        x = match mode {
            StepMode::Multiplicative => x * factor,
            StepMode::Additive => x + factor,
        };
    }
    Ok(out)
}

/// A fully evaluated `measure` statement.
#[derive(Debug, Clone)]
pub struct MeasureCall<'a> {
    pub routine: &'static RoutineDef,
    pub args: Vec<i64>,
    pub block: u64,
    pub title: &'a str,
    pub unit: f64,
    pub skampi_buffer: usize,
}

struct Walker<'f> {
    env: Env,
    next_block: u64,
    on_measure: &'f mut dyn FnMut(&MeasureCall) -> Result<()>,
}

impl Walker<'_> {
    fn stmts(&mut self, body: &[Stmt], block: Option<(u64, &str)>) -> Result<()> {
        for s in body {
            self.stmt(s, block)?;
        }
        Ok(())
    }

    fn stmt(&mut self, s: &Stmt, block: Option<(u64, &str)>) -> Result<()> {
        match s {
            Stmt::Assign { name, value } => {
                if name == WORLD_COMM {
                    return Err(Error::Script(format!(
                        "`{WORLD_COMM}` cannot be reassigned"
                    )));
                }
                let v = self.env.eval(value)?;
                self.env.bindings.insert(name.clone(), v);
            }
            Stmt::Call { name, args } => self.call(name, args)?,
            Stmt::Measure {
                comm,
                routine,
                args,
            } => self.measure(comm, routine, args, block)?,
            Stmt::MeasureBlock { title, body } => {
                if block.is_some() {
                    return Err(Error::Script("measurement blocks cannot be nested".into()));
                }
                let id = self.take_block();
                self.stmts(body, Some((id, title)))?;
            }
            Stmt::For {
                var,
                from,
                to,
                step: StepSpec { mode, factor },
                body,
            } => {
                let values = expand_for(
                    self.env.num(from)?,
                    self.env.num(to)?,
                    *mode,
                    self.env.num(factor)?,
                )?;
                for v in values {
                    self.env.bindings.insert(var.clone(), Value::Num(v as f64));
                    self.stmts(body, block)?;
                }
            }
        }
        Ok(())
    }

    fn take_block(&mut self) -> u64 {
        self.next_block += 1;
        self.next_block - 1
    }

    fn call(&mut self, name: &str, args: &[Expr]) -> Result<()> {
        let [arg] = args else {
            return match name {
                "set_unit" | "set_skampi_buffer" => {
                    Err(Error::Script(format!("{name} takes exactly one argument")))
                }
                _ => Err(Error::Script(format!("unknown command `{name}`"))),
            };
        };
        match name {
            "set_unit" => {
                let u = self.env.num(arg)?;
                if u <= 0.0 {
                    return Err(Error::Script(format!(
                        "set_unit needs a positive value, got {u}"
                    )));
                }
                self.env.unit = u;
            }
            "set_skampi_buffer" => {
                let n = self.env.int(arg)?;
                if n < 1 {
                    return Err(Error::Script(format!(
                        "set_skampi_buffer needs a positive size, got {n}"
                    )));
                }
                self.env.skampi_buffer = n as usize;
            }
            _ => return Err(Error::Script(format!("unknown command `{name}`"))),
        }
        Ok(())
    }

    fn measure(
        &mut self,
        comm: &str,
        routine: &str,
        args: &[Expr],
        block: Option<(u64, &str)>,
    ) -> Result<()> {
        match self.env.lookup(comm)? {
            Value::World => {}
            Value::Num(_) => {
                return Err(Error::Script(format!(
                    "`{comm}` is not a communicator; measurements run in {WORLD_COMM}"
                )))
            }
        }
        let def = routines::lookup(routine).ok_or_else(|| Error::UnknownRoutine {
            name: routine.to_string(),
            suggestions: routines::suggestions(routine)
                .into_iter()
                .map(String::from)
                .collect(),
        })?;
        if args.len() != def.arity() {
            return Err(Error::Arity {
                name: def.name.to_string(),
                expected: def.arity(),
                got: args.len(),
            });
        }
        let args = args
            .iter()
            .map(|a| self.env.int(a))
            .collect::<Result<Vec<_>>>()?;
        if let Some((i, v)) = args.iter().enumerate().find(|(_, v)| **v < 0) {
            return Err(Error::routine(
                def.name,
                format!("argument `{}` is negative ({v})", def.params[i]),
            ));
        }
        def.check_buffer(&args, self.env.skampi_buffer)?;
        let (block, title) = match block {
            Some(b) => b,
            None => (self.take_block(), def.name),
        };
        (self.on_measure)(&MeasureCall {
            routine: def,
            args,
            block,
            title,
            unit: self.env.unit,
            skampi_buffer: self.env.skampi_buffer,
        })
    }
}

/// Walks `ast`, calling `on_measure` for every measurement in program
/// order. Returns the final environment.
pub fn evaluate(
    ast: &SkiAst,
    env: Env,
    on_measure: &mut dyn FnMut(&MeasureCall) -> Result<()>,
) -> Result<Env> {
    let mut w = Walker {
        env,
        next_block: 0,
        on_measure,
    };
    w.stmts(&ast.items, None)?;
    Ok(w.env)
}

/// Checks a script without running anything and returns the number of
/// measurements it would perform.
pub fn validate(ast: &SkiAst, env: Env) -> Result<usize> {
    let mut n = 0;
    evaluate(ast, env, &mut |_| {
        n += 1;
        Ok(())
    })?;
    Ok(n)
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub world: WorldConfig,
    pub seed: u64,
    /// Initial `skampi_buffer`, before any `set_skampi_buffer`.
    pub skampi_buffer: usize,
    /// Checked at every measurement boundary; when set, the run stops.
    pub stop: Option<Arc<AtomicBool>>,
}

impl RunOptions {
    pub fn new(world: WorldConfig) -> Self {
        RunOptions {
            world,
            seed: 0,
            skampi_buffer: MIB,
            stop: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<MeasurementRecord>,
    /// Unit in effect at the end of the script.
    pub unit: f64,
}

/// Validates `ast`, then runs it on a fresh world. Every PE walks the
/// script; PE 0 collects the records.
pub fn run_script(ast: &SkiAst, opts: &RunOptions) -> Result<RunOutput> {
    validate(ast, Env::new(opts.skampi_buffer))?;
    let per_pe = World::run(opts.world.clone(), |pe| run_on_pe(pe, ast, opts))?;
    per_pe.into_iter().next().expect("world has PE 0")
}

fn run_on_pe(pe: &Pe, ast: &SkiAst, opts: &RunOptions) -> Result<RunOutput> {
    let sync: ClockSync = sync_clocks(pe);
    let world = pe.team_world();
    let mut records = Vec::new();
    let env = evaluate(ast, Env::new(opts.skampi_buffer), &mut |call| {
        if let Some(stop) = &opts.stop {
            let flag = (pe.rank() == 0).then(|| vec![stop.load(Ordering::SeqCst) as u8]);
            if pe.bcast_bytes(&world, 0, flag)[0] != 0 {
                return Err(Error::Interrupted);
            }
        }
        let menv = MeasureEnv {
            sync: &sync,
            skampi_buffer: call.skampi_buffer,
            seed: opts.seed,
        };
        log::debug!("measuring {}{:?}", call.routine.name, call.args);
        if let Some(rec) = run_measurement(
            pe,
            call.routine,
            &call.args,
            &menv,
            call.block,
            call.title,
            call.unit,
        )? {
            records.push(rec);
        }
        Ok(())
    })?;
    Ok(RunOutput {
        records,
        unit: env.unit,
    })
}
