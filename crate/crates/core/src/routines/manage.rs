//! Symmetric memory management and communication contexts.

use super::{Invocation, RoutineResult};
use crate::error::Result;
use crate::measure::WARMUP_ITERATIONS;
use crate::runtime::{CtxOptions, Pe, SymRef};

/// Context operations timed per measurement.
pub const CTX_REPETITIONS: usize = 64;

/// Bytes per block freed by `Shmem_Free`.
pub const FREE_BLOCK_SIZE: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) enum MemVariant {
    Malloc,
    Free,
    Realloc,
    Align,
    Calloc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) enum CtxAction {
    Create,
    Destroy,
}

pub(super) fn memory(pe: &Pe, inv: &Invocation, v: MemVariant) -> Result<RoutineResult> {
    let a = inv.args;
    let iterations = inv.at_least("iterations", a[0], 1)?;
    let baseline = pe.heap_stats();
    let (size, nb) = match v {
        MemVariant::Free => (FREE_BLOCK_SIZE, 1),
        MemVariant::Realloc => (inv.at_least("count", a[1], 2)?, 1),
        MemVariant::Calloc => (
            inv.at_least("count", a[2], 1)?,
            inv.at_least("nb", a[1], 1)?,
        ),
        _ => (inv.at_least("count", a[1], 1)?, 1),
    };

    let mut elapsed = 0.0;
    let mut bad = None;
    for round in 0..2 {
        // Round 0 is the warm-up.
        let reps = if round == 0 {
            WARMUP_ITERATIONS
        } else {
            iterations
        };
        let mut blocks: Vec<SymRef> = Vec::with_capacity(reps);
        let mut spent = 0.0;
        let outcome: Result<()> = (|| {
            match v {
                MemVariant::Free => {
                    for _ in 0..reps {
                        blocks.push(pe.sym_malloc(size)?);
                    }
                    let t0 = pe.now();
                    for b in blocks.drain(..) {
                        pe.sym_free(b);
                    }
                    spent = pe.now() - t0;
                }
                MemVariant::Realloc => {
                    for _ in 0..reps {
                        let half = pe.sym_malloc(size / 2)?;
                        let t0 = pe.now();
                        let r = pe.sym_realloc(half, size)?;
                        spent += pe.now() - t0;
                        if r.len != size {
                            bad.get_or_insert(format!("realloc returned {} bytes", r.len));
                        }
                        pe.sym_free(r);
                    }
                }
                _ => {
                    let t0 = pe.now();
                    for _ in 0..reps {
                        blocks.push(match v {
                            MemVariant::Malloc => pe.sym_malloc(size)?,
                            MemVariant::Align => pe.sym_align(2, size)?,
                            _ => pe.sym_calloc(nb, size)?,
                        });
                    }
                    spent = pe.now() - t0;
                    for b in &blocks {
                        if v == MemVariant::Align && b.offset % 2 != 0 {
                            bad.get_or_insert(format!("offset {} not aligned on 2", b.offset));
                        }
                        if v == MemVariant::Calloc && pe.read_local(*b).iter().any(|&x| x != 0) {
                            bad.get_or_insert("calloc returned non-zero memory".to_string());
                        }
                    }
                }
            }
            Ok(())
        })();
        for b in blocks {
            pe.sym_free(b);
        }
        outcome?;
        if round == 1 {
            elapsed = spent;
        }
    }
    let after = pe.heap_stats();
    if after.live_blocks != baseline.live_blocks || after.live_bytes != baseline.live_bytes {
        bad.get_or_insert(format!(
            "heap not back at baseline: {} live blocks, expected {}",
            after.live_blocks, baseline.live_blocks
        ));
    }
    if let Some(msg) = bad {
        return Err(inv.fail(msg));
    }
    Ok(RoutineResult::measured(elapsed, iterations))
}

pub(super) fn ctx(
    pe: &Pe,
    inv: &Invocation,
    action: CtxAction,
    options: CtxOptions,
) -> Result<RoutineResult> {
    let baseline = pe.live_contexts();
    let mut elapsed = 0.0;
    for reps in [WARMUP_ITERATIONS, CTX_REPETITIONS] {
        let mut ctxs = Vec::with_capacity(reps);
        let t0 = pe.now();
        for _ in 0..reps {
            ctxs.push(pe.ctx_create(options));
        }
        let t1 = pe.now();
        for c in ctxs {
            pe.ctx_destroy(c)?;
        }
        let t2 = pe.now();
        elapsed = match action {
            CtxAction::Create => t1 - t0,
            CtxAction::Destroy => t2 - t1,
        };
    }
    if pe.live_contexts() != baseline {
        return Err(inv.fail(format!(
            "{} contexts alive after the run, expected {baseline}",
            pe.live_contexts()
        )));
    }
    Ok(RoutineResult::measured(elapsed, CTX_REPETITIONS))
}
