//! Quiet, fence, wait and test.

use super::{next_pe, timed_loop, Invocation, RoutineResult};
use crate::error::Result;
use crate::measure::WARMUP_ITERATIONS;
use crate::runtime::{Cmp, Pe};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) enum OrderVariant {
    Quiet,
    Fence,
    WaitUntil,
    Test,
    QuietPut,
    FencePut,
}

pub(super) fn ordering(pe: &Pe, inv: &Invocation, v: OrderVariant) -> Result<RoutineResult> {
    use OrderVariant::*;
    let count = inv.at_least("count", inv.args[0], 1)?;
    let nb = match v {
        QuietPut | FencePut => inv.at_least("nb", inv.args[1], 1)?,
        _ => 8,
    };
    if v == WaitUntil {
        inv.need_npes(pe, 2)?;
    }
    let ctx = pe.default_ctx();
    let flag = pe.sym_calloc(1, 8)?;
    let buf = pe.sym_malloc(nb)?;
    let payload = vec![0x5Au8; nb];
    pe.barrier_all();
    pe.quiet(ctx);

    let mut failure = None;
    let elapsed = match v {
        Quiet => timed_loop(pe, count, None, || pe.quiet(ctx)).0,
        Fence => {
            let e = timed_loop(pe, count, None, || pe.fence(ctx)).0;
            pe.quiet(ctx);
            e
        }
        Test => {
            timed_loop(pe, count, None, || {
                if pe.test(flag, Cmp::Eq, 1) {
                    failure.get_or_insert("test succeeded on a condition that never holds");
                }
            })
            .0
        }
        WaitUntil => {
            let target = next_pe(pe);
            let mut total = 0.0;
            for k in 1..=(WARMUP_ITERATIONS + count) {
                // Keeps the predecessor from overwriting the flag with the
                // next round's value before this round's wait observes it.
                pe.barrier_all();
                pe.p(ctx, flag, k as u64, target);
                let t0 = pe.now();
                pe.wait_until(flag, Cmp::Ge, k as i64);
                if k > WARMUP_ITERATIONS {
                    total += pe.now() - t0;
                }
                pe.quiet(ctx);
            }
            total
        }
        QuietPut | FencePut => {
            let target = next_pe(pe);
            let mut total = 0.0;
            for i in 0..WARMUP_ITERATIONS + count {
                pe.put(ctx, buf, &payload, target);
                let t0 = pe.now();
                if v == QuietPut {
                    pe.quiet(ctx);
                } else {
                    pe.fence(ctx);
                }
                if i >= WARMUP_ITERATIONS {
                    total += pe.now() - t0;
                }
                if v == FencePut {
                    pe.quiet(ctx);
                }
            }
            total
        }
    };
    pe.barrier_all();
    if (v == QuietPut || v == FencePut) && pe.read_local(buf) != payload {
        failure.get_or_insert("put payload not delivered");
    }
    pe.barrier_all();
    pe.sym_free(buf);
    pe.sym_free(flag);
    if let Some(msg) = failure {
        return Err(inv.fail(format!("PE {}: {msg}", pe.rank())));
    }
    Ok(RoutineResult::measured(elapsed, count))
}
