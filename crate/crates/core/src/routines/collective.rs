//! Broadcast, reduction, collect, all-to-all, barrier and sync.

use super::{pattern, timed_loop, Invocation, RoutineResult, ALLTOALLS_STRIDE};
use crate::error::Result;
use crate::measure::{synchronized_start, WARMUP_ITERATIONS};
use crate::runtime::{Cmp, Pe, Team, ELEM};

/// Synchronized repetitions of the `*_Synchro` routines.
pub const SYNCHRO_REPETITIONS: usize = 8;

/// How calls are separated while timing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) enum Method {
    /// One call after a synchronized start.
    Single,
    /// Every PE is root once, back to back.
    Rounds,
    /// Root-timed with an explicit acknowledgment per participant.
    Acknowledged,
    /// Back-to-back calls.
    Consecutive,
    /// A barrier after each call; the barrier's own cost is removed.
    Barrier,
    /// [`SYNCHRO_REPETITIONS`] calls, each after a synchronized start.
    Synchro,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) enum CollectKind {
    Collect,
    Fcollect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) enum AllToAllKind {
    Contiguous,
    Strided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) enum SyncKind {
    Barrier,
    Sync,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) enum Scope {
    All,
    Half,
}

/// Times `op` according to `method`. Returns (elapsed, iterations).
fn scaffold(
    pe: &Pe,
    inv: &Invocation,
    method: Method,
    iterations: usize,
    mut op: impl FnMut(),
) -> Result<(f64, usize)> {
    match method {
        Method::Consecutive => Ok((timed_loop(pe, iterations, None, &mut op).0, iterations)),
        Method::Barrier => {
            let (bar, _) = timed_loop(pe, iterations, None, || pe.barrier_all());
            let (total, _) = timed_loop(pe, iterations, None, || {
                op();
                pe.barrier_all();
            });
            Ok(((total - bar).max(0.0), iterations))
        }
        Method::Single => {
            for _ in 0..WARMUP_ITERATIONS {
                op();
            }
            synchronized_start(pe, inv.env.sync)?;
            let t0 = pe.now();
            op();
            Ok((pe.now() - t0, 1))
        }
        Method::Synchro => {
            op();
            let mut total = 0.0;
            for _ in 0..SYNCHRO_REPETITIONS {
                synchronized_start(pe, inv.env.sync)?;
                let t0 = pe.now();
                op();
                total += pe.now() - t0;
            }
            Ok((total, SYNCHRO_REPETITIONS))
        }
        Method::Rounds | Method::Acknowledged => unreachable!("broadcast-only method"),
    }
}

fn check(inv: &Invocation, pe: &Pe, ok: bool, what: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(inv.fail(format!(
            "integrity check failed on PE {}: {what}",
            pe.rank()
        )))
    }
}

/// (iterations, count) for the consecutive/barrier forms, count alone for
/// the synchronized form.
fn iterations_and_count(inv: &Invocation, method: Method) -> Result<(usize, usize)> {
    let (it, count) = if method == Method::Synchro {
        (SYNCHRO_REPETITIONS, inv.args[0])
    } else {
        (inv.args[0], inv.args[1])
    };
    inv.at_least("iterations", it, 1)?;
    inv.at_least("count", count, 1)?;
    Ok((it, count))
}

pub(super) fn bcast(pe: &Pe, inv: &Invocation, method: Method) -> Result<RoutineResult> {
    let count = inv.at_least("count", inv.args[0], 1)?;
    let root = inv.args[1];
    let n = pe.npes();
    if root >= n {
        return Err(inv.fail(format!("root {root} out of range for {n} PEs")));
    }
    let team = pe.team_world();
    let me = pe.rank();
    let seed = inv.env.seed;
    let rounds = if method == Method::Rounds { n } else { 1 };
    let src = pe.sym_malloc(count)?;
    let dst = pe.sym_calloc(rounds * count, 1)?;
    let flags = pe.sym_calloc(3, ELEM)?;
    pe.write_local(src, &pattern(seed, me, count));
    pe.barrier_all();

    let single =
        |slot: usize, r: usize| pe.broadcast(&team, r, dst.slice(slot * count, count), src, count);
    let (elapsed, iterations, measuring) = match method {
        Method::Single | Method::Synchro => {
            let (e, it) = scaffold(pe, inv, method, 1, || single(0, root))?;
            (e, it, true)
        }
        Method::Rounds => {
            for _ in 0..WARMUP_ITERATIONS {
                single(0, root);
            }
            synchronized_start(pe, inv.env.sync)?;
            let t0 = pe.now();
            for k in 0..n {
                single(k, (root + k) % n);
            }
            (pe.now() - t0, n, true)
        }
        Method::Acknowledged => {
            let (e, it) = acknowledged(pe, root, flags, || single(0, root));
            (e, it, me == root)
        }
        _ => unreachable!("not a broadcast method"),
    };
    pe.barrier_all();

    let mut ok = true;
    for k in 0..rounds {
        let r = (root + k) % n;
        if r != me {
            ok &= pe.read_local(dst.slice(k * count, count)) == pattern(seed, r, count);
        }
    }
    let result = check(
        inv,
        pe,
        ok,
        "broadcast destination differs from the root's source",
    );
    pe.barrier_all();
    pe.sym_free(flags);
    pe.sym_free(dst);
    pe.sym_free(src);
    result?;
    Ok(RoutineResult::measured(elapsed, iterations).measuring_if(measuring))
}

/// Root-side timing with one acknowledger per iteration, rotating over the
/// non-root PEs. Each sample is the root's round trip minus the estimated
/// one-way latency of the acknowledgment.
fn acknowledged(
    pe: &Pe,
    root: usize,
    flags: crate::runtime::SymRef,
    mut bcast: impl FnMut(),
) -> (f64, usize) {
    let n = pe.npes();
    let me = pe.rank();
    let ctx = pe.default_ctx();
    let (ack, ping, pong) = (flags.word(0), flags.word(1), flags.word(2));
    for _ in 0..WARMUP_ITERATIONS {
        bcast();
    }
    if n == 1 {
        let t0 = pe.now();
        bcast();
        return (pe.now() - t0, 1);
    }
    let others: Vec<usize> = (0..n).filter(|&r| r != root).collect();
    let mut total = 0.0;
    for (k, &acker) in others.iter().enumerate() {
        let seq = k as i64 + 1;
        pe.barrier_all();
        let mut one_way = 0.0;
        if me == root {
            let t0 = pe.now();
            pe.p(ctx, ping, seq as u64, acker);
            pe.quiet(ctx);
            pe.wait_until(pong, Cmp::Ge, seq);
            one_way = (pe.now() - t0) / 2.0;
        } else if me == acker {
            pe.wait_until(ping, Cmp::Ge, seq);
            pe.p(ctx, pong, seq as u64, root);
            pe.quiet(ctx);
        }
        pe.barrier_all();
        if me == root {
            let t0 = pe.now();
            bcast();
            pe.wait_until(ack, Cmp::Ge, seq);
            total += pe.now() - t0 - one_way;
        } else {
            bcast();
            if me == acker {
                pe.p(ctx, ack, seq as u64, root);
                pe.quiet(ctx);
            }
        }
    }
    (total, others.len())
}

/// Pattern with more set bits, so that AND results are not all zero.
fn dense_pattern(seed: u64, rank: usize, nbytes: usize) -> Vec<u8> {
    pattern(seed, rank, nbytes)
        .into_iter()
        .zip(pattern(seed.wrapping_add(1), rank, nbytes))
        .map(|(a, b)| a | b)
        .collect()
}

/// Bitwise AND of every PE's dense pattern.
fn and_oracle(seed: u64, npes: usize, nbytes: usize) -> Vec<u8> {
    let mut acc = vec![0xFFu8; nbytes];
    for r in 0..npes {
        for (a, b) in acc.iter_mut().zip(dense_pattern(seed, r, nbytes)) {
            *a &= b;
        }
    }
    acc
}

pub(super) fn reduce_and(pe: &Pe, inv: &Invocation, method: Method) -> Result<RoutineResult> {
    let (it, count) = iterations_and_count(inv, method)?;
    if count > inv.env.skampi_buffer {
        return Err(inv.fail(format!(
            "reduction of {count} elements exceeds skampi_buffer = {}",
            inv.env.skampi_buffer
        )));
    }
    let team = pe.team_world();
    let seed = inv.env.seed;
    let nbytes = count * ELEM;
    let src = pe.sym_malloc(nbytes)?;
    let dst = pe.sym_calloc(nbytes, 1)?;
    pe.write_local(src, &dense_pattern(seed, pe.rank(), nbytes));
    pe.barrier_all();
    let (elapsed, iterations) = scaffold(pe, inv, method, it, || {
        pe.reduce_and(&team, dst, src, count)
    })?;
    let expect = and_oracle(seed, pe.npes(), nbytes);
    let result = check(
        inv,
        pe,
        pe.read_local(dst) == expect,
        "reduction result differs from the AND oracle",
    );
    pe.barrier_all();
    pe.sym_free(dst);
    pe.sym_free(src);
    result?;
    Ok(RoutineResult::measured(elapsed, iterations))
}

pub(super) fn collect(
    pe: &Pe,
    inv: &Invocation,
    kind: CollectKind,
    method: Method,
) -> Result<RoutineResult> {
    let (it, count) = iterations_and_count(inv, method)?;
    let team = pe.team_world();
    let n = pe.npes();
    let seed = inv.env.seed;
    let src = pe.sym_malloc(count)?;
    let dst = pe.sym_calloc(n * count, 1)?;
    pe.write_local(src, &pattern(seed, pe.rank(), count));
    pe.barrier_all();
    let (elapsed, iterations) = scaffold(pe, inv, method, it, || match kind {
        CollectKind::Collect => {
            pe.collect(&team, dst, src, count);
        }
        CollectKind::Fcollect => pe.fcollect(&team, dst, src, count),
    })?;
    let expect: Vec<u8> = (0..n).flat_map(|r| pattern(seed, r, count)).collect();
    let result = check(
        inv,
        pe,
        pe.read_local(dst) == expect,
        "concatenation differs from the oracle",
    );
    pe.barrier_all();
    pe.sym_free(dst);
    pe.sym_free(src);
    result?;
    Ok(RoutineResult::measured(elapsed, iterations))
}

pub(super) fn alltoall(
    pe: &Pe,
    inv: &Invocation,
    kind: AllToAllKind,
    method: Method,
) -> Result<RoutineResult> {
    let (it, count) = iterations_and_count(inv, method)?;
    let team = pe.team_world();
    let n = pe.npes();
    let me = pe.rank();
    let seed = inv.env.seed;
    let s = ALLTOALLS_STRIDE;
    let len = match kind {
        AllToAllKind::Contiguous => n * count,
        AllToAllKind::Strided => {
            let bound = n.saturating_mul(count).saturating_mul(s);
            if bound > inv.env.skampi_buffer {
                return Err(inv.fail(format!(
                    "strided data does not fit in the buffer: npes * count * stride = {bound} > skampi_buffer = {}",
                    inv.env.skampi_buffer
                )));
            }
            ((n * count - 1) * s + 1) * ELEM
        }
    };
    let src = pe.sym_malloc(len)?;
    let dst = pe.sym_calloc(len, 1)?;
    pe.write_local(src, &pattern(seed, me, len));
    pe.barrier_all();
    let (elapsed, iterations) = scaffold(pe, inv, method, it, || match kind {
        AllToAllKind::Contiguous => pe.alltoall(&team, dst, src, count),
        AllToAllKind::Strided => pe.alltoalls(&team, dst, src, s, s, ELEM, count),
    })?;
    let got = pe.read_local(dst);
    let ok = (0..n).all(|j| {
        let theirs = pattern(seed, j, len);
        match kind {
            AllToAllKind::Contiguous => {
                got[j * count..(j + 1) * count] == theirs[me * count..(me + 1) * count]
            }
            AllToAllKind::Strided => (0..count).all(|k| {
                let d = (j * count + k) * s * ELEM;
                let o = (me * count + k) * s * ELEM;
                got[d..d + ELEM] == theirs[o..o + ELEM]
            }),
        }
    });
    let result = check(
        inv,
        pe,
        ok,
        "all-to-all result differs from the transpose oracle",
    );
    pe.barrier_all();
    pe.sym_free(dst);
    pe.sym_free(src);
    result?;
    Ok(RoutineResult::measured(elapsed, iterations))
}

pub(super) fn barrier_sync(
    pe: &Pe,
    inv: &Invocation,
    kind: SyncKind,
    scope: Scope,
    method: Method,
) -> Result<RoutineResult> {
    let iterations = if method == Method::Consecutive {
        inv.at_least("iterations", inv.args[0], 1)?
    } else {
        1
    };
    let team = match scope {
        Scope::All => pe.team_world(),
        Scope::Half => Team::half(pe.npes()),
    };
    let member = team.contains(pe.rank());
    let (elapsed, iterations) = if method == Method::Single || member {
        scaffold(pe, inv, method, iterations, || {
            if member {
                match kind {
                    SyncKind::Barrier => pe.barrier(&team),
                    SyncKind::Sync => pe.sync(&team),
                }
            }
        })?
    } else {
        (0.0, iterations)
    };
    pe.barrier_all();
    Ok(RoutineResult::measured(elapsed, iterations).measuring_if(member))
}
