//! Put, get and their non-blocking forms.

use super::{next_pe, pattern, prev_pe, timed_loop, Invocation, RoutineResult};
use crate::error::Result;
use crate::measure::{calibrate_empty_quiet, OverlapInfo, CALIBRATION_CALLS, WARMUP_ITERATIONS};
use crate::runtime::{Pe, ELEM};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) enum PutVariant {
    Simple,
    Pingpong,
    Round,
    Full,
    IputRound,
    PSimple,
    PRound,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) enum GetVariant {
    Simple,
    Round,
    IgetRound,
    GSimple,
    GRound,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) enum NbiVariant {
    Post,
    Quiet,
    Full,
    Overlap,
}

/// Transfer shape shared by the put and get families.
struct Shape {
    count: usize,
    stride: usize,
    iterations: usize,
}

fn shape(pe: &Pe, inv: &Invocation, words: bool, strided: bool, pair: bool) -> Result<Shape> {
    let a = inv.args;
    let (count, stride, iterations) = match (words, strided) {
        (true, _) => (1, 1, a[0]),
        (false, true) => (a[0], a[1], a[2]),
        (false, false) => (a[0], 1, a[1]),
    };
    inv.at_least("count", count, 1)?;
    inv.at_least("stride", stride, 1)?;
    inv.at_least("iterations", iterations, 1)?;
    if strided && count.saturating_mul(stride) > inv.env.skampi_buffer {
        return Err(inv.fail(format!(
            "strided data does not fit in the buffer: count * stride = {} > skampi_buffer = {}",
            count.saturating_mul(stride),
            inv.env.skampi_buffer
        )));
    }
    if pair {
        inv.need_npes(pe, 2)?;
    }
    Ok(Shape {
        count,
        stride,
        iterations,
    })
}

fn mismatch(inv: &Invocation, pe: &Pe, what: &str) -> crate::error::Error {
    inv.fail(format!(
        "integrity check failed on PE {}: {what}",
        pe.rank()
    ))
}

pub(super) fn put(pe: &Pe, inv: &Invocation, v: PutVariant) -> Result<RoutineResult> {
    use PutVariant::*;
    let words = matches!(v, PSimple | PRound);
    let pair = matches!(v, Simple | Pingpong | PSimple);
    let sh = shape(pe, inv, words, v == IputRound, pair)?;
    let ctx = pe.default_ctx();
    let seed = inv.env.seed;
    let me = pe.rank();
    let target = if pair { 1 - me.min(1) } else { next_pe(pe) };
    let source = if pair { target } else { prev_pe(pe) };
    let active = !pair || me < 2;
    let senders = |r: usize| !pair || r == 0 || (v == Pingpong && r == 1);
    let sends = senders(me);
    let receives = if pair {
        me == 1 || (v == Pingpong && me == 0)
    } else {
        true
    };

    let nbytes = if v == IputRound {
        sh.count * ELEM
    } else {
        sh.count * if words { ELEM } else { 1 }
    };
    let dst_len = if v == IputRound {
        sh.count * sh.stride * ELEM
    } else {
        nbytes
    };
    let dst = pe.sym_calloc(dst_len, 1)?;
    let src = pe.sym_malloc(nbytes)?;
    let payload = pattern(seed, me, nbytes);
    pe.write_local(src, &payload);
    let word = if words {
        u64::from_le_bytes(payload[..ELEM].try_into().unwrap())
    } else {
        0
    };
    pe.barrier_all();

    let calibrate = (v != Full).then_some(ctx);
    let (elapsed, calibration) = if active && sends {
        timed_loop(pe, sh.iterations, calibrate, || {
            match v {
                IputRound => pe.iput(ctx, dst, src, sh.stride, 1, sh.count, target),
                PSimple | PRound => pe.p(ctx, dst, word, target),
                _ => pe.put(ctx, dst, &payload, target),
            }
            pe.quiet(ctx);
        })
    } else {
        (0.0, 0.0)
    };
    pe.barrier_all();

    let mut result = Ok(());
    if receives {
        let got = pe.read_local(dst);
        let expect_src = pattern(seed, source, nbytes);
        let expect = if v == IputRound {
            let mut e = vec![0u8; dst_len];
            for k in 0..sh.count {
                let at = k * sh.stride * ELEM;
                e[at..at + ELEM].copy_from_slice(&expect_src[k * ELEM..(k + 1) * ELEM]);
            }
            e
        } else {
            expect_src
        };
        if got != expect {
            result = Err(mismatch(
                inv,
                pe,
                "destination differs from the sender's payload",
            ));
        }
    }
    pe.sym_free(src);
    pe.sym_free(dst);
    result?;
    Ok(RoutineResult::measured(elapsed, sh.iterations)
        .calibrated(calibration)
        .measuring_if(active && sends))
}

pub(super) fn get(pe: &Pe, inv: &Invocation, v: GetVariant) -> Result<RoutineResult> {
    use GetVariant::*;
    let words = matches!(v, GSimple | GRound);
    let pair = matches!(v, Simple | GSimple);
    let sh = shape(pe, inv, words, v == IgetRound, pair)?;
    let ctx = pe.default_ctx();
    let seed = inv.env.seed;
    let me = pe.rank();
    let target = if pair { 1 } else { next_pe(pe) };
    let measuring = !pair || me == 0;

    let nbytes = match v {
        IgetRound => sh.count * ELEM,
        GSimple | GRound => ELEM,
        _ => sh.count,
    };
    let src_len = if v == IgetRound {
        sh.count * sh.stride * ELEM
    } else {
        nbytes
    };
    let src = pe.sym_malloc(src_len)?;
    let dst = pe.sym_calloc(nbytes, 1)?;
    pe.write_local(src, &pattern(seed, me, src_len));
    pe.barrier_all();

    let mut got_word = 0;
    let mut buf = vec![0u8; nbytes];
    let (elapsed, _) = if measuring {
        timed_loop(pe, sh.iterations, None, || match v {
            IgetRound => pe.iget(ctx, dst, src, 1, sh.stride, sh.count, target),
            GSimple | GRound => got_word = pe.g(ctx, src, target),
            _ => pe.get(ctx, &mut buf, src, target),
        })
    } else {
        (0.0, 0.0)
    };

    let mut result = Ok(());
    if measuring {
        let remote = pattern(seed, target, src_len);
        let ok = match v {
            IgetRound => {
                let got = pe.read_local(dst);
                (0..sh.count).all(|k| {
                    got[k * ELEM..(k + 1) * ELEM]
                        == remote[k * sh.stride * ELEM..k * sh.stride * ELEM + ELEM]
                })
            }
            GSimple | GRound => got_word.to_le_bytes()[..] == remote[..ELEM],
            _ => buf == remote,
        };
        if !ok {
            result = Err(mismatch(inv, pe, "fetched data differs from the source"));
        }
    }
    pe.barrier_all();
    pe.sym_free(dst);
    pe.sym_free(src);
    result?;
    Ok(RoutineResult::measured(elapsed, sh.iterations).measuring_if(measuring))
}

/// Direction of a non-blocking transfer.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Dir {
    Put,
    Get,
}

pub(super) fn put_nbi(pe: &Pe, inv: &Invocation, v: NbiVariant) -> Result<RoutineResult> {
    nbi(pe, inv, v, Dir::Put)
}

pub(super) fn get_nbi(pe: &Pe, inv: &Invocation, v: NbiVariant) -> Result<RoutineResult> {
    nbi(pe, inv, v, Dir::Get)
}

fn nbi(pe: &Pe, inv: &Invocation, v: NbiVariant, dir: Dir) -> Result<RoutineResult> {
    let sh = shape(pe, inv, false, false, false)?;
    let ctx = pe.default_ctx();
    let seed = inv.env.seed;
    let me = pe.rank();
    let target = next_pe(pe);
    let n = sh.count;

    let src = pe.sym_malloc(n)?;
    let dst = pe.sym_calloc(n, 1)?;
    pe.write_local(src, &pattern(seed, me, n));
    let payload = pattern(seed, me, n);
    pe.barrier_all();

    let post = || match dir {
        Dir::Put => pe.put_nbi(ctx, dst, src, target),
        Dir::Get => pe.get_nbi(ctx, dst, src, target),
    };
    let blocking = |buf: &mut [u8]| match dir {
        Dir::Put => pe.put(ctx, dst, &payload, target),
        Dir::Get => pe.get(ctx, buf, src, target),
    };

    let mut overlap = None;
    let elapsed = match v {
        NbiVariant::Full => {
            timed_loop(pe, sh.iterations, None, || {
                post();
                pe.quiet(ctx);
            })
            .0
        }
        NbiVariant::Post | NbiVariant::Quiet => {
            let mut total = 0.0;
            for i in 0..WARMUP_ITERATIONS + sh.iterations {
                let t0 = pe.now();
                post();
                let t1 = pe.now();
                pe.quiet(ctx);
                let t2 = pe.now();
                if i >= WARMUP_ITERATIONS {
                    total += if v == NbiVariant::Post {
                        t1 - t0
                    } else {
                        t2 - t1
                    };
                }
            }
            total
        }
        NbiVariant::Overlap => {
            let mut buf = vec![0u8; n];
            let (tb, _) = timed_loop(pe, sh.iterations, None, || {
                blocking(&mut buf);
                pe.quiet(ctx);
            });
            let t_b = tb / sh.iterations as f64;
            let empty_quiet = calibrate_empty_quiet(pe, ctx, CALIBRATION_CALLS);
            overlap = Some(OverlapInfo {
                blocking: t_b,
                empty_quiet,
            });
            let mut total = 0.0;
            for _ in 0..sh.iterations {
                post();
                pe.busy_wait(2.0 * t_b);
                let t0 = pe.now();
                pe.quiet(ctx);
                total += pe.now() - t0;
            }
            total
        }
    };
    pe.barrier_all();

    let got = pe.read_local(dst);
    let expect = match dir {
        Dir::Put => pattern(seed, prev_pe(pe), n),
        Dir::Get => pattern(seed, target, n),
    };
    let result = if got == expect {
        Ok(())
    } else {
        Err(mismatch(
            inv,
            pe,
            "non-blocking transfer delivered wrong data",
        ))
    };
    pe.barrier_all();
    pe.sym_free(dst);
    pe.sym_free(src);
    result?;
    let mut r = RoutineResult::measured(elapsed, sh.iterations);
    r.overlap = overlap;
    Ok(r)
}
