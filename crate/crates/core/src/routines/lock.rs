//! Distributed lock routines. The lock word lives on PE 0.

use super::{Invocation, RoutineResult};
use crate::error::Result;
use crate::measure::WARMUP_ITERATIONS;
use crate::runtime::{DistLock, Pe};

/// Set or clear operations timed per measurement.
pub const LOCK_REPETITIONS: usize = 64;

/// Barriers averaged to size the holding time of the busy-test routines.
const BARRIER_SAMPLES: usize = 8;

/// Holding time of the busy-test routines, in barrier times.
const HOLD_BARRIERS: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) enum LockVariant {
    Set,
    Clear,
    TestBusy,
    TestBusyAll,
    TestBusyTurns,
    TestBusyRound,
}

fn barrier_time(pe: &Pe) -> f64 {
    pe.barrier_all();
    let t0 = pe.now();
    for _ in 0..BARRIER_SAMPLES {
        pe.barrier_all();
    }
    (pe.now() - t0) / BARRIER_SAMPLES as f64
}

/// Times one `lock_test`; returns (seconds, busy).
fn timed_test(pe: &Pe, lock: &DistLock) -> (f64, bool) {
    let t0 = pe.now();
    let busy = pe.lock_test(lock);
    (pe.now() - t0, busy)
}

pub(super) fn lock(pe: &Pe, inv: &Invocation, v: LockVariant) -> Result<RoutineResult> {
    use LockVariant::*;
    if !matches!(v, Set | Clear) {
        inv.need_npes(pe, 2)?;
    }
    let n = pe.npes();
    let me = pe.rank();
    let word = pe.sym_calloc(1, 8)?;
    let lock = DistLock::new(word);
    pe.barrier_all();

    let mut free_seen = false;
    let result = match v {
        Set | Clear => {
            let mut total = 0.0;
            if me == 0 {
                for i in 0..WARMUP_ITERATIONS + LOCK_REPETITIONS {
                    let t0 = pe.now();
                    pe.lock_set(&lock);
                    let t1 = pe.now();
                    pe.lock_clear(&lock);
                    let t2 = pe.now();
                    if i >= WARMUP_ITERATIONS {
                        total += if v == Set { t1 - t0 } else { t2 - t1 };
                    }
                }
            }
            RoutineResult::measured(total, LOCK_REPETITIONS).measuring_if(me == 0)
        }
        TestBusy => {
            let hold = HOLD_BARRIERS * barrier_time(pe);
            let mut elapsed = 0.0;
            if me == 1 {
                pe.lock_set(&lock);
            }
            pe.barrier_all();
            if me == 0 {
                let (dt, busy) = timed_test(pe, &lock);
                elapsed = dt;
                free_seen |= !busy;
            } else if me == 1 {
                pe.busy_wait(hold);
            }
            pe.barrier_all();
            if me == 1 {
                pe.lock_clear(&lock);
            }
            RoutineResult::measured(elapsed, 1).measuring_if(me == 0)
        }
        TestBusyAll | TestBusyTurns => {
            let holder = n - 1;
            if me == holder {
                pe.lock_set(&lock);
            }
            pe.barrier_all();
            let mut elapsed = 0.0;
            if v == TestBusyAll {
                if me != holder {
                    let (dt, busy) = timed_test(pe, &lock);
                    elapsed = dt;
                    free_seen |= !busy;
                }
            } else {
                for tester in 0..holder {
                    if me == tester {
                        let (dt, busy) = timed_test(pe, &lock);
                        elapsed = dt;
                        free_seen |= !busy;
                    }
                    pe.barrier_all();
                }
            }
            pe.barrier_all();
            if me == holder {
                pe.lock_clear(&lock);
            }
            RoutineResult::measured(elapsed, 1).measuring_if(me != holder)
        }
        TestBusyRound => {
            let mut mine = 0.0;
            for locker in 0..n {
                if me == locker {
                    pe.lock_set(&lock);
                }
                pe.barrier_all();
                for tester in (0..n).filter(|&t| t != locker) {
                    if me == tester {
                        let (dt, busy) = timed_test(pe, &lock);
                        mine += dt;
                        free_seen |= !busy;
                    }
                    pe.barrier_all();
                }
                if me == locker {
                    pe.lock_clear(&lock);
                }
                pe.barrier_all();
            }
            let total = pe.allreduce_sum_f64(&pe.team_world(), mine);
            RoutineResult::measured(total, n * (n - 1)).measuring_if(me == 0)
        }
    };
    pe.barrier_all();
    let leftover = pe.lock_word_value(&lock);
    pe.sym_free(word);
    if free_seen {
        return Err(inv.fail(format!(
            "PE {me}: lock_test observed a free lock while it was held"
        )));
    }
    if leftover != 0 || pe.held_locks() != 0 {
        return Err(inv.fail(format!("lock left held after the run (word = {leftover})")));
    }
    Ok(result)
}
