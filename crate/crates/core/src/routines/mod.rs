//! Registry of measurement routines.
//!
//! Every routine is SPMD: all PEs enter it and branch on rank. A routine
//! returns each PE's elapsed seconds for its timed region together with the
//! iteration count, and marks which PEs measured.

mod collective;
mod lock;
mod manage;
mod ordering;
mod p2p;

use std::fmt;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::measure::{MeasureEnv, OverlapInfo, WARMUP_ITERATIONS};
use crate::runtime::{ContextId, Pe};

pub use collective::SYNCHRO_REPETITIONS;
pub use lock::LOCK_REPETITIONS;
pub use manage::{CTX_REPETITIONS, FREE_BLOCK_SIZE};

/// Element stride used by the strided all-to-all routines.
pub const ALLTOALLS_STRIDE: usize = 2;

/// Which PEs take part in a routine's communication pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Participants {
    /// PEs 0 and 1.
    Pair01,
    /// Every PE talks to its (rank + 1) mod npes neighbour.
    Ring,
    /// Every PE.
    All,
    /// The front half of the PEs.
    Half,
    /// PE 0 alone.
    Single,
}

impl fmt::Display for Participants {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Participants::Pair01 => "pair01",
            Participants::Ring => "ring",
            Participants::All => "all",
            Participants::Half => "half",
            Participants::Single => "pe0",
        })
    }
}

/// One PE's outcome of a routine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoutineResult {
    /// Seconds in the timed region.
    pub elapsed: f64,
    pub iterations: u64,
    /// Whether this PE's timing enters the aggregate.
    pub measuring: bool,
    /// Per-iteration empty-quiet seconds to subtract.
    pub calibration: f64,
    pub overlap: Option<OverlapInfo>,
}

impl RoutineResult {
    pub fn measured(elapsed: f64, iterations: usize) -> Self {
        RoutineResult {
            elapsed,
            iterations: iterations as u64,
            measuring: true,
            calibration: 0.0,
            overlap: None,
        }
    }

    pub fn idle() -> Self {
        RoutineResult {
            elapsed: 0.0,
            iterations: 1,
            measuring: false,
            calibration: 0.0,
            overlap: None,
        }
    }

    fn calibrated(mut self, calibration: f64) -> Self {
        self.calibration = calibration;
        self
    }

    fn measuring_if(self, cond: bool) -> Self {
        if cond {
            self
        } else {
            RoutineResult::idle()
        }
    }
}

/// A routine call as seen by the routine body.
pub struct Invocation<'a> {
    pub name: &'static str,
    pub env: &'a MeasureEnv<'a>,
    pub args: &'a [usize],
}

impl Invocation<'_> {
    fn fail(&self, message: impl Into<String>) -> Error {
        Error::routine(self.name, message)
    }

    fn at_least(&self, what: &str, value: usize, min: usize) -> Result<usize> {
        if value < min {
            Err(self.fail(format!("{what} must be >= {min}, got {value}")))
        } else {
            Ok(value)
        }
    }

    fn need_npes(&self, pe: &Pe, min: usize) -> Result<()> {
        if pe.npes() < min {
            Err(self.fail(format!("needs at least {min} PEs, world has {}", pe.npes())))
        } else {
            Ok(())
        }
    }
}

pub type RoutineFn = fn(&Pe, &Invocation) -> Result<RoutineResult>;

/// A registered measurement routine.
pub struct RoutineDef {
    pub name: &'static str,
    /// Argument names, in call order.
    pub params: &'static [&'static str],
    pub participants: Participants,
    /// Whether the empty-quiet cost is subtracted.
    pub calibrated: bool,
    /// Positions of the (count, stride) arguments of strided routines.
    pub strided: Option<(usize, usize)>,
    pub run: RoutineFn,
}

impl RoutineDef {
    pub fn arity(&self) -> usize {
        self.params.len()
    }

    /// Checks that strided data fits in the communication buffer:
    /// `count * stride <= skampi_buffer`.
    pub fn check_buffer(&self, args: &[i64], skampi_buffer: usize) -> Result<()> {
        let Some((c, s)) = self.strided else {
            return Ok(());
        };
        let (count, stride) = (args[c], args[s]);
        if count.max(0).saturating_mul(stride.max(0)) as u128 > skampi_buffer as u128 {
            return Err(Error::routine(
                self.name,
                format!(
                    "strided data does not fit in the buffer: count * stride = {count} * {stride} = {} > skampi_buffer = {skampi_buffer}",
                    count.saturating_mul(stride)
                ),
            ));
        }
        Ok(())
    }
}

impl fmt::Debug for RoutineDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RoutineDef")
            .field("name", &self.name)
            .field("params", &self.params)
            .field("participants", &self.participants)
            .field("calibrated", &self.calibrated)
            .finish()
    }
}

/// Spellings accepted in addition to the canonical names.
const ALIASES: &[(&str, &str)] = &[("Bcast_All_Rounds", "Shmem_Bcast_All_Rounds")];

/// The alias-resolved registry name.
pub fn canonical_name(name: &str) -> &str {
    ALIASES
        .iter()
        .find(|(alias, _)| *alias == name)
        .map_or(name, |(_, canon)| canon)
}

/// All routines, in registration order.
pub fn registry() -> &'static [RoutineDef] {
    REGISTRY
}

pub fn lookup(name: &str) -> Option<&'static RoutineDef> {
    let name = canonical_name(name);
    REGISTRY.iter().find(|d| d.name == name)
}

/// Registered names close to `name`, best first.
pub fn suggestions(name: &str) -> Vec<&'static str> {
    let lower = name.to_ascii_lowercase();
    let mut scored: Vec<(f64, &'static str)> = REGISTRY
        .iter()
        .map(|d| {
            (
                strsim::jaro_winkler(&lower, &d.name.to_ascii_lowercase()),
                d.name,
            )
        })
        .filter(|(score, _)| *score >= 0.85)
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
    scored.into_iter().take(3).map(|(_, n)| n).collect()
}

/// One line per routine: name, arity, participants, calibration flag.
pub fn listing() -> String {
    let mut out = String::new();
    for d in REGISTRY {
        out.push_str(&format!(
            "{}({}) arity={} participants={} calibrated={}\n",
            d.name,
            d.params.join(", "),
            d.arity(),
            d.participants,
            if d.calibrated { "yes" } else { "no" }
        ));
    }
    out
}

/// The PE this PE sends to in ring patterns.
fn next_pe(pe: &Pe) -> usize {
    (pe.rank() + 1) % pe.npes()
}

/// The PE that sends to this PE in ring patterns.
fn prev_pe(pe: &Pe) -> usize {
    (pe.rank() + pe.npes() - 1) % pe.npes()
}

/// Deterministic payload written by PE `rank`.
fn pattern(seed: u64, rank: usize, len: usize) -> Vec<u8> {
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed ^ (rank as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    (0..len).map(|_| rng.random()).collect()
}

/// Runs `body` untimed [`WARMUP_ITERATIONS`] times, optionally calibrates
/// the empty quiet on `calibrate`, then times `iterations` runs of `body`.
/// Returns (elapsed, calibration).
fn timed_loop(
    pe: &Pe,
    iterations: usize,
    calibrate: Option<ContextId>,
    mut body: impl FnMut(),
) -> (f64, f64) {
    for _ in 0..WARMUP_ITERATIONS {
        body();
    }
    let calibration = calibrate
        .map(|ctx| {
            crate::measure::calibrate_empty_quiet(pe, ctx, crate::measure::CALIBRATION_CALLS)
        })
        .unwrap_or(0.0);
    let t0 = pe.now();
    for _ in 0..iterations {
        body();
    }
    (pe.now() - t0, calibration)
}

macro_rules! routine {
    ($name:literal, [$($p:literal),*], $part:ident, $cal:expr, $run:expr) => {
        routine!($name, [$($p),*], $part, $cal, None, $run)
    };
    ($name:literal, [$($p:literal),*], $part:ident, $cal:expr, $strided:expr, $run:expr) => {
        RoutineDef {
            name: $name,
            params: &[$($p),*],
            participants: Participants::$part,
            calibrated: $cal,
            strided: $strided,
            run: $run,
        }
    };
}

use crate::runtime::CtxOptions;
use collective::{AllToAllKind, CollectKind, Method, Scope, SyncKind};
use lock::LockVariant;
use manage::{CtxAction, MemVariant};
use ordering::OrderVariant;
use p2p::{GetVariant, NbiVariant, PutVariant};

static REGISTRY: &[RoutineDef] = &[
    routine!(
        "Shmem_Put_Simple",
        ["count", "iterations"],
        Pair01,
        true,
        |pe, i| p2p::put(pe, i, PutVariant::Simple)
    ),
    routine!(
        "Shmem_Pingpong_Put_Put",
        ["count", "iterations"],
        Pair01,
        true,
        |pe, i| p2p::put(pe, i, PutVariant::Pingpong)
    ),
    routine!(
        "Shmem_Put_Round",
        ["count", "iterations"],
        Ring,
        true,
        |pe, i| p2p::put(pe, i, PutVariant::Round)
    ),
    routine!(
        "Shmem_Put_Full",
        ["count", "iterations"],
        Ring,
        false,
        |pe, i| p2p::put(pe, i, PutVariant::Full)
    ),
    routine!(
        "Shmem_Iput_Round",
        ["count", "stride", "iterations"],
        Ring,
        true,
        Some((0, 1)),
        |pe, i| p2p::put(pe, i, PutVariant::IputRound)
    ),
    routine!("Shmem_P_Simple", ["iterations"], Pair01, true, |pe, i| {
        p2p::put(pe, i, PutVariant::PSimple)
    }),
    routine!("Shmem_P_Round", ["iterations"], Ring, true, |pe, i| {
        p2p::put(pe, i, PutVariant::PRound)
    }),
    routine!(
        "Shmem_Put_Nonblocking_Post",
        ["count", "iterations"],
        Ring,
        false,
        |pe, i| p2p::put_nbi(pe, i, NbiVariant::Post)
    ),
    routine!(
        "Shmem_Put_Nonblocking_Quiet",
        ["count", "iterations"],
        Ring,
        false,
        |pe, i| p2p::put_nbi(pe, i, NbiVariant::Quiet)
    ),
    routine!(
        "Shmem_Put_Nonblocking_Full",
        ["count", "iterations"],
        Ring,
        false,
        |pe, i| p2p::put_nbi(pe, i, NbiVariant::Full)
    ),
    routine!(
        "Shmem_Put_Nonblocking_Overlap",
        ["count", "iterations"],
        Ring,
        false,
        |pe, i| p2p::put_nbi(pe, i, NbiVariant::Overlap)
    ),
    routine!(
        "Shmem_Get_Simple",
        ["count", "iterations"],
        Pair01,
        false,
        |pe, i| p2p::get(pe, i, GetVariant::Simple)
    ),
    routine!(
        "Shmem_Get_Round",
        ["count", "iterations"],
        Ring,
        false,
        |pe, i| p2p::get(pe, i, GetVariant::Round)
    ),
    routine!(
        "Shmem_Iget_Round",
        ["count", "stride", "iterations"],
        Ring,
        false,
        Some((0, 1)),
        |pe, i| p2p::get(pe, i, GetVariant::IgetRound)
    ),
    routine!("Shmem_G_Simple", ["iterations"], Pair01, false, |pe, i| {
        p2p::get(pe, i, GetVariant::GSimple)
    }),
    routine!("Shmem_G_Round", ["iterations"], Ring, false, |pe, i| {
        p2p::get(pe, i, GetVariant::GRound)
    }),
    routine!(
        "Shmem_Get_Nonblocking_Post",
        ["count", "iterations"],
        Ring,
        false,
        |pe, i| p2p::get_nbi(pe, i, NbiVariant::Post)
    ),
    routine!(
        "Shmem_Get_Nonblocking_Quiet",
        ["count", "iterations"],
        Ring,
        false,
        |pe, i| p2p::get_nbi(pe, i, NbiVariant::Quiet)
    ),
    routine!(
        "Shmem_Get_Nonblocking_Full",
        ["count", "iterations"],
        Ring,
        false,
        |pe, i| p2p::get_nbi(pe, i, NbiVariant::Full)
    ),
    routine!(
        "Shmem_Get_Nonblocking_Overlap",
        ["count", "iterations"],
        Ring,
        false,
        |pe, i| p2p::get_nbi(pe, i, NbiVariant::Overlap)
    ),
    routine!("Shmem_Bcast_All", ["count", "root"], All, false, |pe, i| {
        collective::bcast(pe, i, Method::Single)
    }),
    routine!(
        "Shmem_Bcast_All_Rounds",
        ["count", "root"],
        All,
        false,
        |pe, i| collective::bcast(pe, i, Method::Rounds)
    ),
    routine!(
        "Shmem_Bcast_All_SK",
        ["count", "root"],
        All,
        false,
        |pe, i| collective::bcast(pe, i, Method::Acknowledged)
    ),
    routine!(
        "Shmem_Bcast_All_Synchro",
        ["count", "root"],
        All,
        false,
        |pe, i| collective::bcast(pe, i, Method::Synchro)
    ),
    routine!(
        "Shmem_Reduce_And_Consecutive",
        ["iterations", "count"],
        All,
        false,
        |pe, i| collective::reduce_and(pe, i, Method::Consecutive)
    ),
    routine!(
        "Shmem_Reduce_And_Barrier",
        ["iterations", "count"],
        All,
        false,
        |pe, i| collective::reduce_and(pe, i, Method::Barrier)
    ),
    routine!(
        "Shmem_Reduce_And_Synchro",
        ["count"],
        All,
        false,
        |pe, i| collective::reduce_and(pe, i, Method::Synchro)
    ),
    routine!(
        "Shmem_Collect_Consecutive",
        ["iterations", "count"],
        All,
        false,
        |pe, i| collective::collect(pe, i, CollectKind::Collect, Method::Consecutive)
    ),
    routine!(
        "Shmem_Collect_Barrier",
        ["iterations", "count"],
        All,
        false,
        |pe, i| collective::collect(pe, i, CollectKind::Collect, Method::Barrier)
    ),
    routine!("Shmem_Collect_Synchro", ["count"], All, false, |pe, i| {
        collective::collect(pe, i, CollectKind::Collect, Method::Synchro)
    }),
    routine!(
        "Shmem_Fcollect_Consecutive",
        ["iterations", "count"],
        All,
        false,
        |pe, i| collective::collect(pe, i, CollectKind::Fcollect, Method::Consecutive)
    ),
    routine!(
        "Shmem_Fcollect_Barrier",
        ["iterations", "count"],
        All,
        false,
        |pe, i| collective::collect(pe, i, CollectKind::Fcollect, Method::Barrier)
    ),
    routine!("Shmem_Fcollect_Synchro", ["count"], All, false, |pe, i| {
        collective::collect(pe, i, CollectKind::Fcollect, Method::Synchro)
    }),
    routine!(
        "Shmem_Alltoall_Consecutive",
        ["iterations", "count"],
        All,
        false,
        |pe, i| collective::alltoall(pe, i, AllToAllKind::Contiguous, Method::Consecutive)
    ),
    routine!(
        "Shmem_Alltoall_Barrier",
        ["iterations", "count"],
        All,
        false,
        |pe, i| collective::alltoall(pe, i, AllToAllKind::Contiguous, Method::Barrier)
    ),
    routine!("Shmem_Alltoall_Synchro", ["count"], All, false, |pe, i| {
        collective::alltoall(pe, i, AllToAllKind::Contiguous, Method::Synchro)
    }),
    routine!(
        "Shmem_Alltoalls_Consecutive",
        ["iterations", "count"],
        All,
        false,
        |pe, i| collective::alltoall(pe, i, AllToAllKind::Strided, Method::Consecutive)
    ),
    routine!(
        "Shmem_Alltoalls_Barrier",
        ["iterations", "count"],
        All,
        false,
        |pe, i| collective::alltoall(pe, i, AllToAllKind::Strided, Method::Barrier)
    ),
    routine!("Shmem_Alltoalls_Synchro", ["count"], All, false, |pe, i| {
        collective::alltoall(pe, i, AllToAllKind::Strided, Method::Synchro)
    }),
    routine!("Shmem_Barrier", [], All, false, |pe, i| {
        collective::barrier_sync(pe, i, SyncKind::Barrier, Scope::All, Method::Single)
    }),
    routine!(
        "Shmem_Barrier_Consecutive",
        ["iterations"],
        All,
        false,
        |pe, i| collective::barrier_sync(pe, i, SyncKind::Barrier, Scope::All, Method::Consecutive)
    ),
    routine!("Shmem_Barrier_Half", [], Half, false, |pe, i| {
        collective::barrier_sync(pe, i, SyncKind::Barrier, Scope::Half, Method::Single)
    }),
    routine!(
        "Shmem_Barrier_Half_Consecutive",
        ["iterations"],
        Half,
        false,
        |pe, i| collective::barrier_sync(
            pe,
            i,
            SyncKind::Barrier,
            Scope::Half,
            Method::Consecutive
        )
    ),
    routine!("Shmem_Sync", [], All, false, |pe, i| {
        collective::barrier_sync(pe, i, SyncKind::Sync, Scope::All, Method::Single)
    }),
    routine!(
        "Shmem_Sync_Consecutive",
        ["iterations"],
        All,
        false,
        |pe, i| collective::barrier_sync(pe, i, SyncKind::Sync, Scope::All, Method::Consecutive)
    ),
    routine!("Shmem_Sync_Half", [], Half, false, |pe, i| {
        collective::barrier_sync(pe, i, SyncKind::Sync, Scope::Half, Method::Single)
    }),
    routine!(
        "Shmem_Sync_Half_Consecutive",
        ["iterations"],
        Half,
        false,
        |pe, i| collective::barrier_sync(pe, i, SyncKind::Sync, Scope::Half, Method::Consecutive)
    ),
    routine!(
        "Shmem_Malloc",
        ["iterations", "count"],
        All,
        false,
        |pe, i| manage::memory(pe, i, MemVariant::Malloc)
    ),
    routine!("Shmem_Free", ["iterations"], All, false, |pe, i| {
        manage::memory(pe, i, MemVariant::Free)
    }),
    routine!(
        "Shmem_Realloc",
        ["iterations", "count"],
        All,
        false,
        |pe, i| manage::memory(pe, i, MemVariant::Realloc)
    ),
    routine!(
        "Shmem_Align",
        ["iterations", "count"],
        All,
        false,
        |pe, i| manage::memory(pe, i, MemVariant::Align)
    ),
    routine!(
        "Shmem_Calloc",
        ["iterations", "nb", "count"],
        All,
        false,
        |pe, i| manage::memory(pe, i, MemVariant::Calloc)
    ),
    routine!("Shmem_Ctx_Create_Serialized", [], All, false, |pe, i| {
        manage::ctx(pe, i, CtxAction::Create, CtxOptions::SERIALIZED)
    }),
    routine!("Shmem_Ctx_Create_Private", [], All, false, |pe, i| {
        manage::ctx(pe, i, CtxAction::Create, CtxOptions::PRIVATE)
    }),
    routine!("Shmem_Ctx_Create_Nostore", [], All, false, |pe, i| {
        manage::ctx(pe, i, CtxAction::Create, CtxOptions::NOSTORE)
    }),
    routine!("Shmem_Ctx_Destroy_Serialized", [], All, false, |pe, i| {
        manage::ctx(pe, i, CtxAction::Destroy, CtxOptions::SERIALIZED)
    }),
    routine!("Shmem_Ctx_Destroy_Private", [], All, false, |pe, i| {
        manage::ctx(pe, i, CtxAction::Destroy, CtxOptions::PRIVATE)
    }),
    routine!("Shmem_Ctx_Destroy_Nostore", [], All, false, |pe, i| {
        manage::ctx(pe, i, CtxAction::Destroy, CtxOptions::NOSTORE)
    }),
    routine!("Shmem_Quiet", ["count"], All, false, |pe, i| {
        ordering::ordering(pe, i, OrderVariant::Quiet)
    }),
    routine!("Shmem_Fence", ["count"], All, false, |pe, i| {
        ordering::ordering(pe, i, OrderVariant::Fence)
    }),
    routine!("Shmem_Wait_Until", ["count"], Ring, false, |pe, i| {
        ordering::ordering(pe, i, OrderVariant::WaitUntil)
    }),
    routine!("Shmem_Test", ["count"], All, false, |pe, i| {
        ordering::ordering(pe, i, OrderVariant::Test)
    }),
    routine!("Shmem_Quiet_Put", ["count", "nb"], Ring, false, |pe, i| {
        ordering::ordering(pe, i, OrderVariant::QuietPut)
    }),
    routine!("Shmem_Fence_Put", ["count", "nb"], Ring, false, |pe, i| {
        ordering::ordering(pe, i, OrderVariant::FencePut)
    }),
    routine!("Shmem_Set_Lock", [], Single, false, |pe, i| lock::lock(
        pe,
        i,
        LockVariant::Set
    )),
    routine!("Shmem_Clear_Lock", [], Single, false, |pe, i| lock::lock(
        pe,
        i,
        LockVariant::Clear
    )),
    routine!("Shmem_Lock_Test_Busy", [], Pair01, false, |pe, i| {
        lock::lock(pe, i, LockVariant::TestBusy)
    }),
    routine!("Shmem_Lock_Test_Busy_All", [], All, false, |pe, i| {
        lock::lock(pe, i, LockVariant::TestBusyAll)
    }),
    routine!("Shmem_Lock_Test_Busy_Turns", [], All, false, |pe, i| {
        lock::lock(pe, i, LockVariant::TestBusyTurns)
    }),
    routine!("Shmem_Lock_Test_Busy_Round", [], All, false, |pe, i| {
        lock::lock(pe, i, LockVariant::TestBusyRound)
    }),
];
