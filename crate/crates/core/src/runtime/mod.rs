//! Embedded PGAS runtime.
//!
//! [`World::run`] launches `npes` PE threads that all execute the same entry
//! function. Each PE owns a symmetric heap region, a set of communication
//! contexts, and (in async progress mode) a progress thread that delivers
//! queued one-sided operations in the background.

mod collectives;
mod heap;
mod lock;
mod memory;
mod msg;
mod rma;

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::panic::{self, AssertUnwindSafe};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, Sender};

use crate::clock::{ClockModel, CostModel, PeClock};
use crate::error::{Error, Result};

pub use collectives::{Team, TeamId};
pub use heap::{HeapStats, SymRef};
pub use lock::DistLock;
pub use rma::{Cmp, ContextId, CtxOptions, RmaKind, RmaOp, ELEM};

use heap::{SymAllocator, SymHeap};
pub(crate) use msg::CollOp;
use msg::{Msg, MsgKey};
use rma::CtxQueue;

pub const MIB: usize = 1 << 20;

/// When queued one-sided operations make progress.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProgressMode {
    /// A background progress engine delivers operations as soon as posted.
    Async,
    /// Delivery only happens inside quiet, wait_until and barrier.
    QuietOnly,
}

impl fmt::Display for ProgressMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProgressMode::Async => "async",
            ProgressMode::QuietOnly => "quiet-only",
        })
    }
}

impl FromStr for ProgressMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "async" => Ok(ProgressMode::Async),
            "quiet-only" => Ok(ProgressMode::QuietOnly),
            other => Err(format!("unknown progress mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct WorldConfig {
    pub npes: usize,
    pub heap_size: usize,
    pub clock: ClockModel,
    pub progress: ProgressMode,
}

impl WorldConfig {
    pub fn new(npes: usize) -> Self {
        WorldConfig {
            npes,
            heap_size: 64 * MIB,
            clock: ClockModel::real(),
            progress: ProgressMode::Async,
        }
    }

    pub fn heap_size(mut self, bytes: usize) -> Self {
        self.heap_size = bytes;
        self
    }

    pub fn clock(mut self, clock: ClockModel) -> Self {
        self.clock = clock;
        self
    }

    pub fn progress(mut self, progress: ProgressMode) -> Self {
        self.progress = progress;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.npes == 0 {
            return Err(Error::Config("npes must be at least 1".into()));
        }
        if self.heap_size < MIB {
            return Err(Error::Config(format!(
                "heap size {} is below the 1 MiB minimum",
                self.heap_size
            )));
        }
        let c = &self.clock.costs;
        if [c.alpha, c.beta, c.gamma, c.quiet]
            .iter()
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(Error::Config("virtual clock costs must be >= 0".into()));
        }
        Ok(())
    }
}

/// Per-PE state reachable from every thread.
struct PeShared {
    heap: SymHeap,
    ctxs: RwLock<Vec<Option<Arc<CtxQueue>>>>,
    wake: Mutex<bool>,
    wake_cv: Condvar,
    tx: Sender<Msg>,
}

/// State shared by all PEs of a running world.
pub struct World {
    cfg: WorldConfig,
    pes: Vec<PeShared>,
    epoch: Instant,
    aborted: AtomicBool,
    shutdown: AtomicBool,
    failure: Mutex<Option<(usize, String)>>,
}

/// Unwinding payload used to tear down peers of a failed PE.
struct Aborted;

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "unknown panic".to_string()
    }
}

impl World {
    /// Runs `entry` on every PE and returns the per-PE results in rank order.
    pub fn run<T, F>(cfg: WorldConfig, entry: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(&Pe) -> T + Sync,
    {
        cfg.validate()?;
        let npes = cfg.npes;
        let with_stamps = cfg.clock.is_virtual();
        let mut receivers = Vec::with_capacity(npes);
        let mut pes = Vec::with_capacity(npes);
        for _ in 0..npes {
            let (tx, rx) = crossbeam_channel::unbounded();
            receivers.push(rx);
            pes.push(PeShared {
                heap: SymHeap::new(cfg.heap_size, with_stamps),
                ctxs: RwLock::new(vec![Some(Arc::new(CtxQueue::new(
                    0,
                    CtxOptions::default(),
                )))]),
                wake: Mutex::new(false),
                wake_cv: Condvar::new(),
                tx,
            });
        }
        let world = World {
            cfg,
            pes,
            epoch: Instant::now(),
            aborted: AtomicBool::new(false),
            shutdown: AtomicBool::new(false),
            failure: Mutex::new(None),
        };
        let world = &world;
        let entry = &entry;

        let results: Vec<Option<T>> = std::thread::scope(|s| {
            let progress: Vec<_> = if world.cfg.progress == ProgressMode::Async {
                (0..npes)
                    .map(|rank| {
                        std::thread::Builder::new()
                            .name(format!("progress-{rank}"))
                            .spawn_scoped(s, move || world.progress_loop(rank))
                            .expect("spawn progress thread")
                    })
                    .collect()
            } else {
                Vec::new()
            };
            let workers: Vec<_> = receivers
                .into_iter()
                .enumerate()
                .map(|(rank, rx)| {
                    std::thread::Builder::new()
                        .name(format!("pe-{rank}"))
                        .spawn_scoped(s, move || {
                            let pe = Pe::new(world, rank, rx);
                            let out = panic::catch_unwind(AssertUnwindSafe(|| {
                                let out = entry(&pe);
                                pe.finish();
                                out
                            }));
                            match out {
                                Ok(v) => Some(v),
                                Err(payload) => {
                                    if !payload.is::<Aborted>() {
                                        world.fail(rank, panic_message(payload.as_ref()));
                                    }
                                    world.abort();
                                    None
                                }
                            }
                        })
                        .expect("spawn PE thread")
                })
                .collect();
            let results = workers
                .into_iter()
                .map(|h| h.join().unwrap_or(None))
                .collect();
            world.shutdown.store(true, Ordering::SeqCst);
            for rank in 0..npes {
                world.wake(rank);
            }
            for h in progress {
                let _ = h.join();
            }
            results
        });

        if let Some((rank, message)) = world.failure.lock().unwrap().take() {
            return Err(Error::PeFailed { rank, message });
        }
        Ok(results
            .into_iter()
            .map(|r| r.expect("PE finished without result"))
            .collect())
    }

    pub fn config(&self) -> &WorldConfig {
        &self.cfg
    }

    pub fn npes(&self) -> usize {
        self.cfg.npes
    }

    fn heap(&self, rank: usize) -> &SymHeap {
        &self.pes[rank].heap
    }

    fn fail(&self, rank: usize, message: String) {
        let mut f = self.failure.lock().unwrap();
        if f.is_none() {
            *f = Some((rank, message));
        }
    }

    fn abort(&self) {
        self.aborted.store(true, Ordering::SeqCst);
        for rank in 0..self.npes() {
            self.wake(rank);
        }
    }

    fn check_abort(&self) {
        if self.aborted.load(Ordering::Relaxed) {
            panic::resume_unwind(Box::new(Aborted));
        }
    }

    fn wake(&self, rank: usize) {
        let pe = &self.pes[rank];
        *pe.wake.lock().unwrap() = true;
        pe.wake_cv.notify_one();
    }

    fn contexts(&self, rank: usize) -> Vec<Arc<CtxQueue>> {
        self.pes[rank]
            .ctxs
            .read()
            .unwrap()
            .iter()
            .flatten()
            .cloned()
            .collect()
    }

    fn progress_loop(&self, rank: usize) {
        let pe = &self.pes[rank];
        loop {
            {
                let mut flag = pe.wake.lock().unwrap();
                while !*flag && !self.shutdown.load(Ordering::SeqCst) {
                    flag = pe
                        .wake_cv
                        .wait_timeout(flag, Duration::from_millis(20))
                        .unwrap()
                        .0;
                }
                *flag = false;
            }
            for q in self.contexts(rank) {
                q.drain(self, None);
            }
            if self.shutdown.load(Ordering::SeqCst) {
                break;
            }
        }
    }
}

/// Handle of one PE, owned by its execution thread.
pub struct Pe<'w> {
    world: &'w World,
    rank: usize,
    clock: PeClock,
    alloc: RefCell<SymAllocator>,
    link_free: Cell<f64>,
    epochs: [Cell<u64>; 2],
    rx: Receiver<Msg>,
    stash: RefCell<HashMap<MsgKey, Msg>>,
    held_locks: Cell<usize>,
}

impl<'w> Pe<'w> {
    fn new(world: &'w World, rank: usize, rx: Receiver<Msg>) -> Self {
        Pe {
            world,
            rank,
            clock: world.cfg.clock.pe_clock(rank, world.epoch),
            alloc: RefCell::new(SymAllocator::new(world.cfg.heap_size)),
            link_free: Cell::new(0.0),
            epochs: [Cell::new(0), Cell::new(0)],
            rx,
            stash: RefCell::new(HashMap::new()),
            held_locks: Cell::new(0),
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn npes(&self) -> usize {
        self.world.npes()
    }

    pub fn world(&self) -> &'w World {
        self.world
    }

    pub fn progress_mode(&self) -> ProgressMode {
        self.world.cfg.progress
    }

    pub fn is_virtual(&self) -> bool {
        self.clock.is_virtual()
    }

    pub fn costs(&self) -> &CostModel {
        self.clock.costs()
    }

    /// Current local clock reading in seconds.
    pub fn now(&self) -> f64 {
        self.clock.now()
    }

    /// Advances the virtual clock by `dt`; no effect on a real clock.
    pub fn charge(&self, dt: f64) {
        self.clock.charge(dt);
    }

    /// Busy-waits (polling the clock) for `dt` seconds. Queued operations
    /// keep progressing on the background engine meanwhile.
    pub fn busy_wait(&self, dt: f64) {
        let target = self.now() + dt;
        self.wait_until_reading(target);
    }

    /// Busy-waits until the local clock reading reaches `reading`.
    pub fn wait_until_reading(&self, reading: f64) {
        self.clock.wait_until_reading(reading, || {
            self.world.check_abort();
            std::thread::yield_now();
        });
    }

    pub(crate) fn clock_base(&self) -> f64 {
        self.clock.base()
    }

    fn idle(&self) {
        self.world.check_abort();
        std::thread::yield_now();
    }

    pub fn held_locks(&self) -> usize {
        self.held_locks.get()
    }

    /// Completes every context locally before the PE exits.
    fn finish(&self) {
        let ids: Vec<usize> = self
            .world
            .contexts(self.rank)
            .iter()
            .map(|q| q.id)
            .collect();
        for id in ids {
            self.complete(ContextId(id), false);
        }
    }
}
