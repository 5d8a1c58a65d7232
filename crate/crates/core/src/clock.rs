//! Time sources.
//!
//! A real clock reads the monotonic system timer. A virtual clock only moves
//! when the runtime charges it with the cost of an operation, which makes
//! every reported time a closed-form function of the cost parameters.

use std::cell::Cell;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockKind {
    Real,
    Virtual,
}

impl fmt::Display for ClockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClockKind::Real => "real",
            ClockKind::Virtual => "virtual",
        })
    }
}

impl FromStr for ClockKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "real" => Ok(ClockKind::Real),
            "virtual" => Ok(ClockKind::Virtual),
            other => Err(format!("unknown clock kind `{other}`")),
        }
    }
}

/// Cost parameters of the virtual clock, all in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    /// Per-transfer latency.
    pub alpha: f64,
    /// Per-byte cost.
    pub beta: f64,
    /// Cost of posting a non-blocking operation (and other purely local
    /// bookkeeping calls: fence, test, context create/destroy).
    pub gamma: f64,
    /// Cost of a quiet with nothing left to wait for.
    pub quiet: f64,
}

impl CostModel {
    pub const ZERO: CostModel = CostModel {
        alpha: 0.0,
        beta: 0.0,
        gamma: 0.0,
        quiet: 0.0,
    };

    /// alpha + beta * n
    pub fn transfer(&self, nbytes: usize) -> f64 {
        self.alpha + self.beta * nbytes as f64
    }

    /// Cost of a one-word signal.
    pub fn signal(&self) -> f64 {
        self.transfer(8)
    }
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel::ZERO
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClockModel {
    pub kind: ClockKind,
    pub costs: CostModel,
    /// Per-PE reading offset added to every `now()`; used to inject skew.
    /// Missing entries mean zero.
    pub skew: Vec<f64>,
}

impl ClockModel {
    pub fn real() -> Self {
        ClockModel {
            kind: ClockKind::Real,
            costs: CostModel::ZERO,
            skew: Vec::new(),
        }
    }

    pub fn virtual_clock(costs: CostModel) -> Self {
        ClockModel {
            kind: ClockKind::Virtual,
            costs,
            skew: Vec::new(),
        }
    }

    pub fn with_skew(mut self, skew: Vec<f64>) -> Self {
        self.skew = skew;
        self
    }

    pub fn is_virtual(&self) -> bool {
        self.kind == ClockKind::Virtual
    }

    pub(crate) fn pe_clock(&self, rank: usize, epoch: Instant) -> PeClock {
        PeClock {
            kind: self.kind,
            costs: self.costs,
            epoch,
            skew: self.skew.get(rank).copied().unwrap_or(0.0),
            vtime: Cell::new(0.0),
        }
    }
}

/// The clock owned by one PE.
#[derive(Debug)]
pub(crate) struct PeClock {
    kind: ClockKind,
    costs: CostModel,
    epoch: Instant,
    skew: f64,
    vtime: Cell<f64>,
}

impl PeClock {
    pub fn is_virtual(&self) -> bool {
        self.kind == ClockKind::Virtual
    }

    pub fn costs(&self) -> &CostModel {
        &self.costs
    }

    /// Local reading, including injected skew.
    pub fn now(&self) -> f64 {
        self.base() + self.skew
    }

    /// Reading without skew: the simulated time in virtual mode, the elapsed
    /// time since world start in real mode.
    pub fn base(&self) -> f64 {
        match self.kind {
            ClockKind::Real => self.epoch.elapsed().as_secs_f64(),
            ClockKind::Virtual => self.vtime.get(),
        }
    }

    pub fn charge(&self, dt: f64) {
        if self.is_virtual() && dt > 0.0 {
            self.vtime.set(self.vtime.get() + dt);
        }
    }

    /// Moves virtual time forward to `t` if it is behind.
    pub fn merge(&self, t: f64) {
        if self.is_virtual() && t > self.vtime.get() {
            self.vtime.set(t);
        }
    }

    /// Busy-waits until the local reading reaches `reading`.
    pub fn wait_until_reading(&self, reading: f64, mut idle: impl FnMut()) {
        match self.kind {
            ClockKind::Virtual => {
                self.merge(reading - self.skew);
                idle();
            }
            ClockKind::Real => {
                while self.now() < reading {
                    idle();
                    std::thread::yield_now();
                }
            }
        }
    }
}
