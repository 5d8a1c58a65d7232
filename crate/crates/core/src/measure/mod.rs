//! Measurement infrastructure: clock synchronization, synchronized starts,
//! empty-quiet calibration, aggregation and result output.

mod output;
mod sync;

pub use crate::clock::{ClockKind, ClockModel, CostModel};
pub use output::{format_g, render_results, write_results, ResultHeader};
pub use sync::{
    sync_clocks, synchronized_start, ClockSync, START_FLOOR, START_RTT_FACTOR, SYNC_ROUNDS,
};

use crate::error::{Error, Result};
use crate::routines::{Invocation, RoutineDef, RoutineResult};
use crate::runtime::{ContextId, Pe};

/// Untimed iterations of a routine body run before its timed loop.
pub const WARMUP_ITERATIONS: usize = 2;

/// Calls per empty-quiet calibration.
pub const CALIBRATION_CALLS: usize = 16;

/// Default unit divisor: results in microseconds.
pub const DEFAULT_UNIT: f64 = 1e6;

/// Settings shared by every routine invocation of a run.
#[derive(Debug, Clone, Copy)]
pub struct MeasureEnv<'a> {
    pub sync: &'a ClockSync,
    /// Bytes available to strided transfers.
    pub skampi_buffer: usize,
    /// Seeds payload patterns only.
    pub seed: u64,
}

/// One PE's raw timing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingSample {
    pub pe: usize,
    /// Seconds spent in the timed region.
    pub elapsed: f64,
    pub iterations: u64,
    /// Per-iteration seconds subtracted from the mean.
    pub calibration: f64,
}

impl TimingSample {
    pub fn per_iteration(&self) -> f64 {
        self.elapsed / self.iterations as f64
    }

    /// Calibrated per-iteration seconds, clamped at zero, and whether the
    /// clamp applied.
    pub fn calibrated(&self) -> (f64, bool) {
        let v = self.per_iteration() - self.calibration;
        if v < 0.0 {
            (0.0, true)
        } else {
            (v, false)
        }
    }
}

/// Extra data reported by the overlap routines, in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapInfo {
    /// Blocking transfer plus quiet, timed before the overlapped attempt.
    pub blocking: f64,
    /// Cost of a quiet with nothing pending.
    pub empty_quiet: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub stderr: f64,
}

impl Stats {
    /// Statistics across per-PE means. `stderr` is the sample standard
    /// deviation over the square root of the sample count.
    pub fn from_values(values: &[f64]) -> Stats {
        assert!(!values.is_empty(), "statistics of an empty sample");
        let k = values.len() as f64;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = (values.iter().sum::<f64>() / k).clamp(min, max);
        let stderr = if values.len() < 2 {
            0.0
        } else {
            let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
            (ss / (k - 1.0)).sqrt() / k.sqrt()
        };
        Stats {
            min,
            max,
            mean,
            stderr,
        }
    }
}

/// Aggregated outcome of one `measure` statement.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRecord {
    /// Index of the script block that produced the record.
    pub block: u64,
    pub title: String,
    pub routine: String,
    pub args: Vec<i64>,
    /// Samples of the measuring PEs, in rank order.
    pub per_pe: Vec<TimingSample>,
    /// Calibrated per-iteration statistics in `unit`.
    pub stats: Stats,
    /// Ticks per second.
    pub unit: f64,
    /// Mean subtracted calibration in `unit`.
    pub calibration: f64,
    pub clamped: bool,
    pub overlap: Option<OverlapInfo>,
}

impl MeasurementRecord {
    pub fn from_samples(
        block: u64,
        title: &str,
        routine: &str,
        args: &[i64],
        per_pe: Vec<TimingSample>,
        overlap: Option<OverlapInfo>,
        unit: f64,
    ) -> MeasurementRecord {
        let mut clamped = false;
        let values: Vec<f64> = per_pe
            .iter()
            .map(|s| {
                let (v, c) = s.calibrated();
                clamped |= c;
                v * unit
            })
            .collect();
        let calibration =
            per_pe.iter().map(|s| s.calibration).sum::<f64>() / per_pe.len() as f64 * unit;
        MeasurementRecord {
            block,
            title: title.to_string(),
            routine: routine.to_string(),
            args: args.to_vec(),
            stats: Stats::from_values(&values),
            per_pe,
            unit,
            calibration,
            clamped,
            overlap,
        }
    }

    /// Reported value: the slowest measuring PE.
    pub fn headline(&self) -> f64 {
        self.stats.max
    }

    /// Fraction of the transfer hidden behind the overlapped wait, for
    /// records produced by an overlap routine.
    pub fn overlap_ratio(&self) -> Option<f64> {
        let info = self.overlap?;
        let quiet = self.headline() / self.unit;
        let transfer = info.blocking - info.empty_quiet;
        (transfer > 0.0).then(|| 1.0 - (quiet - info.empty_quiet) / transfer)
    }

    /// The record's line in the result file.
    pub fn line(&self) -> String {
        let mut s = self.routine.clone();
        for a in &self.args {
            s.push(' ');
            s.push_str(&a.to_string());
        }
        s.push_str(&format!(
            " time={} min={} max={} stderr={} calib={}",
            format_g(self.headline()),
            format_g(self.stats.min),
            format_g(self.stats.max),
            format_g(self.stats.stderr),
            format_g(self.calibration)
        ));
        if self.clamped {
            s.push_str(" clamped");
        }
        s
    }
}

/// Mean per-call cost of a quiet on `ctx` with nothing pending.
pub fn calibrate_empty_quiet(pe: &Pe, ctx: ContextId, iterations: usize) -> f64 {
    assert!(iterations >= 1, "calibration needs at least one call");
    pe.quiet(ctx);
    let t0 = pe.now();
    for _ in 0..iterations {
        pe.quiet(ctx);
    }
    ((pe.now() - t0) / iterations as f64).max(0.0)
}

fn encode_result(r: &RoutineResult) -> Vec<u8> {
    let mut out = vec![r.measuring as u8, r.overlap.is_some() as u8];
    out.extend(r.elapsed.to_le_bytes());
    out.extend(r.iterations.to_le_bytes());
    out.extend(r.calibration.to_le_bytes());
    if let Some(o) = r.overlap {
        out.extend(o.blocking.to_le_bytes());
        out.extend(o.empty_quiet.to_le_bytes());
    }
    out
}

fn decode_result(b: &[u8]) -> RoutineResult {
    let f = |i: usize| f64::from_le_bytes(b[2 + 8 * i..10 + 8 * i].try_into().unwrap());
    RoutineResult {
        measuring: b[0] != 0,
        elapsed: f(0),
        iterations: u64::from_le_bytes(b[10..18].try_into().unwrap()),
        calibration: f(2),
        overlap: (b[1] != 0).then(|| OverlapInfo {
            blocking: f(3),
            empty_quiet: f(4),
        }),
    }
}

/// Runs one measurement of `routine` on every PE and aggregates the
/// samples on PE 0, which is the only PE returning a record.
///
/// A routine error on any PE fails the measurement on all PEs; PE 0
/// reports the first failing PE's message.
#[allow(clippy::too_many_arguments)]
pub fn run_measurement(
    pe: &Pe,
    routine: &RoutineDef,
    args: &[i64],
    env: &MeasureEnv,
    block: u64,
    title: &str,
    unit: f64,
) -> Result<Option<MeasurementRecord>> {
    let wrap = |source: Error| Error::Measurement {
        routine: routine.name.to_string(),
        args: args
            .iter()
            .map(i64::to_string)
            .collect::<Vec<_>>()
            .join(", "),
        source: Box::new(source),
    };
    let world = pe.team_world();
    pe.barrier_all();
    synchronized_start(pe, env.sync).map_err(wrap)?;
    let uargs: Vec<usize> = args.iter().map(|&a| a.max(0) as usize).collect();
    let inv = Invocation {
        name: routine.name,
        env,
        args: &uargs,
    };
    let local = (routine.run)(pe, &inv);
    let failed = pe.allreduce_max_u64(&world, local.is_err() as u64) != 0;
    if failed {
        let msg = match &local {
            Err(e) => e.to_string(),
            Ok(_) => String::new(),
        };
        let gathered = pe.gather_bytes(&world, 0, msg.into_bytes());
        return Err(match (local, gathered) {
            (Err(e), _) => wrap(e),
            (Ok(_), Some(all)) => {
                let (rank, msg) = all
                    .iter()
                    .enumerate()
                    .find(|(_, m)| !m.is_empty())
                    .expect("some PE failed");
                wrap(Error::routine(
                    routine.name,
                    format!("PE {rank}: {}", String::from_utf8_lossy(msg)),
                ))
            }
            (Ok(_), None) => wrap(Error::RemoteFailure),
        });
    }
    let local = local.expect("checked above");
    let Some(all) = pe.gather_bytes(&world, 0, encode_result(&local)) else {
        return Ok(None);
    };
    let results: Vec<RoutineResult> = all.iter().map(|b| decode_result(b)).collect();
    let samples: Vec<TimingSample> = results
        .iter()
        .enumerate()
        .filter(|(_, r)| r.measuring)
        .map(|(rank, r)| TimingSample {
            pe: rank,
            elapsed: r.elapsed,
            iterations: r.iterations,
            calibration: r.calibration,
        })
        .collect();
    if samples.is_empty() {
        return Err(wrap(Error::routine(routine.name, "no PE measured")));
    }
    let overlaps: Vec<OverlapInfo> = results
        .iter()
        .filter(|r| r.measuring)
        .filter_map(|r| r.overlap)
        .collect();
    let overlap = (!overlaps.is_empty()).then(|| {
        let k = overlaps.len() as f64;
        OverlapInfo {
            blocking: overlaps.iter().map(|o| o.blocking).sum::<f64>() / k,
            empty_quiet: overlaps.iter().map(|o| o.empty_quiet).sum::<f64>() / k,
        }
    });
    Ok(Some(MeasurementRecord::from_samples(
        block,
        title,
        routine.name,
        args,
        samples,
        overlap,
        unit,
    )))
}
