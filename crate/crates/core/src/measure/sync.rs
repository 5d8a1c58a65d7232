//! Cross-PE clock offset estimation and scheduled starts.

use crate::error::{Error, Result};
use crate::runtime::{CollOp, Pe, TeamId};

/// Ping-pong round trips per PE pair.
pub const SYNC_ROUNDS: usize = 100;

/// Smallest lead time between announcing a start time and reaching it.
pub const START_FLOOR: f64 = 100e-6;

/// Lead time as a multiple of the largest minimum round trip.
pub const START_RTT_FACTOR: f64 = 10.0;

/// Estimated clock offsets relative to PE 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ClockSync {
    /// Offsets of PEs 1..npes, in seconds (`reading_p - reading_0`).
    offsets: Vec<f64>,
    /// Minimum round-trip times of PEs 1..npes.
    rtt: Vec<f64>,
}

impl ClockSync {
    /// A sync for a world where every clock agrees.
    pub fn zero(npes: usize) -> Self {
        let n = npes.saturating_sub(1);
        ClockSync {
            offsets: vec![0.0; n],
            rtt: vec![0.0; n],
        }
    }

    /// Offsets of PEs `1..npes`; empty for a single PE.
    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn rtts(&self) -> &[f64] {
        &self.rtt
    }

    pub fn offset(&self, rank: usize) -> f64 {
        if rank == 0 {
            0.0
        } else {
            self.offsets[rank - 1]
        }
    }

    pub fn rtt(&self, rank: usize) -> f64 {
        if rank == 0 {
            0.0
        } else {
            self.rtt[rank - 1]
        }
    }

    pub fn max_rtt(&self) -> f64 {
        self.rtt.iter().copied().fold(0.0, f64::max)
    }

    /// Lead time used by the first synchronized-start attempt.
    pub fn start_delta(&self) -> f64 {
        (START_RTT_FACTOR * self.max_rtt()).max(START_FLOOR)
    }

    fn encode(&self) -> Vec<u8> {
        self.offsets
            .iter()
            .chain(&self.rtt)
            .flat_map(|v| v.to_le_bytes())
            .collect()
    }

    fn decode(bytes: &[u8]) -> Self {
        let vals: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let (offsets, rtt) = vals.split_at(vals.len() / 2);
        ClockSync {
            offsets: offsets.to_vec(),
            rtt: rtt.to_vec(),
        }
    }
}

/// Estimates every PE's clock offset to PE 0. Collective over all PEs.
///
/// PE 0 exchanges [`SYNC_ROUNDS`] ping-pongs with each other PE in turn and
/// keeps the midpoint estimate of the exchange with the smallest round trip.
pub fn sync_clocks(pe: &Pe) -> ClockSync {
    let n = pe.npes();
    if n == 1 {
        return ClockSync::zero(1);
    }
    pe.barrier_all();
    let epoch = pe.next_epoch(TeamId::World);
    let mut result = ClockSync::zero(n);
    for p in 1..n {
        for round in 0..SYNC_ROUNDS as u32 {
            let ping = 2 * round;
            let pong = ping + 1;
            if pe.rank() == 0 {
                let t0 = pe.now();
                pe.send_msg(
                    p,
                    TeamId::World,
                    epoch,
                    ping,
                    CollOp::ClockSync,
                    Vec::new(),
                    8,
                );
                let reply = pe.recv_msg(TeamId::World, epoch, pong, p, CollOp::ClockSync);
                let t1 = pe.now();
                let remote = f64::from_le_bytes(reply[..8].try_into().unwrap());
                let rtt = t1 - t0;
                if round == 0 || rtt < result.rtt[p - 1] {
                    result.rtt[p - 1] = rtt;
                    result.offsets[p - 1] = remote - (t0 + t1) / 2.0;
                }
            } else if pe.rank() == p {
                pe.recv_msg(TeamId::World, epoch, ping, 0, CollOp::ClockSync);
                let reading = pe.now().to_le_bytes().to_vec();
                pe.send_msg(0, TeamId::World, epoch, pong, CollOp::ClockSync, reading, 8);
            }
        }
    }
    let team = pe.team_world();
    let data = (pe.rank() == 0).then(|| result.encode());
    ClockSync::decode(&pe.bcast_bytes(&team, 0, data))
}

/// Starts all PEs at a common instant. Collective over all PEs.
///
/// PE 0 announces a start time a lead time ahead of its clock. Every PE
/// checks on receipt whether that instant, translated to its own clock, has
/// already passed. If any PE was late the attempt is repeated once with
/// twice the lead time. On success every PE busy-waits until its corrected
/// clock reaches the start time. Returns the lead time used.
pub fn synchronized_start(pe: &Pe, sync: &ClockSync) -> Result<f64> {
    let team = pe.team_world();
    let first = sync.start_delta();
    for delta in [first, 2.0 * first] {
        let announced = (pe.rank() == 0).then(|| (pe.now() + delta).to_le_bytes().to_vec());
        let bytes = pe.bcast_bytes(&team, 0, announced);
        let start = f64::from_le_bytes(bytes[..8].try_into().unwrap());
        let offset = sync.offset(pe.rank());
        let late = pe.now() - offset > start;
        if pe.allreduce_max_u64(&team, late as u64) == 0 {
            pe.wait_until_reading(start + offset);
            return Ok(delta);
        }
        log::debug!(
            "PE {} late for synchronized start with lead {delta:e}",
            pe.rank()
        );
    }
    Err(Error::SyncStart { delta: 2.0 * first })
}
