//! Internal point-to-point messages carrying collective traffic.
//!
//! Messages are matched by (team, epoch, tag, sender). Each one carries the
//! simulated arrival time so that virtual clocks advance like Lamport clocks.

use std::time::Duration;

use crossbeam_channel::RecvTimeoutError;

use super::{Pe, TeamId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub(crate) enum CollOp {
    Sync,
    Bcast,
    Reduce,
    Collect,
    Alltoall,
    Alltoalls,
    Gather,
    ClockSync,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub(crate) struct MsgKey {
    pub team: TeamId,
    pub epoch: u64,
    pub tag: u32,
    pub from: usize,
}

#[derive(Debug)]
pub(crate) struct Msg {
    pub key: MsgKey,
    pub op: CollOp,
    pub stamp: f64,
    pub payload: Vec<u8>,
}

impl Pe<'_> {
    /// Sends `payload` to PE `to`, charging the sender for `charge_bytes`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn send_msg(
        &self,
        to: usize,
        team: TeamId,
        epoch: u64,
        tag: u32,
        op: CollOp,
        payload: Vec<u8>,
        charge_bytes: usize,
    ) {
        self.charge(self.costs().transfer(charge_bytes));
        let msg = Msg {
            key: MsgKey {
                team,
                epoch,
                tag,
                from: self.rank,
            },
            op,
            stamp: self.clock_base(),
            payload,
        };
        // The receiver only disappears when the world is torn down.
        if self.world.pes[to].tx.send(msg).is_err() {
            self.world.check_abort();
        }
    }

    pub(crate) fn recv_msg(
        &self,
        team: TeamId,
        epoch: u64,
        tag: u32,
        from: usize,
        op: CollOp,
    ) -> Vec<u8> {
        let key = MsgKey {
            team,
            epoch,
            tag,
            from,
        };
        let stashed = self.stash.borrow_mut().remove(&key);
        let msg = match stashed {
            Some(m) => m,
            None => loop {
                match self.rx.recv_timeout(Duration::from_millis(10)) {
                    Ok(m) if m.key == key => break m,
                    Ok(m) => {
                        self.stash.borrow_mut().insert(m.key, m);
                    }
                    Err(RecvTimeoutError::Timeout) => self.world.check_abort(),
                    Err(RecvTimeoutError::Disconnected) => {
                        self.world.check_abort();
                        panic!("message channel closed");
                    }
                }
            },
        };
        assert_eq!(
            msg.op, op,
            "collective mismatch: PE {} expected {:?} from PE {from}, got {:?}",
            self.rank, op, msg.op
        );
        self.clock.merge(msg.stamp);
        msg.payload
    }
}
