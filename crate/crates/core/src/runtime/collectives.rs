//! Teams and collective operations.
//!
//! Broadcast and reduction follow a binomial tree over team ranks (largest
//! subtree first), sync/barrier use the dissemination pattern, and the
//! concatenation and exchange collectives send linearly to every member.

use super::msg::CollOp;
use super::rma::ContextId;
use super::{Pe, SymRef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TeamId {
    World,
    Half,
}

impl TeamId {
    fn slot(self) -> usize {
        match self {
            TeamId::World => 0,
            TeamId::Half => 1,
        }
    }
}

/// Ordered, duplicate-free set of PEs taking part in a collective.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Team {
    id: TeamId,
    members: Vec<usize>,
}

impl Team {
    pub fn world(npes: usize) -> Team {
        Team {
            id: TeamId::World,
            members: (0..npes).collect(),
        }
    }

    /// PEs 0 .. ceil(npes / 2) - 1.
    pub fn half(npes: usize) -> Team {
        Team {
            id: TeamId::Half,
            members: (0..npes.div_ceil(2)).collect(),
        }
    }

    pub fn id(&self) -> TeamId {
        self.id
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn rank_of(&self, pe: usize) -> Option<usize> {
        self.members.iter().position(|&m| m == pe)
    }

    pub fn contains(&self, pe: usize) -> bool {
        self.rank_of(pe).is_some()
    }
}

// Phase offsets inside one collective's tag space.
const PHASE_REDUCE: u32 = 0;
const PHASE_BCAST: u32 = 1 << 16;

fn and_into(acc: &mut [u8], other: &[u8]) {
    assert_eq!(acc.len(), other.len(), "reduction size mismatch");
    for (a, b) in acc.iter_mut().zip(other) {
        *a &= *b;
    }
}

impl Pe<'_> {
    pub fn team(&self, id: TeamId) -> Team {
        match id {
            TeamId::World => Team::world(self.npes()),
            TeamId::Half => Team::half(self.npes()),
        }
    }

    pub fn team_world(&self) -> Team {
        self.team(TeamId::World)
    }

    pub fn team_half(&self) -> Team {
        self.team(TeamId::Half)
    }

    fn my_team_rank(&self, team: &Team) -> usize {
        team.rank_of(self.rank)
            .unwrap_or_else(|| panic!("PE {} is not a member of team {:?}", self.rank, team.id))
    }

    pub(crate) fn next_epoch(&self, team: TeamId) -> u64 {
        let cell = &self.epochs[team.slot()];
        let e = cell.get();
        cell.set(e + 1);
        e
    }

    /// Dissemination rounds; `token`, when given, must be identical on all
    /// members.
    pub(crate) fn dissemination(&self, team: &Team, token: Option<&[u8]>) {
        let n = team.size();
        let me = self.my_team_rank(team);
        let epoch = self.next_epoch(team.id);
        let mut dist = 1;
        let mut round = 0;
        while dist < n {
            let to = team.members[(me + dist) % n];
            let from = team.members[(me + n - dist) % n];
            let payload = token.map(<[u8]>::to_vec).unwrap_or_default();
            self.send_msg(to, team.id, epoch, round, CollOp::Sync, payload, 8);
            let got = self.recv_msg(team.id, epoch, round, from, CollOp::Sync);
            if let Some(token) = token {
                assert_eq!(
                    got, token,
                    "symmetric consistency violated between PE {from} and PE {}",
                    self.rank
                );
            }
            dist <<= 1;
            round += 1;
        }
    }

    /// Arrival/departure synchronization only.
    pub fn sync(&self, team: &Team) {
        self.dissemination(team, None);
    }

    /// Completes pending operations on the default context, then syncs.
    pub fn barrier(&self, team: &Team) {
        self.complete(ContextId::DEFAULT, false);
        self.dissemination(team, None);
    }

    pub fn barrier_all(&self) {
        self.barrier(&self.team_world());
    }

    /// Binomial-tree broadcast of raw bytes from team rank `root`.
    pub(crate) fn tree_bcast(
        &self,
        team: &Team,
        epoch: u64,
        phase: u32,
        root: usize,
        data: Option<Vec<u8>>,
        op: CollOp,
    ) -> Vec<u8> {
        let n = team.size();
        let me = self.my_team_rank(team);
        let vr = (me + n - root) % n;
        let mut data = data;
        let mut mask = 1;
        while mask < n {
            if vr & mask != 0 {
                let parent = team.members[(vr - mask + root) % n];
                data = Some(self.recv_msg(team.id, epoch, phase, parent, op));
                break;
            }
            mask <<= 1;
        }
        let data = data.expect("broadcast root must supply data");
        mask >>= 1;
        while mask > 0 {
            if vr + mask < n {
                let child = team.members[(vr + mask + root) % n];
                self.send_msg(child, team.id, epoch, phase, op, data.clone(), data.len());
            }
            mask >>= 1;
        }
        data
    }

    pub(crate) fn bcast_bytes(&self, team: &Team, root: usize, data: Option<Vec<u8>>) -> Vec<u8> {
        let epoch = self.next_epoch(team.id);
        self.tree_bcast(team, epoch, PHASE_BCAST, root, data, CollOp::Bcast)
    }

    /// Binomial reduction towards team rank 0 followed by a broadcast.
    fn tree_allreduce(
        &self,
        team: &Team,
        mut acc: Vec<u8>,
        combine: impl Fn(&mut [u8], &[u8]),
    ) -> Vec<u8> {
        let n = team.size();
        let vr = self.my_team_rank(team);
        let epoch = self.next_epoch(team.id);
        let mut mask = 1;
        let mut sent = false;
        while mask < n {
            if vr & mask != 0 {
                let parent = team.members[vr - mask];
                let len = acc.len();
                self.send_msg(
                    parent,
                    team.id,
                    epoch,
                    PHASE_REDUCE,
                    CollOp::Reduce,
                    acc.clone(),
                    len,
                );
                sent = true;
                break;
            } else if vr + mask < n {
                let child = team.members[vr + mask];
                let got = self.recv_msg(team.id, epoch, PHASE_REDUCE, child, CollOp::Reduce);
                combine(&mut acc, &got);
            }
            mask <<= 1;
        }
        let root_data = (!sent).then_some(acc);
        self.tree_bcast(team, epoch, PHASE_BCAST, 0, root_data, CollOp::Reduce)
    }

    pub(crate) fn allreduce_max_u64(&self, team: &Team, value: u64) -> u64 {
        let out = self.tree_allreduce(team, value.to_le_bytes().to_vec(), |acc, other| {
            let a = u64::from_le_bytes(acc[..8].try_into().unwrap());
            let b = u64::from_le_bytes(other[..8].try_into().unwrap());
            acc.copy_from_slice(&a.max(b).to_le_bytes());
        });
        u64::from_le_bytes(out[..8].try_into().unwrap())
    }

    pub(crate) fn allreduce_sum_f64(&self, team: &Team, value: f64) -> f64 {
        let out = self.tree_allreduce(team, value.to_le_bytes().to_vec(), |acc, other| {
            let a = f64::from_le_bytes(acc[..8].try_into().unwrap());
            let b = f64::from_le_bytes(other[..8].try_into().unwrap());
            acc.copy_from_slice(&(a + b).to_le_bytes());
        });
        f64::from_le_bytes(out[..8].try_into().unwrap())
    }

    /// Linear gather to team rank `root`; returns the contributions in team
    /// order on the root.
    pub(crate) fn gather_bytes(
        &self,
        team: &Team,
        root: usize,
        data: Vec<u8>,
    ) -> Option<Vec<Vec<u8>>> {
        let me = self.my_team_rank(team);
        let epoch = self.next_epoch(team.id);
        if me != root {
            let len = data.len();
            self.send_msg(
                team.members[root],
                team.id,
                epoch,
                0,
                CollOp::Gather,
                data,
                len,
            );
            return None;
        }
        let mut data = Some(data);
        Some(
            (0..team.size())
                .map(|r| {
                    if r == me {
                        data.take().unwrap()
                    } else {
                        self.recv_msg(team.id, epoch, 0, team.members[r], CollOp::Gather)
                    }
                })
                .collect(),
        )
    }

    /// Copies `nbytes` of root's `src` into `dst` on every other member.
    /// The root's `dst` is left unchanged.
    pub fn broadcast(&self, team: &Team, root: usize, dst: SymRef, src: SymRef, nbytes: usize) {
        assert!(
            root < team.size(),
            "broadcast root {root} outside team of {}",
            team.size()
        );
        assert!(
            nbytes <= dst.len && nbytes <= src.len,
            "broadcast buffers too small"
        );
        let me = self.my_team_rank(team);
        let data = (me == root).then(|| self.read_local(src.slice(0, nbytes)));
        let out = self.bcast_bytes(team, root, data);
        if me != root {
            self.write_local(dst.slice(0, nbytes), &out);
        }
    }

    /// Element-wise bitwise AND of `nelems` 64-bit words, result on every
    /// member.
    pub fn reduce_and(&self, team: &Team, dst: SymRef, src: SymRef, nelems: usize) {
        let nbytes = nelems * 8;
        assert!(
            nbytes <= dst.len && nbytes <= src.len,
            "reduce buffers too small"
        );
        let mine = self.read_local(src.slice(0, nbytes));
        let out = self.tree_allreduce(team, mine, and_into);
        self.write_local(dst.slice(0, nbytes), &out);
    }

    fn exchange_linear(
        &self,
        team: &Team,
        op: CollOp,
        mut block_for: impl FnMut(usize) -> Vec<u8>,
    ) -> Vec<Vec<u8>> {
        let n = team.size();
        let me = self.my_team_rank(team);
        let epoch = self.next_epoch(team.id);
        for step in 1..n {
            let to = (me + step) % n;
            let block = block_for(to);
            let len = block.len();
            self.send_msg(team.members[to], team.id, epoch, 0, op, block, len);
        }
        let mut own = Some(block_for(me));
        (0..n)
            .map(|from| {
                if from == me {
                    own.take().unwrap()
                } else {
                    self.recv_msg(team.id, epoch, 0, team.members[from], op)
                }
            })
            .collect()
    }

    /// Concatenates each member's `my_nbytes`-byte contribution in team
    /// order. Contributions may differ in size. Returns the total length.
    pub fn collect(&self, team: &Team, dst: SymRef, src: SymRef, my_nbytes: usize) -> usize {
        assert!(my_nbytes <= src.len, "collect source too small");
        let mine = self.read_local(src.slice(0, my_nbytes));
        let blocks = self.exchange_linear(team, CollOp::Collect, |_| mine.clone());
        let total: usize = blocks.iter().map(Vec::len).sum();
        assert!(
            total <= dst.len,
            "collect destination of {} bytes too small for {total}",
            dst.len
        );
        let mut at = 0;
        for b in &blocks {
            self.write_local(dst.slice(at, b.len()), b);
            at += b.len();
        }
        total
    }

    /// Concatenation with equal contributions of `nbytes`.
    pub fn fcollect(&self, team: &Team, dst: SymRef, src: SymRef, nbytes: usize) {
        let total = self.collect(team, dst, src, nbytes);
        assert_eq!(
            total,
            nbytes * team.size(),
            "fcollect contributions differ in size"
        );
    }

    /// Block transpose: block `j` of `src` on member `i` lands in block `i`
    /// of `dst` on member `j`.
    pub fn alltoall(&self, team: &Team, dst: SymRef, src: SymRef, nbytes_per_pe: usize) {
        let n = team.size();
        assert!(
            n * nbytes_per_pe <= src.len && n * nbytes_per_pe <= dst.len,
            "alltoall buffers too small"
        );
        let blocks = self.exchange_linear(team, CollOp::Alltoall, |j| {
            self.read_local(src.slice(j * nbytes_per_pe, nbytes_per_pe))
        });
        for (i, b) in blocks.iter().enumerate() {
            self.write_local(dst.slice(i * nbytes_per_pe, nbytes_per_pe), b);
        }
    }

    /// Strided block transpose: element `k` for member `j` is read from
    /// `src[(j * nelems + k) * src_stride]` and stored at
    /// `dst[(i * nelems + k) * dst_stride]` on member `j`.
    #[allow(clippy::too_many_arguments)]
    pub fn alltoalls(
        &self,
        team: &Team,
        dst: SymRef,
        src: SymRef,
        dst_stride: usize,
        src_stride: usize,
        elem_width: usize,
        nelems: usize,
    ) {
        let n = team.size();
        assert!(dst_stride >= 1 && src_stride >= 1, "strides must be >= 1");
        assert!((1..=8).contains(&elem_width), "element width must be 1..=8");
        let need = |stride: usize| {
            if n * nelems == 0 {
                0
            } else {
                ((n * nelems - 1) * stride + 1) * elem_width
            }
        };
        assert!(need(src_stride) <= src.len, "alltoalls source too small");
        assert!(
            need(dst_stride) <= dst.len,
            "alltoalls destination too small"
        );
        let blocks = self.exchange_linear(team, CollOp::Alltoalls, |j| {
            let mut out = Vec::with_capacity(nelems * elem_width);
            for k in 0..nelems {
                let at = (j * nelems + k) * src_stride * elem_width;
                out.extend(self.read_local(src.slice(at, elem_width)));
            }
            out
        });
        for (i, b) in blocks.iter().enumerate() {
            for (k, elem) in b.chunks_exact(elem_width).enumerate() {
                let at = (i * nelems + k) * dst_stride * elem_width;
                self.write_local(dst.slice(at, elem_width), elem);
            }
        }
    }
}
