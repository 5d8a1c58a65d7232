//! One-sided operations, contexts and memory ordering.
//!
//! Puts are queued on a context and delivered by whoever drains the queue:
//! the background progress engine, or the owning PE inside quiet,
//! wait_until and barrier. Only one drainer runs at a time per context and
//! it pops in FIFO order, so delivery within a context follows issue order.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use super::{Pe, ProgressMode, SymRef, World};
use crate::error::{Error, Result};

/// Element width of p/g/iput/iget and the strided collectives.
pub const ELEM: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ContextId(pub(crate) usize);

impl ContextId {
    pub const DEFAULT: ContextId = ContextId(0);

    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CtxOptions {
    pub serialized: bool,
    pub private: bool,
    pub nostore: bool,
}

impl CtxOptions {
    pub const SERIALIZED: CtxOptions = CtxOptions {
        serialized: true,
        private: false,
        nostore: false,
    };
    pub const PRIVATE: CtxOptions = CtxOptions {
        serialized: false,
        private: true,
        nostore: false,
    };
    pub const NOSTORE: CtxOptions = CtxOptions {
        serialized: false,
        private: false,
        nostore: true,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RmaKind {
    Put,
    Get,
    IPut,
    IGet,
    PutNbi,
    GetNbi,
    PElem,
    GElem,
}

/// Descriptor of a one-sided transfer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RmaOp {
    pub kind: RmaKind,
    /// `None` when the source is a private buffer captured at post time.
    pub src: Option<SymRef>,
    pub dst: SymRef,
    pub target: usize,
    pub nbytes: usize,
    pub dst_stride: usize,
    pub src_stride: usize,
    pub ctx: ContextId,
}

/// Comparison operators of wait_until / test, on signed 64-bit words.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Eq,
    Ne,
    Gt,
    Ge,
    Lt,
    Le,
}

impl Cmp {
    pub fn holds(self, lhs: i64, rhs: i64) -> bool {
        match self {
            Cmp::Eq => lhs == rhs,
            Cmp::Ne => lhs != rhs,
            Cmp::Gt => lhs > rhs,
            Cmp::Ge => lhs >= rhs,
            Cmp::Lt => lhs < rhs,
            Cmp::Le => lhs <= rhs,
        }
    }
}

enum Pending {
    Op {
        op: RmaOp,
        origin: usize,
        payload: Option<Vec<u8>>,
        stamp: Option<f64>,
    },
    Fence,
}

pub(crate) struct CtxQueue {
    pub id: usize,
    pub options: CtxOptions,
    queue: Mutex<VecDeque<Pending>>,
    deliver: Mutex<()>,
    issued: AtomicU64,
    completed: AtomicU64,
    fences: AtomicU64,
    // latest simulated completion time of anything issued on this context
    last_stamp: AtomicU64,
}

impl CtxQueue {
    pub fn new(id: usize, options: CtxOptions) -> Self {
        CtxQueue {
            id,
            options,
            queue: Mutex::new(VecDeque::new()),
            deliver: Mutex::new(()),
            issued: AtomicU64::new(0),
            completed: AtomicU64::new(0),
            fences: AtomicU64::new(0),
            last_stamp: AtomicU64::new(0f64.to_bits()),
        }
    }

    fn pending(&self) -> u64 {
        self.issued.load(Ordering::Acquire) - self.completed.load(Ordering::Acquire)
    }

    fn bump_stamp(&self, t: f64) {
        if t > self.last_stamp() {
            self.last_stamp.store(t.to_bits(), Ordering::Relaxed);
        }
    }

    fn last_stamp(&self) -> f64 {
        f64::from_bits(self.last_stamp.load(Ordering::Relaxed))
    }

    /// Delivers everything queued so far, in order.
    pub fn drain(&self, world: &World, stamper: Option<&dyn Fn(&RmaOp) -> f64>) {
        let _turn = self.deliver.lock().unwrap();
        loop {
            let next = self.queue.lock().unwrap().pop_front();
            match next {
                None => break,
                Some(Pending::Fence) => {}
                Some(Pending::Op {
                    op,
                    origin,
                    payload,
                    stamp,
                }) => {
                    let stamp = stamp.or_else(|| stamper.map(|s| s(&op)));
                    world.deliver(&op, origin, payload.as_deref(), stamp);
                    self.completed.fetch_add(1, Ordering::Release);
                }
            }
        }
    }
}

/// Byte span of `nelems` elements laid out at `stride` elements apart.
pub(crate) fn strided_span(nelems: usize, stride: usize) -> usize {
    if nelems == 0 {
        0
    } else {
        ((nelems - 1) * stride + 1) * ELEM
    }
}

impl World {
    fn deliver(&self, op: &RmaOp, origin: usize, payload: Option<&[u8]>, stamp: Option<f64>) {
        match op.kind {
            RmaKind::Put | RmaKind::PElem => {
                let data = payload.expect("put without payload");
                self.heap(op.target).write(op.dst.offset, data, stamp);
            }
            RmaKind::IPut => {
                let data = payload.expect("iput without payload");
                let heap = self.heap(op.target);
                for (k, elem) in data.chunks_exact(ELEM).enumerate() {
                    heap.write(op.dst.offset + k * op.dst_stride * ELEM, elem, stamp);
                }
            }
            RmaKind::PutNbi => {
                let src = op.src.expect("put_nbi without source");
                let data = self.heap(origin).read_vec(src.offset, op.nbytes);
                self.heap(op.target).write(op.dst.offset, &data, stamp);
            }
            RmaKind::GetNbi => {
                let src = op.src.expect("get_nbi without source");
                let data = self.heap(op.target).read_vec(src.offset, op.nbytes);
                self.heap(origin).write(op.dst.offset, &data, stamp);
            }
            RmaKind::Get | RmaKind::IGet | RmaKind::GElem => {
                unreachable!("blocking gets are never queued")
            }
        }
    }
}

impl Pe<'_> {
    pub fn default_ctx(&self) -> ContextId {
        ContextId::DEFAULT
    }

    fn queue(&self, ctx: ContextId) -> Arc<CtxQueue> {
        self.world.pes[self.rank]
            .ctxs
            .read()
            .unwrap()
            .get(ctx.0)
            .cloned()
            .flatten()
            .unwrap_or_else(|| panic!("use of destroyed or unknown context {}", ctx.0))
    }

    fn check_ref(&self, r: &SymRef) {
        self.alloc.borrow().validate(r);
    }

    fn check_target(&self, target: usize) {
        assert!(
            target < self.npes(),
            "target PE {target} out of range (npes = {})",
            self.npes()
        );
    }

    /// Assigns a simulated completion time to a transfer issued now. The
    /// PE's outgoing link carries one transfer at a time.
    fn schedule(&self, q: &CtxQueue, nbytes: usize) -> f64 {
        let start = self.clock_base().max(self.link_free.get());
        let done = start + self.costs().transfer(nbytes);
        self.link_free.set(done);
        q.bump_stamp(done);
        done
    }

    fn stamps_at_post(&self) -> bool {
        self.is_virtual() && self.progress_mode() == ProgressMode::Async
    }

    fn drain_own(&self, q: &CtxQueue) {
        if self.is_virtual() && self.progress_mode() == ProgressMode::QuietOnly {
            q.drain(self.world, Some(&|op: &RmaOp| self.schedule(q, op.nbytes)));
        } else {
            q.drain(self.world, None);
        }
    }

    fn post(&self, op: RmaOp, payload: Option<Vec<u8>>) {
        let q = self.queue(op.ctx);
        let stamp = self.stamps_at_post().then(|| self.schedule(&q, op.nbytes));
        q.issued.fetch_add(1, Ordering::Release);
        q.queue.lock().unwrap().push_back(Pending::Op {
            op,
            origin: self.rank,
            payload,
            stamp,
        });
        if self.progress_mode() == ProgressMode::Async {
            self.world.wake(self.rank);
        }
    }

    /// Copies `src` into `dst` on `target`. Returns once `src` may be reused;
    /// remote delivery is only guaranteed after quiet.
    pub fn put(&self, ctx: ContextId, dst: SymRef, src: &[u8], target: usize) {
        self.check_ref(&dst);
        self.check_target(target);
        assert!(
            src.len() <= dst.len,
            "put of {} bytes into {}-byte destination",
            src.len(),
            dst.len
        );
        let op = RmaOp {
            kind: RmaKind::Put,
            src: None,
            dst,
            target,
            nbytes: src.len(),
            dst_stride: 1,
            src_stride: 1,
            ctx,
        };
        self.post(op, Some(src.to_vec()));
    }

    /// Non-blocking put from the local copy of symmetric `src`. The source
    /// is read at delivery time and must stay untouched until quiet.
    pub fn put_nbi(&self, ctx: ContextId, dst: SymRef, src: SymRef, target: usize) {
        self.check_ref(&dst);
        self.check_ref(&src);
        self.check_target(target);
        assert!(
            src.len <= dst.len,
            "put_nbi of {} bytes into {}-byte destination",
            src.len,
            dst.len
        );
        let op = RmaOp {
            kind: RmaKind::PutNbi,
            src: Some(src),
            dst,
            target,
            nbytes: src.len,
            dst_stride: 1,
            src_stride: 1,
            ctx,
        };
        self.charge(self.costs().gamma);
        self.post(op, None);
    }

    /// Strided put of `nelems` 8-byte elements from local symmetric `src`.
    #[allow(clippy::too_many_arguments)]
    pub fn iput(
        &self,
        ctx: ContextId,
        dst: SymRef,
        src: SymRef,
        dst_stride: usize,
        src_stride: usize,
        nelems: usize,
        target: usize,
    ) {
        self.check_ref(&dst);
        self.check_ref(&src);
        self.check_target(target);
        assert!(dst_stride >= 1 && src_stride >= 1, "strides must be >= 1");
        assert!(
            strided_span(nelems, dst_stride) <= dst.len,
            "iput overruns destination"
        );
        assert!(
            strided_span(nelems, src_stride) <= src.len,
            "iput overruns source"
        );
        let heap = self.world.heap(self.rank);
        let mut payload = vec![0u8; nelems * ELEM];
        for (k, elem) in payload.chunks_exact_mut(ELEM).enumerate() {
            heap.read(src.offset + k * src_stride * ELEM, elem);
        }
        let op = RmaOp {
            kind: RmaKind::IPut,
            src: Some(src),
            dst,
            target,
            nbytes: nelems * ELEM,
            dst_stride,
            src_stride,
            ctx,
        };
        self.post(op, Some(payload));
    }

    /// Single-element put.
    pub fn p(&self, ctx: ContextId, dst: SymRef, value: u64, target: usize) {
        self.check_ref(&dst);
        self.check_target(target);
        assert!(dst.len >= ELEM, "p into {}-byte destination", dst.len);
        let op = RmaOp {
            kind: RmaKind::PElem,
            src: None,
            dst: dst.slice(0, ELEM),
            target,
            nbytes: ELEM,
            dst_stride: 1,
            src_stride: 1,
            ctx,
        };
        self.post(op, Some(value.to_le_bytes().to_vec()));
    }

    /// Blocking get of `dst.len()` bytes from `src` on `target`.
    pub fn get(&self, ctx: ContextId, dst: &mut [u8], src: SymRef, target: usize) {
        self.check_ref(&src);
        self.check_target(target);
        let _ = self.queue(ctx);
        assert!(
            dst.len() <= src.len,
            "get of {} bytes from {}-byte source",
            dst.len(),
            src.len
        );
        self.world.heap(target).read(src.offset, dst);
        self.charge(self.costs().transfer(dst.len()));
    }

    /// Blocking get of `src.len` bytes into the local copy of `dst`.
    pub fn get_into(&self, ctx: ContextId, dst: SymRef, src: SymRef, target: usize) {
        self.check_ref(&dst);
        assert!(
            src.len <= dst.len,
            "get of {} bytes into {}-byte destination",
            src.len,
            dst.len
        );
        let mut buf = vec![0u8; src.len];
        self.get(ctx, &mut buf, src, target);
        self.world.heap(self.rank).write(dst.offset, &buf, None);
    }

    /// Non-blocking get into the local copy of `dst`; data is only
    /// guaranteed present after quiet.
    pub fn get_nbi(&self, ctx: ContextId, dst: SymRef, src: SymRef, target: usize) {
        self.check_ref(&dst);
        self.check_ref(&src);
        self.check_target(target);
        assert!(
            src.len <= dst.len,
            "get_nbi of {} bytes into {}-byte destination",
            src.len,
            dst.len
        );
        let op = RmaOp {
            kind: RmaKind::GetNbi,
            src: Some(src),
            dst,
            target,
            nbytes: src.len,
            dst_stride: 1,
            src_stride: 1,
            ctx,
        };
        self.charge(self.costs().gamma);
        self.post(op, None);
    }

    /// Blocking strided get of `nelems` 8-byte elements.
    #[allow(clippy::too_many_arguments)]
    pub fn iget(
        &self,
        ctx: ContextId,
        dst: SymRef,
        src: SymRef,
        dst_stride: usize,
        src_stride: usize,
        nelems: usize,
        target: usize,
    ) {
        self.check_ref(&dst);
        self.check_ref(&src);
        self.check_target(target);
        let _ = self.queue(ctx);
        assert!(dst_stride >= 1 && src_stride >= 1, "strides must be >= 1");
        assert!(
            strided_span(nelems, dst_stride) <= dst.len,
            "iget overruns destination"
        );
        assert!(
            strided_span(nelems, src_stride) <= src.len,
            "iget overruns source"
        );
        let remote = self.world.heap(target);
        let local = self.world.heap(self.rank);
        let mut elem = [0u8; ELEM];
        for k in 0..nelems {
            remote.read(src.offset + k * src_stride * ELEM, &mut elem);
            local.write(dst.offset + k * dst_stride * ELEM, &elem, None);
        }
        self.charge(self.costs().transfer(nelems * ELEM));
    }

    /// Single-element get.
    pub fn g(&self, ctx: ContextId, src: SymRef, target: usize) -> u64 {
        let mut buf = [0u8; ELEM];
        self.get(ctx, &mut buf, src.slice(0, ELEM), target);
        u64::from_le_bytes(buf)
    }

    /// Blocks until every operation issued on `ctx` has been delivered.
    pub fn quiet(&self, ctx: ContextId) {
        self.complete(ctx, true);
    }

    pub(crate) fn complete(&self, ctx: ContextId, charge_quiet: bool) {
        let q = self.queue(ctx);
        loop {
            self.drain_own(&q);
            if q.pending() == 0 {
                break;
            }
            // the progress engine holds the delivery turn
            self.idle();
        }
        if self.is_virtual() {
            self.clock.merge(q.last_stamp());
            if charge_quiet {
                self.charge(self.costs().quiet);
            }
        }
    }

    /// Orders delivery: operations issued after the fence reach any given
    /// target after those issued before it. Does not wait.
    pub fn fence(&self, ctx: ContextId) {
        let q = self.queue(ctx);
        q.queue.lock().unwrap().push_back(Pending::Fence);
        q.fences.fetch_add(1, Ordering::Relaxed);
        self.charge(self.costs().gamma);
    }

    /// Delivers what is queued on this PE's contexts.
    pub(crate) fn progress_own(&self) {
        for q in self.world.contexts(self.rank) {
            self.drain_own(&q);
        }
    }

    fn check_word(&self, r: &SymRef) {
        self.check_ref(r);
        assert!(
            r.len >= ELEM && r.offset.is_multiple_of(ELEM),
            "not an aligned machine word"
        );
    }

    /// Blocks until the local word at `r` satisfies `cmp value`.
    pub fn wait_until(&self, r: SymRef, cmp: Cmp, value: i64) {
        self.check_word(&r);
        let heap = self.world.heap(self.rank);
        loop {
            // Progress first so that when our own operations are delivered
            // does not depend on how early the condition was met.
            self.progress_own();
            let current = heap.word(r.offset).load(Ordering::Acquire) as i64;
            if cmp.holds(current, value) {
                self.clock.merge(heap.stamp(r.offset));
                return;
            }
            self.idle();
        }
    }

    /// Current truth of `cmp value` on the local word at `r`.
    pub fn test(&self, r: SymRef, cmp: Cmp, value: i64) -> bool {
        self.check_word(&r);
        self.charge(self.costs().gamma);
        let heap = self.world.heap(self.rank);
        let current = heap.word(r.offset).load(Ordering::Acquire) as i64;
        let ok = cmp.holds(current, value);
        if ok {
            self.clock.merge(heap.stamp(r.offset));
        }
        ok
    }

    /// Reads the local copy of `r`.
    pub fn read_local(&self, r: SymRef) -> Vec<u8> {
        self.check_ref(&r);
        self.world.heap(self.rank).read_vec(r.offset, r.len)
    }

    /// Writes the local copy of `r` (plain store, no transfer).
    pub fn write_local(&self, r: SymRef, data: &[u8]) {
        self.check_ref(&r);
        assert!(data.len() <= r.len, "local write overruns reference");
        self.world.heap(self.rank).write(r.offset, data, None);
    }

    pub fn read_word(&self, r: SymRef) -> u64 {
        self.check_word(&r);
        self.world
            .heap(self.rank)
            .word(r.offset)
            .load(Ordering::Acquire)
    }

    pub fn write_word(&self, r: SymRef, value: u64) {
        self.check_word(&r);
        let heap = self.world.heap(self.rank);
        heap.set_stamp(r.offset, self.clock_base());
        heap.word(r.offset).store(value, Ordering::Release);
    }

    /// Operations issued on `ctx` and not yet delivered.
    pub fn pending_ops(&self, ctx: ContextId) -> u64 {
        self.queue(ctx).pending()
    }

    /// Fence markers ever inserted on `ctx`.
    pub fn fence_count(&self, ctx: ContextId) -> u64 {
        self.queue(ctx).fences.load(Ordering::Relaxed)
    }

    pub fn ctx_create(&self, options: CtxOptions) -> ContextId {
        self.charge(self.costs().gamma);
        let mut table = self.world.pes[self.rank].ctxs.write().unwrap();
        let id = table.len();
        table.push(Some(Arc::new(CtxQueue::new(id, options))));
        ContextId(id)
    }

    /// Quiesces and frees a context.
    pub fn ctx_destroy(&self, ctx: ContextId) -> Result<()> {
        if ctx == ContextId::DEFAULT {
            return Err(Error::Context(
                "the default context cannot be destroyed".into(),
            ));
        }
        let live = self.world.pes[self.rank]
            .ctxs
            .read()
            .unwrap()
            .get(ctx.0)
            .is_some_and(|c| c.is_some());
        if !live {
            return Err(Error::Context(format!(
                "context {} is not live (double destroy?)",
                ctx.0
            )));
        }
        self.complete(ctx, false);
        self.charge(self.costs().gamma);
        self.world.pes[self.rank].ctxs.write().unwrap()[ctx.0] = None;
        Ok(())
    }

    pub fn ctx_options(&self, ctx: ContextId) -> CtxOptions {
        self.queue(ctx).options
    }

    /// Number of live contexts, the default one included.
    pub fn live_contexts(&self) -> usize {
        self.world.contexts(self.rank).len()
    }
}
