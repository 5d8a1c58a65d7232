//! Collective symmetric allocation.
//!
//! Every call is collective over the world. The allocator is replicated and
//! deterministic, so each PE computes the same handle locally; a barrier
//! carrying the handle verifies that all PEs agree.

use super::{HeapStats, Pe, SymRef};
use crate::error::Result;

fn token(r: &SymRef) -> [u8; 24] {
    let mut t = [0u8; 24];
    t[..8].copy_from_slice(&r.block.to_le_bytes());
    t[8..16].copy_from_slice(&(r.offset as u64).to_le_bytes());
    t[16..].copy_from_slice(&(r.len as u64).to_le_bytes());
    t
}

impl Pe<'_> {
    fn finish_alloc(&self, r: SymRef) -> SymRef {
        self.complete(self.default_ctx(), false);
        self.dissemination(&self.team_world(), Some(&token(&r)));
        r
    }

    pub fn sym_malloc(&self, nbytes: usize) -> Result<SymRef> {
        let r = self.alloc.borrow_mut().alloc(nbytes, 8)?;
        Ok(self.finish_alloc(r))
    }

    /// Allocation whose offset is a multiple of `alignment` (a power of two).
    pub fn sym_align(&self, alignment: usize, nbytes: usize) -> Result<SymRef> {
        let r = self.alloc.borrow_mut().alloc(nbytes, alignment)?;
        Ok(self.finish_alloc(r))
    }

    /// Zero-filled allocation of `count * size` bytes.
    pub fn sym_calloc(&self, count: usize, size: usize) -> Result<SymRef> {
        let nbytes = count.checked_mul(size).ok_or_else(|| {
            crate::error::Error::BadAllocation(format!("calloc({count}, {size}) overflows"))
        })?;
        let r = self.alloc.borrow_mut().alloc(nbytes, 8)?;
        self.world.heap(self.rank).zero(r.offset, r.len);
        Ok(self.finish_alloc(r))
    }

    /// Resizes `r`, preserving the first `min(old, new)` bytes.
    pub fn sym_realloc(&self, r: SymRef, nbytes: usize) -> Result<SymRef> {
        let whole = self.whole_block(&r);
        self.barrier_all();
        let new = self.alloc.borrow_mut().alloc(nbytes, 8)?;
        let keep = whole.len.min(nbytes);
        let data = self.world.heap(self.rank).read_vec(whole.offset, keep);
        self.world.heap(self.rank).write(new.offset, &data, None);
        self.alloc.borrow_mut().free(&whole);
        Ok(self.finish_alloc(new))
    }

    pub fn sym_free(&self, r: SymRef) {
        let whole = self.whole_block(&r);
        self.complete(self.default_ctx(), false);
        self.dissemination(&self.team_world(), Some(&token(&whole)));
        self.alloc.borrow_mut().free(&whole);
    }

    fn whole_block(&self, r: &SymRef) -> SymRef {
        let whole = self
            .alloc
            .borrow()
            .whole(r.block)
            .unwrap_or_else(|| panic!("unknown symmetric block {}", r.block));
        assert_eq!(
            whole.offset, r.offset,
            "free/realloc needs the allocation's base reference"
        );
        whole
    }

    pub fn heap_stats(&self) -> HeapStats {
        self.alloc.borrow().stats()
    }

    pub fn heap_size(&self) -> usize {
        self.alloc.borrow().size()
    }
}
