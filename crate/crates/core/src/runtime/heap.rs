//! Symmetric heap storage and the deterministic allocator behind it.
//!
//! Every PE owns one heap region of identical size. The storage is a slice
//! of atomic words so that remote PEs can read and write it concurrently;
//! sub-word writes merge into their word with a CAS loop.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

/// Handle to a symmetric allocation: valid on every PE, resolving to that
/// PE's local copy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SymRef {
    pub block: u64,
    pub offset: usize,
    pub len: usize,
}

impl SymRef {
    /// Sub-range `[off, off + len)` of this reference.
    pub fn slice(&self, off: usize, len: usize) -> SymRef {
        assert!(
            off + len <= self.len,
            "slice {off}+{len} out of bounds of {}-byte reference",
            self.len
        );
        SymRef {
            block: self.block,
            offset: self.offset + off,
            len,
        }
    }

    /// The `i`-th 8-byte word of this reference.
    pub fn word(&self, i: usize) -> SymRef {
        self.slice(i * 8, 8)
    }
}

pub(crate) struct SymHeap {
    words: Box<[AtomicU64]>,
    // Simulated delivery time of the last write to each word; virtual clock only.
    stamps: Option<Box<[AtomicU64]>>,
}

fn zeroed_words(n: usize) -> Box<[AtomicU64]> {
    (0..n).map(|_| AtomicU64::new(0)).collect()
}

impl SymHeap {
    pub fn new(size: usize, with_stamps: bool) -> Self {
        let n = size.div_ceil(8);
        SymHeap {
            words: zeroed_words(n),
            stamps: with_stamps.then(|| zeroed_words(n)),
        }
    }

    pub fn size(&self) -> usize {
        self.words.len() * 8
    }

    fn check(&self, offset: usize, len: usize) {
        assert!(
            offset + len <= self.size(),
            "heap access {offset}+{len} beyond heap size {}",
            self.size()
        );
    }

    pub fn read(&self, offset: usize, out: &mut [u8]) {
        self.check(offset, out.len());
        let mut pos = 0;
        let mut addr = offset;
        while pos < out.len() {
            let shift = addr % 8;
            let take = (8 - shift).min(out.len() - pos);
            let bytes = self.words[addr / 8].load(Ordering::Acquire).to_le_bytes();
            out[pos..pos + take].copy_from_slice(&bytes[shift..shift + take]);
            pos += take;
            addr += take;
        }
    }

    pub fn read_vec(&self, offset: usize, len: usize) -> Vec<u8> {
        let mut out = vec![0u8; len];
        self.read(offset, &mut out);
        out
    }

    pub fn write(&self, offset: usize, data: &[u8], stamp: Option<f64>) {
        if data.is_empty() {
            return;
        }
        self.check(offset, data.len());
        if let (Some(stamp), Some(stamps)) = (stamp, &self.stamps) {
            let bits = stamp.to_bits();
            for w in offset / 8..=(offset + data.len() - 1) / 8 {
                stamps[w].store(bits, Ordering::Relaxed);
            }
        }
        let mut pos = 0;
        let mut addr = offset;
        while pos < data.len() {
            let shift = addr % 8;
            let take = (8 - shift).min(data.len() - pos);
            let word = &self.words[addr / 8];
            if take == 8 {
                let v = u64::from_le_bytes(data[pos..pos + 8].try_into().unwrap());
                word.store(v, Ordering::Release);
            } else {
                let mut bytes = [0u8; 8];
                bytes[shift..shift + take].copy_from_slice(&data[pos..pos + take]);
                let val = u64::from_le_bytes(bytes);
                let mask = ((1u64 << (take * 8)) - 1) << (shift * 8);
                let _ = word.fetch_update(Ordering::Release, Ordering::Relaxed, |old| {
                    Some((old & !mask) | val)
                });
            }
            pos += take;
            addr += take;
        }
    }

    pub fn zero(&self, offset: usize, len: usize) {
        self.write(offset, &vec![0u8; len], None);
    }

    pub fn word(&self, offset: usize) -> &AtomicU64 {
        assert!(
            offset.is_multiple_of(8),
            "word access at unaligned offset {offset}"
        );
        self.check(offset, 8);
        &self.words[offset / 8]
    }

    /// Delivery stamp of the word at `offset`, or 0 without a virtual clock.
    pub fn stamp(&self, offset: usize) -> f64 {
        self.stamps
            .as_ref()
            .map(|s| f64::from_bits(s[offset / 8].load(Ordering::Relaxed)))
            .unwrap_or(0.0)
    }

    pub fn set_stamp(&self, offset: usize, stamp: f64) {
        if let Some(stamps) = &self.stamps {
            stamps[offset / 8].store(stamp.to_bits(), Ordering::Relaxed);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Block {
    offset: usize,
    size: usize,
    len: usize,
}

/// Allocation counters used to audit leaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct HeapStats {
    pub live_blocks: usize,
    pub live_bytes: usize,
    pub free_bytes: usize,
    pub total_allocations: u64,
}

/// First-fit allocator. Every PE runs an identical instance; identical call
/// sequences therefore produce identical handles everywhere.
#[derive(Debug)]
pub(crate) struct SymAllocator {
    size: usize,
    // sorted, coalesced (offset, len)
    free: Vec<(usize, usize)>,
    blocks: BTreeMap<u64, Block>,
    next_id: u64,
}

const GRAIN: usize = 8;

impl SymAllocator {
    pub fn new(size: usize) -> Self {
        SymAllocator {
            size,
            free: vec![(0, size)],
            blocks: BTreeMap::new(),
            next_id: 1,
        }
    }

    pub fn alloc(&mut self, nbytes: usize, alignment: usize) -> Result<SymRef> {
        if nbytes == 0 {
            return Err(Error::BadAllocation("zero-byte allocation".into()));
        }
        if !alignment.is_power_of_two() {
            return Err(Error::BadAllocation(format!(
                "alignment {alignment} is not a power of two"
            )));
        }
        let align = alignment.max(GRAIN);
        let size = nbytes.div_ceil(GRAIN) * GRAIN;
        let slot = self.free.iter().enumerate().find_map(|(i, &(off, len))| {
            let start = off.div_ceil(align) * align;
            (start + size <= off + len).then_some((i, start))
        });
        let Some((i, start)) = slot else {
            return Err(Error::HeapExhausted {
                requested: nbytes,
                available: self.free.iter().map(|f| f.1).max().unwrap_or(0),
            });
        };
        let (off, len) = self.free.remove(i);
        let mut at = i;
        if start > off {
            self.free.insert(at, (off, start - off));
            at += 1;
        }
        let end = start + size;
        if end < off + len {
            self.free.insert(at, (end, off + len - end));
        }
        let id = self.next_id;
        self.next_id += 1;
        self.blocks.insert(
            id,
            Block {
                offset: start,
                size,
                len: nbytes,
            },
        );
        Ok(SymRef {
            block: id,
            offset: start,
            len: nbytes,
        })
    }

    pub fn free(&mut self, r: &SymRef) {
        let block = self
            .blocks
            .remove(&r.block)
            .unwrap_or_else(|| panic!("free of unknown symmetric block {}", r.block));
        assert_eq!(block.offset, r.offset, "free of interior reference");
        let pos = self.free.partition_point(|&(off, _)| off < block.offset);
        self.free.insert(pos, (block.offset, block.size));
        // coalesce with neighbours
        if pos + 1 < self.free.len() {
            let (off, len) = self.free[pos];
            if off + len == self.free[pos + 1].0 {
                self.free[pos].1 += self.free[pos + 1].1;
                self.free.remove(pos + 1);
            }
        }
        if pos > 0 {
            let (off, len) = self.free[pos - 1];
            if off + len == self.free[pos].0 {
                self.free[pos - 1].1 += self.free[pos].1;
                self.free.remove(pos);
            }
        }
    }

    /// Panics unless `r` lies inside a live block.
    pub fn validate(&self, r: &SymRef) {
        let block = self
            .blocks
            .get(&r.block)
            .unwrap_or_else(|| panic!("reference to unknown symmetric block {}", r.block));
        assert!(
            r.offset >= block.offset && r.offset + r.len <= block.offset + block.len,
            "reference {}+{} outside block {} ({}+{})",
            r.offset,
            r.len,
            r.block,
            block.offset,
            block.len
        );
    }

    pub fn whole(&self, block: u64) -> Option<SymRef> {
        self.blocks.get(&block).map(|b| SymRef {
            block,
            offset: b.offset,
            len: b.len,
        })
    }

    pub fn stats(&self) -> HeapStats {
        HeapStats {
            live_blocks: self.blocks.len(),
            live_bytes: self.blocks.values().map(|b| b.len).sum(),
            free_bytes: self.free.iter().map(|f| f.1).sum(),
            total_allocations: self.next_id - 1,
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }
}
