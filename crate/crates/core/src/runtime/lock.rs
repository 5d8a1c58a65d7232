//! Distributed test-and-set lock on a symmetric word hosted by PE 0.

use std::sync::atomic::Ordering;

use super::{Pe, SymRef};

const BACKOFF_INITIAL: f64 = 1e-6;
const BACKOFF_CAP: f64 = 100e-6;
const HOST: usize = 0;

/// Lock word: 0 when free, holder rank + 1 when held.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DistLock {
    word: SymRef,
}

impl DistLock {
    /// `word` must be a zero-initialized symmetric machine word.
    pub fn new(word: SymRef) -> Self {
        assert!(
            word.len >= 8 && word.offset.is_multiple_of(8),
            "lock needs an aligned word"
        );
        DistLock {
            word: word.slice(0, 8),
        }
    }

    pub fn word(&self) -> SymRef {
        self.word
    }
}

impl Pe<'_> {
    fn lock_cas(&self, lock: &DistLock, from: u64, to: u64) -> Result<u64, u64> {
        self.alloc.borrow().validate(&lock.word);
        self.charge(self.costs().signal());
        self.world
            .heap(HOST)
            .word(lock.word.offset)
            .compare_exchange(from, to, Ordering::AcqRel, Ordering::Acquire)
    }

    /// Acquires the lock, retrying with exponential backoff.
    pub fn lock_set(&self, lock: &DistLock) {
        let me = self.rank as u64 + 1;
        let mut backoff = BACKOFF_INITIAL;
        loop {
            match self.lock_cas(lock, 0, me) {
                Ok(_) => break,
                Err(holder) => assert_ne!(holder, me, "PE {} already holds the lock", self.rank),
            }
            self.busy_wait(backoff);
            backoff = (backoff * 2.0).min(BACKOFF_CAP);
        }
        self.held_locks.set(self.held_locks.get() + 1);
    }

    /// Releases a lock held by this PE after completing its pending puts.
    pub fn lock_clear(&self, lock: &DistLock) {
        self.complete(self.default_ctx(), false);
        let me = self.rank as u64 + 1;
        if let Err(holder) = self.lock_cas(lock, me, 0) {
            panic!(
                "PE {} cleared a lock it does not hold (lock word = {holder})",
                self.rank
            );
        }
        self.held_locks.set(self.held_locks.get() - 1);
    }

    /// One acquisition attempt. Returns `true` if the lock was busy, `false`
    /// if this call acquired it.
    pub fn lock_test(&self, lock: &DistLock) -> bool {
        match self.lock_cas(lock, 0, self.rank as u64 + 1) {
            Ok(_) => {
                self.held_locks.set(self.held_locks.get() + 1);
                false
            }
            Err(_) => true,
        }
    }

    /// Raw value of the lock word on its host PE.
    pub fn lock_word_value(&self, lock: &DistLock) -> u64 {
        self.world
            .heap(HOST)
            .word(lock.word.offset)
            .load(Ordering::Acquire)
    }
}
