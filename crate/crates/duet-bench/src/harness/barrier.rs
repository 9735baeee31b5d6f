//! File-backed shared-memory rendezvous for two workload processes.
//!
//! The barrier is a 64-byte memory-mapped file of atomics. Each party claims
//! one of two slots on attach, then per iteration increments its own arrival
//! counter and spins until the partner's counter catches up. A party that
//! stops participating *detaches*: every subsequent (or in-flight) wait on
//! the other side returns immediately with [`Wait::Detached`] instead of
//! blocking forever.
//!
//! Attachment also serves as the start gate: [`BarrierParty::attach`] blocks
//! until the harness releases the run via [`BarrierControl::release_start`],
//! which the harness does only after both children are spawned and pinned.

use std::fs::OpenOptions;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use memmap2::MmapMut;
use thiserror::Error;

const MAGIC: u64 = 0x6475_6574_6272_7231; // "duetbr1"
const BARRIER_BYTES: u64 = 64;

const IDX_MAGIC: usize = 0;
const IDX_CLAIM: usize = 1;
const IDX_GO: usize = 2;
const IDX_DETACHED: usize = 3;
const IDX_ARRIVE_0: usize = 4;
const IDX_ARRIVE_1: usize = 5;

#[derive(Debug, Error)]
pub enum BarrierError {
    #[error("barrier i/o on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0} is not a barrier file")]
    BadMagic(String),
    #[error("barrier {0} already has two parties")]
    Full(String),
    #[error("timed out after {0:?} waiting at the barrier")]
    Timeout(Duration),
}

/// Outcome of one rendezvous.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wait {
    /// The partner arrived; both parties proceed together.
    Released,
    /// The partner has detached; proceed (or stop filling) without it.
    Detached,
}

struct Shared {
    map: MmapMut,
}

// The mapping is page-aligned and all cells are 8-byte slots, so casting to
// AtomicU64 is sound; both processes agree on the layout via MAGIC.
impl Shared {
    fn cell(&self, idx: usize) -> &AtomicU64 {
        debug_assert!(idx < (BARRIER_BYTES as usize) / 8);
        unsafe { &*(self.map.as_ptr().add(idx * 8) as *const AtomicU64) }
    }

    fn open(path: &Path, create: bool) -> Result<Self, BarrierError> {
        let io_err = |e| BarrierError::Io {
            path: path.display().to_string(),
            source: e,
        };
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .create_new(create)
            .open(path)
            .map_err(io_err)?;
        file.set_len(BARRIER_BYTES).map_err(io_err)?;
        let map = unsafe { MmapMut::map_mut(&file) }.map_err(io_err)?;
        Ok(Shared { map })
    }
}

fn spin_until<F: FnMut() -> bool>(timeout: Duration, mut done: F) -> bool {
    let deadline = Instant::now() + timeout;
    let mut spins = 0u32;
    loop {
        if done() {
            return true;
        }
        spins += 1;
        if spins % 64 == 0 {
            if Instant::now() >= deadline {
                return false;
            }
            std::thread::yield_now();
        } else {
            std::hint::spin_loop();
        }
    }
}

/// Harness-side handle: creates the barrier file and releases the start gate.
pub struct BarrierControl {
    shared: Shared,
}

impl BarrierControl {
    pub fn create(path: &Path) -> Result<Self, BarrierError> {
        let shared = Shared::open(path, true)?;
        shared.cell(IDX_MAGIC).store(MAGIC, Ordering::Release);
        Ok(BarrierControl { shared })
    }

    /// Opens the start gate; attached parties begin iterating.
    pub fn release_start(&self) {
        self.shared.cell(IDX_GO).store(1, Ordering::Release);
    }

    pub fn is_detached(&self) -> bool {
        self.shared.cell(IDX_DETACHED).load(Ordering::Acquire) != 0
    }
}

/// Child-side handle to one of the two barrier slots.
pub struct BarrierParty {
    shared: Shared,
    slot: usize,
    arrivals: u64,
}

impl BarrierParty {
    /// Claims a slot and blocks until the harness releases the start gate.
    pub fn attach(path: &Path, timeout: Duration) -> Result<Self, BarrierError> {
        let shared = Shared::open(path, false)?;
        if shared.cell(IDX_MAGIC).load(Ordering::Acquire) != MAGIC {
            return Err(BarrierError::BadMagic(path.display().to_string()));
        }
        let claim = shared.cell(IDX_CLAIM);
        let slot = loop {
            let current = claim.load(Ordering::Acquire);
            if current >= 2 {
                return Err(BarrierError::Full(path.display().to_string()));
            }
            if claim
                .compare_exchange(current, current + 1, Ordering::AcqRel, Ordering::Acquire)
                .is_ok()
            {
                break current as usize;
            }
        };
        let party = BarrierParty {
            shared,
            slot,
            arrivals: 0,
        };
        let go = party.shared.cell(IDX_GO);
        if !spin_until(timeout, || go.load(Ordering::Acquire) != 0) {
            return Err(BarrierError::Timeout(timeout));
        }
        Ok(party)
    }

    fn my_cell(&self) -> &AtomicU64 {
        self.shared
            .cell(if self.slot == 0 { IDX_ARRIVE_0 } else { IDX_ARRIVE_1 })
    }

    fn partner_cell(&self) -> &AtomicU64 {
        self.shared
            .cell(if self.slot == 0 { IDX_ARRIVE_1 } else { IDX_ARRIVE_0 })
    }

    /// Arrives at the rendezvous and waits for the partner (or a detach).
    pub fn arrive_and_wait(&mut self, timeout: Duration) -> Result<Wait, BarrierError> {
        self.arrivals += 1;
        self.my_cell().store(self.arrivals, Ordering::Release);
        let target = self.arrivals;
        let partner = self.partner_cell();
        let detached = self.shared.cell(IDX_DETACHED);
        let mut outcome = Wait::Released;
        let ok = spin_until(timeout, || {
            // A completed rendezvous wins over a concurrent detach.
            if partner.load(Ordering::Acquire) >= target {
                outcome = Wait::Released;
                return true;
            }
            if detached.load(Ordering::Acquire) != 0 {
                outcome = Wait::Detached;
                return true;
            }
            false
        });
        if ok {
            Ok(outcome)
        } else {
            Err(BarrierError::Timeout(timeout))
        }
    }

    /// Marks this party as finished, releasing the partner now and for all
    /// future arrivals.
    pub fn detach(&self) {
        self.shared.cell(IDX_DETACHED).store(1, Ordering::Release);
    }

    pub fn is_detached(&self) -> bool {
        self.shared.cell(IDX_DETACHED).load(Ordering::Acquire) != 0
    }
}
