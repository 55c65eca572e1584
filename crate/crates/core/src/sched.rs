//! Interference-aware scheduling.
//!
//! A [`PhaseGate`] admits device work one direction at a time: in
//! [`ConcurrencyMode::NoOverlap`] a write phase starts only after every read
//! token has been released, and the other way around. Write buffers
//! ([`StagingBuffer`]) are the points where a sorter switches from reading to
//! writing.

use std::collections::VecDeque;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::sync::{Condvar, Mutex};

use crate::device::{Access, DeviceFile, Direction, Phase};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConcurrencyMode {
    /// Every worker loops read, sort, write on its own; no gate, one pool size.
    NoSync,
    /// Separate read and write pools whose operations may overlap.
    Overlap,
    /// Separate pools, and reads never overlap writes.
    NoOverlap,
}

impl ConcurrencyMode {
    pub const ALL: [ConcurrencyMode; 3] = [
        ConcurrencyMode::NoSync,
        ConcurrencyMode::Overlap,
        ConcurrencyMode::NoOverlap,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ConcurrencyMode::NoSync => "nosync",
            ConcurrencyMode::Overlap => "overlap",
            ConcurrencyMode::NoOverlap => "no-overlap",
        }
    }
}

impl fmt::Display for ConcurrencyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConcurrencyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nosync" | "no-sync" => Ok(ConcurrencyMode::NoSync),
            "overlap" => Ok(ConcurrencyMode::Overlap),
            "no-overlap" | "nooverlap" => Ok(ConcurrencyMode::NoOverlap),
            other => Err(Error::Plan(format!("unknown concurrency mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateState {
    Idle,
    Reading,
    Writing,
}

#[derive(Debug)]
struct Inner {
    state: GateState,
    active: usize,
    waiting: VecDeque<(u64, Direction)>,
    next_ticket: u64,
    phases: u64,
}

pub struct PhaseGate {
    mode: ConcurrencyMode,
    inner: Mutex<Inner>,
    cv: Condvar,
}

impl fmt::Debug for PhaseGate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let i = self.inner.lock().unwrap();
        f.debug_struct("PhaseGate")
            .field("mode", &self.mode)
            .field("state", &i.state)
            .field("active", &i.active)
            .finish()
    }
}

/// Grants one class of device operations until dropped.
#[must_use = "the phase ends when the token is dropped"]
pub struct PhaseToken<'a> {
    gate: Option<&'a PhaseGate>,
    direction: Direction,
}

impl PhaseToken<'_> {
    pub fn direction(&self) -> Direction {
        self.direction
    }
}

impl Drop for PhaseToken<'_> {
    fn drop(&mut self) {
        if let Some(g) = self.gate {
            g.release();
        }
    }
}

impl PhaseGate {
    pub fn new(mode: ConcurrencyMode) -> Self {
        PhaseGate {
            mode,
            inner: Mutex::new(Inner {
                state: GateState::Idle,
                active: 0,
                waiting: VecDeque::new(),
                next_ticket: 0,
                phases: 0,
            }),
            cv: Condvar::new(),
        }
    }

    pub fn mode(&self) -> ConcurrencyMode {
        self.mode
    }

    pub fn state(&self) -> GateState {
        self.inner.lock().unwrap().state
    }

    pub fn active(&self) -> usize {
        self.inner.lock().unwrap().active
    }

    pub fn waiting(&self) -> usize {
        self.inner.lock().unwrap().waiting.len()
    }

    /// Number of Idle to Reading/Writing transitions so far.
    pub fn phases_started(&self) -> u64 {
        self.inner.lock().unwrap().phases
    }

    pub fn enter_read_phase(&self) -> PhaseToken<'_> {
        self.enter(Direction::Read)
    }

    pub fn enter_write_phase(&self) -> PhaseToken<'_> {
        self.enter(Direction::Write)
    }

    /// Blocks until `direction` may proceed. Requests of opposing directions
    /// are admitted in arrival order; consecutive requests of one direction
    /// are admitted together.
    pub fn enter(&self, direction: Direction) -> PhaseToken<'_> {
        if self.mode != ConcurrencyMode::NoOverlap {
            return PhaseToken {
                gate: None,
                direction,
            };
        }
        let want = match direction {
            Direction::Read => GateState::Reading,
            Direction::Write => GateState::Writing,
        };
        let mut g = self.inner.lock().unwrap();
        let ticket = g.next_ticket;
        g.next_ticket += 1;
        g.waiting.push_back((ticket, direction));
        loop {
            let compatible = g.state == GateState::Idle || g.state == want;
            let ahead_same = g
                .waiting
                .iter()
                .take_while(|(t, _)| *t != ticket)
                .all(|(_, d)| *d == direction);
            if compatible && ahead_same {
                let pos = g.waiting.iter().position(|(t, _)| *t == ticket).unwrap();
                g.waiting.remove(pos);
                if g.state == GateState::Idle {
                    g.phases += 1;
                }
                g.state = want;
                g.active += 1;
                drop(g);
                // others of the same direction queued behind us may now pass
                self.cv.notify_all();
                return PhaseToken {
                    gate: Some(self),
                    direction,
                };
            }
            g = self.cv.wait(g).unwrap();
        }
    }

    fn release(&self) {
        let mut g = self.inner.lock().unwrap();
        g.active -= 1;
        if g.active == 0 {
            g.state = GateState::Idle;
        }
        drop(g);
        self.cv.notify_all();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BufferRole {
    ReadBuffer,
    WriteBuffer,
}

/// In-memory staging area between device reads and writes.
#[derive(Debug, Clone)]
pub struct StagingBuffer {
    pub role: BufferRole,
    capacity: usize,
    data: Vec<u8>,
}

impl StagingBuffer {
    pub fn new(role: BufferRole, capacity: usize) -> Self {
        StagingBuffer {
            role,
            capacity,
            data: Vec::new(),
        }
    }

    pub fn write_buffer(capacity: usize) -> Self {
        Self::new(BufferRole::WriteBuffer, capacity)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn fill(&self) -> usize {
        self.data.len()
    }

    pub fn remaining(&self) -> usize {
        self.capacity.saturating_sub(self.data.len())
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.data.len() >= self.capacity
    }

    /// Appends if the bytes fit; a single oversized push into an empty buffer
    /// is accepted so that progress is always possible.
    pub fn push(&mut self, bytes: &[u8]) -> bool {
        if bytes.len() <= self.remaining() || self.data.is_empty() {
            self.data.extend_from_slice(bytes);
            true
        } else {
            false
        }
    }

    /// Grows the fill by `len` zero bytes and returns the new region.
    pub fn extend_zeroed(&mut self, len: usize) -> &mut [u8] {
        let start = self.data.len();
        self.data.resize(start + len, 0);
        &mut self.data[start..]
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn clear(&mut self) {
        self.data.clear();
    }
}

/// Splits `0..n` into `parts` contiguous ranges whose lengths differ by at most one.
pub fn split_even(n: usize, parts: usize) -> Vec<Range<usize>> {
    let parts = parts.max(1);
    let base = n / parts;
    let extra = n % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for i in 0..parts {
        let len = base + usize::from(i < extra);
        out.push(start..start + len);
        start += len;
    }
    out
}

/// Runs `f(worker_index)` on `width` scoped threads and collects the results
/// in worker order. A width of one runs inline on the caller's thread.
pub fn run_workers<T, F>(width: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let width = width.max(1);
    if width == 1 {
        return Ok(vec![f(0)?]);
    }
    let f = &f;
    let results: Vec<std::thread::Result<Result<T>>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..width).map(|w| s.spawn(move || f(w))).collect();
        handles.into_iter().map(|h| h.join()).collect()
    });
    results
        .into_iter()
        .map(|r| r.map_err(|_| Error::WorkerPanic)?)
        .collect()
}

/// Writes the buffer sequentially at `file_offset` with `write_pool` workers
/// inside a write phase, then empties it. Returns the bytes written.
pub fn flush_write_buffer(
    gate: &PhaseGate,
    buffer: &mut StagingBuffer,
    file: &DeviceFile,
    file_offset: u64,
    write_pool: usize,
    phase: Phase,
) -> Result<u64> {
    if buffer.role != BufferRole::WriteBuffer {
        return Err(Error::Unsupported("flush needs a write buffer".into()));
    }
    let n = write_buffer_bytes(
        gate,
        buffer.as_slice(),
        file,
        file_offset,
        write_pool,
        phase,
    )?;
    buffer.clear();
    Ok(n)
}

/// Writes `data` at `file_offset`, split evenly across `write_pool` workers
/// that each hold a write token.
pub fn write_buffer_bytes(
    gate: &PhaseGate,
    data: &[u8],
    file: &DeviceFile,
    file_offset: u64,
    write_pool: usize,
    phase: Phase,
) -> Result<u64> {
    let width = write_pool.clamp(1, data.len().max(1));
    write_split(gate, data, file, file_offset, write_pool, width, phase)
}

/// Like [`write_buffer_bytes`], but charges the device as if `declared`
/// writers were active, for callers whose peers write concurrently.
pub fn write_split(
    gate: &PhaseGate,
    data: &[u8],
    file: &DeviceFile,
    file_offset: u64,
    workers: usize,
    declared: usize,
    phase: Phase,
) -> Result<u64> {
    if data.is_empty() {
        return Ok(0);
    }
    let width = workers.clamp(1, data.len());
    let parts = split_even(data.len(), width);
    run_workers(width, |w| {
        let r = parts[w].clone();
        let _token = gate.enter_write_phase();
        file.write(
            file_offset + r.start as u64,
            &data[r],
            Access::seq(phase).width(declared),
        )?;
        Ok(())
    })?;
    Ok(data.len() as u64)
}
