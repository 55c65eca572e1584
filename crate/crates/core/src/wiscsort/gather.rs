use std::sync::mpsc::{channel, sync_channel, Receiver, SyncSender};
use std::sync::Mutex;

use crate::device::{Access, DeviceFile, Phase};
use crate::error::{Error, Result};
use crate::job::SortContext;
use crate::recfmt::{LayoutKind, RecordLayout, VLEN_FIELD_SIZE};
use crate::sched::{run_workers, split_even, write_buffer_bytes, ConcurrencyMode, PhaseGate};

use super::index::IndexEntry;

/// Output-ordered value locators waiting for a batched gather, bounded by
/// the bytes their records occupy in the write buffer.
#[derive(Debug, Clone)]
pub struct OffsetQueue {
    layout: RecordLayout,
    capacity: usize,
    bytes: usize,
    entries: Vec<IndexEntry>,
}

impl OffsetQueue {
    pub fn new(layout: RecordLayout, write_buf: usize) -> Self {
        OffsetQueue {
            layout,
            capacity: write_buf,
            bytes: 0,
            entries: Vec::new(),
        }
    }

    /// Fixed layouts: the entry capacity, write buffer / record size.
    pub fn capacity_records(&self) -> Option<usize> {
        match self.layout.kind {
            LayoutKind::Fixed => Some((self.capacity / self.layout.record_size()).max(1)),
            LayoutKind::Klv => None,
        }
    }

    /// Admits `e` if its output record fits the remaining space. An entry is
    /// always admitted into an empty queue, however large.
    pub fn try_push(&mut self, e: IndexEntry) -> std::result::Result<(), IndexEntry> {
        let len = e.output_len(&self.layout);
        if self.entries.is_empty() || self.bytes + len <= self.capacity {
            self.bytes += len;
            self.entries.push(e);
            Ok(())
        } else {
            Err(e)
        }
    }

    /// True when not even the smallest possible record would fit.
    pub fn is_full(&self) -> bool {
        let smallest = match self.layout.kind {
            LayoutKind::Fixed => self.layout.record_size(),
            LayoutKind::Klv => self.layout.key_size + VLEN_FIELD_SIZE,
        };
        !self.entries.is_empty() && self.bytes + smallest > self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Output bytes of the queued records.
    pub fn bytes(&self) -> usize {
        self.bytes
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn clear(&mut self) {
        self.entries.clear();
        self.bytes = 0;
    }
}

pub fn output_bytes(entries: &[IndexEntry], layout: &RecordLayout) -> usize {
    entries.iter().map(|e| e.output_len(layout)).sum()
}

/// Writes the output records of `entries` into `dst`, reading only the values
/// from `input`. Keys (and KLV lengths) come from the entries.
fn assemble(
    input: &DeviceFile,
    layout: &RecordLayout,
    entries: &[IndexEntry],
    dst: &mut [u8],
    access: Access,
    gate: &PhaseGate,
) -> Result<()> {
    let spans: Vec<(u64, usize)> = entries
        .iter()
        .filter(|e| e.value_len(layout) > 0)
        .map(|e| (e.value_addr(layout), e.value_len(layout)))
        .collect();
    let mut values = vec![0u8; spans.iter().map(|s| s.1).sum()];
    if !values.is_empty() {
        let _t = gate.enter_read_phase();
        input.gather_into(&spans, &mut values, access)?;
    }
    let k = layout.key_size;
    let (mut at, mut vat) = (0usize, 0usize);
    for e in entries {
        let vl = e.value_len(layout);
        dst[at..at + k].copy_from_slice(&e.key);
        at += k;
        if layout.kind == LayoutKind::Klv {
            dst[at..at + VLEN_FIELD_SIZE].copy_from_slice(&e.vlen.to_le_bytes());
            at += VLEN_FIELD_SIZE;
        }
        dst[at..at + vl].copy_from_slice(&values[vat..vat + vl]);
        at += vl;
        vat += vl;
    }
    Ok(())
}

/// Splits `dst` into consecutive pieces whose lengths are the output sizes of
/// each partition of `entries`.
fn split_dst<'d>(
    mut dst: &'d mut [u8],
    entries: &[IndexEntry],
    parts: &[std::ops::Range<usize>],
    layout: &RecordLayout,
) -> Vec<Mutex<&'d mut [u8]>> {
    let mut out = Vec::with_capacity(parts.len());
    for p in parts {
        let (head, tail) = dst.split_at_mut(output_bytes(&entries[p.clone()], layout));
        out.push(Mutex::new(head));
        dst = tail;
    }
    out
}

/// Reads the values of `entries` with `pool` concurrent random readers and
/// places the complete output records, in queue order, into `dst`.
pub fn gather_records(
    input: &DeviceFile,
    layout: &RecordLayout,
    entries: &[IndexEntry],
    dst: &mut [u8],
    pool: usize,
    gate: &PhaseGate,
) -> Result<()> {
    if dst.len() != output_bytes(entries, layout) {
        return Err(Error::Unsupported(
            "gather destination has the wrong size".into(),
        ));
    }
    let width = pool.clamp(1, entries.len().max(1));
    let parts = split_even(entries.len(), width);
    let slices = split_dst(dst, entries, &parts, layout);
    let access = Access::random(Phase::RecordRead).width(width);
    run_workers(width, |w| {
        let mut d = slices[w].lock().unwrap();
        assemble(
            input,
            layout,
            &entries[parts[w].clone()],
            &mut d,
            access,
            gate,
        )
    })?;
    Ok(())
}

/// Destination for output records, written in order from the start of the
/// output file.
pub struct Sink<'a> {
    ctx: &'a SortContext,
    phase: Phase,
    pos: u64,
    tx: Option<SyncSender<(Vec<u8>, u64)>>,
    back: Option<Receiver<Vec<u8>>>,
}

impl Sink<'_> {
    pub fn position(&self) -> u64 {
        self.pos
    }

    fn writer_width(&self) -> usize {
        match self.ctx.concurrency {
            ConcurrencyMode::NoSync => self.ctx.pools.sort_pool,
            _ => self.ctx.pools.write_pool,
        }
    }

    /// An empty buffer, reusing one the background writer has finished with.
    pub fn buffer(&mut self) -> Vec<u8> {
        let mut b = self
            .back
            .as_ref()
            .and_then(|r| r.try_recv().ok())
            .unwrap_or_default();
        b.clear();
        b
    }

    /// Writes `buf` at the current position.
    pub fn write(&mut self, buf: Vec<u8>) -> Result<()> {
        if buf.is_empty() {
            return Ok(());
        }
        let pos = self.pos;
        self.pos += buf.len() as u64;
        match &self.tx {
            Some(tx) => tx.send((buf, pos)).map_err(|_| Error::WorkerPanic),
            None => {
                let ctx = self.ctx;
                ctx.times.time(self.phase, || {
                    write_buffer_bytes(
                        &ctx.gate,
                        &buf,
                        &ctx.output,
                        pos,
                        ctx.pools.write_pool,
                        self.phase,
                    )
                })?;
                Ok(())
            }
        }
    }

    /// Gathers the records of `entries` and writes them at the current position.
    pub fn submit(&mut self, entries: &[IndexEntry]) -> Result<()> {
        if entries.is_empty() {
            return Ok(());
        }
        let ctx = self.ctx;
        let layout = &ctx.layout;
        let total = output_bytes(entries, layout);
        if ctx.concurrency == ConcurrencyMode::NoSync {
            // each worker gathers and writes its own share, no gate
            let width = ctx.pools.sort_pool.clamp(1, entries.len());
            let parts = split_even(entries.len(), width);
            let mut starts = Vec::with_capacity(width);
            let mut at = self.pos;
            for p in &parts {
                starts.push(at);
                at += output_bytes(&entries[p.clone()], layout) as u64;
            }
            let phase = self.phase;
            run_workers(width, |w| {
                let part = &entries[parts[w].clone()];
                let mut buf = vec![0u8; output_bytes(part, layout)];
                ctx.times.time(Phase::RecordRead, || {
                    assemble(
                        &ctx.input,
                        layout,
                        part,
                        &mut buf,
                        Access::random(Phase::RecordRead).width(width),
                        &ctx.gate,
                    )
                })?;
                ctx.times.time(phase, || {
                    let _t = ctx.gate.enter_write_phase();
                    ctx.output
                        .write(starts[w], &buf, Access::seq(phase).width(width))
                })?;
                Ok(())
            })?;
            self.pos += total as u64;
            return Ok(());
        }
        let mut buf = self.buffer();
        buf.resize(total, 0);
        ctx.times.time(Phase::RecordRead, || {
            gather_records(
                &ctx.input,
                layout,
                entries,
                &mut buf,
                ctx.pools.random_read_pool,
                &ctx.gate,
            )
        })?;
        self.write(buf)
    }
}

/// Runs `f` with a sink writing output records labelled `phase`. In Overlap
/// and NoSync modes full buffers are written by a background thread while the
/// caller fills the next one.
pub fn with_sink<R>(
    ctx: &SortContext,
    phase: Phase,
    f: impl FnOnce(&mut Sink<'_>) -> Result<R>,
) -> Result<R> {
    if ctx.concurrency == ConcurrencyMode::NoOverlap {
        let mut sink = Sink {
            ctx,
            phase,
            pos: 0,
            tx: None,
            back: None,
        };
        return f(&mut sink);
    }
    std::thread::scope(|s| {
        // rendezvous channel: one buffer being written, one being filled
        let (tx, rx) = sync_channel::<(Vec<u8>, u64)>(0);
        let (back_tx, back_rx) = channel::<Vec<u8>>();
        let mut sink = Sink {
            ctx,
            phase,
            pos: 0,
            tx: Some(tx),
            back: Some(back_rx),
        };
        let width = sink.writer_width();
        let writer = s.spawn(move || -> Result<()> {
            for (buf, pos) in rx {
                ctx.times.time(phase, || {
                    write_buffer_bytes(&ctx.gate, &buf, &ctx.output, pos, width, phase)
                })?;
                let _ = back_tx.send(buf);
            }
            Ok(())
        });
        let res = f(&mut sink);
        drop(sink);
        let w = writer.join().map_err(|_| Error::WorkerPanic)?;
        w?;
        res
    })
}
