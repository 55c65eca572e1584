use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::clock::Stopwatch;
use crate::device::{Access, DeviceFile, Phase};
use crate::error::{Error, Result};
use crate::job::{Algorithm, SortContext, SortOutcome};
use crate::sched::{run_workers, split_even, write_split, ConcurrencyMode};
use crate::wiscsort::{with_sink, Key, MergeStats};

use super::stream::RecordStream;

/// A run held in memory: concatenated records and their start offsets.
struct MemRun {
    bytes: Vec<u8>,
    starts: Vec<usize>,
}

impl MemRun {
    fn record(&self, i: usize) -> &[u8] {
        let end = self.starts.get(i + 1).copied().unwrap_or(self.bytes.len());
        &self.bytes[self.starts[i]..end]
    }

    /// Records ordered by key; equal keys keep input order.
    fn sorted_bytes(&self, key_size: usize, sort_pool: usize) -> Vec<u8> {
        let mut order: Vec<u32> = (0..self.starts.len() as u32).collect();
        let cmp = |a: &u32, b: &u32| {
            let ka = &self.bytes[self.starts[*a as usize]..][..key_size];
            let kb = &self.bytes[self.starts[*b as usize]..][..key_size];
            ka.cmp(kb).then(a.cmp(b))
        };
        if sort_pool > 1 && order.len() >= 4096 {
            if let Ok(pool) = rayon::ThreadPoolBuilder::new()
                .num_threads(sort_pool)
                .build()
            {
                pool.install(|| {
                    use rayon::slice::ParallelSliceMut;
                    order.par_sort_unstable_by(cmp);
                });
            } else {
                order.sort_unstable_by(cmp);
            }
        } else {
            order.sort_unstable_by(cmp);
        }
        let mut out = Vec::with_capacity(self.bytes.len());
        for i in order {
            out.extend_from_slice(self.record(i as usize));
        }
        out
    }
}

struct EmsRun {
    file: DeviceFile,
}

/// External merge sort: sorted runs of full records, then one k-way merge
/// that copies records through a write buffer.
pub fn ems_sort(ctx: &SortContext) -> Result<SortOutcome> {
    let mut out = SortOutcome::new(Algorithm::Ems);
    let runs = ctx
        .times
        .time_rest(Phase::RunOther, &crate::wiscsort::RUN_PARTS, || {
            ems_runs(ctx)
        })?;
    out.run_count = runs.len();
    let dev = ctx.device().clone();
    let names: Vec<String> = runs.iter().map(|r| r.file.name().to_string()).collect();
    let res = ems_merge(ctx, runs);
    for n in names {
        let _ = dev.remove(&n);
    }
    out.merge = Some(res?);
    Ok(out)
}

fn run_bytes_budget(ctx: &SortContext) -> usize {
    let b = ctx.buffers.index_budget.min(usize::MAX as u64) as usize;
    if ctx.layout.is_klv() {
        return b.max(1);
    }
    let r = ctx.layout.record_size();
    let mut rpr = (b / r).max(1);
    let grain = ctx.pools.read_pool.max(1);
    if rpr >= grain {
        rpr -= rpr % grain;
    }
    rpr * r
}

fn write_run(
    ctx: &SortContext,
    i: usize,
    bytes: &[u8],
    workers: usize,
    declared: usize,
) -> Result<EmsRun> {
    ctx.times.time(Phase::RunWrite, || {
        let file = ctx
            .device()
            .create(&ctx.scratch_name("ems", i), bytes.len() as u64)?;
        write_split(
            &ctx.gate,
            bytes,
            &file,
            0,
            workers,
            declared,
            Phase::RunWrite,
        )?;
        Ok(EmsRun { file })
    })
}

/// Reads records `[start, end)` bytes of a fixed-layout input with `workers` readers.
fn read_fixed(
    ctx: &SortContext,
    start: u64,
    end: u64,
    workers: usize,
    declared: usize,
) -> Result<MemRun> {
    let r = ctx.layout.record_size();
    let n = ((end - start) / r as u64) as usize;
    let width = workers.clamp(1, n.max(1));
    let parts = split_even(n, width);
    let chunks = ctx.times.time(Phase::RunRead, || {
        run_workers(width, |w| {
            let p = &parts[w];
            let mut bytes = vec![0u8; p.len() * r];
            let step = (crate::wiscsort::SEQ_CHUNK / r).max(1);
            let mut i = p.start;
            while i < p.end {
                let e = (i + step).min(p.end);
                let dst = &mut bytes[(i - p.start) * r..(e - p.start) * r];
                let _t = ctx.gate.enter_read_phase();
                ctx.input.read_into(
                    start + (i * r) as u64,
                    dst,
                    Access::seq(Phase::RunRead).width(declared),
                )?;
                i = e;
            }
            Ok(bytes)
        })
    })?;
    let bytes: Vec<u8> = chunks.concat();
    let starts = (0..n).map(|i| i * r).collect();
    Ok(MemRun { bytes, starts })
}

fn read_klv_run(ctx: &SortContext, stream: &mut RecordStream, budget: usize) -> Result<MemRun> {
    ctx.times.time(Phase::RunRead, || {
        stream.refill(budget, Access::seq(Phase::RunRead), &ctx.gate)?;
        let mut bytes = Vec::new();
        let mut starts = Vec::new();
        while let Some(rec) = stream.next_record() {
            starts.push(bytes.len());
            bytes.extend_from_slice(rec);
        }
        Ok(MemRun { bytes, starts })
    })
}

fn ems_runs(ctx: &SortContext) -> Result<Vec<EmsRun>> {
    let total = ctx.input.len();
    let budget = run_bytes_budget(ctx);
    let k = ctx.layout.key_size;
    let pools = ctx.pools;
    let sort =
        |run: &MemRun, pool: usize| ctx.times.time(Phase::RunSort, || run.sorted_bytes(k, pool));

    if !ctx.layout.is_klv() {
        let bounds: Vec<(u64, u64)> = (0..total.div_ceil(budget as u64).max(1))
            .map(|i| (i * budget as u64, ((i + 1) * budget as u64).min(total)))
            .collect();
        match ctx.concurrency {
            ConcurrencyMode::NoSync => {
                let width = pools.sort_pool.clamp(1, bounds.len());
                let per = run_workers(width, |w| {
                    let mut mine = Vec::new();
                    for i in (w..bounds.len()).step_by(width) {
                        let run = read_fixed(ctx, bounds[i].0, bounds[i].1, 1, width)?;
                        let sorted = sort(&run, 1);
                        mine.push((i, write_run(ctx, i, &sorted, 1, width)?));
                    }
                    Ok(mine)
                })?;
                let mut runs: Vec<_> = per.into_iter().flatten().collect();
                runs.sort_by_key(|(i, _)| *i);
                return Ok(runs.into_iter().map(|(_, r)| r).collect());
            }
            ConcurrencyMode::NoOverlap => {
                let mut runs = Vec::new();
                for (i, (s, e)) in bounds.iter().enumerate() {
                    let run = read_fixed(ctx, *s, *e, pools.read_pool, pools.read_pool)?;
                    let sorted = sort(&run, pools.sort_pool);
                    runs.push(write_run(
                        ctx,
                        i,
                        &sorted,
                        pools.write_pool,
                        pools.write_pool,
                    )?);
                }
                return Ok(runs);
            }
            ConcurrencyMode::Overlap => {
                return pipelined(ctx, pools.write_pool, |i| {
                    let Some((s, e)) = bounds.get(i) else {
                        return Ok(None);
                    };
                    let run = read_fixed(ctx, *s, *e, pools.read_pool, pools.read_pool)?;
                    Ok(Some(sort(&run, pools.sort_pool)))
                });
            }
        }
    }

    let mut stream = RecordStream::new(ctx.input.clone(), ctx.layout, 0, total);
    if ctx.concurrency == ConcurrencyMode::NoOverlap {
        let mut runs = Vec::new();
        let mut i = 0;
        while i == 0 || !stream.is_exhausted() {
            let run = read_klv_run(ctx, &mut stream, budget)?;
            let sorted = sort(&run, pools.sort_pool);
            runs.push(write_run(
                ctx,
                i,
                &sorted,
                pools.write_pool,
                pools.write_pool,
            )?);
            i += 1;
        }
        return Ok(runs);
    }
    let wp = if ctx.concurrency == ConcurrencyMode::NoSync {
        pools.sort_pool
    } else {
        pools.write_pool
    };
    pipelined(ctx, wp, |i| {
        if i > 0 && stream.is_exhausted() {
            return Ok(None);
        }
        let run = read_klv_run(ctx, &mut stream, budget)?;
        Ok(Some(sort(&run, pools.sort_pool)))
    })
}

/// Produces sorted runs on the calling thread while a background thread
/// writes the previous one.
fn pipelined(
    ctx: &SortContext,
    write_pool: usize,
    mut next: impl FnMut(usize) -> Result<Option<Vec<u8>>>,
) -> Result<Vec<EmsRun>> {
    std::thread::scope(|s| {
        let (tx, rx) = std::sync::mpsc::sync_channel::<(usize, Vec<u8>)>(0);
        let writer = s.spawn(move || -> Result<Vec<EmsRun>> {
            let mut runs = Vec::new();
            for (i, bytes) in rx {
                runs.push(write_run(ctx, i, &bytes, write_pool, write_pool)?);
            }
            Ok(runs)
        });
        let mut produce = || -> Result<()> {
            let mut i = 0;
            while let Some(bytes) = next(i)? {
                tx.send((i, bytes)).map_err(|_| Error::WorkerPanic)?;
                i += 1;
            }
            Ok(())
        };
        let res = produce();
        drop(tx);
        let runs = writer.join().map_err(|_| Error::WorkerPanic)??;
        res?;
        Ok(runs)
    })
}

fn ems_merge(ctx: &SortContext, runs: Vec<EmsRun>) -> Result<MergeStats> {
    let gate = &ctx.gate;
    let access = Access::seq(Phase::MergeRead);
    let n = runs.len();
    let mut streams: Vec<RecordStream> = runs
        .iter()
        .map(|r| RecordStream::new(r.file.clone(), ctx.layout, 0, r.file.len()))
        .collect();
    let mut stats = MergeStats {
        runs: n,
        ..MergeStats::default()
    };
    let sw = Stopwatch::start();
    let mut spent = 0u64;
    let mut live = n;
    let mut heap: BinaryHeap<Reverse<(Key, usize)>> = BinaryHeap::with_capacity(n);
    {
        let t = Stopwatch::start();
        for (i, s) in streams.iter_mut().enumerate() {
            s.refill(ctx.buffers.read_buf / n, access, gate)?;
            match s.peek_key() {
                Some(k) => heap.push(Reverse((Key::from_slice(k), i))),
                None => {
                    live -= 1;
                    stats.retirements += 1;
                }
            }
        }
        ctx.times.add(Phase::MergeRead, t.elapsed_ns());
        spent += t.elapsed_ns();
    }
    let wb = ctx.buffers.write_buf;
    with_sink(ctx, Phase::MergeWrite, |sink| {
        let mut buf = sink.buffer();
        // single thread: find the minimum and copy its record immediately
        while let Some(Reverse((_, i))) = heap.pop() {
            stats.selections += 1;
            let rec = streams[i]
                .next_record()
                .expect("heap entry has a buffered record");
            if !buf.is_empty() && buf.len() + rec.len() > wb {
                let t = Stopwatch::start();
                sink.write(std::mem::take(&mut buf))?;
                buf = sink.buffer();
                spent += t.elapsed_ns();
            }
            buf.extend_from_slice(rec);
            if !streams[i].has_record() {
                if streams[i].is_exhausted() {
                    live -= 1;
                    stats.retirements += 1;
                    continue;
                }
                let t = Stopwatch::start();
                streams[i].refill(ctx.buffers.read_buf / live.max(1), access, gate)?;
                stats.refills += 1;
                ctx.times.add(Phase::MergeRead, t.elapsed_ns());
                spent += t.elapsed_ns();
            }
            let k = streams[i].peek_key().expect("refilled stream has a record");
            heap.push(Reverse((Key::from_slice(k), i)));
        }
        let t = Stopwatch::start();
        sink.write(buf)?;
        spent += t.elapsed_ns();
        Ok(())
    })?;
    ctx.times
        .add(Phase::MergeOther, sw.elapsed_ns().saturating_sub(spent));
    Ok(stats)
}
