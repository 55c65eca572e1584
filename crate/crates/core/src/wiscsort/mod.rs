//! Key/value-separated external sort for byte-addressable storage.
//!
//! The run phase gathers only keys (strided for fixed layouts, a serial
//! key-length walk for KLV) into an [`IndexMap`] of (key, value locator)
//! entries. When every entry fits the index budget the sorted index is
//! materialized directly (OnePass). Otherwise sorted index runs are written,
//! merged in one level, and values are fetched in batches through an
//! [`OffsetQueue`] (MergePass).

mod gather;
mod index;
mod merge;
mod plan;
mod runread;

pub use gather::{gather_records, output_bytes, with_sink, OffsetQueue, Sink};
pub use index::{
    decode_entries, encode_entry, run_header, sort_indexmap, write_indexmap_run, IndexEntry,
    IndexMap, Key, RunFile, RunHeader, RUN_HEADER_SIZE, RUN_MAGIC, RUN_VERSION,
};
pub use merge::{MergeState, MergeStats};
pub use plan::{entry_footprint, plan_sort, SortMode, SortPlan, ENTRY_OVERHEAD};
pub use runread::{run_read_klv, run_read_strided};

use crate::clock::Stopwatch;
use crate::device::{Access, Phase};
use crate::error::{Error, Result};
use crate::job::{Algorithm, ModeRequest, SortContext, SortOutcome};
use crate::sched::{run_workers, ConcurrencyMode};

pub(crate) use index::write_run_declared;
pub(crate) use runread::read_keys_strided;

pub fn wiscsort(ctx: &SortContext, request: ModeRequest) -> Result<SortOutcome> {
    let plan = plan_sort(
        ctx.records,
        ctx.layout.key_size,
        ctx.buffers.index_budget,
        ctx.pools,
        &ctx.buffers,
        request,
    )?;
    let mut out = SortOutcome::new(Algorithm::WiscSort);
    out.plan = Some(plan);
    match plan.mode {
        SortMode::OnePass => {
            ctx.times.time_rest(Phase::RunOther, &RUN_PARTS, || {
                let im = read_index(ctx, 0..ctx.records, &mut 0)?;
                let im = ctx
                    .times
                    .time(Phase::RunSort, || sort_indexmap(im, ctx.pools.sort_pool));
                onepass_materialize(ctx, &im)
            })?;
            out.run_count = 0;
        }
        SortMode::MergePass => {
            let runs = build_index_runs(ctx, &plan, IndexSource::Keys)?;
            out.run_count = runs.len();
            out.merge = Some(mergepass(ctx, runs)?);
        }
    }
    Ok(out)
}

/// Gathers the index of records `range` (fixed) or of the next
/// `range.len()` records starting at byte `*cursor` (KLV).
fn read_index(
    ctx: &SortContext,
    range: std::ops::Range<u64>,
    cursor: &mut u64,
) -> Result<IndexMap> {
    ctx.times.time(Phase::RunRead, || {
        if ctx.layout.is_klv() {
            let (im, next) = run_read_klv(
                &ctx.input,
                &ctx.layout,
                *cursor,
                range.end - range.start,
                &ctx.gate,
            )?;
            *cursor = next;
            Ok(im)
        } else {
            run_read_strided(
                &ctx.input,
                &ctx.layout,
                range,
                ctx.pools.read_pool,
                &ctx.gate,
            )
        }
    })
}

/// Writes the records of a sorted index to the output in order.
pub fn onepass_materialize(ctx: &SortContext, im: &IndexMap) -> Result<()> {
    if !im.sorted {
        return Err(Error::Unsupported(
            "materializing needs a sorted index".into(),
        ));
    }
    with_sink(ctx, Phase::RunWrite, |sink| {
        let mut q = OffsetQueue::new(ctx.layout, ctx.buffers.write_buf);
        let mut start = 0;
        for (i, e) in im.entries.iter().enumerate() {
            if q.try_push(e.clone()).is_err() {
                sink.submit(&im.entries[start..i])?;
                start = i;
                q.clear();
                q.try_push(e.clone()).ok();
            }
            if q.is_full() {
                sink.submit(&im.entries[start..=i])?;
                start = i + 1;
                q.clear();
            }
        }
        sink.submit(&im.entries[start..])
    })
}

/// How the run phase obtains index entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexSource {
    /// Key-only reads.
    Keys,
    /// Full records read sequentially, keys extracted in memory.
    FullRecords,
}

/// Timed parts of the run phase; the remainder is RUN other.
pub(crate) const RUN_PARTS: [Phase; 4] = [
    Phase::RunRead,
    Phase::RunSort,
    Phase::RunWrite,
    Phase::RecordRead,
];

/// Reads, sorts and writes one index run per planned chunk.
pub fn build_index_runs(
    ctx: &SortContext,
    plan: &SortPlan,
    source: IndexSource,
) -> Result<Vec<RunFile>> {
    ctx.times.time_rest(Phase::RunOther, &RUN_PARTS, || {
        build_runs(ctx, plan, source)
    })
}

fn build_runs(ctx: &SortContext, plan: &SortPlan, source: IndexSource) -> Result<Vec<RunFile>> {
    let rpr = plan.records_per_run.max(1);
    let n = ctx.records;
    let ranges: Vec<_> = (0..plan.run_count as u64)
        .map(|i| (i * rpr).min(n)..((i + 1) * rpr).min(n))
        .collect();
    let dev = ctx.device();
    let write_run = |im: &IndexMap, i: usize, workers: usize, declared: usize| {
        ctx.times.time(Phase::RunWrite, || {
            write_run_declared(
                im,
                &ctx.scratch_name("run", i),
                dev,
                &ctx.layout,
                ctx.offset_width,
                workers,
                declared,
                &ctx.gate,
            )
        })
    };
    let read_run = |range: std::ops::Range<u64>,
                    cursor: &mut u64,
                    workers: usize,
                    declared: usize|
     -> Result<IndexMap> {
        match source {
            IndexSource::FullRecords => read_index_full(ctx, range, workers, declared),
            IndexSource::Keys if ctx.layout.is_klv() => read_index(ctx, range, cursor),
            IndexSource::Keys => ctx.times.time(Phase::RunRead, || {
                read_keys_strided(&ctx.input, &ctx.layout, range, workers, declared, &ctx.gate)
            }),
        }
    };
    let sort =
        |im: IndexMap, pool: usize| ctx.times.time(Phase::RunSort, || sort_indexmap(im, pool));
    let pools = ctx.pools;

    // per-worker read, sort, write loops over disjoint runs
    if ctx.concurrency == ConcurrencyMode::NoSync && !ctx.layout.is_klv() {
        let width = pools.sort_pool.clamp(1, ranges.len());
        let per_worker = run_workers(width, |w| {
            let mut mine = Vec::new();
            for i in (w..ranges.len()).step_by(width) {
                let im = read_run(ranges[i].clone(), &mut 0, 1, width)?;
                let im = sort(im, 1);
                mine.push((i, write_run(&im, i, 1, width)?));
            }
            Ok(mine)
        })?;
        let mut runs: Vec<_> = per_worker.into_iter().flatten().collect();
        runs.sort_by_key(|(i, _)| *i);
        return Ok(runs.into_iter().map(|(_, r)| r).collect());
    }

    let mut cursor = 0u64;
    if ctx.concurrency == ConcurrencyMode::NoOverlap {
        let mut runs = Vec::with_capacity(ranges.len());
        for (i, r) in ranges.iter().enumerate() {
            let im = read_run(r.clone(), &mut cursor, pools.read_pool, pools.read_pool)?;
            let im = sort(im, pools.sort_pool);
            runs.push(write_run(&im, i, pools.write_pool, pools.write_pool)?);
        }
        return Ok(runs);
    }

    // run i is written in the background while run i+1 is read
    let wp = match ctx.concurrency {
        ConcurrencyMode::NoSync => pools.sort_pool,
        _ => pools.write_pool,
    };
    std::thread::scope(|s| {
        let (tx, rx) = std::sync::mpsc::sync_channel::<(usize, IndexMap)>(0);
        let writer = s.spawn(move || -> Result<Vec<RunFile>> {
            let mut runs = Vec::new();
            for (i, im) in rx {
                runs.push(write_run(&im, i, wp, wp)?);
            }
            Ok(runs)
        });
        let mut produce = || -> Result<()> {
            for (i, r) in ranges.iter().enumerate() {
                let im = read_run(r.clone(), &mut cursor, pools.read_pool, pools.read_pool)?;
                let im = sort(im, pools.sort_pool);
                tx.send((i, im)).map_err(|_| Error::WorkerPanic)?;
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

/// Loads full records sequentially and keeps only (key, record index).
fn read_index_full(
    ctx: &SortContext,
    range: std::ops::Range<u64>,
    workers: usize,
    declared: usize,
) -> Result<IndexMap> {
    if ctx.layout.is_klv() {
        return Err(Error::Unsupported(
            "full-record index loads need a fixed layout".into(),
        ));
    }
    let r = ctx.layout.record_size();
    let k = ctx.layout.key_size;
    let n = (range.end - range.start) as usize;
    let width = workers.clamp(1, n.max(1));
    let parts = crate::sched::split_even(n, width);
    let chunks = ctx.times.time(Phase::RunRead, || {
        run_workers(width, |w| {
            let part = &parts[w];
            let mut out = Vec::with_capacity(part.len());
            let step = (SEQ_CHUNK / r).max(1);
            let mut i = part.start;
            while i < part.end {
                let end = (i + step).min(part.end);
                let bytes = {
                    let _t = ctx.gate.enter_read_phase();
                    ctx.input.read(
                        (range.start + i as u64) * r as u64,
                        (end - i) * r,
                        Access::seq(Phase::RunRead).width(declared),
                    )?
                };
                for (j, rec) in (i..end).zip(bytes.chunks_exact(r)) {
                    out.push(IndexEntry::new(&rec[..k], range.start + j as u64, 0));
                }
                i = end;
            }
            Ok(out)
        })
    })?;
    Ok(IndexMap::unsorted(chunks.into_iter().flatten().collect()))
}

/// Bytes per sequential read call in full-record scans.
pub(crate) const SEQ_CHUNK: usize = 1 << 20;

/// Merges sorted index runs into the output, gathering values in batches.
/// The run files are removed afterwards.
pub fn mergepass(ctx: &SortContext, runs: Vec<RunFile>) -> Result<MergeStats> {
    let dev = ctx.device().clone();
    let names: Vec<String> = runs.iter().map(|r| r.file.name().to_string()).collect();
    let res = merge_runs(ctx, runs);
    for n in names {
        let _ = dev.remove(&n);
    }
    res
}

fn merge_runs(ctx: &SortContext, runs: Vec<RunFile>) -> Result<MergeStats> {
    let gate = &ctx.gate;
    let dev = ctx.device();
    let sw = Stopwatch::start();
    let mut spent = 0u64;
    let mut timed = |phase: Phase, f: &mut dyn FnMut() -> Result<()>| -> Result<()> {
        let t = Stopwatch::start();
        let r = f();
        let ns = t.elapsed_ns();
        spent += ns;
        if phase == Phase::MergeRead {
            ctx.times.add(phase, ns);
        }
        r
    };
    let mut reopened = Vec::with_capacity(runs.len());
    timed(Phase::MergeRead, &mut || {
        for r in &runs {
            let f = dev.open_file(r.file.name())?;
            let _t = gate.enter_read_phase();
            reopened.push(RunFile::open(f, Access::seq(Phase::MergeRead))?);
        }
        Ok(())
    })?;
    drop(runs);
    let stats = with_sink(ctx, Phase::MergeWrite, |sink| {
        let mut st = None;
        timed(Phase::MergeRead, &mut || {
            st = Some(MergeState::init(
                std::mem::take(&mut reopened),
                ctx.buffers.read_buf,
                gate,
            )?);
            Ok(())
        })?;
        let mut st = st.unwrap();
        let mut q = OffsetQueue::new(ctx.layout, ctx.buffers.write_buf);
        loop {
            let (e, run) = match st.select_min() {
                Ok(x) => x,
                Err(Error::Exhausted) => break,
                Err(e) => return Err(e),
            };
            if st.needs_refill(run) {
                timed(Phase::MergeRead, &mut || st.refill_or_retire(run, gate))?;
            }
            if let Err(e) = q.try_push(e) {
                timed(Phase::RecordRead, &mut || sink.submit(q.entries()))?;
                q.clear();
                q.try_push(e).ok();
            }
            if q.is_full() {
                timed(Phase::RecordRead, &mut || sink.submit(q.entries()))?;
                q.clear();
            }
        }
        timed(Phase::RecordRead, &mut || sink.submit(q.entries()))?;
        Ok(st.stats())
    })?;
    ctx.times
        .add(Phase::MergeOther, sw.elapsed_ns().saturating_sub(spent));
    Ok(stats)
}
