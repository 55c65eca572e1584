use crate::error::{Error, Result};
use crate::job::{BufferConfig, ModeRequest};
use crate::profiler::PoolPlan;

/// In-memory bytes per index entry beyond the key: a full-width offset.
pub const ENTRY_OVERHEAD: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SortMode {
    OnePass,
    MergePass,
}

impl SortMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SortMode::OnePass => "onepass",
            SortMode::MergePass => "mergepass",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SortPlan {
    pub mode: SortMode,
    pub run_count: usize,
    pub records_per_run: u64,
    pub merge_levels: u32,
    pub read_buf: usize,
    pub write_buf: usize,
    pub pools: PoolPlan,
}

pub fn entry_footprint(key_size: usize) -> u64 {
    key_size as u64 + ENTRY_OVERHEAD
}

/// Chooses OnePass when every entry fits `index_budget`, otherwise sizes
/// equal runs (the last may be smaller) that are merged in one level.
pub fn plan_sort(
    records: u64,
    key_size: usize,
    index_budget: u64,
    pools: PoolPlan,
    buffers: &BufferConfig,
    request: ModeRequest,
) -> Result<SortPlan> {
    if index_budget == 0 {
        return Err(Error::Plan("index budget is zero".into()));
    }
    let fp = entry_footprint(key_size);
    let fits = records.saturating_mul(fp) <= index_budget;
    let plan = |mode, run_count, records_per_run, merge_levels| SortPlan {
        mode,
        run_count,
        records_per_run,
        merge_levels,
        read_buf: buffers.read_buf,
        write_buf: buffers.write_buf,
        pools,
    };
    match (request, fits) {
        (ModeRequest::Auto | ModeRequest::OnePass, true) => return Ok(plan(SortMode::OnePass, 1, records, 0)),
        (ModeRequest::OnePass, false) => {
            return Err(Error::Plan(format!(
                "onepass needs {} bytes of index budget for {records} entries, budget is {index_budget}",
                records.saturating_mul(fp)
            )))
        }
        _ => {}
    }
    if index_budget < fp {
        return Err(Error::Plan(format!(
            "index budget {index_budget} is below one entry ({fp} bytes)"
        )));
    }
    let mut rpr = index_budget / fp;
    let grain = pools.read_pool.max(1) as u64;
    if rpr >= grain {
        rpr -= rpr % grain;
    }
    let rpr = rpr.min(records).max(1);
    let run_count = records.div_ceil(rpr).max(1) as usize;
    Ok(plan(SortMode::MergePass, run_count, rpr, 1))
}
