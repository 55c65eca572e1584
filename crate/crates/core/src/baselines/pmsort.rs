use crate::error::{Error, Result};
use crate::job::{Algorithm, ModeRequest, SortContext, SortOutcome};
use crate::wiscsort::{build_index_runs, mergepass, plan_sort, IndexSource};

/// Key/value-separated sort that loads full records in the run phase and
/// keeps only (key, record index) entries; the merge matches WiscSort's.
pub fn pmsort(ctx: &SortContext) -> Result<SortOutcome> {
    if ctx.layout.is_klv() {
        return Err(Error::Unsupported("pmsort needs fixed-size records".into()));
    }
    let plan = plan_sort(
        ctx.records,
        ctx.layout.key_size,
        ctx.buffers.index_budget,
        ctx.pools,
        &ctx.buffers,
        ModeRequest::MergePass,
    )?;
    let mut out = SortOutcome::new(Algorithm::PmSort);
    out.plan = Some(plan);
    let runs = build_index_runs(ctx, &plan, IndexSource::FullRecords)?;
    out.run_count = runs.len();
    out.merge = Some(mergepass(ctx, runs)?);
    Ok(out)
}
