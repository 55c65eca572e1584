use std::ops::Range;

use crate::device::{Access, DeviceFile, Phase};
use crate::error::{Error, Result};
use crate::recfmt::{read_vlen, RecordLayout, VLEN_FIELD_SIZE};
use crate::sched::{run_workers, split_even, PhaseGate};

use super::index::{IndexEntry, IndexMap};

/// Keys gathered per device call (and per read token).
const KEY_BATCH: usize = 4096;

/// Reads only the key bytes of records `range` of a fixed-layout file. Each of
/// `read_pool` workers owns an equal contiguous sub-range.
pub fn run_read_strided(
    file: &DeviceFile,
    layout: &RecordLayout,
    range: Range<u64>,
    read_pool: usize,
    gate: &PhaseGate,
) -> Result<IndexMap> {
    let n = range.end.saturating_sub(range.start) as usize;
    let declared = read_pool.clamp(1, n.max(1));
    read_keys_strided(file, layout, range, read_pool, declared, gate)
}

pub(crate) fn read_keys_strided(
    file: &DeviceFile,
    layout: &RecordLayout,
    range: Range<u64>,
    read_pool: usize,
    declared: usize,
    gate: &PhaseGate,
) -> Result<IndexMap> {
    if layout.is_klv() {
        return Err(Error::Unsupported(
            "strided key reads need a fixed layout".into(),
        ));
    }
    let r = layout.record_size() as u64;
    let k = layout.key_size;
    if range.end * r > file.len() {
        return Err(Error::OutOfRange {
            file: file.name().to_string(),
            offset: range.start * r,
            len: (range.end - range.start) * r,
            file_len: file.len(),
        });
    }
    let n = (range.end - range.start) as usize;
    let width = read_pool.clamp(1, n.max(1));
    let parts = split_even(n, width);
    let chunks = run_workers(width, |w| {
        let part = &parts[w];
        let mut out = Vec::with_capacity(part.len());
        let mut spans = Vec::with_capacity(KEY_BATCH);
        let mut keys = vec![0u8; KEY_BATCH * k];
        let mut i = part.start;
        while i < part.end {
            let end = (i + KEY_BATCH).min(part.end);
            spans.clear();
            spans.extend((i..end).map(|j| ((range.start + j as u64) * r, k)));
            let dst = &mut keys[..(end - i) * k];
            {
                let _t = gate.enter_read_phase();
                file.gather_into(&spans, dst, Access::strided(Phase::RunRead).width(declared))?;
            }
            for (j, key) in (i..end).zip(dst.chunks_exact(k)) {
                out.push(IndexEntry::new(key, range.start + j as u64, 0));
            }
            i = end;
        }
        Ok(out)
    })?;
    Ok(IndexMap::unsorted(chunks.into_iter().flatten().collect()))
}

/// Walks a KLV file from byte `cursor`, reading the key and length of each
/// record and skipping its value, for at most `max_records` records. Returns
/// the index and the cursor after the last record read.
pub fn run_read_klv(
    file: &DeviceFile,
    layout: &RecordLayout,
    mut cursor: u64,
    max_records: u64,
    gate: &PhaseGate,
) -> Result<(IndexMap, u64)> {
    if !layout.is_klv() {
        return Err(Error::Unsupported(
            "key-length walk needs a KLV layout".into(),
        ));
    }
    let k = layout.key_size;
    let head = (k + VLEN_FIELD_SIZE) as u64;
    let end = file.len();
    let mut entries = Vec::new();
    let mut buf = vec![0u8; head as usize];
    while cursor < end && (entries.len() as u64) < max_records {
        let _t = gate.enter_read_phase();
        for _ in 0..KEY_BATCH {
            if cursor >= end || entries.len() as u64 >= max_records {
                break;
            }
            if cursor + head > end {
                return Err(Error::Layout(format!(
                    "truncated record header at byte {cursor}"
                )));
            }
            file.read_into(cursor, &mut buf, Access::strided(Phase::RunRead))?;
            let vlen = read_vlen(&buf[k..]);
            let value_at = cursor + head;
            if value_at + vlen as u64 > end {
                return Err(Error::Layout(format!(
                    "value at byte {value_at} runs past the end"
                )));
            }
            entries.push(IndexEntry::new(&buf[..k], value_at, vlen));
            cursor = value_at + vlen as u64;
        }
    }
    Ok((IndexMap::unsorted(entries), cursor))
}
