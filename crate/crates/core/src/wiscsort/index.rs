use std::cmp::Ordering;

use smallvec::SmallVec;

use crate::device::{Access, Device, DeviceFile, Phase};
use crate::error::{Error, Result};
use crate::recfmt::{LayoutKind, RecordLayout, VLEN_FIELD_SIZE};
use crate::sched::{write_split, PhaseGate};

pub type Key = SmallVec<[u8; 16]>;

/// A key and the location of its value.
///
/// For fixed layouts `offset` is the record index; for KLV layouts it is the
/// byte offset of the value in the input file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct IndexEntry {
    pub key: Key,
    pub offset: u64,
    pub vlen: u32,
}

impl IndexEntry {
    pub fn new(key: &[u8], offset: u64, vlen: u32) -> Self {
        IndexEntry {
            key: Key::from_slice(key),
            offset,
            vlen,
        }
    }

    /// Where the value starts in the input file.
    pub fn value_addr(&self, layout: &RecordLayout) -> u64 {
        match layout.kind {
            LayoutKind::Fixed => self.offset * layout.record_size() as u64 + layout.key_size as u64,
            LayoutKind::Klv => self.offset,
        }
    }

    pub fn value_len(&self, layout: &RecordLayout) -> usize {
        match layout.kind {
            LayoutKind::Fixed => layout.value_size,
            LayoutKind::Klv => self.vlen as usize,
        }
    }

    /// Size of the record this entry produces in the output.
    pub fn output_len(&self, layout: &RecordLayout) -> usize {
        layout.encoded_len(self.value_len(layout))
    }
}

impl PartialOrd for IndexEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for IndexEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key
            .cmp(&other.key)
            .then(self.offset.cmp(&other.offset))
            .then(self.vlen.cmp(&other.vlen))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexMap {
    pub entries: Vec<IndexEntry>,
    pub sorted: bool,
}

impl IndexMap {
    pub fn unsorted(entries: Vec<IndexEntry>) -> Self {
        IndexMap {
            entries,
            sorted: false,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_sorted_by_key_offset(&self) -> bool {
        self.entries.windows(2).all(|w| w[0] <= w[1])
    }
}

/// Sorts by (key, offset) on a pool of `sort_pool` threads.
pub fn sort_indexmap(mut im: IndexMap, sort_pool: usize) -> IndexMap {
    sort_entries(&mut im.entries, sort_pool);
    im.sorted = true;
    im
}

fn sort_entries(entries: &mut [IndexEntry], sort_pool: usize) {
    // offsets are unique, so an unstable sort on the full tuple is deterministic
    if sort_pool <= 1 || entries.len() < 4096 {
        entries.sort_unstable();
        return;
    }
    match rayon::ThreadPoolBuilder::new()
        .num_threads(sort_pool)
        .build()
    {
        Ok(pool) => pool.install(|| {
            use rayon::slice::ParallelSliceMut;
            entries.par_sort_unstable();
        }),
        Err(_) => entries.sort_unstable(),
    }
}

pub const RUN_MAGIC: &[u8; 4] = b"WSIM";
pub const RUN_VERSION: u16 = 1;
pub const RUN_HEADER_SIZE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunHeader {
    pub kind: LayoutKind,
    pub key_size: usize,
    pub offset_width: usize,
    pub entry_count: u64,
}

impl RunHeader {
    pub fn entry_size(&self) -> usize {
        self.key_size
            + self.offset_width
            + match self.kind {
                LayoutKind::Fixed => 0,
                LayoutKind::Klv => VLEN_FIELD_SIZE,
            }
    }

    pub fn file_len(&self) -> u64 {
        RUN_HEADER_SIZE as u64 + self.entry_count * self.entry_size() as u64
    }

    pub fn encode(&self) -> [u8; RUN_HEADER_SIZE] {
        let mut h = [0u8; RUN_HEADER_SIZE];
        h[..4].copy_from_slice(RUN_MAGIC);
        h[4..6].copy_from_slice(&RUN_VERSION.to_le_bytes());
        h[6] = match self.kind {
            LayoutKind::Fixed => 0,
            LayoutKind::Klv => 1,
        };
        h[7] = self.key_size as u8;
        h[8] = self.offset_width as u8;
        h[9..17].copy_from_slice(&self.entry_count.to_le_bytes());
        h
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < RUN_HEADER_SIZE {
            return Err(Error::CorruptRun("short header".into()));
        }
        if &bytes[..4] != RUN_MAGIC {
            return Err(Error::CorruptRun("bad magic".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != RUN_VERSION {
            return Err(Error::CorruptRun(format!("unsupported version {version}")));
        }
        let kind = match bytes[6] {
            0 => LayoutKind::Fixed,
            1 => LayoutKind::Klv,
            k => return Err(Error::CorruptRun(format!("unknown layout kind {k}"))),
        };
        let offset_width = bytes[8] as usize;
        if bytes[7] == 0 || !(1..=8).contains(&offset_width) {
            return Err(Error::CorruptRun("bad key size or offset width".into()));
        }
        Ok(RunHeader {
            kind,
            key_size: bytes[7] as usize,
            offset_width,
            entry_count: u64::from_le_bytes(bytes[9..17].try_into().unwrap()),
        })
    }
}

pub fn encode_entry(out: &mut Vec<u8>, e: &IndexEntry, h: &RunHeader) {
    out.extend_from_slice(&e.key);
    out.extend_from_slice(&e.offset.to_le_bytes()[..h.offset_width]);
    if h.kind == LayoutKind::Klv {
        out.extend_from_slice(&e.vlen.to_le_bytes());
    }
}

pub fn decode_entries(bytes: &[u8], h: &RunHeader, out: &mut Vec<IndexEntry>) -> Result<()> {
    let es = h.entry_size();
    if bytes.len() % es != 0 {
        return Err(Error::CorruptRun("partial entry".into()));
    }
    let k = h.key_size;
    for chunk in bytes.chunks_exact(es) {
        let mut off = [0u8; 8];
        off[..h.offset_width].copy_from_slice(&chunk[k..k + h.offset_width]);
        let vlen = match h.kind {
            LayoutKind::Fixed => 0,
            LayoutKind::Klv => u32::from_le_bytes(chunk[k + h.offset_width..].try_into().unwrap()),
        };
        out.push(IndexEntry::new(&chunk[..k], u64::from_le_bytes(off), vlen));
    }
    Ok(())
}

/// A sorted index run stored on the device.
#[derive(Clone)]
pub struct RunFile {
    pub file: DeviceFile,
    pub header: RunHeader,
}

impl RunFile {
    pub fn open(file: DeviceFile, access: Access) -> Result<Self> {
        let bytes = file.read(0, RUN_HEADER_SIZE.min(file.len() as usize), access)?;
        let header = RunHeader::decode(&bytes)?;
        if header.file_len() != file.len() {
            return Err(Error::CorruptRun(format!(
                "{} entries need {} bytes, file has {}",
                header.entry_count,
                header.file_len(),
                file.len()
            )));
        }
        Ok(RunFile { file, header })
    }

    /// Reads entries `[first, first + count)`.
    pub fn read_entries(
        &self,
        first: u64,
        count: usize,
        access: Access,
        out: &mut Vec<IndexEntry>,
    ) -> Result<()> {
        let es = self.header.entry_size() as u64;
        let bytes = self.file.read(
            RUN_HEADER_SIZE as u64 + first * es,
            count * es as usize,
            access,
        )?;
        decode_entries(&bytes, &self.header, out)
    }

    pub fn read_all(&self, access: Access) -> Result<Vec<IndexEntry>> {
        let mut out = Vec::with_capacity(self.header.entry_count as usize);
        self.read_entries(0, self.header.entry_count as usize, access, &mut out)?;
        Ok(out)
    }
}

pub fn run_header(layout: &RecordLayout, offset_width: usize, entry_count: u64) -> RunHeader {
    RunHeader {
        kind: layout.kind,
        key_size: layout.key_size,
        offset_width,
        entry_count,
    }
}

/// Writes a sorted index run as one packed file: header then entries, split
/// across `write_pool` sequential writers.
pub fn write_indexmap_run(
    im: &IndexMap,
    name: &str,
    device: &std::sync::Arc<Device>,
    layout: &RecordLayout,
    offset_width: usize,
    write_pool: usize,
    gate: &PhaseGate,
) -> Result<RunFile> {
    let declared = write_pool.max(1);
    write_run_declared(
        im,
        name,
        device,
        layout,
        offset_width,
        write_pool,
        declared,
        gate,
    )
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn write_run_declared(
    im: &IndexMap,
    name: &str,
    device: &std::sync::Arc<Device>,
    layout: &RecordLayout,
    offset_width: usize,
    workers: usize,
    declared: usize,
    gate: &PhaseGate,
) -> Result<RunFile> {
    if !im.sorted {
        return Err(Error::Unsupported("index runs must be sorted".into()));
    }
    let limit = if offset_width >= 8 {
        u64::MAX
    } else {
        (1u64 << (8 * offset_width)) - 1
    };
    if im.entries.iter().any(|e| e.offset > limit) {
        return Err(Error::Layout(format!(
            "offset does not fit in {offset_width} bytes"
        )));
    }
    let header = run_header(layout, offset_width, im.len() as u64);
    let mut bytes = Vec::with_capacity(header.file_len() as usize);
    bytes.extend_from_slice(&header.encode());
    for e in &im.entries {
        encode_entry(&mut bytes, e, &header);
    }
    let file = device.create(name, bytes.len() as u64)?;
    write_split(gate, &bytes, &file, 0, workers, declared, Phase::RunWrite)?;
    Ok(RunFile { file, header })
}
