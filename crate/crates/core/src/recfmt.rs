//! Record encodings, dataset generation and sorted-output validation.
//!
//! Files are raw concatenated records with no header. A fixed-size record is
//! `key_size` key bytes followed by `value_size` value bytes. A KLV record is
//! `key_size` key bytes, a 4-byte little-endian value length, then the value.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Width of the KLV length field.
pub const VLEN_FIELD_SIZE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayoutKind {
    Fixed,
    Klv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RecordLayout {
    pub kind: LayoutKind,
    pub key_size: usize,
    /// Value size for fixed records; ignored for KLV.
    pub value_size: usize,
}

impl RecordLayout {
    pub fn fixed(key_size: usize, value_size: usize) -> Self {
        RecordLayout {
            kind: LayoutKind::Fixed,
            key_size,
            value_size,
        }
    }

    pub fn klv(key_size: usize) -> Self {
        RecordLayout {
            kind: LayoutKind::Klv,
            key_size,
            value_size: 0,
        }
    }

    /// The sortbenchmark geometry: 10-byte keys, 90-byte values.
    pub fn sortbenchmark() -> Self {
        Self::fixed(10, 90)
    }

    pub fn is_klv(&self) -> bool {
        self.kind == LayoutKind::Klv
    }

    pub fn check(&self) -> Result<()> {
        if self.key_size == 0 {
            return Err(Error::Layout("key_size must be at least 1".into()));
        }
        if self.key_size > u8::MAX as usize {
            return Err(Error::Layout("key_size must fit in one byte".into()));
        }
        Ok(())
    }

    /// Byte length of a fixed record. For KLV this is the header (key + length field).
    pub fn record_size(&self) -> usize {
        match self.kind {
            LayoutKind::Fixed => self.key_size + self.value_size,
            LayoutKind::Klv => self.key_size + VLEN_FIELD_SIZE,
        }
    }

    /// Length of a whole record carrying a value of `vlen` bytes.
    pub fn encoded_len(&self, vlen: usize) -> usize {
        match self.kind {
            LayoutKind::Fixed => self.key_size + self.value_size,
            LayoutKind::Klv => self.key_size + VLEN_FIELD_SIZE + vlen,
        }
    }
}

/// A borrowed view of one record inside a file image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordRef<'a> {
    pub key: &'a [u8],
    pub value: &'a [u8],
    /// The complete encoded record.
    pub raw: &'a [u8],
    /// Byte offset of the record in the file.
    pub offset: u64,
}

/// Splits a file image into records.
pub fn parse_records<'a>(data: &'a [u8], layout: &RecordLayout) -> Result<Vec<RecordRef<'a>>> {
    layout.check()?;
    let k = layout.key_size;
    match layout.kind {
        LayoutKind::Fixed => {
            let rs = layout.record_size();
            if rs == 0 || data.len() % rs != 0 {
                return Err(Error::Layout(format!(
                    "length {} is not a multiple of the {}-byte record size",
                    data.len(),
                    rs
                )));
            }
            Ok(data
                .chunks_exact(rs)
                .enumerate()
                .map(|(i, raw)| RecordRef {
                    key: &raw[..k],
                    value: &raw[k..],
                    raw,
                    offset: (i * rs) as u64,
                })
                .collect())
        }
        LayoutKind::Klv => {
            let mut out = Vec::new();
            let mut pos = 0usize;
            while pos < data.len() {
                let hdr = k + VLEN_FIELD_SIZE;
                if pos + hdr > data.len() {
                    return Err(Error::Layout(format!("truncated KLV header at byte {pos}")));
                }
                let vlen = read_vlen(&data[pos + k..pos + hdr]) as usize;
                let end = pos + hdr + vlen;
                if end > data.len() {
                    return Err(Error::Layout(format!(
                        "KLV value at byte {pos} runs past end of file"
                    )));
                }
                out.push(RecordRef {
                    key: &data[pos..pos + k],
                    value: &data[pos + hdr..end],
                    raw: &data[pos..end],
                    offset: pos as u64,
                });
                pos = end;
            }
            Ok(out)
        }
    }
}

pub fn read_vlen(bytes: &[u8]) -> u32 {
    u32::from_le_bytes(
        bytes[..VLEN_FIELD_SIZE]
            .try_into()
            .expect("4-byte length field"),
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenRequest {
    pub layout: RecordLayout,
    pub records: u64,
    pub seed: u64,
    /// Inclusive KLV value-length bounds.
    pub vlen_min: u32,
    pub vlen_max: u32,
}

impl GenRequest {
    pub fn fixed(key_size: usize, value_size: usize, records: u64, seed: u64) -> Self {
        GenRequest {
            layout: RecordLayout::fixed(key_size, value_size),
            records,
            seed,
            vlen_min: 0,
            vlen_max: 0,
        }
    }

    pub fn klv(key_size: usize, vlen_min: u32, vlen_max: u32, records: u64, seed: u64) -> Self {
        GenRequest {
            layout: RecordLayout::klv(key_size),
            records,
            seed,
            vlen_min,
            vlen_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetMeta {
    pub layout: RecordLayout,
    pub record_count: u64,
    pub seed: u64,
    pub total_bytes: u64,
    pub path: Option<PathBuf>,
}

impl DatasetMeta {
    /// Metadata of an existing fixed-layout file, or of a KLV file after a header walk.
    pub fn describe(data: &[u8], layout: RecordLayout) -> Result<Self> {
        let record_count = parse_records(data, &layout)?.len() as u64;
        Ok(DatasetMeta {
            layout,
            record_count,
            seed: 0,
            total_bytes: data.len() as u64,
            path: None,
        })
    }
}

const VLEN_STREAM: u64 = u64::MAX;

fn value_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // stream 0 carries keys, the last stream carries KLV lengths
    rng.set_stream(index + 1);
    rng
}

/// Produces the dataset image in memory.
pub fn generate(req: &GenRequest) -> Result<Vec<u8>> {
    let layout = req.layout;
    layout.check()?;
    if layout.is_klv() && req.vlen_min > req.vlen_max {
        return Err(Error::Layout("vlen_min exceeds vlen_max".into()));
    }
    let mut keys = ChaCha8Rng::seed_from_u64(req.seed);
    let mut lens = ChaCha8Rng::seed_from_u64(req.seed);
    lens.set_stream(VLEN_STREAM);

    let mut out = Vec::with_capacity(match layout.kind {
        LayoutKind::Fixed => req.records as usize * layout.record_size(),
        LayoutKind::Klv => 0,
    });
    let mut key = vec![0u8; layout.key_size];
    for i in 0..req.records {
        keys.fill_bytes(&mut key);
        out.extend_from_slice(&key);
        let vlen = match layout.kind {
            LayoutKind::Fixed => layout.value_size,
            LayoutKind::Klv => {
                let v = lens.random_range(req.vlen_min..=req.vlen_max);
                out.extend_from_slice(&v.to_le_bytes());
                v as usize
            }
        };
        let start = out.len();
        out.resize(start + vlen, 0);
        value_rng(req.seed, i).fill_bytes(&mut out[start..]);
    }
    Ok(out)
}

/// Writes a generated dataset to `out_path`.
///
/// `capacity`, when given, bounds the dataset size the target device can hold.
pub fn gen_dataset(
    req: &GenRequest,
    out_path: &Path,
    capacity: Option<u64>,
) -> Result<DatasetMeta> {
    if let (Some(cap), LayoutKind::Fixed) = (capacity, req.layout.kind) {
        let needed = req.records.saturating_mul(req.layout.record_size() as u64);
        if needed > cap {
            return Err(Error::CapacityExceeded {
                needed,
                capacity: cap,
            });
        }
    }
    let data = generate(req)?;
    if let Some(cap) = capacity {
        if data.len() as u64 > cap {
            return Err(Error::CapacityExceeded {
                needed: data.len() as u64,
                capacity: cap,
            });
        }
    }
    fs::write(out_path, &data)?;
    Ok(DatasetMeta {
        layout: req.layout,
        record_count: req.records,
        seed: req.seed,
        total_bytes: data.len() as u64,
        path: Some(out_path.to_path_buf()),
    })
}

/// Order-independent 128-bit digest of a record multiset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct MultisetDigest(pub u128);

impl MultisetDigest {
    pub fn add_record(&mut self, raw: &[u8]) {
        let h = Sha256::digest(raw);
        let lo = u128::from_le_bytes(h[..16].try_into().unwrap());
        self.0 = self.0.wrapping_add(lo);
    }
}

impl std::fmt::Display for MultisetDigest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}

pub fn digest_bytes(data: &[u8], layout: &RecordLayout) -> Result<MultisetDigest> {
    let mut d = MultisetDigest::default();
    for r in parse_records(data, layout)? {
        d.add_record(r.raw);
    }
    Ok(d)
}

pub fn multiset_digest(path: &Path, layout: &RecordLayout) -> Result<MultisetDigest> {
    digest_bytes(&fs::read(path)?, layout)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    pub is_sorted: bool,
    pub is_permutation: bool,
    pub first_violation_index: Option<u64>,
    pub record_count: u64,
    pub input_digest: MultisetDigest,
    pub output_digest: MultisetDigest,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.is_sorted && self.is_permutation
    }
}

pub fn validate_bytes(
    input: &[u8],
    output: &[u8],
    layout: &RecordLayout,
) -> Result<ValidationReport> {
    let ins = parse_records(input, layout)?;
    let outs = parse_records(output, layout)?;
    if layout.is_klv() {
        let total = |rs: &[RecordRef<'_>]| rs.iter().map(|r| r.value.len() as u64).sum::<u64>();
        let (a, b) = (total(&ins), total(&outs));
        if a != b {
            return Err(Error::Layout(format!(
                "KLV value bytes differ: input has {a}, output has {b}"
            )));
        }
    }

    let first_violation_index = outs
        .windows(2)
        .position(|w| w[0].key > w[1].key)
        .map(|i| i as u64);

    let mut input_digest = MultisetDigest::default();
    ins.iter().for_each(|r| input_digest.add_record(r.raw));
    let mut output_digest = MultisetDigest::default();
    outs.iter().for_each(|r| output_digest.add_record(r.raw));

    Ok(ValidationReport {
        is_sorted: first_violation_index.is_none(),
        is_permutation: input_digest == output_digest,
        first_violation_index,
        record_count: outs.len() as u64,
        input_digest,
        output_digest,
    })
}

pub fn validate(
    input_path: &Path,
    output_path: &Path,
    layout: &RecordLayout,
) -> Result<ValidationReport> {
    validate_bytes(&fs::read(input_path)?, &fs::read(output_path)?, layout)
}

/// Reference in-memory sort: records ordered by key, ties by original position.
pub fn reference_sort(data: &[u8], layout: &RecordLayout) -> Result<Vec<u8>> {
    let mut recs = parse_records(data, layout)?;
    recs.sort_by(|a, b| a.key.cmp(b.key).then(a.offset.cmp(&b.offset)));
    let mut out = Vec::with_capacity(data.len());
    for r in recs {
        out.extend_from_slice(r.raw);
    }
    Ok(out)
}
