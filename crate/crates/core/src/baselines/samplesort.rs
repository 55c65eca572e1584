use crate::device::{Access, DeviceFile, Phase};
use crate::error::{Error, Result};
use crate::job::{Algorithm, SortContext, SortOutcome};
use crate::sched::PhaseGate;

/// Ranges at most this long are sorted in one read and one write.
const BASE_RECORDS: u64 = 256;
/// Bytes per cached block during partitioning.
const BLOCK_BYTES: usize = 4096;
const SAMPLES: u64 = 15;

/// Copies the input to the output, then sorts the output in place by
/// pairwise key comparisons and record swaps on the device. Equal keys end in
/// no particular order.
pub fn samplesort_inplace(ctx: &SortContext) -> Result<SortOutcome> {
    if ctx.layout.is_klv() {
        return Err(Error::Unsupported(
            "in-place sample sort needs fixed-size records".into(),
        ));
    }
    copy_input(ctx)?;
    let r = ctx.layout.record_size() as u64;
    let n = ctx.output.len() / r;
    let s = InPlace {
        file: &ctx.output,
        gate: &ctx.gate,
        rec: r as usize,
        key: ctx.layout.key_size,
        width: ctx.pools.sort_pool.max(1),
    };
    ctx.times.time(Phase::RunSort, || {
        if s.width > 1 {
            if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(s.width).build() {
                return pool.install(|| s.sort(0, n));
            }
        }
        s.sort(0, n)
    })?;
    Ok(SortOutcome::new(Algorithm::SampleSort))
}

fn copy_input(ctx: &SortContext) -> Result<()> {
    let len = ctx.input.len();
    let chunk = crate::wiscsort::SEQ_CHUNK as u64;
    let mut off = 0;
    let mut buf = Vec::new();
    while off < len {
        let n = chunk.min(len - off) as usize;
        buf.resize(n, 0);
        ctx.times.time(Phase::RunRead, || {
            let _t = ctx.gate.enter_read_phase();
            ctx.input
                .read_into(off, &mut buf, Access::seq(Phase::RunRead))
        })?;
        ctx.times.time(Phase::RunWrite, || {
            let _t = ctx.gate.enter_write_phase();
            ctx.output.write(off, &buf, Access::seq(Phase::RunWrite))
        })?;
        off += n as u64;
    }
    Ok(())
}

struct InPlace<'a> {
    file: &'a DeviceFile,
    gate: &'a PhaseGate,
    rec: usize,
    key: usize,
    width: usize,
}

struct Block {
    index: u64,
    first: u64,
    data: Vec<u8>,
    dirty: bool,
}

/// Two cached blocks of records, one per partition cursor.
struct Blocks<'s, 'a> {
    s: &'s InPlace<'a>,
    lo: u64,
    hi: u64,
    per_block: u64,
    slots: [Option<Block>; 2],
}

impl<'s, 'a> Blocks<'s, 'a> {
    fn new(s: &'s InPlace<'a>, lo: u64, hi: u64) -> Self {
        Blocks {
            s,
            lo,
            hi,
            per_block: (BLOCK_BYTES / s.rec).max(1) as u64,
            slots: [None, None],
        }
    }

    fn block_of(&self, i: u64) -> u64 {
        (i - self.lo) / self.per_block
    }

    fn slot_of(&self, b: u64) -> Option<usize> {
        self.slots
            .iter()
            .position(|s| s.as_ref().is_some_and(|x| x.index == b))
    }

    /// Makes record `i` resident without evicting the block of record `keep`.
    fn ensure(&mut self, i: u64, keep: u64) -> Result<usize> {
        let b = self.block_of(i);
        if let Some(s) = self.slot_of(b) {
            return Ok(s);
        }
        let kb = self.block_of(keep);
        let victim = match (&self.slots[0], &self.slots[1]) {
            (None, _) => 0,
            (_, None) => 1,
            (Some(x), _) if x.index != kb => 0,
            _ => 1,
        };
        if let Some(old) = self.slots[victim].take() {
            self.s.write_back(&old)?;
        }
        let first = self.lo + b * self.per_block;
        let count = self.per_block.min(self.hi - first);
        let data = self.s.read(first, count)?;
        self.slots[victim] = Some(Block {
            index: b,
            first,
            data,
            dirty: false,
        });
        Ok(victim)
    }

    fn key(&mut self, i: u64, keep: u64) -> Result<&[u8]> {
        let s = self.ensure(i, keep)?;
        let b = self.slots[s].as_ref().unwrap();
        let at = (i - b.first) as usize * self.s.rec;
        Ok(&b.data[at..at + self.s.key])
    }

    fn swap(&mut self, i: u64, j: u64) -> Result<()> {
        let si = self.ensure(i, j)?;
        let sj = self.ensure(j, i)?;
        let r = self.s.rec;
        let (ai, aj) = {
            let bi = self.slots[si].as_ref().unwrap();
            let bj = self.slots[sj].as_ref().unwrap();
            ((i - bi.first) as usize * r, (j - bj.first) as usize * r)
        };
        if si == sj {
            let b = self.slots[si].as_mut().unwrap();
            let (x, y) = if ai < aj { (ai, aj) } else { (aj, ai) };
            let (head, tail) = b.data.split_at_mut(y);
            head[x..x + r].swap_with_slice(&mut tail[..r]);
            b.dirty = true;
        } else {
            let [a, b] = &mut self.slots;
            let (a, b) = (a.as_mut().unwrap(), b.as_mut().unwrap());
            let (pa, pb) = if si == 0 { (ai, aj) } else { (aj, ai) };
            a.data[pa..pa + r].swap_with_slice(&mut b.data[pb..pb + r]);
            a.dirty = true;
            b.dirty = true;
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        for s in &mut self.slots {
            if let Some(b) = s.take() {
                self.s.write_back(&b)?;
            }
        }
        Ok(())
    }
}

impl InPlace<'_> {
    fn access(&self, phase: Phase) -> Access {
        Access::random(phase).width(self.width)
    }

    fn read(&self, first: u64, count: u64) -> Result<Vec<u8>> {
        let _t = self.gate.enter_read_phase();
        self.file.read(
            first * self.rec as u64,
            count as usize * self.rec,
            self.access(Phase::MergeRead),
        )
    }

    fn write(&self, first: u64, data: &[u8]) -> Result<()> {
        let _t = self.gate.enter_write_phase();
        self.file.write(
            first * self.rec as u64,
            data,
            self.access(Phase::MergeWrite),
        )?;
        Ok(())
    }

    fn write_back(&self, b: &Block) -> Result<()> {
        if b.dirty {
            self.write(b.first, &b.data)?;
        }
        Ok(())
    }

    fn read_key(&self, i: u64) -> Result<Vec<u8>> {
        let _t = self.gate.enter_read_phase();
        self.file
            .read(i * self.rec as u64, self.key, self.access(Phase::MergeRead))
    }

    fn sort(&self, lo: u64, hi: u64) -> Result<()> {
        let n = hi - lo;
        if n <= 1 {
            return Ok(());
        }
        if n <= BASE_RECORDS {
            return self.sort_small(lo, hi);
        }
        let split = self.partition(lo, hi)?;
        if self.width > 1 {
            let (a, b) = rayon::join(|| self.sort(lo, split + 1), || self.sort(split + 1, hi));
            a.and(b)
        } else {
            self.sort(lo, split + 1)?;
            self.sort(split + 1, hi)
        }
    }

    fn sort_small(&self, lo: u64, hi: u64) -> Result<()> {
        let data = self.read(lo, hi - lo)?;
        let mut recs: Vec<&[u8]> = data.chunks_exact(self.rec).collect();
        if recs
            .windows(2)
            .all(|w| w[0][..self.key] <= w[1][..self.key])
        {
            return Ok(());
        }
        recs.sort_by(|a, b| a[..self.key].cmp(&b[..self.key]));
        let out: Vec<u8> = recs.concat();
        self.write(lo, &out)
    }

    /// Hoare partition around the median of sampled keys, which is first
    /// swapped to `lo`. Returns `s` with keys in `[lo, s]` <= pivot <= keys in
    /// `(s, hi)`, and `lo <= s < hi - 1`.
    fn partition(&self, lo: u64, hi: u64) -> Result<u64> {
        let n = hi - lo;
        let mut samples = Vec::with_capacity(SAMPLES as usize);
        for j in 0..SAMPLES {
            let i = lo + (2 * j + 1) * n / (2 * SAMPLES);
            samples.push((self.read_key(i)?, i));
        }
        samples.sort();
        let (pivot, m) = samples.swap_remove(SAMPLES as usize / 2);

        let mut blocks = Blocks::new(self, lo, hi);
        if m != lo {
            blocks.swap(lo, m)?;
        }
        let mut i = lo;
        let mut j = hi - 1;
        let mut first = true;
        loop {
            if !first {
                i += 1;
            }
            while blocks.key(i, j)? < &pivot[..] {
                i += 1;
            }
            if !first {
                j -= 1;
            }
            while blocks.key(j, i)? > &pivot[..] {
                j -= 1;
            }
            first = false;
            if i >= j {
                blocks.flush()?;
                return Ok(j);
            }
            blocks.swap(i, j)?;
        }
    }
}
