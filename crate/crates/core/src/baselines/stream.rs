use crate::device::{Access, DeviceFile};
use crate::error::{Error, Result};
use crate::recfmt::{read_vlen, LayoutKind, RecordLayout, VLEN_FIELD_SIZE};
use crate::sched::PhaseGate;

/// Sequential reader of whole records from a byte range of a file. Bytes of a
/// record split across two reads are kept, never read twice.
pub(crate) struct RecordStream {
    file: DeviceFile,
    layout: RecordLayout,
    pos: u64,
    end: u64,
    buf: Vec<u8>,
    head: usize,
}

impl RecordStream {
    pub fn new(file: DeviceFile, layout: RecordLayout, start: u64, end: u64) -> Self {
        RecordStream {
            file,
            layout,
            pos: start,
            end,
            buf: Vec::new(),
            head: 0,
        }
    }

    /// Length of the record at the head of the buffer, if its header is loaded.
    fn head_len(&self) -> Option<usize> {
        let avail = &self.buf[self.head..];
        match self.layout.kind {
            LayoutKind::Fixed => (!avail.is_empty()).then_some(self.layout.record_size()),
            LayoutKind::Klv => {
                let k = self.layout.key_size;
                (avail.len() >= k + VLEN_FIELD_SIZE)
                    .then(|| k + VLEN_FIELD_SIZE + read_vlen(&avail[k..]) as usize)
            }
        }
    }

    pub fn has_record(&self) -> bool {
        self.head_len()
            .is_some_and(|l| self.buf.len() - self.head >= l)
    }

    pub fn is_exhausted(&self) -> bool {
        self.pos >= self.end && self.head >= self.buf.len()
    }

    /// Returns the next complete buffered record.
    pub fn next_record(&mut self) -> Option<&[u8]> {
        let len = self.head_len()?;
        if self.buf.len() - self.head < len {
            return None;
        }
        let at = self.head;
        self.head += len;
        Some(&self.buf[at..at + len])
    }

    pub fn peek_key(&self) -> Option<&[u8]> {
        self.has_record()
            .then(|| &self.buf[self.head..self.head + self.layout.key_size])
    }

    fn read_more(&mut self, len: u64, access: Access, gate: &PhaseGate) -> Result<()> {
        let len = len.min(self.end - self.pos) as usize;
        if len == 0 {
            return Ok(());
        }
        let at = self.buf.len();
        self.buf.resize(at + len, 0);
        {
            let _t = gate.enter_read_phase();
            self.file.read_into(self.pos, &mut self.buf[at..], access)?;
        }
        self.pos += len as u64;
        Ok(())
    }

    /// Loads up to `budget` bytes (keeping any partial record), and more if
    /// needed to complete at least one record.
    pub fn refill(&mut self, budget: usize, access: Access, gate: &PhaseGate) -> Result<()> {
        self.buf.drain(..self.head);
        self.head = 0;
        let mut want = budget.saturating_sub(self.buf.len()) as u64;
        if self.layout.kind == LayoutKind::Fixed {
            let r = self.layout.record_size() as u64;
            want -= want % r;
        }
        self.read_more(want, access, gate)?;
        while !self.has_record() && self.pos < self.end {
            let need = match self.head_len() {
                Some(l) => l - self.buf.len(),
                None => match self.layout.kind {
                    LayoutKind::Fixed => self.layout.record_size(),
                    LayoutKind::Klv => self.layout.key_size + VLEN_FIELD_SIZE - self.buf.len(),
                },
            };
            self.read_more(need as u64, access, gate)?;
        }
        if !self.has_record() && !self.is_exhausted() {
            return Err(Error::Layout(format!(
                "truncated record in {}",
                self.file.name()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::{Device, DeviceSpec, Phase};
    use crate::recfmt::{generate, GenRequest};
    use crate::sched::ConcurrencyMode;

    #[test]
    fn klv_stream_reads_each_byte_once() {
        let data = generate(&GenRequest::klv(6, 0, 40, 200, 9)).unwrap();
        let dev = Device::emulated(DeviceSpec::brd().with_spin(false)).unwrap();
        let f = dev.import("in", &data).unwrap();
        let gate = PhaseGate::new(ConcurrencyMode::NoOverlap);
        let mut s = RecordStream::new(f, RecordLayout::klv(6), 0, data.len() as u64);
        let mut out = Vec::new();
        let mut n = 0;
        while !s.is_exhausted() {
            s.refill(37, Access::seq(Phase::RunRead), &gate).unwrap();
            while let Some(r) = s.next_record() {
                out.extend_from_slice(r);
                n += 1;
            }
        }
        assert_eq!(n, 200);
        assert_eq!(out, data);
        assert_eq!(dev.ledger_snapshot().read_bytes(), data.len() as u64);
    }

    #[test]
    fn fixed_stream_reads_whole_records() {
        let data = generate(&GenRequest::fixed(4, 6, 50, 2)).unwrap();
        let dev = Device::emulated(DeviceSpec::brd().with_spin(false)).unwrap();
        let f = dev.import("in", &data).unwrap();
        let gate = PhaseGate::new(ConcurrencyMode::NoOverlap);
        let mut s = RecordStream::new(f, RecordLayout::fixed(4, 6), 100, 500);
        s.refill(25, Access::seq(Phase::RunRead), &gate).unwrap();
        assert_eq!(s.next_record().unwrap(), &data[100..110]);
        assert_eq!(s.next_record().unwrap(), &data[110..120]);
        assert!(s.next_record().is_none());
        s.refill(5, Access::seq(Phase::RunRead), &gate).unwrap();
        assert_eq!(s.peek_key().unwrap(), &data[120..124]);
    }
}
