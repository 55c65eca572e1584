//! Storage device abstraction with exact traffic accounting.
//!
//! A [`Device`] hosts named files. Every read and write issued through a
//! [`DeviceFile`] is charged to the device's [`TrafficLedger`] under a phase
//! label and an [`AccessKind`], and appended to its [`PhaseTrace`]. Emulated
//! devices keep file contents in memory and add a per-cache-line delay that
//! depends on the access pattern, the declared concurrency of the issuing
//! pool, and whether a write is in flight.

mod ledger;
mod spec;

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU32, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};

pub use ledger::{
    AccessKind, Direction, LedgerCell, Pattern, Phase, PhaseTrace, TraceWindow, TrafficLedger,
};
pub use spec::{Backing, DeviceSpec, ScalingTable};

use crate::clock;
use crate::error::{Error, Result};
use ledger::LedgerCells;

/// How an access is labelled and how many peers issue it concurrently.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Access {
    pub pattern: Pattern,
    pub phase: Phase,
    /// Size of the worker pool issuing this access; selects the scaling factor.
    pub width: usize,
}

impl Access {
    pub fn new(pattern: Pattern, phase: Phase) -> Self {
        Access {
            pattern,
            phase,
            width: 1,
        }
    }

    pub fn seq(phase: Phase) -> Self {
        Self::new(Pattern::Sequential, phase)
    }

    pub fn strided(phase: Phase) -> Self {
        Self::new(Pattern::Strided, phase)
    }

    pub fn random(phase: Phase) -> Self {
        Self::new(Pattern::Random, phase)
    }

    pub fn width(mut self, width: usize) -> Self {
        self.width = width.max(1);
        self
    }
}

/// What one call cost.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AccessCost {
    pub bytes: u64,
    pub lines: u64,
    pub delay_ns: u64,
}

/// Number of `line_size`-aligned lines spanned by `[offset, offset + len)`.
pub fn lines_spanned(offset: u64, len: u64, line_size: u64) -> u64 {
    if len == 0 {
        0
    } else {
        (offset + len - 1) / line_size - offset / line_size + 1
    }
}

enum Backend {
    Mem(RwLock<Vec<u8>>),
    File { file: File, len: AtomicU64 },
}

struct Slot {
    name: String,
    backend: Backend,
}

impl Slot {
    fn len(&self) -> u64 {
        match &self.backend {
            Backend::Mem(v) => v.read().unwrap().len() as u64,
            Backend::File { len, .. } => len.load(Ordering::Acquire),
        }
    }
}

pub struct Device {
    spec: DeviceSpec,
    root: PathBuf,
    files: Mutex<HashMap<String, Arc<Slot>>>,
    used_bytes: AtomicU64,
    ledger: LedgerCells,
    trace: Mutex<Vec<TraceWindow>>,
    reads_in_flight: AtomicUsize,
    writes_in_flight: AtomicUsize,
}

thread_local! {
    static THREAD_ID: u32 = {
        static NEXT: AtomicU32 = AtomicU32::new(0);
        NEXT.fetch_add(1, Ordering::Relaxed)
    };
}

fn thread_id() -> u32 {
    THREAD_ID.with(|t| *t)
}

impl Device {
    /// Opens a device. For real-file backing, `root` is the directory that
    /// relative file names resolve against; emulated devices ignore it.
    pub fn open(spec: DeviceSpec, root: impl AsRef<Path>) -> Result<Arc<Device>> {
        spec.check()?;
        let root = root.as_ref().to_path_buf();
        if spec.backing == Backing::RealFile {
            #[cfg(not(unix))]
            return Err(Error::Unsupported(
                "real-file devices need positional file I/O".into(),
            ));
            #[cfg(unix)]
            fs::create_dir_all(&root)?;
        }
        Ok(Arc::new(Device {
            spec,
            root,
            files: Mutex::new(HashMap::new()),
            used_bytes: AtomicU64::new(0),
            ledger: LedgerCells::new(),
            trace: Mutex::new(Vec::new()),
            reads_in_flight: AtomicUsize::new(0),
            writes_in_flight: AtomicUsize::new(0),
        }))
    }

    /// An in-memory emulated device.
    pub fn emulated(spec: DeviceSpec) -> Result<Arc<Device>> {
        if spec.backing != Backing::Emulated {
            return Err(Error::InvalidSpec("expected an emulated spec".into()));
        }
        Self::open(spec, "")
    }

    pub fn spec(&self) -> &DeviceSpec {
        &self.spec
    }

    pub fn capacity(&self) -> u64 {
        self.spec.capacity_bytes
    }

    pub fn used_bytes(&self) -> u64 {
        self.used_bytes.load(Ordering::Acquire)
    }

    fn path_of(&self, name: &str) -> PathBuf {
        let p = Path::new(name);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    fn reserve(&self, delta: u64) -> Result<()> {
        let cap = self.spec.capacity_bytes;
        self.used_bytes
            .fetch_update(Ordering::AcqRel, Ordering::Acquire, |u| {
                u.checked_add(delta).filter(|n| *n <= cap)
            })
            .map(|_| ())
            .map_err(|u| Error::CapacityExceeded {
                needed: u.saturating_add(delta),
                capacity: cap,
            })
    }

    fn release(&self, delta: u64) {
        self.used_bytes.fetch_sub(delta, Ordering::AcqRel);
    }

    fn insert(self: &Arc<Self>, name: &str, backend: Backend, writable: bool) -> DeviceFile {
        let slot = Arc::new(Slot {
            name: name.to_string(),
            backend,
        });
        let mut files = self.files.lock().unwrap();
        if let Some(old) = files.insert(name.to_string(), slot.clone()) {
            self.release(old.len());
        }
        DeviceFile {
            device: self.clone(),
            slot,
            writable,
        }
    }

    /// Creates (or truncates) a writable file of `len` zero bytes.
    pub fn create(self: &Arc<Self>, name: &str, len: u64) -> Result<DeviceFile> {
        self.reserve(len)?;
        let backend = match self.spec.backing {
            Backing::Emulated => Backend::Mem(RwLock::new(vec![0u8; len as usize])),
            Backing::RealFile => {
                let file = OpenOptions::new()
                    .read(true)
                    .write(true)
                    .create(true)
                    .truncate(true)
                    .open(self.path_of(name))
                    .inspect_err(|_| self.release(len))?;
                file.set_len(len)?;
                Backend::File {
                    file,
                    len: AtomicU64::new(len),
                }
            }
        };
        Ok(self.insert(name, backend, true))
    }

    /// Places `data` on the device without charging the ledger.
    pub fn import(self: &Arc<Self>, name: &str, data: &[u8]) -> Result<DeviceFile> {
        let f = self.create(name, data.len() as u64)?;
        match &f.slot.backend {
            Backend::Mem(v) => v.write().unwrap().copy_from_slice(data),
            Backend::File { file, .. } => pos_write(file, 0, data)?,
        }
        Ok(f)
    }

    /// Opens an existing file read-only.
    pub fn open_file(self: &Arc<Self>, name: &str) -> Result<DeviceFile> {
        if let Some(slot) = self.files.lock().unwrap().get(name) {
            return Ok(DeviceFile {
                device: self.clone(),
                slot: slot.clone(),
                writable: false,
            });
        }
        match self.spec.backing {
            Backing::Emulated => Err(Error::NotFound(name.into())),
            Backing::RealFile => {
                let path = self.path_of(name);
                let file = File::open(&path).map_err(|e| match e.kind() {
                    std::io::ErrorKind::NotFound => Error::NotFound(path.display().to_string()),
                    _ => Error::Io(e),
                })?;
                let len = file.metadata()?.len();
                self.reserve(len)?;
                Ok(self.insert(
                    name,
                    Backend::File {
                        file,
                        len: AtomicU64::new(len),
                    },
                    false,
                ))
            }
        }
    }

    pub fn remove(&self, name: &str) -> Result<()> {
        let slot = self.files.lock().unwrap().remove(name);
        match slot {
            Some(s) => {
                self.release(s.len());
                if let Backend::File { .. } = s.backend {
                    let _ = fs::remove_file(self.path_of(name));
                }
                Ok(())
            }
            None => Err(Error::NotFound(name.into())),
        }
    }

    pub fn ledger_snapshot(&self) -> TrafficLedger {
        self.ledger.snapshot()
    }

    pub fn trace_snapshot(&self) -> PhaseTrace {
        PhaseTrace {
            windows: self.trace.lock().unwrap().clone(),
        }
    }

    /// Clears the ledger and the trace.
    pub fn reset_accounting(&self) {
        self.ledger.reset();
        self.trace.lock().unwrap().clear();
    }

    pub fn writes_in_flight(&self) -> usize {
        self.writes_in_flight.load(Ordering::SeqCst)
    }

    pub fn reads_in_flight(&self) -> usize {
        self.reads_in_flight.load(Ordering::SeqCst)
    }

    /// Per-line delay of a read with the given pattern, before scaling and interference.
    pub fn read_line_delay_ns(&self, pattern: Pattern) -> f64 {
        if !self.spec.is_emulated() {
            return 0.0;
        }
        let extra = match pattern {
            Pattern::Sequential => self.spec.seq_read_extra_ns,
            Pattern::Strided | Pattern::Random => self.spec.rand_read_extra_ns,
        };
        self.spec.base_read_latency_ns + extra
    }

    /// Per-line delay of a write, before scaling.
    pub fn write_line_delay_ns(&self) -> f64 {
        if !self.spec.is_emulated() {
            return 0.0;
        }
        self.spec.base_read_latency_ns + self.spec.write_extra_ns
    }

    fn finish(&self, kind: AccessKind, access: Access, start: u64, cell: LedgerCell) {
        if self.spec.spin_delay && self.spec.is_emulated() {
            clock::spin_for(cell.injected_delay_ns);
        }
        let end = clock::now_ns();
        self.ledger.record(access.phase, kind, &cell);
        if self.spec.trace {
            self.trace.lock().unwrap().push(TraceWindow {
                start_ns: start,
                end_ns: end,
                direction: kind.direction,
                phase: access.phase,
                thread: thread_id(),
            });
        }
    }
}

#[cfg(unix)]
fn pos_read(file: &File, offset: u64, buf: &mut [u8]) -> Result<()> {
    use std::os::unix::fs::FileExt;
    file.read_exact_at(buf, offset)?;
    Ok(())
}

#[cfg(unix)]
fn pos_write(file: &File, offset: u64, data: &[u8]) -> Result<()> {
    use std::os::unix::fs::FileExt;
    file.write_all_at(data, offset)?;
    Ok(())
}

#[cfg(not(unix))]
fn pos_read(_: &File, _: u64, _: &mut [u8]) -> Result<()> {
    Err(Error::Unsupported("positional reads".into()))
}

#[cfg(not(unix))]
fn pos_write(_: &File, _: u64, _: &[u8]) -> Result<()> {
    Err(Error::Unsupported("positional writes".into()))
}

/// Handle to one file on a [`Device`]. Cheap to clone and shareable across
/// worker threads; accesses to disjoint ranges may run concurrently.
#[derive(Clone)]
pub struct DeviceFile {
    device: Arc<Device>,
    slot: Arc<Slot>,
    writable: bool,
}

impl std::fmt::Debug for DeviceFile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DeviceFile")
            .field("name", &self.slot.name)
            .field("len", &self.len())
            .field("writable", &self.writable)
            .finish()
    }
}

impl DeviceFile {
    pub fn name(&self) -> &str {
        &self.slot.name
    }

    pub fn device(&self) -> &Arc<Device> {
        &self.device
    }

    pub fn len(&self) -> u64 {
        self.slot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_writable(&self) -> bool {
        self.writable
    }

    fn check_range(&self, offset: u64, len: u64) -> Result<()> {
        let file_len = self.len();
        if offset.checked_add(len).is_none_or(|end| end > file_len) {
            return Err(Error::OutOfRange {
                file: self.slot.name.clone(),
                offset,
                len,
                file_len,
            });
        }
        Ok(())
    }

    /// Unaccounted copy of the whole file, for export and inspection.
    pub fn contents(&self) -> Result<Vec<u8>> {
        match &self.slot.backend {
            Backend::Mem(v) => Ok(v.read().unwrap().clone()),
            Backend::File { file, len } => {
                let mut buf = vec![0u8; len.load(Ordering::Acquire) as usize];
                pos_read(file, 0, &mut buf)?;
                Ok(buf)
            }
        }
    }

    fn read_cell(
        &self,
        pattern: Pattern,
        width: usize,
        spans: impl Iterator<Item = (u64, u64)>,
    ) -> LedgerCell {
        let dev = &*self.device;
        let line = dev.spec.line_size;
        let base = dev.read_line_delay_ns(pattern);
        let eff = dev.spec.read_scaling.efficiency(width);
        let slow = dev.spec.interference_read_slowdown;
        let mut cell = LedgerCell::default();
        for (off, len) in spans {
            if len == 0 {
                continue;
            }
            let lines = lines_spanned(off, len, line);
            let interfered = dev.spec.is_emulated() && slow > 1.0 && dev.writes_in_flight() > 0;
            let mult = if interfered { slow } else { 1.0 };
            cell.bytes += len;
            cell.ops += 1;
            cell.lines += lines;
            cell.injected_delay_ns += (lines as f64 * base * mult / eff).round() as u64;
            if interfered {
                cell.interfered_lines += lines;
            }
        }
        cell
    }

    /// Reads `buf.len()` bytes at `offset`.
    pub fn read_into(&self, offset: u64, buf: &mut [u8], access: Access) -> Result<AccessCost> {
        self.check_range(offset, buf.len() as u64)?;
        if buf.is_empty() {
            return Ok(AccessCost::default());
        }
        let dev = &*self.device;
        dev.reads_in_flight.fetch_add(1, Ordering::SeqCst);
        let start = clock::now_ns();
        let res = match &self.slot.backend {
            Backend::Mem(v) => {
                let v = v.read().unwrap();
                buf.copy_from_slice(&v[offset as usize..offset as usize + buf.len()]);
                Ok(())
            }
            Backend::File { file, .. } => pos_read(file, offset, buf),
        };
        let cell = self.read_cell(
            access.pattern,
            access.width,
            std::iter::once((offset, buf.len() as u64)),
        );
        if res.is_ok() {
            dev.finish(
                AccessKind::new(Direction::Read, access.pattern),
                access,
                start,
                cell,
            );
        }
        dev.reads_in_flight.fetch_sub(1, Ordering::SeqCst);
        res.map(|_| AccessCost {
            bytes: cell.bytes,
            lines: cell.lines,
            delay_ns: cell.injected_delay_ns,
        })
    }

    pub fn read(&self, offset: u64, len: usize, access: Access) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; len];
        self.read_into(offset, &mut buf, access)?;
        Ok(buf)
    }

    /// Reads each `(offset, len)` span into consecutive positions of `dst`.
    ///
    /// Accounted exactly as if every span were a separate read, but recorded
    /// as a single trace window.
    pub fn gather_into(
        &self,
        spans: &[(u64, usize)],
        dst: &mut [u8],
        access: Access,
    ) -> Result<AccessCost> {
        let total: usize = spans.iter().map(|s| s.1).sum();
        if total != dst.len() {
            return Err(Error::Unsupported(format!(
                "gather destination holds {} bytes, spans need {total}",
                dst.len()
            )));
        }
        for &(off, len) in spans {
            self.check_range(off, len as u64)?;
        }
        if total == 0 {
            return Ok(AccessCost::default());
        }
        let dev = &*self.device;
        dev.reads_in_flight.fetch_add(1, Ordering::SeqCst);
        let start = clock::now_ns();
        let res = match &self.slot.backend {
            Backend::Mem(v) => {
                let v = v.read().unwrap();
                let mut pos = 0;
                for &(off, len) in spans {
                    dst[pos..pos + len].copy_from_slice(&v[off as usize..off as usize + len]);
                    pos += len;
                }
                Ok(())
            }
            Backend::File { file, .. } => {
                let mut pos = 0;
                spans.iter().try_for_each(|&(off, len)| {
                    let r = pos_read(file, off, &mut dst[pos..pos + len]);
                    pos += len;
                    r
                })
            }
        };
        let cell = self.read_cell(
            access.pattern,
            access.width,
            spans.iter().map(|&(o, l)| (o, l as u64)),
        );
        if res.is_ok() {
            dev.finish(
                AccessKind::new(Direction::Read, access.pattern),
                access,
                start,
                cell,
            );
        }
        dev.reads_in_flight.fetch_sub(1, Ordering::SeqCst);
        res.map(|_| AccessCost {
            bytes: cell.bytes,
            lines: cell.lines,
            delay_ns: cell.injected_delay_ns,
        })
    }

    pub fn write(&self, offset: u64, data: &[u8], access: Access) -> Result<AccessCost> {
        if !self.writable {
            return Err(Error::ReadOnly(self.slot.name.clone()));
        }
        if access.pattern == Pattern::Strided {
            return Err(Error::Unsupported("strided writes".into()));
        }
        self.check_range(offset, data.len() as u64)?;
        if data.is_empty() {
            return Ok(AccessCost::default());
        }
        let dev = &*self.device;
        dev.writes_in_flight.fetch_add(1, Ordering::SeqCst);
        let start = clock::now_ns();
        let res = match &self.slot.backend {
            Backend::Mem(v) => {
                let mut v = v.write().unwrap();
                v[offset as usize..offset as usize + data.len()].copy_from_slice(data);
                Ok(())
            }
            Backend::File { file, .. } => pos_write(file, offset, data),
        };
        let lines = lines_spanned(offset, data.len() as u64, dev.spec.line_size);
        let eff = dev.spec.write_scaling.efficiency(access.width);
        let cell = LedgerCell {
            bytes: data.len() as u64,
            ops: 1,
            lines,
            injected_delay_ns: (lines as f64 * dev.write_line_delay_ns() / eff).round() as u64,
            interfered_lines: 0,
        };
        if res.is_ok() {
            dev.finish(
                AccessKind::new(Direction::Write, access.pattern),
                access,
                start,
                cell,
            );
        }
        dev.writes_in_flight.fetch_sub(1, Ordering::SeqCst);
        res.map(|_| AccessCost {
            bytes: cell.bytes,
            lines: cell.lines,
            delay_ns: cell.injected_delay_ns,
        })
    }
}
