use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    RunRead,
    RunSort,
    RunOther,
    RunWrite,
    MergeRead,
    MergeOther,
    RecordRead,
    MergeWrite,
    /// Device microbenchmarking.
    Probe,
    /// Load generated outside of the sort job.
    Background,
}

impl Phase {
    pub const ALL: [Phase; 10] = [
        Phase::RunRead,
        Phase::RunSort,
        Phase::RunOther,
        Phase::RunWrite,
        Phase::MergeRead,
        Phase::MergeOther,
        Phase::RecordRead,
        Phase::MergeWrite,
        Phase::Probe,
        Phase::Background,
    ];

    /// The eight labels of the sort step taxonomy.
    pub const SORT_STEPS: [Phase; 8] = [
        Phase::RunRead,
        Phase::RunSort,
        Phase::RunOther,
        Phase::RunWrite,
        Phase::MergeRead,
        Phase::MergeOther,
        Phase::RecordRead,
        Phase::MergeWrite,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Phase::RunRead => "RUN read",
            Phase::RunSort => "RUN sort",
            Phase::RunOther => "RUN other",
            Phase::RunWrite => "RUN write",
            Phase::MergeRead => "MERGE read",
            Phase::MergeOther => "MERGE other",
            Phase::RecordRead => "RECORD read",
            Phase::MergeWrite => "MERGE write",
            Phase::Probe => "PROBE",
            Phase::Background => "BACKGROUND",
        }
    }

    pub fn from_label(s: &str) -> Option<Phase> {
        Phase::ALL.into_iter().find(|p| p.label() == s)
    }

    pub(crate) fn index(&self) -> usize {
        *self as usize
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    Read,
    Write,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::Read => "read",
            Direction::Write => "write",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Pattern {
    Sequential,
    Strided,
    Random,
}

impl Pattern {
    pub fn as_str(&self) -> &'static str {
        match self {
            Pattern::Sequential => "sequential",
            Pattern::Strided => "strided",
            Pattern::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Option<Pattern> {
        match s {
            "sequential" | "seq" => Some(Pattern::Sequential),
            "strided" => Some(Pattern::Strided),
            "random" | "rand" => Some(Pattern::Random),
            _ => None,
        }
    }
}

/// Direction and pattern of a device access. Strided applies only to reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AccessKind {
    pub direction: Direction,
    pub pattern: Pattern,
}

impl AccessKind {
    pub const ALL: [AccessKind; 5] = [
        AccessKind::new(Direction::Read, Pattern::Sequential),
        AccessKind::new(Direction::Read, Pattern::Strided),
        AccessKind::new(Direction::Read, Pattern::Random),
        AccessKind::new(Direction::Write, Pattern::Sequential),
        AccessKind::new(Direction::Write, Pattern::Random),
    ];

    pub const fn new(direction: Direction, pattern: Pattern) -> Self {
        AccessKind { direction, pattern }
    }

    pub fn is_valid(&self) -> bool {
        !(self.direction == Direction::Write && self.pattern == Pattern::Strided)
    }

    fn index(&self) -> usize {
        match (self.direction, self.pattern) {
            (Direction::Read, Pattern::Sequential) => 0,
            (Direction::Read, Pattern::Strided) => 1,
            (Direction::Read, Pattern::Random) => 2,
            (Direction::Write, Pattern::Sequential) => 3,
            (Direction::Write, Pattern::Random) => 4,
            (Direction::Write, Pattern::Strided) => unreachable!("strided writes are rejected"),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LedgerCell {
    pub bytes: u64,
    pub ops: u64,
    pub lines: u64,
    pub injected_delay_ns: u64,
    /// Lines whose read latency was multiplied by the interference slowdown.
    pub interfered_lines: u64,
}

impl LedgerCell {
    fn add(&mut self, o: &LedgerCell) {
        self.bytes += o.bytes;
        self.ops += o.ops;
        self.lines += o.lines;
        self.injected_delay_ns += o.injected_delay_ns;
        self.interfered_lines += o.interfered_lines;
    }
}

const FIELDS: usize = 5;
const KINDS: usize = 5;

/// Live counters, updated atomically per access.
pub(crate) struct LedgerCells {
    cells: Vec<AtomicU64>,
}

impl LedgerCells {
    pub fn new() -> Self {
        LedgerCells {
            cells: (0..Phase::ALL.len() * KINDS * FIELDS)
                .map(|_| AtomicU64::new(0))
                .collect(),
        }
    }

    fn base(phase: Phase, kind: AccessKind) -> usize {
        (phase.index() * KINDS + kind.index()) * FIELDS
    }

    pub fn record(&self, phase: Phase, kind: AccessKind, c: &LedgerCell) {
        let b = Self::base(phase, kind);
        let vals = [
            c.bytes,
            c.ops,
            c.lines,
            c.injected_delay_ns,
            c.interfered_lines,
        ];
        for (i, v) in vals.into_iter().enumerate() {
            if v != 0 {
                self.cells[b + i].fetch_add(v, Ordering::Relaxed);
            }
        }
    }

    pub fn reset(&self) {
        for c in &self.cells {
            c.store(0, Ordering::Relaxed);
        }
    }

    pub fn snapshot(&self) -> TrafficLedger {
        let mut cells = BTreeMap::new();
        for phase in Phase::ALL {
            for kind in AccessKind::ALL {
                let b = Self::base(phase, kind);
                let v: Vec<u64> = (0..FIELDS)
                    .map(|i| self.cells[b + i].load(Ordering::Relaxed))
                    .collect();
                if v.iter().any(|x| *x != 0) {
                    cells.insert(
                        (phase, kind),
                        LedgerCell {
                            bytes: v[0],
                            ops: v[1],
                            lines: v[2],
                            injected_delay_ns: v[3],
                            interfered_lines: v[4],
                        },
                    );
                }
            }
        }
        TrafficLedger { cells }
    }
}

/// Point-in-time copy of the device's traffic counters.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrafficLedger {
    pub cells: BTreeMap<(Phase, AccessKind), LedgerCell>,
}

impl TrafficLedger {
    pub fn get(&self, phase: Phase, kind: AccessKind) -> LedgerCell {
        self.cells.get(&(phase, kind)).copied().unwrap_or_default()
    }

    pub fn sum_where(&self, mut pred: impl FnMut(Phase, AccessKind) -> bool) -> LedgerCell {
        let mut acc = LedgerCell::default();
        for ((p, k), c) in &self.cells {
            if pred(*p, *k) {
                acc.add(c);
            }
        }
        acc
    }

    pub fn total(&self) -> LedgerCell {
        self.sum_where(|_, _| true)
    }

    pub fn total_bytes(&self) -> u64 {
        self.total().bytes
    }

    pub fn read_bytes(&self) -> u64 {
        self.sum_where(|_, k| k.direction == Direction::Read).bytes
    }

    pub fn write_bytes(&self) -> u64 {
        self.sum_where(|_, k| k.direction == Direction::Write).bytes
    }

    pub fn phase(&self, phase: Phase) -> LedgerCell {
        self.sum_where(|p, _| p == phase)
    }

    pub fn phase_direction(&self, phase: Phase, dir: Direction) -> LedgerCell {
        self.sum_where(|p, k| p == phase && k.direction == dir)
    }

    pub fn injected_delay_ns(&self) -> u64 {
        self.total().injected_delay_ns
    }

    pub fn interfered_lines(&self) -> u64 {
        self.total().interfered_lines
    }

    /// Ledger with the counts of `earlier` removed.
    pub fn since(&self, earlier: &TrafficLedger) -> TrafficLedger {
        let mut cells = BTreeMap::new();
        for (key, c) in &self.cells {
            let e = earlier.cells.get(key).copied().unwrap_or_default();
            let d = LedgerCell {
                bytes: c.bytes - e.bytes,
                ops: c.ops - e.ops,
                lines: c.lines - e.lines,
                injected_delay_ns: c.injected_delay_ns - e.injected_delay_ns,
                interfered_lines: c.interfered_lines - e.interfered_lines,
            };
            if d != LedgerCell::default() {
                cells.insert(*key, d);
            }
        }
        TrafficLedger { cells }
    }

    pub const CSV_HEADER: &'static str =
        "phase,direction,pattern,bytes,ops,lines,injected_delay_ns";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for ((p, k), c) in &self.cells {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                p.label(),
                k.direction.as_str(),
                k.pattern.as_str(),
                c.bytes,
                c.ops,
                c.lines,
                c.injected_delay_ns
            );
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceWindow {
    pub start_ns: u64,
    pub end_ns: u64,
    pub direction: Direction,
    pub phase: Phase,
    pub thread: u32,
}

impl TraceWindow {
    pub fn overlaps(&self, other: &TraceWindow) -> bool {
        self.start_ns < other.end_ns && other.start_ns < self.end_ns
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PhaseTrace {
    pub windows: Vec<TraceWindow>,
}

impl PhaseTrace {
    pub const CSV_HEADER: &'static str = "start_ns,end_ns,direction,phase,thread";

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Number of windows that overlap in time with some earlier-starting
    /// window of the opposite direction. Zero iff no read window overlaps any
    /// write window.
    pub fn read_write_overlaps(&self) -> usize {
        let mut ws: Vec<&TraceWindow> = self.windows.iter().collect();
        ws.sort_by_key(|w| (w.start_ns, w.end_ns));
        let mut max_end = [0u64; 2];
        let mut seen = [false; 2];
        let mut count = 0;
        for w in ws {
            let (me, other) = match w.direction {
                Direction::Read => (0, 1),
                Direction::Write => (1, 0),
            };
            if seen[other] && max_end[other] > w.start_ns {
                count += 1;
            }
            seen[me] = true;
            max_end[me] = max_end[me].max(w.end_ns);
        }
        count
    }

    /// Brute-force check over all window pairs.
    pub fn any_overlap_bruteforce(&self) -> bool {
        let reads: Vec<_> = self
            .windows
            .iter()
            .filter(|w| w.direction == Direction::Read)
            .collect();
        let writes: Vec<_> = self
            .windows
            .iter()
            .filter(|w| w.direction == Direction::Write)
            .collect();
        reads.iter().any(|r| writes.iter().any(|w| r.overlaps(w)))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for w in &self.windows {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                w.start_ns,
                w.end_ns,
                w.direction.as_str(),
                w.phase.label(),
                w.thread
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(s: u64, e: u64, d: Direction) -> TraceWindow {
        TraceWindow {
            start_ns: s,
            end_ns: e,
            direction: d,
            phase: Phase::RunRead,
            thread: 0,
        }
    }

    #[test]
    fn overlap_scan_agrees_with_bruteforce() {
        use Direction::*;
        let cases = vec![
            vec![w(0, 10, Read), w(10, 20, Write), w(20, 30, Read)],
            vec![w(0, 10, Read), w(5, 20, Write)],
            vec![w(0, 100, Write), w(10, 20, Read), w(30, 40, Read)],
            vec![w(0, 5, Read), w(1, 3, Read), w(6, 9, Write), w(8, 12, Read)],
        ];
        for ws in cases {
            let t = PhaseTrace { windows: ws };
            assert_eq!(t.read_write_overlaps() > 0, t.any_overlap_bruteforce());
        }
    }

    #[test]
    fn since_subtracts() {
        let cells = LedgerCells::new();
        let k = AccessKind::new(Direction::Read, Pattern::Random);
        cells.record(
            Phase::RunRead,
            k,
            &LedgerCell {
                bytes: 10,
                ops: 1,
                lines: 1,
                ..Default::default()
            },
        );
        let a = cells.snapshot();
        cells.record(
            Phase::RunRead,
            k,
            &LedgerCell {
                bytes: 5,
                ops: 1,
                lines: 1,
                ..Default::default()
            },
        );
        let d = cells.snapshot().since(&a);
        assert_eq!(d.get(Phase::RunRead, k).bytes, 5);
        assert_eq!(d.total().ops, 1);
    }

    #[test]
    fn labels_round_trip() {
        for p in Phase::ALL {
            assert_eq!(Phase::from_label(p.label()), Some(p));
        }
    }
}
