use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::device::{Access, Phase};
use crate::error::{Error, Result};
use crate::sched::PhaseGate;

use super::index::{IndexEntry, RunFile};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MergeStats {
    pub runs: usize,
    pub refills: u64,
    pub retirements: u64,
    pub selections: u64,
}

#[derive(Debug)]
struct RunCursor {
    /// Next entry of the run file not yet loaded.
    next_in_file: u64,
    region: Vec<IndexEntry>,
    cur: usize,
    end: usize,
    live: bool,
}

#[derive(Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Head {
    entry: IndexEntry,
    run: usize,
}

/// Cursor-driven k-way merge over sorted index runs.
pub struct MergeState {
    runs: Vec<RunFile>,
    cursors: Vec<RunCursor>,
    heap: BinaryHeap<Reverse<Head>>,
    read_buf: usize,
    live: usize,
    stats: MergeStats,
    phase: Phase,
}

impl MergeState {
    /// Splits the read buffer evenly across the runs and loads each run's
    /// first chunk.
    pub fn init(runs: Vec<RunFile>, read_buf: usize, gate: &PhaseGate) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::Plan("merge needs at least one run".into()));
        }
        let n = runs.len();
        let mut st = MergeState {
            cursors: (0..n)
                .map(|_| RunCursor {
                    next_in_file: 0,
                    region: Vec::new(),
                    cur: 0,
                    end: 0,
                    live: true,
                })
                .collect(),
            runs,
            heap: BinaryHeap::with_capacity(n),
            read_buf,
            live: n,
            stats: MergeStats {
                runs: n,
                ..MergeStats::default()
            },
            phase: Phase::MergeRead,
        };
        for r in 0..n {
            if st.runs[r].header.entry_count == 0 {
                st.retire(r);
            } else {
                st.load(r, gate)?;
            }
        }
        Ok(st)
    }

    pub fn stats(&self) -> MergeStats {
        self.stats
    }

    pub fn live_runs(&self) -> usize {
        self.live
    }

    /// Entries each run may hold in its region: the read buffer split evenly
    /// over the live runs, at least one entry.
    pub fn allotment(&self, run: usize) -> usize {
        let es = self.runs[run].header.entry_size();
        (self.read_buf / self.live.max(1) / es).max(1)
    }

    /// Current and end cursor of a run's region.
    pub fn cursor(&self, run: usize) -> (usize, usize) {
        (self.cursors[run].cur, self.cursors[run].end)
    }

    pub fn is_live(&self, run: usize) -> bool {
        self.cursors[run].live
    }

    pub fn needs_refill(&self, run: usize) -> bool {
        let c = &self.cursors[run];
        c.live && c.cur == c.end
    }

    fn load(&mut self, run: usize, gate: &PhaseGate) -> Result<()> {
        let allot = self.allotment(run) as u64;
        let c = &mut self.cursors[run];
        let total = self.runs[run].header.entry_count;
        let count = allot.min(total - c.next_in_file) as usize;
        c.region.clear();
        {
            let _t = gate.enter_read_phase();
            self.runs[run].read_entries(
                c.next_in_file,
                count,
                Access::seq(self.phase),
                &mut c.region,
            )?;
        }
        c.next_in_file += count as u64;
        c.cur = 0;
        c.end = c.region.len();
        self.push_head(run);
        Ok(())
    }

    fn push_head(&mut self, run: usize) {
        let c = &mut self.cursors[run];
        let entry = std::mem::take(&mut c.region[c.cur]);
        self.heap.push(Reverse(Head { entry, run }));
    }

    fn retire(&mut self, run: usize) {
        let c = &mut self.cursors[run];
        c.live = false;
        c.region = Vec::new();
        c.cur = 0;
        c.end = 0;
        self.live -= 1;
        self.stats.retirements += 1;
    }

    /// Removes and returns the least live head by (key, offset, run). The
    /// caller must call [`MergeState::refill_or_retire`] on the returned run
    /// when [`MergeState::needs_refill`] reports it before selecting again.
    pub fn select_min(&mut self) -> Result<(IndexEntry, usize)> {
        let Reverse(Head { entry, run }) = self.heap.pop().ok_or(Error::Exhausted)?;
        self.stats.selections += 1;
        let c = &mut self.cursors[run];
        c.cur += 1;
        if c.cur < c.end {
            self.push_head(run);
        }
        Ok((entry, run))
    }

    /// Loads the run's next chunk, or retires the run when its file is spent.
    pub fn refill_or_retire(&mut self, run: usize, gate: &PhaseGate) -> Result<()> {
        if !self.needs_refill(run) {
            return Ok(());
        }
        if self.cursors[run].next_in_file < self.runs[run].header.entry_count {
            self.stats.refills += 1;
            self.load(run, gate)
        } else {
            self.retire(run);
            Ok(())
        }
    }

    /// Next entry in merged order, refilling as needed.
    pub fn next_entry(&mut self, gate: &PhaseGate) -> Result<Option<IndexEntry>> {
        match self.select_min() {
            Ok((e, run)) => {
                self.refill_or_retire(run, gate)?;
                Ok(Some(e))
            }
            Err(Error::Exhausted) => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn into_runs(self) -> Vec<RunFile> {
        self.runs
    }
}
