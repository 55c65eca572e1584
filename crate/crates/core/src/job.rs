//! Sort jobs: configuration shared by every sorter and the entry point that
//! dispatches to one of them.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::baselines;
use crate::clock::Stopwatch;
use crate::device::{Device, DeviceFile, Phase};
use crate::error::{Error, Result};
use crate::profiler::PoolPlan;
use crate::recfmt::RecordLayout;
use crate::sched::{ConcurrencyMode, PhaseGate};
use crate::wiscsort::{self, MergeStats, SortPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    WiscSort,
    Ems,
    SampleSort,
    PmSort,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::WiscSort,
        Algorithm::Ems,
        Algorithm::SampleSort,
        Algorithm::PmSort,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::WiscSort => "wiscsort",
            Algorithm::Ems => "ems",
            Algorithm::SampleSort => "samplesort",
            Algorithm::PmSort => "pmsort",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Plan(format!("unknown algorithm `{s}`")))
    }
}

/// Requested WiscSort mode; `Auto` lets the planner decide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ModeRequest {
    #[default]
    Auto,
    OnePass,
    MergePass,
}

impl FromStr for ModeRequest {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(ModeRequest::Auto),
            "onepass" => Ok(ModeRequest::OnePass),
            "mergepass" => Ok(ModeRequest::MergePass),
            other => Err(Error::Plan(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BufferConfig {
    /// DRAM available for the in-memory index (or, for EMS, one run of records).
    pub index_budget: u64,
    pub read_buf: usize,
    pub write_buf: usize,
}

impl Default for BufferConfig {
    fn default() -> Self {
        BufferConfig {
            index_budget: 256 << 20,
            read_buf: 16 << 20,
            write_buf: 64 << 20,
        }
    }
}

impl BufferConfig {
    pub fn check(&self) -> Result<()> {
        if self.read_buf == 0 || self.write_buf == 0 {
            return Err(Error::Plan("buffers must be non-empty".into()));
        }
        if self.index_budget == 0 {
            return Err(Error::Plan("index budget is zero".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SortConfig {
    pub algorithm: Algorithm,
    pub mode: ModeRequest,
    pub concurrency: ConcurrencyMode,
    pub buffers: BufferConfig,
    pub pools: PoolPlan,
    /// Run every stage on one thread (the published PMSort variant).
    pub single_thread: bool,
    /// On-disk offset width of index run entries; defaults by layout.
    pub offset_width: Option<usize>,
}

impl Default for SortConfig {
    fn default() -> Self {
        SortConfig {
            algorithm: Algorithm::WiscSort,
            mode: ModeRequest::Auto,
            concurrency: ConcurrencyMode::NoOverlap,
            buffers: BufferConfig::default(),
            pools: PoolPlan::default(),
            single_thread: false,
            offset_width: None,
        }
    }
}

/// Wall-clock nanoseconds accumulated per phase, from any thread.
#[derive(Debug, Default)]
pub struct PhaseTimes {
    ns: [AtomicU64; Phase::ALL.len()],
}

impl PhaseTimes {
    pub fn add(&self, phase: Phase, ns: u64) {
        self.ns[phase_slot(phase)].fetch_add(ns, Ordering::Relaxed);
    }

    pub fn get(&self, phase: Phase) -> u64 {
        self.ns[phase_slot(phase)].load(Ordering::Relaxed)
    }

    /// Runs `f` and charges its wall time to `phase`.
    pub fn time<T>(&self, phase: Phase, f: impl FnOnce() -> T) -> T {
        let sw = Stopwatch::start();
        let out = f();
        self.add(phase, sw.elapsed_ns());
        out
    }

    /// Runs `f` and charges to `other` the part of its wall time that was not
    /// charged to any of `parts` meanwhile.
    pub fn time_rest<T>(&self, other: Phase, parts: &[Phase], f: impl FnOnce() -> T) -> T {
        let charged = || parts.iter().map(|p| self.get(*p)).sum::<u64>();
        let before = charged();
        let sw = Stopwatch::start();
        let out = f();
        let elapsed = sw.elapsed_ns();
        self.add(other, elapsed.saturating_sub(charged() - before));
        out
    }

    pub fn snapshot(&self) -> BTreeMap<Phase, u64> {
        Phase::ALL.into_iter().map(|p| (p, self.get(p))).collect()
    }
}

fn phase_slot(phase: Phase) -> usize {
    Phase::ALL.iter().position(|p| *p == phase).unwrap()
}

/// Everything a sorter needs while it runs.
pub struct SortContext {
    pub input: DeviceFile,
    pub output: DeviceFile,
    pub layout: RecordLayout,
    pub records: u64,
    pub buffers: BufferConfig,
    pub pools: PoolPlan,
    pub concurrency: ConcurrencyMode,
    pub offset_width: usize,
    pub gate: PhaseGate,
    pub times: PhaseTimes,
    /// Prefix for temporary files on the device.
    pub scratch: String,
}

impl SortContext {
    pub fn device(&self) -> &std::sync::Arc<Device> {
        self.input.device()
    }

    pub fn scratch_name(&self, what: &str, i: usize) -> String {
        format!("{}.{what}{i}", self.scratch)
    }
}

pub fn default_offset_width(layout: &RecordLayout) -> usize {
    if layout.is_klv() {
        8
    } else {
        5
    }
}

#[derive(Debug, Clone)]
pub struct SortOutcome {
    pub algorithm: Algorithm,
    pub plan: Option<SortPlan>,
    pub run_count: usize,
    pub merge: Option<MergeStats>,
    pub phase_wall_ns: BTreeMap<Phase, u64>,
    pub total_wall_ns: u64,
}

static JOB_SEQ: AtomicU64 = AtomicU64::new(0);

/// Sorts `input` (holding `records` records of `layout`) into a new device
/// file called `output_name`.
pub fn run_sort(
    cfg: &SortConfig,
    input: &DeviceFile,
    layout: RecordLayout,
    records: u64,
    output_name: &str,
) -> Result<(DeviceFile, SortOutcome)> {
    layout.check()?;
    cfg.buffers.check()?;
    cfg.pools.check()?;
    let device = input.device().clone();
    let output = device.create(output_name, input.len())?;
    let offset_width = cfg
        .offset_width
        .unwrap_or_else(|| default_offset_width(&layout));
    if !(1..=8).contains(&offset_width) {
        return Err(Error::Plan(format!(
            "offset width {offset_width} outside 1..=8"
        )));
    }
    let (pools, concurrency) = if cfg.single_thread {
        (PoolPlan::single_thread(), ConcurrencyMode::NoOverlap)
    } else {
        (cfg.pools, cfg.concurrency)
    };
    let ctx = SortContext {
        input: input.clone(),
        output: output.clone(),
        layout,
        records,
        buffers: cfg.buffers,
        pools,
        concurrency,
        offset_width,
        gate: PhaseGate::new(concurrency),
        times: PhaseTimes::default(),
        scratch: format!(".job{}", JOB_SEQ.fetch_add(1, Ordering::Relaxed)),
    };
    let sw = Stopwatch::start();
    let mut outcome = match cfg.algorithm {
        Algorithm::WiscSort => wiscsort::wiscsort(&ctx, cfg.mode)?,
        Algorithm::Ems => baselines::ems_sort(&ctx)?,
        Algorithm::SampleSort => baselines::samplesort_inplace(&ctx)?,
        Algorithm::PmSort => baselines::pmsort(&ctx)?,
    };
    outcome.total_wall_ns = sw.elapsed_ns();
    outcome.phase_wall_ns = ctx.times.snapshot();
    Ok((output, outcome))
}

impl SortOutcome {
    pub(crate) fn new(algorithm: Algorithm) -> Self {
        SortOutcome {
            algorithm,
            plan: None,
            run_count: 0,
            merge: None,
            phase_wall_ns: BTreeMap::new(),
            total_wall_ns: 0,
        }
    }
}
