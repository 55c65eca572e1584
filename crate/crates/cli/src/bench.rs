//! Benchmark suites. Each sort runs on a fresh emulated device and yields
//! one row per (algorithm, variant, phase).

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};

use braidsort::device::{Access, AccessKind, Device, DeviceSpec, Phase};
use braidsort::job::{run_sort, Algorithm, BufferConfig, ModeRequest, SortConfig};
use braidsort::profiler::PoolPlan;
use braidsort::recfmt::{generate, DatasetMeta, GenRequest, RecordLayout};
use braidsort::report::PhaseReport;
use braidsort::sched::ConcurrencyMode;

use crate::{cap_pools, parse_size, DataArgs};

pub const BENCH_SCHEMA: &str = "bench/v1";

/// Value sizes of the V:K sweep.
pub const VK_SWEEP_VALUES: [usize; 6] = [5, 10, 50, 90, 246, 502];
pub const DEVICE_PRESETS: [&str; 3] = ["bd", "brd", "bard"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    PhaseBreakdown,
    ConcurrencyModels,
    VkSweep,
    StridedVsSeq,
    Devices,
    Interference,
}

impl Suite {
    pub fn as_str(&self) -> &'static str {
        match self {
            Suite::PhaseBreakdown => "phase-breakdown",
            Suite::ConcurrencyModels => "concurrency-models",
            Suite::VkSweep => "vk-sweep",
            Suite::StridedVsSeq => "strided-vs-seq",
            Suite::Devices => "devices",
            Suite::Interference => "interference",
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct BenchArgs {
    #[arg(value_enum)]
    pub suite: Suite,
    #[command(flatten)]
    pub data: DataArgs,
    /// Device preset or spec file; the devices suite uses its own presets.
    #[arg(long, default_value = "pmem")]
    pub device: String,
    #[arg(long, default_value = "no-overlap")]
    pub concurrency: ConcurrencyMode,
    #[arg(long, value_parser = parse_size, default_value = "256M")]
    pub index_budget: u64,
    /// Index budget of the mergepass variants; defaults to a third of the
    /// index footprint so that several runs are merged.
    #[arg(long, value_parser = parse_size)]
    pub merge_budget: Option<u64>,
    #[arg(long, value_parser = parse_size, default_value = "16M")]
    pub read_buf: u64,
    #[arg(long, value_parser = parse_size, default_value = "64M")]
    pub write_buf: u64,
    /// Busy-wait injected delays (always on for the interference suite).
    #[arg(long)]
    pub spin: bool,
    /// Threads per background loop in the interference suite.
    #[arg(long, default_value_t = 2)]
    pub bg_threads: usize,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// One sort in a suite.
#[derive(Debug, Clone)]
pub struct Case {
    pub algorithm: Algorithm,
    pub mode: ModeRequest,
    pub variant: String,
    pub spec: DeviceSpec,
    pub concurrency: ConcurrencyMode,
    pub request: GenRequest,
    pub index_budget: u64,
    pub background: Background,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Background {
    pub readers: usize,
    pub writers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub suite: Suite,
    pub device: String,
    pub algorithm: String,
    pub variant: String,
    pub concurrency: ConcurrencyMode,
    pub records: u64,
    pub key_size: usize,
    /// Empty for KLV datasets.
    pub value_size: Option<usize>,
    pub phase: Phase,
    pub wall_ns: u64,
    pub injected_delay_ns: u64,
    pub bytes: BTreeMap<AccessKind, u64>,
}

impl BenchRow {
    pub fn total_bytes(&self) -> u64 {
        self.bytes.values().sum()
    }

    pub fn write_bytes(&self) -> u64 {
        self.bytes
            .iter()
            .filter(|(k, _)| k.direction == braidsort::device::Direction::Write)
            .map(|(_, b)| b)
            .sum()
    }
}

pub fn algo_label(a: Algorithm, mode: ModeRequest) -> String {
    match (a, mode) {
        (Algorithm::WiscSort, ModeRequest::OnePass) => "wiscsort-onepass".into(),
        (Algorithm::WiscSort, ModeRequest::MergePass) => "wiscsort-mergepass".into(),
        (a, _) => a.as_str().into(),
    }
}

pub fn csv_header() -> String {
    let mut h = String::from(
        "schema,suite,device,algorithm,variant,concurrency,records,key_size,value_size,phase,wall_ns_host_dependent,injected_delay_ns",
    );
    for k in AccessKind::ALL {
        let _ = write!(h, ",{}_{}_bytes", k.direction.as_str(), k.pattern.as_str());
    }
    h
}

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut s = csv_header();
    s.push('\n');
    for r in rows {
        let _ = write!(
            s,
            "{BENCH_SCHEMA},{},{},{},{},{},{},{},{},{},{},{}",
            r.suite.as_str(),
            r.device,
            r.algorithm,
            r.variant,
            r.concurrency,
            r.records,
            r.key_size,
            r.value_size.map(|v| v.to_string()).unwrap_or_default(),
            r.phase.label(),
            r.wall_ns,
            r.injected_delay_ns
        );
        for k in AccessKind::ALL {
            let _ = write!(s, ",{}", r.bytes.get(&k).copied().unwrap_or(0));
        }
        s.push('\n');
    }
    s
}

/// Per (algorithm, variant) totals over phases, in row order.
pub fn totals(rows: &[BenchRow]) -> Vec<(String, String, u64, u64)> {
    let mut out: Vec<(String, String, u64, u64)> = Vec::new();
    for r in rows {
        match out
            .iter_mut()
            .find(|t| t.0 == r.algorithm && t.1 == r.variant)
        {
            Some(t) => {
                t.2 += r.injected_delay_ns;
                t.3 += r.total_bytes();
            }
            None => out.push((
                r.algorithm.clone(),
                r.variant.clone(),
                r.injected_delay_ns,
                r.total_bytes(),
            )),
        }
    }
    out
}

pub fn cmd_bench(a: &BenchArgs) -> Result<i32> {
    let rows = run_suite(a)?;
    let csv = to_csv(&rows);
    match &a.out {
        Some(p) => {
            fs::write(p, &csv).with_context(|| format!("writing {}", p.display()))?;
            for (algo, variant, delay, bytes) in totals(&rows) {
                println!("{algo:<20} {variant:<12} injected_delay_ns={delay:<14} bytes={bytes}");
            }
        }
        None => print!("{csv}"),
    }
    Ok(0)
}

fn fixed_only(a: Algorithm) -> bool {
    matches!(a, Algorithm::SampleSort | Algorithm::PmSort)
}

pub fn cases(a: &BenchArgs) -> Result<Vec<Case>> {
    let base_spec =
        DeviceSpec::resolve(&a.device).with_context(|| format!("device `{}`", a.device))?;
    if !base_spec.is_emulated() {
        bail!(
            "benchmarks need an emulated device, `{}` is backed by real files",
            a.device
        );
    }
    let req = a.data.request()?;
    let fixed =
        |v: usize| GenRequest::fixed(a.data.layout.key_size, v, a.data.records, a.data.seed);
    let case =
        |algorithm, mode, variant: &str, spec: &DeviceSpec, conc, request: &GenRequest| Case {
            algorithm,
            mode,
            variant: variant.to_string(),
            spec: spec.clone(),
            concurrency: conc,
            request: request.clone(),
            index_budget: a.index_budget,
            background: Background::default(),
        };
    use Algorithm::*;
    use ModeRequest::{Auto, MergePass, OnePass};
    let c = a.concurrency;
    let mut out = Vec::new();
    match a.suite {
        Suite::PhaseBreakdown => {
            for (algo, mode) in [
                (Ems, Auto),
                (WiscSort, OnePass),
                (WiscSort, MergePass),
                (SampleSort, Auto),
                (PmSort, Auto),
            ] {
                if !(req.layout.is_klv() && fixed_only(algo)) {
                    out.push(case(algo, mode, "default", &base_spec, c, &req));
                }
            }
        }
        Suite::ConcurrencyModels => {
            for mode in ConcurrencyMode::ALL {
                for (algo, m) in [(Ems, Auto), (WiscSort, OnePass), (WiscSort, MergePass)] {
                    out.push(case(algo, m, mode.as_str(), &base_spec, mode, &req));
                }
            }
        }
        Suite::VkSweep => {
            for v in VK_SWEEP_VALUES {
                let r = fixed(v);
                for (algo, m) in [(Ems, Auto), (WiscSort, OnePass), (WiscSort, MergePass)] {
                    out.push(case(algo, m, &format!("v={v}"), &base_spec, c, &r));
                }
            }
        }
        Suite::StridedVsSeq => {
            let r = fixed(a.data.layout.value_size);
            out.push(case(WiscSort, MergePass, "strided", &base_spec, c, &r));
            out.push(case(PmSort, Auto, "sequential", &base_spec, c, &r));
        }
        Suite::Devices => {
            let r = fixed(a.data.layout.value_size);
            for name in DEVICE_PRESETS {
                let spec = DeviceSpec::preset(name).expect("built-in preset");
                for (algo, m) in [
                    (Ems, Auto),
                    (SampleSort, Auto),
                    (WiscSort, OnePass),
                    (WiscSort, MergePass),
                ] {
                    out.push(case(algo, m, name, &spec, c, &r));
                }
            }
        }
        Suite::Interference => {
            let n = a.bg_threads.max(1);
            let loads = [
                ("none", Background::default()),
                (
                    "bg-read",
                    Background {
                        readers: n,
                        writers: 0,
                    },
                ),
                (
                    "bg-write",
                    Background {
                        readers: 0,
                        writers: n,
                    },
                ),
            ];
            let spec = base_spec.clone().with_spin(true);
            for (variant, bg) in loads {
                for (algo, m) in [(Ems, Auto), (WiscSort, Auto)] {
                    let mut k = case(algo, m, variant, &spec, c, &req);
                    k.background = bg;
                    out.push(k);
                }
            }
        }
    }
    Ok(out)
}

pub fn run_suite(a: &BenchArgs) -> Result<Vec<BenchRow>> {
    let mut data: HashMap<String, Arc<Vec<u8>>> = HashMap::new();
    let mut rows = Vec::new();
    let buffers = BufferConfig {
        index_budget: a.index_budget,
        read_buf: usize::try_from(a.read_buf)?,
        write_buf: usize::try_from(a.write_buf)?,
    };
    for mut case in cases(a)? {
        let key = format!("{:?}", case.request);
        let bytes = match data.get(&key) {
            Some(d) => d.clone(),
            None => {
                let d = Arc::new(generate(&case.request)?);
                data.insert(key, d.clone());
                d
            }
        };
        if case.mode == ModeRequest::MergePass {
            let fp = case.request.records * (case.request.layout.key_size as u64 + 8);
            case.index_budget = a
                .merge_budget
                .unwrap_or((fp / 3).max(case.request.layout.key_size as u64 + 8));
        }
        if a.suite != Suite::Interference {
            case.spec = case.spec.with_spin(a.spin);
        }
        rows.extend(run_case(a.suite, &case, &bytes, buffers).with_context(|| {
            format!("{} {}", algo_label(case.algorithm, case.mode), case.variant)
        })?);
    }
    Ok(rows)
}

/// Sorts `data` once and returns its phase rows.
pub fn run_case(
    suite: Suite,
    case: &Case,
    data: &[u8],
    buffers: BufferConfig,
) -> Result<Vec<BenchRow>> {
    let layout: RecordLayout = case.request.layout;
    let dev = Device::emulated(case.spec.clone().with_trace(false))?;
    let input = dev.import("input", data)?;
    let records = DatasetMeta::describe(data, layout)?.record_count;
    let cfg = SortConfig {
        algorithm: case.algorithm,
        mode: case.mode,
        concurrency: case.concurrency,
        buffers: BufferConfig {
            index_budget: case.index_budget,
            ..buffers
        },
        pools: cap_pools(PoolPlan::default())?,
        ..SortConfig::default()
    };
    let outcome = with_background(&dev, case.background, || {
        run_sort(&cfg, &input, layout, records, "output")
    })?;
    let (_, outcome) = outcome?;
    let ledger = dev.ledger_snapshot();
    let report = PhaseReport::new(&ledger, &outcome.phase_wall_ns);
    Ok(report
        .rows
        .into_iter()
        .map(|r| BenchRow {
            suite,
            device: case.spec.name.clone(),
            algorithm: algo_label(case.algorithm, case.mode),
            variant: case.variant.clone(),
            concurrency: case.concurrency,
            records,
            key_size: layout.key_size,
            value_size: (!layout.is_klv()).then_some(layout.value_size),
            phase: r.phase,
            wall_ns: r.wall_ns,
            injected_delay_ns: r.injected_delay_ns,
            bytes: r.bytes,
        })
        .collect())
}

const BG_FILE_BYTES: usize = 1 << 20;
const BG_OP_BYTES: usize = 4096;

/// Runs `f` while background threads read and/or write a scratch file on
/// the same device.
fn with_background<T>(dev: &Arc<Device>, bg: Background, f: impl FnOnce() -> T) -> Result<T> {
    if bg.readers == 0 && bg.writers == 0 {
        return Ok(f());
    }
    let file = dev.import(".background", &vec![0xa5; BG_FILE_BYTES])?;
    let stop = AtomicBool::new(false);
    let slots = (BG_FILE_BYTES / BG_OP_BYTES) as u64;
    let out = std::thread::scope(|s| {
        let mut handles = Vec::new();
        for t in 0..bg.readers + bg.writers {
            let (file, stop) = (&file, &stop);
            let write = t >= bg.readers;
            handles.push(s.spawn(move || -> braidsort::Result<()> {
                let buf = vec![0x5a; BG_OP_BYTES];
                let mut i = t as u64;
                while !stop.load(Ordering::Relaxed) {
                    // fixed odd stride visits every slot
                    let off = (i * 7 % slots) * BG_OP_BYTES as u64;
                    if write {
                        file.write(off, &buf, Access::random(Phase::Background))?;
                    } else {
                        file.read(off, BG_OP_BYTES, Access::random(Phase::Background))?;
                    }
                    i += 1;
                }
                Ok(())
            }));
        }
        let out = f();
        stop.store(true, Ordering::Relaxed);
        for h in handles {
            h.join().map_err(|_| braidsort::Error::WorkerPanic)??;
        }
        Ok::<_, braidsort::Error>(out)
    })?;
    dev.remove(".background")?;
    Ok(out)
}
