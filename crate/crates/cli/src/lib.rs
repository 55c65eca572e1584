//! Command-line front end: dataset generation, sorting, validation, device
//! profiling and benchmark suites.

pub mod bench;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use braidsort::device::{Device, DeviceFile, DeviceSpec, TrafficLedger};
use braidsort::job::{run_sort, Algorithm, BufferConfig, ModeRequest, SortConfig, SortOutcome};
use braidsort::profiler::{self, PoolPlan, ProbeConfig};
use braidsort::recfmt::{self, DatasetMeta, GenRequest, RecordLayout};
use braidsort::report::PhaseReport;
use braidsort::sched::ConcurrencyMode;

/// Caps every worker pool when set to a positive integer.
pub const THREADS_ENV: &str = "BRAIDSORT_THREADS";

#[derive(Parser, Debug)]
#[command(
    name = "braidsort",
    version,
    about = "External sorting on emulated byte-addressable storage"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a random dataset.
    Gen(GenArgs),
    /// Sort a dataset file.
    Sort(SortArgs),
    /// Check that an output is a sorted permutation of an input.
    Validate(ValidateArgs),
    /// Measure a device and write its throughput profile.
    Profile(ProfileArgs),
    /// Run a benchmark suite and write per-phase CSV rows.
    Bench(bench::BenchArgs),
}

#[derive(Args, Debug, Clone)]
pub struct LayoutArgs {
    #[arg(long, default_value_t = 10)]
    pub key_size: usize,
    /// Value bytes of fixed-size records.
    #[arg(long, default_value_t = 90)]
    pub value_size: usize,
    /// Key, 4-byte length, variable value.
    #[arg(long)]
    pub klv: bool,
}

impl LayoutArgs {
    pub fn layout(&self) -> Result<RecordLayout> {
        let l = if self.klv {
            RecordLayout::klv(self.key_size)
        } else {
            RecordLayout::fixed(self.key_size, self.value_size)
        };
        l.check()?;
        Ok(l)
    }
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    #[arg(long, default_value_t = 400_000)]
    pub records: u64,
    #[command(flatten)]
    pub layout: LayoutArgs,
    #[arg(long, default_value_t = 0)]
    pub vlen_min: u32,
    #[arg(long, default_value_t = 180)]
    pub vlen_max: u32,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

impl DataArgs {
    pub fn request(&self) -> Result<GenRequest> {
        let l = &self.layout;
        if l.klv && self.vlen_min > self.vlen_max {
            bail!(
                "--vlen-min {} exceeds --vlen-max {}",
                self.vlen_min,
                self.vlen_max
            );
        }
        Ok(if l.klv {
            GenRequest::klv(
                l.key_size,
                self.vlen_min,
                self.vlen_max,
                self.records,
                self.seed,
            )
        } else {
            GenRequest::fixed(l.key_size, l.value_size, self.records, self.seed)
        })
    }
}

#[derive(Args, Debug, Clone)]
pub struct JobArgs {
    #[arg(long, default_value = "wiscsort")]
    pub algo: Algorithm,
    #[arg(long, default_value = "auto")]
    pub mode: ModeRequest,
    #[arg(long, default_value = "no-overlap")]
    pub concurrency: ConcurrencyMode,
    /// One thread for every stage.
    #[arg(long)]
    pub single_thread: bool,
    /// Bytes of memory for the index (K/M/G suffixes accepted).
    #[arg(long, value_parser = parse_size, default_value = "256M")]
    pub index_budget: u64,
    #[arg(long, value_parser = parse_size, default_value = "16M")]
    pub read_buf: u64,
    #[arg(long, value_parser = parse_size, default_value = "64M")]
    pub write_buf: u64,
    /// Preset name (bd, brd, bard, pmem, real, emulated) or device spec file.
    #[arg(long, default_value = "pmem")]
    pub device: String,
    /// Device profile used to size the worker pools.
    #[arg(long)]
    pub profile: Option<PathBuf>,
    /// Account injected delays without busy-waiting for them.
    #[arg(long)]
    pub no_spin: bool,
}

impl JobArgs {
    pub fn device_spec(&self) -> Result<DeviceSpec> {
        let spec = DeviceSpec::resolve(&self.device)
            .with_context(|| format!("device `{}`", self.device))?;
        Ok(if self.no_spin {
            spec.with_spin(false)
        } else {
            spec
        })
    }

    pub fn config(&self, layout: &RecordLayout) -> Result<SortConfig> {
        let pools = match &self.profile {
            Some(p) => {
                let prof = profiler::load_profile(p)
                    .with_context(|| format!("profile {}", p.display()))?;
                let v = if layout.is_klv() {
                    64
                } else {
                    layout.value_size
                };
                PoolPlan::from_profile(&prof, layout.key_size, v)?
            }
            None => PoolPlan::default(),
        };
        Ok(SortConfig {
            algorithm: self.algo,
            mode: self.mode,
            concurrency: self.concurrency,
            buffers: BufferConfig {
                index_budget: self.index_budget,
                read_buf: to_usize(self.read_buf)?,
                write_buf: to_usize(self.write_buf)?,
            },
            pools: cap_pools(pools)?,
            single_thread: self.single_thread,
            offset_width: None,
        })
    }
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SortArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub layout: LayoutArgs,
    #[command(flatten)]
    pub job: JobArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Phase report CSV; the ledger and trace CSVs are written next to it.
    /// Defaults to `<out>.report.csv`.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Validate the output and exit nonzero if it is wrong.
    #[arg(long)]
    pub verify: bool,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub layout: LayoutArgs,
}

#[derive(Args, Debug)]
pub struct ProfileArgs {
    #[arg(long, default_value = "pmem")]
    pub device: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Directory for the probe file on real devices.
    #[arg(long, default_value = ".")]
    pub dir: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "64,256,4096")]
    pub sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32")]
    pub threads: Vec<usize>,
    /// Accesses per thread per probe cell.
    #[arg(long, default_value_t = 64)]
    pub ops: usize,
    /// Milliseconds per probe cell on real devices.
    #[arg(long, default_value_t = 20)]
    pub cell_ms: u64,
    #[arg(long, default_value_t = 10)]
    pub key_size: usize,
    #[arg(long, default_value_t = 90)]
    pub value_size: usize,
}

/// Parses `123`, `64K`, `16M`, `2G` (binary multiples).
pub fn parse_size(s: &str) -> std::result::Result<u64, String> {
    let s = s.trim();
    let (num, mult) = match s.char_indices().last() {
        Some((i, c)) if c.is_ascii_alphabetic() => {
            let m = match c.to_ascii_uppercase() {
                'K' => 1u64 << 10,
                'M' => 1 << 20,
                'G' => 1 << 30,
                _ => return Err(format!("unknown size suffix in `{s}`")),
            };
            (&s[..i], m)
        }
        _ => (s, 1),
    };
    let n: u64 = num.parse().map_err(|_| format!("bad size `{s}`"))?;
    n.checked_mul(mult)
        .ok_or_else(|| format!("size `{s}` overflows"))
}

fn to_usize(v: u64) -> Result<usize> {
    usize::try_from(v).context("buffer size does not fit in memory")
}

/// Applies the thread cap from the environment, if any.
pub fn cap_pools(pools: PoolPlan) -> Result<PoolPlan> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => {
            let n: usize = v
                .trim()
                .parse()
                .with_context(|| format!("{THREADS_ENV}={v}"))?;
            if n == 0 {
                bail!("{THREADS_ENV} must be at least 1");
            }
            Ok(pools.capped(n))
        }
        _ => Ok(pools),
    }
}

/// Runs one command and returns the process exit status.
pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Gen(a) => cmd_gen(&a),
        Command::Sort(a) => cmd_sort(&a),
        Command::Validate(a) => cmd_validate(&a),
        Command::Profile(a) => cmd_profile(&a),
        Command::Bench(a) => bench::cmd_bench(&a),
    }
}

pub fn cmd_gen(a: &GenArgs) -> Result<i32> {
    let meta = recfmt::gen_dataset(&a.data.request()?, &a.out, None)
        .with_context(|| format!("writing {}", a.out.display()))?;
    println!(
        "wrote {} records ({} bytes) to {}",
        meta.record_count,
        meta.total_bytes,
        a.out.display()
    );
    Ok(0)
}

/// Where the report, ledger and trace CSVs of a sort go.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportPaths {
    pub report: PathBuf,
    pub ledger: PathBuf,
    pub trace: PathBuf,
}

impl ReportPaths {
    pub fn new(out: &Path, report: Option<&Path>) -> Self {
        let report = report
            .map(Path::to_path_buf)
            .unwrap_or_else(|| suffixed(out, ".report.csv"));
        let stem = match report.extension() {
            Some(e) if e == "csv" => report.with_extension(""),
            _ => report.clone(),
        };
        ReportPaths {
            ledger: suffixed(&stem, ".ledger.csv"),
            trace: suffixed(&stem, ".trace.csv"),
            report,
        }
    }
}

fn suffixed(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Counts records of a host file; KLV files are scanned.
fn count_records(path: &Path, len: u64, layout: RecordLayout) -> Result<u64> {
    if layout.is_klv() {
        let data = fs::read(path)?;
        return Ok(DatasetMeta::describe(&data, layout)?.record_count);
    }
    let r = layout.record_size() as u64;
    if len % r != 0 {
        bail!(
            "{} is {len} bytes, not a multiple of the {r}-byte record size",
            path.display()
        );
    }
    Ok(len / r)
}

pub struct SortRun {
    pub outcome: SortOutcome,
    pub ledger: TrafficLedger,
    pub report: PhaseReport,
    pub paths: ReportPaths,
}

/// Sorts `a.input` into `a.out` and writes the CSV artifacts.
pub fn sort_file(a: &SortArgs) -> Result<SortRun> {
    let layout = a.layout.layout()?;
    let cfg = a.job.config(&layout)?;
    let spec = a.job.device_spec()?;
    let len = fs::metadata(&a.input)
        .with_context(|| format!("reading {}", a.input.display()))?
        .len();
    let records = count_records(&a.input, len, layout)?;

    let (device, input, out_name): (Arc<Device>, DeviceFile, String) = if spec.is_emulated() {
        let dev = Device::emulated(spec)?;
        let data = fs::read(&a.input)?;
        let f = dev.import("input", &data)?;
        (dev, f, "output".into())
    } else {
        let out_abs = std::path::absolute(&a.out)?;
        let root = out_abs
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let dev = Device::open(spec, &root)?;
        let f = dev.open_file(&std::path::absolute(&a.input)?.to_string_lossy())?;
        (dev, f, out_abs.to_string_lossy().into_owned())
    };

    let (out, outcome) = run_sort(&cfg, &input, layout, records, &out_name)?;
    if device.spec().is_emulated() {
        fs::write(&a.out, out.contents()?)
            .with_context(|| format!("writing {}", a.out.display()))?;
    }
    let ledger = device.ledger_snapshot();
    let report = PhaseReport::new(&ledger, &outcome.phase_wall_ns);
    let paths = ReportPaths::new(&a.out, a.report.as_deref());
    fs::write(&paths.report, report.to_csv())?;
    fs::write(&paths.ledger, ledger.to_csv())?;
    fs::write(&paths.trace, device.trace_snapshot().to_csv())?;
    Ok(SortRun {
        outcome,
        ledger,
        report,
        paths,
    })
}

pub fn cmd_sort(a: &SortArgs) -> Result<i32> {
    let r = sort_file(a)?;
    let o = &r.outcome;
    let mode = match (o.algorithm, &o.plan) {
        (Algorithm::WiscSort, Some(p)) => p.mode.as_str(),
        _ => "-",
    };
    println!(
        "algo={} mode={} runs={} bytes={} injected_delay_ns={} wall_ns={}",
        o.algorithm,
        mode,
        o.run_count,
        r.ledger.total_bytes(),
        r.ledger.injected_delay_ns(),
        o.total_wall_ns
    );
    println!("report={}", r.paths.report.display());
    if a.verify {
        let v = recfmt::validate(&a.input, &a.out, &a.layout.layout()?)?;
        println!("sorted={} permutation={}", v.is_sorted, v.is_permutation);
        if !v.ok() {
            eprintln!(
                "verification failed: first violation at {:?}",
                v.first_violation_index
            );
            return Ok(2);
        }
    }
    Ok(0)
}

pub fn cmd_validate(a: &ValidateArgs) -> Result<i32> {
    let v = recfmt::validate(&a.input, &a.output, &a.layout.layout()?)?;
    println!(
        "records={} sorted={} permutation={} input_digest={} output_digest={}",
        v.record_count, v.is_sorted, v.is_permutation, v.input_digest, v.output_digest
    );
    if let Some(i) = v.first_violation_index {
        println!("first_violation_index={i}");
    }
    Ok(if v.ok() { 0 } else { 1 })
}

pub fn cmd_profile(a: &ProfileArgs) -> Result<i32> {
    let spec = DeviceSpec::resolve(&a.device).with_context(|| format!("device `{}`", a.device))?;
    let dev = if spec.is_emulated() {
        Device::emulated(spec.with_spin(false))?
    } else {
        Device::open(spec, &a.dir)?
    };
    let cfg = ProbeConfig {
        sizes: a.sizes.clone(),
        threads: a.threads.clone(),
        duration: std::time::Duration::from_millis(a.cell_ms),
        ops_per_thread: a.ops,
        ..ProbeConfig::default()
    };
    let prof = profiler::profile_device(&dev, &cfg)?;
    profiler::save_profile(&prof, &a.out)?;
    let plan = cap_pools(PoolPlan::from_profile(&prof, a.key_size, a.value_size)?)?;
    println!(
        "read_pool={} random_read_pool={} write_pool={} sort_pool={}",
        plan.read_pool, plan.random_read_pool, plan.write_pool, plan.sort_pool
    );
    println!("profile={}", a.out.display());
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes() {
        assert_eq!(parse_size("123"), Ok(123));
        assert_eq!(parse_size("64K"), Ok(65536));
        assert_eq!(parse_size("16m"), Ok(16 << 20));
        assert_eq!(parse_size("2G"), Ok(2 << 30));
        assert!(parse_size("3T").is_err());
        assert!(parse_size("x").is_err());
    }

    #[test]
    fn report_paths() {
        let p = ReportPaths::new(Path::new("/t/out.bin"), None);
        assert_eq!(p.report, Path::new("/t/out.bin.report.csv"));
        assert_eq!(p.ledger, Path::new("/t/out.bin.report.ledger.csv"));
        let p = ReportPaths::new(Path::new("o"), Some(Path::new("r/phase.csv")));
        assert_eq!(p.ledger, Path::new("r/phase.ledger.csv"));
        assert_eq!(p.trace, Path::new("r/phase.trace.csv"));
    }

    #[test]
    fn parses_flags() {
        let cli = Cli::try_parse_from([
            "braidsort",
            "sort",
            "--input",
            "a",
            "--out",
            "b",
            "--algo",
            "ems",
            "--concurrency",
            "nosync",
            "--index-budget",
            "4M",
            "--klv",
        ])
        .unwrap();
        let Command::Sort(s) = cli.command else {
            panic!()
        };
        assert_eq!(s.job.algo, Algorithm::Ems);
        assert_eq!(s.job.concurrency, ConcurrencyMode::NoSync);
        assert_eq!(s.job.index_budget, 4 << 20);
        assert!(s.layout.layout().unwrap().is_klv());
        assert!(Cli::try_parse_from([
            "braidsort",
            "sort",
            "--input",
            "a",
            "--out",
            "b",
            "--algo",
            "x"
        ])
        .is_err());
    }
}
