use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backing {
    RealFile,
    Emulated,
}

impl Backing {
    pub fn as_str(&self) -> &'static str {
        match self {
            Backing::RealFile => "real",
            Backing::Emulated => "emulated",
        }
    }
}

impl FromStr for Backing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "real" | "realfile" | "real_file" | "file" => Ok(Backing::RealFile),
            "emulated" | "emu" => Ok(Backing::Emulated),
            other => Err(Error::InvalidSpec(format!("unknown backing `{other}`"))),
        }
    }
}

/// Piecewise-constant table of per-thread relative throughput, looked up at
/// the nearest lower thread count.
///
/// A value of 1.0 means each of the `n` threads runs at single-thread speed,
/// so the aggregate is `n * value`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingTable(BTreeMap<usize, f64>);

impl ScalingTable {
    pub fn linear() -> Self {
        ScalingTable(BTreeMap::from([(1, 1.0)]))
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, f64)>) -> Self {
        ScalingTable(pairs.into_iter().collect())
    }

    /// Aggregate throughput grows linearly up to `knee` threads and stays flat
    /// until `max` threads.
    pub fn saturating(knee: usize, max: usize) -> Self {
        Self::from_pairs((1..=max.max(1)).map(|n| {
            (
                n,
                if n <= knee {
                    1.0
                } else {
                    knee as f64 / n as f64
                },
            )
        }))
    }

    /// Aggregate peaks at `knee` threads, then declines linearly so that at
    /// `max` threads it is `peak / drop`.
    pub fn peaking(knee: usize, max: usize, drop: f64) -> Self {
        let peak = knee as f64;
        let floor = peak / drop;
        Self::from_pairs((1..=max.max(1)).map(|n| {
            if n <= knee || max == knee {
                (n, 1.0)
            } else {
                let t = (n - knee) as f64 / (max - knee) as f64;
                let agg = peak + (floor - peak) * t;
                (n, agg / n as f64)
            }
        }))
    }

    pub fn efficiency(&self, threads: usize) -> f64 {
        let threads = threads.max(1);
        self.0
            .range(..=threads)
            .next_back()
            .or_else(|| self.0.iter().next())
            .map(|(_, v)| *v)
            .unwrap_or(1.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.0.iter().map(|(k, v)| (*k, *v))
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Emulation and accounting parameters of a storage device.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceSpec {
    pub name: String,
    pub backing: Backing,
    pub line_size: u64,
    pub base_read_latency_ns: f64,
    pub seq_read_extra_ns: f64,
    pub rand_read_extra_ns: f64,
    pub write_extra_ns: f64,
    /// Read latency multiplier while at least one write is in flight.
    pub interference_read_slowdown: f64,
    pub read_scaling: ScalingTable,
    pub write_scaling: ScalingTable,
    pub capacity_bytes: u64,
    /// Busy-wait the injected delay in wall time, in addition to accounting it.
    pub spin_delay: bool,
    /// Record per-access time windows.
    pub trace: bool,
}

const GIB: u64 = 1 << 30;

impl DeviceSpec {
    pub fn emulated() -> Self {
        DeviceSpec {
            name: "custom".into(),
            backing: Backing::Emulated,
            line_size: 64,
            base_read_latency_ns: 100.0,
            seq_read_extra_ns: 0.0,
            rand_read_extra_ns: 0.0,
            write_extra_ns: 0.0,
            interference_read_slowdown: 2.0,
            read_scaling: ScalingTable::linear(),
            write_scaling: ScalingTable::linear(),
            capacity_bytes: 4 * GIB,
            spin_delay: true,
            trace: true,
        }
    }

    pub fn real_file() -> Self {
        DeviceSpec {
            name: "real".into(),
            backing: Backing::RealFile,
            base_read_latency_ns: 0.0,
            interference_read_slowdown: 1.0,
            capacity_bytes: u64::MAX,
            spin_delay: false,
            ..Self::emulated()
        }
    }

    fn braid_base(name: &str) -> Self {
        DeviceSpec {
            name: name.into(),
            interference_read_slowdown: 1.0,
            read_scaling: ScalingTable::saturating(16, 64),
            write_scaling: ScalingTable::saturating(16, 64),
            ..Self::emulated()
        }
    }

    /// Byte-addressable disk: random reads 500 ns slower per line.
    pub fn bd() -> Self {
        DeviceSpec {
            rand_read_extra_ns: 500.0,
            ..Self::braid_base("bd")
        }
    }

    /// Random reads as fast as sequential reads, symmetric writes.
    pub fn brd() -> Self {
        Self::braid_base("brd")
    }

    /// Writes 500 ns slower per line than reads.
    pub fn bard() -> Self {
        DeviceSpec {
            write_extra_ns: 500.0,
            ..Self::braid_base("bard")
        }
    }

    /// PMEM-like device exhibiting all five properties: reads scale to 16
    /// threads, writes peak at 5 and halve by 32, random reads slightly slower,
    /// writes much slower, and reads slow down 2x under concurrent writes.
    pub fn pmem() -> Self {
        DeviceSpec {
            name: "pmem".into(),
            base_read_latency_ns: 50.0,
            rand_read_extra_ns: 10.0,
            write_extra_ns: 650.0,
            interference_read_slowdown: 2.0,
            read_scaling: ScalingTable::saturating(16, 64),
            write_scaling: ScalingTable::peaking(5, 32, 2.0),
            ..Self::emulated()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "bd" => Some(Self::bd()),
            "brd" => Some(Self::brd()),
            "bard" => Some(Self::bard()),
            "pmem" => Some(Self::pmem()),
            "real" => Some(Self::real_file()),
            "emulated" => Some(Self::emulated()),
            _ => None,
        }
    }

    /// A preset name, or a path to a spec file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        match Self::preset(name_or_path) {
            Some(s) => Ok(s),
            None => Self::load(Path::new(name_or_path)),
        }
    }

    pub fn with_spin(mut self, spin: bool) -> Self {
        self.spin_delay = spin;
        self
    }

    pub fn with_trace(mut self, trace: bool) -> Self {
        self.trace = trace;
        self
    }

    pub fn is_emulated(&self) -> bool {
        self.backing == Backing::Emulated
    }

    pub fn check(&self) -> Result<()> {
        let lat = [
            ("base_read_latency_ns", self.base_read_latency_ns),
            ("seq_read_extra_ns", self.seq_read_extra_ns),
            ("rand_read_extra_ns", self.rand_read_extra_ns),
            ("write_extra_ns", self.write_extra_ns),
        ];
        for (k, v) in lat {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidSpec(format!(
                    "{k} must be a finite value >= 0, got {v}"
                )));
            }
        }
        if !(self.interference_read_slowdown >= 1.0 && self.interference_read_slowdown.is_finite())
        {
            return Err(Error::InvalidSpec(
                "interference_read_slowdown must be >= 1".into(),
            ));
        }
        if self.line_size == 0 {
            return Err(Error::InvalidSpec("line_size must be positive".into()));
        }
        for (label, t) in [
            ("read_scaling", &self.read_scaling),
            ("write_scaling", &self.write_scaling),
        ] {
            if t.is_empty() {
                return Err(Error::InvalidSpec(format!("{label} table is empty")));
            }
            for (n, v) in t.iter() {
                if n == 0 {
                    return Err(Error::InvalidSpec(format!(
                        "{label} thread counts start at 1"
                    )));
                }
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::InvalidSpec(format!("{label}.{n} must be positive")));
                }
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "name={}", self.name);
        let _ = writeln!(s, "backing={}", self.backing.as_str());
        let _ = writeln!(s, "line_size={}", self.line_size);
        let _ = writeln!(s, "base_read_latency_ns={}", self.base_read_latency_ns);
        let _ = writeln!(s, "seq_read_extra_ns={}", self.seq_read_extra_ns);
        let _ = writeln!(s, "rand_read_extra_ns={}", self.rand_read_extra_ns);
        let _ = writeln!(s, "write_extra_ns={}", self.write_extra_ns);
        let _ = writeln!(
            s,
            "interference_read_slowdown={}",
            self.interference_read_slowdown
        );
        for (n, v) in self.read_scaling.iter() {
            let _ = writeln!(s, "read_scaling.{n}={v}");
        }
        for (n, v) in self.write_scaling.iter() {
            let _ = writeln!(s, "write_scaling.{n}={v}");
        }
        let _ = writeln!(s, "capacity_bytes={}", self.capacity_bytes);
        let _ = writeln!(s, "spin_delay={}", self.spin_delay);
        let _ = writeln!(s, "trace={}", self.trace);
        s
    }

    /// Parses `key=value` lines; `#` starts a comment. Keys not present keep
    /// the defaults of [`DeviceSpec::emulated`] (or the named `preset`).
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidSpec(format!("line {}: expected key=value", lineno + 1))
            })?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }

        let mut spec = match pairs.iter().find(|(k, _)| k == "preset") {
            Some((_, p)) => Self::preset(p)
                .ok_or_else(|| Error::InvalidSpec(format!("unknown preset `{p}`")))?,
            None => Self::emulated(),
        };
        let mut read_scaling = BTreeMap::new();
        let mut write_scaling = BTreeMap::new();

        fn num<T: FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::InvalidSpec(format!("bad value for {k}: `{v}`")))
        }

        for (k, v) in &pairs {
            match k.as_str() {
                "preset" => {}
                "name" => spec.name = v.clone(),
                "backing" => spec.backing = v.parse()?,
                "line_size" => spec.line_size = num(k, v)?,
                "base_read_latency_ns" => spec.base_read_latency_ns = num(k, v)?,
                "seq_read_extra_ns" => spec.seq_read_extra_ns = num(k, v)?,
                "rand_read_extra_ns" => spec.rand_read_extra_ns = num(k, v)?,
                "write_extra_ns" => spec.write_extra_ns = num(k, v)?,
                "interference_read_slowdown" => spec.interference_read_slowdown = num(k, v)?,
                "capacity_bytes" => spec.capacity_bytes = num(k, v)?,
                "spin_delay" => spec.spin_delay = num(k, v)?,
                "trace" => spec.trace = num(k, v)?,
                other => {
                    if let Some(n) = other.strip_prefix("read_scaling.") {
                        read_scaling.insert(num::<usize>(k, n)?, num::<f64>(k, v)?);
                    } else if let Some(n) = other.strip_prefix("write_scaling.") {
                        write_scaling.insert(num::<usize>(k, n)?, num::<f64>(k, v)?);
                    } else {
                        return Err(Error::InvalidSpec(format!("unknown key `{other}`")));
                    }
                }
            }
        }
        if !read_scaling.is_empty() {
            spec.read_scaling = ScalingTable(read_scaling);
        }
        if !write_scaling.is_empty() {
            spec.write_scaling = ScalingTable(write_scaling);
        }
        spec.check()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            Error::InvalidSpec(format!("cannot read device spec `{}`: {e}", path.display()))
        })?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }
}

impl Default for DeviceSpec {
    fn default() -> Self {
        Self::emulated()
    }
}
