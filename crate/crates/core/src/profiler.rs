//! Device microbenchmarks and thread-pool sizing.
//!
//! [`profile_device`] measures read throughput per (pattern, access size,
//! thread count) and write throughput per thread count. [`pool_size`] picks the
//! thread count with the highest measured throughput.
//!
//! On emulated devices throughput comes from the accounted delay, so profiles
//! are reproducible; on real files it comes from wall-clock time.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clock::Stopwatch;
use crate::device::{Access, AccessKind, Device, Direction, Pattern, Phase};
use crate::error::{Error, Result};
use crate::sched::run_workers;

/// Relative margin below which two throughputs count as a tie.
const TIE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceProfile {
    pub device: String,
    /// Seconds since the Unix epoch.
    pub measured_at: u64,
    /// (pattern, access size, threads) to bytes/s. Patterns are Sequential or Random.
    pub read_curve: BTreeMap<(Pattern, usize, usize), f64>,
    /// threads to bytes/s.
    pub write_curve: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolPlan {
    pub read_pool: usize,
    pub random_read_pool: usize,
    pub write_pool: usize,
    pub sort_pool: usize,
}

pub fn available_cores() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

impl Default for PoolPlan {
    fn default() -> Self {
        PoolPlan {
            read_pool: 4,
            random_read_pool: 4,
            write_pool: 2,
            sort_pool: available_cores(),
        }
    }
}

impl PoolPlan {
    pub fn uniform(n: usize) -> Self {
        let n = n.max(1);
        PoolPlan {
            read_pool: n,
            random_read_pool: n,
            write_pool: n,
            sort_pool: n,
        }
    }

    pub fn single_thread() -> Self {
        Self::uniform(1)
    }

    /// Limits every pool to at most `n` threads.
    pub fn capped(self, n: usize) -> Self {
        let n = n.max(1);
        PoolPlan {
            read_pool: self.read_pool.clamp(1, n),
            random_read_pool: self.random_read_pool.clamp(1, n),
            write_pool: self.write_pool.clamp(1, n),
            sort_pool: self.sort_pool.clamp(1, n),
        }
    }

    /// Sizes pools for a sort whose run read gathers `key_size` keys and whose
    /// record gather fetches `value_size` values.
    pub fn from_profile(
        profile: &DeviceProfile,
        key_size: usize,
        value_size: usize,
    ) -> Result<Self> {
        Ok(PoolPlan {
            read_pool: pool_size(
                profile,
                AccessKind::new(Direction::Read, Pattern::Strided),
                key_size,
            )?,
            random_read_pool: pool_size(
                profile,
                AccessKind::new(Direction::Read, Pattern::Random),
                value_size.max(1),
            )?,
            write_pool: pool_size(
                profile,
                AccessKind::new(Direction::Write, Pattern::Sequential),
                4096,
            )?,
            sort_pool: available_cores(),
        })
    }

    pub fn check(&self) -> Result<()> {
        if self.read_pool == 0
            || self.random_read_pool == 0
            || self.write_pool == 0
            || self.sort_pool == 0
        {
            return Err(Error::Plan("every pool needs at least one thread".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ProbeConfig {
    pub sizes: Vec<usize>,
    pub threads: Vec<usize>,
    /// Wall-clock budget per cell on real devices.
    pub duration: Duration,
    /// Accesses per thread per cell on emulated devices, and the minimum on real ones.
    pub ops_per_thread: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            sizes: vec![64, 256, 4096],
            threads: vec![1, 2, 4, 8, 16, 32],
            duration: Duration::from_millis(20),
            ops_per_thread: 64,
            seed: 0x5eed,
        }
    }
}

const PROBE_FILE: &str = ".probe";

pub fn profile_device(device: &Arc<Device>, cfg: &ProbeConfig) -> Result<DeviceProfile> {
    if cfg.sizes.is_empty() || cfg.threads.is_empty() || cfg.ops_per_thread == 0 {
        return Err(Error::Profile(
            "probe needs sizes, thread counts and operations".into(),
        ));
    }
    if cfg.threads.contains(&0) || cfg.sizes.contains(&0) {
        return Err(Error::Profile(
            "probe sizes and thread counts must be positive".into(),
        ));
    }
    let mut sizes = cfg.sizes.clone();
    sizes.sort_unstable();
    sizes.dedup();
    let mut threads = cfg.threads.clone();
    threads.sort_unstable();
    threads.dedup();

    let max_size = *sizes.last().unwrap();
    let max_threads = *threads.last().unwrap();
    let region = (cfg.ops_per_thread * max_size) as u64;
    let working_set = region * max_threads as u64;
    let free = device.capacity().saturating_sub(device.used_bytes());
    if working_set > free {
        return Err(Error::CapacityExceeded {
            needed: working_set,
            capacity: free,
        });
    }
    let _ = device.remove(PROBE_FILE);
    // importing pre-touches the whole working set without charging the ledger
    let file = device.import(PROBE_FILE, &vec![0xA5u8; working_set as usize])?;

    let mut read_curve = BTreeMap::new();
    let mut write_curve = BTreeMap::new();
    let run_cell = |direction: Direction, pattern: Pattern, size: usize, t: usize| -> Result<f64> {
        let before = device.ledger_snapshot();
        let sw = Stopwatch::start();
        let deadline = cfg.duration.as_nanos() as u64;
        run_workers(t, |w| {
            let base = w as u64 * region;
            let slots = region / size as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ ((w as u64) << 32) ^ size as u64);
            let mut buf = vec![0u8; size];
            let mut i = 0usize;
            loop {
                let slot = match pattern {
                    Pattern::Sequential => i as u64 % slots,
                    _ => rng.random_range(0..slots),
                };
                let off = base + slot * size as u64;
                let access = Access::new(pattern, Phase::Probe).width(t);
                match direction {
                    Direction::Read => {
                        file.read_into(off, &mut buf, access)?;
                    }
                    Direction::Write => {
                        file.write(off, &buf, access)?;
                    }
                }
                i += 1;
                let more_time = !device.spec().is_emulated() && sw.elapsed_ns() < deadline;
                if i >= cfg.ops_per_thread && !more_time {
                    break;
                }
            }
            Ok(())
        })?;
        let wall = sw.elapsed_ns().max(1);
        let delta = device.ledger_snapshot().since(&before);
        let bytes = delta.total_bytes() as f64;
        let delay = delta.injected_delay_ns();
        let tput = if device.spec().is_emulated() && delay > 0 {
            // accounted delay is summed over threads that run side by side
            bytes * t as f64 / delay as f64 * 1e9
        } else {
            bytes / wall as f64 * 1e9
        };
        Ok(tput.max(f64::MIN_POSITIVE))
    };

    for pattern in [Pattern::Sequential, Pattern::Random] {
        for &size in &sizes {
            for &t in &threads {
                let v = run_cell(Direction::Read, pattern, size, t)?;
                read_curve.insert((pattern, size, t), v);
            }
        }
    }
    for &t in &threads {
        let v = run_cell(Direction::Write, Pattern::Sequential, max_size, t)?;
        write_curve.insert(t, v);
    }
    device.remove(PROBE_FILE)?;

    let measured_at = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    Ok(DeviceProfile {
        device: device.spec().name.clone(),
        measured_at,
        read_curve,
        write_curve,
    })
}

fn argmax_threads(curve: impl Iterator<Item = (usize, f64)>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    // iterated in ascending thread order, so ties keep the smaller count
    for (t, v) in curve {
        match best {
            Some((_, b)) if v <= b * (1.0 + TIE_EPS) => {}
            _ => best = Some((t, v)),
        }
    }
    best.map(|(t, _)| t)
}

/// Thread count with the highest throughput for `kind` at the measured size
/// nearest to `access_size` (ties toward the smaller size and fewer threads).
/// Strided reads are looked up as random reads.
pub fn pool_size(profile: &DeviceProfile, kind: AccessKind, access_size: usize) -> Result<usize> {
    match kind.direction {
        Direction::Write => argmax_threads(profile.write_curve.iter().map(|(t, v)| (*t, *v)))
            .ok_or_else(|| Error::Profile("profile has no write curve".into())),
        Direction::Read => {
            let pattern = match kind.pattern {
                Pattern::Sequential => Pattern::Sequential,
                Pattern::Strided | Pattern::Random => Pattern::Random,
            };
            let mut sizes: Vec<usize> = profile
                .read_curve
                .keys()
                .filter(|(p, _, _)| *p == pattern)
                .map(|(_, s, _)| *s)
                .collect();
            sizes.dedup();
            let size = sizes
                .iter()
                .copied()
                .min_by_key(|s| (s.abs_diff(access_size), *s))
                .ok_or_else(|| {
                    Error::Profile(format!("profile has no {} read curve", pattern.as_str()))
                })?;
            let curve = profile
                .read_curve
                .range((pattern, size, 0)..=(pattern, size, usize::MAX))
                .map(|((_, _, t), v)| (*t, *v));
            argmax_threads(curve).ok_or_else(|| Error::Profile("empty read curve".into()))
        }
    }
}

impl DeviceProfile {
    pub fn check(&self) -> Result<()> {
        if self.write_curve.is_empty() {
            return Err(Error::Profile("missing write curve".into()));
        }
        if self.read_curve.is_empty() {
            return Err(Error::Profile("missing read curve".into()));
        }
        let cells = self.read_curve.values().chain(self.write_curve.values());
        if cells.into_iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Profile("throughput cells must be positive".into()));
        }
        if self
            .read_curve
            .keys()
            .any(|(p, s, t)| *p == Pattern::Strided || *s == 0 || *t == 0)
            || self.write_curve.keys().any(|t| *t == 0)
        {
            return Err(Error::Profile("invalid profile key".into()));
        }
        Ok(())
    }

    /// Multiplies every cell by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut p = self.clone();
        p.read_curve.values_mut().for_each(|v| *v *= factor);
        p.write_curve.values_mut().for_each(|v| *v *= factor);
        p
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "device={}", self.device);
        let _ = writeln!(s, "measured_at={}", self.measured_at);
        for ((p, size, t), v) in &self.read_curve {
            let _ = writeln!(s, "read.{}.{size}.{t}={v:?}", p.as_str());
        }
        for (t, v) in &self.write_curve {
            let _ = writeln!(s, "write.{t}={v:?}");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut p = DeviceProfile {
            device: String::new(),
            measured_at: 0,
            read_curve: BTreeMap::new(),
            write_curve: BTreeMap::new(),
        };
        let bad = |line: &str| Error::Profile(format!("malformed line `{line}`"));
        for raw in text.lines() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| bad(line))?;
            let (k, v) = (k.trim(), v.trim());
            let num = |v: &str| v.parse::<f64>().map_err(|_| bad(line));
            let parts: Vec<&str> = k.split('.').collect();
            match parts.as_slice() {
                ["device"] => p.device = v.to_string(),
                ["measured_at"] => p.measured_at = v.parse().map_err(|_| bad(line))?,
                ["read", pat, size, t] => {
                    let pat = Pattern::parse(pat).ok_or_else(|| bad(line))?;
                    let size = size.parse().map_err(|_| bad(line))?;
                    let t = t.parse().map_err(|_| bad(line))?;
                    p.read_curve.insert((pat, size, t), num(v)?);
                }
                ["write", t] => {
                    let t = t.parse().map_err(|_| bad(line))?;
                    p.write_curve.insert(t, num(v)?);
                }
                _ => return Err(bad(line)),
            }
        }
        p.check()?;
        Ok(p)
    }
}

pub fn save_profile(profile: &DeviceProfile, path: &Path) -> Result<()> {
    std::fs::write(path, profile.to_text())?;
    Ok(())
}

pub fn load_profile(path: &Path) -> Result<DeviceProfile> {
    DeviceProfile::parse(&std::fs::read_to_string(path)?)
}
