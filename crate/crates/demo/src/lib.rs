//! Browser demo. The sort engine itself needs OS threads and a monotonic
//! clock, so the page works from closed-form traffic counts and the device
//! presets' per-line costs instead of running sorts.

use braidsort::device::DeviceSpec;
use braidsort::profiler::PoolPlan;
use braidsort::job::{BufferConfig, ModeRequest};
use braidsort::wiscsort::{entry_footprint, plan_sort, SortMode};
use wasm_bindgen::prelude::*;

pub const SWEEP_VALUES: [u64; 8] = [1, 5, 10, 25, 50, 90, 246, 502];
pub const PRESETS: [&str; 4] = ["bd", "brd", "bard", "pmem"];

/// Total device bytes moved by each approach for fixed-size records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Traffic {
    pub ems: u64,
    pub onepass: u64,
    pub mergepass: u64,
}

pub fn traffic(n: u64, k: u64, v: u64, p: u64) -> Traffic {
    Traffic {
        ems: 4 * n * (k + v),
        onepass: 2 * n * (k + v),
        mergepass: 4 * n * k + 2 * n * p + 2 * n * v,
    }
}

fn lines(bytes: u64, line: u64) -> u64 {
    bytes.div_ceil(line)
}

/// Single-thread injected delay estimate in ns for (ems, onepass, mergepass).
/// Strided and random reads are charged whole lines per record, so small
/// records are overestimated.
pub fn device_delay(spec: &DeviceSpec, n: u64, k: u64, v: u64, p: u64) -> [f64; 3] {
    let l = spec.line_size.max(1);
    let seq = spec.base_read_latency_ns + spec.seq_read_extra_ns;
    let rand = spec.base_read_latency_ns + spec.rand_read_extra_ns;
    let write = spec.base_read_latency_ns + spec.write_extra_ns;
    let rec = n * (k + v);
    let stream = lines(rec, l) as f64;
    let ems = 2.0 * stream * seq + 2.0 * stream * write;
    let keys = if k == 0 { 0 } else { n * lines(k, l) } as f64;
    let values = if v == 0 { 0 } else { n * lines(v, l) } as f64;
    let onepass = keys * rand + values * rand + stream * write;
    let runs = lines(n * (k + p), l) as f64;
    let mergepass = onepass + runs * write + runs * seq;
    [ems, onepass, mergepass]
}

fn preset(name: &str) -> Result<DeviceSpec, JsError> {
    DeviceSpec::preset(name).ok_or_else(|| JsError::new(&format!("unknown device {name}")))
}

/// JSON array of {v, ems, onepass, mergepass, cut} over [`SWEEP_VALUES`],
/// where cut is the percentage of EMS traffic MergePass avoids.
#[wasm_bindgen]
pub fn vk_sweep(n: u64, k: u64, p: u64) -> String {
    let rows: Vec<String> = SWEEP_VALUES
        .iter()
        .map(|&v| {
            let t = traffic(n, k, v, p);
            let cut = if t.ems == 0 { 0.0 } else { 100.0 * (1.0 - t.mergepass as f64 / t.ems as f64) };
            format!(
                "{{\"v\":{v},\"ems\":{},\"onepass\":{},\"mergepass\":{},\"cut\":{cut:.2}}}",
                t.ems, t.onepass, t.mergepass
            )
        })
        .collect();
    format!("[{}]", rows.join(","))
}

/// JSON array of {device, ems, onepass, mergepass} delay estimates in ns.
#[wasm_bindgen]
pub fn compare_devices(n: u64, k: u64, v: u64, p: u64) -> Result<String, JsError> {
    let mut rows = Vec::new();
    for name in PRESETS {
        let [e, o, m] = device_delay(&preset(name)?, n, k, v, p);
        rows.push(format!(
            "{{\"device\":\"{name}\",\"ems\":{e:.0},\"onepass\":{o:.0},\"mergepass\":{m:.0}}}"
        ));
    }
    Ok(format!("[{}]", rows.join(",")))
}

/// JSON {footprint, mode, runs, records_per_run} for a budget in bytes.
#[wasm_bindgen]
pub fn plan(n: u64, k: usize, budget: u64) -> Result<String, JsError> {
    let p = plan_sort(n, k, budget, PoolPlan::uniform(1), &BufferConfig::default(), ModeRequest::Auto)
        .map_err(|e| JsError::new(&e.to_string()))?;
    let mode = match p.mode {
        SortMode::OnePass => "onepass",
        SortMode::MergePass => "mergepass",
    };
    Ok(format!(
        "{{\"footprint\":{},\"mode\":\"{mode}\",\"runs\":{},\"records_per_run\":{}}}",
        n * entry_footprint(k),
        p.run_count,
        p.records_per_run
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mergepass_bytes_win_once_values_exceed_offsets() {
        for v in SWEEP_VALUES {
            let t = traffic(1000, 10, v, 5);
            assert_eq!(t.mergepass < t.ems, v > 5, "v={v}");
            assert!(t.onepass < t.ems);
        }
        assert!(vk_sweep(1000, 10, 5).starts_with("[{\"v\":1,"));
    }

    #[test]
    fn plan_switches_at_footprint() {
        assert!(plan(100, 10, 1800).unwrap().contains("onepass"));
        assert!(plan(100, 10, 1799).unwrap().contains("\"runs\":2"));
    }

    #[test]
    fn device_estimates_follow_presets() {
        let bd = device_delay(&DeviceSpec::bd(), 100_000, 10, 90, 5);
        let brd = device_delay(&DeviceSpec::brd(), 100_000, 10, 90, 5);
        assert!(bd[0] < bd[1], "random reads penalised on bd");
        assert!(brd[1] < brd[0]);
        assert!(compare_devices(10, 10, 90, 5).unwrap().contains("\"device\":\"bard\""));
    }
}
