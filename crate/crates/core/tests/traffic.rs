//! Ledger totals against closed-form byte counts.

use braidsort::device::{Device, DeviceSpec, Phase, TrafficLedger};
use braidsort::job::{run_sort, Algorithm, BufferConfig, ModeRequest, SortConfig, SortOutcome};
use braidsort::profiler::PoolPlan;
use braidsort::recfmt::{generate, GenRequest, RecordLayout};
use braidsort::sched::ConcurrencyMode;
use braidsort::wiscsort::RUN_HEADER_SIZE;

const P: u64 = 5;

fn sort(
    n: u64,
    k: usize,
    v: usize,
    algo: Algorithm,
    mode: ModeRequest,
    budget: u64,
) -> (TrafficLedger, SortOutcome) {
    let data = generate(&GenRequest::fixed(k, v, n, n ^ 0x5eed)).unwrap();
    let dev = Device::emulated(DeviceSpec::brd().with_spin(false).with_trace(false)).unwrap();
    let input = dev.import("in", &data).unwrap();
    let cfg = SortConfig {
        algorithm: algo,
        mode,
        concurrency: ConcurrencyMode::NoOverlap,
        buffers: BufferConfig {
            index_budget: budget,
            read_buf: 64 << 10,
            write_buf: 256 << 10,
        },
        pools: PoolPlan::uniform(2),
        offset_width: Some(P as usize),
        ..SortConfig::default()
    };
    let (_, o) = run_sort(&cfg, &input, RecordLayout::fixed(k, v), n, "out").unwrap();
    (dev.ledger_snapshot(), o)
}

/// Header bytes: each run header is written once and read once.
fn headers(o: &SortOutcome) -> u64 {
    2 * RUN_HEADER_SIZE as u64 * o.run_count as u64
}

#[test]
fn closed_forms_hold_at_two_scales() {
    for n in [1_000u64, 100_000] {
        let (k, v) = (10u64, 90u64);
        let fp = n * (k + 8);
        let (one, _) = sort(n, 10, 90, Algorithm::WiscSort, ModeRequest::Auto, fp);
        let (merge, mo) = sort(n, 10, 90, Algorithm::WiscSort, ModeRequest::Auto, fp / 3);
        let (ems, eo) = sort(n, 10, 90, Algorithm::Ems, ModeRequest::Auto, fp / 3);
        assert!(mo.run_count >= 3);
        assert_eq!(eo.merge.unwrap().runs, eo.run_count);

        let one_t = one.total_bytes();
        let merge_t = merge.total_bytes() - headers(&mo);
        let ems_t = ems.total_bytes();
        assert_eq!(one_t, 2 * n * (k + v), "n {n}");
        assert_eq!(merge_t, 4 * n * k + 2 * n * P + 2 * n * v, "n {n}");
        assert_eq!(ems_t, 4 * n * (k + v), "n {n}");
        assert_eq!(ems_t - merge_t, 2 * n * (v - P));
        assert_eq!(ems_t - one_t, 2 * n * (k + v));
    }
}

#[test]
fn run_phase_ratios() {
    let n = 10_000;
    let (w, wo) = sort(
        n,
        10,
        90,
        Algorithm::WiscSort,
        ModeRequest::MergePass,
        60_000,
    );
    let (e, _) = sort(n, 10, 90, Algorithm::Ems, ModeRequest::Auto, 60_000);
    let w_read = w.phase(Phase::RunRead).bytes;
    let w_write = w.phase(Phase::RunWrite).bytes - RUN_HEADER_SIZE as u64 * wo.run_count as u64;
    assert_eq!(e.phase(Phase::RunRead).bytes, 10 * w_read);
    assert_eq!(e.phase(Phase::RunWrite).bytes * 15, w_write * 100);
}

#[test]
fn pmsort_run_phase_reads_whole_records() {
    let n = 5_000;
    let (l, o) = sort(n, 10, 90, Algorithm::PmSort, ModeRequest::Auto, 30_000);
    assert_eq!(l.phase(Phase::RunRead).bytes, n * 100);
    assert_eq!(
        l.phase(Phase::RunWrite).bytes,
        n * 15 + RUN_HEADER_SIZE as u64 * o.run_count as u64
    );
    assert_eq!(l.phase(Phase::RecordRead).bytes, n * 90);
    assert_eq!(l.phase(Phase::MergeWrite).bytes, n * 100);
}

#[test]
fn zero_length_values() {
    let n = 2_000;
    let (one, _) = sort(n, 8, 0, Algorithm::WiscSort, ModeRequest::Auto, 1 << 20);
    assert_eq!(one.total_bytes(), 2 * n * 8);
    assert_eq!(one.phase(Phase::RecordRead).bytes, 0);
}
