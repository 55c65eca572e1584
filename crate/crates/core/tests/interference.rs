//! Read/write interference on a device whose reads slow down under writes.

use braidsort::device::{Device, DeviceSpec, TrafficLedger};
use braidsort::job::{run_sort, Algorithm, BufferConfig, ModeRequest, SortConfig};
use braidsort::profiler::PoolPlan;
use braidsort::recfmt::{generate, GenRequest, RecordLayout};
use braidsort::sched::ConcurrencyMode;

fn ems_on_pmem(conc: ConcurrencyMode) -> TrafficLedger {
    let n = 6_000;
    let data = generate(&GenRequest::fixed(10, 90, n, 77)).unwrap();
    let dev = Device::emulated(DeviceSpec::pmem().with_spin(true).with_trace(false)).unwrap();
    let input = dev.import("in", &data).unwrap();
    let cfg = SortConfig {
        algorithm: Algorithm::Ems,
        mode: ModeRequest::Auto,
        concurrency: conc,
        buffers: BufferConfig {
            index_budget: n * 100 / 3,
            read_buf: 8 << 10,
            write_buf: 8 << 10,
        },
        pools: PoolPlan {
            sort_pool: 2,
            ..PoolPlan::uniform(4)
        },
        ..SortConfig::default()
    };
    run_sort(&cfg, &input, RecordLayout::fixed(10, 90), n, "out").unwrap();
    dev.ledger_snapshot()
}

#[test]
fn ems_no_overlap_beats_nosync_under_interference() {
    let separated = ems_on_pmem(ConcurrencyMode::NoOverlap);
    let mixed = ems_on_pmem(ConcurrencyMode::NoSync);
    assert_eq!(separated.total_bytes(), mixed.total_bytes());
    assert_eq!(separated.interfered_lines(), 0);
    assert!(mixed.interfered_lines() > 0);
    assert!(
        separated.injected_delay_ns() < mixed.injected_delay_ns(),
        "no-overlap {} vs nosync {}",
        separated.injected_delay_ns(),
        mixed.injected_delay_ns()
    );
}
