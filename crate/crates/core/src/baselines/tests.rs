use crate::device::{Device, DeviceSpec, Pattern, Phase, TrafficLedger};
use crate::job::{run_sort, Algorithm, BufferConfig, ModeRequest, SortConfig, SortOutcome};
use crate::profiler::PoolPlan;
use crate::recfmt::{generate, reference_sort, validate_bytes, GenRequest, RecordLayout};
use crate::sched::ConcurrencyMode;
use crate::wiscsort::RUN_HEADER_SIZE;
use crate::Error;

fn cfg(algorithm: Algorithm, budget: u64, conc: ConcurrencyMode) -> SortConfig {
    SortConfig {
        algorithm,
        concurrency: conc,
        buffers: BufferConfig {
            index_budget: budget,
            read_buf: 4096,
            write_buf: 5000,
        },
        pools: PoolPlan {
            read_pool: 4,
            random_read_pool: 2,
            write_pool: 2,
            sort_pool: 3,
        },
        ..SortConfig::default()
    }
}

fn sort(
    data: &[u8],
    layout: RecordLayout,
    records: u64,
    c: &SortConfig,
) -> crate::Result<(Vec<u8>, TrafficLedger, SortOutcome)> {
    let dev = Device::emulated(DeviceSpec::brd().with_spin(false))?;
    let input = dev.import("in", data)?;
    let (out, o) = run_sort(c, &input, layout, records, "out")?;
    Ok((out.contents()?, dev.ledger_snapshot(), o))
}

#[test]
fn ems_moves_every_record_four_times() {
    let layout = RecordLayout::fixed(10, 90);
    let data = generate(&GenRequest::fixed(10, 90, 1000, 4)).unwrap();
    for budget in [1 << 20, 30_000] {
        let (out, l, o) = sort(
            &data,
            layout,
            1000,
            &cfg(Algorithm::Ems, budget, ConcurrencyMode::NoOverlap),
        )
        .unwrap();
        assert_eq!(out, reference_sort(&data, &layout).unwrap());
        assert_eq!(l.total_bytes(), 400_000, "budget {budget}");
        assert_eq!(l.read_bytes(), l.write_bytes());
        assert!(o.run_count >= 1);
    }
}

#[test]
fn ems_all_modes_and_klv() {
    let fixed = RecordLayout::fixed(6, 20);
    let fdata = generate(&GenRequest::fixed(6, 20, 3000, 9)).unwrap();
    let klv = RecordLayout::klv(6);
    let kdata = generate(&GenRequest::klv(6, 0, 40, 2000, 9)).unwrap();
    for conc in ConcurrencyMode::ALL {
        let (out, _, o) = sort(&fdata, fixed, 3000, &cfg(Algorithm::Ems, 10_000, conc)).unwrap();
        assert_eq!(out, reference_sort(&fdata, &fixed).unwrap(), "{conc}");
        assert!(o.run_count > 1);
        let (out, l, _) = sort(&kdata, klv, 2000, &cfg(Algorithm::Ems, 9_000, conc)).unwrap();
        assert_eq!(out, reference_sort(&kdata, &klv).unwrap(), "{conc}");
        assert_eq!(l.total_bytes(), 4 * kdata.len() as u64);
    }
}

#[test]
fn samplesort_sorts_in_place() {
    let layout = RecordLayout::fixed(10, 30);
    let data = generate(&GenRequest::fixed(10, 30, 5000, 17)).unwrap();
    for conc in [ConcurrencyMode::NoOverlap, ConcurrencyMode::NoSync] {
        let (out, l, _) = sort(
            &data,
            layout,
            5000,
            &cfg(Algorithm::SampleSort, 1 << 20, conc),
        )
        .unwrap();
        assert!(validate_bytes(&data, &out, &layout).unwrap().ok());
        // the copy alone is two passes; the in-place work adds more
        assert!(
            l.total_bytes() > 4 * data.len() as u64,
            "{}",
            l.total_bytes()
        );
    }
}

#[test]
fn samplesort_handles_duplicates_and_tiny_inputs() {
    let layout = RecordLayout::fixed(1, 3);
    let mut data = Vec::new();
    for i in 0..2000u32 {
        data.extend_from_slice(&[(i % 3) as u8, 1, 2, (i % 251) as u8]);
    }
    let (out, _, _) = sort(
        &data,
        layout,
        2000,
        &cfg(Algorithm::SampleSort, 1, ConcurrencyMode::NoOverlap),
    )
    .unwrap();
    assert!(validate_bytes(&data, &out, &layout).unwrap().ok());
    for n in [0u64, 1, 2, 300] {
        let d = generate(&GenRequest::fixed(1, 3, n, n)).unwrap();
        let (out, _, _) = sort(
            &d,
            layout,
            n,
            &cfg(Algorithm::SampleSort, 1, ConcurrencyMode::NoOverlap),
        )
        .unwrap();
        assert!(validate_bytes(&d, &out, &layout).unwrap().ok(), "n {n}");
    }
}

#[test]
fn samplesort_leaves_sorted_small_ranges_alone() {
    let layout = RecordLayout::fixed(8, 8);
    let data = reference_sort(
        &generate(&GenRequest::fixed(8, 8, 200, 2)).unwrap(),
        &layout,
    )
    .unwrap();
    let (out, l, _) = sort(
        &data,
        layout,
        200,
        &cfg(Algorithm::SampleSort, 1, ConcurrencyMode::NoOverlap),
    )
    .unwrap();
    assert_eq!(out, data);
    assert_eq!(l.phase(Phase::MergeWrite).bytes, 0);
}

#[test]
fn pmsort_reads_full_records_in_the_run_phase() {
    let layout = RecordLayout::fixed(10, 90);
    let data = generate(&GenRequest::fixed(10, 90, 1000, 6)).unwrap();
    let budget = 9_000;
    let (out, l, o) = sort(
        &data,
        layout,
        1000,
        &cfg(Algorithm::PmSort, budget, ConcurrencyMode::NoOverlap),
    )
    .unwrap();
    assert_eq!(out, reference_sort(&data, &layout).unwrap());
    assert_eq!(l.phase(Phase::RunRead).bytes, 100_000);
    let runs = o.run_count as u64;
    assert_eq!(
        l.phase(Phase::RunWrite).bytes,
        15_000 + runs * RUN_HEADER_SIZE as u64
    );

    // the merge is the same as the key/value-separated sorter's
    let (_, w, _) = sort(
        &data,
        layout,
        1000,
        &cfg(Algorithm::WiscSort, budget, ConcurrencyMode::NoOverlap),
    )
    .unwrap();
    for p in [Phase::MergeRead, Phase::RecordRead, Phase::MergeWrite] {
        assert_eq!(l.phase(p).bytes, w.phase(p).bytes, "{p:?}");
    }
    let seq = l.sum_where(|p, k| p == Phase::RunRead && k.pattern == Pattern::Sequential);
    assert_eq!(seq.bytes, 100_000);
}

#[test]
fn pmsort_single_thread_variant() {
    let layout = RecordLayout::fixed(10, 20);
    let data = generate(&GenRequest::fixed(10, 20, 4000, 8)).unwrap();
    let mut c = cfg(Algorithm::PmSort, 1 << 20, ConcurrencyMode::Overlap);
    c.single_thread = true;
    let (out, _, o) = sort(&data, layout, 4000, &c).unwrap();
    assert_eq!(out, reference_sort(&data, &layout).unwrap());
    assert_eq!(o.run_count, 1);
}

#[test]
fn klv_is_rejected_by_fixed_only_baselines() {
    let layout = RecordLayout::klv(4);
    let data = generate(&GenRequest::klv(4, 1, 9, 10, 1)).unwrap();
    for a in [Algorithm::SampleSort, Algorithm::PmSort] {
        let r = sort(
            &data,
            layout,
            10,
            &cfg(a, 1 << 20, ConcurrencyMode::NoOverlap),
        );
        assert!(matches!(r, Err(Error::Unsupported(_))), "{a}");
    }
}

#[test]
fn mode_request_is_ignored_by_ems() {
    let layout = RecordLayout::fixed(4, 4);
    let data = generate(&GenRequest::fixed(4, 4, 100, 1)).unwrap();
    let mut c = cfg(Algorithm::Ems, 1 << 20, ConcurrencyMode::NoOverlap);
    c.mode = ModeRequest::OnePass;
    let (out, _, _) = sort(&data, layout, 100, &c).unwrap();
    assert_eq!(out, reference_sort(&data, &layout).unwrap());
}
