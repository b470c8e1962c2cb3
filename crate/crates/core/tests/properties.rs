use flexsimd::corpus;
use flexsimd::experiment::{run_matrix, MatrixConfig};
use flexsimd::metrics::{compute_vlr_runs, distribution, DynamicCounts};
use flexsimd::report::{report_string, ReportFormat};
use flexsimd::tol::Mode;
use proptest::prelude::*;

fn counts() -> impl Strategy<Value = DynamicCounts> {
    (0u64..1000, 0u64..1000, 1u64..=16, 0u64..1000, 0u64..1000).prop_map(|(scalar, vector, lanes, perm, unvec)| {
        DynamicCounts {
            kernel: "k".into(),
            scalar_fp: scalar,
            vector,
            vector_lanes: vector * lanes,
            permutation: perm,
            unvectorizable: unvec,
            ..Default::default()
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn random_kernels_match_the_oracle_in_every_mode(seed in any::<u64>()) {
        let cfg = MatrixConfig::new(vec![corpus::random(seed)], vec![128, 256, 512], Mode::ALL.to_vec());
        let report = run_matrix(&cfg).unwrap();
        prop_assert!(report.mismatches.is_empty(), "{:?}", report.mismatches);
        for e in &report.entries {
            let r = &e.record;
            if let Some(c) = r.coverage {
                prop_assert!((0.0..=1.0).contains(&c));
            }
            prop_assert_eq!(r.dyn_fp_total, e.counts.vector_lanes + e.counts.scalar_fp + e.counts.unvectorizable);
        }
    }
}

proptest! {
    #[test]
    fn shares_sum_to_one(c in counts()) {
        if let Some(d) = distribution(&c) {
            prop_assert!((d.scalar + d.vector + d.pack_unpack + d.unvectorizable - 1.0).abs() < 1e-9);
        } else {
            prop_assert_eq!(c.scalar_fp + c.vector + c.permutation + c.unvectorizable, 0);
        }
    }

    #[test]
    fn coverage_stays_in_unit_interval(c in counts()) {
        let scalar = DynamicCounts { kernel: "k".into(), ..Default::default() };
        if let Some(cov) = flexsimd::metrics::compute_coverage(&scalar, &c).unwrap() {
            prop_assert!((0.0..=1.0).contains(&cov));
        }
    }

    #[test]
    fn equal_masks_form_one_run(k in 1u8..=16, n in 1usize..100) {
        prop_assert_eq!(compute_vlr_runs(&vec![k; n]), Some(n as f64));
    }

    #[test]
    fn vlr_average_is_length_over_changes(masks in proptest::collection::vec(1u8..=3, 1..100)) {
        let changes = masks.windows(2).filter(|w| w[0] != w[1]).count();
        prop_assert_eq!(compute_vlr_runs(&masks), Some(masks.len() as f64 / (changes + 1) as f64));
    }
}

#[test]
fn report_cardinality_and_determinism() {
    let kernels = vec![corpus::fig7(), corpus::scatter(4)];
    let modes = vec![Mode::Baseline, Mode::Vlv, Mode::Swr, Mode::VlvSwr];
    let cfg = MatrixConfig::new(kernels, vec![128, 256, 512], modes);
    let a = run_matrix(&cfg).unwrap();
    let b = run_matrix(&cfg).unwrap();
    assert_eq!(a.entries.len(), 24);
    let csv = report_string(&a.records(), ReportFormat::Csv).unwrap();
    assert_eq!(csv.lines().count(), 25);
    assert_eq!(csv, report_string(&b.records(), ReportFormat::Csv).unwrap());
    assert_eq!(
        report_string(&a.records(), ReportFormat::Obj).unwrap(),
        report_string(&b.records(), ReportFormat::Obj).unwrap()
    );
}

#[test]
fn empty_vector_trace_reports_null() {
    let cfg = MatrixConfig::new(vec![corpus::fig7()], vec![128], vec![Mode::Scalar]);
    let records = run_matrix(&cfg).unwrap().records();
    let obj: serde_json::Value = serde_json::from_str(&report_string(&records, ReportFormat::Obj).unwrap()).unwrap();
    assert!(obj[0]["perm_per_vec"].is_null());
    assert!(obj[0]["vlr_run_avg"].is_null());
}

#[test]
fn fig7_coverage_is_full_with_vlv_and_two_thirds_baseline() {
    let cfg = MatrixConfig::new(vec![corpus::fig7()], vec![128], vec![Mode::Baseline, Mode::Vlv]);
    let r = run_matrix(&cfg).unwrap();
    assert_eq!(r.entries[0].record.coverage, Some(4.0 / 6.0));
    assert_eq!(r.entries[1].record.coverage, Some(1.0));
}

#[test]
fn trip_limited_saxpy_needs_variable_length_packs() {
    let cfg = MatrixConfig::new(vec![corpus::saxpy("f64", 4)], vec![512], vec![Mode::Baseline, Mode::Vlv]);
    let r = run_matrix(&cfg).unwrap();
    assert_eq!(r.entries[0].record.coverage, Some(0.0));
    assert_eq!(r.entries[1].record.coverage, Some(1.0));
    assert_eq!(r.entries[1].counts.mask_runs.iter().map(|m| m.0).collect::<Vec<_>>(), vec![4]);
}

#[test]
fn may_alias_kernel_recreates_without_speculation() {
    let cfg = MatrixConfig::new(vec![corpus::alias()], vec![256], vec![Mode::Vlv]);
    let r = run_matrix(&cfg).unwrap();
    assert!(r.mismatches.is_empty());
    let s = &r.entries[0].stats;
    assert_eq!(s.spec_failures, 16);
    assert_eq!(s.recreations, 1);
}

#[test]
fn biased_branch_kernel_recreates_as_multi_exit() {
    let mut cfg = MatrixConfig::new(vec![corpus::branchy()], vec![128], vec![Mode::Vlv]);
    cfg.dumps = true;
    let r = run_matrix(&cfg).unwrap();
    let e = &r.entries[0];
    assert_eq!(e.stats.recreations, 1);
    let first = e.dumps.iter().find(|d| d.host_asm.contains("ASSERT")).unwrap();
    let rebuilt = e.dumps.iter().rev().find(|d| d.entry_pc == first.entry_pc).unwrap();
    assert!(rebuilt.id > first.id);
    assert!(!rebuilt.host_asm.contains("ASSERT"));
    assert!(rebuilt.host_asm.contains("EXIT"));
}
