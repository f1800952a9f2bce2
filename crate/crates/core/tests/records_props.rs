use proptest::prelude::*;
use surgnet_core::records::{
    apply_exclusions, parse_cases, segment_cases, CaseRecord, CaseSchema, ExclusionRules, Gender,
};

fn case_strategy() -> impl Strategy<Value = CaseRecord> {
    (
        0u32..1000,
        proptest::option::weighted(0.9, 0u32..3000),
        proptest::option::weighted(0.9, 0u32..10),
        0u32..100,
        proptest::collection::btree_set(
            prop_oneof!["p[0-9]{1,2}", Just("NA".to_string()), Just("".to_string())],
            0..5,
        ),
    )
        .prop_map(|(id, day, stay, age, providers)| CaseRecord {
            case_id: format!("c{id}"),
            day_offset: day,
            end_day_offset: day.zip(stay).map(|(d, s)| (d + s).saturating_sub(2)),
            providers,
            age,
            gender: Gender::Male,
            surgery_type: 2,
            dx_codes: vec![],
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn exclusion_counts_partition_input(cases in proptest::collection::vec(case_strategy(), 0..60)) {
        let rules = ExclusionRules::default();
        let (kept, report) = apply_exclusions(cases.clone(), &rules);
        prop_assert_eq!(report.input, cases.len());
        prop_assert_eq!(report.excluded() + report.retained, report.input);
        prop_assert_eq!(kept.len(), report.retained);
        for c in &kept {
            prop_assert!(c.age >= rules.min_age);
            prop_assert!(c.end_day_offset.unwrap() > c.day_offset.unwrap());
            prop_assert!(!c.providers.is_empty());
            prop_assert!(c.providers.iter().all(|p| !p.is_empty() && p != "NA"));
        }
    }

    #[test]
    fn exclusion_is_idempotent(cases in proptest::collection::vec(case_strategy(), 0..60)) {
        let rules = ExclusionRules::default();
        let (kept, _) = apply_exclusions(cases, &rules);
        let (again, report) = apply_exclusions(kept.clone(), &rules);
        prop_assert_eq!(&again, &kept);
        prop_assert_eq!(report.excluded(), 0);
        prop_assert_eq!(report.provider_ids_dropped, 0);
    }

    #[test]
    fn segments_partition_cases(cases in proptest::collection::vec(case_strategy(), 1..80), window in 1u32..400) {
        let (kept, _) = apply_exclusions(cases, &ExclusionRules::default());
        prop_assume!(!kept.is_empty());
        let segs = segment_cases(&kept, window).unwrap();
        prop_assert_eq!(segs.iter().map(|s| s.cases.len()).sum::<usize>(), kept.len());
        for (k, s) in segs.iter().enumerate() {
            prop_assert_eq!(s.index, k + 1);
            for c in &s.cases {
                let d = c.day_offset.unwrap();
                prop_assert!(s.start_day <= d && d < s.end_day_exclusive);
            }
            if k > 0 {
                prop_assert_eq!(segs[k - 1].end_day_exclusive, s.start_day);
            }
        }
        prop_assert!(segs.last().unwrap().cases.iter().any(|c| c.day_offset.unwrap() + 1 == segs.last().unwrap().end_day_exclusive));
    }

    #[test]
    fn segmentation_ignores_input_order(cases in proptest::collection::vec(case_strategy(), 1..60), window in 1u32..400) {
        let (mut kept, _) = apply_exclusions(cases, &ExclusionRules::default());
        prop_assume!(!kept.is_empty());
        for (i, c) in kept.iter_mut().enumerate() {
            c.case_id = format!("u{i}");
        }
        let mut rev = kept.clone();
        rev.reverse();
        prop_assert_eq!(segment_cases(&kept, window).unwrap(), segment_cases(&rev, window).unwrap());
    }
}

#[test]
fn parse_reports_bad_rows_and_keeps_good_ones() {
    let src = "case_id,day_offset,end_day_offset,age,gender,surgery_type,providers,dx_1\n\
               c1,10,12,45,M,7,p1;p2,996.52\n\
               c2,abc,12,45,F,7,p1,\n\
               c3,11,13,60,F,3,p2;p3,\n";
    let out = parse_cases(src.as_bytes(), &CaseSchema::default()).unwrap();
    let ids: Vec<&str> = out.cases.iter().map(|c| c.case_id.as_str()).collect();
    assert!(ids.contains(&"c1") && ids.contains(&"c3"));
    assert!(!out.diagnostics.is_empty());
    assert!(out.diagnostics.iter().any(|d| d.line == 3));
}
