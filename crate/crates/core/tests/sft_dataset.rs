mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::{sft_dataset as dataset, CATEGORY_COUNTS as COUNTS};
use proptest::prelude::*;
use wella_core::scenario::ScenarioCategory;
use wella_core::sft::{
    export_jsonl, export_split, import_jsonl, read_jsonl, stratified_split, SftRecord, SpecialTokenPolicy, SplitRatios,
};

#[test]
fn export_import_is_identity() {
    let (records, _) = dataset();
    assert_eq!(records.len(), 69);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dataset.jsonl");
    export_jsonl(&records, &path).unwrap();
    assert_eq!(import_jsonl(&path).unwrap(), records);
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 69);
    assert_eq!(read_jsonl(text.as_bytes()).unwrap(), records);
}

#[test]
fn every_output_reparses_to_its_answers() {
    let (records, answers) = dataset();
    let policy = SpecialTokenPolicy::default();
    for (r, (tlx, sart)) in records.iter().zip(&answers) {
        assert!(r.output.starts_with("<cog>"));
        let parsed = r.parse_output(&policy).unwrap();
        assert_eq!(parsed.tlx.as_ref(), Some(tlx));
        assert_eq!(parsed.sart.as_ref(), Some(sart));
    }
}

#[test]
fn stratified_counts_and_reproducibility() {
    let (records, _) = dataset();
    let ratios = SplitRatios::default();
    let split = stratified_split(records.clone(), ratios, 5).unwrap();
    assert_eq!((split.train.len(), split.validation.len(), split.test.len()), (55, 7, 7));
    assert!(split.empty_categories.is_empty());

    let count = |part: &[SftRecord]| {
        let mut m = BTreeMap::new();
        for r in part {
            *m.entry(r.meta.category).or_insert(0usize) += 1;
        }
        m
    };
    let (tr, va, te) = (count(&split.train), count(&split.validation), count(&split.test));
    for (category, n) in COUNTS {
        for (got, ratio) in [(tr[&category], ratios.train), (va[&category], ratios.validation), (te[&category], ratios.test)] {
            assert!((got as f64 - n as f64 * ratio).abs() <= 1.0, "{category:?}: {got} vs {}", n as f64 * ratio);
        }
    }
    assert_eq!((tr[&ScenarioCategory::Startup], tr[&ScenarioCategory::Shutdown], tr[&ScenarioCategory::Accident]), (22, 9, 24));

    // partition of the input
    let key = |r: &SftRecord| (r.meta.scenario_id.clone(), r.meta.role, r.meta.category);
    let all: BTreeSet<_> = records.iter().map(key).collect();
    let parts: Vec<_> = split.train.iter().chain(&split.validation).chain(&split.test).map(key).collect();
    assert_eq!(parts.len(), all.len());
    assert_eq!(parts.into_iter().collect::<BTreeSet<_>>(), all);

    assert_eq!(stratified_split(records.clone(), ratios, 5).unwrap(), split);
    let other = stratified_split(records, ratios, 6).unwrap();
    assert_ne!(other.test, split.test);
}

#[test]
fn split_files_on_disk() {
    let (records, _) = dataset();
    let split = stratified_split(records, SplitRatios::new(0.7, 0.15, 0.15).unwrap(), 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    export_split(&split, dir.path()).unwrap();
    for (name, part) in [("train", &split.train), ("validation", &split.validation), ("test", &split.test)] {
        assert_eq!(&import_jsonl(&dir.path().join(format!("{name}.jsonl"))).unwrap(), part);
    }
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("split.json")).unwrap()).unwrap();
    assert_eq!(meta["split_seed"], 1);
}

#[test]
fn missing_category_is_reported() {
    let (records, _) = dataset();
    let only_accident: Vec<SftRecord> =
        records.into_iter().filter(|r| r.meta.category == ScenarioCategory::Accident).collect();
    let split = stratified_split(only_accident, SplitRatios::default(), 0).unwrap();
    assert_eq!(split.empty_categories, [ScenarioCategory::Startup, ScenarioCategory::Shutdown]);
    assert_eq!(split.len(), 30);
}

fn sized(counts: [usize; 3]) -> Vec<SftRecord> {
    let (pool, _) = dataset();
    let mut out = Vec::new();
    for (ci, (category, _)) in COUNTS.into_iter().enumerate() {
        let base: Vec<_> = pool.iter().filter(|r| r.meta.category == category).collect();
        for k in 0..counts[ci] {
            let mut r = base[k % base.len()].clone();
            r.meta.scenario_id = format!("{}-{k}", r.meta.scenario_id);
            out.push(r);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_is_a_stratified_partition(
        counts in proptest::array::uniform3(0usize..40),
        weights in (1u32..20, 0u32..20, 0u32..20),
        seed in any::<u64>(),
    ) {
        let total = (weights.0 + weights.1 + weights.2) as f64;
        let ratios = SplitRatios::new(weights.0 as f64 / total, weights.1 as f64 / total, weights.2 as f64 / total);
        prop_assume!(ratios.is_ok());
        let ratios = ratios.unwrap();
        let records = sized(counts);
        let split = stratified_split(records.clone(), ratios, seed).unwrap();

        let key = |r: &SftRecord| (r.meta.scenario_id.clone(), r.meta.role);
        let mut got: Vec<_> = split.train.iter().chain(&split.validation).chain(&split.test).map(key).collect();
        let mut want: Vec<_> = records.iter().map(key).collect();
        got.sort();
        want.sort();
        prop_assert_eq!(got, want);

        for (ci, (category, _)) in COUNTS.into_iter().enumerate() {
            let n = counts[ci] as f64;
            prop_assert_eq!(split.empty_categories.contains(&category), counts[ci] == 0);
            for (part, ratio) in [(&split.train, ratios.train), (&split.validation, ratios.validation), (&split.test, ratios.test)] {
                let c = part.iter().filter(|r| r.meta.category == category).count() as f64;
                prop_assert!((c - n * ratio).abs() <= 1.0, "{:?}: {} vs {}", category, c, n * ratio);
            }
        }
        prop_assert_eq!(stratified_split(records, ratios, seed).unwrap(), split);
    }
}
