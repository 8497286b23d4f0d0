mod common;

use std::collections::BTreeMap;

use hirsute_core::maskops::{facial_hair_ratio, iou, LabelMask, SHADOW};
use hirsute_core::metrics::{fmr_at, fnmr_at, inequity_ratio, threshold_for_fmr};
use hirsute_core::pairs::{categorize_pair, PairCategory, RatioClass, RatioClassScheme, Scope};
use hirsute_core::scoring::{count_cells, ScoreRequest, ScoreSet, ScoringConfig, SetConfig, TailSide};
use hirsute_core::{Dataset, EmbeddingStore, PairKind};
use proptest::prelude::*;

fn mask(w: usize, h: usize) -> impl Strategy<Value = LabelMask> {
    prop::collection::vec(0u8..=2, w * h).prop_map(move |v| LabelMask::new(w, h, v).unwrap())
}

fn mask_pair() -> impl Strategy<Value = (LabelMask, LabelMask)> {
    (1usize..12, 1usize..12).prop_flat_map(|(w, h)| (mask(w, h), mask(w, h)))
}

fn ratio() -> impl Strategy<Value = f64> {
    prop_oneof![
        Just(0.0),
        Just(0.001),
        Just(0.1),
        Just(0.15),
        0.0f64..=1.0,
        0.0f64..0.002,
    ]
}

proptest! {
    #[test]
    fn iou_symmetric_and_bounded((a, b) in mask_pair(), class in 0u8..=2) {
        let ab = iou(&a, &b, class).unwrap();
        let ba = iou(&b, &a, class).unwrap();
        prop_assert_eq!(ab.iou, ba.iou);
        if let Some(v) = ab.iou {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert_eq!(iou(&a, &a, class).unwrap().iou.unwrap_or(1.0), 1.0);
    }

    #[test]
    fn ratio_ignores_shadow_relabeling(m in (1usize..12, 1usize..12).prop_flat_map(|(w, h)| mask(w, h))) {
        let mut relabeled = m.clone();
        for y in 0..m.height() {
            for x in 0..m.width() {
                match m.get(x, y) {
                    0 => relabeled.set(x, y, SHADOW),
                    SHADOW => relabeled.set(x, y, 0),
                    _ => {}
                }
            }
        }
        prop_assert_eq!(facial_hair_ratio(&m), facial_hair_ratio(&relabeled));
    }

    #[test]
    fn categories_symmetric(ra in ratio(), rb in ratio()) {
        let scheme = RatioClassScheme::default();
        for a in RatioClass::ALL {
            for b in RatioClass::ALL {
                let c = PairCategory::new(a, b);
                prop_assert_eq!(
                    categorize_pair(ra, rb, &c, &scheme).unwrap(),
                    categorize_pair(rb, ra, &c, &scheme).unwrap()
                );
            }
        }
    }

    #[test]
    fn base_categories_partition_pairs(ra in ratio(), rb in ratio()) {
        let scheme = RatioClassScheme::default();
        let base = [RatioClass::Clean, RatioClass::Small, RatioClass::Large1];
        let mut hits = 0;
        for (i, &a) in base.iter().enumerate() {
            for &b in &base[i..] {
                hits += categorize_pair(ra, rb, &PairCategory::new(a, b), &scheme).unwrap() as u32;
            }
        }
        prop_assert_eq!(hits, 1);
    }

    #[test]
    fn large2_pairs_are_large1_pairs(ra in ratio(), rb in ratio()) {
        let scheme = RatioClassScheme::default();
        for other in RatioClass::ALL {
            let l2 = PairCategory::new(RatioClass::Large2, other);
            if categorize_pair(ra, rb, &l2, &scheme).unwrap() {
                let widened = if other == RatioClass::Large2 { RatioClass::Large1 } else { other };
                let l1 = PairCategory::new(RatioClass::Large1, widened);
                prop_assert!(categorize_pair(ra, rb, &l1, &scheme).unwrap());
            }
        }
    }

    #[test]
    fn pair_counts_match_combinatorics(sizes in prop::collection::vec(1u64..6, 2..20), seed in any::<u64>()) {
        let _ = seed;
        let mut recs = Vec::new();
        for (s, &n) in sizes.iter().enumerate() {
            for i in 0..n {
                recs.push(hirsute_core::ImageRecord {
                    image_id: format!("s{s}_{i}"),
                    subject_id: format!("s{s}"),
                    demographic: "X".into(),
                    embedding_index: recs.len(),
                    mask_path: None,
                    facial_hair_ratio: None,
                });
            }
        }
        let ds = Dataset::from_records(recs).unwrap();
        let counts = count_cells(&ds, &ScoreRequest::new(Scope::All, vec![]), &Default::default(), &ScoringConfig { block_size: 3, ..Default::default() }).unwrap();
        let total: u64 = sizes.iter().sum();
        let genuine: u64 = sizes.iter().map(|&n| common::choose2(n)).sum();
        let get = |k| counts.iter().find(|c| c.kind == k).unwrap().count;
        prop_assert_eq!(get(PairKind::Genuine), genuine);
        prop_assert_eq!(get(PairKind::Impostor), common::choose2(total) - genuine);
    }

    #[test]
    fn fmr_non_increasing_and_fnmr_non_decreasing(
        scores in prop::collection::vec(-1.0f64..=1.0, 1..300),
        mut ts in prop::collection::vec(-1.0f64..=1.0, 2..10),
    ) {
        let n = scores.len();
        let imp = ScoreSet::from_scores(SetConfig::new(TailSide::High, n).with_bins(97), scores.iter().copied());
        let gen = ScoreSet::from_scores(SetConfig::new(TailSide::Low, n).with_bins(97), scores.iter().copied());
        ts.sort_by(f64::total_cmp);
        for w in ts.windows(2) {
            prop_assert!(fmr_at(&imp, w[0]).unwrap() >= fmr_at(&imp, w[1]).unwrap());
            prop_assert!(fnmr_at(&gen, w[0]).unwrap() <= fnmr_at(&gen, w[1]).unwrap());
        }
    }

    #[test]
    fn calibration_meets_target_tightly(
        scores in prop::collection::vec(-1.0f64..=1.0, 1..400),
        target in 0.001f64..1.0,
    ) {
        let set = ScoreSet::from_scores(SetConfig::new(TailSide::High, scores.len()), scores.iter().copied());
        let cal = threshold_for_fmr(&set, target).unwrap();
        let fmr = fmr_at(&set, cal.threshold).unwrap().unwrap();
        prop_assert!(fmr <= target);
        prop_assert_eq!(fmr, cal.fmr);
        // any lower observed score would exceed the target
        if let Some(next) = scores.iter().copied().filter(|&s| s < cal.threshold).max_by(f64::total_cmp) {
            prop_assert!(fmr_at(&set, next).unwrap().unwrap() > target);
        }
    }

    #[test]
    fn inequity_at_least_one(fmrs in prop::collection::vec(prop_oneof![Just(0.0), 1e-6f64..1.0], 0..6)) {
        let map: BTreeMap<String, Option<f64>> = fmrs.iter().enumerate().map(|(i, &f)| (format!("g{i}"), Some(f))).collect();
        let r = inequity_ratio(&map);
        let positive = fmrs.iter().filter(|&&f| f > 0.0).count();
        prop_assert_eq!(r.excluded_zero_fmr.len(), fmrs.len() - positive);
        match r.ratio {
            Some(v) => prop_assert!(positive >= 2 && v >= 1.0),
            None => prop_assert!(positive < 2),
        }
    }

    #[test]
    fn merge_equals_concatenation(
        a in prop::collection::vec(-1.0f64..=1.0, 0..200),
        b in prop::collection::vec(-1.0f64..=1.0, 0..200),
        cap in 0usize..40,
        high in any::<bool>(),
    ) {
        let side = if high { TailSide::High } else { TailSide::Low };
        let cfg = SetConfig::new(side, cap).with_bins(50);
        let merged = ScoreSet::from_scores(cfg, a.iter().copied())
            .merge(&ScoreSet::from_scores(cfg, b.iter().copied())).unwrap();
        prop_assert_eq!(merged, ScoreSet::from_scores(cfg, a.iter().chain(&b).copied()));
    }

    #[test]
    fn dataset_files_round_trip(seed in any::<u64>(), subjects in 2usize..12) {
        let (ds, store) = common::synth(seed, subjects, 2, 2);
        let mut manifest = Vec::new();
        ds.write_manifest_to(&mut manifest).unwrap();
        prop_assert_eq!(Dataset::read_manifest(manifest.as_slice()).unwrap(), ds);
        let mut emb = Vec::new();
        store.write_to(&mut emb).unwrap();
        prop_assert_eq!(EmbeddingStore::read_from(emb.as_slice(), Some(16)).unwrap(), store);
    }
}
