mod common;

use std::collections::BTreeSet;

use hirsute_core::protocol::{run_protocol, split_datasets, table3_csv, ProtocolConfig, SplitPlan};
use hirsute_core::synthgen::{generate, GenConfig};
use hirsute_core::{Error, Scope};

fn config(workers: usize) -> ProtocolConfig {
    let mut cfg = ProtocolConfig {
        target_fmr: 1e-2,
        plan: SplitPlan { seed: 3, n_splits: 3 },
        ..Default::default()
    };
    cfg.scoring.tail_frac = 0.1;
    cfg.scoring.workers = workers;
    cfg.scoring.block_size = 32;
    cfg
}

#[test]
fn splits_share_no_subjects() {
    let (ds, _) = common::synth(1, 41, 3, 2);
    for i in 0..5 {
        let (val, test) = split_datasets(&ds, 8, i).unwrap();
        let v: BTreeSet<_> = val.subjects().keys().collect();
        assert!(test.subjects().keys().all(|s| !v.contains(s)));
        assert_eq!(val.subjects().len(), 21);
        assert_eq!(val.len() + test.len(), ds.len());
    }
}

#[test]
fn results_independent_of_workers() {
    let (ds, store) = common::synth(2, 300, 2, 1);
    let one = run_protocol(&ds, &store, &Scope::All, &config(1)).unwrap();
    let four = run_protocol(&ds, &store, &Scope::All, &config(4)).unwrap();
    assert_eq!(serde_json::to_string(&one).unwrap(), serde_json::to_string(&four).unwrap());
    assert_eq!(table3_csv(std::slice::from_ref(&one)), table3_csv(&[four]));
    for s in &one.splits {
        for g in &s.groups {
            assert!(g.validation_fmr <= 1e-2);
            assert!(g.count > 0);
        }
    }
    let json = serde_json::to_value(&one).unwrap();
    let g = &json["splits"][0]["groups"][0];
    for key in ["count", "global", "adaptive"] {
        assert!(g.get(key).is_some(), "{key}");
    }
    assert!(g["global"].get("fmr").is_some() && g["global"].get("fnmr").is_some());
    assert!(json["splits"][0]["inequity_global"].get("excluded_zero_fmr").is_some());
}

#[test]
fn empty_group_cannot_be_calibrated() {
    let (ds, store) = generate(&GenConfig {
        n_subjects: 40,
        dim: 8,
        clean_fraction: 1.0,
        seed: 4,
        ..Default::default()
    })
    .unwrap();
    let err = run_protocol(&ds, &store, &Scope::All, &config(1)).unwrap_err();
    match err {
        Error::CannotCalibrate { group, .. } => assert_eq!(group, "cl_vs_fh_L1"),
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn scope_restricts_images() {
    let (ds, store) = common::synth(6, 200, 2, 2);
    let r = run_protocol(&ds, &store, &Scope::Demographic("D0".into()), &config(1)).unwrap();
    assert_eq!(r.scope, "D0");
    assert_eq!(r.splits[0].validation_subjects + r.splits[0].test_subjects, 100);
}
