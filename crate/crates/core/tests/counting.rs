//! Pair counting at full-dataset scale, without scoring.

mod common;

use hirsute_core::pairs::Scope;
use hirsute_core::scoring::{count_cells, ScoreRequest, ScoringConfig};
use hirsute_core::{Dataset, ImageRecord, PairKind};

/// `images` images over `subjects` subjects, as evenly as possible, with
/// subjects assigned to `demos` tags round-robin.
fn skeleton(images: usize, subjects: usize, demos: usize) -> Dataset {
    let recs = (0..images)
        .map(|i| {
            let s = i % subjects;
            ImageRecord {
                image_id: format!("img{i:06}"),
                subject_id: format!("s{s:05}"),
                demographic: format!("D{}", s % demos),
                embedding_index: i,
                mask_path: None,
                facial_hair_ratio: None,
            }
        })
        .collect();
    Dataset::from_records(recs).unwrap()
}

fn expected(ds: &Dataset) -> (u64, u64) {
    let mut genuine = 0;
    let mut impostor = 0;
    for members in ds.demographics().values() {
        let n = members.len() as u64;
        let g: u64 = ds
            .subjects()
            .values()
            .filter(|m| members.contains(&m[0]))
            .map(|m| common::choose2(m.len() as u64))
            .sum();
        genuine += g;
        impostor += common::choose2(n) - g;
    }
    (genuine, impostor)
}

fn check(ds: &Dataset) -> u64 {
    let cfg = ScoringConfig { workers: 4, ..Default::default() };
    let counts = count_cells(ds, &ScoreRequest::new(Scope::All, vec![]), &Default::default(), &cfg).unwrap();
    let get = |k| counts.iter().find(|c| c.kind == k).unwrap().count;
    let (g, i) = expected(ds);
    assert_eq!(get(PairKind::Genuine), g);
    assert_eq!(get(PairKind::Impostor), i);
    i
}

#[test]
fn counts_at_35k_images_two_tags() {
    check(&skeleton(35_276, 8_835, 2));
}

#[test]
fn counts_at_56k_images() {
    let impostors = check(&skeleton(56_245, 13_000, 1));
    assert!(impostors > 1_580_000_000);
}
