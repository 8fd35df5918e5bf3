mod common;

use common::boxes::*;
use groundcap::labels::{assign_labels, iou, Detection};
use proptest::prelude::*;

fn arb_box() -> impl Strategy<Value = groundcap::data::BoundingBox> {
    (0u32..=20, 0u32..=20, 1u32..=20, 1u32..=20).prop_map(|(x, y, w, h)| {
        let (x, y) = (x as f64 / 20.0, y as f64 / 20.0);
        bb(x, y, x + w as f64 / 20.0, y + h as f64 / 20.0)
    })
}

#[test]
fn hand_fixtures() {
    check_fixtures().unwrap();
}

#[test]
fn thousand_seeded_pairs() {
    check_random_pairs(1000, 2024).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn pair_properties(a in arb_box(), b in arb_box()) {
        prop_assert_eq!(check_pair(&a, &b), Ok(()));
    }

    #[test]
    fn detection_order_only_matters_for_ties(
        target in arb_box(),
        dets in prop::collection::vec((arb_box(), 0usize..5), 0..6),
        rot in 0usize..6,
    ) {
        let dets: Vec<Detection> = dets.into_iter().map(|(bbox, label)| Detection { bbox, label }).collect();
        let mut rotated = dets.clone();
        if !rotated.is_empty() {
            let r = rot % rotated.len();
            rotated.rotate_left(r);
        }
        let best = dets.iter().map(|d| iou(&target, &d.bbox)).fold(0.0, f64::max);
        let winners: Vec<usize> = dets
            .iter()
            .filter(|d| best > 0.0 && iou(&target, &d.bbox) == best)
            .map(|d| d.label)
            .collect();
        let a = assign_labels(&[target], &dets)[0];
        let b = assign_labels(&[target], &rotated)[0];
        if winners.is_empty() {
            prop_assert_eq!((a, b), (None, None));
        } else {
            // each order picks its first maximal detection
            prop_assert_eq!(a, Some(winners[0]));
            let first_rot = rotated.iter().find(|d| iou(&target, &d.bbox) == best).unwrap().label;
            prop_assert_eq!(b, Some(first_rot));
            let distinct: std::collections::BTreeSet<_> = winners.iter().collect();
            if distinct.len() == 1 {
                prop_assert_eq!(a, b);
            }
        }
    }
}
