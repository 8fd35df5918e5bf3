use groundcap::data::BoundingBox;
use groundcap::labels::{assign_labels, iou, Detection};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn bb(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
    BoundingBox::new(x0, y0, x1, y1).unwrap()
}

pub fn random_box(rng: &mut impl Rng) -> BoundingBox {
    // coarse grid so exact ties and touching edges actually occur
    let grid = |rng: &mut dyn rand::RngCore| rng.random_range(0..=20) as f64 / 20.0;
    loop {
        let (a, b, c, d) = (grid(rng), grid(rng), grid(rng), grid(rng));
        if a != b && c != d {
            return bb(a.min(b), c.min(d), a.max(b), c.max(d));
        }
    }
}

/// IoU symmetry, identity and range, plus the assignment rules, on one box
/// pair. Returns a description of the first violated property.
pub fn check_pair(a: &BoundingBox, b: &BoundingBox) -> Result<(), String> {
    let (ab, ba) = (iou(a, b), iou(b, a));
    if ab.to_bits() != ba.to_bits() {
        return Err(format!("iou not symmetric for {a:?} {b:?}: {ab} vs {ba}"));
    }
    if !(0.0..=1.0).contains(&ab) {
        return Err(format!("iou {ab} outside [0, 1]"));
    }
    if iou(a, a) != 1.0 || iou(b, b) != 1.0 {
        return Err(format!("iou of a box with itself is not 1: {a:?} {b:?}"));
    }
    let dets = [
        Detection { bbox: *b, label: 7 },
        Detection { bbox: *a, label: 3 },
    ];
    if assign_labels(&[*a], &dets) != vec![Some(3)] {
        return Err(format!("identical detection not chosen for {a:?}"));
    }
    let expect = if ab > 0.0 { Some(7) } else { None };
    if assign_labels(&[*a], &dets[..1]) != vec![expect] {
        return Err(format!("single detection with iou {ab} gave the wrong label"));
    }
    // a duplicate of the first detection later in the list never wins
    let tied = [
        Detection { bbox: *b, label: 1 },
        Detection { bbox: *b, label: 2 },
    ];
    let expect = if ab > 0.0 { Some(1) } else { None };
    if assign_labels(&[*a], &tied) != vec![expect] {
        return Err("tie not broken by lowest detection index".into());
    }
    Ok(())
}

/// Hand-computed cases.
pub fn check_fixtures() -> Result<(), String> {
    let a = bb(0.0, 0.0, 2.0, 2.0);
    let b = bb(1.0, 1.0, 3.0, 3.0);
    let checks: [(&str, bool); 7] = [
        ("[0,0,2,2] vs [1,1,3,3] is 1/7", (iou(&a, &b) - 1.0 / 7.0).abs() < 1e-15),
        ("identical boxes give 1", iou(&a, &a) == 1.0),
        ("disjoint boxes give 0", iou(&a, &bb(5.0, 5.0, 6.0, 6.0)) == 0.0),
        ("edge-touching boxes give 0", iou(&a, &bb(2.0, 0.0, 4.0, 2.0)) == 0.0),
        (
            "IoUs 1/7 and 1/2 pick the second",
            assign_labels(
                &[a],
                &[Detection { bbox: b, label: 4 }, Detection { bbox: bb(0.0, 0.0, 2.0, 1.0), label: 9 }],
            ) == vec![Some(9)],
        ),
        (
            "no overlap gives UNK",
            assign_labels(&[a], &[Detection { bbox: bb(3.0, 3.0, 4.0, 4.0), label: 1 }]) == vec![None],
        ),
        ("no detections gives UNK", assign_labels(&[a, b], &[]) == vec![None, None]),
    ];
    match checks.iter().find(|(_, ok)| !ok) {
        Some((name, _)) => Err(format!("fixture failed: {name}")),
        None => Ok(()),
    }
}

/// Runs [`check_pair`] on `n` seeded random pairs.
pub fn check_random_pairs(n: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n {
        let (a, b) = (random_box(&mut rng), random_box(&mut rng));
        check_pair(&a, &b)?;
    }
    Ok(())
}
