use std::collections::HashSet;

use amodal_ls::metrics::{iou, miou_full, miou_occ, EvalInstance, EvalReport};
use amodal_ls::BinaryMask;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Pixels = HashSet<(usize, usize)>;

fn pixels(m: &BinaryMask) -> Pixels {
    let (w, h) = m.dims();
    (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| m.get(x, y))
        .collect()
}

/// Set-based recomputation of both metrics.
fn reference(
    preds: &[BinaryMask],
    amodals: &[BinaryMask],
    visibles: &[BinaryMask],
) -> (f64, Option<f64>) {
    let ratio = |a: &Pixels, b: &Pixels| {
        let u = a.union(b).count();
        if u == 0 {
            1.0
        } else {
            a.intersection(b).count() as f64 / u as f64
        }
    };
    let mut full = Vec::new();
    let mut occ = Vec::new();
    for ((p, a), v) in preds.iter().zip(amodals).zip(visibles) {
        let (p, a, v) = (pixels(p), pixels(a), pixels(v));
        full.push(ratio(&p, &a));
        let hidden: Pixels = a.difference(&v).copied().collect();
        if !hidden.is_empty() {
            let guess: Pixels = p.difference(&v).copied().collect();
            occ.push(ratio(&guess, &hidden));
        }
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    (mean(&full), (!occ.is_empty()).then(|| mean(&occ)))
}

fn random_instance(
    rng: &mut ChaCha8Rng,
    w: usize,
    h: usize,
) -> (BinaryMask, BinaryMask, BinaryMask) {
    let amodal = BinaryMask::from_fn(w, h, |_, _| rng.random_bool(0.5));
    let visible = BinaryMask::from_fn(w, h, |x, y| amodal.get(x, y) && rng.random_bool(0.6));
    let pred = BinaryMask::from_fn(w, h, |_, _| rng.random_bool(0.45));
    (pred, amodal, visible)
}

#[test]
fn metrics_match_set_based_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..50 {
        let (mut preds, mut amodals, mut visibles) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..10 {
            let (p, a, v) = random_instance(&mut rng, 12, 9);
            preds.push(p);
            amodals.push(a);
            visibles.push(v);
        }
        let (full, occ) = reference(&preds, &amodals, &visibles);
        assert!((miou_full(&preds, &amodals).unwrap() - full).abs() < 1e-12);
        let got = miou_occ(&preds, &amodals, &visibles).unwrap();
        assert!((got.unwrap() - occ.unwrap()).abs() < 1e-12);
        let report = EvalReport::from_instances(
            "r",
            (0..10).map(|i| EvalInstance {
                seed: i as u64,
                pred: &preds[i],
                amodal: &amodals[i],
                visible: &visibles[i],
                occlusion_rate: 0.0,
            }),
        )
        .unwrap();
        assert!((report.miou_full - full).abs() < 1e-12);
        assert!((report.miou_occ.unwrap() - occ.unwrap()).abs() < 1e-12);
    }
}

#[test]
fn ground_truth_scores_one_and_visible_scores_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (_, amodals, visibles): (Vec<_>, Vec<_>, Vec<_>) = {
        let mut v = (Vec::new(), Vec::new(), Vec::new());
        while v.1.len() < 8 {
            let (p, a, vis) = random_instance(&mut rng, 10, 10);
            if a.and_not(&vis).unwrap().count() > 0 {
                v.0.push(p);
                v.1.push(a);
                v.2.push(vis);
            }
        }
        v
    };
    assert_eq!(miou_occ(&amodals, &amodals, &visibles).unwrap(), Some(1.0));
    assert_eq!(miou_full(&amodals, &amodals).unwrap(), 1.0);
    assert_eq!(miou_occ(&visibles, &amodals, &visibles).unwrap(), Some(0.0));
}

fn mask(w: usize, h: usize) -> impl Strategy<Value = BinaryMask> {
    prop::collection::vec(0u8..=1, w * h).prop_map(move |b| BinaryMask::new(w, h, b).unwrap())
}

proptest! {
    #[test]
    fn iou_is_symmetric_and_reflexive(a in mask(7, 6), b in mask(7, 6)) {
        prop_assert_eq!(iou(&a, &b).unwrap(), iou(&b, &a).unwrap());
        prop_assert_eq!(iou(&a, &a).unwrap(), 1.0);
        let v = iou(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn growing_toward_the_amodal_mask_never_hurts(gt in mask(8, 8), order in Just((0..64).collect::<Vec<usize>>()).prop_shuffle()) {
        let mut pred = BinaryMask::empty(8, 8);
        let mut last = miou_full(std::slice::from_ref(&pred), std::slice::from_ref(&gt)).unwrap();
        for i in order {
            let (x, y) = (i % 8, i / 8);
            if gt.get(x, y) {
                pred.set(x, y, true);
                let now = miou_full(std::slice::from_ref(&pred), std::slice::from_ref(&gt)).unwrap();
                prop_assert!(now >= last);
                last = now;
            }
        }
        prop_assert_eq!(last, 1.0);
    }
}

#[test]
fn no_occlusion_anywhere_gives_the_sentinel() {
    let m = BinaryMask::from_fn(6, 6, |x, _| x < 3);
    assert_eq!(miou_occ(&[m.clone()], &[m.clone()], &[m]).unwrap(), None);
}

#[test]
fn mismatched_inputs_are_errors() {
    let a = BinaryMask::empty(4, 4);
    assert!(miou_full(&[], &[]).is_err());
    assert!(miou_full(&[a.clone()], &[]).is_err());
    assert!(iou(&a, &BinaryMask::empty(4, 5)).is_err());
    assert!(miou_occ(&[a.clone()], &[a.clone()], &[]).is_err());
}
