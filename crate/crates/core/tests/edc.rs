mod oracle;

use std::collections::BTreeMap;

use exfiqa::eval::{
    edc_curve, edc_pauc, fmr_threshold, tar_at_far, Comparison, ComparisonSet, Label,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TARGETS: [f64; 5] = [0.01, 0.1, 0.25, 0.5, 0.9];

fn set_from_seed(seed: u64) -> ComparisonSet {
    oracle::random_set(&mut ChaCha8Rng::seed_from_u64(seed), 8, 16)
}

proptest! {
    #[test]
    fn matches_brute_force(seed in any::<u64>(), t in 0usize..5, max_discard in prop::sample::select(vec![0.1, 0.3, 0.5, 1.0])) {
        let set = set_from_seed(seed);
        let target = TARGETS[t];
        prop_assert_eq!(fmr_threshold(&set, target).unwrap(), oracle::threshold(&set, target));
        prop_assert_eq!(tar_at_far(&set, target).unwrap(), oracle::tar(&set, target));
        let curve = edc_curve(&set, target, max_discard).unwrap();
        let (points, truncated) = oracle::edc(&set, target, max_discard);
        let got: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.discard, p.fnmr)).collect();
        prop_assert_eq!(&got, &points);
        prop_assert_eq!(curve.truncated, truncated);
        for sub in [false, true] {
            let a = edc_pauc(&curve, max_discard, sub).unwrap();
            let b = oracle::pauc(&points, max_discard, sub);
            prop_assert!((a - b).abs() <= 1e-12, "{} vs {}", a, b);
        }
    }

    #[test]
    fn invariant_under_monotone_quality_transform(seed in any::<u64>(), scale in 0.1f64..10.0, shift in -5.0f64..5.0) {
        let set = set_from_seed(seed);
        let moved: BTreeMap<String, f64> = set
            .qualities()
            .iter()
            .map(|(k, &q)| (k.clone(), (scale * q + shift).exp()))
            .collect();
        let other = set.with_qualities(moved).unwrap();
        let a = edc_curve(&set, 0.25, 0.5).unwrap();
        let b = edc_curve(&other, 0.25, 0.5).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn fnmr_values_are_rates(seed in any::<u64>()) {
        let set = set_from_seed(seed);
        let curve = edc_curve(&set, 0.1, 1.0).unwrap();
        prop_assert!(curve.points.iter().all(|p| (0.0..=1.0).contains(&p.fnmr)));
        prop_assert!(curve.points.windows(2).all(|w| w[0].discard < w[1].discard));
        let pauc = edc_pauc(&curve, 1.0, false).unwrap();
        prop_assert!((0.0..=1.0).contains(&pauc));
    }
}

#[test]
fn equal_qualities_give_a_single_point() {
    let q: BTreeMap<String, f64> = ["a", "b", "c"]
        .iter()
        .map(|s| (s.to_string(), 0.4))
        .collect();
    let comps = vec![
        Comparison {
            a: "a".into(),
            b: "b".into(),
            similarity: 0.3,
            label: Label::Genuine,
        },
        Comparison {
            a: "a".into(),
            b: "c".into(),
            similarity: 0.6,
            label: Label::Impostor,
        },
    ];
    let set = ComparisonSet::new(q, comps).unwrap();
    let curve = edc_curve(&set, 0.5, 0.3).unwrap();
    assert_eq!(curve.points.len(), 1);
    assert_eq!(
        edc_pauc(&curve, 0.3, false).unwrap(),
        0.3 * curve.initial_fnmr()
    );
}

#[test]
fn perfect_quality_drives_fnmr_to_zero() {
    // Genuine pairs with low similarity belong to the lowest-quality samples.
    let mut q = BTreeMap::new();
    let mut comps = Vec::new();
    for i in 0..10 {
        q.insert(format!("g{i}"), i as f64);
        q.insert(format!("h{i}"), i as f64);
        comps.push(Comparison {
            a: format!("g{i}"),
            b: format!("h{i}"),
            similarity: 0.1 * i as f64,
            label: Label::Genuine,
        });
        comps.push(Comparison {
            a: format!("g{i}"),
            b: format!("h{}", (i + 1) % 10),
            similarity: 0.05 * i as f64,
            label: Label::Impostor,
        });
    }
    let set = ComparisonSet::new(q, comps).unwrap();
    let curve = edc_curve(&set, 0.1, 1.0).unwrap();
    let fnmr: Vec<f64> = curve.points.iter().map(|p| p.fnmr).collect();
    assert!(fnmr.windows(2).all(|w| w[1] <= w[0]));
    assert!(fnmr[0] > 0.0);
    assert_eq!(*fnmr.last().unwrap(), 0.0);
}
