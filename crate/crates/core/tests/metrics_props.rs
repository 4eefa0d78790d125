mod common;

use emocolor::labels::Emotion;
use emocolor::metrics::{accuracy, ccc, ccc_detailed, confusion, mean_angular_error, pcc, PairedSeries};
use proptest::prelude::*;

fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..40).prop_flat_map(|n| (prop::collection::vec(-10.0..10.0f64, n), prop::collection::vec(-10.0..10.0f64, n)))
}

fn s<'a>(t: &'a [f64], p: &'a [f64]) -> PairedSeries<'a> {
    PairedSeries::new(t, p).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn ccc_matches_reference((t, p) in pair()) {
        let c = ccc(s(&t, &p));
        prop_assert!((c - common::reference_ccc(&t, &p)).abs() <= 1e-10);
        prop_assert!((-1.0..=1.0).contains(&c));
    }

    #[test]
    fn ccc_symmetric((t, p) in pair()) {
        prop_assert!((ccc(s(&t, &p)) - ccc(s(&p, &t))).abs() <= 1e-12);
    }

    #[test]
    fn ccc_common_shift((t, p) in pair(), k in -50.0..50.0f64) {
        let ts: Vec<f64> = t.iter().map(|v| v + k).collect();
        let ps: Vec<f64> = p.iter().map(|v| v + k).collect();
        prop_assert!((ccc(s(&t, &p)) - ccc(s(&ts, &ps))).abs() <= 1e-9);
    }

    #[test]
    fn ccc_bounded_by_positive_pcc((t, p) in pair()) {
        if let Ok(r) = pcc(s(&t, &p)) {
            if r > 0.0 {
                prop_assert!(ccc(s(&t, &p)).abs() <= r.abs() + 1e-12);
            }
        }
    }

    #[test]
    fn shifting_prediction_lowers_ccc((t, p) in pair(), k in 0.01..5.0f64) {
        let d = ccc_detailed(s(&t, &p));
        let base = d.value;
        // positive covariance, and the shift moves the prediction mean away from the truth mean
        let mt = t.iter().sum::<f64>() / t.len() as f64;
        let mp = p.iter().sum::<f64>() / p.len() as f64;
        let dir = if mp >= mt { 1.0 } else { -1.0 };
        let shifted: Vec<f64> = p.iter().map(|v| v + dir * k).collect();
        if base > 1e-9 {
            prop_assert!(ccc(s(&t, &shifted)) < base);
        }
    }

    #[test]
    fn pcc_invariant_under_increasing_affine((t, p) in pair(), a in 0.1..10.0f64, b in -5.0..5.0f64, c in 0.1..10.0f64, d in -5.0..5.0f64) {
        if let Ok(r) = pcc(s(&t, &p)) {
            let t2: Vec<f64> = t.iter().map(|v| a * v + b).collect();
            let p2: Vec<f64> = p.iter().map(|v| c * v + d).collect();
            prop_assert!((r - pcc(s(&t2, &p2)).unwrap()).abs() <= 1e-9);
        }
    }

    #[test]
    fn ccc_permutation_invariant((t, p) in pair(), seed in any::<u64>()) {
        let n = t.len();
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            idx.swap(i, (seed.rotate_left(i as u32) % (i as u64 + 1)) as usize);
        }
        let tp: Vec<f64> = idx.iter().map(|&i| t[i]).collect();
        let pp: Vec<f64> = idx.iter().map(|&i| p[i]).collect();
        prop_assert!((ccc(s(&t, &p)) - ccc(s(&tp, &pp))).abs() <= 1e-12);
    }

    #[test]
    fn mae_rotation_invariant(v in prop::collection::vec((0.0..360.0f64, 0.0..360.0f64), 1..30), delta in -720.0..720.0f64) {
        let (t, p): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
        let tr: Vec<f64> = t.iter().map(|x| x + delta).collect();
        let pr: Vec<f64> = p.iter().map(|x| x + delta).collect();
        prop_assert!((mean_angular_error(&t, &p).unwrap() - mean_angular_error(&tr, &pr).unwrap()).abs() <= 1e-9);
    }

    #[test]
    fn accuracy_is_confusion_trace(v in prop::collection::vec((0usize..6, 0usize..6), 1..60)) {
        let t: Vec<Emotion> = v.iter().map(|(a, _)| Emotion::ALL[*a]).collect();
        let p: Vec<Emotion> = v.iter().map(|(_, b)| Emotion::ALL[*b]).collect();
        let m = confusion(&t, &p).unwrap();
        prop_assert_eq!(m.total(), v.len());
        prop_assert_eq!(accuracy(&t, &p).unwrap(), m.trace() as f64 / m.total() as f64);
    }
}
