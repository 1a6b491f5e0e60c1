//! Invariants of the data plumbing, penalties and sampler on synthetic input.

use advloss_autodiff::{Graph, Tensor};
use advloss_dantest::data::{shift_image, Dataset, Variant, IMAGE_LEN};
use advloss_dantest::make_variant;
use advloss_dantest::objective::{interpolate, penalty_from_norms, Pairs};
use advloss_dantest::trainer::{argmax, BatchSampler};
use advloss_dantest::{PenaltyKind, PenaltySpec, Side};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn synthetic(labels: Vec<u8>) -> Dataset {
    let images = labels.iter().enumerate().flat_map(|(i, &l)| (0..IMAGE_LEN).map(move |p| ((i + p + l as usize) % 251) as u8)).collect();
    Dataset::new(images, labels, Variant::Standard).unwrap()
}

fn kinds() -> impl Strategy<Value = PenaltySpec> {
    (
        prop::sample::select(vec![PenaltyKind::Coupled, PenaltyKind::Local, PenaltyKind::R1, PenaltyKind::R2]),
        prop::sample::select(vec![Side::TwoSide, Side::OneSide]),
        0.0f64..100.0,
        0.01f64..100.0,
    )
        .prop_map(|(kind, side, lambda, k)| PenaltySpec { lambda, k, ..PenaltySpec::of(kind, side) })
}

proptest! {
    #[test]
    fn variants_keep_size_and_scale_zeros(extra in prop::collection::vec(1u8..10, 60..200), zeros in 1usize..8, seed in any::<u64>()) {
        let mut labels = extra;
        labels.extend(std::iter::repeat_n(0u8, zeros));
        let standard = synthetic(labels);
        for (variant, factor) in [(Variant::Imbalanced, 5), (Variant::VeryImbalanced, 7)] {
            let d = make_variant(&standard, variant, seed).unwrap();
            prop_assert_eq!(d.len(), standard.len());
            prop_assert_eq!(d.count(0), factor * zeros);
            for c in 1..10 {
                prop_assert!(d.count(c) <= standard.count(c));
            }
        }
    }

    #[test]
    fn shifting_back_restores_the_interior(seed in any::<u64>(), dx in -3i32..=3, dy in -3i32..=3) {
        let d = synthetic(vec![(seed % 10) as u8]);
        let img = d.image(0);
        let back = shift_image(&shift_image(img, dx, dy), -dx, -dy);
        for r in 3..25 {
            for c in 3..25 {
                prop_assert_eq!(back[r * 28 + c], img[r * 28 + c]);
            }
        }
    }

    #[test]
    fn sampler_visits_every_index_once_per_epoch(n in 1usize..300, batch in 1usize..64, seed in any::<u64>()) {
        let mut s = BatchSampler::new(n, ChaCha8Rng::seed_from_u64(seed));
        let mut seen: Vec<usize> = Vec::new();
        while seen.len() < n {
            seen.extend(s.next_batch(batch));
        }
        let mut epoch = seen[..n].to_vec();
        epoch.sort_unstable();
        prop_assert_eq!(epoch, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn penalties_are_non_negative(spec in kinds(), norms in prop::collection::vec(0.0f64..50.0, 1..16)) {
        let mut g = Graph::new();
        let n = g.constant(Tensor::new(&[norms.len(), 1], norms).unwrap());
        let p = penalty_from_norms(&mut g, &spec, n).unwrap();
        prop_assert!(g.value(p).item() >= 0.0);
    }

    #[test]
    fn interpolation_stays_between_endpoints(u in prop::collection::vec(0.0f64..=1.0, 2), a in -5.0f64..5.0, b in -5.0f64..5.0) {
        let pairs = |v| Pairs { images: Tensor::full(&[2, 28, 28, 1], v), labels: Tensor::full(&[2, 10], v) };
        let m = interpolate(&pairs(a), &pairs(b), &u);
        let (lo, hi) = (a.min(b) - 1e-12, a.max(b) + 1e-12);
        prop_assert!(m.images.data().iter().chain(m.labels.data()).all(|v| (lo..=hi).contains(v)));
    }

    #[test]
    fn argmax_picks_the_first_maximum(row in prop::collection::vec(-3i32..3, 1..12)) {
        let row: Vec<f64> = row.into_iter().map(f64::from).collect();
        let i = argmax(&row);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(row[i], max);
        prop_assert!(row[..i].iter().all(|&v| v < max));
    }
}
