use fqln::corruption::{apply_corruption, CorruptionKind, CorruptionSpec};
use fqln::data::Image;
use fqln::eval::ensemble_predict;
use fqln::eval::Ensemble;
use fqln::fourier::{dft2, dft2_direct, fftshift, idft2, ifftshift, HighPassMask};
use fqln::nn::{softmax, softmax_cross_entropy, ArchSpec, Model};
use fqln::rng::RngStream;
use fqln::train::jsd_consistency;
use fqln::tv::{tv_grad, tv_norm};
use fqln::{Shape4, Tensor};
use proptest::prelude::*;

fn grid() -> impl Strategy<Value = (usize, usize, Vec<f32>)> {
    (1usize..10, 1usize..10).prop_flat_map(|(h, w)| (Just(h), Just(w), prop::collection::vec(-1.0f32..1.0, h * w)))
}

fn simplex_rows(n: usize, k: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0.001f64..1.0, k), n).prop_map(|rows| {
        rows.into_iter()
            .map(|r| {
                let s: f64 = r.iter().sum();
                r.into_iter().map(|v| v / s).collect()
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tv_is_homogeneous_and_shift_invariant((h, w, map) in grid(), alpha in -4.0f32..4.0, shift in -2.0f32..2.0) {
        let base = tv_norm(&map, h, w);
        prop_assert!(base >= 0.0);
        let scaled = tv_norm(&map.iter().map(|x| alpha * x).collect::<Vec<_>>(), h, w);
        let shifted = tv_norm(&map.iter().map(|x| x + shift).collect::<Vec<_>>(), h, w);
        let tol = 1e-5 * (1.0 + base * f64::from(alpha.abs().max(1.0)));
        prop_assert!((scaled - f64::from(alpha.abs()) * base).abs() <= tol);
        prop_assert!((shifted - base).abs() <= tol);
    }

    #[test]
    fn tv_subgradient_entries_are_bounded_integers((h, w, map) in grid()) {
        for g in tv_grad(&map, h, w) {
            prop_assert!(g.fract() == 0.0 && g.abs() <= 4.0);
        }
    }

    #[test]
    fn fftshift_is_inverted_by_ifftshift(h in 1usize..12, w in 1usize..12) {
        let v: Vec<usize> = (0..h * w).collect();
        prop_assert_eq!(ifftshift(&fftshift(&v, h, w), h, w), v.clone());
        prop_assert_eq!(fftshift(&ifftshift(&v, h, w), h, w), v);
    }

    #[test]
    fn fast_transform_matches_direct_sum((h, w, map) in grid()) {
        let x: Vec<f64> = map.iter().map(|&v| f64::from(v)).collect();
        let fast = dft2(&x, h, w);
        let direct = dft2_direct(&x, h, w);
        for (a, b) in fast.data.iter().zip(&direct.data) {
            prop_assert!((a.re - b.re).abs() < 1e-9 && (a.im - b.im).abs() < 1e-9);
        }
        let back = idft2(&fast);
        for (a, b) in back.data.iter().zip(&x) {
            prop_assert!((a.re - b).abs() < 1e-9 && a.im.abs() < 1e-9);
        }
    }

    #[test]
    fn high_pass_shrinks_with_radius(h in 2usize..33, w in 2usize..33, r in 0.0f64..20.0, dr in 0.0f64..5.0) {
        let inner = HighPassMask::new(h, w, r).passed_bins();
        let outer = HighPassMask::new(h, w, r + dr).passed_bins();
        prop_assert!(outer <= inner && inner < h * w);
    }

    #[test]
    fn corruptions_keep_shape_range_and_seed(
        kind in 0usize..8,
        severity in 1u8..=5,
        channels in prop::sample::select(vec![1usize, 3]),
        pixels in prop::collection::vec(0.0f32..=1.0, 3 * 16 * 16),
        seed in any::<u64>(),
    ) {
        let img = Image::new(channels, 16, 16, pixels[..channels * 256].to_vec()).unwrap();
        let spec = CorruptionSpec::new(CorruptionKind::ALL[kind], severity).unwrap();
        let a = apply_corruption(&img, spec, &mut RngStream::new(seed));
        let b = apply_corruption(&img, spec, &mut RngStream::new(seed));
        prop_assert!(a.same_shape(&img));
        prop_assert!(a.in_unit_range());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn cross_entropy_gradient_rows_sum_to_zero(
        logits in prop::collection::vec(-20.0f32..20.0, 12),
        labels in prop::collection::vec(0usize..4, 3),
    ) {
        let t = Tensor::from_vec(Shape4::new(3, 4, 1, 1), logits).unwrap();
        let (loss, grad) = softmax_cross_entropy(&t, &labels).unwrap();
        prop_assert!(loss >= 0.0);
        for n in 0..3 {
            prop_assert!(grad.sample(n).iter().map(|&g| f64::from(g)).sum::<f64>().abs() < 1e-6);
        }
        for row in softmax(&t) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn jsd_is_nonnegative_and_symmetric_in_augmented_views(
        p in simplex_rows(3, 5),
        q in simplex_rows(3, 5),
        r in simplex_rows(3, 5),
    ) {
        let (loss, _) = jsd_consistency(&p, &q, &r).unwrap();
        let (swapped, _) = jsd_consistency(&p, &r, &q).unwrap();
        prop_assert!(loss >= -1e-12);
        prop_assert!((loss - swapped).abs() < 1e-12);
        let (same, _) = jsd_consistency(&p, &p, &p).unwrap();
        prop_assert!(same.abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn ensemble_rows_are_simplices_and_identical_members_collapse(seed_a in any::<u64>(), seed_b in any::<u64>()) {
        let arch = ArchSpec::tinycnn(1, 8, 8, 4);
        let a = Model::new(arch.clone(), seed_a).unwrap();
        let b = Model::new(arch, seed_b).unwrap();
        let mut rng = RngStream::new(seed_a ^ seed_b);
        let x = Tensor::from_vec(
            Shape4::new(5, 1, 8, 8),
            rng.uniform_vec(320).into_iter().map(|v| v as f32).collect(),
        )
        .unwrap();
        for row in ensemble_predict(&Ensemble::new(vec![a.clone(), b]).unwrap(), &x).unwrap() {
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        let single = softmax(&a.infer(&x).unwrap());
        let triple = ensemble_predict(&Ensemble::new(vec![a.clone(), a.clone(), a]).unwrap(), &x).unwrap();
        prop_assert_eq!(single, triple);
    }
}
