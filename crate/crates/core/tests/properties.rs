use proptest::prelude::*;

use rlrtr::align::{warp_affine, Affine};
use rlrtr::io::{decode_rlrt, encode_rlrt};
use rlrtr::linalg::{svt_tnn, tnn};
use rlrtr::metrics::{gradient_isotropy, psnr, rain_support_f1};
use rlrtr::nonlocal::{cluster_groups, coverage_counts};
use rlrtr::solver::solve_r;
use rlrtr::tensor::{fold, soft_threshold, unfold, Image, Tensor3, VideoTensor};

fn tensor(max: usize) -> impl Strategy<Value = Tensor3<f64>> {
    (1..max, 1..max, 1..max).prop_flat_map(|(h, w, t)| {
        prop::collection::vec(-2.0f64..2.0, h * w * t)
            .prop_map(move |data| Tensor3::from_vec(h, w, t, data).unwrap())
    })
}

fn image(min: usize, max: usize) -> impl Strategy<Value = Image> {
    (min..max, min..max).prop_flat_map(|(h, w)| {
        prop::collection::vec(0.0f32..1.0, h * w)
            .prop_map(move |data| Image::new(h, w, data).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn unfold_fold_round_trip(x in tensor(7), mode in 1usize..=3) {
        let back = fold(&unfold(&x, mode).unwrap(), mode, x.dims()).unwrap();
        prop_assert_eq!(back.data(), x.data());
    }

    #[test]
    fn soft_threshold_shrinks_toward_zero(x in tensor(6), tau in 0.0f64..1.0) {
        let y = soft_threshold(&x, tau).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            prop_assert!(a.abs() <= b.abs());
            prop_assert!((a - b).abs() <= tau + 1e-15);
            prop_assert!(*a == 0.0 || a.signum() == b.signum());
        }
    }

    #[test]
    fn svt_tnn_never_increases_the_norm(x in tensor(5), tau in 0.0f64..1.0) {
        let y = svt_tnn(&x, tau).unwrap();
        prop_assert!(tnn(&y).unwrap() <= tnn(&x).unwrap() + 1e-9);
    }

    #[test]
    fn solve_r_is_shrinkage_of_the_residual(o in tensor(6), mu in 0.0f64..0.5) {
        let b = o.map(|v| 0.5 * v);
        let r = solve_r(&o, &b, mu).unwrap();
        let expected = soft_threshold(&o.sub(&b).unwrap(), mu).unwrap();
        prop_assert_eq!(r.data(), expected.data());
    }

    #[test]
    // finite values only: the tensor type rejects NaN and infinities
    fn rlrt_round_trip_is_bit_exact(bits in prop::collection::vec(any::<u32>(), 1..200), h in 1usize..4) {
        let t = bits.len() / h;
        prop_assume!(t > 0);
        let data: Vec<f32> = bits[..h * t].iter().map(|&b| f32::from_bits(b & 0xbf7f_ffff)).collect();
        let v = VideoTensor::from_vec(h, 1, t, data).unwrap();
        let back = decode_rlrt(&encode_rlrt(&v), "mem".as_ref()).unwrap();
        prop_assert_eq!(back.dims(), v.dims());
        for (a, b) in back.data().iter().zip(v.data()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn clustering_covers_every_pixel(img in image(8, 20), p in 2usize..5, k in 1usize..4) {
        let groups = cluster_groups(&img, p, k, p, 3).unwrap();
        let counts = coverage_counts(&groups, img.height(), img.width());
        prop_assert!(counts.iter().all(|&c| c >= 1));
        for g in &groups {
            prop_assert_eq!(g.members[0], g.exemplar);
        }
    }

    #[test]
    fn identity_warp_is_bit_exact(img in image(2, 12)) {
        let out = warp_affine(&img, &Affine::IDENTITY).unwrap();
        prop_assert_eq!(out.data(), img.data());
    }

    #[test]
    fn psnr_is_symmetric(x in tensor(5), shift in -1.0f64..1.0) {
        let y = x.map(|v| (v * 1.7 + shift).sin());
        prop_assert_eq!(psnr(&x, &y, 1.0).unwrap(), psnr(&y, &x, 1.0).unwrap());
    }

    #[test]
    fn isotropy_is_transpose_invariant(img in image(2, 16)) {
        let (_, a) = gradient_isotropy(&img).unwrap();
        let (_, b) = gradient_isotropy(&img.transpose()).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn f1_of_a_layer_with_itself_is_one(x in tensor(5), th in 0.01f64..1.0) {
        prop_assert_eq!(rain_support_f1(&x, &x, th).unwrap(), 1.0);
    }
}
