//! Invariants over randomly drawn configurations and images.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use unetsr::loss::{mge_value, mse_value};
use unetsr::metrics::{psnr, ssim, SsimWindow};
use unetsr::model::{layer_table, param_count, Checkpoint, Model, NetConfig};
use unetsr::pipeline::{bicubic_resize, pad_to_multiple, ImageBuf, PairEntry, PairManifest};
use unetsr::train::split_holdout;
use unetsr::Tensor;

fn img(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor {
    Tensor::rand_uniform(shape, lo, hi, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn scale() -> impl Strategy<Value = usize> {
    prop_oneof![Just(2usize), Just(4), Just(8)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn param_count_grows_with_depth(depth in 1usize..8, s in scale(), base in 1usize..16) {
        let shallow = param_count(&NetConfig::new(depth, s, base));
        let deep = param_count(&NetConfig::new(depth + 1, s, base));
        prop_assert!(deep > shallow);
    }

    #[test]
    fn doubling_width_roughly_quadruples_params(depth in 1usize..6, s in scale(), base in 1usize..16) {
        let a = param_count(&NetConfig::new(depth, s, base)) as f64;
        let b = param_count(&NetConfig::new(depth, s, 2 * base)) as f64;
        prop_assert!(b / a > 2.0 && b / a <= 4.0, "ratio {}", b / a);
    }

    #[test]
    fn layer_table_and_built_model_agree(depth in 1usize..5, s in scale(), base in 1usize..6, cap in 1usize..32) {
        let cfg = NetConfig { width_cap: cap, ..NetConfig::new(depth, s, base) };
        let table: usize = layer_table(&cfg).iter().map(|l| l.params).sum();
        let built = Model::build(cfg.clone()).unwrap().param_count();
        prop_assert_eq!(table, param_count(&cfg));
        prop_assert_eq!(built, param_count(&cfg));
    }

    #[test]
    fn mge_is_symmetric_and_shift_invariant(seed in 0u64..10_000, shift in -0.5f64..0.5, h in 3usize..9, w in 3usize..9) {
        let a = img(&[1, 3, h, w], 0.0, 1.0, seed);
        let b = img(&[1, 3, h, w], 0.0, 1.0, seed + 1);
        let ab = mge_value(&a, &b, 1e-12).unwrap();
        let ba = mge_value(&b, &a, 1e-12).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-15);
        let shifted = mge_value(&a.map(|v| v + shift), &b.map(|v| v + shift), 1e-12).unwrap();
        prop_assert!((shifted - ab).abs() <= 1e-12 * ab.max(1.0));
        prop_assert!(ab >= 0.0);
    }

    #[test]
    fn mse_matches_a_direct_mean(seed in 0u64..10_000, n in 1usize..40) {
        let a = img(&[1, 1, 1, n], -1.0, 1.0, seed);
        let b = img(&[1, 1, 1, n], -1.0, 1.0, seed + 1);
        let want = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n as f64;
        prop_assert!((mse_value(&a, &b).unwrap() - want).abs() <= 1e-14);
    }

    #[test]
    fn bicubic_preserves_constants(v in 0.0f64..1.0, h in 1usize..12, w in 1usize..12, oh in 1usize..30, ow in 1usize..30) {
        let out = bicubic_resize(&Tensor::full(&[1, 3, h, w], v), oh, ow).unwrap();
        prop_assert_eq!(out.shape(), &[1, 3, oh, ow]);
        prop_assert!(out.data().iter().all(|x| (x - v).abs() <= 1e-9));
    }

    #[test]
    fn bicubic_same_size_is_identity(seed in 0u64..10_000, h in 1usize..12, w in 1usize..12) {
        let x = img(&[1, 2, h, w], 0.0, 1.0, seed);
        let out = bicubic_resize(&x, h, w).unwrap();
        prop_assert!(out.max_abs_diff(&x) <= 1e-9);
    }

    #[test]
    fn ssim_is_bounded_and_symmetric(seed in 0u64..10_000, h in 11usize..20, w in 11usize..20) {
        let a = img(&[1, 3, h, w], 0.0, 255.0, seed);
        let b = img(&[1, 3, h, w], 0.0, 255.0, seed + 1);
        let win = SsimWindow::default();
        let ab = ssim(&a, &b, &win).unwrap();
        prop_assert!((-1.0..=1.0).contains(&ab));
        prop_assert!((ab - ssim(&b, &a, &win).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn psnr_falls_as_error_grows(seed in 0u64..10_000, amp in 1.0f64..50.0) {
        let y = img(&[1, 3, 8, 8], 60.0, 190.0, seed);
        let noise = img(&[1, 3, 8, 8], -1.0, 1.0, seed + 1);
        let with = |k: f64| Tensor::new(y.shape(), y.data().iter().zip(noise.data()).map(|(a, n)| a + k * n).collect()).unwrap();
        let small = psnr(&y, &with(amp)).unwrap();
        let large = psnr(&y, &with(2.0 * amp)).unwrap();
        prop_assert!((small - large - 20.0 * 2f64.log10()).abs() <= 1e-9);
        prop_assert_eq!(small, psnr(&with(amp), &y).unwrap());
    }

    #[test]
    fn manifest_json_round_trips(names in prop::collection::vec("[a-z0-9_]{1,12}", 0..8), s in prop_oneof![Just(2u32), Just(4), Just(8)]) {
        let entries = names
            .iter()
            .map(|n| PairEntry { lr: format!("x{s}/lr/{n}.png"), hr: format!("hr/{n}.png"), scale: s })
            .collect();
        let m = PairManifest::new(entries, "/data/pairs");
        let back = PairManifest::from_json(&m.to_json().unwrap(), "/data/pairs").unwrap();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn pad_to_multiple_replicates_edges(seed in 0u64..10_000, h in 1usize..14, w in 1usize..14, k in 0u32..4) {
        let m = 1usize << k;
        let x = img(&[1, 2, h, w], 0.0, 1.0, seed);
        let (p, orig) = pad_to_multiple(&x, m).unwrap();
        let (ph, pw) = (p.shape()[2], p.shape()[3]);
        prop_assert_eq!(orig, (h, w));
        prop_assert!(ph % m == 0 && pw % m == 0 && ph >= h && pw >= w && ph < h + m && pw < w + m);
        for c in 0..2 {
            for y in 0..ph {
                for xx in 0..pw {
                    let want = x.data()[(c * h + y.min(h - 1)) * w + xx.min(w - 1)];
                    prop_assert_eq!(p.data()[(c * ph + y) * pw + xx], want);
                }
            }
        }
    }

    #[test]
    fn image_tensor_round_trip(pixels in prop::collection::vec(any::<u8>(), 3 * 4 * 5)) {
        let a = ImageBuf::new(4, 5, pixels).unwrap();
        prop_assert_eq!(ImageBuf::from_tensor(&a.to_tensor()).unwrap(), a);
    }

    #[test]
    fn holdout_partitions_indices(n in 2usize..60, k in 1usize..30, seed in any::<u64>()) {
        prop_assume!(k < n);
        let (train, held) = split_holdout(n, k, seed).unwrap();
        prop_assert_eq!(held.len(), k);
        let mut all: Vec<usize> = train.iter().chain(&held).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(split_holdout(n, k, seed).unwrap(), (train, held));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn checkpoint_bytes_round_trip(depth in 1usize..4, s in scale(), base in 1usize..4, seed in any::<u64>(), epoch in 0u64..500) {
        let model = Model::build(NetConfig { seed, ..NetConfig::new(depth, s, base) }).unwrap();
        let ck = Checkpoint::from_model(&model, None, epoch, 1e-3);
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.epoch, epoch);
        prop_assert_eq!(&back.net_config, &model.config);
        prop_assert!(back.params.bit_eq(&model.params));
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn super_resolve_has_scaled_extents(s in scale(), h in 1usize..12, w in 1usize..12, seed in 0u64..100) {
        let model = Model::build(NetConfig { seed, ..NetConfig::new(1, s, 1) }).unwrap();
        let out = model.super_resolve(&img(&[1, 3, h, w], 0.0, 1.0, seed)).unwrap();
        prop_assert_eq!(out.shape(), &[1, 3, h * s, w * s]);
        prop_assert!(out.data().iter().all(|v| v.is_finite()));
    }
}
