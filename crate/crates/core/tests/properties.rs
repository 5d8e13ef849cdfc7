mod common;

use candle_core::{DType, Device, Tensor};
use proptest::prelude::*;

use panogan::dataio::image::{normalize, quantize};
use panogan::dataio::{rot90_ccw, ImageTensor};
use panogan::discriminator::{alignment_scores, PyramidFeatures};
use panogan::metrics::{inception_from_predictions, kl_divergence, psnr, ssim, InceptionMode};
use panogan::{PanoGan, Precision};

fn image_from(c: usize, h: usize, w: usize, values: &[f32]) -> ImageTensor {
    ImageTensor::new(c, h, w, values.to_vec()).unwrap()
}

fn image_strategy(c: usize, h: usize, w: usize) -> impl Strategy<Value = ImageTensor> {
    prop::collection::vec(-1.0f32..=1.0, c * h * w).prop_map(move |v| image_from(c, h, w, &v))
}

fn distribution(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, k).prop_filter_map("all-zero weights", |w| {
        let s: f64 = w.iter().sum();
        (s > 1e-6).then(|| w.iter().map(|x| x / s).collect())
    })
}

type Level = ((usize, usize, usize), Vec<f32>, Vec<f32>);

/// Two same-shaped feature maps with batch size 2.
fn level_pair() -> impl Strategy<Value = Level> {
    (1usize..4, 1usize..5, 1usize..5).prop_flat_map(|(c, h, w)| {
        let n = 2 * c * h * w;
        (
            Just((c, h, w)),
            prop::collection::vec(-3.0f32..3.0, n),
            prop::collection::vec(-3.0f32..3.0, n),
        )
    })
}

fn flat(t: &Tensor) -> Vec<f64> {
    t.flatten_all().unwrap().to_dtype(DType::F64).unwrap().to_vec1().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn ssim_is_symmetric(a in image_strategy(3, 12, 20), b in image_strategy(3, 12, 20)) {
        prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() <= 1e-7);
    }

    #[test]
    fn psnr_falls_as_noise_grows(base in image_strategy(3, 8, 16), noise in prop::collection::vec(-1.0f32..=1.0, 3 * 8 * 16)) {
        prop_assume!(noise.iter().any(|n| n.abs() > 1e-3));
        let scores: Vec<f64> = [0.01f32, 0.02, 0.04, 0.08, 0.16]
            .iter()
            .map(|amp| {
                let noisy: Vec<f32> = base.data().iter().zip(&noise).map(|(x, n)| x + amp * n).collect();
                psnr(&base, &image_from(3, 8, 16, &noisy)).unwrap()
            })
            .collect();
        prop_assert!(scores.windows(2).all(|w| w[1] < w[0]), "{:?}", scores);
    }

    #[test]
    fn kl_is_never_negative(p in distribution(6), q in distribution(6)) {
        prop_assert!(kl_divergence(&p, &q) >= 0.0);
        prop_assert!(kl_divergence(&p, &p).abs() <= 1e-12);
    }

    #[test]
    fn inception_score_lies_between_one_and_class_count(preds in prop::collection::vec(distribution(5), 1..12)) {
        for mode in [InceptionMode::All, InceptionMode::Top1, InceptionMode::Top5] {
            let is = inception_from_predictions(&preds, mode).unwrap();
            prop_assert!((1.0 - 1e-9..=5.0 + 1e-9).contains(&is), "{:?} {}", mode, is);
        }
    }

    #[test]
    fn four_quarter_turns_are_the_identity(img in (1usize..10).prop_flat_map(|n| image_strategy(3, n, n))) {
        let mut r = img.clone();
        for _ in 0..4 {
            r = rot90_ccw(&r).unwrap();
        }
        prop_assert_eq!(r, img);
    }

    #[test]
    fn normalized_bytes_quantize_back(v in any::<u8>()) {
        prop_assert_eq!(quantize(normalize(v)), v);
        prop_assert!((-1.0..=1.0).contains(&normalize(v)));
    }

    #[test]
    fn alignment_commutes(levels in prop::collection::vec(level_pair(), 1..4)) {
        let dev = Device::Cpu;
        let mut a = Vec::new();
        let mut b = Vec::new();
        for ((c, h, w), x, y) in levels {
            a.push(Tensor::from_vec(x, (2, c, h, w), &dev).unwrap());
            b.push(Tensor::from_vec(y, (2, c, h, w), &dev).unwrap());
        }
        let (a, b) = (PyramidFeatures { levels: a }, PyramidFeatures { levels: b });
        for (x, y) in alignment_scores(&a, &b).unwrap().iter().zip(alignment_scores(&b, &a).unwrap()) {
            prop_assert_eq!(flat(x), flat(&y));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    // Instance normalization keeps samples independent, so batch order is irrelevant.
    #[test]
    fn generator_commutes_with_batch_permutation(seed in 0u64..1000, order in Just(vec![0usize, 1, 2]).prop_shuffle()) {
        let config = common::toy_config(16, 4, 3, 4, Precision::F32);
        let model = PanoGan::new(config.model.clone(), seed, &Device::Cpu).unwrap();
        let batch = common::batch(&config, &common::pairs(3, 16, seed));
        let idx = Tensor::new(order.iter().map(|&i| i as u32).collect::<Vec<_>>(), &Device::Cpu).unwrap();
        let permuted_in = batch.input.index_select(&idx, 0).unwrap();
        let out = model.infer(&batch.input, 2).unwrap().raw.index_select(&idx, 0).unwrap();
        let out_perm = model.infer(&permuted_in, 2).unwrap().raw;
        let max = flat(&out).iter().zip(flat(&out_perm)).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        prop_assert!(max <= 1e-5, "max diff {}", max);
    }
}
