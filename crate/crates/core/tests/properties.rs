mod common;

use common::*;
use dsgq::dsg::{
    bn_stats_loss, build_kernel, emphasized_stats, lse_assign, lse_sda_combine, sci_loss_with, sda_loss, NoiseSet, RelaxationConstants, SciNormalization,
};
use dsgq::metrics::{density_index, entropy_allocation, similarity_index_s, wasserstein_1d};
use dsgq::quant::{calibrate_minmax, calibrate_mse, calibrate_percentile, quant_mse};
use dsgq::rng::{stream, Stream};
use dsgq::{Mode, Tensor};
use proptest::prelude::*;

fn config() -> ProptestConfig {
    ProptestConfig { cases: 64, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn slack_loss_with_zero_margins_is_the_statistics_loss(seed in 0u64..1000, b in 2usize..9) {
        let net = two_bn_mlp(seed, 5, [4, 3], 3);
        let x = randn(seed, 0, &[b, 5]);
        let trace = net.forward(&x, Mode::Eval).unwrap().trace;
        let bn = bn_stats_loss(&trace, &net).unwrap();
        let sda = sda_loss(&trace, &net, &RelaxationConstants::zero(2)).unwrap();
        prop_assert!((bn.total - sda.total).abs() <= 1e-12 * bn.total.max(1.0));
    }

    #[test]
    fn slack_loss_never_grows_with_wider_margins(seed in 0u64..1000, scale in 1.0f64..4.0) {
        let net = two_bn_mlp(seed, 5, [4, 3], 3);
        let x = randn(seed, 1, &[6, 5]);
        let trace = net.forward(&x, Mode::Eval).unwrap().trace;
        let narrow = random_margins(2, seed, 0.2);
        let wide = RelaxationConstants {
            delta: narrow.delta.iter().map(|d| d * scale).collect(),
            gamma: narrow.gamma.iter().map(|g| g * scale).collect(),
            epsilon: narrow.epsilon,
        };
        let a = sda_loss(&trace, &net, &narrow).unwrap().total;
        let b = sda_loss(&trace, &net, &wide).unwrap().total;
        prop_assert!(b <= a + 1e-15);
        prop_assert!(b >= 0.0);
    }

    #[test]
    fn enhancement_rows_and_cycles(batch in 1usize..40, layers in 1usize..9) {
        let a = lse_assign(batch, layers).unwrap();
        let n = layers as f64;
        for j in 0..batch {
            prop_assert!((a.row(j).iter().sum::<f64>() - (n + 1.0) / n).abs() < 1e-12);
            prop_assert_eq!(a.assignment[j], j % layers);
        }
        for i in 0..layers {
            let count = a.assignment.iter().filter(|&&k| k == i).count();
            prop_assert!(count == batch / layers || count == batch / layers + 1);
        }
        let ones = Tensor::new(vec![batch, layers], vec![1.0; batch * layers]).unwrap();
        let total = lse_sda_combine(&ones, &a).unwrap();
        prop_assert!((total - batch as f64 * (n + 1.0) / n).abs() < 1e-9);
    }

    #[test]
    fn uniform_focus_gives_batch_statistics(seed in 0u64..1000, b in 2usize..8, focus in 0usize..8) {
        let x = randn(seed, 2, &[b, 3]);
        let s = emphasized_stats(&x, focus % b, 1.0 / b as f64);
        for c in 0..3 {
            let col: Vec<f64> = (0..b).map(|i| x.data()[i * 3 + c]).collect();
            let m = col.iter().sum::<f64>() / b as f64;
            let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / b as f64).sqrt();
            prop_assert!((s.mean[c] - m).abs() < 1e-12);
            prop_assert!((s.std[c] - sd).abs() < 1e-9);
        }
    }

    #[test]
    fn kernel_has_unit_diagonal_and_bounded_entries(seed in 0u64..1000, b in 2usize..10, d in 1usize..12) {
        let x = randn(seed, 3, &[b, d]);
        let k = build_kernel(&x).unwrap();
        let trace: f64 = (0..b).map(|i| k.data()[i * b + i]).sum();
        prop_assert!((trace - b as f64).abs() < 1e-12);
        for i in 0..b {
            for j in 0..b {
                prop_assert!(k.data()[i * b + j].abs() <= 1.0 + 1e-12);
                prop_assert!((k.data()[i * b + j] - k.data()[j * b + i]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn correlation_loss_is_nonnegative(seed in 0u64..1000, b in 2usize..8, d in 2usize..10, features in any::<bool>()) {
        let x = randn(seed, 4, &[b, d]);
        let noise = NoiseSet::sample(b, d, &mut stream(seed, Stream::Noise, 0)).unwrap();
        let norm = if features { SciNormalization::Features } else { SciNormalization::Noise };
        let loss = sci_loss_with(&x, &noise, norm).unwrap();
        prop_assert!(loss.value >= 0.0);
        prop_assert_eq!(loss.value, loss.inner.max(0.0));
        prop_assert!(loss.grad.data().iter().all(|g| g.is_finite()));
    }

    #[test]
    fn noise_checksum_is_stable(seed in 0u64..1000, b in 2usize..8, d in 1usize..8) {
        let a = NoiseSet::sample(b, d, &mut stream(seed, Stream::Noise, 0)).unwrap();
        let again = NoiseSet::sample(b, d, &mut stream(seed, Stream::Noise, 0)).unwrap();
        prop_assert_eq!(a.checksum(), again.checksum());
        prop_assert!(a.vectors().data().iter().all(|&v| (0.0..1.0).contains(&v)));
    }

    #[test]
    fn minmax_covers_the_samples(seed in 0u64..1000, n in 1usize..200, bits in 2u32..9) {
        let v = uniform(seed, 5, n, -3.0, 5.0);
        let qp = calibrate_minmax(&v, bits).unwrap();
        qp.validate().unwrap();
        let step = qp.scale / 2.0 + 1e-12;
        for &x in &v {
            prop_assert!(qp.in_range(x));
            prop_assert!((qp.quantize_dequantize_value(x) - x).abs() <= step);
        }
        prop_assert_eq!(calibrate_percentile(&v, bits, 1.0).unwrap(), qp);
    }

    #[test]
    fn mse_search_never_loses_to_minmax(seed in 0u64..1000, n in 2usize..200, bits in 2u32..9) {
        let v = randn(seed, 6, &[n]).data().to_vec();
        let mm = calibrate_minmax(&v, bits).unwrap();
        let best = calibrate_mse(&v, bits, 50, false).unwrap();
        prop_assert!(quant_mse(&v, &best) <= quant_mse(&v, &mm));
    }

    #[test]
    fn wasserstein_shifts_with_translation(seed in 0u64..1000, shift in -3.0f64..3.0, sigma in 0.2f64..3.0) {
        let v = randn(seed, 7, &[64]).data().to_vec();
        let moved: Vec<f64> = v.iter().map(|x| x + shift).collect();
        let a = wasserstein_1d(&v, 0.0, sigma, 64).unwrap();
        let b = wasserstein_1d(&moved, shift, sigma, 64).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
        prop_assert!(a >= 0.0);
    }

    #[test]
    fn similarity_index_ignores_row_scale(seed in 0u64..1000, b in 2usize..8, d in 1usize..8) {
        let x = randn(seed, 8, &[b, d]);
        let scales = uniform(seed, 9, b, 0.1, 10.0);
        let scaled: Vec<f64> = x.data().chunks(d).zip(&scales).flat_map(|(r, s)| r.iter().map(move |v| v * s)).collect();
        let a = similarity_index_s(&x).unwrap();
        let c = similarity_index_s(&Tensor::new(vec![b, d], scaled).unwrap()).unwrap();
        prop_assert!((a - c).abs() < 1e-10 * (b * b) as f64);
        prop_assert!(a <= (b * b) as f64 + 1e-9);
    }

    #[test]
    fn density_ignores_quarter_turns_and_translation(seed in 0u64..1000, b in 2usize..30, r in 0.05f64..1.0) {
        let p = randn(seed, 10, &[b, 2]);
        let turned: Vec<f64> = p.data().chunks(2).flat_map(|c| [-c[1] + 4.0, c[0] - 2.0]).collect();
        let a = density_index(&p, r).unwrap();
        let t = density_index(&Tensor::new(vec![b, 2], turned).unwrap(), r).unwrap();
        prop_assert!((1..=b).contains(&a));
        // Translation perturbs distances at roundoff level only.
        prop_assert!((a as i64 - t as i64).abs() <= 1);
    }

    #[test]
    fn entropy_peaks_at_uniform(k in 2usize..8, seed in 0u64..1000) {
        let w = uniform(seed, 11, k, 0.01, 1.0);
        let s: f64 = w.iter().sum();
        let p: Vec<f64> = w.iter().map(|v| v / s).collect();
        prop_assert!(entropy_allocation(&p).unwrap() <= (k as f64).ln() + 1e-12);
    }
}
