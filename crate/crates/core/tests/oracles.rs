mod common;

use msconv::block::{ablate, msconv_forward, skconv_forward, BlockConfig, FusionKind, KernelCombo, MSConvState};
use msconv::data::{cosine_sim, tar_at_far, VerificationSet};
use msconv::model::{margin_loss, MarginKind, MarginLossConfig};
use msconv::tensor::{conv2d, fc, global_avg_pool, l2_normalize};
use msconv::train::{sgd_step, LRSchedule};
use msconv::{ChannelVec, ConvKernel, Dims4, Matrix};
use rand::Rng;

use common::{naive_conv, naive_msconv, random_map, rng, OpCounter};

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn conv_matches_index_arithmetic() {
    let mut r = rng(10);
    for (dil, stride, h, w) in [(1, 1, 5, 5), (2, 1, 6, 7), (3, 1, 9, 4), (1, 2, 7, 7), (2, 2, 8, 5), (3, 3, 10, 10)] {
        let x = random_map(&mut r, Dims4::new(2, h, w, 3), 1.0);
        let weights = (0..3 * 3 * 3 * 4).map(|_| r.random_range(-1.0..1.0)).collect();
        let k = ConvKernel::new((3, 3, 3, 4), dil, stride, weights).unwrap();
        let got = conv2d(&x, &k).unwrap();
        let want = naive_conv(&x, &k, &mut OpCounter::default());
        assert_eq!(got.dims(), want.dims());
        assert!(max_abs_diff(got.data(), want.data()) < 1e-12, "dilation {dil} stride {stride}");
    }
}

#[test]
fn pooling_and_projection_match_scalar_loops() {
    let mut r = rng(11);
    let x = random_map(&mut r, Dims4::new(3, 4, 5, 6), 2.0);
    let pooled = global_avg_pool(&x);
    for n in 0..3 {
        for c in 0..6 {
            let mut s = 0.0;
            for y in 0..4 {
                for xx in 0..5 {
                    s += x.at(n, y, xx, c);
                }
            }
            assert!((pooled.at(n, c) - s / 20.0).abs() < 1e-14);
        }
    }
    let w = Matrix::from_fn(6, 4, |_, _| r.random_range(-1.0..1.0));
    let b = ChannelVec::from_fn(1, 4, |_, _| r.random_range(-1.0..1.0));
    let y = fc(&pooled, &w, &b).unwrap();
    for n in 0..3 {
        for j in 0..4 {
            let want: f64 = (0..6).map(|i| pooled.at(n, i) * w.at(i, j)).sum::<f64>() + b.at(0, j);
            assert!((y.at(n, j) - want).abs() < 1e-14);
        }
    }
}

#[test]
fn block_matches_scalar_reference() {
    let mut r = rng(12);
    for combo in [KernelCombo::K3K3, KernelCombo::K3K5, KernelCombo::K5K3, KernelCombo::K5K7] {
        for stride in [1, 2] {
            let cfg = BlockConfig {
                stride,
                combo,
                min_width: 5,
                ..BlockConfig::new(4, 6)
            };
            let st = MSConvState::<f64>::init(&cfg, 3, "b").unwrap();
            let x = random_map(&mut r, Dims4::new(2, 9, 8, 4), 1.0);
            let (v, _) = msconv_forward(&x, &st).unwrap();
            let want = naive_msconv(&x, &st, &mut OpCounter::default());
            assert!(max_abs_diff(v.data(), want.data()) < 1e-12, "{} stride {stride}", combo.name());
        }
    }
}

#[test]
fn summed_attention_variant_equals_softmax_reference() {
    // σ(â − b̂)·(U1 − U2) + U2 is the two-way softmax fusion when both pool U1 + U2
    let mut r = rng(13);
    let st = MSConvState::<f64>::init(&BlockConfig::new(3, 5), 4, "b").unwrap();
    let x = random_map(&mut r, Dims4::new(2, 6, 6, 3), 1.0);
    let sk = skconv_forward(&x, &st).unwrap();
    let sum = ablate(FusionKind::MsConvSum, &x, &st).unwrap();
    assert!(max_abs_diff(sk.data(), sum.data()) < 1e-12);
}

fn direct_margin_loss(e: &ChannelVec<f64>, w: &Matrix<f64>, labels: &[usize], cfg: &MarginLossConfig) -> f64 {
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let logits: Vec<f64> = (0..w.rows())
            .map(|j| {
                let cos: f64 = (0..e.c()).map(|t| e.at(i, t) * w.at(j, t)).sum();
                if j == y {
                    let theta = cos.clamp(-1.0 + 1e-7, 1.0 - 1e-7).acos();
                    cfg.scale * ((cfg.m1 * theta + cfg.m2).cos() - cfg.m3)
                } else {
                    cfg.scale * cos
                }
            })
            .collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        total += lse - logits[y];
    }
    total / labels.len() as f64
}

#[test]
fn margin_losses_match_direct_evaluation() {
    let mut r = rng(14);
    let e = l2_normalize(&ChannelVec::from_fn(5, 6, |_, _| r.random_range(-1.0..1.0)));
    let w = Matrix::new(4, 6, l2_normalize(&ChannelVec::from_fn(4, 6, |_, _| r.random_range(-1.0..1.0))).into_data()).unwrap();
    let labels = [0, 3, 1, 1, 2];
    for kind in [MarginKind::Arc, MarginKind::Cos, MarginKind::Combined] {
        let cfg = MarginLossConfig::new(kind, 4);
        let got = margin_loss(&e, &labels, &w, &cfg).unwrap();
        let want = direct_margin_loss(&e, &w, &labels, &cfg);
        assert!((got - want).abs() < 1e-10 * want.abs().max(1.0), "{kind}: {got} vs {want}");
    }
}

#[test]
fn arc_margin_at_zero_angle_two_classes() {
    // e = w0, w1 ⟂ e: target logit 64·cos(0.5), other logit 0
    let e = ChannelVec::new(1, 2, vec![1.0, 0.0]).unwrap();
    let w = Matrix::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let cfg = MarginLossConfig::new(MarginKind::Arc, 2);
    let target = 64.0 * ((1.0f64 - 1e-7).acos() + 0.5).cos();
    let want = (1.0 + (-target).exp()).ln();
    let got = margin_loss(&e, &[0], &w, &cfg).unwrap();
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
}

#[test]
fn class_permutation_leaves_loss_unchanged() {
    let mut r = rng(15);
    let e = l2_normalize(&ChannelVec::from_fn(4, 5, |_, _| r.random_range(-1.0..1.0)));
    let rows = l2_normalize(&ChannelVec::from_fn(3, 5, |_, _| r.random_range(-1.0..1.0)));
    let w = Matrix::new(3, 5, rows.data().to_vec()).unwrap();
    let perm = [2, 0, 1];
    let wp = Matrix::from_fn(3, 5, |j, t| w.at(perm[j], t));
    let labels = [0, 1, 2, 1];
    // class j of the permuted matrix is class perm[j] of the original
    let inverse = |c: usize| perm.iter().position(|&p| p == c).unwrap();
    let lp: Vec<usize> = labels.iter().map(|&c| inverse(c)).collect();
    for kind in [MarginKind::Arc, MarginKind::Cos, MarginKind::Combined, MarginKind::Plain] {
        let cfg = MarginLossConfig::new(kind, 3);
        let a: f64 = margin_loss(&e, &labels, &w, &cfg).unwrap();
        let b = margin_loss(&e, &lp, &wp, &cfg).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn cosine_matches_scalar_loop() {
    let mut r = rng(16);
    let a: Vec<f64> = (0..17).map(|_| r.random_range(-3.0..3.0)).collect();
    let b: Vec<f64> = (0..17).map(|_| r.random_range(-3.0..3.0)).collect();
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for i in 0..17 {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    let got = cosine_sim(&a, &b).unwrap();
    assert!((got - dot / (na.sqrt() * nb.sqrt())).abs() < 1e-15);
}

#[test]
fn schedule_midpoint() {
    let s = LRSchedule::new(0.02, 5e-6, 1000).unwrap();
    let want = 5e-6 + (0.02 - 5e-6) * std::f64::consts::FRAC_PI_4.cos();
    let got = s.lr_at(500).unwrap();
    assert!((got - want).abs() < 1e-17, "{got} vs {want}");
    assert!((got - 0.0141436).abs() < 1e-7);
}

#[test]
fn two_momentum_steps_on_a_quadratic() {
    // f(p) = a·p²/2, so g = a·p; with k = a + λ:
    // p1 = p0·(1 − lr·k), p2 = p0·((1 − lr·k)² − lr·μ·k)
    let (a, lam, mu, lr, p0) = (3.0, 0.01, 0.9, 0.05, 1.5);
    let mut p = [p0];
    let mut v = [0.0];
    for _ in 0..2 {
        let g = [a * p[0]];
        sgd_step(&mut p, &g, &mut v, mu, lam, lr).unwrap();
    }
    let k = a + lam;
    let want = p0 * ((1.0 - lr * k).powi(2) - lr * mu * k);
    assert!((p[0] - want).abs() < 1e-15, "{} vs {want}", p[0]);
}

#[test]
fn tar_when_both_lists_are_equal() {
    let mut r = rng(17);
    for _ in 0..50 {
        let s: Vec<f64> = (0..30).map(|_| (r.random_range(0..10) as f64) / 10.0).collect();
        let vs = VerificationSet::new(s.clone(), s.clone()).unwrap();
        for far in [0.05, 0.2, 0.5] {
            let (tar, t) = tar_at_far(&vs, far).unwrap();
            let fa = s.iter().filter(|&&x| x >= t).count() as f64 / s.len() as f64;
            assert_eq!(tar, fa);
        }
    }
}

#[test]
fn perfect_separation_accepts_every_genuine_pair() {
    let vs = VerificationSet::new(vec![0.6, 0.7, 0.95], vec![-0.2, 0.1, 0.5]).unwrap();
    for far in [1e-5, 0.01, 0.5] {
        assert_eq!(tar_at_far(&vs, far).unwrap().0, 1.0);
    }
    assert_eq!(msconv::data::pair_accuracy(&vs).unwrap(), (1.0, 0.6));
}
