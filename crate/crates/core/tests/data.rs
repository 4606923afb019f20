mod common;

use msconv::data::{
    all_pairs, cosine_sim, gen_heldout, gen_synthetic, load_dataset, make_pairs, pair_accuracy, save_dataset,
    score_pairs, tar_at_far, Pair, SyntheticSpec, VerificationSet,
};
use msconv::ChannelVec;

use common::{brute_pair_accuracy, brute_tar_at_far, random_scores, rng};
use rand::Rng;

fn small(noise: f64, max_shift: usize) -> SyntheticSpec {
    SyntheticSpec {
        identities: 4,
        samples_per_identity: 6,
        height: 8,
        width: 8,
        channels: 2,
        noise,
        max_shift,
        seed: 5,
    }
}

fn sample(set: &msconv::data::LabeledSet<f64>, i: usize) -> &[f64] {
    let n = set.images.dims().len() / set.len();
    &set.images.data()[i * n..(i + 1) * n]
}

#[test]
fn pixels_stay_in_range_over_many_samples() {
    let spec = SyntheticSpec {
        identities: 20,
        samples_per_identity: 500,
        height: 4,
        width: 4,
        channels: 1,
        noise: 0.5,
        max_shift: 1,
        seed: 9,
    };
    let set = gen_synthetic::<f64>(&spec).unwrap();
    assert_eq!(set.len(), 10_000);
    assert!(set.images.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    assert!(set.images.data().iter().any(|&v| v == 1.0 || v == -1.0));
}

#[test]
fn same_seed_same_data() {
    let a = gen_synthetic::<f64>(&small(0.2, 2)).unwrap();
    let b = gen_synthetic::<f64>(&small(0.2, 2)).unwrap();
    assert_eq!(a, b);
    let c = gen_synthetic::<f64>(&SyntheticSpec { seed: 6, ..small(0.2, 2) }).unwrap();
    assert_ne!(a.images, c.images);
    assert_eq!(a.labels, c.labels);
}

#[test]
fn labels_are_identity_major() {
    let set = gen_synthetic::<f64>(&small(0.2, 2)).unwrap();
    let want: Vec<usize> = (0..4).flat_map(|id| std::iter::repeat_n(id, 6)).collect();
    assert_eq!(set.labels, want);
    assert_eq!(set.classes(), 4);
}

#[test]
fn noiseless_unshifted_samples_repeat_the_base_pattern() {
    let set = gen_synthetic::<f64>(&small(0.0, 0)).unwrap();
    let held = gen_heldout::<f64>(&small(0.0, 0), 2).unwrap();
    for id in 0..4 {
        let base = sample(&set, id * 6);
        assert!(base.iter().all(|v| v.abs() <= 0.8));
        for k in 0..6 {
            assert_eq!(sample(&set, id * 6 + k), base);
        }
        assert_eq!(sample(&held, id * 2), base);
    }
    assert_ne!(sample(&set, 0), sample(&set, 6));
}

#[test]
fn noiseless_samples_are_bounded_circular_shifts() {
    let base_set = gen_synthetic::<f64>(&small(0.0, 0)).unwrap();
    let set = gen_synthetic::<f64>(&small(0.0, 2)).unwrap();
    let (h, w, c) = (8i64, 8i64, 2usize);
    let rolled = |base: &[f64], dy: i64, dx: i64| -> Vec<f64> {
        let mut out = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let sy = (y + dy).rem_euclid(h) as usize;
                let sx = (x + dx).rem_euclid(w) as usize;
                out.extend_from_slice(&base[(sy * w as usize + sx) * c..][..c]);
            }
        }
        out
    };
    for i in 0..set.len() {
        let base = sample(&base_set, i);
        let hit = (-2..=2).any(|dy| (-2..=2).any(|dx| rolled(base, dy, dx) == sample(&set, i)));
        assert!(hit, "sample {i} is not a shift of its base pattern");
    }
}

#[test]
fn noise_has_the_requested_spread() {
    let spec = SyntheticSpec {
        identities: 2,
        samples_per_identity: 40,
        height: 16,
        width: 16,
        channels: 3,
        noise: 0.05,
        max_shift: 0,
        seed: 2,
    };
    let clean = gen_synthetic::<f64>(&SyntheticSpec { noise: 0.0, ..spec }).unwrap();
    let noisy = gen_synthetic::<f64>(&spec).unwrap();
    let r: Vec<f64> = noisy.images.data().iter().zip(clean.images.data()).map(|(a, b)| a - b).collect();
    let mean = r.iter().sum::<f64>() / r.len() as f64;
    let sd = (r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / r.len() as f64).sqrt();
    assert!(mean.abs() < 0.005, "mean {mean}");
    assert!((sd - 0.05).abs() < 0.005, "sd {sd}");
}

#[test]
fn heldout_stream_is_independent() {
    let train = gen_synthetic::<f64>(&small(0.2, 2)).unwrap();
    let held = gen_heldout::<f64>(&small(0.2, 2), 6).unwrap();
    assert_eq!(train.labels, held.labels);
    assert_ne!(train.images, held.images);
    assert!(gen_heldout::<f64>(&small(0.2, 2), 0).is_err());
}

#[test]
fn invalid_specs_are_rejected() {
    for spec in [
        SyntheticSpec { identities: 0, ..small(0.2, 2) },
        SyntheticSpec { height: 0, ..small(0.2, 2) },
        SyntheticSpec { noise: -0.1, ..small(0.2, 2) },
        SyntheticSpec { noise: f64::NAN, ..small(0.2, 2) },
    ] {
        assert!(gen_synthetic::<f64>(&spec).is_err(), "{spec:?}");
    }
}

#[test]
fn metrics_match_brute_force_on_random_scores() {
    let mut r = rng(40);
    for _ in 0..100 {
        let ng = r.random_range(1..30);
        let ni = r.random_range(1..60);
        let vs = VerificationSet::new(random_scores(&mut r, ng), random_scores(&mut r, ni)).unwrap();
        assert_eq!(pair_accuracy(&vs).unwrap(), brute_pair_accuracy(&vs));
        for far in [1e-3, 0.02, 0.1, 0.3, 0.7] {
            assert_eq!(tar_at_far(&vs, far).unwrap(), brute_tar_at_far(&vs, far), "far {far}");
        }
    }
}

#[test]
fn extra_impostor_can_lower_the_threshold() {
    // a new impostor score shifts the rank budget, so the chosen threshold
    // may move down to a lower score
    let g = vec![0.95];
    let before = VerificationSet::new(g.clone(), vec![0.9, 0.3, 0.3, 0.3]).unwrap();
    let after = VerificationSet::new(g, vec![0.9, 0.3, 0.3, 0.3, 0.5]).unwrap();
    assert_eq!(tar_at_far(&before, 0.5).unwrap(), (1.0, 0.9));
    assert_eq!(tar_at_far(&after, 0.5).unwrap(), (1.0, 0.5));
}

#[test]
fn unreachable_target_uses_threshold_above_every_score() {
    let vs = VerificationSet::new(vec![0.2, 0.4], vec![0.4, 0.4]).unwrap();
    let (tar, t) = tar_at_far(&vs, 0.1).unwrap();
    assert_eq!(tar, 0.0);
    assert_eq!(t, 0.4f64.next_up());
    assert!(tar_at_far(&vs, 0.0).is_err());
    assert!(tar_at_far(&vs, 1.0).is_err());
}

#[test]
fn verification_sets_reject_bad_scores() {
    assert!(VerificationSet::new(vec![], vec![0.1]).is_err());
    assert!(VerificationSet::new(vec![0.1], vec![]).is_err());
    assert!(VerificationSet::new(vec![f64::NAN], vec![0.1]).is_err());
}

#[test]
fn cosine_rejects_degenerate_input() {
    assert!(cosine_sim(&[0.0, 0.0], &[1.0, 2.0]).is_err());
    assert!(cosine_sim(&[1.0], &[1.0, 2.0]).is_err());
    assert_eq!(cosine_sim(&[2.0, 0.0], &[-3.0, 0.0]).unwrap(), -1.0);
}

#[test]
fn pair_lists_cover_every_genuine_pair() {
    let labels = [0, 0, 0, 1, 1, 2];
    let names: Vec<String> = (0..6).map(|i| format!("n{i}")).collect();
    let all = make_pairs(&labels, &names, usize::MAX, 1);
    assert_eq!(all.iter().filter(|p| p.same).count(), 3 + 1);
    assert_eq!(all.iter().filter(|p| !p.same).count(), 15 - 4);

    let capped = make_pairs(&labels, &names, 5, 1);
    assert_eq!(capped.iter().filter(|p| p.same).count(), 4);
    let imp: Vec<&Pair> = capped.iter().filter(|p| !p.same).collect();
    assert_eq!(imp.len(), 5);
    for p in &imp {
        assert!(all.contains(p));
        assert_eq!(imp.iter().filter(|q| **q == *p).count(), 1);
    }
    assert_eq!(capped, make_pairs(&labels, &names, 5, 1));
}

#[test]
fn scored_pairs_follow_labels() {
    let emb = ChannelVec::new(4, 2, vec![1.0, 0.0, 0.9, 0.1, 0.0, 1.0, -1.0, 0.2]).unwrap();
    let labels = [0, 0, 1, 2];
    let vs = all_pairs(&emb, &labels).unwrap();
    assert_eq!(vs.genuine.len(), 1);
    assert_eq!(vs.impostor.len(), 5);
    let names: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
    let pairs = make_pairs(&labels, &names, usize::MAX, 0);
    let listed = score_pairs(&emb, &names, &pairs).unwrap();
    assert_eq!(listed.genuine, vs.genuine);
    let mut x = listed.impostor.clone();
    let mut y = vs.impostor.clone();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    assert_eq!(x, y);

    let bad = [Pair { a: "a".into(), b: "zz".into(), same: false }];
    assert!(score_pairs(&emb, &names, &bad).is_err());
}

#[test]
fn datasets_survive_disk_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let set = gen_synthetic::<f32>(&small(0.2, 2)).unwrap();
    let names = save_dataset(&set, dir.path()).unwrap();
    let (back, names2) = load_dataset::<f32>(dir.path()).unwrap();
    assert_eq!(names, names2);
    assert_eq!(back, set);
}
