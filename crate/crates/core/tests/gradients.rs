mod common;

use msconv::block::{block_forward_tape, BlockConfig, FusionKind, MSConvState};
use msconv::grad::{finite_diff_check, Tape};
use msconv::param::Parameterized;
use msconv::train::gradcheck::{all_scopes, gradcheck, Scope};
use msconv::{Dims4, Error};

use common::{naive_msconv, random_map, rng, OpCounter};

#[test]
fn every_scope_passes() {
    for scope in all_scopes() {
        let out = gradcheck(&scope).unwrap();
        assert!(out.passed(), "{}", out.line());
    }
}

#[test]
fn every_fusion_kind_passes() {
    for kind in FusionKind::ALL {
        let out = gradcheck(&Scope::Block(kind)).unwrap();
        assert!(out.passed(), "{}", out.line());
    }
}

#[test]
fn block_gradient_matches_scalar_reference() {
    // analytic gradients from the tape, numeric ones from the scalar loop oracle
    let mut r = rng(31);
    let cfg = BlockConfig {
        min_width: 3,
        ..BlockConfig::new(2, 3)
    };
    let st = MSConvState::<f64>::init(&cfg, 8, "b").unwrap();
    let x = random_map(&mut r, Dims4::new(2, 4, 4, 2), 1.0);
    let weights = random_map(&mut r, Dims4::new(2, 4, 4, 3), 1.0);

    let mut tape = Tape::new();
    let vars = st.bind(&mut tape);
    let xv = tape.leaf_map(x.clone());
    let v = block_forward_tape(&mut tape, FusionKind::MsConv, xv, &vars).unwrap();
    let wv = tape.leaf_map(weights.clone());
    let prod = tape.mul(v, wv).unwrap();
    let loss = tape.sum(prod).unwrap();
    let g = tape.backward(loss, 1.0).unwrap();
    let analytic = vec![
        g.get(vars.k3).unwrap().weights().to_vec(),
        g.get(vars.k5).unwrap().weights().to_vec(),
        g.get(vars.w_reduce).unwrap().data().to_vec(),
        g.get(vars.b_reduce).unwrap().data().to_vec(),
        g.get(vars.w_expand).unwrap().data().to_vec(),
        g.get(vars.b_expand).unwrap().data().to_vec(),
    ];

    let mut params = st.flat_params();
    let report = finite_diff_check(&mut params, &analytic, 1e-5, |p| {
        let mut s = st.clone();
        s.load_flat(p).unwrap();
        let out = naive_msconv(&x, &s, &mut OpCounter::default());
        out.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
    })
    .unwrap();
    assert!(report.passes(1e-6), "{report:?}");
}

#[test]
fn tape_allows_one_backward_pass() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf_map(random_map(&mut rng(32), Dims4::new(1, 2, 2, 1), 1.0));
    let loss = tape.sum(x).unwrap();
    tape.backward(loss, 1.0).unwrap();
    assert!(matches!(tape.backward(loss, 1.0), Err(Error::TapeConsumed)));
    assert!(matches!(tape.relu_map(x), Err(Error::TapeConsumed)));
}

#[test]
fn reused_value_accumulates_both_paths() {
    let x0 = random_map(&mut rng(33), Dims4::new(1, 3, 2, 2), 2.0);
    let mut tape = Tape::new();
    let x = tape.leaf_map(x0.clone());
    let sq = tape.mul(x, x).unwrap();
    let loss = tape.sum(sq).unwrap();
    let g = tape.backward(loss, 1.0).unwrap();
    let gx = g.get(x).unwrap();
    for (d, v) in gx.data().iter().zip(x0.data()) {
        assert_eq!(*d, 2.0 * v);
    }
}

#[test]
fn product_gradient_swaps_its_inputs() {
    let mut r = rng(35);
    let (x0, y0) = (random_map(&mut r, Dims4::new(1, 2, 2, 3), 2.0), random_map(&mut r, Dims4::new(1, 2, 2, 3), 2.0));
    let grads = |a: &msconv::Tensor4<f64>, b: &msconv::Tensor4<f64>| {
        let mut tape = Tape::new();
        let (x, y) = (tape.leaf_map(a.clone()), tape.leaf_map(b.clone()));
        let p = tape.mul(x, y).unwrap();
        let loss = tape.sum(p).unwrap();
        let g = tape.backward(loss, 1.0).unwrap();
        (g.get(x).unwrap().clone(), g.get(y).unwrap().clone())
    };
    let (gx, gy) = grads(&x0, &y0);
    assert_eq!(gx, y0);
    assert_eq!(gy, x0);
    let (hx, hy) = grads(&y0, &x0);
    assert_eq!((hx, hy), (gy, gx));
}

#[test]
fn seed_scales_every_gradient() {
    let x0 = random_map(&mut rng(34), Dims4::new(1, 2, 3, 2), 1.0);
    let grad = |seed: f64| {
        let mut tape = Tape::new();
        let x = tape.leaf_map(x0.clone());
        let y = tape.relu_map(x).unwrap();
        let loss = tape.sum(y).unwrap();
        tape.backward(loss, seed).unwrap().get(x).unwrap().data().to_vec()
    };
    let one = grad(1.0);
    for (a, v) in one.iter().zip(x0.data()) {
        assert_eq!(*a, if *v > 0.0 { 1.0 } else { 0.0 });
    }
    for (a, b) in one.iter().zip(grad(-3.0)) {
        assert_eq!(-3.0 * a, b);
    }
}

#[test]
fn finite_difference_check_restores_parameters() {
    let mut params = vec![vec![0.5, -1.25], vec![2.0]];
    let before = params.clone();
    let analytic = vec![vec![1.0, -2.5], vec![4.0]];
    let report = finite_diff_check(&mut params, &analytic, 1e-5, |p| {
        p.iter().flatten().map(|v| v * v).sum()
    })
    .unwrap();
    assert_eq!(params, before);
    assert_eq!(report.checked, 3);
    assert!(report.passes(1e-9), "{report:?}");

    let wrong = vec![vec![1.0, -2.5], vec![3.0]];
    let report = finite_diff_check(&mut params, &wrong, 1e-5, |p| {
        p.iter().flatten().map(|v| v * v).sum()
    })
    .unwrap();
    assert_eq!(report.worst, (1, 0));
    assert!(!report.passes(1e-3));
    assert!(finite_diff_check(&mut params, &analytic, 0.0, |_| 0.0).is_err());
    assert!(finite_diff_check(&mut params, &analytic[..1], 1e-5, |_| 0.0).is_err());
}
