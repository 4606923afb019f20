//! Scalar-loop reference implementations shared by the integration tests.
#![allow(dead_code)]

use msconv::block::MSConvState;
use msconv::data::VerificationSet;
use msconv::{ConvKernel, Dims4, Tensor4};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_map(r: &mut ChaCha8Rng, dims: Dims4, scale: f64) -> Tensor4<f64> {
    Tensor4::from_fn(dims, |_, _, _, _| r.random_range(-scale..scale))
}

/// Counts every scalar arithmetic operation performed by [`naive_msconv`].
#[derive(Debug, Default)]
pub struct OpCounter {
    pub ops: usize,
}

impl OpCounter {
    fn tick(&mut self) {
        self.ops += 1;
    }
}

/// Direct "same"-padded convolution over index arithmetic. Every tap is
/// counted as one multiply-accumulate, including taps in the padding.
pub fn naive_conv(x: &Tensor4<f64>, k: &ConvKernel<f64>, count: &mut OpCounter) -> Tensor4<f64> {
    let d = x.dims();
    let (kh, kw, ci, co) = k.shape();
    let (dil, s) = (k.dilation() as i64, k.stride());
    let (ph, pw) = (dil * (kh as i64 - 1) / 2, dil * (kw as i64 - 1) / 2);
    let (oh, ow) = (d.h.div_ceil(s), d.w.div_ceil(s));
    let mut out = vec![0.0; d.n * oh * ow * co];
    for n in 0..d.n {
        for oy in 0..oh {
            for ox in 0..ow {
                for o in 0..co {
                    let mut acc = 0.0;
                    for ky in 0..kh {
                        for kx in 0..kw {
                            for i in 0..ci {
                                count.tick();
                                let iy = (oy * s) as i64 + ky as i64 * dil - ph;
                                let ix = (ox * s) as i64 + kx as i64 * dil - pw;
                                if iy >= 0 && ix >= 0 && (iy as usize) < d.h && (ix as usize) < d.w {
                                    acc += x.at(n, iy as usize, ix as usize, i) * k.at(ky, kx, i, o);
                                }
                            }
                        }
                    }
                    out[((n * oh + oy) * ow + ox) * co + o] = acc;
                }
            }
        }
    }
    Tensor4::new(Dims4::new(d.n, oh, ow, co), out).unwrap()
}

/// Scalar MSConv forward: `V = U2 + σ(â − b̂) ⊙ (U1 − U2)` with the
/// attention pooled from `U1 ⊙ U2`.
pub fn naive_msconv(x: &Tensor4<f64>, st: &MSConvState<f64>, count: &mut OpCounter) -> Tensor4<f64> {
    let u1 = naive_conv(x, &st.k3, count);
    let u2 = naive_conv(x, &st.k5, count);
    let d = u1.dims();
    let c = d.c;
    let dd = st.w_reduce.cols();
    let mut u3 = vec![0.0; d.len()];
    let mut u4 = vec![0.0; d.len()];
    for i in 0..d.len() {
        u3[i] = u1.data()[i] * u2.data()[i];
        count.tick();
        u4[i] = u1.data()[i] - u2.data()[i];
        count.tick();
    }
    let hw = d.h * d.w;
    let mut out = vec![0.0; d.len()];
    for n in 0..d.n {
        let mut s = vec![0.0; c];
        for p in 0..hw {
            for ch in 0..c {
                s[ch] += u3[(n * hw + p) * c + ch];
                count.tick();
            }
        }
        for v in &mut s {
            *v /= hw as f64;
            count.tick();
        }
        let mut z = vec![0.0; dd];
        for j in 0..dd {
            let mut acc = 0.0;
            for i in 0..c {
                acc += s[i] * st.w_reduce.at(i, j);
                count.tick();
            }
            z[j] = acc + st.b_reduce.at(0, j);
            count.tick();
        }
        for v in &mut z {
            *v = v.max(0.0);
            count.tick();
        }
        let mut ab = vec![0.0; 2 * c];
        for j in 0..2 * c {
            let mut acc = 0.0;
            for i in 0..dd {
                acc += z[i] * st.w_expand.at(i, j);
                count.tick();
            }
            ab[j] = acc + st.b_expand.at(0, j);
            count.tick();
        }
        let mut att = vec![0.0; c];
        for ch in 0..c {
            let diff = ab[ch] - ab[c + ch];
            count.tick();
            att[ch] = 1.0 / (1.0 + (-diff).exp());
            count.tick();
        }
        for p in 0..hw {
            for ch in 0..c {
                let i = (n * hw + p) * c + ch;
                let w = att[ch] * u4[i];
                count.tick();
                out[i] = u2.data()[i] + w;
                count.tick();
            }
        }
    }
    Tensor4::new(d, out).unwrap()
}

/// Parameter count from the block's shapes alone.
pub fn naive_param_count(c_in: usize, c: usize, d: usize) -> usize {
    2 * 9 * c_in * c + c * d + d + d * 2 * c + 2 * c
}

fn count_ge(v: &[f64], t: f64) -> usize {
    v.iter().filter(|&&s| s >= t).count()
}

fn max_score(vs: &VerificationSet) -> f64 {
    vs.genuine.iter().chain(&vs.impostor).copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Try every score as a threshold, recounting both lists each time.
pub fn brute_tar_at_far(vs: &VerificationSet, far: f64) -> (f64, f64) {
    let mut best: Option<f64> = None;
    for &t in vs.genuine.iter().chain(&vs.impostor) {
        let fa = count_ge(&vs.impostor, t) as f64 / vs.impostor.len() as f64;
        if fa <= far && best.is_none_or(|b| t < b) {
            best = Some(t);
        }
    }
    let t = best.unwrap_or_else(|| max_score(vs).next_up());
    (count_ge(&vs.genuine, t) as f64 / vs.genuine.len() as f64, t)
}

pub fn brute_pair_accuracy(vs: &VerificationSet) -> (f64, f64) {
    let mut cands: Vec<f64> = vs.genuine.iter().chain(&vs.impostor).copied().collect();
    cands.push(max_score(vs).next_up());
    let mut best = (0usize, f64::INFINITY);
    for &t in &cands {
        let correct = count_ge(&vs.genuine, t) + vs.impostor.iter().filter(|&&s| s < t).count();
        if correct > best.0 || (correct == best.0 && t < best.1) {
            best = (correct, t);
        }
    }
    (best.0 as f64 / (vs.genuine.len() + vs.impostor.len()) as f64, best.1)
}

/// Scores on a coarse grid so ties are common.
pub fn random_scores(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| (r.random_range(-20..=20) as f64) / 20.0).collect()
}
