//! Analytic backward rules, one per tape op.

use crate::real::Real;
use crate::tensor::{same_padding, ChannelVec, ConvKernel, Matrix, Tensor4};

use super::tape::{Contribution, Op, Record};
use super::{NodeId, Value};

type Out<T> = Vec<(NodeId, Contribution<T>)>;

fn map<T: Real>(records: &[Record<T>], id: NodeId) -> &Tensor4<T> {
    match &records[id.0].value {
        Value::Map(t) => t,
        other => unreachable!("expected map, found {}", other.kind()),
    }
}

fn chan<T: Real>(records: &[Record<T>], id: NodeId) -> &ChannelVec<T> {
    match &records[id.0].value {
        Value::Chan(t) => t,
        other => unreachable!("expected chan, found {}", other.kind()),
    }
}

fn mat<T: Real>(records: &[Record<T>], id: NodeId) -> &Matrix<T> {
    match &records[id.0].value {
        Value::Mat(t) => t,
        other => unreachable!("expected mat, found {}", other.kind()),
    }
}

fn kernel<T: Real>(records: &[Record<T>], id: NodeId) -> &ConvKernel<T> {
    match &records[id.0].value {
        Value::Kernel(t) => t,
        other => unreachable!("expected kernel, found {}", other.kind()),
    }
}

fn full<T>(id: NodeId, v: Vec<T>) -> (NodeId, Contribution<T>) {
    (id, Contribution::Full(v))
}

pub(crate) fn apply<T: Real>(records: &[Record<T>], rec: &Record<T>, g: &Value<T>) -> Out<T> {
    let gf = g.flat();
    match &rec.op {
        Op::Leaf => vec![],
        Op::Conv2d { x, k } => conv2d_backward(map(records, *x), kernel(records, *k), gf, *x, *k),
        // Out = x·y: ∂/∂x = y, ∂/∂y = x.
        Op::Mul { x, y } => {
            let (xv, yv) = (map(records, *x).data(), map(records, *y).data());
            vec![
                full(*x, gf.iter().zip(yv).map(|(&g, &b)| g * b).collect()),
                full(*y, gf.iter().zip(xv).map(|(&g, &a)| g * a).collect()),
            ]
        }
        Op::Sub { x, y } | Op::ChanSub { x, y } => vec![
            full(*x, gf.to_vec()),
            full(*y, gf.iter().map(|&g| -g).collect()),
        ],
        Op::Add { x, y } => vec![full(*x, gf.to_vec()), full(*y, gf.to_vec())],
        Op::ReluMap { x } | Op::Relu { x } => {
            let xv = records[x.0].value.flat();
            vec![full(
                *x,
                gf.iter()
                    .zip(xv)
                    .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
                    .collect(),
            )]
        }
        Op::Gap { x } => {
            let d = map(records, *x).dims();
            let scale = T::one() / T::lit(d.spatial() as f64);
            let mut out = Vec::with_capacity(d.len());
            for n in 0..d.n {
                let row = &gf[n * d.c..(n + 1) * d.c];
                for _ in 0..d.spatial() {
                    out.extend(row.iter().map(|&g| g * scale));
                }
            }
            vec![full(*x, out)]
        }
        Op::Fc { x, w, b } => {
            let (xv, wv) = (chan(records, *x), mat(records, *w));
            let (c_in, c_out) = (wv.rows(), wv.cols());
            let mut gx = vec![T::zero(); xv.n() * c_in];
            let mut gw = vec![T::zero(); c_in * c_out];
            let mut gb = vec![T::zero(); c_out];
            for n in 0..xv.n() {
                let go = &gf[n * c_out..(n + 1) * c_out];
                for (a, &v) in gb.iter_mut().zip(go) {
                    *a += v;
                }
                for i in 0..c_in {
                    let xi = xv.at(n, i);
                    let wrow = wv.row(i);
                    let mut acc = T::zero();
                    for j in 0..c_out {
                        acc += go[j] * wrow[j];
                        gw[i * c_out + j] += xi * go[j];
                    }
                    gx[n * c_in + i] = acc;
                }
            }
            vec![full(*x, gx), full(*w, gw), full(*b, gb)]
        }
        Op::Sigmoid { x } => {
            let s = rec.value.flat();
            vec![full(
                *x,
                gf.iter()
                    .zip(s)
                    .map(|(&g, &s)| g * s * (T::one() - s))
                    .collect(),
            )]
        }
        Op::Split { x, at, right } => {
            let cols = chan(records, *x).c();
            let offset = if *right { *at } else { 0 };
            vec![(
                *x,
                Contribution::Columns {
                    cols,
                    offset,
                    values: gf.to_vec(),
                },
            )]
        }
        Op::SoftmaxPair { a_hat, b_hat, second } => {
            // a = σ(â − b̂), b = 1 − a; both have derivative ±a(1 − a).
            let sign = if *second { -T::one() } else { T::one() };
            let local: Vec<T> = rec
                .value
                .flat()
                .iter()
                .zip(gf)
                .map(|(&p, &g)| sign * g * p * (T::one() - p))
                .collect();
            let neg = local.iter().map(|&v| -v).collect();
            vec![full(*a_hat, local), full(*b_hat, neg)]
        }
        Op::ScaleChannels { s, u } => {
            let (sv, uv) = (chan(records, *s), map(records, *u));
            let d = uv.dims();
            let mut gs = vec![T::zero(); d.n * d.c];
            let mut gu = Vec::with_capacity(d.len());
            for n in 0..d.n {
                let srow = sv.row(n);
                let acc = &mut gs[n * d.c..(n + 1) * d.c];
                for p in 0..d.spatial() {
                    let base = (n * d.spatial() + p) * d.c;
                    let go = &gf[base..base + d.c];
                    let uu = &uv.data()[base..base + d.c];
                    for c in 0..d.c {
                        acc[c] += go[c] * uu[c];
                    }
                    gu.extend(go.iter().zip(srow).map(|(&g, &k)| g * k));
                }
            }
            vec![full(*s, gs), full(*u, gu)]
        }
        Op::NormalizeRows { x } => {
            let (rows, cols) = match &records[x.0].value {
                Value::Chan(c) => (c.n(), c.c()),
                Value::Mat(m) => (m.rows(), m.cols()),
                other => unreachable!("normalize_rows on {}", other.kind()),
            };
            let xv = records[x.0].value.flat();
            let yv = rec.value.flat();
            let mut gx = Vec::with_capacity(xv.len());
            for r in 0..rows {
                let xs = &xv[r * cols..(r + 1) * cols];
                let ys = &yv[r * cols..(r + 1) * cols];
                let gs = &gf[r * cols..(r + 1) * cols];
                let norm = xs.iter().map(|&v| v * v).sum::<T>().sqrt();
                if norm > T::zero() {
                    let dot = ys.iter().zip(gs).map(|(&y, &g)| y * g).sum::<T>();
                    gx.extend(ys.iter().zip(gs).map(|(&y, &g)| (g - y * dot) / norm));
                } else {
                    gx.extend(std::iter::repeat_n(T::zero(), cols));
                }
            }
            vec![full(*x, gx)]
        }
        Op::Sum { x } => {
            let len = records[x.0].value.flat().len();
            vec![full(*x, vec![gf[0]; len])]
        }
        Op::Custom { inputs, rule } => {
            let ins: Vec<&Value<T>> = inputs.iter().map(|i| &records[i.0].value).collect();
            let grads = rule.backward(&ins, &rec.value, g);
            assert_eq!(
                grads.len(),
                inputs.len(),
                "{} returned a wrong number of gradients",
                rule.name()
            );
            inputs
                .iter()
                .zip(grads)
                .map(|(&id, v)| {
                    let v = match v {
                        Value::Scalar(s) => vec![s],
                        other => other.flat().to_vec(),
                    };
                    full(id, v)
                })
                .collect()
        }
    }
}

fn conv2d_backward<T: Real>(
    x: &Tensor4<T>,
    k: &ConvKernel<T>,
    gy: &[T],
    x_id: NodeId,
    k_id: NodeId,
) -> Out<T> {
    let xd = x.dims();
    let (pad_y, pad_x) = same_padding(k).expect("validated in forward");
    let (kh, kw, c_in, c_out) = k.shape();
    let (dil, stride) = (k.dilation() as isize, k.stride() as isize);
    let (oh, ow) = (xd.h.div_ceil(k.stride()), xd.w.div_ceil(k.stride()));
    let w = k.weights();
    let xs = x.data();
    let mut gx = vec![T::zero(); xd.len()];
    let mut gw = vec![T::zero(); w.len()];

    for n in 0..xd.n {
        for oy in 0..oh {
            for ox in 0..ow {
                let o_base = ((n * oh + oy) * ow + ox) * c_out;
                let go = &gy[o_base..o_base + c_out];
                for ky in 0..kh {
                    let iy = oy as isize * stride + ky as isize * dil - pad_y as isize;
                    if iy < 0 || iy >= xd.h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = ox as isize * stride + kx as isize * dil - pad_x as isize;
                        if ix < 0 || ix >= xd.w as isize {
                            continue;
                        }
                        let i_base = ((n * xd.h + iy as usize) * xd.w + ix as usize) * c_in;
                        let w_base = (ky * kw + kx) * c_in * c_out;
                        for ci in 0..c_in {
                            let xv = xs[i_base + ci];
                            let wrow = &w[w_base + ci * c_out..w_base + (ci + 1) * c_out];
                            let gwrow = &mut gw[w_base + ci * c_out..w_base + (ci + 1) * c_out];
                            let mut acc = T::zero();
                            for co in 0..c_out {
                                acc += go[co] * wrow[co];
                                gwrow[co] += xv * go[co];
                            }
                            gx[i_base + ci] += acc;
                        }
                    }
                }
            }
        }
    }
    vec![full(x_id, gx), full(k_id, gw)]
}
