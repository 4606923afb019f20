use crate::error::{Error, Result};
use crate::real::Real;

use super::{ChannelVec, ConvKernel, Dims4, Matrix, Tensor4};

/// Returns `NonFinite` in debug builds when `ok` is false.
#[inline]
pub(crate) fn debug_finite(op: &'static str, ok: impl FnOnce() -> bool) -> Result<()> {
    if cfg!(debug_assertions) && !ok() {
        return Err(Error::NonFinite { op });
    }
    Ok(())
}

/// Zero padding applied on each side for "same" convolution.
pub fn same_padding<T: Real>(k: &ConvKernel<T>) -> Result<(usize, usize)> {
    let (kh, kw, _, _) = k.shape();
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::Unsupported(format!(
            "even kernel size {kh}x{kw} has no centred same padding"
        )));
    }
    Ok((k.dilation() * (kh - 1) / 2, k.dilation() * (kw - 1) / 2))
}

pub fn conv_output_dims<T: Real>(x: Dims4, k: &ConvKernel<T>) -> Dims4 {
    let s = k.stride();
    Dims4::new(x.n, x.h.div_ceil(s), x.w.div_ceil(s), k.c_out())
}

/// Direct dilated convolution with "same" zero padding.
///
/// Output position `(oy, ox)` samples input rows `oy*stride + ky*dilation - pad`
/// (likewise for columns); taps outside the input read zero. Accumulation
/// order is fixed: taps row-major, then input channels.
pub fn conv2d<T: Real>(x: &Tensor4<T>, k: &ConvKernel<T>) -> Result<Tensor4<T>> {
    let xd = x.dims();
    if xd.c != k.c_in() {
        return Err(Error::shape(
            "conv2d",
            format!("input has {} channels, kernel expects {}", xd.c, k.c_in()),
        ));
    }
    let (pad_y, pad_x) = same_padding(k)?;
    let od = conv_output_dims(xd, k);
    let (kh, kw, c_in, c_out) = k.shape();
    let (dil, stride) = (k.dilation() as isize, k.stride() as isize);
    let w = k.weights();
    let xs = x.data();
    let mut out = vec![T::zero(); od.len()];

    for n in 0..xd.n {
        for oy in 0..od.h {
            for ox in 0..od.w {
                let o_base = ((n * od.h + oy) * od.w + ox) * c_out;
                let acc = &mut out[o_base..o_base + c_out];
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
                            for (a, &wv) in acc.iter_mut().zip(wrow) {
                                *a += xv * wv;
                            }
                        }
                    }
                }
            }
        }
    }
    let out = Tensor4::new(od, out)?;
    debug_finite("conv2d", || out.all_finite())?;
    Ok(out)
}

fn zip_map<T: Real>(
    op: &'static str,
    x: &Tensor4<T>,
    y: &Tensor4<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor4<T>> {
    if x.dims() != y.dims() {
        return Err(Error::shape(op, format!("{} vs {}", x.dims(), y.dims())));
    }
    let data = x.data().iter().zip(y.data()).map(|(&a, &b)| f(a, b)).collect();
    let out = Tensor4::new(x.dims(), data)?;
    debug_finite(op, || out.all_finite())?;
    Ok(out)
}

/// Element-wise product (the multiplicative fusion).
pub fn ew_mul<T: Real>(x: &Tensor4<T>, y: &Tensor4<T>) -> Result<Tensor4<T>> {
    zip_map("ew_mul", x, y, |a, b| a * b)
}

/// Element-wise difference `x - y` (the subtractive fusion).
pub fn ew_sub<T: Real>(x: &Tensor4<T>, y: &Tensor4<T>) -> Result<Tensor4<T>> {
    zip_map("ew_sub", x, y, |a, b| a - b)
}

pub fn ew_add<T: Real>(x: &Tensor4<T>, y: &Tensor4<T>) -> Result<Tensor4<T>> {
    zip_map("ew_add", x, y, |a, b| a + b)
}

pub fn relu_map<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Per-sample, per-channel mean over all spatial positions.
pub fn global_avg_pool<T: Real>(x: &Tensor4<T>) -> ChannelVec<T> {
    let d = x.dims();
    let hw = d.spatial();
    let mut out = vec![T::zero(); d.n * d.c];
    if hw > 0 {
        // mean of offsets from the first position: a constant map pools exactly
        let count = T::lit(hw as f64);
        for n in 0..d.n {
            let sample = &x.data()[n * hw * d.c..(n + 1) * hw * d.c];
            let first = &sample[..d.c];
            let acc = &mut out[n * d.c..(n + 1) * d.c];
            for px in sample.chunks(d.c) {
                for ((a, &v), &r) in acc.iter_mut().zip(px).zip(first) {
                    *a += v - r;
                }
            }
            for (a, &r) in acc.iter_mut().zip(first) {
                *a = r + *a / count;
            }
        }
    }
    ChannelVec {
        n: d.n,
        c: d.c,
        data: out,
    }
}

/// Affine map `x · W + b` applied per sample; `W` is `(c_in, c_out)`.
pub fn fc<T: Real>(x: &ChannelVec<T>, w: &Matrix<T>, b: &ChannelVec<T>) -> Result<ChannelVec<T>> {
    if x.c() != w.rows() {
        return Err(Error::shape(
            "fc",
            format!("input width {} vs weight rows {}", x.c(), w.rows()),
        ));
    }
    if b.n() != 1 || b.c() != w.cols() {
        return Err(Error::shape(
            "fc",
            format!("bias {}x{} vs weight cols {}", b.n(), b.c(), w.cols()),
        ));
    }
    let (c_in, c_out) = (w.rows(), w.cols());
    let mut out = Vec::with_capacity(x.n() * c_out);
    for n in 0..x.n() {
        let mut acc = b.data().to_vec();
        for (i, &xv) in x.row(n).iter().enumerate().take(c_in) {
            for (a, &wv) in acc.iter_mut().zip(w.row(i)) {
                *a += xv * wv;
            }
        }
        out.extend(acc);
    }
    let out = ChannelVec::new(x.n(), c_out, out)?;
    debug_finite("fc", || out.all_finite())?;
    Ok(out)
}

/// Logistic function evaluated without overflow for either sign.
#[inline]
pub fn sigmoid_scalar<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Real>(x: &ChannelVec<T>) -> ChannelVec<T> {
    x.map(sigmoid_scalar)
}

pub fn relu<T: Real>(x: &ChannelVec<T>) -> ChannelVec<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Two-way softmax over a pair of logits, evaluated in the max-shifted form.
/// Returns `(a, b)` with `b = 1 - a`.
#[inline]
pub fn softmax_pair_scalar<T: Real>(a_hat: T, b_hat: T) -> (T, T) {
    let m = a_hat.max(b_hat);
    let ea = (a_hat - m).exp();
    let eb = (b_hat - m).exp();
    let a = ea / (ea + eb);
    (a, T::one() - a)
}

pub fn softmax_pair<T: Real>(
    a_hat: &ChannelVec<T>,
    b_hat: &ChannelVec<T>,
) -> Result<(ChannelVec<T>, ChannelVec<T>)> {
    same_chan("softmax_pair", a_hat, b_hat)?;
    let (a, b): (Vec<T>, Vec<T>) = a_hat
        .data()
        .iter()
        .zip(b_hat.data())
        .map(|(&p, &q)| softmax_pair_scalar(p, q))
        .unzip();
    Ok((
        ChannelVec::new(a_hat.n(), a_hat.c(), a)?,
        ChannelVec::new(a_hat.n(), a_hat.c(), b)?,
    ))
}

fn same_chan<T: Real>(op: &'static str, x: &ChannelVec<T>, y: &ChannelVec<T>) -> Result<()> {
    if (x.n(), x.c()) != (y.n(), y.c()) {
        return Err(Error::shape(
            op,
            format!("{}x{} vs {}x{}", x.n(), x.c(), y.n(), y.c()),
        ));
    }
    Ok(())
}

pub fn chan_sub<T: Real>(x: &ChannelVec<T>, y: &ChannelVec<T>) -> Result<ChannelVec<T>> {
    same_chan("chan_sub", x, y)?;
    let data = x.data().iter().zip(y.data()).map(|(&a, &b)| a - b).collect();
    ChannelVec::new(x.n(), x.c(), data)
}

/// Split each row at column `at` into `(left, right)`.
pub fn split_channels<T: Real>(x: &ChannelVec<T>, at: usize) -> Result<(ChannelVec<T>, ChannelVec<T>)> {
    if at == 0 || at >= x.c() {
        return Err(Error::shape(
            "split_channels",
            format!("split point {at} for width {}", x.c()),
        ));
    }
    let mut left = Vec::with_capacity(x.n() * at);
    let mut right = Vec::with_capacity(x.n() * (x.c() - at));
    for n in 0..x.n() {
        let row = x.row(n);
        left.extend_from_slice(&row[..at]);
        right.extend_from_slice(&row[at..]);
    }
    Ok((
        ChannelVec::new(x.n(), at, left)?,
        ChannelVec::new(x.n(), x.c() - at, right)?,
    ))
}

/// Multiply every spatial position of sample `n`, channel `c` by `s[n, c]`.
pub fn scale_channels<T: Real>(s: &ChannelVec<T>, u: &Tensor4<T>) -> Result<Tensor4<T>> {
    let d = u.dims();
    if (s.n(), s.c()) != (d.n, d.c) {
        return Err(Error::shape(
            "scale_channels",
            format!("scale {}x{} vs tensor {d}", s.n(), s.c()),
        ));
    }
    let mut data = Vec::with_capacity(d.len());
    for n in 0..d.n {
        let row = s.row(n);
        for p in 0..d.spatial() {
            let base = (n * d.spatial() + p) * d.c;
            data.extend(u.data()[base..base + d.c].iter().zip(row).map(|(&v, &k)| v * k));
        }
    }
    Tensor4::new(d, data)
}

/// Row-wise L2 normalisation. A zero row maps to a zero row.
pub fn l2_normalize_rows<T: Real>(rows: usize, cols: usize, data: &[T]) -> (Vec<T>, Vec<T>) {
    let mut out = Vec::with_capacity(data.len());
    let mut norms = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &data[r * cols..(r + 1) * cols];
        let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
        norms.push(norm);
        if norm > T::zero() {
            out.extend(row.iter().map(|&v| v / norm));
        } else {
            out.extend(std::iter::repeat_n(T::zero(), cols));
        }
    }
    (out, norms)
}

pub fn l2_normalize<T: Real>(x: &ChannelVec<T>) -> ChannelVec<T> {
    let (data, _) = l2_normalize_rows(x.n(), x.c(), x.data());
    ChannelVec {
        n: x.n(),
        c: x.c(),
        data,
    }
}
