//! Channel-last tensors and the primitives the MSConv block is built from.
//!
//! Activations are [`Tensor4`] values in `(n, h, w, c)` row-major order.
//! Per-sample channel statistics (pooled features, attention logits and
//! weights) are [`ChannelVec`] values of shape `(n, c)`. Fully connected
//! weights are a [`Matrix`] of shape `(c_in, c_out)` and spatial weights a
//! [`ConvKernel`] of shape `(kh, kw, c_in, c_out)`.

pub mod io;
pub mod ops;

use crate::error::{Error, Result};
use crate::real::Real;

pub use ops::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims4 {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Dims4 {
    pub const fn new(n: usize, h: usize, w: usize, c: usize) -> Self {
        Dims4 { n, h, w, c }
    }

    pub const fn len(&self) -> usize {
        self.n * self.h * self.w * self.c
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn spatial(&self) -> usize {
        self.h * self.w
    }
}

impl std::fmt::Display for Dims4 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.h, self.w, self.c)
    }
}

/// Rank-4 activation tensor, `(n, h, w, c)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T = f64> {
    dims: Dims4,
    data: Vec<T>,
}

impl<T: Real> Tensor4<T> {
    pub fn new(dims: Dims4, data: Vec<T>) -> Result<Self> {
        if dims.n == 0 || dims.h == 0 || dims.w == 0 || dims.c == 0 {
            return Err(Error::shape("tensor4", format!("zero dimension in {dims}")));
        }
        if data.len() != dims.len() {
            return Err(Error::shape(
                "tensor4",
                format!("{} values for dims {dims}", data.len()),
            ));
        }
        Ok(Tensor4 { dims, data })
    }

    pub fn zeros(dims: Dims4) -> Self {
        Self::filled(dims, T::zero())
    }

    pub fn filled(dims: Dims4, value: T) -> Self {
        assert!(!dims.is_empty(), "zero dimension in {dims}");
        Tensor4 {
            dims,
            data: vec![value; dims.len()],
        }
    }

    pub fn from_fn(dims: Dims4, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        assert!(!dims.is_empty(), "zero dimension in {dims}");
        let mut data = Vec::with_capacity(dims.len());
        for n in 0..dims.n {
            for y in 0..dims.h {
                for x in 0..dims.w {
                    for c in 0..dims.c {
                        data.push(f(n, y, x, c));
                    }
                }
            }
        }
        Tensor4 { dims, data }
    }

    #[inline]
    pub fn dims(&self) -> Dims4 {
        self.dims
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn offset(&self, n: usize, y: usize, x: usize, c: usize) -> usize {
        ((n * self.dims.h + y) * self.dims.w + x) * self.dims.c + c
    }

    #[inline]
    pub fn at(&self, n: usize, y: usize, x: usize, c: usize) -> T {
        self.data[self.offset(n, y, x, c)]
    }

    /// One sample as a `(1, h, w, c)` tensor.
    pub fn sample(&self, n: usize) -> Tensor4<T> {
        let per = self.dims.h * self.dims.w * self.dims.c;
        Tensor4 {
            dims: Dims4::new(1, self.dims.h, self.dims.w, self.dims.c),
            data: self.data[n * per..(n + 1) * per].to_vec(),
        }
    }

    /// Concatenate tensors along the batch axis.
    pub fn stack(parts: &[&Tensor4<T>]) -> Result<Tensor4<T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("stack", "no tensors"))?
            .dims;
        let mut data = Vec::new();
        let mut n = 0;
        for p in parts {
            if (p.dims.h, p.dims.w, p.dims.c) != (first.h, first.w, first.c) {
                return Err(Error::shape("stack", format!("{} vs {}", p.dims, first)));
            }
            n += p.dims.n;
            data.extend_from_slice(&p.data);
        }
        Tensor4::new(Dims4::new(n, first.h, first.w, first.c), data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor4<T> {
        Tensor4 {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor4<U> {
        Tensor4 {
            dims: self.dims,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Per-sample channel vector, `(n, c)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelVec<T = f64> {
    n: usize,
    c: usize,
    data: Vec<T>,
}

impl<T: Real> ChannelVec<T> {
    pub fn new(n: usize, c: usize, data: Vec<T>) -> Result<Self> {
        if n == 0 || c == 0 || data.len() != n * c {
            return Err(Error::shape(
                "channel_vec",
                format!("{} values for dims {n}x{c}", data.len()),
            ));
        }
        Ok(ChannelVec { n, c, data })
    }

    pub fn zeros(n: usize, c: usize) -> Self {
        Self::filled(n, c, T::zero())
    }

    pub fn filled(n: usize, c: usize, value: T) -> Self {
        assert!(n > 0 && c > 0, "zero dimension in channel vector");
        ChannelVec {
            n,
            c,
            data: vec![value; n * c],
        }
    }

    pub fn from_fn(n: usize, c: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        assert!(n > 0 && c > 0, "zero dimension in channel vector");
        let mut data = Vec::with_capacity(n * c);
        for i in 0..n {
            for j in 0..c {
                data.push(f(i, j));
            }
        }
        ChannelVec { n, c, data }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn c(&self) -> usize {
        self.c
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize) -> T {
        self.data[n * self.c + c]
    }

    #[inline]
    pub fn row(&self, n: usize) -> &[T] {
        &self.data[n * self.c..(n + 1) * self.c]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> ChannelVec<T> {
        ChannelVec {
            n: self.n,
            c: self.c,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Dense `(rows, cols)` row-major matrix. Fully connected weights use
/// `rows = c_in`, `cols = c_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T = f64> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::shape(
                "matrix",
                format!("{} values for dims {rows}x{cols}", data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "zero dimension in matrix");
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(size: usize) -> Self {
        let mut m = Self::zeros(size, size);
        for i in 0..size {
            m.data[i * size + i] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        assert!(rows > 0 && cols > 0, "zero dimension in matrix");
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Spatial convolution weights, `(kh, kw, c_in, c_out)` row-major, with the
/// sampling geometry the convolution uses.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel<T = f64> {
    kh: usize,
    kw: usize,
    c_in: usize,
    c_out: usize,
    dilation: usize,
    stride: usize,
    weights: Vec<T>,
}

impl<T: Real> ConvKernel<T> {
    pub fn new(
        (kh, kw, c_in, c_out): (usize, usize, usize, usize),
        dilation: usize,
        stride: usize,
        weights: Vec<T>,
    ) -> Result<Self> {
        if kh == 0 || kw == 0 || c_in == 0 || c_out == 0 {
            return Err(Error::shape("conv_kernel", "zero dimension"));
        }
        if weights.len() != kh * kw * c_in * c_out {
            return Err(Error::shape(
                "conv_kernel",
                format!(
                    "{} weights for dims {kh}x{kw}x{c_in}x{c_out}",
                    weights.len()
                ),
            ));
        }
        if dilation == 0 || stride == 0 {
            return Err(Error::Unsupported(
                "dilation and stride must be at least 1".into(),
            ));
        }
        Ok(ConvKernel {
            kh,
            kw,
            c_in,
            c_out,
            dilation,
            stride,
            weights,
        })
    }

    pub fn zeros(shape: (usize, usize, usize, usize), dilation: usize, stride: usize) -> Result<Self> {
        let len = shape.0 * shape.1 * shape.2 * shape.3;
        Self::new(shape, dilation, stride, vec![T::zero(); len])
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.kh, self.kw, self.c_in, self.c_out)
    }

    #[inline]
    pub fn c_in(&self) -> usize {
        self.c_in
    }

    #[inline]
    pub fn c_out(&self) -> usize {
        self.c_out
    }

    #[inline]
    pub fn dilation(&self) -> usize {
        self.dilation
    }

    #[inline]
    pub fn stride(&self) -> usize {
        self.stride
    }

    /// Receptive extent of one spatial axis: `dilation * (k - 1) + 1`.
    pub fn extent(&self) -> (usize, usize) {
        (
            self.dilation * (self.kh - 1) + 1,
            self.dilation * (self.kw - 1) + 1,
        )
    }

    #[inline]
    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    #[inline]
    pub fn weights_mut(&mut self) -> &mut [T] {
        &mut self.weights
    }

    #[inline]
    pub fn at(&self, ky: usize, kx: usize, ci: usize, co: usize) -> T {
        self.weights[((ky * self.kw + kx) * self.c_in + ci) * self.c_out + co]
    }

    /// Same geometry with every weight replaced.
    pub fn with_weights(&self, weights: Vec<T>) -> Result<Self> {
        Self::new(self.shape(), self.dilation, self.stride, weights)
    }
}
