//! Reverse-mode differentiation over an explicit tape.
//!
//! Every forward operation on a [`Tape`] appends one record holding the op
//! tag, the ids of its inputs (whose values stay on the tape and serve as
//! the saved tensors) and the computed output. [`Tape::backward`] walks the
//! records in reverse, applying each op's analytic rule and summing
//! contributions where a value fans out to several consumers.
//!
//! ```
//! use msconv::grad::Tape;
//! use msconv::{Dims4, Tensor4};
//!
//! let d = Dims4::new(1, 1, 1, 1);
//! let mut tape = Tape::new();
//! let x = tape.leaf_map(Tensor4::new(d, vec![2.0]).unwrap());
//! let y = tape.leaf_map(Tensor4::new(d, vec![3.0]).unwrap());
//! let out = tape.mul(x, y).unwrap();
//! let loss = tape.sum(out).unwrap();
//! let grads = tape.backward(loss, 1.0).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[3.0]);
//! assert_eq!(grads.get(y).unwrap().data(), &[2.0]);
//! ```

pub mod check;
mod rules;
mod tape;

use crate::real::Real;
use crate::tensor::{ChannelVec, ConvKernel, Matrix, Tensor4};

pub use check::{finite_diff_check, GradCheckReport};
pub use tape::{Backward, Gradients, Tape};

/// Index of a record on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A value held on the tape, or the gradient of one.
#[derive(Debug, Clone, PartialEq)]
pub enum Value<T> {
    Map(Tensor4<T>),
    Chan(ChannelVec<T>),
    Mat(Matrix<T>),
    Kernel(ConvKernel<T>),
    Scalar(T),
}

impl<T: Real> Value<T> {
    pub fn flat(&self) -> &[T] {
        match self {
            Value::Map(t) => t.data(),
            Value::Chan(t) => t.data(),
            Value::Mat(t) => t.data(),
            Value::Kernel(t) => t.weights(),
            Value::Scalar(v) => std::slice::from_ref(v),
        }
    }

    pub fn flat_mut(&mut self) -> &mut [T] {
        match self {
            Value::Map(t) => t.data_mut(),
            Value::Chan(t) => t.data_mut(),
            Value::Mat(t) => t.data_mut(),
            Value::Kernel(t) => t.weights_mut(),
            Value::Scalar(v) => std::slice::from_mut(v),
        }
    }

    pub fn zeros_like(&self) -> Value<T> {
        let mut v = self.clone();
        v.flat_mut().iter_mut().for_each(|x| *x = T::zero());
        v
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Value::Map(_) => "map",
            Value::Chan(_) => "chan",
            Value::Mat(_) => "mat",
            Value::Kernel(_) => "kernel",
            Value::Scalar(_) => "scalar",
        }
    }
}

/// Typed handle to a tape value.
pub trait Var: Copy {
    type Out<T: Real>;

    fn node(self) -> NodeId;
    fn extract<T: Real>(v: &Value<T>) -> &Self::Out<T>;
}

macro_rules! var_type {
    ($name:ident, $variant:ident, $out:ident) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        pub struct $name(pub(crate) NodeId);

        impl Var for $name {
            type Out<T: Real> = $out<T>;

            #[inline]
            fn node(self) -> NodeId {
                self.0
            }

            fn extract<T: Real>(v: &Value<T>) -> &$out<T> {
                match v {
                    Value::$variant(x) => x,
                    other => unreachable!(
                        concat!(stringify!($name), " handle holds a {} value"),
                        other.kind()
                    ),
                }
            }
        }
    };
}

type Same<T> = T;

var_type!(MapVar, Map, Tensor4);
var_type!(ChanVar, Chan, ChannelVec);
var_type!(MatVar, Mat, Matrix);
var_type!(KernelVar, Kernel, ConvKernel);
var_type!(ScalarVar, Scalar, Same);
