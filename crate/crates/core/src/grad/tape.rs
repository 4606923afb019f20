use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{self, ChannelVec, ConvKernel, Matrix, Tensor4};

use super::rules;
use super::{ChanVar, KernelVar, MapVar, MatVar, NodeId, ScalarVar, Value, Var};

/// Backward rule for an operation defined outside the engine.
///
/// `inputs` are the input values in registration order; the rule returns
/// one gradient per input with identical shape.
pub trait Backward<T: Real>: Send + Sync {
    fn name(&self) -> &'static str;
    fn backward(&self, inputs: &[&Value<T>], output: &Value<T>, grad: &Value<T>) -> Vec<Value<T>>;
}

pub(crate) enum Op<T: Real> {
    Leaf,
    Conv2d { x: NodeId, k: NodeId },
    Mul { x: NodeId, y: NodeId },
    Sub { x: NodeId, y: NodeId },
    Add { x: NodeId, y: NodeId },
    ReluMap { x: NodeId },
    Gap { x: NodeId },
    Fc { x: NodeId, w: NodeId, b: NodeId },
    Relu { x: NodeId },
    Sigmoid { x: NodeId },
    ChanSub { x: NodeId, y: NodeId },
    Split { x: NodeId, at: usize, right: bool },
    SoftmaxPair { a_hat: NodeId, b_hat: NodeId, second: bool },
    ScaleChannels { s: NodeId, u: NodeId },
    NormalizeRows { x: NodeId },
    Sum { x: NodeId },
    Custom { inputs: Vec<NodeId>, rule: Box<dyn Backward<T>> },
}

impl<T: Real> Op<T> {
    pub(crate) fn tag(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::Mul { .. } => "ew_mul",
            Op::Sub { .. } => "ew_sub",
            Op::Add { .. } => "ew_add",
            Op::ReluMap { .. } => "relu_map",
            Op::Gap { .. } => "global_avg_pool",
            Op::Fc { .. } => "fc",
            Op::Relu { .. } => "relu",
            Op::Sigmoid { .. } => "sigmoid",
            Op::ChanSub { .. } => "chan_sub",
            Op::Split { .. } => "split",
            Op::SoftmaxPair { .. } => "softmax_pair",
            Op::ScaleChannels { .. } => "scale_channels",
            Op::NormalizeRows { .. } => "normalize_rows",
            Op::Sum { .. } => "sum",
            Op::Custom { rule, .. } => rule.name(),
        }
    }
}

pub(crate) struct Record<T: Real> {
    pub(crate) op: Op<T>,
    pub(crate) value: Value<T>,
}

/// Ordered forward records of one pass. Records only ever reference
/// earlier records, so the list is topologically sorted by construction.
pub struct Tape<T: Real = f64> {
    records: Vec<Record<T>>,
    consumed: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            records: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Op tags in recording order.
    pub fn op_tags(&self) -> Vec<&'static str> {
        self.records.iter().map(|r| r.op.tag()).collect()
    }

    pub fn value<V: Var>(&self, v: V) -> &V::Out<T> {
        V::extract(&self.records[v.node().0].value)
    }

    fn push(&mut self, op: Op<T>, value: Value<T>) -> Result<NodeId> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        self.records.push(Record { op, value });
        Ok(NodeId(self.records.len() - 1))
    }

    fn push_leaf(&mut self, value: Value<T>) -> NodeId {
        // Leaves are recorded even on a consumed tape; `backward` rejects reuse.
        self.records.push(Record {
            op: Op::Leaf,
            value,
        });
        NodeId(self.records.len() - 1)
    }

    fn get(&self, id: NodeId) -> &Value<T> {
        &self.records[id.0].value
    }

    fn map(&self, v: MapVar) -> &Tensor4<T> {
        self.value(v)
    }

    fn chan(&self, v: ChanVar) -> &ChannelVec<T> {
        self.value(v)
    }

    pub fn leaf_map(&mut self, t: Tensor4<T>) -> MapVar {
        MapVar(self.push_leaf(Value::Map(t)))
    }

    pub fn leaf_chan(&mut self, t: ChannelVec<T>) -> ChanVar {
        ChanVar(self.push_leaf(Value::Chan(t)))
    }

    pub fn leaf_mat(&mut self, t: Matrix<T>) -> MatVar {
        MatVar(self.push_leaf(Value::Mat(t)))
    }

    pub fn leaf_kernel(&mut self, k: ConvKernel<T>) -> KernelVar {
        KernelVar(self.push_leaf(Value::Kernel(k)))
    }

    pub fn conv2d(&mut self, x: MapVar, k: KernelVar) -> Result<MapVar> {
        let out = tensor::conv2d(self.map(x), self.value(k))?;
        Ok(MapVar(self.push(Op::Conv2d { x: x.0, k: k.0 }, Value::Map(out))?))
    }

    pub fn mul(&mut self, x: MapVar, y: MapVar) -> Result<MapVar> {
        let out = tensor::ew_mul(self.map(x), self.map(y))?;
        Ok(MapVar(self.push(Op::Mul { x: x.0, y: y.0 }, Value::Map(out))?))
    }

    pub fn sub(&mut self, x: MapVar, y: MapVar) -> Result<MapVar> {
        let out = tensor::ew_sub(self.map(x), self.map(y))?;
        Ok(MapVar(self.push(Op::Sub { x: x.0, y: y.0 }, Value::Map(out))?))
    }

    pub fn add(&mut self, x: MapVar, y: MapVar) -> Result<MapVar> {
        let out = tensor::ew_add(self.map(x), self.map(y))?;
        Ok(MapVar(self.push(Op::Add { x: x.0, y: y.0 }, Value::Map(out))?))
    }

    pub fn relu_map(&mut self, x: MapVar) -> Result<MapVar> {
        let out = tensor::relu_map(self.map(x));
        Ok(MapVar(self.push(Op::ReluMap { x: x.0 }, Value::Map(out))?))
    }

    pub fn global_avg_pool(&mut self, x: MapVar) -> Result<ChanVar> {
        let out = tensor::global_avg_pool(self.map(x));
        Ok(ChanVar(self.push(Op::Gap { x: x.0 }, Value::Chan(out))?))
    }

    pub fn fc(&mut self, x: ChanVar, w: MatVar, b: ChanVar) -> Result<ChanVar> {
        let out = tensor::fc(self.chan(x), self.value(w), self.chan(b))?;
        Ok(ChanVar(self.push(
            Op::Fc {
                x: x.0,
                w: w.0,
                b: b.0,
            },
            Value::Chan(out),
        )?))
    }

    pub fn relu(&mut self, x: ChanVar) -> Result<ChanVar> {
        let out = tensor::relu(self.chan(x));
        Ok(ChanVar(self.push(Op::Relu { x: x.0 }, Value::Chan(out))?))
    }

    pub fn sigmoid(&mut self, x: ChanVar) -> Result<ChanVar> {
        let out = tensor::sigmoid(self.chan(x));
        Ok(ChanVar(self.push(Op::Sigmoid { x: x.0 }, Value::Chan(out))?))
    }

    pub fn chan_sub(&mut self, x: ChanVar, y: ChanVar) -> Result<ChanVar> {
        let out = tensor::chan_sub(self.chan(x), self.chan(y))?;
        Ok(ChanVar(self.push(Op::ChanSub { x: x.0, y: y.0 }, Value::Chan(out))?))
    }

    /// Split each row at column `at` into two tape values.
    pub fn split(&mut self, x: ChanVar, at: usize) -> Result<(ChanVar, ChanVar)> {
        let (l, r) = tensor::split_channels(self.chan(x), at)?;
        let left = self.push(
            Op::Split {
                x: x.0,
                at,
                right: false,
            },
            Value::Chan(l),
        )?;
        let right = self.push(
            Op::Split {
                x: x.0,
                at,
                right: true,
            },
            Value::Chan(r),
        )?;
        Ok((ChanVar(left), ChanVar(right)))
    }

    pub fn softmax_pair(&mut self, a_hat: ChanVar, b_hat: ChanVar) -> Result<(ChanVar, ChanVar)> {
        let (a, b) = tensor::softmax_pair(self.chan(a_hat), self.chan(b_hat))?;
        let a = self.push(
            Op::SoftmaxPair {
                a_hat: a_hat.0,
                b_hat: b_hat.0,
                second: false,
            },
            Value::Chan(a),
        )?;
        let b = self.push(
            Op::SoftmaxPair {
                a_hat: a_hat.0,
                b_hat: b_hat.0,
                second: true,
            },
            Value::Chan(b),
        )?;
        Ok((ChanVar(a), ChanVar(b)))
    }

    /// Per-sample channel scaling, `s` broadcast over every spatial position.
    pub fn scale_channels(&mut self, s: ChanVar, u: MapVar) -> Result<MapVar> {
        let out = tensor::scale_channels(self.chan(s), self.map(u))?;
        Ok(MapVar(self.push(Op::ScaleChannels { s: s.0, u: u.0 }, Value::Map(out))?))
    }

    pub fn l2_normalize(&mut self, x: ChanVar) -> Result<ChanVar> {
        let out = tensor::l2_normalize(self.chan(x));
        Ok(ChanVar(self.push(Op::NormalizeRows { x: x.0 }, Value::Chan(out))?))
    }

    pub fn normalize_rows(&mut self, x: MatVar) -> Result<MatVar> {
        let m = self.value(x);
        let (data, _) = tensor::l2_normalize_rows(m.rows(), m.cols(), m.data());
        let out = Matrix::new(m.rows(), m.cols(), data)?;
        Ok(MatVar(self.push(Op::NormalizeRows { x: x.0 }, Value::Mat(out))?))
    }

    pub fn sum(&mut self, x: MapVar) -> Result<ScalarVar> {
        let s = self.map(x).data().iter().copied().sum::<T>();
        Ok(ScalarVar(self.push(Op::Sum { x: x.0 }, Value::Scalar(s))?))
    }

    /// Record an externally computed operation with its own backward rule.
    pub fn custom(
        &mut self,
        inputs: &[NodeId],
        output: Value<T>,
        rule: Box<dyn Backward<T>>,
    ) -> Result<NodeId> {
        self.push(
            Op::Custom {
                inputs: inputs.to_vec(),
                rule,
            },
            output,
        )
    }

    pub fn custom_scalar(
        &mut self,
        inputs: &[NodeId],
        output: T,
        rule: Box<dyn Backward<T>>,
    ) -> Result<ScalarVar> {
        Ok(ScalarVar(self.custom(inputs, Value::Scalar(output), rule)?))
    }

    pub fn input_value(&self, id: NodeId) -> &Value<T> {
        self.get(id)
    }

    /// Propagate `seed · ∂loss` back through every record.
    ///
    /// A tape supports exactly one backward pass; later calls and later
    /// forward ops return [`Error::TapeConsumed`].
    pub fn backward(&mut self, loss: ScalarVar, seed: T) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        self.consumed = true;
        let mut grads: Vec<Option<Value<T>>> = vec![None; self.records.len()];
        grads[loss.0 .0] = Some(Value::Scalar(seed));

        for idx in (0..self.records.len()).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let rec = &self.records[idx];
            for (input, contribution) in rules::apply(&self.records, rec, &g) {
                accumulate(&mut grads, &self.records, input, contribution);
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn accumulate<T: Real>(
    grads: &mut [Option<Value<T>>],
    records: &[Record<T>],
    id: NodeId,
    contribution: Contribution<T>,
) {
    let slot = grads[id.0].get_or_insert_with(|| records[id.0].value.zeros_like());
    let dst = slot.flat_mut();
    match contribution {
        Contribution::Full(v) => {
            debug_assert_eq!(dst.len(), v.len());
            for (d, s) in dst.iter_mut().zip(v) {
                *d += s;
            }
        }
        Contribution::Columns { cols, offset, values } => {
            let width = values.len() / (dst.len() / cols);
            for (row, chunk) in values.chunks(width).enumerate() {
                for (j, &s) in chunk.iter().enumerate() {
                    dst[row * cols + offset + j] += s;
                }
            }
        }
    }
}

/// Gradient contribution for one input of one record.
pub(crate) enum Contribution<T> {
    Full(Vec<T>),
    /// Only the column block `[offset, offset + width)` of each row.
    Columns {
        cols: usize,
        offset: usize,
        values: Vec<T>,
    },
}

/// Gradients of every tape value reached from the loss.
pub struct Gradients<T: Real> {
    grads: Vec<Option<Value<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get<V: Var>(&self, v: V) -> Option<&V::Out<T>> {
        self.grads[v.node().0].as_ref().map(V::extract)
    }

    pub fn value(&self, id: NodeId) -> Option<&Value<T>> {
        self.grads[id.0].as_ref()
    }

    /// Flat gradient of a node, or `None` when no path reaches it.
    pub fn flat(&self, id: NodeId) -> Option<&[T]> {
        self.grads[id.0].as_ref().map(Value::flat)
    }
}
