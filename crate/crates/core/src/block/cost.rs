use crate::param::Parameterized;
use crate::real::Real;
use crate::tensor::Dims4;

use super::MSConvState;

/// Parameter and operation counts for one block evaluation.
///
/// One unit is one scalar multiply-accumulate or one scalar element-wise
/// operation. Convolution taps that land in the zero padding are counted,
/// matching the dense `H_out·W_out·C_out·k·k·C_in` convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CostReport {
    pub params: usize,
    /// Both branches: `2 · N·H'·W'·C · 9·C_in`.
    pub conv_macs: usize,
    /// Product and difference maps: `2 · N·H'·W'·C`.
    pub fusion_ops: usize,
    /// Spatial sums plus the `1/(H'·W')` scaling: `N·H'·W'·C + N·C`.
    pub pool_ops: usize,
    /// Reduce and expand projections with bias: `N·(C·d + d) + N·(d·2C + 2C)`.
    pub fc_ops: usize,
    /// ReLU on `z`, `â − b̂`, sigmoid: `N·d + 2·N·C`.
    pub attention_ops: usize,
    /// `c ⊙ U4` and `+ U2`: `2 · N·H'·W'·C`.
    pub output_ops: usize,
}

impl CostReport {
    pub fn flops(&self) -> usize {
        self.conv_macs + self.fusion_ops + self.pool_ops + self.fc_ops + self.attention_ops + self.output_ops
    }
}

impl std::ops::Add for CostReport {
    type Output = CostReport;

    fn add(self, o: CostReport) -> CostReport {
        CostReport {
            params: self.params + o.params,
            conv_macs: self.conv_macs + o.conv_macs,
            fusion_ops: self.fusion_ops + o.fusion_ops,
            pool_ops: self.pool_ops + o.pool_ops,
            fc_ops: self.fc_ops + o.fc_ops,
            attention_ops: self.attention_ops + o.attention_ops,
            output_ops: self.output_ops + o.output_ops,
        }
    }
}

/// Dense MAC count of one same-padded convolution.
pub fn conv_macs(input: Dims4, kh: usize, kw: usize, c_out: usize, stride: usize) -> usize {
    input.n * input.h.div_ceil(stride) * input.w.div_ceil(stride) * c_out * kh * kw * input.c
}

/// Closed-form cost of one MSConv block on an input of `input` dims.
pub fn count_params_flops<T: Real>(st: &MSConvState<T>, input: Dims4) -> CostReport {
    let (kh, kw, _, c) = st.k3.shape();
    let stride = st.k3.stride();
    let n = input.n;
    let positions = n * input.h.div_ceil(stride) * input.w.div_ceil(stride);
    let d = st.reduced();
    CostReport {
        params: st.param_count(),
        conv_macs: 2 * conv_macs(input, kh, kw, c, stride),
        fusion_ops: 2 * positions * c,
        pool_ops: positions * c + n * c,
        fc_ops: n * (c * d + d) + n * (d * 2 * c + 2 * c),
        attention_ops: n * d + 2 * n * c,
        output_ops: 2 * positions * c,
    }
}
