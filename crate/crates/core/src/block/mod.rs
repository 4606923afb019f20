//! The MSConv block.
//!
//! Two "same"-padded 3×3 branches (the second dilated) produce aligned maps
//! `U1` and `U2`. Their product `U3 = U1 ⊙ U2` is pooled into a channel
//! attention `c = σ(â − b̂)`, and the output reweights their difference:
//!
//! ```text
//! V = U2 + c ⊙ (U1 − U2)
//! ```
//!
//! which is the two-branch softmax fusion `a·U1 + b·U2` (with `a + b = 1`)
//! rewritten with a sigmoid. [`FusionKind`] selects the block itself, the
//! softmax-weighted reference and the ablation variants.

mod cost;
mod forward;
mod noise;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::grad::{ChanVar, KernelVar, MatVar, NodeId, Tape, Var};
use crate::param::{he_normal, join, BoundParams, ParamRole, Parameterized};
use crate::real::Real;
use crate::tensor::{ChannelVec, ConvKernel, Matrix};

pub use cost::{conv_macs, count_params_flops, CostReport};
pub use forward::{
    ablate, block_forward_tape, equivalence_check, forward_traced, msconv_forward, skconv_forward,
    Trace,
};
pub use noise::so_noise_test;

pub const DEFAULT_REDUCTION: usize = 16;
pub const DEFAULT_MIN_WIDTH: usize = 32;

/// Width of the attention bottleneck: `max(floor(channels / reduction), min_width)`.
pub fn reduced_width(channels: usize, reduction: usize, min_width: usize) -> usize {
    (channels / reduction).max(min_width)
}

/// How the two branch maps are fused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FusionKind {
    /// Attention pooled from `U1 ⊙ U2`; output `U2 + c ⊙ (U1 − U2)`.
    MsConv,
    /// Attention pooled from `U1 + U2`; subtraction kept.
    MsConvSum,
    /// No product map: attention pooled from `U1 − U2`; subtraction kept.
    NoMo,
    /// Attention pooled from `U1 ⊙ U2`; output `U2 + c ⊙ (U1 + U2)`.
    NoSo,
    /// Attention pooled from `U1 + U2`; output `U2 + c ⊙ (U1 + U2)`.
    NoMoNoSo,
    /// Softmax-weighted selective-kernel fusion `a ⊙ U1 + b ⊙ U2`,
    /// attention pooled from `U1 + U2`.
    SkConvReference,
}

impl FusionKind {
    pub const ALL: [FusionKind; 6] = [
        FusionKind::MsConv,
        FusionKind::MsConvSum,
        FusionKind::NoMo,
        FusionKind::NoSo,
        FusionKind::NoMoNoSo,
        FusionKind::SkConvReference,
    ];

    /// The five rows of the MO/SO ablation table.
    pub const ABLATION: [FusionKind; 5] = [
        FusionKind::NoMo,
        FusionKind::NoSo,
        FusionKind::NoMoNoSo,
        FusionKind::MsConvSum,
        FusionKind::MsConv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionKind::MsConv => "msconv",
            FusionKind::MsConvSum => "msconv_sum",
            FusionKind::NoMo => "no_mo",
            FusionKind::NoSo => "no_so",
            FusionKind::NoMoNoSo => "no_mo_no_so",
            FusionKind::SkConvReference => "skconv",
        }
    }
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FusionKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown fusion kind {s:?}")))
    }
}

/// Branch dilations: K3 = dilation 1, K5 = dilation 2, K7 = dilation 3,
/// all with 3×3 weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelCombo {
    K3K3,
    #[default]
    K3K5,
    K5K3,
    K5K7,
}

impl KernelCombo {
    pub fn dilations(self) -> (usize, usize) {
        match self {
            KernelCombo::K3K3 => (1, 1),
            KernelCombo::K3K5 => (1, 2),
            KernelCombo::K5K3 => (2, 1),
            KernelCombo::K5K7 => (2, 3),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelCombo::K3K3 => "k3k3",
            KernelCombo::K3K5 => "k3k5",
            KernelCombo::K5K3 => "k5k3",
            KernelCombo::K5K7 => "k5k7",
        }
    }
}

impl FromStr for KernelCombo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            KernelCombo::K3K3,
            KernelCombo::K3K5,
            KernelCombo::K5K3,
            KernelCombo::K5K7,
        ]
        .into_iter()
        .find(|k| k.name() == s.trim().to_ascii_lowercase())
        .ok_or_else(|| Error::InvalidArgument(format!("unknown kernel combination {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockConfig {
    pub c_in: usize,
    pub c_out: usize,
    pub stride: usize,
    pub combo: KernelCombo,
    pub reduction: usize,
    pub min_width: usize,
}

impl BlockConfig {
    pub fn new(c_in: usize, c_out: usize) -> Self {
        BlockConfig {
            c_in,
            c_out,
            stride: 1,
            combo: KernelCombo::default(),
            reduction: DEFAULT_REDUCTION,
            min_width: DEFAULT_MIN_WIDTH,
        }
    }

    pub fn reduced(&self) -> usize {
        reduced_width(self.c_out, self.reduction, self.min_width)
    }
}

/// Learnable parameters of one block. The softmax reference uses the same
/// set, so every fusion kind shares an identical initialisation.
#[derive(Debug, Clone, PartialEq)]
pub struct MSConvState<T: Real = f64> {
    pub k3: ConvKernel<T>,
    pub k5: ConvKernel<T>,
    /// `(C, d)`
    pub w_reduce: Matrix<T>,
    /// `(1, d)`
    pub b_reduce: ChannelVec<T>,
    /// `(d, 2C)`: columns `[0, C)` produce `â`, `[C, 2C)` produce `b̂`.
    pub w_expand: Matrix<T>,
    /// `(1, 2C)`
    pub b_expand: ChannelVec<T>,
    pub reduction: usize,
    pub min_width: usize,
}

pub type SKConvState<T = f64> = MSConvState<T>;

impl<T: Real> MSConvState<T> {
    pub fn zeros(cfg: &BlockConfig) -> Result<Self> {
        if cfg.c_in == 0 || cfg.c_out == 0 || cfg.reduction == 0 || cfg.stride == 0 {
            return Err(Error::InvalidArgument(format!("invalid block config {cfg:?}")));
        }
        let (d1, d2) = cfg.combo.dilations();
        let d = cfg.reduced();
        let c = cfg.c_out;
        Ok(MSConvState {
            k3: ConvKernel::zeros((3, 3, cfg.c_in, c), d1, cfg.stride)?,
            k5: ConvKernel::zeros((3, 3, cfg.c_in, c), d2, cfg.stride)?,
            w_reduce: Matrix::zeros(c, d),
            b_reduce: ChannelVec::zeros(1, d),
            w_expand: Matrix::zeros(d, 2 * c),
            b_expand: ChannelVec::zeros(1, 2 * c),
            reduction: cfg.reduction,
            min_width: cfg.min_width,
        })
    }

    /// He-normal weights and zero biases; each tensor drawn from its own
    /// stream keyed by `seed` and `prefix.name`.
    pub fn init(cfg: &BlockConfig, seed: u64, prefix: &str) -> Result<Self> {
        let mut st = Self::zeros(cfg)?;
        let c = cfg.c_out;
        let d = cfg.reduced();
        let conv_fan = 9 * cfg.c_in;
        let n3 = st.k3.weights().len();
        st.k3
            .weights_mut()
            .copy_from_slice(&he_normal(seed, &join(prefix, "k3"), conv_fan, n3));
        st.k5
            .weights_mut()
            .copy_from_slice(&he_normal(seed, &join(prefix, "k5"), conv_fan, n3));
        st.w_reduce
            .data_mut()
            .copy_from_slice(&he_normal(seed, &join(prefix, "w_reduce"), c, c * d));
        st.w_expand
            .data_mut()
            .copy_from_slice(&he_normal(seed, &join(prefix, "w_expand"), d, d * 2 * c));
        Ok(st)
    }

    pub fn channels(&self) -> usize {
        self.k3.c_out()
    }

    pub fn reduced(&self) -> usize {
        self.w_reduce.cols()
    }

    pub fn config(&self) -> BlockConfig {
        let combo = match (self.k3.dilation(), self.k5.dilation()) {
            (1, 1) => KernelCombo::K3K3,
            (2, 1) => KernelCombo::K5K3,
            (2, 3) => KernelCombo::K5K7,
            _ => KernelCombo::K3K5,
        };
        BlockConfig {
            c_in: self.k3.c_in(),
            c_out: self.k3.c_out(),
            stride: self.k3.stride(),
            combo,
            reduction: self.reduction,
            min_width: self.min_width,
        }
    }

    /// Register every parameter as a tape leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> BlockVars {
        BlockVars {
            k3: tape.leaf_kernel(self.k3.clone()),
            k5: tape.leaf_kernel(self.k5.clone()),
            w_reduce: tape.leaf_mat(self.w_reduce.clone()),
            b_reduce: tape.leaf_chan(self.b_reduce.clone()),
            w_expand: tape.leaf_mat(self.w_expand.clone()),
            b_expand: tape.leaf_chan(self.b_expand.clone()),
        }
    }
}

impl<T: Real> Parameterized<T> for MSConvState<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, ParamRole, &[usize], &[T])) {
        let (kh, kw, ci, co) = self.k3.shape();
        let kdims = [kh, kw, ci, co];
        f(&join(prefix, "k3"), ParamRole::Weight, &kdims, self.k3.weights());
        f(&join(prefix, "k5"), ParamRole::Weight, &kdims, self.k5.weights());
        f(
            &join(prefix, "w_reduce"),
            ParamRole::Weight,
            &[self.w_reduce.rows(), self.w_reduce.cols()],
            self.w_reduce.data(),
        );
        f(
            &join(prefix, "b_reduce"),
            ParamRole::Bias,
            &[self.b_reduce.c()],
            self.b_reduce.data(),
        );
        f(
            &join(prefix, "w_expand"),
            ParamRole::Weight,
            &[self.w_expand.rows(), self.w_expand.cols()],
            self.w_expand.data(),
        );
        f(
            &join(prefix, "b_expand"),
            ParamRole::Bias,
            &[self.b_expand.c()],
            self.b_expand.data(),
        );
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamRole, &mut [T])) {
        f(&join(prefix, "k3"), ParamRole::Weight, self.k3.weights_mut());
        f(&join(prefix, "k5"), ParamRole::Weight, self.k5.weights_mut());
        f(&join(prefix, "w_reduce"), ParamRole::Weight, self.w_reduce.data_mut());
        f(&join(prefix, "b_reduce"), ParamRole::Bias, self.b_reduce.data_mut());
        f(&join(prefix, "w_expand"), ParamRole::Weight, self.w_expand.data_mut());
        f(&join(prefix, "b_expand"), ParamRole::Bias, self.b_expand.data_mut());
    }
}

/// Tape handles of a bound [`MSConvState`].
#[derive(Debug, Clone, Copy)]
pub struct BlockVars {
    pub k3: KernelVar,
    pub k5: KernelVar,
    pub w_reduce: MatVar,
    pub b_reduce: ChanVar,
    pub w_expand: MatVar,
    pub b_expand: ChanVar,
}

impl BoundParams for BlockVars {
    fn nodes(&self) -> Vec<NodeId> {
        vec![
            self.k3.node(),
            self.k5.node(),
            self.w_reduce.node(),
            self.b_reduce.node(),
            self.w_expand.node(),
            self.b_expand.node(),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduction_rule() {
        assert_eq!(reduced_width(64, 16, 32), 32);
        assert_eq!(reduced_width(512, 16, 32), 32);
        assert_eq!(reduced_width(1024, 16, 32), 64);
        assert_eq!(reduced_width(1000, 16, 32), 62);
        assert_eq!(reduced_width(8, 16, 32), 32);
    }

    #[test]
    fn kinds_parse() {
        for k in FusionKind::ALL {
            assert_eq!(k.name().parse::<FusionKind>().unwrap(), k);
        }
        assert!("bogus".parse::<FusionKind>().is_err());
        assert_eq!("K5K7".parse::<KernelCombo>().unwrap().dilations(), (2, 3));
    }

    #[test]
    fn branch_kernels_share_shape() {
        for combo in ["k3k3", "k3k5", "k5k3", "k5k7"] {
            let mut cfg = BlockConfig::new(4, 6);
            cfg.combo = combo.parse().unwrap();
            let st = MSConvState::<f64>::init(&cfg, 1, "b").unwrap();
            assert_eq!(st.k3.shape(), st.k5.shape());
            assert_eq!(st.k3.weights().len(), st.k5.weights().len());
            assert_eq!(st.config(), cfg);
        }
    }

    #[test]
    fn init_depends_on_name_and_seed_only() {
        let cfg = BlockConfig::new(3, 4);
        let a = MSConvState::<f64>::init(&cfg, 9, "s0").unwrap();
        let b = MSConvState::<f64>::init(&cfg, 9, "s0").unwrap();
        let c = MSConvState::<f64>::init(&cfg, 9, "s1").unwrap();
        assert_eq!(a, b);
        assert_ne!(a.k3, c.k3);
        assert_ne!(a.k3.weights(), a.k5.weights());
        assert!(a.b_reduce.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn visit_order_matches_bind_order() {
        let st = MSConvState::<f64>::init(&BlockConfig::new(2, 3), 0, "").unwrap();
        let mut tape = Tape::new();
        let vars = st.bind(&mut tape);
        let mut lens = vec![];
        st.visit("", &mut |_, _, _, d| lens.push(d.len()));
        let bound: Vec<usize> = vars
            .nodes()
            .iter()
            .map(|&n| tape.input_value(n).flat().len())
            .collect();
        assert_eq!(lens, bound);
        assert_eq!(
            st.param_names(),
            ["k3", "k5", "w_reduce", "b_reduce", "w_expand", "b_expand"]
        );
    }
}
