//! Desk-scale residual backbone with MSConv units.
//!
//! stem conv → ReLU → stages of `relu(block(x) + shortcut(x))` → global
//! average pool → FC → L2 normalisation. The shortcut is the identity when
//! shapes match and a strided 1×1 projection otherwise.

use crate::block::{
    block_forward_tape, count_params_flops, BlockConfig, BlockVars, CostReport, FusionKind,
    KernelCombo, MSConvState, DEFAULT_MIN_WIDTH, DEFAULT_REDUCTION,
};
use crate::error::{Error, Result};
use crate::grad::{ChanVar, KernelVar, MapVar, MatVar, NodeId, Tape, Var};
use crate::param::{he_normal, join, BoundParams, ParamRole, Parameterized};
use crate::real::Real;
use crate::tensor::{ChannelVec, ConvKernel, Dims4, Matrix, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageSpec {
    pub blocks: usize,
    pub channels: usize,
    pub stride: usize,
    pub kind: FusionKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TinyNetConfig {
    pub in_channels: usize,
    pub stem_channels: usize,
    pub stem_stride: usize,
    pub stages: Vec<StageSpec>,
    pub embed_dim: usize,
    pub combo: KernelCombo,
    pub reduction: usize,
    pub min_width: usize,
}

impl Default for TinyNetConfig {
    fn default() -> Self {
        TinyNetConfig {
            in_channels: 3,
            stem_channels: 16,
            stem_stride: 1,
            stages: vec![StageSpec {
                blocks: 1,
                channels: 32,
                stride: 2,
                kind: FusionKind::MsConv,
            }],
            embed_dim: 64,
            combo: KernelCombo::K3K5,
            reduction: DEFAULT_REDUCTION,
            min_width: DEFAULT_MIN_WIDTH,
        }
    }
}

impl TinyNetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.in_channels == 0 || self.stem_channels == 0 || self.embed_dim == 0 {
            return bad("channel counts must be positive".into());
        }
        if self.stem_stride == 0 {
            return bad("stem stride must be positive".into());
        }
        if self.stages.is_empty() {
            return bad("at least one stage is required".into());
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.blocks == 0 || s.channels == 0 || s.stride == 0 {
                return bad(format!("stage {i} needs positive blocks, channels and stride"));
            }
        }
        if self.reduction == 0 {
            return bad("reduction ratio must be positive".into());
        }
        Ok(())
    }

    /// Product of every stride in the network.
    pub fn total_stride(&self) -> usize {
        self.stem_stride * self.stages.iter().map(|s| s.stride).product::<usize>()
    }

    pub fn with_kind(&self, kind: FusionKind) -> TinyNetConfig {
        let mut c = self.clone();
        for s in &mut c.stages {
            s.kind = kind;
        }
        c
    }

    /// `(c_in, block config, kind)` for every residual unit in order.
    fn units(&self) -> Vec<BlockConfig> {
        let mut out = Vec::new();
        let mut c_in = self.stem_channels;
        for s in &self.stages {
            for b in 0..s.blocks {
                out.push(BlockConfig {
                    c_in,
                    c_out: s.channels,
                    stride: if b == 0 { s.stride } else { 1 },
                    combo: self.combo,
                    reduction: self.reduction,
                    min_width: self.min_width,
                });
                c_in = s.channels;
            }
        }
        out
    }

    fn unit_kinds(&self) -> Vec<FusionKind> {
        self.stages
            .iter()
            .flat_map(|s| std::iter::repeat_n(s.kind, s.blocks))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualUnit<T: Real> {
    pub block: MSConvState<T>,
    pub projection: Option<ConvKernel<T>>,
    pub kind: FusionKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyNet<T: Real = f64> {
    pub config: TinyNetConfig,
    pub stem: ConvKernel<T>,
    pub units: Vec<ResidualUnit<T>>,
    /// `(C_last, embed_dim)`
    pub w_embed: Matrix<T>,
    /// `(1, embed_dim)`
    pub b_embed: ChannelVec<T>,
}

fn unit_prefix(i: usize) -> String {
    format!("unit{i}")
}

impl<T: Real> TinyNet<T> {
    pub fn init(config: &TinyNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let ci = config.in_channels;
        let stem_len = 9 * ci * config.stem_channels;
        let stem = ConvKernel::new(
            (3, 3, ci, config.stem_channels),
            1,
            config.stem_stride,
            he_normal(seed, "stem", 9 * ci, stem_len),
        )?;
        let mut units = Vec::new();
        for (i, (bc, kind)) in config.units().into_iter().zip(config.unit_kinds()).enumerate() {
            let prefix = unit_prefix(i);
            let block = MSConvState::init(&bc, seed, &join(&prefix, "block"))?;
            let projection = if bc.c_in != bc.c_out || bc.stride != 1 {
                Some(ConvKernel::new(
                    (1, 1, bc.c_in, bc.c_out),
                    1,
                    bc.stride,
                    he_normal(seed, &join(&prefix, "proj"), bc.c_in, bc.c_in * bc.c_out),
                )?)
            } else {
                None
            };
            units.push(ResidualUnit {
                block,
                projection,
                kind,
            });
        }
        let c_last = config.stages.last().expect("validated").channels;
        let w_embed = Matrix::new(
            c_last,
            config.embed_dim,
            he_normal(seed, "w_embed", c_last, c_last * config.embed_dim),
        )?;
        Ok(TinyNet {
            config: config.clone(),
            stem,
            units,
            w_embed,
            b_embed: ChannelVec::zeros(1, config.embed_dim),
        })
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> NetVars {
        let stem = tape.leaf_kernel(self.stem.clone());
        let units = self
            .units
            .iter()
            .map(|u| {
                (
                    u.block.bind(tape),
                    u.projection.as_ref().map(|p| tape.leaf_kernel(p.clone())),
                )
            })
            .collect();
        NetVars {
            stem,
            units,
            w_embed: tape.leaf_mat(self.w_embed.clone()),
            b_embed: tape.leaf_chan(self.b_embed.clone()),
        }
    }

    fn check_input(&self, d: Dims4) -> Result<()> {
        if d.c != self.config.in_channels {
            return Err(Error::shape(
                "tinynet_forward",
                format!("input has {} channels, expected {}", d.c, self.config.in_channels),
            ));
        }
        let s = self.config.total_stride();
        if d.h % s != 0 || d.w % s != 0 {
            return Err(Error::Config(format!(
                "input {}x{} not divisible by cumulative stride {s}",
                d.h, d.w
            )));
        }
        Ok(())
    }

    /// Record the backbone up to the pre-normalisation embedding.
    pub fn forward_raw_tape(&self, tape: &mut Tape<T>, vars: &NetVars, x: MapVar) -> Result<ChanVar> {
        self.check_input(tape.value(x).dims())?;
        let h = tape.conv2d(x, vars.stem)?;
        let mut h = tape.relu_map(h)?;
        for (unit, (bv, pv)) in self.units.iter().zip(&vars.units) {
            let v = block_forward_tape(tape, unit.kind, h, bv)?;
            let shortcut = match pv {
                Some(p) => tape.conv2d(h, *p)?,
                None => h,
            };
            let sum = tape.add(v, shortcut)?;
            h = tape.relu_map(sum)?;
        }
        let pooled = tape.global_avg_pool(h)?;
        tape.fc(pooled, vars.w_embed, vars.b_embed)
    }

    /// Record the full forward pass; returns the unit-norm embedding.
    pub fn forward_tape(&self, tape: &mut Tape<T>, vars: &NetVars, x: MapVar) -> Result<ChanVar> {
        let raw = self.forward_raw_tape(tape, vars, x)?;
        tape.l2_normalize(raw)
    }

    /// L2-normalised embeddings of a batch. A zero pre-normalisation vector
    /// maps to the zero vector.
    pub fn embed(&self, x: &Tensor4<T>) -> Result<ChannelVec<T>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let xv = tape.leaf_map(x.clone());
        let e = self.forward_tape(&mut tape, &vars, xv)?;
        Ok(tape.value(e).clone())
    }

    pub fn embed_raw(&self, x: &Tensor4<T>) -> Result<ChannelVec<T>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let xv = tape.leaf_map(x.clone());
        let e = self.forward_raw_tape(&mut tape, &vars, xv)?;
        Ok(tape.value(e).clone())
    }

    /// Input of residual unit `index` for a batch, i.e. the activation the
    /// unit's MSConv block consumes.
    pub fn unit_input(&self, x: &Tensor4<T>, index: usize) -> Result<Tensor4<T>> {
        if index >= self.units.len() {
            return Err(Error::InvalidArgument(format!(
                "block {index} out of range ({} blocks)",
                self.units.len()
            )));
        }
        self.check_input(x.dims())?;
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let xv = tape.leaf_map(x.clone());
        let h = tape.conv2d(xv, vars.stem)?;
        let mut h = tape.relu_map(h)?;
        for (unit, (bv, pv)) in self.units.iter().zip(&vars.units).take(index) {
            let v = block_forward_tape(&mut tape, unit.kind, h, bv)?;
            let shortcut = match pv {
                Some(p) => tape.conv2d(h, *p)?,
                None => h,
            };
            let sum = tape.add(v, shortcut)?;
            h = tape.relu_map(sum)?;
        }
        Ok(tape.value(h).clone())
    }

    /// Closed-form cost of one forward pass on `input`. Stem, projections
    /// and ReLUs are counted like the block internals: one unit per MAC or
    /// element-wise op.
    pub fn cost(&self, input: Dims4) -> CostReport {
        let (sh, sw, _, sc) = self.stem.shape();
        let mut d = Dims4::new(
            input.n,
            input.h.div_ceil(self.stem.stride()),
            input.w.div_ceil(self.stem.stride()),
            sc,
        );
        let mut total = CostReport {
            params: self.stem.weights().len(),
            conv_macs: crate::block::conv_macs(input, sh, sw, sc, self.stem.stride()),
            output_ops: d.len(),
            ..Default::default()
        };
        for u in &self.units {
            total = total + count_params_flops(&u.block, d);
            let s = u.block.k3.stride();
            let out = Dims4::new(d.n, d.h.div_ceil(s), d.w.div_ceil(s), u.block.channels());
            if let Some(p) = &u.projection {
                total.params += p.weights().len();
                total.conv_macs += crate::block::conv_macs(d, 1, 1, out.c, s);
            }
            // residual add and ReLU
            total.output_ops += 2 * out.len();
            d = out;
        }
        let (c, e) = (self.w_embed.rows(), self.w_embed.cols());
        total.params += c * e + e;
        total.pool_ops += d.len() + d.n * c;
        total.fc_ops += d.n * (c * e + e);
        total
    }
}

/// Tape handles of a bound [`TinyNet`].
#[derive(Debug, Clone)]
pub struct NetVars {
    pub stem: KernelVar,
    pub units: Vec<(BlockVars, Option<KernelVar>)>,
    pub w_embed: MatVar,
    pub b_embed: ChanVar,
}

impl BoundParams for NetVars {
    fn nodes(&self) -> Vec<NodeId> {
        let mut out = vec![self.stem.node()];
        for (b, p) in &self.units {
            out.extend(b.nodes());
            if let Some(p) = p {
                out.push(p.node());
            }
        }
        out.push(self.w_embed.node());
        out.push(self.b_embed.node());
        out
    }
}

impl<T: Real> Parameterized<T> for TinyNet<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, ParamRole, &[usize], &[T])) {
        let (a, b, c, d) = self.stem.shape();
        f(&join(prefix, "stem"), ParamRole::Weight, &[a, b, c, d], self.stem.weights());
        for (i, u) in self.units.iter().enumerate() {
            let up = join(prefix, &unit_prefix(i));
            u.block.visit(&join(&up, "block"), f);
            if let Some(p) = &u.projection {
                let (a, b, c, d) = p.shape();
                f(&join(&up, "proj"), ParamRole::Weight, &[a, b, c, d], p.weights());
            }
        }
        f(
            &join(prefix, "w_embed"),
            ParamRole::Weight,
            &[self.w_embed.rows(), self.w_embed.cols()],
            self.w_embed.data(),
        );
        f(
            &join(prefix, "b_embed"),
            ParamRole::Bias,
            &[self.b_embed.c()],
            self.b_embed.data(),
        );
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamRole, &mut [T])) {
        f(&join(prefix, "stem"), ParamRole::Weight, self.stem.weights_mut());
        for (i, u) in self.units.iter_mut().enumerate() {
            let up = join(prefix, &unit_prefix(i));
            u.block.visit_mut(&join(&up, "block"), f);
            if let Some(p) = &mut u.projection {
                f(&join(&up, "proj"), ParamRole::Weight, p.weights_mut());
            }
        }
        f(&join(prefix, "w_embed"), ParamRole::Weight, self.w_embed.data_mut());
        f(&join(prefix, "b_embed"), ParamRole::Bias, self.b_embed.data_mut());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> TinyNetConfig {
        TinyNetConfig {
            in_channels: 2,
            stem_channels: 4,
            stages: vec![
                StageSpec {
                    blocks: 1,
                    channels: 4,
                    stride: 1,
                    kind: FusionKind::MsConv,
                },
                StageSpec {
                    blocks: 1,
                    channels: 6,
                    stride: 2,
                    kind: FusionKind::MsConv,
                },
            ],
            embed_dim: 5,
            min_width: 4,
            ..TinyNetConfig::default()
        }
    }

    fn input(n: usize) -> Tensor4<f64> {
        Tensor4::from_fn(Dims4::new(n, 8, 8, 2), |b, y, x, c| {
            ((b * 13 + y * 7 + x * 3 + c) as f64 * 0.37).sin()
        })
    }

    #[test]
    fn zero_input_gives_zero_embedding() {
        let net = TinyNet::<f64>::init(&small(), 1).unwrap();
        let x = Tensor4::zeros(Dims4::new(2, 8, 8, 2));
        assert!(net.embed_raw(&x).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(net.embed(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn embeddings_have_unit_norm() {
        let net = TinyNet::<f64>::init(&small(), 2).unwrap();
        let e = net.embed(&input(3)).unwrap();
        for i in 0..3 {
            let n: f64 = e.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn deterministic() {
        let a = TinyNet::<f64>::init(&small(), 3).unwrap();
        let b = TinyNet::<f64>::init(&small(), 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.embed(&input(2)).unwrap(), b.embed(&input(2)).unwrap());
    }

    #[test]
    fn projection_only_where_shapes_change() {
        let net = TinyNet::<f64>::init(&small(), 0).unwrap();
        assert!(net.units[0].projection.is_none());
        assert!(net.units[1].projection.is_some());
        let names = net.param_names();
        assert_eq!(names.first().unwrap(), "stem");
        assert!(names.contains(&"unit1.proj".to_string()));
    }

    #[test]
    fn rejects_indivisible_input() {
        let net = TinyNet::<f64>::init(&small(), 0).unwrap();
        let x = Tensor4::zeros(Dims4::new(1, 7, 8, 2));
        assert!(matches!(net.embed(&x), Err(Error::Config(_))));
        let x = Tensor4::zeros(Dims4::new(1, 8, 8, 3));
        assert!(net.embed(&x).is_err());
    }

    #[test]
    fn unit_input_feeds_block() {
        let net = TinyNet::<f64>::init(&small(), 4).unwrap();
        let x = input(1);
        assert_eq!(net.unit_input(&x, 0).unwrap().dims(), Dims4::new(1, 8, 8, 4));
        assert_eq!(net.unit_input(&x, 1).unwrap().dims(), Dims4::new(1, 8, 8, 4));
        assert!(net.unit_input(&x, 2).is_err());
    }
}
