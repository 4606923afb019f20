use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};

use crate::block::{block_forward_tape, BlockConfig, FusionKind, KernelCombo, MSConvState};
use crate::error::{Error, Result};
use crate::grad::{
    finite_diff_check, Backward, GradCheckReport, NodeId, ScalarVar, Tape, Value, Var,
};
use crate::model::{FaceModel, MarginKind, MarginLossConfig, StageSpec, TinyNetConfig};
use crate::param::{param_rng, BoundParams, Parameterized};
use crate::tensor::{ChannelVec, ConvKernel, Dims4, Matrix, Tensor4};

pub const OP_TOLERANCE: f64 = 1e-6;
pub const BACKBONE_TOLERANCE: f64 = 1e-5;
pub const EPS: f64 = crate::grad::check::DEFAULT_EPS;

pub const OP_NAMES: [&str; 16] = [
    "conv2d",
    "mul",
    "sub",
    "add",
    "relu_map",
    "gap",
    "fc",
    "relu",
    "sigmoid",
    "chan_sub",
    "split",
    "softmax_pair",
    "scale_channels",
    "l2_normalize",
    "normalize_rows",
    "margin_loss",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Scope {
    Op(&'static str),
    Block(FusionKind),
    Backbone,
}

impl FromStr for Scope {
    type Err = Error;

    /// `backbone`, `block`, `block:<kind>` or an op name.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "backbone" => Ok(Scope::Backbone),
            "block" => Ok(Scope::Block(FusionKind::MsConv)),
            _ => {
                if let Some(kind) = s.strip_prefix("block:") {
                    return Ok(Scope::Block(kind.parse()?));
                }
                OP_NAMES
                    .iter()
                    .find(|&&n| n == s)
                    .map(|&n| Scope::Op(n))
                    .ok_or_else(|| {
                        Error::InvalidArgument(format!(
                            "unknown gradcheck scope {s:?}; expected backbone, block[:kind] or one of {}",
                            OP_NAMES.join(", ")
                        ))
                    })
            }
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::Op(n) => f.write_str(n),
            Scope::Block(k) => write!(f, "block:{k}"),
            Scope::Backbone => f.write_str("backbone"),
        }
    }
}

impl Scope {
    pub fn tolerance(&self) -> f64 {
        match self {
            Scope::Backbone => BACKBONE_TOLERANCE,
            _ => OP_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckOutcome {
    pub scope: Scope,
    pub report: GradCheckReport,
    pub tolerance: f64,
}

impl GradCheckOutcome {
    pub fn passed(&self) -> bool {
        self.report.passes(self.tolerance)
    }

    pub fn line(&self) -> String {
        format!(
            "{} {} max_rel_error={:.3e} tolerance={:.0e} checked={} worst={}:{}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.scope,
            self.report.max_rel_error,
            self.tolerance,
            self.report.checked,
            self.report.worst.0,
            self.report.worst.1,
        )
    }
}

/// `Σ rᵢ·vᵢ` over several nodes with fixed random weights, so every output
/// element reaches the gradient with a distinct coefficient.
struct Probe {
    weights: Vec<Vec<f64>>,
}

impl Backward<f64> for Probe {
    fn name(&self) -> &'static str {
        "probe"
    }

    fn backward(&self, inputs: &[&Value<f64>], _output: &Value<f64>, grad: &Value<f64>) -> Vec<Value<f64>> {
        let g = grad.flat()[0];
        inputs
            .iter()
            .zip(&self.weights)
            .map(|(v, r)| {
                let mut out = v.zeros_like();
                for (o, &w) in out.flat_mut().iter_mut().zip(r) {
                    *o = g * w;
                }
                out
            })
            .collect()
    }
}

fn normal_vec(seed: u64, name: &str, len: usize) -> Vec<f64> {
    let mut rng = param_rng(seed, name);
    (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn probe(tape: &mut Tape<f64>, nodes: &[NodeId]) -> Result<ScalarVar> {
    let mut weights = Vec::new();
    let mut total = 0.0;
    for (i, &n) in nodes.iter().enumerate() {
        let v = tape.input_value(n).flat();
        let r = normal_vec(7, &format!("probe{i}"), v.len());
        total += v.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>();
        weights.push(r);
    }
    tape.custom_scalar(nodes, total, Box::new(Probe { weights }))
}

type Build<'a> = dyn Fn(&mut Tape<f64>, &[Vec<f64>]) -> Result<(ScalarVar, Vec<NodeId>)> + 'a;

/// Finite-difference check of a tape program whose leaves are built from
/// `inputs`. `build` returns the scalar and the leaf nodes in input order.
pub fn check_program(mut inputs: Vec<Vec<f64>>, build: &Build<'_>) -> Result<GradCheckReport> {
    let mut tape = Tape::new();
    let (loss, leaves) = build(&mut tape, &inputs)?;
    let grads = tape.backward(loss, 1.0)?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .zip(&inputs)
        .map(|(&id, p)| grads.flat(id).map_or_else(|| vec![0.0; p.len()], <[f64]>::to_vec))
        .collect();
    let mut failure = None;
    let report = finite_diff_check(&mut inputs, &analytic, EPS, |p| {
        let mut t = Tape::new();
        match build(&mut t, p) {
            Ok((l, _)) => *t.value(l),
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        }
    });
    match failure {
        Some(e) => Err(e),
        None => report,
    }
}

fn map(dims: Dims4, v: &[f64]) -> Result<Tensor4<f64>> {
    Tensor4::new(dims, v.to_vec())
}

fn chan(n: usize, c: usize, v: &[f64]) -> Result<ChannelVec<f64>> {
    ChannelVec::new(n, c, v.to_vec())
}

fn check_op(name: &str) -> Result<GradCheckReport> {
    let md = Dims4::new(2, 3, 3, 2);
    let rand = |tag: &str, len: usize| normal_vec(1, tag, len);
    match name {
        "conv2d" => {
            let xd = Dims4::new(2, 5, 5, 3);
            let shape = (3, 3, 3, 4);
            check_program(vec![rand("x", xd.len()), rand("k", 108)], &|t, p| {
                let x = t.leaf_map(map(xd, &p[0])?);
                let k = t.leaf_kernel(ConvKernel::new(shape, 2, 2, p[1].clone())?);
                let y = t.conv2d(x, k)?;
                Ok((probe(t, &[y.node()])?, vec![x.node(), k.node()]))
            })
        }
        "mul" | "sub" | "add" => {
            check_program(vec![rand("x", md.len()), rand("y", md.len())], &|t, p| {
                let x = t.leaf_map(map(md, &p[0])?);
                let y = t.leaf_map(map(md, &p[1])?);
                let z = match name {
                    "mul" => t.mul(x, y)?,
                    "sub" => t.sub(x, y)?,
                    _ => t.add(x, y)?,
                };
                Ok((probe(t, &[z.node()])?, vec![x.node(), y.node()]))
            })
        }
        "relu_map" | "gap" => check_program(vec![rand("x", md.len())], &|t, p| {
            let x = t.leaf_map(map(md, &p[0])?);
            let out = if name == "gap" {
                t.global_avg_pool(x)?.node()
            } else {
                t.relu_map(x)?.node()
            };
            Ok((probe(t, &[out])?, vec![x.node()]))
        }),
        "fc" => check_program(vec![rand("x", 10), rand("w", 15), rand("b", 3)], &|t, p| {
            let x = t.leaf_chan(chan(2, 5, &p[0])?);
            let w = t.leaf_mat(Matrix::new(5, 3, p[1].clone())?);
            let b = t.leaf_chan(chan(1, 3, &p[2])?);
            let y = t.fc(x, w, b)?;
            Ok((probe(t, &[y.node()])?, vec![x.node(), w.node(), b.node()]))
        }),
        "relu" | "sigmoid" | "l2_normalize" | "split" => {
            check_program(vec![rand("x", 12)], &|t, p| {
                let x = t.leaf_chan(chan(2, 6, &p[0])?);
                let outs = match name {
                    "relu" => vec![t.relu(x)?.node()],
                    "sigmoid" => vec![t.sigmoid(x)?.node()],
                    "l2_normalize" => vec![t.l2_normalize(x)?.node()],
                    _ => {
                        let (a, b) = t.split(x, 2)?;
                        vec![a.node(), b.node()]
                    }
                };
                Ok((probe(t, &outs)?, vec![x.node()]))
            })
        }
        "chan_sub" | "softmax_pair" => check_program(vec![rand("a", 8), rand("b", 8)], &|t, p| {
            let a = t.leaf_chan(chan(2, 4, &p[0])?);
            let b = t.leaf_chan(chan(2, 4, &p[1])?);
            let outs = if name == "chan_sub" {
                vec![t.chan_sub(a, b)?.node()]
            } else {
                let (x, y) = t.softmax_pair(a, b)?;
                vec![x.node(), y.node()]
            };
            Ok((probe(t, &outs)?, vec![a.node(), b.node()]))
        }),
        "scale_channels" => {
            let ud = Dims4::new(2, 3, 3, 3);
            check_program(vec![rand("s", 6), rand("u", ud.len())], &|t, p| {
                let s = t.leaf_chan(chan(2, 3, &p[0])?);
                let u = t.leaf_map(map(ud, &p[1])?);
                let y = t.scale_channels(s, u)?;
                Ok((probe(t, &[y.node()])?, vec![s.node(), u.node()]))
            })
        }
        "normalize_rows" => check_program(vec![rand("w", 12)], &|t, p| {
            let w = t.leaf_mat(Matrix::new(3, 4, p[0].clone())?);
            let y = t.normalize_rows(w)?;
            Ok((probe(t, &[y.node()])?, vec![w.node()]))
        }),
        "margin_loss" => {
            let labels = [2, 0, 1];
            let mut cfg = MarginLossConfig::new(MarginKind::Combined, 4);
            cfg.scale = 16.0;
            check_program(vec![rand("e", 15), rand("w", 20)], &move |t, p| {
                let e = t.leaf_chan(chan(3, 5, &p[0])?);
                let w = t.leaf_mat(Matrix::new(4, 5, p[1].clone())?);
                let en = t.l2_normalize(e)?;
                let wn = t.normalize_rows(w)?;
                let (loss, _) = crate::model::margin_loss_tape(t, en, wn, &labels, &cfg)?;
                Ok((loss, vec![e.node(), w.node()]))
            })
        }
        other => Err(Error::InvalidArgument(format!("unknown op {other:?}"))),
    }
}

/// Block configuration used by the block-level check: 3 → 4 channels,
/// bottleneck width 4, dilations 1 and 2.
pub fn check_block_config() -> BlockConfig {
    BlockConfig {
        min_width: 4,
        ..BlockConfig::new(3, 4)
    }
}

fn check_block(kind: FusionKind) -> Result<GradCheckReport> {
    let cfg = check_block_config();
    let template = MSConvState::<f64>::init(&cfg, 3, "block")?;
    let xd = Dims4::new(2, 6, 6, 3);
    let mut inputs = vec![normal_vec(2, "x", xd.len())];
    inputs.extend(template.flat_params());
    check_program(inputs, &|t, p| {
        let mut st = template.clone();
        st.load_flat(&p[1..])?;
        let vars = st.bind(t);
        let x = t.leaf_map(map(xd, &p[0])?);
        let v = block_forward_tape(t, kind, x, &vars)?;
        let mut leaves = vec![x.node()];
        leaves.extend(vars.nodes());
        Ok((probe(t, &[v.node()])?, leaves))
    })
}

/// Two-block backbone on 8×8 inputs used by the end-to-end check.
pub fn check_backbone_config() -> TinyNetConfig {
    TinyNetConfig {
        in_channels: 2,
        stem_channels: 4,
        stem_stride: 1,
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
        combo: KernelCombo::K3K5,
        reduction: 16,
        min_width: 4,
    }
}

fn check_backbone() -> Result<GradCheckReport> {
    let net_cfg = check_backbone_config();
    let model = FaceModel::<f64>::init(&net_cfg, 3, 5)?;
    let labels = [0, 2];
    let mut loss_cfg = MarginLossConfig::new(MarginKind::Cos, 3);
    loss_cfg.scale = 16.0;
    let xd = Dims4::new(2, 8, 8, 2);
    let x0: Vec<f64> = normal_vec(4, "x", xd.len()).iter().map(|v| v.clamp(-1.0, 1.0)).collect();
    let mut inputs = vec![x0];
    inputs.extend(model.flat_params());
    check_program(inputs, &|t, p| {
        let mut m = model.clone();
        m.load_flat(&p[1..])?;
        let vars = m.bind(t);
        let x = t.leaf_map(map(xd, &p[0])?);
        let (loss, _) = m.loss_tape(t, &vars, x, &labels, &loss_cfg)?;
        let mut leaves = vec![x.node()];
        leaves.extend(vars.nodes());
        Ok((loss, leaves))
    })
}

/// Double-precision finite-difference check of one scope.
pub fn gradcheck(scope: &Scope) -> Result<GradCheckOutcome> {
    let report = match scope {
        Scope::Op(name) => check_op(name)?,
        Scope::Block(kind) => check_block(*kind)?,
        Scope::Backbone => check_backbone()?,
    };
    Ok(GradCheckOutcome {
        scope: scope.clone(),
        report,
        tolerance: scope.tolerance(),
    })
}

/// Every op, every fusion kind of the block, then the backbone.
pub fn all_scopes() -> Vec<Scope> {
    let mut v: Vec<Scope> = OP_NAMES.iter().map(|&n| Scope::Op(n)).collect();
    v.extend(FusionKind::ALL.iter().map(|&k| Scope::Block(k)));
    v.push(Scope::Backbone);
    v
}
