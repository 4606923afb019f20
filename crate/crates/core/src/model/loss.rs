//! Margin-based softmax cross-entropy over cosine logits.
//!
//! With `cos θ_j = e · w_j` for unit embedding `e` and unit class centre
//! `w_j`, the target logit is `s · ψ(θ_y)` and every other logit is
//! `s · cos θ_j`, where
//!
//! | kind     | ψ(θ)                      |
//! |----------|---------------------------|
//! | plain    | cos θ                     |
//! | arc      | cos(θ + m2)               |
//! | cos      | cos θ − m3                |
//! | combined | cos(m1·θ + m2) − m3       |

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::grad::{Backward, ChanVar, MatVar, ScalarVar, Tape, Value, Var};
use crate::real::Real;
use crate::tensor::{ChannelVec, Matrix};

/// Cosines are clamped to this interval before `acos`.
pub const COS_CLAMP: f64 = 1.0 - 1e-7;
const NORM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarginKind {
    Arc,
    Cos,
    Combined,
    Plain,
}

impl MarginKind {
    pub fn name(self) -> &'static str {
        match self {
            MarginKind::Arc => "arc",
            MarginKind::Cos => "cos",
            MarginKind::Combined => "combined",
            MarginKind::Plain => "plain",
        }
    }
}

impl fmt::Display for MarginKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MarginKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "arc" => Ok(MarginKind::Arc),
            "cos" => Ok(MarginKind::Cos),
            "combined" => Ok(MarginKind::Combined),
            "plain" => Ok(MarginKind::Plain),
            _ => Err(Error::InvalidArgument(format!("unknown margin loss {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginLossConfig {
    pub kind: MarginKind,
    pub scale: f64,
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub classes: usize,
}

impl MarginLossConfig {
    /// Conventional defaults: `s = 64`; arc `m2 = 0.5`; cos `m3 = 0.35`;
    /// combined `(1.0, 0.3, 0.2)`.
    pub fn new(kind: MarginKind, classes: usize) -> Self {
        let (m1, m2, m3) = match kind {
            MarginKind::Arc => (1.0, 0.5, 0.0),
            MarginKind::Cos => (1.0, 0.0, 0.35),
            MarginKind::Combined => (1.0, 0.3, 0.2),
            MarginKind::Plain => (1.0, 0.0, 0.0),
        };
        MarginLossConfig {
            kind,
            scale: 64.0,
            m1,
            m2,
            m3,
            classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0) {
            return Err(Error::InvalidArgument(format!("scale must be positive, got {}", self.scale)));
        }
        if self.m1 < 0.0 || self.m2 < 0.0 || self.m3 < 0.0 {
            return Err(Error::InvalidArgument("margins must be non-negative".into()));
        }
        if self.kind == MarginKind::Plain && (self.m1 != 1.0 || self.m2 != 0.0 || self.m3 != 0.0) {
            return Err(Error::InvalidArgument(
                "plain loss takes no margins (m1 = 1, m2 = m3 = 0)".into(),
            ));
        }
        if self.classes == 0 {
            return Err(Error::InvalidArgument("class count must be positive".into()));
        }
        Ok(())
    }

    fn angular(&self) -> bool {
        !(self.m1 == 1.0 && self.m2 == 0.0)
    }

    /// `(ψ(cos θ), dψ/dcos θ)` for the target class.
    fn target<T: Real>(&self, cos: T) -> (T, T) {
        let m3 = T::lit(self.m3);
        if !self.angular() {
            return (cos - m3, T::one());
        }
        let lim = T::lit(COS_CLAMP);
        let clamped = cos.max(-lim).min(lim);
        let theta = clamped.acos();
        let arg = T::lit(self.m1) * theta + T::lit(self.m2);
        let psi = arg.cos() - m3;
        let dpsi = if cos > lim || cos < -lim {
            T::zero()
        } else {
            T::lit(self.m1) * arg.sin() / theta.sin()
        };
        (psi, dpsi)
    }
}

fn check_rows<T: Real>(what: &'static str, rows: usize, cols: usize, data: &[T]) -> Result<()> {
    for r in 0..rows {
        let norm = data[r * cols..(r + 1) * cols]
            .iter()
            .map(|&v| v * v)
            .sum::<T>()
            .sqrt()
            .as_f64();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::NotNormalized { what, row: r, norm });
        }
    }
    Ok(())
}

/// Loss value, per-sample cosine-argmax predictions and `∂loss/∂cos`.
pub struct MarginEval<T> {
    pub loss: T,
    pub predictions: Vec<usize>,
    /// `(n, classes)` row-major.
    pub dcos: Vec<T>,
}

fn evaluate<T: Real>(
    emb: &ChannelVec<T>,
    centers: &Matrix<T>,
    labels: &[usize],
    cfg: &MarginLossConfig,
) -> Result<MarginEval<T>> {
    cfg.validate()?;
    let (n, dim, k) = (emb.n(), emb.c(), centers.rows());
    if centers.cols() != dim || k != cfg.classes {
        return Err(Error::shape(
            "margin_loss",
            format!(
                "centres {}x{} for {} classes of width {dim}",
                k,
                centers.cols(),
                cfg.classes
            ),
        ));
    }
    if labels.len() != n {
        return Err(Error::shape(
            "margin_loss",
            format!("{} labels for {n} embeddings", labels.len()),
        ));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange { label, classes: k });
    }
    check_rows("embedding", n, dim, emb.data())?;
    check_rows("class centre", k, dim, centers.data())?;

    let s = T::lit(cfg.scale);
    let inv_n = T::one() / T::lit(n as f64);
    let mut loss = T::zero();
    let mut predictions = Vec::with_capacity(n);
    let mut dcos = vec![T::zero(); n * k];
    let mut logits = vec![T::zero(); k];
    let mut dpsi_target = T::one();
    for i in 0..n {
        let e = emb.row(i);
        let y = labels[i];
        let mut best = (0, T::neg_infinity());
        for j in 0..k {
            let cos = e.iter().zip(centers.row(j)).map(|(&a, &b)| a * b).sum::<T>();
            if cos > best.1 {
                best = (j, cos);
            }
            logits[j] = if j == y {
                let (psi, d) = cfg.target(cos);
                dpsi_target = d;
                s * psi
            } else {
                s * cos
            };
        }
        predictions.push(best.0);
        let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
        let z: T = logits.iter().map(|&l| (l - m).exp()).sum();
        let lse = m + z.ln();
        loss += (lse - logits[y]) * inv_n;
        for j in 0..k {
            let p = (logits[j] - lse).exp();
            let dl = if j == y { p - T::one() } else { p };
            let local = if j == y { s * dpsi_target } else { s };
            dcos[i * k + j] = dl * local * inv_n;
        }
    }
    Ok(MarginEval {
        loss,
        predictions,
        dcos,
    })
}

/// Mean margin-softmax cross-entropy. Embeddings and class centres must
/// have unit rows (to within 1e-4).
pub fn margin_loss<T: Real>(
    embeddings: &ChannelVec<T>,
    labels: &[usize],
    centers: &Matrix<T>,
    cfg: &MarginLossConfig,
) -> Result<T> {
    Ok(evaluate(embeddings, centers, labels, cfg)?.loss)
}

struct MarginRule<T> {
    dcos: Vec<T>,
}

impl<T: Real> Backward<T> for MarginRule<T> {
    fn name(&self) -> &'static str {
        "margin_loss"
    }

    fn backward(&self, inputs: &[&Value<T>], _output: &Value<T>, grad: &Value<T>) -> Vec<Value<T>> {
        let (Value::Chan(emb), Value::Mat(centers)) = (inputs[0], inputs[1]) else {
            unreachable!("margin_loss inputs are (chan, mat)");
        };
        let g = grad.flat()[0];
        let (n, dim, k) = (emb.n(), emb.c(), centers.rows());
        let mut ge = vec![T::zero(); n * dim];
        let mut gw = vec![T::zero(); k * dim];
        for i in 0..n {
            let e = emb.row(i);
            for j in 0..k {
                let d = self.dcos[i * k + j] * g;
                let w = centers.row(j);
                for t in 0..dim {
                    ge[i * dim + t] += d * w[t];
                    gw[j * dim + t] += d * e[t];
                }
            }
        }
        vec![
            Value::Chan(ChannelVec::new(n, dim, ge).expect("shape")),
            Value::Mat(Matrix::new(k, dim, gw).expect("shape")),
        ]
    }
}

/// Record the loss on a tape; also returns the cosine-argmax predictions.
pub fn margin_loss_tape<T: Real>(
    tape: &mut Tape<T>,
    embeddings: ChanVar,
    centers: MatVar,
    labels: &[usize],
    cfg: &MarginLossConfig,
) -> Result<(ScalarVar, Vec<usize>)> {
    let eval = evaluate(tape.value(embeddings), tape.value(centers), labels, cfg)?;
    let loss = tape.custom_scalar(
        &[embeddings.node(), centers.node()],
        eval.loss,
        Box::new(MarginRule { dcos: eval.dcos }),
    )?;
    Ok((loss, eval.predictions))
}
