//! Desk-scale backbone, class-centre head and margin-softmax losses.

pub mod loss;
pub mod tinynet;

use crate::error::Result;
use crate::grad::{MapVar, MatVar, NodeId, ScalarVar, Tape, Var};
use crate::param::{he_normal, join, BoundParams, ParamRole, Parameterized};
use crate::real::Real;
use crate::tensor::{Matrix, Tensor4};

pub use loss::{margin_loss, margin_loss_tape, MarginKind, MarginLossConfig};
pub use tinynet::{NetVars, ResidualUnit, StageSpec, TinyNet, TinyNetConfig};

/// Backbone plus a learnable `(classes, embed_dim)` class-centre matrix,
/// normalised row-wise on every forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceModel<T: Real = f64> {
    pub net: TinyNet<T>,
    pub centers: Matrix<T>,
}

#[derive(Debug, Clone)]
pub struct ModelVars {
    pub net: NetVars,
    pub centers: MatVar,
}

impl BoundParams for ModelVars {
    fn nodes(&self) -> Vec<NodeId> {
        let mut n = self.net.nodes();
        n.push(self.centers.node());
        n
    }
}

impl<T: Real> FaceModel<T> {
    pub fn init(config: &TinyNetConfig, classes: usize, seed: u64) -> Result<Self> {
        let net = TinyNet::init(config, seed)?;
        let e = config.embed_dim;
        let centers = Matrix::new(classes, e, he_normal(seed, "centers", e, classes * e))?;
        Ok(FaceModel { net, centers })
    }

    pub fn classes(&self) -> usize {
        self.centers.rows()
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> ModelVars {
        ModelVars {
            net: self.net.bind(tape),
            centers: tape.leaf_mat(self.centers.clone()),
        }
    }

    /// Record embeddings and the margin loss for one batch.
    pub fn loss_tape(
        &self,
        tape: &mut Tape<T>,
        vars: &ModelVars,
        x: MapVar,
        labels: &[usize],
        cfg: &MarginLossConfig,
    ) -> Result<(ScalarVar, Vec<usize>)> {
        let e = self.net.forward_tape(tape, &vars.net, x)?;
        let w = tape.normalize_rows(vars.centers)?;
        margin_loss_tape(tape, e, w, labels, cfg)
    }

    pub fn loss(&self, x: &Tensor4<T>, labels: &[usize], cfg: &MarginLossConfig) -> Result<T> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let xv = tape.leaf_map(x.clone());
        let (loss, _) = self.loss_tape(&mut tape, &vars, xv, labels, cfg)?;
        Ok(*tape.value(loss))
    }
}

impl<T: Real> Parameterized<T> for FaceModel<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, ParamRole, &[usize], &[T])) {
        self.net.visit(prefix, f);
        f(
            &join(prefix, "centers"),
            ParamRole::Weight,
            &[self.centers.rows(), self.centers.cols()],
            self.centers.data(),
        );
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamRole, &mut [T])) {
        self.net.visit_mut(prefix, f);
        f(&join(prefix, "centers"), ParamRole::Weight, self.centers.data_mut());
    }
}
