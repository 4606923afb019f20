use sha2::{Digest, Sha256};

use crate::block::FusionKind;
use crate::data::{LabeledSet, Report};
use crate::error::{Error, Result};
use crate::param::Parameterized;
use crate::real::Real;

use super::config::RunConfig;
use super::run::{heldout_metrics, init_model, train_on, HeldOutMetrics};

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub kind: FusionKind,
    pub final_loss: f64,
    pub train_acc: f64,
    pub heldout: HeldOutMetrics,
    /// SHA-256 over every initial parameter, names included.
    pub init_digest: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub far_target: f64,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn shared_init_identical(&self) -> bool {
        self.rows.windows(2).all(|w| w[0].init_digest == w[1].init_digest)
    }

    pub fn to_report(&self) -> Report {
        let mut r = Report::new("fusion ablation");
        r.header = ["kind", "final_loss", "train_acc", "verif_acc", "tar_at_far", "init_sha256"]
            .map(String::from)
            .to_vec();
        for row in &self.rows {
            r.rows.push(vec![
                row.kind.to_string(),
                format!("{:.6}", row.final_loss),
                format!("{:.4}", row.train_acc),
                format!("{:.4}", row.heldout.accuracy),
                format!("{:.4}", row.heldout.tar),
                row.init_digest[..16].to_string(),
            ]);
        }
        r.value("far_target", self.far_target);
        r.value("kinds", self.rows.len());
        r.value("shared_init_identical", self.shared_init_identical());
        for row in &self.rows {
            let k = row.kind.name();
            r.value(format!("{k}.final_loss"), row.final_loss);
            r.value(format!("{k}.train_acc"), row.train_acc);
            r.value(format!("{k}.verif_acc"), row.heldout.accuracy);
            r.value(format!("{k}.verif_threshold"), row.heldout.accuracy_threshold);
            r.value(format!("{k}.tar"), row.heldout.tar);
            r.value(format!("{k}.tar_threshold"), row.heldout.tar_threshold);
            r.value(format!("{k}.init_sha256"), &row.init_digest);
        }
        r
    }
}

pub fn param_digest<T: Real, P: Parameterized<T> + ?Sized>(p: &P) -> String {
    let mut h = Sha256::new();
    p.visit("", &mut |name, _, dims, data| {
        h.update(name.as_bytes());
        for &d in dims {
            h.update((d as u64).to_le_bytes());
        }
        for v in data {
            h.update(v.as_f64().to_le_bytes());
        }
    });
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Train one model per fusion kind on the same data with the same seed and
/// evaluate each on held-out synthetic pairs.
pub fn ablation_run<T: Real>(cfg: &RunConfig, kinds: &[FusionKind], data: &LabeledSet<T>) -> Result<AblationReport> {
    if kinds.is_empty() {
        return Err(Error::Config("no fusion kinds requested".into()));
    }
    let mut rows = Vec::with_capacity(kinds.len());
    for &kind in kinds {
        let mut c = cfg.clone();
        c.kind = kind;
        let init = init_model::<T>(&c, data.classes())?;
        let outcome = train_on(&c, data)?;
        let heldout = heldout_metrics(&c, &outcome.model)?;
        rows.push(AblationRow {
            kind,
            final_loss: outcome.final_loss().unwrap_or(f64::NAN),
            train_acc: outcome.final_accuracy().unwrap_or(f64::NAN),
            heldout,
            init_digest: param_digest(&init),
        });
    }
    Ok(AblationReport {
        far_target: cfg.far_target,
        rows,
    })
}
