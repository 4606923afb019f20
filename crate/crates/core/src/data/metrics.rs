use crate::error::{Error, Result};
use crate::real::Real;

/// Cosine of the angle between two non-zero vectors.
pub fn cosine_sim<T: Real>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(
            "cosine_sim",
            format!("lengths {} and {}", a.len(), b.len()),
        ));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x.as_f64(), y.as_f64());
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidArgument("cosine of a zero vector".into()));
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Similarity scores of same-identity (genuine) and cross-identity
/// (impostor) pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationSet {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
}

impl VerificationSet {
    pub fn new(genuine: Vec<f64>, impostor: Vec<f64>) -> Result<Self> {
        let vs = VerificationSet { genuine, impostor };
        vs.validate()?;
        Ok(vs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.genuine.is_empty() || self.impostor.is_empty() {
            return Err(Error::InvalidArgument(
                "verification needs genuine and impostor scores".into(),
            ));
        }
        if !self.genuine.iter().chain(&self.impostor).all(|s| s.is_finite()) {
            return Err(Error::InvalidArgument("scores must be finite".into()));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.genuine.len() + self.impostor.len()
    }

    fn max_score(&self) -> f64 {
        self.genuine
            .iter()
            .chain(&self.impostor)
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Sorted distinct scores of both lists.
    fn candidates(&self) -> Vec<f64> {
        let mut c: Vec<f64> = self.genuine.iter().chain(&self.impostor).copied().collect();
        c.sort_by(f64::total_cmp);
        c.dedup();
        c
    }
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Number of scores `>= t` in an ascending list.
fn count_at_least(sorted: &[f64], t: f64) -> usize {
    sorted.len() - sorted.partition_point(|&s| s < t)
}

/// True-accept rate at the smallest score threshold whose false-accept
/// rate is at most `far_target`; scores `>= threshold` are accepted. When
/// no score qualifies the threshold is the next float above the largest
/// score and nothing is accepted.
pub fn tar_at_far(vs: &VerificationSet, far_target: f64) -> Result<(f64, f64)> {
    vs.validate()?;
    if !(far_target > 0.0 && far_target < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "far_target must lie in (0, 1), got {far_target}"
        )));
    }
    let gen = sorted(&vs.genuine);
    let imp = sorted(&vs.impostor);
    let n_imp = imp.len() as f64;
    let threshold = vs
        .candidates()
        .into_iter()
        .find(|&t| count_at_least(&imp, t) as f64 / n_imp <= far_target)
        .unwrap_or_else(|| vs.max_score().next_up());
    let tar = count_at_least(&gen, threshold) as f64 / gen.len() as f64;
    Ok((tar, threshold))
}

/// Best verification accuracy over every score threshold, including one
/// above all scores (reject everything). Ties go to the smallest threshold.
pub fn pair_accuracy(vs: &VerificationSet) -> Result<(f64, f64)> {
    vs.validate()?;
    let gen = sorted(&vs.genuine);
    let imp = sorted(&vs.impostor);
    let mut candidates = vs.candidates();
    candidates.push(vs.max_score().next_up());
    let mut best = (0usize, candidates[0]);
    for (i, &t) in candidates.iter().enumerate() {
        let correct = count_at_least(&gen, t) + (imp.len() - count_at_least(&imp, t));
        if i == 0 || correct > best.0 {
            best = (correct, t);
        }
    }
    Ok((best.0 as f64 / vs.total() as f64, best.1))
}
