//! Synthetic identities, on-disk datasets and verification metrics.

mod metrics;
mod report;
mod store;
mod synthetic;

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::ChannelVec;

pub use metrics::{cosine_sim, pair_accuracy, tar_at_far, VerificationSet};
pub use report::{parse_values, Report, VALUES_MARKER};
pub use store::{
    image_file, load_dataset, load_image, make_pairs, pairs_path, read_pairs, save_dataset,
    write_pairs, Pair, LABELS_FILE, PAIRS_FILE,
};
pub use synthetic::{gen_heldout, gen_synthetic, LabeledSet, SyntheticSpec};

/// Scores of listed pairs; `names[i]` identifies embedding row `i`.
pub fn score_pairs<T: Real>(
    embeddings: &ChannelVec<T>,
    names: &[String],
    pairs: &[Pair],
) -> Result<VerificationSet> {
    let index: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let row = |name: &str| {
        index
            .get(name)
            .map(|&i| embeddings.row(i))
            .ok_or_else(|| Error::InvalidArgument(format!("pair references unknown image {name:?}")))
    };
    let (mut genuine, mut impostor) = (Vec::new(), Vec::new());
    for p in pairs {
        let s = cosine_sim(row(&p.a)?, row(&p.b)?)?;
        if p.same {
            genuine.push(s);
        } else {
            impostor.push(s);
        }
    }
    VerificationSet::new(genuine, impostor)
}

/// Scores of every unordered pair of rows, split by label agreement.
pub fn all_pairs<T: Real>(embeddings: &ChannelVec<T>, labels: &[usize]) -> Result<VerificationSet> {
    let (mut genuine, mut impostor) = (Vec::new(), Vec::new());
    for i in 0..labels.len() {
        for j in i + 1..labels.len() {
            let s = cosine_sim(embeddings.row(i), embeddings.row(j))?;
            if labels[i] == labels[j] {
                genuine.push(s);
            } else {
                impostor.push(s);
            }
        }
    }
    VerificationSet::new(genuine, impostor)
}
