//! Named parameter traversal, seeded initialisation and checkpoint files.
//!
//! A checkpoint directory holds one `MSCT` file per parameter tensor and a
//! `manifest.txt` with one `name=filename` line per tensor, in traversal
//! order.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grad::NodeId;
use crate::real::Real;
use crate::tensor::io::RawTensor;

pub const MANIFEST: &str = "manifest.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    /// Convolution or projection weights; subject to weight decay.
    Weight,
    Bias,
}

/// Deterministic traversal over every learnable tensor.
///
/// `visit` and `visit_mut` must enumerate tensors in the same order, and
/// the order must match the node list returned when binding the
/// parameters to a tape.
pub trait Parameterized<T: Real> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, ParamRole, &[usize], &[T]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamRole, &mut [T]));

    fn param_count(&self) -> usize {
        let mut total = 0;
        self.visit("", &mut |_, _, _, data| total += data.len());
        total
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit("", &mut |name, _, _, _| names.push(name.to_string()));
        names
    }

    /// Copies of every tensor, in traversal order.
    fn flat_params(&self) -> Vec<Vec<T>> {
        let mut out = Vec::new();
        self.visit("", &mut |_, _, _, data| out.push(data.to_vec()));
        out
    }

    fn load_flat(&mut self, values: &[Vec<T>]) -> Result<()> {
        let mut i = 0;
        let mut bad = None;
        self.visit_mut("", &mut |name, _, data| {
            match values.get(i) {
                Some(v) if v.len() == data.len() => data.copy_from_slice(v),
                _ => bad = bad.take().or_else(|| Some(name.to_string())),
            }
            i += 1;
        });
        if let Some(name) = bad {
            return Err(Error::shape("load_flat", format!("no matching values for {name}")));
        }
        if i != values.len() {
            return Err(Error::shape(
                "load_flat",
                format!("{} groups for {i} tensors", values.len()),
            ));
        }
        Ok(())
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Tape nodes of bound parameters, in traversal order.
pub trait BoundParams {
    fn nodes(&self) -> Vec<NodeId>;
}

/// Independent generator for one named parameter, so initial values depend
/// only on the seed and the name.
pub fn param_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(key)
}

/// Fan-in scaled Gaussian, std = sqrt(2 / fan_in).
pub fn he_normal<T: Real>(seed: u64, name: &str, fan_in: usize, len: usize) -> Vec<T> {
    let mut rng = param_rng(seed, name);
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("positive std");
    (0..len).map(|_| T::lit(dist.sample(&mut rng))).collect()
}

fn file_name(name: &str) -> String {
    format!("{name}.msct")
}

pub fn save_params<T: Real, P: Parameterized<T> + ?Sized>(p: &P, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    let mut result = Ok(());
    p.visit("", &mut |name, _, dims, data| {
        if result.is_err() {
            return;
        }
        let file = file_name(name);
        manifest.push_str(&format!("{name}={file}\n"));
        result = RawTensor::from_real(dims.to_vec(), data).write(&dir.join(&file));
    });
    result?;
    fs::write(dir.join(MANIFEST), manifest)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Vec<(String, String)>> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_once('=')
                .map(|(a, b)| (a.trim().to_string(), b.trim().to_string()))
                .ok_or_else(|| Error::Format {
                    path: path.clone(),
                    detail: format!("expected name=filename, got {l:?}"),
                })
        })
        .collect()
}

/// Load every parameter of `p` from a checkpoint directory written by
/// [`save_params`]. Names must match the manifest and sizes the tensors.
pub fn load_params<T: Real, P: Parameterized<T> + ?Sized>(p: &mut P, dir: &Path) -> Result<()> {
    let entries = read_manifest(dir)?;
    let lookup: std::collections::HashMap<_, _> = entries.into_iter().collect();
    let mut result = Ok(());
    p.visit_mut("", &mut |name, _, data| {
        if result.is_err() {
            return;
        }
        result = (|| {
            let file = lookup.get(name).ok_or_else(|| Error::Format {
                path: dir.join(MANIFEST),
                detail: format!("missing entry for {name}"),
            })?;
            let path = dir.join(file);
            let raw = RawTensor::read(&path)?;
            if raw.values.len() != data.len() {
                return Err(Error::Format {
                    path,
                    detail: format!("{} values, expected {}", raw.values.len(), data.len()),
                });
            }
            for (d, &v) in data.iter_mut().zip(&raw.values) {
                *d = T::lit(v as f64);
            }
            Ok(())
        })();
    });
    result
}
