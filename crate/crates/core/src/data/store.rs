use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::param::param_rng;
use crate::real::Real;
use crate::tensor::io::RawTensor;
use crate::tensor::{Dims4, Tensor4};

use super::LabeledSet;

pub const LABELS_FILE: &str = "labels.txt";
pub const PAIRS_FILE: &str = "pairs.txt";

pub fn image_file(index: usize) -> String {
    format!("img{index:05}.msct")
}

fn format_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

/// One rank-3 `(H, W, C)` MSCT file per image plus `labels.txt` with
/// `filename,identity_id` lines. Returns the file names in sample order.
pub fn save_dataset<T: Real>(set: &LabeledSet<T>, dir: &Path) -> Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    let d = set.images.dims();
    let mut labels = String::new();
    let mut names = Vec::with_capacity(set.len());
    for (i, &id) in set.labels.iter().enumerate() {
        let name = image_file(i);
        let img = set.images.sample(i);
        RawTensor::from_real(vec![d.h, d.w, d.c], img.data()).write(&dir.join(&name))?;
        labels.push_str(&format!("{name},{id}\n"));
        names.push(name);
    }
    fs::write(dir.join(LABELS_FILE), labels)?;
    Ok(names)
}

/// Read one image file; rank 3 `(H, W, C)` or rank 4 with a batch of one.
pub fn load_image<T: Real>(path: &Path) -> Result<Tensor4<T>> {
    let raw = RawTensor::read(path)?;
    let dims = match raw.dims.as_slice() {
        &[h, w, c] => Dims4::new(1, h, w, c),
        &[1, h, w, c] => Dims4::new(1, h, w, c),
        other => return Err(format_err(path, format!("expected an (H, W, C) image, got dims {other:?}"))),
    };
    Tensor4::new(dims, raw.to_real())
}

/// Inverse of [`save_dataset`]: images in label-file order plus their names.
pub fn load_dataset<T: Real>(dir: &Path) -> Result<(LabeledSet<T>, Vec<String>)> {
    let path = dir.join(LABELS_FILE);
    let text = fs::read_to_string(&path)?;
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut names = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (file, id) = line
            .split_once(',')
            .ok_or_else(|| format_err(&path, format!("line {}: expected filename,identity_id", ln + 1)))?;
        let id: usize = id
            .trim()
            .parse()
            .map_err(|_| format_err(&path, format!("line {}: bad identity {id:?}", ln + 1)))?;
        let img = load_image::<T>(&dir.join(file.trim()))?;
        if let Some(first) = images.first() {
            let first: &Tensor4<T> = first;
            if first.dims() != img.dims() {
                return Err(format_err(&path, format!("{file} has dims {}, expected {}", img.dims(), first.dims())));
            }
        }
        images.push(img);
        labels.push(id);
        names.push(file.trim().to_string());
    }
    if images.is_empty() {
        return Err(format_err(&path, "no images listed"));
    }
    let refs: Vec<_> = images.iter().collect();
    Ok((
        LabeledSet {
            images: Tensor4::stack(&refs)?,
            labels,
        },
        names,
    ))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pair {
    pub a: String,
    pub b: String,
    pub same: bool,
}

/// Every same-identity pair plus up to `max_impostors` cross-identity
/// pairs drawn without replacement (all of them when the limit is larger
/// than the pool).
pub fn make_pairs(labels: &[usize], names: &[String], max_impostors: usize, seed: u64) -> Vec<Pair> {
    let mut genuine = Vec::new();
    let mut impostor = Vec::new();
    for i in 0..labels.len() {
        for j in i + 1..labels.len() {
            let p = Pair {
                a: names[i].clone(),
                b: names[j].clone(),
                same: labels[i] == labels[j],
            };
            if p.same {
                genuine.push(p);
            } else {
                impostor.push(p);
            }
        }
    }
    if impostor.len() > max_impostors {
        let mut rng = param_rng(seed, "pairs");
        impostor.shuffle(&mut rng);
        impostor.truncate(max_impostors);
    }
    genuine.extend(impostor);
    genuine
}

pub fn write_pairs(path: &Path, pairs: &[Pair]) -> Result<()> {
    let text: String = pairs
        .iter()
        .map(|p| format!("{},{},{}\n", p.a, p.b, u8::from(p.same)))
        .collect();
    fs::write(path, text)?;
    Ok(())
}

pub fn read_pairs(path: &Path) -> Result<Vec<Pair>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<_> = line.split(',').map(str::trim).collect();
        let same = match parts.as_slice() {
            [_, _, "1"] => true,
            [_, _, "0"] => false,
            _ => {
                return Err(format_err(
                    path,
                    format!("line {}: expected file_a,file_b,same{{0|1}}", ln + 1),
                ))
            }
        };
        out.push(Pair {
            a: parts[0].to_string(),
            b: parts[1].to_string(),
            same,
        });
    }
    Ok(out)
}

pub fn pairs_path(dir: &Path) -> PathBuf {
    dir.join(PAIRS_FILE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SyntheticSpec};

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            identities: 2,
            samples_per_identity: 3,
            height: 4,
            width: 6,
            ..SyntheticSpec::default()
        };
        let set = gen_synthetic::<f32>(&spec).unwrap();
        let names = save_dataset(&set, dir.path()).unwrap();
        let (back, back_names) = load_dataset::<f32>(dir.path()).unwrap();
        assert_eq!(back, set);
        assert_eq!(back_names, names);
        let labels = fs::read_to_string(dir.path().join(LABELS_FILE)).unwrap();
        assert_eq!(labels.lines().nth(4).unwrap(), "img00004.msct,1");
    }

    #[test]
    fn pairs_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let names: Vec<String> = (0..4).map(image_file).collect();
        let pairs = make_pairs(&[0, 0, 1, 1], &names, 100, 0);
        assert_eq!(pairs.len(), 6);
        assert_eq!(pairs.iter().filter(|p| p.same).count(), 2);
        let path = pairs_path(dir.path());
        write_pairs(&path, &pairs).unwrap();
        assert_eq!(read_pairs(&path).unwrap(), pairs);
        assert_eq!(make_pairs(&[0, 0, 1, 1], &names, 1, 0).len(), 3);
    }

    #[test]
    fn rejects_malformed_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.txt");
        fs::write(&path, "a,b,2\n").unwrap();
        assert!(matches!(read_pairs(&path), Err(Error::Format { .. })));
    }
}
