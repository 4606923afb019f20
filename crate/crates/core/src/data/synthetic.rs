use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::param::param_rng;
use crate::real::Real;
use crate::tensor::{Dims4, Tensor4};

/// Side of the square cells making up an identity's base pattern.
const CELL: usize = 4;
const BASE_AMPLITUDE: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub identities: usize,
    pub samples_per_identity: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Std of the Gaussian pixel noise.
    pub noise: f64,
    /// Largest circular translation, in pixels, along each axis.
    pub max_shift: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            identities: 10,
            samples_per_identity: 50,
            height: 32,
            width: 32,
            channels: 3,
            noise: 0.2,
            max_shift: 2,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.identities == 0 || self.samples_per_identity == 0 {
            return Err(Error::Config("identity and sample counts must be positive".into()));
        }
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(Error::Config("image dims must be positive".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise must be finite and >= 0, got {}", self.noise)));
        }
        Ok(())
    }

    pub fn image_dims(&self, n: usize) -> Dims4 {
        Dims4::new(n, self.height, self.width, self.channels)
    }
}

/// Images stacked along the batch axis with one identity label each.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet<T: Real = f64> {
    pub images: Tensor4<T>,
    pub labels: Vec<usize>,
}

impl<T: Real> LabeledSet<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |&m| m + 1)
    }

    /// Gather a batch in the given sample order.
    pub fn batch(&self, indices: &[usize]) -> (Tensor4<T>, Vec<usize>) {
        let samples: Vec<_> = indices.iter().map(|&i| self.images.sample(i)).collect();
        let refs: Vec<_> = samples.iter().collect();
        let x = Tensor4::stack(&refs).expect("samples share dims");
        (x, indices.iter().map(|&i| self.labels[i]).collect())
    }

    pub fn cast<U: Real>(&self) -> LabeledSet<U> {
        LabeledSet {
            images: self.images.cast(),
            labels: self.labels.clone(),
        }
    }
}

fn base_pattern(spec: &SyntheticSpec, identity: usize) -> Vec<f64> {
    let mut rng = param_rng(spec.seed, &format!("identity{identity}"));
    let gh = spec.height.div_ceil(CELL);
    let gw = spec.width.div_ceil(CELL);
    let cells: Vec<f64> = (0..gh * gw * spec.channels)
        .map(|_| rng.random_range(-BASE_AMPLITUDE..=BASE_AMPLITUDE))
        .collect();
    let mut out = Vec::with_capacity(spec.height * spec.width * spec.channels);
    for y in 0..spec.height {
        for x in 0..spec.width {
            for c in 0..spec.channels {
                out.push(cells[((y / CELL) * gw + x / CELL) * spec.channels + c]);
            }
        }
    }
    out
}

fn render(spec: &SyntheticSpec, base: &[f64], stream: &str, identity: usize, k: usize) -> Vec<f64> {
    let mut rng = param_rng(spec.seed, &format!("{stream}/{identity}/{k}"));
    let s = spec.max_shift as i64;
    let dy = rng.random_range(-s..=s);
    let dx = rng.random_range(-s..=s);
    let (h, w, ch) = (spec.height as i64, spec.width as i64, spec.channels);
    let mut out = Vec::with_capacity(base.len());
    for y in 0..h {
        for x in 0..w {
            let sy = (y + dy).rem_euclid(h) as usize;
            let sx = (x + dx).rem_euclid(w) as usize;
            for c in 0..ch {
                let z: f64 = StandardNormal.sample(&mut rng);
                let v = base[(sy * spec.width + sx) * ch + c] + spec.noise * z;
                out.push(v.clamp(-1.0, 1.0));
            }
        }
    }
    out
}

fn generate<T: Real>(spec: &SyntheticSpec, stream: &str, per_identity: usize) -> Result<LabeledSet<T>> {
    spec.validate()?;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for id in 0..spec.identities {
        let base = base_pattern(spec, id);
        for k in 0..per_identity {
            data.extend(render(spec, &base, stream, id, k).into_iter().map(T::lit));
            labels.push(id);
        }
    }
    let images = Tensor4::new(spec.image_dims(labels.len()), data)?;
    Ok(LabeledSet { images, labels })
}

/// Training images: a fixed random base pattern per identity plus noise and
/// a circular shift per sample, clamped to `[-1, 1]`. Samples are ordered
/// identity-major.
pub fn gen_synthetic<T: Real>(spec: &SyntheticSpec) -> Result<LabeledSet<T>> {
    generate(spec, "train", spec.samples_per_identity)
}

/// Fresh samples of the same identities from an independent noise stream.
pub fn gen_heldout<T: Real>(spec: &SyntheticSpec, per_identity: usize) -> Result<LabeledSet<T>> {
    if per_identity == 0 {
        return Err(Error::Config("held-out samples per identity must be positive".into()));
    }
    generate(spec, "heldout", per_identity)
}
