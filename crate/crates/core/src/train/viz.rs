use std::fs;
use std::path::{Path, PathBuf};

use crate::block::forward_traced;
use crate::error::{Error, Result};
use crate::model::TinyNet;
use crate::real::Real;
use crate::tensor::io::write_tensor4;
use crate::tensor::{ew_add, ew_mul, ew_sub, Tensor4};

pub const DEFAULT_TOP_K: usize = 5;
pub const MAP_NAMES: [&str; 5] = ["u1", "u2", "add", "mul", "sub"];

/// Grayscale bytes of one channel, min-max scaled to `0..=255`. A constant
/// channel maps to mid-gray 128.
pub fn normalize_channel(t: &Tensor4<f32>, channel: usize) -> Vec<u8> {
    let d = t.dims();
    let vals: Vec<f32> = (0..d.h)
        .flat_map(|y| (0..d.w).map(move |x| (y, x)))
        .map(|(y, x)| t.at(0, y, x, channel))
        .collect();
    let lo = vals.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = vals.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if !(hi > lo) {
        return vec![128; vals.len()];
    }
    vals.iter()
        .map(|&v| ((v - lo) / (hi - lo) * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect()
}

pub fn pgm_bytes(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Parse a binary PGM written by [`pgm_bytes`]: `(width, height, pixels)`.
pub fn read_pgm(bytes: &[u8]) -> Option<(usize, usize, Vec<u8>)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while bytes.get(pos)?.is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while !bytes.get(pos)?.is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).ok()?);
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "255" {
        return None;
    }
    let (w, h): (usize, usize) = (fields[1].parse().ok()?, fields[2].parse().ok()?);
    let pixels = bytes.get(pos..pos + w * h)?.to_vec();
    Some((w, h, pixels))
}

/// The five maps shown per channel, computed from single-precision
/// branch outputs exactly as they are dumped.
pub fn fusion_maps(u1: &Tensor4<f32>, u2: &Tensor4<f32>) -> Result<[Tensor4<f32>; 5]> {
    Ok([
        u1.clone(),
        u2.clone(),
        ew_add(u1, u2)?,
        ew_mul(u1, u2)?,
        ew_sub(u1, u2)?,
    ])
}

/// Channels with the largest `Σ u1² + u2²`, strongest first; ties keep the
/// lower index.
pub fn top_channels(u1: &Tensor4<f32>, u2: &Tensor4<f32>, k: usize) -> Vec<usize> {
    let c = u1.dims().c;
    let mut energy = vec![0.0f64; c];
    for (i, (&a, &b)) in u1.data().iter().zip(u2.data()).enumerate() {
        energy[i % c] += (a as f64).powi(2) + (b as f64).powi(2);
    }
    let mut idx: Vec<usize> = (0..c).collect();
    idx.sort_by(|&a, &b| energy[b].total_cmp(&energy[a]).then(a.cmp(&b)));
    idx.truncate(k.min(c));
    idx
}

#[derive(Debug, Clone, PartialEq)]
pub struct VizOutput {
    pub channels: Vec<usize>,
    pub images: Vec<PathBuf>,
    pub u1: PathBuf,
    pub u2: PathBuf,
}

pub fn pgm_name(map: &str, channel: usize) -> String {
    format!("{map}_ch{channel:03}.pgm")
}

/// For block `layer` of `net` applied to a single image, write PGM maps of
/// `U1`, `U2`, their sum, product and difference for the top-`k` channels,
/// plus `u1.msct`, `u2.msct` and `channels.txt`.
pub fn visualize_features<T: Real>(
    net: &TinyNet<T>,
    image: &Tensor4<T>,
    layer: usize,
    top_k: usize,
    out_dir: &Path,
) -> Result<VizOutput> {
    if layer >= net.units.len() {
        return Err(Error::InvalidArgument(format!(
            "layer {layer} out of range ({} blocks)",
            net.units.len()
        )));
    }
    if image.dims().n != 1 {
        return Err(Error::InvalidArgument("visualisation takes a single image".into()));
    }
    let unit = &net.units[layer];
    let x = net.unit_input(image, layer)?;
    let trace = forward_traced(unit.kind, &x, &unit.block)?;
    let (u1, u2) = (trace.u1.cast::<f32>(), trace.u2.cast::<f32>());
    fs::create_dir_all(out_dir)?;
    let out = VizOutput {
        channels: top_channels(&u1, &u2, top_k),
        images: Vec::new(),
        u1: out_dir.join("u1.msct"),
        u2: out_dir.join("u2.msct"),
    };
    write_tensor4(&out.u1, &u1)?;
    write_tensor4(&out.u2, &u2)?;
    let maps = fusion_maps(&u1, &u2)?;
    let d = u1.dims();
    let mut images = Vec::new();
    for &c in &out.channels {
        for (name, map) in MAP_NAMES.iter().zip(&maps) {
            let path = out_dir.join(pgm_name(name, c));
            fs::write(&path, pgm_bytes(d.w, d.h, &normalize_channel(map, c)))?;
            images.push(path);
        }
    }
    let listing: String = out.channels.iter().map(|c| format!("{c}\n")).collect();
    fs::write(out_dir.join("channels.txt"), listing)?;
    Ok(VizOutput { images, ..out })
}
