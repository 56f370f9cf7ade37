//! Class-evidence heatmaps over the final convolutional feature maps.
//!
//! The map for class c is ReLU(Σ_k α_k·A_k) where α_k is the spatial mean
//! of ∂logit_c/∂A_k, bilinearly upsampled to the input size and min-max
//! normalized into [0, 1]. An all-zero map stays all-zero and is flagged
//! degenerate instead of dividing by zero.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::Model;
use crate::data::PatchSample;
use crate::kernels;
use crate::scalar::Scalar;
use crate::tape::{Mode, Tape};
use crate::tensor::ShapeError;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("family {0} has no final convolutional feature stage")]
    UnsupportedFamily(String),
    #[error("class index {index} out of range for {classes} classes")]
    BadClass { index: usize, classes: usize },
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub height: usize,
    pub width: usize,
    /// Row-major values in [0, 1].
    pub values: Vec<f64>,
    /// True when the raw map was identically zero (no positive evidence).
    pub degenerate: bool,
}

impl Heatmap {
    /// Fraction of the top-decile heat mass falling inside `mask`.
    pub fn top_decile_mass_inside(&self, mask: &[bool]) -> f64 {
        assert_eq!(mask.len(), self.values.len());
        let mut sorted: Vec<f64> = self.values.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite heat"));
        let threshold = sorted[(sorted.len() * 9) / 10];
        let mut total = 0.0;
        let mut inside = 0.0;
        for (v, &m) in self.values.iter().zip(mask.iter()) {
            if *v >= threshold && *v > 0.0 {
                total += v;
                if m {
                    inside += v;
                }
            }
        }
        if total == 0.0 {
            0.0
        } else {
            inside / total
        }
    }
}

/// Combines feature maps and their gradients into the normalized heatmap.
/// Exposed separately so the normalization-invariance property can be
/// checked exactly at this level.
pub fn gradcam_from_parts<E: Scalar>(
    features: &[E],
    grads: &[E],
    channels: usize,
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
) -> Heatmap {
    let area = h * w;
    debug_assert_eq!(features.len(), channels * area);
    debug_assert_eq!(grads.len(), channels * area);
    // channel weights: spatial mean of the gradient
    let mut raw = vec![E::ZERO; area];
    for c in 0..channels {
        let gplane = &grads[c * area..(c + 1) * area];
        let mut alpha = E::ZERO;
        for &g in gplane {
            alpha = alpha + g;
        }
        alpha = alpha / E::from_f64c(area as f64);
        let fplane = &features[c * area..(c + 1) * area];
        for (r, &f) in raw.iter_mut().zip(fplane.iter()) {
            *r = *r + alpha * f;
        }
    }
    for v in raw.iter_mut() {
        if *v < E::ZERO {
            *v = E::ZERO;
        }
    }
    // upsample then min-max normalize
    let rows = kernels::bilinear_axis(h, out_h);
    let cols = kernels::bilinear_axis(w, out_w);
    let mut up = vec![E::ZERO; out_h * out_w];
    kernels::resize_bilinear_plane(&raw, w, &rows, &cols, &mut up);
    let mut lo = up[0];
    let mut hi = up[0];
    for &v in &up {
        if v < lo {
            lo = v;
        }
        if v > hi {
            hi = v;
        }
    }
    let degenerate = hi == E::ZERO;
    let values = if degenerate || hi == lo {
        vec![0.0; out_h * out_w]
    } else {
        up.iter()
            .map(|&v| ((v - lo) / (hi - lo)).to_f64c())
            .collect()
    };
    Heatmap {
        height: out_h,
        width: out_w,
        values,
        degenerate,
    }
}

/// Class-evidence heatmap for one sample, upsampled to the input size.
pub fn gradcam<E: Scalar>(
    model: &mut Model<E>,
    sample: &PatchSample,
    class_index: usize,
) -> Result<Heatmap, ExplainError> {
    if !model.config.family.is_convolutional() {
        return Err(ExplainError::UnsupportedFamily(
            model.config.family.tag().to_string(),
        ));
    }
    if class_index >= model.config.num_classes {
        return Err(ExplainError::BadClass {
            index: class_index,
            classes: model.config.num_classes,
        });
    }
    let shape = sample.pixels.shape();
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let mut tape = Tape::new();
    let binding = model.bind(&mut tape);
    let x = tape.leaf_from(
        vec![1, c, h, w],
        sample
            .pixels
            .data()
            .iter()
            .map(|&v| E::from_f64c(v as f64))
            .collect(),
    )?;
    let traced = model.forward_traced(&mut tape, &binding, x, Mode::Eval)?;
    let features = traced
        .features
        .expect("convolutional families trace features");
    let target = tape.slice(traced.logits, 1, class_index, 1)?;
    let loss = tape.sum_all(target);
    tape.backward(loss)?;
    let fshape = tape.shape(features).to_vec();
    let (fc, fh, fw) = (fshape[1], fshape[2], fshape[3]);
    let fvals = tape.data(features).to_vec();
    let zeros;
    let grads = match tape.grad(features) {
        Some(g) => g,
        None => {
            zeros = vec![E::ZERO; fvals.len()];
            &zeros
        }
    };
    Ok(gradcam_from_parts(&fvals, grads, fc, fh, fw, h, w))
}

/// TP/FP/FN tag for the sidecar when ground-truth labels are available.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EvidenceTag {
    Tp,
    Fp,
    Fn,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sidecar {
    pub class_index: usize,
    pub class_name: String,
    pub probability: f64,
    pub tag: Option<EvidenceTag>,
    pub degenerate: bool,
}

/// Binary PGM (P5), maxval 255, row-major.
pub fn write_pgm(heatmap: &Heatmap, path: &Path) -> Result<(), ExplainError> {
    let mut f = fs::File::create(path)?;
    write!(f, "P5\n{} {}\n255\n", heatmap.width, heatmap.height)?;
    let bytes: Vec<u8> = heatmap
        .values
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    f.write_all(&bytes)?;
    Ok(())
}

/// Reads back a P5 file written by [`write_pgm`] (used by tests and the
/// CLI round-trip checks).
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>), ExplainError> {
    let raw = fs::read(path)?;
    let header_end = raw
        .iter()
        .enumerate()
        .filter(|(_, &b)| b == b'\n')
        .map(|(i, _)| i)
        .nth(2)
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidData, "short header"))?;
    let header = std::str::from_utf8(&raw[..header_end])
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
    let mut lines = header.lines();
    let magic = lines.next().unwrap_or_default();
    if magic != "P5" {
        return Err(ExplainError::Io(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("not a P5 file: {magic:?}"),
        )));
    }
    let dims = lines.next().unwrap_or_default();
    let mut it = dims.split_whitespace();
    let w: usize = it.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let h: usize = it.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    Ok((h, w, raw[header_end + 1..].to_vec()))
}

pub fn write_sidecar(sidecar: &Sidecar, path: &Path) -> Result<(), ExplainError> {
    fs::write(
        path,
        serde_json::to_string_pretty(sidecar)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?,
    )?;
    Ok(())
}
