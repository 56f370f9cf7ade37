//! Synthetic multi-label multispectral patches, on-disk patch storage, band
//! selection and resizing.
//!
//! Every class owns a deterministic spectral signature (a per-channel
//! profile) and a spatial motif (disk, stripe or blob). A sample is the sum
//! of the motifs of its labels, scaled by their signatures, plus Gaussian
//! noise; the motif footprints are retained as per-label region masks so
//! class-evidence heatmaps can be scored against ground truth.
//!
//! Patch file layout (all little-endian): magic `S2PX`, u16 version, u16 C,
//! u16 H, u16 W, u32 class count, label bitmask (ceil(classes/8) bytes),
//! then C·H·W f32 pixels. A JSON manifest lists relative paths, split tags
//! and the dataset descriptor.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels;
use crate::metrics::LabelSet;
use crate::tensor::Tensor;

pub const PATCH_MAGIC: &[u8; 4] = b"S2PX";
pub const PATCH_VERSION: u16 = 1;

/// Spectral bands that never appear in any roster (atmospheric bands with
/// no surface information).
pub const EXCLUDED_BANDS: [&str; 3] = ["B01", "B09", "B10"];

const OPTICAL_BANDS: [&str; 10] = [
    "B02", "B03", "B04", "B05", "B06", "B07", "B08", "B8A", "B11", "B12",
];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("format: {0}")]
    Format(String),
    #[error("unknown band {0:?}")]
    UnknownBand(String),
    #[error("band {0:?} is excluded and must not appear in a roster")]
    ExcludedBand(String),
    #[error("manifest: {0}")]
    Manifest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub bands: Vec<String>,
    pub resolution: usize,
    pub num_classes: usize,
    pub split: Split,
}

impl DatasetDescriptor {
    pub fn validate(&self) -> Result<(), DataError> {
        for b in &self.bands {
            if EXCLUDED_BANDS.contains(&b.as_str()) {
                return Err(DataError::ExcludedBand(b.clone()));
            }
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.bands.len()
    }
}

/// Default roster for a channel count: the 10 usable optical bands, plus
/// the two synthetic radar-like channels (VV, VH) in 12-channel mode.
pub fn standard_bands(channels: usize) -> Result<Vec<String>, DataError> {
    if channels == 0 || channels > 12 {
        return Err(DataError::Format(format!(
            "no standard roster for {channels} channels"
        )));
    }
    let mut bands: Vec<String> = OPTICAL_BANDS
        .iter()
        .take(channels.min(10))
        .map(|s| s.to_string())
        .collect();
    if channels > 10 {
        bands.push("VV".into());
        if channels > 11 {
            bands.push("VH".into());
        }
    }
    Ok(bands)
}

#[derive(Debug, Clone)]
pub struct PatchSample {
    /// C×H×W pixels.
    pub pixels: Tensor<f32>,
    pub labels: LabelSet,
    pub id: String,
    /// Per-label binary motif footprints (synthetic data only).
    pub masks: Vec<(usize, Vec<bool>)>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub descriptor: DatasetDescriptor,
    pub samples: Vec<PatchSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

// ── synthetic generation ────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: usize,
    pub channels: usize,
    pub resolution: usize,
    pub noise: f64,
    pub min_labels: usize,
    pub max_labels: usize,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(classes: usize, channels: usize, resolution: usize, seed: u64) -> Self {
        Self {
            classes,
            channels,
            resolution,
            noise: 0.05,
            min_labels: 1,
            max_labels: 4,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Motif {
    Disk,
    Stripe,
    Blob,
}

/// Deterministic per-class spectral signature in [0.35, 1.0].
fn class_signature(spec: &SynthSpec, class: usize) -> Vec<f32> {
    let mut rng = ChaCha20Rng::seed_from_u64(
        spec.seed ^ (class as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15),
    );
    (0..spec.channels)
        .map(|_| (0.35 + 0.65 * rng.gen::<f64>()) as f32)
        .collect()
}

/// Renders one motif instance; returns (intensity map, binary footprint).
/// The intensity is rescaled to a fixed spatial mean so a sample's channel
/// means reflect its spectral signatures rather than the motif footprint
/// area, which keeps single-label classes linearly separable.
fn render_motif(
    kind: Motif,
    res: usize,
    rng: &mut ChaCha20Rng,
) -> (Vec<f32>, Vec<bool>) {
    let r = res as f64;
    let mut intensity = vec![0f32; res * res];
    let mut mask = vec![false; res * res];
    match kind {
        Motif::Disk => {
            let radius = r * (0.16 + 0.10 * rng.gen::<f64>());
            let cx = radius + rng.gen::<f64>() * (r - 2.0 * radius);
            let cy = radius + rng.gen::<f64>() * (r - 2.0 * radius);
            for y in 0..res {
                for x in 0..res {
                    let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                    if d2 <= radius * radius {
                        intensity[y * res + x] = 1.0;
                        mask[y * res + x] = true;
                    }
                }
            }
        }
        Motif::Stripe => {
            let width = r * (0.14 + 0.08 * rng.gen::<f64>());
            let vertical = rng.gen::<bool>();
            let offset = rng.gen::<f64>() * (r - width);
            for y in 0..res {
                for x in 0..res {
                    let pos = if vertical { x as f64 } else { y as f64 };
                    if pos >= offset && pos < offset + width {
                        intensity[y * res + x] = 1.0;
                        mask[y * res + x] = true;
                    }
                }
            }
        }
        Motif::Blob => {
            let sigma = r * (0.12 + 0.08 * rng.gen::<f64>());
            let cx = sigma + rng.gen::<f64>() * (r - 2.0 * sigma);
            let cy = sigma + rng.gen::<f64>() * (r - 2.0 * sigma);
            for y in 0..res {
                for x in 0..res {
                    let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                    let v = (-d2 / (2.0 * sigma * sigma)).exp();
                    intensity[y * res + x] = v as f32;
                    mask[y * res + x] = v > 0.3;
                }
            }
        }
    }
    let mean: f32 = intensity.iter().sum::<f32>() / intensity.len() as f32;
    let scale = (0.12 / mean.max(1e-6)).min(3.0);
    for v in intensity.iter_mut() {
        *v *= scale;
    }
    (intensity, mask)
}

/// Generates `count` samples with ids starting at `start_index`. Same spec
/// and index range always reproduce the identical dataset; distinct index
/// ranges give disjoint sample ids, which is how splits stay disjoint.
pub fn synth_generate(
    spec: &SynthSpec,
    split: Split,
    start_index: usize,
    count: usize,
) -> Result<Dataset, DataError> {
    if spec.classes == 0 || spec.classes > 64 || spec.min_labels == 0 {
        return Err(DataError::Format(format!(
            "bad synth spec: {} classes, min_labels {}",
            spec.classes, spec.min_labels
        )));
    }
    let bands = standard_bands(spec.channels)?;
    let descriptor = DatasetDescriptor {
        bands,
        resolution: spec.resolution,
        num_classes: spec.classes,
        split,
    };
    descriptor.validate()?;
    let signatures: Vec<Vec<f32>> = (0..spec.classes)
        .map(|k| class_signature(spec, k))
        .collect();
    let res = spec.resolution;
    let noise = Normal::new(0.0, spec.noise).map_err(|e| DataError::Format(e.to_string()))?;
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let idx = start_index + i;
        let mut rng = ChaCha20Rng::seed_from_u64(
            spec.seed
                .wrapping_mul(0x5851_F42D_4C95_7F2D)
                .wrapping_add(idx as u64 + 1),
        );
        let max_l = spec.max_labels.min(spec.classes);
        let n_labels = rng.gen_range(spec.min_labels..=max_l.max(spec.min_labels));
        let mut chosen: Vec<usize> = (0..spec.classes).collect();
        for j in 0..n_labels {
            let pick = rng.gen_range(j..spec.classes);
            chosen.swap(j, pick);
        }
        chosen.truncate(n_labels);
        chosen.sort_unstable();

        let mut pixels = vec![0f32; spec.channels * res * res];
        let mut labels = LabelSet::empty(spec.classes);
        let mut masks = Vec::with_capacity(n_labels);
        for &k in &chosen {
            labels.insert(k);
            let kind = match k % 3 {
                0 => Motif::Disk,
                1 => Motif::Stripe,
                _ => Motif::Blob,
            };
            let (intensity, mask) = render_motif(kind, res, &mut rng);
            for c in 0..spec.channels {
                let sig = signatures[k][c];
                let plane = &mut pixels[c * res * res..(c + 1) * res * res];
                for (p, &v) in plane.iter_mut().zip(intensity.iter()) {
                    *p += sig * v;
                }
            }
            masks.push((k, mask));
        }
        for p in pixels.iter_mut() {
            *p += noise.sample(&mut rng) as f32;
        }
        samples.push(PatchSample {
            pixels: Tensor::new(vec![spec.channels, res, res], pixels)
                .map_err(|e| DataError::Format(e.to_string()))?,
            labels,
            id: format!("synth-{}-{idx:06}", spec.seed),
            masks,
        });
    }
    Ok(Dataset {
        descriptor,
        samples,
    })
}

/// Train/test pair with disjoint sample ids from a single stream.
pub fn synth_pair(
    spec: &SynthSpec,
    n_train: usize,
    n_test: usize,
) -> Result<(Dataset, Dataset), DataError> {
    let train = synth_generate(spec, Split::Train, 0, n_train)?;
    let test = synth_generate(spec, Split::Test, n_train, n_test)?;
    Ok((train, test))
}

// ── channel selection and resizing ──────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMode {
    Rgb,
    RgbNir,
    All,
}

/// Keeps the requested bands: `rgb` keeps B04,B03,B02, `rgb_nir` adds B08,
/// `all` is the identity.
pub fn channel_subset(dataset: &Dataset, mode: ChannelMode) -> Result<Dataset, DataError> {
    let wanted: Vec<&str> = match mode {
        ChannelMode::All => return Ok(dataset.clone()),
        ChannelMode::Rgb => vec!["B04", "B03", "B02"],
        ChannelMode::RgbNir => vec!["B04", "B03", "B02", "B08"],
    };
    let indices: Vec<usize> = wanted
        .iter()
        .map(|w| {
            dataset
                .descriptor
                .bands
                .iter()
                .position(|b| b == w)
                .ok_or_else(|| DataError::UnknownBand(w.to_string()))
        })
        .collect::<Result<_, _>>()?;
    let res = dataset.descriptor.resolution;
    let plane = res * res;
    let samples = dataset
        .samples
        .iter()
        .map(|s| {
            let src = s.pixels.data();
            let mut data = Vec::with_capacity(indices.len() * plane);
            for &ci in &indices {
                data.extend_from_slice(&src[ci * plane..(ci + 1) * plane]);
            }
            PatchSample {
                pixels: Tensor::new(vec![indices.len(), res, res], data).expect("subset shape"),
                labels: s.labels,
                id: s.id.clone(),
                masks: s.masks.clone(),
            }
        })
        .collect();
    Ok(Dataset {
        descriptor: DatasetDescriptor {
            bands: wanted.iter().map(|s| s.to_string()).collect(),
            ..dataset.descriptor.clone()
        },
        samples,
    })
}

/// Bilinear resize of every patch (labels unchanged, masks nearest-neighbor).
pub fn resize_dataset(dataset: &Dataset, target: usize) -> Dataset {
    let src = dataset.descriptor.resolution;
    if src == target {
        return dataset.clone();
    }
    let rows = kernels::bilinear_axis(src, target);
    let cols = kernels::bilinear_axis(src, target);
    let channels = dataset.descriptor.channels();
    let samples = dataset
        .samples
        .iter()
        .map(|s| {
            let mut data = vec![0f32; channels * target * target];
            for c in 0..channels {
                kernels::resize_bilinear_plane(
                    &s.pixels.data()[c * src * src..(c + 1) * src * src],
                    src,
                    &rows,
                    &cols,
                    &mut data[c * target * target..(c + 1) * target * target],
                );
            }
            let masks = s
                .masks
                .iter()
                .map(|(k, m)| {
                    let mut out = vec![false; target * target];
                    for (y, out_row) in out.chunks_mut(target).enumerate() {
                        let sy = ((y as f64 + 0.5) * src as f64 / target as f64) as usize;
                        for (x, o) in out_row.iter_mut().enumerate() {
                            let sx = ((x as f64 + 0.5) * src as f64 / target as f64) as usize;
                            *o = m[sy.min(src - 1) * src + sx.min(src - 1)];
                        }
                    }
                    (*k, out)
                })
                .collect();
            PatchSample {
                pixels: Tensor::new(vec![channels, target, target], data).expect("resize shape"),
                labels: s.labels,
                id: s.id.clone(),
                masks,
            }
        })
        .collect();
    Dataset {
        descriptor: DatasetDescriptor {
            resolution: target,
            ..dataset.descriptor.clone()
        },
        samples,
    }
}

// ── on-disk patch format ────────────────────────────────────────────────

pub fn write_patch<W: Write>(w: &mut W, sample: &PatchSample) -> Result<(), DataError> {
    let shape = sample.pixels.shape();
    let (c, h, wd) = (shape[0], shape[1], shape[2]);
    w.write_all(PATCH_MAGIC)?;
    w.write_all(&PATCH_VERSION.to_le_bytes())?;
    w.write_all(&(c as u16).to_le_bytes())?;
    w.write_all(&(h as u16).to_le_bytes())?;
    w.write_all(&(wd as u16).to_le_bytes())?;
    let classes = sample.labels.num_classes();
    w.write_all(&(classes as u32).to_le_bytes())?;
    let bits = sample.labels.bits();
    let n_bytes = classes.div_ceil(8);
    w.write_all(&bits.to_le_bytes()[..n_bytes])?;
    for v in sample.pixels.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_patch<R: Read>(r: &mut R, id: String) -> Result<PatchSample, DataError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| DataError::Format("truncated patch header".into()))?;
    if &magic != PATCH_MAGIC {
        return Err(DataError::Format(format!(
            "bad magic {magic:?}, expected {PATCH_MAGIC:?}"
        )));
    }
    let mut u16buf = [0u8; 2];
    let mut read_u16 = |r: &mut R| -> Result<u16, DataError> {
        r.read_exact(&mut u16buf)
            .map_err(|_| DataError::Format("truncated patch header".into()))?;
        Ok(u16::from_le_bytes(u16buf))
    };
    let version = read_u16(r)?;
    if version != PATCH_VERSION {
        return Err(DataError::Format(format!(
            "unsupported patch version {version}"
        )));
    }
    let c = read_u16(r)? as usize;
    let h = read_u16(r)? as usize;
    let w = read_u16(r)? as usize;
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)
        .map_err(|_| DataError::Format("truncated patch header".into()))?;
    let classes = u32::from_le_bytes(u32buf) as usize;
    if classes == 0 || classes > 64 {
        return Err(DataError::Format(format!("class count {classes} out of range")));
    }
    let n_bytes = classes.div_ceil(8);
    let mut bit_bytes = [0u8; 8];
    r.read_exact(&mut bit_bytes[..n_bytes])
        .map_err(|_| DataError::Format("truncated label bitmask".into()))?;
    let labels = LabelSet::from_bits(classes, u64::from_le_bytes(bit_bytes));
    let n = c * h * w;
    let mut data = Vec::with_capacity(n);
    let mut f32buf = [0u8; 4];
    for _ in 0..n {
        r.read_exact(&mut f32buf)
            .map_err(|_| DataError::Format("truncated pixel payload".into()))?;
        data.push(f32::from_le_bytes(f32buf));
    }
    Ok(PatchSample {
        pixels: Tensor::new(vec![c, h, w], data).map_err(|e| DataError::Format(e.to_string()))?,
        labels,
        id,
        masks: Vec::new(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub split: Split,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub descriptor: DatasetDescriptor,
    pub patches: Vec<ManifestEntry>,
}

/// Writes the given splits into `root` (one `.s2px` file per sample plus a
/// `manifest.json`).
pub fn save_dataset(root: &Path, datasets: &[&Dataset]) -> Result<(), DataError> {
    fs::create_dir_all(root)?;
    let descriptor = datasets
        .first()
        .ok_or_else(|| DataError::Manifest("nothing to save".into()))?
        .descriptor
        .clone();
    let mut patches = Vec::new();
    for ds in datasets {
        for s in &ds.samples {
            let rel = format!("{}.s2px", s.id);
            let mut f = fs::File::create(root.join(&rel))?;
            write_patch(&mut f, s)?;
            patches.push(ManifestEntry {
                path: rel,
                split: ds.descriptor.split,
            });
        }
    }
    let manifest = Manifest {
        descriptor,
        patches,
    };
    fs::write(
        root.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).map_err(|e| DataError::Manifest(e.to_string()))?,
    )?;
    Ok(())
}

/// Loads one split from a dataset root, validating every patch against the
/// manifest descriptor.
pub fn load_dataset(root: &Path, split: Split) -> Result<Dataset, DataError> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(root.join("manifest.json"))?)
        .map_err(|e| DataError::Manifest(e.to_string()))?;
    manifest.descriptor.validate()?;
    let mut samples = Vec::new();
    for entry in manifest.patches.iter().filter(|e| e.split == split) {
        let mut f = fs::File::open(root.join(&entry.path))?;
        let id = entry
            .path
            .trim_end_matches(".s2px")
            .to_string();
        let patch = read_patch(&mut f, id)?;
        let shape = patch.pixels.shape();
        if shape[0] != manifest.descriptor.channels() {
            return Err(DataError::Format(format!(
                "{}: {} channels but descriptor lists {} bands",
                entry.path,
                shape[0],
                manifest.descriptor.channels()
            )));
        }
        if patch.labels.num_classes() != manifest.descriptor.num_classes {
            return Err(DataError::Format(format!(
                "{}: label width {} != descriptor classes {}",
                entry.path,
                patch.labels.num_classes(),
                manifest.descriptor.num_classes
            )));
        }
        samples.push(patch);
    }
    Ok(Dataset {
        descriptor: DatasetDescriptor {
            split,
            ..manifest.descriptor
        },
        samples,
    })
}
