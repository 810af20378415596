//! Datasets: deterministic synthetic grating tasks, the `VPDS` raw-tensor
//! file format, and centering onto a larger canvas.
//!
//! Class `c` of a synthetic task is a Gaussian-windowed sinusoidal grating
//! whose orientation, spatial frequency and polarity are functions of `c`.
//! The downstream style inverts contrast and rotates the grating by a
//! quarter turn, so a model fitted to the source style sees a shifted
//! distribution.

use std::f32::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const RAW_MAGIC: &[u8; 4] = b"VPDS";
const RAW_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Labelled images in `[0, 1]`, shape `N×C×h×w`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<usize>,
    classes: usize,
    split: Split,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, classes: usize, split: Split) -> Result<Self> {
        if images.rank() != 4 {
            return Err(Error::shape("dataset", format!("images {:?}", images.shape())));
        }
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if images.shape()[0] != labels.len() {
            return Err(Error::shape(
                "dataset",
                format!("{} images, {} labels", images.shape()[0], labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label: bad, classes });
        }
        if let Some(v) = images.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!("pixel {v} outside [0, 1]")));
        }
        Ok(Dataset {
            images,
            labels,
            classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    /// `(C, h, w)` of each image.
    pub fn image_shape(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let images = self.images.gather_rows(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((images, labels))
    }

    /// Contiguous batches in index order.
    pub fn chunks(&self, batch_size: usize) -> impl Iterator<Item = Vec<usize>> + '_ {
        let n = self.len();
        (0..n)
            .step_by(batch_size.max(1))
            .map(move |start| (start..(start + batch_size.max(1)).min(n)).collect())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Style {
    Source,
    Downstream,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_classes: usize,
    pub samples_per_class: usize,
    /// `(C, h, w)`
    pub image_size: (usize, usize, usize),
    pub style: Style,
    pub noise_level: f32,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let (c, h, w) = self.image_size;
        if self.n_classes < 2 {
            return Err(Error::InvalidSpec(
                "synthetic task needs at least 2 classes".into(),
            ));
        }
        if self.samples_per_class == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidSpec(format!(
                "degenerate synthetic spec: {} samples/class, image {:?}",
                self.samples_per_class, self.image_size
            )));
        }
        if !(0.0..0.5).contains(&self.noise_level) {
            return Err(Error::InvalidSpec(format!(
                "noise_level must lie in [0, 0.5), got {}",
                self.noise_level
            )));
        }
        Ok(())
    }
}

/// Grating parameters of class `c` out of `n`. Orientation sweeps a half
/// turn with the class index and frequency rises with it, so neighboring
/// indices are near-duplicates; polarity flips every second class.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Grating {
    orientation: f32,
    frequency: f32,
    polarity: f32,
}

impl Grating {
    fn of_class(c: usize, n: usize) -> Self {
        let t = c as f32 / n as f32;
        Grating {
            orientation: PI * t,
            frequency: 2.0 + 1.5 * t,
            polarity: if (c / 2).is_multiple_of(2) { 1.0 } else { -1.0 },
        }
    }
}

/// splitmix64 step, used to derive independent per-class streams.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn render_template(grating: Grating, style: Style, (c, h, w): (usize, usize, usize)) -> Vec<f32> {
    let (sin_t, cos_t) = grating.orientation.sin_cos();
    let sigma2 = 2.0 * 0.35f32 * 0.35;
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        let gain = 1.0 - 0.25 * (ch % 3) as f32;
        for y in 0..h {
            for x in 0..w {
                let mut u = (x as f32 + 0.5) / w as f32 - 0.5;
                let mut v = (y as f32 + 0.5) / h as f32 - 0.5;
                if style == Style::Downstream {
                    (u, v) = (-v, u);
                }
                let envelope = (-(u * u + v * v) / sigma2).exp();
                let phase = 2.0 * PI * grating.frequency * (u * cos_t + v * sin_t);
                let mut value = 0.4 * gain * grating.polarity * envelope * phase.cos();
                if style == Style::Downstream {
                    value = -value;
                }
                out.push(0.5 + value);
            }
        }
    }
    out
}

/// Pure function of `spec`; samples are ordered class by class. Besides
/// pixel noise, `noise_level` jitters each sample's orientation by up to
/// that fraction of the spacing between class orientations.
pub fn generate_synthetic(spec: &SynthSpec, split: Split) -> Result<Dataset> {
    spec.validate()?;
    let (c, h, w) = spec.image_size;
    let per_image = c * h * w;
    let n = spec.n_classes * spec.samples_per_class;
    let mut data = Vec::with_capacity(n * per_image);
    let mut labels = Vec::with_capacity(n);
    let spacing = PI / spec.n_classes as f32;
    for class in 0..spec.n_classes {
        let base = Grating::of_class(class, spec.n_classes);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, class as u64));
        for _ in 0..spec.samples_per_class {
            if spec.noise_level > 0.0 {
                let jitter = spec.noise_level * spacing * rng.gen_range(-1.0f32..=1.0);
                let grating = Grating {
                    orientation: base.orientation + jitter,
                    ..base
                };
                for t in render_template(grating, spec.style, spec.image_size) {
                    let noise = rng.gen_range(-spec.noise_level..=spec.noise_level);
                    data.push((t + noise).clamp(0.0, 1.0));
                }
            } else {
                data.extend(render_template(base, spec.style, spec.image_size));
            }
            labels.push(class);
        }
    }
    let images = Tensor::new(&[n, c, h, w], data)?;
    Dataset::new(images, labels, spec.n_classes, split)
}

/// Centers `batch[N×C×h×w]` on a zero `H×W` canvas. At least one pixel of
/// margin is required on each axis.
pub fn embed_center(batch: &Tensor, (height, width): (usize, usize)) -> Result<Tensor> {
    if batch.rank() != 4 {
        return Err(Error::shape("embed_center", format!("batch {:?}", batch.shape())));
    }
    let (n, c, h, w) = (
        batch.shape()[0],
        batch.shape()[1],
        batch.shape()[2],
        batch.shape()[3],
    );
    if h + 2 > height || w + 2 > width {
        return Err(Error::shape(
            "embed_center",
            format!("{h}x{w} image does not fit a {height}x{width} canvas with margin"),
        ));
    }
    let (oy, ox) = ((height - h) / 2, (width - w) / 2);
    let mut out = vec![0.0; n * c * height * width];
    for (plane_in, plane_out) in batch.data().chunks(h * w).zip(out.chunks_mut(height * width)) {
        for y in 0..h {
            let dst = (y + oy) * width + ox;
            plane_out[dst..dst + w].copy_from_slice(&plane_in[y * w..(y + 1) * w]);
        }
    }
    Tensor::new(&[n, c, height, width], out)
}

/// Writes the `VPDS` format: magic, `u16` version, `u32` N/C/h/w/K, N `u16`
/// labels, then `round(255·v)` as `u8` per pixel. All integers little-endian.
pub fn save_raw(dataset: &Dataset, path: &Path) -> Result<()> {
    let (c, h, w) = dataset.image_shape();
    if dataset.classes() > u16::MAX as usize + 1 {
        return Err(Error::InvalidInput("too many classes for u16 labels".into()));
    }
    let mut buf = Vec::with_capacity(26 + 2 * dataset.len() + dataset.images.numel());
    buf.extend_from_slice(RAW_MAGIC);
    buf.extend_from_slice(&RAW_VERSION.to_le_bytes());
    for v in [dataset.len(), c, h, w, dataset.classes()] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for &l in &dataset.labels {
        buf.extend_from_slice(&(l as u16).to_le_bytes());
    }
    buf.extend(dataset.images.data().iter().map(|&v| (v * 255.0).round() as u8));
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn load_raw(path: &Path, split: Split) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_raw(&bytes, split).map_err(|e| match e {
        Error::Corrupt { reason, .. } => Error::Corrupt {
            path: path.to_path_buf(),
            reason,
        },
        other => other,
    })
}

fn corrupt(reason: impl Into<String>) -> Error {
    Error::Corrupt {
        path: Default::default(),
        reason: reason.into(),
    }
}

fn parse_raw(bytes: &[u8], split: Split) -> Result<Dataset> {
    const HEADER: usize = 4 + 2 + 5 * 4;
    if bytes.len() < HEADER {
        return Err(corrupt("truncated header"));
    }
    if &bytes[..4] != RAW_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != RAW_VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let field = |i: usize| {
        let o = 6 + 4 * i;
        u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize
    };
    let (n, c, h, w, k) = (field(0), field(1), field(2), field(3), field(4));
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let pixels = n * c * h * w;
    let expected = HEADER + 2 * n + pixels;
    if bytes.len() != expected {
        return Err(corrupt(format!(
            "expected {expected} bytes, found {}",
            bytes.len()
        )));
    }
    let labels: Vec<usize> = bytes[HEADER..HEADER + 2 * n]
        .chunks_exact(2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]) as usize)
        .collect();
    let data = bytes[HEADER + 2 * n..]
        .iter()
        .map(|&b| b as f32 / 255.0)
        .collect();
    let images = Tensor::new(&[n, c, h, w], data)?;
    Dataset::new(images, labels, k, split)
}
