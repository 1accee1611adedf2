//! Labeled image datasets: IDX ingestion, deterministic splits, and a
//! self-contained synthetic pattern dataset.
//!
//! Pixels are always scaled to [0, 1] so attack budgets read directly in
//! pixel units.

use crate::tensor::Tensor;
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

/// A labeled image set. Images are (N, C, H, W) with pixels in [0, 1].
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if images.shape().len() != 4 {
            return Err(Error::invalid(format!(
                "dataset images must be 4-D, got {:?}",
                images.shape()
            )));
        }
        if images.shape()[0] != labels.len() {
            return Err(Error::format(
                0,
                format!(
                    "{} images but {} labels",
                    images.shape()[0],
                    labels.len()
                ),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= class_count) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        Ok(Dataset {
            images,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Shape of one example, (C, H, W).
    pub fn example_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    /// Copies the examples at `indices` into a new batch-ordered dataset.
    pub fn gather(&self, indices: &[usize]) -> Result<Dataset> {
        let [c, h, w] = self.example_shape();
        let stride = c * h * w;
        let mut data = Vec::with_capacity(indices.len() * stride);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::invalid(format!(
                    "index {i} out of range for dataset of {}",
                    self.len()
                )));
            }
            data.extend_from_slice(&self.images.data()[i * stride..(i + 1) * stride]);
            labels.push(self.labels[i]);
        }
        Ok(Dataset {
            images: Tensor::new(vec![indices.len(), c, h, w], data)?,
            labels,
            class_count: self.class_count,
        })
    }

    /// First `n` examples, in order.
    pub fn take(&self, n: usize) -> Result<Dataset> {
        let indices: Vec<usize> = (0..n.min(self.len())).collect();
        self.gather(&indices)
    }
}

/// Train/validation/test partition of one dataset.
#[derive(Debug, Clone)]
pub struct DatasetSplits {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

/// Deterministically shuffles by `seed` and splits by the given fractions
/// (which must sum to at most 1; the test split absorbs rounding).
pub fn split_dataset(
    data: &Dataset,
    train_fraction: f64,
    validation_fraction: f64,
    seed: u64,
) -> Result<DatasetSplits> {
    if !(0.0..=1.0).contains(&train_fraction)
        || !(0.0..=1.0).contains(&validation_fraction)
        || train_fraction + validation_fraction > 1.0
    {
        return Err(Error::Configuration(format!(
            "bad split fractions {train_fraction}/{validation_fraction}"
        )));
    }
    let mut indices: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5911_7a6); // split-domain tag
    indices.shuffle(&mut rng);
    let n_train = (data.len() as f64 * train_fraction).floor() as usize;
    let n_val = (data.len() as f64 * validation_fraction).floor() as usize;
    let train = data.gather(&indices[..n_train])?;
    let validation = data.gather(&indices[n_train..n_train + n_val])?;
    let test = data.gather(&indices[n_train + n_val..])?;
    Ok(DatasetSplits {
        train,
        validation,
        test,
    })
}

fn read_u32_be(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::format(offset as u64, "unexpected end of IDX data"))
}

/// Reads an IDX image file (big-endian magic 0x00000803), scaling pixels to
/// [0, 1].
pub fn read_idx_images(path: &Path) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path)?;
    let magic = read_u32_be(&bytes, 0)?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::format(
            0,
            format!("bad IDX image magic {magic:#010x}, expected {IDX_IMAGE_MAGIC:#010x}"),
        ));
    }
    let n = read_u32_be(&bytes, 4)? as usize;
    let h = read_u32_be(&bytes, 8)? as usize;
    let w = read_u32_be(&bytes, 12)? as usize;
    let expected = 16 + n * h * w;
    if bytes.len() != expected {
        return Err(Error::format(
            bytes.len() as u64,
            format!("IDX image payload is {} bytes, expected {expected}", bytes.len()),
        ));
    }
    let data: Vec<f32> = bytes[16..].iter().map(|&b| b as f32 / 255.0).collect();
    Tensor::new(vec![n, 1, h, w], data)
}

/// Reads an IDX label file (big-endian magic 0x00000801).
pub fn read_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = std::fs::read(path)?;
    let magic = read_u32_be(&bytes, 0)?;
    if magic != IDX_LABEL_MAGIC {
        return Err(Error::format(
            0,
            format!("bad IDX label magic {magic:#010x}, expected {IDX_LABEL_MAGIC:#010x}"),
        ));
    }
    let n = read_u32_be(&bytes, 4)? as usize;
    if bytes.len() != 8 + n {
        return Err(Error::format(
            bytes.len() as u64,
            format!("IDX label payload is {} bytes, expected {}", bytes.len(), 8 + n),
        ));
    }
    Ok(bytes[8..].iter().map(|&b| b as usize).collect())
}

/// Writes images (N, 1, H, W) in [0, 1] as an IDX file of u8 pixels.
pub fn write_idx_images(images: &Tensor<f32>, path: &Path) -> Result<()> {
    let s = images.shape();
    if s.len() != 4 || s[1] != 1 {
        return Err(Error::invalid(format!(
            "IDX export expects (N, 1, H, W) images, got {s:?}"
        )));
    }
    let mut bytes = Vec::with_capacity(16 + s[0] * s[2] * s[3]);
    bytes.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(s[0] as u32).to_be_bytes());
    bytes.extend_from_slice(&(s[2] as u32).to_be_bytes());
    bytes.extend_from_slice(&(s[3] as u32).to_be_bytes());
    bytes.extend(
        images
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn write_idx_labels(labels: &[usize], path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + labels.len());
    bytes.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &y in labels {
        if y > 255 {
            return Err(Error::invalid(format!("label {y} does not fit in a byte")));
        }
        bytes.push(y as u8);
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

pub const IDX_IMAGE_FILE: &str = "images-idx3-ubyte";
pub const IDX_LABEL_FILE: &str = "labels-idx1-ubyte";

/// Loads `images-idx3-ubyte` + `labels-idx1-ubyte` from a directory and
/// checks the pair is consistent.
pub fn ingest_dir(dir: &Path) -> Result<Dataset> {
    let images = read_idx_images(&dir.join(IDX_IMAGE_FILE))?;
    let labels = read_idx_labels(&dir.join(IDX_LABEL_FILE))?;
    if images.shape()[0] != labels.len() {
        return Err(Error::format(
            0,
            format!(
                "image count {} does not match label count {}",
                images.shape()[0],
                labels.len()
            ),
        ));
    }
    let class_count = labels.iter().copied().max().map_or(1, |m| m + 1);
    Dataset::new(images, labels, class_count)
}

/// Writes a dataset as an IDX pair into `dir`.
pub fn export_dir(data: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_idx_images(&data.images, &dir.join(IDX_IMAGE_FILE))?;
    write_idx_labels(&data.labels, &dir.join(IDX_LABEL_FILE))?;
    Ok(())
}

/// Controls for [`synthetic_dataset`].
#[derive(Debug, Clone, Copy)]
pub struct SyntheticConfig {
    pub examples: usize,
    pub image_size: usize,
    pub noise_sigma: f64,
    /// Per-example pattern intensity range (lo, hi).
    pub intensity: (f64, f64),
    pub jitter: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            examples: 12_000,
            image_size: 28,
            noise_sigma: 0.30,
            intensity: (0.5, 0.8),
            jitter: 4,
            seed: 7,
        }
    }
}

const SYNTH_CLASSES: usize = 10;

/// Procedural ten-class pattern dataset: geometric shapes with positional
/// jitter, intensity variation, and additive Gaussian noise. Small CNNs
/// learn it to high accuracy in a couple of epochs, which is all the desk
/// experiments need.
pub fn synthetic_dataset(cfg: &SyntheticConfig) -> Result<Dataset> {
    let n = cfg.examples;
    let size = cfg.image_size;
    if size < 16 {
        return Err(Error::Configuration(format!(
            "synthetic images need at least 16 pixels per side, got {size}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut data = vec![0f32; n * size * size];
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % SYNTH_CLASSES;
        labels.push(class);
        let image = &mut data[i * size * size..(i + 1) * size * size];
        draw_class(image, size, class, cfg, &mut rng);
    }
    let images = Tensor::new(vec![n, 1, size, size], data)?;
    Dataset::new(images, labels, SYNTH_CLASSES)
}

fn draw_class(
    image: &mut [f32],
    size: usize,
    class: usize,
    cfg: &SyntheticConfig,
    rng: &mut ChaCha8Rng,
) {
    let s = size as f64;
    let jitter = cfg.jitter as f64;
    let cx = s / 2.0 + rng.gen_range(-jitter..=jitter);
    let cy = s / 2.0 + rng.gen_range(-jitter..=jitter);
    let intensity = rng.gen_range(cfg.intensity.0..cfg.intensity.1) as f32;
    let scale = rng.gen_range(0.85..1.15);

    let mut paint = |pred: &dyn Fn(f64, f64) -> bool| {
        for y in 0..size {
            for x in 0..size {
                if pred(x as f64 - cx, y as f64 - cy) {
                    image[y * size + x] = intensity;
                }
            }
        }
    };

    match class {
        // filled disk
        0 => {
            let r = 5.5 * scale;
            paint(&|dx, dy| dx * dx + dy * dy <= r * r);
        }
        // ring
        1 => {
            let ro = 7.5 * scale;
            let ri = ro - 3.0;
            paint(&|dx, dy| {
                let d2 = dx * dx + dy * dy;
                d2 <= ro * ro && d2 >= ri * ri
            });
        }
        // horizontal bar
        2 => {
            let half = 2.0 * scale;
            paint(&|_, dy| dy.abs() <= half);
        }
        // vertical bar
        3 => {
            let half = 2.0 * scale;
            paint(&|dx, _| dx.abs() <= half);
        }
        // plus
        4 => {
            let half = 1.8 * scale;
            let arm = 8.0 * scale;
            paint(&|dx, dy| {
                (dx.abs() <= half && dy.abs() <= arm) || (dy.abs() <= half && dx.abs() <= arm)
            });
        }
        // X
        5 => {
            let half = 1.6 * scale;
            let arm = 8.5 * scale;
            paint(&|dx, dy| {
                ((dx - dy).abs() <= half * 1.6 || (dx + dy).abs() <= half * 1.6)
                    && dx.abs() <= arm
                    && dy.abs() <= arm
            });
        }
        // square outline
        6 => {
            let outer = 6.5 * scale;
            let inner = outer - 2.5;
            paint(&|dx, dy| {
                let m = dx.abs().max(dy.abs());
                m <= outer && m >= inner
            });
        }
        // filled triangle
        7 => {
            let r = 7.5 * scale;
            paint(&|dx, dy| dy >= -r / 2.0 && dy <= r / 2.0 && dx.abs() <= (dy + r / 2.0) / 1.4);
        }
        // two dots
        8 => {
            let r = 2.8 * scale;
            let off = 5.5 * scale;
            paint(&|dx, dy| {
                let left = (dx + off).powi(2) + dy * dy <= r * r;
                let right = (dx - off).powi(2) + dy * dy <= r * r;
                left || right
            });
        }
        // diagonal stripes
        _ => {
            let period = 7.0 * scale;
            let half = 1.5 * scale;
            paint(&|dx, dy| {
                let t = (dx + dy).rem_euclid(period);
                t <= half * 2.0
            });
        }
    }

    if cfg.noise_sigma > 0.0 {
        for v in image.iter_mut() {
            let noise = gaussian(rng) * cfg.noise_sigma;
            *v = (*v + noise as f32).clamp(0.0, 1.0);
        }
    }
}

/// Standard normal draw via Box-Muller.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn idx_round_trip_preserves_canonical_file() {
        let dir = tempdir().unwrap();
        let cfg = SyntheticConfig {
            examples: 10_000,
            ..Default::default()
        };
        let data = synthetic_dataset(&cfg).unwrap();
        export_dir(&data, dir.path()).unwrap();
        let back = ingest_dir(dir.path()).unwrap();
        assert_eq!(back.len(), 10_000);
        assert_eq!(back.example_shape(), [1, 28, 28]);
        assert_eq!(back.labels, data.labels);
        assert!(back.images.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let dir = tempdir().unwrap();
        let cfg = SyntheticConfig {
            examples: 40,
            ..Default::default()
        };
        let data = synthetic_dataset(&cfg).unwrap();
        export_dir(&data, dir.path()).unwrap();
        write_idx_labels(&data.labels[..30], &dir.path().join(IDX_LABEL_FILE)).unwrap();
        assert!(matches!(ingest_dir(dir.path()), Err(Error::Format { .. })));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join(IDX_IMAGE_FILE);
        let mut bytes = IDX_LABEL_MAGIC.to_be_bytes().to_vec();
        bytes.extend_from_slice(&[0; 12]);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            read_idx_images(&path),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn split_is_deterministic_and_exhaustive() {
        let cfg = SyntheticConfig {
            examples: 500,
            ..Default::default()
        };
        let data = synthetic_dataset(&cfg).unwrap();
        let a = split_dataset(&data, 0.8, 0.1, 3).unwrap();
        let b = split_dataset(&data, 0.8, 0.1, 3).unwrap();
        assert_eq!(a.train.labels, b.train.labels);
        assert_eq!(a.test.images.data(), b.test.images.data());
        assert_eq!(
            a.train.len() + a.validation.len() + a.test.len(),
            data.len()
        );
        let c = split_dataset(&data, 0.8, 0.1, 4).unwrap();
        assert_ne!(a.train.labels, c.train.labels);
    }

    #[test]
    fn synthetic_is_deterministic_and_balanced() {
        let cfg = SyntheticConfig {
            examples: 200,
            ..Default::default()
        };
        let a = synthetic_dataset(&cfg).unwrap();
        let b = synthetic_dataset(&cfg).unwrap();
        assert_eq!(a.images.data(), b.images.data());
        let mut counts = [0usize; 10];
        for &y in &a.labels {
            counts[y] += 1;
        }
        assert!(counts.iter().all(|&c| c == 20));
    }
}
