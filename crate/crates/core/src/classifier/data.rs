use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

use super::{preprocess_frame, JuncNetConfig};
use crate::error::{Error, Result};
use crate::imaging::{self, GrayImage, RgbImage};
use crate::network::Tensor;

/// Labelled samples of identical shape. Inputs are kept in single precision
/// to halve the footprint of the larger benchmark sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<(Tensor<f32>, usize)>,
    class_names: Vec<String>,
    /// Files ignored while loading because they were not images.
    pub skipped: usize,
}

impl Dataset {
    pub fn new(samples: Vec<(Tensor<f32>, usize)>, class_names: Vec<String>) -> Result<Self> {
        if let Some((first, _)) = samples.first() {
            for (t, label) in &samples {
                if t.shape() != first.shape() || t.rank() != 3 {
                    return Err(Error::ShapeMismatch(format!(
                        "sample shape {:?} differs from {:?} or is not [C,H,W]",
                        t.shape(),
                        first.shape()
                    )));
                }
                if *label >= class_names.len() {
                    return Err(Error::LabelOutOfRange {
                        label: *label,
                        classes: class_names.len(),
                    });
                }
            }
        }
        Ok(Dataset {
            samples,
            class_names,
            skipped: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[(Tensor<f32>, usize)] {
        &self.samples
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.1).collect()
    }

    /// `[C, H, W]` of every sample, `None` when empty.
    pub fn input_shape(&self) -> Option<[usize; 3]> {
        self.samples
            .first()
            .map(|(t, _)| [t.shape()[0], t.shape()[1], t.shape()[2]])
    }

    /// Reorders the samples with a seeded shuffle.
    pub fn shuffle(&mut self, seed: u64) {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        self.samples.shuffle(&mut rng);
    }

    /// Splits off the trailing `count` samples as a second set.
    pub fn split_off(&mut self, count: usize) -> Dataset {
        let at = self.samples.len().saturating_sub(count);
        Dataset {
            samples: self.samples.split_off(at),
            class_names: self.class_names.clone(),
            skipped: 0,
        }
    }

    fn gather<T: crate::network::Scalar>(&self, indices: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
        let shape = self.input_shape().ok_or(Error::EmptyDataset)?;
        let per: usize = shape.iter().product();
        let mut data = Vec::with_capacity(indices.len() * per);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let (t, label) = self
                .samples
                .get(i)
                .ok_or_else(|| Error::ShapeMismatch(format!("sample index {i} out of {}", self.len())))?;
            data.extend(t.data().iter().map(|&v| T::from_f64(f64::from(v))));
            labels.push(*label);
        }
        let x = Tensor::new(vec![indices.len(), shape[0], shape[1], shape[2]], data)?;
        Ok((x, labels))
    }

    /// Double-precision batch `[N, C, H, W]` and its labels.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        self.gather(indices)
    }

    pub fn batch_f32(&self, indices: &[usize]) -> Result<Tensor<f32>> {
        Ok(self.gather(indices)?.0)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<usize> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]) as usize)
        .ok_or_else(|| Error::Format(format!("{}: truncated IDX header", path.display())))
}

/// Upscales an 8-bit grayscale image (values `/255`) to `side x side`.
fn to_sample(width: usize, height: usize, pixels: Vec<f64>, side: usize) -> Result<Tensor<f32>> {
    let img = GrayImage::new(width, height, pixels)?;
    let img = imaging::resize_bilinear(&img, side, side)?;
    Ok(Tensor::new(vec![1, side, side], img.into_pixels())?.cast())
}

/// Reads MNIST IDX image/label files. Images are scaled to `[0, 1]` and
/// bilinearly resized to `side x side`, single channel. `limit` keeps only the
/// leading samples.
pub fn load_mnist(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    side: usize,
    limit: Option<usize>,
) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = read_file(ip)?;
    let labels = read_file(lp)?;
    if be_u32(&images, 0, ip)? != 0x0803 {
        return Err(Error::Format(format!("{}: not an IDX image file", ip.display())));
    }
    if be_u32(&labels, 0, lp)? != 0x0801 {
        return Err(Error::Format(format!("{}: not an IDX label file", lp.display())));
    }
    let (n, rows, cols) = (
        be_u32(&images, 4, ip)?,
        be_u32(&images, 8, ip)?,
        be_u32(&images, 12, ip)?,
    );
    let n_labels = be_u32(&labels, 4, lp)?;
    if images.len() != 16 + n * rows * cols {
        return Err(Error::Format(format!(
            "{}: expected {} payload bytes for {n} images of {rows}x{cols}, found {}",
            ip.display(),
            n * rows * cols,
            images.len().saturating_sub(16)
        )));
    }
    if labels.len() != 8 + n_labels {
        return Err(Error::Format(format!(
            "{}: expected {n_labels} label bytes, found {}",
            lp.display(),
            labels.len().saturating_sub(8)
        )));
    }
    if n != n_labels {
        return Err(Error::CountMismatch {
            images: n,
            labels: n_labels,
        });
    }
    let keep = limit.map_or(n, |l| l.min(n));
    let per = rows * cols;
    let mut samples = Vec::with_capacity(keep);
    for i in 0..keep {
        let label = labels[8 + i] as usize;
        if label > 9 {
            return Err(Error::LabelOutOfRange { label, classes: 10 });
        }
        let px = images[16 + i * per..16 + (i + 1) * per]
            .iter()
            .map(|&b| f64::from(b) / 255.0)
            .collect();
        samples.push((to_sample(cols, rows, px, side)?, label));
    }
    Dataset::new(samples, (0..10).map(|d| d.to_string()).collect())
}

pub const CIFAR10_CLASSES: [&str; 10] = [
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
];

/// Bytes per CIFAR-10 binary record: label plus 32x32 R, G and B planes.
pub const CIFAR10_RECORD: usize = 1 + 3 * 1024;

/// Reads CIFAR-10 binary batches, converting to grayscale in `[0, 1]` and
/// resizing to `side x side`, single channel.
pub fn load_cifar10(batch_paths: &[impl AsRef<Path>], side: usize, limit: Option<usize>) -> Result<Dataset> {
    let limit = limit.unwrap_or(usize::MAX);
    let mut samples = Vec::new();
    'files: for path in batch_paths {
        let path = path.as_ref();
        let bytes = read_file(path)?;
        if bytes.len() % CIFAR10_RECORD != 0 {
            return Err(Error::Format(format!(
                "{}: size {} is not a multiple of {CIFAR10_RECORD}",
                path.display(),
                bytes.len()
            )));
        }
        for rec in bytes.chunks_exact(CIFAR10_RECORD) {
            if samples.len() >= limit {
                break 'files;
            }
            let label = rec[0] as usize;
            if label > 9 {
                return Err(Error::LabelOutOfRange { label, classes: 10 });
            }
            let planes = &rec[1..];
            let rgb = (0..1024)
                .map(|i| [planes[i], planes[1024 + i], planes[2048 + i]].map(|b| f64::from(b) / 255.0))
                .collect();
            let gray = imaging::to_grayscale(&RgbImage::new(32, 32, rgb)?);
            samples.push((to_sample(32, 32, gray.into_pixels(), side)?, label));
        }
    }
    Dataset::new(samples, CIFAR10_CLASSES.iter().map(|s| s.to_string()).collect())
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

/// Loads `root/<class>/*.{pgm,ppm}` with classes in sorted directory order.
/// Every image goes through [`preprocess_frame`]. Files that are not binary
/// PGM/PPM are skipped and counted in [`Dataset::skipped`].
pub fn load_image_dir(root: impl AsRef<Path>, cfg: &JuncNetConfig) -> Result<Dataset> {
    let root = root.as_ref();
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut samples = Vec::new();
    let mut names = Vec::new();
    let mut skipped = 0;
    for (label, dir) in class_dirs.iter().enumerate() {
        names.push(dir.file_name().unwrap_or_default().to_string_lossy().into_owned());
        let before = samples.len();
        for file in sorted_entries(dir)? {
            if !file.is_file() {
                continue;
            }
            let bytes = read_file(&file)?;
            let img = match bytes.get(..2) {
                Some(b"P5") => imaging::decode_pgm(&bytes),
                Some(b"P6") => imaging::decode_ppm(&bytes).map(|rgb| imaging::to_grayscale(&rgb)),
                _ => {
                    skipped += 1;
                    continue;
                }
            }
            .map_err(|e| Error::Format(format!("{}: {e}", file.display())))?;
            samples.push((preprocess_frame(&img, cfg)?.cast(), label));
        }
        if samples.len() == before {
            return Err(Error::EmptyClass(dir.clone()));
        }
    }
    let mut ds = Dataset::new(samples, names)?;
    ds.skipped = skipped;
    Ok(ds)
}
