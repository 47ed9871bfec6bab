//! Generated stand-in for aerial road footage: straight bright bands ("none")
//! against bright blobs where roads meet ("junction"), over a noisy dark
//! background. Pixel values are on the 8-bit scale.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};
use crate::imaging::{self, GrayImage};

/// Class names in sorted order, matching directory loading.
pub const CLASS_NAMES: [&str; 2] = ["junction", "none"];
pub const JUNCTION: usize = 0;
pub const NONE: usize = 1;

const BACKGROUND: f64 = 60.0;
const ROAD: f64 = 190.0;
const NOISE_STD: f64 = 20.0;

/// One frame of class `label` (`JUNCTION` or `NONE`).
pub fn synthetic_frame(label: usize, width: usize, height: usize, rng: &mut impl Rng) -> GrayImage {
    let (w, h) = (width as f64, height as f64);
    let scale = w.min(h);
    let (cx, cy) = (w / 2.0, h / 2.0);
    let mut inside: Vec<Box<dyn Fn(f64, f64) -> bool>> = Vec::new();
    if label == JUNCTION {
        for _ in 0..rng.random_range(1..=3) {
            let bx = cx + rng.random_range(-0.2..0.2) * scale;
            let by = cy + rng.random_range(-0.2..0.2) * scale;
            let r = rng.random_range(0.12..0.22) * scale;
            inside.push(Box::new(move |x, y| (x - bx).powi(2) + (y - by).powi(2) <= r * r));
        }
    } else {
        let theta = rng.random_range(0.0..PI);
        let (nx, ny) = (theta.cos(), theta.sin());
        let offset = rng.random_range(-0.2..0.2) * scale;
        let half = rng.random_range(0.06..0.12) * scale;
        inside.push(Box::new(move |x, y| {
            ((x - cx) * nx + (y - cy) * ny - offset).abs() <= half
        }));
    }
    let noise = Normal::new(0.0, NOISE_STD).expect("positive std");
    GrayImage::from_fn(width, height, |x, y| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let base = if inside.iter().any(|f| f(px, py)) {
            ROAD
        } else {
            BACKGROUND
        };
        (base + noise.sample(rng)).clamp(0.0, 255.0)
    })
}

/// `per_class` frames of each class, alternating junction / none.
pub fn synthetic_corpus(per_class: usize, width: usize, height: usize, seed: u64) -> Vec<(GrayImage, usize)> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    (0..2 * per_class)
        .map(|i| {
            let label = i % 2;
            (synthetic_frame(label, width, height, &mut rng), label)
        })
        .collect()
}

/// Writes [`synthetic_corpus`] as `root/junction/*.pgm` and `root/none/*.pgm`.
pub fn write_synthetic_corpus(
    root: impl AsRef<Path>,
    per_class: usize,
    width: usize,
    height: usize,
    seed: u64,
) -> Result<()> {
    let root = root.as_ref();
    for name in CLASS_NAMES {
        let dir = root.join(name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for (i, (img, label)) in synthetic_corpus(per_class, width, height, seed).iter().enumerate() {
        let path = root.join(CLASS_NAMES[*label]).join(format!("{:05}.pgm", i / 2));
        imaging::save_pgm(img, path)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bright_fraction(img: &GrayImage) -> f64 {
        let mid = (BACKGROUND + ROAD) / 2.0;
        img.pixels().iter().filter(|&&v| v > mid).count() as f64 / img.pixels().len() as f64
    }

    #[test]
    fn corpus_is_balanced_and_reproducible() {
        let a = synthetic_corpus(5, 40, 30, 3);
        assert_eq!(a.len(), 10);
        assert_eq!(a.iter().filter(|s| s.1 == JUNCTION).count(), 5);
        assert_eq!(a, synthetic_corpus(5, 40, 30, 3));
        assert!(a.iter().all(|(img, _)| img.width() == 40 && img.height() == 30));
        assert!(a
            .iter()
            .all(|(img, _)| img.pixels().iter().all(|v| (0.0..=255.0).contains(v))));
    }

    #[test]
    fn frames_contain_a_bright_structure() {
        for (img, _) in synthetic_corpus(10, 64, 64, 1) {
            let f = bright_fraction(&img);
            assert!(f > 0.03 && f < 0.6, "bright fraction {f}");
        }
    }

    #[test]
    fn written_layout() {
        let dir = tempfile::tempdir().unwrap();
        write_synthetic_corpus(dir.path(), 3, 20, 20, 0).unwrap();
        for name in CLASS_NAMES {
            assert_eq!(fs::read_dir(dir.path().join(name)).unwrap().count(), 3);
        }
        let back = imaging::load_pgm(dir.path().join("none").join("00002.pgm")).unwrap();
        assert_eq!(back.width(), 20);
    }
}
