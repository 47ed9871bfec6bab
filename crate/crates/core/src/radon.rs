//! Parallel-beam Radon transform and filtered back-projection.
//!
//! Geometry: an `N`x`N` image is centred at `c = (N - 1) / 2` with `x` to the
//! right and `y` up. A line at angle `theta` and signed offset `s` is the set
//! `x cos(theta) + y sin(theta) = s`. Detector bins sit at integer offsets
//! `s_b = b - c` for `b in 0..N`, and angles are spaced uniformly over
//! `[0, pi)`.
//!
//! The forward projector is pixel driven: every pixel is projected onto the
//! detector and its value split linearly between the two neighbouring bins.
//! [`radon_adjoint`] reads the sinogram back with the same linear weights, so
//! the two maps are exact transposes of each other and each pixel's mass lands
//! on the detector in full whenever its offset is inside the detector span.
//!
//! Reconstruction ramp-filters every projection in the frequency domain
//! (weight `|nu|`, `nu` in cycles per pixel) and back-projects with weight
//! `pi / num_angles`, the quadrature of the angular integral over `[0, pi)`.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::imaging::{self, GrayImage};

/// Interpolation used to distribute a projected pixel over detector bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interpolation {
    #[default]
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadonConfig {
    pub num_angles: usize,
    pub interpolation: Interpolation,
    /// Restrict projection and reconstruction to the inscribed circle.
    pub circle_mask: bool,
}

impl Default for RadonConfig {
    fn default() -> Self {
        RadonConfig {
            num_angles: 180,
            interpolation: Interpolation::Linear,
            circle_mask: true,
        }
    }
}

impl RadonConfig {
    pub fn with_angles(num_angles: usize) -> Self {
        RadonConfig {
            num_angles,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_angles == 0 {
            return Err(Error::InvalidConfig("num_angles must be >= 1".into()));
        }
        Ok(())
    }
}

/// Radon-domain samples, rows indexed by angle and columns by detector offset.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    angles: Vec<f64>,
    num_offsets: usize,
    data: Vec<f64>,
}

impl Sinogram {
    pub fn new(angles: Vec<f64>, num_offsets: usize, data: Vec<f64>) -> Result<Self> {
        if angles.is_empty() || num_offsets == 0 {
            return Err(Error::InvalidConfig("empty sinogram".into()));
        }
        if data.len() != angles.len() * num_offsets {
            return Err(Error::ShapeMismatch(format!(
                "{}x{num_offsets} sinogram needs {} values, got {}",
                angles.len(),
                angles.len() * num_offsets,
                data.len()
            )));
        }
        if angles.iter().any(|a| !(0.0..PI).contains(a)) || angles.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Invariant(
                "sinogram angles must be strictly increasing in [0, pi)".into(),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Sinogram::new"));
        }
        Ok(Sinogram {
            angles,
            num_offsets,
            data,
        })
    }

    pub fn zeros(num_angles: usize, num_offsets: usize) -> Self {
        assert!(num_angles > 0 && num_offsets > 0);
        Sinogram {
            angles: uniform_angles(num_angles),
            num_offsets,
            data: vec![0.0; num_angles * num_offsets],
        }
    }

    pub fn num_angles(&self) -> usize {
        self.angles.len()
    }

    pub fn num_offsets(&self) -> usize {
        self.num_offsets
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, angle: usize) -> &[f64] {
        &self.data[angle * self.num_offsets..(angle + 1) * self.num_offsets]
    }

    /// The sinogram as an image: one row per angle.
    pub fn to_image(&self) -> GrayImage {
        GrayImage::new(self.num_offsets, self.num_angles(), self.data.clone()).expect("sinogram values are finite")
    }

    /// Raw sidecar: an ASCII header line `SINO v1 <num_angles> <num_offsets>`
    /// followed by little-endian `f32` samples in row-major order. Angles are
    /// implied to be uniform over `[0, pi)`.
    pub fn write_raw(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let header = format!("SINO v1 {} {}\n", self.num_angles(), self.num_offsets);
        write_f32_sidecar(path, &header, &self.data)
    }

    pub fn read_raw(path: impl AsRef<Path>) -> Result<Sinogram> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let (dims, values) = read_f32_sidecar(&bytes, "SINO")?;
        let angles = uniform_angles(dims.0);
        Sinogram::new(angles, dims.1, values)
    }
}

/// Raw sidecar for a grayscale image: header `GRAY v1 <width> <height>`
/// followed by little-endian `f32` pixels.
pub fn write_image_raw(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let header = format!("GRAY v1 {} {}\n", img.width(), img.height());
    write_f32_sidecar(path.as_ref(), &header, img.pixels())
}

pub fn read_image_raw(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let ((w, h), values) = read_f32_sidecar(&bytes, "GRAY")?;
    GrayImage::new(w, h, values)
}

fn write_f32_sidecar(path: &Path, header: &str, values: &[f64]) -> Result<()> {
    let mut out = Vec::with_capacity(header.len() + 4 * values.len());
    out.extend_from_slice(header.as_bytes());
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

fn read_f32_sidecar(bytes: &[u8], tag: &str) -> Result<((usize, usize), Vec<f64>)> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("sidecar header missing".into()))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| Error::Format("sidecar header is not UTF-8".into()))?;
    let parts: Vec<&str> = header.split_ascii_whitespace().collect();
    let dims = match parts.as_slice() {
        [t, "v1", a, b] if *t == tag => (a.parse::<usize>().ok(), b.parse::<usize>().ok()),
        _ => return Err(Error::Format(format!("expected `{tag} v1 <a> <b>` header"))),
    };
    let (Some(a), Some(b)) = dims else {
        return Err(Error::Format("bad sidecar dimensions".into()));
    };
    let payload = &bytes[nl + 1..];
    if payload.len() != 4 * a * b {
        return Err(Error::Format(format!(
            "sidecar payload has {} bytes, expected {}",
            payload.len(),
            4 * a * b
        )));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    Ok(((a, b), values))
}

/// `k * pi / n` for `k in 0..n`.
pub fn uniform_angles(n: usize) -> Vec<f64> {
    (0..n).map(|k| k as f64 * PI / n as f64).collect()
}

/// Normalising constant `c_n = (4 pi)^((n-1)/2) Gamma(n/2) / Gamma(1/2)` of
/// the n-dimensional inversion `c_n f = (-Laplacian)^((n-1)/2) R* R f`.
/// Equals 2 in the plane.
pub fn inversion_constant(n: u32) -> f64 {
    assert!(n >= 1);
    (4.0 * PI).powf((n as f64 - 1.0) / 2.0) * gamma_half_integer(n) / PI.sqrt()
}

/// `Gamma(n / 2)` for positive integer `n`.
fn gamma_half_integer(n: u32) -> f64 {
    let (mut x, mut g) = if n.is_multiple_of(2) {
        (1.0, 1.0)
    } else {
        (0.5, PI.sqrt())
    };
    while x < n as f64 / 2.0 {
        g *= x;
        x += 1.0;
    }
    g
}

fn centre(n: usize) -> f64 {
    (n as f64 - 1.0) / 2.0
}

fn in_inscribed_circle(dx: f64, dy: f64, c: f64) -> bool {
    dx * dx + dy * dy <= c * c
}

/// Line integrals of `img` for every configured angle.
pub fn radon_forward(img: &GrayImage, cfg: &RadonConfig) -> Result<Sinogram> {
    cfg.validate()?;
    let n = img.width();
    if img.height() != n {
        return Err(Error::NotSquare {
            width: img.width(),
            height: img.height(),
        });
    }
    let angles = uniform_angles(cfg.num_angles);
    let c = centre(n);
    let mut data = vec![0.0; cfg.num_angles * n];
    for (k, &theta) in angles.iter().enumerate() {
        let (sin, cos) = theta.sin_cos();
        let row = &mut data[k * n..(k + 1) * n];
        for i in 0..n {
            let y = c - i as f64;
            for j in 0..n {
                let v = img.get(j, i);
                if v == 0.0 {
                    continue;
                }
                let x = j as f64 - c;
                if cfg.circle_mask && !in_inscribed_circle(x, y, c) {
                    continue;
                }
                splat(row, x * cos + y * sin + c, v);
            }
        }
    }
    Sinogram::new(angles, n, data)
}

#[inline]
fn splat(row: &mut [f64], u: f64, v: f64) {
    let b0 = u.floor();
    let w = u - b0;
    let b0 = b0 as isize;
    let n = row.len() as isize;
    if (0..n).contains(&b0) {
        row[b0 as usize] += v * (1.0 - w);
    }
    if (0..n).contains(&(b0 + 1)) {
        row[(b0 + 1) as usize] += v * w;
    }
}

#[inline]
fn sample(row: &[f64], u: f64) -> f64 {
    let b0 = u.floor();
    let w = u - b0;
    let b0 = b0 as isize;
    let n = row.len() as isize;
    let mut acc = 0.0;
    if (0..n).contains(&b0) {
        acc += row[b0 as usize] * (1.0 - w);
    }
    if (0..n).contains(&(b0 + 1)) {
        acc += row[(b0 + 1) as usize] * w;
    }
    acc
}

/// Unfiltered back-projection: the transpose of [`radon_forward`].
///
/// The detector centre is aligned with the centre of the `out_side` grid.
pub fn radon_adjoint(sino: &Sinogram, out_side: usize, cfg: &RadonConfig) -> GrayImage {
    assert!(out_side > 0, "out_side must be positive");
    let c_img = centre(out_side);
    let c_det = centre(sino.num_offsets);
    let trig: Vec<(f64, f64)> = sino.angles.iter().map(|a| a.sin_cos()).collect();
    GrayImage::from_fn(out_side, out_side, |j, i| {
        let x = j as f64 - c_img;
        let y = c_img - i as f64;
        if cfg.circle_mask && !in_inscribed_circle(x, y, c_img) {
            return 0.0;
        }
        trig.iter()
            .enumerate()
            .map(|(k, &(sin, cos))| sample(sino.row(k), x * cos + y * sin + c_det))
            .sum()
    })
}

/// Padded FFT length used for a projection of `n` samples: the next power of
/// two that is at least `2n`, so the linear convolution never wraps.
pub fn ramp_fft_len(n: usize) -> usize {
    (2 * n).next_power_of_two()
}

/// Frequency response `|nu|` (cycles per sample) on an `m`-point DFT grid.
pub fn ramp_response(m: usize) -> Vec<f64> {
    (0..m).map(|k| k.min(m - k) as f64 / m as f64).collect()
}

/// Ram-Lak ramp filter applied independently to every projection.
pub fn ramp_filter(sino: &Sinogram) -> Sinogram {
    let n = sino.num_offsets;
    let m = ramp_fft_len(n);
    let response = ramp_response(m);
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(m);
    let inv = planner.plan_fft_inverse(m);
    let mut buf = vec![Complex::new(0.0, 0.0); m];
    let mut out = sino.clone();
    for row in out.data.chunks_exact_mut(n) {
        for (b, &v) in buf.iter_mut().zip(row.iter()) {
            *b = Complex::new(v, 0.0);
        }
        buf[n..].fill(Complex::new(0.0, 0.0));
        fwd.process(&mut buf);
        for (b, &r) in buf.iter_mut().zip(&response) {
            *b *= r / m as f64;
        }
        inv.process(&mut buf);
        for (v, b) in row.iter_mut().zip(&buf) {
            *v = b.re;
        }
    }
    out
}

/// Filtered back-projection onto an `out_side` square grid.
pub fn fbp_reconstruct(sino: &Sinogram, out_side: usize, cfg: &RadonConfig) -> Result<GrayImage> {
    if sino.num_angles() < 2 {
        return Err(Error::TooFewAngles(sino.num_angles()));
    }
    let filtered = ramp_filter(sino);
    let scale = PI / sino.num_angles() as f64;
    Ok(radon_adjoint(&filtered, out_side, cfg).map(|v| v * scale))
}

/// Sharpen, then [`reconstruct_feature`]. Output has the input's dimensions.
pub fn radon_feature_image(img: &GrayImage, cfg: &RadonConfig) -> Result<GrayImage> {
    reconstruct_feature(&imaging::sharpen(img)?, cfg)
}

/// Forward project, reconstruct by FBP and normalise to `[0, 1]`.
///
/// Non-square inputs are padded to a square by edge replication and cropped
/// back afterwards.
pub fn reconstruct_feature(img: &GrayImage, cfg: &RadonConfig) -> Result<GrayImage> {
    let (w, h) = (img.width(), img.height());
    let square = imaging::pad_to_square(img);
    let side = square.width();
    let sino = radon_forward(&square, cfg)?;
    let recon = fbp_reconstruct(&sino, side, cfg)?;
    let recon = if side == w && side == h {
        recon
    } else {
        recon.crop((side - w) / 2, (side - h) / 2, w, h)?
    };
    Ok(imaging::normalize(&recon))
}

/// Agreement between a reconstruction and a reference over the pixels of the
/// inscribed circle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircleMetrics {
    pub pearson: f64,
    pub rmse: f64,
}

pub fn circle_metrics(recon: &GrayImage, reference: &GrayImage) -> Result<CircleMetrics> {
    let n = reference.width();
    if reference.height() != n {
        return Err(Error::NotSquare {
            width: n,
            height: reference.height(),
        });
    }
    if recon.width() != n || recon.height() != n {
        return Err(Error::ShapeMismatch(format!(
            "reconstruction {}x{} vs reference {n}x{n}",
            recon.width(),
            recon.height()
        )));
    }
    let c = centre(n);
    let pairs: Vec<(f64, f64)> = (0..n * n)
        .filter(|&k| in_inscribed_circle((k % n) as f64 - c, c - (k / n) as f64, c))
        .map(|k| (recon.pixels()[k], reference.pixels()[k]))
        .collect();
    let m = pairs.len() as f64;
    let (ma, mb) = pairs.iter().fold((0.0, 0.0), |(x, y), (a, b)| (x + a / m, y + b / m));
    let (mut sab, mut saa, mut sbb, mut sq) = (0.0, 0.0, 0.0, 0.0);
    for (a, b) in &pairs {
        sab += (a - ma) * (b - mb);
        saa += (a - ma).powi(2);
        sbb += (b - mb).powi(2);
        sq += (a - b).powi(2);
    }
    Ok(CircleMetrics {
        pearson: sab / (saa * sbb).sqrt(),
        rmse: (sq / m).sqrt(),
    })
}

/// Modified Shepp-Logan head phantom: `(intensity, a, b, x0, y0, phi_deg)`.
const SHEPP_LOGAN: [(f64, f64, f64, f64, f64, f64); 10] = [
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
];

/// Shepp-Logan phantom (modified intensities, range `[0, 1]`) sampled at pixel
/// centres on `[-1, 1]^2`.
pub fn shepp_logan(side: usize) -> Result<GrayImage> {
    if side < 16 {
        return Err(Error::TooSmall {
            width: side,
            height: side,
            min: 16,
        });
    }
    let n = side as f64;
    Ok(GrayImage::from_fn(side, side, |j, i| {
        let x = (2.0 * j as f64 + 1.0) / n - 1.0;
        let y = 1.0 - (2.0 * i as f64 + 1.0) / n;
        let v: f64 = SHEPP_LOGAN
            .iter()
            .filter(|&&(_, a, b, x0, y0, phi)| {
                let (s, c) = phi.to_radians().sin_cos();
                let (dx, dy) = (x - x0, y - y0);
                let xr = dx * c + dy * s;
                let yr = -dx * s + dy * c;
                (xr / a).powi(2) + (yr / b).powi(2) <= 1.0
            })
            .map(|e| e.0)
            .sum();
        v.clamp(0.0, 1.0)
    }))
}
