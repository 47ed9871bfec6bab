//! Frame ingestion and preprocessing: binary PGM/PPM I/O, BT.601 luma,
//! Laplacian sharpening, bilinear resampling and range normalization.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major grayscale raster.
///
/// Raw loads carry intensities in `[0, 255]`; after [`normalize`] the nominal
/// range is `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidConfig(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("GrayImage::new"));
        }
        Ok(GrayImage { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0 && value.is_finite());
        GrayImage {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0);
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let v = f(x, y);
                assert!(v.is_finite(), "non-finite pixel at ({x}, {y})");
                pixels.push(v);
            }
        }
        GrayImage { width, height, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.pixels
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn sum(&self) -> f64 {
        self.pixels.iter().sum()
    }

    /// `[0, 1]` when every pixel already lies there, `[0, 255]` otherwise.
    pub fn nominal_range(&self) -> (f64, f64) {
        let (lo, hi) = self.min_max();
        if lo >= 0.0 && hi <= 1.0 {
            (0.0, 1.0)
        } else {
            (0.0, 255.0)
        }
    }

    pub(crate) fn map(&self, f: impl Fn(f64) -> f64) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Copies out the `w`x`h` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<GrayImage> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(Error::ShapeMismatch(format!(
                "crop {w}x{h}+{x0}+{y0} outside {}x{} image",
                self.width, self.height
            )));
        }
        Ok(GrayImage::from_fn(w, h, |x, y| self.get(x0 + x, y0 + y)))
    }
}

/// Row-major RGB raster with channels in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[f64; 3]>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{width}x{height} RGB image with {} pixels",
                pixels.len()
            )));
        }
        if pixels.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("RgbImage::new"));
        }
        Ok(RgbImage { width, height, pixels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.pixels
    }
}

/// Reads a binary PGM (`P5`, maxval <= 255). Values are returned raw.
pub fn load_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let (header, payload) = parse_netpbm_header(bytes, b"P5")?;
    let n = header.width * header.height;
    if payload.len() < n {
        return Err(Error::Format(format!(
            "PGM payload truncated: expected {n} bytes, found {}",
            payload.len()
        )));
    }
    let pixels = payload[..n].iter().map(|&b| f64::from(b)).collect();
    GrayImage::new(header.width, header.height, pixels)
}

/// Reads a binary PPM (`P6`, maxval <= 255).
pub fn load_ppm(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes)
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let (header, payload) = parse_netpbm_header(bytes, b"P6")?;
    let n = header.width * header.height;
    if payload.len() < 3 * n {
        return Err(Error::Format(format!(
            "PPM payload truncated: expected {} bytes, found {}",
            3 * n,
            payload.len()
        )));
    }
    let pixels = payload[..3 * n]
        .chunks_exact(3)
        .map(|c| [f64::from(c[0]), f64::from(c[1]), f64::from(c[2])])
        .collect();
    RgbImage::new(header.width, header.height, pixels)
}

/// Loads either a PGM or a PPM (converted to luma) based on the file magic.
pub fn load_gray_any(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match bytes.get(..2) {
        Some(b"P5") => decode_pgm(&bytes),
        Some(b"P6") => Ok(to_grayscale(&decode_ppm(&bytes)?)),
        _ => Err(Error::Format(format!("{}: not a binary PGM/PPM file", path.display()))),
    }
}

/// Writes a binary PGM. Pixels are rounded and clamped to `[0, 255]`, so an
/// image loaded with [`load_pgm`] round-trips bit for bit.
pub fn save_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.pixels.iter().map(|&v| v.round().clamp(0.0, 255.0) as u8));
    out
}

/// Writes a PGM after stretching the image's value range onto `[0, 255]`.
pub fn save_pgm_normalized(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    save_pgm(&normalize(img).map(|v| v * 255.0), path)
}

pub fn save_ppm(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    for px in &img.pixels {
        out.extend(px.iter().map(|&v| v.round().clamp(0.0, 255.0) as u8));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct NetpbmHeader {
    width: usize,
    height: usize,
}

fn parse_netpbm_header<'a>(bytes: &'a [u8], magic: &[u8]) -> Result<(NetpbmHeader, &'a [u8])> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::Format(format!(
            "bad magic: expected {}",
            String::from_utf8_lossy(magic)
        )));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("malformed header".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("header value out of range".into()))?;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(Error::Format(format!("zero dimension {width}x{height}")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("unsupported maxval {maxval}")));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Format("missing whitespace after maxval".into())),
    }
    Ok((NetpbmHeader { width, height }, &bytes[pos..]))
}

/// BT.601 luma: `0.299 r + 0.587 g + 0.114 b`.
pub fn to_grayscale(img: &RgbImage) -> GrayImage {
    GrayImage {
        width: img.width,
        height: img.height,
        pixels: img
            .pixels
            .iter()
            .map(|&[r, g, b]| 0.299 * r + 0.587 * g + 0.114 * b)
            .collect(),
    }
}

/// 3x3 Laplacian sharpening kernel: centre 5, 4-neighbours -1.
pub const SHARPEN_KERNEL: [[f64; 3]; 3] = [[0.0, -1.0, 0.0], [-1.0, 5.0, -1.0], [0.0, -1.0, 0.0]];

/// Sharpens with [`SHARPEN_KERNEL`], replicating edge pixels, then clamps to
/// the input's nominal range.
pub fn sharpen(img: &GrayImage) -> Result<GrayImage> {
    let (w, h) = (img.width, img.height);
    if w < 3 || h < 3 {
        return Err(Error::TooSmall {
            width: w,
            height: h,
            min: 3,
        });
    }
    let (lo, hi) = img.nominal_range();
    let at = |x: isize, y: isize| {
        let x = x.clamp(0, w as isize - 1) as usize;
        let y = y.clamp(0, h as isize - 1) as usize;
        img.pixels[y * w + x]
    };
    Ok(GrayImage::from_fn(w, h, |x, y| {
        let (x, y) = (x as isize, y as isize);
        let mut acc = 0.0;
        for (dy, row) in SHARPEN_KERNEL.iter().enumerate() {
            for (dx, &k) in row.iter().enumerate() {
                if k != 0.0 {
                    acc += k * at(x + dx as isize - 1, y + dy as isize - 1);
                }
            }
        }
        acc.clamp(lo, hi)
    }))
}

/// Bilinear resampling with pixel-centre alignment; edge samples clamp.
pub fn resize_bilinear(img: &GrayImage, out_w: usize, out_h: usize) -> Result<GrayImage> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::InvalidConfig(format!(
            "resize target must be positive, got {out_w}x{out_h}"
        )));
    }
    if out_w == img.width && out_h == img.height {
        return Ok(img.clone());
    }
    let sx = img.width as f64 / out_w as f64;
    let sy = img.height as f64 / out_h as f64;
    let taps = |i: usize, scale: f64, n: usize| {
        let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, src - i0 as f64)
    };
    let cols: Vec<_> = (0..out_w).map(|x| taps(x, sx, img.width)).collect();
    let mut pixels = Vec::with_capacity(out_w * out_h);
    for y in 0..out_h {
        let (y0, y1, ty) = taps(y, sy, img.height);
        for &(x0, x1, tx) in &cols {
            let top = img.get(x0, y0) * (1.0 - tx) + img.get(x1, y0) * tx;
            let bot = img.get(x0, y1) * (1.0 - tx) + img.get(x1, y1) * tx;
            pixels.push(top * (1.0 - ty) + bot * ty);
        }
    }
    GrayImage::new(out_w, out_h, pixels)
}

/// Affine map of `[min, max]` onto `[0, 1]`; a constant image maps to zeros.
pub fn normalize(img: &GrayImage) -> GrayImage {
    let (lo, hi) = img.min_max();
    if hi - lo <= 0.0 {
        return img.map(|_| 0.0);
    }
    let span = hi - lo;
    img.map(|v| ((v - lo) / span).clamp(0.0, 1.0))
}

/// Pads the short side by replicating edge pixels so the image is square,
/// keeping the content centred.
pub fn pad_to_square(img: &GrayImage) -> GrayImage {
    let side = img.width.max(img.height);
    if img.width == img.height {
        return img.clone();
    }
    let ox = (side - img.width) / 2;
    let oy = (side - img.height) / 2;
    GrayImage::from_fn(side, side, |x, y| {
        let sx = x.saturating_sub(ox).min(img.width - 1);
        let sy = y.saturating_sub(oy).min(img.height - 1);
        img.get(sx, sy)
    })
}
