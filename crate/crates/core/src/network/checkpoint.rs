//! Binary checkpoint files.
//!
//! Layout (all integers little-endian): magic `JNCW`, `u32` version, `u32`
//! layer count, then a sequence of named tensors, each written as `u32` name
//! length, UTF-8 name, `u32` rank, `rank` x `u32` dims and an `f32` payload.
//! The first tensor is `input_shape` (`[C, H, W]`). Every layer contributes
//! either `<i>.<kind>.weight` + `<i>.<kind>.bias` or, for parameter-free
//! layers, a single empty `<i>.<kind>` marker of shape `[0]`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::layers::{Conv2d, Dense};
use super::tensor::Tensor;
use super::{Layer, Model};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"JNCW";
pub const CHECKPOINT_VERSION: u32 = 1;

// Sanity bounds so a corrupted header fails fast instead of allocating.
const MAX_NAME: usize = 256;
const MAX_RANK: usize = 8;

fn put_u32(w: &mut impl Write, v: usize) -> std::io::Result<()> {
    let v = u32::try_from(v).map_err(|_| std::io::Error::other("value exceeds u32"))?;
    w.write_all(&v.to_le_bytes())
}

fn put_tensor(w: &mut impl Write, name: &str, shape: &[usize], data: &[f64]) -> std::io::Result<()> {
    put_u32(w, name.len())?;
    w.write_all(name.as_bytes())?;
    put_u32(w, shape.len())?;
    for &d in shape {
        put_u32(w, d)?;
    }
    let mut buf = Vec::with_capacity(data.len() * 4);
    for &v in data {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)
}

/// Serialises the layer stack and parameters (the Adam state is not stored).
pub fn write_checkpoint(model: &Model, mut w: impl Write) -> std::io::Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    put_u32(&mut w, CHECKPOINT_VERSION as usize)?;
    put_u32(&mut w, model.layers().len())?;
    let [c, h, wd] = model.input_shape();
    put_tensor(&mut w, "input_shape", &[3], &[c as f64, h as f64, wd as f64])?;
    for (i, layer) in model.layers().iter().enumerate() {
        let kind = layer.kind();
        let params = match layer {
            Layer::Conv2d(l) => Some((&l.weight, &l.bias)),
            Layer::Dense(l) => Some((&l.weight, &l.bias)),
            _ => None,
        };
        match params {
            Some((wt, b)) => {
                put_tensor(&mut w, &format!("{i}.{kind}.weight"), wt.shape(), wt.data())?;
                put_tensor(&mut w, &format!("{i}.{kind}.bias"), b.shape(), b.data())?;
            }
            None => put_tensor(&mut w, &format!("{i}.{kind}"), &[0], &[])?,
        }
    }
    w.flush()
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(model, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!("checkpoint truncated in {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let len = self.u32("name length")?;
        if len > MAX_NAME {
            return Err(Error::Format(format!("tensor name length {len} too large")));
        }
        let name = std::str::from_utf8(self.take(len, "name")?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_owned();
        let rank = self.u32("rank")?;
        if rank > MAX_RANK {
            return Err(Error::Format(format!("{name}: rank {rank} too large")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32("dims")?);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&c| c <= (self.buf.len() - self.pos) / 4)
            .ok_or_else(|| Error::Format(format!("{name}: payload truncated")))?;
        let bytes = self.take(count * 4, "payload")?;
        let data = bytes
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
            .collect();
        Ok((name, Tensor::new(shape, data)?))
    }
}

fn expect_name(got: &str, want: &str) -> Result<()> {
    if got != want {
        return Err(Error::Format(format!("expected tensor {want:?}, found {got:?}")));
    }
    Ok(())
}

/// Parses a checkpoint and rebuilds the model with a fresh Adam state.
pub fn read_checkpoint(mut r: impl Read) -> Result<Model> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)
        .map_err(|e| Error::Format(format!("reading checkpoint: {e}")))?;
    let mut cur = Cursor { buf: &buf, pos: 0 };
    if cur.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = cur.u32("version")?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let layer_count = cur.u32("layer count")?;

    let (name, shape) = cur.tensor()?;
    expect_name(&name, "input_shape")?;
    let dims: Vec<usize> = shape.data().iter().map(|&v| v as usize).collect();
    let input_shape: [usize; 3] = dims
        .try_into()
        .map_err(|_| Error::Format("input_shape must hold three values".into()))?;

    let mut layers = Vec::new();
    for i in 0..layer_count {
        let (name, t) = cur.tensor()?;
        let kind = name
            .strip_prefix(&format!("{i}."))
            .ok_or_else(|| Error::Format(format!("expected layer {i}, found {name:?}")))?;
        let marker = |layer: Layer| {
            if t.shape() != [0] {
                return Err(Error::Format(format!("{name}: marker must have shape [0]")));
            }
            Ok(layer)
        };
        let layer = match kind {
            "relu" => marker(Layer::Relu)?,
            "maxpool2d" => marker(Layer::MaxPool2d)?,
            "flatten" => marker(Layer::Flatten)?,
            "softmax" => marker(Layer::Softmax)?,
            "conv2d.weight" | "dense.weight" => {
                let base = &kind[..kind.len() - ".weight".len()];
                let (bname, bias) = cur.tensor()?;
                expect_name(&bname, &format!("{i}.{base}.bias"))?;
                if base == "conv2d" {
                    Layer::Conv2d(Conv2d::new(t, bias)?)
                } else {
                    Layer::Dense(Dense::new(t, bias)?)
                }
            }
            _ => return Err(Error::Format(format!("unknown layer entry {name:?}"))),
        };
        layers.push(layer);
    }
    if cur.pos != buf.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after checkpoint",
            buf.len() - cur.pos
        )));
    }
    Model::new(input_shape, layers)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::tests::tiny_model;

    fn bytes(model: &Model) -> Vec<u8> {
        let mut out = Vec::new();
        write_checkpoint(model, &mut out).unwrap();
        out
    }

    #[test]
    fn round_trip_predictions_bitwise() {
        let m = tiny_model(7);
        let back = read_checkpoint(bytes(&m).as_slice()).unwrap();
        assert_eq!(back.param_names(), m.param_names());
        let x = Tensor::from_fn(&[5, 2, 8, 8], |i| ((i * 31) % 17) as f64 / 17.0);
        let a = m.predict(&x).unwrap();
        let b = back.predict(&x).unwrap();
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(back.adam.t, 0);
    }

    #[test]
    fn header_layout() {
        let b = bytes(&tiny_model(0));
        assert_eq!(&b[..4], b"JNCW");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 11);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 11);
        assert_eq!(&b[16..27], b"input_shape");
    }

    #[test]
    fn corrupted_magic() {
        let mut b = bytes(&tiny_model(0));
        b[0] = b'X';
        assert!(matches!(read_checkpoint(b.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn wrong_version() {
        let mut b = bytes(&tiny_model(0));
        b[4] = 2;
        assert!(matches!(read_checkpoint(b.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_payload() {
        let b = bytes(&tiny_model(0));
        for cut in [3, 10, 40, b.len() / 2, b.len() - 1] {
            assert!(
                matches!(read_checkpoint(&b[..cut]), Err(Error::Format(_))),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut b = bytes(&tiny_model(0));
        b.push(0);
        assert!(matches!(read_checkpoint(b.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jncw");
        let m = tiny_model(9);
        save_checkpoint(&m, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.inference(), m.inference());
        assert!(matches!(
            load_checkpoint(dir.path().join("missing")),
            Err(Error::Io { .. })
        ));
    }
}
