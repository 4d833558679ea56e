//! Dense `H×W×C` images and the binary array file format used by datasets.
//!
//! File layout (little endian): 8-byte magic `M3DARR\0\x01`, then `H`, `W`,
//! `C` as `u32`, one element-type byte (`1` = f32, `2` = f64), three reserved
//! zero bytes, then row-major data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const ARRAY_MAGIC: [u8; 8] = *b"M3DARR\x00\x01";

const ELEM_F32: u8 = 1;
const ELEM_F64: u8 = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Row-major `H×W×C`.
    pub data: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Internal(format!(
                "image buffer has {} elements, expected {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> T {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[T] {
        let i = self.index(y, x, 0);
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, y: usize, x: usize) -> &mut [T] {
        let i = self.index(y, x, 0);
        &mut self.data[i..i + self.channels]
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centers at
    /// integer positions). Points outside `[-0.5, W-0.5] × [-0.5, H-0.5]`
    /// return `pad`; points inside replicate the border.
    pub fn sample_bilinear(&self, x: T, y: T, pad: T, out: &mut [T]) {
        let half = T::c(0.5);
        let w = T::from_usize(self.width).unwrap();
        let h = T::from_usize(self.height).unwrap();
        if x < -half || y < -half || x > w - half || y > h - half {
            out.iter_mut().for_each(|v| *v = pad);
            return;
        }
        let xc = x.max(T::zero()).min(w - T::one());
        let yc = y.max(T::zero()).min(h - T::one());
        let x0 = xc.floor();
        let y0 = yc.floor();
        let fx = xc - x0;
        let fy = yc - y0;
        let x0i = x0.to_usize().unwrap();
        let y0i = y0.to_usize().unwrap();
        let x1i = (x0i + 1).min(self.width - 1);
        let y1i = (y0i + 1).min(self.height - 1);
        let one = T::one();
        for (c, o) in out.iter_mut().enumerate() {
            let top = self.get(y0i, x0i, c) * (one - fx) + self.get(y0i, x1i, c) * fx;
            let bot = self.get(y1i, x0i, c) * (one - fx) + self.get(y1i, x1i, c) * fx;
            *o = top * (one - fy) + bot * fy;
        }
    }

    pub fn cast<U: Scalar>(&self) -> Image<U> {
        Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|v| U::c(v.to_f64c())).collect(),
        }
    }

    /// Channel-major (`C×H×W`) copy, the layout the detector consumes.
    pub fn to_chw(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.data.len()];
        let plane = self.height * self.width;
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..self.channels {
                    out[c * plane + y * self.width + x] = self.get(y, x, c);
                }
            }
        }
        out
    }

    pub fn write_array(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut header = Vec::with_capacity(24);
        header.extend_from_slice(&ARRAY_MAGIC);
        for d in [self.height, self.width, self.channels] {
            header.extend_from_slice(&(d as u32).to_le_bytes());
        }
        let elem = if T::NAME == "f64" { ELEM_F64 } else { ELEM_F32 };
        header.extend_from_slice(&[elem, 0, 0, 0]);
        w.write_all(&header).map_err(|e| Error::io(path, e))?;
        let mut buf = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            if elem == ELEM_F64 {
                buf.extend_from_slice(&v.to_f64c().to_le_bytes());
            } else {
                buf.extend_from_slice(&(v.to_f64c() as f32).to_le_bytes());
            }
        }
        w.write_all(&buf).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_array(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut header = [0u8; 24];
        r.read_exact(&mut header).map_err(|e| Error::io(path, e))?;
        if header[..8] != ARRAY_MAGIC {
            return Err(Error::parse(path, "bad array magic"));
        }
        let dim = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap()) as usize;
        let (h, w, c) = (dim(8), dim(12), dim(16));
        let elem = header[20];
        let mut raw = Vec::new();
        r.read_to_end(&mut raw).map_err(|e| Error::io(path, e))?;
        let n = h * w * c;
        let data: Vec<T> = match elem {
            ELEM_F32 if raw.len() == n * 4 => raw
                .chunks_exact(4)
                .map(|b| T::c(f32::from_le_bytes(b.try_into().unwrap()) as f64))
                .collect(),
            ELEM_F64 if raw.len() == n * 8 => raw
                .chunks_exact(8)
                .map(|b| T::c(f64::from_le_bytes(b.try_into().unwrap())))
                .collect(),
            ELEM_F32 | ELEM_F64 => {
                return Err(Error::parse(path, format!("payload has {} bytes for {h}x{w}x{c}", raw.len())))
            }
            other => return Err(Error::parse(path, format!("unknown element type {other}"))),
        };
        Self::from_vec(h, w, c, data)
    }
}
