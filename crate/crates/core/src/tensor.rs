//! Dense row-major `f64` tensors and the `M2MT` on-disk format.
//!
//! Feature maps use the `(H, W, C)` layout throughout the crate; kernels use
//! `(kh, kw, Cin, Cout)`.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{shape_err, Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return shape_err(format!("dimensions must be positive, got {shape:?}"));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return shape_err(format!(
                "shape {shape:?} holds {len} elements but {} were given",
                data.len()
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Self::new(shape, vec![value; len]).expect("positive dimensions")
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// `n × n` identity matrix.
    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("finite std");
        let len = shape.iter().product();
        let data = (0..len).map(|_| normal.sample(rng)).collect();
        Self::new(shape, data).expect("positive dimensions")
    }

    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let len = shape.iter().product();
        let data = (0..len).map(|_| rng.random_range(lo..hi)).collect();
        Self::new(shape, data).expect("positive dimensions")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.data.len() || shape.contains(&0) {
            return shape_err(format!("cannot reshape {:?} into {shape:?}", self.shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Dimensions of an `(H, W, C)` feature map.
    pub fn hwc(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [h, w, c] => Ok((h, w, c)),
            _ => shape_err(format!("expected an (H, W, C) map, got {:?}", self.shape)),
        }
    }

    pub fn at3(&self, y: usize, x: usize, c: usize) -> f64 {
        let (_, w, ch) = (self.shape[0], self.shape[1], self.shape[2]);
        self.data[(y * w + x) * ch + c]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff on mismatched shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Extracts channel `c` of an `(H, W, C)` map as an `(H, W, 1)` map.
    pub fn channel(&self, c: usize) -> Result<Tensor> {
        let (h, w, ch) = self.hwc()?;
        if c >= ch {
            return shape_err(format!("channel {c} out of range for {ch} channels"));
        }
        let data = (0..h * w).map(|i| self.data[i * ch + c]).collect();
        Tensor::new(&[h, w, 1], data)
    }

    pub fn write_m2mt<W: Write>(&self, mut out: W) -> Result<()> {
        let mut buf = Vec::with_capacity(8 + 4 * self.shape.len() + 8 * self.data.len());
        buf.extend_from_slice(MAGIC);
        buf.push(M2MT_VERSION);
        buf.push(DTYPE_F64);
        buf.push(self.shape.len() as u8);
        for &d in &self.shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
        Ok(())
    }

    /// Parses an `M2MT` buffer. The whole buffer must be consumed.
    pub fn from_m2mt_bytes(bytes: &[u8]) -> Result<Tensor> {
        let fail = |offset: usize, msg: &str| Error::Format {
            offset,
            msg: msg.to_string(),
        };
        if bytes.len() < 7 {
            return Err(fail(bytes.len(), "truncated header"));
        }
        if &bytes[..4] != MAGIC {
            return Err(fail(0, "bad magic, expected M2MT"));
        }
        if bytes[4] != M2MT_VERSION {
            return Err(fail(4, &format!("unsupported version {}", bytes[4])));
        }
        if bytes[5] != DTYPE_F64 {
            return Err(fail(5, &format!("unsupported dtype {}", bytes[5])));
        }
        let ndim = bytes[6] as usize;
        if ndim == 0 {
            return Err(fail(6, "zero-dimensional tensor"));
        }
        let mut pos = 7;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let chunk = bytes
                .get(pos..pos + 4)
                .ok_or_else(|| fail(bytes.len(), "truncated dimension list"))?;
            let d = u32::from_le_bytes(chunk.try_into().unwrap()) as usize;
            if d == 0 {
                return Err(fail(pos, "zero-sized dimension"));
            }
            shape.push(d);
            pos += 4;
        }
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| fail(7, "dimension product overflows"))?;
        let expected = pos + 8 * len;
        if bytes.len() < expected {
            return Err(fail(bytes.len(), &format!("truncated data, expected {expected} bytes")));
        }
        if bytes.len() > expected {
            return Err(fail(expected, "trailing bytes after tensor data"));
        }
        let data = bytes[pos..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(&shape, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut bytes = Vec::with_capacity(8 + 8 * self.data.len());
        self.write_m2mt(&mut bytes)?;
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Tensor> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_m2mt_bytes(&bytes)
    }
}

const MAGIC: &[u8; 4] = b"M2MT";
const M2MT_VERSION: u8 = 1;
const DTYPE_F64: u8 = 0;
