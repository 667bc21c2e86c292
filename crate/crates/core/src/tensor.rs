//! Dense row-major f64 arrays used for images, feature maps and parameters.

use crate::error::{Error, Result};

/// A dense multi-dimensional array of `f64`, row-major, last axis fastest.
///
/// Images are `[H, W, C]`, per-pixel class distributions are `[H, W, K]`,
/// conv kernels are `[k, k, Cin, Cout]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// `[H, W, C]` image raster with values in `[0, 1]`.
pub type Image = Tensor;

/// `[H, W, K]` per-pixel categorical distribution over classes.
pub type ProbMap = Tensor;

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let expect: usize = shape.iter().product();
        if data.len() != expect {
            return Err(Error::shape(
                "Tensor::from_vec",
                format!("shape {shape:?} needs {expect} values, got {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Value at `[i, j, c]` of a rank-3 tensor.
    #[inline]
    pub fn at3(&self, i: usize, j: usize, c: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 3);
        self.data[(i * self.shape[1] + j) * self.shape[2] + c]
    }

    #[inline]
    pub fn at3_mut(&mut self, i: usize, j: usize, c: usize) -> &mut f64 {
        debug_assert_eq!(self.shape.len(), 3);
        &mut self.data[(i * self.shape[1] + j) * self.shape[2] + c]
    }

    /// Contiguous channel slice at pixel `(i, j)` of a rank-3 tensor.
    #[inline]
    pub fn pixel(&self, i: usize, j: usize) -> &[f64] {
        let c = self.shape[2];
        let base = (i * self.shape[1] + j) * c;
        &self.data[base..base + c]
    }

    #[inline]
    pub fn pixel_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let c = self.shape[2];
        let base = (i * self.shape[1] + j) * c;
        &mut self.data[base..base + c]
    }

    /// Elementwise `self += alpha * other`. Shapes must match.
    pub fn axpy(&mut self, alpha: f64, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "Tensor::axpy",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in &mut self.data {
            *v *= alpha;
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }
}

/// `H x W` integer class-id raster: ground truth, argmaxed predictions,
/// pseudo-labels. Ids are `u8` because class counts stay small and segmaps
/// persist as single-byte PGM.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegMap {
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

impl SegMap {
    pub fn new(h: usize, w: usize) -> SegMap {
        SegMap {
            h,
            w,
            data: vec![0; h * w],
        }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> u8 {
        self.data[i * self.w + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, id: u8) {
        self.data[i * self.w + j] = id;
    }
}

/// `H x W` mask over `{0, 1}` used for mixing two rasters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

impl BinaryMask {
    pub fn zeros(h: usize, w: usize) -> BinaryMask {
        BinaryMask {
            h,
            w,
            data: vec![0; h * w],
        }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> u8 {
        self.data[i * self.w + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: u8) {
        debug_assert!(v <= 1);
        self.data[i * self.w + j] = v;
    }

    pub fn ones_count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v <= 1)
    }

    /// Complement mask (1 - M).
    pub fn inverted(&self) -> BinaryMask {
        BinaryMask {
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| 1 - v).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Tensor::from_vec(&[2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::from_vec(&[2, 2], vec![1.0; 4]).is_ok());
    }

    #[test]
    fn indexing_is_row_major() {
        let t = Tensor::from_vec(&[2, 2, 2], (0..8).map(|v| v as f64).collect()).unwrap();
        assert_eq!(t.at3(0, 0, 1), 1.0);
        assert_eq!(t.at3(0, 1, 0), 2.0);
        assert_eq!(t.at3(1, 0, 0), 4.0);
        assert_eq!(t.pixel(1, 1), &[6.0, 7.0]);
    }

    #[test]
    fn mask_invert_roundtrip() {
        let mut m = BinaryMask::zeros(2, 3);
        m.set(0, 1, 1);
        m.set(1, 2, 1);
        let inv = m.inverted();
        assert_eq!(inv.ones_count(), 4);
        assert_eq!(inv.inverted(), m);
    }
}
