//! Domain types shared by every module: feature maps, codebooks, token
//! grids, Gaussian moment summaries, and quantizer outputs.

use crate::error::{Error, Result};

/// Largest element count a single payload may declare.
pub const MAX_ELEMENTS: u64 = u32::MAX as u64;

/// An `h x w` grid of `d`-dimensional real vectors, stored row-major as
/// (row, column, channel).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    dim: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        check_extent(height as u64, width as u64, dim as u64)?;
        if height == 0 || width == 0 || dim == 0 {
            return Err(Error::InvalidConfig(
                "feature map dimensions must be positive".into(),
            ));
        }
        let expected = height * width * dim;
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { offset: i * 4 });
        }
        Ok(Self {
            height,
            width,
            dim,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of spatial positions, the sequence length `L = h * w`.
    pub fn positions(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// The vector at flat position `p` in raster order.
    pub fn vector(&self, p: usize) -> &[f32] {
        &self.data[p * self.dim..(p + 1) * self.dim]
    }

    /// Iterator over the `L` position vectors in raster order.
    pub fn vectors(&self) -> impl ExactSizeIterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }
}

/// A set of `N` code vectors of dimension `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    size: usize,
    dim: usize,
    vectors: Vec<f32>,
}

impl Codebook {
    pub fn new(size: usize, dim: usize, vectors: Vec<f32>) -> Result<Self> {
        check_extent(size as u64, dim as u64, 1)?;
        if size == 0 || dim == 0 {
            return Err(Error::InvalidConfig(
                "codebook size and dimension must be positive".into(),
            ));
        }
        let expected = size * dim;
        if vectors.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: vectors.len(),
            });
        }
        if let Some(i) = vectors.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { offset: i * 4 });
        }
        Ok(Self { size, dim, vectors })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    /// The code vector `c_i` for code `i`.
    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> {
        self.vectors.chunks_exact(self.dim)
    }
}

/// An `h x w` grid of integer codes. Codes are zero-based; range checks
/// against a concrete codebook happen at use sites.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenGrid {
    height: usize,
    width: usize,
    codes: Vec<u32>,
}

impl TokenGrid {
    pub fn new(height: usize, width: usize, codes: Vec<u32>) -> Result<Self> {
        check_extent(height as u64, width as u64, 1)?;
        if height == 0 || width == 0 {
            return Err(Error::InvalidConfig(
                "token grid dimensions must be positive".into(),
            ));
        }
        let expected = height * width;
        if codes.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: codes.len(),
            });
        }
        Ok(Self {
            height,
            width,
            codes,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Codes in raster (row-major) order.
    pub fn codes(&self) -> &[u32] {
        &self.codes
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// Checks every code against a vocabulary of size `vocab`.
    pub fn validate_range(&self, vocab: usize) -> Result<()> {
        for &c in &self.codes {
            if (c as usize) >= vocab {
                return Err(Error::CodeOutOfRange { code: c, vocab });
            }
        }
        Ok(())
    }
}

/// First and second moments of a feature population.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    dim: usize,
    mean: Vec<f64>,
    covariance: Vec<f64>,
    count: usize,
}

impl GaussianStats {
    pub fn new(dim: usize, mean: Vec<f64>, covariance: Vec<f64>, count: usize) -> Result<Self> {
        if dim == 0 || mean.len() != dim || covariance.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: covariance.len(),
            });
        }
        if count < 2 {
            return Err(Error::InsufficientData {
                needed: 2,
                got: count,
            });
        }
        for i in 0..dim {
            if covariance[i * dim + i] < 0.0 {
                return Err(Error::NotPsd {
                    eigenvalue: covariance[i * dim + i],
                });
            }
            for j in 0..i {
                if (covariance[i * dim + j] - covariance[j * dim + i]).abs() > 1e-8 {
                    return Err(Error::InvalidConfig(format!(
                        "covariance asymmetric at ({i},{j})"
                    )));
                }
            }
        }
        Ok(Self {
            dim,
            mean,
            covariance,
            count,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Row-major `dim x dim` covariance.
    pub fn covariance(&self) -> &[f64] {
        &self.covariance
    }

    pub fn count(&self) -> usize {
        self.count
    }
}

/// Result of quantizing a feature map: the token grid, the grid of
/// selected code vectors, and the mean squared distance per position.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizeOutput {
    pub tokens: TokenGrid,
    pub code_vectors: FeatureMap,
    pub quant_error: f64,
}

fn check_extent(a: u64, b: u64, c: u64) -> Result<()> {
    let ab = a.checked_mul(b);
    let abc = ab.and_then(|v| v.checked_mul(c));
    match abc {
        Some(n) if n <= MAX_ELEMENTS => Ok(()),
        _ => Err(Error::DimensionOverflow {
            height: a,
            width: b,
            dim: c,
        }),
    }
}
