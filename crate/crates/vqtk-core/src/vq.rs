//! Nearest-neighbor vector quantization, the two-term quantization loss
//! with stop-gradient semantics, straight-through gradients, and batch
//! codebook training with EMA updates and dead-code reinitialization.
//!
//! Distances and loss terms accumulate in `f64` regardless of storage
//! precision so that argmin stays stable near ties. Ties break toward the
//! lowest code index.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::{Codebook, FeatureMap, QuantizeOutput, TokenGrid};

/// Weight of the commitment term in the quantization loss.
#[derive(Debug, Clone, Copy)]
pub struct VqLossConfig {
    pub beta: f64,
}

impl VqLossConfig {
    pub fn new(beta: f64) -> Result<Self> {
        if !beta.is_finite() || beta < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "beta must be finite and >= 0, got {beta}"
            )));
        }
        Ok(Self { beta })
    }
}

impl Default for VqLossConfig {
    fn default() -> Self {
        Self { beta: 0.25 }
    }
}

/// Schedule for EMA codebook training.
#[derive(Debug, Clone)]
pub struct VqTrainConfig {
    pub ema_decay: f64,
    /// A code used at most this many times in an epoch is dead and gets
    /// reinitialized from a batch anchor.
    pub dead_code_threshold: u64,
    pub reinit_seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl VqTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "ema_decay must lie in (0,1), got {}",
                self.ema_decay
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "epochs and batch_size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Squared Euclidean distance accumulated in f64.
fn dist2(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// Index of the nearest code vector, lowest index on ties.
pub fn nearest_code(vector: &[f32], book: &Codebook) -> (usize, f64) {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (i, row) in book.rows().enumerate() {
        let d = dist2(vector, row);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    (best, best_d)
}

/// Quantizes every position of `map` to its nearest code vector.
pub fn vq_quantize(map: &FeatureMap, book: &Codebook) -> Result<QuantizeOutput> {
    if map.dim() != book.dim() {
        return Err(Error::DimensionMismatch {
            expected: book.dim(),
            found: map.dim(),
        });
    }
    let assignments: Vec<(usize, f64)> = (0..map.positions())
        .into_par_iter()
        .map(|p| nearest_code(map.vector(p), book))
        .collect();

    let mut codes = Vec::with_capacity(map.positions());
    let mut code_vectors = Vec::with_capacity(map.positions() * map.dim());
    let mut err_sum = 0.0f64;
    for &(code, d) in &assignments {
        codes.push(code as u32);
        code_vectors.extend_from_slice(book.row(code));
        err_sum += d;
    }
    Ok(QuantizeOutput {
        tokens: TokenGrid::new(map.height(), map.width(), codes)?,
        code_vectors: FeatureMap::new(map.height(), map.width(), map.dim(), code_vectors)?,
        quant_error: err_sum / map.positions() as f64,
    })
}

/// The two loss terms and their beta-weighted total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VqLoss {
    pub total: f64,
    pub codebook_term: f64,
    pub commitment_term: f64,
}

fn check_tokens(map: &FeatureMap, book: &Codebook, tokens: &TokenGrid) -> Result<()> {
    if map.dim() != book.dim() {
        return Err(Error::DimensionMismatch {
            expected: book.dim(),
            found: map.dim(),
        });
    }
    if tokens.len() != map.positions() {
        return Err(Error::DimensionMismatch {
            expected: map.positions(),
            found: tokens.len(),
        });
    }
    tokens.validate_range(book.size())
}

/// Evaluates the quantization loss for a given assignment.
///
/// Both terms are numerically the mean squared distance between `map` and
/// the selected code vectors; the stop-gradient placement only changes
/// which argument receives a gradient.
pub fn vq_loss(
    map: &FeatureMap,
    book: &Codebook,
    tokens: &TokenGrid,
    cfg: &VqLossConfig,
) -> Result<VqLoss> {
    check_tokens(map, book, tokens)?;
    let positions = map.positions();
    let mut sum = 0.0f64;
    for (p, &code) in tokens.codes().iter().enumerate() {
        sum += dist2(map.vector(p), book.row(code as usize));
    }
    let mean = sum / positions as f64;
    Ok(VqLoss {
        total: mean + cfg.beta * mean,
        codebook_term: mean,
        commitment_term: mean,
    })
}

/// Gradients of [`vq_loss`] with respect to the input map and the
/// codebook, honoring the stop-gradient placement: the codebook term
/// reaches only the codebook, the commitment term only the input.
#[derive(Debug, Clone)]
pub struct VqGradients {
    /// Same layout as the input map, `h*w*d` values.
    pub wrt_input: Vec<f64>,
    /// Same layout as the codebook, `N*d` values. Rows with no assigned
    /// position stay zero.
    pub wrt_codebook: Vec<f64>,
}

pub fn vq_loss_gradients(
    map: &FeatureMap,
    book: &Codebook,
    tokens: &TokenGrid,
    cfg: &VqLossConfig,
) -> Result<VqGradients> {
    check_tokens(map, book, tokens)?;
    let d = map.dim();
    let inv_l = 1.0 / map.positions() as f64;
    let mut wrt_input = vec![0.0f64; map.data().len()];
    let mut wrt_codebook = vec![0.0f64; book.vectors().len()];
    for (p, &code) in tokens.codes().iter().enumerate() {
        let x = map.vector(p);
        let c = book.row(code as usize);
        for k in 0..d {
            let diff = x[k] as f64 - c[k] as f64;
            wrt_input[p * d + k] = 2.0 * cfg.beta * diff * inv_l;
            wrt_codebook[code as usize * d + k] += -2.0 * diff * inv_l;
        }
    }
    Ok(VqGradients {
        wrt_input,
        wrt_codebook,
    })
}

/// Straight-through backward pass: the upstream gradient at the quantizer
/// output is copied bitwise to the input, and the codebook receives
/// exactly zero through this path.
#[derive(Debug, Clone)]
pub struct SteGradients {
    pub wrt_input: FeatureMap,
    /// Always all zeros, sized like the codebook.
    pub wrt_codebook: Vec<f64>,
}

pub fn ste_backward(upstream: &FeatureMap, book: &Codebook) -> Result<SteGradients> {
    if upstream.dim() != book.dim() {
        return Err(Error::DimensionMismatch {
            expected: book.dim(),
            found: upstream.dim(),
        });
    }
    Ok(SteGradients {
        wrt_input: upstream.clone(),
        wrt_codebook: vec![0.0; book.vectors().len()],
    })
}

/// Trains a codebook on pooled feature vectors.
///
/// Each epoch assigns every vector with [`vq_quantize`] semantics, moves
/// each used code by EMA toward the mean of its assigned vectors, then
/// reinitializes dead codes from anchors sampled out of the epoch's data
/// with a seeded PRNG. Returns the trained codebook and the per-epoch
/// mean quantization error measured at assignment time.
pub fn train_codebook(
    data: &[FeatureMap],
    init: &Codebook,
    cfg: &VqTrainConfig,
) -> Result<(Codebook, Vec<f64>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput("train_codebook requires feature maps"));
    }
    let d = init.dim();
    for map in data {
        if map.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: map.dim(),
            });
        }
    }
    let n = init.size();
    let total_vectors: usize = data.iter().map(|m| m.positions()).sum();
    let mut book = init.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.reinit_seed);
    let mut trace = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        let mut sums = vec![0.0f64; n * d];
        let mut counts = vec![0u64; n];
        let mut err_sum = 0.0f64;
        // Assignment in fixed raster order; batch_size only bounds the
        // parallel chunk, not the update granularity.
        for map in data {
            let positions = map.positions();
            let mut start = 0;
            while start < positions {
                let end = (start + cfg.batch_size).min(positions);
                let assigned: Vec<(usize, f64)> = (start..end)
                    .into_par_iter()
                    .map(|p| nearest_code(map.vector(p), &book))
                    .collect();
                for (p, &(code, dist)) in (start..end).zip(&assigned) {
                    let x = map.vector(p);
                    for k in 0..d {
                        sums[code * d + k] += x[k] as f64;
                    }
                    counts[code] += 1;
                    err_sum += dist;
                }
                start = end;
            }
        }
        trace.push(err_sum / total_vectors as f64);

        let mut vectors: Vec<f32> = book.vectors().to_vec();
        let mut dead = Vec::new();
        for c in 0..n {
            if counts[c] > cfg.dead_code_threshold {
                let inv = 1.0 / counts[c] as f64;
                for k in 0..d {
                    let mean = sums[c * d + k] * inv;
                    let old = vectors[c * d + k] as f64;
                    vectors[c * d + k] =
                        (cfg.ema_decay * old + (1.0 - cfg.ema_decay) * mean) as f32;
                }
            } else {
                dead.push(c);
            }
        }
        // Anchor reinitialization: dead codes jump to feature vectors
        // sampled uniformly from the epoch's data.
        for c in dead {
            let pick = rng.gen_range(0..total_vectors);
            let anchor = pooled_vector(data, pick);
            vectors[c * d..(c + 1) * d].copy_from_slice(anchor);
        }
        book = Codebook::new(n, d, vectors)?;
    }
    Ok((book, trace))
}

fn pooled_vector<'a>(data: &'a [FeatureMap], mut index: usize) -> &'a [f32] {
    for map in data {
        if index < map.positions() {
            return map.vector(index);
        }
        index -= map.positions();
    }
    unreachable!("index within pooled bounds")
}
