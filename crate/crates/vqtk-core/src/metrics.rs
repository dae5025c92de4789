//! Evaluation benchmark: codebook usage, perplexity, Fréchet distance on
//! Gaussian feature statistics, Inception-Score-style diversity on
//! class-probability inputs, and a 2-D PCA export of codebook geometry.
//!
//! The Fréchet distance here is computed on user-supplied feature
//! vectors; reports label it "Fréchet distance (feature space)" since no
//! Inception network is involved.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ngram::ProposalModel;
use crate::types::{Codebook, FeatureMap, GaussianStats, TokenGrid};

/// Fraction of the codebook observed at least once.
#[derive(Debug, Clone, PartialEq)]
pub struct UsageReport {
    pub used: usize,
    pub total: usize,
    pub usage_percent: f64,
}

pub fn codebook_usage(corpus: &[TokenGrid], vocab_size: usize) -> Result<UsageReport> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("usage needs at least one token grid"));
    }
    let mut seen = HashSet::new();
    for grid in corpus {
        grid.validate_range(vocab_size)?;
        seen.extend(grid.codes().iter().copied());
    }
    let used = seen.len();
    Ok(UsageReport {
        used,
        total: vocab_size,
        usage_percent: 100.0 * used as f64 / vocab_size as f64,
    })
}

/// `exp(-(1/L) sum log p(z_i | z_{1:i-1}))`, pooled over the corpus.
pub fn perplexity(model: &impl ProposalModel, corpus: &[TokenGrid]) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("perplexity needs at least one token grid"));
    }
    // Base-2 logs keep the closed forms exact: a uniform model over a
    // power-of-two vocabulary has log2 p = -log2 N with no rounding.
    let vocab = model.vocab_size();
    let mut log_sum = 0.0f64;
    let mut total_len = 0usize;
    for grid in corpus {
        let seq = grid.codes();
        for (i, &code) in seq.iter().enumerate() {
            if (code as usize) >= vocab {
                return Err(Error::CodeOutOfRange { code, vocab });
            }
            let dist = model.next_token_distribution(&seq[..i]);
            log_sum += dist[code as usize].log2();
        }
        total_len += seq.len();
    }
    Ok((-log_sum / total_len as f64).exp2())
}

/// Sample mean and unbiased covariance of `count` stacked `dim`-vectors.
pub fn gaussian_stats(data: &[f64], dim: usize) -> Result<GaussianStats> {
    if dim == 0 || data.len() % dim != 0 {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: data.len(),
        });
    }
    let count = data.len() / dim;
    if count < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: count,
        });
    }
    let mut mean = vec![0.0f64; dim];
    for row in data.chunks_exact(dim) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= count as f64;
    }
    let mut cov = vec![0.0f64; dim * dim];
    for row in data.chunks_exact(dim) {
        for i in 0..dim {
            let di = row[i] - mean[i];
            for j in 0..=i {
                cov[i * dim + j] += di * (row[j] - mean[j]);
            }
        }
    }
    let denom = (count - 1) as f64;
    for i in 0..dim {
        for j in 0..=i {
            let v = cov[i * dim + j] / denom;
            cov[i * dim + j] = v;
            cov[j * dim + i] = v;
        }
    }
    GaussianStats::new(dim, mean, cov, count)
}

/// Pools all positions of the maps and summarizes them.
pub fn feature_stats(maps: &[FeatureMap]) -> Result<GaussianStats> {
    if maps.is_empty() {
        return Err(Error::EmptyInput("feature stats need at least one map"));
    }
    let dim = maps[0].dim();
    let mut data = Vec::new();
    for map in maps {
        if map.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: map.dim(),
            });
        }
        data.extend(map.data().iter().map(|&v| v as f64));
    }
    gaussian_stats(&data, dim)
}

/// Clamps eigenvalues of a symmetric matrix at zero; values below
/// `-1e-8` are a hard PSD violation.
fn clamp_psd(cov: &[f64], dim: usize) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::from_row_slice(dim, dim, cov);
    // Symmetrize against representation noise before decomposing.
    m = (&m + m.transpose()) * 0.5;
    let eig = m.clone().symmetric_eigen();
    let mut clamped = false;
    let mut values = eig.eigenvalues.clone();
    for v in values.iter_mut() {
        if *v < 0.0 {
            if *v < -1e-8 {
                return Err(Error::NotPsd { eigenvalue: *v });
            }
            *v = 0.0;
            clamped = true;
        }
    }
    if clamped {
        let q = eig.eigenvectors;
        Ok(&q * DMatrix::from_diagonal(&values) * q.transpose())
    } else {
        Ok(m)
    }
}

/// Principal square root of a matrix with nonnegative real spectrum, via
/// coupled Newton-Schulz iteration with spectral pre-scaling.
fn matrix_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let norm_a = a.norm();
    if norm_a == 0.0 {
        return Ok(DMatrix::zeros(n, n));
    }
    let eye = DMatrix::<f64>::identity(n, n);
    let mut y = a / norm_a;
    let mut z = eye.clone();
    let scale = norm_a.sqrt();
    let mut best: Option<(DMatrix<f64>, f64)> = None;
    for _ in 0..100 {
        let sqrt = &y * scale;
        let residual = (&sqrt * &sqrt - a).norm() / norm_a;
        if !residual.is_finite() {
            break;
        }
        if best.as_ref().map_or(true, |(_, r)| residual < *r) {
            best = Some((sqrt, residual));
        }
        // The residual is not monotone for ill-conditioned products, so
        // spend the whole budget and keep the best iterate.
        if residual <= 1e-14 {
            break;
        }
        let t = (&eye * 3.0 - &z * &y) * 0.5;
        y = &y * &t;
        z = &t * &z;
    }
    let (sqrt, residual) = best.unwrap();
    if residual <= 1e-6 {
        Ok(sqrt)
    } else {
        Err(Error::SqrtNonConvergence { residual })
    }
}

/// Square root of the product of the two (PSD-clamped) covariances,
/// row-major. This is the matrix whose trace enters the Fréchet
/// distance; exported so callers can inspect the `M^2` residual.
pub fn covariance_product_sqrt(a: &GaussianStats, b: &GaussianStats) -> Result<Vec<f64>> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let dim = a.dim();
    let s1 = clamp_psd(a.covariance(), dim)?;
    let s2 = clamp_psd(b.covariance(), dim)?;
    let sqrt = matrix_sqrt(&(&s1 * &s2))?;
    Ok(sqrt.transpose().as_slice().to_vec())
}

/// `||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2})`.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let dim = a.dim();
    let mu_a = DVector::from_row_slice(a.mean());
    let mu_b = DVector::from_row_slice(b.mean());
    let mean_term = (mu_a - mu_b).norm_squared();
    let s1 = clamp_psd(a.covariance(), dim)?;
    let s2 = clamp_psd(b.covariance(), dim)?;
    let sqrt = matrix_sqrt(&(&s1 * &s2))?;
    let dist = mean_term + s1.trace() + s2.trace() - 2.0 * sqrt.trace();
    if dist < -1e-6 {
        return Err(Error::SqrtNonConvergence { residual: dist });
    }
    Ok(dist.max(0.0))
}

/// Row-stochastic matrix of per-sample class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ProbMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                found: data.len(),
            });
        }
        for (r, row) in data.chunks_exact(cols).enumerate() {
            let mut sum = 0.0;
            for &p in row {
                if !(p >= 0.0) || !p.is_finite() {
                    return Err(Error::NonStochasticRow { row: r, sum: p });
                }
                sum += p;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::NonStochasticRow { row: r, sum });
            }
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// `exp(mean_x KL(p(y|x) || p(y)))` with `p(y)` the column-mean marginal.
pub fn inception_score(probs: &ProbMatrix) -> Result<f64> {
    let cols = probs.cols();
    let mut marginal = vec![0.0f64; cols];
    for r in 0..probs.rows() {
        for (m, &p) in marginal.iter_mut().zip(probs.row(r)) {
            *m += p;
        }
    }
    for m in &mut marginal {
        *m /= probs.rows() as f64;
    }
    let mut kl_sum = 0.0f64;
    for r in 0..probs.rows() {
        for (j, &p) in probs.row(r).iter().enumerate() {
            if p > 0.0 {
                kl_sum += p * (p / marginal[j]).ln();
            }
        }
    }
    // Mean KL is nonnegative, so the exponent only dips below 1 by
    // floating-point noise.
    let score = (kl_sum / probs.rows() as f64).exp();
    Ok(score.max(1.0))
}

/// One exported code: its id, how often the corpus used it, and its
/// coordinates along the top two principal components.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionRow {
    pub code: u32,
    pub usage: u64,
    pub pc1: f64,
    pub pc2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionReport {
    pub rows: Vec<ProjectionRow>,
    /// Variance along the top two components.
    pub explained: [f64; 2],
    pub total_variance: f64,
}

/// Projects codebook rows onto their top two principal components via
/// covariance eigendecomposition. Sign convention: each component's
/// largest-magnitude coordinate is positive.
pub fn export_codebook_projection(
    book: &Codebook,
    tokens: Option<&[TokenGrid]>,
) -> Result<ProjectionReport> {
    let d = book.dim();
    if d < 2 {
        return Err(Error::InvalidConfig(
            "projection needs codebook dimension >= 2".into(),
        ));
    }
    let n = book.size();
    let mut usage = vec![0u64; n];
    if let Some(corpus) = tokens {
        for grid in corpus {
            grid.validate_range(n)?;
            for &c in grid.codes() {
                usage[c as usize] += 1;
            }
        }
    }
    let mut mean = vec![0.0f64; d];
    for row in book.rows() {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v as f64;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for row in book.rows() {
        for i in 0..d {
            let di = row[i] as f64 - mean[i];
            for j in 0..d {
                cov[(i, j)] += di * (row[j] as f64 - mean[j]);
            }
        }
    }
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    cov /= denom;
    let total_variance = cov.trace();
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap()
            .then(i.cmp(&j))
    });
    let mut components = Vec::with_capacity(2);
    let mut explained = [0.0f64; 2];
    for (slot, &idx) in order.iter().take(2).enumerate() {
        let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        let lead = v
            .iter()
            .enumerate()
            .max_by(|(i, a), (j, b)| {
                a.abs()
                    .partial_cmp(&b.abs())
                    .unwrap()
                    .then(j.cmp(i))
            })
            .map(|(i, _)| i)
            .unwrap();
        if v[lead] < 0.0 {
            for x in &mut v {
                *x = -*x;
            }
        }
        explained[slot] = eig.eigenvalues[idx].max(0.0);
        components.push(v);
    }
    let rows = book
        .rows()
        .enumerate()
        .map(|(c, row)| {
            let centered: Vec<f64> = row
                .iter()
                .zip(&mean)
                .map(|(&v, &m)| v as f64 - m)
                .collect();
            let project = |comp: &[f64]| -> f64 {
                centered.iter().zip(comp).map(|(a, b)| a * b).sum()
            };
            ProjectionRow {
                code: c as u32,
                usage: usage[c],
                pc1: project(&components[0]),
                pc2: project(&components[1]),
            }
        })
        .collect();
    Ok(ProjectionReport {
        rows,
        explained,
        total_variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ngram::UniformProposal;

    fn grid(codes: Vec<u32>) -> TokenGrid {
        let w = codes.len();
        TokenGrid::new(1, w, codes).unwrap()
    }

    #[test]
    fn usage_full_and_half() {
        let full = codebook_usage(&[grid(vec![0, 1, 2, 3])], 4).unwrap();
        assert_eq!(full.usage_percent, 100.0);
        let half = codebook_usage(&[grid(vec![0, 1, 1, 0])], 4).unwrap();
        assert_eq!(half.usage_percent, 50.0);
        assert_eq!(half.used, 2);
    }

    #[test]
    fn usage_invariant_under_duplication_and_reorder() {
        let a = grid(vec![0, 3, 1]);
        let b = grid(vec![2, 2, 0]);
        let fwd = codebook_usage(&[a.clone(), b.clone()], 5).unwrap();
        let rev = codebook_usage(&[b.clone(), a.clone(), b, a], 5).unwrap();
        assert_eq!(fwd, rev);
    }

    #[test]
    fn uniform_perplexity_is_vocab_size() {
        let model = UniformProposal { vocab_size: 8192 };
        let ppl = perplexity(&model, &[grid(vec![17, 4000, 8191, 0])]).unwrap();
        assert_eq!(ppl, 8192.0);
    }

    #[test]
    fn gaussian_stats_hand_moments() {
        let stats = gaussian_stats(&[0.0, 0.0, 2.0, 0.0], 2).unwrap();
        assert_eq!(stats.mean(), &[1.0, 0.0]);
        assert_eq!(stats.covariance(), &[2.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn identical_points_zero_covariance() {
        let stats = gaussian_stats(&[1.5, -2.0, 1.5, -2.0, 1.5, -2.0], 2).unwrap();
        assert!(stats.covariance().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frechet_identical_stats_zero() {
        let s = gaussian_stats(&[0.0, 0.0, 1.0, 2.0, -1.0, 0.5, 2.0, -0.5], 2).unwrap();
        let d = frechet_distance(&s, &s).unwrap();
        assert!(d.abs() <= 1e-9, "{d}");
    }

    #[test]
    fn frechet_equal_covariance_is_mean_gap() {
        let a = gaussian_stats(&[0.0, 0.0, 1.0, 1.0, -1.0, 0.5, 0.0, -1.5], 2).unwrap();
        let shifted: Vec<f64> = [0.0, 0.0, 1.0, 1.0, -1.0, 0.5, 0.0, -1.5]
            .chunks(2)
            .flat_map(|r| [r[0] + 3.0, r[1] - 4.0])
            .collect();
        let b = gaussian_stats(&shifted, 2).unwrap();
        let d = frechet_distance(&a, &b).unwrap();
        assert!((d - 25.0).abs() < 1e-6, "{d}");
    }

    #[test]
    fn frechet_one_dimensional_closed_form() {
        // 1-D: (mu1-mu2)^2 + (sigma1-sigma2)^2.
        let a = gaussian_stats(&[0.0, 2.0], 1).unwrap(); // mean 1, var 2
        let b = gaussian_stats(&[4.0, 6.0], 1).unwrap(); // mean 5, var 2
        let d = frechet_distance(&a, &b).unwrap();
        let want = 16.0 + (2.0f64.sqrt() - 2.0f64.sqrt()).powi(2);
        assert!((d - want).abs() < 1e-9, "{d}");
    }

    #[test]
    fn frechet_symmetric_and_translation_invariant() {
        let a = gaussian_stats(&[0.1, 0.0, 1.2, 0.4, -0.7, 1.1, 0.3, -0.2], 2).unwrap();
        let b = gaussian_stats(&[2.0, 1.0, 0.5, -0.5, 1.5, 2.5, -1.0, 0.0], 2).unwrap();
        let d_ab = frechet_distance(&a, &b).unwrap();
        let d_ba = frechet_distance(&b, &a).unwrap();
        assert!((d_ab - d_ba).abs() < 1e-6);
        let shift = |s: &GaussianStats| {
            GaussianStats::new(
                2,
                s.mean().iter().map(|m| m + 7.0).collect(),
                s.covariance().to_vec(),
                s.count(),
            )
            .unwrap()
        };
        let d_shifted = frechet_distance(&shift(&a), &shift(&b)).unwrap();
        assert!((d_ab - d_shifted).abs() < 1e-6);
    }

    #[test]
    fn inception_score_identical_rows_is_one() {
        let probs = ProbMatrix::new(3, 4, vec![0.25; 12]).unwrap();
        let s = inception_score(&probs).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inception_score_one_hot_rows_is_class_count() {
        let mut data = vec![0.0; 9];
        for i in 0..3 {
            data[i * 3 + i] = 1.0;
        }
        let probs = ProbMatrix::new(3, 3, data).unwrap();
        let s = inception_score(&probs).unwrap();
        assert!((s - 3.0).abs() < 1e-9, "{s}");
    }

    #[test]
    fn non_stochastic_rows_rejected() {
        assert!(matches!(
            ProbMatrix::new(1, 2, vec![0.6, 0.6]),
            Err(Error::NonStochasticRow { .. })
        ));
        assert!(matches!(
            ProbMatrix::new(1, 2, vec![1.5, -0.5]),
            Err(Error::NonStochasticRow { .. })
        ));
    }

    #[test]
    fn projection_collinear_codebook_has_flat_second_axis() {
        // Rows on a line in d=3.
        let mut vectors = Vec::new();
        for i in 0..6 {
            let t = i as f32;
            vectors.extend_from_slice(&[t, 2.0 * t, -t]);
        }
        let book = Codebook::new(6, 3, vectors).unwrap();
        let report = export_codebook_projection(&book, None).unwrap();
        assert!(report.explained[1] <= 1e-8 * report.explained[0]);
        for row in &report.rows {
            assert!(row.pc2.abs() < 1e-6);
        }
    }

    #[test]
    fn projection_distances_survive_rotation() {
        let vectors = vec![
            0.0f32, 0.0, 1.0, 0.3, -0.5, 1.2, 2.0, 0.1, 0.4, -0.7,
        ];
        let book = Codebook::new(5, 2, vectors.clone()).unwrap();
        // Rotate every row by 30 degrees.
        let (s, c) = (30f64.to_radians().sin(), 30f64.to_radians().cos());
        let rotated: Vec<f32> = vectors
            .chunks(2)
            .flat_map(|r| {
                [
                    (c * r[0] as f64 - s * r[1] as f64) as f32,
                    (s * r[0] as f64 + c * r[1] as f64) as f32,
                ]
            })
            .collect();
        let book_rot = Codebook::new(5, 2, rotated).unwrap();
        let p1 = export_codebook_projection(&book, None).unwrap();
        let p2 = export_codebook_projection(&book_rot, None).unwrap();
        for i in 0..5 {
            for j in (i + 1)..5 {
                let d1 = ((p1.rows[i].pc1 - p1.rows[j].pc1).powi(2)
                    + (p1.rows[i].pc2 - p1.rows[j].pc2).powi(2))
                .sqrt();
                let d2 = ((p2.rows[i].pc1 - p2.rows[j].pc1).powi(2)
                    + (p2.rows[i].pc2 - p2.rows[j].pc2).powi(2))
                .sqrt();
                assert!((d1 - d2).abs() < 1e-5, "pair ({i},{j}): {d1} vs {d2}");
            }
        }
    }

    #[test]
    fn projection_rejects_scalar_codebooks() {
        let book = Codebook::new(3, 1, vec![0.0, 1.0, 2.0]).unwrap();
        assert!(export_codebook_projection(&book, None).is_err());
    }

    #[test]
    fn projection_counts_usage() {
        let book = Codebook::new(3, 2, vec![0.0; 6]).unwrap();
        let report =
            export_codebook_projection(&book, Some(&[grid(vec![0, 0, 2])])).unwrap();
        assert_eq!(report.rows[0].usage, 2);
        assert_eq!(report.rows[1].usage, 0);
        assert_eq!(report.rows[2].usage, 1);
    }
}
