//! Mini-batch k-means over pooled feature vectors. The fitted centroids
//! become the codebook of a frozen tokenizer; tokenization afterwards is
//! plain nearest-neighbor quantization against it.
//!
//! Seeding is k-means++ with a configured PRNG. Assignment is parallel
//! over points; centroid accumulation runs in fixed point order, so a fit
//! is bitwise deterministic regardless of thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::{Codebook, FeatureMap};

#[derive(Debug, Clone)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Relative inertia-change stopping threshold; 0 disables.
    pub tol: f64,
    /// Reinitialize empty clusters to the point farthest from its
    /// current centroid.
    pub reinit_empty: bool,
}

impl KMeansConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.max_iters == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "k, max_iters, and batch_size must be positive".into(),
            ));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "tol must be >= 0, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

/// Pools maps into a flat `n x d` f64 matrix.
fn pool(data: &[FeatureMap]) -> Result<(Vec<f64>, usize, usize)> {
    if data.is_empty() {
        return Err(Error::EmptyInput("k-means requires feature maps"));
    }
    let d = data[0].dim();
    let mut pooled = Vec::new();
    for map in data {
        if map.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: map.dim(),
            });
        }
        pooled.extend(map.data().iter().map(|&v| v as f64));
    }
    let n = pooled.len() / d;
    Ok((pooled, n, d))
}

fn point(pooled: &[f64], d: usize, i: usize) -> &[f64] {
    &pooled[i * d..(i + 1) * d]
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum()
}

/// k-means++ additions: extends `centroids` (flat, `d`-strided) up to
/// `k` rows by D^2-weighted sampling.
fn kmeanspp_extend(
    pooled: &[f64],
    n: usize,
    d: usize,
    centroids: &mut Vec<f64>,
    k: usize,
    rng: &mut ChaCha8Rng,
) {
    if centroids.is_empty() {
        let first = rng.gen_range(0..n);
        centroids.extend_from_slice(point(pooled, d, first));
    }
    let mut min_d: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            centroids
                .chunks_exact(d)
                .map(|c| dist2(point(pooled, d, i), c))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    while centroids.len() / d < k {
        let total: f64 = min_d.iter().sum();
        let next = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &w) in min_d.iter().enumerate() {
                acc += w;
                if acc >= target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let row_start = centroids.len();
        centroids.extend_from_slice(point(pooled, d, next));
        let new_c = centroids[row_start..].to_vec();
        min_d
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, m)| *m = m.min(dist2(point(pooled, d, i), &new_c)));
    }
}

/// Assigns every point to its nearest centroid. Ties break to the lowest
/// centroid index. Returns (assignment, squared distance) per point.
fn assign(pooled: &[f64], n: usize, d: usize, centroids: &[f64]) -> Vec<(usize, f64)> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let x = point(pooled, d, i);
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (c, row) in centroids.chunks_exact(d).enumerate() {
                let dist = dist2(x, row);
                if dist < best_d {
                    best = c;
                    best_d = dist;
                }
            }
            (i, best, best_d)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .map(|(_, c, dist)| (c, dist))
        .collect()
}

fn fit_impl(
    pooled: &[f64],
    n: usize,
    d: usize,
    cfg: &KMeansConfig,
    mut centroids: Vec<f64>,
) -> (Vec<f64>, Vec<f64>) {
    let k = cfg.k;
    let full_batch = cfg.batch_size >= n;
    let mut trace = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut mb_counts = vec![0u64; k];

    for _ in 0..cfg.max_iters {
        if full_batch {
            let assignment = assign(pooled, n, d, &centroids);
            let inertia =
                assignment.iter().map(|&(_, dist)| dist).sum::<f64>() / n as f64;
            trace.push(inertia);

            let mut sums = vec![0.0f64; k * d];
            let mut counts = vec![0u64; k];
            for (i, &(c, _)) in assignment.iter().enumerate() {
                let x = point(pooled, d, i);
                for j in 0..d {
                    sums[c * d + j] += x[j];
                }
                counts[c] += 1;
            }
            for c in 0..k {
                if counts[c] > 0 {
                    let inv = 1.0 / counts[c] as f64;
                    for j in 0..d {
                        centroids[c * d + j] = sums[c * d + j] * inv;
                    }
                }
            }
            if cfg.reinit_empty {
                let mut taken = Vec::new();
                for c in 0..k {
                    if counts[c] == 0 {
                        // Farthest point from its assigned centroid, ties
                        // to the lowest index; distinct picks per empty
                        // cluster within one pass.
                        let mut far = 0usize;
                        let mut far_d = -1.0;
                        for (i, &(_, dist)) in assignment.iter().enumerate() {
                            if dist > far_d && !taken.contains(&i) {
                                far = i;
                                far_d = dist;
                            }
                        }
                        taken.push(far);
                        centroids[c * d..(c + 1) * d]
                            .copy_from_slice(point(pooled, d, far));
                    }
                }
            }
        } else {
            let batch: Vec<usize> = (0..cfg.batch_size)
                .map(|_| rng.gen_range(0..n))
                .collect();
            for &i in &batch {
                let x = point(pooled, d, i);
                let mut best = 0usize;
                let mut best_d = f64::INFINITY;
                for (c, row) in centroids.chunks_exact(d).enumerate() {
                    let dist = dist2(x, row);
                    if dist < best_d {
                        best = c;
                        best_d = dist;
                    }
                }
                mb_counts[best] += 1;
                let eta = 1.0 / mb_counts[best] as f64;
                for j in 0..d {
                    centroids[best * d + j] += eta * (x[j] - centroids[best * d + j]);
                }
            }
            let inertia = assign(pooled, n, d, &centroids)
                .iter()
                .map(|&(_, dist)| dist)
                .sum::<f64>()
                / n as f64;
            trace.push(inertia);
        }

        if cfg.tol > 0.0 && trace.len() >= 2 {
            let prev = trace[trace.len() - 2];
            let cur = trace[trace.len() - 1];
            if prev > 0.0 && ((prev - cur).abs() / prev) < cfg.tol {
                break;
            }
            if prev == 0.0 && cur == 0.0 {
                break;
            }
        }
    }
    (centroids, trace)
}

fn finish(centroids: Vec<f64>, trace: Vec<f64>, k: usize, d: usize) -> Result<(Codebook, Vec<f64>)> {
    let book = Codebook::new(k, d, centroids.iter().map(|&v| v as f32).collect())?;
    Ok((book, trace))
}

/// Fits `cfg.k` centroids to the pooled vectors of `data` and returns
/// them as a codebook together with the per-iteration inertia trace.
pub fn kmeans_fit(data: &[FeatureMap], cfg: &KMeansConfig) -> Result<(Codebook, Vec<f64>)> {
    cfg.validate()?;
    let (pooled, n, d) = pool(data)?;
    if n < cfg.k {
        return Err(Error::InsufficientData {
            needed: cfg.k,
            got: n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut centroids = Vec::with_capacity(cfg.k * d);
    kmeanspp_extend(&pooled, n, d, &mut centroids, cfg.k, &mut rng);
    let (centroids, trace) = fit_impl(&pooled, n, d, cfg, centroids);
    finish(centroids, trace, cfg.k, d)
}

/// Like [`kmeans_fit`] but seeded from `warm`'s rows, topped up to
/// `cfg.k` with k-means++ picks. With full-batch updates the converged
/// inertia can never exceed the warm codebook's own inertia, which makes
/// size sweeps monotone.
pub fn kmeans_fit_warm(
    data: &[FeatureMap],
    cfg: &KMeansConfig,
    warm: &Codebook,
) -> Result<(Codebook, Vec<f64>)> {
    cfg.validate()?;
    let (pooled, n, d) = pool(data)?;
    if warm.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: warm.dim(),
        });
    }
    if n < cfg.k || warm.size() > cfg.k {
        return Err(Error::InsufficientData {
            needed: cfg.k,
            got: n.min(warm.size()),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut centroids: Vec<f64> = warm.vectors().iter().map(|&v| v as f64).collect();
    kmeanspp_extend(&pooled, n, d, &mut centroids, cfg.k, &mut rng);
    let (centroids, trace) = fit_impl(&pooled, n, d, cfg, centroids);
    finish(centroids, trace, cfg.k, d)
}

/// The clustering pipeline's product: a frozen codebook of centroids.
pub fn build_cluster_tokenizer(data: &[FeatureMap], cfg: &KMeansConfig) -> Result<Codebook> {
    Ok(kmeans_fit(data, cfg)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_cfg(k: usize, seed: u64) -> KMeansConfig {
        KMeansConfig {
            k,
            max_iters: 100,
            batch_size: usize::MAX,
            seed,
            tol: 0.0,
            reinit_empty: true,
        }
    }

    fn two_cluster_data() -> Vec<FeatureMap> {
        let mut values = Vec::new();
        for i in 0..8 {
            let eps = (i as f32 - 3.5) * 0.01;
            values.extend_from_slice(&[eps, -eps]);
        }
        for i in 0..8 {
            let eps = (i as f32 - 3.5) * 0.01;
            values.extend_from_slice(&[6.0 + eps, -4.0 - eps]);
        }
        vec![FeatureMap::new(4, 4, 2, values).unwrap()]
    }

    #[test]
    fn recovers_two_cluster_means() {
        let data = two_cluster_data();
        let (book, _) = kmeans_fit(&data, &full_cfg(2, 11)).unwrap();
        let mut rows: Vec<Vec<f32>> = book.rows().map(|r| r.to_vec()).collect();
        rows.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
        // Closed-form cluster means: (0,0) and (6,-4).
        assert!(rows[0][0].abs() < 1e-6 && rows[0][1].abs() < 1e-6);
        assert!((rows[1][0] - 6.0).abs() < 1e-6 && (rows[1][1] + 4.0).abs() < 1e-6);
    }

    #[test]
    fn k_equals_points_reaches_zero_inertia() {
        let data = vec![FeatureMap::new(1, 4, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap()];
        let (_, trace) = kmeans_fit(&data, &full_cfg(4, 5)).unwrap();
        assert_eq!(*trace.last().unwrap(), 0.0);
    }

    #[test]
    fn single_point_single_centroid() {
        let data = vec![FeatureMap::new(1, 1, 2, vec![3.0, -2.0]).unwrap()];
        let (book, _) = kmeans_fit(&data, &full_cfg(1, 0)).unwrap();
        assert_eq!(book.row(0), &[3.0, -2.0]);
    }

    #[test]
    fn insufficient_data_rejected() {
        let data = vec![FeatureMap::new(1, 2, 1, vec![0.0, 1.0]).unwrap()];
        assert!(matches!(
            kmeans_fit(&data, &full_cfg(3, 0)),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn full_batch_inertia_non_increasing() {
        for seed in 0..5u64 {
            let mut values = Vec::new();
            for i in 0..128 {
                let t = (i as f32 + seed as f32) * 0.61;
                values.extend_from_slice(&[t.sin() * 4.0, (t * 1.7).cos() * 3.0, t % 2.0]);
            }
            let data = vec![FeatureMap::new(8, 16, 3, values).unwrap()];
            let (_, trace) = kmeans_fit(&data, &full_cfg(6, seed)).unwrap();
            for pair in trace.windows(2) {
                assert!(
                    pair[1] <= pair[0] * (1.0 + 1e-12) + 1e-15,
                    "inertia increased: {pair:?}"
                );
            }
        }
    }

    #[test]
    fn centroids_stay_in_bounding_box() {
        let data = two_cluster_data();
        let (book, _) = kmeans_fit(&data, &full_cfg(3, 2)).unwrap();
        let pooled: Vec<f32> = data[0].data().to_vec();
        for j in 0..2 {
            let lo = pooled.iter().skip(j).step_by(2).cloned().fold(f32::INFINITY, f32::min);
            let hi = pooled
                .iter()
                .skip(j)
                .step_by(2)
                .cloned()
                .fold(f32::NEG_INFINITY, f32::max);
            for row in book.rows() {
                assert!(row[j] >= lo - 1e-6 && row[j] <= hi + 1e-6);
            }
        }
    }

    #[test]
    fn warm_start_respects_size_ordering() {
        let data = two_cluster_data();
        let (small, trace_small) = kmeans_fit(&data, &full_cfg(2, 9)).unwrap();
        let (_, trace_big) = kmeans_fit_warm(&data, &full_cfg(4, 9), &small).unwrap();
        assert!(trace_big.last().unwrap() <= trace_small.last().unwrap());
    }

    #[test]
    fn build_tokenizer_matches_fit() {
        let data = two_cluster_data();
        let cfg = full_cfg(2, 4);
        let book = build_cluster_tokenizer(&data, &cfg).unwrap();
        let (again, _) = kmeans_fit(&data, &cfg).unwrap();
        assert_eq!(book, again);
    }
}
