//! Seeded synthetic feature worlds for the demo and the sweep: a
//! Gaussian mixture of component/subcluster modes, visited in raster
//! order by a sticky Markov chain that tours the modes in a fixed
//! cycle. The token sequences are highly predictable for a codebook
//! aligned with the mode means, while a codebook that merges modes
//! sees ambiguous successors at every merged code.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vqtk_core::error::{Error, Result};
use vqtk_core::types::FeatureMap;

#[derive(Debug, Clone)]
pub struct MixtureSpec {
    pub components: usize,
    pub subclusters: usize,
    pub dim: usize,
    pub maps: usize,
    pub height: usize,
    pub width: usize,
    /// Probability of advancing the mode tour by one step; otherwise
    /// the chain jumps to a uniformly random other mode.
    pub stay_prob: f64,
    pub component_spread: f64,
    pub subcluster_spread: f64,
    pub noise: f64,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        Self {
            components: 4,
            subclusters: 4,
            dim: 6,
            maps: 32,
            height: 8,
            width: 8,
            stay_prob: 0.95,
            component_spread: 3.0,
            subcluster_spread: 0.8,
            noise: 0.15,
        }
    }
}

impl MixtureSpec {
    pub fn modes(&self) -> usize {
        self.components * self.subclusters
    }

    pub fn vectors(&self) -> usize {
        self.maps * self.height * self.width
    }

    /// Harmonic embedding of `count` well-separated points on a ring,
    /// scaled by `radius`, with a per-ring phase shift.
    fn ring(&self, count: usize, index: usize, radius: f64, phase: f64) -> Vec<f64> {
        let theta = 2.0 * std::f64::consts::PI * index as f64 / count as f64 + phase;
        (0..self.dim)
            .map(|j| {
                let harmonic = (j / 2 + 1) as f64;
                if j % 2 == 0 {
                    radius * (harmonic * theta).cos()
                } else {
                    radius * (harmonic * theta).sin()
                }
            })
            .collect()
    }

    /// Mean of subcluster `s` of component `c`.
    pub fn mode_mean(&self, c: usize, s: usize) -> Vec<f64> {
        let base = self.ring(self.components, c, self.component_spread, 0.0);
        let offset = self.ring(self.subclusters, s, self.subcluster_spread, 0.7 * c as f64);
        base.iter().zip(&offset).map(|(a, b)| a + b).collect()
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Generates the seeded corpus of feature maps.
pub fn generate_mixture(spec: &MixtureSpec, seed: u64) -> Result<Vec<FeatureMap>> {
    if spec.dim < 2 {
        return Err(Error::InvalidConfig(
            "mixture needs dimension >= 2".into(),
        ));
    }
    if spec.components < 2 || spec.subclusters < 1 || spec.maps == 0 {
        return Err(Error::InvalidConfig(
            "mixture needs >= 2 components, >= 1 subcluster, >= 1 map".into(),
        ));
    }
    let modes = spec.modes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut maps = Vec::with_capacity(spec.maps);
    for _ in 0..spec.maps {
        let mut mode = rng.gen_range(0..modes);
        let mut data = Vec::with_capacity(spec.height * spec.width * spec.dim);
        for _ in 0..spec.height * spec.width {
            let mean = spec.mode_mean(mode / spec.subclusters, mode % spec.subclusters);
            for m in mean {
                data.push((m + spec.noise * gaussian(&mut rng)) as f32);
            }
            if rng.gen::<f64>() < spec.stay_prob {
                mode = (mode + 1) % modes;
            } else {
                mode = (mode + rng.gen_range(1..modes)) % modes;
            }
        }
        maps.push(FeatureMap::new(spec.height, spec.width, spec.dim, data)?);
    }
    Ok(maps)
}

/// A codebook of the same size and dimension drawn blindly from the
/// data's global per-coordinate moments.
pub fn random_codebook(
    data: &[FeatureMap],
    size: usize,
    seed: u64,
) -> Result<vqtk_core::Codebook> {
    if data.is_empty() {
        return Err(Error::EmptyInput("random codebook needs data"));
    }
    let dim = data[0].dim();
    let total: usize = data.iter().map(|m| m.positions()).sum();
    let mut mean = vec![0.0f64; dim];
    for map in data {
        for v in map.vectors() {
            for (m, &x) in mean.iter_mut().zip(v) {
                *m += x as f64;
            }
        }
    }
    for m in &mut mean {
        *m /= total as f64;
    }
    let mut var = vec![0.0f64; dim];
    for map in data {
        for v in map.vectors() {
            for (s, (&x, &m)) in var.iter_mut().zip(v.iter().zip(&mean)) {
                *s += (x as f64 - m) * (x as f64 - m);
            }
        }
    }
    for s in &mut var {
        *s /= total as f64;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(size * dim);
    for _ in 0..size {
        for j in 0..dim {
            rows.push((mean[j] + var[j].sqrt() * gaussian(&mut rng)) as f32);
        }
    }
    vqtk_core::Codebook::new(size, dim, rows)
}
