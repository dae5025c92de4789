//! Feature-reconstruction objective: negative cosine similarity between a
//! reconstructed feature map and a teacher feature map, with analytic
//! gradients. Vectors with near-zero norm are a typed error, never a
//! silent clamp.

use crate::error::{Error, Result};
use crate::types::FeatureMap;

const NORM_FLOOR: f64 = 1e-12;

/// How the cosine is reduced over a spatial map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CosineMode {
    /// Mean of per-position cosines.
    #[default]
    PerPosition,
    /// One cosine over the flattened map.
    Flat,
}

fn check_shapes(a: &FeatureMap, b: &FeatureMap) -> Result<()> {
    let sa = (a.height(), a.width(), a.dim());
    let sb = (b.height(), b.width(), b.dim());
    if sa != sb {
        return Err(Error::ShapeMismatch {
            expected: sb,
            found: sa,
        });
    }
    Ok(())
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt()
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

fn cosine(a: &[f32], b: &[f32], position: usize) -> Result<f64> {
    let na = norm(a);
    let nb = norm(b);
    if na <= NORM_FLOOR || nb <= NORM_FLOOR {
        return Err(Error::ZeroNorm { position });
    }
    Ok(dot(a, b) / (na * nb))
}

/// Mean negative cosine similarity between `recon` and `teacher`.
pub fn kd_loss(recon: &FeatureMap, teacher: &FeatureMap) -> Result<f64> {
    kd_loss_with_mode(recon, teacher, CosineMode::PerPosition)
}

pub fn kd_loss_with_mode(
    recon: &FeatureMap,
    teacher: &FeatureMap,
    mode: CosineMode,
) -> Result<f64> {
    check_shapes(recon, teacher)?;
    match mode {
        CosineMode::PerPosition => {
            let mut sum = 0.0f64;
            for p in 0..recon.positions() {
                sum += cosine(recon.vector(p), teacher.vector(p), p)?;
            }
            Ok(-sum / recon.positions() as f64)
        }
        CosineMode::Flat => Ok(-cosine(recon.data(), teacher.data(), 0)?),
    }
}

/// Analytic gradient of [`kd_loss`] with respect to `recon`, laid out
/// like the input map. Zero wherever `recon` is parallel to `teacher`.
pub fn kd_loss_gradient(recon: &FeatureMap, teacher: &FeatureMap) -> Result<Vec<f64>> {
    kd_loss_gradient_with_mode(recon, teacher, CosineMode::PerPosition)
}

pub fn kd_loss_gradient_with_mode(
    recon: &FeatureMap,
    teacher: &FeatureMap,
    mode: CosineMode,
) -> Result<Vec<f64>> {
    check_shapes(recon, teacher)?;
    let d = recon.dim();
    let mut grad = vec![0.0f64; recon.data().len()];
    match mode {
        CosineMode::PerPosition => {
            let inv_l = 1.0 / recon.positions() as f64;
            for p in 0..recon.positions() {
                let r = recon.vector(p);
                let t = teacher.vector(p);
                write_cosine_grad(r, t, p, inv_l, &mut grad[p * d..(p + 1) * d])?;
            }
        }
        CosineMode::Flat => {
            let r = recon.data();
            let t = teacher.data();
            let len = grad.len();
            write_cosine_grad(r, t, 0, 1.0, &mut grad[..len])?;
        }
    }
    Ok(grad)
}

/// d/dr of `-cos(r, t) * scale`: `-(t/(|r||t|) - cos * r/|r|^2) * scale`.
fn write_cosine_grad(
    r: &[f32],
    t: &[f32],
    position: usize,
    scale: f64,
    out: &mut [f64],
) -> Result<()> {
    let nr = norm(r);
    let nt = norm(t);
    if nr <= NORM_FLOOR || nt <= NORM_FLOOR {
        return Err(Error::ZeroNorm { position });
    }
    let cos = dot(r, t) / (nr * nt);
    for k in 0..r.len() {
        out[k] = -scale * (t[k] as f64 / (nr * nt) - cos * r[k] as f64 / (nr * nr));
    }
    Ok(())
}
