//! Codebook size/dimension sweep harness. For each dimension the sizes
//! are fitted in ascending order with warm-started k-means (the smaller
//! codebook's centroids seed the larger fit), which keeps quantization
//! error non-increasing in codebook size.

use serde::Serialize;
use vqtk_core::cluster::{kmeans_fit, kmeans_fit_warm, KMeansConfig};
use vqtk_core::error::{Error, Result};
use vqtk_core::metrics::{codebook_usage, feature_stats, frechet_distance, perplexity};
use vqtk_core::ngram::ngram_fit;
use vqtk_core::types::{Codebook, FeatureMap};
use vqtk_core::vq::vq_quantize;

use crate::demo::detokenize;
use crate::synth::{generate_mixture, MixtureSpec};

#[derive(Debug, Clone, Serialize)]
pub struct SweepCell {
    pub size: usize,
    pub dim: usize,
    pub usage_percent: f64,
    pub quant_error: f64,
    pub frechet_recon: f64,
    pub perplexity: f64,
}

const NGRAM_ORDER: usize = 2;
const NGRAM_ALPHA: f64 = 0.05;

fn evaluate_cell(data: &[FeatureMap], book: &Codebook, size: usize) -> Result<SweepCell> {
    let mut tokens = Vec::with_capacity(data.len());
    let mut recon = Vec::with_capacity(data.len());
    let mut quant_error = 0.0;
    for map in data {
        let out = vq_quantize(map, book)?;
        quant_error += out.quant_error;
        recon.push(detokenize(&out.tokens, book)?);
        tokens.push(out.tokens);
    }
    quant_error /= data.len() as f64;
    let usage = codebook_usage(&tokens, book.size())?;
    let frechet_recon = frechet_distance(&feature_stats(data)?, &feature_stats(&recon)?)?;
    let model = ngram_fit(&tokens, NGRAM_ORDER, book.size(), NGRAM_ALPHA)?;
    let ppl = perplexity(&model, &tokens)?;
    Ok(SweepCell {
        size,
        dim: book.dim(),
        usage_percent: usage.usage_percent,
        quant_error,
        frechet_recon,
        perplexity: ppl,
    })
}

/// Sweeps the given sizes over one fixed dataset.
pub fn sweep_sizes(data: &[FeatureMap], sizes: &[usize], seed: u64) -> Result<Vec<SweepCell>> {
    if sizes.is_empty() {
        return Err(Error::InvalidConfig("sweep grid is empty".into()));
    }
    let mut sorted = sizes.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut cells = Vec::with_capacity(sorted.len());
    let mut warm: Option<Codebook> = None;
    for &size in &sorted {
        let cfg = KMeansConfig {
            k: size,
            max_iters: 50,
            batch_size: usize::MAX,
            seed,
            tol: 1e-10,
            reinit_empty: true,
        };
        let (book, _) = match &warm {
            Some(prev) => kmeans_fit_warm(data, &cfg, prev)?,
            None => kmeans_fit(data, &cfg)?,
        };
        cells.push(evaluate_cell(data, &book, size)?);
        warm = Some(book);
    }
    Ok(cells)
}

/// Sweeps (size, dim) cells over freshly generated synthetic data per
/// dimension.
pub fn sweep_synthetic(
    base: &MixtureSpec,
    sizes: &[usize],
    dims: &[usize],
    seed: u64,
) -> Result<Vec<SweepCell>> {
    if sizes.is_empty() || dims.is_empty() {
        return Err(Error::InvalidConfig("sweep grid is empty".into()));
    }
    let mut cells = Vec::new();
    for &dim in dims {
        let spec = MixtureSpec {
            dim,
            ..base.clone()
        };
        let data = generate_mixture(&spec, seed)?;
        cells.extend(sweep_sizes(&data, sizes, seed)?);
    }
    Ok(cells)
}

pub fn sweep_csv(cells: &[SweepCell]) -> String {
    let mut out = String::from("size,dim,usage_percent,quant_error,frechet_recon,perplexity\n");
    for c in cells {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            c.size, c.dim, c.usage_percent, c.quant_error, c.frechet_recon, c.perplexity
        ));
    }
    out
}
