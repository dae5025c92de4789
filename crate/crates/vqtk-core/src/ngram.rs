//! Proposal-model interface supplying `p(z_i | z_{1:i-1})` over token
//! sequences, with a count-based add-alpha n-gram reference
//! implementation. Token grids are serialized into sequences in raster
//! (row-major) order; sequence starts use the shorter actual prefix as a
//! synthetic begin-of-sequence context rather than a reserved code.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::types::TokenGrid;

/// A model of the autoregressive factorization of `p(z)`.
pub trait ProposalModel {
    fn vocab_size(&self) -> usize;

    /// Distribution over the next code given the preceding codes. Every
    /// entry is nonnegative and the vector sums to 1 within 1e-9.
    fn next_token_distribution(&self, context: &[u32]) -> Vec<f64>;
}

/// Maximum-entropy reference model: every code equally likely.
#[derive(Debug, Clone)]
pub struct UniformProposal {
    pub vocab_size: usize,
}

impl ProposalModel for UniformProposal {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_token_distribution(&self, _context: &[u32]) -> Vec<f64> {
        vec![1.0 / self.vocab_size as f64; self.vocab_size]
    }
}

/// Count-based n-gram model with add-alpha smoothing.
#[derive(Debug, Clone, PartialEq)]
pub struct NgramModel {
    order: usize,
    vocab_size: usize,
    alpha: f64,
    counts: BTreeMap<Vec<u32>, BTreeMap<u32, u64>>,
}

impl NgramModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    fn context_of<'a>(&self, prefix: &'a [u32]) -> &'a [u32] {
        let ctx_len = (self.order - 1).min(prefix.len());
        &prefix[prefix.len() - ctx_len..]
    }
}

impl ProposalModel for NgramModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_token_distribution(&self, context: &[u32]) -> Vec<f64> {
        let ctx = self.context_of(context);
        let n = self.vocab_size as f64;
        match self.counts.get(ctx) {
            Some(table) => {
                let total: u64 = table.values().sum();
                let denom = total as f64 + self.alpha * n;
                let mut dist = vec![self.alpha / denom; self.vocab_size];
                for (&code, &count) in table {
                    dist[code as usize] = (count as f64 + self.alpha) / denom;
                }
                dist
            }
            // Unseen context: smoothing alone, i.e. uniform.
            None => vec![1.0 / n; self.vocab_size],
        }
    }
}

/// Serializes a grid into raster order.
pub fn raster_sequence(grid: &TokenGrid) -> &[u32] {
    grid.codes()
}

/// Fits an n-gram model on raster-order traversals of the corpus.
pub fn ngram_fit(
    corpus: &[TokenGrid],
    order: usize,
    vocab_size: usize,
    alpha: f64,
) -> Result<NgramModel> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("n-gram fit requires token grids"));
    }
    if order == 0 || vocab_size == 0 {
        return Err(Error::InvalidConfig(
            "order and vocab_size must be positive".into(),
        ));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "smoothing alpha must be positive, got {alpha}"
        )));
    }
    let mut counts: BTreeMap<Vec<u32>, BTreeMap<u32, u64>> = BTreeMap::new();
    for grid in corpus {
        grid.validate_range(vocab_size)?;
        let seq = raster_sequence(grid);
        for i in 0..seq.len() {
            let ctx_len = (order - 1).min(i);
            let ctx = seq[i - ctx_len..i].to_vec();
            *counts.entry(ctx).or_default().entry(seq[i]).or_insert(0) += 1;
        }
    }
    Ok(NgramModel {
        order,
        vocab_size,
        alpha,
        counts,
    })
}

/// Ancestral sampling, deterministic given the seed.
pub fn ngram_sample(model: &impl ProposalModel, length: usize, seed: u64) -> Result<Vec<u32>> {
    if length == 0 {
        return Err(Error::InvalidConfig("sample length must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seq = Vec::with_capacity(length);
    for _ in 0..length {
        let dist = model.next_token_distribution(&seq);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut pick = model.vocab_size() as u32 - 1;
        for (code, &p) in dist.iter().enumerate() {
            acc += p;
            if u < acc {
                pick = code as u32;
                break;
            }
        }
        seq.push(pick);
    }
    Ok(seq)
}

/// Natural-log probability of a sequence under the chain rule. Smoothing
/// keeps every factor positive, so the result is always finite.
pub fn sequence_log_prob(model: &impl ProposalModel, sequence: &[u32]) -> Result<f64> {
    let vocab = model.vocab_size();
    let mut sum = 0.0f64;
    for (i, &code) in sequence.iter().enumerate() {
        if (code as usize) >= vocab {
            return Err(Error::CodeOutOfRange { code, vocab });
        }
        let dist = model.next_token_distribution(&sequence[..i]);
        sum += dist[code as usize].ln();
    }
    Ok(sum)
}

const NGRM_MAGIC: [u8; 4] = *b"NGRM";
const NGRM_VERSION: u32 = 1;

/// NGRM format: magic | version u32 | order u32 | N u32 | alpha f64 |
/// entry count u64 | entries of (ctx_len u32, ctx codes, code u32,
/// count u64), all little-endian, entries in sorted (context, code)
/// order.
pub fn encode_ngram(model: &NgramModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&NGRM_MAGIC);
    out.extend_from_slice(&NGRM_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.order as u32).to_le_bytes());
    out.extend_from_slice(&(model.vocab_size as u32).to_le_bytes());
    out.extend_from_slice(&model.alpha.to_le_bytes());
    let entries: u64 = model.counts.values().map(|t| t.len() as u64).sum();
    out.extend_from_slice(&entries.to_le_bytes());
    for (ctx, table) in &model.counts {
        for (&code, &count) in table {
            out.extend_from_slice(&(ctx.len() as u32).to_le_bytes());
            for &c in ctx {
                out.extend_from_slice(&c.to_le_bytes());
            }
            out.extend_from_slice(&code.to_le_bytes());
            out.extend_from_slice(&count.to_le_bytes());
        }
    }
    out
}

pub fn decode_ngram(bytes: &[u8]) -> Result<NgramModel> {
    let mut offset = 0usize;
    let take = |offset: &mut usize, n: usize| -> Result<&[u8]> {
        let available = bytes.len() - *offset;
        if available < n {
            return Err(Error::Truncated {
                offset: *offset,
                needed: n,
                available,
            });
        }
        let s = &bytes[*offset..*offset + n];
        *offset += n;
        Ok(s)
    };
    let found = take(&mut offset, 4)?;
    if found != NGRM_MAGIC {
        return Err(Error::BadMagic {
            offset: 0,
            expected: NGRM_MAGIC,
            found: found.try_into().unwrap(),
        });
    }
    let u32_at = |offset: &mut usize| -> Result<u32> {
        Ok(u32::from_le_bytes(take(offset, 4)?.try_into().unwrap()))
    };
    let version_off = offset;
    let version = u32_at(&mut offset)?;
    if version != NGRM_VERSION {
        return Err(Error::BadVersion {
            offset: version_off,
            found: version,
        });
    }
    let order = u32_at(&mut offset)? as usize;
    let vocab_size = u32_at(&mut offset)? as usize;
    let alpha = f64::from_le_bytes(take(&mut offset, 8)?.try_into().unwrap());
    if order == 0 || vocab_size == 0 || !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidConfig(
            "NGRM header has invalid order, vocabulary, or alpha".into(),
        ));
    }
    let entries = u64::from_le_bytes(take(&mut offset, 8)?.try_into().unwrap());
    let mut counts: BTreeMap<Vec<u32>, BTreeMap<u32, u64>> = BTreeMap::new();
    for _ in 0..entries {
        let ctx_len = u32_at(&mut offset)? as usize;
        if ctx_len >= order {
            return Err(Error::InvalidConfig(format!(
                "context length {ctx_len} exceeds order {order}"
            )));
        }
        let mut ctx = Vec::with_capacity(ctx_len);
        for _ in 0..ctx_len {
            let c = u32_at(&mut offset)?;
            if c as usize >= vocab_size {
                return Err(Error::CodeOutOfRange {
                    code: c,
                    vocab: vocab_size,
                });
            }
            ctx.push(c);
        }
        let code = u32_at(&mut offset)?;
        if code as usize >= vocab_size {
            return Err(Error::CodeOutOfRange {
                code,
                vocab: vocab_size,
            });
        }
        let count = u64::from_le_bytes(take(&mut offset, 8)?.try_into().unwrap());
        counts.entry(ctx).or_default().insert(code, count);
    }
    if offset != bytes.len() {
        return Err(Error::Truncated {
            offset,
            needed: 0,
            available: bytes.len() - offset,
        });
    }
    Ok(NgramModel {
        order,
        vocab_size,
        alpha,
        counts,
    })
}

pub fn read_ngram(path: impl AsRef<Path>) -> Result<NgramModel> {
    let bytes = fs::read(path.as_ref()).map_err(|source| Error::Io {
        path: path.as_ref().to_path_buf(),
        source,
    })?;
    decode_ngram(&bytes)
}

pub fn write_ngram(model: &NgramModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path.as_ref(), encode_ngram(model)).map_err(|source| Error::Io {
        path: path.as_ref().to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(codes: Vec<u32>) -> TokenGrid {
        let w = codes.len();
        TokenGrid::new(1, w, codes).unwrap()
    }

    #[test]
    fn degenerate_corpus_concentrates_mass() {
        let model = ngram_fit(&[grid(vec![0; 32])], 1, 2, 1e-9).unwrap();
        let dist = model.next_token_distribution(&[]);
        assert!(dist[0] > 1.0 - 1e-6);
    }

    #[test]
    fn unseen_context_is_uniform() {
        let model = ngram_fit(&[grid(vec![0, 1, 0, 1])], 3, 4, 0.5).unwrap();
        let dist = model.next_token_distribution(&[3, 3]);
        for p in dist {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn bigram_hand_counts() {
        // Corpus [0,1,0,1], order 2, alpha=1, N=2: context (0) saw code 1
        // twice out of two, so p(1|0) = (2+1)/(2+2) = 0.75.
        let model = ngram_fit(&[grid(vec![0, 1, 0, 1])], 2, 2, 1.0).unwrap();
        let dist = model.next_token_distribution(&[0]);
        assert!((dist[1] - 0.75).abs() < 1e-12);
        assert!((dist[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn bigram_sequence_log_prob_hand_value() {
        let model = ngram_fit(&[grid(vec![0, 1, 0, 1])], 2, 2, 1.0).unwrap();
        // ln p(0|BOS) + ln p(1|0); BOS context saw only code 0 once:
        // p(0|BOS) = (1+1)/(1+2) = 2/3.
        let got = sequence_log_prob(&model, &[0, 1]).unwrap();
        let want = (2.0f64 / 3.0).ln() + 0.75f64.ln();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn uniform_log_prob_closed_form() {
        let model = UniformProposal { vocab_size: 16 };
        let got = sequence_log_prob(&model, &[3; 10]).unwrap();
        assert!((got + 10.0 * 16f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn deterministic_model_scores_zero() {
        let model = ngram_fit(&[grid(vec![5; 64])], 1, 8, 1e-300).unwrap();
        let got = sequence_log_prob(&model, &[5; 8]).unwrap();
        assert!(got.abs() < 1e-9, "{got}");
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let model = ngram_fit(&[grid(vec![0, 1, 2, 0, 1, 2, 2, 1])], 2, 3, 1.0).unwrap();
        let a = ngram_sample(&model, 32, 9).unwrap();
        let b = ngram_sample(&model, 32, 9).unwrap();
        assert_eq!(a, b);
        let c = ngram_sample(&model, 32, 10).unwrap();
        assert!(a != c || a.iter().all(|&x| x == a[0]));
    }

    #[test]
    fn deterministic_model_samples_constant() {
        let model = ngram_fit(&[grid(vec![3; 16])], 1, 4, 1e-300).unwrap();
        let seq = ngram_sample(&model, 8, 0).unwrap();
        assert_eq!(seq, vec![3; 8]);
    }

    #[test]
    fn empirical_unigram_frequencies_converge() {
        // Unigram with p = (0.5, 0.3, 0.2) from counts (5,3,2), tiny alpha.
        let corpus = grid(vec![0, 0, 0, 0, 0, 1, 1, 1, 2, 2]);
        let model = ngram_fit(&[corpus], 1, 3, 1e-9).unwrap();
        let samples = ngram_sample(&model, 100_000, 1234).unwrap();
        let mut freq = [0.0f64; 3];
        for &c in &samples {
            freq[c as usize] += 1.0;
        }
        for f in &mut freq {
            *f /= samples.len() as f64;
        }
        assert!((freq[0] - 0.5).abs() < 0.01);
        assert!((freq[1] - 0.3).abs() < 0.01);
        assert!((freq[2] - 0.2).abs() < 0.01);
    }

    #[test]
    fn out_of_range_code_rejected() {
        assert!(matches!(
            ngram_fit(&[grid(vec![0, 4])], 2, 4, 1.0),
            Err(Error::CodeOutOfRange { .. })
        ));
        let model = ngram_fit(&[grid(vec![0, 1])], 2, 2, 1.0).unwrap();
        assert!(sequence_log_prob(&model, &[2]).is_err());
    }

    #[test]
    fn ngrm_round_trip() {
        let model = ngram_fit(&[grid(vec![0, 1, 0, 2, 1, 0])], 3, 3, 0.25).unwrap();
        let back = decode_ngram(&encode_ngram(&model)).unwrap();
        assert_eq!(model, back);
    }

    #[test]
    fn ngrm_bad_magic() {
        let mut bytes = encode_ngram(&ngram_fit(&[grid(vec![0])], 1, 1, 1.0).unwrap());
        bytes[0] = b'X';
        assert!(matches!(
            decode_ngram(&bytes),
            Err(Error::BadMagic { .. })
        ));
    }
}
