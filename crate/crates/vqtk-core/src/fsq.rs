//! Finite scalar quantization: each channel is bounded with tanh and
//! rounded onto a fixed symmetric grid, so the implicit codebook is the
//! product of per-channel level grids. Packing between per-channel digits
//! and flat codes is a mixed-radix bijection with channel 0 least
//! significant.

use crate::error::{Error, Result};
use crate::types::{Codebook, FeatureMap, QuantizeOutput, TokenGrid};

/// Per-channel level counts defining the implicit codebook.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FsqLevels {
    levels: Vec<u32>,
}

impl FsqLevels {
    pub fn new(levels: Vec<u32>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::EmptyInput("FSQ needs at least one level count"));
        }
        let mut product: u64 = 1;
        for &l in &levels {
            if l < 2 {
                return Err(Error::InvalidConfig(format!(
                    "every FSQ level count must be >= 2, got {l}"
                )));
            }
            product = product.saturating_mul(l as u64);
            if product > 1u64 << 32 {
                return Err(Error::DimensionOverflow {
                    height: product,
                    width: 1,
                    dim: 1,
                });
            }
        }
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[u32] {
        &self.levels
    }

    pub fn dim(&self) -> usize {
        self.levels.len()
    }

    /// Size of the implicit codebook, the product of all level counts.
    pub fn codebook_size(&self) -> u64 {
        self.levels.iter().map(|&l| l as u64).product()
    }
}

/// Round half away from zero; `f64::round` already does this.
#[inline]
fn round(x: f64) -> f64 {
    x.round()
}

/// Quantizes one scalar for a channel with `level` grid points, returning
/// (digit in `[0, level)`, grid value in `[-1, 1]`).
fn quantize_scalar(x: f64, level: u32) -> (u32, f64) {
    let t = x.tanh();
    let digit = if level % 2 == 1 {
        let half = (level / 2) as f64;
        (round(half * t) + half) as i64 as u32
    } else {
        let v = level as f64 / 2.0 - 0.5;
        (round(v * t + 0.5) - 0.5 + v) as i64 as u32
    };
    // The value always comes from the digit so that quantizer output and
    // the implied codebook agree bitwise (round can produce -0.0).
    (digit, digit_value(digit, level))
}

/// Grid value for a digit, identical to what [`fsq_quantize`] emits.
fn digit_value(digit: u32, level: u32) -> f64 {
    if level % 2 == 1 {
        let half = (level / 2) as f64;
        (digit as f64 - half) / half
    } else {
        let v = level as f64 / 2.0 - 0.5;
        (digit as f64 - v) / v
    }
}

/// Quantizes every channel of every position onto the level grids and
/// packs the digits into flat codes. Stateless: equal inputs produce
/// bitwise-equal outputs.
pub fn fsq_quantize(map: &FeatureMap, levels: &FsqLevels) -> Result<QuantizeOutput> {
    if map.dim() != levels.dim() {
        return Err(Error::DimensionMismatch {
            expected: levels.dim(),
            found: map.dim(),
        });
    }
    let d = map.dim();
    let mut codes = Vec::with_capacity(map.positions());
    let mut values = Vec::with_capacity(map.data().len());
    let mut err_sum = 0.0f64;
    let mut digits = vec![0u32; d];
    for p in 0..map.positions() {
        let x = map.vector(p);
        for k in 0..d {
            let (digit, value) = quantize_scalar(x[k] as f64, levels.levels[k]);
            digits[k] = digit;
            let v32 = value as f32;
            values.push(v32);
            let diff = x[k] as f64 - v32 as f64;
            err_sum += diff * diff;
        }
        codes.push(fsq_pack(&digits, levels)?);
    }
    Ok(QuantizeOutput {
        tokens: TokenGrid::new(map.height(), map.width(), codes)?,
        code_vectors: FeatureMap::new(map.height(), map.width(), d, values)?,
        quant_error: err_sum / map.positions() as f64,
    })
}

/// Mixed-radix packing: `flat = sum_k digit_k * prod_{j<k} L_j`.
pub fn fsq_pack(digits: &[u32], levels: &FsqLevels) -> Result<u32> {
    if digits.len() != levels.dim() {
        return Err(Error::DimensionMismatch {
            expected: levels.dim(),
            found: digits.len(),
        });
    }
    let mut flat: u64 = 0;
    let mut radix: u64 = 1;
    for (k, (&digit, &level)) in digits.iter().zip(levels.levels()).enumerate() {
        if digit >= level {
            return Err(Error::DigitOutOfRange {
                channel: k,
                digit,
                levels: level,
            });
        }
        flat += digit as u64 * radix;
        radix *= level as u64;
    }
    Ok(flat as u32)
}

/// Inverse of [`fsq_pack`].
pub fn fsq_unpack(flat: u32, levels: &FsqLevels) -> Result<Vec<u32>> {
    if (flat as u64) >= levels.codebook_size() {
        return Err(Error::CodeOutOfRange {
            code: flat,
            vocab: levels.codebook_size() as usize,
        });
    }
    let mut rest = flat as u64;
    let mut digits = Vec::with_capacity(levels.dim());
    for &level in levels.levels() {
        digits.push((rest % level as u64) as u32);
        rest /= level as u64;
    }
    Ok(digits)
}

/// Materializes the implicit codebook: row `c` holds the grid values of
/// `fsq_unpack(c)`, so FSQ tokens interoperate with detokenization and
/// the metrics that expect an explicit codebook.
pub fn fsq_implied_codebook(levels: &FsqLevels) -> Result<Codebook> {
    let n = levels.codebook_size();
    let d = levels.dim();
    if n.saturating_mul(d as u64) > u32::MAX as u64 {
        return Err(Error::DimensionOverflow {
            height: n,
            width: d as u64,
            dim: 1,
        });
    }
    let mut vectors = Vec::with_capacity((n as usize) * d);
    for code in 0..n as u32 {
        let digits = fsq_unpack(code, levels)?;
        for (k, &digit) in digits.iter().enumerate() {
            vectors.push(digit_value(digit, levels.levels[k]) as f32);
        }
    }
    Codebook::new(n as usize, d, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn levels(l: &[u32]) -> FsqLevels {
        FsqLevels::new(l.to_vec()).unwrap()
    }

    #[test]
    fn three_levels_saturate_to_grid() {
        let lv = levels(&[3]);
        let map = FeatureMap::new(1, 3, 1, vec![-10.0, 0.0, 10.0]).unwrap();
        let out = fsq_quantize(&map, &lv).unwrap();
        assert_eq!(out.code_vectors.data(), &[-1.0, 0.0, 1.0]);
        assert_eq!(out.tokens.codes(), &[0, 1, 2]);
    }

    #[test]
    fn zero_maps_to_zero_for_odd_levels() {
        for l in [3u32, 5, 7, 9] {
            let (digit, value) = super::quantize_scalar(0.0, l);
            assert_eq!(digit, l / 2);
            assert_eq!(value, 0.0);
        }
    }

    #[test]
    fn default_levels_have_8000_codes() {
        let lv = levels(&[8, 8, 5, 5, 5]);
        assert_eq!(lv.codebook_size(), 8000);
    }

    #[test]
    fn pack_all_zero_digits() {
        let lv = levels(&[8, 8, 5, 5, 5]);
        assert_eq!(fsq_pack(&[0, 0, 0, 0, 0], &lv).unwrap(), 0);
    }

    #[test]
    fn pack_max_digits() {
        // Mixed-radix sum: 7 + 7*8 + 4*64 + 4*320 + 4*1600 = 7999.
        let lv = levels(&[8, 8, 5, 5, 5]);
        assert_eq!(fsq_pack(&[7, 7, 4, 4, 4], &lv).unwrap(), 7999);
    }

    #[test]
    fn pack_hand_example() {
        // levels (2,3): 1 + 2*2 = 5.
        let lv = levels(&[2, 3]);
        assert_eq!(fsq_pack(&[1, 2], &lv).unwrap(), 5);
    }

    #[test]
    fn unpack_zero_and_max() {
        let lv = levels(&[8, 8, 5, 5, 5]);
        assert_eq!(fsq_unpack(0, &lv).unwrap(), vec![0, 0, 0, 0, 0]);
        assert_eq!(fsq_unpack(7999, &lv).unwrap(), vec![7, 7, 4, 4, 4]);
    }

    #[test]
    fn pack_unpack_exhaustive_27_codes() {
        let lv = levels(&[3, 3, 3]);
        for code in 0..27u32 {
            let digits = fsq_unpack(code, &lv).unwrap();
            assert_eq!(fsq_pack(&digits, &lv).unwrap(), code);
        }
    }

    #[test]
    fn digit_out_of_range_rejected() {
        let lv = levels(&[2, 3]);
        assert!(matches!(
            fsq_pack(&[2, 0], &lv),
            Err(Error::DigitOutOfRange { channel: 0, .. })
        ));
        assert!(matches!(
            fsq_unpack(6, &lv),
            Err(Error::CodeOutOfRange { .. })
        ));
    }

    #[test]
    fn implied_codebook_three_levels() {
        let book = fsq_implied_codebook(&levels(&[3])).unwrap();
        assert_eq!(book.vectors(), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn implied_codebook_covers_sign_patterns() {
        let book = fsq_implied_codebook(&levels(&[2, 2])).unwrap();
        assert_eq!(book.size(), 4);
        assert_eq!(
            book.vectors(),
            &[-1.0, -1.0, 1.0, -1.0, -1.0, 1.0, 1.0, 1.0]
        );
    }

    #[test]
    fn implied_codebook_matches_quantizer_output() {
        let lv = levels(&[8, 8, 5, 5, 5]);
        let book = fsq_implied_codebook(&lv).unwrap();
        let map = FeatureMap::new(1, 1, 5, vec![0.3, -1.7, 0.0, 4.0, -0.2]).unwrap();
        let out = fsq_quantize(&map, &lv).unwrap();
        let code = out.tokens.codes()[0] as usize;
        for (a, b) in out.code_vectors.data().iter().zip(book.row(code)) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn level_below_two_rejected() {
        assert!(FsqLevels::new(vec![1]).is_err());
        assert!(FsqLevels::new(vec![]).is_err());
    }

    #[test]
    fn stateless_bitwise_repeatability() {
        let lv = levels(&[8, 5]);
        let map = FeatureMap::new(2, 2, 2, vec![0.1, -0.9, 2.0, -3.0, 0.7, 0.0, 1.1, -0.4])
            .unwrap();
        let a = fsq_quantize(&map, &lv).unwrap();
        let b = fsq_quantize(&map, &lv).unwrap();
        assert_eq!(a, b);
    }
}
