//! Bit-exact binary serialization for feature maps, codebooks, and token
//! grids.
//!
//! All three formats share the same layout: a four-byte magic, a `u32`
//! version (currently 1), two or three `u32` extent fields, then the
//! payload as little-endian `f32` or `u32` scalars. Round-trips are
//! bitwise identities, including `-0.0` and signed-zero payloads.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{Codebook, FeatureMap, TokenGrid, MAX_ELEMENTS};

pub const FMAP_MAGIC: [u8; 4] = *b"FMAP";
pub const CBOK_MAGIC: [u8; 4] = *b"CBOK";
pub const TOKG_MAGIC: [u8; 4] = *b"TOKG";
pub const FORMAT_VERSION: u32 = 1;

struct Reader<'a> {
    buf: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, offset: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let available = self.buf.len() - self.offset;
        if available < n {
            return Err(Error::Truncated {
                offset: self.offset,
                needed: n,
                available,
            });
        }
        let slice = &self.buf[self.offset..self.offset + n];
        self.offset += n;
        Ok(slice)
    }

    fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let offset = self.offset;
        let found = self.take(4)?;
        if found != expected {
            return Err(Error::BadMagic {
                offset,
                expected,
                found: found.try_into().unwrap(),
            });
        }
        Ok(())
    }

    fn version(&mut self) -> Result<()> {
        let offset = self.offset;
        let v = self.u32()?;
        if v != FORMAT_VERSION {
            return Err(Error::BadVersion { offset, found: v });
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32_payload(&mut self, count: usize) -> Result<Vec<f32>> {
        let start = self.offset;
        let bytes = self.take(count * 4)?;
        let mut out = Vec::with_capacity(count);
        for (i, chunk) in bytes.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    offset: start + i * 4,
                });
            }
            out.push(v);
        }
        Ok(out)
    }

    fn u32_payload(&mut self, count: usize) -> Result<Vec<u32>> {
        let bytes = self.take(count * 4)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.offset != self.buf.len() {
            return Err(Error::Truncated {
                offset: self.offset,
                needed: 0,
                available: self.buf.len() - self.offset,
            });
        }
        Ok(())
    }
}

fn element_count(a: u32, b: u32, c: u32) -> Result<usize> {
    (a as u64)
        .checked_mul(b as u64)
        .and_then(|n| n.checked_mul(c as u64))
        .filter(|&n| n <= MAX_ELEMENTS)
        .map(|n| n as usize)
        .ok_or(Error::DimensionOverflow {
            height: a as u64,
            width: b as u64,
            dim: c as u64,
        })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn header(magic: [u8; 4], extents: &[u32]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for &e in extents {
        out.extend_from_slice(&e.to_le_bytes());
    }
    out
}

pub fn decode_feature_map(bytes: &[u8]) -> Result<FeatureMap> {
    let mut r = Reader::new(bytes);
    r.magic(FMAP_MAGIC)?;
    r.version()?;
    let h = r.u32()?;
    let w = r.u32()?;
    let d = r.u32()?;
    let count = element_count(h, w, d)?;
    let data = r.f32_payload(count)?;
    r.finish()?;
    FeatureMap::new(h as usize, w as usize, d as usize, data)
}

pub fn encode_feature_map(map: &FeatureMap) -> Vec<u8> {
    let mut out = header(
        FMAP_MAGIC,
        &[map.height() as u32, map.width() as u32, map.dim() as u32],
    );
    for v in map.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_feature_map(path: impl AsRef<Path>) -> Result<FeatureMap> {
    decode_feature_map(&read_file(path.as_ref())?)
}

pub fn write_feature_map(map: &FeatureMap, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_feature_map(map))
}

pub fn decode_codebook(bytes: &[u8]) -> Result<Codebook> {
    let mut r = Reader::new(bytes);
    r.magic(CBOK_MAGIC)?;
    r.version()?;
    let n = r.u32()?;
    let d = r.u32()?;
    let count = element_count(n, d, 1)?;
    let vectors = r.f32_payload(count)?;
    r.finish()?;
    Codebook::new(n as usize, d as usize, vectors)
}

pub fn encode_codebook(book: &Codebook) -> Vec<u8> {
    let mut out = header(CBOK_MAGIC, &[book.size() as u32, book.dim() as u32]);
    for v in book.vectors() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_codebook(path: impl AsRef<Path>) -> Result<Codebook> {
    decode_codebook(&read_file(path.as_ref())?)
}

pub fn write_codebook(book: &Codebook, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_codebook(book))
}

pub fn decode_token_grid(bytes: &[u8]) -> Result<TokenGrid> {
    let mut r = Reader::new(bytes);
    r.magic(TOKG_MAGIC)?;
    r.version()?;
    let h = r.u32()?;
    let w = r.u32()?;
    let count = element_count(h, w, 1)?;
    let codes = r.u32_payload(count)?;
    r.finish()?;
    TokenGrid::new(h as usize, w as usize, codes)
}

pub fn encode_token_grid(grid: &TokenGrid) -> Vec<u8> {
    let mut out = header(TOKG_MAGIC, &[grid.height() as u32, grid.width() as u32]);
    for c in grid.codes() {
        out.extend_from_slice(&c.to_le_bytes());
    }
    out
}

pub fn read_token_grid(path: impl AsRef<Path>) -> Result<TokenGrid> {
    decode_token_grid(&read_file(path.as_ref())?)
}

pub fn write_token_grid(grid: &TokenGrid, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_token_grid(grid))
}
