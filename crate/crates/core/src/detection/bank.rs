use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{FeatureMap, Modality};

pub const BANK_MAGIC: &[u8; 8] = b"D3FBANK1";

/// Reference patch vectors from normal samples, stored in single precision.
///
/// `coreset_indices[m]` is the position of vector `m` in the concatenated
/// patch list the bank was built from (maps in order, patches row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    dim: usize,
    vectors: Vec<f32>,
    coreset_indices: Vec<u64>,
    modality: Modality,
}

/// Nearest and second-nearest bank distances of one query vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbors {
    pub nearest: f64,
    pub index: usize,
    /// `None` when fewer than two bank vectors were eligible.
    pub second: Option<f64>,
}

/// Number of centres for a ratio, tolerant of representation error.
pub fn coreset_size(ratio: f64, total: usize) -> usize {
    let x = ratio * total as f64;
    ((x - 1e-9).ceil().max(1.0) as usize).min(total)
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Greedy farthest-first selection of `count` rows of `data` (`n × dim`),
/// starting from a seed-chosen row. Lowest index wins ties.
pub fn greedy_coreset(data: &[f64], dim: usize, count: usize, seed: u64) -> Vec<usize> {
    let n = data.len() / dim;
    if n == 0 || count == 0 {
        return Vec::new();
    }
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let first = ChaCha8Rng::seed_from_u64(seed).random_range(0..n);
    let mut chosen = vec![first];
    let mut taken = vec![false; n];
    taken[first] = true;
    let mut best: Vec<f64> = (0..n).map(|i| sq_dist(row(i), row(first))).collect();
    while chosen.len() < count.min(n) {
        // duplicates of chosen rows sit at distance 0 and are still eligible
        let mut arg = usize::MAX;
        let mut far = f64::NEG_INFINITY;
        for (i, &d) in best.iter().enumerate() {
            if !taken[i] && d > far {
                far = d;
                arg = i;
            }
        }
        taken[arg] = true;
        chosen.push(arg);
        let c = row(arg);
        for (i, b) in best.iter_mut().enumerate() {
            let d = sq_dist(row(i), c);
            if d < *b {
                *b = d;
            }
        }
    }
    chosen
}

impl MemoryBank {
    /// Builds a bank from explicit vectors without subsampling.
    pub fn from_vectors(dim: usize, vectors: Vec<f32>, coreset_indices: Vec<u64>, modality: Modality) -> Result<Self> {
        if dim == 0 || vectors.is_empty() {
            return Err(Error::EmptyInput("memory bank needs at least one vector".into()));
        }
        if !vectors.len().is_multiple_of(dim) || vectors.len() / dim != coreset_indices.len() {
            return Err(Error::Shape(format!(
                "{} values and {} indices do not form a bank of width {dim}",
                vectors.len(),
                coreset_indices.len()
            )));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("memory bank vectors must be finite".into()));
        }
        let mut seen = coreset_indices.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Format("coreset indices must be unique".into()));
        }
        Ok(MemoryBank {
            dim,
            vectors,
            coreset_indices,
            modality,
        })
    }

    /// Coreset bank over every patch of `maps`, keeping `⌈ratio · total⌉`
    /// vectors chosen farthest-first.
    pub fn build(maps: &[&FeatureMap], ratio: f64, seed: u64) -> Result<Self> {
        if !(ratio > 0.0 && ratio <= 1.0) {
            return Err(Error::Argument(format!(
                "coreset ratio must lie in (0, 1], got {ratio}"
            )));
        }
        let first = maps
            .first()
            .ok_or_else(|| Error::EmptyInput("no feature maps for the memory bank".into()))?;
        let dim = first.channels();
        let modality = first.modality();
        let mut data = Vec::new();
        for m in maps {
            if m.channels() != dim {
                return Err(Error::Shape(format!(
                    "feature maps have {} and {dim} channels",
                    m.channels()
                )));
            }
            for v in m.patch_vectors() {
                // select on the values the bank will actually store
                data.extend(v.iter().map(|&x| x as f32 as f64));
            }
        }
        let total = data.len() / dim;
        if total == 0 {
            return Err(Error::EmptyInput("feature maps contain no patches".into()));
        }
        let count = coreset_size(ratio, total);
        let order: Vec<usize> = if ratio >= 1.0 {
            (0..total).collect()
        } else {
            greedy_coreset(&data, dim, count, seed)
        };
        let mut vectors = Vec::with_capacity(count * dim);
        for &i in &order {
            vectors.extend(data[i * dim..(i + 1) * dim].iter().map(|&x| x as f32));
        }
        let idx = order.iter().map(|&i| i as u64).collect();
        Self::from_vectors(dim, vectors, idx, modality)
    }

    pub fn len(&self) -> usize {
        self.coreset_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coreset_indices.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn coreset_indices(&self) -> &[u64] {
        &self.coreset_indices
    }

    pub fn vector(&self, m: usize) -> &[f32] {
        &self.vectors[m * self.dim..(m + 1) * self.dim]
    }

    /// Exact nearest and second-nearest Euclidean distances. Bank vectors for
    /// which `exclude(coreset_index)` holds are skipped; `None` if none remain.
    pub fn neighbors_where(&self, query: &[f64], exclude: impl Fn(u64) -> bool) -> Result<Option<Neighbors>> {
        if query.len() != self.dim {
            return Err(Error::Shape(format!(
                "query has {} channels, bank has {}",
                query.len(),
                self.dim
            )));
        }
        let q: Vec<f64> = query.iter().map(|&x| x as f32 as f64).collect();
        let mut d1 = f64::INFINITY;
        let mut d2 = f64::INFINITY;
        let mut i1 = usize::MAX;
        for m in 0..self.len() {
            if exclude(self.coreset_indices[m]) {
                continue;
            }
            let d: f64 = self
                .vector(m)
                .iter()
                .zip(&q)
                .map(|(&a, &b)| (a as f64 - b) * (a as f64 - b))
                .sum();
            if d < d1 {
                d2 = d1;
                d1 = d;
                i1 = m;
            } else if d < d2 {
                d2 = d;
            }
        }
        if i1 == usize::MAX {
            return Ok(None);
        }
        Ok(Some(Neighbors {
            nearest: d1.sqrt(),
            index: i1,
            second: d2.is_finite().then(|| d2.sqrt()),
        }))
    }

    pub fn neighbors(&self, query: &[f64]) -> Result<Neighbors> {
        Ok(self.neighbors_where(query, |_| false)?.expect("bank is never empty"))
    }

    pub fn encode(&self) -> Vec<u8> {
        let tag = self.modality.as_str().as_bytes();
        let mut out = Vec::with_capacity(16 + self.vectors.len() * 4 + self.len() * 8 + 4 + tag.len());
        out.extend_from_slice(BANK_MAGIC);
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.vectors {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for i in &self.coreset_indices {
            out.extend_from_slice(&i.to_le_bytes());
        }
        out.extend_from_slice(&(tag.len() as u32).to_le_bytes());
        out.extend_from_slice(tag);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let short = || Error::Format("memory bank file is truncated".into());
        if bytes.len() < 16 || &bytes[..8] != BANK_MAGIC {
            return Err(Error::Format("not a memory bank file".into()));
        }
        let u32_at = |o: usize| -> Result<usize> {
            let b = bytes.get(o..o + 4).ok_or_else(short)?;
            Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
        };
        let m = u32_at(8)?;
        let c = u32_at(12)?;
        let mut o = 16;
        let nv = m.checked_mul(c).ok_or_else(short)?;
        let vb = bytes.get(o..o + nv * 4).ok_or_else(short)?;
        let vectors = vb
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        o += nv * 4;
        let ib = bytes.get(o..o + m * 8).ok_or_else(short)?;
        let idx = ib
            .chunks_exact(8)
            .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        o += m * 8;
        let tl = u32_at(o)?;
        o += 4;
        let tag = bytes.get(o..o + tl).ok_or_else(short)?;
        if o + tl != bytes.len() {
            return Err(Error::Format("trailing bytes after memory bank".into()));
        }
        let tag = std::str::from_utf8(tag).map_err(|_| Error::Format("modality tag is not UTF-8".into()))?;
        Self::from_vectors(c, vectors, idx, tag.parse()?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
