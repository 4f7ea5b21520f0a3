//! Cosine-similarity correspondence search.
//!
//! For each query the matcher returns the integer voxel of B whose
//! descriptor has the highest cosine similarity with the query's descriptor
//! in A. Ties go to the smallest x-fastest linear index. Candidates are
//! gathered in blocks sized by a working-set budget; each block is scanned
//! in parallel and partial winners are merged with the same (score, index)
//! ordering, so results do not depend on thread count or block size.

use rayon::prelude::*;

use crate::descriptor::{DescriptorSampler, NORM_EPS};
use crate::error::{Error, Result};
use crate::volume::{check_finite, Dims, Geometry, KeypointSet, Vec3, Volume3D};

pub const DEFAULT_BUDGET_BYTES: usize = 64 << 20;

/// Candidates scanned per parallel task within a block.
const SCAN_CHUNK: usize = 1024;

/// `a . b / (|a| |b|)` with f64 accumulation; zero when either norm vanishes.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let na = norm(a);
    let nb = norm(b);
    Ok(score(dot(a, b), na, nb))
}

#[inline]
fn score(dot: f64, na: f64, nb: f64) -> f64 {
    if na < NORM_EPS || nb < NORM_EPS {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[inline]
fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

/// Four-lane f64 inner product.
#[inline]
fn dot(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] as f64 * y[k] as f64;
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += *x as f64 * *y as f64;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Axis-aligned candidate box in B's grid, inclusive bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchRegion {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl SearchRegion {
    pub fn full(dims: Dims) -> Self {
        SearchRegion {
            lo: [0; 3],
            hi: dims.0.map(|d| d - 1),
        }
    }

    /// `round(center) +/- half_widths`, clipped to `dims`. `None` if empty.
    pub fn around(center: Vec3, half_widths: [usize; 3], dims: Dims) -> Option<Self> {
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for a in 0..3 {
            let c = center[a].round();
            let r = half_widths[a] as f64;
            let max = (dims.0[a] - 1) as f64;
            let l = (c - r).max(0.0);
            let h = (c + r).min(max);
            if l > h {
                return None;
            }
            lo[a] = l as usize;
            hi[a] = h as usize;
        }
        Some(SearchRegion { lo, hi })
    }

    pub fn extent(&self) -> [usize; 3] {
        [0, 1, 2].map(|a| self.hi[a] - self.lo[a] + 1)
    }

    /// Number of candidate voxels; never zero.
    pub fn count(&self) -> usize {
        self.extent().iter().product()
    }

    /// Voxel for the `k`-th candidate in x-fastest order within the box.
    #[inline]
    fn voxel(&self, k: usize) -> [usize; 3] {
        let [ex, ey, _] = self.extent();
        [
            self.lo[0] + k % ex,
            self.lo[1] + (k / ex) % ey,
            self.lo[2] + k / (ex * ey),
        ]
    }
}

/// One query's correspondence.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct MatchResult {
    pub query: Vec3,
    pub matched: [usize; 3],
    pub score: f64,
    pub searched: usize,
}

/// A boxed query whose search region fell entirely outside B.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, thiserror::Error)]
#[error("search box around {query:?} does not intersect the target grid")]
pub struct EmptyRegion {
    pub query: Vec3,
}

#[derive(Debug, Clone, Copy)]
struct Best {
    score: f64,
    index: usize,
}

impl Best {
    const NONE: Best = Best {
        score: f64::NEG_INFINITY,
        index: usize::MAX,
    };

    #[inline]
    fn offer(&mut self, score: f64, index: usize) {
        if score > self.score || (score == self.score && index < self.index) {
            self.score = score;
            self.index = index;
        }
    }

    #[inline]
    fn merge(mut self, other: Best) -> Best {
        self.offer(other.score, other.index);
        self
    }
}

/// Correspondence search between two descriptor samplers.
#[derive(Debug, Clone)]
pub struct Matcher<'a> {
    source: &'a DescriptorSampler<'a>,
    target: &'a DescriptorSampler<'a>,
    budget_bytes: usize,
}

impl<'a> Matcher<'a> {
    pub fn new(source: &'a DescriptorSampler<'a>, target: &'a DescriptorSampler<'a>) -> Result<Self> {
        if source.len() != target.len() {
            return Err(Error::LengthMismatch {
                left: source.len(),
                right: target.len(),
            });
        }
        Ok(Matcher {
            source,
            target,
            budget_bytes: DEFAULT_BUDGET_BYTES,
        })
    }

    /// Working-set budget for one block of candidate descriptors.
    pub fn with_budget(mut self, bytes: usize) -> Self {
        self.budget_bytes = bytes;
        self
    }

    fn block_len(&self) -> usize {
        (self.budget_bytes / (4 * self.target.len()).max(1)).max(1)
    }

    fn query_descriptors(&self, queries: &KeypointSet) -> Result<Vec<(Vec<f32>, f64)>> {
        queries
            .points
            .par_iter()
            .map(|&p| {
                check_finite(p)?;
                let d = self.source.sample(p)?;
                let n = norm(&d);
                Ok((d, n))
            })
            .collect()
    }

    /// Exhaustive search over every voxel of B.
    pub fn match_global(&self, queries: &KeypointSet) -> Result<Vec<MatchResult>> {
        let qd = self.query_descriptors(queries)?;
        let dims = self.target.dims();
        let total = dims.len();
        let c = self.target.len();
        let block = self.block_len().min(total);
        let mut best = vec![Best::NONE; qd.len()];
        let mut buf = vec![0.0f32; block * c];
        let mut norms = vec![0.0f64; block];
        let mut start = 0;
        while start < total && !qd.is_empty() {
            let n = block.min(total - start);
            let cand = &mut buf[..n * c];
            self.target.gather(start, cand);
            norms[..n]
                .par_iter_mut()
                .zip(cand.par_chunks(c))
                .for_each(|(out, d)| *out = norm(d));
            let cand = &buf[..n * c];
            let norms = &norms[..n];
            best.par_iter_mut().zip(&qd).for_each(|(b, (q, qn))| {
                let local = cand
                    .par_chunks(c * SCAN_CHUNK)
                    .enumerate()
                    .map(|(chunk, ds)| {
                        let mut acc = Best::NONE;
                        for (k, d) in ds.chunks_exact(c).enumerate() {
                            let j = chunk * SCAN_CHUNK + k;
                            acc.offer(score(dot(q, d), *qn, norms[j]), start + j);
                        }
                        acc
                    })
                    .reduce(|| Best::NONE, Best::merge);
                *b = b.merge(local);
            });
            start += n;
        }
        Ok(queries
            .points
            .iter()
            .zip(best)
            .map(|(&p, b)| MatchResult {
                query: p,
                matched: dims.coords(b.index),
                score: b.score,
                searched: total,
            })
            .collect())
    }

    /// Search restricted to `round(p) +/- half_widths`, clipped to B.
    pub fn match_boxed(
        &self,
        queries: &KeypointSet,
        half_widths: [usize; 3],
    ) -> Result<Vec<std::result::Result<MatchResult, EmptyRegion>>> {
        let qd = self.query_descriptors(queries)?;
        let dims = self.target.dims();
        let c = self.target.len();
        let block = self.block_len();
        let results = queries
            .points
            .par_iter()
            .zip(&qd)
            .map(|(&p, (q, qn))| {
                let region = SearchRegion::around(p, half_widths, dims).ok_or(EmptyRegion { query: p })?;
                let total = region.count();
                let mut best = Best::NONE;
                let mut buf = vec![0.0f32; block.min(total) * c];
                let mut start = 0;
                while start < total {
                    let n = block.min(total - start);
                    for (k, d) in buf[..n * c].chunks_exact_mut(c).enumerate() {
                        self.target.sample_voxel_into(region.voxel(start + k), d);
                    }
                    for (k, d) in buf[..n * c].chunks_exact(c).enumerate() {
                        let v = region.voxel(start + k);
                        best.offer(score(dot(q, d), *qn, norm(d)), dims.index(v[0], v[1], v[2]));
                    }
                    start += n;
                }
                Ok(MatchResult {
                    query: p,
                    matched: dims.coords(best.index),
                    score: best.score,
                    searched: total,
                })
            })
            .collect();
        Ok(results)
    }

    /// Cosine similarity between the query at `p` and every voxel of B.
    pub fn similarity_map(&self, p: Vec3, geometry: Geometry) -> Result<Volume3D> {
        check_finite(p)?;
        let q = self.source.sample(p)?;
        let qn = norm(&q);
        let dims = self.target.dims();
        let c = self.target.len();
        let block = self.block_len().min(dims.len());
        let mut values = vec![0.0f32; dims.len()];
        let mut buf = vec![0.0f32; block * c];
        for (b, out) in values.chunks_mut(block).enumerate() {
            let n = out.len();
            self.target.gather(b * block, &mut buf[..n * c]);
            out.par_iter_mut()
                .zip(buf[..n * c].par_chunks(c))
                .for_each(|(o, d)| *o = score(dot(&q, d), qn, norm(d)) as f32);
        }
        Volume3D::new(dims, geometry, values)
    }
}

/// Exhaustive search; see [`Matcher::match_global`].
pub fn match_global(
    source: &DescriptorSampler<'_>,
    target: &DescriptorSampler<'_>,
    queries: &KeypointSet,
) -> Result<Vec<MatchResult>> {
    Matcher::new(source, target)?.match_global(queries)
}

/// Box-restricted search; see [`Matcher::match_boxed`].
pub fn match_boxed(
    source: &DescriptorSampler<'_>,
    target: &DescriptorSampler<'_>,
    queries: &KeypointSet,
    half_widths: [usize; 3],
) -> Result<Vec<std::result::Result<MatchResult, EmptyRegion>>> {
    Matcher::new(source, target)?.match_boxed(queries, half_widths)
}

/// Similarity volume over B's grid; see [`Matcher::similarity_map`].
pub fn similarity_map(
    source: &DescriptorSampler<'_>,
    p: Vec3,
    target: &DescriptorSampler<'_>,
    geometry: Geometry,
) -> Result<Volume3D> {
    Matcher::new(source, target)?.similarity_map(p, geometry)
}
