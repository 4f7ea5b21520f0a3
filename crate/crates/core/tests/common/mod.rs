//! Reference implementations used as test oracles. These are deliberately
//! naive and share no code with the library's interpolation or search paths.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxcorr::{DescriptorSampler, Dims, FeatureLevel, FeatureSet, KeypointSet, Vec3};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Clamp each axis, then sum the eight corner values with product weights.
pub fn naive_trilinear(grid: &[f32], dims: [usize; 3], p: Vec3) -> f64 {
    let mut c = [0.0f64; 3];
    for a in 0..3 {
        c[a] = p[a].max(0.0).min((dims[a] - 1) as f64);
    }
    let base = [c[0].floor() as usize, c[1].floor() as usize, c[2].floor() as usize];
    let frac = [c[0] - base[0] as f64, c[1] - base[1] as f64, c[2] - base[2] as f64];
    let mut total = 0.0;
    for corner in 0..8 {
        let mut weight = 1.0;
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let upper = (corner >> a) & 1 == 1;
            idx[a] = if upper { (base[a] + 1).min(dims[a] - 1) } else { base[a] };
            weight *= if upper { frac[a] } else { 1.0 - frac[a] };
        }
        total += weight * grid[idx[0] + dims[0] * (idx[1] + dims[1] * idx[2])] as f64;
    }
    total
}

/// Resize with an explicit triple loop and the half-pixel-center mapping.
pub fn naive_resample(grid: &[f32], src: [usize; 3], dst: [usize; 3]) -> Vec<f32> {
    let mut out = Vec::with_capacity(dst.iter().product());
    for z in 0..dst[2] {
        for y in 0..dst[1] {
            for x in 0..dst[0] {
                let mut p = [0.0; 3];
                for (a, &i) in [x, y, z].iter().enumerate() {
                    p[a] = (i as f64 + 0.5) * src[a] as f64 / dst[a] as f64 - 0.5;
                }
                out.push(naive_trilinear(grid, src, p) as f32);
            }
        }
    }
    out
}

/// Sequential f64 cosine similarity.
pub fn naive_cosine(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] as f64 * b[i] as f64;
        na += a[i] as f64 * a[i] as f64;
        nb += b[i] as f64 * b[i] as f64;
    }
    if na.sqrt() < 1e-12 || nb.sqrt() < 1e-12 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// Winner of an exhaustive raster scan over `[lo, hi]` (inclusive) of B:
/// `(voxel, score)`, first maximum wins.
pub fn naive_argmax(a: &DescriptorSampler, b: &DescriptorSampler, query: Vec3, lo: [usize; 3], hi: [usize; 3]) -> ([usize; 3], f64) {
    let q = a.sample(query).unwrap();
    let mut best = ([0usize; 3], f64::NEG_INFINITY);
    for z in lo[2]..=hi[2] {
        for y in lo[1]..=hi[1] {
            for x in lo[0]..=hi[0] {
                let d = b.sample([x as f64, y as f64, z as f64]).unwrap();
                let s = naive_cosine(&q, &d);
                if s > best.1 {
                    best = ([x, y, z], s);
                }
            }
        }
    }
    best
}

pub fn naive_global(a: &DescriptorSampler, b: &DescriptorSampler, query: Vec3) -> ([usize; 3], f64) {
    let d = b.dims().0;
    naive_argmax(a, b, query, [0; 3], [d[0] - 1, d[1] - 1, d[2] - 1])
}

pub fn random_level(rng: &mut ChaCha8Rng, id: u16, channels: usize, dims: Dims) -> FeatureLevel {
    let data = (0..channels * dims.len()).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    FeatureLevel::new(id, channels, dims, data).unwrap()
}

/// Random set with levels at `target / scale` (rounded up), ids `0..`.
pub fn random_set(rng: &mut ChaCha8Rng, target: Dims, scales: &[usize], channels: &[usize]) -> FeatureSet {
    let levels = scales
        .iter()
        .zip(channels)
        .enumerate()
        .map(|(i, (&s, &c))| random_level(rng, i as u16, c, Dims(target.0.map(|d| d.div_ceil(s)))))
        .collect();
    FeatureSet::new(0, target, levels).unwrap()
}

pub fn random_points(rng: &mut ChaCha8Rng, dims: Dims, n: usize, integer: bool) -> KeypointSet {
    let points = (0..n)
        .map(|_| {
            [0, 1, 2].map(|a| {
                let v = rng.random_range(0.0..=(dims.0[a] - 1) as f64);
                if integer {
                    v.round()
                } else {
                    v
                }
            })
        })
        .collect();
    KeypointSet::new(points, voxcorr::Frame::Source)
}
