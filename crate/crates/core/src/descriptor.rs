//! Multi-scale descriptor construction.
//!
//! Each selected level is trilinearly upsampled to the image grid,
//! L2-normalized per voxel, and concatenated in ascending level id order.
//! [`DescriptorSampler`] evaluates that field lazily at any coordinate;
//! [`fuse`] materializes it and is memory-capped.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::{check_finite, interp, map_half_pixel, resample_grid, AxisSample, Dims, ResizeTable, Vec3};

/// Norms at or below this are treated as zero.
pub const NORM_EPS: f64 = 1e-12;

/// One level's activation tensor, channel-major then z, y, x.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLevel {
    pub level_id: u16,
    pub channels: usize,
    pub dims: Dims,
    pub data: Vec<f32>,
}

impl FeatureLevel {
    pub fn new(level_id: u16, channels: usize, dims: Dims, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || !dims.all_positive() {
            return Err(Error::Features(format!(
                "level {level_id}: channels and dims must be positive (C={channels}, dims={dims})"
            )));
        }
        if data.len() != channels * dims.len() {
            return Err(Error::Features(format!(
                "level {level_id}: data holds {} values, expected {channels}x{dims}",
                data.len()
            )));
        }
        Ok(FeatureLevel {
            level_id,
            channels,
            dims,
            data,
        })
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.dims.len();
        &self.data[c * n..(c + 1) * n]
    }

    /// Multiplies every activation by `s`.
    pub fn scaled(&self, s: f32) -> FeatureLevel {
        FeatureLevel {
            data: self.data.iter().map(|v| v * s).collect(),
            ..self.clone()
        }
    }
}

/// The levels extracted for one image at one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub timestep: u16,
    pub target_dims: Dims,
    levels: Vec<FeatureLevel>,
}

impl FeatureSet {
    /// Levels must be non-empty with strictly increasing ids.
    pub fn new(timestep: u16, target_dims: Dims, levels: Vec<FeatureLevel>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Features("a feature set needs at least one level".into()));
        }
        if !target_dims.all_positive() {
            return Err(Error::Features(format!(
                "target dims must be positive, got {target_dims}"
            )));
        }
        for pair in levels.windows(2) {
            if pair[1].level_id <= pair[0].level_id {
                return Err(Error::Features(format!(
                    "level ids must be strictly increasing, got {} then {}",
                    pair[0].level_id, pair[1].level_id
                )));
            }
        }
        Ok(FeatureSet {
            timestep,
            target_dims,
            levels,
        })
    }

    pub fn levels(&self) -> &[FeatureLevel] {
        &self.levels
    }

    pub fn level(&self, id: u16) -> Option<&FeatureLevel> {
        self.levels.iter().find(|l| l.level_id == id)
    }

    pub fn level_ids(&self) -> Vec<u16> {
        self.levels.iter().map(|l| l.level_id).collect()
    }

    pub fn with_target_dims(mut self, dims: Dims) -> Result<Self> {
        if !dims.all_positive() {
            return Err(Error::Features(format!("target dims must be positive, got {dims}")));
        }
        self.target_dims = dims;
        Ok(self)
    }

    /// Returns a copy with level `id` multiplied by `s`.
    pub fn with_level_scaled(&self, id: u16, s: f32) -> FeatureSet {
        FeatureSet {
            levels: self
                .levels
                .iter()
                .map(|l| if l.level_id == id { l.scaled(s) } else { l.clone() })
                .collect(),
            ..self.clone()
        }
    }
}

/// Resizes every channel of `level` to `target` with the shared kernel.
pub fn upsample_level(level: &FeatureLevel, target: Dims) -> Result<FeatureLevel> {
    if !target.all_positive() {
        return Err(Error::Features(format!("target dims must be positive, got {target}")));
    }
    let mut data = Vec::with_capacity(level.channels * target.len());
    for c in 0..level.channels {
        data.extend(resample_grid(level.channel(c), level.dims, target));
    }
    FeatureLevel::new(level.level_id, level.channels, target, data)
}

/// Scales `v` to unit L2 norm in place; near-zero vectors become zero.
pub fn normalize_l2(v: &mut [f32]) {
    let norm = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    if norm > NORM_EPS {
        for x in v.iter_mut() {
            *x = (*x as f64 / norm) as f32;
        }
    } else {
        v.fill(0.0);
    }
}

/// Dense descriptor field, channel-major then z, y, x.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedField {
    pub channels: usize,
    pub dims: Dims,
    pub data: Vec<f32>,
}

impl FusedField {
    pub fn descriptor_at(&self, x: usize, y: usize, z: usize) -> Vec<f32> {
        let n = self.dims.len();
        let i = self.dims.index(x, y, z);
        (0..self.channels).map(|c| self.data[c * n + i]).collect()
    }
}

fn select_levels<'a>(fs: &'a FeatureSet, level_ids: &[u16]) -> Result<Vec<&'a FeatureLevel>> {
    if level_ids.is_empty() {
        return Err(Error::Features("level selection is empty".into()));
    }
    let mut ids = level_ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    ids.into_iter()
        .map(|id| fs.level(id).ok_or(Error::UnknownLevel(id)))
        .collect()
}

/// Materializes the fused descriptor field at the target resolution.
///
/// Fails with [`Error::MemoryBudget`] when the field would exceed
/// `budget_bytes`.
pub fn fuse(fs: &FeatureSet, level_ids: &[u16], budget_bytes: u64) -> Result<FusedField> {
    let levels = select_levels(fs, level_ids)?;
    let dims = fs.target_dims;
    let channels: usize = levels.iter().map(|l| l.channels).sum();
    let required = (channels as u64)
        .saturating_mul(dims.len() as u64)
        .saturating_mul(4);
    if required > budget_bytes {
        return Err(Error::MemoryBudget {
            required,
            budget: budget_bytes,
        });
    }
    let n = dims.len();
    let mut data = Vec::with_capacity(channels * n);
    for level in levels {
        let up = upsample_level(level, dims)?;
        let mut seg = vec![0.0f32; up.channels];
        let mut block = up.data;
        for i in 0..n {
            for c in 0..up.channels {
                seg[c] = block[c * n + i];
            }
            normalize_l2(&mut seg);
            for c in 0..up.channels {
                block[c * n + i] = seg[c];
            }
        }
        data.extend(block);
    }
    Ok(FusedField {
        channels,
        dims,
        data,
    })
}

/// Lazy view of the fused descriptor field over a [`FeatureSet`].
#[derive(Debug, Clone)]
pub struct DescriptorSampler<'a> {
    features: &'a FeatureSet,
    levels: Vec<&'a FeatureLevel>,
    tables: Vec<ResizeTable>,
    len: usize,
}

impl<'a> DescriptorSampler<'a> {
    pub fn new(features: &'a FeatureSet, level_ids: &[u16]) -> Result<Self> {
        let levels = select_levels(features, level_ids)?;
        let len = levels.iter().map(|l| l.channels).sum();
        let tables = levels
            .iter()
            .map(|l| ResizeTable::new(l.dims, features.target_dims))
            .collect();
        Ok(DescriptorSampler {
            features,
            levels,
            tables,
            len,
        })
    }

    /// Total descriptor length.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dims(&self) -> Dims {
        self.features.target_dims
    }

    pub fn level_ids(&self) -> Vec<u16> {
        self.levels.iter().map(|l| l.level_id).collect()
    }

    pub fn features(&self) -> &'a FeatureSet {
        self.features
    }

    /// Descriptor at a continuous coordinate of the target grid.
    pub fn sample(&self, coord: Vec3) -> Result<Vec<f32>> {
        check_finite(coord)?;
        let mut out = vec![0.0; self.len];
        self.sample_into(coord, &mut out);
        Ok(out)
    }

    /// Like [`sample`](Self::sample) for a coordinate already known finite.
    pub(crate) fn sample_into(&self, coord: Vec3, out: &mut [f32]) {
        let target = self.features.target_dims;
        let p = target.clamp(coord);
        let mut offset = 0;
        for level in &self.levels {
            let s = [0, 1, 2].map(|a| {
                AxisSample::at(map_half_pixel(p[a], level.dims.0[a], target.0[a]), level.dims.0[a])
            });
            let seg = &mut out[offset..offset + level.channels];
            interp_level(level, &s, seg);
            offset += level.channels;
        }
    }

    /// Descriptor at an integer voxel of the target grid, via cached tables.
    ///
    /// Matches `sample` at the same voxel bit for bit.
    pub(crate) fn sample_voxel_into(&self, voxel: [usize; 3], out: &mut [f32]) {
        let mut offset = 0;
        for (level, table) in self.levels.iter().zip(&self.tables) {
            let s = table.get(voxel[0], voxel[1], voxel[2]);
            let seg = &mut out[offset..offset + level.channels];
            interp_level(level, &s, seg);
            offset += level.channels;
        }
    }

    /// Descriptors for a run of linear voxel indices, written back to back.
    pub(crate) fn gather(&self, start: usize, out: &mut [f32]) {
        let dims = self.dims();
        out.par_chunks_mut(self.len)
            .enumerate()
            .for_each(|(k, desc)| self.sample_voxel_into(dims.coords(start + k), desc));
    }
}

#[inline]
fn interp_level(level: &FeatureLevel, s: &[AxisSample; 3], seg: &mut [f32]) {
    for (c, v) in seg.iter_mut().enumerate() {
        *v = interp(level.channel(c), level.dims, s) as f32;
    }
    normalize_l2(seg);
}

/// Convenience wrapper for one-off lookups.
pub fn sample_descriptor(ds: &DescriptorSampler<'_>, coord: Vec3) -> Result<Vec<f32>> {
    ds.sample(coord)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_level(rng: &mut ChaCha8Rng, id: u16, c: usize, dims: Dims) -> FeatureLevel {
        let data = (0..c * dims.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        FeatureLevel::new(id, c, dims, data).unwrap()
    }

    #[test]
    fn normalize_examples() {
        let mut v = [3.0f32, 4.0];
        normalize_l2(&mut v);
        assert!((v[0] - 0.6).abs() < 1e-7 && (v[1] - 0.8).abs() < 1e-7);
        let mut z = [0.0f32; 3];
        normalize_l2(&mut z);
        assert_eq!(z, [0.0; 3]);
    }

    #[test]
    fn upsample_identity_keeps_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = random_level(&mut rng, 0, 2, Dims::new(3, 4, 2));
        assert_eq!(upsample_level(&l, l.dims).unwrap(), l);
    }

    #[test]
    fn fuse_single_unit_level_is_identity() {
        let dims = Dims::new(2, 2, 1);
        // Two channels, each voxel a unit vector.
        let data = vec![1.0, 0.0, 0.6, 0.8, 0.0, 1.0, 0.8, 0.6];
        let l = FeatureLevel::new(0, 2, dims, data.clone()).unwrap();
        let fs = FeatureSet::new(0, dims, vec![l]).unwrap();
        let f = fuse(&fs, &[0], u64::MAX).unwrap();
        assert_eq!(f.data, data);
    }

    #[test]
    fn fuse_orders_segments_by_level_id() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dims = Dims::cube(3);
        let fs = FeatureSet::new(
            0,
            dims,
            vec![random_level(&mut rng, 0, 2, dims), random_level(&mut rng, 1, 3, dims)],
        )
        .unwrap();
        let a = fuse(&fs, &[1, 0], u64::MAX).unwrap();
        assert_eq!(a.channels, 5);
        let only0 = fuse(&fs, &[0], u64::MAX).unwrap();
        let n = dims.len();
        assert_eq!(&a.data[..2 * n], &only0.data[..]);
        let ds = DescriptorSampler::new(&fs, &[1, 0]).unwrap();
        assert_eq!(ds.level_ids(), vec![0, 1]);
    }

    #[test]
    fn fuse_respects_memory_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dims = Dims::cube(4);
        let fs = FeatureSet::new(0, dims, vec![random_level(&mut rng, 0, 2, dims)]).unwrap();
        let err = fuse(&fs, &[0], 2 * 64 * 4 - 1).unwrap_err();
        assert!(matches!(err, Error::MemoryBudget { required: 512, .. }));
        assert!(fuse(&fs, &[0], 512).is_ok());
    }

    #[test]
    fn unknown_or_empty_selection_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dims = Dims::cube(2);
        let fs = FeatureSet::new(0, dims, vec![random_level(&mut rng, 0, 1, dims)]).unwrap();
        assert!(matches!(DescriptorSampler::new(&fs, &[3]), Err(Error::UnknownLevel(3))));
        assert!(DescriptorSampler::new(&fs, &[]).is_err());
    }

    #[test]
    fn feature_set_requires_increasing_ids() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = Dims::cube(2);
        let a = random_level(&mut rng, 1, 1, d);
        let b = random_level(&mut rng, 1, 1, d);
        assert!(FeatureSet::new(0, d, vec![a, b]).is_err());
        assert!(FeatureSet::new(0, d, vec![]).is_err());
    }

    #[test]
    fn constant_features_give_constant_descriptor() {
        let dims = Dims::cube(3);
        let l = FeatureLevel::new(0, 2, Dims::cube(2), vec![1.0; 8].into_iter().chain(vec![2.0; 8]).collect())
            .unwrap();
        let fs = FeatureSet::new(0, dims, vec![l]).unwrap();
        let ds = DescriptorSampler::new(&fs, &[0]).unwrap();
        let a = ds.sample([0.0, 0.0, 0.0]).unwrap();
        let b = ds.sample([1.3, 2.0, 0.7]).unwrap();
        assert_eq!(a, b);
        assert!(ds.sample([0.0, f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn voxel_fast_path_matches_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let dims = Dims::new(7, 5, 6);
        let fs = FeatureSet::new(
            0,
            dims,
            vec![
                random_level(&mut rng, 0, 3, Dims::new(2, 2, 2)),
                random_level(&mut rng, 2, 4, Dims::new(4, 3, 3)),
            ],
        )
        .unwrap();
        let ds = DescriptorSampler::new(&fs, &[0, 2]).unwrap();
        let mut buf = vec![0.0; ds.len()];
        for i in 0..dims.len() {
            let v = dims.coords(i);
            ds.sample_voxel_into(v, &mut buf);
            let lazy = ds.sample(v.map(|c| c as f64)).unwrap();
            assert_eq!(buf, lazy);
        }
    }
}
