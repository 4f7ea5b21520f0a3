//! Scalar voxel grids with axis-aligned physical geometry, and the trilinear
//! kernel shared by resampling and descriptor sampling.
//!
//! Every grid in the crate is stored x fastest, then y, then z. Resampling
//! uses the half-pixel-center convention: output voxel `i` on an axis of
//! length `n_out` reads input coordinate `(i + 0.5) * n_in / n_out - 0.5`.
//! Coordinates outside the grid are clamped to the boundary.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Continuous (x, y, z) triple, in voxels or millimetres depending on context.
pub type Vec3 = [f64; 3];

/// Grid extent along x, y and z.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Dims(pub [usize; 3]);

impl Dims {
    pub fn new(x: usize, y: usize, z: usize) -> Self {
        Dims([x, y, z])
    }

    pub fn cube(n: usize) -> Self {
        Dims([n, n, n])
    }

    pub fn len(&self) -> usize {
        self.0.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all_positive(&self) -> bool {
        self.0.iter().all(|&d| d > 0)
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.0[0] * (y + self.0[1] * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let x = index % self.0[0];
        let rest = index / self.0[0];
        [x, rest % self.0[1], rest / self.0[1]]
    }

    /// Clamps a continuous coordinate into `[0, dim - 1]` per axis.
    pub fn clamp(&self, p: Vec3) -> Vec3 {
        let mut out = p;
        for a in 0..3 {
            out[a] = p[a].clamp(0.0, (self.0[a] - 1) as f64);
        }
        out
    }

    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|a| p[a] >= 0.0 && p[a] <= (self.0[a] - 1) as f64)
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.0[0], self.0[1], self.0[2])
    }
}

/// Spacing and origin of an axis-aligned grid, in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Geometry {
    pub spacing: Vec3,
    pub origin: Vec3,
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry {
            spacing: [1.0; 3],
            origin: [0.0; 3],
        }
    }
}

impl Geometry {
    pub fn validate(&self) -> Result<()> {
        if self.spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Geometry(format!(
                "spacing must be finite and positive, got {:?}",
                self.spacing
            )));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::Geometry(format!(
                "origin must be finite, got {:?}",
                self.origin
            )));
        }
        Ok(())
    }
}

/// Scalar volume with physical geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    dims: Dims,
    geometry: Geometry,
    data: Vec<f32>,
}

impl Volume3D {
    pub fn new(dims: Dims, geometry: Geometry, data: Vec<f32>) -> Result<Self> {
        if !dims.all_positive() {
            return Err(Error::Geometry(format!("dims must be positive, got {dims}")));
        }
        geometry.validate()?;
        if data.len() != dims.len() {
            return Err(Error::Geometry(format!(
                "data holds {} voxels but dims {dims} need {}",
                data.len(),
                dims.len()
            )));
        }
        Ok(Volume3D {
            dims,
            geometry,
            data,
        })
    }

    /// Unit spacing, zero origin.
    pub fn from_data(dims: Dims, data: Vec<f32>) -> Result<Self> {
        Self::new(dims, Geometry::default(), data)
    }

    /// Builds a volume by evaluating `f` at every integer voxel.
    pub fn from_fn(dims: Dims, geometry: Geometry, f: impl Fn(usize, usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.len());
        for z in 0..dims.0[2] {
            for y in 0..dims.0[1] {
                for x in 0..dims.0[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(dims, geometry, data)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn spacing(&self) -> Vec3 {
        self.geometry.spacing
    }

    pub fn origin(&self) -> Vec3 {
        self.geometry.origin
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.dims.index(x, y, z)]
    }
}

/// Min-max rescale to `[0, 1]`; a constant volume maps to zeros.
pub fn normalize_intensity(vol: &Volume3D) -> Volume3D {
    let (min, max) = vol
        .data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v as f64), hi.max(v as f64))
        });
    let range = max - min;
    let data = if range > 0.0 {
        vol.data
            .iter()
            .map(|&v| ((v as f64 - min) / range) as f32)
            .collect()
    } else {
        vec![0.0; vol.data.len()]
    };
    Volume3D {
        dims: vol.dims,
        geometry: vol.geometry,
        data,
    }
}

/// Lower corner, upper corner and fractional weight along one axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct AxisSample {
    pub lo: usize,
    pub hi: usize,
    pub w: f64,
}

impl AxisSample {
    /// Clamps `coord` into `[0, len - 1]` and splits it into corners.
    #[inline]
    pub fn at(coord: f64, len: usize) -> Self {
        let c = coord.clamp(0.0, (len - 1) as f64);
        let lo = (c.floor() as usize).min(len - 1);
        let hi = (lo + 1).min(len - 1);
        AxisSample {
            lo,
            hi,
            w: c - lo as f64,
        }
    }

    /// Source sample for output voxel `i` when resizing `src_len` to `dst_len`.
    #[inline]
    pub fn resize(i: usize, src_len: usize, dst_len: usize) -> Self {
        Self::at(map_half_pixel(i as f64, src_len, dst_len), src_len)
    }
}

/// Half-pixel-center mapping from a destination coordinate to the source axis.
#[inline]
pub(crate) fn map_half_pixel(coord: f64, src_len: usize, dst_len: usize) -> f64 {
    if src_len == dst_len {
        coord
    } else {
        (coord + 0.5) * src_len as f64 / dst_len as f64 - 0.5
    }
}

/// Precomputed per-axis samples for every integer voxel of a destination grid.
#[derive(Debug, Clone)]
pub(crate) struct ResizeTable {
    pub axes: [Vec<AxisSample>; 3],
}

impl ResizeTable {
    pub fn new(src: Dims, dst: Dims) -> Self {
        let axis = |a: usize| {
            (0..dst.0[a])
                .map(|i| AxisSample::resize(i, src.0[a], dst.0[a]))
                .collect::<Vec<_>>()
        };
        ResizeTable {
            axes: [axis(0), axis(1), axis(2)],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> [AxisSample; 3] {
        [self.axes[0][x], self.axes[1][y], self.axes[2][z]]
    }
}

/// Trilinear interpolation of one x-fastest grid. Accumulates in f64.
#[inline]
pub(crate) fn interp(grid: &[f32], dims: Dims, s: &[AxisSample; 3]) -> f64 {
    let [sx, sy, sz] = s;
    let v = |x: usize, y: usize, z: usize| grid[dims.index(x, y, z)] as f64;
    let lerp = |a: f64, b: f64, w: f64| a * (1.0 - w) + b * w;
    let c00 = lerp(v(sx.lo, sy.lo, sz.lo), v(sx.hi, sy.lo, sz.lo), sx.w);
    let c10 = lerp(v(sx.lo, sy.hi, sz.lo), v(sx.hi, sy.hi, sz.lo), sx.w);
    let c01 = lerp(v(sx.lo, sy.lo, sz.hi), v(sx.hi, sy.lo, sz.hi), sx.w);
    let c11 = lerp(v(sx.lo, sy.hi, sz.hi), v(sx.hi, sy.hi, sz.hi), sx.w);
    let c0 = lerp(c00, c10, sy.w);
    let c1 = lerp(c01, c11, sy.w);
    lerp(c0, c1, sz.w)
}

pub(crate) fn check_finite(p: Vec3) -> Result<()> {
    if p.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteCoord {
            x: p[0],
            y: p[1],
            z: p[2],
        })
    }
}

/// Trilinear sample at a continuous voxel coordinate, clamped to the grid.
pub fn sample_trilinear(vol: &Volume3D, coord: Vec3) -> Result<f32> {
    check_finite(coord)?;
    let s = [0, 1, 2].map(|a| AxisSample::at(coord[a], vol.dims.0[a]));
    Ok(interp(&vol.data, vol.dims, &s) as f32)
}

/// Resizes one x-fastest grid to `dst` with the half-pixel-center kernel.
pub(crate) fn resample_grid(src: &[f32], src_dims: Dims, dst_dims: Dims) -> Vec<f32> {
    if src_dims == dst_dims {
        return src.to_vec();
    }
    let table = ResizeTable::new(src_dims, dst_dims);
    let plane = dst_dims.0[0] * dst_dims.0[1];
    let mut out = vec![0.0f32; dst_dims.len()];
    out.par_chunks_mut(plane).enumerate().for_each(|(z, slab)| {
        for y in 0..dst_dims.0[1] {
            for x in 0..dst_dims.0[0] {
                slab[x + dst_dims.0[0] * y] = interp(src, src_dims, &table.get(x, y, z)) as f32;
            }
        }
    });
    out
}

/// Resamples to `new_dims`, rescaling spacing so the physical extent is kept.
pub fn resample_trilinear(vol: &Volume3D, new_dims: Dims) -> Result<Volume3D> {
    if !new_dims.all_positive() {
        return Err(Error::Geometry(format!(
            "target dims must be positive, got {new_dims}"
        )));
    }
    let mut geometry = vol.geometry;
    for a in 0..3 {
        geometry.spacing[a] *= vol.dims.0[a] as f64 / new_dims.0[a] as f64;
    }
    Ok(Volume3D {
        dims: new_dims,
        geometry,
        data: resample_grid(&vol.data, vol.dims, new_dims),
    })
}

/// `origin + p * spacing`, per axis.
pub fn voxel_to_world(p: Vec3, geometry: &Geometry) -> Vec3 {
    [0, 1, 2].map(|a| geometry.origin[a] + p[a] * geometry.spacing[a])
}

/// Which image grid a set of keypoints lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Frame {
    /// Image A, the query side.
    Source,
    /// Image B, the candidate side.
    Target,
}

/// Keypoints as continuous voxel coordinates in one image's grid.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet {
    pub points: Vec<Vec3>,
    pub frame: Frame,
}

impl KeypointSet {
    pub fn new(points: Vec<Vec3>, frame: Frame) -> Self {
        KeypointSet { points, frame }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Checks that every point is finite and lies inside `dims`.
    pub fn validate(&self, dims: Dims) -> Result<()> {
        for (i, &p) in self.points.iter().enumerate() {
            check_finite(p)?;
            if !dims.contains(p) {
                return Err(Error::Keypoints(format!(
                    "keypoint {i} at {p:?} lies outside the {dims} grid"
                )));
            }
        }
        Ok(())
    }
}
