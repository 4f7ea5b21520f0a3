//! Smooth random blob volumes and translated copies with known keypoint
//! correspondences, for end-to-end checks without real scans.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::volume::{normalize_intensity, sample_trilinear, Dims, Geometry, Vec3, Volume3D};

/// Sum of `blobs` Gaussians with random centers, widths and signed
/// amplitudes, rescaled to `[0, 1]`.
pub fn blob_volume(dims: Dims, geometry: Geometry, blobs: usize, seed: u64) -> Result<Volume3D> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params: Vec<(Vec3, f64, f64)> = (0..blobs)
        .map(|_| {
            let c = [0, 1, 2].map(|a| rng.random_range(0.0..dims.0[a] as f64));
            let sigma = rng.random_range(1.5..4.0);
            let amp = rng.random_range(0.4..1.0) * if rng.random_bool(0.3) { -1.0 } else { 1.0 };
            (c, sigma, amp)
        })
        .collect();
    let vol = Volume3D::from_fn(dims, geometry, |x, y, z| {
        let p = [x as f64, y as f64, z as f64];
        params
            .iter()
            .map(|(c, s, a)| {
                let r2: f64 = (0..3).map(|k| (p[k] - c[k]).powi(2)).sum();
                a * (-r2 / (2.0 * s * s)).exp()
            })
            .sum::<f64>() as f32
    })?;
    Ok(normalize_intensity(&vol))
}

/// `out(x) = vol(x - shift)`, sampled trilinearly with edge clamping.
pub fn translate(vol: &Volume3D, shift: Vec3) -> Result<Volume3D> {
    let dims = vol.dims();
    let mut data = Vec::with_capacity(dims.len());
    for i in 0..dims.len() {
        let v = dims.coords(i);
        let p = [0, 1, 2].map(|a| v[a] as f64 - shift[a]);
        data.push(sample_trilinear(vol, p)?);
    }
    Volume3D::new(dims, vol.geometry(), data)
}

/// `n` distinct integer keypoints at least `margin` voxels from every face,
/// in both the source grid and (after adding `shift`) the target grid.
/// Returns `(source, target)`.
pub fn interior_keypoints(dims: Dims, margin: usize, shift: Vec3, n: usize, seed: u64) -> Result<(Vec<Vec3>, Vec<Vec3>)> {
    let mut ranges = [(0i64, 0i64); 3];
    for a in 0..3 {
        let lo = margin as f64 + shift[a].min(0.0).abs();
        let hi = dims.0[a] as f64 - 1.0 - margin as f64 - shift[a].max(0.0);
        let (lo, hi) = (lo.ceil() as i64, hi.floor() as i64);
        if lo > hi {
            return Err(Error::Config(format!(
                "no interior voxels on axis {a} with margin {margin} and shift {}",
                shift[a]
            )));
        }
        ranges[a] = (lo, hi);
    }
    let capacity: i64 = ranges.iter().map(|(lo, hi)| hi - lo + 1).product();
    if (n as i64) > capacity {
        return Err(Error::Config(format!("only {capacity} interior voxels for {n} keypoints")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut src: Vec<Vec3> = Vec::with_capacity(n);
    while src.len() < n {
        let p = ranges.map(|(lo, hi)| rng.random_range(lo..=hi) as f64);
        if !src.contains(&p) {
            src.push(p);
        }
    }
    let dst = src.iter().map(|p| [0, 1, 2].map(|a| p[a] + shift[a])).collect();
    Ok((src, dst))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_volume_is_unit_range_and_seeded() {
        let a = blob_volume(Dims::cube(12), Geometry::default(), 6, 3).unwrap();
        let b = blob_volume(Dims::cube(12), Geometry::default(), 6, 3).unwrap();
        assert_eq!(a, b);
        let (lo, hi) = a.data().iter().fold((1.0f32, 0.0f32), |(l, h), &v| (l.min(v), h.max(v)));
        assert_eq!((lo, hi), (0.0, 1.0));
    }

    #[test]
    fn integer_translation_moves_voxels() {
        let a = blob_volume(Dims::cube(10), Geometry::default(), 4, 1).unwrap();
        let b = translate(&a, [3.0, 0.0, 0.0]).unwrap();
        assert_eq!(b.get(7, 2, 5), a.get(4, 2, 5));
        assert_eq!(b.get(1, 2, 5), a.get(0, 2, 5));
    }

    #[test]
    fn keypoints_stay_inside_both_grids() {
        let dims = Dims::cube(16);
        let (s, t) = interior_keypoints(dims, 4, [3.0, 0.0, -1.0], 20, 5).unwrap();
        assert_eq!(s.len(), 20);
        for (p, q) in s.iter().zip(&t) {
            for a in 0..3 {
                assert!(p[a] >= 4.0 && p[a] <= 11.0);
                assert!(q[a] >= 4.0 && q[a] <= 11.0);
            }
        }
        assert!(interior_keypoints(Dims::cube(6), 3, [0.0; 3], 1, 0).is_err());
    }
}
