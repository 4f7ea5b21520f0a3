mod common;

use voxcorr::phantom::blob_volume;
use voxcorr::{forward_noise, synth_features, DescriptorSampler, Dims, Geometry, LatentVolume, NoiseSchedule, Vec3};

fn moments(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

#[test]
fn zero_latent_at_half_alpha_has_half_variance() {
    let sched = NoiseSchedule::from_alphas(vec![1.0, 0.5]).unwrap();
    let z0 = LatentVolume::new(4, Dims::cube(16), vec![0.0; 4 * 4096]).unwrap();
    let zt = forward_noise(&z0, &sched, 2, 5).unwrap();
    let (_, var) = moments(zt.data.iter().map(|&v| v as f64));
    assert!((var - 0.5).abs() / 0.5 < 0.05, "variance {var}");
}

#[test]
fn noised_mean_tracks_scaled_signal() {
    let sched = NoiseSchedule::from_alphas(vec![0.9, 0.3]).unwrap();
    let z0 = LatentVolume::new(1, Dims::new(100, 100, 2), vec![2.0; 20_000]).unwrap();
    for t in [1, 2] {
        let alpha = sched.alpha(t).unwrap();
        let zt = forward_noise(&z0, &sched, t, 77).unwrap();
        let (mean, var) = moments(zt.data.iter().map(|&v| v as f64));
        let want = alpha.sqrt() * 2.0;
        assert!((mean - want).abs() / want < 0.05);
        assert!((var - (1.0 - alpha)).abs() / (1.0 - alpha) < 0.05);
    }
}

/// Mean cosine between A's and B's descriptors at the same voxel, for the
/// same volume noised independently.
fn self_similarity(t: usize, seed: u64) -> f64 {
    let vol = blob_volume(Dims::cube(16), Geometry::default(), 20, seed).unwrap();
    let sched = NoiseSchedule::default();
    let a = synth_features(&vol, &[2, 1], &[8, 8], t, &sched, seed * 2).unwrap();
    let b = synth_features(&vol, &[2, 1], &[8, 8], t, &sched, seed * 2 + 1).unwrap();
    let da = DescriptorSampler::new(&a, &[0, 1]).unwrap();
    let db = DescriptorSampler::new(&b, &[0, 1]).unwrap();
    let dims = Dims::cube(16);
    let mut total = 0.0;
    for i in (0..dims.len()).step_by(7) {
        let p: Vec3 = dims.coords(i).map(|c| c as f64);
        total += voxcorr::cosine_similarity(&da.sample(p).unwrap(), &db.sample(p).unwrap()).unwrap();
    }
    total / dims.len().div_ceil(7) as f64
}

#[test]
fn self_similarity_degrades_with_timestep() {
    let ts = [1, 100, 400, 900];
    let means: Vec<f64> = ts
        .iter()
        .map(|&t| (0..5).map(|s| self_similarity(t, s)).sum::<f64>() / 5.0)
        .collect();
    for w in means.windows(2) {
        assert!(w[1] <= w[0] + 1e-3, "{means:?}");
    }
    assert!(means[0] > 0.99);
    assert!(means[3] < 0.2);
}

#[test]
fn level_dims_follow_the_scale_ladder() {
    let vol = blob_volume(Dims::cube(128), Geometry::default(), 8, 1).unwrap();
    let fs = synth_features(&vol, &[16, 8, 4, 4], &[2, 2, 2, 2], 20, &NoiseSchedule::default(), 3).unwrap();
    let dims: Vec<Dims> = fs.levels().iter().map(|l| l.dims).collect();
    assert_eq!(dims, [8, 16, 32, 32].map(Dims::cube));
    assert_eq!(fs.target_dims, Dims::cube(128));
    assert_eq!(fs.timestep, 20);
}

#[test]
fn synthesis_is_deterministic_and_seed_sensitive() {
    let vol = blob_volume(Dims::new(12, 10, 8), Geometry::default(), 6, 2).unwrap();
    let sched = NoiseSchedule::default();
    let run = |seed| synth_features(&vol, &[2, 1], &[4, 4], 50, &sched, seed).unwrap();
    assert_eq!(run(9).levels(), run(9).levels());
    assert_ne!(run(9).levels(), run(10).levels());
}
