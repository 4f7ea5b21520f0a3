mod common;

use common::{naive_resample, random_level, random_set, rng};
use proptest::prelude::*;
use rand::Rng;
use voxcorr::{fuse, normalize_l2, upsample_level, DescriptorSampler, Dims, FeatureLevel, FeatureSet};

#[test]
fn upsample_matches_per_channel_oracle() {
    let mut r = rng(21);
    let level = random_level(&mut r, 0, 2, Dims::cube(4));
    let up = upsample_level(&level, Dims::cube(8)).unwrap();
    assert_eq!(up.channels, 2);
    for c in 0..2 {
        let oracle = naive_resample(level.channel(c), [4, 4, 4], [8, 8, 8]);
        for (a, b) in up.channel(c).iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

#[test]
fn upsampled_ramp_is_linear_in_the_interior() {
    let dims = Dims::new(4, 2, 2);
    let data = (0..dims.len()).map(|i| dims.coords(i)[0] as f32 * 0.5).collect();
    let level = FeatureLevel::new(0, 1, dims, data).unwrap();
    let up = upsample_level(&level, Dims::new(16, 2, 2)).unwrap();
    // Output voxels 2..=13 map inside [0, 3] on the source axis.
    for x in 2..13 {
        let step = up.channel(0)[x + 1] - up.channel(0)[x];
        assert!((step - 0.125).abs() < 1e-5);
    }
}

#[test]
fn lazy_sampling_equals_materialized_field() {
    let mut r = rng(22);
    for trial in 0..10 {
        let target = Dims([0, 1, 2].map(|_| r.random_range(4..=16)));
        let fs = random_set(&mut r, target, &[4, 2, 1], &[3, 2, 4]);
        let ids: Vec<u16> = match trial % 3 {
            0 => vec![0, 1, 2],
            1 => vec![0, 2],
            _ => vec![1],
        };
        let field = fuse(&fs, &ids, u64::MAX).unwrap();
        let ds = DescriptorSampler::new(&fs, &ids).unwrap();
        let mut worst = 0.0f32;
        for i in 0..target.len() {
            let [x, y, z] = target.coords(i);
            let lazy = ds.sample([x as f64, y as f64, z as f64]).unwrap();
            for (a, b) in lazy.iter().zip(field.descriptor_at(x, y, z)) {
                worst = worst.max((a - b).abs());
            }
        }
        assert!(worst < 1e-5, "trial {trial}: {worst}");
    }
}

#[test]
fn level_scaling_leaves_descriptors_unchanged() {
    let mut r = rng(23);
    let fs = random_set(&mut r, Dims::new(9, 7, 5), &[3, 1], &[4, 3]);
    let scaled = fs.with_level_scaled(0, 10.0).with_level_scaled(1, 0.03);
    let a = DescriptorSampler::new(&fs, &[0, 1]).unwrap();
    let b = DescriptorSampler::new(&scaled, &[0, 1]).unwrap();
    for _ in 0..200 {
        let p = [r.random_range(0.0..8.0), r.random_range(0.0..6.0), r.random_range(0.0..4.0)];
        let (da, db) = (a.sample(p).unwrap(), b.sample(p).unwrap());
        for (x, y) in da.iter().zip(&db) {
            assert!((x - y).abs() < 1e-6);
        }
    }
}

#[test]
fn segments_are_unit_norm() {
    let mut r = rng(24);
    let fs = random_set(&mut r, Dims::cube(6), &[2, 1, 1], &[5, 3, 2]);
    let ds = DescriptorSampler::new(&fs, &[0, 1, 2]).unwrap();
    for _ in 0..200 {
        let p = [0, 1, 2].map(|_| r.random_range(0.0..5.0));
        let d = ds.sample(p).unwrap();
        let mut total = 0.0f64;
        for seg in [&d[..5], &d[5..8], &d[8..]] {
            let n: f64 = seg.iter().map(|&v| (v as f64).powi(2)).sum::<f64>();
            assert!(n == 0.0 || (n.sqrt() - 1.0).abs() < 1e-5);
            total += n;
        }
        assert!(total.sqrt() <= 3f64.sqrt() + 1e-5);
    }
}

#[test]
fn zero_level_yields_zero_segment() {
    let dims = Dims::cube(3);
    let zero = FeatureLevel::new(0, 2, dims, vec![0.0; 54]).unwrap();
    let ones = FeatureLevel::new(1, 1, dims, vec![2.0; 27]).unwrap();
    let fs = FeatureSet::new(0, dims, vec![zero, ones]).unwrap();
    let ds = DescriptorSampler::new(&fs, &[0, 1]).unwrap();
    assert_eq!(ds.sample([1.0, 1.0, 1.0]).unwrap(), vec![0.0, 0.0, 1.0]);
}

proptest! {
    #[test]
    fn normalize_is_scale_invariant(v in prop::collection::vec(-10.0f32..10.0, 1..12), s in 1e-3f32..1e3) {
        let mut a = v.clone();
        let mut b: Vec<f32> = v.iter().map(|x| x * s).collect();
        normalize_l2(&mut a);
        normalize_l2(&mut b);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-6);
        }
    }
}
