//! Forward noising of latent tensors and a synthetic multi-scale feature
//! source that stands in for a pretrained denoising network.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::descriptor::{FeatureLevel, FeatureSet};
use crate::error::{Error, Result};
use crate::volume::{resample_grid, Dims, Volume3D};

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_BETA_MIN: f64 = 1e-4;
pub const DEFAULT_BETA_MAX: f64 = 2e-2;

/// Cumulative signal fractions, indexed by timestep `1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alphas: Vec<f64>,
}

impl NoiseSchedule {
    /// Accepts a table of cumulative alphas; entry `i` is timestep `i + 1`.
    pub fn from_alphas(alphas: Vec<f64>) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::Schedule("schedule has no timesteps".into()));
        }
        for (i, &a) in alphas.iter().enumerate() {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::Schedule(format!("alpha at t={} is {a}, outside (0, 1]", i + 1)));
            }
        }
        if let Some(i) = alphas.windows(2).position(|w| w[1] > w[0]) {
            return Err(Error::Schedule(format!(
                "alphas must be non-increasing; t={} is {} but t={} is {}",
                i + 1,
                alphas[i],
                i + 2,
                alphas[i + 1]
            )));
        }
        Ok(NoiseSchedule { alphas })
    }

    /// Number of timesteps `T`.
    pub fn steps(&self) -> usize {
        self.alphas.len()
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        if t == 0 || t > self.alphas.len() {
            return Err(Error::TimestepOutOfRange {
                t,
                max: self.alphas.len(),
            });
        }
        Ok(self.alphas[t - 1])
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        make_schedule(DEFAULT_STEPS, DEFAULT_BETA_MIN, DEFAULT_BETA_MAX)
            .expect("default schedule parameters are valid")
    }
}

/// Linear-beta schedule: `alpha_t = prod_{s<=t} (1 - beta_s)`.
pub fn make_schedule(steps: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::Schedule("T must be at least 1".into()));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(Error::Schedule(format!(
            "need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
        )));
    }
    let mut alphas = Vec::with_capacity(steps);
    let mut acc = 1.0f64;
    for s in 0..steps {
        let beta = if steps == 1 {
            beta_min
        } else {
            beta_min + (beta_max - beta_min) * s as f64 / (steps - 1) as f64
        };
        acc *= 1.0 - beta;
        alphas.push(acc);
    }
    NoiseSchedule::from_alphas(alphas)
}

/// Latent tensor, channel-major then z, y, x.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVolume {
    pub channels: usize,
    pub dims: Dims,
    pub data: Vec<f32>,
}

impl LatentVolume {
    pub fn new(channels: usize, dims: Dims, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * dims.len() {
            return Err(Error::Features(format!(
                "latent holds {} values, expected {channels}x{dims}",
                data.len()
            )));
        }
        Ok(LatentVolume { channels, dims, data })
    }
}

/// `z_t = sqrt(alpha_t) z_0 + sqrt(1 - alpha_t) eps`, eps ~ N(0, I).
///
/// Noise is drawn in element order from ChaCha8 seeded with `seed`.
pub fn forward_noise(z0: &LatentVolume, sched: &NoiseSchedule, t: usize, seed: u64) -> Result<LatentVolume> {
    let alpha = sched.alpha(t)?;
    Ok(LatentVolume {
        channels: z0.channels,
        dims: z0.dims,
        data: noise_values(&z0.data, alpha, seed),
    })
}

fn noise_values(z0: &[f32], alpha: f64, seed: u64) -> Vec<f32> {
    if alpha == 1.0 {
        return z0.to_vec();
    }
    let signal = alpha.sqrt();
    let sigma = (1.0 - alpha).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    z0.iter()
        .map(|&v| {
            let eps: f64 = StandardNormal.sample(&mut rng);
            (signal * v as f64 + sigma * eps) as f32
        })
        .collect()
}

/// One pass of the [1, 2, 1] / 4 kernel along each axis, edges clamped.
fn binomial_pass(grid: &mut [f32], dims: Dims) {
    let mut tmp = vec![0.0f32; grid.len()];
    for axis in 0..3 {
        let n = dims.0[axis];
        if n == 1 {
            continue;
        }
        let stride = match axis {
            0 => 1,
            1 => dims.0[0],
            _ => dims.0[0] * dims.0[1],
        };
        for (i, out) in tmp.iter_mut().enumerate() {
            let pos = dims.coords(i)[axis];
            let prev = if pos == 0 { i } else { i - stride };
            let next = if pos + 1 == n { i } else { i + stride };
            *out = 0.25 * grid[prev] + 0.5 * grid[i] + 0.25 * grid[next];
        }
        grid.copy_from_slice(&tmp);
    }
}

/// Smoothing passes cycled across intensity channels.
const SMOOTHING_PASSES: [usize; 4] = [0, 1, 3, 6];

/// Probe offsets (in units of the channel's smoothing radius) cycled across
/// intensity channels; together they form a small multi-scale patch.
const PROBE_OFFSETS: [[i64; 3]; 7] = [
    [0, 0, 0],
    [1, 0, 0],
    [0, 1, 0],
    [0, 0, 1],
    [-1, 0, 0],
    [0, -1, 0],
    [0, 0, -1],
];

/// Amplitude of the positional channels relative to unit-variance intensity channels.
const POSITION_WEIGHT: f32 = 0.1;

/// Returns the standardized intensity or position channel `c` of a level.
fn synth_channel(base: &[f32], dims: Dims, smoothed: &[Vec<f32>], c: usize, n_position: usize, n_channels: usize) -> Vec<f32> {
    let n_intensity = n_channels - n_position;
    if c >= n_intensity {
        let k = c - n_intensity;
        let axis = k % 3;
        let freq = 1.0 + (k / 3) as f64;
        let len = dims.0[axis] as f64;
        return (0..base.len())
            .map(|i| {
                let u = (dims.coords(i)[axis] as f64 + 0.5) / len;
                POSITION_WEIGHT * (std::f64::consts::PI * freq * u).cos() as f32
            })
            .collect();
    }
    // Coprime cycle lengths: the first 28 intensity channels are all distinct.
    let width = c % SMOOTHING_PASSES.len();
    let probe = PROBE_OFFSETS[c % PROBE_OFFSETS.len()];
    let reach = 1 + SMOOTHING_PASSES[width] as i64 / 2;
    let src = &smoothed[width];
    let mut out: Vec<f32> = (0..base.len())
        .map(|i| {
            let v = dims.coords(i);
            let q: [usize; 3] = [0, 1, 2].map(|a| {
                (v[a] as i64 + probe[a] * reach).clamp(0, dims.0[a] as i64 - 1) as usize
            });
            src[dims.index(q[0], q[1], q[2])]
        })
        .collect();
    standardize(&mut out);
    out
}

fn standardize(v: &mut [f32]) {
    let n = v.len() as f64;
    let mean = v.iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = v.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    for x in v.iter_mut() {
        *x = if sd > 1e-12 {
            ((*x as f64 - mean) / sd) as f32
        } else {
            0.0
        };
    }
}

/// Mixes a level index into a user seed.
fn level_seed(seed: u64, level: usize) -> u64 {
    seed ^ (level as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Synthesizes a [`FeatureSet`] from an intensity volume.
///
/// For each level the volume is downsampled by `level_scales[l]`
/// (dims rounded up) and `channels_per_level[l]` standardized channels are
/// built from multi-width smoothed intensity probed at small offsets, plus
/// weak low-frequency positional channels (one per eight). The level is then
/// noised at timestep `t` with a per-level seed.
pub fn synth_features(
    vol: &Volume3D,
    level_scales: &[usize],
    channels_per_level: &[usize],
    t: usize,
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<FeatureSet> {
    if level_scales.len() != channels_per_level.len() {
        return Err(Error::Features(format!(
            "{} level scales but {} channel counts",
            level_scales.len(),
            channels_per_level.len()
        )));
    }
    if level_scales.is_empty() {
        return Err(Error::Features("no levels requested".into()));
    }
    if level_scales.contains(&0) || channels_per_level.contains(&0) {
        return Err(Error::Features("scales and channel counts must be at least 1".into()));
    }
    let timestep = u16::try_from(t).map_err(|_| Error::TimestepOutOfRange {
        t,
        max: sched.steps(),
    })?;
    let alpha = sched.alpha(t)?;
    let src_dims = vol.dims();

    let mut levels = Vec::with_capacity(level_scales.len());
    for (l, (&scale, &channels)) in level_scales.iter().zip(channels_per_level).enumerate() {
        let dims = Dims(src_dims.0.map(|d| d.div_ceil(scale)));
        let base = resample_grid(vol.data(), src_dims, dims);
        let max_passes = *SMOOTHING_PASSES.iter().max().unwrap();
        let mut smoothed = Vec::with_capacity(SMOOTHING_PASSES.len());
        let mut current = base.clone();
        for pass in 0..=max_passes {
            if SMOOTHING_PASSES.contains(&pass) {
                smoothed.push(current.clone());
            }
            binomial_pass(&mut current, dims);
        }
        let n_position = channels / 8;
        let mut clean = Vec::with_capacity(channels * dims.len());
        for c in 0..channels {
            clean.extend(synth_channel(&base, dims, &smoothed, c, n_position, channels));
        }
        let noised = noise_values(&clean, alpha, level_seed(seed, l));
        levels.push(FeatureLevel::new(l as u16, channels, dims, noised)?);
    }
    FeatureSet::new(timestep, src_dims, levels)
}
