//! Dense 3D voxel correspondence from multi-scale feature volumes.
//!
//! Feature volumes for two images (from a pretrained denoising network via
//! the MDF container, or from the built-in synthetic source) are fused into
//! per-voxel descriptors, and each query voxel in image A is matched to the
//! voxel of image B with the highest cosine similarity, either globally or
//! inside a box around the query.
//!
//! # Modules
//! - [`volume`]: scalar grids, trilinear sampling and resampling, geometry.
//! - [`diffusion`]: noise schedules, forward noising, synthetic features.
//! - [`descriptor`]: level upsampling, per-level L2 normalization, fusion.
//! - [`matcher`]: global and boxed argmax search, similarity maps.
//! - [`metrics`]: keypoint errors, case/keypoint aggregation, sweeps.
//! - [`io`]: MDF, raw volumes, keypoints, schedule tables, reports.
//! - [`cli`]: the `voxcorr` command-line front end.

pub mod cli;
pub mod descriptor;
pub mod diffusion;
pub mod error;
pub mod io;
pub mod matcher;
pub mod metrics;
pub mod phantom;
pub mod volume;

pub use descriptor::{fuse, normalize_l2, sample_descriptor, upsample_level, DescriptorSampler, FeatureLevel, FeatureSet, FusedField};
pub use diffusion::{forward_noise, make_schedule, synth_features, LatentVolume, NoiseSchedule};
pub use error::{Error, FormatError, Result};
pub use matcher::{cosine_similarity, match_boxed, match_global, similarity_map, EmptyRegion, MatchResult, Matcher, SearchRegion};
pub use metrics::{aggregate, box_from_percentile, keypoint_errors, sweep_aggregate, BoxMode, CaseErrors, Heatmap, LevelSubset, MetricsReport};
pub use volume::{normalize_intensity, resample_trilinear, sample_trilinear, voxel_to_world, Dims, Frame, Geometry, KeypointSet, Vec3, Volume3D};
