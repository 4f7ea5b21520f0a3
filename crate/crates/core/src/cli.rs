//! Command-line front end.
//!
//! Every subcommand writes a JSON provenance record holding its resolved
//! configuration. Execution-only settings (thread count) are left out so
//! that artifacts are byte-identical across thread counts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::descriptor::{DescriptorSampler, FeatureSet};
use crate::diffusion::{forward_noise, synth_features, NoiseSchedule};
use crate::error::{Error, Result};
use crate::io;
use crate::matcher::{EmptyRegion, MatchResult, Matcher};
use crate::metrics::{aggregate, box_from_percentile, keypoint_errors, sweep_aggregate, BoxMode, CaseErrors, LevelSubset, MetricsReport};
use crate::phantom;
use crate::volume::{normalize_intensity, Dims, Frame, Geometry, KeypointSet, Vec3, Volume3D};

pub const THREADS_ENV: &str = "VOXCORR_THREADS";

/// Comma-separated list, e.g. `16,8,4,4`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct CsvList<T>(pub Vec<T>);

impl<T: FromStr> FromStr for CsvList<T> {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.split(',')
            .map(|p| p.trim().parse::<T>().map_err(|_| format!("invalid list element {p:?}")))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(CsvList)
    }
}

/// Exactly three comma-separated values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Triple<T>(pub [T; 3]);

impl<T: FromStr + Copy> FromStr for Triple<T> {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let v = CsvList::<T>::from_str(s)?.0;
        match v.as_slice() {
            [a, b, c] => Ok(Triple([*a, *b, *c])),
            _ => Err(format!("expected three comma-separated values, got {s:?}")),
        }
    }
}

/// Level subsets such as `0,01,012,0123`; use `+` between ids when any id
/// has more than one digit (`1+12`).
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct LevelSets(pub Vec<Vec<u16>>);

impl FromStr for LevelSets {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.split(',')
            .map(|item| {
                let item = item.trim();
                let ids: std::result::Result<Vec<u16>, _> = if item.contains('+') {
                    item.split('+').map(|p| p.parse::<u16>()).collect()
                } else {
                    item.chars().map(|c| c.to_string().parse::<u16>()).collect()
                };
                match ids {
                    Ok(v) if !v.is_empty() => Ok(v),
                    _ => Err(format!("invalid level set {item:?}")),
                }
            })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(LevelSets)
    }
}

#[derive(Debug, Parser)]
#[command(name = "voxcorr", version, about = "Dense 3D voxel correspondence from multi-scale feature volumes")]
pub struct Cli {
    #[command(flatten)]
    pub exec: ExecArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct ExecArgs {
    /// Worker threads (falls back to VOXCORR_THREADS, then all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Volume -> MDF features via the synthetic feature source.
    Synth(SynthArgs),
    /// Forward-noise a latent (single-level MDF) at timestep t.
    Noise(NoiseArgs),
    /// Match keypoints from A into B.
    Match(MatchArgs),
    /// Evaluate predicted against ground-truth keypoints.
    Eval(EvalArgs),
    /// Grid over timesteps x level subsets -> heatmap CSV.
    Sweep(SweepArgs),
    /// Similarity volume for one query.
    Simmap(SimmapArgs),
    /// Generate a blob volume pair with known correspondences.
    Phantom(PhantomArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ScheduleArgs {
    /// Schedule table (one cumulative alpha per line); default is linear beta.
    #[arg(long)]
    pub schedule: Option<PathBuf>,
}

impl ScheduleArgs {
    fn load(&self) -> Result<NoiseSchedule> {
        match &self.schedule {
            Some(p) => io::read_schedule(p),
            None => Ok(NoiseSchedule::default()),
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    /// Raw little-endian f32 volume.
    #[arg(long)]
    pub volume: PathBuf,
    /// Geometry sidecar (default: `<volume>.txt`).
    #[arg(long)]
    pub sidecar: Option<PathBuf>,
    #[arg(long, default_value = "16,8,4,4")]
    pub scales: CsvList<usize>,
    #[arg(long, default_value = "16,16,16,16")]
    pub channels: CsvList<usize>,
    #[arg(long, default_value_t = 20)]
    pub t: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub schedule: ScheduleArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Skip min-max intensity normalization.
    #[arg(long)]
    pub no_normalize: bool,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct NoiseArgs {
    #[arg(long)]
    pub latent: PathBuf,
    #[arg(long)]
    pub t: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub schedule: ScheduleArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BoxArgs {
    /// Fixed box half-widths in voxels.
    #[arg(long = "box", value_name = "RX,RY,RZ")]
    pub half_widths: Option<Triple<usize>>,
    /// Size the box from a displacement file at this percentile.
    #[arg(long)]
    pub box_pct: Option<f64>,
    /// Displacement file (`dx,dy,dz` per line, voxels) for --box-pct.
    #[arg(long)]
    pub disp: Option<PathBuf>,
    /// Use the percentile of displacement lengths on every axis.
    #[arg(long)]
    pub box_radius: bool,
}

impl BoxArgs {
    fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.half_widths.is_some() && (self.box_pct.is_some() || self.disp.is_some()) {
            p.push("--box cannot be combined with --box-pct/--disp".into());
        }
        if self.box_pct.is_some() != self.disp.is_some() {
            p.push("--box-pct and --disp must be given together".into());
        }
        if let Some(pct) = self.box_pct {
            if !(pct > 0.0 && pct <= 100.0) {
                p.push(format!("--box-pct must be in (0, 100], got {pct}"));
            }
        }
        if self.box_radius && self.box_pct.is_none() {
            p.push("--box-radius requires --box-pct".into());
        }
        if let Some(d) = &self.disp {
            require_file(d, "--disp", &mut p);
        }
        p
    }

    fn resolve(&self) -> Result<Option<[usize; 3]>> {
        if let Some(Triple(hw)) = self.half_widths {
            return Ok(Some(hw));
        }
        match (self.box_pct, &self.disp) {
            (Some(pct), Some(path)) => {
                let mode = if self.box_radius { BoxMode::Radius } else { BoxMode::PerAxis };
                Ok(Some(box_from_percentile(&io::read_displacements(path)?, pct, mode)?))
            }
            _ => Ok(None),
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MatchArgs {
    #[arg(long)]
    pub feats_a: PathBuf,
    #[arg(long)]
    pub feats_b: PathBuf,
    /// Query keypoints in A's grid.
    #[arg(long)]
    pub keypoints: PathBuf,
    #[arg(long, default_value = "0,1,2,3")]
    pub levels: CsvList<u16>,
    #[command(flatten)]
    pub search: BoxArgs,
    /// Image grid of A and B (default: finest level of each MDF).
    #[arg(long, value_name = "X,Y,Z")]
    pub target_dims: Option<Triple<usize>>,
    /// Ground truth in B's grid; adds a metrics report.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Voxel spacing of B in mm, used with --gt.
    #[arg(long, default_value = "1,1,1")]
    pub spacing: Triple<f64>,
    /// Candidate block working set in MiB.
    #[arg(long, default_value_t = 64)]
    pub mem_budget: usize,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    /// Prediction file, one per case; pairs with --gt in order.
    #[arg(long, required = true)]
    pub pred: Vec<PathBuf>,
    #[arg(long, required = true)]
    pub gt: Vec<PathBuf>,
    #[arg(long, default_value = "1,1,1")]
    pub spacing: Triple<f64>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SweepArgs {
    /// Raw volume A (features synthesized per timestep).
    #[arg(long)]
    pub volume_a: Option<PathBuf>,
    #[arg(long)]
    pub volume_b: Option<PathBuf>,
    /// MDF path template for A containing `{t}`, instead of volumes.
    #[arg(long)]
    pub feats_a: Option<String>,
    #[arg(long)]
    pub feats_b: Option<String>,
    #[arg(long)]
    pub keypoints: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, default_value = "1,20,500")]
    pub timesteps: CsvList<usize>,
    #[arg(long, default_value = "0,01,012,0123")]
    pub level_sets: LevelSets,
    #[arg(long, default_value = "16,8,4,4")]
    pub scales: CsvList<usize>,
    #[arg(long, default_value = "16,16,16,16")]
    pub channels: CsvList<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub schedule: ScheduleArgs,
    /// Seed for A; B uses seed + 1.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub search: BoxArgs,
    /// Voxel spacing used with MDF templates; volumes carry their own.
    #[arg(long, default_value = "1,1,1")]
    pub spacing: Triple<f64>,
    #[arg(long, value_name = "X,Y,Z")]
    pub target_dims: Option<Triple<usize>>,
    #[arg(long, default_value_t = 64)]
    pub mem_budget: usize,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimmapArgs {
    #[arg(long)]
    pub feats_a: PathBuf,
    #[arg(long)]
    pub feats_b: PathBuf,
    #[arg(long, value_name = "X,Y,Z")]
    pub query: Triple<f64>,
    #[arg(long, default_value = "0,1,2,3")]
    pub levels: CsvList<u16>,
    #[arg(long, value_name = "X,Y,Z")]
    pub target_dims: Option<Triple<usize>>,
    #[arg(long, default_value = "1,1,1")]
    pub spacing: Triple<f64>,
    #[arg(long, default_value = "0,0,0")]
    pub origin: Triple<f64>,
    #[arg(long, default_value_t = 64)]
    pub mem_budget: usize,
    /// Raw output volume; the sidecar goes to `<out>.txt`.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PhantomArgs {
    #[arg(long, default_value = "32,32,32")]
    pub dims: Triple<usize>,
    #[arg(long, default_value = "3,0,0")]
    pub shift: Triple<f64>,
    #[arg(long, default_value_t = 48)]
    pub blobs: usize,
    #[arg(long, default_value_t = 20)]
    pub keypoints: usize,
    #[arg(long, default_value_t = 6)]
    pub margin: usize,
    #[arg(long, default_value = "1,1,1")]
    pub spacing: Triple<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

/// Failure of a CLI run, rendered as one JSON line on stderr.
#[derive(Debug)]
pub enum CliError {
    Config(Vec<String>),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Run(_) => 1,
        }
    }

    pub fn to_json_line(&self) -> String {
        let v = match self {
            CliError::Config(problems) => serde_json::json!({"error": "config", "problems": problems}),
            CliError::Run(e) => serde_json::json!({"error": e.kind(), "message": e.to_string()}),
        };
        v.to_string()
    }
}

fn require_file(p: &Path, flag: &str, problems: &mut Vec<String>) {
    if !p.is_file() {
        problems.push(format!("{flag}: {} does not exist", p.display()));
    }
}

fn check(problems: Vec<String>) -> std::result::Result<(), CliError> {
    if problems.is_empty() {
        Ok(())
    } else {
        Err(CliError::Config(problems))
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn provenance_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Resolves `--threads`, then `VOXCORR_THREADS`; `None` means all cores.
pub fn resolve_threads(flag: Option<usize>) -> std::result::Result<Option<usize>, CliError> {
    if let Some(n) = flag {
        return if n == 0 {
            Err(CliError::Config(vec!["--threads must be at least 1".into()]))
        } else {
            Ok(Some(n))
        };
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Config(vec![format!("{THREADS_ENV}={v:?} is not a positive integer")])),
        },
        Err(_) => Ok(None),
    }
}

/// Parses arguments and runs the selected subcommand in a sized pool.
pub fn run(cli: Cli) -> std::result::Result<(), CliError> {
    let threads = resolve_threads(cli.exec.threads)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Config(vec![format!("cannot start thread pool: {e}")]))?;
    pool.install(|| match cli.command {
        Command::Synth(a) => synth(&a),
        Command::Noise(a) => noise(&a),
        Command::Match(a) => run_match(&a),
        Command::Eval(a) => eval(&a),
        Command::Sweep(a) => sweep(&a),
        Command::Simmap(a) => simmap(&a),
        Command::Phantom(a) => run_phantom(&a),
    })
}

fn load_volume(path: &Path, sidecar: Option<&Path>) -> Result<Volume3D> {
    let side = sidecar.map(Path::to_path_buf).unwrap_or_else(|| io::default_sidecar(path));
    io::read_raw_volume(path, side)
}

fn synth(a: &SynthArgs) -> std::result::Result<(), CliError> {
    let mut p = Vec::new();
    require_file(&a.volume, "--volume", &mut p);
    if a.scales.0.len() != a.channels.0.len() {
        p.push(format!(
            "--scales has {} entries but --channels has {}",
            a.scales.0.len(),
            a.channels.0.len()
        ));
    }
    if a.scales.0.contains(&0) || a.channels.0.contains(&0) {
        p.push("--scales and --channels entries must be at least 1".into());
    }
    if let Some(s) = &a.schedule.schedule {
        require_file(s, "--schedule", &mut p);
    }
    check(p)?;
    let sched = a.schedule.load()?;
    let mut vol = load_volume(&a.volume, a.sidecar.as_deref())?;
    if !a.no_normalize {
        vol = normalize_intensity(&vol);
    }
    let fs = synth_features(&vol, &a.scales.0, &a.channels.0, a.t, &sched, a.seed)?;
    io::write_mdf(&fs, &a.out)?;
    let levels: Vec<_> = fs
        .levels()
        .iter()
        .map(|l| serde_json::json!({"level_id": l.level_id, "channels": l.channels, "dims": l.dims}))
        .collect();
    io::write_report(
        "synth",
        a,
        &serde_json::json!({"image_dims": fs.target_dims, "levels": levels}),
        provenance_path(&a.out),
    )?;
    Ok(())
}

fn noise(a: &NoiseArgs) -> std::result::Result<(), CliError> {
    let mut p = Vec::new();
    require_file(&a.latent, "--latent", &mut p);
    if let Some(s) = &a.schedule.schedule {
        require_file(s, "--schedule", &mut p);
    }
    if u16::try_from(a.t).is_err() {
        p.push(format!("--t {} does not fit the container's 16-bit timestep", a.t));
    }
    check(p)?;
    let sched = a.schedule.load()?;
    let z0 = io::read_latent(&a.latent)?;
    let zt = forward_noise(&z0, &sched, a.t, a.seed)?;
    io::write_latent(&zt, a.t as u16, &a.out)?;
    io::write_report(
        "noise",
        a,
        &serde_json::json!({"alpha": sched.alpha(a.t)?}),
        provenance_path(&a.out),
    )?;
    Ok(())
}

fn load_features(path: &Path, target: Option<Triple<usize>>) -> Result<FeatureSet> {
    let fs = io::read_mdf(path)?;
    match target {
        Some(Triple(d)) => fs.with_target_dims(Dims(d)),
        None => Ok(fs),
    }
}

fn level_problems(fs: &FeatureSet, levels: &[u16], name: &str, p: &mut Vec<String>) {
    let available = fs.level_ids();
    for id in levels {
        if !available.contains(id) {
            p.push(format!("level {id} not in {name} (available: {available:?})"));
        }
    }
}

#[derive(Debug, Serialize)]
struct MatchRecord {
    query: Vec3,
    #[serde(skip_serializing_if = "Option::is_none")]
    matched: Option<[usize; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    searched: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

impl From<&std::result::Result<MatchResult, EmptyRegion>> for MatchRecord {
    fn from(r: &std::result::Result<MatchResult, EmptyRegion>) -> Self {
        match r {
            Ok(m) => MatchRecord {
                query: m.query,
                matched: Some(m.matched),
                score: Some(m.score),
                searched: Some(m.searched),
                error: None,
            },
            Err(e) => MatchRecord {
                query: e.query,
                matched: None,
                score: None,
                searched: None,
                error: Some(e.to_string()),
            },
        }
    }
}

/// Global search when `half_widths` is `None`, boxed otherwise.
fn do_match(
    a: &FeatureSet,
    b: &FeatureSet,
    levels: &[u16],
    queries: &KeypointSet,
    half_widths: Option<[usize; 3]>,
    budget_mib: usize,
) -> Result<Vec<std::result::Result<MatchResult, EmptyRegion>>> {
    let da = DescriptorSampler::new(a, levels)?;
    let db = DescriptorSampler::new(b, levels)?;
    let m = Matcher::new(&da, &db)?.with_budget(budget_mib.max(1) << 20);
    match half_widths {
        None => Ok(m.match_global(queries)?.into_iter().map(Ok).collect()),
        Some(hw) => m.match_boxed(queries, hw),
    }
}

fn predicted_points(results: &[std::result::Result<MatchResult, EmptyRegion>]) -> Vec<Vec3> {
    results
        .iter()
        .map(|r| match r {
            Ok(m) => m.matched.map(|c| c as f64),
            Err(_) => [f64::NAN; 3],
        })
        .collect()
}

fn evaluate_case(case_id: &str, pred: &[Vec3], gt: &KeypointSet, spacing: Vec3) -> Result<CaseErrors> {
    if pred.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::Keypoints(format!("case {case_id}: some queries have no match")));
    }
    let pred = KeypointSet::new(pred.to_vec(), Frame::Target);
    CaseErrors::new(case_id, keypoint_errors(&pred, gt, spacing)?)
}

fn run_match(a: &MatchArgs) -> std::result::Result<(), CliError> {
    let mut p = Vec::new();
    require_file(&a.feats_a, "--feats-a", &mut p);
    require_file(&a.feats_b, "--feats-b", &mut p);
    require_file(&a.keypoints, "--keypoints", &mut p);
    if let Some(g) = &a.gt {
        require_file(g, "--gt", &mut p);
    }
    if a.levels.0.is_empty() {
        p.push("--levels is empty".into());
    }
    if a.mem_budget == 0 {
        p.push("--mem-budget must be at least 1 MiB".into());
    }
    p.extend(a.search.problems());
    check(p)?;

    let fa = load_features(&a.feats_a, a.target_dims)?;
    let fb = load_features(&a.feats_b, a.target_dims)?;
    let mut p = Vec::new();
    level_problems(&fa, &a.levels.0, "--feats-a", &mut p);
    level_problems(&fb, &a.levels.0, "--feats-b", &mut p);
    let queries = io::read_keypoints(&a.keypoints, Frame::Source)?;
    if let Err(e) = queries.validate(fa.target_dims) {
        p.push(format!("--keypoints: {e}"));
    }
    check(p)?;

    let half_widths = a.search.resolve()?;
    let results = do_match(&fa, &fb, &a.levels.0, &queries, half_widths, a.mem_budget)?;
    create_dir(&a.out)?;
    let predicted = predicted_points(&results);
    io::write_keypoints(&predicted, a.out.join("predictions.csv"))?;
    let records: Vec<MatchRecord> = results.iter().map(MatchRecord::from).collect();
    let resolved = serde_json::json!({
        "box_half_widths": half_widths,
        "timestep_a": fa.timestep,
        "timestep_b": fb.timestep,
        "image_dims_a": fa.target_dims,
        "image_dims_b": fb.target_dims,
        "matches": records,
    });
    io::write_report("match", a, &resolved, a.out.join("matches.json"))?;

    if let Some(gt_path) = &a.gt {
        let gt = io::read_keypoints(gt_path, Frame::Target)?;
        let case = evaluate_case("0", &predicted, &gt, a.spacing.0)?;
        let report = aggregate(&[case])?;
        io::write_report("metrics", a, &report, a.out.join("report.json"))?;
    }
    Ok(())
}

fn eval(a: &EvalArgs) -> std::result::Result<(), CliError> {
    let mut p = Vec::new();
    if a.pred.len() != a.gt.len() {
        p.push(format!("{} --pred files but {} --gt files", a.pred.len(), a.gt.len()));
    }
    for f in &a.pred {
        require_file(f, "--pred", &mut p);
    }
    for f in &a.gt {
        require_file(f, "--gt", &mut p);
    }
    check(p)?;
    let mut cases = Vec::with_capacity(a.pred.len());
    for (i, (pred, gt)) in a.pred.iter().zip(&a.gt).enumerate() {
        let pred = io::read_keypoints(pred, Frame::Target)?;
        let gt = io::read_keypoints(gt, Frame::Target)?;
        cases.push(CaseErrors::new(i.to_string(), keypoint_errors(&pred, &gt, a.spacing.0)?)?);
    }
    let report = aggregate(&cases)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    io::write_report("metrics", a, &report, &a.out)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct SweepCell<'a> {
    t: u16,
    levels: String,
    metrics: &'a MetricsReport,
}

fn sweep(a: &SweepArgs) -> std::result::Result<(), CliError> {
    let mut p = Vec::new();
    let from_volumes = a.volume_a.is_some() || a.volume_b.is_some();
    let from_mdf = a.feats_a.is_some() || a.feats_b.is_some();
    match (from_volumes, from_mdf) {
        (true, true) => p.push("give either --volume-a/--volume-b or --feats-a/--feats-b, not both".into()),
        (false, false) => p.push("one of --volume-a/--volume-b or --feats-a/--feats-b is required".into()),
        _ => {}
    }
    if from_volumes {
        match (&a.volume_a, &a.volume_b) {
            (Some(va), Some(vb)) => {
                require_file(va, "--volume-a", &mut p);
                require_file(vb, "--volume-b", &mut p);
            }
            _ => p.push("--volume-a and --volume-b must be given together".into()),
        }
    }
    if from_mdf {
        match (&a.feats_a, &a.feats_b) {
            (Some(ta), Some(tb)) => {
                for (flag, tpl) in [("--feats-a", ta), ("--feats-b", tb)] {
                    if !tpl.contains("{t}") {
                        p.push(format!("{flag} template must contain {{t}}"));
                    }
                }
            }
            _ => p.push("--feats-a and --feats-b must be given together".into()),
        }
    }
    require_file(&a.keypoints, "--keypoints", &mut p);
    require_file(&a.gt, "--gt", &mut p);
    if a.timesteps.0.is_empty() {
        p.push("--timesteps is empty".into());
    }
    if a.timesteps.0.iter().any(|&t| u16::try_from(t).is_err() || t == 0) {
        p.push("--timesteps entries must be in 1..=65535".into());
    }
    if from_volumes && a.scales.0.len() != a.channels.0.len() {
        p.push(format!(
            "--scales has {} entries but --channels has {}",
            a.scales.0.len(),
            a.channels.0.len()
        ));
    }
    if let Some(s) = &a.schedule.schedule {
        require_file(s, "--schedule", &mut p);
    }
    if a.mem_budget == 0 {
        p.push("--mem-budget must be at least 1 MiB".into());
    }
    p.extend(a.search.problems());
    check(p)?;

    let queries = io::read_keypoints(&a.keypoints, Frame::Source)?;
    let gt = io::read_keypoints(&a.gt, Frame::Target)?;
    let half_widths = a.search.resolve()?;
    let sched = a.schedule.load()?;
    let volumes = match (&a.volume_a, &a.volume_b) {
        (Some(va), Some(vb)) => Some((
            normalize_intensity(&load_volume(va, None)?),
            normalize_intensity(&load_volume(vb, None)?),
        )),
        _ => None,
    };
    let spacing = volumes.as_ref().map(|(_, b)| b.spacing()).unwrap_or(a.spacing.0);

    let mut results = BTreeMap::new();
    for &t in &a.timesteps.0 {
        let (fa, fb) = match (&volumes, &a.feats_a, &a.feats_b) {
            (Some((va, vb)), _, _) => (
                synth_features(va, &a.scales.0, &a.channels.0, t, &sched, a.seed)?,
                synth_features(vb, &a.scales.0, &a.channels.0, t, &sched, a.seed.wrapping_add(1))?,
            ),
            (None, Some(ta), Some(tb)) => (
                load_features(Path::new(&ta.replace("{t}", &t.to_string())), a.target_dims)?,
                load_features(Path::new(&tb.replace("{t}", &t.to_string())), a.target_dims)?,
            ),
            _ => unreachable!("validated above"),
        };
        let mut p = Vec::new();
        for set in &a.level_sets.0 {
            level_problems(&fa, set, "feature set A", &mut p);
            level_problems(&fb, set, "feature set B", &mut p);
        }
        if let Err(e) = queries.validate(fa.target_dims) {
            p.push(format!("--keypoints: {e}"));
        }
        p.dedup();
        check(p)?;
        for set in &a.level_sets.0 {
            let res = do_match(&fa, &fb, set, &queries, half_widths, a.mem_budget)?;
            let case = evaluate_case("0", &predicted_points(&res), &gt, spacing)?;
            results.insert((t as u16, LevelSubset::new(set.clone())), aggregate(&[case])?);
        }
    }
    let heatmap = sweep_aggregate(&results)?;
    create_dir(&a.out)?;
    fs::write(a.out.join("heatmap.csv"), heatmap.to_csv()).map_err(|e| Error::io(a.out.join("heatmap.csv"), e))?;
    let cells: Vec<SweepCell> = results
        .iter()
        .map(|((t, s), m)| SweepCell {
            t: *t,
            levels: s.label(),
            metrics: m,
        })
        .collect();
    io::write_report(
        "sweep",
        a,
        &serde_json::json!({"box_half_widths": half_widths, "spacing": spacing, "heatmap": heatmap, "cells": cells}),
        a.out.join("heatmap.json"),
    )?;
    Ok(())
}

fn simmap(a: &SimmapArgs) -> std::result::Result<(), CliError> {
    let mut p = Vec::new();
    require_file(&a.feats_a, "--feats-a", &mut p);
    require_file(&a.feats_b, "--feats-b", &mut p);
    if a.levels.0.is_empty() {
        p.push("--levels is empty".into());
    }
    let geometry = Geometry {
        spacing: a.spacing.0,
        origin: a.origin.0,
    };
    if let Err(e) = geometry.validate() {
        p.push(e.to_string());
    }
    check(p)?;
    let fa = load_features(&a.feats_a, a.target_dims)?;
    let fb = load_features(&a.feats_b, a.target_dims)?;
    let mut p = Vec::new();
    level_problems(&fa, &a.levels.0, "--feats-a", &mut p);
    level_problems(&fb, &a.levels.0, "--feats-b", &mut p);
    check(p)?;
    let da = DescriptorSampler::new(&fa, &a.levels.0)?;
    let db = DescriptorSampler::new(&fb, &a.levels.0)?;
    let m = Matcher::new(&da, &db)?.with_budget(a.mem_budget.max(1) << 20);
    let map = m.similarity_map(a.query.0, geometry)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    io::write_raw_volume(&map, &a.out, io::default_sidecar(&a.out))?;
    io::write_report(
        "simmap",
        a,
        &serde_json::json!({"dims": map.dims()}),
        provenance_path(&a.out),
    )?;
    Ok(())
}

fn run_phantom(a: &PhantomArgs) -> std::result::Result<(), CliError> {
    let geometry = Geometry {
        spacing: a.spacing.0,
        origin: [0.0; 3],
    };
    let mut p = Vec::new();
    if a.dims.0.contains(&0) {
        p.push("--dims entries must be positive".into());
    }
    if let Err(e) = geometry.validate() {
        p.push(e.to_string());
    }
    check(p)?;
    let dims = Dims(a.dims.0);
    let vol_a = phantom::blob_volume(dims, geometry, a.blobs, a.seed)?;
    let vol_b = phantom::translate(&vol_a, a.shift.0)?;
    let (src, dst) = phantom::interior_keypoints(dims, a.margin, a.shift.0, a.keypoints, a.seed)?;
    create_dir(&a.out)?;
    io::write_raw_volume(&vol_a, a.out.join("a.raw"), a.out.join("a.raw.txt"))?;
    io::write_raw_volume(&vol_b, a.out.join("b.raw"), a.out.join("b.raw.txt"))?;
    io::write_keypoints(&src, a.out.join("kp_a.csv"))?;
    io::write_keypoints(&dst, a.out.join("kp_b.csv"))?;
    let disp: Vec<Vec3> = src.iter().zip(&dst).map(|(s, d)| [0, 1, 2].map(|k| d[k] - s[k])).collect();
    io::write_keypoints(&disp, a.out.join("disp.csv"))?;
    io::write_report("phantom", a, &serde_json::json!({}), a.out.join("phantom.json"))?;
    Ok(())
}
