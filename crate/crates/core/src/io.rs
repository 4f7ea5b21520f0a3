//! On-disk formats: the MDF feature container, raw volumes with a text
//! sidecar, keypoint CSV, schedule tables and JSON reports.
//!
//! All binary data is little-endian regardless of host. Readers validate
//! header-declared sizes against the actual file length before allocating
//! payload buffers. The byte layouts are documented in `FORMATS.md`.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::descriptor::{FeatureLevel, FeatureSet};
use crate::diffusion::{LatentVolume, NoiseSchedule};
use crate::error::{Error, FormatError, Result};
use crate::volume::{Dims, Frame, Geometry, KeypointSet, Vec3, Volume3D};

pub const MDF_MAGIC: [u8; 4] = *b"MDF1";
pub const MDF_VERSION: u16 = 1;
/// Magic, version, timestep and level count.
pub const MDF_FIXED_HEADER: usize = 10;
/// level_id u16 + C, H, W, D as u32.
pub const MDF_LEVEL_HEADER: usize = 18;
pub const REPORT_FORMAT_VERSION: u32 = 1;

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Serializes a feature set. `target_dims` is not stored.
pub fn encode_mdf(fs: &FeatureSet) -> Vec<u8> {
    let levels = fs.levels();
    let payload: usize = levels.iter().map(|l| l.data.len() * 4).sum();
    let mut out = Vec::with_capacity(MDF_FIXED_HEADER + levels.len() * MDF_LEVEL_HEADER + payload);
    out.extend_from_slice(&MDF_MAGIC);
    out.extend_from_slice(&MDF_VERSION.to_le_bytes());
    out.extend_from_slice(&fs.timestep.to_le_bytes());
    out.extend_from_slice(&(levels.len() as u16).to_le_bytes());
    for l in levels {
        out.extend_from_slice(&l.level_id.to_le_bytes());
        out.extend_from_slice(&(l.channels as u32).to_le_bytes());
        for d in l.dims.0 {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    for l in levels {
        for v in &l.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

#[inline]
fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

#[inline]
fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

struct LevelHeader {
    level_id: u16,
    channels: usize,
    dims: Dims,
    bytes: u64,
}

/// Parses an MDF buffer. The returned set's `target_dims` is the per-axis
/// maximum over its levels.
pub fn decode_mdf(b: &[u8]) -> std::result::Result<FeatureSet, FormatError> {
    let actual = b.len() as u64;
    if b.len() < 4 {
        return Err(FormatError::Truncated {
            section: "header",
            expected: MDF_FIXED_HEADER as u64,
            actual,
        });
    }
    if b[..4] != MDF_MAGIC {
        return Err(FormatError::BadMagic {
            found: b[..4].try_into().unwrap(),
        });
    }
    if b.len() < MDF_FIXED_HEADER {
        return Err(FormatError::Truncated {
            section: "header",
            expected: MDF_FIXED_HEADER as u64,
            actual,
        });
    }
    let version = u16_at(b, 4);
    if version != MDF_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let timestep = u16_at(b, 6);
    let count = u16_at(b, 8) as usize;
    if count == 0 {
        return Err(FormatError::NoLevels);
    }
    let table_end = MDF_FIXED_HEADER + count * MDF_LEVEL_HEADER;
    if b.len() < table_end {
        return Err(FormatError::Truncated {
            section: "level table",
            expected: table_end as u64,
            actual,
        });
    }

    let mut headers = Vec::with_capacity(count);
    let mut expected = table_end as u64;
    for i in 0..count {
        let at = MDF_FIXED_HEADER + i * MDF_LEVEL_HEADER;
        let offset = at as u64;
        let level_id = u16_at(b, at);
        let channels = u32_at(b, at + 2);
        let extent = [u32_at(b, at + 6), u32_at(b, at + 10), u32_at(b, at + 14)];
        if let Some(prev) = headers.last().map(|h: &LevelHeader| h.level_id) {
            if level_id <= prev {
                return Err(FormatError::LevelOrder {
                    offset,
                    previous: prev,
                    found: level_id,
                });
            }
        }
        if channels == 0 || extent.contains(&0) {
            return Err(FormatError::ZeroExtent { level_id, offset });
        }
        let bytes = extent
            .iter()
            .try_fold(channels as u64 * 4, |acc, &d| acc.checked_mul(d as u64))
            .ok_or_else(|| FormatError::SizeMismatch {
                level_id,
                offset,
                detail: format!(
                    "C*H*W*D = {channels}*{}*{}*{} f32 values overflows a 64-bit byte count",
                    extent[0], extent[1], extent[2]
                ),
            })?;
        expected = expected.checked_add(bytes).ok_or_else(|| FormatError::SizeMismatch {
            level_id,
            offset,
            detail: "cumulative payload size overflows a 64-bit byte count".into(),
        })?;
        headers.push(LevelHeader {
            level_id,
            channels: channels as usize,
            dims: Dims(extent.map(|d| d as usize)),
            bytes,
        });
    }
    if actual < expected {
        return Err(FormatError::Truncated {
            section: "payload",
            expected,
            actual,
        });
    }
    if actual > expected {
        return Err(FormatError::TrailingBytes { expected, actual });
    }

    let mut at = table_end;
    let mut levels = Vec::with_capacity(count);
    let mut target = [1usize; 3];
    for h in headers {
        let end = at + h.bytes as usize;
        for (t, d) in target.iter_mut().zip(h.dims.0) {
            *t = (*t).max(d);
        }
        levels.push(FeatureLevel {
            level_id: h.level_id,
            channels: h.channels,
            dims: h.dims,
            data: f32s(&b[at..end]),
        });
        at = end;
    }
    // Validated above: ids increasing, sizes consistent, non-empty.
    Ok(FeatureSet::new(timestep, Dims(target), levels).expect("validated MDF levels"))
}

pub fn write_mdf(fs: &FeatureSet, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_mdf(fs))
}

pub fn read_mdf(path: impl AsRef<Path>) -> Result<FeatureSet> {
    let path = path.as_ref();
    decode_mdf(&read_bytes(path)?).map_err(|e| Error::format(path, e))
}

/// Latents are stored as a single-level MDF with level id 0.
pub fn write_latent(z: &LatentVolume, timestep: u16, path: impl AsRef<Path>) -> Result<()> {
    let level = FeatureLevel::new(0, z.channels, z.dims, z.data.clone())?;
    write_mdf(&FeatureSet::new(timestep, z.dims, vec![level])?, path)
}

pub fn read_latent(path: impl AsRef<Path>) -> Result<LatentVolume> {
    let path = path.as_ref();
    let fs = read_mdf(path)?;
    if fs.levels().len() != 1 {
        return Err(Error::Config(format!(
            "{}: a latent file holds exactly one level, found {}",
            path.display(),
            fs.levels().len()
        )));
    }
    let l = fs.levels()[0].clone();
    LatentVolume::new(l.channels, l.dims, l.data)
}

fn parse_line_reals(line: &str, lineno: usize, want: usize, sep: char) -> std::result::Result<Vec<f64>, FormatError> {
    let fields: Vec<&str> = if sep.is_whitespace() {
        line.split_whitespace().collect()
    } else {
        line.split(sep).map(str::trim).collect()
    };
    if fields.len() != want {
        return Err(FormatError::Line {
            line: lineno,
            detail: format!("expected {want} values, found {}", fields.len()),
        });
    }
    fields
        .iter()
        .map(|f| match f.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            Ok(v) => Err(FormatError::Line {
                line: lineno,
                detail: format!("non-finite value {v}"),
            }),
            Err(_) => Err(FormatError::Line {
                line: lineno,
                detail: format!("cannot parse {f:?} as a number"),
            }),
        })
        .collect()
}

/// Parses `x,y,z` lines; blank lines are skipped.
pub fn parse_keypoints(text: &str, frame: Frame) -> std::result::Result<KeypointSet, FormatError> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v = parse_line_reals(line, i + 1, 3, ',')?;
        points.push([v[0], v[1], v[2]]);
    }
    Ok(KeypointSet::new(points, frame))
}

pub fn read_keypoints(path: impl AsRef<Path>, frame: Frame) -> Result<KeypointSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_keypoints(&text, frame).map_err(|e| Error::format(path, e))
}

/// Same layout as the input files, so predictions can be evaluated directly.
pub fn format_keypoints(points: &[Vec3]) -> String {
    points
        .iter()
        .map(|p| format!("{},{},{}\n", p[0], p[1], p[2]))
        .collect()
}

pub fn write_keypoints(points: &[Vec3], path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), format_keypoints(points).as_bytes())
}

/// Raw displacement vectors (`dx,dy,dz` per line) for box sizing.
pub fn read_displacements(path: impl AsRef<Path>) -> Result<Vec<Vec3>> {
    Ok(read_keypoints(path, Frame::Source)?.points)
}

/// Geometry declared by a raw-volume sidecar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sidecar {
    pub dims: Dims,
    pub geometry: Geometry,
}

pub fn format_sidecar(vol: &Volume3D) -> String {
    let g = vol.geometry();
    let d = vol.dims().0;
    format!(
        "dims {} {} {}\nspacing {} {} {}\norigin {} {} {}\n",
        d[0], d[1], d[2], g.spacing[0], g.spacing[1], g.spacing[2], g.origin[0], g.origin[1], g.origin[2]
    )
}

/// `dims`, `spacing` and `origin` lines, three values each; `#` starts a comment.
pub fn parse_sidecar(text: &str) -> std::result::Result<Sidecar, FormatError> {
    let (mut dims, mut spacing, mut origin) = (None, None, None);
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let v = parse_line_reals(rest.trim(), i + 1, 3, ' ')?;
        let v = [v[0], v[1], v[2]];
        let slot = match key {
            "dims" => &mut dims,
            "spacing" => &mut spacing,
            "origin" => &mut origin,
            other => {
                return Err(FormatError::Line {
                    line: i + 1,
                    detail: format!("unknown key {other:?}"),
                })
            }
        };
        if slot.replace(v).is_some() {
            return Err(FormatError::Line {
                line: i + 1,
                detail: format!("duplicate key {key:?}"),
            });
        }
    }
    let missing = |k: &str| FormatError::Sidecar(format!("missing {k:?}"));
    let dims = dims.ok_or_else(|| missing("dims"))?;
    let spacing = spacing.ok_or_else(|| missing("spacing"))?;
    let origin = origin.ok_or_else(|| missing("origin"))?;
    if dims.iter().any(|&d| d < 1.0 || d.fract() != 0.0 || d > u32::MAX as f64) {
        return Err(FormatError::Sidecar(format!("dims must be positive integers, got {dims:?}")));
    }
    if spacing.iter().any(|&s| s <= 0.0) {
        return Err(FormatError::Sidecar(format!("spacing must be positive, got {spacing:?}")));
    }
    Ok(Sidecar {
        dims: Dims(dims.map(|d| d as usize)),
        geometry: Geometry { spacing, origin },
    })
}

/// Conventional sidecar location: the data path with `.txt` appended.
pub fn default_sidecar(data_path: &Path) -> std::path::PathBuf {
    let mut s = data_path.as_os_str().to_owned();
    s.push(".txt");
    s.into()
}

pub fn read_raw_volume(data_path: impl AsRef<Path>, sidecar_path: impl AsRef<Path>) -> Result<Volume3D> {
    let (data_path, sidecar_path) = (data_path.as_ref(), sidecar_path.as_ref());
    let text = fs::read_to_string(sidecar_path).map_err(|e| Error::io(sidecar_path, e))?;
    let side = parse_sidecar(&text).map_err(|e| Error::format(sidecar_path, e))?;
    let expected = (side.dims.0.iter().map(|&d| d as u64).product::<u64>()).saturating_mul(4);
    let actual = fs::metadata(data_path).map_err(|e| Error::io(data_path, e))?.len();
    if actual != expected {
        return Err(Error::format(
            data_path,
            FormatError::Truncated {
                section: "volume data",
                expected,
                actual,
            },
        ));
    }
    let bytes = read_bytes(data_path)?;
    if bytes.len() as u64 != expected {
        return Err(Error::format(
            data_path,
            FormatError::Truncated {
                section: "volume data",
                expected,
                actual: bytes.len() as u64,
            },
        ));
    }
    Volume3D::new(side.dims, side.geometry, f32s(&bytes))
}

pub fn write_raw_volume(vol: &Volume3D, data_path: impl AsRef<Path>, sidecar_path: impl AsRef<Path>) -> Result<()> {
    let bytes: Vec<u8> = vol.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    write_bytes(data_path.as_ref(), &bytes)?;
    write_bytes(sidecar_path.as_ref(), format_sidecar(vol).as_bytes())
}

/// One cumulative alpha per line; line `t` holds timestep `t`.
pub fn parse_schedule(text: &str) -> std::result::Result<Vec<f64>, FormatError> {
    let mut alphas = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        alphas.push(parse_line_reals(line.trim(), i + 1, 1, ',')?[0]);
    }
    Ok(alphas)
}

pub fn read_schedule(path: impl AsRef<Path>) -> Result<NoiseSchedule> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    NoiseSchedule::from_alphas(parse_schedule(&text).map_err(|e| Error::format(path, e))?)
}

pub fn format_schedule(s: &NoiseSchedule) -> String {
    s.alphas().iter().map(|a| format!("{a}\n")).collect()
}

/// Versioned JSON envelope shared by every report the CLI writes.
#[derive(Debug, Serialize)]
pub struct Report<'a, C: Serialize, B: Serialize> {
    pub format_version: u32,
    pub kind: &'a str,
    pub config: &'a C,
    #[serde(flatten)]
    pub body: &'a B,
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

pub fn write_report<C: Serialize, B: Serialize>(kind: &str, config: &C, body: &B, path: impl AsRef<Path>) -> Result<()> {
    let report = Report {
        format_version: REPORT_FORMAT_VERSION,
        kind,
        config,
        body,
    };
    write_bytes(path.as_ref(), to_json(&report).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_set() -> FeatureSet {
        let a = FeatureLevel::new(0, 2, Dims::new(1, 2, 1), vec![1.0, -2.0, 0.5, 3.25]).unwrap();
        let b = FeatureLevel::new(3, 1, Dims::new(2, 2, 2), (0..8).map(|i| i as f32).collect()).unwrap();
        FeatureSet::new(20, Dims::new(2, 2, 2), vec![a, b]).unwrap()
    }

    #[test]
    fn mdf_layout_is_fixed() {
        let b = encode_mdf(&small_set());
        assert_eq!(&b[..4], b"MDF1");
        assert_eq!(u16_at(&b, 4), 1);
        assert_eq!(u16_at(&b, 6), 20);
        assert_eq!(u16_at(&b, 8), 2);
        // Second level header: id 3, C=1, 2x2x2.
        assert_eq!(u16_at(&b, 28), 3);
        assert_eq!(u32_at(&b, 30), 1);
        assert_eq!(b.len(), 10 + 2 * 18 + 4 * (4 + 8));
        assert_eq!(&b[46..50], &1.0f32.to_le_bytes());
    }

    #[test]
    fn mdf_roundtrip() {
        let fs = small_set();
        assert_eq!(decode_mdf(&encode_mdf(&fs)).unwrap(), fs);
    }

    #[test]
    fn mdf_truncation_reports_sizes() {
        let b = encode_mdf(&small_set());
        let err = decode_mdf(&b[..b.len() - 1]).unwrap_err();
        assert_eq!(
            err,
            FormatError::Truncated {
                section: "payload",
                expected: b.len() as u64,
                actual: b.len() as u64 - 1
            }
        );
        let mut extra = b.clone();
        extra.push(0);
        assert!(matches!(decode_mdf(&extra), Err(FormatError::TrailingBytes { .. })));
    }

    #[test]
    fn mdf_rejects_bad_headers() {
        let b = encode_mdf(&small_set());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(decode_mdf(&bad), Err(FormatError::BadMagic { .. })));

        let mut bad = b.clone();
        bad[4] = 9;
        assert_eq!(decode_mdf(&bad), Err(FormatError::UnsupportedVersion(9)));

        let mut bad = b.clone();
        bad[28..30].copy_from_slice(&0u16.to_le_bytes());
        assert_eq!(
            decode_mdf(&bad),
            Err(FormatError::LevelOrder {
                offset: 28,
                previous: 0,
                found: 0
            })
        );

        let mut bad = b.clone();
        bad[8..10].copy_from_slice(&0u16.to_le_bytes());
        assert_eq!(decode_mdf(&bad), Err(FormatError::NoLevels));

        let mut bad = b.clone();
        bad[12..16].copy_from_slice(&u32::MAX.to_le_bytes());
        bad[16..20].copy_from_slice(&u32::MAX.to_le_bytes());
        bad[20..24].copy_from_slice(&u32::MAX.to_le_bytes());
        bad[24..28].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(decode_mdf(&bad), Err(FormatError::SizeMismatch { level_id: 0, offset: 10, .. })));
    }

    #[test]
    fn keypoint_parsing() {
        let k = parse_keypoints("1.5,2,3\n", Frame::Source).unwrap();
        assert_eq!(k.points, vec![[1.5, 2.0, 3.0]]);
        assert!(parse_keypoints("", Frame::Source).unwrap().is_empty());
        assert_eq!(
            parse_keypoints("1,2\n", Frame::Source).unwrap_err(),
            FormatError::Line {
                line: 1,
                detail: "expected 3 values, found 2".into()
            }
        );
        assert!(matches!(
            parse_keypoints("0,0,0\n1,NaN,2\n", Frame::Source),
            Err(FormatError::Line { line: 2, .. })
        ));
        assert!(parse_keypoints("0,0,x\n", Frame::Source).is_err());
    }

    #[test]
    fn keypoint_text_roundtrip() {
        let pts = vec![[0.1, -2.5e-7, 1e10], [3.0, 4.0, 5.0]];
        let back = parse_keypoints(&format_keypoints(&pts), Frame::Target).unwrap();
        assert_eq!(back.points, pts);
    }

    #[test]
    fn sidecar_parsing() {
        let s = parse_sidecar("# geometry\ndims 2 3 4\nspacing 0.5 1 2\norigin -1 0 1\n").unwrap();
        assert_eq!(s.dims, Dims::new(2, 3, 4));
        assert_eq!(s.geometry.spacing, [0.5, 1.0, 2.0]);
        assert!(parse_sidecar("dims 2 2 2\nspacing 1 1 1\n").is_err());
        assert!(parse_sidecar("dims 2 2 2\nspacing 1 0 1\norigin 0 0 0\n").is_err());
        assert!(parse_sidecar("dims 2 2.5 2\nspacing 1 1 1\norigin 0 0 0\n").is_err());
        assert!(parse_sidecar("dims 2 2 2\nsize 1 1 1\n").is_err());
    }

    #[test]
    fn schedule_table_parsing() {
        assert_eq!(parse_schedule("1\n0.5\n\n0.25\n").unwrap(), vec![1.0, 0.5, 0.25]);
        assert!(matches!(parse_schedule("1\nabc\n"), Err(FormatError::Line { line: 2, .. })));
    }
}
