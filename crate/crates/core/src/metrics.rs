//! Keypoint error evaluation and aggregation.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::volume::{KeypointSet, Vec3};

/// Per-keypoint errors (mm) for one image pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseErrors {
    pub case_id: String,
    pub errors: Vec<f64>,
}

impl CaseErrors {
    pub fn new(case_id: impl Into<String>, errors: Vec<f64>) -> Result<Self> {
        let case_id = case_id.into();
        if errors.is_empty() {
            return Err(Error::Metrics(format!("case {case_id} has no keypoints")));
        }
        if let Some(e) = errors.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
            return Err(Error::Metrics(format!("case {case_id} has invalid error {e}")));
        }
        Ok(CaseErrors { case_id, errors })
    }
}

/// `|(pred - gt) * spacing|` per keypoint, in millimetres.
pub fn keypoint_errors(pred: &KeypointSet, gt: &KeypointSet, spacing: Vec3) -> Result<Vec<f64>> {
    if pred.len() != gt.len() {
        return Err(Error::Keypoints(format!(
            "{} predictions for {} ground-truth points",
            pred.len(),
            gt.len()
        )));
    }
    if pred.frame != gt.frame {
        return Err(Error::Keypoints(format!(
            "predictions in {:?} frame, ground truth in {:?} frame",
            pred.frame, gt.frame
        )));
    }
    Ok(pred
        .points
        .iter()
        .zip(&gt.points)
        .map(|(p, g)| {
            (0..3)
                .map(|a| ((p[a] - g[a]) * spacing[a]).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect())
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseSummary {
    pub case_id: String,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub errors: Vec<f64>,
}

/// Case-mean and keypoint-mean aggregates. Standard deviations are
/// population (divide by N).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub case_mean: f64,
    pub case_std: f64,
    pub keypoint_mean: f64,
    pub keypoint_std: f64,
    pub case_count: usize,
    pub keypoint_count: usize,
    pub std_definition: &'static str,
    pub cases: Vec<CaseSummary>,
}

pub fn aggregate(cases: &[CaseErrors]) -> Result<MetricsReport> {
    if cases.is_empty() {
        return Err(Error::Metrics("no cases to aggregate".into()));
    }
    let summaries: Vec<CaseSummary> = cases
        .iter()
        .map(|c| {
            let (mean, std) = mean_std(&c.errors);
            CaseSummary {
                case_id: c.case_id.clone(),
                count: c.errors.len(),
                mean,
                std,
                errors: c.errors.clone(),
            }
        })
        .collect();
    let case_means: Vec<f64> = summaries.iter().map(|s| s.mean).collect();
    let pooled: Vec<f64> = cases.iter().flat_map(|c| c.errors.iter().copied()).collect();
    let (case_mean, case_std) = mean_std(&case_means);
    let (keypoint_mean, keypoint_std) = mean_std(&pooled);
    Ok(MetricsReport {
        case_mean,
        case_std,
        keypoint_mean,
        keypoint_std,
        case_count: cases.len(),
        keypoint_count: pooled.len(),
        std_definition: "population",
        cases: summaries,
    })
}

/// How displacement samples become box half-widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BoxMode {
    /// Percentile of |component| taken separately per axis.
    #[default]
    PerAxis,
    /// Percentile of the Euclidean displacement length, applied to all axes.
    Radius,
}

/// Smallest sample whose rank is at least `ceil(pct / 100 * N)`.
pub fn nearest_rank(samples: &[f64], pct: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Metrics("percentile of an empty sample".into()));
    }
    if !(pct > 0.0 && pct <= 100.0) {
        return Err(Error::Metrics(format!("percentile {pct} outside (0, 100]")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    Ok(sorted[rank.min(sorted.len()) - 1])
}

/// Box half-widths (voxels) from source-to-target displacement vectors.
pub fn box_from_percentile(displacements: &[Vec3], pct: f64, mode: BoxMode) -> Result<[usize; 3]> {
    if displacements.is_empty() {
        return Err(Error::Metrics("no displacements to size the box from".into()));
    }
    if displacements.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::Metrics("displacements must be finite".into()));
    }
    let to_width = |v: f64| v.ceil() as usize;
    match mode {
        BoxMode::PerAxis => {
            let mut out = [0; 3];
            for (a, w) in out.iter_mut().enumerate() {
                let comps: Vec<f64> = displacements.iter().map(|d| d[a].abs()).collect();
                *w = to_width(nearest_rank(&comps, pct)?);
            }
            Ok(out)
        }
        BoxMode::Radius => {
            let lens: Vec<f64> = displacements
                .iter()
                .map(|d| d.iter().map(|c| c * c).sum::<f64>().sqrt())
                .collect();
            Ok([to_width(nearest_rank(&lens, pct)?); 3])
        }
    }
}

/// Ordered set of level ids, labelled by concatenation (`"012"`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LevelSubset(pub Vec<u16>);

impl LevelSubset {
    pub fn new(mut ids: Vec<u16>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        LevelSubset(ids)
    }

    pub fn label(&self) -> String {
        if self.0.iter().all(|&id| id < 10) {
            self.0.iter().map(|id| id.to_string()).collect()
        } else {
            self.0.iter().map(|id| id.to_string()).collect::<Vec<_>>().join("+")
        }
    }
}

/// Keypoint mean error indexed by level subset (rows) and timestep (columns).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Heatmap {
    pub rows: Vec<String>,
    pub timesteps: Vec<u16>,
    /// Row-major; `None` where the grid was not evaluated.
    pub cells: Vec<Vec<Option<f64>>>,
}

impl Heatmap {
    pub fn get(&self, row: &str, t: u16) -> Option<f64> {
        let r = self.rows.iter().position(|x| x == row)?;
        let c = self.timesteps.iter().position(|&x| x == t)?;
        self.cells[r][c]
    }

    /// `levels,<t1>,<t2>,...` header followed by one line per subset.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("levels");
        for t in &self.timesteps {
            out.push_str(&format!(",{t}"));
        }
        out.push('\n');
        for (label, row) in self.rows.iter().zip(&self.cells) {
            out.push_str(label);
            for cell in row {
                out.push(',');
                if let Some(v) = cell {
                    out.push_str(&format!("{v}"));
                }
            }
            out.push('\n');
        }
        out
    }
}

pub fn sweep_aggregate(results: &BTreeMap<(u16, LevelSubset), MetricsReport>) -> Result<Heatmap> {
    if results.is_empty() {
        return Err(Error::Metrics("empty sweep".into()));
    }
    let subsets: BTreeSet<&LevelSubset> = results.keys().map(|(_, s)| s).collect();
    let timesteps: BTreeSet<u16> = results.keys().map(|(t, _)| *t).collect();
    let cells = subsets
        .iter()
        .map(|s| {
            timesteps
                .iter()
                .map(|&t| results.get(&(t, (*s).clone())).map(|r| r.keypoint_mean))
                .collect()
        })
        .collect();
    Ok(Heatmap {
        rows: subsets.iter().map(|s| s.label()).collect(),
        timesteps: timesteps.into_iter().collect(),
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Frame;

    fn kp(points: Vec<Vec3>) -> KeypointSet {
        KeypointSet::new(points, Frame::Target)
    }

    #[test]
    fn keypoint_error_examples() {
        let g = kp(vec![[1.0, 2.0, 3.0], [0.0; 3]]);
        assert_eq!(keypoint_errors(&g, &g, [1.0; 3]).unwrap(), vec![0.0, 0.0]);
        let e = keypoint_errors(&kp(vec![[3.0, 0.0, 0.0]]), &kp(vec![[0.0; 3]]), [1.0; 3]).unwrap();
        assert_eq!(e, vec![3.0]);
        let e = keypoint_errors(&kp(vec![[1.0, 2.0, 2.0]]), &kp(vec![[0.0; 3]]), [2.0, 1.0, 1.0]).unwrap();
        assert!((e[0] - 12f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn keypoint_errors_reject_mismatch() {
        assert!(keypoint_errors(&kp(vec![[0.0; 3]]), &kp(vec![]), [1.0; 3]).is_err());
        let other = KeypointSet::new(vec![[0.0; 3]], Frame::Source);
        assert!(keypoint_errors(&kp(vec![[0.0; 3]]), &other, [1.0; 3]).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let r = aggregate(&[CaseErrors::new("a", vec![2.0, 4.0]).unwrap()]).unwrap();
        assert_eq!((r.case_mean, r.keypoint_mean), (3.0, 3.0));

        let r = aggregate(&[
            CaseErrors::new("a", vec![0.0, 0.0]).unwrap(),
            CaseErrors::new("b", vec![6.0]).unwrap(),
        ])
        .unwrap();
        assert_eq!(r.case_mean, 3.0);
        assert_eq!(r.keypoint_mean, 2.0);
        assert_eq!(r.keypoint_count, 3);

        let r = aggregate(&[
            CaseErrors::new("a", vec![5.0]).unwrap(),
            CaseErrors::new("b", vec![5.0]).unwrap(),
        ])
        .unwrap();
        assert_eq!((r.case_mean, r.keypoint_mean, r.case_std, r.keypoint_std), (5.0, 5.0, 0.0, 0.0));
        assert!(aggregate(&[]).is_err());
        assert!(CaseErrors::new("x", vec![]).is_err());
        assert!(CaseErrors::new("x", vec![-1.0]).is_err());
    }

    #[test]
    fn percentile_box_examples() {
        assert_eq!(box_from_percentile(&[[0.0; 3]; 4], 95.0, BoxMode::PerAxis).unwrap(), [0, 0, 0]);
        let d: Vec<Vec3> = (1..=100).map(|i| [i as f64, 0.0, 0.0]).collect();
        assert_eq!(box_from_percentile(&d, 95.0, BoxMode::PerAxis).unwrap(), [95, 0, 0]);
        assert_eq!(box_from_percentile(&[[2.0, 5.0, 1.0]], 95.0, BoxMode::PerAxis).unwrap(), [2, 5, 1]);
        assert_eq!(box_from_percentile(&[[-2.0, 5.0, 1.0]], 95.0, BoxMode::PerAxis).unwrap(), [2, 5, 1]);
        assert_eq!(box_from_percentile(&[[3.0, 4.0, 0.0]], 50.0, BoxMode::Radius).unwrap(), [5, 5, 5]);
        assert!(box_from_percentile(&[], 95.0, BoxMode::PerAxis).is_err());
        assert!(box_from_percentile(&d, 0.0, BoxMode::PerAxis).is_err());
        assert!(box_from_percentile(&d, 100.5, BoxMode::PerAxis).is_err());
    }

    fn report(v: f64) -> MetricsReport {
        aggregate(&[CaseErrors::new("c", vec![v]).unwrap()]).unwrap()
    }

    #[test]
    fn sweep_single_entry() {
        let mut m = BTreeMap::new();
        m.insert((20, LevelSubset::new(vec![0, 1])), report(1.5));
        let h = sweep_aggregate(&m).unwrap();
        assert_eq!(h.rows, vec!["01"]);
        assert_eq!(h.timesteps, vec![20]);
        assert_eq!(h.cells, vec![vec![Some(1.5)]]);
        assert_eq!(h.to_csv(), "levels,20\n01,1.5\n");
        assert!(sweep_aggregate(&BTreeMap::new()).is_err());
    }

    #[test]
    fn sweep_orders_subsets_then_timesteps() {
        let mut m = BTreeMap::new();
        for (t, ids, v) in [
            (40, vec![1], 4.0),
            (10, vec![0, 1, 2], 1.0),
            (10, vec![0], 2.0),
            (40, vec![0], 3.0),
        ] {
            m.insert((t, LevelSubset::new(ids)), report(v));
        }
        let h = sweep_aggregate(&m).unwrap();
        assert_eq!(h.rows, vec!["0", "012", "1"]);
        assert_eq!(h.timesteps, vec![10, 40]);
        assert_eq!(h.get("1", 10), None);
        assert_eq!(h.get("0", 40), Some(3.0));
        assert_eq!(h.to_csv(), "levels,10,40\n0,2,3\n012,1,\n1,,4\n");
    }

    #[test]
    fn subset_labels() {
        assert_eq!(LevelSubset::new(vec![3, 0, 1, 2]).label(), "0123");
        assert_eq!(LevelSubset::new(vec![12, 1]).label(), "1+12");
    }
}
