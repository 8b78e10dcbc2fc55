//! Class remapping to a joint label set and semantic segmentation scoring.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::point::PointCloud;

/// Joint class id of points excluded from scoring.
pub const IGNORE: u32 = 0;

/// The default joint classes, ids 1 to 11.
pub const JOINT_CLASSES: [&str; 11] = [
    "car",
    "truck",
    "bicycle",
    "motorcycle",
    "pedestrian",
    "other-vehicle",
    "structure",
    "nature",
    "road",
    "ground",
    "terrain",
];

const SEMANTICKITTI_MAP: &str = include_str!("../data/classmaps/semantickitti.txt");
const NUSCENES_MAP: &str = include_str!("../data/classmaps/nuscenes.txt");
const JOINT_MAP: &str = include_str!("../data/classmaps/joint.txt");

/// Source class id to joint class id, `None` meaning ignored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMap {
    table: BTreeMap<u32, Option<u32>>,
    names: BTreeMap<u32, String>,
}

impl ClassMap {
    /// Parses `source_id joint_id [name]` or `source_id ignore [name]`
    /// lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut table = BTreeMap::new();
        let mut names = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |detail: String| Error::format("class map", format!("line {}: {detail}", n + 1));
            let mut it = line.split_whitespace();
            let src: u32 = it
                .next()
                .unwrap()
                .parse()
                .map_err(|e| bad(format!("source id: {e}")))?;
            let dst = match it.next() {
                Some("ignore") | Some("IGNORE") => None,
                Some(tok) => {
                    let id: u32 = tok.parse().map_err(|e| bad(format!("joint id '{tok}': {e}")))?;
                    if id == IGNORE {
                        None
                    } else {
                        Some(id)
                    }
                }
                None => return Err(bad("missing joint id".into())),
            };
            if table.insert(src, dst).is_some() {
                return Err(bad(format!("duplicate source id {src}")));
            }
            let name: Vec<&str> = it.collect();
            if !name.is_empty() {
                names.insert(src, name.join(" "));
            }
        }
        Ok(ClassMap { table, names })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Shipped maps: `semantickitti`, `nuscenes` or `joint`.
    pub fn builtin(name: &str) -> Result<Self> {
        let text = match name {
            "semantickitti" => SEMANTICKITTI_MAP,
            "nuscenes" => NUSCENES_MAP,
            "joint" => JOINT_MAP,
            _ => return Err(Error::invalid("class map", format!("no built-in map named '{name}'"))),
        };
        Self::parse(text)
    }

    /// A builtin name or a path to a map file.
    pub fn resolve(spec: &str) -> Result<Self> {
        match spec {
            "semantickitti" | "nuscenes" | "joint" => Self::builtin(spec),
            _ => Self::load(Path::new(spec)),
        }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (u32, Option<u32>)>) -> Self {
        ClassMap {
            table: pairs.into_iter().collect(),
            names: BTreeMap::new(),
        }
    }

    /// Joint id of a source id; `Ok(None)` when ignored.
    pub fn lookup(&self, id: u32) -> Result<Option<u32>> {
        self.table.get(&id).copied().ok_or(Error::UnmappedClass(id))
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get(&id).map(String::as_str)
    }

    pub fn source_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.table.keys().copied()
    }
}

/// Rewrites semantic classes to joint ids; ignored points get [`IGNORE`].
pub fn remap(cloud: &PointCloud, map: &ClassMap) -> Result<PointCloud> {
    let mut out = cloud.clone();
    for p in &mut out.points {
        p.semantic_class = map.lookup(p.semantic_class)?.unwrap_or(IGNORE);
    }
    Ok(out)
}

/// Joint class ids and names scored by a confusion matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointClasses {
    pub ids: Vec<u32>,
    pub names: Vec<String>,
}

impl Default for JointClasses {
    fn default() -> Self {
        JointClasses {
            ids: (1..=JOINT_CLASSES.len() as u32).collect(),
            names: JOINT_CLASSES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl JointClasses {
    fn index(&self, id: u32) -> Result<usize> {
        self.ids
            .iter()
            .position(|&c| c == id)
            .ok_or_else(|| Error::invalid("joint class", format!("id {id} is not a scored joint class")))
    }
}

/// Rows are ground truth, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: JointClasses,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: JointClasses) -> Self {
        let n = classes.ids.len();
        ConfusionMatrix {
            classes,
            counts: vec![0; n * n],
        }
    }

    pub fn size(&self) -> usize {
        self.classes.ids.len()
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.size() + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one label pair per point. Points whose ground truth or
    /// prediction maps to IGNORE are skipped. Returns the number scored.
    pub fn accumulate(&mut self, gt: &[u32], pred: &[u32], map_gt: &ClassMap, map_pred: &ClassMap) -> Result<usize> {
        if gt.len() != pred.len() {
            return Err(Error::LengthMismatch(gt.len(), pred.len()));
        }
        let n = self.size();
        let mut scored = 0;
        for (&g, &p) in gt.iter().zip(pred) {
            let (Some(g), Some(p)) = (map_gt.lookup(g)?, map_pred.lookup(p)?) else {
                continue;
            };
            let (gi, pi) = (self.classes.index(g)?, self.classes.index(p)?);
            self.counts[gi * n + pi] += 1;
            scored += 1;
        }
        Ok(scored)
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.classes != other.classes {
            return Err(Error::invalid("confusion matrix", "merging matrices over different classes"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Per-class IoU and the mean over classes with any ground-truth or
    /// predicted point.
    pub fn report(&self) -> Result<ScoreReport> {
        let total = self.total();
        if total == 0 {
            return Err(Error::NoScoredPoints);
        }
        let n = self.size();
        let mut classes = Vec::with_capacity(n);
        for c in 0..n {
            let tp = self.get(c, c);
            let row: u64 = (0..n).map(|j| self.get(c, j)).sum();
            let col: u64 = (0..n).map(|i| self.get(i, c)).sum();
            let (fp, fn_) = (col - tp, row - tp);
            let denom = tp + fp + fn_;
            classes.push(ClassScore {
                id: self.classes.ids[c],
                name: self.classes.names[c].clone(),
                iou: (denom > 0).then(|| tp as f64 / denom as f64),
                true_positives: tp,
                false_positives: fp,
                false_negatives: fn_,
            });
        }
        let present: Vec<f64> = classes.iter().filter_map(|c| c.iou).collect();
        let miou = present.iter().sum::<f64>() / present.len() as f64;
        Ok(ScoreReport {
            miou,
            scored_points: total,
            classes,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub id: u32,
    pub name: String,
    /// `None` for classes absent from both ground truth and prediction.
    pub iou: Option<f64>,
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub miou: f64,
    pub scored_points: u64,
    pub classes: Vec<ClassScore>,
}

impl ScoreReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One header row of class names and one row of IoU percentages, with
    /// mIoU last; excluded classes show `-`.
    pub fn to_table(&self, label: &str) -> String {
        let mut header = vec![String::new()];
        let mut row = vec![label.to_string()];
        for c in &self.classes {
            header.push(c.name.clone());
            row.push(c.iou.map_or("-".into(), |v| format!("{:.1}", v * 100.0)));
        }
        header.push("mIoU".into());
        row.push(format!("{:.1}", self.miou * 100.0));
        let widths: Vec<usize> = header.iter().zip(&row).map(|(h, r)| h.len().max(r.len())).collect();
        let mut out = String::new();
        for line in [&header, &row] {
            let cells: Vec<String> = line
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (s, w))| if i == 0 { format!("{s:<w$}") } else { format!("{s:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }
}

/// Scores one label vector pair over the default joint classes.
pub fn score(gt: &[u32], pred: &[u32], map_gt: &ClassMap, map_pred: &ClassMap) -> Result<ScoreReport> {
    let mut m = ConfusionMatrix::new(JointClasses::default());
    m.accumulate(gt, pred, map_gt, map_pred)?;
    m.report()
}
