use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{binarize, dice, e_measure, iou, mae, s_measure, weighted_fmeasure, MetricError};
use crate::data::pnm;
use crate::image::Map;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Scores {
    pub dice: f64,
    pub iou: f64,
    pub wfm: f64,
    pub s_measure: f64,
    pub e_measure: f64,
    pub mae: f64,
}

impl Scores {
    pub const COLUMNS: [&'static str; 6] = ["mdice", "miou", "wfm", "s_measure", "e_measure", "mae"];

    pub fn values(&self) -> [f64; 6] {
        [self.dice, self.iou, self.wfm, self.s_measure, self.e_measure, self.mae]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub name: String,
    pub scores: Scores,
}

/// Per-image scores in name order plus their means.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub records: Vec<ImageRecord>,
    pub mean: Scores,
}

/// All six metrics for one pair. Dice and IoU use `pred ≥ threshold`.
pub fn evaluate_pair(pred: &Map, gt: &Map, threshold: f64) -> Result<Scores, MetricError> {
    let bin = binarize(pred, threshold)?;
    Ok(Scores {
        dice: dice(&bin, gt)?,
        iou: iou(&bin, gt)?,
        wfm: weighted_fmeasure(pred, gt)?,
        s_measure: s_measure(pred, gt)?,
        e_measure: e_measure(pred, gt)?,
        mae: mae(pred, gt)?,
    })
}

/// Scores `(name, pred, gt)` triples; records are sorted by name.
pub fn evaluate_maps(
    items: impl IntoIterator<Item = (String, Map, Map)>,
    threshold: f64,
) -> Result<MetricReport, MetricError> {
    let mut records = Vec::new();
    for (name, pred, gt) in items {
        if !pred.same_shape(&gt) {
            return Err(MetricError::PairShape {
                name,
                pred: (pred.height(), pred.width()),
                gt: (gt.height(), gt.width()),
            });
        }
        let scores = evaluate_pair(&pred, &gt, threshold)?;
        records.push(ImageRecord { name, scores });
    }
    MetricReport::from_records(records)
}

fn pgm_names(dir: &Path) -> Result<BTreeSet<String>, MetricError> {
    let mut names = BTreeSet::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if entry.file_type()?.is_file() && name.ends_with(".pgm") {
            names.insert(name);
        }
    }
    Ok(names)
}

fn read(path: &Path, mask: bool) -> Result<Map, MetricError> {
    let r = if mask { pnm::read_mask(path) } else { pnm::read_gray(path) };
    r.map_err(|source| MetricError::Read {
        path: path.display().to_string(),
        source,
    })
}

/// Pairs every `.pgm` in `pred_dir` with the same file name in `gt_dir`.
/// Predictions are read as [0, 1] maps, ground truth binarized at 128.
pub fn evaluate_dataset(pred_dir: &Path, gt_dir: &Path, threshold: f64) -> Result<MetricReport, MetricError> {
    let preds = pgm_names(pred_dir)?;
    let gts = pgm_names(gt_dir)?;
    if let Some(name) = preds.difference(&gts).next() {
        return Err(MetricError::MissingCounterpart {
            name: name.clone(),
            dir: gt_dir.display().to_string(),
        });
    }
    if let Some(name) = gts.difference(&preds).next() {
        return Err(MetricError::MissingCounterpart {
            name: name.clone(),
            dir: pred_dir.display().to_string(),
        });
    }
    let mut items = Vec::with_capacity(preds.len());
    for name in preds {
        let pred = read(&pred_dir.join(&name), false)?;
        let gt = read(&gt_dir.join(&name), true)?;
        items.push((name, pred, gt));
    }
    if items.is_empty() {
        return Err(MetricError::NoPairs(pred_dir.display().to_string()));
    }
    evaluate_maps(items, threshold)
}

impl MetricReport {
    pub fn from_records(mut records: Vec<ImageRecord>) -> Result<Self, MetricError> {
        if records.is_empty() {
            return Err(MetricError::NoPairs("report".into()));
        }
        records.sort_by(|a, b| a.name.cmp(&b.name));
        let n = records.len() as f64;
        let mut sums = [0.0; 6];
        for r in &records {
            for (s, v) in sums.iter_mut().zip(r.scores.values()) {
                *s += v;
            }
        }
        let [dice, iou, wfm, s_measure, e_measure, mae] = sums.map(|s| s / n);
        Ok(Self {
            records,
            mean: Scores {
                dice,
                iou,
                wfm,
                s_measure,
                e_measure,
                mae,
            },
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// One row per image then a `mean` row; values at full precision.
    pub fn to_csv(&self) -> String {
        let mut out = format!("name,{}\n", Scores::COLUMNS.join(","));
        let rows = self
            .records
            .iter()
            .map(|r| (r.name.as_str(), r.scores))
            .chain([("mean", self.mean)]);
        for (name, s) in rows {
            out.push_str(name);
            for v in s.values() {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Dataset means laid out like a results table.
    pub fn to_table(&self) -> String {
        let heads = ["mDice", "mIoU", "Fwβ", "Sα", "Eφmax", "MAE"];
        let mut out = String::new();
        for h in heads {
            write!(out, "{h:>8}").unwrap();
        }
        out.push('\n');
        for v in self.mean.values() {
            write!(out, "{v:>8.3}").unwrap();
        }
        writeln!(out, "\n({} images)", self.records.len()).unwrap();
        out
    }

    pub fn write(&self, dir: &Path) -> Result<(), MetricError> {
        fs::create_dir_all(dir)?;
        crate::fsutil::write_atomic(&dir.join("metrics.csv"), self.to_csv().as_bytes())?;
        crate::fsutil::write_atomic(&dir.join("metrics.txt"), self.to_table().as_bytes())?;
        Ok(())
    }
}
