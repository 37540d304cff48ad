use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::pnm;
use super::synth::{generate_sample, Difficulty, SegmentationSample};
use super::DataError;
use crate::fsutil::write_atomic;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Val => "val",
            Self::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Self::Train),
            "val" => Ok(Self::Val),
            "test" => Ok(Self::Test),
            other => Err(format!("unknown split {other:?} (train, val, test)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetSummary {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// Split sizes: val and test are rounded from their ratios, train takes
/// the rest.
pub fn split_counts(n: usize, ratios: [f64; 3]) -> Result<DatasetSummary, DataError> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DataError::InvalidRatios(format!(
            "{ratios:?} must be non-negative and sum to 1"
        )));
    }
    let val = (n as f64 * ratios[1]).round() as usize;
    let test = (n as f64 * ratios[2]).round() as usize;
    if val + test > n {
        return Err(DataError::InvalidRatios(format!("{ratios:?} leave no room for {n} samples")));
    }
    Ok(DatasetSummary {
        train: n - val - test,
        val,
        test,
    })
}

fn is_empty_dir(dir: &Path) -> Result<bool, DataError> {
    match fs::read_dir(dir) {
        Ok(mut it) => Ok(it.next().is_none()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(true),
        Err(e) => Err(e.into()),
    }
}

/// Writes `images/<id>.ppm`, `masks/<id>.pgm` and `manifest.txt` under
/// `dir`. Sample `i` (in train, val, test order) is seeded from
/// `mix(seed, i)` and named by its zero-padded index.
pub fn generate_dataset(
    dir: &Path,
    seed: u64,
    n: usize,
    ratios: [f64; 3],
    size: usize,
    difficulty: Difficulty,
    force: bool,
) -> Result<DatasetSummary, DataError> {
    let summary = split_counts(n, ratios)?;
    if size == 0 || size % 32 != 0 {
        return Err(DataError::InvalidSize(size));
    }
    if !is_empty_dir(dir)? {
        if !force {
            return Err(DataError::NotEmpty(dir.to_path_buf()));
        }
        for sub in ["images", "masks"] {
            let p = dir.join(sub);
            if p.exists() {
                fs::remove_dir_all(p)?;
            }
        }
    }
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("masks"))?;

    let splits = std::iter::repeat(Split::Train)
        .take(summary.train)
        .chain(std::iter::repeat(Split::Val).take(summary.val))
        .chain(std::iter::repeat(Split::Test).take(summary.test));
    let mut manifest = String::new();
    for (i, split) in splits.enumerate() {
        let mut sample = generate_sample(rng::mix(seed, i as u64), size, difficulty)?;
        sample.id = format!("{i:05}");
        let img = dir.join("images").join(format!("{}.ppm", sample.id));
        pnm::write_image(&img, &sample.image).map_err(|source| DataError::Pnm { path: img, source })?;
        let mask = dir.join("masks").join(format!("{}.pgm", sample.id));
        pnm::write_mask(&mask, &sample.mask).map_err(|source| DataError::Pnm { path: mask, source })?;
        manifest.push_str(&format!("{split} {}\n", sample.id));
    }
    write_atomic(&dir.join("manifest.txt"), manifest.as_bytes())?;
    Ok(summary)
}

/// A dataset directory opened through its manifest.
#[derive(Debug, Clone)]
pub struct Dataset {
    root: PathBuf,
    entries: Vec<(Split, String)>,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self, DataError> {
        let path = root.join("manifest.txt");
        let text = fs::read_to_string(&path).map_err(|e| {
            DataError::Missing(format!("{}: {e}", path.display()))
        })?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(split), Some(id), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(DataError::Manifest {
                    line: i + 1,
                    reason: format!("expected `<split> <id>`, got {line:?}"),
                });
            };
            let split = split.parse().map_err(|reason| DataError::Manifest { line: i + 1, reason })?;
            entries.push((split, id.to_string()));
        }
        Ok(Self {
            root: root.to_path_buf(),
            entries,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn ids(&self, split: Split) -> Vec<&str> {
        self.entries.iter().filter(|(s, _)| *s == split).map(|(_, id)| id.as_str()).collect()
    }

    pub fn image_path(&self, id: &str) -> PathBuf {
        self.root.join("images").join(format!("{id}.ppm"))
    }

    pub fn mask_path(&self, id: &str) -> PathBuf {
        self.root.join("masks").join(format!("{id}.pgm"))
    }

    pub fn load(&self, id: &str) -> Result<SegmentationSample, DataError> {
        let ip = self.image_path(id);
        let image = pnm::read_image(&ip).map_err(|source| DataError::Pnm { path: ip, source })?;
        let mp = self.mask_path(id);
        let mask = pnm::read_mask(&mp).map_err(|source| DataError::Pnm { path: mp.clone(), source })?;
        if image.shape()[1..] != [mask.height(), mask.width()] {
            return Err(DataError::Invalid(format!(
                "{id}: image {:?} and mask {}x{} differ in size",
                image.shape(),
                mask.height(),
                mask.width()
            )));
        }
        Ok(SegmentationSample {
            id: id.to_string(),
            image,
            mask,
            blobs: 0,
        })
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<SegmentationSample>, DataError> {
        self.ids(split).into_iter().map(|id| self.load(id)).collect()
    }
}
