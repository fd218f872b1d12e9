//! Dataset manifests, subjective scores, and leakage-free split planning.
//!
//! A manifest is a JSON-lines file: one [`ManifestRecord`] object per line,
//! with `#`-prefixed comment lines allowed anywhere. Image paths are stored
//! relative to the manifest's directory.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{load_image, ImageRGB};
use crate::maskgen::BinaryMask;

pub const VALIDATION_FRACTION: f64 = 0.2;
pub const TEST_FRACTION: f64 = 0.2;
pub const ROTATIONS: [u32; 4] = [0, 90, 180, 270];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub image_path: PathBuf,
    pub content_id: String,
    pub viewpoint_id: String,
    pub algorithm_id: String,
    pub dmos: f64,
    #[serde(default)]
    pub rotation: u32,
    /// Companion hole mask for inpainter training pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<PathBuf>,
}

impl ManifestRecord {
    pub fn key(&self) -> RecordKey {
        RecordKey {
            content_id: self.content_id.clone(),
            viewpoint_id: self.viewpoint_id.clone(),
            algorithm_id: self.algorithm_id.clone(),
            rotation: self.rotation,
        }
    }

    pub fn base_key(&self) -> BaseKey {
        BaseKey {
            content_id: self.content_id.clone(),
            viewpoint_id: self.viewpoint_id.clone(),
            algorithm_id: self.algorithm_id.clone(),
        }
    }
}

/// Unique identity of a record inside one manifest.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RecordKey {
    pub content_id: String,
    pub viewpoint_id: String,
    pub algorithm_id: String,
    pub rotation: u32,
}

impl fmt::Display for RecordKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}/{}",
            self.content_id, self.viewpoint_id, self.algorithm_id, self.rotation
        )
    }
}

impl std::str::FromStr for RecordKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('/').collect();
        if parts.len() != 4 {
            return Err(Error::Manifest(format!("malformed record key `{s}`")));
        }
        let rotation = parts[3]
            .parse()
            .map_err(|_| Error::Manifest(format!("bad rotation in key `{s}`")))?;
        Ok(Self {
            content_id: parts[0].to_owned(),
            viewpoint_id: parts[1].to_owned(),
            algorithm_id: parts[2].to_owned(),
            rotation,
        })
    }
}

impl Serialize for RecordKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RecordKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A record before rotation augmentation; all rotations of it share this key.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BaseKey {
    pub content_id: String,
    pub viewpoint_id: String,
    pub algorithm_id: String,
}

#[derive(Clone, Debug, Default)]
pub struct Manifest {
    /// Directory relative paths are resolved against.
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>, records: Vec<ManifestRecord>) -> Result<Self> {
        let m = Self {
            root: root.into(),
            records,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (line, rec) in self.records.iter().enumerate() {
            if !rec.dmos.is_finite() {
                return Err(Error::Manifest(format!(
                    "record {line} ({}) has non-finite dmos",
                    rec.key()
                )));
            }
            if !ROTATIONS.contains(&rec.rotation) {
                return Err(Error::Manifest(format!(
                    "record {line} has rotation {}",
                    rec.rotation
                )));
            }
            for id in [&rec.content_id, &rec.viewpoint_id, &rec.algorithm_id] {
                if id.is_empty() || id.contains('/') {
                    return Err(Error::Manifest(format!(
                        "record {line}: identifier `{id}` must be non-empty and free of '/'"
                    )));
                }
            }
            if !seen.insert(rec.key()) {
                return Err(Error::Manifest(format!("duplicate record key {}", rec.key())));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.root.join(path)
        }
    }

    pub fn get(&self, key: &RecordKey) -> Option<&ManifestRecord> {
        self.records.iter().find(|r| &r.key() == key)
    }

    pub fn index(&self) -> BTreeMap<RecordKey, usize> {
        self.records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.key(), i))
            .collect()
    }

    /// Loads the record's image and applies its rotation (counter-clockwise).
    pub fn load_image(&self, rec: &ManifestRecord) -> Result<ImageRGB> {
        load_image(&self.resolve(&rec.image_path))?.rotate(rec.rotation)
    }

    /// Loads the record's companion mask, rotated like its image.
    pub fn load_mask(&self, rec: &ManifestRecord) -> Result<BinaryMask> {
        let path = rec
            .mask_path
            .as_ref()
            .ok_or_else(|| Error::Manifest(format!("record {} has no mask", rec.key())))?;
        BinaryMask::load_png(&self.resolve(path))?.rotate(rec.rotation)
    }

    /// Adds the 90°, 180° and 270° variants of every unrotated record that
    /// does not already have them.
    pub fn with_rotations(&self) -> Result<Self> {
        let existing: HashSet<RecordKey> = self.records.iter().map(ManifestRecord::key).collect();
        let mut records = self.records.clone();
        for rec in self.records.iter().filter(|r| r.rotation == 0) {
            for rot in &ROTATIONS[1..] {
                let r = ManifestRecord {
                    rotation: *rot,
                    ..rec.clone()
                };
                if !existing.contains(&r.key()) {
                    records.push(r);
                }
            }
        }
        Self::new(self.root.clone(), records)
    }

    /// Reads a manifest; `#` lines and blank lines are skipped.
    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let file = fs::File::open(path)?;
        let mut records = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let rec: ManifestRecord = serde_json::from_str(trimmed)
                .map_err(|e| Error::Manifest(format!("{}:{}: {e}", path.display(), n + 1)))?;
            records.push(rec);
        }
        let root = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Self::new(root, records)
    }

    /// Writes records as JSON lines, preceded by the given comment lines.
    pub fn write(&self, path: &Path, comments: &[String]) -> Result<()> {
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        for c in comments {
            for line in c.lines() {
                writeln!(out, "# {line}")?;
            }
        }
        for rec in &self.records {
            serde_json::to_writer(&mut out, rec)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Partition of a manifest into a validation pool and an evaluation pool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub validation_ids: BTreeSet<RecordKey>,
    pub eval_ids: BTreeSet<RecordKey>,
    pub seed: u64,
}

/// Number of items that make up `fraction` of `n`, never below one.
pub fn fraction_count(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).max(1)
}

/// Puts ≈20% of the base images (with all their rotations) into validation.
pub fn make_split(records: &[ManifestRecord], seed: u64) -> Result<SplitPlan> {
    if records.is_empty() {
        return Err(Error::EmptyManifest);
    }
    let mut groups: BTreeMap<BaseKey, Vec<RecordKey>> = BTreeMap::new();
    for r in records {
        groups.entry(r.base_key()).or_default().push(r.key());
    }
    let mut bases: Vec<BaseKey> = groups.keys().cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    bases.shuffle(&mut rng);
    let n_val = fraction_count(bases.len(), VALIDATION_FRACTION);
    let mut plan = SplitPlan {
        validation_ids: BTreeSet::new(),
        eval_ids: BTreeSet::new(),
        seed,
    };
    for (i, base) in bases.iter().enumerate() {
        let target = if i < n_val {
            &mut plan.validation_ids
        } else {
            &mut plan.eval_ids
        };
        target.extend(groups[base].iter().cloned());
    }
    Ok(plan)
}

/// One train/test partition of the evaluation pool.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<RecordKey>,
    pub test: Vec<RecordKey>,
}

/// Generates `n_folds` random ≈80/20 partitions of `eval_ids` such that no
/// (content, viewpoint) pair straddles train and test.
pub fn make_folds(
    eval_ids: &BTreeSet<RecordKey>,
    n_folds: usize,
    seed: u64,
) -> Result<Vec<Fold>> {
    if eval_ids.is_empty() {
        return Err(Error::InfeasibleSplit("evaluation set is empty".into()));
    }
    if n_folds == 0 {
        return Err(Error::InvalidParam("n_folds must be at least 1".into()));
    }
    let mut groups: BTreeMap<(&str, &str), Vec<&RecordKey>> = BTreeMap::new();
    for key in eval_ids {
        groups
            .entry((key.content_id.as_str(), key.viewpoint_id.as_str()))
            .or_default()
            .push(key);
    }
    if groups.len() < 2 {
        return Err(Error::InfeasibleSplit(format!(
            "need at least two (content, viewpoint) groups, found {}",
            groups.len()
        )));
    }
    let groups: Vec<Vec<&RecordKey>> = groups.into_values().collect();
    let target = fraction_count(eval_ids.len(), TEST_FRACTION);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..groups.len()).collect();
    let mut folds = Vec::with_capacity(n_folds);
    for _ in 0..n_folds {
        order.shuffle(&mut rng);
        let mut in_test = vec![false; groups.len()];
        let mut test_len = 0;
        for &g in &order {
            if test_len == target {
                break;
            }
            if test_len + groups[g].len() <= target {
                in_test[g] = true;
                test_len += groups[g].len();
            }
        }
        if test_len == 0 {
            // every group is larger than the target; take one whole group
            in_test[order[0]] = true;
        }
        let mut fold = Fold {
            train: Vec::new(),
            test: Vec::new(),
        };
        for (g, members) in groups.iter().enumerate() {
            let side = if in_test[g] { &mut fold.test } else { &mut fold.train };
            side.extend(members.iter().map(|k| (*k).clone()));
        }
        fold.train.sort();
        fold.test.sort();
        folds.push(fold);
    }
    Ok(folds)
}
