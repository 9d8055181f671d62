//! Dataset manifests and the stratified train/validation split.
//!
//! On disk a manifest is a CSV file whose first line is the comment
//! `# classes: <label>,<label>,...` followed by the header
//! `path,class_label,height_m,split,scene_seed`. Image paths are relative to
//! the manifest's directory unless absolute.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::{ClassLabel, HeightBucket};
use crate::seed::{hash64, SeedRng};

pub const CSV_HEADER: &str = "path,class_label,height_m,split,scene_seed";
const CLASSES_PREFIX: &str = "# classes: ";

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid manifest: {0}")]
    ManifestInvalid(String),
    #[error("train fraction must lie strictly between 0 and 1, got {0}")]
    InvalidFraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Unassigned,
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Unassigned => "unassigned",
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
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
            "unassigned" => Ok(Split::Unassigned),
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub image_path: String,
    pub class_label: ClassLabel,
    pub height_bucket: HeightBucket,
    pub split: Split,
    pub scene_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub class_list: Vec<ClassLabel>,
    pub records: Vec<ManifestRecord>,
    /// Non-fatal notes (e.g. a stratum that received no validation records).
    /// Not persisted in the CSV.
    pub warnings: Vec<String>,
}

impl DatasetManifest {
    pub fn class_index(&self, label: &ClassLabel) -> Option<usize> {
        self.class_list.iter().position(|c| c == label)
    }

    pub fn records_in(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.records_in(split).count()
    }

    /// Checks the class-list invariants.
    pub fn validate(&self) -> Result<(), ManifestError> {
        let mut seen = HashSet::new();
        for c in &self.class_list {
            if !seen.insert(c) {
                return Err(ManifestError::ManifestInvalid(format!("duplicate class {c}")));
            }
        }
        for r in &self.records {
            if !seen.contains(&r.class_label) {
                return Err(ManifestError::ManifestInvalid(format!(
                    "record {} has class {} absent from class list",
                    r.image_path, r.class_label
                )));
            }
        }
        Ok(())
    }

    /// Resolves a record's image path against the manifest directory.
    pub fn resolve(root: &Path, record: &ManifestRecord) -> PathBuf {
        let p = Path::new(&record.image_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            root.join(p)
        }
    }

    /// Errors naming the first record whose image is missing.
    pub fn verify_images(&self, root: &Path) -> Result<(), ManifestError> {
        for r in &self.records {
            let p = Self::resolve(root, r);
            if !p.is_file() {
                return Err(ManifestError::ManifestInvalid(format!(
                    "image {} does not exist",
                    p.display()
                )));
            }
        }
        Ok(())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ManifestError + '_ {
    move |source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(e: csv::Error) -> ManifestError {
    ManifestError::ManifestInvalid(e.to_string())
}

pub fn write_manifest_to<W: Write>(manifest: &DatasetManifest, out: W) -> Result<(), ManifestError> {
    manifest.validate()?;
    let mut out = out;
    let classes: Vec<&str> = manifest.class_list.iter().map(ClassLabel::as_str).collect();
    writeln!(out, "{CLASSES_PREFIX}{}", classes.join(","))
        .map_err(|e| ManifestError::ManifestInvalid(e.to_string()))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER.split(',')).map_err(csv_err)?;
    for r in &manifest.records {
        w.write_record([
            r.image_path.as_str(),
            r.class_label.as_str(),
            r.height_bucket.tag(),
            r.split.as_str(),
            &r.scene_seed.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| ManifestError::ManifestInvalid(e.to_string()))?;
    Ok(())
}

pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<(), ManifestError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    write_manifest_to(manifest, &mut out)?;
    out.flush().map_err(io_err(path))
}

pub fn read_manifest_from<R: Read>(input: R) -> Result<DatasetManifest, ManifestError> {
    let mut reader = BufReader::new(input);
    let mut first = String::new();
    reader
        .read_line(&mut first)
        .map_err(|e| ManifestError::ManifestInvalid(e.to_string()))?;
    let classes = first
        .trim_end_matches(['\r', '\n'])
        .strip_prefix(CLASSES_PREFIX)
        .ok_or_else(|| ManifestError::ManifestInvalid("missing `# classes:` line".into()))?;
    let class_list = if classes.is_empty() {
        Vec::new()
    } else {
        classes
            .split(',')
            .map(|s| ClassLabel::new(s).map_err(|e| ManifestError::ManifestInvalid(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?
    };

    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if header.join(",") != CSV_HEADER {
        return Err(ManifestError::ManifestInvalid(format!(
            "expected header `{CSV_HEADER}`, found `{}`",
            header.join(",")
        )));
    }
    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(csv_err)?;
        let bad = |what: &str| ManifestError::ManifestInvalid(format!("row {}: {what}", i + 1));
        if row.len() != 5 {
            return Err(bad("expected 5 fields"));
        }
        let class_label = ClassLabel::new(&row[1]).map_err(|e| bad(&e.to_string()))?;
        let height_bucket: HeightBucket = row[2].parse().map_err(|_| bad("invalid height_m"))?;
        let split: Split = row[3].parse().map_err(|e: String| bad(&e))?;
        let scene_seed: u64 = row[4].parse().map_err(|_| bad("invalid scene_seed"))?;
        records.push(ManifestRecord {
            image_path: row[0].to_string(),
            class_label,
            height_bucket,
            split,
            scene_seed,
        });
    }
    let manifest = DatasetManifest {
        class_list,
        records,
        warnings: Vec::new(),
    };
    manifest.validate()?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest, ManifestError> {
    let file = File::open(path).map_err(io_err(path))?;
    read_manifest_from(file)
}

/// Allocates `target` items over strata with fractional quotas by the
/// largest-remainder rule; ties go to the earlier stratum.
fn largest_remainder(quotas: &[f64], target: usize) -> Vec<usize> {
    let mut alloc: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = alloc.iter().sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(target.saturating_sub(assigned)) {
        alloc[i] += 1;
    }
    alloc
}

/// Partitions `total` items over integer weights by largest remainder.
pub fn partition_counts(total: usize, weights: &[u64]) -> Vec<usize> {
    let sum: u64 = weights.iter().sum();
    if sum == 0 {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|&w| total as f64 * w as f64 / sum as f64).collect();
    largest_remainder(&quotas, total)
}

/// Stratified split into train and val.
///
/// Records already marked `test` are left alone; every other record is
/// reassigned. Each class receives `round(train_fraction · n_class)` training
/// records, apportioned over its height strata by largest remainder. Within a
/// stratum the records are shuffled by a generator seeded with
/// `hash64(split_seed, class, height)` and the first ones go to train.
pub fn split_dataset(
    manifest: &DatasetManifest,
    train_fraction: f64,
    split_seed: u64,
) -> Result<DatasetManifest, ManifestError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(ManifestError::InvalidFraction(train_fraction));
    }
    manifest.validate()?;
    let mut out = manifest.clone();
    out.warnings.clear();

    let mut strata: BTreeMap<(usize, HeightBucket), Vec<usize>> = BTreeMap::new();
    for (i, r) in manifest.records.iter().enumerate() {
        if r.split == Split::Test {
            continue;
        }
        let class = manifest.class_index(&r.class_label).expect("validated");
        strata.entry((class, r.height_bucket)).or_default().push(i);
    }

    for (class_idx, class) in manifest.class_list.iter().enumerate() {
        let keys: Vec<(usize, HeightBucket)> = strata.keys().filter(|k| k.0 == class_idx).copied().collect();
        let sizes: Vec<usize> = keys.iter().map(|k| strata[k].len()).collect();
        let n_class: usize = sizes.iter().sum();
        let target = (train_fraction * n_class as f64).round() as usize;
        let quotas: Vec<f64> = sizes.iter().map(|&s| train_fraction * s as f64).collect();
        let alloc = largest_remainder(&quotas, target);

        for (key, n_train) in keys.iter().zip(alloc) {
            let members = &strata[key];
            let mut shuffled = members.clone();
            let seed = hash64(&[split_seed.into(), class.as_str().into(), key.1.tag().into()]);
            SeedRng::new(seed).shuffle(&mut shuffled);
            for (rank, &i) in shuffled.iter().enumerate() {
                out.records[i].split = if rank < n_train { Split::Train } else { Split::Val };
            }
            if n_train == 0 || n_train == members.len() {
                out.warnings.push(format!(
                    "stratum {class}@{}m ({} records) has {} train / {} val",
                    key.1,
                    members.len(),
                    n_train,
                    members.len() - n_train
                ));
            }
        }
    }
    Ok(out)
}
