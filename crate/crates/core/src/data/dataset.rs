//! Per-image records, the class table, and the JSON-lines file format.
//!
//! One record per line:
//! `{"id": .., "features": [[..]], "boxes": [[x_min,y_min,x_max,y_max]], "labels": [..], "captions": [..]}`.
//! A label of `-1` marks an object without a class (UNK).

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::vocab::{normalize, Vocabulary};
use crate::error::{Error, Result};

pub type ClassId = usize;

/// Label id written to files for objects without a class.
pub const UNK_LABEL: i64 = -1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let ok = [x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite()) && x_min < x_max && y_min < y_max;
        if !ok {
            return Err(Error::DataValidation(format!(
                "invalid box [{x_min}, {y_min}, {x_max}, {y_max}]"
            )));
        }
        Ok(BoundingBox { x_min, y_min, x_max, y_max })
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    pub fn is_normalized(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| (0.0..=1.0).contains(v))
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BoundingBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

/// Class id to label string. UNK has no entry.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClassTable {
    names: BTreeMap<ClassId, String>,
}

impl ClassTable {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = (ClassId, S)>) -> Result<Self> {
        let mut table = BTreeMap::new();
        let mut seen = BTreeSet::new();
        for (id, name) in names {
            let name = name.into();
            if !seen.insert(name.clone()) {
                return Err(Error::DataValidation(format!("duplicate class label {name:?}")));
            }
            if table.insert(id, name).is_some() {
                return Err(Error::DataValidation(format!("duplicate class id {id}")));
            }
        }
        Ok(ClassTable { names: table })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: ClassId) -> Option<&str> {
        self.names.get(&id).map(String::as_str)
    }

    pub fn contains(&self, id: ClassId) -> bool {
        self.names.contains_key(&id)
    }

    pub fn ids(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.names.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ClassId, &str)> {
        self.names.iter().map(|(k, v)| (*k, v.as_str()))
    }

    /// Normalized tokens of a label, e.g. `["traffic", "light"]`.
    pub fn label_tokens(&self, id: ClassId) -> Option<Vec<String>> {
        self.name(id).map(normalize)
    }

    /// Vocabulary ids of every label's tokens. Fails when a token is not in
    /// the vocabulary, since its embedding would be the UNK embedding.
    pub fn label_token_ids(&self, vocab: &Vocabulary) -> Result<BTreeMap<ClassId, Vec<usize>>> {
        let mut out = BTreeMap::new();
        for (id, name) in self.iter() {
            let toks = normalize(name);
            if toks.is_empty() {
                return Err(Error::DataValidation(format!("class {id} has an empty label")));
            }
            let mut ids = Vec::with_capacity(toks.len());
            for t in &toks {
                let tid = vocab.id(t).ok_or_else(|| {
                    Error::Config(format!("label token {t:?} of class {name:?} is not in the caption vocabulary"))
                })?;
                ids.push(tid);
            }
            out.insert(id, ids);
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw: BTreeMap<String, String> = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        let mut pairs = Vec::new();
        for (k, v) in raw {
            let id: i64 = k
                .parse()
                .map_err(|_| Error::DataValidation(format!("class id {k:?} is not an integer")))?;
            if id < 0 {
                continue;
            }
            pairs.push((id as ClassId, v));
        }
        ClassTable::new(pairs)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let raw: BTreeMap<String, &String> = self.names.iter().map(|(k, v)| (k.to_string(), v)).collect();
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, &raw)?;
        writeln!(w)?;
        Ok(())
    }
}

/// The `k` object vectors of one image with their boxes and labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectFeatureSet {
    pub image_id: String,
    pub features: Vec<Vec<f64>>,
    pub boxes: Vec<BoundingBox>,
    /// `None` is UNK.
    pub labels: Vec<Option<ClassId>>,
}

impl ObjectFeatureSet {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map(Vec::len).unwrap_or(0)
    }

    pub fn validate(&self, classes: Option<&ClassTable>) -> Result<()> {
        let id = &self.image_id;
        if self.features.is_empty() {
            return Err(Error::DataValidation(format!("image {id}: no object vectors")));
        }
        let d = self.dim();
        if d == 0 || self.features.iter().any(|f| f.len() != d) {
            return Err(Error::DataValidation(format!("image {id}: object vectors differ in dimension")));
        }
        if self.features.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::DataValidation(format!("image {id}: non-finite feature value")));
        }
        if self.boxes.len() != self.len() || self.labels.len() != self.len() {
            return Err(Error::DataValidation(format!(
                "image {id}: {} features, {} boxes, {} labels",
                self.len(),
                self.boxes.len(),
                self.labels.len()
            )));
        }
        if let Some(table) = classes {
            if let Some(bad) = self.labels.iter().flatten().find(|c| !table.contains(**c)) {
                return Err(Error::DataValidation(format!("image {id}: unknown class id {bad}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageRecord {
    pub objects: ObjectFeatureSet,
    pub captions: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct RawRecord {
    id: String,
    features: Vec<Vec<f64>>,
    #[serde(default)]
    boxes: Vec<BoundingBox>,
    #[serde(default)]
    labels: Vec<i64>,
    #[serde(default)]
    captions: Vec<String>,
}

impl ImageRecord {
    fn from_raw(raw: RawRecord) -> Result<Self> {
        let labels = raw
            .labels
            .iter()
            .map(|&l| match l {
                UNK_LABEL => Ok(None),
                l if l >= 0 => Ok(Some(l as ClassId)),
                l => Err(Error::DataValidation(format!("image {}: invalid label {l}", raw.id))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ImageRecord {
            objects: ObjectFeatureSet {
                image_id: raw.id,
                features: raw.features,
                boxes: raw.boxes,
                labels,
            },
            captions: raw.captions,
        })
    }

    fn to_raw(&self) -> RawRecord {
        RawRecord {
            id: self.objects.image_id.clone(),
            features: self.objects.features.clone(),
            boxes: self.objects.boxes.clone(),
            labels: self
                .objects
                .labels
                .iter()
                .map(|l| l.map(|c| c as i64).unwrap_or(UNK_LABEL))
                .collect(),
            captions: self.captions.clone(),
        }
    }
}

pub fn read_jsonl(path: &Path) -> Result<Vec<ImageRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| {
            Error::DataValidation(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        out.push(ImageRecord::from_raw(raw)?);
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, records: &[ImageRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, &r.to_raw())?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Train/validation/test splits sharing one class table.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<ImageRecord>,
    pub val: Vec<ImageRecord>,
    pub test: Vec<ImageRecord>,
    pub classes: ClassTable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

pub const TRAIN_FILE: &str = "train.jsonl";
pub const VAL_FILE: &str = "val.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const CLASSES_FILE: &str = "classes.json";

impl Dataset {
    pub fn split(&self, split: Split) -> &[ImageRecord] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.train
            .iter()
            .chain(&self.val)
            .chain(&self.test)
            .map(|r| r.objects.dim())
            .next()
            .unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.feature_dim();
        for r in self.train.iter().chain(&self.val).chain(&self.test) {
            r.objects.validate(Some(&self.classes))?;
            if r.objects.dim() != d {
                return Err(Error::DataValidation(format!(
                    "image {}: feature dim {} differs from {d}",
                    r.objects.image_id,
                    r.objects.dim()
                )));
            }
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let ds = Dataset {
            train: read_jsonl(&dir.join(TRAIN_FILE))?,
            val: read_jsonl(&dir.join(VAL_FILE))?,
            test: read_jsonl(&dir.join(TEST_FILE))?,
            classes: ClassTable::load(&dir.join(CLASSES_FILE))?,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_jsonl(&dir.join(TRAIN_FILE), &self.train)?;
        write_jsonl(&dir.join(VAL_FILE), &self.val)?;
        write_jsonl(&dir.join(TEST_FILE), &self.test)?;
        self.classes.save(&dir.join(CLASSES_FILE))
    }
}

/// Teacher-forcing targets: each item pairs an image index with the encoded
/// ground-truth sequence `y*_{1..T}` (EOS-terminated, BOS implicit).
#[derive(Clone, Debug, PartialEq)]
pub struct CaptionBatch {
    pub items: Vec<(usize, Vec<usize>)>,
}

impl CaptionBatch {
    /// One item per (image, caption) pair.
    pub fn from_records(records: &[ImageRecord], vocab: &Vocabulary, max_len: usize) -> Self {
        let items = records
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.captions.iter().map(move |c| (i, vocab.encode(c, max_len))))
            .collect();
        CaptionBatch { items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}
