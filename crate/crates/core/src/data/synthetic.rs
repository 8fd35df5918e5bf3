//! Synthetic object-feature datasets with a planted class geometry.
//!
//! Classes are arranged in themes (animals, street scenes, food, indoor).
//! Each image is drawn from one theme, so label words co-occur by theme in
//! the captions. Prototype directions share a theme component; with
//! [`Geometry::Matched`] the prototype similarities therefore mirror the
//! co-occurrence structure of the caption words, and with
//! [`Geometry::Scrambled`] the prototypes are permuted across classes.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::dataset::{BoundingBox, ClassId, ClassTable, Dataset, ImageRecord, ObjectFeatureSet};
use crate::error::{Error, Result};

const THEMES: [(&str, [&str; 6]); 4] = [
    ("field", ["dog", "cat", "horse", "sheep", "cow", "bird"]),
    ("street", ["car", "traffic light", "bus", "truck", "bicycle", "motorcycle"]),
    ("table", ["pizza", "banana", "apple", "cake", "hot dog", "sandwich"]),
    ("room", ["chair", "couch", "bed", "teddy bear", "laptop", "tv"]),
];

/// Probability that an object is drawn from the image's own theme.
const IN_THEME_PROB: f64 = 0.85;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Geometry {
    Matched,
    Scrambled,
}

impl std::str::FromStr for Geometry {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "matched" => Ok(Geometry::Matched),
            "scrambled" => Ok(Geometry::Scrambled),
            other => Err(Error::Config(format!("unknown geometry {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    /// Per-coordinate standard deviation of the Gaussian noise around each
    /// class prototype.
    pub spread: f64,
    pub images: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub feature_dim: usize,
    pub geometry: Geometry,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_classes: 10,
            spread: 0.3,
            images: 500,
            min_objects: 2,
            max_objects: 4,
            feature_dim: 32,
            geometry: Geometry::Matched,
        }
    }
}

/// A generated dataset together with the ground-truth prototypes.
#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub dataset: Dataset,
    /// Unit-norm prototype of each class, indexed by class id.
    pub prototypes: Vec<Vec<f64>>,
    /// Theme of each class, indexed by class id.
    pub themes: Vec<usize>,
}

fn theme_count(num_classes: usize) -> usize {
    (num_classes / 3).clamp(2, THEMES.len())
}

fn class_name(theme: usize, slot: usize, class: ClassId) -> String {
    THEMES[theme]
        .1
        .get(slot)
        .map(|s| (*s).to_owned())
        .unwrap_or_else(|| format!("thing{class}"))
}

fn unit_gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let n = crate::tensor::norm(&v);
    v.into_iter().map(|x| x / n).collect()
}

fn phrase(labels: &[&str]) -> String {
    let parts: Vec<String> = labels.iter().map(|l| format!("a {l}")).collect();
    match parts.len() {
        1 => parts[0].clone(),
        n => format!("{} and {}", parts[..n - 1].join(", "), parts[n - 1]),
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 3 {
            return Err(Error::Config("synthetic data needs at least 3 classes".into()));
        }
        if self.images < 10 {
            return Err(Error::Config("synthetic data needs at least 10 images".into()));
        }
        if self.max_objects < 1 || self.min_objects > self.max_objects {
            return Err(Error::Config(format!(
                "objects per image range {}..={} is empty",
                self.min_objects, self.max_objects
            )));
        }
        if self.feature_dim == 0 || !(self.spread >= 0.0) {
            return Err(Error::Config("feature_dim must be positive and spread non-negative".into()));
        }
        Ok(())
    }

    pub fn generate(&self, seed: u64) -> Result<SyntheticDataset> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let themes_n = theme_count(self.num_classes);
        let themes: Vec<usize> = (0..self.num_classes).map(|c| c % themes_n).collect();
        let names: Vec<(ClassId, String)> = (0..self.num_classes)
            .map(|c| (c, class_name(themes[c], c / themes_n, c)))
            .collect();
        let classes = ClassTable::new(names.clone())?;

        let theme_dirs: Vec<Vec<f64>> = (0..themes_n).map(|_| unit_gaussian(&mut rng, self.feature_dim)).collect();
        let planted: Vec<Vec<f64>> = (0..self.num_classes)
            .map(|c| {
                let own = unit_gaussian(&mut rng, self.feature_dim);
                let mixed: Vec<f64> = own.iter().zip(&theme_dirs[themes[c]]).map(|(a, b)| a + b).collect();
                let n = crate::tensor::norm(&mixed);
                mixed.into_iter().map(|x| x / n).collect()
            })
            .collect();
        let prototypes = match self.geometry {
            Geometry::Matched => planted,
            Geometry::Scrambled => {
                let mut perm: Vec<usize> = (0..self.num_classes).collect();
                perm.shuffle(&mut rng);
                perm.iter().map(|&p| planted[p].clone()).collect()
            }
        };

        let by_theme: Vec<Vec<ClassId>> = (0..themes_n)
            .map(|t| (0..self.num_classes).filter(|&c| themes[c] == t).collect())
            .collect();

        let mut records = Vec::with_capacity(self.images);
        for i in 0..self.images {
            let theme = rng.random_range(0..themes_n);
            let k = rng.random_range(self.min_objects.max(1)..=self.max_objects);
            let mut features = Vec::with_capacity(k);
            let mut boxes = Vec::with_capacity(k);
            let mut labels = Vec::with_capacity(k);
            for _ in 0..k {
                let class = if rng.random_bool(IN_THEME_PROB) {
                    *by_theme[theme].choose(&mut rng).expect("theme has classes")
                } else {
                    rng.random_range(0..self.num_classes)
                };
                let f: Vec<f64> = prototypes[class]
                    .iter()
                    .map(|p| {
                        let z: f64 = rng.sample(StandardNormal);
                        p + self.spread * z
                    })
                    .collect();
                let x0 = rng.random_range(0.0..0.7);
                let y0 = rng.random_range(0.0..0.7);
                let w = rng.random_range(0.1..0.3);
                let h = rng.random_range(0.1..0.3);
                features.push(f);
                boxes.push(BoundingBox::new(x0, y0, x0 + w, y0 + h)?);
                labels.push(Some(class));
            }

            let mut present: Vec<ClassId> = labels.iter().flatten().copied().collect();
            present.sort_unstable();
            present.dedup();
            let asc: Vec<&str> = present.iter().map(|&c| names[c].1.as_str()).collect();
            let desc: Vec<&str> = asc.iter().rev().copied().collect();
            let context = THEMES[theme].0;
            let captions = vec![
                format!("{} in the {context}", phrase(&asc)),
                format!("there is {}", phrase(&desc)),
                format!("{} near the {context}", phrase(&desc)),
            ];

            records.push(ImageRecord {
                objects: ObjectFeatureSet {
                    image_id: format!("syn-{i:05}"),
                    features,
                    boxes,
                    labels,
                },
                captions,
            });
        }

        let n_train = self.images * 8 / 10;
        let n_val = self.images / 10;
        let test = records.split_off(n_train + n_val);
        let val = records.split_off(n_train);
        Ok(SyntheticDataset {
            dataset: Dataset {
                train: records,
                val,
                test,
                classes,
            },
            prototypes,
            themes,
        })
    }
}
