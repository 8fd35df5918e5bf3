//! Structure of the object embedding space relative to the word embedding
//! space: class centroids, nearest-neighbor overlap (mNNO), similarity
//! correlation (ρ_vis) and cluster homogeneity/separation (C_intra/C_inter),
//! for both the original object features and their projections.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{normalize, ClassId, ClassTable, ImageRecord, Vocabulary};
use crate::error::{Error, Result};
use crate::losses::{label_embedding, LabelTokens};
use crate::model::{project_features, ModelParams};
use crate::tensor::{self, cosine, dot, norm};

/// Word-space and object-space vectors of the same classes, row `i` of both
/// belonging to `classes[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedSpaces {
    pub classes: Vec<ClassId>,
    pub word: Vec<Vec<f64>>,
    pub object: Vec<Vec<f64>>,
}

impl AlignedSpaces {
    pub fn new(classes: Vec<ClassId>, word: Vec<Vec<f64>>, object: Vec<Vec<f64>>) -> Result<Self> {
        if word.len() != classes.len() || object.len() != classes.len() {
            return Err(Error::shape(
                "aligned spaces",
                &[classes.len()],
                &[word.len(), object.len()],
            ));
        }
        Ok(AlignedSpaces { classes, word, object })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}

/// Mean vector of every labeled class; UNK objects are ignored.
pub fn class_centroids(vectors: &[Vec<f64>], labels: &[Option<ClassId>]) -> Result<BTreeMap<ClassId, Vec<f64>>> {
    if vectors.len() != labels.len() {
        return Err(Error::shape("class_centroids", &[vectors.len()], &[labels.len()]));
    }
    let mut groups: BTreeMap<ClassId, Vec<&[f64]>> = BTreeMap::new();
    for (v, l) in vectors.iter().zip(labels) {
        if let Some(c) = l {
            groups.entry(*c).or_default().push(v);
        }
    }
    if groups.is_empty() {
        return Err(Error::Domain("no labeled vectors to form centroids".into()));
    }
    groups
        .into_iter()
        .map(|(c, vs)| Ok((c, tensor::mean_vector(&vs)?)))
        .collect()
}

fn unit(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if n == 0.0 {
        return Err(Error::Domain("zero-norm vector has no direction".into()));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Indices of the `k` most cosine-similar other rows of `space`; ties go to
/// the lower index.
pub fn nearest_neighbors(space: &[Vec<f64>], i: usize, k: usize) -> Result<Vec<usize>> {
    let mut sims = Vec::with_capacity(space.len().saturating_sub(1));
    for (j, v) in space.iter().enumerate() {
        if j != i {
            sims.push((cosine(&space[i], v)?, j));
        }
    }
    sims.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(sims.into_iter().take(k).map(|(_, j)| j).collect())
}

/// Mean over classes of the fraction of shared `k` nearest neighbors in the
/// word and object spaces.
pub fn mnno(spaces: &AlignedSpaces, k: usize) -> Result<f64> {
    let n = spaces.len();
    if k == 0 || k >= n {
        return Err(Error::Domain(format!("mNNO needs 0 < k < class count, got k={k} with {n} classes")));
    }
    let mut total = 0.0;
    for i in 0..n {
        let a = nearest_neighbors(&spaces.word, i, k)?;
        let b = nearest_neighbors(&spaces.object, i, k)?;
        total += a.iter().filter(|j| b.contains(j)).count() as f64 / k as f64;
    }
    Ok(total / n as f64)
}

fn pair_cosines(space: &[Vec<f64>]) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for i in 0..space.len() {
        for j in i + 1..space.len() {
            out.push(cosine(&space[i], &space[j])?);
        }
    }
    Ok(out)
}

/// Pearson correlation between the pairwise class cosines of the object
/// space and those of the word space.
pub fn rho_vis(spaces: &AlignedSpaces) -> Result<f64> {
    if spaces.len() < 3 {
        return Err(Error::Domain(format!("ρ_vis needs at least 3 classes, got {}", spaces.len())));
    }
    tensor::pearson(&pair_cosines(&spaces.object)?, &pair_cosines(&spaces.word)?)
}

/// Cluster separation and homogeneity, both in [0, 100].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Separation {
    pub c_inter: f64,
    pub c_intra: f64,
}

/// After subtracting the mean of all vectors, UNK objects included:
/// `C_intra` is 100 × the mean (over classes) within-class pairwise cosine,
/// floored at 0; `C_inter` is 100 × the mean over centroid pairs of
/// `(1 - cos) / 2`. Classes with a single vector do not contribute to
/// `C_intra`.
pub fn cluster_separation(vectors: &[Vec<f64>], labels: &[Option<ClassId>]) -> Result<Separation> {
    if vectors.len() != labels.len() {
        return Err(Error::shape("cluster_separation", &[vectors.len()], &[labels.len()]));
    }
    let labeled: Vec<(&[f64], ClassId)> = vectors
        .iter()
        .zip(labels)
        .filter_map(|(v, l)| l.map(|c| (v.as_slice(), c)))
        .collect();
    let all: Vec<&[f64]> = vectors.iter().map(Vec::as_slice).collect();
    let mean = tensor::mean_vector(&all)?;
    let degenerate = |_| Error::DegenerateStatistics("a centered vector has zero norm".into());

    let mut groups: BTreeMap<ClassId, Vec<Vec<f64>>> = BTreeMap::new();
    for (v, c) in &labeled {
        let centered: Vec<f64> = v.iter().zip(&mean).map(|(a, m)| a - m).collect();
        groups.entry(*c).or_default().push(centered);
    }
    if groups.len() < 2 {
        return Err(Error::Domain("cluster separation needs at least 2 classes".into()));
    }

    let mut centroids = Vec::with_capacity(groups.len());
    let mut intra = Vec::new();
    for (c, vs) in &groups {
        let refs: Vec<&[f64]> = vs.iter().map(Vec::as_slice).collect();
        centroids.push(unit(&tensor::mean_vector(&refs)?).map_err(degenerate)?);
        if vs.len() < 2 {
            log::warn!("class {c} has a single vector and is left out of C_intra");
            continue;
        }
        let units = vs.iter().map(|v| unit(v)).collect::<Result<Vec<_>>>().map_err(degenerate)?;
        let mut sum = 0.0;
        let mut pairs = 0usize;
        for i in 0..units.len() {
            for j in i + 1..units.len() {
                sum += dot(&units[i], &units[j]);
                pairs += 1;
            }
        }
        intra.push(sum / pairs as f64);
    }

    let mut inter = 0.0;
    let mut pairs = 0usize;
    for i in 0..centroids.len() {
        for j in i + 1..centroids.len() {
            inter += (1.0 - dot(&centroids[i], &centroids[j])) / 2.0;
            pairs += 1;
        }
    }
    let c_intra = if intra.is_empty() {
        0.0
    } else {
        100.0 * (intra.iter().sum::<f64>() / intra.len() as f64).max(0.0)
    };
    Ok(Separation {
        c_inter: 100.0 * inter / pairs as f64,
        c_intra,
    })
}

/// Structure statistics of one object space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceStats {
    pub mnno: f64,
    pub rho_vis: f64,
    pub c_inter: f64,
    pub c_intra: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    /// Test CIDEr ×100, when it was computed.
    #[serde(rename = "CIDEr")]
    pub cider: Option<f64>,
    pub k: usize,
    pub classes: usize,
    pub original: SpaceStats,
    pub projected: SpaceStats,
}

impl AnalysisReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?)
    }
}

/// One line of the vector export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassVectors {
    pub label: String,
    pub word_vector: Vec<f64>,
    pub centroid_original: Vec<f64>,
    pub centroid_projected: Vec<f64>,
}

pub fn write_vector_export(path: &Path, rows: &[ClassVectors]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn stats(spaces: &AlignedSpaces, vectors: &[Vec<f64>], labels: &[Option<ClassId>], k: usize) -> Result<SpaceStats> {
    let sep = cluster_separation(vectors, labels)?;
    Ok(SpaceStats {
        mnno: mnno(spaces, k)?,
        rho_vis: rho_vis(spaces)?,
        c_inter: sep.c_inter,
        c_intra: sep.c_intra,
    })
}

/// Structure analysis of the labeled objects in `records` under `params`.
/// The word space holds the label embeddings from `W_e`; the object spaces
/// hold class centroids of the raw features and of their projections.
pub fn analyze_spaces(
    params: &ModelParams,
    vocab: &Vocabulary,
    classes: &ClassTable,
    records: &[ImageRecord],
    k: usize,
) -> Result<(AnalysisReport, Vec<ClassVectors>)> {
    let mut original = Vec::new();
    let mut labels = Vec::new();
    for r in records {
        original.extend(r.objects.features.iter().cloned());
        labels.extend(r.objects.labels.iter().copied());
    }
    if labels.iter().all(Option::is_none) {
        return Err(Error::DataValidation("analysis needs labeled objects".into()));
    }
    let projected = project_features(params, &original)?;
    let orig_centroids = class_centroids(&original, &labels)?;
    let proj_centroids = class_centroids(&projected, &labels)?;

    let mut tokens = LabelTokens::new();
    for &c in orig_centroids.keys() {
        let name = classes
            .name(c)
            .ok_or_else(|| Error::DataValidation(format!("class {c} missing from the class table")))?;
        let ids = normalize(name)
            .iter()
            .map(|t| {
                vocab
                    .id(t)
                    .ok_or_else(|| Error::Config(format!("label token {t:?} is not in the vocabulary")))
            })
            .collect::<Result<Vec<_>>>()?;
        tokens.insert(c, ids);
    }

    let class_ids: Vec<ClassId> = orig_centroids.keys().copied().collect();
    let word = class_ids
        .iter()
        .map(|&c| label_embedding(&params.w_e, Some(c), &tokens))
        .collect::<Result<Vec<_>>>()?;
    let orig: Vec<Vec<f64>> = orig_centroids.values().cloned().collect();
    let proj: Vec<Vec<f64>> = proj_centroids.values().cloned().collect();

    let orig_spaces = AlignedSpaces::new(class_ids.clone(), word.clone(), orig.clone())?;
    let proj_spaces = AlignedSpaces::new(class_ids.clone(), word.clone(), proj.clone())?;
    let report = AnalysisReport {
        cider: None,
        k,
        classes: class_ids.len(),
        original: stats(&orig_spaces, &original, &labels, k)?,
        projected: stats(&proj_spaces, &projected, &labels, k)?,
    };
    let export = class_ids
        .iter()
        .enumerate()
        .map(|(i, &c)| ClassVectors {
            label: classes.name(c).unwrap_or_default().to_owned(),
            word_vector: word[i].clone(),
            centroid_original: orig[i].clone(),
            centroid_projected: proj[i].clone(),
        })
        .collect();
    Ok((report, export))
}
