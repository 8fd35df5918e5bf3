//! Training objective: caption cross-entropy plus the cluster (triplet
//! ranking) and perceptual (similarity correlation) grounding losses.
//!
//! Both grounding losses work on a pool of projected object vectors gathered
//! from every image of a batch. UNK objects and zero-norm vectors are left
//! out of the pool. Each loss draws its samples from its own random stream,
//! so switching one of them off does not change the other's draws.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ClassId;
use crate::error::{Error, Result};
use crate::tape::{GradientTape, Var};
use crate::tensor::{self, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Triplet margin γ.
    pub margin: f64,
    /// Weight of the cluster loss; 0 disables it.
    pub alpha_c: f64,
    /// Weight of the perceptual loss; 0 disables it.
    pub alpha_p: f64,
    /// Draws per batch for each sampler.
    pub samples: usize,
    pub seed: u64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            margin: 0.5,
            alpha_c: 1.0,
            alpha_p: 1.0,
            samples: 500,
            seed: 0,
        }
    }
}

impl LossConfig {
    /// Cross-entropy only.
    pub fn baseline() -> Self {
        LossConfig {
            alpha_c: 0.0,
            alpha_p: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0) {
            return Err(Error::Config(format!("margin must be non-negative, got {}", self.margin)));
        }
        if !(self.alpha_c >= 0.0) || !(self.alpha_p >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if self.samples == 0 {
            return Err(Error::Config("sample size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn cluster_enabled(&self) -> bool {
        self.alpha_c > 0.0
    }

    pub fn perceptual_enabled(&self) -> bool {
        self.alpha_p > 0.0
    }
}

/// Independent random streams for the two samplers.
pub struct Samplers {
    pub triplets: ChaCha8Rng,
    pub pairs: ChaCha8Rng,
}

impl Samplers {
    pub fn new(seed: u64) -> Self {
        let mut triplets = ChaCha8Rng::seed_from_u64(seed);
        triplets.set_stream(1);
        let mut pairs = ChaCha8Rng::seed_from_u64(seed);
        pairs.set_stream(2);
        Samplers { triplets, pairs }
    }
}

/// Projected object vectors (tape nodes) with their class ids.
#[derive(Clone, Debug, Default)]
pub struct LabeledPool {
    pub vectors: Vec<Var>,
    pub labels: Vec<ClassId>,
}

impl LabeledPool {
    /// Gathers every labeled, non-zero object vector. `images` holds the
    /// projected vectors of each image next to that image's labels.
    pub fn gather(tape: &GradientTape<'_>, images: &[(Vec<Var>, Vec<Option<ClassId>>)]) -> Self {
        let mut pool = LabeledPool::default();
        let mut zero = 0usize;
        for (vectors, labels) in images {
            for (&v, label) in vectors.iter().zip(labels) {
                let Some(c) = *label else { continue };
                if tape.value(v).norm() == 0.0 {
                    zero += 1;
                    continue;
                }
                pool.vectors.push(v);
                pool.labels.push(c);
            }
        }
        if zero > 0 {
            log::warn!("dropped {zero} zero-norm object vectors from the grounding pool");
        }
        pool
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn members_by_class(labels: &[ClassId]) -> BTreeMap<ClassId, Vec<usize>> {
    let mut by_class: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
    for (i, &c) in labels.iter().enumerate() {
        by_class.entry(c).or_default().push(i);
    }
    by_class
}

/// `n` draws of (anchor, positive, negative). The anchor is uniform over the
/// pool, the positive uniform over the other members of its class and the
/// negative uniform over members of other classes. Draws without a valid
/// positive or negative are dropped.
pub fn sample_triplets(labels: &[ClassId], n: usize, rng: &mut impl Rng) -> Vec<(usize, usize, usize)> {
    if labels.is_empty() {
        return Vec::new();
    }
    let by_class = members_by_class(labels);
    let others: BTreeMap<ClassId, Vec<usize>> = by_class
        .keys()
        .map(|&c| (c, (0..labels.len()).filter(|&i| labels[i] != c).collect()))
        .collect();
    let mut out = Vec::new();
    for _ in 0..n {
        let i = rng.random_range(0..labels.len());
        let same = &by_class[&labels[i]];
        let diff = &others[&labels[i]];
        if same.len() < 2 || diff.is_empty() {
            continue;
        }
        let mut j = same[rng.random_range(0..same.len() - 1)];
        if j == i {
            j = same[same.len() - 1];
        }
        let k = diff[rng.random_range(0..diff.len())];
        out.push((i, j, k));
    }
    out
}

/// `n` draws of two pool members; draws from the same class are dropped.
/// Pairs are returned with the smaller index first.
pub fn sample_pairs(labels: &[ClassId], n: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    if labels.len() < 2 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for _ in 0..n {
        let i = rng.random_range(0..labels.len());
        let j = rng.random_range(0..labels.len());
        if labels[i] == labels[j] {
            continue;
        }
        out.push((i.min(j), i.max(j)));
    }
    out
}

/// Mean negative log-likelihood of one caption from its per-step
/// log-probabilities.
pub fn cross_entropy_loss(tape: &mut GradientTape<'_>, logprobs: &[Var]) -> Result<Var> {
    if logprobs.is_empty() {
        return Err(Error::Contract("cross-entropy needs at least one step".into()));
    }
    let mean = tape.mean(logprobs)?;
    tape.neg(mean)
}

/// Value-level counterpart of [`cross_entropy_loss`].
pub fn cross_entropy(logprobs: &[f64]) -> Result<f64> {
    if logprobs.is_empty() {
        return Err(Error::Contract("cross-entropy needs at least one step".into()));
    }
    Ok(-logprobs.iter().sum::<f64>() / logprobs.len() as f64)
}

fn hinge_value(margin: f64, pos: f64, neg: f64) -> f64 {
    (margin - pos + neg).max(0.0)
}

/// Mean triplet hinge `max(0, γ - cos(z_i, z_j) + cos(z_i, z_k))` over the
/// given triplets; a zero constant when there are none.
pub fn cluster_loss(
    tape: &mut GradientTape<'_>,
    pool: &[Var],
    triplets: &[(usize, usize, usize)],
    margin: f64,
) -> Result<Var> {
    if triplets.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let gamma = tape.constant(Tensor::scalar(margin));
    let mut hinges = Vec::with_capacity(triplets.len());
    for &(i, j, k) in triplets {
        let pos = tape.cosine(pool[i], pool[j])?;
        let neg = tape.cosine(pool[i], pool[k])?;
        let a = tape.sub(gamma, pos)?;
        let a = tape.add(a, neg)?;
        hinges.push(tape.relu(a)?);
    }
    tape.mean(&hinges)
}

/// Value-level counterpart of [`cluster_loss`].
pub fn cluster_loss_value(z: &[Vec<f64>], triplets: &[(usize, usize, usize)], margin: f64) -> Result<f64> {
    if triplets.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for &(i, j, k) in triplets {
        sum += hinge_value(margin, tensor::cosine(&z[i], &z[j])?, tensor::cosine(&z[i], &z[k])?);
    }
    Ok(sum / triplets.len() as f64)
}

/// Token ids making up each class label.
pub type LabelTokens = BTreeMap<ClassId, Vec<usize>>;

fn label_ids(class: Option<ClassId>, tokens: &LabelTokens) -> Result<&[usize]> {
    let c = class.ok_or_else(|| Error::Domain("UNK has no label embedding".into()))?;
    match tokens.get(&c) {
        Some(ids) if !ids.is_empty() => Ok(ids),
        _ => Err(Error::Config(format!("class {c} has no label tokens"))),
    }
}

/// Embedding of a class label: the word embedding column for single-word
/// labels, the unweighted mean of the word columns otherwise.
pub fn label_embedding(w_e: &Tensor, class: Option<ClassId>, tokens: &LabelTokens) -> Result<Vec<f64>> {
    let ids = label_ids(class, tokens)?;
    let mut out = vec![0.0; w_e.rows()];
    for &id in ids {
        if id >= w_e.cols() {
            return Err(Error::shape("label_embedding", w_e.shape(), &[id]));
        }
        for (r, o) in out.iter_mut().enumerate() {
            *o += w_e.at(r, id);
        }
    }
    out.iter_mut().for_each(|o| *o /= ids.len() as f64);
    Ok(out)
}

/// Tape version of [`label_embedding`].
pub fn label_embedding_node(
    tape: &mut GradientTape<'_>,
    w_e: Var,
    class: Option<ClassId>,
    tokens: &LabelTokens,
) -> Result<Var> {
    let ids = label_ids(class, tokens)?;
    let cols = ids.iter().map(|&id| tape.column(w_e, id)).collect::<Result<Vec<_>>>()?;
    if cols.len() == 1 {
        return Ok(cols[0]);
    }
    tape.mean(&cols)
}

/// `-pearson(sim_obj, sim_text)` over cross-class pairs, where `sim_obj`
/// compares the object vectors and `sim_text` their label embeddings. Fewer
/// than two pairs or a constant similarity list give a zero constant.
pub fn perceptual_loss(
    tape: &mut GradientTape<'_>,
    pool: &LabeledPool,
    pairs: &[(usize, usize)],
    w_e: Var,
    tokens: &LabelTokens,
) -> Result<Var> {
    if pairs.len() < 2 {
        log::debug!("perceptual loss skipped: {} valid pairs", pairs.len());
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let mut embeddings: BTreeMap<ClassId, Var> = BTreeMap::new();
    for &(i, j) in pairs {
        for c in [pool.labels[i], pool.labels[j]] {
            if !embeddings.contains_key(&c) {
                let e = label_embedding_node(tape, w_e, Some(c), tokens)?;
                embeddings.insert(c, e);
            }
        }
    }
    let mut obj = Vec::with_capacity(pairs.len());
    let mut text = Vec::with_capacity(pairs.len());
    for &(i, j) in pairs {
        obj.push(tape.cosine(pool.vectors[i], pool.vectors[j])?);
        let (ei, ej) = (embeddings[&pool.labels[i]], embeddings[&pool.labels[j]]);
        text.push(tape.cosine(ei, ej)?);
    }
    let obj = tape.concat(&obj)?;
    let text = tape.concat(&text)?;
    if let Err(Error::DegenerateStatistics(msg)) = tensor::pearson(tape.value(obj).data(), tape.value(text).data()) {
        log::debug!("perceptual loss skipped: {msg}");
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let r = tape.pearson(obj, text)?;
    tape.neg(r)
}

/// Value-level counterpart of [`perceptual_loss`].
pub fn perceptual_loss_value(
    z: &[Vec<f64>],
    labels: &[ClassId],
    pairs: &[(usize, usize)],
    w_e: &Tensor,
    tokens: &LabelTokens,
) -> Result<f64> {
    if pairs.len() < 2 {
        return Ok(0.0);
    }
    let mut obj = Vec::with_capacity(pairs.len());
    let mut text = Vec::with_capacity(pairs.len());
    for &(i, j) in pairs {
        obj.push(tensor::cosine(&z[i], &z[j])?);
        let ei = label_embedding(w_e, Some(labels[i]), tokens)?;
        let ej = label_embedding(w_e, Some(labels[j]), tokens)?;
        text.push(tensor::cosine(&ei, &ej)?);
    }
    match tensor::pearson(&obj, &text) {
        Ok(r) => Ok(-r),
        Err(Error::DegenerateStatistics(_)) => Ok(0.0),
        Err(e) => Err(e),
    }
}

/// `L_XE + α_C L_C + α_P L_P`. Disabled terms add no nodes, so a run with
/// both weights at zero computes exactly the cross-entropy.
pub fn total_loss(
    tape: &mut GradientTape<'_>,
    xe: Var,
    cluster: Option<Var>,
    perceptual: Option<Var>,
    config: &LossConfig,
) -> Result<Var> {
    let mut total = xe;
    if let (Some(lc), true) = (cluster, config.cluster_enabled()) {
        let w = tape.scale(lc, config.alpha_c)?;
        total = tape.add(total, w)?;
    }
    if let (Some(lp), true) = (perceptual, config.perceptual_enabled()) {
        let w = tape.scale(lp, config.alpha_p)?;
        total = tape.add(total, w)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn cross_entropy_values() {
        let uniform = vec![(0.1f64).ln(); 7];
        assert_abs_diff_eq!(cross_entropy(&uniform).unwrap(), 10f64.ln(), epsilon = 1e-12);
        assert_eq!(cross_entropy(&[0.0, 0.0]).unwrap(), 0.0);
        let two = cross_entropy(&[0.5f64.ln(), 0.25f64.ln()]).unwrap();
        assert_abs_diff_eq!(two, 1.5 * 2f64.ln(), epsilon = 1e-12);
        assert!(cross_entropy(&[]).is_err());
    }

    #[test]
    fn triplets_from_two_one_split() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = sample_triplets(&[0, 0, 1], 200, &mut rng);
        assert!(!t.is_empty());
        for tr in &t {
            assert!(*tr == (0, 1, 2) || *tr == (1, 0, 2), "{tr:?}");
        }
        assert!(t.contains(&(0, 1, 2)) && t.contains(&(1, 0, 2)));
        assert!(sample_triplets(&[4, 4, 4, 4], 50, &mut rng).is_empty());
        assert!(sample_triplets(&[], 50, &mut rng).is_empty());
    }

    #[test]
    fn pairs_cross_classes_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = sample_pairs(&[0, 1], 40, &mut rng);
        assert!(!p.is_empty() && p.iter().all(|&x| x == (0, 1)));
        assert!(sample_pairs(&[3, 3, 3], 40, &mut rng).is_empty());
    }

    #[test]
    fn samplers_are_deterministic() {
        let labels = [0, 1, 2, 0, 1, 2, 0];
        let a = sample_triplets(&labels, 30, &mut Samplers::new(9).triplets);
        let b = sample_triplets(&labels, 30, &mut Samplers::new(9).triplets);
        assert_eq!(a, b);
        let a = sample_pairs(&labels, 30, &mut Samplers::new(9).pairs);
        let b = sample_pairs(&labels, 30, &mut Samplers::new(9).pairs);
        assert_eq!(a, b);
    }

    #[test]
    fn cluster_loss_values() {
        let z = vec![vec![1.0, 0.0], vec![2.0, 0.0], vec![0.0, 3.0]];
        assert_eq!(cluster_loss_value(&z, &[(0, 1, 2)], 0.5).unwrap(), 0.0);
        let same = vec![vec![1.0, 1.0]; 3];
        assert_abs_diff_eq!(cluster_loss_value(&same, &[(0, 1, 2)], 0.5).unwrap(), 0.5, epsilon = 1e-12);
        // hinges 0 and 0.3
        let z = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.2, 0.96f64.sqrt()]];
        let v = cluster_loss_value(&z, &[(0, 1, 2), (0, 3, 2)], 0.5).unwrap();
        assert_abs_diff_eq!(v, 0.15, epsilon = 1e-12);
        assert_eq!(cluster_loss_value(&z, &[], 0.5).unwrap(), 0.0);
    }

    #[test]
    fn cluster_loss_tape_matches_values() {
        let z = vec![vec![1.0, 0.2], vec![0.7, -0.4], vec![-0.3, 1.0], vec![0.5, 0.5]];
        let trip = [(0, 1, 2), (1, 0, 3), (3, 0, 2)];
        let mut tape = GradientTape::new();
        let vars: Vec<Var> = z.iter().map(|v| tape.constant(Tensor::vector(v.clone()))).collect();
        let l = cluster_loss(&mut tape, &vars, &trip, 0.5).unwrap();
        assert_abs_diff_eq!(
            tape.value(l).item(),
            cluster_loss_value(&z, &trip, 0.5).unwrap(),
            epsilon = 1e-14
        );
    }

    fn toy_tokens() -> (Tensor, LabelTokens) {
        let w_e = Tensor::matrix(&[vec![1.0, 0.0, 2.0, 4.0], vec![0.0, 1.0, 6.0, -2.0]]).unwrap();
        let tokens = LabelTokens::from([(0, vec![1]), (1, vec![2, 3])]);
        (w_e, tokens)
    }

    #[test]
    fn label_embeddings() {
        let (w_e, tokens) = toy_tokens();
        assert_eq!(label_embedding(&w_e, Some(0), &tokens).unwrap(), vec![0.0, 1.0]);
        assert_eq!(label_embedding(&w_e, Some(1), &tokens).unwrap(), vec![3.0, 2.0]);
        assert!(matches!(label_embedding(&w_e, None, &tokens), Err(Error::Domain(_))));
        assert!(matches!(label_embedding(&w_e, Some(5), &tokens), Err(Error::Config(_))));

        let mut tape = GradientTape::new();
        let w = tape.constant_ref(&w_e);
        let e = label_embedding_node(&mut tape, w, Some(1), &tokens).unwrap();
        assert_eq!(tape.value(e).data(), &[3.0, 2.0]);
    }

    #[test]
    fn perceptual_loss_extremes() {
        let w_e = Tensor::matrix(&[vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 1.0]]).unwrap();
        let tokens = LabelTokens::from([(0, vec![0]), (1, vec![1]), (2, vec![2])]);
        let labels = [0, 1, 2];
        let pairs = [(0, 1), (0, 2), (1, 2)];
        // text sims: 0, 1/sqrt2, 1/sqrt2; object vectors equal the label embeddings
        let z = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        let v = perceptual_loss_value(&z, &labels, &pairs, &w_e, &tokens).unwrap();
        assert_abs_diff_eq!(v, -1.0, epsilon = 1e-12);
        let single = perceptual_loss_value(&z, &labels, &pairs[..1], &w_e, &tokens).unwrap();
        assert_eq!(single, 0.0);
    }

    #[test]
    fn total_loss_arithmetic() {
        let mut tape = GradientTape::new();
        let xe = tape.constant(Tensor::scalar(0.5));
        let lc = tape.constant(Tensor::scalar(0.2));
        let lp = tape.constant(Tensor::scalar(-0.3));
        let t = total_loss(&mut tape, xe, Some(lc), Some(lp), &LossConfig::default()).unwrap();
        assert_abs_diff_eq!(tape.value(t).item(), 0.4, epsilon = 1e-15);
        let t = total_loss(&mut tape, xe, Some(lc), Some(lp), &LossConfig::baseline()).unwrap();
        assert_eq!(t, xe);
    }
}
