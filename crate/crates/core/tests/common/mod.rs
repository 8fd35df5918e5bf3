#![allow(dead_code)]

pub mod boxes;

use groundcap::data::vocab::BOS;
use groundcap::losses::LabelTokens;
use groundcap::model::{ModelConfig, ModelParams};
use groundcap::tape::ParamId;
use groundcap::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Toy dimensions of the gradient suite.
pub const D: usize = 8;
pub const D_IN: usize = 6;
pub const V: usize = 12;
pub const K: usize = 3;
pub const T: usize = 4;

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;

/// Toy parameters with every entry uniform in [-scale, scale], biases
/// included, so no gradient is structurally tiny.
pub fn toy_params(seed: u64, scale: f64) -> ModelParams {
    let mut p = ModelParams::zeros(ModelConfig::new(D, D_IN, V));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..12 {
        for x in p.block_mut(ParamId(i)).data_mut() {
            *x = rng.random_range(-scale..=scale);
        }
    }
    p
}

pub fn random_vectors(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

/// Unit vectors whose Gram matrix has the given off-diagonal entries
/// (row-major upper triangle), by Cholesky factorization.
pub fn with_cosines(n: usize, upper: &[f64]) -> Vec<Vec<f64>> {
    let mut g = vec![vec![1.0; n]; n];
    let mut k = 0;
    for i in 0..n {
        for j in i + 1..n {
            g[i][j] = upper[k];
            g[j][i] = upper[k];
            k += 1;
        }
    }
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|t| l[i][t] * l[j][t]).sum();
            if i == j {
                let d = g[i][i] - s;
                assert!(d > 0.0, "Gram matrix not positive definite");
                l[i][j] = d.sqrt();
            } else {
                l[i][j] = (g[i][j] - s) / l[j][j];
            }
        }
    }
    l
}

/// Word-embedding matrix whose column `j` is `vectors[j]`.
pub fn embedding_columns(vectors: &[Vec<f64>]) -> Tensor {
    let (d, v) = (vectors[0].len(), vectors.len());
    Tensor::new(vec![d, v], (0..d * v).map(|k| vectors[k % v][k / v]).collect()).unwrap()
}

// ---- plain-loop reference implementation of the decoder ----

fn matvec(w: &Tensor, x: &[f64]) -> Vec<f64> {
    let (r, c) = (w.shape()[0], w.shape()[1]);
    assert_eq!(c, x.len());
    (0..r)
        .map(|i| (0..c).map(|j| w.data()[i * c + j] * x[j]).sum())
        .collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn lstm(w_ih: &Tensor, w_hh: &Tensor, b: &Tensor, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = h.len();
    let a = matvec(w_ih, x);
    let r = matvec(w_hh, h);
    let pre: Vec<f64> = (0..4 * n).map(|i| a[i] + r[i] + b.data()[i]).collect();
    let mut h2 = vec![0.0; n];
    let mut c2 = vec![0.0; n];
    for j in 0..n {
        let i = sigmoid(pre[j]);
        let f = sigmoid(pre[n + j]);
        let g = pre[2 * n + j].tanh();
        let o = sigmoid(pre[3 * n + j]);
        c2[j] = f * c[j] + i * g;
        h2[j] = o * c2[j].tanh();
    }
    (h2, c2)
}

fn log_softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    x.iter().map(|v| v - lse).collect()
}

/// Mean negative log-likelihood of `targets`, computed with concatenated
/// inputs and explicit loops.
pub fn reference_nll(p: &ModelParams, features: &[Vec<f64>], targets: &[usize]) -> f64 {
    let d = p.config.hidden;
    let z: Vec<Vec<f64>> = features.iter().map(|v| matvec(&p.w_in, v)).collect();
    let mut zbar = vec![0.0; d];
    for zi in &z {
        for j in 0..d {
            zbar[j] += zi[j] / z.len() as f64;
        }
    }
    let (mut h1, mut c1, mut h2, mut c2) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let mut prev = BOS;
    let mut nll = 0.0;
    for &y in targets {
        let x: Vec<f64> = (0..d).map(|i| p.w_e.data()[i * p.config.vocab_size + prev]).collect();
        let in1: Vec<f64> = x.iter().chain(&zbar).chain(&h2).copied().collect();
        let (nh1, nc1) = lstm(&p.lstm1.w_ih, &p.lstm1.w_hh, &p.lstm1.bias, &in1, &h1, &c1);
        let scores: Vec<f64> = z
            .iter()
            .map(|zi| {
                let hz: Vec<f64> = nh1.iter().chain(zi).copied().collect();
                let a = matvec(&p.attention.w_a, &hz);
                a.iter().zip(p.attention.w_v.data()).map(|(u, w)| u.tanh() * w).sum()
            })
            .collect();
        let alpha: Vec<f64> = log_softmax(&scores).iter().map(|l| l.exp()).collect();
        let mut ctx = vec![0.0; d];
        for (a, zi) in alpha.iter().zip(&z) {
            for j in 0..d {
                ctx[j] += a * zi[j];
            }
        }
        let in2: Vec<f64> = ctx.iter().chain(&nh1).copied().collect();
        let (nh2, nc2) = lstm(&p.lstm2.w_ih, &p.lstm2.w_hh, &p.lstm2.bias, &in2, &h2, &c2);
        let logits: Vec<f64> = matvec(&p.w_o, &nh2)
            .iter()
            .zip(p.b_o.data())
            .map(|(a, b)| a + b)
            .collect();
        nll -= log_softmax(&logits)[y];
        (h1, c1, h2, c2) = (nh1, nc1, nh2, nc2);
        prev = y;
    }
    nll / targets.len() as f64
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Mean triplet hinge over projected features, written out directly.
pub fn reference_cluster(w_in: &Tensor, features: &[Vec<f64>], triplets: &[(usize, usize, usize)], margin: f64) -> f64 {
    let z: Vec<Vec<f64>> = features.iter().map(|v| matvec(w_in, v)).collect();
    let total: f64 = triplets
        .iter()
        .map(|&(i, j, k)| (margin - cos(&z[i], &z[j]) + cos(&z[i], &z[k])).max(0.0))
        .sum();
    total / triplets.len() as f64
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

/// Negative correlation between object and label-embedding similarities.
pub fn reference_perceptual(
    w_in: &Tensor,
    w_e: &Tensor,
    features: &[Vec<f64>],
    labels: &[usize],
    pairs: &[(usize, usize)],
    tokens: &LabelTokens,
) -> f64 {
    let z: Vec<Vec<f64>> = features.iter().map(|v| matvec(w_in, v)).collect();
    let (d, v) = (w_e.shape()[0], w_e.shape()[1]);
    let embed = |c: usize| -> Vec<f64> {
        let ids = &tokens[&c];
        (0..d)
            .map(|i| ids.iter().map(|&t| w_e.data()[i * v + t]).sum::<f64>() / ids.len() as f64)
            .collect()
    };
    let obj: Vec<f64> = pairs.iter().map(|&(i, j)| cos(&z[i], &z[j])).collect();
    let txt: Vec<f64> = pairs.iter().map(|&(i, j)| cos(&embed(labels[i]), &embed(labels[j]))).collect();
    -pearson(&obj, &txt)
}

/// Denominator floor of the relative error. Central differences of an O(1)
/// loss carry roughly 1e-10 of rounding error, which would dominate the
/// ratio for gradient entries far below this.
pub const FD_FLOOR: f64 = 1e-6;

/// Largest `|a - n| / max(|a|, |n|, FD_FLOOR)` over all entries, with `n`
/// the central difference of `f` around `base`.
pub fn max_rel_error(analytic: &[f64], mut f: impl FnMut(usize, f64) -> f64, base: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let plus = f(i, base[i] + FD_STEP);
        let minus = f(i, base[i] - FD_STEP);
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_FLOOR);
        worst = worst.max(err);
    }
    worst
}

// ---- gradient checks shared by the gradient suite and the acceptance run ----

use groundcap::losses::{cluster_loss, cross_entropy_loss, perceptual_loss, LabeledPool};
use groundcap::model::{DecoderGraph, PARAM_NAMES};
use groundcap::tape::GradientTape;

pub struct GradCheck {
    pub name: String,
    pub max_rel_error: f64,
}

pub fn toy_sequence() -> (Vec<Vec<f64>>, Vec<usize>) {
    (random_vectors(K, D_IN, 11), vec![5, 9, 3, 1])
}

/// Every decoder block against central differences of [`reference_nll`].
pub fn check_decoder(params: &ModelParams, features: &[Vec<f64>], targets: &[usize]) -> Vec<GradCheck> {
    let grads = {
        let mut tape = GradientTape::new();
        let bound = params.bind(&mut tape);
        let graph = DecoderGraph::new(&mut tape, bound, params).unwrap();
        let z = graph.project(&mut tape, features).unwrap();
        let ctx = graph.context(&mut tape, z).unwrap();
        let lps = graph.sequence_logprob(&mut tape, &ctx, targets, None).unwrap();
        let loss = cross_entropy_loss(&mut tape, &lps).unwrap();
        tape.backward(loss).unwrap()
    };
    (0..PARAM_NAMES.len())
        .map(|b| {
            let id = ParamId(b);
            let base = params.blocks()[b].1.data().to_vec();
            let err = max_rel_error(
                grads.get(id).unwrap().data(),
                |i, v| {
                    let mut q = params.clone();
                    q.block_mut(id).data_mut()[i] = v;
                    reference_nll(&q, features, targets)
                },
                &base,
            );
            GradCheck {
                name: PARAM_NAMES[b].to_owned(),
                max_rel_error: err,
            }
        })
        .collect()
}

pub struct GroundingFixture {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub tokens: LabelTokens,
    pub triplets: Vec<(usize, usize, usize)>,
    pub pairs: Vec<(usize, usize)>,
    pub margin: f64,
}

/// Six objects in three classes, one of them with a two-word label. The
/// margin keeps every hinge active so the loss is smooth.
pub fn grounding_fixture() -> GroundingFixture {
    let labels = vec![0, 0, 1, 1, 2, 2];
    let mut triplets = Vec::new();
    let mut pairs = Vec::new();
    for i in 0..6 {
        for j in 0..6 {
            if i != j && labels[i] == labels[j] {
                for k in 0..6 {
                    if labels[k] != labels[i] {
                        triplets.push((i, j, k));
                    }
                }
            }
            if i < j && labels[i] != labels[j] {
                pairs.push((i, j));
            }
        }
    }
    GroundingFixture {
        features: random_vectors(6, D_IN, 21),
        labels,
        tokens: [(0, vec![4]), (1, vec![5, 6]), (2, vec![7])].into_iter().collect(),
        triplets,
        pairs,
        margin: 2.0,
    }
}

pub fn check_grounding(params: &ModelParams, fx: &GroundingFixture) -> Vec<GradCheck> {
    let w_in = params.w_in.data().to_vec();
    let w_e = params.w_e.data().to_vec();
    let mut out = Vec::new();

    let g = {
        let mut tape = GradientTape::new();
        let bound = params.bind(&mut tape);
        let graph = DecoderGraph::new(&mut tape, bound, params).unwrap();
        let z = graph.project(&mut tape, &fx.features).unwrap();
        let loss = cluster_loss(&mut tape, &z, &fx.triplets, fx.margin).unwrap();
        tape.backward(loss).unwrap()
    };
    let err = max_rel_error(
        g.get(ParamId(0)).unwrap().data(),
        |i, v| {
            let mut t = params.w_in.clone();
            t.data_mut()[i] = v;
            reference_cluster(&t, &fx.features, &fx.triplets, fx.margin)
        },
        &w_in,
    );
    out.push(GradCheck {
        name: "cluster / w_in".into(),
        max_rel_error: err,
    });

    let g = {
        let mut tape = GradientTape::new();
        let bound = params.bind(&mut tape);
        let graph = DecoderGraph::new(&mut tape, bound, params).unwrap();
        let z = graph.project(&mut tape, &fx.features).unwrap();
        let pool = LabeledPool {
            vectors: z,
            labels: fx.labels.clone(),
        };
        let loss = perceptual_loss(&mut tape, &pool, &fx.pairs, bound.w_e, &fx.tokens).unwrap();
        tape.backward(loss).unwrap()
    };
    let err = max_rel_error(
        g.get(ParamId(0)).unwrap().data(),
        |i, v| {
            let mut t = params.w_in.clone();
            t.data_mut()[i] = v;
            reference_perceptual(&t, &params.w_e, &fx.features, &fx.labels, &fx.pairs, &fx.tokens)
        },
        &w_in,
    );
    out.push(GradCheck {
        name: "perceptual / w_in".into(),
        max_rel_error: err,
    });
    let err = max_rel_error(
        g.get(ParamId(1)).unwrap().data(),
        |i, v| {
            let mut t = params.w_e.clone();
            t.data_mut()[i] = v;
            reference_perceptual(&params.w_in, &t, &fx.features, &fx.labels, &fx.pairs, &fx.tokens)
        },
        &w_e,
    );
    out.push(GradCheck {
        name: "perceptual / w_e".into(),
        max_rel_error: err,
    });
    out
}
