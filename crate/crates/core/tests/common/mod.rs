#![allow(dead_code)]

use polymatch::data::{Dataset, Example, Label};
use polymatch::nn::{Activation, Model, ModelArch, Pooling};
use polymatch::rng::{derive_seed, seeded};
use polymatch::{Degree, FeatureConfig};
use rand::Rng as _;

/// Sum of every distinct monomial `a^i b^(k-i)`, `1 <= i < k`, for
/// `k = 2..=degree`, each scaled by `eta^(k-1)`. Products are built by
/// repeated multiplication.
pub fn brute_interaction(a: f64, b: f64, eta: f64, degree: u8) -> f64 {
    let mut total = 0.0;
    for k in 2..=degree as usize {
        let mut scale = 1.0;
        for _ in 0..k - 1 {
            scale *= eta;
        }
        for i in 1..k {
            let mut m = 1.0;
            for _ in 0..i {
                m *= a;
            }
            for _ in 0..k - i {
                m *= b;
            }
            total += scale * m;
        }
    }
    total
}

/// Same sum over `|a|` and `|b|`: the magnitude scale for comparisons.
pub fn brute_magnitude(a: f64, b: f64, eta: f64, degree: u8) -> f64 {
    brute_interaction(a.abs(), b.abs(), eta.abs(), degree)
}

/// Toy pair task over single-token sequences. Token `t` carries a latent
/// `z_t` in the plane; the label of `(a, b)` is the argmax of three fixed
/// linear scores of `p = z_a * z_b`. Pairs whose top two scores are within
/// `margin` are dropped.
pub struct ToyTask {
    pub dataset: Dataset,
    pub latents: Vec<[f64; 2]>,
}

const SCORES: [[f64; 2]; 3] = [[1.0, 0.0], [-0.5, 0.866], [-0.5, -0.866]];

fn toy_scores(p: [f64; 2]) -> [f64; 3] {
    SCORES.map(|w| w[0] * p[0] + w[1] * p[1])
}

/// Winning class and its lead over the runner-up.
pub fn toy_label(p: [f64; 2]) -> (Label, f64) {
    let s = toy_scores(p);
    let best = (0..3).fold(0, |b, c| if s[c] > s[b] { c } else { b });
    let gap = (0..3)
        .filter(|&c| c != best)
        .map(|c| s[best] - s[c])
        .fold(f64::INFINITY, f64::min);
    (Label::from_index(best).unwrap(), gap)
}

pub fn toy_product(latents: &[[f64; 2]], ex: &Example) -> [f64; 2] {
    let (a, b) = (
        latents[ex.premise[0] as usize],
        latents[ex.hypothesis[0] as usize],
    );
    [a[0] * b[0], a[1] * b[1]]
}

pub fn separable_toy(vocab: usize, margin: f64, seed: u64) -> ToyTask {
    let mut rng = seeded(derive_seed(&[seed, 77]));
    let latents: Vec<[f64; 2]> = (0..vocab)
        .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
        .collect();
    let mut pairs = Vec::new();
    for a in 0..vocab {
        for b in 0..vocab {
            let p = [latents[a][0] * latents[b][0], latents[a][1] * latents[b][1]];
            let (label, gap) = toy_label(p);
            if gap < margin {
                continue;
            }
            pairs.push(Example {
                premise: vec![a as u32],
                hypothesis: vec![b as u32],
                label,
            });
        }
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let n_val = pairs.len() / 10;
    let pick = |r: &[usize]| r.iter().map(|&i| pairs[i].clone()).collect::<Vec<_>>();
    let dataset = Dataset {
        train: pick(&order[2 * n_val..]),
        val: pick(&order[..n_val]),
        test: pick(&order[n_val..2 * n_val]),
        vocab_size: vocab,
    };
    ToyTask { dataset, latents }
}

/// Multinomial logistic regression on raw features by full-batch gradient
/// descent; returns its training accuracy.
pub fn logistic_regression_accuracy(
    x: &[Vec<f64>],
    y: &[usize],
    classes: usize,
    iters: usize,
) -> f64 {
    let dim = x[0].len() + 1;
    let mut w = vec![vec![0.0; dim]; classes];
    let lr = 1.0;
    let n = x.len() as f64;
    let scores = |w: &[Vec<f64>], xi: &[f64]| -> Vec<f64> {
        w.iter()
            .map(|wc| wc[dim - 1] + wc.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    };
    for _ in 0..iters {
        let mut grad = vec![vec![0.0; dim]; classes];
        for (xi, &yi) in x.iter().zip(y) {
            let s = scores(&w, xi);
            let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = s.iter().map(|v| (v - m).exp()).sum();
            for c in 0..classes {
                let p = (s[c] - m).exp() / z - if c == yi { 1.0 } else { 0.0 };
                for k in 0..dim - 1 {
                    grad[c][k] += p * xi[k] / n;
                }
                grad[c][dim - 1] += p / n;
            }
        }
        for c in 0..classes {
            for k in 0..dim {
                w[c][k] -= lr * grad[c][k];
            }
        }
    }
    let correct = x
        .iter()
        .zip(y)
        .filter(|(xi, &yi)| {
            let s = scores(&w, xi);
            let best = (0..classes).fold(0, |b, c| if s[c] > s[b] { c } else { b });
            best == yi
        })
        .count();
    correct as f64 / n
}

/// Toy classifier whose encoder starts out mapping each token to its latent,
/// so `u * v` is the product the labels are defined on. Every parameter
/// still trains.
pub fn latent_model(task: &ToyTask, hidden: usize, degree: Degree, eta: f64, seed: u64) -> Model {
    let arch = ModelArch {
        vocab_size: task.latents.len(),
        embed_dim: 2,
        dim: 2,
        hidden,
        pooling: Pooling::Max,
        activation: Activation::Tanh,
    };
    let mut model = Model::init(&arch, &FeatureConfig::new(degree, eta).unwrap(), seed).unwrap();
    model.encoder.embedding = task.latents.iter().flatten().copied().collect();
    model.encoder.projection = vec![1.0, 0.0, 0.0, 1.0];
    model
}
