//! Synthetic three-class pair tasks whose label depends only on a
//! multiplicative interaction of the two latent vectors.
//!
//! Latent `u, v` have i.i.d. `N(0, sigma^2)` entries. The clean label is the
//! argmax of three fixed random hyperplanes applied to `u*v` (signal degree 2)
//! or `u*u*v + u*v*v` (signal degree 3).
//!
//! Each coordinate is quantized into one of [`BINS`] bins over `±3 sigma`,
//! and the bin index `b` is written in unary: coordinate `j` contributes `b`
//! copies of its "high" token `2j + 1` and `BINS - 1 - b` copies of its "low"
//! token `2j`. Sequences therefore have `d (BINS - 1)` tokens over a shared
//! vocabulary of `2d`, and the mean of any per-token embedding over a
//! sequence is an affine function of the bin vector.
//!
//! Splits are class balanced: slot `i` of a split is assigned class `i mod 3`.
//! With probability `noise_level` the slot is "noisy" and gets an
//! unconstrained latent pair; otherwise latent pairs are redrawn until the
//! clean label matches. This is the uniform-relabelling noise model with
//! exactly balanced classes, and the clean-label oracle scores
//! `1 - (2/3) noise_level` in expectation.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{write_tsv_file, Dataset, Example, Label, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded, Rng};

pub const BINS: usize = 16;
/// Quantization covers `±3 sigma`; values beyond are clamped to the end bins.
const RANGE_SIGMAS: f64 = 3.0;
const MAX_SPLIT: usize = 1 << 26;
const MAX_REJECTIONS: usize = 100_000;
const HYPERPLANE_STREAM: u64 = 0x4859_5045;
const SHUFFLE_STREAM: u64 = 0x5348_5546;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthTaskSpec {
    pub d: usize,
    pub sigma: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub signal_degree: u8,
    pub noise_level: f64,
    pub seed: u64,
}

impl Default for SynthTaskSpec {
    fn default() -> Self {
        SynthTaskSpec {
            d: 32,
            sigma: 0.25,
            n_train: 3000,
            n_val: 1000,
            n_test: 1000,
            signal_degree: 2,
            noise_level: 0.1,
            seed: 0,
        }
    }
}

impl SynthTaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::invalid("d must be at least 1"));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::invalid("sigma must be positive"));
        }
        if !matches!(self.signal_degree, 2 | 3) {
            return Err(Error::invalid("signal_degree must be 2 or 3"));
        }
        if !(0.0..1.0).contains(&self.noise_level) {
            return Err(Error::invalid("noise_level must lie in [0, 1)"));
        }
        for (name, n) in [
            ("n_train", self.n_train),
            ("n_val", self.n_val),
            ("n_test", self.n_test),
        ] {
            if n == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        let total = self
            .n_train
            .checked_add(self.n_val)
            .and_then(|s| s.checked_add(self.n_test));
        match total {
            Some(t) if t <= MAX_SPLIT => {}
            _ => {
                return Err(Error::invalid(format!(
                    "total sample count exceeds {MAX_SPLIT}"
                )))
            }
        }
        if self
            .d
            .checked_mul(BINS)
            .is_none_or(|v| v > u32::MAX as usize / 2)
        {
            return Err(Error::invalid("d too large for the token vocabulary"));
        }
        Ok(())
    }

    pub fn vocab_size(&self) -> usize {
        2 * self.d
    }

    pub fn sequence_len(&self) -> usize {
        self.d * (BINS - 1)
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let spec: SynthTaskSpec = toml::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

/// One generated example with its latent vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentPair {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    /// Hyperplane argmax before label noise.
    pub clean_label: Label,
    /// Whether the final label was assigned independently of the latents.
    pub noisy: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthTask {
    pub spec: SynthTaskSpec,
    /// `3 x d`, row-major.
    pub hyperplanes: Vec<f64>,
    pub dataset: Dataset,
    pub train_latents: Vec<LatentPair>,
    pub val_latents: Vec<LatentPair>,
    pub test_latents: Vec<LatentPair>,
}

impl SynthTask {
    /// The interaction vector the labels are computed from.
    pub fn signal(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        signal(self.spec.signal_degree, u, v)
    }

    /// Noise-free label of a latent pair.
    pub fn oracle_label(&self, u: &[f64], v: &[f64]) -> Label {
        argmax_label(&self.hyperplanes, &self.signal(u, v))
    }

    pub fn write_tsv_splits(&self, dir: &Path) -> Result<[PathBuf; 3]> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let paths = ["train.tsv", "val.tsv", "test.tsv"].map(|f| dir.join(f));
        for (path, split) in
            paths
                .iter()
                .zip([&self.dataset.train, &self.dataset.val, &self.dataset.test])
        {
            write_tsv_file(split, path)?;
        }
        Ok(paths)
    }
}

fn signal(degree: u8, u: &[f64], v: &[f64]) -> Vec<f64> {
    u.iter()
        .zip(v)
        .map(|(&a, &b)| {
            if degree == 2 {
                a * b
            } else {
                a * a * b + a * b * b
            }
        })
        .collect()
}

fn argmax_label(hyperplanes: &[f64], x: &[f64]) -> Label {
    let d = x.len();
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (c, w) in hyperplanes.chunks_exact(d).enumerate() {
        let score: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
        if score > best_score {
            best = c;
            best_score = score;
        }
    }
    Label::ALL[best]
}

/// Bin of `value` among [`BINS`] equal bins over `±3 sigma`; tails clamp to
/// the end bins.
pub fn bin_index(value: f64, sigma: f64) -> usize {
    let lo = -RANGE_SIGMAS * sigma;
    let width = 2.0 * RANGE_SIGMAS * sigma / BINS as f64;
    ((value - lo) / width).floor().clamp(0.0, (BINS - 1) as f64) as usize
}

/// Centre of bin `bin`.
pub fn bin_center(bin: usize, sigma: f64) -> f64 {
    let width = 2.0 * RANGE_SIGMAS * sigma / BINS as f64;
    -RANGE_SIGMAS * sigma + (bin as f64 + 0.5) * width
}

/// Unary token sequence of a latent vector.
pub fn encode_latent(x: &[f64], sigma: f64) -> Vec<u32> {
    let mut tokens = Vec::with_capacity(x.len() * (BINS - 1));
    for (j, &value) in x.iter().enumerate() {
        let b = bin_index(value, sigma);
        let (lo, hi) = (2 * j as u32, 2 * j as u32 + 1);
        tokens.extend(std::iter::repeat_n(hi, b));
        tokens.extend(std::iter::repeat_n(lo, BINS - 1 - b));
    }
    tokens
}

/// Bin centres recovered from a token sequence of dimension `d`. Token order
/// is irrelevant.
pub fn decode_tokens(tokens: &[u32], d: usize, sigma: f64) -> Result<Vec<f64>> {
    let mut hi = vec![0usize; d];
    let mut total = vec![0usize; d];
    for &t in tokens {
        let j = t as usize / 2;
        if j >= d {
            return Err(Error::invalid(format!(
                "token {t} outside a {d}-dimensional vocabulary"
            )));
        }
        total[j] += 1;
        hi[j] += (t % 2) as usize;
    }
    if let Some(j) = total.iter().position(|&n| n != BINS - 1) {
        return Err(Error::invalid(format!(
            "coordinate {j} has {} tokens, expected {}",
            total[j],
            BINS - 1
        )));
    }
    Ok(hi.into_iter().map(|b| bin_center(b, sigma)).collect())
}

fn draw_vec(rng: &mut Rng, d: usize, sigma: f64) -> Vec<f64> {
    (0..d)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            sigma * z
        })
        .collect()
}

pub fn generate(spec: &SynthTaskSpec) -> Result<SynthTask> {
    spec.validate()?;
    let d = spec.d;
    let mut hrng = seeded(derive_seed(&[spec.seed, HYPERPLANE_STREAM]));
    let hyperplanes = draw_vec(&mut hrng, NUM_CLASSES * d, 1.0);

    let mut splits = Vec::with_capacity(3);
    for (split_idx, n) in [spec.n_train, spec.n_val, spec.n_test]
        .into_iter()
        .enumerate()
    {
        let samples: Vec<Result<(Example, LatentPair)>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = seeded(derive_seed(&[spec.seed, split_idx as u64, i as u64]));
                sample_slot(spec, &hyperplanes, Label::ALL[i % NUM_CLASSES], &mut rng)
            })
            .collect();
        let mut samples = samples.into_iter().collect::<Result<Vec<_>>>()?;
        let mut srng = seeded(derive_seed(&[spec.seed, split_idx as u64, SHUFFLE_STREAM]));
        samples.shuffle(&mut srng);
        splits.push(samples.into_iter().unzip::<_, _, Vec<_>, Vec<_>>());
    }

    let (test, test_latents) = splits.pop().unwrap();
    let (val, val_latents) = splits.pop().unwrap();
    let (train, train_latents) = splits.pop().unwrap();
    Ok(SynthTask {
        spec: *spec,
        hyperplanes,
        dataset: Dataset {
            train,
            val,
            test,
            vocab_size: spec.vocab_size(),
        },
        train_latents,
        val_latents,
        test_latents,
    })
}

fn sample_slot(
    spec: &SynthTaskSpec,
    hyperplanes: &[f64],
    target: Label,
    rng: &mut Rng,
) -> Result<(Example, LatentPair)> {
    let noisy = rng.random::<f64>() < spec.noise_level;
    for _ in 0..MAX_REJECTIONS {
        let u = draw_vec(rng, spec.d, spec.sigma);
        let v = draw_vec(rng, spec.d, spec.sigma);
        let clean_label = argmax_label(hyperplanes, &signal(spec.signal_degree, &u, &v));
        if noisy || clean_label == target {
            let example = Example {
                premise: encode_latent(&u, spec.sigma),
                hypothesis: encode_latent(&v, spec.sigma),
                label: target,
            };
            return Ok((
                example,
                LatentPair {
                    u,
                    v,
                    clean_label,
                    noisy,
                },
            ));
        }
    }
    Err(Error::invalid(format!(
        "class {target} is unreachable under the sampled hyperplanes"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(noise: f64) -> SynthTaskSpec {
        SynthTaskSpec {
            d: 8,
            n_train: 300,
            n_val: 60,
            n_test: 61,
            noise_level: noise,
            ..Default::default()
        }
    }

    #[test]
    fn reproducible_for_seed() {
        let a = generate(&small(0.2)).unwrap();
        let b = generate(&small(0.2)).unwrap();
        assert_eq!(a, b);
        let c = generate(&SynthTaskSpec {
            seed: 1,
            ..small(0.2)
        })
        .unwrap();
        assert_ne!(a.dataset.train, c.dataset.train);
    }

    #[test]
    fn noiseless_labels_follow_the_interaction_oracle() {
        for degree in [2, 3] {
            let t = generate(&SynthTaskSpec {
                signal_degree: degree,
                ..small(0.0)
            })
            .unwrap();
            for (ex, lat) in t.dataset.train.iter().zip(&t.train_latents) {
                assert_eq!(ex.label, t.oracle_label(&lat.u, &lat.v));
            }
        }
    }

    #[test]
    fn classes_are_balanced() {
        let t = generate(&small(0.3)).unwrap();
        for split in [&t.dataset.train, &t.dataset.val, &t.dataset.test] {
            let mut counts = [0usize; 3];
            split.iter().for_each(|ex| counts[ex.label.index()] += 1);
            let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            assert!(hi - lo <= 1, "{counts:?}");
        }
    }

    #[test]
    fn tokens_decode_to_bin_centres() {
        let t = generate(&small(0.0)).unwrap();
        assert_eq!(t.dataset.vocab_size, 16);
        t.dataset.validate().unwrap();
        let half_width = RANGE_SIGMAS * 0.25 / BINS as f64;
        for (ex, lat) in t.dataset.test.iter().zip(&t.test_latents) {
            assert_eq!(ex.premise.len(), 8 * (BINS - 1));
            let mut shuffled = ex.premise.clone();
            shuffled.reverse();
            let decoded = decode_tokens(&shuffled, 8, 0.25).unwrap();
            for (&y, &x) in decoded.iter().zip(&lat.u) {
                if x.abs() < RANGE_SIGMAS * 0.25 {
                    assert!((y - x).abs() <= half_width + 1e-12);
                } else {
                    assert_eq!(y.signum(), x.signum());
                }
            }
        }
    }

    #[test]
    fn bins_clamp_tails() {
        assert_eq!(bin_index(-100.0, 1.0), 0);
        assert_eq!(bin_index(100.0, 1.0), BINS - 1);
        assert_eq!(bin_index(0.0, 1.0), BINS / 2);
        assert_eq!(encode_latent(&[100.0], 1.0), vec![1; BINS - 1]);
        assert_eq!(encode_latent(&[-100.0], 1.0), vec![0; BINS - 1]);
        let t = encode_latent(&[0.0, -100.0], 1.0);
        assert_eq!(t.iter().filter(|&&x| x == 1).count(), BINS / 2);
        assert_eq!(t.iter().filter(|&&x| x == 2).count(), BINS - 1);
    }

    #[test]
    fn decode_rejects_malformed_sequences() {
        assert!(decode_tokens(&[0; BINS - 1], 1, 1.0).is_ok());
        assert!(decode_tokens(&[0; BINS - 2], 1, 1.0).is_err());
        assert!(decode_tokens(&[2; BINS - 1], 1, 1.0).is_err());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let ok = small(0.1);
        for bad in [
            SynthTaskSpec { d: 0, ..ok },
            SynthTaskSpec { sigma: 0.0, ..ok },
            SynthTaskSpec {
                signal_degree: 4,
                ..ok
            },
            SynthTaskSpec {
                noise_level: 1.0,
                ..ok
            },
            SynthTaskSpec { n_val: 0, ..ok },
            SynthTaskSpec {
                n_train: usize::MAX,
                ..ok
            },
            SynthTaskSpec {
                n_train: MAX_SPLIT,
                ..ok
            },
        ] {
            assert!(generate(&bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn spec_toml_round_trip() {
        let spec = small(0.25);
        let text = spec.to_toml_string().unwrap();
        assert_eq!(SynthTaskSpec::from_toml_str(&text).unwrap(), spec);
        let partial = SynthTaskSpec::from_toml_str("d = 4\nnoise_level = 0.0\n").unwrap();
        assert_eq!(partial.sigma, 0.25);
        assert_eq!(partial.d, 4);
    }
}
