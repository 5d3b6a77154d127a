//! Empirical moments of the matching feature under Gaussian inputs.
//!
//! If the entries of `u` and `v` are independent `N(0, sigma^2)`, the entries
//! of `u*v` have variance `sigma^4`, so for `sigma != 1` the interaction block
//! sits at a different scale than the identity blocks. Scaling by `eta`
//! multiplies that variance by `eta^2`.

use std::io::Write;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature::{feature_dim, fill_feature, Block, Degree, FeatureConfig};
use crate::rng::{derive_seed, seeded};

/// Samples per independently seeded chunk. Fixed so the result does not
/// depend on how chunks are scheduled across threads.
const CHUNK: usize = 1024;

pub const MIN_SAMPLES: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct MomentReport {
    pub sigma: f64,
    pub degree: Degree,
    pub eta: f64,
    pub sample_count: usize,
    /// Indexed by [`Block`].
    pub mean: [f64; 4],
    pub variance: [f64; 4],
}

impl MomentReport {
    pub fn mean_of(&self, block: Block) -> f64 {
        self.mean[block as usize]
    }

    pub fn variance_of(&self, block: Block) -> f64 {
        self.variance[block as usize]
    }

    pub fn to_row(&self) -> MomentRow {
        MomentRow {
            sigma: self.sigma,
            degree: self.degree.as_u8(),
            eta: self.eta,
            n_samples: self.sample_count,
            mean_u: self.mean[0],
            var_u: self.variance[0],
            mean_v: self.mean[1],
            var_v: self.variance[1],
            mean_absdiff: self.mean[2],
            var_absdiff: self.variance[2],
            mean_inter: self.mean[3],
            var_inter: self.variance[3],
        }
    }
}

/// CSV shape of a [`MomentReport`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub sigma: f64,
    pub degree: u8,
    pub eta: f64,
    pub n_samples: usize,
    pub mean_u: f64,
    pub var_u: f64,
    pub mean_v: f64,
    pub var_v: f64,
    pub mean_absdiff: f64,
    pub var_absdiff: f64,
    pub mean_inter: f64,
    pub var_inter: f64,
}

pub fn write_moment_csv<W: Write>(reports: &[MomentReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        w.serialize(r.to_row())?;
    }
    w.flush().map_err(|e| Error::io("<moments csv>", e))?;
    Ok(())
}

/// Count, mean and sum of squared deviations for one block.
#[derive(Clone, Copy, Debug, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn of(xs: impl Iterator<Item = f64> + Clone) -> Self {
        let (n, sum) = xs.clone().fold((0.0, 0.0), |(n, s), x| (n + 1.0, s + x));
        let mean = sum / n;
        let m2 = xs.map(|x| (x - mean) * (x - mean)).sum();
        Moments { n, mean, m2 }
    }

    // Chan et al. pairwise update.
    fn merge(self, other: Moments) -> Moments {
        if self.n == 0.0 {
            return other;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        Moments {
            n,
            mean: self.mean + delta * other.n / n,
            m2: self.m2 + other.m2 + delta * delta * self.n * other.n / n,
        }
    }
}

/// Draws `n_samples` pairs with i.i.d. `N(0, sigma^2)` entries, builds their
/// features and pools mean and (unbiased) variance over every element of
/// each block.
pub fn sample_moment_report(
    d: usize,
    sigma: f64,
    cfg: &FeatureConfig,
    n_samples: usize,
    seed: u64,
) -> Result<MomentReport> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::invalid(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    if d == 0 {
        return Err(Error::invalid("d must be at least 1"));
    }
    if n_samples < MIN_SAMPLES {
        return Err(Error::invalid(format!(
            "n_samples must be at least {MIN_SAMPLES}, got {n_samples}"
        )));
    }
    cfg.validate()?;

    let n_chunks = n_samples.div_ceil(CHUNK);
    let partials: Vec<[Moments; 4]> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let count = CHUNK.min(n_samples - c * CHUNK);
            chunk_moments(d, sigma, cfg, count, derive_seed(&[seed, c as u64]))
        })
        .collect();

    let mut total = [Moments::default(); 4];
    for part in partials {
        for (t, p) in total.iter_mut().zip(part) {
            *t = t.merge(p);
        }
    }

    Ok(MomentReport {
        sigma,
        degree: cfg.degree,
        eta: cfg.eta,
        sample_count: n_samples,
        mean: total.map(|m| m.mean),
        variance: total.map(|m| m.m2 / (m.n - 1.0)),
    })
}

fn chunk_moments(
    d: usize,
    sigma: f64,
    cfg: &FeatureConfig,
    count: usize,
    seed: u64,
) -> [Moments; 4] {
    let mut rng = seeded(seed);
    let width = feature_dim(d);
    let mut features = vec![0.0; count * width];
    let mut u = vec![0.0; d];
    let mut v = vec![0.0; d];
    for row in features.chunks_exact_mut(width) {
        for x in u.iter_mut().chain(v.iter_mut()) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *x = sigma * z;
        }
        fill_feature(&u, &v, cfg.degree, cfg.eta, row);
    }
    Block::ALL.map(|b| {
        let start = b as usize * d;
        Moments::of(
            features
                .chunks_exact(width)
                .flat_map(move |row| row[start..start + d].iter().copied()),
        )
    })
}

/// The `eta` that brings the degree-2 interaction variance `eta^2 sigma^4`
/// level with the identity-block variance `sigma^2`, i.e. `1 / sigma`.
///
/// Degrees 3 and 4 reuse the degree-2 value: their higher terms are scaled
/// by powers of the same `eta`.
pub fn recommended_eta(sigma: f64, _degree: Degree) -> f64 {
    assert!(sigma > 0.0, "sigma must be positive");
    1.0 / sigma
}
