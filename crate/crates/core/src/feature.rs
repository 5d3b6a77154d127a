//! Scaled polynomial matching features.
//!
//! Given two representations `u` and `v` of dimension `d`, the matching
//! feature is the concatenation `[u, v, |u - v|, interaction]` of length `4d`,
//! where the interaction block sums every elementwise monomial of degree
//! `k <= degree` that contains both `u` and `v`, with the degree-`k` terms
//! scaled by `eta^(k-1)`:
//!
//! ```text
//! degree 2:  eta (u*v)
//! degree 3:  eta (u*v) + eta^2 (u*u*v + u*v*v)
//! degree 4:  eta (u*v) + eta^2 (u*u*v + u*v*v) + eta^3 (u*u*u*v + u*u*v*v + u*v*v*v)
//! ```
//!
//! With `degree = 2` and `eta = 1` this is the classic `[u, v, |u-v|, u*v]`
//! heuristic, see [`baseline_feature`].

use std::fmt;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Highest monomial degree used in the interaction block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Degree {
    Two = 2,
    Three = 3,
    Four = 4,
}

impl Degree {
    pub const ALL: [Degree; 3] = [Degree::Two, Degree::Three, Degree::Four];

    pub fn as_u8(self) -> u8 {
        self as u8
    }
}

impl TryFrom<u8> for Degree {
    type Error = Error;

    fn try_from(value: u8) -> Result<Self> {
        match value {
            2 => Ok(Degree::Two),
            3 => Ok(Degree::Three),
            4 => Ok(Degree::Four),
            other => Err(Error::invalid(format!(
                "degree must be 2, 3 or 4, got {other}"
            ))),
        }
    }
}

impl From<Degree> for u8 {
    fn from(d: Degree) -> u8 {
        d.as_u8()
    }
}

impl fmt::Display for Degree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}

/// Degree and scaling factor of the interaction block.
///
/// When `eta_learnable` is set, `eta` is only the initial value; the model
/// owns the trainable parameter (stored as `log eta`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub degree: Degree,
    pub eta: f64,
    #[serde(default)]
    pub eta_learnable: bool,
}

impl FeatureConfig {
    pub fn new(degree: Degree, eta: f64) -> Result<Self> {
        let cfg = FeatureConfig {
            degree,
            eta,
            eta_learnable: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn learnable(mut self) -> Self {
        self.eta_learnable = true;
        self
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn with_degree(mut self, degree: Degree) -> Self {
        self.degree = degree;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::invalid(format!(
                "eta must be finite and positive, got {}",
                self.eta
            )));
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: FeatureConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            degree: Degree::Two,
            eta: 1.0,
            eta_learnable: false,
        }
    }
}

/// Two representations of equal dimension with finite entries.
#[derive(Clone, Debug, PartialEq)]
pub struct RepresentationPair {
    u: Vec<f64>,
    v: Vec<f64>,
}

impl RepresentationPair {
    pub fn new(u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        check_pair(&u, &v)?;
        Ok(RepresentationPair { u, v })
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn dim(&self) -> usize {
        self.u.len()
    }

    /// The pair with `u` and `v` exchanged.
    pub fn swapped(&self) -> Self {
        RepresentationPair {
            u: self.v.clone(),
            v: self.u.clone(),
        }
    }
}

fn check_pair<T: Float>(u: &[T], v: &[T]) -> Result<()> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            u: u.len(),
            v: v.len(),
        });
    }
    if u.is_empty() {
        return Err(Error::invalid("representations must have d >= 1"));
    }
    if let Some(i) = u.iter().chain(v).position(|x| !x.is_finite()) {
        let (side, idx) = if i < u.len() {
            ("u", i)
        } else {
            ("v", i - u.len())
        };
        return Err(Error::invalid(format!("{side}[{idx}] is not finite")));
    }
    Ok(())
}

/// The four contiguous blocks of a [`MatchFeature`], in storage order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Block {
    U = 0,
    V = 1,
    AbsDiff = 2,
    Interaction = 3,
}

impl Block {
    pub const ALL: [Block; 4] = [Block::U, Block::V, Block::AbsDiff, Block::Interaction];

    pub fn name(self) -> &'static str {
        match self {
            Block::U => "u",
            Block::V => "v",
            Block::AbsDiff => "absdiff",
            Block::Interaction => "interaction",
        }
    }
}

/// A `4d` matching feature vector laid out as `[u | v | absdiff | interaction]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchFeature {
    d: usize,
    degree: Degree,
    values: Vec<f64>,
}

impl MatchFeature {
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn degree(&self) -> Degree {
        self.degree
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn block(&self, block: Block) -> &[f64] {
        let start = block as usize * self.d;
        &self.values[start..start + self.d]
    }

    /// Little-endian fixture encoding: `d: u32`, `degree: u8`, then `4d` `f64`s.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(5 + 8 * self.values.len());
        out.extend_from_slice(&(self.d as u32).to_le_bytes());
        out.push(self.degree.as_u8());
        for x in &self.values {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 5 {
            return Err(Error::invalid("feature fixture shorter than its header"));
        }
        let d = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
        let degree = Degree::try_from(bytes[4])?;
        let body = &bytes[5..];
        if d == 0 || body.len() != 8 * feature_dim(d) {
            return Err(Error::invalid(format!(
                "feature fixture for d={d} needs {} payload bytes, found {}",
                8 * feature_dim(d),
                body.len()
            )));
        }
        let values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(MatchFeature { d, degree, values })
    }
}

/// Length of the matching feature for representations of dimension `d`.
///
/// Every degree yields `4d`; the higher-degree monomials are summed into the
/// interaction block rather than appended.
pub fn feature_dim(d: usize) -> usize {
    4 * d
}

/// Builds the scaled polynomial matching feature for `pair`.
pub fn build_feature(pair: &RepresentationPair, cfg: &FeatureConfig) -> MatchFeature {
    let d = pair.dim();
    let mut values = vec![0.0; feature_dim(d)];
    fill_feature(pair.u(), pair.v(), cfg.degree, cfg.eta, &mut values);
    MatchFeature {
        d,
        degree: cfg.degree,
        values,
    }
}

/// `[u, v, |u - v|, u*v]`, the unscaled degree-2 feature.
pub fn baseline_feature(pair: &RepresentationPair) -> MatchFeature {
    let d = pair.dim();
    let mut values = Vec::with_capacity(feature_dim(d));
    values.extend_from_slice(pair.u());
    values.extend_from_slice(pair.v());
    values.extend(pair.u().iter().zip(pair.v()).map(|(a, b)| (a - b).abs()));
    values.extend(pair.u().iter().zip(pair.v()).map(|(a, b)| a * b));
    MatchFeature {
        d,
        degree: Degree::Two,
        values,
    }
}

/// Slice-level entry point, generic over the float type so callers can opt
/// into single precision. `out` must hold `4 * u.len()` values.
pub fn build_feature_into<T: Float>(
    u: &[T],
    v: &[T],
    degree: Degree,
    eta: T,
    out: &mut [T],
) -> Result<()> {
    check_pair(u, v)?;
    if out.len() != feature_dim(u.len()) {
        return Err(Error::invalid(format!(
            "output buffer has {} slots, expected {}",
            out.len(),
            feature_dim(u.len())
        )));
    }
    if !(eta.is_finite() && eta > T::zero()) {
        return Err(Error::invalid("eta must be finite and positive"));
    }
    fill_feature(u, v, degree, eta, out);
    Ok(())
}

/// Unchecked fill; callers guarantee equal lengths and `out.len() == 4 * d`.
pub(crate) fn fill_feature<T: Float>(u: &[T], v: &[T], degree: Degree, eta: T, out: &mut [T]) {
    let d = u.len();
    let (head, rest) = out.split_at_mut(2 * d);
    head[..d].copy_from_slice(u);
    head[d..].copy_from_slice(v);
    let (absdiff, inter) = rest.split_at_mut(d);
    for i in 0..d {
        let (a, b) = (u[i], v[i]);
        absdiff[i] = (a - b).abs();
        inter[i] = interaction(a, b, degree, eta);
    }
}

/// One element of the interaction block, as a single Horner-style pass:
/// `eta*p * (1 + eta*(s + eta*q))` with `p = ab`, `s = a + b`,
/// `q = a^2 + b^2 + ab`, truncated at the requested degree.
#[inline]
fn interaction<T: Float>(a: T, b: T, degree: Degree, eta: T) -> T {
    let p = a * b;
    match degree {
        Degree::Two => eta * p,
        Degree::Three => {
            let s = a + b;
            eta * p * (T::one() + eta * s)
        }
        Degree::Four => {
            let s = a + b;
            // (a^2 + b^2) first keeps q bitwise symmetric in (a, b).
            let q = (a * a + b * b) + p;
            eta * p * (T::one() + eta * (s + eta * q))
        }
    }
}

/// Diagonal blocks of a `4d x d` Jacobian; every feature map is elementwise.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockDiagonal {
    pub blocks: [Vec<f64>; 4],
}

impl BlockDiagonal {
    pub fn block(&self, block: Block) -> &[f64] {
        &self.blocks[block as usize]
    }

    /// Dense row-major `4d x d` matrix.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let d = self.blocks[0].len();
        let mut rows = Vec::with_capacity(4 * d);
        for diag in &self.blocks {
            for (i, &x) in diag.iter().enumerate() {
                let mut row = vec![0.0; d];
                row[i] = x;
                rows.push(row);
            }
        }
        rows
    }

    /// Vector-Jacobian product `J^T g` for `g` of length `4d`.
    pub fn vjp(&self, g: &[f64]) -> Vec<f64> {
        let d = self.blocks[0].len();
        let mut out = vec![0.0; d];
        for (diag, gb) in self.blocks.iter().zip(g.chunks_exact(d)) {
            for ((o, &j), &gi) in out.iter_mut().zip(diag).zip(gb) {
                *o += j * gi;
            }
        }
        out
    }
}

/// Exact derivatives of [`build_feature`] with respect to `u`, `v` and,
/// when learnable, `eta`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureJacobian {
    pub d_u: BlockDiagonal,
    pub d_v: BlockDiagonal,
    /// Derivative of the full `4d` feature with respect to `eta`; only the
    /// interaction block is non-zero.
    pub d_eta: Option<Vec<f64>>,
}

/// `sign(0) = 0`, so tied coordinates get a zero subgradient through `|u - v|`.
#[inline]
pub(crate) fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn feature_jacobian(pair: &RepresentationPair, cfg: &FeatureConfig) -> FeatureJacobian {
    jacobian_slices(pair.u(), pair.v(), cfg)
}

pub(crate) fn jacobian_slices(u: &[f64], v: &[f64], cfg: &FeatureConfig) -> FeatureJacobian {
    let d = u.len();
    let eta = cfg.eta;
    let mut du_abs = Vec::with_capacity(d);
    let mut dv_abs = Vec::with_capacity(d);
    let mut du_int = Vec::with_capacity(d);
    let mut dv_int = Vec::with_capacity(d);
    let mut d_eta = cfg.eta_learnable.then(|| vec![0.0; feature_dim(d)]);

    for (i, (&a, &b)) in u.iter().zip(v).enumerate() {
        let sg = sign0(a - b);
        du_abs.push(sg);
        dv_abs.push(-sg);
        let (ga, gb, ge) = interaction_partials(a, b, cfg.degree, eta);
        du_int.push(ga);
        dv_int.push(gb);
        if let Some(de) = d_eta.as_mut() {
            de[3 * d + i] = ge;
        }
    }

    FeatureJacobian {
        d_u: BlockDiagonal {
            blocks: [vec![1.0; d], vec![0.0; d], du_abs, du_int],
        },
        d_v: BlockDiagonal {
            blocks: [vec![0.0; d], vec![1.0; d], dv_abs, dv_int],
        },
        d_eta,
    }
}

/// Partials of one interaction element with respect to `(a, b, eta)`.
fn interaction_partials(a: f64, b: f64, degree: Degree, eta: f64) -> (f64, f64, f64) {
    let p = a * b;
    match degree {
        Degree::Two => (eta * b, eta * a, p),
        Degree::Three => {
            let e2 = eta * eta;
            (
                b * (eta + e2 * (2.0 * a + b)),
                a * (eta + e2 * (a + 2.0 * b)),
                p * (1.0 + 2.0 * eta * (a + b)),
            )
        }
        Degree::Four => {
            let e2 = eta * eta;
            let e3 = e2 * eta;
            let s = a + b;
            let q = a * a + a * b + b * b;
            (
                b * (eta + e2 * (2.0 * a + b) + e3 * (3.0 * a * a + 2.0 * a * b + b * b)),
                a * (eta + e2 * (a + 2.0 * b) + e3 * (a * a + 2.0 * a * b + 3.0 * b * b)),
                p * (1.0 + 2.0 * eta * s + 3.0 * e2 * q),
            )
        }
    }
}
