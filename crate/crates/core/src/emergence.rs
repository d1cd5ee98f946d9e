//! Emergence measures: the general path count over a network and its
//! observed sub-network, closed forms for layered and convolutional stacks,
//! the derived-functor dimension, and the pivot-layer rule.
//!
//! Everything is exact. [`EmergenceValue`] wraps an arbitrary-precision
//! integer and serializes as a decimal string.

use std::fmt;
use std::str::FromStr;

use num_bigint::{BigInt, BigUint};
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::graph::{
    self, ActivationProfile, EdgeId, GraphError, LayeredShape, Quiver, QuiverRep, VertexSet,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EmergenceError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("layer index {index} outside 1..={depth}")]
    Index { index: usize, depth: usize },
    #[error("layer {layer} has no active node to deactivate")]
    Underflow { layer: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EmergenceValue(pub BigUint);

impl EmergenceValue {
    pub fn zero() -> Self {
        Self(BigUint::zero())
    }

    pub fn as_biguint(&self) -> &BigUint {
        &self.0
    }

    /// Lossy conversion for logging; saturates at `f64::MAX`.
    pub fn to_f64_saturating(&self) -> f64 {
        match self.0.to_f64() {
            Some(x) if x.is_finite() => x,
            _ => f64::MAX,
        }
    }
}

impl From<BigUint> for EmergenceValue {
    fn from(v: BigUint) -> Self {
        Self(v)
    }
}

impl From<u32> for EmergenceValue {
    fn from(v: u32) -> Self {
        Self(BigUint::from(v))
    }
}

impl From<u64> for EmergenceValue {
    fn from(v: u64) -> Self {
        Self(BigUint::from(v))
    }
}

impl fmt::Display for EmergenceValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl FromStr for EmergenceValue {
    type Err = num_bigint::ParseBigIntError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BigUint::from_str(s).map(Self)
    }
}

impl Serialize for EmergenceValue {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0.to_str_radix(10))
    }
}

impl<'de> Deserialize<'de> for EmergenceValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Sum over every vertex `x` outside `observed` of the paths inside
/// `observed` that start at a downstream neighbour of `x` (one per edge, so
/// parallel edges count separately).
pub fn emergence_network(g: &Quiver, observed: &VertexSet) -> Result<EmergenceValue, GraphError> {
    let mask = graph::vertex_mask(g, observed)?;
    let paths = graph::paths_from_each(g, &mask, |_| true)?;
    let total: BigUint = g
        .edges()
        .iter()
        .filter(|e| !mask[e.tail.0] && mask[e.head.0])
        .map(|e| &paths[e.head.0])
        .sum();
    Ok(total.into())
}

fn check_profile(shape: &LayeredShape, profile: &ActivationProfile) -> Result<(), EmergenceError> {
    if profile.len() != shape.depth() {
        return Err(EmergenceError::ShapeMismatch(format!(
            "profile has {} entries for {} layers",
            profile.len(),
            shape.depth()
        )));
    }
    for (idx, (a, n)) in profile.counts().iter().zip(shape.sizes()).enumerate() {
        if a > n {
            return Err(EmergenceError::ShapeMismatch(format!(
                "layer {}: {a} active nodes out of {n}",
                idx + 1
            )));
        }
    }
    Ok(())
}

/// One `(i, j)` summand of the layered measure: paths from the inactive
/// nodes of layer `i` to the active nodes of layer `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmergenceTerm {
    pub from_layer: usize,
    pub to_layer: usize,
    pub paths: EmergenceValue,
}

/// Shared kernel of the layered and convolutional forms: `through[k]` is the
/// multiplicity contributed by an intermediate layer `k`.
fn layered_terms(
    inactive: impl Iterator<Item = BigUint>,
    active: &[usize],
    through: &[u64],
) -> Vec<EmergenceTerm> {
    let depth = active.len();
    let mut terms = Vec::new();
    for (i, idle) in inactive.enumerate().take(depth.saturating_sub(1)) {
        let mut prod = BigUint::one();
        for j in (i + 1)..depth {
            if j > i + 1 {
                prod *= through[j - 1];
            }
            let value = &idle * &prod * active[j];
            terms.push(EmergenceTerm {
                from_layer: i + 1,
                to_layer: j + 1,
                paths: value.into(),
            });
        }
    }
    terms
}

pub fn emergence_layered_terms(
    shape: &LayeredShape,
    profile: &ActivationProfile,
) -> Result<Vec<EmergenceTerm>, EmergenceError> {
    check_profile(shape, profile)?;
    let through: Vec<u64> = profile.counts().iter().map(|&a| a as u64).collect();
    Ok(layered_terms(
        inactive_counts(shape, profile),
        profile.counts(),
        &through,
    ))
}

fn inactive_counts<'a>(
    shape: &'a LayeredShape,
    profile: &'a ActivationProfile,
) -> impl Iterator<Item = BigUint> + 'a {
    shape
        .sizes()
        .iter()
        .zip(profile.counts())
        .map(|(&n, &a)| BigUint::from(n - a))
}

fn sum_terms(terms: &[EmergenceTerm]) -> EmergenceValue {
    terms.iter().map(|t| &t.paths.0).sum::<BigUint>().into()
}

/// Closed form for a fully connected feedforward network:
/// `E = Σ_i Σ_{j>i} (n_i − a_i) · a_j · Π_{i<k<j} a_k`.
pub fn emergence_layered(
    shape: &LayeredShape,
    profile: &ActivationProfile,
) -> Result<EmergenceValue, EmergenceError> {
    Ok(sum_terms(&emergence_layered_terms(shape, profile)?))
}

pub fn emergence_conv_terms(
    shape: &LayeredShape,
    profile: &ActivationProfile,
    filters: &[u64],
) -> Result<Vec<EmergenceTerm>, EmergenceError> {
    check_profile(shape, profile)?;
    if filters.len() != shape.depth() {
        return Err(EmergenceError::ShapeMismatch(format!(
            "{} filter counts for {} layers",
            filters.len(),
            shape.depth()
        )));
    }
    Ok(layered_terms(
        inactive_counts(shape, profile),
        profile.counts(),
        filters,
    ))
}

/// Convolutional variant: intermediate layers contribute their filter count
/// `m_k` instead of `a_k`. Channels are treated as nodes.
pub fn emergence_conv(
    shape: &LayeredShape,
    profile: &ActivationProfile,
    filters: &[u64],
) -> Result<EmergenceValue, EmergenceError> {
    Ok(sum_terms(&emergence_conv_terms(shape, profile, filters)?))
}

/// `Σ_{a ∈ deleted} dim W(ta) · #paths from ha`, paths counted in the quiver
/// with the deleted edges removed.
pub fn derived_functor_dim(
    rep: &QuiverRep,
    deleted: &[EdgeId],
) -> Result<EmergenceValue, EmergenceError> {
    let all = rep.quiver().all_vertices();
    derived_functor_dim_within(rep, deleted, &all)
}

/// As [`derived_functor_dim`], but the functor also forgets every vertex
/// outside `kept`: paths must stay inside `kept`, and a deleted edge whose
/// head is forgotten contributes nothing.
///
/// With unit dimensions, `kept = H` and `deleted` the out-edges of the
/// complement of `H`, this equals [`emergence_network`].
pub fn derived_functor_dim_within(
    rep: &QuiverRep,
    deleted: &[EdgeId],
    kept: &VertexSet,
) -> Result<EmergenceValue, EmergenceError> {
    let q = rep.quiver();
    let mut is_deleted = vec![false; q.edges().len()];
    for &id in deleted {
        q.edge(id)?;
        is_deleted[id.0] = true;
    }
    let mask = graph::vertex_mask(q, kept)?;
    let paths = graph::paths_from_each(q, &mask, |e| !is_deleted[e.id.0])?;
    let mut total = BigUint::zero();
    for &id in deleted {
        let e = q.edge(id)?;
        total += &paths[e.head.0] * rep.dim(e.tail);
    }
    Ok(total.into())
}

fn check_index(shape: &LayeredShape, i: usize) -> Result<(), EmergenceError> {
    if i == 0 || i > shape.depth() {
        Err(EmergenceError::Index {
            index: i,
            depth: shape.depth(),
        })
    } else {
        Ok(())
    }
}

/// Net change in path count when layer `i` loses an active node, with the
/// layers before it inactive and the layers after it fully active:
/// `−n_{i−1} + n_{i+1} + n_{i+1}n_{i+2} + … + n_{i+1}⋯n_N`, with `n_0 = 0`.
pub fn pivot_delta(shape: &LayeredShape, i: usize) -> Result<BigInt, EmergenceError> {
    check_index(shape, i)?;
    let n = shape.sizes();
    let mut gain = BigUint::zero();
    let mut prod = BigUint::one();
    for &width in &n[i..] {
        prod *= width;
        gain += &prod;
    }
    let loss = if i >= 2 { n[i - 2] } else { 0 };
    Ok(BigInt::from(gain) - BigInt::from(loss))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PivotReport {
    /// Largest 1-based layer with a strictly positive delta.
    pub pivot: Option<usize>,
    /// `deltas[k]` belongs to layer `k + 1`; serialized as decimal strings.
    #[serde(with = "signed_decimal_vec")]
    pub deltas: Vec<BigInt>,
}

pub fn choose_pivot(shape: &LayeredShape) -> PivotReport {
    let deltas: Vec<BigInt> = (1..=shape.depth())
        .map(|i| pivot_delta(shape, i).expect("index within depth"))
        .collect();
    let pivot = deltas.iter().rposition(|d| d.is_positive()).map(|k| k + 1);
    PivotReport { pivot, deltas }
}

/// Exact change of the layered measure when `a_i` drops by one.
pub fn exact_delta(
    shape: &LayeredShape,
    profile: &ActivationProfile,
    i: usize,
) -> Result<BigInt, EmergenceError> {
    check_index(shape, i)?;
    check_profile(shape, profile)?;
    if profile.counts()[i - 1] == 0 {
        return Err(EmergenceError::Underflow { layer: i });
    }
    let before = emergence_layered(shape, profile)?;
    let mut lowered = profile.clone();
    lowered.0[i - 1] -= 1;
    let after = emergence_layered(shape, &lowered)?;
    Ok(BigInt::from(after.0) - BigInt::from(before.0))
}

mod signed_decimal_vec {
    use num_bigint::BigInt;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[BigInt], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|d| d.to_str_radix(10)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<BigInt>, D::Error> {
        Vec::<String>::deserialize(d)?
            .iter()
            .map(|s| s.parse().map_err(serde::de::Error::custom))
            .collect()
    }
}
