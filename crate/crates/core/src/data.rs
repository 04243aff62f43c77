//! Shared data model: datasets, halfspace models, privacy budgets, and the
//! normalization and public/private splitting helpers.
//!
//! Points are stored row-major in a flat buffer. Every point lies in the
//! closed unit ball; feature ingestion and [`normalize_to_unit_sphere`] put
//! them exactly on the sphere, while projections may shrink them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::rng::Rng;

/// Tolerance for the unit-norm invariants.
pub const NORM_TOL: f64 = 1e-9;

/// Binary label in {-1, +1}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Label(i8);

impl Label {
    pub const POS: Label = Label(1);
    pub const NEG: Label = Label(-1);

    pub fn from_int(v: i64) -> Option<Label> {
        match v {
            1 => Some(Label::POS),
            -1 => Some(Label::NEG),
            _ => None,
        }
    }

    pub fn value(self) -> i8 {
        self.0
    }

    #[inline]
    pub fn sign(self) -> f64 {
        self.0 as f64
    }
}

/// Row-major point matrix with a common dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    dim: usize,
    values: Vec<f64>,
}

impl Points {
    fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidData("dimension must be >= 1".into()));
        }
        if values.len() % dim != 0 {
            return Err(Error::InvalidData(format!(
                "buffer of length {} is not a multiple of dimension {dim}",
                values.len()
            )));
        }
        let p = Points { dim, values };
        for (i, row) in p.rows().enumerate() {
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!("point {i} coordinate {j} is not finite")));
            }
            let n = norm(row);
            if n > 1.0 + NORM_TOL {
                return Err(Error::InvalidData(format!(
                    "point {i} has norm {n} outside the unit ball"
                )));
            }
        }
        Ok(p)
    }

    fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map(Vec::len).ok_or_else(|| {
            Error::InvalidData("cannot infer dimension of an empty point list".into())
        })?;
        let mut values = Vec::with_capacity(rows.len() * dim);
        for row in &rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        Points::new(dim, values)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.values
    }

    fn select(&self, idx: &[usize]) -> Points {
        let mut values = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            values.extend_from_slice(self.row(i));
        }
        Points {
            dim: self.dim,
            values,
        }
    }
}

/// Private labelled sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    points: Points,
    labels: Vec<Label>,
}

impl LabeledDataset {
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<Label>) -> Result<Self> {
        let points = Points::from_rows(rows)?;
        Self::check(points, labels)
    }

    pub fn from_flat(dim: usize, values: Vec<f64>, labels: Vec<Label>) -> Result<Self> {
        Self::check(Points::new(dim, values)?, labels)
    }

    fn check(points: Points, labels: Vec<Label>) -> Result<Self> {
        if points.len() != labels.len() {
            return Err(Error::InvalidData(format!(
                "{} points but {} labels",
                points.len(),
                labels.len()
            )));
        }
        Ok(Self { points, labels })
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn points(&self) -> &Points {
        &self.points
    }

    #[inline]
    pub fn x(&self, i: usize) -> &[f64] {
        self.points.row(i)
    }

    #[inline]
    pub fn y(&self, i: usize) -> Label {
        self.labels[i]
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], Label)> {
        self.points.rows().zip(self.labels.iter().copied())
    }

    pub fn subset(&self, idx: &[usize]) -> LabeledDataset {
        LabeledDataset {
            points: self.points.select(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Drops the labels.
    pub fn unlabeled(&self) -> UnlabeledDataset {
        UnlabeledDataset {
            points: self.points.clone(),
        }
    }
}

/// Public unlabelled sample.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledDataset {
    points: Points,
}

impl UnlabeledDataset {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        Ok(Self {
            points: Points::from_rows(rows)?,
        })
    }

    pub fn from_flat(dim: usize, values: Vec<f64>) -> Result<Self> {
        Ok(Self {
            points: Points::new(dim, values)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &Points {
        &self.points
    }

    #[inline]
    pub fn x(&self, i: usize) -> &[f64] {
        self.points.row(i)
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.points.rows()
    }

    pub fn subset(&self, idx: &[usize]) -> UnlabeledDataset {
        UnlabeledDataset {
            points: self.points.select(idx),
        }
    }
}

/// Linear classifier `x -> sign(<w, x>)` with `w` in the unit ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfspaceModel {
    weights: Vec<f64>,
}

impl HalfspaceModel {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidData("model must have dimension >= 1".into()));
        }
        let n = norm(&weights);
        if !n.is_finite() || n > 1.0 + NORM_TOL {
            return Err(Error::InvalidData(format!("model norm {n} outside the unit ball")));
        }
        Ok(Self { weights })
    }

    pub(crate) fn from_ball(weights: Vec<f64>) -> Self {
        debug_assert!(norm(&weights) <= 1.0 + NORM_TOL);
        Self { weights }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x)
    }
}

/// Which privacy machinery a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrivacyMode {
    TheoreticalNoisySgd,
    RdpDpsgd,
    NonPrivate,
}

impl PrivacyMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PrivacyMode::TheoreticalNoisySgd => "theoretical-noisy-sgd",
            PrivacyMode::RdpDpsgd => "rdp-dpsgd",
            PrivacyMode::NonPrivate => "non-private",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
    pub mode: PrivacyMode,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64, mode: PrivacyMode) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::BadBudget(format!("delta {delta} not in (0, 1)")));
        }
        if mode != PrivacyMode::NonPrivate && !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::BadBudget(format!("epsilon {epsilon} must be positive and finite")));
        }
        Ok(Self { epsilon, delta, mode })
    }

    pub fn non_private() -> Self {
        Self {
            epsilon: f64::INFINITY,
            delta: 1e-5,
            mode: PrivacyMode::NonPrivate,
        }
    }

    pub fn is_private(&self) -> bool {
        self.mode != PrivacyMode::NonPrivate
    }
}

/// Vectors whose norm is this close to 1 are treated as already normalized,
/// which makes normalization exactly idempotent.
const RENORM_TOL: f64 = 1e-14;

fn normalize_row(row: &mut [f64], index: usize) -> Result<()> {
    let n = norm(row);
    if !(n >= 1e-12) {
        return Err(Error::ZeroVector { index });
    }
    let mut n = n;
    let mut rounds = 0;
    while (n - 1.0).abs() > RENORM_TOL && rounds < 4 {
        row.iter_mut().for_each(|x| *x /= n);
        n = norm(row);
        rounds += 1;
    }
    Ok(())
}

/// Scales each vector to unit Euclidean norm.
pub fn normalize_to_unit_sphere(points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    points
        .iter()
        .enumerate()
        .map(|(index, v)| {
            let mut out = v.clone();
            normalize_row(&mut out, index)?;
            Ok(out)
        })
        .collect()
}

/// In-place variant over a flat row-major buffer.
pub(crate) fn normalize_flat(dim: usize, values: &mut [f64]) -> Result<()> {
    for (index, row) in values.chunks_exact_mut(dim).enumerate() {
        normalize_row(row, index)?;
    }
    Ok(())
}

/// Randomly moves `floor(public_fraction * n)` points, labels stripped, into
/// the public part. Both parts keep the original relative order.
pub fn split_public_private(
    dataset: &LabeledDataset,
    public_fraction: f64,
    rng: &mut Rng,
) -> Result<(UnlabeledDataset, LabeledDataset)> {
    let n = dataset.len();
    let n_public = if public_fraction > 0.0 && public_fraction < 1.0 {
        (public_fraction * n as f64).floor() as usize
    } else {
        0
    };
    if n_public == 0 || n_public >= n {
        return Err(Error::BadFraction {
            fraction: public_fraction,
            n,
        });
    }
    let perm = rng.permutation(n);
    let mut public: Vec<usize> = perm[..n_public].to_vec();
    let mut private: Vec<usize> = perm[n_public..].to_vec();
    public.sort_unstable();
    private.sort_unstable();
    Ok((dataset.subset(&public).unlabeled(), dataset.subset(&private)))
}

/// Splits indices into (train, holdout) with `holdout_fraction` of each class
/// held out.
pub fn stratified_holdout(
    labels: &[Label],
    holdout_fraction: f64,
    rng: &mut Rng,
) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut hold = Vec::new();
    for class in [Label::NEG, Label::POS] {
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        let perm = rng.permutation(idx.len());
        let n_hold = (holdout_fraction * idx.len() as f64).round() as usize;
        for (j, &p) in perm.iter().enumerate() {
            if j < n_hold {
                hold.push(idx[p]);
            } else {
                train.push(idx[p]);
            }
        }
    }
    train.sort_unstable();
    hold.sort_unstable();
    (train, hold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    #[test]
    fn normalize_examples() {
        let out = normalize_to_unit_sphere(&[vec![3.0, 4.0]]).unwrap();
        assert!((out[0][0] - 0.6).abs() < 1e-15 && (out[0][1] - 0.8).abs() < 1e-15);
        let out = normalize_to_unit_sphere(&[vec![1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(out[0], vec![1.0, 0.0, 0.0]);
        assert!(matches!(
            normalize_to_unit_sphere(&[vec![0.0, 0.0]]),
            Err(Error::ZeroVector { index: 0 })
        ));
    }

    #[test]
    fn dataset_rejects_bad_input() {
        assert!(LabeledDataset::new(vec![vec![2.0, 0.0]], vec![Label::POS]).is_err());
        assert!(LabeledDataset::new(vec![vec![1.0, 0.0]], vec![]).is_err());
        assert!(UnlabeledDataset::new(vec![vec![1.0, 0.0], vec![1.0]]).is_err());
        assert!(HalfspaceModel::new(vec![1.0, 1.0]).is_err());
        assert!(PrivacyBudget::new(0.0, 1e-5, PrivacyMode::RdpDpsgd).is_err());
        assert!(PrivacyBudget::new(1.0, 1.0, PrivacyMode::RdpDpsgd).is_err());
        assert!(PrivacyBudget::new(f64::INFINITY, 1e-5, PrivacyMode::NonPrivate).is_ok());
    }

    fn toy(n: usize) -> LabeledDataset {
        let rows = (0..n)
            .map(|i| {
                let a = i as f64 * 0.37;
                vec![a.cos(), a.sin()]
            })
            .collect();
        let labels = (0..n).map(|i| if i % 2 == 0 { Label::POS } else { Label::NEG }).collect();
        LabeledDataset::new(rows, labels).unwrap()
    }

    #[test]
    fn split_counts_and_determinism() {
        let d = toy(10);
        let (p, s) = split_public_private(&d, 0.1, &mut Rng::new(1)).unwrap();
        assert_eq!((p.len(), s.len()), (1, 9));
        let (p2, s2) = split_public_private(&d, 0.1, &mut Rng::new(1)).unwrap();
        assert_eq!(p, p2);
        assert_eq!(s, s2);
        assert!(matches!(
            split_public_private(&d, 0.05, &mut Rng::new(1)),
            Err(Error::BadFraction { .. })
        ));
    }

    #[test]
    fn split_varies_with_seed() {
        let d = toy(100);
        let sets: Vec<Vec<u64>> = (0..20)
            .map(|s| {
                let (p, _) = split_public_private(&d, 0.1, &mut Rng::new(s)).unwrap();
                let mut v: Vec<u64> = p.iter().map(|r| r[0].to_bits()).collect();
                v.sort_unstable();
                v
            })
            .collect();
        let distinct: std::collections::HashSet<_> = sets.iter().collect();
        assert_eq!(distinct.len(), 20);
    }

    #[test]
    fn stratified_holdout_is_disjoint_partition() {
        let d = toy(51);
        let (tr, ho) = stratified_holdout(d.labels(), 0.2, &mut Rng::new(4));
        assert_eq!(tr.len() + ho.len(), 51);
        assert!(tr.iter().all(|i| !ho.contains(i)));
        let pos = ho.iter().filter(|&&i| d.y(i) == Label::POS).count();
        assert_eq!(pos, 5);
    }

    proptest! {
        #[test]
        fn normalization_idempotent(v in proptest::collection::vec(-10.0f64..10.0, 1..8)) {
            prop_assume!(norm(&v) > 1e-6);
            let once = normalize_to_unit_sphere(&[v]).unwrap();
            let twice = normalize_to_unit_sphere(&once).unwrap();
            prop_assert_eq!(&once, &twice);
            prop_assert!((norm(&once[0]) - 1.0).abs() < NORM_TOL);
        }

        #[test]
        fn split_is_partition(n in 2usize..=100, f_idx in 1usize..10, seed in 0u64..1000) {
            let fraction = f_idx as f64 / 10.0;
            let d = toy(n);
            let n_pub = (fraction * n as f64).floor() as usize;
            let res = split_public_private(&d, fraction, &mut Rng::new(seed));
            if n_pub == 0 || n_pub >= n {
                prop_assert!(res.is_err());
            } else {
                let (p, s) = res.unwrap();
                let mut all: Vec<u64> = p.iter().chain(s.points().rows()).map(|r| r[0].to_bits() ^ r[1].to_bits().rotate_left(7)).collect();
                let mut orig: Vec<u64> = d.points().rows().map(|r| r[0].to_bits() ^ r[1].to_bits().rotate_left(7)).collect();
                all.sort_unstable();
                orig.sort_unstable();
                prop_assert_eq!(all, orig);
            }
        }
    }
}

/// Datasets whose points can be mapped through a linear map into another
/// dimension, carrying labels along.
pub trait MapPoints: Sized {
    fn dim(&self) -> usize;
    fn map_points<F>(&self, out_dim: usize, f: F) -> Result<Self>
    where
        F: Fn(&[f64], &mut [f64]) + Sync;
}

fn map_flat<F>(points: &Points, out_dim: usize, f: F) -> Vec<f64>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    let mut out = vec![0.0; points.len() * out_dim];
    for (src, dst) in points.rows().zip(out.chunks_exact_mut(out_dim)) {
        f(src, dst);
    }
    out
}

impl MapPoints for LabeledDataset {
    fn dim(&self) -> usize {
        self.points.dim()
    }

    fn map_points<F>(&self, out_dim: usize, f: F) -> Result<Self>
    where
        F: Fn(&[f64], &mut [f64]) + Sync,
    {
        LabeledDataset::from_flat(out_dim, map_flat(&self.points, out_dim, f), self.labels.clone())
    }
}

impl MapPoints for UnlabeledDataset {
    fn dim(&self) -> usize {
        self.points.dim()
    }

    fn map_points<F>(&self, out_dim: usize, f: F) -> Result<Self>
    where
        F: Fn(&[f64], &mut [f64]) + Sync,
    {
        UnlabeledDataset::from_flat(out_dim, map_flat(&self.points, out_dim, f))
    }
}
