//! Multiclass extension: softmax (cross-entropy) DP-SGD on projected
//! features. Outside the binary margin analysis; used for ingested feature
//! files with more than two classes.

use crate::data::normalize_flat;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::optim::SgdSchedule;
use crate::rng::Rng;
use crate::spectral::ProjectionBasis;

use super::features::FeatureTable;

/// Unit-norm points with class indices into `classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct MulticlassDataset {
    pub dim: usize,
    pub values: Vec<f64>,
    pub labels: Vec<usize>,
    pub classes: Vec<i64>,
}

impl MulticlassDataset {
    pub fn from_table(table: &FeatureTable) -> Result<Self> {
        let raw = table
            .labels
            .as_ref()
            .ok_or_else(|| Error::InvalidData("multiclass training needs labels".into()))?;
        let classes: Vec<i64> = table.class_counts().into_keys().collect();
        if classes.len() < 2 {
            return Err(Error::InvalidData("need at least two classes".into()));
        }
        let labels = raw
            .iter()
            .map(|l| classes.binary_search(l).expect("class list built from labels"))
            .collect();
        let mut values = table.values.clone();
        normalize_flat(table.dim, &mut values)?;
        Ok(Self {
            dim: table.dim,
            values,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut values = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            values.extend_from_slice(self.x(i));
        }
        Self {
            dim: self.dim,
            values,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes.clone(),
        }
    }

    pub fn project(&self, basis: &ProjectionBasis) -> Result<Self> {
        if basis.source_dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: basis.source_dim(),
                found: self.dim,
            });
        }
        let k = basis.target_dim();
        let mut values = vec![0.0; self.len() * k];
        for (i, out) in values.chunks_exact_mut(k).enumerate() {
            basis.project_point(self.x(i), out);
        }
        Ok(Self {
            dim: k,
            values,
            labels: self.labels.clone(),
            classes: self.classes.clone(),
        })
    }
}

/// One weight row per class, jointly inside the unit Frobenius ball.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxModel {
    pub dim: usize,
    pub n_classes: usize,
    pub weights: Vec<f64>,
}

impl SoftmaxModel {
    fn row(&self, c: usize) -> &[f64] {
        &self.weights[c * self.dim..(c + 1) * self.dim]
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        (0..self.n_classes)
            .map(|c| dot(self.row(c), x))
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (c, s)| if s > best.1 { (c, s) } else { best })
            .0
    }

    pub fn error_rate(&self, data: &MulticlassDataset) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let wrong = (0..data.len()).filter(|&i| self.predict(data.x(i)) != data.labels[i]).count();
        wrong as f64 / data.len() as f64
    }

    fn probabilities(&self, x: &[f64], out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(c), x);
        }
        let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for o in out.iter_mut() {
            *o = (*o - max).exp();
            total += *o;
        }
        for o in out.iter_mut() {
            *o /= total;
        }
    }
}

/// DP-SGD on the cross-entropy loss with per-example Frobenius-norm clipping.
/// Each step uses a Poisson batch at rate `batch_size / n`.
pub fn softmax_dp_sgd(
    data: &MulticlassDataset,
    schedule: &SgdSchedule,
    noise_multiplier: f64,
    rng: &mut Rng,
) -> Result<SoftmaxModel> {
    let n = data.len();
    if n == 0 {
        return Err(Error::EmptyDataset("no training rows".into()));
    }
    schedule.validate(n)?;
    if noise_multiplier > 0.0 && !schedule.clip_norm.is_finite() {
        return Err(Error::BadSchedule("noise requires a finite clip norm".into()));
    }
    let c = data.classes.len();
    let d = data.dim;
    let mut model = SoftmaxModel {
        dim: d,
        n_classes: c,
        weights: vec![0.0; c * d],
    };
    let q = schedule.sampling_rate(n);
    let noise_std = noise_multiplier * schedule.clip_norm;
    let mut sum = vec![0.0; c * d];
    let mut p = vec![0.0; c];
    for t in 1..=schedule.steps {
        sum.fill(0.0);
        for i in 0..n {
            if q < 1.0 && !rng.bernoulli(q) {
                continue;
            }
            let x = data.x(i);
            model.probabilities(x, &mut p);
            p[data.labels[i]] -= 1.0;
            // ||(p - e_y) x^T||_F = ||p - e_y|| ||x||
            let g = norm(&p) * norm(x);
            let f = if g > schedule.clip_norm { schedule.clip_norm / g } else { 1.0 };
            for (cls, pc) in p.iter().enumerate() {
                let row = &mut sum[cls * d..(cls + 1) * d];
                for (s, xi) in row.iter_mut().zip(x) {
                    *s += f * pc * xi;
                }
            }
        }
        if noise_std > 0.0 {
            for s in sum.iter_mut() {
                *s += noise_std * rng.normal();
            }
        }
        let step = schedule.learning_rate.at(t) / schedule.batch_size as f64;
        for (w, s) in model.weights.iter_mut().zip(&sum) {
            *w -= step * s;
        }
        let fro = norm(&model.weights);
        if fro > 1.0 {
            model.weights.iter_mut().for_each(|w| *w /= fro);
        }
    }
    Ok(model)
}
