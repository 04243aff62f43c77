use serde::{Deserialize, Serialize};

use super::loss::{project_in_place, Loss};
use crate::data::{HalfspaceModel, LabeledDataset};
use crate::error::{Error, Result};
use crate::linalg::{axpy, norm};
use crate::rng::Rng;

pub const DEFAULT_CLIP_NORM: f64 = 1.0;
pub const DEFAULT_LEARNING_RATES: [f64; 3] = [0.01, 0.1, 1.0];
pub const DEFAULT_STEPS: [u64; 5] = [500, 1000, 3000, 5000, 6000];
pub const DEFAULT_BATCH_SIZES: [usize; 3] = [128, 512, 1024];
pub const DEFAULT_DELTA: f64 = 1e-5;

/// Step size as a function of the 1-based step index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LearningRate {
    Constant(f64),
    /// `base / sqrt(t)`.
    InverseSqrt(f64),
}

impl LearningRate {
    pub fn at(&self, t: u64) -> f64 {
        match *self {
            LearningRate::Constant(lr) => lr,
            LearningRate::InverseSqrt(base) => base / (t as f64).sqrt(),
        }
    }

    fn base(&self) -> f64 {
        match *self {
            LearningRate::Constant(v) | LearningRate::InverseSqrt(v) => v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BatchSampling {
    /// Each example joins the batch independently with probability `batch_size / n`.
    #[default]
    Poisson,
    /// Exactly `batch_size` examples drawn without replacement.
    FixedSize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdSchedule {
    pub steps: u64,
    pub learning_rate: LearningRate,
    pub batch_size: usize,
    /// `f64::INFINITY` disables clipping.
    pub clip_norm: f64,
    pub sampling: BatchSampling,
}

impl SgdSchedule {
    pub fn new(steps: u64, learning_rate: f64, batch_size: usize) -> Self {
        Self {
            steps,
            learning_rate: LearningRate::Constant(learning_rate),
            batch_size,
            clip_norm: DEFAULT_CLIP_NORM,
            sampling: BatchSampling::Poisson,
        }
    }

    /// Fraction of the dataset touched per step, as seen by the accountant.
    pub fn sampling_rate(&self, n: usize) -> f64 {
        (self.batch_size as f64 / n as f64).min(1.0)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::BadSchedule("steps must be >= 1".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::BadSchedule(format!("clip norm {} must be positive", self.clip_norm)));
        }
        if self.batch_size == 0 || self.batch_size > n {
            return Err(Error::BadSchedule(format!(
                "batch size {} must be in 1..={n}",
                self.batch_size
            )));
        }
        let lr = self.learning_rate.base();
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::BadSchedule(format!("learning rate {lr} must be positive")));
        }
        Ok(())
    }
}

/// Per-step diagnostics from [`dp_sgd_traced`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SgdTrace {
    /// Largest per-example gradient norm after clipping, per step.
    pub max_clipped_norm: Vec<f64>,
    /// Iterates after each step; entry 0 is the initial point.
    pub iterates: Vec<Vec<f64>>,
}

/// Sums clipped per-example gradients over `batch` into `sum`; returns the
/// largest clipped norm.
pub(super) fn clipped_gradient_sum(
    loss: &Loss,
    w: &[f64],
    data: &LabeledDataset,
    batch: &[usize],
    clip_norm: f64,
    sum: &mut [f64],
    scratch: &mut [f64],
) -> f64 {
    sum.fill(0.0);
    let mut max_norm: f64 = 0.0;
    for &i in batch {
        loss.grad_into(w, data.x(i), data.y(i), scratch);
        if clip_norm.is_finite() {
            let g = norm(scratch);
            if g > clip_norm {
                let mut f = clip_norm / g;
                // rounding can leave the rescaled norm an ulp above the bound
                while norm_scaled(scratch, f) > clip_norm {
                    f *= 1.0 - f64::EPSILON;
                }
                for v in scratch.iter_mut() {
                    *v *= f;
                }
            }
        }
        max_norm = max_norm.max(norm(scratch));
        axpy(1.0, scratch, sum);
    }
    max_norm
}

fn norm_scaled(v: &[f64], f: f64) -> f64 {
    v.iter().map(|x| (x * f) * (x * f)).sum::<f64>().sqrt()
}

fn draw_batch(schedule: &SgdSchedule, n: usize, pool: &mut [usize], batch: &mut Vec<usize>, rng: &mut Rng) {
    batch.clear();
    if schedule.batch_size == n {
        batch.extend(0..n);
        return;
    }
    match schedule.sampling {
        BatchSampling::Poisson => {
            let q = schedule.sampling_rate(n);
            batch.extend((0..n).filter(|_| rng.bernoulli(q)));
        }
        BatchSampling::FixedSize => {
            for j in 0..schedule.batch_size {
                let k = j + rng.index(n - j);
                pool.swap(j, k);
            }
            batch.extend_from_slice(&pool[..schedule.batch_size]);
            batch.sort_unstable();
        }
    }
}

/// Differentially private SGD: clipped per-example gradients, Gaussian noise
/// of standard deviation `noise_multiplier * clip_norm` on their sum, a step
/// along the batch average, then projection onto the unit ball. Starts at 0.
pub fn dp_sgd(
    data: &LabeledDataset,
    loss: &Loss,
    schedule: &SgdSchedule,
    noise_multiplier: f64,
    rng: &mut Rng,
) -> Result<HalfspaceModel> {
    run(data, loss, schedule, noise_multiplier, rng, None)
}

/// [`dp_sgd`] that also records per-step diagnostics.
pub fn dp_sgd_traced(
    data: &LabeledDataset,
    loss: &Loss,
    schedule: &SgdSchedule,
    noise_multiplier: f64,
    rng: &mut Rng,
) -> Result<(HalfspaceModel, SgdTrace)> {
    let mut trace = SgdTrace::default();
    let model = run(data, loss, schedule, noise_multiplier, rng, Some(&mut trace))?;
    Ok((model, trace))
}

fn run(
    data: &LabeledDataset,
    loss: &Loss,
    schedule: &SgdSchedule,
    noise_multiplier: f64,
    rng: &mut Rng,
    mut trace: Option<&mut SgdTrace>,
) -> Result<HalfspaceModel> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("dp_sgd needs labelled data".into()));
    }
    let n = data.len();
    schedule.validate(n)?;
    if !(noise_multiplier >= 0.0 && noise_multiplier.is_finite()) {
        return Err(Error::BadSigma(noise_multiplier));
    }
    if noise_multiplier > 0.0 && !schedule.clip_norm.is_finite() {
        return Err(Error::BadSchedule("noise requires a finite clip norm".into()));
    }
    let d = data.dim();
    let noise_std = noise_multiplier * schedule.clip_norm;
    let mut w = vec![0.0; d];
    let mut sum = vec![0.0; d];
    let mut scratch = vec![0.0; d];
    let mut pool: Vec<usize> = (0..n).collect();
    let mut batch = Vec::with_capacity(schedule.batch_size);
    if let Some(t) = trace.as_deref_mut() {
        t.iterates.push(w.clone());
    }
    for t in 1..=schedule.steps {
        draw_batch(schedule, n, &mut pool, &mut batch, rng);
        let max_norm = clipped_gradient_sum(loss, &w, data, &batch, schedule.clip_norm, &mut sum, &mut scratch);
        if noise_std > 0.0 {
            for v in sum.iter_mut() {
                *v += noise_std * rng.normal();
            }
        }
        let step = schedule.learning_rate.at(t) / schedule.batch_size as f64;
        axpy(-step, &sum, &mut w);
        project_in_place(&mut w);
        if let Some(tr) = trace.as_deref_mut() {
            tr.max_clipped_norm.push(max_norm);
            tr.iterates.push(w.clone());
        }
    }
    Ok(HalfspaceModel::from_ball(w))
}
