//! Two-component Gaussian mixture with a spiked covariance, whose principal
//! directions, eigengap and separator are known in closed form, plus a
//! contaminated sampler for distribution-shift experiments.
//!
//! A point is `x = y μ + sqrt(θ) g₀ w̃ + σ g` with `y` uniform on ±1 and
//! standard Gaussian `g₀`, `g`. Its second-moment matrix is
//! `μμᵀ + θ w̃w̃ᵀ + σ² I`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{Label, LabeledDataset, UnlabeledDataset};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::optim::project_unit_ball;
use crate::rng::Rng;

const ORTHO_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmSpec {
    pub d: usize,
    pub theta: f64,
    pub sigma2: f64,
    pub mu: Vec<f64>,
    pub w_tilde: Vec<f64>,
}

fn basis_vector(d: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[i] = 1.0;
    v
}

impl GmmSpec {
    /// Axis-aligned spec with `μ = e₁`, `w̃ = e₂`.
    pub fn new(d: usize, theta: f64, sigma2: f64) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidData("mixture needs d >= 2".into()));
        }
        Self::with_directions(theta, sigma2, basis_vector(d, 0), basis_vector(d, 1))
    }

    /// The family `θ = σ² = 1 / (2 c sqrt(d))`.
    pub fn scaled(d: usize, c: f64) -> Result<Self> {
        let v = 1.0 / (2.0 * c * (d as f64).sqrt());
        Self::new(d, v, v)
    }

    pub fn with_directions(theta: f64, sigma2: f64, mu: Vec<f64>, w_tilde: Vec<f64>) -> Result<Self> {
        let spec = Self {
            d: mu.len(),
            theta,
            sigma2,
            mu,
            w_tilde,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Seeded random orthonormal `(μ, w̃)`.
    pub fn random_directions(d: usize, theta: f64, sigma2: f64, rng: &mut Rng) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidData("mixture needs d >= 2".into()));
        }
        let mu = rng.unit_sphere(d);
        let w = loop {
            let mut w = rng.normal_vec(d);
            let c = dot(&w, &mu);
            for (wi, mi) in w.iter_mut().zip(&mu) {
                *wi -= c * mi;
            }
            let n = norm(&w);
            if n > 1e-6 {
                break w.into_iter().map(|v| v / n).collect::<Vec<_>>();
            }
        };
        Self::with_directions(theta, sigma2, mu, w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 || self.w_tilde.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                found: self.w_tilde.len(),
            });
        }
        if !(self.theta >= 0.0 && self.theta.is_finite() && self.sigma2 >= 0.0 && self.sigma2.is_finite()) {
            return Err(Error::InvalidData(format!(
                "theta {} and sigma2 {} must be finite and non-negative",
                self.theta, self.sigma2
            )));
        }
        if (norm(&self.mu) - 1.0).abs() > ORTHO_TOL || (norm(&self.w_tilde) - 1.0).abs() > ORTHO_TOL {
            return Err(Error::InvalidData("mu and w_tilde must be unit vectors".into()));
        }
        if dot(&self.mu, &self.w_tilde).abs() > ORTHO_TOL {
            return Err(Error::InvalidData("mu and w_tilde must be orthogonal".into()));
        }
        Ok(())
    }
}

/// Closed-form quantities attached to a [`GmmSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmTheory {
    /// Radius containing the raw sample with high probability.
    pub m: f64,
    /// Margin lower bound after dividing by `m`.
    pub gamma: f64,
    /// Eigengap `λ₂ - λ₃ = θ`.
    pub delta_k: f64,
    pub xi: f64,
}

impl GmmTheory {
    /// `M = 1 + t (σ² + θ)` and `γ = 1 - t (σ² + θ)` for a Gaussian tail factor `t`.
    pub fn from_tail_factor(spec: &GmmSpec, t: f64) -> Result<Self> {
        let spread = t * (spec.sigma2 + spec.theta);
        let gamma = 1.0 - spread;
        if gamma <= 0.0 {
            return Err(Error::InfeasibleParams(format!(
                "margin bound {gamma} is not positive (theta {}, sigma2 {})",
                spec.theta, spec.sigma2
            )));
        }
        Ok(Self {
            m: 1.0 + spread,
            gamma,
            delta_k: spec.theta,
            xi: 0.0,
        })
    }
}

/// `M` and `γ` with `t = 4 sqrt(d) + 2 sqrt(ln(2n/δ))`.
pub fn gmm_theoretical_params(spec: &GmmSpec, n: usize, delta: f64) -> Result<GmmTheory> {
    if !(delta > 0.0 && delta < 1.0) || n == 0 {
        return Err(Error::InfeasibleParams(format!("need n >= 1 and delta in (0, 1), got {n}, {delta}")));
    }
    let t = 4.0 * (spec.d as f64).sqrt() + 2.0 * (2.0 * n as f64 / delta).ln().sqrt();
    GmmTheory::from_tail_factor(spec, t)
}

/// `θ w̃w̃ᵀ + μμᵀ + σ² I`.
pub fn gmm_population_covariance(spec: &GmmSpec) -> DMatrix<f64> {
    let d = spec.d;
    DMatrix::from_fn(d, d, |i, j| {
        let diag = if i == j { spec.sigma2 } else { 0.0 };
        spec.theta * spec.w_tilde[i] * spec.w_tilde[j] + spec.mu[i] * spec.mu[j] + diag
    })
}

/// How raw mixture draws are mapped into the unit ball.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Divide every point by the largest norm in the sample.
    #[default]
    MaxNorm,
    /// Scale each point to unit norm.
    UnitSphere,
    /// Divide by a fixed radius and clip points that remain outside the ball.
    FixedRadius(f64),
}

#[derive(Debug, Clone)]
pub struct GmmSample {
    pub data: LabeledDataset,
    raw: Vec<f64>,
    /// Common divisor for [`Normalization::MaxNorm`] and [`Normalization::FixedRadius`].
    pub normalizer: Option<f64>,
}

impl GmmSample {
    /// Un-normalized draw `i`.
    pub fn raw_point(&self, i: usize) -> &[f64] {
        let d = self.data.dim();
        &self.raw[i * d..(i + 1) * d]
    }

    pub fn raw_flat(&self) -> &[f64] {
        &self.raw
    }
}

fn draw_raw(spec: &GmmSpec, n: usize, rng: &mut Rng) -> (Vec<f64>, Vec<Label>) {
    let d = spec.d;
    let theta_sd = spec.theta.sqrt();
    let sd = spec.sigma2.sqrt();
    let mut raw = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let y = if rng.bernoulli(0.5) { Label::POS } else { Label::NEG };
        let g0 = rng.normal();
        for j in 0..d {
            let g = rng.normal();
            raw.push(y.sign() * spec.mu[j] + theta_sd * g0 * spec.w_tilde[j] + sd * g);
        }
        labels.push(y);
    }
    (raw, labels)
}

fn normalize(raw: &[f64], d: usize, mode: Normalization) -> Result<(Vec<f64>, Option<f64>)> {
    let mut out = Vec::with_capacity(raw.len());
    match mode {
        Normalization::MaxNorm | Normalization::FixedRadius(_) => {
            let r = match mode {
                Normalization::FixedRadius(r) => {
                    if !(r > 0.0 && r.is_finite()) {
                        return Err(Error::InvalidData(format!("radius {r} must be positive")));
                    }
                    r
                }
                _ => raw.chunks_exact(d).map(norm).fold(0.0, f64::max),
            };
            if r == 0.0 {
                return Err(Error::ZeroVector { index: 0 });
            }
            for row in raw.chunks_exact(d) {
                let scaled: Vec<f64> = row.iter().map(|v| v / r).collect();
                out.extend(project_unit_ball(&scaled));
            }
            Ok((out, Some(r)))
        }
        Normalization::UnitSphere => {
            for (i, row) in raw.chunks_exact(d).enumerate() {
                let n = norm(row);
                if n == 0.0 {
                    return Err(Error::ZeroVector { index: i });
                }
                let scaled: Vec<f64> = row.iter().map(|v| v / n).collect();
                out.extend(project_unit_ball(&scaled));
            }
            Ok((out, None))
        }
    }
}

/// `n` labelled draws normalized by the sample's largest norm.
pub fn sample_gmm(spec: &GmmSpec, n: usize, rng: &mut Rng) -> Result<GmmSample> {
    sample_gmm_with(spec, n, Normalization::MaxNorm, rng)
}

pub fn sample_gmm_with(spec: &GmmSpec, n: usize, normalization: Normalization, rng: &mut Rng) -> Result<GmmSample> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::EmptyDataset("sample size must be >= 1".into()));
    }
    let (raw, labels) = draw_raw(spec, n, rng);
    let (values, normalizer) = normalize(&raw, spec.d, normalization)?;
    Ok(GmmSample {
        data: LabeledDataset::from_flat(spec.d, values, labels)?,
        raw,
        normalizer,
    })
}

#[derive(Debug, Clone)]
pub struct ShiftedSample {
    pub data: UnlabeledDataset,
    /// Whether point `i` came from the contaminating law.
    pub contaminated: Vec<bool>,
}

/// Unlabelled draws where each point is independently replaced, with
/// probability `eta`, by a uniform point on the unit sphere. The clean part
/// consumes `rng` exactly as [`sample_gmm`] does.
pub fn sample_shifted_unlabeled(spec: &GmmSpec, eta: f64, n: usize, rng: &mut Rng) -> Result<ShiftedSample> {
    sample_shifted_unlabeled_with(spec, eta, n, Normalization::MaxNorm, rng)
}

pub fn sample_shifted_unlabeled_with(
    spec: &GmmSpec,
    eta: f64,
    n: usize,
    normalization: Normalization,
    rng: &mut Rng,
) -> Result<ShiftedSample> {
    if !(0.0..1.0).contains(&eta) {
        return Err(Error::InfeasibleParams(format!("shift eta {eta} not in [0, 1)")));
    }
    let clean = sample_gmm_with(spec, n, normalization, rng)?;
    let mut contamination = rng.fork(0x5348_4946);
    let d = spec.d;
    let mut values = clean.data.points().as_flat().to_vec();
    let mut contaminated = vec![false; n];
    for (i, flag) in contaminated.iter_mut().enumerate() {
        if contamination.bernoulli(eta) {
            *flag = true;
            let z = contamination.unit_sphere(d);
            values[i * d..(i + 1) * d].copy_from_slice(&project_unit_ball(&z));
        }
    }
    Ok(ShiftedSample {
        data: UnlabeledDataset::from_flat(d, values)?,
        contaminated,
    })
}
