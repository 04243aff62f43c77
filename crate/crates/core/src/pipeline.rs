//! End-to-end fit: principal subspace from public unlabelled data, private
//! training on projected labelled data, and lifting back to the source space.

use serde::{Deserialize, Serialize};

use crate::data::{HalfspaceModel, LabeledDataset, PrivacyBudget, PrivacyMode, UnlabeledDataset};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::mechanisms::{calibrate_dpsgd_sigma, FormulaVariant};
use crate::optim::{
    a_noisy_sgd, dp_sgd, gd_baseline, Loss, NoisySgdConfig, NoisySgdReport, ScaledHingeLoss, SgdSchedule,
};
use crate::rng::Rng;
use crate::spectral::{empirical_covariance, estimate_xi, project, top_k_eigenbasis, ProjectionBasis};

/// `ζ = γ₀ (1 - ξ₀ - 0.1 γ₀)`.
pub fn compute_zeta(gamma0: f64, xi0: f64) -> Result<f64> {
    if !(gamma0 > 0.0 && gamma0 < 1.0) {
        return Err(Error::InfeasibleParams(format!("gamma0 {gamma0} not in (0, 1)")));
    }
    if !(0.0..1.0).contains(&xi0) || xi0 >= 1.0 - gamma0 / 10.0 {
        return Err(Error::InfeasibleParams(format!(
            "xi0 {xi0} must lie in [0, 1 - gamma0/10) = [0, {})",
            1.0 - gamma0 / 10.0
        )));
    }
    Ok(gamma0 * (1.0 - xi0 - 0.1 * gamma0))
}

/// `ζ = γ₀ (1 - ξ₀ - 0.1 γ₀ - 7η/Δ_k)` for unlabelled data within TV distance `η`
/// of the labelled marginal.
pub fn compute_zeta_shift(gamma0: f64, xi0: f64, eta: f64, delta_k: f64) -> Result<f64> {
    if !(gamma0 > 0.0 && gamma0 < 1.0) {
        return Err(Error::InfeasibleParams(format!("gamma0 {gamma0} not in (0, 1)")));
    }
    if !(xi0 >= 0.0 && xi0 < 0.5 - gamma0 / 10.0) {
        return Err(Error::InfeasibleParams(format!(
            "xi0 {xi0} must lie in [0, 1/2 - gamma0/10) = [0, {})",
            0.5 - gamma0 / 10.0
        )));
    }
    if !(delta_k > 0.0 && delta_k.is_finite()) {
        return Err(Error::InfeasibleParams(format!("eigengap {delta_k} must be positive")));
    }
    if !(eta >= 0.0 && eta < delta_k / 14.0) {
        return Err(Error::InfeasibleParams(format!(
            "shift eta {eta} must lie in [0, delta_k/14) = [0, {})",
            delta_k / 14.0
        )));
    }
    let zeta = gamma0 * (1.0 - xi0 - 0.1 * gamma0 - 7.0 * eta / delta_k);
    if zeta <= 0.0 {
        return Err(Error::InfeasibleParams(format!("zeta {zeta} is not positive")));
    }
    Ok(zeta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    #[default]
    ScaledHinge,
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpsgdSettings {
    pub schedule: SgdSchedule,
    pub loss: LossKind,
}

impl Default for DpsgdSettings {
    fn default() -> Self {
        Self {
            schedule: SgdSchedule::new(1000, 0.1, 512),
            loss: LossKind::ScaledHinge,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GdSettings {
    pub steps: u64,
    pub learning_rate: f64,
}

impl Default for GdSettings {
    fn default() -> Self {
        Self {
            steps: 1000,
            learning_rate: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PillarParams {
    pub k: usize,
    pub gamma0: f64,
    pub xi0: f64,
    /// Total-variation bound between the unlabelled and labelled marginals.
    pub eta: f64,
    /// Eigengap, required when `eta > 0`.
    pub delta_k: Option<f64>,
    pub budget: PrivacyBudget,
    pub beta: f64,
    pub noisy_sgd: NoisySgdConfig,
    pub dpsgd: DpsgdSettings,
    pub gd: GdSettings,
    /// Known separator, used only for the ξ diagnostic in the report.
    pub reference: Option<Vec<f64>>,
}

impl PillarParams {
    pub fn new(k: usize, gamma0: f64, xi0: f64, budget: PrivacyBudget) -> Self {
        Self {
            k,
            gamma0,
            xi0,
            eta: 0.0,
            delta_k: None,
            budget,
            beta: 0.1,
            noisy_sgd: NoisySgdConfig::default(),
            dpsgd: DpsgdSettings::default(),
            gd: GdSettings::default(),
            reference: None,
        }
    }

    pub fn zeta(&self) -> Result<f64> {
        if self.eta > 0.0 {
            let delta_k = self
                .delta_k
                .ok_or_else(|| Error::InfeasibleParams("a shift eta > 0 needs the eigengap delta_k".into()))?;
            compute_zeta_shift(self.gamma0, self.xi0, self.eta, delta_k)
        } else {
            compute_zeta(self.gamma0, self.xi0)
        }
    }
}

/// Diagnostics of one [`pillar_fit`] call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: PrivacyMode,
    pub k: usize,
    pub zeta: f64,
    /// Empirical `λ_k - λ_{k+1}` of the unlabelled second-moment matrix.
    pub delta_k_hat: Option<f64>,
    /// `1 - ||Â Âᵀ w̃||` for the reference separator, when one was given.
    pub xi_hat: Option<f64>,
    /// DP-SGD noise multiplier.
    pub noise_multiplier: Option<f64>,
    /// Per-step variance of the first noisy-SGD run.
    pub sigma_squared: Option<f64>,
    /// Optimizer steps (summed over repetitions for noisy SGD).
    pub steps: u64,
    pub steps_capped: bool,
    pub batch_size: Option<usize>,
    pub budget_split: Option<String>,
    pub formula_variant: Option<FormulaVariant>,
    pub noisy_sgd: Option<NoisySgdReport>,
}

/// Top-`k` eigenbasis of the uncentred second-moment matrix of the public sample.
pub fn fit_basis(unlabeled: &UnlabeledDataset, k: usize) -> Result<ProjectionBasis> {
    let cov = empirical_covariance(unlabeled, false)?;
    top_k_eigenbasis(&cov, k)
}

/// Projects, trains privately, and lifts: returns `ŵ = Â v` with `||ŵ|| = ||v|| <= 1`.
pub fn pillar_fit(
    labeled: &LabeledDataset,
    unlabeled: &UnlabeledDataset,
    params: &PillarParams,
    rng: &mut Rng,
) -> Result<(HalfspaceModel, RunReport)> {
    if labeled.dim() != unlabeled.dim() {
        return Err(Error::DimensionMismatch {
            expected: unlabeled.dim(),
            found: labeled.dim(),
        });
    }
    params.zeta()?;
    let basis = fit_basis(unlabeled, params.k)?;
    pillar_fit_with_basis(labeled, &basis, params, rng)
}

/// [`pillar_fit`] with a precomputed basis (its width overrides `params.k`).
pub fn pillar_fit_with_basis(
    labeled: &LabeledDataset,
    basis: &ProjectionBasis,
    params: &PillarParams,
    rng: &mut Rng,
) -> Result<(HalfspaceModel, RunReport)> {
    let zeta = params.zeta()?;
    if labeled.is_empty() {
        return Err(Error::EmptyDataset("no labelled points".into()));
    }
    let projected = project(basis, labeled)?;
    let xi_hat = match &params.reference {
        Some(w) => {
            let n = norm(w);
            let unit: Vec<f64> = w.iter().map(|v| v / n).collect();
            Some(estimate_xi(basis, &unit)?)
        }
        None => None,
    };
    let mut report = RunReport {
        mode: params.budget.mode,
        k: basis.target_dim(),
        zeta,
        delta_k_hat: basis.gap_to_next(),
        xi_hat,
        noise_multiplier: None,
        sigma_squared: None,
        steps: 0,
        steps_capped: false,
        batch_size: None,
        budget_split: None,
        formula_variant: None,
        noisy_sgd: None,
    };

    let v = match params.budget.mode {
        PrivacyMode::NonPrivate => {
            report.steps = params.gd.steps;
            gd_baseline(&projected, zeta, params.gd.steps, params.gd.learning_rate)?
        }
        PrivacyMode::TheoreticalNoisySgd => {
            let b = &params.budget;
            let (model, r) = a_noisy_sgd(&projected, zeta, b.epsilon, b.delta, params.beta / 4.0, &params.noisy_sgd, rng)?;
            report.steps = r.runs.iter().map(|x| x.steps).sum();
            report.steps_capped = r.runs.iter().any(|x| x.capped);
            report.sigma_squared = r.runs.first().map(|x| x.sigma_squared);
            report.budget_split = Some(r.budget_split.label());
            report.formula_variant = Some(params.noisy_sgd.formula_variant);
            report.noisy_sgd = Some(r);
            model
        }
        PrivacyMode::RdpDpsgd => {
            let n = projected.len();
            let mut schedule = params.dpsgd.schedule;
            schedule.batch_size = schedule.batch_size.min(n);
            let sigma = calibrate_dpsgd_sigma(
                params.budget.epsilon,
                params.budget.delta,
                schedule.steps,
                schedule.sampling_rate(n),
            )?;
            let loss = match params.dpsgd.loss {
                LossKind::ScaledHinge => Loss::ScaledHinge(ScaledHingeLoss::new(zeta)?),
                LossKind::Logistic => Loss::Logistic,
            };
            report.noise_multiplier = Some(sigma);
            report.steps = schedule.steps;
            report.batch_size = Some(schedule.batch_size);
            dp_sgd(&projected, &loss, &schedule, sigma, rng)?
        }
    };
    let w = basis.lift(v.weights())?;
    Ok((HalfspaceModel::from_ball(w), report))
}

/// Fraction of points with `y <w, x> <= 0`; ties count as errors.
pub fn evaluate(model: &HalfspaceModel, data: &LabeledDataset) -> Result<f64> {
    if model.dim() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: data.dim(),
        });
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset("cannot evaluate on an empty dataset".into()));
    }
    let wrong = data.iter().filter(|(x, y)| y.sign() * model.score(x) <= 0.0).count();
    Ok(wrong as f64 / data.len() as f64)
}

/// Smallest normalized margin `y <Âᵀx, Âᵀw> / (||Âᵀx|| ||Âᵀw||)` over `data`.
/// Points projecting to zero count as margin 0.
pub fn projected_min_margin(basis: &ProjectionBasis, data: &LabeledDataset, w: &[f64]) -> Result<f64> {
    if w.len() != basis.source_dim() || data.dim() != basis.source_dim() {
        return Err(Error::DimensionMismatch {
            expected: basis.source_dim(),
            found: if w.len() != basis.source_dim() { w.len() } else { data.dim() },
        });
    }
    let k = basis.target_dim();
    let mut pw = vec![0.0; k];
    basis.project_point(w, &mut pw);
    let nw = norm(&pw);
    let mut px = vec![0.0; k];
    let mut min = f64::INFINITY;
    for (x, y) in data.iter() {
        basis.project_point(x, &mut px);
        let denom = norm(&px) * nw;
        let m = if denom > 0.0 { y.sign() * dot(&px, &pw) / denom } else { 0.0 };
        min = min.min(m);
    }
    Ok(min)
}

/// Smallest normalized margin `y <x, w> / (||x|| ||w||)` in the source space.
pub fn min_margin(data: &LabeledDataset, w: &[f64]) -> f64 {
    let nw = norm(w);
    data.iter()
        .map(|(x, y)| {
            let denom = norm(x) * nw;
            if denom > 0.0 {
                y.sign() * dot(x, w) / denom
            } else {
                0.0
            }
        })
        .fold(f64::INFINITY, f64::min)
}

/// Data-driven stand-ins for γ₀ and ξ₀. These are heuristics: a non-private
/// classifier fitted on a held-out slice stands in for the true separator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginEstimate {
    pub gamma0: f64,
    pub xi0: f64,
    pub heuristic: bool,
}

/// Fits [`gd_baseline`] on `holdout`, takes the `quantile` of its normalized
/// margins as γ₀ and its defect against `basis` as ξ₀.
pub fn estimate_margin_params(
    holdout: &LabeledDataset,
    basis: &ProjectionBasis,
    quantile: f64,
    gd: &GdSettings,
) -> Result<MarginEstimate> {
    if !(0.0..=1.0).contains(&quantile) {
        return Err(Error::InfeasibleParams(format!("quantile {quantile} not in [0, 1]")));
    }
    let w = gd_baseline(holdout, 1.0, gd.steps, gd.learning_rate)?.into_weights();
    let nw = norm(&w);
    if nw == 0.0 {
        return Err(Error::InfeasibleParams("held-out classifier is zero".into()));
    }
    let unit: Vec<f64> = w.iter().map(|v| v / nw).collect();
    let mut margins: Vec<f64> = holdout
        .iter()
        .map(|(x, y)| {
            let nx = norm(x);
            if nx > 0.0 {
                y.sign() * dot(x, &unit) / nx
            } else {
                0.0
            }
        })
        .collect();
    margins.sort_by(f64::total_cmp);
    let idx = ((margins.len() - 1) as f64 * quantile).round() as usize;
    let gamma0 = margins[idx];
    if !(gamma0 > 0.0) {
        return Err(Error::InfeasibleParams(format!(
            "held-out margin quantile {gamma0} is not positive"
        )));
    }
    Ok(MarginEstimate {
        gamma0: gamma0.min(0.999),
        xi0: estimate_xi(basis, &unit)?,
        heuristic: true,
    })
}
