use serde::{Deserialize, Serialize};

use super::loss::{project_in_place, Loss, ScaledHingeLoss};
use crate::data::{HalfspaceModel, LabeledDataset};
use crate::error::{Error, Result};
use crate::linalg::axpy;
use crate::mechanisms::{avg_hinge_sensitivity, calibrate_base_noise, exponential_select, FormulaVariant};
use crate::rng::Rng;

pub const DEFAULT_STEP_CAP: u64 = 1_000_000;

/// How the total ε is divided between the base runs and the final selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BudgetSplit {
    /// Base runs share `fraction · ε`; selection gets the rest.
    Fraction(f64),
    /// Each of the `r` base runs gets `ε / r` and selection gets a further `ε`,
    /// so the composed total is `2ε`.
    PaperLiteral,
}

impl Default for BudgetSplit {
    fn default() -> Self {
        BudgetSplit::Fraction(0.5)
    }
}

impl BudgetSplit {
    /// `(ε per base run, ε for selection)`.
    pub fn allocate(&self, epsilon: f64, runs: usize) -> Result<(f64, f64)> {
        let r = runs as f64;
        match *self {
            BudgetSplit::Fraction(f) => {
                if !(f > 0.0 && f < 1.0) {
                    return Err(Error::BadBudget(format!("budget split fraction {f} not in (0, 1)")));
                }
                Ok((f * epsilon / r, (1.0 - f) * epsilon))
            }
            BudgetSplit::PaperLiteral => Ok((epsilon / r, epsilon)),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            BudgetSplit::Fraction(f) => format!("{}/{}", f, 1.0 - f),
            BudgetSplit::PaperLiteral => "paper-literal".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoisySgdConfig {
    pub formula_variant: FormulaVariant,
    pub budget_split: BudgetSplit,
    /// Constant `m` in the step size `1/sqrt(t n² L² + m σ²)`; `None` means `n`.
    pub m: Option<f64>,
    /// Upper limit on the `n² - 1` single-sample steps.
    pub step_cap: u64,
    /// Replaces the calibrated variance; intended for tests and diagnostics.
    pub sigma_squared_override: Option<f64>,
}

impl Default for NoisySgdConfig {
    fn default() -> Self {
        Self {
            formula_variant: FormulaVariant::default(),
            budget_split: BudgetSplit::default(),
            m: None,
            step_cap: DEFAULT_STEP_CAP,
            sigma_squared_override: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseRunReport {
    pub steps: u64,
    pub capped: bool,
    pub sigma_squared: f64,
    pub epsilon: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisySgdReport {
    pub runs: Vec<BaseRunReport>,
    pub candidate_losses: Vec<f64>,
    pub selected: usize,
    pub epsilon_per_run: f64,
    pub epsilon_select: f64,
    pub budget_split: BudgetSplit,
}

/// Number of repetitions `⌈ln(1/β)⌉`, at least one.
pub fn repetitions(beta: f64) -> Result<usize> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::BadBudget(format!("beta {beta} not in (0, 1)")));
    }
    // the small offset keeps β = e^-r from rounding up to r + 1
    Ok(((-beta.ln()) - 1e-12).ceil().max(1.0) as usize)
}

/// Single-sample noisy projected SGD from a uniform random start in the unit ball.
pub fn a_base(
    data: &LabeledDataset,
    zeta: f64,
    epsilon: f64,
    delta: f64,
    config: &NoisySgdConfig,
    rng: &mut Rng,
) -> Result<(HalfspaceModel, BaseRunReport)> {
    a_base_observed(data, zeta, epsilon, delta, config, rng, |_, _| {})
}

/// [`a_base`] calling `observe(t, w)` after initialization (`t = 0`) and every step.
pub fn a_base_observed(
    data: &LabeledDataset,
    zeta: f64,
    epsilon: f64,
    delta: f64,
    config: &NoisySgdConfig,
    rng: &mut Rng,
    mut observe: impl FnMut(u64, &[f64]),
) -> Result<(HalfspaceModel, BaseRunReport)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("noisy SGD needs labelled data".into()));
    }
    let loss = ScaledHingeLoss::new(zeta)?;
    let n = data.len();
    let lipschitz = loss.lipschitz();
    let calibrated = calibrate_base_noise(lipschitz, n, epsilon, delta, config.formula_variant)?;
    let sigma_squared = match config.sigma_squared_override {
        Some(s) if s >= 0.0 && s.is_finite() => s,
        Some(s) => return Err(Error::BadSigma(s)),
        None => calibrated.sigma_squared,
    };
    let nf = n as f64;
    let m = config.m.unwrap_or(nf);
    let full_steps = (n as u64).saturating_mul(n as u64) - 1;
    let steps = full_steps.min(config.step_cap);
    if steps < full_steps {
        log::warn!("noisy SGD capped at {steps} of {full_steps} steps (n = {n})");
    }

    let d = data.dim();
    let mut w = rng.unit_ball(d);
    project_in_place(&mut w);
    observe(0, &w);
    let sigma = sigma_squared.sqrt();
    let mut g = vec![0.0; d];
    for t in 1..=steps {
        let eta = 1.0 / (t as f64 * nf * nf * lipschitz * lipschitz + m * sigma_squared).sqrt();
        let i = rng.index(n);
        loss.grad_into(&w, data.x(i), data.y(i), &mut g);
        for v in g.iter_mut() {
            *v *= nf;
        }
        if sigma > 0.0 {
            for v in g.iter_mut() {
                *v += sigma * rng.normal();
            }
        }
        axpy(-eta, &g, &mut w);
        project_in_place(&mut w);
        observe(t, &w);
    }
    Ok((
        HalfspaceModel::from_ball(w),
        BaseRunReport {
            steps,
            capped: steps < full_steps,
            sigma_squared,
            epsilon,
            delta,
        },
    ))
}

/// Repeats [`a_base`] `⌈ln(1/β)⌉` times and picks one output with the
/// exponential mechanism, scoring by negative average scaled hinge loss.
pub fn a_noisy_sgd(
    data: &LabeledDataset,
    zeta: f64,
    epsilon: f64,
    delta: f64,
    beta: f64,
    config: &NoisySgdConfig,
    rng: &mut Rng,
) -> Result<(HalfspaceModel, NoisySgdReport)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("noisy SGD needs labelled data".into()));
    }
    let r = repetitions(beta)?;
    let (eps_run, eps_select) = config.budget_split.allocate(epsilon, r)?;
    let delta_run = delta / r as f64;
    let loss = Loss::ScaledHinge(ScaledHingeLoss::new(zeta)?);

    let mut models = Vec::with_capacity(r);
    let mut runs = Vec::with_capacity(r);
    for j in 0..r {
        let mut child = rng.fork(j as u64);
        let (model, report) = a_base(data, zeta, eps_run, delta_run, config, &mut child)?;
        models.push(model);
        runs.push(report);
    }
    let losses: Vec<f64> = models.iter().map(|m| loss.average(m.weights(), data)).collect();
    let utilities: Vec<f64> = losses.iter().map(|l| -l).collect();
    let sensitivity = avg_hinge_sensitivity(zeta, data.len())?;
    let selected = exponential_select(&models, &utilities, eps_select, sensitivity, rng)?;
    let model = models.swap_remove(selected);
    Ok((
        model,
        NoisySgdReport {
            runs,
            candidate_losses: losses,
            selected,
            epsilon_per_run: eps_run,
            epsilon_select: eps_select,
            budget_split: config.budget_split,
        },
    ))
}
