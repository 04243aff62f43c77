use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Which denominator the noisy-SGD variance uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormulaVariant {
    /// `32 L^2 n^2 ln(n/δ) ln(1/δ) / ε`, as printed in the noisy-SGD box.
    #[default]
    PaperLiteral,
    /// Same numerator over `ε^2`, as in Bassily, Smith and Thakurta (2014).
    BassilyOriginal,
}

impl FormulaVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            FormulaVariant::PaperLiteral => "paper-literal",
            FormulaVariant::BassilyOriginal => "bassily-original",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseCalibration {
    pub sigma_squared: f64,
    pub lipschitz: f64,
    pub n: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub formula_variant: FormulaVariant,
}

/// Per-step Gaussian noise variance for single-sample noisy SGD.
pub fn calibrate_base_noise(
    lipschitz: f64,
    n: usize,
    epsilon: f64,
    delta: f64,
    variant: FormulaVariant,
) -> Result<NoiseCalibration> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::BadBudget(format!("epsilon {epsilon} must be positive and finite")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::BadBudget(format!("delta {delta} not in (0, 1)")));
    }
    if n == 0 {
        return Err(Error::BadBudget("dataset size must be >= 1".into()));
    }
    if !(lipschitz > 0.0 && lipschitz.is_finite()) {
        return Err(Error::BadBudget(format!("Lipschitz constant {lipschitz} must be positive")));
    }
    let nf = n as f64;
    let numerator = 32.0 * lipschitz * lipschitz * nf * nf * (nf / delta).ln() * (1.0 / delta).ln();
    let sigma_squared = match variant {
        FormulaVariant::PaperLiteral => numerator / epsilon,
        FormulaVariant::BassilyOriginal => numerator / (epsilon * epsilon),
    };
    Ok(NoiseCalibration {
        sigma_squared,
        lipschitz,
        n,
        epsilon,
        delta,
        formula_variant: variant,
    })
}

/// `v + ξ` with `ξ ~ N(0, σ² I)`.
pub fn gaussian_perturb(v: &[f64], sigma_squared: f64, rng: &mut Rng) -> Vec<f64> {
    debug_assert!(sigma_squared >= 0.0);
    if sigma_squared == 0.0 {
        return v.to_vec();
    }
    let s = sigma_squared.sqrt();
    v.iter().map(|x| x + s * rng.normal()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_arguments_give_32() {
        let c = calibrate_base_noise(1.0, 1, 1.0, (-1.0f64).exp(), FormulaVariant::PaperLiteral).unwrap();
        assert!((c.sigma_squared - 32.0).abs() < 1e-12);
    }

    #[test]
    fn epsilon_homogeneity() {
        for (variant, factor) in [(FormulaVariant::PaperLiteral, 2.0), (FormulaVariant::BassilyOriginal, 4.0)] {
            let a = calibrate_base_noise(0.7, 40, 0.5, 1e-4, variant).unwrap().sigma_squared;
            let b = calibrate_base_noise(0.7, 40, 1.0, 1e-4, variant).unwrap().sigma_squared;
            assert!((a / b - factor).abs() < 1e-12);
        }
    }

    #[test]
    fn reference_value() {
        // 32 * 1e4 * ln(1e7) * ln(1e5), evaluated with 50-digit arithmetic
        let c = calibrate_base_noise(1.0, 100, 1.0, 1e-5, FormulaVariant::PaperLiteral).unwrap();
        let expected = 59381258.83735805771829066;
        assert!((c.sigma_squared - expected).abs() / expected < 1e-12);
    }

    #[test]
    fn rejects_bad_budgets() {
        let v = FormulaVariant::PaperLiteral;
        assert!(calibrate_base_noise(1.0, 10, 0.0, 1e-5, v).is_err());
        assert!(calibrate_base_noise(1.0, 10, 1.0, 1.0, v).is_err());
        assert!(calibrate_base_noise(1.0, 0, 1.0, 1e-5, v).is_err());
        assert!(calibrate_base_noise(0.0, 10, 1.0, 1e-5, v).is_err());
    }

    #[test]
    fn zero_variance_is_identity() {
        let v = vec![0.25, -1.5, 3.0];
        assert_eq!(gaussian_perturb(&v, 0.0, &mut Rng::new(1)), v);
    }

    #[test]
    fn perturbation_is_seeded() {
        let v = vec![0.0; 5];
        assert_eq!(gaussian_perturb(&v, 2.0, &mut Rng::new(8)), gaussian_perturb(&v, 2.0, &mut Rng::new(8)));
    }

    #[test]
    fn noise_moments() {
        let mut rng = Rng::new(77);
        let n = 1_000_000;
        let draws: Vec<f64> = (0..n).map(|_| gaussian_perturb(&[0.0], 1.0, &mut rng)[0]).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.005, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }
}
