use crate::error::{Error, Result};
use crate::rng::Rng;

/// Worst-case change of the average scaled hinge loss when one of `n`
/// examples is replaced. Per-example loss lies in `[0, 1 + 1/ζ]` whenever
/// `‖w‖ ≤ 1` and `‖x‖ ≤ 1`.
pub fn avg_hinge_sensitivity(zeta: f64, n: usize) -> Result<f64> {
    if !(zeta > 0.0 && zeta.is_finite()) {
        return Err(Error::BadZeta(zeta));
    }
    if n == 0 {
        return Err(Error::EmptyDataset("sensitivity needs n >= 1".into()));
    }
    Ok((1.0 + 1.0 / zeta) / n as f64)
}

/// Selection law `p_i ∝ exp(ε u_i / (2Δ))`, computed with max-shifting.
pub fn selection_probabilities(utilities: &[f64], epsilon: f64, sensitivity: f64) -> Result<Vec<f64>> {
    if utilities.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    if let Some(i) = utilities.iter().position(|u| !u.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    if !(sensitivity > 0.0) || !(epsilon > 0.0) {
        return Err(Error::BadBudget(format!(
            "selection needs epsilon > 0 and sensitivity > 0 (got {epsilon}, {sensitivity})"
        )));
    }
    let scale = epsilon / (2.0 * sensitivity);
    let max = utilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = utilities.iter().map(|u| ((u - max) * scale).exp()).collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// Exponential mechanism: returns the index of the selected candidate, with
/// higher utility more likely.
pub fn exponential_select<T>(
    candidates: &[T],
    utilities: &[f64],
    epsilon: f64,
    sensitivity: f64,
    rng: &mut Rng,
) -> Result<usize> {
    if candidates.is_empty() || candidates.len() != utilities.len() {
        return Err(Error::EmptyCandidates);
    }
    let probs = selection_probabilities(utilities, epsilon, sensitivity)?;
    let u = rng.uniform();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Ok(i);
        }
    }
    Ok(probs.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;

    fn frequencies(utilities: &[f64], eps: f64, sens: f64, draws: usize, seed: u64) -> Vec<f64> {
        let mut rng = Rng::new(seed);
        let mut counts = vec![0usize; utilities.len()];
        for _ in 0..draws {
            counts[exponential_select(utilities, utilities, eps, sens, &mut rng).unwrap()] += 1;
        }
        counts.into_iter().map(|c| c as f64 / draws as f64).collect()
    }

    #[test]
    fn sensitivity_examples() {
        assert_eq!(avg_hinge_sensitivity(1.0, 1).unwrap(), 2.0);
        assert!((avg_hinge_sensitivity(0.5, 10).unwrap() - 0.3).abs() < 1e-15);
        assert!(matches!(avg_hinge_sensitivity(0.0, 10), Err(Error::BadZeta(_))));
    }

    fn loss(w: &[f64], x: &[f64], y: f64, zeta: f64) -> f64 {
        (1.0 - y / zeta * dot(w, x)).max(0.0)
    }

    #[test]
    fn sensitivity_is_tight_on_exhaustive_small_instances() {
        let zeta = 0.5;
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let xs = [vec![1.0, 0.0], vec![0.0, 1.0], vec![s, s], vec![-1.0, 0.0]];
        let ws = [vec![0.0, 0.0], vec![1.0, 0.0], vec![0.6, 0.8], vec![s, -s]];
        let pts: Vec<(Vec<f64>, f64)> = xs
            .iter()
            .flat_map(|x| [(x.clone(), 1.0), (x.clone(), -1.0)])
            .collect();
        let n = 3;
        let bound = avg_hinge_sensitivity(zeta, n).unwrap();
        let mut worst: f64 = 0.0;
        for w in &ws {
            let avg = |ds: &[usize]| ds.iter().map(|&i| loss(w, &pts[i].0, pts[i].1, zeta)).sum::<f64>() / n as f64;
            for a in 0..pts.len() {
                for b in 0..pts.len() {
                    for c in 0..pts.len() {
                        let base = [a, b, c];
                        let l0 = avg(&base);
                        for slot in 0..n {
                            for r in 0..pts.len() {
                                let mut nb = base;
                                nb[slot] = r;
                                worst = worst.max((avg(&nb) - l0).abs());
                            }
                        }
                    }
                }
            }
        }
        assert!(worst <= bound + 1e-12);
        assert!((worst - bound).abs() <= 1e-12, "worst {worst} bound {bound}");
    }

    #[test]
    fn equal_utilities_are_uniform() {
        let f = frequencies(&[0.3, 0.3], 1.0, 1.0, 100_000, 3);
        assert!((f[0] - 0.5).abs() < 0.01);
    }

    #[test]
    fn tiny_epsilon_is_uniform() {
        let f = frequencies(&[0.0, 5.0, -3.0], 1e-12, 1.0, 100_000, 4);
        for p in f {
            assert!((p - 1.0 / 3.0).abs() < 0.01);
        }
    }

    #[test]
    fn closed_form_quarter_three_quarters() {
        let sens = 0.4;
        let eps = 2.0 * 3f64.ln();
        let p = selection_probabilities(&[0.0, sens], eps, sens).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-12 && (p[1] - 0.75).abs() < 1e-12);
        let f = frequencies(&[0.0, sens], eps, sens, 100_000, 5);
        assert!((f[0] - 0.25).abs() < 0.01 && (f[1] - 0.75).abs() < 0.01);
    }

    #[test]
    fn shift_invariance_is_exact() {
        let u = [0.1, -2.0, 0.7, 0.3];
        let shifted: Vec<f64> = u.iter().map(|v| v + 1000.0).collect();
        let a = selection_probabilities(&u, 1.3, 0.2).unwrap();
        let b = selection_probabilities(&shifted, 1.3, 0.2).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn errors() {
        let empty: [f64; 0] = [];
        assert!(matches!(exponential_select(&empty, &empty, 1.0, 1.0, &mut Rng::new(0)), Err(Error::EmptyCandidates)));
        assert!(matches!(
            exponential_select(&[1, 2], &[0.0, f64::NAN], 1.0, 1.0, &mut Rng::new(0)),
            Err(Error::NonFinite(1))
        ));
        assert_eq!(exponential_select(&["only"], &[-4.0], 1.0, 1.0, &mut Rng::new(0)).unwrap(), 0);
    }
}
