use serde::{Deserialize, Serialize};

use crate::data::{Label, LabeledDataset};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm};

/// `max(1 - (y/ζ)<w, x>, 0)`, which is `1/ζ`-Lipschitz in `w` on the unit ball.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledHingeLoss {
    zeta: f64,
}

impl ScaledHingeLoss {
    pub fn new(zeta: f64) -> Result<Self> {
        if !(zeta > 0.0 && zeta.is_finite()) {
            return Err(Error::BadZeta(zeta));
        }
        Ok(Self { zeta })
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    pub fn lipschitz(&self) -> f64 {
        1.0 / self.zeta
    }

    pub fn value(&self, w: &[f64], x: &[f64], y: Label) -> f64 {
        (1.0 - y.sign() / self.zeta * dot(w, x)).max(0.0)
    }

    /// Writes a subgradient into `out`. At the kink the zero subgradient is used.
    pub fn grad_into(&self, w: &[f64], x: &[f64], y: Label, out: &mut [f64]) {
        let c = y.sign() / self.zeta;
        if 1.0 - c * dot(w, x) > 0.0 {
            for (o, xi) in out.iter_mut().zip(x) {
                *o = -c * xi;
            }
        } else {
            out.fill(0.0);
        }
    }
}

/// Per-example training loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    ScaledHinge(ScaledHingeLoss),
    /// `ln(1 + exp(-y<w, x>))`.
    Logistic,
}

impl Loss {
    pub fn value(&self, w: &[f64], x: &[f64], y: Label) -> f64 {
        match self {
            Loss::ScaledHinge(h) => h.value(w, x, y),
            Loss::Logistic => {
                let m = -y.sign() * dot(w, x);
                // ln(1 + e^m) without overflow
                if m > 0.0 {
                    m + (-m).exp().ln_1p()
                } else {
                    m.exp().ln_1p()
                }
            }
        }
    }

    pub fn grad_into(&self, w: &[f64], x: &[f64], y: Label, out: &mut [f64]) {
        match self {
            Loss::ScaledHinge(h) => h.grad_into(w, x, y, out),
            Loss::Logistic => {
                let s = y.sign();
                let m = -s * dot(w, x);
                let p = 1.0 / (1.0 + (-m).exp());
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = -s * p * xi;
                }
            }
        }
    }

    /// Mean loss of `w` over `data`.
    pub fn average(&self, w: &[f64], data: &LabeledDataset) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        data.iter().map(|(x, y)| self.value(w, x, y)).sum::<f64>() / data.len() as f64
    }
}

pub fn scaled_hinge_loss(w: &[f64], x: &[f64], y: Label, zeta: f64) -> Result<f64> {
    Ok(ScaledHingeLoss::new(zeta)?.value(w, x, y))
}

pub fn scaled_hinge_grad(w: &[f64], x: &[f64], y: Label, zeta: f64) -> Result<Vec<f64>> {
    let mut g = vec![0.0; w.len()];
    ScaledHingeLoss::new(zeta)?.grad_into(w, x, y, &mut g);
    Ok(g)
}

/// Euclidean projection onto the closed unit ball.
pub fn project_unit_ball(w: &[f64]) -> Vec<f64> {
    let mut out = w.to_vec();
    project_in_place(&mut out);
    out
}

pub(crate) fn project_in_place(w: &mut [f64]) {
    let n = norm(w);
    if n > 1.0 {
        for v in w.iter_mut() {
            *v /= n;
        }
        // rounding can leave the norm a hair above one
        let again = norm(w);
        if again > 1.0 {
            for v in w.iter_mut() {
                *v /= again;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    const POS: Label = Label::POS;
    const NEG: Label = Label::NEG;

    #[test]
    fn loss_examples() {
        let x = [0.6, 0.8];
        assert_eq!(scaled_hinge_loss(&[0.0, 0.0], &x, POS, 0.3).unwrap(), 1.0);
        assert_eq!(scaled_hinge_loss(&[0.0, 0.0], &x, NEG, 0.3).unwrap(), 1.0);
        // y<w,x> = ζ exactly
        assert_eq!(scaled_hinge_loss(&[0.5, 0.0], &[1.0, 0.0], POS, 0.5).unwrap(), 0.0);
        assert_eq!(scaled_hinge_loss(&[1.0, 0.0], &[1.0, 0.0], NEG, 0.5).unwrap(), 3.0);
        assert!(matches!(scaled_hinge_loss(&x, &x, POS, 0.0), Err(Error::BadZeta(_))));
        assert!(matches!(scaled_hinge_grad(&x, &x, POS, -1.0), Err(Error::BadZeta(_))));
    }

    #[test]
    fn grad_regions() {
        let x = [0.6, 0.8];
        let g = scaled_hinge_grad(&[0.0, 0.0], &x, POS, 0.5).unwrap();
        assert!((norm(&g) - 2.0).abs() < 1e-15);
        assert_eq!(scaled_hinge_grad(&x, &x, POS, 0.5).unwrap(), vec![0.0, 0.0]);
        // kink takes the zero branch
        assert_eq!(scaled_hinge_grad(&[0.5, 0.0], &[1.0, 0.0], POS, 0.5).unwrap(), vec![0.0, 0.0]);
    }

    fn finite_difference(loss: &Loss, w: &[f64], x: &[f64], y: Label) -> Vec<f64> {
        let h = 1e-6;
        (0..w.len())
            .map(|j| {
                let mut a = w.to_vec();
                let mut b = w.to_vec();
                a[j] += h;
                b[j] -= h;
                (loss.value(&a, x, y) - loss.value(&b, x, y)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn finite_differences_match() {
        let mut rng = Rng::new(17);
        let mut checked = 0;
        while checked < 100 {
            let w: Vec<f64> = rng.unit_ball(5).iter().map(|v| v * 0.9).collect();
            let x = rng.unit_ball(5);
            let y = if rng.bernoulli(0.5) { POS } else { NEG };
            let zeta = 0.1 + 0.9 * rng.uniform();
            let h = ScaledHingeLoss::new(zeta).unwrap();
            // skip points within the finite-difference stencil of the kink
            if (1.0 - y.sign() / zeta * dot(&w, &x)).abs() < 1e-3 {
                continue;
            }
            for loss in [Loss::ScaledHinge(h), Loss::Logistic] {
                let fd = finite_difference(&loss, &w, &x, y);
                let mut g = vec![0.0; 5];
                loss.grad_into(&w, &x, y, &mut g);
                let diff: Vec<f64> = fd.iter().zip(&g).map(|(a, b)| a - b).collect();
                let scale = norm(&g).max(1e-8);
                assert!(norm(&diff) <= 1e-4 * scale.max(1.0), "fd {fd:?} vs {g:?}");
            }
            checked += 1;
        }
    }

    #[test]
    fn lipschitz_certificate() {
        let mut rng = Rng::new(99);
        for _ in 0..10_000 {
            let dim = 1 + rng.index(8);
            let w = rng.unit_ball(dim);
            let x = rng.unit_ball(dim);
            let y = if rng.bernoulli(0.5) { POS } else { NEG };
            let zeta = 1e-3 + rng.uniform();
            let g = scaled_hinge_grad(&w, &x, y, zeta).unwrap();
            assert!(norm(&g) <= 1.0 / zeta + 1e-12);
            let v = scaled_hinge_loss(&w, &x, y, zeta).unwrap();
            assert!((0.0..=1.0 + 1.0 / zeta + 1e-12).contains(&v));
        }
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_unit_ball(&[0.3, 0.4]), vec![0.3, 0.4]);
        let p = project_unit_ball(&[0.0, 4.0]);
        assert_eq!(p, vec![0.0, 1.0]);
        let p = project_unit_ball(&[2.4, 3.2]);
        assert!((norm(&p) - 1.0).abs() < 1e-15);
        assert!((p[0] - 0.6).abs() < 1e-15 && (p[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn logistic_is_stable() {
        let v = Loss::Logistic.value(&[1.0], &[1.0], NEG);
        assert!((v - (1.0 + 1.0f64.exp()).ln()).abs() < 1e-15);
        assert!(Loss::Logistic.value(&[1.0], &[1.0], POS) < v);
    }

    proptest! {
        #[test]
        fn projection_idempotent(v in prop::collection::vec(-10.0f64..10.0, 1..12)) {
            let once = project_unit_ball(&v);
            prop_assert!(norm(&once) <= 1.0);
            prop_assert_eq!(project_unit_ball(&once), once);
        }
    }
}
