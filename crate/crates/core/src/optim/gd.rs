use super::dpsgd::clipped_gradient_sum;
use super::loss::{project_in_place, Loss, ScaledHingeLoss};
use crate::data::{HalfspaceModel, LabeledDataset};
use crate::error::{Error, Result};
use crate::linalg::axpy;

/// Non-private full-batch projected subgradient descent on the average scaled
/// hinge loss, started at 0 with a constant step size.
pub fn gd_baseline(data: &LabeledDataset, zeta: f64, steps: u64, learning_rate: f64) -> Result<HalfspaceModel> {
    let loss = Loss::ScaledHinge(ScaledHingeLoss::new(zeta)?);
    let mut w = None;
    gd_run(data, &loss, steps, learning_rate, |_, it| w = Some(it.to_vec()))?;
    Ok(HalfspaceModel::from_ball(w.expect("at least one step")))
}

/// Every iterate of [`gd_baseline`], starting with the initial point.
pub fn gd_trajectory(data: &LabeledDataset, zeta: f64, steps: u64, learning_rate: f64) -> Result<Vec<Vec<f64>>> {
    let loss = Loss::ScaledHinge(ScaledHingeLoss::new(zeta)?);
    let mut out = vec![vec![0.0; data.dim()]];
    gd_run(data, &loss, steps, learning_rate, |_, it| out.push(it.to_vec()))?;
    Ok(out)
}

fn gd_run(
    data: &LabeledDataset,
    loss: &Loss,
    steps: u64,
    learning_rate: f64,
    mut observe: impl FnMut(u64, &[f64]),
) -> Result<()> {
    if steps == 0 {
        return Err(Error::BadSchedule("steps must be >= 1".into()));
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset("gradient descent needs labelled data".into()));
    }
    if !(learning_rate > 0.0 && learning_rate.is_finite()) {
        return Err(Error::BadSchedule(format!("learning rate {learning_rate} must be positive")));
    }
    let n = data.len();
    let d = data.dim();
    let all: Vec<usize> = (0..n).collect();
    let mut w = vec![0.0; d];
    let mut sum = vec![0.0; d];
    let mut scratch = vec![0.0; d];
    for t in 1..=steps {
        clipped_gradient_sum(loss, &w, data, &all, f64::INFINITY, &mut sum, &mut scratch);
        axpy(-(learning_rate / n as f64), &sum, &mut w);
        project_in_place(&mut w);
        observe(t, &w);
    }
    Ok(())
}
