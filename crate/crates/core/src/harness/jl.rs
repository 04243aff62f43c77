//! Data-oblivious Gaussian random projection.

use crate::data::MapPoints;
use crate::error::{Error, Result};
use crate::optim::project_unit_ball;
use crate::rng::Rng;

/// `x -> G x / sqrt(k)` with `G` a `k x d` matrix of i.i.d. standard normals.
#[derive(Debug, Clone, PartialEq)]
pub struct JlTransform {
    source_dim: usize,
    target_dim: usize,
    /// Row-major `k x d`.
    g: Vec<f64>,
}

impl JlTransform {
    pub fn new(source_dim: usize, target_dim: usize, rng: &mut Rng) -> Result<Self> {
        if target_dim == 0 || target_dim > source_dim {
            return Err(Error::BadK {
                k: target_dim,
                dim: source_dim,
            });
        }
        Ok(Self {
            source_dim,
            target_dim,
            g: rng.normal_vec(source_dim * target_dim),
        })
    }

    pub fn source_dim(&self) -> usize {
        self.source_dim
    }

    pub fn target_dim(&self) -> usize {
        self.target_dim
    }

    /// `G x / sqrt(k)` without any clipping.
    pub fn apply_raw(&self, x: &[f64], out: &mut [f64]) {
        let s = 1.0 / (self.target_dim as f64).sqrt();
        for (o, row) in out.iter_mut().zip(self.g.chunks_exact(self.source_dim)) {
            *o = s * crate::linalg::dot(row, x);
        }
    }

    /// [`apply_raw`](Self::apply_raw) followed by projection into the unit ball.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.apply_raw(x, out);
        let p = project_unit_ball(out);
        out.copy_from_slice(&p);
    }
}

/// Projects every point with one freshly drawn transform; labels are kept.
pub fn jl_project<D: MapPoints>(data: &D, k: usize, rng: &mut Rng) -> Result<D> {
    let t = JlTransform::new(data.dim(), k, rng)?;
    data.map_points(k, |x, out| t.apply(x, out))
}
