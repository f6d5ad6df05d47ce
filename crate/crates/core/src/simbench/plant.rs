use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result, TpcError};

/// When a recorded output is measured relative to the input paired with it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputTiming {
    /// `y(t) = C x(t + 1) + v(t)`: the sample paired with `u(t)` is taken
    /// after `u(t)` acts. The newest output then measures the current state,
    /// so every controller sees the same information at decision time.
    #[default]
    AfterInput,
    /// `y(t) = C x(t) + v(t)`, taken before `u(t)` acts.
    BeforeInput,
}

/// Linear plant `x+ = A x + B u + w`, `y = C x + v` with Gaussian noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantModel {
    #[serde(with = "crate::io::serde_rows")]
    pub a: DMatrix<f64>,
    #[serde(with = "crate::io::serde_rows")]
    pub b: DMatrix<f64>,
    #[serde(with = "crate::io::serde_rows")]
    pub c: DMatrix<f64>,
    /// Process noise covariance.
    #[serde(with = "crate::io::serde_rows")]
    pub w: DMatrix<f64>,
    /// Measurement noise covariance.
    #[serde(with = "crate::io::serde_rows")]
    pub v: DMatrix<f64>,
    #[serde(default)]
    pub timing: OutputTiming,
}

impl Default for PlantModel {
    fn default() -> Self {
        Self::double_integrator()
    }
}

impl PlantModel {
    pub fn double_integrator() -> Self {
        PlantModel {
            a: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
            b: DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            c: DMatrix::identity(2, 2),
            w: DMatrix::from_diagonal(&DVector::from_vec(vec![0.0025, 0.0001])),
            v: DMatrix::identity(2, 2) * 0.0004,
            timing: OutputTiming::AfterInput,
        }
    }

    pub fn with_timing(mut self, timing: OutputTiming) -> Self {
        self.timing = timing;
        self
    }

    /// Same plant without process or measurement noise.
    pub fn noiseless(&self) -> Self {
        let mut p = self.clone();
        p.w.fill(0.0);
        p.v.fill(0.0);
        p
    }

    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_y(&self) -> usize {
        self.c.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_x();
        if !self.a.is_square()
            || self.b.nrows() != n
            || self.c.ncols() != n
            || self.w.shape() != (n, n)
            || self.v.shape() != (self.n_y(), self.n_y())
        {
            return Err(dim_err("plant matrices have inconsistent shapes"));
        }
        for (name, m) in [("W", &self.w), ("V", &self.v)] {
            if (m - m.transpose()).amax() > 1e-12 {
                return Err(TpcError::Config(format!("{name} must be symmetric")));
            }
            if m.clone().symmetric_eigenvalues().min() < -1e-12 {
                return Err(TpcError::NotPositiveDefinite(format!(
                    "{name} is not positive semidefinite"
                )));
            }
        }
        Ok(())
    }

    /// Noise generator with cached covariance square roots.
    pub fn noise(&self) -> NoiseSource {
        NoiseSource {
            w_sqrt: psd_sqrt(&self.w),
            v_sqrt: psd_sqrt(&self.v),
        }
    }
}

/// Symmetric square root of a PSD matrix; tolerates singular covariances.
fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let d = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// Draws process and measurement noise.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    w_sqrt: DMatrix<f64>,
    v_sqrt: DMatrix<f64>,
}

impl NoiseSource {
    pub fn process<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        &self.w_sqrt * standard_normal(rng, self.w_sqrt.nrows())
    }

    pub fn measurement<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        &self.v_sqrt * standard_normal(rng, self.v_sqrt.nrows())
    }
}

/// `C x + v` with `v ~ N(0, V)`.
pub fn measure<R: Rng + ?Sized>(plant: &PlantModel, x: &DVector<f64>, rng: &mut R) -> DVector<f64> {
    let noise = plant.noise();
    &plant.c * x + noise.measurement(rng)
}

/// `A x + B u + w` with `w ~ N(0, W)`.
pub fn advance<R: Rng + ?Sized>(
    plant: &PlantModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    rng: &mut R,
) -> DVector<f64> {
    let noise = plant.noise();
    &plant.a * x + &plant.b * u + noise.process(rng)
}

/// One step: returns `(A x + B u + w, C x + v)`. Process noise is drawn first.
pub fn plant_step<R: Rng + ?Sized>(
    plant: &PlantModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    rng: &mut R,
) -> (DVector<f64>, DVector<f64>) {
    let noise = plant.noise();
    let w = noise.process(rng);
    let v = noise.measurement(rng);
    (&plant.a * x + &plant.b * u + w, &plant.c * x + v)
}
