use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const MAX_STEP_DURATION: usize = 50;
pub const MAX_STEP_MAGNITUDE: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceStep {
    pub start: usize,
    /// Drawn duration; the last step may be cut short by the signal length.
    pub duration: usize,
    pub magnitude: f64,
}

/// Piecewise-constant reference on the first output; other outputs are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSignal {
    /// `n_y x T`
    pub values: DMatrix<f64>,
    pub steps: Vec<ReferenceStep>,
}

impl ReferenceSignal {
    pub fn len(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.values.ncols() == 0
    }

    pub fn at(&self, t: usize) -> DVector<f64> {
        self.values.column(t).into_owned()
    }

    /// Constant reference, useful for diagnostics.
    pub fn constant(value: &DVector<f64>, len: usize) -> Self {
        let values = DMatrix::from_fn(value.len(), len, |i, _| value[i]);
        ReferenceSignal {
            values,
            steps: vec![ReferenceStep {
                start: 0,
                duration: len,
                magnitude: value[0],
            }],
        }
    }
}

/// Steps with durations uniform on `1..=50` and magnitudes uniform on `[-5, 5]`.
pub fn generate_reference<R: Rng + ?Sized>(rng: &mut R, len: usize, n_y: usize) -> ReferenceSignal {
    let mut values = DMatrix::zeros(n_y, len);
    let mut steps = Vec::new();
    let mut t = 0;
    while t < len {
        let duration = rng.random_range(1..=MAX_STEP_DURATION);
        let magnitude = rng.random_range(-MAX_STEP_MAGNITUDE..=MAX_STEP_MAGNITUDE);
        let end = (t + duration).min(len);
        for s in t..end {
            values[(0, s)] = magnitude;
        }
        steps.push(ReferenceStep {
            start: t,
            duration,
            magnitude,
        });
        t = end;
    }
    ReferenceSignal { values, steps }
}
