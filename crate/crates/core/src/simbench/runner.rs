//! Closed-loop simulation with pre-drawn noise.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::plant::{OutputTiming, PlantModel};
use super::reference::ReferenceSignal;
use crate::control::{reference_preview, GainMode, QuadraticCost, TpcGain};
use crate::error::{dim_err, Result};
use crate::hankel::{DataLabel, TrajectoryData};

/// Gain of the data-collection PD controller.
pub const PD_GAIN: [f64; 2] = [0.0833, 0.7944];
/// Variance of the excitation added to the data-collection inputs.
pub const EXCITATION_VARIANCE: f64 = 0.01;
/// Runs are aborted once any output exceeds this magnitude.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Information available to a policy when it chooses `u(t)`.
#[derive(Debug, Clone, Copy)]
pub struct History<'a> {
    /// `u(0), .., u(t-1)`
    pub inputs: &'a [DVector<f64>],
    /// Outputs measured so far; with [`OutputTiming::BeforeInput`] this
    /// includes `y(t)`.
    pub outputs: &'a [DVector<f64>],
    /// `refs[k]` is the reference paired with `outputs[k]`.
    pub refs: &'a [DVector<f64>],
    /// Excitation drawn for this step.
    pub excitation: &'a DVector<f64>,
}

impl History<'_> {
    pub fn t(&self) -> usize {
        self.inputs.len()
    }

    pub fn latest_output(&self) -> Option<&DVector<f64>> {
        self.outputs.last()
    }

    pub fn latest_reference(&self) -> Option<&DVector<f64>> {
        self.refs.last()
    }

    /// `z_p(t)`: the last `m` (input, output) pairs strictly before `t`,
    /// oldest first.
    pub fn past_window(&self, m: usize) -> Option<DVector<f64>> {
        let t = self.t();
        if t < m || self.outputs.len() < t {
            return None;
        }
        let n_u = self.inputs.first()?.len();
        let n_y = self.outputs.first()?.len();
        let mut z = DVector::zeros(m * (n_u + n_y));
        for (j, k) in (t - m..t).enumerate() {
            let off = j * (n_u + n_y);
            z.rows_mut(off, n_u).copy_from(&self.inputs[k]);
            z.rows_mut(off + n_u, n_y).copy_from(&self.outputs[k]);
        }
        Some(z)
    }
}

/// A feedback policy.
pub trait Policy {
    fn decide(&mut self, h: &History) -> Result<DVector<f64>>;

    /// Called every step with the input actually applied, including steps
    /// where another policy was in control.
    fn record(&mut self, _h: &History, _u: &DVector<f64>) {}

    fn name(&self) -> &str;
}

/// `u = -K (y - y_r) + eta` on the newest measurement.
#[derive(Debug, Clone)]
pub struct PdPolicy {
    pub gain: DMatrix<f64>,
}

impl Default for PdPolicy {
    fn default() -> Self {
        PdPolicy {
            gain: DMatrix::from_row_slice(1, 2, &PD_GAIN),
        }
    }
}

impl Policy for PdPolicy {
    fn decide(&mut self, h: &History) -> Result<DVector<f64>> {
        let fb = match (h.latest_output(), h.latest_reference()) {
            (Some(y), Some(r)) => -(&self.gain * (y - r)),
            _ => DVector::zeros(self.gain.nrows()),
        };
        Ok(fb + h.excitation)
    }

    fn name(&self) -> &str {
        "pd"
    }
}

/// Excitation only.
#[derive(Debug, Clone, Default)]
pub struct OpenLoopPolicy;

impl Policy for OpenLoopPolicy {
    fn decide(&mut self, h: &History) -> Result<DVector<f64>> {
        Ok(h.excitation.clone())
    }

    fn name(&self) -> &str {
        "open"
    }
}

/// Receding-horizon TPC: applies the first block of the planned inputs.
#[derive(Debug, Clone)]
pub struct TpcPolicy {
    pub gain: TpcGain,
    tag: String,
}

impl TpcPolicy {
    pub fn new(gain: TpcGain, tag: impl Into<String>) -> Self {
        TpcPolicy {
            gain,
            tag: tag.into(),
        }
    }
}

impl Policy for TpcPolicy {
    fn decide(&mut self, h: &History) -> Result<DVector<f64>> {
        let dims = self.gain.dims;
        let z = h
            .past_window(dims.m)
            .ok_or_else(|| dim_err(format!("TPC needs {} past samples, have {}", dims.m, h.t())))?;
        let t = h.t();
        let prev_ref = &h.refs[t - 1];
        let preview = reference_preview(prev_ref, dims.h);
        let u_f = self.gain.control(&z, &preview)?;
        Ok(u_f.rows(0, dims.n_u).into_owned())
    }

    fn name(&self) -> &str {
        &self.tag
    }
}

/// Pre-drawn noise so every controller in a run sees the same realization.
#[derive(Debug, Clone)]
pub struct NoiseTape {
    pub w: Vec<DVector<f64>>,
    pub v: Vec<DVector<f64>>,
    pub eta: Vec<DVector<f64>>,
}

impl NoiseTape {
    /// Draws `w`, `v` and the excitation for each step, in that order.
    pub fn draw<R: Rng + ?Sized>(
        plant: &PlantModel,
        len: usize,
        excitation_var: f64,
        rng: &mut R,
    ) -> Self {
        let noise = plant.noise();
        let sd = excitation_var.max(0.0).sqrt();
        let n_u = plant.n_u();
        let mut tape = NoiseTape {
            w: Vec::with_capacity(len),
            v: Vec::with_capacity(len),
            eta: Vec::with_capacity(len),
        };
        for _ in 0..len {
            tape.w.push(noise.process(rng));
            tape.v.push(noise.measurement(rng));
            tape.eta.push(DVector::from_fn(n_u, |_, _| {
                let z: f64 = StandardNormal.sample(rng);
                sd * z
            }));
        }
        tape
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

/// Trajectories and realized cost of one closed-loop run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub tag: String,
    pub seed: u64,
    /// Steps at the start driven by the warmup policy; not counted in `cost`.
    pub warmup: usize,
    /// `n_u x T`
    pub inputs: DMatrix<f64>,
    /// `n_y x T`
    pub outputs: DMatrix<f64>,
    /// `n_y x T`
    pub refs: DMatrix<f64>,
    pub stage_costs: Vec<f64>,
    pub cost: f64,
    pub diverged: bool,
}

impl RunResult {
    /// Number of simulated steps, including warmup.
    pub fn len(&self) -> usize {
        self.stage_costs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stage_costs.is_empty()
    }

    /// Counted cost recomputed from the trajectories.
    pub fn recompute_cost(&self, cost: &QuadraticCost) -> f64 {
        (self.warmup..self.len())
            .map(|t| {
                cost.stage(
                    &self.outputs.column(t).into_owned(),
                    &self.refs.column(t).into_owned(),
                    &self.inputs.column(t).into_owned(),
                )
            })
            .sum()
    }

    /// Mean absolute input over counted steps.
    pub fn mean_abs_input(&self) -> f64 {
        let counted = self.inputs.columns(self.warmup, self.len() - self.warmup);
        if counted.is_empty() {
            return 0.0;
        }
        counted.iter().map(|v| v.abs()).sum::<f64>() / counted.len() as f64
    }
}

/// Everything a run needs apart from the policy.
#[derive(Debug, Clone, Copy)]
pub struct Scenario<'a> {
    pub plant: &'a PlantModel,
    pub reference: &'a ReferenceSignal,
    pub tape: &'a NoiseTape,
    pub cost: &'a QuadraticCost,
    pub warmup: usize,
    pub seed: u64,
}

/// Runs `policy` after `warmup` steps of `warmup_policy`, from `x0 = 0`.
///
/// The run stops early, flagged as diverged, if any output exceeds
/// [`DIVERGENCE_LIMIT`] or is not finite; the cost accumulated so far is kept.
pub fn run_closed_loop(
    policy: &mut dyn Policy,
    warmup_policy: &mut dyn Policy,
    sc: &Scenario,
) -> Result<RunResult> {
    let len = sc.reference.len();
    if sc.tape.len() < len {
        return Err(dim_err(format!(
            "noise tape has {} steps, reference has {len}",
            sc.tape.len()
        )));
    }
    let plant = sc.plant;
    let mut x = DVector::zeros(plant.n_x());
    let mut inputs: Vec<DVector<f64>> = Vec::with_capacity(len);
    let mut outputs: Vec<DVector<f64>> = Vec::with_capacity(len);
    let mut refs: Vec<DVector<f64>> = Vec::with_capacity(len);
    let mut stage_costs = Vec::with_capacity(len);
    let mut diverged = false;

    for t in 0..len {
        let y_r = sc.reference.at(t);
        if plant.timing == OutputTiming::BeforeInput {
            outputs.push(&plant.c * &x + &sc.tape.v[t]);
            refs.push(y_r.clone());
        }
        let u = {
            let h = History {
                inputs: &inputs,
                outputs: &outputs,
                refs: &refs,
                excitation: &sc.tape.eta[t],
            };
            let u = if t < sc.warmup {
                warmup_policy.decide(&h)?
            } else {
                policy.decide(&h)?
            };
            policy.record(&h, &u);
            u
        };
        x = &plant.a * &x + &plant.b * &u + &sc.tape.w[t];
        if plant.timing == OutputTiming::AfterInput {
            outputs.push(&plant.c * &x + &sc.tape.v[t]);
            refs.push(y_r.clone());
        }
        let y = outputs.last().expect("output recorded this step");
        stage_costs.push(sc.cost.stage(y, &y_r, &u));
        let blown = y
            .iter()
            .any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT);
        inputs.push(u);
        if blown {
            diverged = true;
            break;
        }
    }

    let steps = inputs.len();
    let warmup = sc.warmup.min(steps);
    let cost = stage_costs[warmup..].iter().sum();
    let to_mat = |v: &[DVector<f64>], rows: usize| {
        let mut m = DMatrix::zeros(rows, steps);
        for (j, c) in v.iter().take(steps).enumerate() {
            m.set_column(j, c);
        }
        m
    };
    Ok(RunResult {
        tag: policy.name().to_string(),
        seed: sc.seed,
        warmup,
        inputs: to_mat(&inputs, plant.n_u()),
        outputs: to_mat(&outputs, plant.n_y()),
        refs: to_mat(&refs, plant.n_y()),
        stage_costs,
        cost,
        diverged,
    })
}

/// Runs the plant for `d` steps under PD (closed) or excitation-only (open)
/// inputs and returns the recorded samples.
pub fn collect_training_data<R: Rng + ?Sized>(
    plant: &PlantModel,
    mode: DataLabel,
    d: usize,
    rng: &mut R,
    reference: &ReferenceSignal,
    excitation_var: f64,
) -> Result<TrajectoryData> {
    if d == 0 {
        return Err(crate::error::TpcError::Config("d must be positive".into()));
    }
    if reference.len() < d {
        return Err(dim_err("reference shorter than the requested data length"));
    }
    let tape = NoiseTape::draw(plant, d, excitation_var, rng);
    let reference = ReferenceSignal {
        values: reference.values.columns(0, d).into_owned(),
        steps: reference.steps.clone(),
    };
    let cost = QuadraticCost::new(
        DMatrix::zeros(plant.n_y(), plant.n_y()),
        DMatrix::identity(plant.n_u(), plant.n_u()),
        1,
    )?;
    let sc = Scenario {
        plant,
        reference: &reference,
        tape: &tape,
        cost: &cost,
        warmup: d,
        seed: 0,
    };
    let run = match mode {
        DataLabel::OpenLoop => run_closed_loop(&mut OpenLoopPolicy, &mut OpenLoopPolicy, &sc)?,
        DataLabel::ClosedLoop => {
            run_closed_loop(&mut PdPolicy::default(), &mut PdPolicy::default(), &sc)?
        }
    };
    if run.diverged {
        return Err(crate::error::TpcError::NonConvergence {
            what: format!("{mode}-loop data collection (output exceeded {DIVERGENCE_LIMIT:e})"),
            iterations: run.len(),
            residual: run.outputs.amax(),
        });
    }
    TrajectoryData::new(run.inputs, run.outputs, mode)
}

/// Convenience: TPC policy from a gain, tagged with its mode.
pub fn tpc_policy(gain: TpcGain) -> TpcPolicy {
    let tag = match gain.mode {
        GainMode::Delta0 => "tpc".to_string(),
        GainMode::Relaxed { lambda, .. } => format!("tpc_relaxed_{lambda}"),
    };
    TpcPolicy::new(gain, tag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simbench::reference::generate_reference;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cost() -> QuadraticCost {
        QuadraticCost::diagonal(&[1000.0, 10.0], &[1.0], 1).unwrap()
    }

    #[test]
    fn open_loop_zero_variance_has_zero_input() {
        let plant = PlantModel::double_integrator();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = generate_reference(&mut rng, 40, 2);
        let data =
            collect_training_data(&plant, DataLabel::OpenLoop, 40, &mut rng, &r, 0.0).unwrap();
        assert_eq!(data.inputs().amax(), 0.0);
        assert_eq!(data.len(), 40);
    }

    #[test]
    fn closed_loop_noiseless_zero_reference() {
        let plant = PlantModel::double_integrator().noiseless();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let r = ReferenceSignal::constant(&DVector::zeros(2), 30);
        let data =
            collect_training_data(&plant, DataLabel::ClosedLoop, 30, &mut rng, &r, 0.0).unwrap();
        assert_eq!(data.inputs().amax(), 0.0);
        assert_eq!(data.outputs().amax(), 0.0);
    }

    #[test]
    fn pd_loop_is_stabilizing() {
        let plant = PlantModel::double_integrator();
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = generate_reference(&mut rng, 400, 2);
            let data = collect_training_data(
                &plant,
                DataLabel::ClosedLoop,
                400,
                &mut rng,
                &r,
                EXCITATION_VARIANCE,
            )
            .unwrap();
            let max_y1 = data.outputs().row(0).amax();
            assert!(max_y1 < 50.0, "seed {seed}: {max_y1}");
        }
    }

    #[test]
    fn timing_conventions_pair_samples_differently() {
        let base = PlantModel::double_integrator().noiseless();
        let r = ReferenceSignal::constant(&DVector::zeros(2), 3);
        let tape = NoiseTape {
            w: vec![DVector::zeros(2); 3],
            v: vec![DVector::zeros(2); 3],
            eta: vec![DVector::from_element(1, 1.0); 3],
        };
        let c = cost();
        for (timing, first_velocity) in [
            (OutputTiming::AfterInput, 1.0),
            (OutputTiming::BeforeInput, 0.0),
        ] {
            let plant = base.clone().with_timing(timing);
            let sc = Scenario {
                plant: &plant,
                reference: &r,
                tape: &tape,
                cost: &c,
                warmup: 0,
                seed: 0,
            };
            let run = run_closed_loop(&mut OpenLoopPolicy, &mut OpenLoopPolicy, &sc).unwrap();
            assert_eq!(run.outputs[(1, 0)], first_velocity);
        }
    }

    #[test]
    fn cost_bookkeeping_and_warmup() {
        let plant = PlantModel::double_integrator();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let r = generate_reference(&mut rng, 120, 2);
        let tape = NoiseTape::draw(&plant, 120, EXCITATION_VARIANCE, &mut rng);
        let c = cost();
        let sc = Scenario {
            plant: &plant,
            reference: &r,
            tape: &tape,
            cost: &c,
            warmup: 20,
            seed: 7,
        };
        let run = run_closed_loop(&mut PdPolicy::default(), &mut OpenLoopPolicy, &sc).unwrap();
        assert!(!run.diverged);
        assert_eq!(run.len(), 120);
        let again = run.recompute_cost(&c);
        assert!((again - run.cost).abs() <= 1e-10 * run.cost);
        // warmup inputs are pure excitation
        for t in 0..20 {
            assert_eq!(run.inputs[(0, t)], tape.eta[t][0]);
        }
    }

    #[test]
    fn divergence_is_flagged() {
        struct Bang;
        impl Policy for Bang {
            fn decide(&mut self, _h: &History) -> Result<DVector<f64>> {
                Ok(DVector::from_element(1, 1e5))
            }
            fn name(&self) -> &str {
                "bang"
            }
        }
        let plant = PlantModel::double_integrator();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let r = generate_reference(&mut rng, 200, 2);
        let tape = NoiseTape::draw(&plant, 200, 0.0, &mut rng);
        let c = cost();
        let sc = Scenario {
            plant: &plant,
            reference: &r,
            tape: &tape,
            cost: &c,
            warmup: 0,
            seed: 8,
        };
        let run = run_closed_loop(&mut Bang, &mut OpenLoopPolicy, &sc).unwrap();
        assert!(run.diverged);
        assert!(run.len() < 200);
        assert!(run.cost.is_finite());
    }

    #[test]
    fn past_window_order() {
        let u: Vec<_> = (0..3).map(|k| DVector::from_element(1, k as f64)).collect();
        let y: Vec<_> = (0..3)
            .map(|k| DVector::from_element(1, 10.0 + k as f64))
            .collect();
        let eta = DVector::zeros(1);
        let h = History {
            inputs: &u,
            outputs: &y,
            refs: &y,
            excitation: &eta,
        };
        assert_eq!(
            h.past_window(2).unwrap().as_slice(),
            &[1.0, 11.0, 2.0, 12.0]
        );
        assert!(h.past_window(4).is_none());
    }
}
