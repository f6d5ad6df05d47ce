//! Browser bindings for the demo page. Every export takes and returns JSON.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use tpc::hankel::{min_examples, param_count};
use tpc::predictors::{identify, test_rmse};
use tpc::simbench::runner::EXCITATION_VARIANCE;
use tpc::simbench::{
    collect_training_data, generate_reference, monte_carlo, ExperimentConfig, PlantModel, RunResult,
};
use tpc::{build_hankel, DataLabel, PredictorKind};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClosedLoopRequest {
    pub kind: PredictorKind,
    pub mode: DataLabel,
    pub d: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default = "default_steps")]
    pub steps: usize,
}

fn default_steps() -> usize {
    200
}

#[derive(Debug, Serialize)]
pub struct Trace {
    pub cost: f64,
    pub diverged: bool,
    pub y1: Vec<f64>,
    pub u: Vec<f64>,
    pub reference: Vec<f64>,
    /// Steps before this index are the PD warmup.
    pub warmup: usize,
}

impl From<&RunResult> for Trace {
    fn from(r: &RunResult) -> Self {
        Trace {
            cost: r.cost,
            diverged: r.diverged,
            y1: r.outputs.row(0).iter().copied().collect(),
            u: r.inputs.row(0).iter().copied().collect(),
            reference: r.refs.row(0).iter().copied().collect(),
            warmup: r.warmup,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ClosedLoopResponse {
    pub m: Option<usize>,
    pub lqg: Trace,
    pub tpc: Option<Trace>,
    pub relaxed: Option<Trace>,
    pub error: Option<String>,
}

/// Identifies a predictor on fresh data, then runs TPC (and the relaxed law
/// if `lambda` is set) against LQG on a shared reference and noise draw.
pub fn closed_loop(req: &ClosedLoopRequest) -> tpc::Result<ClosedLoopResponse> {
    let mut cfg = ExperimentConfig::new(vec![req.kind], vec![req.d], 1);
    cfg.training_modes = vec![req.mode];
    cfg.master_seed = req.seed;
    cfg.lambda = req.lambda;
    cfg.t_test = req.steps;
    cfg.evaluate_rmse = false;
    cfg.record_trajectories = 1;
    cfg.validate()?;
    let out = monte_carlo(&cfg, Some(1))?;
    let find = |suffix: &str| {
        out.trajectories
            .iter()
            .find(|(id, _)| id.ends_with(suffix))
            .map(|(_, r)| Trace::from(r))
    };
    let rec = &out.records[0];
    Ok(ClosedLoopResponse {
        m: rec.m,
        lqg: find("_lqg").expect("benchmark run is always recorded"),
        tpc: find("_tpc"),
        relaxed: find("_relaxed"),
        error: rec.error.clone(),
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RmseRequest {
    pub mode: DataLabel,
    pub d: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_h")]
    pub h: usize,
}

fn default_h() -> usize {
    10
}

#[derive(Debug, Serialize)]
pub struct RmseRow {
    pub kind: PredictorKind,
    pub m: Option<usize>,
    pub rmse_open_test: Option<f64>,
    pub rmse_closed_test: Option<f64>,
    pub error: Option<String>,
}

/// Mean test RMSE of every predictor kind trained on one dataset of length `d`.
pub fn rmse_by_kind(req: &RmseRequest) -> tpc::Result<Vec<RmseRow>> {
    if req.d == 0 || req.h == 0 {
        return Err(tpc::TpcError::Config("d and h must be positive".into()));
    }
    let plant = PlantModel::double_integrator();
    let draw = |label: DataLabel, seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = generate_reference(&mut rng, req.d, plant.n_y());
        collect_training_data(&plant, label, req.d, &mut rng, &r, EXCITATION_VARIANCE)
    };
    let train = draw(req.mode, req.seed)?;
    let tests = [
        draw(DataLabel::OpenLoop, req.seed.wrapping_add(1))?,
        draw(DataLabel::ClosedLoop, req.seed.wrapping_add(2))?,
    ];
    let rows = PredictorKind::ALL
        .into_iter()
        .map(|kind| {
            let mut row = RmseRow {
                kind,
                m: None,
                rmse_open_test: None,
                rmse_closed_test: None,
                error: None,
            };
            match identify(&train, kind, req.h, &[1, 2, 3, 4]) {
                Ok((pred, sel)) => {
                    row.m = Some(sel.m);
                    let score = |data| {
                        build_hankel(data, sel.m, req.h)
                            .and_then(|hs| test_rmse(&pred, &hs))
                            .map(|r| r.mean)
                            .ok()
                    };
                    row.rmse_open_test = score(&tests[0]);
                    row.rmse_closed_test = score(&tests[1]);
                }
                Err(e) => row.error = Some(e.to_string()),
            }
            row
        })
        .collect();
    Ok(rows)
}

#[derive(Debug, Serialize)]
pub struct CountRow {
    pub n_y: usize,
    pub n_u: usize,
    pub kind: PredictorKind,
    pub param_count: usize,
    pub min_examples: usize,
}

/// Parameter counts and minimum data lengths for `n_y = 1..=max_ny`,
/// `n_u = max(1, n_y / 2)`.
pub fn counts(m: usize, h: usize, max_ny: usize) -> Vec<CountRow> {
    let mut rows = Vec::new();
    for n_y in 1..=max_ny {
        let n_u = (n_y / 2).max(1);
        for kind in PredictorKind::ALL {
            rows.push(CountRow {
                n_y,
                n_u,
                kind,
                param_count: param_count(kind, m, h, n_u, n_y),
                min_examples: min_examples(kind, m, h, n_u, n_y),
            });
        }
    }
    rows
}

fn to_js<T: Serialize>(r: tpc::Result<T>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(Into::into))
        .map_err(|e| JsValue::from_str(&e.to_string()))
}

fn parse<T: for<'de> Deserialize<'de>>(json: &str) -> Result<T, JsValue> {
    serde_json::from_str(json).map_err(|e| JsValue::from_str(&format!("bad request: {e}")))
}

#[wasm_bindgen(js_name = closedLoop)]
pub fn closed_loop_js(request: &str) -> Result<String, JsValue> {
    to_js(closed_loop(&parse(request)?))
}

#[wasm_bindgen(js_name = rmseByKind)]
pub fn rmse_by_kind_js(request: &str) -> Result<String, JsValue> {
    to_js(rmse_by_kind(&parse(request)?))
}

#[wasm_bindgen(js_name = parameterCounts)]
pub fn counts_js(m: usize, h: usize, max_ny: usize) -> Result<String, JsValue> {
    if m == 0 || h == 0 {
        return Err(JsValue::from_str("m and h must be positive"));
    }
    to_js(Ok(counts(m, h, max_ny)))
}
