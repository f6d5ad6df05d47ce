//! Monte Carlo comparison of TPC variants against the LQG benchmark.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lqg::{design_lqg, LqgController, LqgOracle};
use super::plant::PlantModel;
use super::reference::generate_reference;
use super::runner::{
    collect_training_data, run_closed_loop, tpc_policy, NoiseTape, PdPolicy, RunResult, Scenario,
    EXCITATION_VARIANCE,
};
use crate::control::{make_gain, GainMode, QuadraticCost};
use crate::error::{Result, TpcError};
use crate::hankel::{
    build_hankel, min_examples, DataLabel, HankelSet, PredictorKind, TrajectoryData,
};
use crate::predictors::{identify, test_rmse, Predictor};

/// Diagonal cost weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub qy: Vec<f64>,
    pub ru: Vec<f64>,
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig {
            qy: vec![1000.0, 10.0],
            ru: vec![1.0],
        }
    }
}

fn default_kinds() -> Vec<PredictorKind> {
    PredictorKind::ALL.to_vec()
}
fn default_modes() -> Vec<DataLabel> {
    vec![DataLabel::OpenLoop, DataLabel::ClosedLoop]
}
fn default_h() -> usize {
    10
}
fn default_m_candidates() -> Vec<usize> {
    vec![1, 2, 3, 4]
}
fn default_t_test() -> usize {
    400
}
fn default_excitation() -> f64 {
    EXCITATION_VARIANCE
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub plant: PlantModel,
    #[serde(default)]
    pub cost: CostConfig,
    #[serde(default = "default_kinds")]
    pub predictors: Vec<PredictorKind>,
    pub d_values: Vec<usize>,
    #[serde(default = "default_modes")]
    pub training_modes: Vec<DataLabel>,
    #[serde(default = "default_h")]
    pub h: usize,
    #[serde(default = "default_m_candidates")]
    pub m_candidates: Vec<usize>,
    pub runs: usize,
    /// Length of test datasets and of the counted part of each control run.
    #[serde(rename = "T_test", alias = "t_test", default = "default_t_test")]
    pub t_test: usize,
    /// Also run the relaxed controller with this weight.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub relaxed_input_penalty: bool,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_excitation")]
    pub excitation_variance: f64,
    #[serde(default = "default_true")]
    pub evaluate_rmse: bool,
    /// Length of the fresh RMSE test datasets. Unset: same length as the
    /// training data they are compared against.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rmse_test_len: Option<usize>,
    /// Keep full trajectories for the first this-many runs.
    #[serde(default)]
    pub record_trajectories: usize,
}

impl ExperimentConfig {
    /// Sweep with the default plant and cost.
    pub fn new(predictors: Vec<PredictorKind>, d_values: Vec<usize>, runs: usize) -> Self {
        ExperimentConfig {
            plant: PlantModel::default(),
            cost: CostConfig::default(),
            predictors,
            d_values,
            training_modes: default_modes(),
            h: default_h(),
            m_candidates: default_m_candidates(),
            runs,
            t_test: default_t_test(),
            lambda: None,
            relaxed_input_penalty: false,
            master_seed: 0,
            excitation_variance: EXCITATION_VARIANCE,
            evaluate_rmse: true,
            rmse_test_len: None,
            record_trajectories: 0,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            TpcError::Json(j) => TpcError::Config(format!(
                "{}: line {}, column {}: {j}",
                path.display(),
                j.line(),
                j.column()
            )),
            other => other,
        })
    }

    pub fn quadratic_cost(&self) -> Result<QuadraticCost> {
        QuadraticCost::diagonal(&self.cost.qy, &self.cost.ru, self.h)
    }

    pub fn warmup(&self) -> usize {
        self.m_candidates.iter().copied().max().unwrap_or(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(TpcError::Config(msg.to_string()));
        if self.runs == 0 {
            return bad("runs must be at least 1");
        }
        if self.d_values.is_empty() || self.d_values.contains(&0) {
            return bad("d_values must be nonempty and positive");
        }
        if self.h == 0 {
            return bad("h must be positive");
        }
        if self.m_candidates.is_empty() || self.m_candidates.contains(&0) {
            return bad("m_candidates must be nonempty and positive");
        }
        if self.predictors.is_empty() || self.training_modes.is_empty() {
            return bad("predictors and training_modes must be nonempty");
        }
        if let Some(l) = self.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return bad("lambda must be positive");
            }
        }
        if self.t_test <= self.warmup() + self.h {
            return bad("T_test must exceed max(m_candidates) + h");
        }
        if matches!(self.rmse_test_len, Some(l) if l < self.warmup() + self.h) {
            return bad("rmse_test_len must be at least max(m_candidates) + h");
        }
        if self.excitation_variance < 0.0 {
            return bad("excitation_variance must be nonnegative");
        }
        self.plant.validate()?;
        let cost = self.quadratic_cost()?;
        if cost.n_y() != self.plant.n_y() || cost.n_u() != self.plant.n_u() {
            return bad("cost weights do not match the plant dimensions");
        }
        let (n_u, n_y) = (self.plant.n_u(), self.plant.n_y());
        let m_min = self.m_candidates.iter().copied().min().unwrap_or(1);
        for &d in &self.d_values {
            let any = self
                .predictors
                .iter()
                .any(|&k| d >= min_examples(k, m_min, self.h, n_u, n_y));
            if !any {
                log::warn!("d = {d} is below the minimum for every configured predictor");
            }
        }
        Ok(())
    }
}

/// Independent random stream for `(master_seed, run, stream)`.
pub fn derive_seed(master: u64, run: u64, stream: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(mix(mix(master) ^ run) ^ stream)
}

pub mod streams {
    pub const TRAIN_OPEN: u64 = 1;
    pub const TRAIN_CLOSED: u64 = 2;
    pub const TEST_OPEN: u64 = 3;
    pub const TEST_CLOSED: u64 = 4;
    pub const CONTROL: u64 = 5;
}

fn rng_for(cfg: &ExperimentConfig, run: usize, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(cfg.master_seed, run as u64, stream))
}

/// Outcome for one (run, predictor, training mode, d).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub predictor: PredictorKind,
    pub training_mode: DataLabel,
    pub d: usize,
    pub m: Option<usize>,
    pub rmse_open_test: Option<f64>,
    pub rmse_closed_test: Option<f64>,
    pub cost: Option<f64>,
    pub diverged: bool,
    pub mean_abs_u: Option<f64>,
    pub lqg_cost: f64,
    pub relaxed_cost: Option<f64>,
    pub relaxed_diverged: Option<bool>,
    pub relaxed_mean_abs_u: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LqgRecord {
    pub run: usize,
    pub cost: f64,
    pub mean_abs_u: f64,
}

/// One row of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub predictor: PredictorKind,
    pub training_mode: DataLabel,
    pub d: usize,
    pub runs: usize,
    pub fit_failures: usize,
    pub diverged_count: usize,
    pub mean_m: f64,
    pub mean_rmse_open_test: f64,
    pub stderr_rmse_open_test: f64,
    pub mean_rmse_closed_test: f64,
    pub stderr_rmse_closed_test: f64,
    pub mean_cost: f64,
    pub stderr_cost: f64,
    pub lqg_mean_cost: f64,
    pub cost_ratio_vs_lqg: f64,
    pub stderr_cost_ratio: f64,
    pub mean_abs_u: f64,
    pub relaxed_mean_cost: Option<f64>,
    /// Mean over runs of `relaxed_cost / cost - 1`.
    pub relaxed_cost_increase: Option<f64>,
    pub stderr_relaxed_cost_increase: Option<f64>,
    pub relaxed_mean_abs_u: Option<f64>,
    pub relaxed_diverged_count: Option<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct MonteCarloOutput {
    pub summary: Vec<SummaryRow>,
    pub records: Vec<RunRecord>,
    pub lqg: Vec<LqgRecord>,
    /// `(id, trajectory)` for the recorded runs.
    pub trajectories: Vec<(String, RunResult)>,
}

struct RunOutput {
    records: Vec<RunRecord>,
    lqg: LqgRecord,
    trajectories: Vec<(String, RunResult)>,
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    cost: QuadraticCost,
    oracle: LqgOracle,
}

/// Sample mean and its standard error; the error is NaN for fewer than two values.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Ratio of means `mean(x) / mean(y)` over paired samples with its
/// delta-method standard error.
pub fn ratio_stderr(x: &[f64], y: &[f64]) -> (f64, f64) {
    let (mx, _) = mean_stderr(x);
    let (my, _) = mean_stderr(y);
    let r = mx / my;
    let resid: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - r * b).collect();
    let (_, se) = mean_stderr(&resid);
    (r, se / my.abs())
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    ctx: &Context,
    run: usize,
    kind: PredictorKind,
    data: &TrajectoryData,
    tests: &[TrajectoryData; 2],
    test_cache: &mut HashMap<(usize, usize, usize), Option<HankelSet>>,
    sc: &Scenario,
    lqg_cost: f64,
    keep: bool,
) -> (RunRecord, Vec<(String, RunResult)>) {
    let cfg = ctx.cfg;
    let mut rec = RunRecord {
        run,
        predictor: kind,
        training_mode: data.label(),
        d: data.len(),
        m: None,
        rmse_open_test: None,
        rmse_closed_test: None,
        cost: None,
        diverged: false,
        mean_abs_u: None,
        lqg_cost,
        relaxed_cost: None,
        relaxed_diverged: None,
        relaxed_mean_abs_u: None,
        error: None,
    };
    let mut kept = Vec::new();
    let outcome = (|| -> Result<()> {
        let (pred, sel) = identify(data, kind, cfg.h, &cfg.m_candidates)?;
        rec.m = Some(sel.m);
        if cfg.evaluate_rmse {
            for (slot, test) in tests.iter().enumerate() {
                let len = cfg.rmse_test_len.unwrap_or(data.len()).min(test.len());
                let hs = test_cache.entry((slot, len, sel.m)).or_insert_with(|| {
                    let part = test.prefix(len).ok()?;
                    build_hankel(&part, sel.m, cfg.h).ok()
                });
                let value = hs
                    .as_ref()
                    .and_then(|hs| test_rmse(&pred, hs).ok())
                    .map(|r| r.mean);
                if slot == 0 {
                    rec.rmse_open_test = value;
                } else {
                    rec.rmse_closed_test = value;
                }
            }
        }
        let id = format!("{run:04}_{}_{}_d{}", kind, data.label(), data.len());
        let r = control_run(ctx, &pred, GainMode::Delta0, sc)?;
        rec.cost = Some(r.cost);
        rec.diverged = r.diverged;
        rec.mean_abs_u = Some(r.mean_abs_input());
        if keep {
            kept.push((format!("{id}_tpc"), r));
        }
        if let Some(lambda) = cfg.lambda {
            let mode = GainMode::Relaxed {
                lambda,
                input_penalty: cfg.relaxed_input_penalty,
            };
            let r = control_run(ctx, &pred, mode, sc)?;
            rec.relaxed_cost = Some(r.cost);
            rec.relaxed_diverged = Some(r.diverged);
            rec.relaxed_mean_abs_u = Some(r.mean_abs_input());
            if keep {
                kept.push((format!("{id}_relaxed"), r));
            }
        }
        Ok(())
    })();
    if let Err(e) = outcome {
        log::debug!("run {run} {kind} {} d={}: {e}", data.label(), data.len());
        rec.error = Some(e.to_string());
        rec.cost = None;
        rec.relaxed_cost = None;
    }
    (rec, kept)
}

fn control_run(
    ctx: &Context,
    pred: &Predictor,
    mode: GainMode,
    sc: &Scenario,
) -> Result<RunResult> {
    let gain = make_gain(pred, &ctx.cost, mode)?;
    run_closed_loop(&mut tpc_policy(gain), &mut PdPolicy::default(), sc)
}

fn simulate_run(ctx: &Context, run: usize) -> Result<RunOutput> {
    let cfg = ctx.cfg;
    let plant = &cfg.plant;
    let n_y = plant.n_y();
    let warmup = cfg.warmup();
    let keep = run < cfg.record_trajectories;

    let mut rng = rng_for(cfg, run, streams::CONTROL);
    let total = warmup + cfg.t_test;
    let reference = generate_reference(&mut rng, total, n_y);
    let tape = NoiseTape::draw(plant, total, cfg.excitation_variance, &mut rng);
    let sc = Scenario {
        plant,
        reference: &reference,
        tape: &tape,
        cost: &ctx.cost,
        warmup,
        seed: derive_seed(cfg.master_seed, run as u64, streams::CONTROL),
    };
    let lqg_run = run_closed_loop(
        &mut LqgController::new(ctx.oracle.clone()),
        &mut PdPolicy::default(),
        &sc,
    )?;
    let lqg = LqgRecord {
        run,
        cost: lqg_run.cost,
        mean_abs_u: lqg_run.mean_abs_input(),
    };
    let mut trajectories = Vec::new();
    if keep {
        trajectories.push((format!("{run:04}_lqg"), lqg_run));
    }

    let d_max = cfg.d_values.iter().copied().max().unwrap_or(1);
    // one long test trajectory per mode; each d is scored on a prefix
    let tests = if cfg.evaluate_rmse {
        let len = cfg.rmse_test_len.unwrap_or(d_max);
        let make = |label, stream| -> Result<TrajectoryData> {
            let mut rng = rng_for(cfg, run, stream);
            let r = generate_reference(&mut rng, len, n_y);
            collect_training_data(plant, label, len, &mut rng, &r, cfg.excitation_variance)
        };
        [
            make(DataLabel::OpenLoop, streams::TEST_OPEN)?,
            make(DataLabel::ClosedLoop, streams::TEST_CLOSED)?,
        ]
    } else {
        let dummy = TrajectoryData::new(
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            DataLabel::OpenLoop,
        )?;
        [dummy.clone(), dummy]
    };
    let mut test_cache = HashMap::new();

    let mut records = Vec::new();
    for &mode in &cfg.training_modes {
        let stream = match mode {
            DataLabel::OpenLoop => streams::TRAIN_OPEN,
            DataLabel::ClosedLoop => streams::TRAIN_CLOSED,
        };
        let mut rng = rng_for(cfg, run, stream);
        let r = generate_reference(&mut rng, d_max, n_y);
        let full =
            collect_training_data(plant, mode, d_max, &mut rng, &r, cfg.excitation_variance)?;
        for &d in &cfg.d_values {
            let data = full.prefix(d)?;
            for &kind in &cfg.predictors {
                let (rec, kept) = evaluate(
                    ctx,
                    run,
                    kind,
                    &data,
                    &tests,
                    &mut test_cache,
                    &sc,
                    lqg.cost,
                    keep,
                );
                records.push(rec);
                trajectories.extend(kept);
            }
        }
    }
    Ok(RunOutput {
        records,
        lqg,
        trajectories,
    })
}

fn run_all(ctx: &Context, jobs: Option<usize>) -> Result<Vec<RunOutput>> {
    let runs = ctx.cfg.runs;
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let work = || -> Result<Vec<RunOutput>> {
            (0..runs)
                .into_par_iter()
                .map(|r| simulate_run(ctx, r))
                .collect()
        };
        match jobs {
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| TpcError::Config(format!("thread pool: {e}")))?
                .install(work),
            None => work(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = jobs;
        (0..runs).map(|r| simulate_run(ctx, r)).collect()
    }
}

/// Runs the configured sweep. Per-(predictor, mode, d) failures are recorded,
/// not fatal; results do not depend on `jobs`.
pub fn monte_carlo(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<MonteCarloOutput> {
    cfg.validate()?;
    let cost = cfg.quadratic_cost()?;
    let oracle = design_lqg(&cfg.plant, &cost.qy, &cost.ru)?;
    let ctx = Context { cfg, cost, oracle };
    let outputs = run_all(&ctx, jobs)?;

    let mut out = MonteCarloOutput::default();
    for o in outputs {
        out.records.extend(o.records);
        out.lqg.push(o.lqg);
        out.trajectories.extend(o.trajectories);
    }
    out.summary = summarize(cfg, &out.records, &out.lqg);
    Ok(out)
}

fn summarize(cfg: &ExperimentConfig, records: &[RunRecord], lqg: &[LqgRecord]) -> Vec<SummaryRow> {
    let lqg_costs: Vec<f64> = lqg.iter().map(|l| l.cost).collect();
    let (lqg_mean, _) = mean_stderr(&lqg_costs);
    let mut rows = Vec::new();
    for &mode in &cfg.training_modes {
        for &d in &cfg.d_values {
            for &kind in &cfg.predictors {
                let group: Vec<&RunRecord> = records
                    .iter()
                    .filter(|r| r.predictor == kind && r.training_mode == mode && r.d == d)
                    .collect();
                let ok: Vec<&RunRecord> = group
                    .iter()
                    .copied()
                    .filter(|r| r.error.is_none())
                    .collect();
                let pick = |f: &dyn Fn(&RunRecord) -> Option<f64>| -> Vec<f64> {
                    ok.iter()
                        .filter_map(|r| f(r))
                        .filter(|v| v.is_finite())
                        .collect()
                };
                let costs = pick(&|r| r.cost);
                let paired_lqg: Vec<f64> = ok
                    .iter()
                    .filter(|r| r.cost.is_some())
                    .map(|r| r.lqg_cost)
                    .collect();
                let (mean_cost, se_cost) = mean_stderr(&costs);
                // normalize by the benchmark mean over all runs; the spread
                // comes from the paired runs
                let (_, se_ratio) = ratio_stderr(&costs, &paired_lqg);
                let (rmse_o, se_o) = mean_stderr(&pick(&|r| r.rmse_open_test));
                let (rmse_c, se_c) = mean_stderr(&pick(&|r| r.rmse_closed_test));
                let (mean_m, _) = mean_stderr(&pick(&|r| r.m.map(|m| m as f64)));
                let (mean_u, _) = mean_stderr(&pick(&|r| r.mean_abs_u));
                let relaxed = cfg.lambda.map(|_| {
                    let pairs: Vec<(f64, f64)> = ok
                        .iter()
                        .filter_map(|r| Some((r.relaxed_cost?, r.cost?)))
                        .filter(|(a, b)| a.is_finite() && b.is_finite() && *b > 0.0)
                        .collect();
                    let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
                    let increase: Vec<f64> = pairs.iter().map(|(a, b)| a / b - 1.0).collect();
                    let (inc, se) = mean_stderr(&increase);
                    let (mr, _) = mean_stderr(&x);
                    let (mu, _) = mean_stderr(&pick(&|r| r.relaxed_mean_abs_u));
                    let div = ok
                        .iter()
                        .filter(|r| r.relaxed_diverged == Some(true))
                        .count();
                    (mr, inc, se, mu, div)
                });
                rows.push(SummaryRow {
                    predictor: kind,
                    training_mode: mode,
                    d,
                    runs: group.len(),
                    fit_failures: group.len() - ok.len(),
                    diverged_count: ok.iter().filter(|r| r.diverged).count(),
                    mean_m,
                    mean_rmse_open_test: rmse_o,
                    stderr_rmse_open_test: se_o,
                    mean_rmse_closed_test: rmse_c,
                    stderr_rmse_closed_test: se_c,
                    mean_cost,
                    stderr_cost: se_cost,
                    lqg_mean_cost: lqg_mean,
                    cost_ratio_vs_lqg: mean_cost / lqg_mean,
                    stderr_cost_ratio: se_ratio,
                    mean_abs_u: mean_u,
                    relaxed_mean_cost: relaxed.map(|r| r.0),
                    relaxed_cost_increase: relaxed.map(|r| r.1),
                    stderr_relaxed_cost_increase: relaxed.map(|r| r.2),
                    relaxed_mean_abs_u: relaxed.map(|r| r.3),
                    relaxed_diverged_count: relaxed.map(|r| r.4),
                });
            }
        }
    }
    rows
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|row| row.map_err(TpcError::from))
        .collect()
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    write_rows(path, rows)
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    read_rows(path)
}

pub fn write_records(path: &Path, rows: &[RunRecord]) -> Result<()> {
    write_rows(path, rows)
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    read_rows(path)
}

pub fn write_lqg_records(path: &Path, rows: &[LqgRecord]) -> Result<()> {
    write_rows(path, rows)
}

/// Per-step trajectory: `t,counted,u_*,y_*,yr_*,stage_cost`.
pub fn write_run_trajectory(path: &Path, run: &RunResult) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    let (n_u, n_y) = (run.inputs.nrows(), run.outputs.nrows());
    let mut header = vec!["t".to_string(), "counted".to_string()];
    header.extend((1..=n_u).map(|i| format!("u_{i}")));
    header.extend((1..=n_y).map(|i| format!("y_{i}")));
    header.extend((1..=n_y).map(|i| format!("yr_{i}")));
    header.push("stage_cost".into());
    w.write_record(&header)?;
    for t in 0..run.len() {
        let mut rec = vec![t.to_string(), u8::from(t >= run.warmup).to_string()];
        rec.extend(run.inputs.column(t).iter().map(|v| v.to_string()));
        rec.extend(run.outputs.column(t).iter().map(|v| v.to_string()));
        rec.extend(run.refs.column(t).iter().map(|v| v.to_string()));
        rec.push(run.stage_costs[t].to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `summary.csv`, `runs.csv`, `lqg_runs.csv` and `runs/<id>.csv`.
pub fn write_output(dir: &Path, out: &MonteCarloOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_summary(&dir.join("summary.csv"), &out.summary)?;
    write_records(&dir.join("runs.csv"), &out.records)?;
    write_lqg_records(&dir.join("lqg_runs.csv"), &out.lqg)?;
    for (id, run) in &out.trajectories {
        write_run_trajectory(&dir.join("runs").join(format!("{id}.csv")), run)?;
    }
    Ok(())
}
