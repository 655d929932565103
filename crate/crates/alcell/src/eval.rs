//! Rolling forecasts, the normalized forecast error metric, blow-up
//! detection, and aggregation over the model-instance x trajectory grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::integrate::{euler_step, Trajectory};
use crate::plant::{CellState, STATE_DIM};
use crate::predictor::{DerivativeModel, ModelType};

/// A multi-step forecast alongside its divergence bookkeeping.
///
/// `predicted[k]` estimates the state at step k; index 0 is the true
/// initial state. If the rollout produced a non-finite value, every
/// entry from `first_nonfinite` on is NaN-filled.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastResult {
    pub predicted: Vec<[f64; STATE_DIM]>,
    pub first_nonfinite: Option<usize>,
}

impl ForecastResult {
    pub fn is_finite_through(&self, step: usize) -> bool {
        match self.first_nonfinite {
            Some(k) => k > step,
            None => true,
        }
    }
}

/// Forecasts `steps` steps ahead with forward Euler, feeding the model
/// its own state estimates and the trajectory's recorded inputs.
///
/// Divergence is data, not failure: a model error or non-finite state
/// marks the remaining steps as diverged and the rollout stops.
pub fn rolling_forecast(
    model: &dyn DerivativeModel,
    truth: &Trajectory,
    steps: usize,
) -> ForecastResult {
    assert!(steps <= truth.len_steps(), "forecast beyond trajectory end");
    let mut predicted = Vec::with_capacity(steps + 1);
    let mut state = truth.states[0];
    predicted.push(state.to_array());
    for k in 0..steps {
        let next = match model.predict_derivative(&state, &truth.inputs[k]) {
            Ok(deriv) => euler_step(&deriv, &state, truth.dt),
            Err(_) => {
                let first = predicted.len();
                predicted.resize(steps + 1, [f64::NAN; STATE_DIM]);
                return ForecastResult {
                    predicted,
                    first_nonfinite: Some(first),
                };
            }
        };
        if !next.is_finite() {
            let first = predicted.len();
            predicted.resize(steps + 1, [f64::NAN; STATE_DIM]);
            return ForecastResult {
                predicted,
                first_nonfinite: Some(first),
            };
        }
        predicted.push(next.to_array());
        state = next;
    }
    ForecastResult {
        predicted,
        first_nonfinite: None,
    }
}

/// Average (over states) normalized (by training std) rolling-forecast
/// mean squared error over the first `n` forecast steps.
///
/// Returns None when any prediction within those steps is non-finite;
/// the caller reports that as a blow-up rather than a number.
pub fn an_rfmse(
    predicted: &[[f64; STATE_DIM]],
    truth: &[CellState],
    state_std: &[f64; STATE_DIM],
    n: usize,
) -> Option<f64> {
    if n == 0 {
        return Some(0.0);
    }
    assert!(predicted.len() > n && truth.len() > n);
    let mut per_state = [0.0; STATE_DIM];
    for j in 1..=n {
        let t = truth[j].to_array();
        for i in 0..STATE_DIM {
            let e = (predicted[j][i] - t[i]) / state_std[i];
            if !e.is_finite() {
                return None;
            }
            per_state[i] += e * e;
        }
    }
    Some(per_state.iter().map(|s| s / n as f64).sum::<f64>() / STATE_DIM as f64)
}

/// Blow-up rule: the normalized MSE of the single state at the horizon
/// step exceeds 3, or any non-finite prediction occurred at or before it.
pub fn detect_blowup(
    predicted: &[[f64; STATE_DIM]],
    truth: &[CellState],
    state_std: &[f64; STATE_DIM],
    horizon: usize,
) -> bool {
    assert!(predicted.len() > horizon && truth.len() > horizon);
    for row in predicted.iter().take(horizon + 1) {
        if row.iter().any(|v| !v.is_finite()) {
            return true;
        }
    }
    let t = truth[horizon].to_array();
    let mut mse = 0.0;
    for i in 0..STATE_DIM {
        let e = (predicted[horizon][i] - t[i]) / state_std[i];
        mse += e * e;
    }
    mse / STATE_DIM as f64 > 3.0
}

pub const BLOWUP_THRESHOLD: f64 = 3.0;

/// One (model instance, test trajectory, horizon) outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub model_type: ModelType,
    pub instance: usize,
    pub trajectory: usize,
    pub horizon: usize,
    /// None when the forecast contains non-finite values within the
    /// horizon, which always counts as a blow-up.
    pub an_rfmse: Option<f64>,
    pub blowup: bool,
}

/// Distribution summary of the non-blow-up runs at one horizon.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HorizonStats {
    pub horizon: usize,
    /// Total runs (instances x trajectories).
    pub n: usize,
    pub blowup_count: usize,
    /// Runs entering the statistics; n - blowup_count.
    pub included: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub q1: Option<f64>,
    pub q3: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    /// Sorted AN-RFMSE values of the included runs, for external plots.
    pub an_rfmse_values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TypeReport {
    pub model_type: ModelType,
    pub instances: usize,
    pub per_horizon: Vec<HorizonStats>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub master_seed: u64,
    pub n_test: usize,
    pub horizons: Vec<usize>,
    pub state_std: [f64; STATE_DIM],
}

/// The evaluation output: per model type and horizon, the distribution
/// of AN-RFMSE over non-blow-up runs plus the blow-up counts, and the
/// raw per-run records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForecastReport {
    pub metadata: ReportMetadata,
    pub types: Vec<TypeReport>,
    pub runs: Vec<RunRecord>,
}

/// Quantile by linear interpolation between order statistics of a
/// sorted slice.
pub fn quantile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

/// A model instance entering the evaluation grid.
pub struct EvalModel {
    pub model_type: ModelType,
    pub instance: usize,
    pub predictor: Box<dyn DerivativeModel>,
}

impl EvalModel {
    pub fn new(
        model_type: ModelType,
        instance: usize,
        predictor: impl DerivativeModel + 'static,
    ) -> Self {
        EvalModel {
            model_type,
            instance,
            predictor: Box::new(predictor),
        }
    }
}

/// Evaluates every model instance on every test trajectory at every
/// horizon.
///
/// Statistics are computed over non-blow-up values, mirroring how the
/// distributions are plotted; blow-ups are counted separately. A run
/// flagged at one horizon stays flagged at every later horizon, so the
/// per-horizon blow-up counts are nondecreasing.
pub fn evaluate_experiment(
    models: &[EvalModel],
    testset: &[Trajectory],
    horizons: &[usize],
    state_std: &[f64; STATE_DIM],
) -> ForecastReport {
    assert!(!models.is_empty() && !testset.is_empty() && !horizons.is_empty());
    let mut horizons = horizons.to_vec();
    horizons.sort_unstable();
    let max_horizon = *horizons.last().unwrap();

    // The (model, trajectory) grid is evaluated in parallel; collect()
    // keeps grid order so the reduction below is deterministic.
    let grid: Vec<(usize, usize)> = (0..models.len())
        .flat_map(|m| (0..testset.len()).map(move |t| (m, t)))
        .collect();
    let runs: Vec<RunRecord> = grid
        .par_iter()
        .flat_map_iter(|&(m, t)| {
            let model = &models[m];
            let truth = &testset[t];
            let forecast = rolling_forecast(model.predictor.as_ref(), truth, max_horizon);
            let mut flagged = false;
            horizons
                .iter()
                .map(|&h| {
                    let value = an_rfmse(&forecast.predicted, &truth.states, state_std, h);
                    flagged = flagged
                        || detect_blowup(&forecast.predicted, &truth.states, state_std, h);
                    RunRecord {
                        model_type: model.model_type,
                        instance: model.instance,
                        trajectory: t,
                        horizon: h,
                        an_rfmse: value,
                        blowup: flagged,
                    }
                })
                .collect::<Vec<_>>()
        })
        .collect();

    let mut type_order: Vec<ModelType> = Vec::new();
    for m in models {
        if !type_order.contains(&m.model_type) {
            type_order.push(m.model_type);
        }
    }

    let types = type_order
        .iter()
        .map(|&ty| {
            let instances = models.iter().filter(|m| m.model_type == ty).count();
            let per_horizon = horizons
                .iter()
                .map(|&h| {
                    let of_type = runs
                        .iter()
                        .filter(|r| r.model_type == ty && r.horizon == h);
                    let mut included: Vec<f64> = Vec::new();
                    let mut blowup_count = 0usize;
                    let mut n = 0usize;
                    for r in of_type {
                        n += 1;
                        if r.blowup {
                            blowup_count += 1;
                        } else {
                            // Non-blow-up runs are finite through the
                            // horizon, so the metric is defined.
                            included.push(r.an_rfmse.expect("finite run"));
                        }
                    }
                    included.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    let mean = if included.is_empty() {
                        None
                    } else {
                        Some(included.iter().sum::<f64>() / included.len() as f64)
                    };
                    HorizonStats {
                        horizon: h,
                        n,
                        blowup_count,
                        included: included.len(),
                        mean,
                        median: quantile(&included, 0.5),
                        q1: quantile(&included, 0.25),
                        q3: quantile(&included, 0.75),
                        min: included.first().copied(),
                        max: included.last().copied(),
                        an_rfmse_values: included,
                    }
                })
                .collect();
            TypeReport {
                model_type: ty,
                instances,
                per_horizon,
            }
        })
        .collect();

    ForecastReport {
        metadata: ReportMetadata {
            master_seed: 0,
            n_test: testset.len(),
            horizons: horizons.clone(),
            state_std: *state_std,
        },
        types,
        runs,
    }
}

impl ForecastReport {
    pub fn for_type(&self, ty: ModelType) -> Option<&TypeReport> {
        self.types.iter().find(|t| t.model_type == ty)
    }

    pub fn stats_at(&self, ty: ModelType, horizon: usize) -> Option<&HorizonStats> {
        self.for_type(ty)?
            .per_horizon
            .iter()
            .find(|h| h.horizon == horizon)
    }
}
