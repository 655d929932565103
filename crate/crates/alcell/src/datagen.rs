//! Corpus generation: initial-condition sampling, excitation inputs,
//! trajectory sets, and regression datasets.
//!
//! Initial states are drawn uniformly from the operating ranges, with the
//! alumina/fluoride contents sampled as mass ratios and converted to
//! masses. The feeds and tapping are impulse-scheduled proportional
//! controllers with additive uniform noise; line current and anode
//! distance ride an APRBS excitation on top of constant bases.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::integrate::{simulate, InputPolicy, Trajectory};
use crate::plant::{
    self, CellState, ControlInput, PlantConstants, PlantMode, INPUT_DIM, STATE_DIM,
};
use crate::rng::{stream, StreamRole};

pub const FEATURE_DIM: usize = STATE_DIM + INPUT_DIM;

/// Uniform sampling intervals for the initial cell state. Alumina and
/// fluoride are specified as mass ratios, not masses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitRanges {
    pub side_ledge: (f64, f64),
    pub alumina_ratio: (f64, f64),
    pub fluoride_ratio: (f64, f64),
    pub cryolite: (f64, f64),
    pub metal: (f64, f64),
    pub bath_temp: (f64, f64),
    pub ledge_temp: (f64, f64),
    pub wall_temp: (f64, f64),
}

impl Default for InitRanges {
    fn default() -> Self {
        InitRanges {
            side_ledge: (2060.0, 4460.0),
            alumina_ratio: (0.02, 0.05),
            fluoride_ratio: (0.09, 0.13),
            cryolite: (11500.0, 16000.0),
            metal: (9550.0, 10600.0),
            bath_temp: (940.0, 990.0),
            ledge_temp: (790.0, 850.0),
            wall_temp: (555.0, 610.0),
        }
    }
}

/// Controller and excitation parameters for the five inputs.
///
/// The three impulse inputs fire every `*_period` steps; at a firing the
/// applied value is `clamp(gain * (setpoint - measurement) + noise)` to
/// [0, `*_max`]. The capacity caps model finite feeder and tapping
/// hardware; without them a single firing from a far-off-setpoint state
/// dumps enough mass to throw the bath composition across its validity
/// range. Between firings the impulse inputs are exactly zero and no
/// noise is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputPolicyConfig {
    pub alumina_gain: f64,
    pub alumina_setpoint: f64,
    pub alumina_noise: (f64, f64),
    pub alumina_period: usize,
    pub alumina_max: f64,

    pub fluoride_gain: f64,
    pub fluoride_setpoint: f64,
    pub fluoride_noise: (f64, f64),
    pub fluoride_period: usize,
    pub fluoride_max: f64,

    pub tapping_gain: f64,
    pub tapping_setpoint: f64,
    pub tapping_noise: (f64, f64),
    pub tapping_period: usize,
    pub tapping_max: f64,

    pub current_base: f64,
    pub current_noise: (f64, f64),
    pub distance_base: f64,
    pub distance_noise: (f64, f64),
    /// APRBS hold time range in steps, inclusive.
    pub hold_range: (usize, usize),
}

impl Default for InputPolicyConfig {
    fn default() -> Self {
        InputPolicyConfig {
            alumina_gain: 3e4,
            alumina_setpoint: 0.023,
            alumina_noise: (-2.0, 2.0),
            alumina_period: 30,
            alumina_max: 15.0,
            fluoride_gain: 1.3e4,
            fluoride_setpoint: 0.105,
            fluoride_noise: (-0.5, 0.5),
            fluoride_period: 60,
            fluoride_max: 15.0,
            tapping_gain: 2.0,
            tapping_setpoint: 1e4,
            tapping_noise: (-2.0, 2.0),
            tapping_period: 180,
            tapping_max: 2.0,
            current_base: 1.4e4,
            current_noise: (-7e3, 7e3),
            distance_base: 0.05,
            distance_noise: (-0.015, 0.015),
            hold_range: (10, 100),
        }
    }
}

/// Samples an initial state: six components uniform in their intervals,
/// the alumina/fluoride ratios converted to masses against the sampled
/// cryolite mass.
pub fn sample_initial_state(rng: &mut ChaCha8Rng, ranges: &InitRanges) -> Result<CellState> {
    let u = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| rng.gen_range(lo..hi);
    let side_ledge = u(rng, ranges.side_ledge);
    let c2 = u(rng, ranges.alumina_ratio);
    let c3 = u(rng, ranges.fluoride_ratio);
    let cryolite = u(rng, ranges.cryolite);
    let metal = u(rng, ranges.metal);
    let bath_temp = u(rng, ranges.bath_temp);
    let ledge_temp = u(rng, ranges.ledge_temp);
    let wall_temp = u(rng, ranges.wall_temp);

    let remainder = 1.0 - c2 - c3;
    if remainder <= 0.0 {
        return Err(Error::RatioConversion(c2 + c3));
    }
    let total = cryolite / remainder;
    Ok(CellState {
        side_ledge,
        alumina: c2 * total,
        fluoride: c3 * total,
        cryolite,
        metal,
        bath_temp,
        ledge_temp,
        wall_temp,
    })
}

/// Amplitude-modulated pseudo-random binary sequence: piecewise-constant
/// with uniform amplitudes and uniform-integer hold lengths. Returns
/// `steps + 1` values.
pub fn aprbs(
    rng: &mut ChaCha8Rng,
    amplitude: (f64, f64),
    hold_steps: (usize, usize),
    steps: usize,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(steps + 1);
    while out.len() <= steps {
        let hold = rng.gen_range(hold_steps.0..=hold_steps.1);
        let value = if amplitude.0 == amplitude.1 {
            amplitude.0
        } else {
            rng.gen_range(amplitude.0..amplitude.1)
        };
        for _ in 0..hold {
            out.push(value);
            if out.len() > steps {
                break;
            }
        }
    }
    out
}

/// Proportional terms of the three impulse controllers at a given state.
/// Exposed separately so the control law can be checked in isolation.
pub fn impulse_p_terms(
    state: &CellState,
    cfg: &InputPolicyConfig,
) -> Result<(f64, f64, f64)> {
    let (c2, c3) = plant::mass_ratios(state)?;
    Ok((
        cfg.alumina_gain * (cfg.alumina_setpoint - c2),
        cfg.fluoride_gain * (cfg.fluoride_setpoint - c3),
        cfg.tapping_gain * (state.metal - cfg.tapping_setpoint),
    ))
}

/// The per-trajectory excitation policy.
///
/// All randomness is drawn up front from streams derived as
/// (master seed, trajectory index, role), so `input_at` is a pure
/// function and the policy can be replayed or shared freely.
pub struct ExcitationPolicy {
    cfg: InputPolicyConfig,
    current_signal: Vec<f64>,
    distance_signal: Vec<f64>,
    alumina_noise: Vec<f64>,
    fluoride_noise: Vec<f64>,
    tapping_noise: Vec<f64>,
}

impl ExcitationPolicy {
    pub fn new(
        cfg: InputPolicyConfig,
        master_seed: u64,
        trajectory_index: u64,
        salt: u64,
        steps: usize,
    ) -> Self {
        let mut current_rng = stream(master_seed, trajectory_index, StreamRole::LineCurrentAprbs, salt);
        let mut distance_rng =
            stream(master_seed, trajectory_index, StreamRole::AnodeDistanceAprbs, salt);
        let current_signal = aprbs(&mut current_rng, cfg.current_noise, cfg.hold_range, steps);
        let distance_signal = aprbs(&mut distance_rng, cfg.distance_noise, cfg.hold_range, steps);

        let draws = |role: StreamRole, (lo, hi): (f64, f64), period: usize| -> Vec<f64> {
            let mut rng = stream(master_seed, trajectory_index, role, salt);
            (0..=steps / period).map(|_| rng.gen_range(lo..hi)).collect()
        };
        let alumina_noise = draws(StreamRole::AluminaImpulse, cfg.alumina_noise, cfg.alumina_period);
        let fluoride_noise =
            draws(StreamRole::FluorideImpulse, cfg.fluoride_noise, cfg.fluoride_period);
        let tapping_noise = draws(StreamRole::TappingImpulse, cfg.tapping_noise, cfg.tapping_period);

        ExcitationPolicy {
            cfg,
            current_signal,
            distance_signal,
            alumina_noise,
            fluoride_noise,
            tapping_noise,
        }
    }
}

impl InputPolicy for ExcitationPolicy {
    fn input_at(&self, step: usize, state: &CellState) -> ControlInput {
        let cfg = &self.cfg;
        // Ratios can degenerate mid-divergence; feed zero rather than
        // panicking so the surrounding integrator reports the real error.
        let (p_alumina, p_fluoride, p_tapping) =
            impulse_p_terms(state, cfg).unwrap_or((0.0, 0.0, 0.0));

        let fire = |period: usize| step % period == 0;
        let clamp = |raw: f64, max: f64| raw.max(0.0).min(max);

        let alumina_feed = if fire(cfg.alumina_period) {
            clamp(
                p_alumina + self.alumina_noise[step / cfg.alumina_period],
                cfg.alumina_max,
            )
        } else {
            0.0
        };
        let fluoride_feed = if fire(cfg.fluoride_period) {
            clamp(
                p_fluoride + self.fluoride_noise[step / cfg.fluoride_period],
                cfg.fluoride_max,
            )
        } else {
            0.0
        };
        let tapping = if fire(cfg.tapping_period) {
            clamp(
                p_tapping + self.tapping_noise[step / cfg.tapping_period],
                cfg.tapping_max,
            )
        } else {
            0.0
        };

        ControlInput {
            alumina_feed,
            line_current: cfg.current_base + self.current_signal[step],
            fluoride_feed,
            tapping,
            anode_distance: cfg.distance_base + self.distance_signal[step],
        }
    }
}

/// How many fresh initial conditions one trajectory slot may consume
/// before corpus generation gives up.
const MAX_SAMPLING_ATTEMPTS: u64 = 64;

/// Simulates one corpus slot, resampling the initial condition (with a
/// salted stream) if the plant diverges. Divergence affects roughly 1-2%
/// of draws from the default ranges: a hot bath over a thin ledge can
/// melt the ledge away faster than the temperatures can settle.
pub fn generate_trajectory(
    master_seed: u64,
    trajectory_index: u64,
    steps: usize,
    dt: f64,
    ranges: &InitRanges,
    policy_cfg: &InputPolicyConfig,
    consts: &PlantConstants,
) -> Result<Trajectory> {
    for salt in 0..MAX_SAMPLING_ATTEMPTS {
        let mut init_rng = stream(master_seed, trajectory_index, StreamRole::InitialState, salt);
        let x0 = sample_initial_state(&mut init_rng, ranges)?;
        let policy = ExcitationPolicy::new(*policy_cfg, master_seed, trajectory_index, salt, steps);
        match simulate(&x0, &policy, steps, dt, consts, PlantMode::Full) {
            Ok(traj) => return Ok(traj),
            Err(Error::SimulationDiverged { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::CorpusExhausted {
        index: trajectory_index as usize,
        attempts: MAX_SAMPLING_ATTEMPTS as usize,
    })
}

/// Generates the training and test trajectory sets.
///
/// Train slots use trajectory indices `0..n_train`, test slots
/// `n_train..n_train + n_test`, so every slot owns independent streams
/// and the result is identical no matter how many workers run it.
pub fn generate_corpus(
    master_seed: u64,
    n_train: usize,
    n_test: usize,
    steps: usize,
    dt: f64,
    ranges: &InitRanges,
    policy_cfg: &InputPolicyConfig,
    consts: &PlantConstants,
) -> Result<(Vec<Trajectory>, Vec<Trajectory>)> {
    let gen = |index: usize| {
        generate_trajectory(
            master_seed,
            index as u64,
            steps,
            dt,
            ranges,
            policy_cfg,
            consts,
        )
    };
    let train: Vec<Trajectory> = (0..n_train)
        .into_par_iter()
        .map(gen)
        .collect::<Result<_>>()?;
    let test: Vec<Trajectory> = (n_train..n_train + n_test)
        .into_par_iter()
        .map(gen)
        .collect::<Result<_>>()?;
    Ok((train, test))
}

/// What the regression targets mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    /// Forward-difference estimate of the full state derivative.
    StateDerivative,
    /// Forward difference minus the ablated model's derivative.
    Residual,
}

impl TargetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TargetKind::StateDerivative => "state_derivative",
            TargetKind::Residual => "residual",
        }
    }
}

/// Column statistics used to standardize features and targets, plus the
/// per-state standard deviation of the raw training states used by the
/// forecast error metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub feature_mean: [f64; FEATURE_DIM],
    pub feature_std: [f64; FEATURE_DIM],
    pub target_mean: [f64; STATE_DIM],
    pub target_std: [f64; STATE_DIM],
    pub state_std: [f64; STATE_DIM],
}

impl NormStats {
    pub fn normalize_feature(&self, raw: &[f64; FEATURE_DIM]) -> [f64; FEATURE_DIM] {
        std::array::from_fn(|i| (raw[i] - self.feature_mean[i]) / self.feature_std[i])
    }

    pub fn denormalize_target(&self, normalized: &[f64; STATE_DIM]) -> [f64; STATE_DIM] {
        std::array::from_fn(|i| self.target_mean[i] + self.target_std[i] * normalized[i])
    }

    pub fn normalize_target(&self, raw: &[f64; STATE_DIM]) -> [f64; STATE_DIM] {
        std::array::from_fn(|i| (raw[i] - self.target_mean[i]) / self.target_std[i])
    }
}

/// Identity statistics: normalization becomes a no-op. Used by tests and
/// by predictors built without a training corpus.
pub fn identity_norm_stats() -> NormStats {
    NormStats {
        feature_mean: [0.0; FEATURE_DIM],
        feature_std: [1.0; FEATURE_DIM],
        target_mean: [0.0; STATE_DIM],
        target_std: [1.0; STATE_DIM],
        state_std: [1.0; STATE_DIM],
    }
}

/// Supervised pairs assembled from trajectories: feature = (x_k || u_k),
/// target = forward difference (optionally minus the ablated derivative).
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionDataset {
    pub features: Vec<[f64; FEATURE_DIM]>,
    pub targets: Vec<[f64; STATE_DIM]>,
    pub target_kind: TargetKind,
    pub norm: NormStats,
}

/// Columns whose spread collapses to (near) zero are given unit scale so
/// standardization stays a bijection; a constant column normalizes to
/// zero and denormalizes back to its mean.
const STD_FLOOR: f64 = 1e-12;

fn column_stats<const N: usize>(rows: &[[f64; N]]) -> ([f64; N], [f64; N]) {
    let n = rows.len() as f64;
    let mut mean = [0.0; N];
    for row in rows {
        for i in 0..N {
            mean[i] += row[i];
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut var = [0.0; N];
    for row in rows {
        for i in 0..N {
            let d = row[i] - mean[i];
            var[i] += d * d;
        }
    }
    let mut std = [0.0; N];
    for i in 0..N {
        std[i] = (var[i] / n).sqrt();
        if std[i] < STD_FLOOR {
            std[i] = 1.0;
        }
    }
    (mean, std)
}

/// Builds the regression dataset from a trajectory set.
///
/// All trajectories must share the same dt. Pairs are assembled in
/// trajectory order, then per-column statistics are computed over the
/// full set.
pub fn build_dataset(
    trajectories: &[Trajectory],
    target_kind: TargetKind,
    consts: &PlantConstants,
) -> Result<RegressionDataset> {
    let mut features = Vec::new();
    let mut targets = Vec::new();
    for traj in trajectories {
        let dt = traj.dt;
        for k in 0..traj.len_steps() {
            let x = traj.states[k].to_array();
            let u = traj.inputs[k].to_array();
            let mut feature = [0.0; FEATURE_DIM];
            feature[..STATE_DIM].copy_from_slice(&x);
            feature[STATE_DIM..].copy_from_slice(&u);

            let next = traj.states[k + 1].to_array();
            let mut target = [0.0; STATE_DIM];
            for i in 0..STATE_DIM {
                target[i] = (next[i] - x[i]) / dt;
            }
            if target_kind == TargetKind::Residual {
                let ablated = plant::derivative(
                    &traj.states[k],
                    &traj.inputs[k],
                    consts,
                    PlantMode::Ablated,
                )?;
                for i in 0..STATE_DIM {
                    target[i] -= ablated.0[i];
                }
            }
            features.push(feature);
            targets.push(target);
        }
    }

    let (feature_mean, feature_std) = column_stats(&features);
    let (target_mean, target_std) = column_stats(&targets);

    let all_states: Vec<[f64; STATE_DIM]> = trajectories
        .iter()
        .flat_map(|t| t.states.iter().map(|s| s.to_array()))
        .collect();
    let (_, state_std) = column_stats(&all_states);

    Ok(RegressionDataset {
        features,
        targets,
        target_kind,
        norm: NormStats {
            feature_mean,
            feature_std,
            target_mean,
            target_std,
            state_std,
        },
    })
}

pub const DATASET_HEADER: &str =
    "f1,f2,f3,f4,f5,f6,f7,f8,f9,f10,f11,f12,f13,t1,t2,t3,t4,t5,t6,t7,t8";

/// Sidecar document for a dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    #[serde(flatten)]
    pub norm: NormStats,
    pub target_kind: TargetKind,
}

impl RegressionDataset {
    /// Writes the pairs as CSV and the statistics as a JSON sidecar next
    /// to it (same path with an extra `.norm.json` suffix).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "{}", DATASET_HEADER)?;
        for (f, t) in self.features.iter().zip(&self.targets) {
            let mut first = true;
            for v in f.iter().chain(t.iter()) {
                if first {
                    write!(w, "{}", v)?;
                    first = false;
                } else {
                    write!(w, ",{}", v)?;
                }
            }
            writeln!(w)?;
        }
        w.flush()?;

        let sidecar = DatasetSidecar {
            norm: self.norm.clone(),
            target_kind: self.target_kind,
        };
        let json = serde_json::to_string_pretty(&sidecar)?;
        std::fs::write(sidecar_path(path), json)?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<RegressionDataset> {
        let sidecar: DatasetSidecar =
            serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut lines = reader.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        if header != DATASET_HEADER {
            return Err(Error::Malformed {
                what: "dataset CSV",
                detail: format!("unexpected header {header:?}"),
            });
        }
        let mut features = Vec::new();
        let mut targets = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<f64> = line
                .split(',')
                .map(|s| {
                    s.parse::<f64>().map_err(|e| Error::Malformed {
                        what: "dataset CSV",
                        detail: format!("line {}: {e}", lineno + 2),
                    })
                })
                .collect::<Result<_>>()?;
            if fields.len() != FEATURE_DIM + STATE_DIM {
                return Err(Error::Malformed {
                    what: "dataset CSV",
                    detail: format!("line {}: {} fields", lineno + 2, fields.len()),
                });
            }
            features.push(fields[..FEATURE_DIM].try_into().unwrap());
            targets.push(fields[FEATURE_DIM..].try_into().unwrap());
        }
        Ok(RegressionDataset {
            features,
            targets,
            target_kind: sidecar.target_kind,
            norm: sidecar.norm,
        })
    }
}

pub fn sidecar_path(dataset_path: &Path) -> std::path::PathBuf {
    let mut os = dataset_path.as_os_str().to_owned();
    os.push(".norm.json");
    std::path::PathBuf::from(os)
}
