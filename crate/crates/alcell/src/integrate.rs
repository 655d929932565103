//! Fixed-step time integration.
//!
//! Ground truth is generated with classical fourth-order Runge-Kutta;
//! model rollouts use forward Euler. Inputs are zero-order held across
//! each step: all four RK4 stages of step k see the input recorded at k.

use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::plant::{
    self, CellState, ControlInput, PlantConstants, PlantMode, StateDerivative, INPUT_DIM,
    STATE_DIM,
};

/// Supplies the control input applied at a given step.
///
/// Implementations must be deterministic in (step, state): `simulate`
/// relies on this for reproducibility.
pub trait InputPolicy {
    fn input_at(&self, step: usize, state: &CellState) -> ControlInput;
}

/// Fixed input at every step.
pub struct ConstantPolicy(pub ControlInput);

impl InputPolicy for ConstantPolicy {
    fn input_at(&self, _step: usize, _state: &CellState) -> ControlInput {
        self.0
    }
}

/// One classical RK4 step on a raw state vector. Used by the typed
/// wrapper below and directly by convergence tests on scalar problems.
pub fn rk4_step_raw<const N: usize>(
    f: impl Fn(&[f64; N]) -> Result<[f64; N]>,
    y: &[f64; N],
    dt: f64,
) -> Result<[f64; N]> {
    let add = |a: &[f64; N], b: &[f64; N], s: f64| {
        let mut out = *a;
        for i in 0..N {
            out[i] += s * b[i];
        }
        out
    };
    let k1 = f(y)?;
    let k2 = f(&add(y, &k1, dt / 2.0))?;
    let k3 = f(&add(y, &k2, dt / 2.0))?;
    let k4 = f(&add(y, &k3, dt))?;
    let mut out = *y;
    for i in 0..N {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(out)
}

/// One RK4 step of the cell state under a frozen input.
pub fn rk4_step(
    f: impl Fn(&CellState, &ControlInput) -> Result<StateDerivative>,
    state: &CellState,
    input: &ControlInput,
    dt: f64,
) -> Result<CellState> {
    let raw = rk4_step_raw(
        |x: &[f64; STATE_DIM]| f(&CellState::from_array(*x), input).map(|d| d.0),
        &state.to_array(),
        dt,
    )?;
    Ok(CellState::from_array(raw))
}

/// One forward-Euler step: state + derivative * dt.
pub fn euler_step(deriv: &StateDerivative, state: &CellState, dt: f64) -> CellState {
    let mut x = state.to_array();
    for i in 0..STATE_DIM {
        x[i] += deriv.0[i] * dt;
    }
    CellState::from_array(x)
}

/// A simulated time series: states, the inputs applied at each step, and
/// the composition liquidus at each visited state.
///
/// `states`, `inputs` and `liquidus` all have length steps + 1; the input
/// at the final index is recorded for completeness but never applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub dt: f64,
    pub states: Vec<CellState>,
    pub inputs: Vec<ControlInput>,
    pub liquidus: Vec<f64>,
}

impl Trajectory {
    pub fn len_steps(&self) -> usize {
        self.states.len() - 1
    }
}

/// Rolls the plant forward `steps` RK4 steps from `x0`.
///
/// The composition liquidus is recorded at every visited state regardless
/// of `mode`, so ablated runs still carry the ground-truth g1 alongside.
/// A non-finite state or derivative aborts with the offending step index;
/// the true plant is not supposed to blow up, so this is an error rather
/// than data.
pub fn simulate(
    x0: &CellState,
    policy: &impl InputPolicy,
    steps: usize,
    dt: f64,
    consts: &PlantConstants,
    mode: PlantMode,
) -> Result<Trajectory> {
    let mut states = Vec::with_capacity(steps + 1);
    let mut inputs = Vec::with_capacity(steps + 1);
    let mut liquidus = Vec::with_capacity(steps + 1);
    let mut x = *x0;

    for step in 0..=steps {
        let (c2, c3) = mass_ratios_at(&x, step)?;
        liquidus.push(plant::liquidus_temperature(c2, c3));
        let u = policy.input_at(step, &x);
        states.push(x);
        inputs.push(u);
        if step == steps {
            break;
        }
        x = rk4_step(
            |s, u| plant::derivative(s, u, consts, mode),
            &x,
            &u,
            dt,
        )
        .map_err(|e| Error::SimulationDiverged {
            step,
            source: Box::new(e),
        })?;
        if !x.is_finite() {
            let component = x
                .to_array()
                .iter()
                .position(|v| !v.is_finite())
                .unwrap_or(0);
            return Err(Error::SimulationDiverged {
                step,
                source: Box::new(Error::NonFiniteDerivative {
                    index: component + 1,
                }),
            });
        }
    }

    Ok(Trajectory {
        dt,
        states,
        inputs,
        liquidus,
    })
}

fn mass_ratios_at(state: &CellState, step: usize) -> Result<(f64, f64)> {
    plant::mass_ratios(state).map_err(|e| Error::SimulationDiverged {
        step,
        source: Box::new(e),
    })
}

pub const TRAJECTORY_HEADER: &str = "t,x1,x2,x3,x4,x5,x6,x7,x8,u1,u2,u3,u4,u5,g1";

impl Trajectory {
    /// Writes the trajectory as CSV with full-precision decimal floats.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "{}", TRAJECTORY_HEADER)?;
        for (k, ((state, input), g1)) in self
            .states
            .iter()
            .zip(&self.inputs)
            .zip(&self.liquidus)
            .enumerate()
        {
            let t = k as f64 * self.dt;
            write!(w, "{}", t)?;
            for v in state.to_array() {
                write!(w, ",{}", v)?;
            }
            for v in input.to_array() {
                write!(w, ",{}", v)?;
            }
            writeln!(w, ",{}", g1)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a trajectory written by [`Trajectory::write_csv`].
    pub fn read_csv(path: &Path) -> Result<Trajectory> {
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut lines = reader.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        if header != TRAJECTORY_HEADER {
            return Err(Error::Malformed {
                what: "trajectory CSV",
                detail: format!("unexpected header {header:?}"),
            });
        }
        let mut states = Vec::new();
        let mut inputs = Vec::new();
        let mut liquidus = Vec::new();
        let mut times: Vec<f64> = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<f64> = line
                .split(',')
                .map(|s| {
                    s.parse::<f64>().map_err(|e| Error::Malformed {
                        what: "trajectory CSV",
                        detail: format!("line {}: {e}", lineno + 2),
                    })
                })
                .collect::<Result<_>>()?;
            if fields.len() != 1 + STATE_DIM + INPUT_DIM + 1 {
                return Err(Error::Malformed {
                    what: "trajectory CSV",
                    detail: format!("line {}: {} fields", lineno + 2, fields.len()),
                });
            }
            times.push(fields[0]);
            states.push(CellState::from_array(
                fields[1..1 + STATE_DIM].try_into().unwrap(),
            ));
            inputs.push(ControlInput::from_array(
                fields[1 + STATE_DIM..1 + STATE_DIM + INPUT_DIM]
                    .try_into()
                    .unwrap(),
            ));
            liquidus.push(fields[14]);
        }
        if states.len() < 2 {
            return Err(Error::Malformed {
                what: "trajectory CSV",
                detail: "fewer than two rows".into(),
            });
        }
        let dt = times[1] - times[0];
        Ok(Trajectory {
            dt,
            states,
            inputs,
            liquidus,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_field(_: &CellState, _: &ControlInput) -> Result<StateDerivative> {
        Ok(StateDerivative([0.0; STATE_DIM]))
    }

    fn some_state() -> CellState {
        CellState::from_array([3000.0, 400.0, 1400.0, 13000.0, 10000.0, 970.0, 820.0, 580.0])
    }

    fn some_input() -> ControlInput {
        ControlInput::from_array([0.0, 1.4e4, 0.0, 0.0, 0.05])
    }

    #[test]
    fn rk4_zero_field_keeps_state() {
        let s = some_state();
        let out = rk4_step(zero_field, &s, &some_input(), 10.0).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn rk4_matches_exponential_decay() {
        let f = |y: &[f64; 1]| Ok([-y[0]]);
        let out = rk4_step_raw(f, &[1.0], 0.1).unwrap();
        assert!((out[0] - (-0.1_f64).exp()).abs() <= 1e-7);
    }

    #[test]
    fn rk4_observed_order_is_four() {
        // Richardson estimate on x' = -x over one unit of time.
        let f = |y: &[f64; 1]| Ok([-y[0]]);
        let run = |dt: f64| {
            let mut y = [1.0];
            let n = (1.0 / dt).round() as usize;
            for _ in 0..n {
                y = rk4_step_raw(f, &y, dt).unwrap();
            }
            (y[0] - (-1.0_f64).exp()).abs()
        };
        let e1 = run(0.1);
        let e2 = run(0.05);
        let order = (e1 / e2).log2();
        assert!(
            (3.8..=4.2).contains(&order),
            "observed order {order}, errors {e1} {e2}"
        );
    }

    #[test]
    fn euler_zero_derivative_keeps_state() {
        let s = some_state();
        assert_eq!(euler_step(&StateDerivative([0.0; 8]), &s, 10.0), s);
    }

    #[test]
    fn euler_moves_linearly() {
        let mut d = [0.0; 8];
        d[0] = 1.0;
        let s = some_state();
        let out = euler_step(&StateDerivative(d), &s, 10.0);
        assert_eq!(out.side_ledge, s.side_ledge + 10.0);
        assert_eq!(out.alumina, s.alumina);
    }

    #[test]
    fn euler_matches_rk4_to_second_order() {
        let f = |y: &[f64; 1]| Ok([-y[0]]);
        let dt = 0.01;
        let rk = rk4_step_raw(f, &[1.0], dt).unwrap()[0];
        let euler = 1.0 - dt;
        // One-step difference is the local truncation gap, O(dt^2).
        assert!((rk - euler).abs() < dt * dt);
        assert!((rk - euler).abs() > dt * dt / 100.0);
    }

    #[test]
    fn simulate_zero_steps_returns_initial_state() {
        let consts = PlantConstants::default();
        let traj = simulate(
            &some_state(),
            &ConstantPolicy(some_input()),
            0,
            10.0,
            &consts,
            PlantMode::Full,
        )
        .unwrap();
        assert_eq!(traj.states.len(), 1);
        assert_eq!(traj.states[0], some_state());
        assert_eq!(traj.inputs.len(), 1);
        assert_eq!(traj.liquidus.len(), 1);
    }

    #[test]
    fn sanity_rollout_stays_finite_with_positive_masses() {
        // 5000 steps from a mid-range initial state under constant inputs.
        let consts = PlantConstants::default();
        let traj = simulate(
            &some_state(),
            &ConstantPolicy(some_input()),
            5000,
            10.0,
            &consts,
            PlantMode::Full,
        )
        .unwrap();
        assert_eq!(traj.states.len(), 5001);
        for s in &traj.states {
            assert!(s.is_finite());
            assert!(s.side_ledge > 0.0);
            assert!(s.alumina > 0.0);
            assert!(s.fluoride > 0.0);
            assert!(s.cryolite > 0.0);
        }
    }

    #[test]
    fn simulate_is_deterministic() {
        let consts = PlantConstants::default();
        let run = || {
            simulate(
                &some_state(),
                &ConstantPolicy(some_input()),
                200,
                10.0,
                &consts,
                PlantMode::Full,
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn trajectory_csv_round_trips_bit_exact() {
        let consts = PlantConstants::default();
        let traj = simulate(
            &some_state(),
            &ConstantPolicy(some_input()),
            50,
            10.0,
            &consts,
            PlantMode::Full,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        traj.write_csv(&path).unwrap();
        let back = Trajectory::read_csv(&path).unwrap();
        assert_eq!(traj, back);
    }
}
