//! Dynamics of the aluminum electrolysis cell.
//!
//! The cell is described by eight coupled ODEs over the masses of side
//! ledge, alumina, aluminum fluoride, molten cryolite and produced metal,
//! and the bath, side-ledge and wall temperatures. Five exogenous inputs
//! (two feeds, line current, metal tapping, anode-cathode distance) drive
//! the system.
//!
//! Two variants of the right-hand side are provided. The full model
//! computes the liquidus temperature from the bath composition; the
//! ablated model freezes it at a constant. The componentwise difference
//! between the two is the residual a corrective model has to learn.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STATE_DIM: usize = 8;
pub const INPUT_DIM: usize = 5;

/// Physical state of the cell. Masses in kg, temperatures in deg C.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellState {
    /// Mass of frozen cryolite on the cell wall (x1).
    pub side_ledge: f64,
    /// Mass of dissolved alumina Al2O3 (x2).
    pub alumina: f64,
    /// Mass of aluminum fluoride AlF3 (x3).
    pub fluoride: f64,
    /// Mass of molten cryolite Na3AlF6 (x4).
    pub cryolite: f64,
    /// Mass of produced metal (x5).
    pub metal: f64,
    /// Bath temperature (x6).
    pub bath_temp: f64,
    /// Side-ledge temperature (x7).
    pub ledge_temp: f64,
    /// Wall temperature (x8).
    pub wall_temp: f64,
}

impl CellState {
    pub fn from_array(x: [f64; STATE_DIM]) -> Self {
        CellState {
            side_ledge: x[0],
            alumina: x[1],
            fluoride: x[2],
            cryolite: x[3],
            metal: x[4],
            bath_temp: x[5],
            ledge_temp: x[6],
            wall_temp: x[7],
        }
    }

    pub fn to_array(self) -> [f64; STATE_DIM] {
        [
            self.side_ledge,
            self.alumina,
            self.fluoride,
            self.cryolite,
            self.metal,
            self.bath_temp,
            self.ledge_temp,
            self.wall_temp,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Exogenous inputs. Feeds and tapping in kg/s, current in kA, distance in cm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    /// Alumina feed rate (u1).
    pub alumina_feed: f64,
    /// Line current (u2).
    pub line_current: f64,
    /// Aluminum fluoride feed rate (u3).
    pub fluoride_feed: f64,
    /// Metal tapping rate (u4).
    pub tapping: f64,
    /// Anode-cathode distance (u5).
    pub anode_distance: f64,
}

impl ControlInput {
    pub fn from_array(u: [f64; INPUT_DIM]) -> Self {
        ControlInput {
            alumina_feed: u[0],
            line_current: u[1],
            fluoride_feed: u[2],
            tapping: u[3],
            anode_distance: u[4],
        }
    }

    pub fn to_array(self) -> [f64; INPUT_DIM] {
        [
            self.alumina_feed,
            self.line_current,
            self.fluoride_feed,
            self.tapping,
            self.anode_distance,
        ]
    }
}

/// Simulator coefficients. Each k is a composite of material properties
/// and geometry; only the numeric values matter here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantConstants {
    pub k0: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    pub k5: f64,
    pub k6: f64,
    pub k7: f64,
    pub k8: f64,
    pub k9: f64,
    pub k10: f64,
    pub k11: f64,
    pub k12: f64,
    pub k13: f64,
    pub k14: f64,
    pub k15: f64,
    pub k16: f64,
    pub k17: f64,
    pub k18: f64,
    /// Inverse heat capacity of the liquid bath.
    pub alpha: f64,
    /// Inverse heat capacity of the solid ledge.
    pub beta: f64,
    /// Critical alumina mass ratio below which the anode effect sets in.
    pub critical_alumina_ratio: f64,
    /// Constant liquidus temperature used by the ablated model.
    pub constant_liquidus: f64,
}

impl Default for PlantConstants {
    fn default() -> Self {
        PlantConstants {
            k0: 2e-5,
            k1: 7.5e-4,
            k2: 0.18,
            k3: 1.7e-7,
            k4: 0.036,
            k5: 0.03,
            k6: 4.43e-8,
            k7: 338.0,
            k8: 1.41,
            k9: 17.92,
            k10: 0.00083,
            k11: 0.2,
            k12: 237.5,
            k13: 0.99,
            k14: 0.0077,
            k15: 0.2,
            k16: 35.0,
            k17: 5.8e-7,
            k18: 0.04,
            alpha: 5.66e-4,
            beta: 7.58e-4,
            critical_alumina_ratio: 0.022,
            constant_liquidus: 968.0,
        }
    }
}

/// Whether the liquidus temperature follows the bath composition or is
/// frozen at `PlantConstants::constant_liquidus`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlantMode {
    /// Composition-dependent liquidus; the ground-truth plant.
    Full,
    /// Constant liquidus; the deliberately misspecified model.
    Ablated,
}

/// Intermediate quantities shared by several state derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuxQuantities {
    /// Alumina mass ratio c_x2.
    pub alumina_ratio: f64,
    /// Fluoride mass ratio c_x3.
    pub fluoride_ratio: f64,
    /// Liquidus temperature g1 (deg C).
    pub liquidus: f64,
    /// Electrical conductivity g2.
    pub conductivity: f64,
    /// Anode bubble coverage g3.
    pub bubble_coverage: f64,
    /// Bubble layer thickness g4.
    pub bubble_thickness: f64,
    /// Bubble voltage drop g5.
    pub bubble_voltage: f64,
}

/// Time derivative of the eight state components, in units per second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateDerivative(pub [f64; STATE_DIM]);

impl StateDerivative {
    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Componentwise difference `self - other`.
    pub fn sub(&self, other: &StateDerivative) -> StateDerivative {
        let mut out = [0.0; STATE_DIM];
        for i in 0..STATE_DIM {
            out[i] = self.0[i] - other.0[i];
        }
        StateDerivative(out)
    }
}

/// Mass ratios (c_x2, c_x3) of alumina and fluoride in the bath.
pub fn mass_ratios(state: &CellState) -> Result<(f64, f64)> {
    let total = state.alumina + state.fluoride + state.cryolite;
    if !(total > 0.0) {
        return Err(Error::DegenerateMassTotal(total));
    }
    Ok((state.alumina / total, state.fluoride / total))
}

/// Liquidus temperature of the bath as a function of composition.
pub fn liquidus_temperature(alumina_ratio: f64, fluoride_ratio: f64) -> f64 {
    let c2 = alumina_ratio;
    let c3 = fluoride_ratio;
    991.2 + 112.0 * c3 + 61.0 * c3.powf(1.5) - 3265.5 * c3.powf(2.2)
        - (793.0 * c2) / (-23.0 * c2 * c3 - 17.0 * c3 * c3 + 9.36 * c3 + 1.0)
}

/// Evaluates the auxiliary quantities g1..g5 at a state/input pair.
///
/// In ablated mode g1 is replaced by the constant liquidus while g2..g5
/// keep their full expressions. Returns an error naming the first g_i
/// that comes out non-finite (vanishing denominator or overflow).
pub fn aux_quantities(
    state: &CellState,
    input: &ControlInput,
    consts: &PlantConstants,
    mode: PlantMode,
) -> Result<AuxQuantities> {
    let (c2, c3) = mass_ratios(state)?;
    let u1 = input.alumina_feed;
    let u2 = input.line_current;

    let g1 = match mode {
        PlantMode::Full => liquidus_temperature(c2, c3),
        PlantMode::Ablated => consts.constant_liquidus,
    };
    if !g1.is_finite() {
        return Err(Error::NonFiniteAux { index: 1 });
    }

    let g2 = (2.496 - 2068.4 / (273.0 + state.bath_temp) - 2.07 * c2).exp();
    if !g2.is_finite() {
        return Err(Error::NonFiniteAux { index: 2 });
    }

    let off_crit = c2 - consts.critical_alumina_ratio;
    let g3 = 0.531 + 3.06e-18 * u1 * u1 * u1 - 2.51e-12 * u1 * u1 + 6.96e-7 * u1
        - (14.37 * off_crit - 0.431) / (735.3 * off_crit + 1.0);
    if !g3.is_finite() {
        return Err(Error::NonFiniteAux { index: 3 });
    }

    let g4 = (0.5517 + 3.8168e-6 * u2) / (1.0 + 8.271e-6 * u2);
    if !g4.is_finite() {
        return Err(Error::NonFiniteAux { index: 4 });
    }

    let g5 = 3.8168e-6 * g3 * g4 * u2 / (g2 * (1.0 - g3));
    if !g5.is_finite() {
        return Err(Error::NonFiniteAux { index: 5 });
    }

    Ok(AuxQuantities {
        alumina_ratio: c2,
        fluoride_ratio: c3,
        liquidus: g1,
        conductivity: g2,
        bubble_coverage: g3,
        bubble_thickness: g4,
        bubble_voltage: g5,
    })
}

/// Right-hand side of the cell ODEs.
///
/// Requires side-ledge and cryolite masses to be strictly positive; both
/// appear in denominators. A non-finite component is reported with its
/// 1-based index rather than propagated as infinity.
pub fn derivative(
    state: &CellState,
    input: &ControlInput,
    consts: &PlantConstants,
    mode: PlantMode,
) -> Result<StateDerivative> {
    let aux = aux_quantities(state, input, consts, mode)?;
    let k = consts;
    let x1 = state.side_ledge;
    let x6 = state.bath_temp;
    let x7 = state.ledge_temp;
    let x8 = state.wall_temp;
    let u1 = input.alumina_feed;
    let u2 = input.line_current;
    let u3 = input.fluoride_feed;
    let u4 = input.tapping;
    let u5 = input.anode_distance;
    let g1 = aux.liquidus;
    let g2 = aux.conductivity;
    let g5 = aux.bubble_voltage;
    let mass_total = state.alumina + state.fluoride + state.cryolite;

    // Heat flux driven freezing/melting of the ledge.
    let freeze = k.k1 * (g1 - x7) / (x1 * k.k0);
    let melt = k.k2 * (x6 - g1);

    let dx1 = freeze - melt;
    let dx2 = u1 - k.k3 * u2;
    let dx3 = u3 - k.k4 * u1;
    let dx4 = -freeze + melt + k.k5 * u1;
    let dx5 = k.k6 * u2 - u4;
    let dx6 = k.alpha / mass_total
        * (u2 * g5 + u2 * u2 * u5 / (2620.0 * g2)
            - k.k7 * (x6 - g1) * (x6 - g1)
            + k.k8 * (x6 - g1) * (g1 - x7) / (k.k0 * x1)
            - k.k9 * (x6 - x7) / (k.k10 + k.k11 * k.k0 * x1));
    let dx7 = k.beta / x1
        * (k.k9 * (g1 - x7) / (k.k15 * k.k0 * x1) - k.k12 * (x6 - g1) * (g1 - x7)
            + k.k13 * (g1 - x7) * (g1 - x7) / (k.k0 * x1)
            - (x7 - x8) / (k.k14 + k.k15 * k.k0 * x1));
    let dx8 = k.k17
        * k.k9
        * ((x7 - x8) / (k.k14 + k.k15 * k.k0 * x1) - (x8 - k.k16) / (k.k14 + k.k18));

    let out = [dx1, dx2, dx3, dx4, dx5, dx6, dx7, dx8];
    for (i, v) in out.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFiniteDerivative { index: i + 1 });
        }
    }
    Ok(StateDerivative(out))
}

/// Exact residual between the full and the ablated right-hand side.
///
/// This is the quantity a corrective model is trained to approximate.
/// Components 2, 3, 5 and 8 are identically zero: those equations do not
/// involve the liquidus temperature.
pub fn residual_oracle(
    state: &CellState,
    input: &ControlInput,
    consts: &PlantConstants,
) -> Result<StateDerivative> {
    let full = derivative(state, input, consts, PlantMode::Full)?;
    let ablated = derivative(state, input, consts, PlantMode::Ablated)?;
    Ok(full.sub(&ablated))
}
