//! Derivative estimators: the physics-based model, the data-driven
//! network, and the hybrid that adds a learned corrective source term to
//! the misspecified physics.

use serde::{Deserialize, Serialize};

use crate::datagen::{TargetKind, FEATURE_DIM};
use crate::error::{Error, Result};
use crate::nn::{self, MlpParameters, ModelFile};
use crate::plant::{
    self, CellState, ControlInput, PlantConstants, PlantMode, StateDerivative, STATE_DIM,
};

/// Anything that estimates the state derivative from (state, input).
pub trait DerivativeModel: Sync {
    fn predict_derivative(
        &self,
        state: &CellState,
        input: &ControlInput,
    ) -> Result<StateDerivative>;
}

/// The model grid evaluated in the comparison experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelType {
    Pbm,
    DdmDense,
    DdmSparse,
    CostaDense,
    CostaSparse,
}

impl ModelType {
    pub const NETWORK_TYPES: [ModelType; 4] = [
        ModelType::DdmDense,
        ModelType::DdmSparse,
        ModelType::CostaDense,
        ModelType::CostaSparse,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelType::Pbm => "pbm",
            ModelType::DdmDense => "ddm_dense",
            ModelType::DdmSparse => "ddm_sparse",
            ModelType::CostaDense => "costa_dense",
            ModelType::CostaSparse => "costa_sparse",
        }
    }

    pub fn parse(s: &str) -> Option<ModelType> {
        match s {
            "pbm" => Some(ModelType::Pbm),
            "ddm_dense" => Some(ModelType::DdmDense),
            "ddm_sparse" => Some(ModelType::DdmSparse),
            "costa_dense" => Some(ModelType::CostaDense),
            "costa_sparse" => Some(ModelType::CostaSparse),
            _ => None,
        }
    }

    pub fn is_costa(self) -> bool {
        matches!(self, ModelType::CostaDense | ModelType::CostaSparse)
    }

    pub fn is_sparse(self) -> bool {
        matches!(self, ModelType::DdmSparse | ModelType::CostaSparse)
    }

    /// Target kind the type's network is trained on.
    pub fn target_kind(self) -> Option<TargetKind> {
        match self {
            ModelType::Pbm => None,
            ModelType::DdmDense | ModelType::DdmSparse => Some(TargetKind::StateDerivative),
            ModelType::CostaDense | ModelType::CostaSparse => Some(TargetKind::Residual),
        }
    }
}

impl std::fmt::Display for ModelType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Tagged union over the three estimator families.
pub enum Predictor {
    /// The ablated physics alone.
    Pbm { consts: PlantConstants },
    /// A network mapping (state, input) directly to the derivative.
    Ddm { net: MlpParameters },
    /// Ablated physics plus a network-estimated corrective term.
    Costa {
        consts: PlantConstants,
        net: MlpParameters,
    },
}

impl Predictor {
    pub fn pbm(consts: PlantConstants) -> Self {
        Predictor::Pbm { consts }
    }

    pub fn ddm(net: MlpParameters) -> Result<Self> {
        if net.target_kind != TargetKind::StateDerivative {
            return Err(Error::TargetKindMismatch {
                kind: "ddm",
                expected: TargetKind::StateDerivative.as_str(),
                actual: net.target_kind.as_str(),
            });
        }
        Ok(Predictor::Ddm { net })
    }

    pub fn costa(consts: PlantConstants, net: MlpParameters) -> Result<Self> {
        if net.target_kind != TargetKind::Residual {
            return Err(Error::TargetKindMismatch {
                kind: "costa",
                expected: TargetKind::Residual.as_str(),
                actual: net.target_kind.as_str(),
            });
        }
        Ok(Predictor::Costa { consts, net })
    }

    /// Builds the predictor a model file describes; the target kind in
    /// the file decides whether the network is a direct estimator or a
    /// corrective term on top of the ablated physics.
    pub fn from_model_file(file: ModelFile, consts: &PlantConstants) -> Result<Self> {
        let params = file.into_params();
        match params.target_kind {
            TargetKind::StateDerivative => Predictor::ddm(params),
            TargetKind::Residual => Predictor::costa(*consts, params),
        }
    }
}

/// Network inference on raw physical units: standardize the feature,
/// evaluate, undo the target standardization.
fn net_derivative(
    net: &MlpParameters,
    state: &CellState,
    input: &ControlInput,
) -> Result<[f64; STATE_DIM]> {
    let mut raw = [0.0; FEATURE_DIM];
    raw[..STATE_DIM].copy_from_slice(&state.to_array());
    raw[STATE_DIM..].copy_from_slice(&input.to_array());
    let feature = net.norm.normalize_feature(&raw);
    let out = nn::forward(net, &feature)?;
    if out.len() != STATE_DIM {
        return Err(Error::ShapeMismatch {
            context: "network output",
            expected: STATE_DIM,
            actual: out.len(),
        });
    }
    let denorm = net.norm.denormalize_target(&out.try_into().unwrap());
    for (i, v) in denorm.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFiniteNetworkOutput { index: i });
        }
    }
    Ok(denorm)
}

impl DerivativeModel for Predictor {
    fn predict_derivative(
        &self,
        state: &CellState,
        input: &ControlInput,
    ) -> Result<StateDerivative> {
        match self {
            Predictor::Pbm { consts } => {
                plant::derivative(state, input, consts, PlantMode::Ablated)
            }
            Predictor::Ddm { net } => Ok(StateDerivative(net_derivative(net, state, input)?)),
            Predictor::Costa { consts, net } => {
                let base = plant::derivative(state, input, consts, PlantMode::Ablated)?;
                let correction = net_derivative(net, state, input)?;
                let mut out = base.0;
                for i in 0..STATE_DIM {
                    out[i] += correction[i];
                }
                Ok(StateDerivative(out))
            }
        }
    }
}

/// The ground-truth right-hand side as an estimator.
pub struct TruePlant(pub PlantConstants);

impl DerivativeModel for TruePlant {
    fn predict_derivative(
        &self,
        state: &CellState,
        input: &ControlInput,
    ) -> Result<StateDerivative> {
        plant::derivative(state, input, &self.0, PlantMode::Full)
    }
}

/// The hybrid with the exact analytic residual in place of a trained
/// network. By construction its output equals the full plant derivative;
/// the comparison experiment uses it as the no-learning-error reference.
pub struct OracleCorrected(pub PlantConstants);

impl DerivativeModel for OracleCorrected {
    fn predict_derivative(
        &self,
        state: &CellState,
        input: &ControlInput,
    ) -> Result<StateDerivative> {
        let base = plant::derivative(state, input, &self.0, PlantMode::Ablated)?;
        let correction = plant::residual_oracle(state, input, &self.0)?;
        let mut out = base.0;
        for i in 0..STATE_DIM {
            out[i] += correction.0[i];
        }
        Ok(StateDerivative(out))
    }
}
