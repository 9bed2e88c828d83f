//! Nonlinear collapse dynamics, integrated two ways.
//!
//! [`full`] integrates the complete density matrix on the spin ⊗ detectors
//! product space; it is exact but only affordable for tiny configurations,
//! which makes it the oracle. [`factored`] integrates the per-detector block
//! system with explicit weight pumping, and [`pure`] is an equivalent
//! branch-vector engine used for ensembles (each block stays a rank-one
//! projector along the exact flow, so the blocks never need to be formed).

use crate::error::Result;
use crate::fock;
use crate::operator::Operator;
use crate::scenario::{DetectorSpec, Scenario};

pub mod factored;
pub mod full;
pub mod pure;

pub use factored::{
    build_initial, coupling_tensor, detect_collapse, embed, factored_rhs, global_pump_rates,
    local_pump_rate, oneway_rate, step_factored, FactoredEngine, FactoredState,
};
pub use full::{effective_hamiltonian, full_rhs, step_full, FullSpace, JointState};
pub use pure::{BranchState, TrajectoryEngine};

/// Weights below this are clamped to zero and the branch drops out of the
/// game; the pumping equations are multiplicative and never reach exact zero
/// on their own.
pub const WEIGHT_CLAMP: f64 = 1e-12;

/// Per-detector operators on the detector's own truncated mode.
#[derive(Clone, Debug)]
pub struct LocalOps {
    pub x: Operator,
    pub p: Operator,
    pub h0: Operator,
}

impl LocalOps {
    pub fn build(det: &DetectorSpec) -> Result<Self> {
        let basis = det.basis()?;
        Ok(Self {
            x: fock::position_operator(basis),
            p: fock::momentum_operator(basis),
            h0: det.h0()?,
        })
    }
}

pub(crate) fn local_ops(scenario: &Scenario) -> Result<Vec<LocalOps>> {
    scenario.detectors.iter().map(LocalOps::build).collect()
}

/// Applies the zero clamp to a weight vector in place. Clamped residue is
/// handed to the largest weight so the total is untouched.
pub(crate) fn clamp_weights(weights: &mut [f64]) {
    let mut residue = 0.0;
    for w in weights.iter_mut() {
        if *w < WEIGHT_CLAMP {
            residue += *w;
            *w = 0.0;
        }
    }
    if residue != 0.0 {
        if let Some(max) = weights
            .iter_mut()
            .max_by(|a, b| a.partial_cmp(b).expect("weights are finite"))
        {
            *max += residue;
        }
    }
}
