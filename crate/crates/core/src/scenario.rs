//! Measurement-setup description: outcome amplitudes, detector models and
//! integration parameters.
//!
//! A detector is a single truncated bosonic mode. Its free Hamiltonian is
//!
//! * `λ ≥ 0`:  H₀ = ω a†a + λ (a†a)² — bounded anharmonic motion whose
//!   amplitude-dependent frequency scrambles quadrature phases, and
//! * `λ < 0`:  H₀ = ω a†a + λ (a² + a†²)/2 — a quadrature-squeezing variant;
//!   for λ < −ω the x-quadrature inverts and ⟨x⟩, ⟨p⟩ grow in lockstep, the
//!   runaway regime used as the unfair-game control.
//!
//! Branch states are coherent: an activated detector starts at
//! `alpha_active`, a quiet one at `alpha_quiet`. Weight pumping is driven by
//! products of quadrature expectations, so the quiet amplitude must not be
//! exactly stationary; keep it small but nonzero (the shipped defaults use
//! 0.35 against an active amplitude of 2).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{self, ModeBasis};
use crate::operator::Operator;

/// One detector: mode truncation, free-evolution parameters and the coherent
/// amplitudes encoding its activated / quiet branch states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSpec {
    pub n_levels: usize,
    pub omega: f64,
    /// Anharmonicity λ; negative values select the squeezing variant.
    pub anharmonicity: f64,
    pub alpha_active: Complex64,
    pub alpha_quiet: Complex64,
    /// Optional pure-dephasing rate γ applied to branch-off-diagonal blocks.
    #[serde(default)]
    pub dephasing_rate: f64,
}

impl DetectorSpec {
    pub fn basis(&self) -> Result<ModeBasis> {
        ModeBasis::new(self.n_levels)
    }

    pub fn validate(&self) -> Result<()> {
        self.basis()?;
        if !(self.omega > 0.0) {
            return Err(Error::InvalidScenario(format!(
                "detector omega must be positive, got {}",
                self.omega
            )));
        }
        if !(self.dephasing_rate >= 0.0) {
            return Err(Error::InvalidScenario(format!(
                "dephasing rate must be non-negative, got {}",
                self.dephasing_rate
            )));
        }
        if !self.anharmonicity.is_finite() {
            return Err(Error::InvalidScenario(
                "anharmonicity must be finite".into(),
            ));
        }
        if self.alpha_active == self.alpha_quiet {
            return Err(Error::InvalidScenario(
                "alpha_active must differ from alpha_quiet".into(),
            ));
        }
        Ok(())
    }

    /// Free Hamiltonian on this detector's truncated mode.
    pub fn h0(&self) -> Result<Operator> {
        let basis = self.basis()?;
        let n = fock::number(basis);
        let h = if self.anharmonicity >= 0.0 {
            Operator::from_diag_fn(self.n_levels, |k| {
                let k = k as f64;
                Complex64::new(self.omega * k + self.anharmonicity * k * k, 0.0)
            })
        } else {
            let a = fock::lowering(basis);
            let squeeze = a
                .matmul(&a)
                .add(&a.dagger().matmul(&a.dagger()))
                .scale_re(0.5 * self.anharmonicity);
            n.scale_re(self.omega).add(&squeeze)
        };
        h.hermitian()
    }

    /// Branch state for this detector given whether the outcome activates it.
    pub fn branch_alpha(&self, activated: bool) -> Complex64 {
        if activated {
            self.alpha_active
        } else {
            self.alpha_quiet
        }
    }
}

/// Non-fatal validation findings, reported alongside a valid scenario.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ScenarioWarning {
    /// |α|² is large enough relative to the truncation that coherent-state
    /// tails are visibly clipped.
    CoherentTruncation { detector: usize, activated: bool },
}

impl std::fmt::Display for ScenarioWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScenarioWarning::CoherentTruncation { detector, activated } => write!(
                f,
                "detector {detector}: {} coherent amplitude is large for its truncation (|alpha|^2 > n_levels/4)",
                if *activated { "active" } else { "quiet" }
            ),
        }
    }
}

/// Full measurement setup: amplitudes c_k, detectors, the outcome-to-detector
/// activation table, the nonlinearity strength and integration controls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub amplitudes: Vec<Complex64>,
    pub detectors: Vec<DetectorSpec>,
    /// `activation[k][d]`: does outcome branch k activate detector d?
    pub activation: Vec<Vec<bool>>,
    pub zeta: f64,
    pub dt: f64,
    pub t_max: f64,
    pub collapse_epsilon: f64,
}

impl Scenario {
    pub fn n_outcomes(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn n_detectors(&self) -> usize {
        self.detectors.len()
    }

    /// Born weights |c_k|² of the incoming superposition.
    pub fn initial_weights(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|c| c.norm_sqr()).collect()
    }

    pub fn validate(&self) -> Result<Vec<ScenarioWarning>> {
        let k = self.n_outcomes();
        let d = self.n_detectors();
        if k < 2 {
            return Err(Error::InvalidScenario(format!(
                "need at least 2 outcomes, got {k}"
            )));
        }
        if d < 1 {
            return Err(Error::InvalidScenario("need at least one detector".into()));
        }
        let norm: f64 = self.amplitudes.iter().map(|c| c.norm_sqr()).sum();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidScenario(format!(
                "amplitudes must be normalized: sum |c_k|^2 = {norm:.12}"
            )));
        }
        if self.activation.len() != k {
            return Err(Error::InvalidScenario(format!(
                "activation table has {} rows, expected {k}",
                self.activation.len()
            )));
        }
        for (row_idx, row) in self.activation.iter().enumerate() {
            if row.len() != d {
                return Err(Error::InvalidScenario(format!(
                    "activation row {row_idx} has {} columns, expected {d}",
                    row.len()
                )));
            }
            if !row.iter().any(|&b| b) {
                return Err(Error::InvalidScenario(format!(
                    "outcome {row_idx} activates no detector"
                )));
            }
        }
        for k1 in 0..k {
            for k2 in (k1 + 1)..k {
                let distinguished = (0..d).any(|col| self.activation[k1][col] != self.activation[k2][col]);
                if !distinguished {
                    return Err(Error::InvalidScenario(format!(
                        "outcomes {k1} and {k2} activate identical detector sets"
                    )));
                }
            }
        }
        for det in &self.detectors {
            det.validate()?;
        }
        if !(self.zeta >= 0.0) {
            return Err(Error::InvalidScenario(format!(
                "zeta must be non-negative, got {}",
                self.zeta
            )));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidScenario(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.t_max > 0.0) {
            return Err(Error::InvalidScenario(format!(
                "t_max must be positive, got {}",
                self.t_max
            )));
        }
        if !(self.collapse_epsilon > 0.0 && self.collapse_epsilon <= 1e-3) {
            return Err(Error::InvalidScenario(format!(
                "collapse_epsilon must lie in (0, 1e-3], got {}",
                self.collapse_epsilon
            )));
        }

        let mut warnings = Vec::new();
        for (idx, det) in self.detectors.iter().enumerate() {
            let basis = det.basis()?;
            if !fock::truncation_is_comfortable(basis, det.alpha_active) {
                warnings.push(ScenarioWarning::CoherentTruncation {
                    detector: idx,
                    activated: true,
                });
            }
            if !fock::truncation_is_comfortable(basis, det.alpha_quiet) {
                warnings.push(ScenarioWarning::CoherentTruncation {
                    detector: idx,
                    activated: false,
                });
            }
        }
        Ok(warnings)
    }

    /// Copy of the scenario with every detector's coherent amplitudes rotated
    /// by the given phases: entry d holds (θ_active, θ_quiet) for detector d.
    /// This is how per-trial hidden detail enters an ensemble.
    pub fn with_rotated_alphas(&self, phases: &[(f64, f64)]) -> Scenario {
        assert_eq!(phases.len(), self.n_detectors(), "one phase pair per detector");
        let mut out = self.clone();
        for (det, &(th_a, th_q)) in out.detectors.iter_mut().zip(phases.iter()) {
            det.alpha_active *= Complex64::from_polar(1.0, th_a);
            det.alpha_quiet *= Complex64::from_polar(1.0, th_q);
        }
        out
    }
}
