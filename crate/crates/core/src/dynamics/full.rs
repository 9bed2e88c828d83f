//! Exact integration of the nonlinear von Neumann equation on the full
//! spin ⊗ detectors space.
//!
//! The state-dependent Hamiltonian is
//!
//! ```text
//! H(ρ) = Σ_d [ H₀ᵈ + iζ (x_d ρ p_d − p_d ρ x_d) ]
//! ```
//!
//! with x_d, p_d acting on detector d's factor and trivially elsewhere. H(ρ)
//! is self-adjoint for Hermitian ρ, so −i[H(ρ), ρ] conserves trace, purity
//! and the spectrum; those conservation laws are what the tests watch.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::operator::{Operator, MAX_DIM};
use crate::scenario::Scenario;

use super::local_ops;

/// Precomputed embeddings of the per-detector operators into the full
/// product space; build once, share across steps and trials.
#[derive(Clone, Debug)]
pub struct FullSpace {
    n_outcomes: usize,
    detector_dims: Vec<usize>,
    dim: usize,
    x_site: Vec<Operator>,
    p_site: Vec<Operator>,
    h0: Operator,
}

impl FullSpace {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        let k = scenario.n_outcomes();
        let detector_dims: Vec<usize> = scenario.detectors.iter().map(|d| d.n_levels).collect();
        let mut dim = k;
        for &n in &detector_dims {
            dim = dim
                .checked_mul(n)
                .ok_or(Error::DimensionTooLarge(usize::MAX))?;
            if dim > MAX_DIM {
                return Err(Error::DimensionTooLarge(dim));
            }
        }
        let ops = local_ops(scenario)?;
        let mut x_site = Vec::with_capacity(ops.len());
        let mut p_site = Vec::with_capacity(ops.len());
        let mut h0 = Operator::zeros(dim);
        for (d, op) in ops.iter().enumerate() {
            x_site.push(embed_site(k, &detector_dims, d, &op.x)?);
            p_site.push(embed_site(k, &detector_dims, d, &op.p)?);
            h0 = h0.add(&embed_site(k, &detector_dims, d, &op.h0)?);
        }
        Ok(Self {
            n_outcomes: k,
            detector_dims,
            dim,
            x_site,
            p_site,
            h0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_outcomes(&self) -> usize {
        self.n_outcomes
    }

    /// Product of all detector dimensions.
    pub fn detector_dim(&self) -> usize {
        self.detector_dims.iter().product()
    }

    pub fn h0(&self) -> &Operator {
        &self.h0
    }

    /// w_k = Tr ⟨k|ρ|k⟩: diagonal sum over detector indices inside spin
    /// sector k.
    pub fn spin_weights(&self, rho: &Operator) -> Vec<f64> {
        let p = self.detector_dim();
        (0..self.n_outcomes)
            .map(|k| (0..p).map(|j| rho.entry(k * p + j, k * p + j).re).sum())
            .collect()
    }

    /// Partial trace over all detectors: the K×K spin-sector matrix.
    pub fn spin_matrix(&self, rho: &Operator) -> Operator {
        let p = self.detector_dim();
        Operator::from_fn(self.n_outcomes, |k, l| {
            (0..p).map(|j| rho.entry(k * p + j, l * p + j)).sum()
        })
        .expect("spin dim is small")
    }
}

/// I_K ⊗ I ⊗ … ⊗ op(at slot d) ⊗ … ⊗ I
fn embed_site(
    n_outcomes: usize,
    detector_dims: &[usize],
    site: usize,
    op: &Operator,
) -> Result<Operator> {
    let mut out = Operator::identity(n_outcomes);
    for (d, &n) in detector_dims.iter().enumerate() {
        out = if d == site {
            out.kron(op)?
        } else {
            out.kron(&Operator::identity(n))?
        };
    }
    Ok(out)
}

/// Full density matrix with its clock.
#[derive(Clone, Debug)]
pub struct JointState {
    pub rho: Operator,
    pub time: f64,
}

impl JointState {
    /// Trace, hermiticity and positivity diagnostics in one bundle.
    pub fn conservation_residuals(&self) -> (f64, f64) {
        ((self.rho.trace().re - 1.0).abs(), self.rho.hermiticity_residual())
    }

    pub fn purity(&self) -> f64 {
        Operator::trace_product(&self.rho, &self.rho).re
    }
}

/// H(ρ) for a prebuilt space; the fast path used by the stepper.
pub fn effective_hamiltonian_in(space: &FullSpace, rho: &Operator, zeta: f64) -> Operator {
    let mut h = space.h0.clone();
    if zeta == 0.0 {
        return h;
    }
    let i_zeta = Complex64::new(0.0, zeta);
    for (x, p) in space.x_site.iter().zip(space.p_site.iter()) {
        // iζ (x ρ p − p ρ x)
        let xrp = x.matmul(rho).matmul(p);
        let prx = p.matmul(rho).matmul(x);
        h.axpy(i_zeta, &xrp.sub(&prx));
    }
    h
}

/// H(ρ) per the scenario; validates the density-matrix dimension.
pub fn effective_hamiltonian(rho: &Operator, scenario: &Scenario) -> Result<Operator> {
    let space = FullSpace::new(scenario)?;
    if rho.dim() != space.dim {
        return Err(Error::DimensionMismatch(format!(
            "rho dim {} does not match configuration-space dim {}",
            rho.dim(),
            space.dim
        )));
    }
    Ok(effective_hamiltonian_in(&space, rho, scenario.zeta))
}

fn rhs_in(space: &FullSpace, rho: &Operator, zeta: f64) -> Operator {
    let h = effective_hamiltonian_in(space, rho, zeta);
    Operator::commutator(&h, rho).scale(Complex64::new(0.0, -1.0))
}

/// −i[H(ρ), ρ]
pub fn full_rhs(state: &JointState, scenario: &Scenario) -> Result<Operator> {
    let space = FullSpace::new(scenario)?;
    if state.rho.dim() != space.dim {
        return Err(Error::DimensionMismatch(format!(
            "rho dim {} does not match configuration-space dim {}",
            state.rho.dim(),
            space.dim
        )));
    }
    Ok(rhs_in(&space, &state.rho, scenario.zeta))
}

/// One classical RK4 step of size `scenario.dt`.
pub fn step_full(state: &JointState, scenario: &Scenario) -> Result<JointState> {
    let space = FullSpace::new(scenario)?;
    step_full_in(&space, state, scenario.zeta, scenario.dt)
}

/// RK4 step against a prebuilt space.
pub fn step_full_in(
    space: &FullSpace,
    state: &JointState,
    zeta: f64,
    dt: f64,
) -> Result<JointState> {
    if dt == 0.0 {
        return Ok(state.clone());
    }
    let half = 0.5 * dt;
    let k1 = rhs_in(space, &state.rho, zeta);

    let mut y = state.rho.clone();
    y.axpy(Complex64::new(half, 0.0), &k1);
    let k2 = rhs_in(space, &y, zeta);

    let mut y = state.rho.clone();
    y.axpy(Complex64::new(half, 0.0), &k2);
    let k3 = rhs_in(space, &y, zeta);

    let mut y = state.rho.clone();
    y.axpy(Complex64::new(dt, 0.0), &k3);
    let k4 = rhs_in(space, &y, zeta);

    let sixth = dt / 6.0;
    let mut rho = state.rho.clone();
    rho.axpy(Complex64::new(sixth, 0.0), &k1);
    rho.axpy(Complex64::new(2.0 * sixth, 0.0), &k2);
    rho.axpy(Complex64::new(2.0 * sixth, 0.0), &k3);
    rho.axpy(Complex64::new(sixth, 0.0), &k4);

    if !rho.is_finite() {
        return Err(Error::Blowup { time: state.time });
    }
    Ok(JointState {
        rho,
        time: state.time + dt,
    })
}
