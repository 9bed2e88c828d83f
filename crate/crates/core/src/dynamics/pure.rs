//! Branch-vector integration of the factored dynamics.
//!
//! Along the exact flow every block stays a rank-one projector
//! R_kl^d = |φ_k^d⟩⟨φ_l^d|, so the block system lifts to one vector equation
//! per branch and detector:
//!
//! ```text
//! ∂t φ_k = −i H₀ φ_k + ζ ( P̄·x φ_k − X̄·p φ_k − (P̄⟨x⟩_k − X̄⟨p⟩_k) φ_k )
//! ```
//!
//! with the weight-averaged quadratures X̄ = Σ_m w_m ⟨x⟩_m and
//! P̄ = Σ_m w_m ⟨p⟩_m. The pumping rates reduce to products of quadrature
//! expectations, T_km = 2ζ⟨x⟩_k⟨p⟩_m. This engine is what ensembles run on;
//! [`super::factored`] is the block-form reference it is tested against.
//! Pure dephasing breaks the rank-one structure, so scenarios with a
//! dephasing rate must use the block path.

use ndarray::Array1;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::scenario::Scenario;

use super::factored::FactoredState;
use super::{clamp_weights, local_ops, LocalOps};

#[derive(Clone, Debug)]
pub struct BranchState {
    pub time: f64,
    pub weights: Vec<f64>,
    pub local_weights: Vec<Vec<f64>>,
    /// Normalized branch vectors φ_k^d, indexed `[detector][outcome]`.
    phis: Vec<Vec<Array1<Complex64>>>,
}

impl BranchState {
    pub fn n_outcomes(&self) -> usize {
        self.weights.len()
    }

    pub fn n_detectors(&self) -> usize {
        self.phis.len()
    }

    pub fn phi(&self, d: usize, k: usize) -> &Array1<Complex64> {
        &self.phis[d][k]
    }

    /// Materializes the equivalent block-form state.
    pub fn to_factored(&self) -> FactoredState {
        FactoredState::from_branch_vectors(
            self.time,
            self.weights.clone(),
            self.local_weights.clone(),
            &self.phis,
        )
    }

    pub fn winner(&self, epsilon: f64) -> Option<usize> {
        self.weights.iter().position(|&w| w >= 1.0 - epsilon)
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
            && self
                .phis
                .iter()
                .flatten()
                .all(|phi| phi.iter().all(|z| z.re.is_finite() && z.im.is_finite()))
    }
}

#[derive(Clone)]
struct BranchDeriv {
    d_weights: Vec<f64>,
    d_local: Vec<Vec<f64>>,
    d_phis: Vec<Vec<Array1<Complex64>>>,
}

impl BranchDeriv {
    fn axpy(&mut self, c: f64, other: &BranchDeriv) {
        for (a, b) in self.d_weights.iter_mut().zip(&other.d_weights) {
            *a += c * b;
        }
        for (al, bl) in self.d_local.iter_mut().zip(&other.d_local) {
            for (a, b) in al.iter_mut().zip(bl) {
                *a += c * b;
            }
        }
        let cc = Complex64::new(c, 0.0);
        for (ad, bd) in self.d_phis.iter_mut().zip(&other.d_phis) {
            for (a, b) in ad.iter_mut().zip(bd) {
                a.zip_mut_with(b, |x, &y| *x += cc * y);
            }
        }
    }

    fn scale(&mut self, c: f64) {
        for a in self.d_weights.iter_mut() {
            *a *= c;
        }
        for al in self.d_local.iter_mut() {
            for a in al.iter_mut() {
                *a *= c;
            }
        }
        let cc = Complex64::new(c, 0.0);
        for ad in self.d_phis.iter_mut() {
            for a in ad.iter_mut() {
                a.mapv_inplace(|x| cc * x);
            }
        }
    }
}

/// Quadrature expectations of every branch at one detector.
struct Quadratures {
    ex: Vec<f64>,
    ep: Vec<f64>,
}

pub struct TrajectoryEngine {
    ops: Vec<LocalOps>,
    zeta: f64,
    dt: f64,
}

impl TrajectoryEngine {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        if scenario.detectors.iter().any(|d| d.dephasing_rate > 0.0) {
            return Err(Error::Unsupported(
                "the branch-vector engine requires zero dephasing; use the block integrator".into(),
            ));
        }
        Ok(Self {
            ops: local_ops(scenario)?,
            zeta: scenario.zeta,
            dt: scenario.dt,
        })
    }

    /// Initial condition matching [`super::factored::build_initial`].
    pub fn initial(&self, scenario: &Scenario) -> Result<BranchState> {
        scenario.validate()?;
        let k = scenario.n_outcomes();
        let mut phis = Vec::with_capacity(scenario.n_detectors());
        for (d, det) in scenario.detectors.iter().enumerate() {
            let basis = det.basis()?;
            phis.push(
                (0..k)
                    .map(|outcome| {
                        crate::fock::coherent_state(
                            basis,
                            det.branch_alpha(scenario.activation[outcome][d]),
                        )
                    })
                    .collect(),
            );
        }
        Ok(BranchState {
            time: 0.0,
            weights: scenario.initial_weights(),
            local_weights: vec![vec![1.0; k]; scenario.n_detectors()],
            phis,
        })
    }

    fn quadratures(&self, d: usize, phis: &[Array1<Complex64>]) -> Quadratures {
        let ex = phis
            .iter()
            .map(|phi| self.ops[d].x.expectation(phi).re)
            .collect();
        let ep = phis
            .iter()
            .map(|phi| self.ops[d].p.expectation(phi).re)
            .collect();
        Quadratures { ex, ep }
    }

    fn rhs(&self, state: &BranchState) -> BranchDeriv {
        let k = state.n_outcomes();
        let nd = state.n_detectors();
        let zeta = self.zeta;
        let mut d_weights = vec![0.0; k];
        let mut d_local = vec![vec![0.0; k]; nd];
        let mut d_phis = Vec::with_capacity(nd);

        for d in 0..nd {
            let LocalOps { x, p, h0 } = &self.ops[d];
            let quads = self.quadratures(d, &state.phis[d]);
            let xbar: f64 = (0..k).map(|m| state.weights[m] * quads.ex[m]).sum();
            let pbar: f64 = (0..k).map(|m| state.weights[m] * quads.ep[m]).sum();

            let mut per_detector = Vec::with_capacity(k);
            for a in 0..k {
                let phi = &state.phis[d][a];
                let xphi = x.apply(phi);
                let pphi = p.apply(phi);
                let mut dphi = h0.apply(phi).mapv(|z| z * Complex64::new(0.0, -1.0));
                if zeta != 0.0 {
                    let drift = pbar * quads.ex[a] - xbar * quads.ep[a];
                    for ((dv, &xv), (&pv, &ph)) in dphi
                        .iter_mut()
                        .zip(xphi.iter())
                        .zip(pphi.iter().zip(phi.iter()))
                    {
                        *dv += Complex64::new(zeta, 0.0)
                            * (Complex64::new(pbar, 0.0) * xv
                                - Complex64::new(xbar, 0.0) * pv
                                - Complex64::new(drift, 0.0) * ph);
                    }
                    d_local[d][a] =
                        state.local_weights[d][a] * 2.0 * zeta * (quads.ex[a] * pbar - quads.ep[a] * xbar);
                }
                per_detector.push(dphi);
            }
            d_phis.push(per_detector);

            if zeta != 0.0 {
                // pairwise antisymmetric pumping keeps Σw exactly constant
                for a in 0..k {
                    for b in (a + 1)..k {
                        let stake = state.weights[a] * state.weights[b];
                        if stake == 0.0 {
                            continue;
                        }
                        let asym =
                            2.0 * zeta * (quads.ex[a] * quads.ep[b] - quads.ex[b] * quads.ep[a]);
                        d_weights[a] += stake * asym;
                        d_weights[b] -= stake * asym;
                    }
                }
            }
        }

        BranchDeriv {
            d_weights,
            d_local,
            d_phis,
        }
    }

    fn apply_scaled(&self, state: &BranchState, deriv: &BranchDeriv, h: f64) -> BranchState {
        let hc = Complex64::new(h, 0.0);
        BranchState {
            time: state.time,
            weights: state
                .weights
                .iter()
                .zip(&deriv.d_weights)
                .map(|(w, dw)| w + h * dw)
                .collect(),
            local_weights: state
                .local_weights
                .iter()
                .zip(&deriv.d_local)
                .map(|(lw, dl)| lw.iter().zip(dl).map(|(w, dw)| w + h * dw).collect())
                .collect(),
            phis: state
                .phis
                .iter()
                .zip(&deriv.d_phis)
                .map(|(pd, dd)| {
                    pd.iter()
                        .zip(dd)
                        .map(|(phi, dphi)| {
                            let mut out = phi.clone();
                            out.zip_mut_with(dphi, |a, &b| *a += hc * b);
                            out
                        })
                        .collect()
                })
                .collect(),
        }
    }

    /// One RK4 step at the scenario dt; branch vectors are renormalized
    /// afterwards with the norm deficit folded into the local weights.
    pub fn step(&self, state: &BranchState) -> Result<BranchState> {
        let dt = self.dt;
        let k1 = self.rhs(state);
        let s2 = self.apply_scaled(state, &k1, dt / 2.0);
        let k2 = self.rhs(&s2);
        let s3 = self.apply_scaled(state, &k2, dt / 2.0);
        let k3 = self.rhs(&s3);
        let s4 = self.apply_scaled(state, &k3, dt);
        let k4 = self.rhs(&s4);

        let mut combined = k1;
        combined.scale(1.0 / 6.0);
        combined.axpy(2.0 / 6.0, &k2);
        combined.axpy(2.0 / 6.0, &k3);
        combined.axpy(1.0 / 6.0, &k4);

        let mut next = self.apply_scaled(state, &combined, dt);
        next.time = state.time + dt;
        if !next.is_finite() {
            return Err(Error::Blowup { time: state.time });
        }
        for d in 0..next.n_detectors() {
            for a in 0..next.n_outcomes() {
                let n2: f64 = next.phis[d][a].iter().map(|z| z.norm_sqr()).sum();
                if !(n2.is_finite() && n2 > 0.25) {
                    return Err(Error::Blowup { time: state.time });
                }
                next.local_weights[d][a] *= n2;
                let inv = 1.0 / n2.sqrt();
                next.phis[d][a].mapv_inplace(|z| z * inv);
            }
        }
        clamp_weights(&mut next.weights);
        Ok(next)
    }

    /// Σ_d (T_km − T_mk) for every pair k < m, in lexicographic pair order.
    pub fn pair_asymmetries(&self, state: &BranchState) -> Vec<f64> {
        let k = state.n_outcomes();
        let mut out = vec![0.0; k * (k - 1) / 2];
        for d in 0..state.n_detectors() {
            let quads = self.quadratures(d, &state.phis[d]);
            let mut idx = 0;
            for a in 0..k {
                for b in (a + 1)..k {
                    out[idx] +=
                        2.0 * self.zeta * (quads.ex[a] * quads.ep[b] - quads.ex[b] * quads.ep[a]);
                    idx += 1;
                }
            }
        }
        out
    }

    /// Lexicographic (k, m) pair order used by [`Self::pair_asymmetries`].
    pub fn pair_order(n_outcomes: usize) -> Vec<(usize, usize)> {
        let mut pairs = Vec::with_capacity(n_outcomes * (n_outcomes - 1) / 2);
        for a in 0..n_outcomes {
            for b in (a + 1)..n_outcomes {
                pairs.push((a, b));
            }
        }
        pairs
    }
}
