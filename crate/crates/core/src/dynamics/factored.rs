//! The factored per-detector block system with explicit weight pumping.
//!
//! State: global branch weights w_k, per-detector local weights w_k^d and
//! normalized blocks R_kl^d. The blocks obey
//!
//! ```text
//! ∂t R_kl = −i[H₀, R_kl] + ζ Σ_m w_m ( C_kml − ½ R_kl·Tr(C_kmk + C_lml) )
//! C_kml   = x R_km p R_ml + R_km p R_ml x − p R_km x R_ml − R_km x R_ml p
//! ```
//!
//! per detector, while the weights pump through the one-way rates
//! T_km = 2ζ·Re Tr(x R_km p R_mk):
//!
//! ```text
//! ẇ_k = Σ_m w_k w_m Σ_d (T_km^d − T_mk^d)
//! ```
//!
//! The pair flows are summed antisymmetrically, so Σ_k w_k is conserved to
//! rounding regardless of what the rates do. Diagonal blocks are
//! renormalized to unit trace after every step with the deficit folded into
//! the local weights.

use ndarray::Array1;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::operator::Operator;
use crate::scenario::{DetectorSpec, Scenario};

use super::{clamp_weights, local_ops, LocalOps};
use crate::dynamics::full::JointState;
use crate::operator::MAX_DIM;

/// Weights, local weights and per-detector blocks of the factored ansatz.
#[derive(Clone, Debug)]
pub struct FactoredState {
    pub time: f64,
    /// Global branch weights w_k.
    pub weights: Vec<f64>,
    /// Local weights w_k^d, indexed `[detector][outcome]`.
    pub local_weights: Vec<Vec<f64>>,
    /// Blocks R_kl^d, indexed `[detector][k][l]`; R_lk = R_kl† throughout.
    blocks: Vec<Vec<Vec<Operator>>>,
}

impl FactoredState {
    /// Assembles a state from explicit parts, validating shapes and the
    /// Hermitian pairing of the block grid.
    pub fn from_parts(
        time: f64,
        weights: Vec<f64>,
        local_weights: Vec<Vec<f64>>,
        blocks: Vec<Vec<Vec<Operator>>>,
    ) -> Result<Self> {
        let k = weights.len();
        if local_weights.len() != blocks.len() {
            return Err(Error::DimensionMismatch(
                "local weight and block detector counts differ".into(),
            ));
        }
        for (d, (lw, grid)) in local_weights.iter().zip(blocks.iter()).enumerate() {
            if lw.len() != k || grid.len() != k || grid.iter().any(|row| row.len() != k) {
                return Err(Error::DimensionMismatch(format!(
                    "detector {d} blocks are not a {k}x{k} grid"
                )));
            }
            let dim = grid[0][0].dim();
            for row in grid {
                for b in row {
                    if b.dim() != dim {
                        return Err(Error::DimensionMismatch(format!(
                            "detector {d} blocks have mixed dimensions"
                        )));
                    }
                }
            }
            for a in 0..k {
                for b in a..k {
                    let residual = grid[a][b].max_abs_diff(&grid[b][a].dagger());
                    if residual > 1e-10 {
                        return Err(Error::DimensionMismatch(format!(
                            "detector {d} blocks ({a},{b}) break Hermitian pairing by {residual:.3e}"
                        )));
                    }
                }
            }
        }
        Ok(Self {
            time,
            weights,
            local_weights,
            blocks,
        })
    }

    /// Builds the block grid from per-branch detector vectors:
    /// R_kl^d = |φ_k^d⟩⟨φ_l^d|.
    pub fn from_branch_vectors(
        time: f64,
        weights: Vec<f64>,
        local_weights: Vec<Vec<f64>>,
        phis: &[Vec<Array1<Complex64>>],
    ) -> Self {
        let blocks = phis
            .iter()
            .map(|per_detector| {
                per_detector
                    .iter()
                    .map(|phi_k| {
                        per_detector
                            .iter()
                            .map(|phi_l| Operator::outer(phi_k, phi_l))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self {
            time,
            weights,
            local_weights,
            blocks,
        }
    }

    pub fn n_outcomes(&self) -> usize {
        self.weights.len()
    }

    pub fn n_detectors(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, d: usize, k: usize, l: usize) -> &Operator {
        &self.blocks[d][k][l]
    }

    /// Purity Tr(R_kk²) of a diagonal block; 1 along the exact flow.
    pub fn block_purity(&self, d: usize, k: usize) -> f64 {
        let b = &self.blocks[d][k][k];
        Operator::trace_product(b, b).re
    }

    /// Largest |Tr R_kk − 1| over all diagonal blocks.
    pub fn block_trace_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for grid in &self.blocks {
            for (k, row) in grid.iter().enumerate() {
                worst = worst.max((row[k].trace().re - 1.0).abs());
            }
        }
        worst
    }

    /// Largest Hermitian-pairing violation max|R_kl − R_lk†|.
    pub fn pairing_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for grid in &self.blocks {
            let k = grid.len();
            for a in 0..k {
                for b in a..k {
                    worst = worst.max(grid[a][b].max_abs_diff(&grid[b][a].dagger()));
                }
            }
        }
        worst
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
            && self
                .local_weights
                .iter()
                .all(|lw| lw.iter().all(|w| w.is_finite()))
            && self
                .blocks
                .iter()
                .all(|g| g.iter().all(|row| row.iter().all(|b| b.is_finite())))
    }
}

/// Initial condition: w_k = |c_k|², w_k^d = 1, and every block an outer
/// product of the coherent branch states selected by the activation table.
pub fn build_initial(scenario: &Scenario) -> Result<FactoredState> {
    scenario.validate()?;
    let k = scenario.n_outcomes();
    let weights = scenario.initial_weights();
    let mut phis = Vec::with_capacity(scenario.n_detectors());
    for (d, det) in scenario.detectors.iter().enumerate() {
        let basis = det.basis()?;
        let per_detector: Vec<Array1<Complex64>> = (0..k)
            .map(|outcome| {
                crate::fock::coherent_state(basis, det.branch_alpha(scenario.activation[outcome][d]))
            })
            .collect();
        phis.push(per_detector);
    }
    let local_weights = vec![vec![1.0; k]; scenario.n_detectors()];
    Ok(FactoredState::from_branch_vectors(
        0.0,
        weights,
        local_weights,
        &phis,
    ))
}

/// Ĉ_kml for detector d:
/// x R_km p R_ml + R_km p R_ml x − p R_km x R_ml − R_km x R_ml p.
pub fn coupling_tensor(
    state: &FactoredState,
    detectors: &[DetectorSpec],
    d: usize,
    k: usize,
    m: usize,
    l: usize,
) -> Result<Operator> {
    let ops = LocalOps::build(&detectors[d])?;
    Ok(coupling_tensor_in(state, &ops, d, k, m, l))
}

fn coupling_tensor_in(
    state: &FactoredState,
    ops: &LocalOps,
    d: usize,
    k: usize,
    m: usize,
    l: usize,
) -> Operator {
    let r_km = state.block(d, k, m);
    let r_ml = state.block(d, m, l);
    let x = &ops.x;
    let p = &ops.p;
    let xrp = x.matmul(r_km).matmul(&p.matmul(r_ml));
    let rpx = r_km.matmul(&p.matmul(r_ml)).matmul(x);
    let prx = p.matmul(r_km).matmul(&x.matmul(r_ml));
    let rxp = r_km.matmul(&x.matmul(r_ml)).matmul(p);
    xrp.add(&rpx).sub(&prx).sub(&rxp)
}

/// One-way pumping rate T_km^d = 2ζ·Re Tr(x R_km p R_mk).
pub fn oneway_rate(
    state: &FactoredState,
    detectors: &[DetectorSpec],
    d: usize,
    k: usize,
    m: usize,
    zeta: f64,
) -> Result<f64> {
    let ops = LocalOps::build(&detectors[d])?;
    let xr = ops.x.matmul(state.block(d, k, m));
    let pr = ops.p.matmul(state.block(d, m, k));
    Ok(2.0 * zeta * Operator::trace_product(&xr, &pr).re)
}

/// Logarithmic local pumping rate ẇ_k^d / w_k^d = ζ Σ_m w_m Tr C_kmk.
pub fn local_pump_rate(
    state: &FactoredState,
    detectors: &[DetectorSpec],
    d: usize,
    k: usize,
    zeta: f64,
) -> Result<f64> {
    let ops = LocalOps::build(&detectors[d])?;
    let mut rate = 0.0;
    for m in 0..state.n_outcomes() {
        let wm = state.weights[m];
        if wm == 0.0 {
            continue;
        }
        let c = coupling_tensor_in(state, &ops, d, k, m, k);
        rate += wm * c.trace().re;
    }
    Ok(zeta * rate)
}

/// One-way rates for every detector and ordered outcome pair.
#[derive(Clone, Debug)]
pub struct RateTable {
    /// `t[d][k][m]` = T_km^d
    pub t: Vec<Vec<Vec<f64>>>,
}

pub fn compute_oneway_rates(
    state: &FactoredState,
    detectors: &[DetectorSpec],
    zeta: f64,
) -> Result<RateTable> {
    let k = state.n_outcomes();
    let mut t = vec![vec![vec![0.0; k]; k]; state.n_detectors()];
    for d in 0..state.n_detectors() {
        let ops = LocalOps::build(&detectors[d])?;
        for a in 0..k {
            for b in 0..k {
                if a == b {
                    continue;
                }
                let xr = ops.x.matmul(state.block(d, a, b));
                let pr = ops.p.matmul(state.block(d, b, a));
                t[d][a][b] = 2.0 * zeta * Operator::trace_product(&xr, &pr).re;
            }
        }
    }
    Ok(RateTable { t })
}

/// ẇ_k = Σ_m w_k w_m Σ_d (T_km^d − T_mk^d), accumulated pairwise so the
/// total is zero by construction.
pub fn global_pump_rates(state: &FactoredState, rates: &RateTable) -> Vec<f64> {
    let k = state.n_outcomes();
    let mut dw = vec![0.0; k];
    for a in 0..k {
        for b in (a + 1)..k {
            let stake = state.weights[a] * state.weights[b];
            if stake == 0.0 {
                continue;
            }
            let mut asym = 0.0;
            for grid in &rates.t {
                asym += grid[a][b] - grid[b][a];
            }
            let flow = stake * asym;
            dw[a] += flow;
            dw[b] -= flow;
        }
    }
    dw
}

/// Time derivative of a factored state.
#[derive(Clone, Debug)]
pub struct FactoredDeriv {
    pub d_weights: Vec<f64>,
    pub d_local_weights: Vec<Vec<f64>>,
    /// Populated for k ≤ l only; the mirror entries follow by conjugation.
    d_blocks: Vec<Vec<Vec<Operator>>>,
}

impl FactoredDeriv {
    /// Block derivative for k ≤ l.
    pub fn block(&self, d: usize, k: usize, l: usize) -> &Operator {
        assert!(k <= l, "derivative blocks are stored for k <= l");
        &self.d_blocks[d][k][l]
    }

    fn axpy(&mut self, c: f64, other: &FactoredDeriv) {
        for (a, b) in self.d_weights.iter_mut().zip(other.d_weights.iter()) {
            *a += c * b;
        }
        for (al, bl) in self.d_local_weights.iter_mut().zip(other.d_local_weights.iter()) {
            for (a, b) in al.iter_mut().zip(bl.iter()) {
                *a += c * b;
            }
        }
        let cc = Complex64::new(c, 0.0);
        for (ag, bg) in self.d_blocks.iter_mut().zip(other.d_blocks.iter()) {
            let k = ag.len();
            for a in 0..k {
                for b in a..k {
                    ag[a][b].axpy(cc, &bg[a][b]);
                }
            }
        }
    }

    fn scale(&mut self, c: f64) {
        for a in self.d_weights.iter_mut() {
            *a *= c;
        }
        for al in self.d_local_weights.iter_mut() {
            for a in al.iter_mut() {
                *a *= c;
            }
        }
        let cc = Complex64::new(c, 0.0);
        for ag in self.d_blocks.iter_mut() {
            let k = ag.len();
            for a in 0..k {
                for b in a..k {
                    ag[a][b] = ag[a][b].scale(cc);
                }
            }
        }
    }
}

fn rhs_in(state: &FactoredState, ops: &[LocalOps], zeta: f64) -> FactoredDeriv {
    let k = state.n_outcomes();
    let nd = state.n_detectors();
    let mut d_local = vec![vec![0.0; k]; nd];
    let mut d_blocks: Vec<Vec<Vec<Operator>>> = Vec::with_capacity(nd);
    let mut rates = RateTable {
        t: vec![vec![vec![0.0; k]; k]; nd],
    };

    for d in 0..nd {
        let LocalOps { x, p, h0 } = &ops[d];

        // precompute x·R_ab and p·R_ab for every ordered pair
        let xr: Vec<Vec<Operator>> = (0..k)
            .map(|a| (0..k).map(|b| x.matmul(state.block(d, a, b))).collect())
            .collect();
        let pr: Vec<Vec<Operator>> = (0..k)
            .map(|a| (0..k).map(|b| p.matmul(state.block(d, a, b))).collect())
            .collect();

        // Tr C_ama = 2(Tr[x R_am p R_ma] − Tr[p R_am x R_ma]); both traces
        // are real for Hermitian-paired blocks.
        let mut tr_c = vec![vec![0.0; k]; k];
        for a in 0..k {
            for m in 0..k {
                let s = Operator::trace_product(&xr[a][m], &pr[m][a]).re;
                let t = Operator::trace_product(&pr[a][m], &xr[m][a]).re;
                tr_c[a][m] = 2.0 * (s - t);
                if a != m {
                    rates.t[d][a][m] = 2.0 * zeta * s;
                }
            }
        }

        for a in 0..k {
            let mut rate = 0.0;
            for m in 0..k {
                rate += state.weights[m] * tr_c[a][m];
            }
            d_local[d][a] = state.local_weights[d][a] * zeta * rate;
        }

        let mut grid: Vec<Vec<Operator>> = (0..k)
            .map(|_| (0..k).map(|_| Operator::zeros(x.dim())).collect())
            .collect();
        for a in 0..k {
            for b in a..k {
                let r_ab = state.block(d, a, b);
                // −i[h0, R_ab]
                let mut acc =
                    Operator::commutator(h0, r_ab).scale(Complex64::new(0.0, -1.0));
                if zeta != 0.0 {
                    for m in 0..k {
                        let wm = state.weights[m];
                        if wm == 0.0 {
                            continue;
                        }
                        let r_am = state.block(d, a, m);
                        let c_amb = xr[a][m]
                            .matmul(&pr[m][b])
                            .add(&r_am.matmul(&pr[m][b]).matmul(x))
                            .sub(&pr[a][m].matmul(&xr[m][b]))
                            .sub(&r_am.matmul(&xr[m][b]).matmul(p));
                        let trace_term = 0.5 * (tr_c[a][m] + tr_c[b][m]);
                        let mut term = c_amb;
                        term.axpy(Complex64::new(-trace_term, 0.0), r_ab);
                        acc.axpy(Complex64::new(zeta * wm, 0.0), &term);
                    }
                }
                grid[a][b] = acc;
            }
        }
        d_blocks.push(grid);
    }

    let d_weights = global_pump_rates(state, &rates);
    FactoredDeriv {
        d_weights,
        d_local_weights: d_local,
        d_blocks,
    }
}

/// state + h·deriv, with the k > l mirrors regenerated by conjugation and
/// diagonal blocks re-symmetrized.
fn apply_scaled(state: &FactoredState, deriv: &FactoredDeriv, h: f64) -> FactoredState {
    let k = state.n_outcomes();
    let hc = Complex64::new(h, 0.0);
    let weights: Vec<f64> = state
        .weights
        .iter()
        .zip(deriv.d_weights.iter())
        .map(|(w, dw)| w + h * dw)
        .collect();
    let local_weights: Vec<Vec<f64>> = state
        .local_weights
        .iter()
        .zip(deriv.d_local_weights.iter())
        .map(|(lw, dl)| lw.iter().zip(dl.iter()).map(|(w, dw)| w + h * dw).collect())
        .collect();
    let mut blocks: Vec<Vec<Vec<Operator>>> = Vec::with_capacity(state.n_detectors());
    for (d, grid) in deriv.d_blocks.iter().enumerate() {
        let mut new_grid: Vec<Vec<Operator>> = (0..k)
            .map(|a| (0..k).map(|b| state.block(d, a, b).clone()).collect())
            .collect();
        for a in 0..k {
            for b in a..k {
                new_grid[a][b].axpy(hc, &grid[a][b]);
                if a == b {
                    let sym = new_grid[a][a].add(&new_grid[a][a].dagger()).scale_re(0.5);
                    new_grid[a][a] = sym;
                } else {
                    new_grid[b][a] = new_grid[a][b].dagger();
                }
            }
        }
        blocks.push(new_grid);
    }
    FactoredState {
        time: state.time,
        weights,
        local_weights,
        blocks,
    }
}

/// Spec-facing derivative entry point.
pub fn factored_rhs(state: &FactoredState, scenario: &Scenario) -> Result<FactoredDeriv> {
    let ops = local_ops(scenario)?;
    Ok(rhs_in(state, &ops, scenario.zeta))
}

/// Reusable stepper: build once per scenario, step many times.
pub struct FactoredEngine {
    ops: Vec<LocalOps>,
    zeta: f64,
    dt: f64,
    dephasing: Vec<f64>,
}

impl FactoredEngine {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        Ok(Self {
            ops: local_ops(scenario)?,
            zeta: scenario.zeta,
            dt: scenario.dt,
            dephasing: scenario.detectors.iter().map(|d| d.dephasing_rate).collect(),
        })
    }

    pub fn step(&self, state: &FactoredState) -> Result<FactoredState> {
        if self.dt == 0.0 {
            return Ok(state.clone());
        }
        let dt = self.dt;
        let k1 = rhs_in(state, &self.ops, self.zeta);
        let s2 = apply_scaled(state, &k1, dt / 2.0);
        let k2 = rhs_in(&s2, &self.ops, self.zeta);
        let s3 = apply_scaled(state, &k2, dt / 2.0);
        let k3 = rhs_in(&s3, &self.ops, self.zeta);
        let s4 = apply_scaled(state, &k3, dt);
        let k4 = rhs_in(&s4, &self.ops, self.zeta);

        let mut combined = k1;
        combined.scale(1.0 / 6.0);
        combined.axpy(2.0 / 6.0, &k2);
        combined.axpy(2.0 / 6.0, &k3);
        combined.axpy(1.0 / 6.0, &k4);

        let mut next = apply_scaled(state, &combined, dt);
        next.time = state.time + dt;

        if !next.is_finite() {
            return Err(Error::Blowup { time: state.time });
        }

        // renormalize diagonal block traces; the deficit belongs to the
        // local weights, off-diagonal blocks rescale consistently
        let k = next.n_outcomes();
        for d in 0..next.n_detectors() {
            let taus: Vec<f64> = (0..k).map(|a| next.blocks[d][a][a].trace().re).collect();
            if taus.iter().any(|t| !(t.is_finite() && *t > 0.5)) {
                return Err(Error::Blowup { time: state.time });
            }
            for a in 0..k {
                next.local_weights[d][a] *= taus[a];
                for b in 0..k {
                    let scale = 1.0 / (taus[a] * taus[b]).sqrt();
                    if scale != 1.0 {
                        next.blocks[d][a][b] = next.blocks[d][a][b].scale_re(scale);
                    }
                }
            }
            // optional pure dephasing of branch coherences
            let gamma = self.dephasing[d];
            if gamma > 0.0 {
                let damp = (-gamma * dt).exp();
                for a in 0..k {
                    for b in 0..k {
                        if a != b {
                            next.blocks[d][a][b] = next.blocks[d][a][b].scale_re(damp);
                        }
                    }
                }
            }
        }
        clamp_weights(&mut next.weights);
        Ok(next)
    }
}

/// One RK4 step of the factored system at the scenario's dt.
pub fn step_factored(state: &FactoredState, scenario: &Scenario) -> Result<FactoredState> {
    FactoredEngine::new(scenario)?.step(state)
}

/// Returns the winning outcome once some w_k ≥ 1 − ε.
pub fn detect_collapse(state: &FactoredState, epsilon: f64) -> Option<usize> {
    state.weights.iter().position(|&w| w >= 1.0 - epsilon)
}

/// Assembles the full density matrix of the ansatz:
/// ρ = Σ_kl ξ_k ξ̄_l |k⟩⟨l| ⊗ (⊗_d R_kl^d) with |ξ_k|² = w_k, so
/// Tr⟨k|ρ|k⟩ = w_k holds exactly.
pub fn embed(state: &FactoredState, scenario: &Scenario) -> Result<JointState> {
    let k = state.n_outcomes();
    let mut det_dim = 1usize;
    for d in 0..state.n_detectors() {
        det_dim = det_dim
            .checked_mul(state.block(d, 0, 0).dim())
            .ok_or(Error::DimensionTooLarge(usize::MAX))?;
    }
    let dim = k
        .checked_mul(det_dim)
        .ok_or(Error::DimensionTooLarge(usize::MAX))?;
    if dim > MAX_DIM {
        return Err(Error::DimensionTooLarge(dim));
    }

    let xi: Vec<Complex64> = scenario
        .amplitudes
        .iter()
        .zip(state.weights.iter())
        .map(|(c, &w)| {
            if c.norm() == 0.0 || w == 0.0 {
                Complex64::ZERO
            } else {
                (c / c.norm()) * w.sqrt()
            }
        })
        .collect();

    let mut mat = ndarray::Array2::<Complex64>::zeros((dim, dim));
    for a in 0..k {
        for b in 0..k {
            let coeff = xi[a] * xi[b].conj();
            if coeff == Complex64::ZERO {
                continue;
            }
            let mut product = state.block(0, a, b).clone();
            for d in 1..state.n_detectors() {
                product = product.kron(state.block(d, a, b))?;
            }
            for i in 0..det_dim {
                for j in 0..det_dim {
                    mat[(a * det_dim + i, b * det_dim + j)] = coeff * product.entry(i, j);
                }
            }
        }
    }
    Ok(JointState {
        rho: Operator::from_matrix(mat)?,
        time: state.time,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::full::FullSpace;
    use crate::fock::{self, ModeBasis};
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn detector(n_levels: usize) -> DetectorSpec {
        DetectorSpec {
            n_levels,
            omega: 1.0,
            anharmonicity: 0.2,
            alpha_active: c(1.0, 0.0),
            alpha_quiet: c(0.3, 0.0),
            dephasing_rate: 0.0,
        }
    }

    fn sg_scenario(amplitudes: [f64; 2], zeta: f64, n_levels: usize) -> Scenario {
        Scenario {
            amplitudes: vec![c(amplitudes[0], 0.0), c(amplitudes[1], 0.0)],
            detectors: vec![detector(n_levels), detector(n_levels)],
            activation: vec![vec![true, false], vec![false, true]],
            zeta,
            dt: 0.01,
            t_max: 1.0,
            collapse_epsilon: 1e-4,
        }
    }

    #[test]
    fn initial_weights_follow_born_rule() {
        let s = sg_scenario([0.5f64.sqrt(), 0.5f64.sqrt()], 0.1, 4);
        let st = build_initial(&s).unwrap();
        assert_abs_diff_eq!(st.weights[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(st.weights[1], 0.5, epsilon = 1e-15);

        let s = sg_scenario([0.7f64.sqrt(), 0.3f64.sqrt()], 0.1, 4);
        let st = build_initial(&s).unwrap();
        assert_abs_diff_eq!(st.weights[0], 0.7, epsilon = 1e-15);
        assert_abs_diff_eq!(st.weights[1], 0.3, epsilon = 1e-15);
        assert!(st.local_weights.iter().flatten().all(|&w| w == 1.0));
    }

    #[test]
    fn initial_blocks_are_normalized() {
        let s = sg_scenario([0.7f64.sqrt(), 0.3f64.sqrt()], 0.1, 6);
        let st = build_initial(&s).unwrap();
        assert!(st.block_trace_residual() <= 1e-12);
        assert!(st.pairing_residual() <= 1e-14);
        for d in 0..2 {
            for k in 0..2 {
                assert_abs_diff_eq!(st.block_purity(d, k), 1.0, epsilon = 1e-12);
            }
        }
    }

    fn vacuum_state(k: usize, n_levels: usize) -> FactoredState {
        let basis = ModeBasis::new(n_levels).unwrap();
        let vac = fock::coherent_state(basis, Complex64::ZERO);
        let phis = vec![vec![vac; k]];
        FactoredState::from_branch_vectors(0.0, vec![1.0 / k as f64; k], vec![vec![1.0; k]], &phis)
    }

    #[test]
    fn coupling_tensor_of_vacuum_blocks_is_traceless() {
        let st = vacuum_state(2, 4);
        let dets = vec![detector(4)];
        let c_tensor = coupling_tensor(&st, &dets, 0, 0, 1, 0).unwrap();
        assert!(c_tensor.trace().norm() <= 1e-14);
    }

    #[test]
    fn coupling_tensor_trace_is_real_for_paired_blocks() {
        // φ states with nontrivial phases
        let basis = ModeBasis::new(5).unwrap();
        let phis = vec![vec![
            fock::coherent_state(basis, c(0.8, 0.3)),
            fock::coherent_state(basis, c(-0.2, 0.6)),
        ]];
        let st = FactoredState::from_branch_vectors(0.0, vec![0.5, 0.5], vec![vec![1.0; 2]], &phis);
        let dets = vec![detector(5)];
        let tr = coupling_tensor(&st, &dets, 0, 0, 1, 0).unwrap().trace();
        assert!(tr.im.abs() <= 1e-12, "Tr C_kmk must be real, got {tr}");
    }

    #[test]
    fn coupling_tensor_conjugation_symmetry() {
        let basis = ModeBasis::new(5).unwrap();
        let phis = vec![vec![
            fock::coherent_state(basis, c(0.8, 0.3)),
            fock::coherent_state(basis, c(-0.2, 0.6)),
        ]];
        let st = FactoredState::from_branch_vectors(0.0, vec![0.5, 0.5], vec![vec![1.0; 2]], &phis);
        let dets = vec![detector(5)];
        // C_kml† = C_lmk
        let c_kml = coupling_tensor(&st, &dets, 0, 0, 1, 1).unwrap();
        let c_lmk = coupling_tensor(&st, &dets, 0, 1, 1, 0).unwrap();
        assert!(c_kml.dagger().max_abs_diff(&c_lmk) <= 1e-13);
    }

    #[test]
    fn coupling_tensor_kkk_trace_cancels_for_pure_block() {
        let basis = ModeBasis::new(6).unwrap();
        let phis = vec![vec![fock::coherent_state(basis, c(0.9, -0.4)); 1]];
        let st = FactoredState::from_branch_vectors(0.0, vec![1.0], vec![vec![1.0]], &phis);
        let dets = vec![detector(6)];
        let tr = coupling_tensor(&st, &dets, 0, 0, 0, 0).unwrap().trace();
        assert!(tr.norm() <= 1e-13);
    }

    #[test]
    fn oneway_rate_vanishes_without_coupling() {
        let s = sg_scenario([0.7f64.sqrt(), 0.3f64.sqrt()], 0.0, 4);
        let st = build_initial(&s).unwrap();
        let rate = oneway_rate(&st, &s.detectors, 0, 0, 1, 0.0).unwrap();
        assert_eq!(rate, 0.0);
    }

    #[test]
    fn oneway_rate_suppressed_for_far_separated_real_amplitudes() {
        let basis = ModeBasis::new(48).unwrap();
        let phis = vec![vec![
            fock::coherent_state(basis, c(2.5, 0.0)),
            fock::coherent_state(basis, c(-2.5, 0.0)),
        ]];
        let st = FactoredState::from_branch_vectors(0.0, vec![0.5, 0.5], vec![vec![1.0; 2]], &phis);
        let dets = vec![DetectorSpec {
            n_levels: 48,
            ..detector(48)
        }];
        let t = oneway_rate(&st, &dets, 0, 0, 1, 0.7).unwrap();
        assert!(t.abs() <= 1e-6, "got {t}");
    }

    #[test]
    fn oneway_rate_matches_two_level_hand_expansion() {
        // φ_k = (|0⟩+|1⟩)/√2, φ_m = (|0⟩+i|1⟩)/√2. Expanding
        // Tr(x R_km p R_mk) by hand gives 1/2, so T = 2ζ·(1/2) = ζ.
        let inv = std::f64::consts::FRAC_1_SQRT_2;
        let phi_k = ndarray::array![c(inv, 0.0), c(inv, 0.0)];
        let phi_m = ndarray::array![c(inv, 0.0), c(0.0, inv)];
        let phis = vec![vec![phi_k, phi_m]];
        let st = FactoredState::from_branch_vectors(0.0, vec![0.5, 0.5], vec![vec![1.0; 2]], &phis);
        let dets = vec![DetectorSpec {
            n_levels: 2,
            ..detector(2)
        }];
        let zeta = 0.37;
        let t = oneway_rate(&st, &dets, 0, 0, 1, zeta).unwrap();
        assert_abs_diff_eq!(t, zeta, epsilon = 1e-14);

        // |0⟩⟨1| block: both expectation factors vanish
        let phi0 = ndarray::array![c(1.0, 0.0), c(0.0, 0.0)];
        let phi1 = ndarray::array![c(0.0, 0.0), c(1.0, 0.0)];
        let st = FactoredState::from_branch_vectors(
            0.0,
            vec![0.5, 0.5],
            vec![vec![1.0; 2]],
            &[vec![phi0, phi1]],
        );
        let t = oneway_rate(&st, &dets, 0, 0, 1, zeta).unwrap();
        assert!(t.abs() <= 1e-15);
    }

    #[test]
    fn single_outcome_cannot_pump() {
        let basis = ModeBasis::new(6).unwrap();
        let phis = vec![vec![fock::coherent_state(basis, c(1.1, 0.2)); 1]];
        let st = FactoredState::from_branch_vectors(0.0, vec![1.0], vec![vec![1.0]], &phis);
        let dets = vec![detector(6)];
        let rate = local_pump_rate(&st, &dets, 0, 0, 0.8).unwrap();
        assert!(rate.abs() <= 1e-13);
    }

    #[test]
    fn local_rates_sum_to_global_log_rate() {
        let s = sg_scenario([0.6f64.sqrt(), 0.4f64.sqrt()], 0.45, 5);
        let mut st = build_initial(&s).unwrap();
        // evolve a little so the rates are nontrivial
        let engine = FactoredEngine::new(&s).unwrap();
        for _ in 0..40 {
            st = engine.step(&st).unwrap();
        }
        let rates = compute_oneway_rates(&st, &s.detectors, s.zeta).unwrap();
        let dw = global_pump_rates(&st, &rates);
        for k in 0..2 {
            let local_sum: f64 = (0..2)
                .map(|d| local_pump_rate(&st, &s.detectors, d, k, s.zeta).unwrap())
                .sum();
            let global_log = dw[k] / st.weights[k];
            assert_abs_diff_eq!(local_sum, global_log, epsilon = 1e-10);
        }
    }

    #[test]
    fn symmetric_rates_do_not_pump() {
        let s = sg_scenario([0.6f64.sqrt(), 0.4f64.sqrt()], 0.45, 4);
        let st = build_initial(&s).unwrap();
        let rates = RateTable {
            t: vec![vec![vec![0.0, 0.7], vec![0.7, 0.0]]; 2],
        };
        let dw = global_pump_rates(&st, &rates);
        assert!(dw.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn two_outcome_pumping_is_antisymmetric() {
        let s = sg_scenario([0.6f64.sqrt(), 0.4f64.sqrt()], 0.45, 4);
        let st = build_initial(&s).unwrap();
        let rates = RateTable {
            t: vec![
                vec![vec![0.0, 0.9], vec![0.2, 0.0]],
                vec![vec![0.0, 0.1], vec![0.4, 0.0]],
            ],
        };
        let dw = global_pump_rates(&st, &rates);
        let expected = 0.6 * 0.4 * ((0.9 - 0.2) + (0.1 - 0.4));
        assert_abs_diff_eq!(dw[0], expected, epsilon = 1e-15);
        assert_eq!(dw[0], -dw[1]);
    }

    #[test]
    fn ruined_branch_stays_ruined() {
        let s = sg_scenario([1.0, 0.0], 0.45, 4);
        let mut st = build_initial(&s).unwrap();
        st.weights = vec![1.0, 0.0];
        let rates = RateTable {
            t: vec![vec![vec![0.0, 0.3], vec![0.8, 0.0]]; 2],
        };
        let dw = global_pump_rates(&st, &rates);
        assert_eq!(dw[1], 0.0);
    }

    #[test]
    fn rhs_without_coupling_freezes_weights() {
        let s = sg_scenario([0.7f64.sqrt(), 0.3f64.sqrt()], 0.0, 4);
        let st = build_initial(&s).unwrap();
        let deriv = factored_rhs(&st, &s).unwrap();
        assert!(deriv.d_weights.iter().all(|&x| x == 0.0));
        assert!(deriv.d_local_weights.iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn rhs_preserves_diagonal_block_traces() {
        let s = sg_scenario([0.6f64.sqrt(), 0.4f64.sqrt()], 0.9, 5);
        let st = build_initial(&s).unwrap();
        let deriv = factored_rhs(&st, &s).unwrap();
        for d in 0..2 {
            for k in 0..2 {
                assert!(
                    deriv.block(d, k, k).trace().norm() <= 1e-12,
                    "diagonal derivative must be traceless"
                );
            }
        }
    }

    #[test]
    fn coupled_step_conserves_weight_sum_and_structure() {
        let s = sg_scenario([0.6f64.sqrt(), 0.4f64.sqrt()], 0.9, 5);
        let engine = FactoredEngine::new(&s).unwrap();
        let mut st = build_initial(&s).unwrap();
        for _ in 0..400 {
            st = engine.step(&st).unwrap();
            assert!((st.weight_sum() - 1.0).abs() <= 1e-10);
        }
        assert!(st.block_trace_residual() <= 1e-12);
        assert!(st.pairing_residual() <= 1e-10);
        for d in 0..2 {
            for k in 0..2 {
                assert!(st.block_purity(d, k) >= 1.0 - 1e-6);
            }
        }
    }

    #[test]
    fn uncoupled_weights_frozen_over_many_steps() {
        let mut s = sg_scenario([0.7f64.sqrt(), 0.3f64.sqrt()], 0.0, 2);
        s.dt = 0.01;
        let engine = FactoredEngine::new(&s).unwrap();
        let mut st = build_initial(&s).unwrap();
        for _ in 0..10_000 {
            st = engine.step(&st).unwrap();
        }
        assert!((st.weights[0] - 0.7).abs() <= 1e-10);
        assert!((st.weights[1] - 0.3).abs() <= 1e-10);
    }

    #[test]
    fn factored_matches_full_space_oracle() {
        // small smoke version of the oracle-equivalence acceptance run
        let det = DetectorSpec {
            n_levels: 3,
            omega: 1.0,
            anharmonicity: 0.2,
            alpha_active: c(0.6, 0.0),
            alpha_quiet: c(0.2, 0.0),
            dephasing_rate: 0.0,
        };
        let scenario = Scenario {
            amplitudes: vec![c(0.7f64.sqrt(), 0.0), c(0.3f64.sqrt(), 0.0)],
            detectors: vec![det],
            activation: vec![vec![true], vec![false]],
            zeta: 0.05,
            dt: 0.005,
            t_max: 0.2,
            collapse_epsilon: 1e-4,
        };
        let engine = FactoredEngine::new(&scenario).unwrap();
        let space = FullSpace::new(&scenario).unwrap();
        let mut fac = build_initial(&scenario).unwrap();
        let mut joint = embed(&fac, &scenario).unwrap();
        let steps = (scenario.t_max / scenario.dt).round() as usize;
        let mut worst: f64 = 0.0;
        for _ in 0..steps {
            fac = engine.step(&fac).unwrap();
            joint =
                crate::dynamics::full::step_full_in(&space, &joint, scenario.zeta, scenario.dt)
                    .unwrap();
            let full_w = space.spin_weights(&joint.rho);
            for k in 0..2 {
                worst = worst.max((fac.weights[k] - full_w[k]).abs());
            }
        }
        assert!(worst <= 1e-6, "factored vs full drift {worst:.3e}");
    }

    #[test]
    fn embed_is_pure_and_trace_one() {
        let s = sg_scenario([0.7f64.sqrt(), 0.3f64.sqrt()], 0.3, 4);
        let st = build_initial(&s).unwrap();
        let joint = embed(&st, &s).unwrap();
        assert!((joint.rho.trace().re - 1.0).abs() <= 1e-12);
        assert!((joint.purity() - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn embedded_spin_marginal_reproduces_weights() {
        let s = sg_scenario([0.7f64.sqrt(), 0.3f64.sqrt()], 0.3, 4);
        let engine = FactoredEngine::new(&s).unwrap();
        let mut st = build_initial(&s).unwrap();
        for _ in 0..50 {
            st = engine.step(&st).unwrap();
        }
        let joint = embed(&st, &s).unwrap();
        let space = FullSpace::new(&s).unwrap();
        let spin = space.spin_matrix(&joint.rho);
        for k in 0..2 {
            assert_abs_diff_eq!(spin.entry(k, k).re, st.weights[k], epsilon = 1e-12);
        }
    }

    #[test]
    fn collapse_detection_thresholds() {
        let s = sg_scenario([0.7f64.sqrt(), 0.3f64.sqrt()], 0.3, 4);
        let mut st = build_initial(&s).unwrap();
        st.weights = vec![1.0, 0.0];
        assert_eq!(detect_collapse(&st, 1e-6), Some(0));
        st.weights = vec![0.5, 0.5];
        assert_eq!(detect_collapse(&st, 1e-6), None);
        st.weights = vec![1.0 - 1e-7, 1e-7];
        assert_eq!(detect_collapse(&st, 1e-6), Some(0));
    }

    #[test]
    fn dephasing_damps_coherences_and_stops_pumping() {
        let mut s = sg_scenario([0.5f64.sqrt(), 0.5f64.sqrt()], 0.9, 4);
        for det in &mut s.detectors {
            det.dephasing_rate = 2.0;
        }
        let engine = FactoredEngine::new(&s).unwrap();
        let mut st = build_initial(&s).unwrap();
        for _ in 0..600 {
            st = engine.step(&st).unwrap();
        }
        // off-diagonal blocks die out, diagonal ones stay normalized
        assert!(st.block(0, 0, 1).max_abs() <= 1e-4);
        assert!(st.block_trace_residual() <= 1e-10);
        // with dead coherences the rates vanish
        let rates = compute_oneway_rates(&st, &s.detectors, s.zeta).unwrap();
        let dw = global_pump_rates(&st, &rates);
        assert!(dw.iter().all(|&x| x.abs() <= 1e-8));
    }
}
