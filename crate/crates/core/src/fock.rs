//! Truncated single-mode Fock space: ladder operators, quadratures and
//! coherent states.
//!
//! Conventions: ħ = 1, mode frequency enters through the detector
//! Hamiltonian, x = (a + a†)/√2, p = i(a† − a)/√2. Truncation to `n_levels`
//! Fock states leaves [x, p] = i·1 everywhere except the top-level corner
//! entry, which is the standard artifact of a finite ladder.

use ndarray::Array1;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::Operator;

/// Fock truncation of one detector mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeBasis {
    n_levels: usize,
}

impl ModeBasis {
    pub fn new(n_levels: usize) -> Result<Self> {
        if n_levels < 2 {
            return Err(Error::InvalidScenario(format!(
                "mode basis needs at least 2 levels, got {n_levels}"
            )));
        }
        Ok(Self { n_levels })
    }

    pub fn n_levels(&self) -> usize {
        self.n_levels
    }
}

/// Truncated lowering operator a, with a|n⟩ = √n |n−1⟩.
pub fn lowering(basis: ModeBasis) -> Operator {
    let n = basis.n_levels();
    Operator::from_fn(n, |i, j| {
        if j == i + 1 {
            Complex64::new((j as f64).sqrt(), 0.0)
        } else {
            Complex64::ZERO
        }
    })
    .expect("basis dim already validated")
}

pub fn raising(basis: ModeBasis) -> Operator {
    lowering(basis).dagger()
}

/// Number operator a†a (diagonal 0..n−1).
pub fn number(basis: ModeBasis) -> Operator {
    Operator::from_diag_fn(basis.n_levels(), |i| Complex64::new(i as f64, 0.0))
}

/// x = (a + a†)/√2
pub fn position_operator(basis: ModeBasis) -> Operator {
    let a = lowering(basis);
    a.add(&a.dagger())
        .scale_re(std::f64::consts::FRAC_1_SQRT_2)
        .hermitian()
        .expect("x is symmetric by construction")
}

/// p = i(a† − a)/√2
pub fn momentum_operator(basis: ModeBasis) -> Operator {
    let a = lowering(basis);
    a.dagger()
        .sub(&a)
        .scale(Complex64::new(0.0, std::f64::consts::FRAC_1_SQRT_2))
        .hermitian()
        .expect("p is self-adjoint by construction")
}

/// Normalized truncated coherent state, components ∝ αⁿ/√(n!) renormalized
/// after truncation. Callers should keep |α|² well below the truncation; see
/// [`truncation_is_comfortable`].
pub fn coherent_state(basis: ModeBasis, alpha: Complex64) -> Array1<Complex64> {
    let n = basis.n_levels();
    let mut v = Array1::<Complex64>::zeros(n);
    // recurrence c_{n} = c_{n-1} · α/√n keeps factorials out of the picture
    let mut amp = Complex64::new(1.0, 0.0);
    v[0] = amp;
    for k in 1..n {
        amp *= alpha / Complex64::new((k as f64).sqrt(), 0.0);
        v[k] = amp;
    }
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.mapv_into(|z| z / norm)
}

/// True when |α|² ≤ n_levels/4, the regime where truncation error is
/// negligible for the purposes of this crate.
pub fn truncation_is_comfortable(basis: ModeBasis, alpha: Complex64) -> bool {
    alpha.norm_sqr() <= basis.n_levels() as f64 / 4.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn position_matches_two_level_expansion() {
        let b = ModeBasis::new(2).unwrap();
        let x = position_operator(b);
        assert_abs_diff_eq!(x.entry(0, 1).re, 0.70710678, epsilon = 1e-8);
        assert_abs_diff_eq!(x.entry(1, 0).re, 0.70710678, epsilon = 1e-8);
        assert_eq!(x.entry(0, 0), Complex64::ZERO);
        assert_eq!(x.entry(1, 1), Complex64::ZERO);
    }

    #[test]
    fn momentum_matches_two_level_expansion() {
        let b = ModeBasis::new(2).unwrap();
        let p = momentum_operator(b);
        // p[0,1] = -i/√2
        assert_abs_diff_eq!(p.entry(0, 1).im, -std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-12);
        assert_abs_diff_eq!(p.entry(0, 1).re, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.entry(1, 0).im, std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-12);
    }

    #[test]
    fn quadratures_are_hermitian_across_truncations() {
        for n in 2..=64 {
            let b = ModeBasis::new(n).unwrap();
            assert!(position_operator(b).hermiticity_residual() <= 1e-12);
            assert!(momentum_operator(b).hermiticity_residual() <= 1e-12);
        }
    }

    #[test]
    fn canonical_commutator_up_to_truncation_corner() {
        let n = 8;
        let b = ModeBasis::new(n).unwrap();
        let x = position_operator(b);
        let p = momentum_operator(b);
        let comm = Operator::commutator(&x, &p);
        for i in 0..n {
            for j in 0..n {
                let expected = if i == j {
                    if i == n - 1 {
                        // corner entry picks up the whole truncation deficit
                        Complex64::new(0.0, -((n - 1) as f64))
                    } else {
                        Complex64::new(0.0, 1.0)
                    }
                } else {
                    Complex64::ZERO
                };
                assert!((comm.entry(i, j) - expected).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn vacuum_expectations_vanish() {
        let b = ModeBasis::new(4).unwrap();
        let x = position_operator(b);
        let p = momentum_operator(b);
        let vac = coherent_state(b, Complex64::ZERO);
        assert!(x.expectation(&vac).norm() < 1e-15);
        assert!(p.expectation(&vac).norm() < 1e-15);
    }

    #[test]
    fn coherent_vacuum_is_ground_state() {
        let b = ModeBasis::new(6).unwrap();
        let v = coherent_state(b, Complex64::ZERO);
        assert_eq!(v[0], Complex64::new(1.0, 0.0));
        for k in 1..6 {
            assert_eq!(v[k], Complex64::ZERO);
        }
    }

    #[test]
    fn coherent_states_are_normalized() {
        let b = ModeBasis::new(12).unwrap();
        for alpha in [
            Complex64::new(0.3, 0.0),
            Complex64::new(1.0, -0.5),
            Complex64::new(0.0, 1.4),
        ] {
            let v = coherent_state(b, alpha);
            let norm: f64 = v.iter().map(|z| z.norm_sqr()).sum();
            assert_abs_diff_eq!(norm, 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn coherent_mean_occupation_is_poissonian() {
        let b = ModeBasis::new(16).unwrap();
        let v = coherent_state(b, Complex64::new(1.0, 0.0));
        let mean_n = number(b).expectation(&v).re;
        assert_abs_diff_eq!(mean_n, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn basis_requires_two_levels() {
        assert!(ModeBasis::new(1).is_err());
        assert!(ModeBasis::new(2).is_ok());
    }
}
