//! The abstract zero-sum weight-pumping game and its verification oracles.
//!
//! Players are outcome branches, stakes are statistical weights summing to
//! one. Each step picks a random active pair, draws a pulse size Δ and a
//! fair sign, and moves min(Δ, w_m, w_n) from loser to gainer; the symmetric
//! clamp keeps every step mean-zero, which is exactly what makes exit
//! probabilities linear in the starting stakes. A player whose stake reaches
//! zero drops out for good.
//!
//! Besides Monte Carlo play this module carries three independent checks:
//! an exact absorbing-chain solve for the two-player fixed-step game, a
//! quadrature residual for the stationarity condition of the exit
//! probabilities under one pumping step, and a finite-difference residual
//! for its diffusion (backward Fokker-Planck) limit.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stakes below this are swept to the pair partner and the player retires.
/// The multiplicative pulse law (kind `dynamics-coupled`) scales pulses by
/// w_m·w_n and would otherwise never produce an exact zero.
pub const ABSORPTION_FLOOR: f64 = 1e-6;

/// Pulse-size law F(Δ).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistKind {
    /// Δ = Δ₀ every time.
    Fixed,
    /// Δ uniform on (0, Δ₀].
    Uniform,
    /// Δ exponential with mean Δ₀.
    Exponential,
    /// Base pulse δ uniform on (0, Δ₀], applied as Δ = w_m·w_n·δ.
    DynamicsCoupled,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDistribution {
    pub kind: DistKind,
    pub scale: f64,
}

impl StepDistribution {
    pub fn new(kind: DistKind, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidScenario(format!(
                "step distribution scale must be positive, got {scale}"
            )));
        }
        Ok(Self { kind, scale })
    }

    /// Draws a strictly positive pulse for the pair holding stakes (w_m, w_n).
    fn draw(&self, w_m: f64, w_n: f64, rng: &mut impl Rng) -> f64 {
        match self.kind {
            DistKind::Fixed => self.scale,
            DistKind::Uniform => self.scale * positive_unit(rng),
            DistKind::Exponential => {
                loop {
                    let delta = -self.scale * positive_unit(rng).ln();
                    if delta > 0.0 {
                        return delta;
                    }
                }
            }
            DistKind::DynamicsCoupled => w_m * w_n * self.scale * positive_unit(rng),
        }
    }

    /// A generous per-trial step budget for Monte Carlo play, scaled from
    /// the expected absorption time of the two-player game.
    pub fn step_cap(&self, n_players: usize) -> u64 {
        let s2 = self.scale * self.scale;
        let base = match self.kind {
            DistKind::Fixed => 100.0 / s2,
            DistKind::Uniform => 300.0 / s2,
            DistKind::Exponential => 50.0 / s2,
            // log-odds walk down to the absorption floor
            DistKind::DynamicsCoupled => 6000.0 / s2,
        };
        (base * (n_players.saturating_sub(1)) as f64).max(1000.0) as u64
    }
}

/// Uniform draw on (0, 1].
fn positive_unit(rng: &mut impl Rng) -> f64 {
    1.0 - rng.random::<f64>()
}

/// Stakes plus the retirement mask; inactive ⇔ weight = 0.
#[derive(Clone, Debug, PartialEq)]
pub struct GameState {
    pub weights: Vec<f64>,
    pub active: Vec<bool>,
}

impl GameState {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.len() < 2 {
            return Err(Error::InvalidScenario(
                "the game needs at least two players".into(),
            ));
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidScenario(
                "stakes must be finite and non-negative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidScenario(format!(
                "stakes must sum to 1, got {total:.15}"
            )));
        }
        let active = weights.iter().map(|&w| w > 0.0).collect();
        Ok(Self { weights, active })
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    /// Re-asserts the per-step invariants.
    pub fn check_invariants(&self) -> Result<()> {
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidScenario(format!(
                "stake sum drifted to {total:.15}"
            )));
        }
        for (w, a) in self.weights.iter().zip(self.active.iter()) {
            if (*w == 0.0) == *a {
                return Err(Error::InvalidScenario(
                    "activity mask disagrees with stakes".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Moves min(Δ, w_loser, w_gainer) from loser to gainer; the symmetric clamp
/// is what keeps the step mean-zero under a fair sign. Sweeps sub-floor
/// residue stakes to the gainer and retires ruined players.
pub fn apply_transfer(state: &mut GameState, loser: usize, gainer: usize, delta: f64) {
    let d_eff = delta.min(state.weights[loser]).min(state.weights[gainer]);
    let mut remaining = state.weights[loser] - d_eff;
    let mut gained = state.weights[gainer] + d_eff;
    if remaining < ABSORPTION_FLOOR {
        gained += remaining;
        remaining = 0.0;
    }
    state.weights[loser] = remaining;
    state.weights[gainer] = gained;
    state.active[loser] = remaining > 0.0;
}

fn step_in_place(
    state: &mut GameState,
    dist: &StepDistribution,
    plus_prob: f64,
    rng: &mut impl Rng,
) -> Result<()> {
    let actives: Vec<usize> = (0..state.weights.len())
        .filter(|&i| state.active[i])
        .collect();
    if actives.len() < 2 {
        return Err(Error::GameOver);
    }
    let i = rng.random_range(0..actives.len());
    let mut j = rng.random_range(0..actives.len() - 1);
    if j >= i {
        j += 1;
    }
    // canonical unordered pair: m < n
    let (m, n) = if actives[i] < actives[j] {
        (actives[i], actives[j])
    } else {
        (actives[j], actives[i])
    };
    let delta = dist.draw(state.weights[m], state.weights[n], rng);
    // "+" means the lower-indexed player gains
    if rng.random::<f64>() < plus_prob {
        apply_transfer(state, n, m, delta);
    } else {
        apply_transfer(state, m, n, delta);
    }
    state.check_invariants()
}

/// One fair pumping step: uniformly random active pair, Δ from the
/// distribution, sign ± with probability ½ each.
pub fn play_step(
    state: &GameState,
    dist: &StepDistribution,
    rng: &mut impl Rng,
) -> Result<GameState> {
    play_step_with_bias(state, dist, 0.5, rng)
}

/// Same step with a biased sign: the lower-indexed player of the chosen
/// pair gains with probability `plus_prob`. The fair game is `plus_prob =
/// 0.5`; anything else is a control that must break the linear exit law.
pub fn play_step_with_bias(
    state: &GameState,
    dist: &StepDistribution,
    plus_prob: f64,
    rng: &mut impl Rng,
) -> Result<GameState> {
    let mut next = state.clone();
    step_in_place(&mut next, dist, plus_prob, rng)?;
    Ok(next)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuinOutcome {
    /// Index of the player holding everything, or None if the step budget
    /// ran out first.
    pub winner: Option<usize>,
    pub steps: u64,
}

/// Plays until a single active player remains; deterministic in `seed`.
pub fn play_to_ruin(
    w0: &[f64],
    dist: &StepDistribution,
    seed: u64,
    max_steps: u64,
) -> Result<RuinOutcome> {
    play_to_ruin_with_bias(w0, dist, 0.5, seed, max_steps)
}

pub fn play_to_ruin_with_bias(
    w0: &[f64],
    dist: &StepDistribution,
    plus_prob: f64,
    seed: u64,
    max_steps: u64,
) -> Result<RuinOutcome> {
    let mut state = GameState::new(w0.to_vec())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut steps = 0u64;
    while state.active_count() >= 2 {
        if steps >= max_steps {
            return Ok(RuinOutcome {
                winner: None,
                steps,
            });
        }
        step_in_place(&mut state, dist, plus_prob, &mut rng)?;
        steps += 1;
    }
    let winner = state.active.iter().position(|&a| a);
    Ok(RuinOutcome { winner, steps })
}

/// Monte Carlo exit-probability estimate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct McExit {
    pub trials: u64,
    pub wins: Vec<u64>,
    pub unfinished: u64,
    /// Win frequencies over finished trials.
    pub frequencies: Vec<f64>,
    /// Binomial standard errors of the frequencies.
    pub std_errors: Vec<f64>,
    pub mean_steps: f64,
}

/// Runs `trials` independent games; trial t draws its randomness from
/// stream t of a ChaCha generator seeded with `master_seed`, so results are
/// reproducible under any parallel schedule.
pub fn exit_probability_mc(
    w0: &[f64],
    dist: &StepDistribution,
    trials: u64,
    master_seed: u64,
) -> Result<McExit> {
    exit_probability_mc_with_bias(w0, dist, 0.5, trials, master_seed)
}

pub fn exit_probability_mc_with_bias(
    w0: &[f64],
    dist: &StepDistribution,
    plus_prob: f64,
    trials: u64,
    master_seed: u64,
) -> Result<McExit> {
    if trials == 0 {
        return Err(Error::InvalidScenario("need at least one trial".into()));
    }
    GameState::new(w0.to_vec())?;
    let k = w0.len();
    let cap = dist.step_cap(k);

    let run_trial = |t: u64| -> Result<(Option<usize>, u64)> {
        let mut state = GameState::new(w0.to_vec())?;
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(t);
        let mut steps = 0u64;
        while state.active_count() >= 2 && steps < cap {
            step_in_place(&mut state, dist, plus_prob, &mut rng)?;
            steps += 1;
        }
        if state.active_count() >= 2 {
            Ok((None, steps))
        } else {
            Ok((state.active.iter().position(|&a| a), steps))
        }
    };

    let outcomes: Vec<(Option<usize>, u64)> = (0..trials)
        .into_par_iter()
        .map(run_trial)
        .collect::<Result<_>>()?;

    let mut wins = vec![0u64; k];
    let mut unfinished = 0u64;
    let mut total_steps = 0u64;
    for (winner, steps) in outcomes {
        total_steps += steps;
        match winner {
            Some(i) => wins[i] += 1,
            None => unfinished += 1,
        }
    }
    let finished = trials - unfinished;
    let frequencies: Vec<f64> = wins
        .iter()
        .map(|&w| if finished > 0 { w as f64 / finished as f64 } else { 0.0 })
        .collect();
    let std_errors: Vec<f64> = frequencies
        .iter()
        .map(|&f| {
            if finished > 0 {
                (f * (1.0 - f) / finished as f64).sqrt()
            } else {
                0.0
            }
        })
        .collect();
    Ok(McExit {
        trials,
        wins,
        unfinished,
        frequencies,
        std_errors,
        mean_steps: total_steps as f64 / trials as f64,
    })
}

/// Exact exit probability for the two-player fixed-Δ game started on the
/// stake lattice {0, Δ, 2Δ, …, 1}: solves the absorbing-chain linear system
/// by Gaussian elimination, staying independent of the Monte Carlo path.
/// Returns the probability that the player holding `w0` wins everything.
pub fn exit_probability_oracle(w0: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidScenario(format!(
            "lattice spacing must lie in (0,1), got {delta}"
        )));
    }
    let l = (1.0 / delta).round();
    if (l * delta - 1.0).abs() > 1e-9 || l < 2.0 || l > 2000.0 {
        return Err(Error::Unsupported(format!(
            "delta = {delta} does not define a lattice of at most 2000 sites"
        )));
    }
    let l = l as usize;
    let i0 = (w0 / delta).round();
    if ((i0 * delta) - w0).abs() > 1e-9 || i0 < 0.0 || i0 > l as f64 {
        return Err(Error::InvalidScenario(format!(
            "w0 = {w0} is not on the lattice with spacing {delta}"
        )));
    }
    let i0 = i0 as usize;
    if i0 == 0 {
        return Ok(0.0);
    }
    if i0 == l {
        return Ok(1.0);
    }

    // interior unknowns p_1..p_{L-1}: p_i − ½p_{i−1} − ½p_{i+1} = ½·[i = L−1]
    let n = l - 1;
    let mut a = vec![vec![0.0f64; n]; n];
    let mut rhs = vec![0.0f64; n];
    for i in 0..n {
        a[i][i] = 1.0;
        if i > 0 {
            a[i][i - 1] = -0.5;
        }
        if i + 1 < n {
            a[i][i + 1] = -0.5;
        } else {
            rhs[i] = 0.5;
        }
    }
    // Gaussian elimination with partial pivoting
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&r1, &r2| a[r1][col].abs().partial_cmp(&a[r2][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        rhs.swap(col, pivot);
        let pivot_val = a[col][col];
        if pivot_val.abs() < 1e-14 {
            return Err(Error::Unsupported("singular absorbing-chain system".into()));
        }
        for row in (col + 1)..n {
            let factor = a[row][col] / pivot_val;
            if factor != 0.0 {
                for c in col..n {
                    a[row][c] -= factor * a[col][c];
                }
                rhs[row] -= factor * rhs[col];
            }
        }
    }
    let mut p = vec![0.0f64; n];
    for row in (0..n).rev() {
        let mut acc = rhs[row];
        for c in (row + 1)..n {
            acc -= a[row][c] * p[c];
        }
        p[row] = acc / a[row][row];
    }
    Ok(p[i0 - 1])
}

// ---------------------------------------------------------------------------
// Residual checks for the exit-probability equations
// ---------------------------------------------------------------------------

/// Gauss-Legendre nodes/weights on [−1, 1] by Newton iteration.
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 1..=n {
        let mut x = (std::f64::consts::PI * (i as f64 - 0.25) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            // P_n(x) and P'_n(x) via the standard three-term recurrence
            let mut p0 = 1.0f64;
            let mut p1 = x;
            for k in 2..=n {
                let pk = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = pk;
            }
            let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        // recompute derivative at the converged node for the weight
        let mut p0 = 1.0f64;
        let mut p1 = x;
        for k in 2..=n {
            let pk = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
            p0 = p1;
            p1 = pk;
        }
        let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

const QUADRATURE_ORDER: usize = 64;

/// Quadrature nodes (Δ, weight) for ∫F(Δ)·g(Δ)dΔ. For the
/// dynamics-coupled law the base nodes must be rescaled by w_m·w_n at the
/// evaluation point, which `pair_scale` supplies.
fn pulse_nodes(dist: &StepDistribution, pair_scale: f64) -> Vec<(f64, f64)> {
    match dist.kind {
        DistKind::Fixed => vec![(dist.scale, 1.0)],
        DistKind::Uniform => gauss_legendre(QUADRATURE_ORDER)
            .into_iter()
            .map(|(x, w)| {
                let delta = dist.scale * 0.5 * (x + 1.0);
                (delta, 0.5 * w)
            })
            .collect(),
        DistKind::Exponential => gauss_legendre(QUADRATURE_ORDER)
            .into_iter()
            .map(|(x, w)| {
                let u = 0.5 * (x + 1.0);
                (-dist.scale * (1.0 - u).ln(), 0.5 * w)
            })
            .collect(),
        DistKind::DynamicsCoupled => gauss_legendre(QUADRATURE_ORDER)
            .into_iter()
            .map(|(x, w)| {
                let base = dist.scale * 0.5 * (x + 1.0);
                (pair_scale * base, 0.5 * w)
            })
            .collect(),
    }
}

/// Stationarity residual of a candidate exit-probability map: the expected
/// change of p_i under one fair pumping step, averaged over pairs and pulse
/// sizes. Exactly zero (to quadrature accuracy) iff the candidate is
/// invariant under the game; the linear map p_i = w_i is.
pub fn verify_difference_equation(
    candidate: &dyn Fn(&[f64]) -> Vec<f64>,
    dist: &StepDistribution,
    points: &[Vec<f64>],
) -> f64 {
    let mut worst = 0.0f64;
    for w in points {
        let k = w.len();
        let n_pairs = (k * (k - 1) / 2) as f64;
        let base = candidate(w);
        let mut residual = vec![0.0f64; k];
        for m in 0..k {
            for n in (m + 1)..k {
                for (delta, weight) in pulse_nodes(dist, w[m] * w[n]) {
                    let mut up = w.clone();
                    up[m] += delta;
                    up[n] -= delta;
                    let mut down = w.clone();
                    down[m] -= delta;
                    down[n] += delta;
                    let p_up = candidate(&up);
                    let p_down = candidate(&down);
                    for i in 0..k {
                        residual[i] +=
                            weight * (base[i] - 0.5 * p_up[i] - 0.5 * p_down[i]) / n_pairs;
                    }
                }
            }
        }
        for r in residual {
            worst = worst.max(r.abs());
        }
    }
    worst
}

/// Finite-difference residual of the diffusion-limit equation
/// Σ_{m<n} D_mn (∂_m − ∂_n)² p_i = 0, the Δ→0 limit of the stationarity
/// condition. Second derivatives are taken along the pair directions
/// e_m − e_n with central differences of step `grid_h`.
pub fn bfp_residual(
    candidate: &dyn Fn(&[f64]) -> Vec<f64>,
    diffusion: &[Vec<f64>],
    points: &[Vec<f64>],
    grid_h: f64,
) -> f64 {
    let mut worst = 0.0f64;
    for w in points {
        let k = w.len();
        let base = candidate(w);
        let mut residual = vec![0.0f64; k];
        for m in 0..k {
            for n in (m + 1)..k {
                let d_mn = diffusion[m][n];
                if d_mn == 0.0 {
                    continue;
                }
                let mut up = w.clone();
                up[m] += grid_h;
                up[n] -= grid_h;
                let mut down = w.clone();
                down[m] -= grid_h;
                down[n] += grid_h;
                let p_up = candidate(&up);
                let p_down = candidate(&down);
                for i in 0..k {
                    residual[i] +=
                        d_mn * (p_up[i] - 2.0 * base[i] + p_down[i]) / (grid_h * grid_h);
                }
            }
        }
        for r in residual {
            worst = worst.max(r.abs());
        }
    }
    worst
}

/// Deterministic interior points of the weight simplex with all components
/// at least `margin` away from the boundary.
pub fn simplex_interior_points(k: usize, count: usize, margin: f64, seed: u64) -> Vec<Vec<f64>> {
    assert!(k >= 2);
    assert!(margin * k as f64 <= 0.8, "margin leaves no interior");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        // Dirichlet(1,…,1) via normalized exponentials
        let draws: Vec<f64> = (0..k).map(|_| -positive_unit(&mut rng).ln()).collect();
        let total: f64 = draws.iter().sum();
        let point: Vec<f64> = draws.iter().map(|&d| d / total).collect();
        if point.iter().all(|&w| w >= margin) {
            out.push(point);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn fixed(scale: f64) -> StepDistribution {
        StepDistribution::new(DistKind::Fixed, scale).unwrap()
    }

    #[test]
    fn transfer_updates_and_clamps() {
        // plain update
        let mut s = GameState::new(vec![0.5, 0.5]).unwrap();
        apply_transfer(&mut s, 1, 0, 0.1);
        assert_eq!(s.weights, vec![0.6, 0.4]);

        // boundary: the poor player pays everything and retires
        let mut s = GameState::new(vec![0.05, 0.95]).unwrap();
        apply_transfer(&mut s, 0, 1, 0.1);
        assert_eq!(s.weights, vec![0.0, 1.0]);
        assert_eq!(s.active, vec![false, true]);

        // symmetric clamp: the poor player's stake caps the move even when
        // the rich one loses
        let mut s = GameState::new(vec![0.05, 0.95]).unwrap();
        apply_transfer(&mut s, 1, 0, 0.1);
        assert_abs_diff_eq!(s.weights[0], 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(s.weights[1], 0.9, epsilon = 1e-15);
    }

    #[test]
    fn step_preserves_total_stake() {
        let dist = StepDistribution::new(DistKind::Uniform, 0.07).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut state = GameState::new(vec![0.2, 0.3, 0.5]).unwrap();
        for _ in 0..20_000 {
            if state.active_count() < 2 {
                break;
            }
            state = play_step(&state, &dist, &mut rng).unwrap();
            let total: f64 = state.weights.iter().sum();
            assert!((total - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn step_requires_two_active_players() {
        let dist = fixed(0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let state = GameState::new(vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            play_step(&state, &dist, &mut rng),
            Err(Error::GameOver)
        ));
    }

    #[test]
    fn degenerate_start_wins_instantly() {
        let out = play_to_ruin(&[1.0, 0.0], &fixed(0.1), 7, 1000).unwrap();
        assert_eq!(out.winner, Some(0));
        assert_eq!(out.steps, 0);
    }

    #[test]
    fn half_stake_single_step_game_is_symmetric() {
        // Δ = 0.5 from (0.5, 0.5): one step decides; winners split evenly.
        let dist = fixed(0.5);
        let mut wins = [0u64; 2];
        for seed in 0..2000 {
            let out = play_to_ruin(&[0.5, 0.5], &dist, seed, 10).unwrap();
            assert_eq!(out.steps, 1);
            wins[out.winner.unwrap()] += 1;
        }
        let f = wins[0] as f64 / 2000.0;
        assert!((f - 0.5).abs() < 3.0 * (0.25f64 / 2000.0).sqrt());
    }

    #[test]
    fn ruin_duration_matches_markov_chain_expectation() {
        // classic two-player duration: E[T] = w(1−w)/Δ² steps
        let dist = fixed(0.1);
        let mc = exit_probability_mc(&[0.5, 0.5], &dist, 20_000, 99).unwrap();
        assert_eq!(mc.unfinished, 0);
        let expected = 0.25 / (0.1 * 0.1);
        assert!(
            (mc.mean_steps - expected).abs() / expected < 0.1,
            "mean steps {} vs expected {expected}",
            mc.mean_steps
        );
    }

    #[test]
    fn exit_frequencies_match_initial_stakes() {
        let dist = fixed(0.02);
        let mc = exit_probability_mc(&[0.7, 0.3], &dist, 20_000, 4242).unwrap();
        assert_eq!(mc.unfinished, 0);
        assert!(
            (mc.frequencies[0] - 0.7).abs() <= 3.0 * mc.std_errors[0].max(1e-4),
            "freq {} ± {}",
            mc.frequencies[0],
            mc.std_errors[0]
        );
    }

    #[test]
    fn dynamics_coupled_game_reaches_ruin_and_stays_fair() {
        let dist = StepDistribution::new(DistKind::DynamicsCoupled, 0.25).unwrap();
        let mc = exit_probability_mc(&[0.5, 0.5], &dist, 4_000, 77).unwrap();
        assert!(
            mc.unfinished as f64 / mc.trials as f64 <= 1e-3,
            "{} unfinished",
            mc.unfinished
        );
        assert!((mc.frequencies[0] - 0.5).abs() <= 3.0 * mc.std_errors[0]);
    }

    #[test]
    fn biased_sign_breaks_the_linear_exit_law() {
        let dist = fixed(0.02);
        let mc = exit_probability_mc_with_bias(&[0.7, 0.3], &dist, 5_000, 3, 0.6).unwrap();
        // player 0 gains with probability 0.6 → wins far more often than 0.7
        assert!(
            mc.frequencies[0] > 0.9,
            "bias should dominate, got {}",
            mc.frequencies[0]
        );
    }

    #[test]
    fn oracle_reproduces_lattice_probabilities() {
        assert_abs_diff_eq!(exit_probability_oracle(0.5, 0.25).unwrap(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(
            exit_probability_oracle(0.25, 0.25).unwrap(),
            0.25,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(exit_probability_oracle(0.7, 0.1).unwrap(), 0.7, epsilon = 1e-12);
        assert_eq!(exit_probability_oracle(0.0, 0.1).unwrap(), 0.0);
        assert_eq!(exit_probability_oracle(1.0, 0.1).unwrap(), 1.0);
    }

    #[test]
    fn oracle_rejects_off_lattice_starts() {
        assert!(exit_probability_oracle(0.33, 0.1).is_err());
        assert!(exit_probability_oracle(0.5, 0.3).is_err());
    }

    #[test]
    fn mc_agrees_with_oracle_on_lattice_starts() {
        let dist = fixed(0.1);
        for (i, seed) in (1..10).zip(1000u64..) {
            let w0 = i as f64 * 0.1;
            let oracle = exit_probability_oracle(w0, 0.1).unwrap();
            let mc = exit_probability_mc(&[w0, 1.0 - w0], &dist, 10_000, seed).unwrap();
            assert!(
                (mc.frequencies[0] - oracle).abs() <= 3.0 * mc.std_errors[0].max(1e-4),
                "w0 = {w0}: {} vs oracle {oracle}",
                mc.frequencies[0]
            );
        }
    }

    fn born_candidate(w: &[f64]) -> Vec<f64> {
        w.to_vec()
    }

    fn squared_candidate(w: &[f64]) -> Vec<f64> {
        w.iter().map(|&x| x * x).collect()
    }

    #[test]
    fn linear_candidate_satisfies_the_difference_equation() {
        let points = simplex_interior_points(3, 50, 0.1, 5);
        for dist in [
            fixed(0.05),
            StepDistribution::new(DistKind::Uniform, 0.05).unwrap(),
            StepDistribution::new(DistKind::DynamicsCoupled, 0.2).unwrap(),
        ] {
            let res = verify_difference_equation(&born_candidate, &dist, &points);
            assert!(res <= 1e-12, "{dist:?} residual {res:.3e}");
        }
    }

    #[test]
    fn quadratic_candidate_fails_by_delta_squared() {
        let dist = fixed(0.1);
        let points = vec![vec![0.5, 0.5]];
        let res = verify_difference_equation(&squared_candidate, &dist, &points);
        assert_abs_diff_eq!(res, 0.01, epsilon = 1e-12);
    }

    #[test]
    fn born_candidate_meets_boundary_conditions() {
        for j in 0..3 {
            let mut w = vec![0.0; 3];
            w[j] = 1.0;
            let p = born_candidate(&w);
            for (i, &pi) in p.iter().enumerate() {
                assert_eq!(pi, if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn linear_candidate_satisfies_the_diffusion_limit() {
        let diffusion = vec![vec![0.0, 1.7, 0.4], vec![0.0, 0.0, 2.3], vec![0.0; 3]];
        let points = simplex_interior_points(3, 50, 0.1, 6);
        let res = bfp_residual(&born_candidate, &diffusion, &points, 1e-3);
        assert!(res <= 1e-10, "residual {res:.3e}");
        // scaling the diffusion matrix must not matter for the linear map
        let scaled: Vec<Vec<f64>> = diffusion
            .iter()
            .map(|row| row.iter().map(|&d| 10.0 * d).collect())
            .collect();
        let res = bfp_residual(&born_candidate, &scaled, &points, 1e-3);
        assert!(res <= 1e-10);
    }

    #[test]
    fn quadratic_candidate_has_curvature_two() {
        let diffusion = vec![vec![0.0, 1.0], vec![0.0, 0.0]];
        let points = vec![vec![0.4, 0.6]];
        // (∂_0 − ∂_1)² w_0² = 2
        let res = bfp_residual(&squared_candidate, &diffusion, &points, 1e-4);
        assert_abs_diff_eq!(res, 2.0, epsilon = 1e-6);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        // ∫_{-1}^{1} x⁶ dx = 2/7 with a handful of nodes
        let nodes = gauss_legendre(8);
        let integral: f64 = nodes.iter().map(|(x, w)| w * x.powi(6)).sum();
        assert_abs_diff_eq!(integral, 2.0 / 7.0, epsilon = 1e-13);
        let total: f64 = gauss_legendre(64).iter().map(|(_, w)| w).sum();
        assert_abs_diff_eq!(total, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn interior_points_respect_margins() {
        let pts = simplex_interior_points(4, 30, 0.05, 9);
        assert_eq!(pts.len(), 30);
        for p in pts {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|&w| w >= 0.05));
        }
    }

    #[test]
    fn reproducible_under_fixed_seed() {
        let dist = StepDistribution::new(DistKind::Uniform, 0.05).unwrap();
        let a = exit_probability_mc(&[0.4, 0.6], &dist, 2000, 123).unwrap();
        let b = exit_probability_mc(&[0.4, 0.6], &dist, 2000, 123).unwrap();
        assert_eq!(a.wins, b.wins);
        assert_eq!(a.mean_steps, b.mean_steps);
    }
}
