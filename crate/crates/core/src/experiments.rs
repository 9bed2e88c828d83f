//! Ensemble harnesses and the statistical test battery.
//!
//! The model is deterministic, so ensemble randomness enters through the
//! detectors: every trial rotates each detector's coherent amplitudes by
//! seeded random phases, standing in for the unpreparable microscopic state
//! of a macroscopic instrument. Trial t draws from stream t+1 of a counter
//! based generator, making every report a pure function of (scenario,
//! trials, master seed) regardless of how many workers run.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::dynamics::factored::{detect_collapse, build_initial, FactoredEngine, FactoredState};
use crate::dynamics::pure::TrajectoryEngine;
use crate::error::{Error, Result};
use crate::scenario::Scenario;

/// Windowed mean and standard error of the pumping asymmetry
/// Σ_d (T_km − T_mk) for one outcome pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftStat {
    pub pair: (usize, usize),
    pub mean: f64,
    pub std_error: f64,
    pub fair: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftDiagnostic {
    pub window: f64,
    pub pairs: Vec<DriftStat>,
    pub fair: bool,
}

/// Outcome statistics of one ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// Content hash of (scenario, trials, master_seed).
    pub scenario_digest: String,
    pub trials: u64,
    pub master_seed: u64,
    /// Decided-trial counts per outcome.
    pub counts: Vec<u64>,
    /// Trials that reached t_max without collapsing.
    pub undecided: u64,
    pub undecided_fraction: f64,
    /// Set when more than half the trials failed to decide.
    pub slow_collapse_warning: bool,
    /// counts / decided trials.
    pub frequencies: Vec<f64>,
    /// Pearson statistic of the decided counts against |c_k|².
    pub chi_square: f64,
    pub mean_decision_time: f64,
    pub drift_stats: Vec<DriftStat>,
    pub wall_time_seconds: f64,
}

/// Thinned weight trajectory of a single trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub weights: Vec<f64>,
    /// Per-detector minimum diagonal-block purity; only recorded on the
    /// block-integrator path.
    pub purities: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialTrajectory {
    pub trial: u64,
    pub rows: Vec<TrajectoryRow>,
}

#[derive(Clone, Debug)]
pub struct EnsembleRun {
    pub report: RunReport,
    /// Present for trials recorded with a nonzero thinning stride.
    pub trajectories: Vec<TrialTrajectory>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct EnsembleOptions {
    /// Record every `thin`-th integration step of every trial; 0 disables
    /// trajectory recording.
    pub thin: usize,
}

/// Stable content hash for reproducibility bookkeeping.
pub fn scenario_digest(scenario: &Scenario, trials: u64, master_seed: u64) -> String {
    let payload = serde_json::to_string(&(scenario, trials, master_seed))
        .expect("scenario serialization is infallible");
    let digest = Sha256::digest(payload.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

enum TrialOutcome {
    Decided { winner: usize, time: f64 },
    Undecided,
}

struct TrialResult {
    outcome: TrialOutcome,
    rows: Vec<TrajectoryRow>,
}

fn draw_phases(scenario: &Scenario, rng: &mut impl Rng) -> Vec<(f64, f64)> {
    (0..scenario.n_detectors())
        .map(|_| {
            (
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect()
}

fn run_trial_pure(
    base: &Scenario,
    engine: &TrajectoryEngine,
    trial: u64,
    master_seed: u64,
    thin: usize,
) -> Result<TrialResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(trial + 1);
    let scenario = base.with_rotated_alphas(&draw_phases(base, &mut rng));
    let mut state = engine.initial(&scenario)?;
    let steps = (base.t_max / base.dt).ceil() as usize;
    let mut rows = Vec::new();
    for step in 0..=steps {
        if thin > 0 && step % thin == 0 {
            rows.push(TrajectoryRow {
                t: state.time,
                weights: state.weights.clone(),
                purities: None,
            });
        }
        if let Some(winner) = state.winner(base.collapse_epsilon) {
            return Ok(TrialResult {
                outcome: TrialOutcome::Decided {
                    winner,
                    time: state.time,
                },
                rows,
            });
        }
        if step == steps {
            break;
        }
        state = engine.step(&state)?;
    }
    Ok(TrialResult {
        outcome: TrialOutcome::Undecided,
        rows,
    })
}

fn block_purities(state: &FactoredState) -> Vec<f64> {
    (0..state.n_detectors())
        .map(|d| {
            (0..state.n_outcomes())
                .map(|k| state.block_purity(d, k))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

fn run_trial_block(
    base: &Scenario,
    trial: u64,
    master_seed: u64,
    thin: usize,
) -> Result<TrialResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(trial + 1);
    let scenario = base.with_rotated_alphas(&draw_phases(base, &mut rng));
    let engine = FactoredEngine::new(&scenario)?;
    let mut state = build_initial(&scenario)?;
    let steps = (base.t_max / base.dt).ceil() as usize;
    let mut rows = Vec::new();
    for step in 0..=steps {
        if thin > 0 && step % thin == 0 {
            rows.push(TrajectoryRow {
                t: state.time,
                weights: state.weights.clone(),
                purities: Some(block_purities(&state)),
            });
        }
        if let Some(winner) = detect_collapse(&state, base.collapse_epsilon) {
            return Ok(TrialResult {
                outcome: TrialOutcome::Decided {
                    winner,
                    time: state.time,
                },
                rows,
            });
        }
        if step == steps {
            break;
        }
        state = engine.step(&state)?;
    }
    Ok(TrialResult {
        outcome: TrialOutcome::Undecided,
        rows,
    })
}

/// Runs `trials` independently seeded collapse trajectories and aggregates
/// winner statistics. Scenarios without dephasing run on the branch-vector
/// engine; dephasing forces the block integrator.
pub fn run_ensemble(scenario: &Scenario, trials: u64, master_seed: u64) -> Result<RunReport> {
    Ok(run_ensemble_with(scenario, trials, master_seed, EnsembleOptions::default())?.report)
}

pub fn run_ensemble_with(
    scenario: &Scenario,
    trials: u64,
    master_seed: u64,
    options: EnsembleOptions,
) -> Result<EnsembleRun> {
    if trials == 0 {
        return Err(Error::InvalidScenario("need at least one trial".into()));
    }
    scenario.validate()?;
    let started = Instant::now();
    let k = scenario.n_outcomes();
    let use_block = scenario.detectors.iter().any(|d| d.dephasing_rate > 0.0);
    let pure_engine = if use_block {
        None
    } else {
        Some(TrajectoryEngine::new(scenario)?)
    };

    let results: Vec<TrialResult> = (0..trials)
        .into_par_iter()
        .map(|t| match &pure_engine {
            Some(engine) => run_trial_pure(scenario, engine, t, master_seed, options.thin),
            None => run_trial_block(scenario, t, master_seed, options.thin),
        })
        .collect::<Result<_>>()?;

    let mut counts = vec![0u64; k];
    let mut undecided = 0u64;
    let mut decision_time_sum = 0.0;
    let mut trajectories = Vec::new();
    for (t, result) in results.into_iter().enumerate() {
        match result.outcome {
            TrialOutcome::Decided { winner, time } => {
                counts[winner] += 1;
                decision_time_sum += time;
            }
            TrialOutcome::Undecided => undecided += 1,
        }
        if options.thin > 0 {
            trajectories.push(TrialTrajectory {
                trial: t as u64,
                rows: result.rows,
            });
        }
    }
    let decided = trials - undecided;
    let frequencies: Vec<f64> = counts
        .iter()
        .map(|&c| if decided > 0 { c as f64 / decided as f64 } else { 0.0 })
        .collect();
    let expected = scenario.initial_weights();
    let chi_square = pearson_chi_square(&counts, &expected, decided);

    let drift = drift_diagnostic(
        scenario,
        default_drift_window(scenario),
        master_seed,
    )?;

    let report = RunReport {
        scenario_digest: scenario_digest(scenario, trials, master_seed),
        trials,
        master_seed,
        counts,
        undecided,
        undecided_fraction: undecided as f64 / trials as f64,
        slow_collapse_warning: undecided * 2 > trials,
        frequencies,
        chi_square,
        mean_decision_time: if decided > 0 {
            decision_time_sum / decided as f64
        } else {
            0.0
        },
        drift_stats: drift.pairs,
        wall_time_seconds: started.elapsed().as_secs_f64(),
    };
    Ok(EnsembleRun {
        report,
        trajectories,
    })
}

fn pearson_chi_square(counts: &[u64], expected_probs: &[f64], decided: u64) -> f64 {
    if decided == 0 {
        return 0.0;
    }
    counts
        .iter()
        .zip(expected_probs.iter())
        .filter(|(_, &p)| p > 0.0)
        .map(|(&c, &p)| {
            let e = p * decided as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum()
}

/// Ten base oscillation periods of the first detector, clipped to t_max.
pub fn default_drift_window(scenario: &Scenario) -> f64 {
    let omega = scenario.detectors[0].omega;
    (10.0 * std::f64::consts::TAU / omega).min(scenario.t_max)
}

/// Pearson goodness-of-fit of the decided counts against given outcome
/// probabilities, with a pass/fail verdict at significance 0.01.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BornTest {
    pub chi_square: f64,
    pub dof: usize,
    pub critical_value: f64,
    pub pass: bool,
    /// Bins whose expected count fell below 5; nonzero values make the
    /// statistic unreliable and deserve merging.
    pub low_expected_bins: usize,
}

pub fn born_test(report: &RunReport, expected: &[f64]) -> Result<BornTest> {
    let decided: u64 = report.counts.iter().sum();
    if decided < 100 {
        return Err(Error::InvalidScenario(format!(
            "need at least 100 decided trials for the chi-square test, got {decided}"
        )));
    }
    if expected.len() != report.counts.len() {
        return Err(Error::DimensionMismatch(
            "expected-probability vector length mismatch".into(),
        ));
    }
    let chi_square = pearson_chi_square(&report.counts, expected, decided);
    let dof = expected.iter().filter(|&&p| p > 0.0).count() - 1;
    let critical_value = ChiSquared::new(dof as f64)
        .map_err(|e| Error::InvalidScenario(format!("chi-square dof: {e}")))?
        .inverse_cdf(0.99);
    let low_expected_bins = expected
        .iter()
        .filter(|&&p| p > 0.0 && p * decided as f64 < 5.0)
        .count();
    Ok(BornTest {
        chi_square,
        dof,
        critical_value,
        pass: chi_square <= critical_value,
        low_expected_bins,
    })
}

const DRIFT_BATCHES: usize = 20;

/// Integrates one seeded trajectory and batches the time series of the
/// pumping asymmetry Σ_d (T_km − T_mk) for every pair: fair means the
/// windowed mean is within three standard errors of zero.
pub fn drift_diagnostic(scenario: &Scenario, window: f64, seed: u64) -> Result<DriftDiagnostic> {
    scenario.validate()?;
    let engine = TrajectoryEngine::new(scenario)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    let trial_scenario = scenario.with_rotated_alphas(&draw_phases(scenario, &mut rng));
    let mut state = engine.initial(&trial_scenario)?;
    let steps = ((window / scenario.dt).ceil() as usize).max(DRIFT_BATCHES);

    let pairs = TrajectoryEngine::pair_order(scenario.n_outcomes());
    let mut series: Vec<Vec<f64>> = vec![Vec::with_capacity(steps); pairs.len()];
    for _ in 0..steps {
        let asym = engine.pair_asymmetries(&state);
        for (acc, a) in series.iter_mut().zip(asym) {
            acc.push(a);
        }
        state = engine.step(&state)?;
    }

    let mut stats = Vec::with_capacity(pairs.len());
    let mut all_fair = true;
    for (pair, samples) in pairs.into_iter().zip(series) {
        let batch_len = samples.len() / DRIFT_BATCHES;
        let batch_means: Vec<f64> = (0..DRIFT_BATCHES)
            .map(|b| {
                let chunk = &samples[b * batch_len..(b + 1) * batch_len];
                chunk.iter().sum::<f64>() / chunk.len() as f64
            })
            .collect();
        let mean = batch_means.iter().sum::<f64>() / DRIFT_BATCHES as f64;
        let var = batch_means
            .iter()
            .map(|m| (m - mean).powi(2))
            .sum::<f64>()
            / (DRIFT_BATCHES as f64 - 1.0);
        let std_error = (var / DRIFT_BATCHES as f64).sqrt();
        let fair = mean.abs() <= 3.0 * std_error;
        all_fair &= fair;
        stats.push(DriftStat {
            pair,
            mean,
            std_error,
            fair,
        });
    }
    Ok(DriftDiagnostic {
        window,
        pairs: stats,
        fair: all_fair,
    })
}

/// Declares which detectors belong to the remote (B) side and how outcomes
/// group into local (A) results.
#[derive(Clone, Debug)]
pub struct SideSplit {
    pub b_detectors: Vec<usize>,
    pub a_outcome_groups: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NoSignalingReport {
    /// A-side marginal frequencies, indexed `[setting][group]`.
    pub a_marginals: Vec<Vec<f64>>,
    pub max_deviation: f64,
    /// Pooled binomial sigma of the comparison achieving `max_deviation`.
    pub pooled_sigma: f64,
    pub pass: bool,
    pub undecided_fractions: Vec<f64>,
}

/// Compares A-side marginal statistics across remote-parameter settings.
/// Every variant must differ from the base scenario only in the declared
/// B-side detectors; anything else is an invalid comparison.
pub fn nosignaling_test(
    base: &Scenario,
    split: &SideSplit,
    settings: &[Scenario],
    trials: u64,
    master_seed: u64,
) -> Result<NoSignalingReport> {
    if settings.len() < 2 {
        return Err(Error::InvalidComparison(
            "need at least two remote settings to compare".into(),
        ));
    }
    let mut seen = vec![false; base.n_outcomes()];
    for group in &split.a_outcome_groups {
        for &i in group {
            if i >= base.n_outcomes() || seen[i] {
                return Err(Error::InvalidComparison(
                    "A-side outcome groups must partition the outcomes".into(),
                ));
            }
            seen[i] = true;
        }
    }
    if !seen.iter().all(|&s| s) {
        return Err(Error::InvalidComparison(
            "A-side outcome groups must cover every outcome".into(),
        ));
    }
    for (idx, setting) in settings.iter().enumerate() {
        if setting.amplitudes != base.amplitudes
            || setting.activation != base.activation
            || setting.zeta != base.zeta
            || setting.dt != base.dt
            || setting.t_max != base.t_max
            || setting.collapse_epsilon != base.collapse_epsilon
            || setting.detectors.len() != base.detectors.len()
        {
            return Err(Error::InvalidComparison(format!(
                "setting {idx} changes more than the remote detectors"
            )));
        }
        for (d, (det, base_det)) in setting
            .detectors
            .iter()
            .zip(base.detectors.iter())
            .enumerate()
        {
            if !split.b_detectors.contains(&d) && det != base_det {
                return Err(Error::InvalidComparison(format!(
                    "setting {idx} modifies local detector {d}"
                )));
            }
        }
    }

    let reports: Vec<RunReport> = settings
        .iter()
        .enumerate()
        .map(|(idx, setting)| {
            let seed = master_seed ^ (idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            run_ensemble(setting, trials, seed)
        })
        .collect::<Result<_>>()?;

    let marginals: Vec<Vec<f64>> = reports
        .iter()
        .map(|r| {
            split
                .a_outcome_groups
                .iter()
                .map(|group| group.iter().map(|&i| r.frequencies[i]).sum())
                .collect()
        })
        .collect();
    let decided: Vec<f64> = reports
        .iter()
        .map(|r| (r.trials - r.undecided) as f64)
        .collect();

    let mut max_deviation = 0.0f64;
    let mut pooled_sigma_at_max = 0.0f64;
    let mut pass = true;
    for s1 in 0..settings.len() {
        for s2 in (s1 + 1)..settings.len() {
            for g in 0..split.a_outcome_groups.len() {
                let (p1, p2) = (marginals[s1][g], marginals[s2][g]);
                let deviation = (p1 - p2).abs();
                let pooled =
                    (p1 * decided[s1] + p2 * decided[s2]) / (decided[s1] + decided[s2]);
                let sigma = (pooled * (1.0 - pooled) * (1.0 / decided[s1] + 1.0 / decided[s2]))
                    .sqrt()
                    .max(f64::MIN_POSITIVE);
                if deviation > 4.0 * sigma {
                    pass = false;
                }
                if deviation > max_deviation {
                    max_deviation = deviation;
                    pooled_sigma_at_max = sigma;
                }
            }
        }
    }

    Ok(NoSignalingReport {
        a_marginals: marginals,
        max_deviation,
        pooled_sigma: pooled_sigma_at_max,
        pass,
        undecided_fractions: reports
            .iter()
            .map(|r| r.undecided_fraction)
            .collect(),
    })
}

// ---------------------------------------------------------------------------
// Detector-scale nonlinearity estimate
// ---------------------------------------------------------------------------

pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
pub const HBAR: f64 = 1.054_571_817e-34;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZetaEstimateInput {
    /// Number of charge carriers mobilized by one detection avalanche.
    pub charge_carriers: f64,
    /// Bias voltage in volts.
    pub bias_voltage: f64,
    /// Avalanche duration in seconds.
    pub duration: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZetaEstimate {
    /// Q·e·U·t/ħ
    pub dimensionless_action: f64,
    /// Reconstructed from requiring ζ·action·t ≈ 1 at classicality onset;
    /// the intermediate formula is a reconstruction, not a measured value.
    pub zeta_per_second: f64,
}

pub fn estimate_zeta(input: &ZetaEstimateInput) -> Result<ZetaEstimate> {
    if !(input.charge_carriers > 0.0 && input.bias_voltage > 0.0 && input.duration > 0.0) {
        return Err(Error::InvalidScenario(
            "charge, voltage and duration must all be positive".into(),
        ));
    }
    let action =
        input.charge_carriers * ELEMENTARY_CHARGE * input.bias_voltage * input.duration / HBAR;
    Ok(ZetaEstimate {
        dimensionless_action: action,
        zeta_per_second: 1.0 / (action * input.duration),
    })
}
