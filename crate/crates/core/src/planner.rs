//! Shot-noise budget of the curvature estimator.
//!
//! The formulas here describe the raw second difference when the excitation
//! grows as P_e ≈ P·τ² (P = N·P_N on doublet N): its variance is
//! (6Pτ² + 4Δ_t²)/(Mτ⁴), a signal-to-noise ratio above one needs
//! M > τ⁻² + Δ_t²τ⁻⁴, and the step must satisfy Ω/ω < τ < q/|P⃛_e(0)|.

use rayon::prelude::*;

use crate::dynamics::NoiseChannel;
use crate::error::{Error, Result};
use crate::fit::{linear_fit, sample_variance};
use crate::hilbert::{fock_population, DensityOperator};
use crate::protocol::{estimate_from_probabilities, exact_probabilities, MeasurementConfig, Shots};
use crate::rng::derive_seed;

/// (6Pτ² + 4Δ_t²)/(Mτ⁴)
pub fn predicted_variance(p_n: f64, tau: f64, shots: u64, delta_t: f64) -> f64 {
    let tau2 = tau * tau;
    (6.0 * p_n * tau2 + 4.0 * delta_t * delta_t) / (shots as f64 * tau2 * tau2)
}

/// ⌈τ⁻² + Δ_t²τ⁻⁴⌉
pub fn required_measurements(tau: f64, delta_t: f64) -> u64 {
    let inv2 = 1.0 / (tau * tau);
    let bound = inv2 + delta_t * delta_t * inv2 * inv2;
    // Snap values that are integral up to round-off before taking the ceiling.
    let nearest = bound.round();
    let value = if (bound - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest
    } else {
        bound.ceil()
    };
    if value >= u64::MAX as f64 {
        u64::MAX
    } else {
        (value as u64).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseBudget {
    pub delta_t: f64,
    /// Target absolute accuracy on the curvature.
    pub q: f64,
    /// Upper bound on the decoherence rate, units of Ω.
    pub kappa_max: f64,
}

impl NoiseBudget {
    pub fn new(delta_t: f64, q: f64, kappa_max: f64) -> Result<Self> {
        if !(delta_t >= 0.0) || !(kappa_max >= 0.0) {
            return Err(Error::invalid("budget", "delta_t and kappa_max must be non-negative"));
        }
        if !(q > 0.0) || !q.is_finite() {
            return Err(Error::invalid("q", "target accuracy must be positive"));
        }
        Ok(Self {
            delta_t,
            q,
            kappa_max,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanResult {
    /// Shots per time point at τ = `tau_max`.
    pub m_min: u64,
    pub tau_max: f64,
    pub tau_min: f64,
    /// Variance of the curvature at (P = 1, τ_max, m_min).
    pub predicted_variance: f64,
    pub feasible: bool,
}

/// Admissible step window [Ω/ω, q/P⃛] and the shots it requires.
pub fn tau_window(budget: &NoiseBudget, third_deriv_bound: f64, omega_ratio: f64) -> Result<PlanResult> {
    if !(third_deriv_bound > 0.0) {
        return Err(Error::invalid("third_deriv_bound", "must be positive"));
    }
    if !(omega_ratio > 0.0) || !omega_ratio.is_finite() {
        return Err(Error::invalid("omega_ratio", "must be positive"));
    }
    let tau_max = budget.q / third_deriv_bound;
    let tau_min = omega_ratio;
    let (m_min, var) = if tau_max > 0.0 {
        let m = required_measurements(tau_max, budget.delta_t);
        (m, predicted_variance(1.0, tau_max, m, budget.delta_t))
    } else {
        (u64::MAX, f64::INFINITY)
    };
    Ok(PlanResult {
        m_min,
        tau_max,
        tau_min,
        predicted_variance: var,
        feasible: tau_min <= tau_max,
    })
}

/// One point of a Monte Carlo variance study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingPoint {
    pub tau: f64,
    pub shots: u64,
    /// Sample variance of the raw curvature over the repeats.
    pub empirical_variance: f64,
    /// `predicted_variance(N·P_N, τ, M, Δ_t)`.
    pub predicted_variance: f64,
}

impl ScalingPoint {
    pub fn ratio(&self) -> f64 {
        self.empirical_variance / self.predicted_variance
    }
}

/// Log–log slope of empirical variance against τ or M.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingFit {
    pub points: Vec<ScalingPoint>,
    pub slope: f64,
    pub slope_stderr: f64,
}

pub const MIN_REPEATS: usize = 30;

/// Parameters shared by the Monte Carlo variance studies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingRun {
    pub n: usize,
    pub delta_t: f64,
    pub repeats: usize,
    pub seed: u64,
    /// Integration step used for the exact probabilities.
    pub dt: f64,
}

fn variance_point(
    rho_f: &DensityOperator,
    channels: &[NoiseChannel],
    run: &ScalingRun,
    tau: f64,
    shots: u64,
    stream: u64,
) -> Result<ScalingPoint> {
    let exact = exact_probabilities(rho_f, run.n, channels, tau, run.dt)?;
    let cfg = MeasurementConfig::new(tau, Shots::Finite(shots), run.delta_t, derive_seed(run.seed, &[stream]))?;
    let curvatures: Vec<f64> = (0..run.repeats as u64)
        .into_par_iter()
        .map(|r| estimate_from_probabilities(run.n, exact, &cfg, r).curvature)
        .collect();
    let p = run.n as f64 * fock_population(rho_f, run.n)?;
    Ok(ScalingPoint {
        tau,
        shots,
        empirical_variance: sample_variance(&curvatures),
        predicted_variance: predicted_variance(p, tau, shots, run.delta_t),
    })
}

fn check_repeats(repeats: usize) -> Result<()> {
    if repeats < MIN_REPEATS {
        return Err(Error::invalid(
            "repeats",
            format!("{repeats} repeats are too few for a stable variance fit (need ≥ {MIN_REPEATS})"),
        ));
    }
    Ok(())
}

fn fit_points(points: Vec<ScalingPoint>, x: impl Fn(&ScalingPoint) -> f64) -> Result<ScalingFit> {
    let xs: Vec<f64> = points.iter().map(|p| x(p).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.empirical_variance.ln()).collect();
    let line = linear_fit(&xs, &ys)?;
    Ok(ScalingFit {
        points,
        slope: line.slope,
        slope_stderr: line.slope_stderr,
    })
}

/// Empirical variance of the curvature against τ at fixed shots.
pub fn validate_scaling(
    rho_f: &DensityOperator,
    channels: &[NoiseChannel],
    tau_ladder: &[f64],
    shots: u64,
    run: &ScalingRun,
) -> Result<ScalingFit> {
    check_repeats(run.repeats)?;
    let points = tau_ladder
        .iter()
        .enumerate()
        .map(|(i, &tau)| variance_point(rho_f, channels, run, tau, shots, i as u64))
        .collect::<Result<Vec<_>>>()?;
    fit_points(points, |p| p.tau)
}

/// Empirical variance of the curvature against shots at fixed τ.
pub fn validate_shot_scaling(
    rho_f: &DensityOperator,
    channels: &[NoiseChannel],
    tau: f64,
    shot_ladder: &[u64],
    run: &ScalingRun,
) -> Result<ScalingFit> {
    check_repeats(run.repeats)?;
    let points = shot_ladder
        .iter()
        .enumerate()
        .map(|(i, &m)| variance_point(rho_f, channels, run, tau, m, 1_000 + i as u64))
        .collect::<Result<Vec<_>>>()?;
    fit_points(points, |p| p.shots as f64)
}
