//! The three-point curvature measurement of Fock populations.
//!
//! The probe is prepared in |g⟩ next to ρ_f, coupled through the selective
//! doublet N, and read out at τ ∈ {0, τ, 2τ}. Under the selective coupling
//! P_e(τ) = P_N sin²(√N τ) + (noise corrections of order τ³), so the discrete
//! second derivative tends to 2N·P_N. The estimator divides by that factor.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Normal};
use rayon::prelude::*;

use crate::dynamics::{excited_population, HamiltonianSpec, NoiseChannel, Propagator};
use crate::error::{Error, Result};
use crate::fit::extrapolate_to_zero;
use crate::hilbert::{fock_state, ground_with_field, DensityOperator, Space, Truncation};
use crate::planner::predicted_variance;
use crate::rng::substream;

/// Shots per time point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shots {
    Finite(u64),
    /// Infinitely many shots: the exact probabilities are used.
    Ideal,
}

impl Shots {
    pub fn count(&self) -> Option<u64> {
        match self {
            Shots::Finite(m) => Some(*m),
            Shots::Ideal => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementConfig {
    pub tau: f64,
    pub shots: Shots,
    /// Per-shot technical noise standard deviation.
    pub delta_t: f64,
    pub seed: u64,
}

impl MeasurementConfig {
    pub fn new(tau: f64, shots: Shots, delta_t: f64, seed: u64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::invalid("tau", "must be positive"));
        }
        if shots == Shots::Finite(0) {
            return Err(Error::invalid("shots", "need at least one shot"));
        }
        if !(delta_t >= 0.0) || !delta_t.is_finite() {
            return Err(Error::invalid("delta_t", "must be non-negative"));
        }
        Ok(Self {
            tau,
            shots,
            delta_t,
            seed,
        })
    }

    pub fn ideal(tau: f64) -> Result<Self> {
        Self::new(tau, Shots::Ideal, 0.0, 0)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// How a population estimate was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimateKind {
    /// Curvature of P_e on the doublet N.
    Curvature,
    /// 1 − Σ_{n≥1} P̂_n (used for the vacuum, which has no doublet).
    Complement,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationEstimate {
    pub n: usize,
    pub kind: EstimateKind,
    /// Estimated P̂_N; not clipped to [0, 1].
    pub p_hat: f64,
    /// Predicted variance of `p_hat` (zero for ideal sampling).
    pub variance: f64,
    /// Raw second difference, before dividing by `normalization`.
    pub curvature: f64,
    /// Sampled P̃_e at 0, τ, 2τ.
    pub raw: [f64; 3],
    /// Exact P_e at 0, τ, 2τ.
    pub exact: [f64; 3],
    /// Curvature-to-population factor 2N.
    pub normalization: f64,
}

/// Binomial frequency over `shots` trials plus Gaussian technical noise of
/// per-shot standard deviation `delta_t` (so `delta_t/√shots` on the mean).
pub fn sample_probability<R: Rng + ?Sized>(p_true: f64, shots: u64, delta_t: f64, rng: &mut R) -> f64 {
    let p = p_true.clamp(0.0, 1.0);
    let m = shots.max(1);
    let hits = Binomial::new(m, p).expect("p clamped to [0, 1]").sample(rng);
    let mut value = hits as f64 / m as f64;
    if delta_t > 0.0 {
        let sd = delta_t / (m as f64).sqrt();
        value += Normal::new(0.0, sd).expect("finite positive sd").sample(rng);
    }
    value
}

/// (p₂ − 2p₁ + p₀)/τ²
pub fn second_difference(p0: f64, p1: f64, p2: f64, tau: f64) -> f64 {
    debug_assert!(tau > 0.0);
    (p2 - 2.0 * p1 + p0) / (tau * tau)
}

/// Zero-time curvature of P_e per unit population on doublet N.
pub fn normalization(n: usize) -> f64 {
    2.0 * n as f64
}

fn check_doublet(rho_f: &DensityOperator, n: usize) -> Result<()> {
    rho_f.require(Space::Field)?;
    let n_max = rho_f.truncation().n_max();
    if n < 1 || n > n_max {
        return Err(Error::invalid(
            "n",
            format!("doublet N = {n} outside 1..={n_max}"),
        ));
    }
    Ok(())
}

fn check_tau(tau: f64, dt: f64) -> Result<()> {
    if !(tau > dt) {
        return Err(Error::invalid(
            "tau",
            format!("τ = {tau} must exceed the integration step {dt}"),
        ));
    }
    Ok(())
}

/// Exact P_e of |g⟩⟨g| ⊗ ρ_f under H_N and `channels` at the given ascending times.
pub fn excitation_curve(
    rho_f: &DensityOperator,
    n: usize,
    channels: &[NoiseChannel],
    times: &[f64],
    dt: f64,
) -> Result<Vec<f64>> {
    check_doublet(rho_f, n)?;
    let rho0 = ground_with_field(rho_f)?;
    let spec = HamiltonianSpec::selective(n, 1.0)?;
    let prop = Propagator::from_spec(&spec, channels, rho_f.truncation())?;
    prop.sample(&rho0, times, dt, excited_population)
}

/// Exact P_e at 0, τ, 2τ.
pub fn exact_probabilities(
    rho_f: &DensityOperator,
    n: usize,
    channels: &[NoiseChannel],
    tau: f64,
    dt: f64,
) -> Result<[f64; 3]> {
    check_tau(tau, dt)?;
    let v = excitation_curve(rho_f, n, channels, &[0.0, tau, 2.0 * tau], dt)?;
    Ok([v[0], v[1], v[2]])
}

/// Draws the three readouts for repeat `repeat` and forms the estimate.
///
/// Substream for time point k is derived from `(seed, n, k, repeat)`.
pub fn estimate_from_probabilities(
    n: usize,
    exact: [f64; 3],
    cfg: &MeasurementConfig,
    repeat: u64,
) -> PopulationEstimate {
    let tau = cfg.tau;
    let norm = normalization(n);
    let raw = match cfg.shots {
        Shots::Ideal => exact,
        Shots::Finite(m) => {
            let mut out = [0.0; 3];
            for (k, slot) in out.iter_mut().enumerate() {
                let mut rng = substream(cfg.seed, &[n as u64, k as u64, repeat]);
                *slot = sample_probability(exact[k], m, cfg.delta_t, &mut rng);
            }
            out
        }
    };
    let curvature = second_difference(raw[0], raw[1], raw[2], tau);
    let variance = match cfg.shots {
        Shots::Ideal => 0.0,
        Shots::Finite(m) => {
            let p_exact = second_difference(exact[0], exact[1], exact[2], tau) / norm;
            // The variance law is written for P_e ≈ P τ²; on doublet N the
            // effective P is N·P_N, and the curvature is rescaled by 2N.
            let effective = (n as f64 * p_exact).max(0.0);
            predicted_variance(effective, tau, m, cfg.delta_t) / (norm * norm)
        }
    };
    PopulationEstimate {
        n,
        kind: EstimateKind::Curvature,
        p_hat: curvature / norm,
        variance,
        curvature,
        raw,
        exact,
        normalization: norm,
    }
}

/// P̂_N from simulated readouts of the selective probe.
pub fn estimate_population(
    rho_f: &DensityOperator,
    n: usize,
    channels: &[NoiseChannel],
    cfg: &MeasurementConfig,
    dt: f64,
) -> Result<PopulationEstimate> {
    let exact = exact_probabilities(rho_f, n, channels, cfg.tau, dt)?;
    Ok(estimate_from_probabilities(n, exact, cfg, 0))
}

/// Estimates for every index in `n_list`. An index 0 is filled in as the
/// complement 1 − Σ_{n=1}^{n_max} P̂_n.
pub fn scan_populations(
    rho_f: &DensityOperator,
    n_list: &[usize],
    channels: &[NoiseChannel],
    cfg: &MeasurementConfig,
    dt: f64,
) -> Result<Vec<PopulationEstimate>> {
    rho_f.require(Space::Field)?;
    let n_max = rho_f.truncation().n_max();
    if let Some(&bad) = n_list.iter().find(|&&n| n > n_max) {
        return Err(Error::invalid("n_list", format!("index {bad} exceeds n_max = {n_max}")));
    }
    let needed: Vec<usize> = if n_list.contains(&0) {
        (1..=n_max).collect()
    } else {
        let mut v: Vec<usize> = n_list.to_vec();
        v.sort_unstable();
        v.dedup();
        v
    };
    let estimates: Vec<PopulationEstimate> = needed
        .par_iter()
        .map(|&n| estimate_population(rho_f, n, channels, cfg, dt))
        .collect::<Result<_>>()?;
    let lookup = |n: usize| estimates.iter().find(|e| e.n == n).cloned();
    Ok(n_list
        .iter()
        .map(|&n| {
            if n == 0 {
                complement_estimate(&estimates)
            } else {
                lookup(n).expect("every requested index was estimated")
            }
        })
        .collect())
}

/// Vacuum population as one minus the sum of all doublet estimates.
pub fn complement_estimate(estimates: &[PopulationEstimate]) -> PopulationEstimate {
    let sum: f64 = estimates.iter().map(|e| e.p_hat).sum();
    let variance: f64 = estimates.iter().map(|e| e.variance).sum();
    PopulationEstimate {
        n: 0,
        kind: EstimateKind::Complement,
        p_hat: 1.0 - sum,
        variance,
        curvature: 0.0,
        raw: [0.0; 3],
        exact: [0.0; 3],
        normalization: 1.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeRow {
    pub tau: f64,
    /// (P_e(τ) − P_e(0))/τ
    pub first_difference: f64,
    /// (P_e(2τ) − 2P_e(τ) + P_e(0))/τ²
    pub second_difference: f64,
    /// Second difference minus its extrapolated τ → 0 limit.
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeStudy {
    pub n: usize,
    pub rows: Vec<DerivativeRow>,
    /// τ → 0 limit of the first difference (the zero-time slope).
    pub first_limit: f64,
    /// τ → 0 limit of the second difference (the zero-time curvature).
    pub second_limit: f64,
    /// Leading coefficient c of bias(τ) = c·τ + O(τ²).
    pub bias_slope: f64,
}

impl DerivativeStudy {
    /// Extrapolated curvature divided by 2N.
    pub fn population(&self) -> f64 {
        self.second_limit / normalization(self.n)
    }
}

/// Noise-free finite differences over a descending τ ladder, with
/// Richardson-extrapolated limits.
pub fn derivative_study(
    rho_f: &DensityOperator,
    n: usize,
    channels: &[NoiseChannel],
    tau_ladder: &[f64],
    dt: f64,
) -> Result<DerivativeStudy> {
    if tau_ladder.len() < 2 {
        return Err(Error::invalid("tau_ladder", "need at least two step sizes"));
    }
    if tau_ladder.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::invalid("tau_ladder", "must be strictly descending"));
    }
    let smallest = *tau_ladder.last().expect("non-empty");
    check_tau(smallest, dt)?;

    let mut times: Vec<f64> = std::iter::once(0.0)
        .chain(tau_ladder.iter().flat_map(|&t| [t, 2.0 * t]))
        .collect();
    times.sort_by(|a, b| a.total_cmp(b));
    times.dedup();
    let values = excitation_curve(rho_f, n, channels, &times, dt)?;
    let at = |t: f64| -> f64 {
        let idx = times
            .binary_search_by(|probe| probe.total_cmp(&t))
            .expect("time was sampled");
        values[idx]
    };

    let p0 = values[0];
    let firsts: Vec<f64> = tau_ladder.iter().map(|&t| (at(t) - p0) / t).collect();
    let seconds: Vec<f64> = tau_ladder
        .iter()
        .map(|&t| second_difference(p0, at(t), at(2.0 * t), t))
        .collect();
    let first_limit = extrapolate_to_zero(tau_ladder, &firsts)?;
    let second_limit = extrapolate_to_zero(tau_ladder, &seconds)?;
    let slopes: Vec<f64> = tau_ladder
        .iter()
        .zip(&seconds)
        .map(|(t, s)| (s - second_limit) / t)
        .collect();
    let bias_slope = extrapolate_to_zero(tau_ladder, &slopes)?;

    let rows = tau_ladder
        .iter()
        .zip(firsts.iter().zip(&seconds))
        .map(|(&tau, (&f, &s))| DerivativeRow {
            tau,
            first_difference: f,
            second_difference: s,
            bias: s - second_limit,
        })
        .collect();
    Ok(DerivativeStudy {
        n,
        rows,
        first_limit,
        second_limit,
        bias_slope,
    })
}

/// Peak probe excitation of one doublet under the tuned effective coupling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectivityRow {
    /// Ω₂/Ω₁
    pub ratio: f64,
    /// Fock index the probe was started next to.
    pub n: usize,
    pub target: bool,
    /// max over the sampled window of P_e for ρ_f = |n⟩⟨n|.
    pub max_excitation: f64,
}

/// For every ratio, evolves |g⟩⊗|n⟩ for n ∈ {target} ∪ `others` under the
/// effective Hamiltonian tuned to `target` and records the peak of P_e over
/// [0, t_end], sampled every `sample_step`.
pub fn selectivity_scan(
    ratios: &[f64],
    target: usize,
    others: &[usize],
    t_end: f64,
    sample_step: f64,
    dt: f64,
) -> Result<Vec<SelectivityRow>> {
    if !(t_end > 0.0) || !(sample_step > 0.0) || sample_step > t_end {
        return Err(Error::invalid("t_end", "need 0 < sample_step ≤ t_end"));
    }
    let indices: Vec<usize> = std::iter::once(target).chain(others.iter().copied()).collect();
    let trunc = Truncation::new(indices.iter().copied().max().unwrap_or(1) + 1)?;
    let count = (t_end / sample_step).round() as usize;
    let times: Vec<f64> = (0..=count).map(|k| t_end * k as f64 / count as f64).collect();
    let jobs: Vec<(f64, usize)> = ratios
        .iter()
        .flat_map(|&r| indices.iter().map(move |&n| (r, n)))
        .collect();
    jobs.par_iter()
        .map(|&(ratio, n)| {
            let spec = HamiltonianSpec::effective_at_ratio(ratio, target)?;
            let rho0 = ground_with_field(&fock_state(trunc, n)?)?;
            let prop = Propagator::from_spec(&spec, &[], trunc)?;
            let values = prop.sample(&rho0, &times, dt, excited_population)?;
            Ok(SelectivityRow {
                ratio,
                n,
                target: n == target,
                max_excitation: values.into_iter().fold(f64::NEG_INFINITY, f64::max),
            })
        })
        .collect()
}
