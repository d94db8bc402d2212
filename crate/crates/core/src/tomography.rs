//! Phase-space reconstruction from displaced Fock populations.
//!
//! With P_n(−α) the populations of D(−α) ρ_f D(−α)†:
//!
//! * W(α) = 2 Σ (−1)ⁿ P_n(−α)   (no 1/π; the vacuum peaks at 2)
//! * Q(α) = ⟨α|ρ_f|α⟩ = P_0(−α)
//!
//! In sampled mode every P_n with n ≥ 1 comes from the curvature estimator
//! on doublet n, and P_0 is the complement 1 − Σ_{n≥1} P̂_n.

use rayon::prelude::*;

use crate::dynamics::NoiseChannel;
use crate::error::{Error, Result};
use crate::hilbert::{
    check_displacement, displacement_operator, fock_distribution, parity_operator, DensityOperator,
    Matrix, Space, Truncation, C64,
};
use crate::protocol::{estimate_from_probabilities, exact_probabilities, MeasurementConfig};
use crate::rng::derive_seed;

/// Populations below this bound are treated as the series tail.
pub const DEFAULT_TAIL_THRESHOLD: f64 = 1e-4;

/// A displacement amplitude that is safe on a given truncation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhasePoint {
    alpha: C64,
}

impl PhasePoint {
    pub fn new(alpha: C64, trunc: Truncation) -> Result<Self> {
        check_displacement(alpha, trunc)?;
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> C64 {
        self.alpha
    }
}

/// `count` evenly spaced values from `min` to `max` inclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisRange {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl AxisRange {
    pub fn new(min: f64, max: f64, count: usize) -> Result<Self> {
        if count < 1 {
            return Err(Error::invalid("count", "grid axes need at least one point"));
        }
        if !min.is_finite() || !max.is_finite() || max < min {
            return Err(Error::invalid("range", format!("invalid axis range [{min}, {max}]")));
        }
        Ok(Self { min, max, count })
    }

    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.min];
        }
        let step = (self.max - self.min) / (self.count - 1) as f64;
        (0..self.count).map(|i| self.min + step * i as f64).collect()
    }
}

/// Rectangular grid of α; points are ordered with the real part outermost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseSpaceGrid {
    pub re: AxisRange,
    pub im: AxisRange,
}

impl PhaseSpaceGrid {
    pub fn new(re: AxisRange, im: AxisRange) -> Self {
        Self { re, im }
    }

    pub fn len(&self) -> usize {
        self.re.count * self.im.count
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn points(&self) -> Vec<C64> {
        let ims = self.im.values();
        self.re
            .values()
            .into_iter()
            .flat_map(|x| ims.iter().map(move |&y| C64::new(x, y)))
            .collect()
    }

    /// Grid spacing area (zero along a single-point axis).
    pub fn cell_area(&self) -> f64 {
        let step = |a: &AxisRange| {
            if a.count > 1 {
                (a.max - a.min) / (a.count - 1) as f64
            } else {
                0.0
            }
        };
        step(&self.re) * step(&self.im)
    }

    /// Fails on the first point that violates truncation safety.
    pub fn validate(&self, trunc: Truncation) -> Result<()> {
        for alpha in self.points() {
            PhasePoint::new(alpha, trunc)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuasiKind {
    Wigner,
    Q,
}

/// Settings for simulated finite-shot reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSettings {
    pub measurement: MeasurementConfig,
    /// Integration step for the probe dynamics.
    pub dt: f64,
    pub channels: Vec<NoiseChannel>,
    /// Highest doublet measured; chosen from the tail threshold when `None`.
    pub n_cut: Option<usize>,
    pub tail_threshold: f64,
}

impl SampledSettings {
    pub fn new(measurement: MeasurementConfig, dt: f64) -> Self {
        Self {
            measurement,
            dt,
            channels: Vec::new(),
            n_cut: None,
            tail_threshold: DEFAULT_TAIL_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Mode {
    /// Exact populations of the displaced state.
    Ideal,
    Sampled(SampledSettings),
}

/// A quasi-probability value with its one-sigma error and the exact value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointValue {
    pub value: f64,
    pub error_bar: f64,
    pub exact: f64,
}

/// D(−α) ρ_f D(−α)†.
pub fn displace_state(rho_f: &DensityOperator, alpha: C64) -> Result<DensityOperator> {
    rho_f.require(Space::Field)?;
    let trunc = rho_f.truncation();
    let d = displacement_operator(-alpha, trunc)?.into_matrix();
    let mut m: Matrix = &d * rho_f.matrix() * d.adjoint();
    let n = m.nrows();
    for j in 0..n {
        for i in 0..j {
            let avg = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            m[(i, j)] = avg;
            m[(j, i)] = avg.conj();
        }
        m[(j, j)] = C64::new(m[(j, j)].re, 0.0);
    }
    let trace = m.trace().re;
    if (trace - 1.0).abs() > 1e-8 {
        return Err(Error::Unstable(format!(
            "displacement by {alpha} changed the trace to {trace}"
        )));
    }
    Ok(DensityOperator::from_checked_parts(m, Space::Field))
}

/// Smallest n such that every population from n upward is below `threshold`,
/// clamped to 1..=n_max.
pub fn series_cutoff(populations: &[f64], threshold: f64) -> usize {
    let n_max = populations.len().saturating_sub(1).max(1);
    let last_above = populations
        .iter()
        .rposition(|&p| p >= threshold)
        .unwrap_or(0);
    (last_above + 1).clamp(1, n_max)
}

/// Exact three-point probe curves for every doublet of one displaced state.
/// Independent of the RNG seed, so it can be reused across sampling runs.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedPoint {
    pub alpha: C64,
    /// Populations of the displaced state.
    pub populations: Vec<f64>,
    pub n_cut: usize,
    /// Exact P_e at (0, τ, 2τ) on doublets 1..=n_cut.
    pub curves: Vec<[f64; 3]>,
}

impl PreparedPoint {
    pub fn new(rho_f: &DensityOperator, alpha: C64, settings: &SampledSettings) -> Result<Self> {
        let displaced = displace_state(rho_f, alpha)?;
        let populations = fock_distribution(&displaced)?;
        let n_max = displaced.truncation().n_max();
        let n_cut = settings
            .n_cut
            .unwrap_or_else(|| series_cutoff(&populations, settings.tail_threshold))
            .clamp(1, n_max);
        let curves = (1..=n_cut)
            .map(|n| {
                exact_probabilities(
                    &displaced,
                    n,
                    &settings.channels,
                    settings.measurement.tau,
                    settings.dt,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            alpha,
            populations,
            n_cut,
            curves,
        })
    }

    fn estimates(&self, cfg: &MeasurementConfig, stream: u64) -> Vec<(usize, f64, f64)> {
        let cfg = cfg.with_seed(derive_seed(cfg.seed, &[stream]));
        self.curves
            .iter()
            .enumerate()
            .map(|(i, &curve)| {
                let e = estimate_from_probabilities(i + 1, curve, &cfg, 0);
                (e.n, e.p_hat, e.variance)
            })
            .collect()
    }

    pub fn q(&self, cfg: &MeasurementConfig, stream: u64) -> PointValue {
        let est = self.estimates(cfg, stream);
        let sum: f64 = est.iter().map(|e| e.1).sum();
        let var: f64 = est.iter().map(|e| e.2).sum();
        PointValue {
            value: 1.0 - sum,
            error_bar: var.sqrt(),
            exact: self.populations[0],
        }
    }

    pub fn wigner(&self, cfg: &MeasurementConfig, stream: u64) -> PointValue {
        // 2(P̂₀ + Σ(−1)ⁿP̂ₙ) with P̂₀ = 1 − ΣP̂ₙ collapses to 2 − 4Σ_odd P̂ₙ.
        let odd: Vec<_> = self
            .estimates(cfg, stream)
            .into_iter()
            .filter(|e| e.0 % 2 == 1)
            .collect();
        let sum: f64 = odd.iter().map(|e| e.1).sum();
        let var: f64 = odd.iter().map(|e| e.2).sum();
        PointValue {
            value: 2.0 - 4.0 * sum,
            error_bar: 4.0 * var.sqrt(),
            exact: alternating_sum(&self.populations),
        }
    }
}

fn alternating_sum(populations: &[f64]) -> f64 {
    2.0 * populations
        .iter()
        .enumerate()
        .map(|(n, p)| if n % 2 == 0 { *p } else { -*p })
        .sum::<f64>()
}

/// Q(α). `stream` selects the RNG substream in sampled mode.
pub fn q_point(rho_f: &DensityOperator, alpha: C64, mode: &Mode, stream: u64) -> Result<PointValue> {
    point(rho_f, alpha, mode, stream, QuasiKind::Q)
}

/// W(α) by the alternating population series.
pub fn wigner_point(rho_f: &DensityOperator, alpha: C64, mode: &Mode, stream: u64) -> Result<PointValue> {
    point(rho_f, alpha, mode, stream, QuasiKind::Wigner)
}

fn point(rho_f: &DensityOperator, alpha: C64, mode: &Mode, stream: u64, kind: QuasiKind) -> Result<PointValue> {
    match mode {
        Mode::Ideal => {
            let pops = fock_distribution(&displace_state(rho_f, alpha)?)?;
            let exact = match kind {
                QuasiKind::Q => pops[0],
                QuasiKind::Wigner => alternating_sum(&pops),
            };
            Ok(PointValue {
                value: exact,
                error_bar: 0.0,
                exact,
            })
        }
        Mode::Sampled(settings) => {
            let prepared = PreparedPoint::new(rho_f, alpha, settings)?;
            Ok(match kind {
                QuasiKind::Q => prepared.q(&settings.measurement, stream),
                QuasiKind::Wigner => prepared.wigner(&settings.measurement, stream),
            })
        }
    }
}

/// 2 Tr[D(−α) ρ_f D(−α)† Π̂] with Π̂ = diag((−1)ⁿ), computed as a trace.
pub fn wigner_parity_oracle(rho_f: &DensityOperator, alpha: C64) -> Result<f64> {
    let displaced = displace_state(rho_f, alpha)?;
    let parity = parity_operator(displaced.truncation());
    Ok(2.0 * displaced.expectation(&parity)?.re)
}

/// Values of W or Q over a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct QuasiProbMap {
    pub grid: PhaseSpaceGrid,
    pub kind: QuasiKind,
    pub sampled: bool,
    pub points: Vec<C64>,
    pub values: Vec<PointValue>,
}

impl QuasiProbMap {
    /// Index and location of the largest value.
    pub fn argmax(&self) -> Option<(usize, C64)> {
        self.values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.value.total_cmp(&b.1.value))
            .map(|(i, _)| (i, self.points[i]))
    }

    /// Points where the sampled value and the exact value differ by more
    /// than `k` error bars.
    pub fn outliers(&self, k: f64) -> usize {
        self.values
            .iter()
            .filter(|v| (v.value - v.exact).abs() > k * v.error_bar)
            .count()
    }

    /// (1/π)·Σ value·cell area.
    pub fn integral_over_pi(&self) -> f64 {
        self.values.iter().map(|v| v.value).sum::<f64>() * self.grid.cell_area()
            / std::f64::consts::PI
    }
}

/// Evaluates every grid point independently. Point i uses RNG substream i.
pub fn scan_grid(
    rho_f: &DensityOperator,
    grid: &PhaseSpaceGrid,
    kind: QuasiKind,
    mode: &Mode,
) -> Result<QuasiProbMap> {
    rho_f.require(Space::Field)?;
    grid.validate(rho_f.truncation())?;
    let points = grid.points();
    let values = points
        .par_iter()
        .enumerate()
        .map(|(i, &alpha)| point(rho_f, alpha, mode, i as u64, kind))
        .collect::<Result<Vec<_>>>()?;
    Ok(QuasiProbMap {
        grid: *grid,
        kind,
        sampled: matches!(mode, Mode::Sampled(_)),
        points,
        values,
    })
}
