//! Batch experiment runner.
//!
//! A run is described by one JSON document ([`RunConfig`]). Every experiment
//! writes `results.csv` (fixed header, floats with 17 significant digits) and
//! `summary.json` (config echo, seed, version, headline numbers) into the
//! output directory; the summary is also printed to stdout. Progress goes to
//! stderr.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dynamics::{build_hamiltonian, pe_trajectory, EvolutionConfig, HamiltonianSpec, NoiseChannel};
use crate::error::{Error, Result};
use crate::hilbert::{
    coherent_state, fock_population, fock_state, ground_with_field, mixture, thermal_state, DensityOperator,
    Truncation, C64,
};
use crate::planner::{
    predicted_variance, required_measurements, tau_window, validate_scaling, validate_shot_scaling, NoiseBudget,
    ScalingFit, ScalingRun,
};
use crate::protocol::{
    derivative_study, estimate_population, scan_populations, selectivity_scan, EstimateKind, MeasurementConfig,
    Shots,
};
use crate::tomography::{scan_grid, AxisRange, Mode, PhaseSpaceGrid, QuasiKind, SampledSettings, DEFAULT_TAIL_THRESHOLD};

pub const CSV_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Parser)]
#[command(name = "fockprobe", version, about = "Simulate curvature-based Fock population and phase-space measurements")]
pub struct Args {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (overrides `output` in the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// RNG seed (overrides `seed` in the config).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Check the configuration and report derived quantities without running.
    #[arg(long)]
    pub validate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Rabi,
    EstimatePn,
    ScanPopulations,
    Wigner,
    Qfunc,
    DerivativeStudy,
    NoiseScaling,
    Plan,
    Selectivity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StateConfig {
    Fock { n: usize },
    Coherent { re: f64, #[serde(default)] im: f64 },
    Thermal { mean: f64 },
    Mixture { components: Vec<MixtureComponent> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub weight: f64,
    pub state: StateConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum HamiltonianConfig {
    Selective {
        n: usize,
        #[serde(default = "one")]
        omega: f64,
    },
    /// Exactly one of `offset` (δ) and `target` (tune δ to doublet N).
    Effective {
        omega1: f64,
        omega2: f64,
        detuning: f64,
        #[serde(default)]
        offset: Option<f64>,
        #[serde(default)]
        target: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ChannelConfig {
    /// Field damping â.
    Damping { kappa: f64 },
    /// Diagonal field operator diag(values).
    CustomDiagonal { diagonal: Vec<f64>, kappa: f64 },
}

/// `"ideal"` or a positive shot count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ShotsConfig {
    Count(u64),
    Named(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementSection {
    pub tau: f64,
    pub shots: ShotsConfig,
    #[serde(default)]
    pub delta_t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionSection {
    pub dt: f64,
    #[serde(default)]
    pub t_end: f64,
    /// Number of equally spaced output times on [0, t_end] (rabi).
    #[serde(default = "default_samples")]
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSection {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub re: AxisSection,
    pub im: AxisSection,
    /// Highest doublet measured in sampled mode (default: from the tail threshold).
    #[serde(default)]
    pub n_cut: Option<usize>,
    #[serde(default = "default_tail")]
    pub tail_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationsSection {
    pub n_list: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    pub tau_ladder: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingSection {
    pub tau_ladder: Vec<f64>,
    pub repeats: usize,
    #[serde(default)]
    pub shot_ladder: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerSection {
    pub q: f64,
    pub third_deriv_bound: f64,
    #[serde(default)]
    pub kappa_max: f64,
    /// Ω/ω; taken from an effective Hamiltonian when absent.
    #[serde(default)]
    pub omega_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectivitySection {
    pub ratios: Vec<f64>,
    pub target: usize,
    pub off_targets: Vec<usize>,
    pub t_end: f64,
    pub sample_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub n_max: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub state: Option<StateConfig>,
    #[serde(default)]
    pub hamiltonian: Option<HamiltonianConfig>,
    #[serde(default)]
    pub channels: Vec<ChannelConfig>,
    #[serde(default)]
    pub measurement: Option<MeasurementSection>,
    #[serde(default)]
    pub evolution: Option<EvolutionSection>,
    #[serde(default)]
    pub grid: Option<GridSection>,
    #[serde(default)]
    pub populations: Option<PopulationsSection>,
    #[serde(default)]
    pub study: Option<StudySection>,
    #[serde(default)]
    pub scaling: Option<ScalingSection>,
    #[serde(default)]
    pub planner: Option<PlannerSection>,
    #[serde(default)]
    pub selectivity: Option<SelectivitySection>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn one() -> f64 {
    1.0
}

fn default_samples() -> usize {
    101
}

fn default_tail() -> f64 {
    DEFAULT_TAIL_THRESHOLD
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    fn truncation(&self) -> Result<Truncation> {
        Truncation::new(self.n_max)
    }

    fn section<'a, T>(&self, value: &'a Option<T>, key: &str) -> Result<&'a T> {
        value.as_ref().ok_or_else(|| {
            Error::Config(format!("experiment `{}` requires the `{key}` section", self.experiment.name()))
        })
    }

    fn field_state(&self) -> Result<DensityOperator> {
        build_state(self.section(&self.state, "state")?, self.truncation()?)
    }

    fn hamiltonian(&self) -> Result<HamiltonianSpec> {
        build_spec(self.section(&self.hamiltonian, "hamiltonian")?)
    }

    /// Doublet index of a selective Hamiltonian.
    fn doublet(&self) -> Result<usize> {
        match self.hamiltonian()? {
            HamiltonianSpec::Selective { n, .. } => {
                build_hamiltonian(&self.hamiltonian()?, self.truncation()?)?;
                Ok(n)
            }
            HamiltonianSpec::Effective { .. } => Err(Error::invalid(
                "hamiltonian",
                format!("experiment `{}` needs the selective coupling", self.experiment.name()),
            )),
        }
    }

    fn channels(&self) -> Result<Vec<NoiseChannel>> {
        let trunc = self.truncation()?;
        self.channels
            .iter()
            .map(|c| match c {
                ChannelConfig::Damping { kappa } => NoiseChannel::damping(trunc, *kappa),
                ChannelConfig::CustomDiagonal { diagonal, kappa } => {
                    if diagonal.len() != trunc.field_dim() {
                        return Err(Error::DimensionMismatch {
                            expected: trunc.field_dim(),
                            found: diagonal.len(),
                        });
                    }
                    NoiseChannel::diagonal(diagonal, *kappa)
                }
            })
            .collect()
    }

    fn measurement(&self) -> Result<MeasurementConfig> {
        let m = self.section(&self.measurement, "measurement")?;
        let shots = match &m.shots {
            ShotsConfig::Count(count) => Shots::Finite(*count),
            ShotsConfig::Named(name) if name == "ideal" => Shots::Ideal,
            ShotsConfig::Named(other) => {
                return Err(Error::Config(format!("`shots` must be a count or \"ideal\", got {other:?}")))
            }
        };
        MeasurementConfig::new(m.tau, shots, m.delta_t, self.seed)
    }

    fn dt(&self) -> Result<f64> {
        let e = self.section(&self.evolution, "evolution")?;
        EvolutionConfig::new(e.dt, e.t_end)?;
        Ok(e.dt)
    }

    fn grid(&self) -> Result<PhaseSpaceGrid> {
        let g = self.section(&self.grid, "grid")?;
        Ok(PhaseSpaceGrid::new(
            AxisRange::new(g.re.min, g.re.max, g.re.count)?,
            AxisRange::new(g.im.min, g.im.max, g.im.count)?,
        ))
    }
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Rabi => "rabi",
            Self::EstimatePn => "estimate-pn",
            Self::ScanPopulations => "scan-populations",
            Self::Wigner => "wigner",
            Self::Qfunc => "qfunc",
            Self::DerivativeStudy => "derivative-study",
            Self::NoiseScaling => "noise-scaling",
            Self::Plan => "plan",
            Self::Selectivity => "selectivity",
        }
    }
}

fn build_state(cfg: &StateConfig, trunc: Truncation) -> Result<DensityOperator> {
    match cfg {
        StateConfig::Fock { n } => fock_state(trunc, *n),
        StateConfig::Coherent { re, im } => coherent_state(trunc, C64::new(*re, *im)),
        StateConfig::Thermal { mean } => thermal_state(trunc, *mean),
        StateConfig::Mixture { components } => {
            let parts = components
                .iter()
                .map(|c| Ok((c.weight, build_state(&c.state, trunc)?)))
                .collect::<Result<Vec<_>>>()?;
            mixture(&parts)
        }
    }
}

fn build_spec(cfg: &HamiltonianConfig) -> Result<HamiltonianSpec> {
    match *cfg {
        HamiltonianConfig::Selective { n, omega } => HamiltonianSpec::selective(n, omega),
        HamiltonianConfig::Effective {
            omega1,
            omega2,
            detuning,
            offset,
            target,
        } => match (offset, target) {
            (Some(offset), None) => HamiltonianSpec::effective(omega1, omega2, detuning, offset),
            (None, Some(target)) => HamiltonianSpec::effective_tuned(omega1, omega2, detuning, target),
            _ => Err(Error::Config(
                "effective hamiltonian needs exactly one of `offset` and `target`".into(),
            )),
        },
    }
}

/// Results of one experiment: CSV rows and headline numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
    pub headline: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(u64),
    Text(&'static str),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Float(x) => format!("{x:.16e}"),
            Cell::Int(n) => n.to_string(),
            Cell::Text(s) => (*s).to_owned(),
        }
    }
}

fn f(x: f64) -> Cell {
    Cell::Float(x)
}

fn int(n: impl Into<u64>) -> Cell {
    Cell::Int(n.into())
}

fn idx(n: usize) -> Cell {
    Cell::Int(n as u64)
}

/// Executes the configured experiment without touching the filesystem.
pub fn execute(cfg: &RunConfig) -> Result<Outcome> {
    match cfg.experiment {
        Experiment::Rabi => rabi(cfg),
        Experiment::EstimatePn => estimate_pn(cfg),
        Experiment::ScanPopulations => populations(cfg),
        Experiment::Wigner => quasi(cfg, QuasiKind::Wigner),
        Experiment::Qfunc => quasi(cfg, QuasiKind::Q),
        Experiment::DerivativeStudy => study(cfg),
        Experiment::NoiseScaling => scaling(cfg),
        Experiment::Plan => plan(cfg),
        Experiment::Selectivity => selectivity(cfg),
    }
}

fn rabi(cfg: &RunConfig) -> Result<Outcome> {
    let spec = cfg.hamiltonian()?;
    let rho_f = cfg.field_state()?;
    let channels = cfg.channels()?;
    let e = cfg.section(&cfg.evolution, "evolution")?;
    EvolutionConfig::new(e.dt, e.t_end)?;
    if e.samples < 2 {
        return Err(Error::invalid("samples", "need at least two output times"));
    }
    let times: Vec<f64> = (0..e.samples)
        .map(|k| e.t_end * k as f64 / (e.samples - 1) as f64)
        .collect();
    let traj = pe_trajectory(&ground_with_field(&rho_f)?, &spec, &channels, &times, e.dt)?;
    let max = traj.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let mut headline = json!({ "max_p_e": max, "final_p_e": traj.last().map(|p| p.1) });
    if let (HamiltonianSpec::Selective { n, .. }, true) = (spec, channels.is_empty()) {
        // Without noise only doublet N moves: P_e = P_N sin²(√N τ).
        let p_n = fock_population(&rho_f, n)?;
        let dev = traj
            .iter()
            .map(|&(t, p)| (p - p_n * ((n as f64).sqrt() * t).sin().powi(2)).abs())
            .fold(0.0, f64::max);
        headline["max_deviation_from_rabi"] = json!(dev);
    }
    Ok(Outcome {
        header: vec!["tau", "p_e"],
        rows: traj.into_iter().map(|(t, p)| vec![f(t), f(p)]).collect(),
        headline,
    })
}

fn estimate_pn(cfg: &RunConfig) -> Result<Outcome> {
    let n = cfg.doublet()?;
    let rho_f = cfg.field_state()?;
    let est = estimate_population(&rho_f, n, &cfg.channels()?, &cfg.measurement()?, cfg.dt()?)?;
    let exact = fock_population(&rho_f, n)?;
    Ok(Outcome {
        header: vec!["n", "p_hat", "variance", "curvature", "p_e_0", "p_e_tau", "p_e_2tau", "exact_population"],
        rows: vec![vec![
            idx(n),
            f(est.p_hat),
            f(est.variance),
            f(est.curvature),
            f(est.raw[0]),
            f(est.raw[1]),
            f(est.raw[2]),
            f(exact),
        ]],
        headline: json!({ "n": n, "p_hat": est.p_hat, "std_dev": est.variance.sqrt(), "exact_population": exact }),
    })
}

fn populations(cfg: &RunConfig) -> Result<Outcome> {
    let rho_f = cfg.field_state()?;
    let n_list: Vec<usize> = match &cfg.populations {
        Some(p) => p.n_list.clone(),
        None => (0..=cfg.n_max).collect(),
    };
    let estimates = scan_populations(&rho_f, &n_list, &cfg.channels()?, &cfg.measurement()?, cfg.dt()?)?;
    let mut rows = Vec::with_capacity(estimates.len());
    let mut max_err = 0.0f64;
    for e in &estimates {
        let exact = fock_population(&rho_f, e.n)?;
        max_err = max_err.max((e.p_hat - exact).abs());
        let kind = match e.kind {
            EstimateKind::Curvature => "curvature",
            EstimateKind::Complement => "complement",
        };
        rows.push(vec![idx(e.n), Cell::Text(kind), f(e.p_hat), f(e.variance), f(exact)]);
    }
    Ok(Outcome {
        header: vec!["n", "kind", "p_hat", "variance", "exact_population"],
        rows,
        headline: json!({ "count": estimates.len(), "max_abs_error": max_err }),
    })
}

fn quasi(cfg: &RunConfig, kind: QuasiKind) -> Result<Outcome> {
    let rho_f = cfg.field_state()?;
    let grid = cfg.grid()?;
    let measurement = cfg.measurement()?;
    let mode = match measurement.shots {
        Shots::Ideal => Mode::Ideal,
        Shots::Finite(_) => {
            let g = cfg.section(&cfg.grid, "grid")?;
            let mut settings = SampledSettings::new(measurement, cfg.dt()?);
            settings.channels = cfg.channels()?;
            settings.n_cut = g.n_cut;
            settings.tail_threshold = g.tail_threshold;
            Mode::Sampled(settings)
        }
    };
    eprintln!("evaluating {} grid points", grid.len());
    let map = scan_grid(&rho_f, &grid, kind, &mode)?;
    let rows = map
        .points
        .iter()
        .zip(&map.values)
        .map(|(a, v)| vec![f(a.re), f(a.im), f(v.value), f(v.value / PI), f(v.error_bar), f(v.exact)])
        .collect();
    let (_, peak) = map.argmax().expect("grid is non-empty");
    Ok(Outcome {
        // `value` has no 1/π (vacuum W(0) = 2); `value_over_pi` is the
        // unit-normalized convention.
        header: vec!["re", "im", "value", "value_over_pi", "error_bar", "exact"],
        rows,
        headline: json!({
            "points": map.points.len(),
            "argmax": [peak.re, peak.im],
            "integral_over_pi": map.integral_over_pi(),
            "beyond_3_sigma": if map.sampled { json!(map.outliers(3.0)) } else { Value::Null },
        }),
    })
}

fn study(cfg: &RunConfig) -> Result<Outcome> {
    let n = cfg.doublet()?;
    let ladder = &cfg.section(&cfg.study, "study")?.tau_ladder;
    let s = derivative_study(&cfg.field_state()?, n, &cfg.channels()?, ladder, cfg.dt()?)?;
    Ok(Outcome {
        header: vec!["tau", "first_difference", "second_difference", "bias"],
        rows: s
            .rows
            .iter()
            .map(|r| vec![f(r.tau), f(r.first_difference), f(r.second_difference), f(r.bias)])
            .collect(),
        headline: json!({
            "first_limit": s.first_limit,
            "second_limit": s.second_limit,
            "population": s.population(),
            "bias_slope": s.bias_slope,
        }),
    })
}

fn scaling(cfg: &RunConfig) -> Result<Outcome> {
    let n = cfg.doublet()?;
    let rho_f = cfg.field_state()?;
    let channels = cfg.channels()?;
    let m = cfg.measurement()?;
    let sec = cfg.section(&cfg.scaling, "scaling")?;
    let Shots::Finite(shots) = m.shots else {
        return Err(Error::invalid("shots", "noise scaling needs a finite shot count"));
    };
    let run = ScalingRun {
        n,
        delta_t: m.delta_t,
        repeats: sec.repeats,
        seed: cfg.seed,
        dt: cfg.dt()?,
    };
    let mut rows = Vec::new();
    let mut push = |sweep: &'static str, fit: &ScalingFit| {
        for p in &fit.points {
            rows.push(vec![
                Cell::Text(sweep),
                f(p.tau),
                int(p.shots),
                f(p.empirical_variance),
                f(p.predicted_variance),
                f(p.ratio()),
            ]);
        }
    };
    eprintln!("tau sweep: {} points x {} repeats", sec.tau_ladder.len(), sec.repeats);
    let by_tau = validate_scaling(&rho_f, &channels, &sec.tau_ladder, shots, &run)?;
    push("tau", &by_tau);
    let mut headline = json!({ "tau_slope": by_tau.slope, "tau_slope_stderr": by_tau.slope_stderr });
    if !sec.shot_ladder.is_empty() {
        eprintln!("shot sweep: {} points x {} repeats", sec.shot_ladder.len(), sec.repeats);
        let by_shots = validate_shot_scaling(&rho_f, &channels, m.tau, &sec.shot_ladder, &run)?;
        push("shots", &by_shots);
        headline["shots_slope"] = json!(by_shots.slope);
        headline["shots_slope_stderr"] = json!(by_shots.slope_stderr);
    }
    Ok(Outcome {
        header: vec!["sweep", "tau", "shots", "empirical_variance", "predicted_variance", "ratio"],
        rows,
        headline,
    })
}

fn window(cfg: &RunConfig, delta_t: f64) -> Result<Option<Value>> {
    let Some(p) = &cfg.planner else { return Ok(None) };
    let ratio = match p.omega_ratio {
        Some(r) => r,
        None => cfg
            .hamiltonian
            .as_ref()
            .map(build_spec)
            .transpose()?
            .and_then(|s| s.omega_ratio())
            .ok_or_else(|| Error::Config("planner needs `omega_ratio` or an effective hamiltonian".into()))?,
    };
    let budget = NoiseBudget::new(delta_t, p.q, p.kappa_max)?;
    let w = tau_window(&budget, p.third_deriv_bound, ratio)?;
    Ok(Some(json!({
        "tau_min": w.tau_min,
        "tau_max": w.tau_max,
        "feasible": w.feasible,
        "m_min_at_tau_max": w.m_min,
        "predicted_variance_at_tau_max": w.predicted_variance,
    })))
}

fn plan(cfg: &RunConfig) -> Result<Outcome> {
    let m = cfg.section(&cfg.measurement, "measurement")?;
    let check = MeasurementConfig::new(m.tau, Shots::Ideal, m.delta_t, cfg.seed)?;
    let m_min = required_measurements(check.tau, check.delta_t);
    let variance = predicted_variance(1.0, check.tau, m_min, check.delta_t);
    let mut headline = json!({ "tau": check.tau, "delta_t": check.delta_t, "m_min": m_min, "predicted_variance": variance });
    if let Some(w) = window(cfg, check.delta_t)? {
        headline["window"] = w;
    }
    Ok(Outcome {
        header: vec!["tau", "delta_t", "m_min", "predicted_variance"],
        rows: vec![vec![f(check.tau), f(check.delta_t), int(m_min), f(variance)]],
        headline,
    })
}

fn selectivity(cfg: &RunConfig) -> Result<Outcome> {
    let s = cfg.section(&cfg.selectivity, "selectivity")?;
    let rows = selectivity_scan(&s.ratios, s.target, &s.off_targets, s.t_end, s.sample_step, cfg.dt()?)?;
    let target: Vec<f64> = rows.iter().filter(|r| r.target).map(|r| r.max_excitation).collect();
    Ok(Outcome {
        header: vec!["ratio", "n", "role", "max_excitation"],
        rows: rows
            .iter()
            .map(|r| {
                let role = if r.target { "target" } else { "off-target" };
                vec![f(r.ratio), idx(r.n), Cell::Text(role), f(r.max_excitation)]
            })
            .collect(),
        headline: json!({ "target_contrast": target }),
    })
}

/// Structural check plus the derived quantities of the configuration.
pub fn validate(cfg: &RunConfig) -> Result<Value> {
    let trunc = cfg.truncation()?;
    let mut report = json!({ "experiment": cfg.experiment.name(), "n_max": cfg.n_max, "valid": true });
    if cfg.state.is_some() {
        cfg.field_state()?;
    }
    cfg.channels()?;
    if let Some(h) = &cfg.hamiltonian {
        let spec = build_spec(h)?;
        build_hamiltonian(&spec, trunc)?;
        report["omega"] = json!(spec.coupling());
        if let HamiltonianSpec::Effective { offset, .. } = spec {
            report["offset"] = json!(offset);
            report["dominant_frequency"] = json!(spec.dominant_frequency());
            report["omega_ratio"] = json!(spec.omega_ratio());
        }
    }
    let delta_t = match &cfg.measurement {
        Some(_) => {
            let m = cfg.measurement()?;
            report["required_measurements"] = json!(required_measurements(m.tau, m.delta_t));
            m.delta_t
        }
        None => 0.0,
    };
    if cfg.evolution.is_some() {
        cfg.dt()?;
    }
    if cfg.grid.is_some() {
        let grid = cfg.grid()?;
        grid.validate(trunc)?;
        report["grid_points"] = json!(grid.len());
    }
    if let Some(w) = window(cfg, delta_t)? {
        report["tau_window"] = w;
    }
    Ok(report)
}

/// Runs the experiment and writes the CSV and summary into `out_dir`.
pub fn run(cfg: &RunConfig, out_dir: &Path) -> Result<Value> {
    eprintln!("running {}", cfg.experiment.name());
    let outcome = execute(cfg)?;
    fs::create_dir_all(out_dir)?;
    let mut writer = csv::Writer::from_path(out_dir.join(CSV_FILE))?;
    writer.write_record(&outcome.header)?;
    for row in &outcome.rows {
        writer.write_record(row.iter().map(Cell::render))?;
    }
    writer.flush()?;
    let summary = json!({
        "experiment": cfg.experiment.name(),
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "config": cfg,
        "results": outcome.headline,
    });
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    fs::write(out_dir.join(SUMMARY_FILE), format!("{text}\n"))?;
    Ok(summary)
}

/// Entry point of the binary; returns the process exit status.
pub fn main_with(args: Args) -> i32 {
    match dispatch(&args) {
        Ok(value) => {
            println!("{}", serde_json::to_string_pretty(&value).unwrap_or_default());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(args: &Args) -> Result<Value> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.output = Some(out.clone());
    }
    if args.validate {
        return validate(&cfg);
    }
    let out = cfg
        .output
        .clone()
        .ok_or_else(|| Error::Config("no output directory: set `output` or pass --out".into()))?;
    run(&cfg, &out)
}
