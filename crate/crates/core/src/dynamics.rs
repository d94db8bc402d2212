//! Probe–oscillator Hamiltonians and the Lindblad master equation.
//!
//! Time is measured in units of the effective coupling, τ = Ωt, and every
//! rate (Hamiltonian entries, decay constants) is expressed in units of Ω.

use crate::error::{Error, Result};
use crate::hilbert::{
    self, embed_field, ensure_dim, hermiticity_defect, is_positive_semidefinite, probe_excited,
    probe_field_embed, probe_ground, probe_lowering, probe_raising, C64, DensityOperator, Matrix,
    OperatorMatrix, Space, Tolerances, Truncation,
};

/// Largest allowed `dt × (generator norm bound)`.
pub const MAX_STEP_STIFFNESS: f64 = 0.1;

/// Which probe–field coupling to simulate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HamiltonianSpec {
    /// Resonant flip-flop restricted to the doublet {|g,N⟩, |e,N−1⟩}.
    Selective { n: usize, omega: f64 },
    /// Full adiabatically-reduced coupling with both Stark shifts and a probe
    /// frequency offset `offset` (δ).
    Effective {
        omega1: f64,
        omega2: f64,
        detuning: f64,
        offset: f64,
    },
}

impl HamiltonianSpec {
    pub fn selective(n: usize, omega: f64) -> Result<Self> {
        if n < 1 {
            return Err(Error::invalid("n", "selective doublet index must be ≥ 1"));
        }
        if !(omega > 0.0) || !omega.is_finite() {
            return Err(Error::invalid("omega", "must be positive"));
        }
        Ok(Self::Selective { n, omega })
    }

    pub fn effective(omega1: f64, omega2: f64, detuning: f64, offset: f64) -> Result<Self> {
        if !(omega1 > 0.0) || !(omega2 > 0.0) || !omega1.is_finite() || !omega2.is_finite() {
            return Err(Error::invalid("omega1/omega2", "Rabi frequencies must be positive"));
        }
        if detuning == 0.0 || !detuning.is_finite() {
            return Err(Error::invalid("detuning", "must be finite and non-zero"));
        }
        if !offset.is_finite() {
            return Err(Error::invalid("offset", "must be finite"));
        }
        Ok(Self::Effective {
            omega1,
            omega2,
            detuning,
            offset,
        })
    }

    /// Effective Hamiltonian with the offset chosen so that |g,N⟩ and
    /// |e,N−1⟩ are degenerate under the diagonal Stark terms.
    pub fn effective_tuned(omega1: f64, omega2: f64, detuning: f64, target: usize) -> Result<Self> {
        if target < 1 {
            return Err(Error::invalid("target", "doublet index must be ≥ 1"));
        }
        let offset = tuning_offset(omega1, omega2, detuning, target);
        Self::effective(omega1, omega2, detuning, offset)
    }

    /// Tuned effective Hamiltonian with Ω = 1 and Ω₂/Ω₁ = `ratio`.
    pub fn effective_at_ratio(ratio: f64, target: usize) -> Result<Self> {
        // Ω₁ = 1, Ω₂ = r, Δ = r gives Ω₁Ω₂/Δ = 1.
        Self::effective_tuned(1.0, ratio, ratio, target)
    }

    /// Effective JC coupling Ω (Ω₁Ω₂/Δ for the effective variant).
    pub fn coupling(&self) -> f64 {
        match *self {
            Self::Selective { omega, .. } => omega,
            Self::Effective {
                omega1,
                omega2,
                detuning,
                ..
            } => omega1 * omega2 / detuning,
        }
    }

    /// Smallest dominant frequency ω = Ω₂²/Δ of the effective dynamics.
    pub fn dominant_frequency(&self) -> Option<f64> {
        match *self {
            Self::Selective { .. } => None,
            Self::Effective {
                omega2, detuning, ..
            } => Some(omega2 * omega2 / detuning),
        }
    }

    /// Ω/ω, the lower limit on the dimensionless sampling step.
    pub fn omega_ratio(&self) -> Option<f64> {
        self.dominant_frequency().map(|w| self.coupling() / w)
    }

    pub fn offset(&self) -> Option<f64> {
        match *self {
            Self::Selective { .. } => None,
            Self::Effective { offset, .. } => Some(offset),
        }
    }
}

/// δ = (Ω₁² − (N−1)Ω₂²)/Δ
pub fn tuning_offset(omega1: f64, omega2: f64, detuning: f64, target: usize) -> f64 {
    (omega1 * omega1 - (target as f64 - 1.0) * omega2 * omega2) / detuning
}

/// Hamiltonian on probe⊗field in units of ħΩ.
pub fn build_hamiltonian(spec: &HamiltonianSpec, trunc: Truncation) -> Result<OperatorMatrix> {
    match *spec {
        HamiltonianSpec::Selective { n, .. } => {
            if n < 1 || n > trunc.n_max() {
                return Err(Error::invalid(
                    "n",
                    format!("selective doublet N = {n} outside 1..={}", trunc.n_max()),
                ));
            }
            let root = C64::new((n as f64).sqrt(), 0.0);
            let down = probe_field_embed(
                &probe_lowering(),
                &hilbert::fock_transition(trunc, n, n - 1)?,
            )?;
            let up = down.dagger();
            Ok(down.add(&up)?.scale(root))
        }
        HamiltonianSpec::Effective {
            omega1,
            omega2,
            detuning,
            offset,
        } => {
            let omega = omega1 * omega2 / detuning;
            let d = trunc.field_dim();
            let a = hilbert::annihilation_operator(trunc);
            let field_id = OperatorMatrix::identity(d);
            let stark_g = probe_field_embed(&probe_ground(), &field_id)?
                .scale(C64::new(omega1 * omega1 / detuning, 0.0));
            let stark_e = probe_field_embed(&probe_excited(), &hilbert::number_operator(trunc))?
                .scale(C64::new(omega2 * omega2 / detuning, 0.0));
            let hop = probe_field_embed(&probe_lowering(), &a.dagger())?
                .add(&probe_field_embed(&probe_raising(), &a)?)?
                .scale(C64::new(omega, 0.0));
            let shift = probe_field_embed(&probe_excited(), &field_id)?.scale(C64::new(offset, 0.0));
            let total = stark_g.add(&stark_e)?.add(&hop)?.add(&shift)?;
            Ok(total.scale(C64::new(1.0 / omega, 0.0)))
        }
    }
}

/// A field-only Lindblad channel Â with rate κ (units of Ω).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseChannel {
    operator: OperatorMatrix,
    kappa: f64,
}

impl NoiseChannel {
    pub fn new(operator: OperatorMatrix, kappa: f64) -> Result<Self> {
        if !(kappa >= 0.0) || !kappa.is_finite() {
            return Err(Error::invalid("kappa", format!("{kappa} is not a valid rate")));
        }
        if operator.dim() < 2 {
            return Err(Error::invalid("operator", "field operator needs dimension ≥ 2"));
        }
        Ok(Self { operator, kappa })
    }

    /// Zero-temperature amplitude damping, Â = â.
    pub fn damping(trunc: Truncation, kappa: f64) -> Result<Self> {
        Self::new(hilbert::annihilation_operator(trunc), kappa)
    }

    /// Diagonal jump operator, e.g. `[0, 1, 2, …]` for number dephasing.
    pub fn diagonal(diagonal: &[f64], kappa: f64) -> Result<Self> {
        let diag: Vec<C64> = diagonal.iter().map(|&x| C64::new(x, 0.0)).collect();
        Self::new(OperatorMatrix::from_diagonal(&diag), kappa)
    }

    pub fn operator(&self) -> &OperatorMatrix {
        &self.operator
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }
}

/// Step size and horizon for fixed-step integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolutionConfig {
    pub dt: f64,
    pub t_end: f64,
}

impl EvolutionConfig {
    pub fn new(dt: f64, t_end: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::invalid("dt", "must be positive"));
        }
        if !(t_end >= 0.0) || !t_end.is_finite() {
            return Err(Error::invalid("t_end", "must be non-negative"));
        }
        if t_end > 0.0 && dt > t_end {
            return Err(Error::invalid("dt", format!("dt = {dt} exceeds t_end = {t_end}")));
        }
        Ok(Self { dt, t_end })
    }
}

/// Nonzero entries of a dense operator, used to apply sparse Hamiltonians and
/// jump operators without full matrix products.
#[derive(Debug, Clone)]
struct Entries(Vec<(usize, usize, C64)>);

impl Entries {
    fn of(m: &Matrix) -> Self {
        let mut out = Vec::new();
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                let v = m[(i, j)];
                if v != C64::new(0.0, 0.0) {
                    out.push((i, j, v));
                }
            }
        }
        Self(out)
    }

    /// out += coeff · A · x
    fn left_mul_add(&self, x: &Matrix, coeff: C64, out: &mut Matrix) {
        let cols = x.ncols();
        for &(i, j, v) in &self.0 {
            let w = coeff * v;
            for c in 0..cols {
                out[(i, c)] += w * x[(j, c)];
            }
        }
    }

    /// out += coeff · x · A
    fn right_mul_add(&self, x: &Matrix, coeff: C64, out: &mut Matrix) {
        let rows = x.nrows();
        for &(i, j, v) in &self.0 {
            let w = coeff * v;
            let src = x.column(i);
            let mut dst = out.column_mut(j);
            for r in 0..rows {
                dst[r] += w * src[r];
            }
        }
    }
}

/// Rough 2-norm bound √(‖A‖₁‖A‖∞).
fn norm_bound(m: &Matrix) -> f64 {
    let col = (0..m.ncols())
        .map(|j| m.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max);
    let row = (0..m.nrows())
        .map(|i| m.row(i).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max);
    (col * row).sqrt()
}

#[derive(Debug, Clone)]
struct ChannelTerms {
    kappa: f64,
    jump: Entries,
    jump_dag: Entries,
    decay: Entries,
    decay_norm: f64,
}

/// The Lindblad generator ρ ↦ −i[H, ρ] + Σ κ(ÂρÂ† − ½{Â†Â, ρ}) on a fixed space.
#[derive(Debug, Clone)]
pub struct Generator {
    dim: usize,
    hamiltonian: Entries,
    h_norm: f64,
    channels: Vec<ChannelTerms>,
}

impl Generator {
    /// Channel operators are given on the field and are embedded as 𝟙 ⊗ Â
    /// when `space` is the joint space.
    pub fn new(h: &OperatorMatrix, channels: &[NoiseChannel], space: Space) -> Result<Self> {
        let dim = h.dim();
        let trunc = Truncation::from_dim(dim, space)?;
        let mut terms = Vec::with_capacity(channels.len());
        for ch in channels {
            ensure_dim(trunc.field_dim(), ch.operator.dim())?;
            if ch.kappa == 0.0 {
                continue;
            }
            let op = match space {
                Space::Field => ch.operator.clone(),
                Space::Joint => embed_field(&ch.operator)?,
            };
            let m = op.into_matrix();
            let dag = m.adjoint();
            let decay = &dag * &m;
            terms.push(ChannelTerms {
                kappa: ch.kappa,
                decay_norm: norm_bound(&decay),
                jump: Entries::of(&m),
                jump_dag: Entries::of(&dag),
                decay: Entries::of(&decay),
            });
        }
        Ok(Self {
            dim,
            h_norm: norm_bound(h.as_matrix()),
            hamiltonian: Entries::of(h.as_matrix()),
            channels: terms,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Spectral-radius estimate 2‖H‖ + Σ κ‖Â†Â‖ (the largest decay rate of
    /// the dissipator is set by the anticommutator part).
    pub fn norm_bound(&self) -> f64 {
        2.0 * self.h_norm
            + self
                .channels
                .iter()
                .map(|c| c.kappa * c.decay_norm)
                .sum::<f64>()
    }

    pub fn apply(&self, rho: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(self.dim, self.dim);
        self.apply_into(rho, &mut out);
        out
    }

    fn apply_into(&self, rho: &Matrix, out: &mut Matrix) {
        out.fill(C64::new(0.0, 0.0));
        let i = C64::i();
        self.hamiltonian.left_mul_add(rho, -i, out);
        self.hamiltonian.right_mul_add(rho, i, out);
        let mut scratch = Matrix::zeros(self.dim, self.dim);
        for ch in &self.channels {
            scratch.fill(C64::new(0.0, 0.0));
            ch.jump.left_mul_add(rho, C64::new(1.0, 0.0), &mut scratch);
            ch.jump_dag.right_mul_add(&scratch, C64::new(ch.kappa, 0.0), out);
            let half = C64::new(-0.5 * ch.kappa, 0.0);
            ch.decay.left_mul_add(rho, half, out);
            ch.decay.right_mul_add(rho, half, out);
        }
    }
}

/// dρ/dτ for the master equation.
pub fn lindblad_apply(
    rho: &DensityOperator,
    h: &OperatorMatrix,
    channels: &[NoiseChannel],
) -> Result<Matrix> {
    ensure_dim(rho.dim(), h.dim())?;
    let gen = Generator::new(h, channels, rho.space())?;
    Ok(gen.apply(rho.matrix()))
}

/// Fixed-step classical Runge–Kutta integrator for a fixed generator.
#[derive(Debug, Clone)]
pub struct Propagator {
    generator: Generator,
    space: Space,
    tolerances: Tolerances,
}

impl Propagator {
    pub fn new(h: &OperatorMatrix, channels: &[NoiseChannel], space: Space) -> Result<Self> {
        Ok(Self {
            generator: Generator::new(h, channels, space)?,
            space,
            tolerances: Tolerances::default(),
        })
    }

    pub fn from_spec(
        spec: &HamiltonianSpec,
        channels: &[NoiseChannel],
        trunc: Truncation,
    ) -> Result<Self> {
        let h = build_hamiltonian(spec, trunc)?;
        Self::new(&h, channels, Space::Joint)
    }

    pub fn with_tolerances(mut self, tolerances: Tolerances) -> Self {
        self.tolerances = tolerances;
        self
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    fn check_step(&self, dt: f64) -> Result<()> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::invalid("dt", "must be positive"));
        }
        let stiffness = dt * self.generator.norm_bound();
        if stiffness > MAX_STEP_STIFFNESS {
            return Err(Error::invalid(
                "dt",
                format!(
                    "dt·‖L‖ = {stiffness:.3} exceeds {MAX_STEP_STIFFNESS}; use dt ≤ {:.3e}",
                    MAX_STEP_STIFFNESS / self.generator.norm_bound()
                ),
            ));
        }
        Ok(())
    }

    fn check_input(&self, rho0: &DensityOperator) -> Result<()> {
        rho0.require(self.space)?;
        ensure_dim(self.generator.dim, rho0.dim())
    }

    /// ρ(t_end).
    pub fn evolve(&self, rho0: &DensityOperator, cfg: &EvolutionConfig) -> Result<DensityOperator> {
        self.check_input(rho0)?;
        self.check_step(cfg.dt)?;
        let mut state = Stepper::new(&self.generator, rho0.matrix().clone());
        state.advance_to(cfg.t_end, cfg.dt);
        self.finish(state.rho, cfg.t_end)
    }

    /// Integrates once through the ascending `times`, calling `observe` on ρ
    /// at each of them.
    pub fn sample<T>(
        &self,
        rho0: &DensityOperator,
        times: &[f64],
        dt: f64,
        mut observe: impl FnMut(&Matrix) -> T,
    ) -> Result<Vec<T>> {
        self.check_input(rho0)?;
        self.check_step(dt)?;
        check_times(times)?;
        let mut state = Stepper::new(&self.generator, rho0.matrix().clone());
        let mut out = Vec::with_capacity(times.len());
        for &t in times {
            state.advance_to(t, dt);
            if !state.rho.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
                return Err(Error::Unstable(format!("non-finite state at τ = {t}")));
            }
            out.push(observe(&state.rho));
        }
        let t_last = times.last().copied().unwrap_or(0.0);
        self.finish(state.rho, t_last)?;
        Ok(out)
    }

    fn finish(&self, rho: Matrix, t: f64) -> Result<DensityOperator> {
        let tol = &self.tolerances;
        let herm = hermiticity_defect(&rho);
        let trace = rho.trace();
        if !(herm <= tol.hermitian) || !((trace - C64::new(1.0, 0.0)).norm() <= tol.trace) {
            return Err(Error::Unstable(format!(
                "at τ = {t}: trace {trace}, hermiticity defect {herm:e}"
            )));
        }
        if !is_positive_semidefinite(&rho, tol.positivity) {
            return Err(Error::Unstable(format!(
                "at τ = {t}: minimum eigenvalue {:e}",
                hilbert::min_eigenvalue(&rho)
            )));
        }
        Ok(DensityOperator::from_checked_parts(rho, self.space))
    }
}

fn check_times(times: &[f64]) -> Result<()> {
    if let Some(&first) = times.first() {
        if !(first >= 0.0) {
            return Err(Error::invalid("times", "must start at τ ≥ 0"));
        }
    }
    if times.windows(2).any(|w| !(w[1] >= w[0])) || times.iter().any(|t| !t.is_finite()) {
        return Err(Error::invalid("times", "must be finite and ascending"));
    }
    Ok(())
}

/// y += a·x
fn axpy(y: &mut Matrix, a: C64, x: &Matrix) {
    for (yi, xi) in y.as_mut_slice().iter_mut().zip(x.as_slice()) {
        *yi += a * xi;
    }
}

struct Stepper<'a> {
    gen: &'a Generator,
    rho: Matrix,
    t: f64,
    k: [Matrix; 4],
    tmp: Matrix,
}

impl<'a> Stepper<'a> {
    fn new(gen: &'a Generator, rho: Matrix) -> Self {
        let d = gen.dim;
        let z = || Matrix::zeros(d, d);
        Self {
            gen,
            rho,
            t: 0.0,
            k: [z(), z(), z(), z()],
            tmp: z(),
        }
    }

    /// Advances with equal steps no longer than `dt`, landing exactly on `target`.
    fn advance_to(&mut self, target: f64, dt: f64) {
        let span = target - self.t;
        if span <= 0.0 {
            return;
        }
        let steps = ((span / dt) - 1e-9).ceil().max(1.0) as usize;
        let h = span / steps as f64;
        for _ in 0..steps {
            self.step(h);
        }
        self.t = target;
    }

    fn step(&mut self, h: f64) {
        let half = C64::new(0.5 * h, 0.0);
        let full = C64::new(h, 0.0);
        let [k1, k2, k3, k4] = &mut self.k;

        self.gen.apply_into(&self.rho, k1);
        self.tmp.copy_from(&self.rho);
        axpy(&mut self.tmp, half, k1);
        self.gen.apply_into(&self.tmp, k2);
        self.tmp.copy_from(&self.rho);
        axpy(&mut self.tmp, half, k2);
        self.gen.apply_into(&self.tmp, k3);
        self.tmp.copy_from(&self.rho);
        axpy(&mut self.tmp, full, k3);
        self.gen.apply_into(&self.tmp, k4);

        let sixth = C64::new(h / 6.0, 0.0);
        let third = C64::new(h / 3.0, 0.0);
        axpy(&mut self.rho, sixth, k1);
        axpy(&mut self.rho, third, k2);
        axpy(&mut self.rho, third, k3);
        axpy(&mut self.rho, sixth, k4);

        // ρ ← (ρ + ρ†)/2
        let d = self.rho.nrows();
        for j in 0..d {
            for i in 0..j {
                let avg = (self.rho[(i, j)] + self.rho[(j, i)].conj()) * 0.5;
                self.rho[(i, j)] = avg;
                self.rho[(j, i)] = avg.conj();
            }
            let diag = self.rho[(j, j)];
            self.rho[(j, j)] = C64::new(diag.re, 0.0);
        }
    }
}

/// ρ(τ = t_end) for a joint initial state.
pub fn evolve(
    rho0: &DensityOperator,
    spec: &HamiltonianSpec,
    channels: &[NoiseChannel],
    cfg: &EvolutionConfig,
) -> Result<DensityOperator> {
    rho0.require(Space::Joint)?;
    Propagator::from_spec(spec, channels, rho0.truncation())?.evolve(rho0, cfg)
}

/// P_e = Tr[ρ (|e⟩⟨e| ⊗ 𝟙)].
pub fn probe_excitation(rho: &DensityOperator) -> Result<f64> {
    rho.require(Space::Joint)?;
    Ok(excited_population(rho.matrix()))
}

pub(crate) fn excited_population(m: &Matrix) -> f64 {
    let d = m.nrows() / 2;
    (d..2 * d).map(|k| m[(k, k)].re).sum()
}

/// P_e at each of the ascending `times` from one continuous integration.
pub fn pe_trajectory(
    rho0: &DensityOperator,
    spec: &HamiltonianSpec,
    channels: &[NoiseChannel],
    times: &[f64],
    dt: f64,
) -> Result<Vec<(f64, f64)>> {
    rho0.require(Space::Joint)?;
    let prop = Propagator::from_spec(spec, channels, rho0.truncation())?;
    let values = prop.sample(rho0, times, dt, excited_population)?;
    Ok(times.iter().copied().zip(values).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{fock_state, ground_with_field, max_abs, mixture, number_operator, partial_trace_probe};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn t(n: usize) -> Truncation {
        Truncation::new(n).unwrap()
    }

    #[test]
    fn selective_matrix_elements() {
        let tr = t(4);
        let d = tr.field_dim();
        // joint index of |g,n⟩ is n, of |e,n⟩ is d + n.
        let h1 = build_hamiltonian(&HamiltonianSpec::selective(1, 1.0).unwrap(), tr).unwrap();
        assert_abs_diff_eq!(h1.get(d, 1).re, 1.0);
        assert_abs_diff_eq!(h1.get(d + 1, 2).norm(), 0.0);
        let h2 = build_hamiltonian(&HamiltonianSpec::selective(2, 1.0).unwrap(), tr).unwrap();
        assert_abs_diff_eq!(h2.get(d + 1, 2).re, 2f64.sqrt(), epsilon = 1e-15);
        assert!(h2.is_hermitian(0.0));
        let nonzero = h2.as_matrix().iter().filter(|z| z.norm() > 0.0).count();
        assert_eq!(nonzero, 2);
    }

    #[test]
    fn selective_rejects_doublet_beyond_truncation() {
        let spec = HamiltonianSpec::selective(5, 1.0).unwrap();
        assert!(build_hamiltonian(&spec, t(4)).is_err());
        assert!(HamiltonianSpec::selective(0, 1.0).is_err());
    }

    #[test]
    fn effective_is_hermitian_and_tuned() {
        let tr = t(5);
        let spec = HamiltonianSpec::effective_tuned(1.0, 20.0, 100.0, 2).unwrap();
        assert_abs_diff_eq!(spec.coupling(), 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(spec.dominant_frequency().unwrap(), 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(spec.omega_ratio().unwrap(), 0.05, epsilon = 1e-15);
        let h = build_hamiltonian(&spec, tr).unwrap();
        assert!(h.is_hermitian(1e-12));
        let d = tr.field_dim();
        // |g,2⟩ and |e,1⟩ degenerate
        assert_abs_diff_eq!(h.get(2, 2).re, h.get(d + 1, d + 1).re, epsilon = 1e-9);
        assert!(HamiltonianSpec::effective(1.0, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn lindblad_output_is_traceless_and_hermitian() {
        let tr = t(3);
        let rho_f = mixture(&[(0.3, fock_state(tr, 1).unwrap()), (0.7, crate::hilbert::coherent_state(tr, C64::new(0.4, 0.2)).unwrap())]).unwrap();
        let rho = ground_with_field(&rho_f).unwrap();
        let h = build_hamiltonian(&HamiltonianSpec::selective(1, 1.0).unwrap(), tr).unwrap();
        let ch = [NoiseChannel::damping(tr, 1.3).unwrap()];
        let out = lindblad_apply(&rho, &h, &ch).unwrap();
        assert!(out.trace().norm() < 1e-10);
        assert!(hermiticity_defect(&out) < 1e-12);
    }

    #[test]
    fn lindblad_damping_rate() {
        let tr = t(3);
        let rho = fock_state(tr, 1).unwrap();
        let h = OperatorMatrix::zeros(4);
        let ch = [NoiseChannel::damping(tr, 1.0).unwrap()];
        let out = lindblad_apply(&rho, &h, &ch).unwrap();
        let dn: C64 = (&out * number_operator(tr).as_matrix()).trace();
        assert_abs_diff_eq!(dn.re, -1.0, epsilon = 1e-14);
    }

    #[test]
    fn lindblad_without_channels_is_commutator() {
        let tr = t(2);
        let rho = ground_with_field(&crate::hilbert::coherent_state(tr, C64::new(0.3, 0.0)).unwrap()).unwrap();
        let h = build_hamiltonian(&HamiltonianSpec::selective(2, 1.0).unwrap(), tr).unwrap();
        let out = lindblad_apply(&rho, &h, &[]).unwrap();
        let hm = h.as_matrix();
        let expect = (hm * rho.matrix() - rho.matrix() * hm) * (-C64::i());
        assert!(max_abs(&(out - expect)) < 1e-15);
    }

    #[test]
    fn evolve_zero_time_is_identity() {
        let tr = t(3);
        let rho = ground_with_field(&fock_state(tr, 1).unwrap()).unwrap();
        let cfg = EvolutionConfig::new(1e-3, 0.0).unwrap();
        let out = evolve(&rho, &HamiltonianSpec::selective(1, 1.0).unwrap(), &[], &cfg).unwrap();
        assert_eq!(out, rho);
    }

    #[test]
    fn evolve_rabi_half_period() {
        let tr = t(3);
        let rho = ground_with_field(&fock_state(tr, 1).unwrap()).unwrap();
        let cfg = EvolutionConfig::new(1e-3, PI / 2.0).unwrap();
        let out = evolve(&rho, &HamiltonianSpec::selective(1, 1.0).unwrap(), &[], &cfg).unwrap();
        assert_abs_diff_eq!(probe_excitation(&out).unwrap(), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn evolve_pure_damping() {
        let tr = t(3);
        let rho = ground_with_field(&fock_state(tr, 1).unwrap()).unwrap();
        let prop = Propagator::new(
            &OperatorMatrix::zeros(8),
            &[NoiseChannel::damping(tr, 1.0).unwrap()],
            Space::Joint,
        )
        .unwrap();
        let out = prop.evolve(&rho, &EvolutionConfig::new(1e-3, 1.0).unwrap()).unwrap();
        let field = partial_trace_probe(&out).unwrap();
        let n = field.expectation(&number_operator(tr)).unwrap().re;
        assert_abs_diff_eq!(n, (-1f64).exp(), epsilon = 1e-6);
    }

    #[test]
    fn step_size_guard() {
        let tr = t(10);
        let rho = ground_with_field(&fock_state(tr, 1).unwrap()).unwrap();
        let ch = [NoiseChannel::damping(tr, 20.0).unwrap()];
        let cfg = EvolutionConfig::new(1e-2, 1.0).unwrap();
        let err = evolve(&rho, &HamiltonianSpec::selective(1, 1.0).unwrap(), &ch, &cfg).unwrap_err();
        assert!(matches!(err, Error::InvalidParameter { name: "dt", .. }));
        assert!(EvolutionConfig::new(0.0, 1.0).is_err());
        assert!(EvolutionConfig::new(2.0, 1.0).is_err());
    }

    #[test]
    fn probe_excitation_examples() {
        let tr = t(2);
        let rho_f = fock_state(tr, 2).unwrap();
        assert_eq!(probe_excitation(&ground_with_field(&rho_f).unwrap()).unwrap(), 0.0);
        let excited = DensityOperator::new(probe_excited().as_matrix().kronecker(rho_f.matrix()), Space::Joint).unwrap();
        assert_eq!(probe_excitation(&excited).unwrap(), 1.0);
        let half = (probe_excited().as_matrix() + probe_ground().as_matrix()).kronecker(rho_f.matrix()) * C64::new(0.5, 0.0);
        let mixed = DensityOperator::new(half, Space::Joint).unwrap();
        assert_abs_diff_eq!(probe_excitation(&mixed).unwrap(), 0.5);
        assert!(probe_excitation(&rho_f).is_err());
    }

    #[test]
    fn trajectory_examples() {
        let tr = t(4);
        let rho = ground_with_field(&fock_state(tr, 2).unwrap()).unwrap();
        let spec = HamiltonianSpec::selective(2, 1.0).unwrap();
        assert_eq!(pe_trajectory(&rho, &spec, &[], &[0.0], 1e-3).unwrap(), vec![(0.0, 0.0)]);

        let times: Vec<f64> = (0..=40).map(|k| 0.05 * k as f64).collect();
        for (tau, pe) in pe_trajectory(&rho, &spec, &[], &times, 1e-3).unwrap() {
            assert_abs_diff_eq!(pe, (2f64.sqrt() * tau).sin().powi(2), epsilon = 1e-6);
        }

        let mixed = ground_with_field(
            &mixture(&[(0.25, fock_state(tr, 1).unwrap()), (0.6, fock_state(tr, 2).unwrap()), (0.15, fock_state(tr, 3).unwrap())]).unwrap(),
        )
        .unwrap();
        for (tau, pe) in pe_trajectory(&mixed, &spec, &[], &times, 1e-3).unwrap() {
            assert_abs_diff_eq!(pe, 0.6 * (2f64.sqrt() * tau).sin().powi(2), epsilon = 1e-6);
        }

        assert!(pe_trajectory(&rho, &spec, &[], &[0.2, 0.1], 1e-3).is_err());
    }

    #[test]
    fn unitary_evolution_conserves_purity() {
        let tr = t(6);
        let rho = ground_with_field(&crate::hilbert::coherent_state(tr, C64::new(0.8, 0.3)).unwrap()).unwrap();
        let spec = HamiltonianSpec::effective_at_ratio(5.0, 2).unwrap();
        let cfg = EvolutionConfig::new(5e-4, 2.0).unwrap();
        let out = evolve(&rho, &spec, &[], &cfg).unwrap();
        assert_abs_diff_eq!(out.purity(), 1.0, epsilon = 1e-7);
    }

    #[test]
    fn invariants_hold_under_strong_damping() {
        let tr = t(4);
        let rho = ground_with_field(&crate::hilbert::coherent_state(tr, C64::new(0.9, 0.0)).unwrap()).unwrap();
        let spec = HamiltonianSpec::selective(1, 1.0).unwrap();
        let ch = [NoiseChannel::damping(tr, 20.0).unwrap()];
        let prop = Propagator::from_spec(&spec, &ch, tr).unwrap();
        let times: Vec<f64> = (0..=10).map(|k| k as f64).collect();
        let checks = prop
            .sample(&rho, &times, 1e-3, |m| {
                crate::hilbert::check_density(m, &Tolerances::default()).is_ok()
            })
            .unwrap();
        assert!(checks.into_iter().all(|ok| ok));
    }

    mod props {
        use super::*;
        use crate::hilbert::{fock_state, ground_with_field, mixture};
        use proptest::prelude::*;

        fn field_mixture(weights: &[f64], tr: Truncation) -> DensityOperator {
            let parts: Vec<_> = weights
                .iter()
                .enumerate()
                .map(|(n, &w)| (w, fock_state(tr, n).unwrap()))
                .collect();
            mixture(&parts).unwrap()
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(12))]

            #[test]
            fn density_invariants_hold_under_damping(
                weights in prop::collection::vec(0.01f64..1.0, 4),
                kappa in 0.0f64..20.0,
                n in 1usize..4,
            ) {
                let tr = t(3);
                let rho0 = ground_with_field(&field_mixture(&weights, tr)).unwrap();
                let spec = HamiltonianSpec::selective(n, 1.0).unwrap();
                let ch = [NoiseChannel::damping(tr, kappa).unwrap()];
                // `sample` checks trace, Hermiticity and positivity at the end.
                let times: Vec<f64> = (0..=10).map(|k| k as f64).collect();
                let prop = Propagator::from_spec(&spec, &ch, tr).unwrap();
                let ok = prop
                    .sample(&rho0, &times, 1e-3, |m| crate::hilbert::check_density(m, &Tolerances::default()).is_ok())
                    .unwrap();
                prop_assert!(ok.into_iter().all(|x| x));
            }

            #[test]
            fn purity_conserved_without_noise(
                re in -1.0f64..1.0,
                im in -1.0f64..1.0,
                n in 1usize..5,
            ) {
                let tr = t(6);
                let psi = crate::hilbert::coherent_state(tr, C64::new(re, im)).unwrap();
                let rho0 = ground_with_field(&psi).unwrap();
                let spec = HamiltonianSpec::selective(n, 1.0).unwrap();
                let end = evolve(&rho0, &spec, &[], &EvolutionConfig::new(1e-3, 3.0).unwrap()).unwrap();
                prop_assert!((end.purity() - 1.0).abs() < 1e-7);
            }
        }
    }

}
