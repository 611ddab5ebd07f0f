//! Dense spin-operator algebra for the central-spin model.
//!
//! Basis convention: big-endian tensor order with the central spin as the
//! most significant qubit (site 0). Within a basis index, bit value 0 is
//! spin up (σZ = +1) and bit value 1 is spin down. Environment sites are
//! 1..=N in the full system; environment-only operators index them 0..N.
//!
//! Ladder operators follow σ± = σX ± iσY, so ¼(σ₊σ₋ + σ₋σ₊) is the
//! unit-amplitude flip-flop.

mod operator;
mod sector;

pub use operator::{OperatorMatrix, HERMITIAN_TOL, UNITARY_TOL};
pub use sector::{environment_sector_hamiltonian, spin_flip_partner, MagnetizationSector};

use nalgebra::{Complex, DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;

/// Default hard cap on the environment size for dense paths (dim ≤ 8192).
pub const DEFAULT_ORACLE_CAP: usize = 12;

/// Numeric prefactor of the zeroth-order toggling-frame H_SE under MREV-8.
pub const FULL_TOGGLING_PREFACTOR: f64 = 0.36;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

/// A central spin plus `n_env` environment spins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SpinSystem {
    n_env: usize,
}

impl SpinSystem {
    pub fn new(n_env: usize) -> Result<Self> {
        if n_env == 0 {
            return Err(Error::InvalidSystem("at least one environment spin is required".into()));
        }
        if n_env > 30 {
            return Err(Error::InvalidSystem(format!("{n_env} environment spins overflow the basis index")));
        }
        Ok(Self { n_env })
    }

    pub fn n_env(&self) -> usize {
        self.n_env
    }

    pub fn n_sites(&self) -> usize {
        self.n_env + 1
    }

    /// Hilbert-space dimension 2^(N+1).
    pub fn dim(&self) -> usize {
        1 << (self.n_env + 1)
    }

    pub fn env_dim(&self) -> usize {
        1 << self.n_env
    }

    /// Rejects systems above the dense-oracle cap.
    pub fn check_cap(&self, cap: usize) -> Result<()> {
        if self.n_env > cap {
            Err(Error::CapExceeded { n_env: self.n_env, cap })
        } else {
            Ok(())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingUnits {
    /// Angular frequency in rad/s.
    Physical,
    Dimensionless,
}

/// Heteronuclear couplings ω_j and homonuclear couplings Ω_jk for one
/// molecular orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingSet {
    hetero: Vec<f64>,
    homo: DMatrix<f64>,
    units: CouplingUnits,
}

impl CouplingSet {
    pub fn new(hetero: Vec<f64>, homo: DMatrix<f64>, units: CouplingUnits) -> Result<Self> {
        let n = hetero.len();
        if n == 0 {
            return Err(Error::InvalidSystem("empty coupling set".into()));
        }
        if homo.nrows() != n || homo.ncols() != n {
            return Err(Error::LengthMismatch { expected: n, got: homo.nrows() });
        }
        if hetero.iter().chain(homo.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteCoupling);
        }
        let scale = homo.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let mut defect = 0.0f64;
        for j in 0..n {
            defect = defect.max(homo[(j, j)].abs());
            for k in (j + 1)..n {
                defect = defect.max((homo[(j, k)] - homo[(k, j)]).abs());
            }
        }
        if defect > 1e-12 * scale {
            return Err(Error::AsymmetricCouplings { defect });
        }
        Ok(Self { hetero, homo, units })
    }

    /// Heteronuclear-only set (Ω = 0), dimensionless.
    pub fn heteronuclear(hetero: Vec<f64>) -> Result<Self> {
        let n = hetero.len();
        Self::new(hetero, DMatrix::zeros(n, n), CouplingUnits::Dimensionless)
    }

    pub fn n_env(&self) -> usize {
        self.hetero.len()
    }

    pub fn hetero(&self) -> &[f64] {
        &self.hetero
    }

    pub fn homo(&self) -> &DMatrix<f64> {
        &self.homo
    }

    pub fn units(&self) -> CouplingUnits {
        self.units
    }

    /// Same set with every ω_j multiplied by `factor`.
    pub fn scaled_hetero(&self, factor: f64) -> Self {
        Self { hetero: self.hetero.iter().map(|w| w * factor).collect(), homo: self.homo.clone(), units: self.units }
    }

    pub fn with_homo(&self, homo: DMatrix<f64>) -> Result<Self> {
        Self::new(self.hetero.clone(), homo, self.units)
    }

    pub fn max_abs_hetero(&self) -> f64 {
        self.hetero.iter().fold(0.0, |m, w| m.max(w.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "alpha")]
pub enum TogglingMode {
    /// H_SE = Σ ω_j σZ^cs σZ^j.
    Ideal,
    /// Ideal form with ω_j → α ω_j.
    Scaled(f64),
    /// 0.36 Σ ω_j (σZ^cs σX^j + σZ^cs σZ^j).
    FullToggling,
}

/// MREV-8 toggling-frame settings for the system-environment evolution.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TogglingParams {
    /// Pulse length (s).
    pub t_p: f64,
    /// Cycle length (s).
    pub tau_c: f64,
    pub mode: TogglingMode,
}

/// MREV-8 scaling factor α(t_p, τ_c) = √2 (1 + 2·(3 t_p/τ_c)(4/π − 1)) / 3.
pub fn mrev8_scaling(t_p: f64, tau_c: f64) -> Result<f64> {
    if !(t_p.is_finite() && tau_c.is_finite()) || t_p < 0.0 || t_p >= tau_c {
        return Err(Error::InvalidToggling(format!("need 0 <= t_p < tau_c, got t_p={t_p}, tau_c={tau_c}")));
    }
    let alpha = 2f64.sqrt() * (1.0 + 2.0 * (3.0 * t_p / tau_c) * (4.0 / std::f64::consts::PI - 1.0)) / 3.0;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidToggling(format!("alpha = {alpha} outside (0, 1)")));
    }
    Ok(alpha)
}

impl TogglingParams {
    pub fn ideal() -> Self {
        Self { t_p: 0.0, tau_c: 1.0, mode: TogglingMode::Ideal }
    }

    pub fn scaled(alpha: f64) -> Result<Self> {
        let p = Self { t_p: 0.0, tau_c: 1.0, mode: TogglingMode::Scaled(alpha) };
        p.validate()?;
        Ok(p)
    }

    /// Scaled mode with α computed from the MREV-8 timing.
    pub fn mrev8(t_p: f64, tau_c: f64) -> Result<Self> {
        let alpha = mrev8_scaling(t_p, tau_c)?;
        Ok(Self { t_p, tau_c, mode: TogglingMode::Scaled(alpha) })
    }

    pub fn full_toggling(t_p: f64, tau_c: f64) -> Result<Self> {
        let p = Self { t_p, tau_c, mode: TogglingMode::FullToggling };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_p >= 0.0 && self.t_p < self.tau_c) {
            return Err(Error::InvalidToggling(format!(
                "need 0 <= t_p < tau_c, got t_p={}, tau_c={}",
                self.t_p, self.tau_c
            )));
        }
        match self.mode {
            TogglingMode::Scaled(a) if !(a > 0.0 && a.is_finite()) => {
                Err(Error::InvalidToggling(format!("scaling factor {a} must be positive")))
            }
            TogglingMode::FullToggling => mrev8_scaling(self.t_p, self.tau_c).map(|_| ()),
            _ => Ok(()),
        }
    }

    /// Effective scale on ω_j for the σZ production rate.
    pub fn alpha(&self) -> f64 {
        match self.mode {
            TogglingMode::Ideal => 1.0,
            TogglingMode::Scaled(a) => a,
            TogglingMode::FullToggling => mrev8_scaling(self.t_p, self.tau_c).unwrap_or(f64::NAN),
        }
    }

    pub fn is_diagonal(&self) -> bool {
        !matches!(self.mode, TogglingMode::FullToggling)
    }
}

/// Environment interaction used for H_E.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvInteraction {
    /// Σ Ω_jk [σZσZ − ¼(σ₊σ₋ + σ₋σ₊)].
    Dipolar,
    /// ZZ part only (integrable reference, no flip-flop).
    IsingOnly,
}

#[inline]
fn spin_sign(state: usize, site: usize, n_sites: usize) -> f64 {
    if (state >> (n_sites - 1 - site)) & 1 == 0 {
        1.0
    } else {
        -1.0
    }
}

#[inline]
fn site_mask(site: usize, n_sites: usize) -> usize {
    1 << (n_sites - 1 - site)
}

/// Single-site Pauli operator I⊗…⊗σ_axis⊗…⊗I on the full system.
pub fn pauli(site: usize, axis: Axis, sys: &SpinSystem) -> Result<OperatorMatrix> {
    let n = sys.n_sites();
    if site >= n {
        return Err(Error::SiteOutOfRange { site, n_sites: n });
    }
    let dim = sys.dim();
    let mask = site_mask(site, n);
    let mut m = CMatrix::zeros(dim, dim);
    for a in 0..dim {
        let s = spin_sign(a, site, n);
        match axis {
            Axis::Z => m[(a, a)] = C64::new(s, 0.0),
            Axis::X => m[(a ^ mask, a)] = C64::new(1.0, 0.0),
            // σY|↑⟩ = i|↓⟩, σY|↓⟩ = −i|↑⟩
            Axis::Y => m[(a ^ mask, a)] = C64::new(0.0, s),
        }
    }
    Ok(OperatorMatrix::from_parts(m, true, true))
}

fn check_hetero_len(c: &CouplingSet, sys: &SpinSystem) -> Result<()> {
    if c.n_env() != sys.n_env() {
        return Err(Error::LengthMismatch { expected: sys.n_env(), got: c.n_env() });
    }
    Ok(())
}

/// Heteronuclear Hamiltonian H_SE for the requested toggling mode.
pub fn build_h_se(c: &CouplingSet, sys: &SpinSystem, tog: &TogglingParams) -> Result<OperatorMatrix> {
    check_hetero_len(c, sys)?;
    tog.validate()?;
    let n = sys.n_sites();
    let dim = sys.dim();
    let mut m = CMatrix::zeros(dim, dim);
    let (zz_scale, zx_scale) = match tog.mode {
        TogglingMode::Ideal => (1.0, 0.0),
        TogglingMode::Scaled(a) => (a, 0.0),
        TogglingMode::FullToggling => (FULL_TOGGLING_PREFACTOR, FULL_TOGGLING_PREFACTOR),
    };
    for a in 0..dim {
        let cs = spin_sign(a, 0, n);
        let mut diag = 0.0;
        for (j, w) in c.hetero().iter().enumerate() {
            let site = j + 1;
            diag += zz_scale * w * cs * spin_sign(a, site, n);
            if zx_scale != 0.0 {
                let b = a ^ site_mask(site, n);
                m[(b, a)] += C64::new(zx_scale * w * cs, 0.0);
            }
        }
        m[(a, a)] += C64::new(diag, 0.0);
    }
    OperatorMatrix::hermitian(m)
}

/// Echo generator: build_h_se with every ω_j halved, so that spin j picks up
/// the rotation angle α ω_j T over an evolution time T.
pub fn echo_h_se(c: &CouplingSet, sys: &SpinSystem, tog: &TogglingParams) -> Result<OperatorMatrix> {
    build_h_se(&c.scaled_hetero(0.5), sys, tog)
}

/// Collective rotation Π_j exp(iφσX^j/2) on the environment spins, identity on
/// the central spin.
pub fn environment_x_rotation(sys: &SpinSystem, phi: f64) -> OperatorMatrix {
    let dim = sys.dim();
    let env_mask = sys.env_dim() - 1;
    let n = sys.n_env() as i32;
    let (s, c) = (phi / 2.0).sin_cos();
    let mut powers = Vec::with_capacity(sys.n_env() + 1);
    for h in 0..=n {
        powers.push(C64::new(0.0, s).powi(h) * c.powi(n - h));
    }
    let mut m = CMatrix::zeros(dim, dim);
    for col in 0..dim {
        for row in 0..dim {
            let diff = row ^ col;
            if diff & !env_mask == 0 {
                m[(row, col)] = powers[diff.count_ones() as usize];
            }
        }
    }
    OperatorMatrix::from_parts(m, false, true)
}

/// Environment-only H_E (dimension 2^N, real symmetric).
pub fn environment_hamiltonian(c: &CouplingSet, interaction: EnvInteraction) -> DMatrix<f64> {
    let n = c.n_env();
    let dim = 1usize << n;
    let mut h = DMatrix::<f64>::zeros(dim, dim);
    let omega = c.homo();
    for a in 0..dim {
        for j in 0..n {
            for k in (j + 1)..n {
                let w = omega[(j, k)];
                if w == 0.0 {
                    continue;
                }
                let sj = spin_sign(a, j, n);
                let sk = spin_sign(a, k, n);
                h[(a, a)] += w * sj * sk;
                if interaction == EnvInteraction::Dipolar && sj != sk {
                    let b = a ^ site_mask(j, n) ^ site_mask(k, n);
                    h[(b, a)] -= w;
                }
            }
        }
    }
    h
}

/// Environment-only H_E wrapped as an operator on the N environment qubits.
pub fn environment_operator(c: &CouplingSet, interaction: EnvInteraction) -> OperatorMatrix {
    let h = environment_hamiltonian(c, interaction);
    OperatorMatrix::from_parts(h.map(|v| C64::new(v, 0.0)), true, false)
}

/// 𝟙^cs ⊗ H_E on the full system.
pub fn build_h_e(c: &CouplingSet, sys: &SpinSystem) -> Result<OperatorMatrix> {
    build_h_e_with(c, sys, EnvInteraction::Dipolar)
}

pub fn build_h_e_with(c: &CouplingSet, sys: &SpinSystem, interaction: EnvInteraction) -> Result<OperatorMatrix> {
    check_hetero_len(c, sys)?;
    let env = environment_hamiltonian(c, interaction);
    let env_dim = sys.env_dim();
    let dim = sys.dim();
    let mut m = CMatrix::zeros(dim, dim);
    for block in 0..2 {
        let off = block * env_dim;
        for col in 0..env_dim {
            for row in 0..env_dim {
                let v = env[(row, col)];
                if v != 0.0 {
                    m[(off + row, off + col)] = C64::new(v, 0.0);
                }
            }
        }
    }
    OperatorMatrix::hermitian(m)
}

/// Eigendecomposition of a Hermitian operator, reusable for many times t.
#[derive(Debug, Clone)]
pub struct HermitianSpectrum {
    values: Vec<f64>,
    vectors: CMatrix,
}

impl HermitianSpectrum {
    pub fn new(h: &OperatorMatrix) -> Result<Self> {
        if !h.is_hermitian() {
            return Err(Error::NotHermitian { defect: h.hermitian_defect() });
        }
        let eig = SymmetricEigen::new(h.matrix().clone());
        Ok(Self { values: eig.eigenvalues.iter().copied().collect(), vectors: eig.eigenvectors })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// e^{−iHt} = V diag(e^{−iλt}) V†.
    pub fn propagate(&self, t: f64) -> CMatrix {
        let mut scaled = self.vectors.clone();
        for (j, lam) in self.values.iter().enumerate() {
            let phase = C64::from_polar(1.0, -lam * t);
            for v in scaled.column_mut(j).iter_mut() {
                *v *= phase;
            }
        }
        &scaled * self.vectors.adjoint()
    }
}

/// Exact propagator e^{−iHt}. Diagonal H takes an elementwise path.
pub fn propagator(h: &OperatorMatrix, t: f64) -> Result<OperatorMatrix> {
    if !h.is_hermitian() {
        return Err(Error::NotHermitian { defect: h.hermitian_defect() });
    }
    let dim = h.dim();
    if t == 0.0 {
        return Ok(OperatorMatrix::identity(dim));
    }
    if h.is_diagonal() {
        let mut u = CMatrix::zeros(dim, dim);
        for a in 0..dim {
            u[(a, a)] = C64::from_polar(1.0, -h.matrix()[(a, a)].re * t);
        }
        return OperatorMatrix::unitary(u);
    }
    let spectrum = HermitianSpectrum::new(h)?;
    OperatorMatrix::unitary(spectrum.propagate(t))
}

/// Traceless working part of ρ(0): σX^cs ⊗ 𝟙 / 2^{N+1}.
pub fn initial_state(sys: &SpinSystem) -> OperatorMatrix {
    let dim = sys.dim();
    let norm = 1.0 / dim as f64;
    let mask = site_mask(0, sys.n_sites());
    let mut m = CMatrix::zeros(dim, dim);
    for a in 0..dim {
        m[(a ^ mask, a)] = C64::new(norm, 0.0);
    }
    OperatorMatrix::from_parts(m, true, false)
}

/// 2^{N+1}·Tr[A ρ(0) A† ρ(0)] for the initial state ρ(0) = σX^cs/2^{N+1}.
///
/// σX^cs permutes basis states a ↦ a ⊕ m (m the central-spin bit), so the
/// trace reduces to 2^{−(N+1)} Σ_ab A_ab conj(A_{a⊕m, b⊕m}) in O(dim²).
pub fn central_echo_overlap(a: &OperatorMatrix, sys: &SpinSystem) -> C64 {
    let dim = sys.dim();
    let m = sys.env_dim();
    let am = a.matrix();
    let mut acc = C64::new(0.0, 0.0);
    for col in 0..dim {
        for row in 0..dim {
            acc += am[(row, col)] * am[(row ^ m, col ^ m)].conj();
        }
    }
    acc / dim as f64
}

/// Partial trace over the environment of a full-system operator (2×2 result).
pub fn trace_environment(op: &OperatorMatrix, sys: &SpinSystem) -> CMatrix {
    let env_dim = sys.env_dim();
    let mut out = CMatrix::zeros(2, 2);
    for r in 0..2 {
        for c in 0..2 {
            let mut acc = C64::new(0.0, 0.0);
            for e in 0..env_dim {
                acc += op.matrix()[(r * env_dim + e, c * env_dim + e)];
            }
            out[(r, c)] = acc;
        }
    }
    out
}
