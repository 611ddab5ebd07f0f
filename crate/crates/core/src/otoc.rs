//! OTOC echo F_τ(T): forward evolution under H_SE for T, a scrambling window
//! τ under H_E alone, backward evolution for T, then overlap with ρ(0).
//!
//! Two evaluation routes:
//! - [`otoc`] propagates the full 2^{N+1} system densely (the oracle);
//! - [`OtocEvaluator`] uses H_SE = σZ^cs ⊗ K to reduce the trace to the
//!   environment, F = 2^{−N} Re Tr[G U_E G† U_E†] with G = e^{2iTK}. In the
//!   eigenbasis of K this is 2^{−N} Σ_ab |Ũ_ab|² cos(2T(μ_a − μ_b)), so one
//!   eigendecomposition per orientation serves the whole (T, τ) grid.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::geometry::{couplings_for, sample_orientations, EnsembleSpec, Geometry, Orientation};
use crate::quantum::{
    build_h_e_with, central_echo_overlap, echo_h_se, environment_sector_hamiltonian, pauli, propagator, Axis, CMatrix,
    CouplingSet, EnvInteraction, MagnetizationSector, OperatorMatrix, SpinSystem, TogglingMode, TogglingParams, C64,
    DEFAULT_ORACLE_CAP, FULL_TOGGLING_PREFACTOR,
};
use crate::reduce;

const IMAG_TOL: f64 = 1e-10;

fn check_times(t: f64, tau: f64) -> Result<()> {
    if !(t >= 0.0 && tau >= 0.0) || !t.is_finite() || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!("need finite T, tau >= 0, got T={t}, tau={tau}")));
    }
    Ok(())
}

fn check_system(c: &CouplingSet, sys: &SpinSystem) -> Result<()> {
    sys.check_cap(DEFAULT_ORACLE_CAP)?;
    if c.n_env() != sys.n_env() {
        return Err(Error::LengthMismatch { expected: sys.n_env(), got: c.n_env() });
    }
    if c.hetero().iter().chain(c.homo().iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteCoupling);
    }
    Ok(())
}

/// W_τ(T) = U_SE† U_E U_SE on the full system.
fn heisenberg_w(
    c: &CouplingSet,
    t: f64,
    tau: f64,
    sys: &SpinSystem,
    tog: &TogglingParams,
    interaction: EnvInteraction,
) -> Result<OperatorMatrix> {
    check_times(t, tau)?;
    check_system(c, sys)?;
    let u_se = propagator(&echo_h_se(c, sys, tog)?, t)?;
    let u_e = propagator(&build_h_e_with(c, sys, interaction)?, tau)?;
    Ok(u_se.adjoint().mul(&u_e.mul(&u_se)))
}

/// Dense OTOC with the dipolar environment.
pub fn otoc(c: &CouplingSet, t: f64, tau: f64, sys: &SpinSystem, tog: &TogglingParams) -> Result<f64> {
    otoc_with(c, t, tau, sys, tog, EnvInteraction::Dipolar)
}

/// Dense OTOC: S = Tr[ρ(2T+τ) ρ(0)]·2^{N+1} with ρ(2T+τ) = W ρ(0) W†.
pub fn otoc_with(
    c: &CouplingSet,
    t: f64,
    tau: f64,
    sys: &SpinSystem,
    tog: &TogglingParams,
    interaction: EnvInteraction,
) -> Result<f64> {
    let w = heisenberg_w(c, t, tau, sys, tog, interaction)?;
    let f = central_echo_overlap(&w, sys);
    if f.im.abs() > IMAG_TOL {
        return Err(Error::Numeric(format!("OTOC has imaginary part {:e}", f.im)));
    }
    Ok(f.re)
}

/// Both sides of Re F = 1 − ⟨[W, V]†[W, V]⟩/2 with V = σX^cs and
/// ⟨X⟩ = Tr X / 2^{N+1}. Returns (Re F from the trace form, commutator side).
pub fn otoc_commutator_check(
    c: &CouplingSet,
    t: f64,
    tau: f64,
    sys: &SpinSystem,
    tog: &TogglingParams,
) -> Result<(f64, f64)> {
    let w = heisenberg_w(c, t, tau, sys, tog, EnvInteraction::Dipolar)?;
    let dim = sys.dim() as f64;
    let v = pauli(0, Axis::X, sys)?;
    let rho = OperatorMatrix::general(v.matrix() / C64::new(dim, 0.0))?;
    // trace form, written out with explicit products
    let lhs = (w.mul(&rho).mul(&w.adjoint()).trace_product(&rho) * dim).re;
    let comm = w.commutator(&v);
    let sq = comm.adjoint().mul(&comm);
    let rhs = 1.0 - sq.trace().re / dim / 2.0;
    Ok((lhs, rhs))
}

/// Environment-space generator K with echo_h_se = σZ^cs ⊗ K.
pub fn echo_env_generator(c: &CouplingSet, tog: &TogglingParams) -> Result<DMatrix<f64>> {
    tog.validate()?;
    let n = c.n_env();
    let dim = 1usize << n;
    let mut k = DMatrix::zeros(dim, dim);
    for a in 0..dim {
        for (j, w) in c.hetero().iter().enumerate() {
            let bit = 1usize << (n - 1 - j);
            let s = if a & bit == 0 { 1.0 } else { -1.0 };
            match tog.mode {
                TogglingMode::Ideal => k[(a, a)] += 0.5 * w * s,
                TogglingMode::Scaled(alpha) => k[(a, a)] += 0.5 * alpha * w * s,
                TogglingMode::FullToggling => {
                    let half = 0.5 * FULL_TOGGLING_PREFACTOR * w;
                    k[(a, a)] += half * s;
                    k[(a ^ bit, a)] += half;
                }
            }
        }
    }
    Ok(k)
}

#[derive(Debug, Clone)]
struct SectorSpectrum {
    states: Vec<usize>,
    values: Vec<f64>,
    vectors: DMatrix<f64>,
}

impl SectorSpectrum {
    fn propagator(&self, tau: f64) -> CMatrix {
        let k = self.values.len();
        let mut scaled = CMatrix::zeros(k, k);
        for j in 0..k {
            let phase = C64::from_polar(1.0, -self.values[j] * tau);
            for i in 0..k {
                scaled[(i, j)] = phase * self.vectors[(i, j)];
            }
        }
        let vt = self.vectors.transpose().map(|v| C64::new(v, 0.0));
        scaled * vt
    }
}

/// Transition weights |Ũ_ab(τ)|² grouped in blocks of basis indices.
#[derive(Debug, Clone)]
pub struct TauWeights {
    blocks: Vec<(Vec<usize>, DMatrix<f64>)>,
}

/// Environment-reduced OTOC for one coupling set.
#[derive(Debug, Clone)]
pub struct OtocEvaluator {
    n_env: usize,
    /// Phase rate 2μ_a per K-eigenstate, so the phase at time T is T·rate.
    rates: Vec<f64>,
    sectors: Vec<SectorSpectrum>,
    /// Eigenvectors of K when K is not diagonal in the z basis.
    k_vectors: Option<DMatrix<f64>>,
}

impl OtocEvaluator {
    pub fn new(c: &CouplingSet, tog: &TogglingParams, interaction: EnvInteraction) -> Result<Self> {
        let n = c.n_env();
        SpinSystem::new(n)?.check_cap(DEFAULT_ORACLE_CAP)?;
        let k = echo_env_generator(c, tog)?;
        let (rates, k_vectors) = if tog.is_diagonal() {
            ((0..k.nrows()).map(|a| 2.0 * k[(a, a)]).collect(), None)
        } else {
            let eig = SymmetricEigen::new(k);
            (eig.eigenvalues.iter().map(|m| 2.0 * m).collect(), Some(eig.eigenvectors))
        };
        let mut sectors = Vec::new();
        for sector in MagnetizationSector::all(n)? {
            let h = environment_sector_hamiltonian(c, &sector, interaction)?;
            let eig = SymmetricEigen::new(h);
            sectors.push(SectorSpectrum {
                states: sector.states().to_vec(),
                values: eig.eigenvalues.iter().copied().collect(),
                vectors: eig.eigenvectors,
            });
        }
        Ok(Self { n_env: n, rates, sectors, k_vectors })
    }

    pub fn n_env(&self) -> usize {
        self.n_env
    }

    pub fn weights(&self, tau: f64) -> TauWeights {
        if tau == 0.0 && self.k_vectors.is_none() {
            let dim = 1usize << self.n_env;
            return TauWeights { blocks: (0..dim).map(|a| (vec![a], DMatrix::from_element(1, 1, 1.0))).collect() };
        }
        let blocks: Vec<(Vec<usize>, CMatrix)> =
            self.sectors.iter().map(|s| (s.states.clone(), s.propagator(tau))).collect();
        match &self.k_vectors {
            None => {
                TauWeights { blocks: blocks.into_iter().map(|(states, u)| (states, u.map(|v| v.norm_sqr()))).collect() }
            }
            Some(v) => {
                let dim = 1usize << self.n_env;
                let mut full = CMatrix::zeros(dim, dim);
                for (states, u) in &blocks {
                    for (c, &sc) in states.iter().enumerate() {
                        for (r, &sr) in states.iter().enumerate() {
                            full[(sr, sc)] = u[(r, c)];
                        }
                    }
                }
                let vc = v.map(|x| C64::new(x, 0.0));
                let rotated = vc.transpose() * full * vc;
                TauWeights { blocks: vec![((0..dim).collect(), rotated.map(|x| x.norm_sqr()))] }
            }
        }
    }

    /// F at time T for precomputed weights.
    pub fn value_with(&self, w: &TauWeights, t: f64) -> f64 {
        let mut total = 0.0;
        for (states, p) in &w.blocks {
            let (sin, cos): (Vec<f64>, Vec<f64>) = states.iter().map(|&a| (self.rates[a] * t).sin_cos()).unzip();
            let k = states.len();
            for b in 0..k {
                let mut cs = 0.0;
                let mut ss = 0.0;
                for a in 0..k {
                    cs += p[(a, b)] * cos[a];
                    ss += p[(a, b)] * sin[a];
                }
                total += cs * cos[b] + ss * sin[b];
            }
        }
        total / (1usize << self.n_env) as f64
    }

    pub fn value(&self, t: f64, tau: f64) -> Result<f64> {
        check_times(t, tau)?;
        Ok(self.value_with(&self.weights(tau), t))
    }

    /// F over the grid, indexed [tau][T].
    pub fn surface(&self, t_grid: &[f64], tau_grid: &[f64]) -> Result<Vec<Vec<f64>>> {
        for &t in t_grid {
            check_times(t, 0.0)?;
        }
        let mut out = Vec::with_capacity(tau_grid.len());
        for &tau in tau_grid {
            check_times(0.0, tau)?;
            let w = self.weights(tau);
            out.push(t_grid.iter().map(|&t| self.value_with(&w, t)).collect());
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Each τ curve divided by the τ = 0 curve at the same T.
    Pointwise,
    /// Each τ curve divided by the mean of the τ = 0 curve.
    Scalar,
}

/// Ensemble OTOC over a (τ, T) grid. Rows are indexed by τ.
#[derive(Debug, Clone)]
pub struct OtocSurface {
    pub t_grid: Vec<f64>,
    pub tau_grid: Vec<f64>,
    pub raw: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<f64>>,
    pub normalized: Vec<Vec<f64>>,
    pub normalization: Normalization,
    /// Ensemble mean of F(T, τ = 0).
    pub reference: Vec<f64>,
    /// Per-orientation values, flattened as [tau · nT + T].
    pub samples: Vec<Vec<f64>>,
    pub reduction_deviation: f64,
}

impl OtocSurface {
    pub fn n_orientations(&self) -> usize {
        self.samples.len()
    }

    /// Mean and standard error of F(T_i) − F(T_j) at fixed τ, paired by orientation.
    pub fn paired_difference(&self, tau_idx: usize, i: usize, j: usize) -> (f64, f64) {
        let nt = self.t_grid.len();
        let d: Vec<f64> = self.samples.iter().map(|s| s[tau_idx * nt + i] - s[tau_idx * nt + j]).collect();
        reduce::mean_stderr(&d)
    }
}

pub fn ensemble_otoc(
    geom: &Geometry,
    spec: &EnsembleSpec,
    t_grid: &[f64],
    tau_grid: &[f64],
    tog: &TogglingParams,
    interaction: EnvInteraction,
    normalization: Normalization,
) -> Result<OtocSurface> {
    ensemble_otoc_over(geom, &sample_orientations(spec), t_grid, tau_grid, tog, interaction, normalization)
}

/// Ensemble OTOC over an explicit orientation list.
pub fn ensemble_otoc_over(
    geom: &Geometry,
    orientations: &[Orientation],
    t_grid: &[f64],
    tau_grid: &[f64],
    tog: &TogglingParams,
    interaction: EnvInteraction,
    normalization: Normalization,
) -> Result<OtocSurface> {
    if orientations.is_empty() {
        return Err(Error::InvalidArgument("no orientations".into()));
    }
    if t_grid.is_empty() || tau_grid.is_empty() {
        return Err(Error::InvalidArgument("empty T or tau grid".into()));
    }
    SpinSystem::new(geom.n_env())?.check_cap(DEFAULT_ORACLE_CAP)?;
    let nt = t_grid.len();
    let ntau = tau_grid.len();
    // The τ = 0 reference row is appended after the requested rows.
    let rows = reduce::try_map_indexed(orientations.len(), |i| -> Result<Vec<f64>> {
        let c = couplings_for(&orientations[i], geom)?;
        let eval = OtocEvaluator::new(&c, tog, interaction)?;
        let mut taus = tau_grid.to_vec();
        taus.push(0.0);
        let surface = eval.surface(t_grid, &taus)?;
        Ok(surface.into_iter().flatten().collect())
    })?;
    let mean = reduce::pairwise_mean_rows(&rows);
    let reduction_deviation = reduce::reduction_deviation(&rows);
    let mut raw = Vec::with_capacity(ntau);
    let mut stderr = Vec::with_capacity(ntau);
    for k in 0..ntau {
        raw.push(mean[k * nt..(k + 1) * nt].to_vec());
        stderr.push(
            (0..nt)
                .map(|i| {
                    let col: Vec<f64> = rows.iter().map(|r| r[k * nt + i]).collect();
                    reduce::mean_stderr(&col).1
                })
                .collect(),
        );
    }
    let reference = mean[ntau * nt..].to_vec();
    let scalar = reduce::pairwise_sum(&reference) / nt as f64;
    let normalized = raw
        .iter()
        .zip(tau_grid)
        .map(|(row, &tau)| {
            row.iter()
                .zip(&reference)
                .map(|(f, r)| match normalization {
                    // exactly 1 by construction on the τ = 0 row
                    _ if tau == 0.0 => 1.0,
                    Normalization::Pointwise => f / r,
                    Normalization::Scalar => f / scalar,
                })
                .collect()
        })
        .collect();
    let samples = rows.into_iter().map(|mut r| {
        r.truncate(ntau * nt);
        r
    });
    Ok(OtocSurface {
        t_grid: t_grid.to_vec(),
        tau_grid: tau_grid.to_vec(),
        raw,
        stderr,
        normalized,
        normalization,
        reference,
        samples: samples.collect(),
        reduction_deviation,
    })
}
