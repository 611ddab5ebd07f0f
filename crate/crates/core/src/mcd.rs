//! Multi-spin correlation detection: echo signal S_φ(2T) under collective
//! phase encoding, correlation-order spectra, cluster weights and the
//! Hamming weight spread.
//!
//! With a commuting ZZ coupling H_SE each environment spin j contributes an
//! independent factor cos²θ_j + cosφ·sin²θ_j with θ_j = α ω_j T. The dense
//! oracle propagates the full density matrix instead and is the reference for
//! the product form.

use crate::error::{Error, Result};
use crate::geometry::{couplings_for, sample_orientations, EnsembleSpec, Geometry, Orientation};
use crate::quantum::{
    central_echo_overlap, echo_h_se, environment_x_rotation, propagator, CouplingSet, OperatorMatrix, SpinSystem,
    TogglingMode, TogglingParams, DEFAULT_ORACLE_CAP,
};
use crate::reduce;

/// Default number of encoding angles (covers N = 15 with margin).
pub const DEFAULT_PHASE_POINTS: usize = 64;
/// Default detection floor for [`largest_order`].
pub const DEFAULT_ORDER_FLOOR: f64 = 1e-4;

const IMAG_TOL: f64 = 1e-9;
const CLIP_TOL: f64 = 1e-9;

/// Encoding angles φ_m = 2πm/M.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseGrid {
    m: usize,
}

impl PhaseGrid {
    pub fn new(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidArgument("phase grid needs at least one point".into()));
        }
        Ok(Self { m })
    }

    /// Grid checked against the orders |n| ≤ n_env.
    pub fn for_system(m: usize, n_env: usize) -> Result<Self> {
        let g = Self::new(m)?;
        g.check(n_env)?;
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    pub fn angle(&self, i: usize) -> f64 {
        2.0 * std::f64::consts::PI * i as f64 / self.m as f64
    }

    pub fn angles(&self) -> Vec<f64> {
        (0..self.m).map(|i| self.angle(i)).collect()
    }

    /// Requires M ≥ 2N + 2.
    pub fn check(&self, n_env: usize) -> Result<()> {
        let need = 2 * n_env + 2;
        if self.m < need {
            return Err(Error::AliasingGrid { m: self.m, n: n_env, need });
        }
        Ok(())
    }
}

impl Default for PhaseGrid {
    fn default() -> Self {
        Self { m: DEFAULT_PHASE_POINTS }
    }
}

/// |C_n(T)|² for n = −N..=N.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderSpectrum {
    pub t: f64,
    amplitudes: Vec<f64>,
}

impl OrderSpectrum {
    /// `amplitudes[i]` is the weight of order i − N.
    pub fn from_amplitudes(t: f64, amplitudes: Vec<f64>) -> Result<Self> {
        if amplitudes.len().is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("spectrum needs 2N+1 orders, got {}", amplitudes.len())));
        }
        Ok(Self { t, amplitudes })
    }

    pub fn n_env(&self) -> usize {
        self.amplitudes.len() / 2
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    /// |C_n|²; zero outside −N..=N.
    pub fn amplitude(&self, n: i64) -> f64 {
        let idx = n + self.n_env() as i64;
        if idx < 0 || idx as usize >= self.amplitudes.len() {
            0.0
        } else {
            self.amplitudes[idx as usize]
        }
    }

    pub fn orders(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        let n = self.n_env() as i64;
        self.amplitudes.iter().enumerate().map(move |(i, &a)| (i as i64 - n, a))
    }

    pub fn total(&self) -> f64 {
        self.amplitudes.iter().sum()
    }

    /// Largest |C_n|² − |C_{−n}|².
    pub fn asymmetry(&self) -> f64 {
        let n = self.n_env() as i64;
        (1..=n).map(|k| (self.amplitude(k) - self.amplitude(-k)).abs()).fold(0.0, f64::max)
    }

    /// Σ n⁴p / (Σ n²p)² − 3 for the order distribution.
    pub fn excess_kurtosis(&self) -> f64 {
        let (m2, m4) = self.orders().fold((0.0, 0.0), |(m2, m4), (n, a)| {
            let n2 = (n * n) as f64;
            (m2 + n2 * a, m4 + n2 * n2 * a)
        });
        m4 / (m2 * m2) - 3.0
    }
}

/// Analytic echo signal Π_j [cos²θ_j + cosφ·sin²θ_j], θ_j = α ω_j T.
pub fn mcd_signal(c: &CouplingSet, t: f64, phi: f64, alpha: f64) -> f64 {
    let cphi = phi.cos();
    c.hetero()
        .iter()
        .map(|w| {
            let s2 = (alpha * w * t).sin().powi(2);
            (1.0 - s2) + cphi * s2
        })
        .product()
}

fn oracle_system(c: &CouplingSet) -> Result<SpinSystem> {
    let sys = SpinSystem::new(c.n_env())?;
    sys.check_cap(DEFAULT_ORACLE_CAP)?;
    Ok(sys)
}

/// Dense echo with a prepared forward propagator U = e^{−iH T}:
/// ρ_φ(2T) = A ρ(0) A† with A = U† R_x(φ) U, and S = Tr[ρ_φ(2T) ρ(0)]·2^{N+1}.
fn oracle_echo(sys: &SpinSystem, u: &OperatorMatrix, phi: f64) -> Result<f64> {
    let r = environment_x_rotation(sys, phi);
    let a = u.adjoint().mul(&r.mul(u));
    let s = central_echo_overlap(&a, sys);
    if s.im.abs() > IMAG_TOL {
        return Err(Error::Numeric(format!("echo signal has imaginary part {:e}", s.im)));
    }
    Ok(s.re)
}

fn oracle_propagator(c: &CouplingSet, t: f64, tog: &TogglingParams) -> Result<(SpinSystem, OperatorMatrix)> {
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("evolution time must be >= 0, got {t}")));
    }
    let sys = oracle_system(c)?;
    let h = echo_h_se(c, &sys, tog)?;
    Ok((sys, propagator(&h, t)?))
}

/// Echo signal by dense propagation of the full density matrix.
pub fn mcd_signal_oracle(c: &CouplingSet, t: f64, phi: f64, tog: &TogglingParams) -> Result<f64> {
    let (sys, u) = oracle_propagator(c, t, tog)?;
    oracle_echo(&sys, &u, phi)
}

/// Direct DFT of S(φ_m): C_n = (1/M) Σ_m S_m e^{−inφ_m}.
pub fn spectrum_from_signals(t: f64, signals: &[f64], n_env: usize) -> Result<OrderSpectrum> {
    let grid = PhaseGrid::new(signals.len())?;
    grid.check(n_env)?;
    let m = signals.len() as f64;
    let n = n_env as i64;
    let mut amplitudes = Vec::with_capacity(2 * n_env + 1);
    for order in -n..=n {
        let (mut re, mut im) = (0.0, 0.0);
        for (i, s) in signals.iter().enumerate() {
            let (sin, cos) = (order as f64 * grid.angle(i)).sin_cos();
            re += s * cos;
            im -= s * sin;
        }
        let (re, im) = (re / m, im / m);
        if im.abs() > IMAG_TOL {
            return Err(Error::Numeric(format!("order {order} has imaginary residue {im:e}")));
        }
        if re < -CLIP_TOL {
            return Err(Error::Numeric(format!("order {order} has negative weight {re:e}")));
        }
        amplitudes.push(re.max(0.0));
    }
    OrderSpectrum::from_amplitudes(t, amplitudes)
}

/// Correlation-order spectrum from the analytic signal.
pub fn extract_spectrum(c: &CouplingSet, t: f64, grid: &PhaseGrid, alpha: f64) -> Result<OrderSpectrum> {
    grid.check(c.n_env())?;
    let signals: Vec<f64> = grid.angles().iter().map(|&phi| mcd_signal(c, t, phi, alpha)).collect();
    spectrum_from_signals(t, &signals, c.n_env())
}

/// Correlation-order spectrum from the dense oracle. Required for the
/// full-toggling Hamiltonian, whose σX terms break the product form.
pub fn extract_spectrum_oracle(
    c: &CouplingSet,
    t: f64,
    grid: &PhaseGrid,
    tog: &TogglingParams,
) -> Result<OrderSpectrum> {
    grid.check(c.n_env())?;
    let (sys, u) = oracle_propagator(c, t, tog)?;
    let signals = grid.angles().iter().map(|&phi| oracle_echo(&sys, &u, phi)).collect::<Result<Vec<_>>>()?;
    spectrum_from_signals(t, &signals, c.n_env())
}

/// Probability that exactly n environment spins are correlated with the
/// central spin, n = 0..=N.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterWeights {
    pub t: f64,
    pub p: Vec<f64>,
}

impl ClusterWeights {
    pub fn mean(&self) -> f64 {
        self.p.iter().enumerate().map(|(n, p)| n as f64 * p).sum()
    }
}

/// Poisson-binomial masses with success probabilities sin²(α ω_j T).
pub fn cluster_weights(c: &CouplingSet, t: f64, alpha: f64) -> ClusterWeights {
    let n = c.n_env();
    let mut p = vec![0.0; n + 1];
    p[0] = 1.0;
    for (j, w) in c.hetero().iter().enumerate() {
        let q = (alpha * w * t).sin().powi(2);
        for k in (1..=j + 1).rev() {
            p[k] = p[k] * (1.0 - q) + p[k - 1] * q;
        }
        p[0] *= 1.0 - q;
    }
    ClusterWeights { t, p }
}

/// Second moment Σ n²|C_n|².
pub fn hamming_weight_spread(s: &OrderSpectrum) -> Result<f64> {
    let sum = s.total();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Unnormalized { sum });
    }
    Ok(s.orders().map(|(n, a)| (n * n) as f64 * a).sum())
}

/// Largest |n| with |C_n|² ≥ floor.
pub fn largest_order(s: &OrderSpectrum, floor: f64) -> usize {
    s.orders().filter(|&(_, a)| a >= floor).map(|(n, _)| n.unsigned_abs() as usize).max().unwrap_or(0)
}

/// Ensemble-averaged MCD curves over a T grid.
#[derive(Debug, Clone)]
pub struct McdEnsemble {
    pub t_grid: Vec<f64>,
    /// Spectra averaged over orientations before any moment is taken.
    pub spectra: Vec<OrderSpectrum>,
    /// Spread of the averaged spectrum.
    pub spread: Vec<f64>,
    /// Standard error of the per-molecule spreads.
    pub spread_stderr: Vec<f64>,
    pub largest_order: Vec<usize>,
    pub n_orientations: usize,
    /// Relative gap between the tree reduction and a sequential sum.
    pub reduction_deviation: f64,
}

/// MCD experiment averaged over seeded random orientations of `geom`.
pub fn ensemble_mcd(
    geom: &Geometry,
    spec: &EnsembleSpec,
    t_grid: &[f64],
    grid: &PhaseGrid,
    tog: &TogglingParams,
) -> Result<McdEnsemble> {
    ensemble_mcd_over(geom, &sample_orientations(spec), t_grid, grid, tog)
}

/// MCD experiment averaged over an explicit orientation list.
pub fn ensemble_mcd_over(
    geom: &Geometry,
    orientations: &[Orientation],
    t_grid: &[f64],
    grid: &PhaseGrid,
    tog: &TogglingParams,
) -> Result<McdEnsemble> {
    if orientations.is_empty() {
        return Err(Error::InvalidArgument("no orientations".into()));
    }
    if t_grid.is_empty() {
        return Err(Error::InvalidArgument("empty T grid".into()));
    }
    let n_env = geom.n_env();
    grid.check(n_env)?;
    let width = 2 * n_env + 1;
    let analytic = !matches!(tog.mode, TogglingMode::FullToggling);
    let alpha = tog.alpha();

    // Each row: spectra for every T, then the per-molecule spreads.
    let rows = reduce::try_map_indexed(orientations.len(), |i| -> Result<Vec<f64>> {
        let c = couplings_for(&orientations[i], geom)?;
        let mut row = Vec::with_capacity(t_grid.len() * (width + 1));
        let mut spreads = Vec::with_capacity(t_grid.len());
        for &t in t_grid {
            let s = if analytic {
                extract_spectrum(&c, t, grid, alpha)?
            } else {
                extract_spectrum_oracle(&c, t, grid, tog)?
            };
            spreads.push(hamming_weight_spread(&s)?);
            row.extend_from_slice(s.amplitudes());
        }
        row.extend(spreads);
        Ok(row)
    })?;

    let mean = reduce::pairwise_mean_rows(&rows);
    let reduction_deviation = reduce::reduction_deviation(&rows);
    let mut spectra = Vec::with_capacity(t_grid.len());
    let mut spread = Vec::with_capacity(t_grid.len());
    let mut largest = Vec::with_capacity(t_grid.len());
    let mut spread_stderr = Vec::with_capacity(t_grid.len());
    for (k, &t) in t_grid.iter().enumerate() {
        let s = OrderSpectrum::from_amplitudes(t, mean[k * width..(k + 1) * width].to_vec())?;
        spread.push(hamming_weight_spread(&s)?);
        largest.push(largest_order(&s, DEFAULT_ORDER_FLOOR));
        spectra.push(s);
        let col = t_grid.len() * width + k;
        let per: Vec<f64> = rows.iter().map(|r| r[col]).collect();
        spread_stderr.push(reduce::mean_stderr(&per).1);
    }
    Ok(McdEnsemble {
        t_grid: t_grid.to_vec(),
        spectra,
        spread,
        spread_stderr,
        largest_order: largest,
        n_orientations: orientations.len(),
        reduction_deviation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::initial_state;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn random_hetero(n: usize, seed: u64) -> CouplingSet {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        CouplingSet::heteronuclear((0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    fn methods_e(a: f64, b: f64, phi: f64) -> f64 {
        let (ca, sa) = (a.cos().powi(2), a.sin().powi(2));
        let (cb, sb) = (b.cos().powi(2), b.sin().powi(2));
        ca * cb + phi.cos() * (ca * sb + sa * cb) + phi.cos().powi(2) * sa * sb
    }

    fn binomial(n: u64, k: u64) -> f64 {
        (1..=k).fold(1.0, |acc, i| acc * (n - k + i) as f64 / i as f64)
    }

    #[test]
    fn phase_grid_rejects_aliasing() {
        assert_eq!(PhaseGrid::for_system(31, 15).unwrap_err(), Error::AliasingGrid { m: 31, n: 15, need: 32 });
        assert!(PhaseGrid::for_system(32, 15).is_ok());
        assert_eq!(PhaseGrid::default().len(), 64);
        let c = random_hetero(4, 1);
        assert!(extract_spectrum(&c, 1.0, &PhaseGrid::new(9).unwrap(), 1.0).is_err());
    }

    #[test]
    fn signal_at_zero_phase_is_one() {
        let c = random_hetero(6, 2);
        assert!((mcd_signal(&c, 3.3, 0.0, 0.7) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn two_spin_pi_over_four_examples() {
        let c = CouplingSet::heteronuclear(vec![1.0, 1.0]).unwrap();
        assert!(mcd_signal(&c, FRAC_PI_4, PI, 1.0).abs() < 1e-15);
        assert!(mcd_signal_oracle(&c, FRAC_PI_4, PI, &TogglingParams::ideal()).unwrap().abs() < 1e-12);

        let grid = PhaseGrid::default();
        let s = extract_spectrum(&c, FRAC_PI_4, &grid, 1.0).unwrap();
        let want = [1.0 / 16.0, 0.25, 3.0 / 8.0, 0.25, 1.0 / 16.0];
        for (a, b) in s.amplitudes().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((hamming_weight_spread(&s).unwrap() - 1.0).abs() < 1e-12);

        let o = extract_spectrum_oracle(&c, FRAC_PI_4, &grid, &TogglingParams::ideal()).unwrap();
        for (a, b) in o.amplitudes().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn scaled_alpha_matches_between_paths() {
        let c = random_hetero(3, 4);
        let tog = TogglingParams::scaled(0.4).unwrap();
        for phi in [0.3, 1.9, 2.8] {
            let a = mcd_signal(&c, 1.3, phi, 0.4);
            let b = mcd_signal_oracle(&c, 1.3, phi, &tog).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn oracle_trace_identity_matches_explicit_conjugation() {
        let c = random_hetero(3, 8);
        let sys = SpinSystem::new(3).unwrap();
        let t = 0.9;
        let phi = 1.1;
        let h = echo_h_se(&c, &sys, &TogglingParams::ideal()).unwrap();
        let u = propagator(&h, t).unwrap();
        let r = environment_x_rotation(&sys, phi);
        let rho0 = initial_state(&sys);
        let a = u.adjoint().mul(&r.mul(&u));
        let rho = OperatorMatrix::general(a.matrix() * rho0.matrix() * a.matrix().adjoint()).unwrap();
        let direct = rho.trace_product(&rho0).re * sys.dim() as f64;
        let fast = mcd_signal_oracle(&c, t, phi, &TogglingParams::ideal()).unwrap();
        assert!((direct - fast).abs() < 1e-13);
    }

    #[test]
    fn zero_time_spectrum() {
        let c = random_hetero(5, 3);
        let s = extract_spectrum(&c, 0.0, &PhaseGrid::default(), 1.0).unwrap();
        assert!((s.amplitude(0) - 1.0).abs() < 1e-12);
        assert!(s.orders().filter(|(n, _)| *n != 0).all(|(_, a)| a.abs() < 1e-12));
        assert_eq!(hamming_weight_spread(&s).unwrap(), 0.0);
        assert_eq!(largest_order(&s, DEFAULT_ORDER_FLOOR), 0);
    }

    #[test]
    fn binomial_limit() {
        let n = 7;
        let c = CouplingSet::heteronuclear(vec![1.0; n]).unwrap();
        let s = extract_spectrum(&c, FRAC_PI_2, &PhaseGrid::default(), 1.0).unwrap();
        for (order, a) in s.orders() {
            let want = if (n as i64 - order) % 2 == 0 {
                binomial(n as u64, ((n as i64 - order) / 2) as u64) / 2f64.powi(n as i32)
            } else {
                0.0
            };
            assert!((a - want).abs() < 1e-12, "order {order}");
        }
        assert!((hamming_weight_spread(&s).unwrap() - n as f64).abs() < 1e-9);
        assert_eq!(largest_order(&s, 0.999 / 2f64.powi(n as i32)), n);
    }

    #[test]
    fn top_order_is_cluster_weight_over_two_to_n() {
        for seed in 0..10 {
            let c = random_hetero(6, seed);
            let s = extract_spectrum(&c, 0.8, &PhaseGrid::default(), 1.0).unwrap();
            let w = cluster_weights(&c, 0.8, 1.0);
            assert!((s.amplitude(6) - w.p[6] / 64.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cluster_weight_examples() {
        let c = random_hetero(4, 2);
        let w = cluster_weights(&c, 0.0, 1.0);
        assert_eq!(w.p, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        let one = CouplingSet::heteronuclear(vec![1.0]).unwrap();
        let w = cluster_weights(&one, FRAC_PI_4, 1.0);
        assert!((w.p[0] - 0.5).abs() < 1e-15 && (w.p[1] - 0.5).abs() < 1e-15);
        let same = CouplingSet::heteronuclear(vec![0.6; 5]).unwrap();
        let w = cluster_weights(&same, 1.1, 1.0);
        let p = (0.66f64).sin().powi(2);
        for (k, pk) in w.p.iter().enumerate() {
            let want = binomial(5, k as u64) * p.powi(k as i32) * (1.0 - p).powi(5 - k as i32);
            assert!((pk - want).abs() < 1e-14);
        }
    }

    #[test]
    fn spread_rejects_unnormalized() {
        let s = OrderSpectrum::from_amplitudes(0.0, vec![0.1, 0.5, 0.1]).unwrap();
        assert!(matches!(hamming_weight_spread(&s), Err(Error::Unnormalized { .. })));
    }

    #[test]
    fn oracle_respects_cap() {
        let c = random_hetero(13, 1);
        assert_eq!(
            mcd_signal_oracle(&c, 1.0, 0.5, &TogglingParams::ideal()).unwrap_err(),
            Error::CapExceeded { n_env: 13, cap: 12 }
        );
    }

    #[test]
    fn full_toggling_spectrum_is_normalized() {
        let c = random_hetero(3, 6);
        let tog = TogglingParams::full_toggling(0.0, 1.0).unwrap();
        let s = extract_spectrum_oracle(&c, 1.7, &PhaseGrid::default(), &tog).unwrap();
        assert!((s.total() - 1.0).abs() < 1e-9);
        assert!(s.asymmetry() < 1e-9);
    }

    #[test]
    fn single_orientation_ensemble_equals_direct() {
        let geom = Geometry::model();
        let spec = EnsembleSpec::new(1, 11).unwrap();
        let grid = PhaseGrid::default();
        let tog = TogglingParams::ideal();
        let ts = [0.0, 100e-6, 250e-6];
        let e = ensemble_mcd(&geom, &spec, &ts, &grid, &tog).unwrap();
        let c = couplings_for(&crate::geometry::orientation_at(11, 0), &geom).unwrap();
        for (k, &t) in ts.iter().enumerate() {
            let s = extract_spectrum(&c, t, &grid, 1.0).unwrap();
            assert_eq!(e.spectra[k].amplitudes(), s.amplitudes());
        }
        assert_eq!(e.spread_stderr, vec![0.0; 3]);
    }

    #[test]
    fn ensemble_average_is_normalized_and_gaussian_like() {
        let geom = Geometry::model();
        let spec = EnsembleSpec::new(200, 3).unwrap();
        let tog = TogglingParams::scaled(2f64.sqrt() / 3.0).unwrap();
        let ts = [300e-6, 600e-6];
        let e = ensemble_mcd(&geom, &spec, &ts, &PhaseGrid::default(), &tog).unwrap();
        for s in &e.spectra {
            assert!((s.total() - 1.0).abs() < 1e-9);
            assert!(s.asymmetry() < 1e-9);
            // a Gaussian has zero excess kurtosis; the binomial-mixture tails stay close
            assert!(s.excess_kurtosis().abs() < 1.0, "kurtosis {}", s.excess_kurtosis());
        }
        assert!(e.reduction_deviation <= 1e-10);
    }

    #[test]
    fn ensemble_is_thread_count_independent() {
        let geom = Geometry::model();
        let spec = EnsembleSpec::new(64, 21).unwrap();
        let ts = [200e-6, 400e-6];
        let run =
            |threads| {
                rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
                    ensemble_mcd(&geom, &spec, &ts, &PhaseGrid::default(), &TogglingParams::ideal()).unwrap()
                })
            };
        let (a, b) = (run(1), run(3));
        for (x, y) in a.spectra.iter().zip(&b.spectra) {
            assert_eq!(x.amplitudes(), y.amplitudes());
        }
        assert_eq!(a.spread, b.spread);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn methods_e_closed_form(a in -4.0f64..4.0, b in -4.0f64..4.0, phi in 0.0f64..(2.0 * PI)) {
            let c = CouplingSet::heteronuclear(vec![a, b]).unwrap();
            prop_assert!((mcd_signal(&c, 1.0, phi, 1.0) - methods_e(a, b, phi)).abs() <= 1e-12);
        }

        #[test]
        fn analytic_matches_oracle(n in 2usize..5, seed in 0u64..10_000, t in 0.0f64..3.0, phi in 0.0f64..(2.0 * PI)) {
            let c = random_hetero(n, seed);
            let a = mcd_signal(&c, t, phi, 1.0);
            let o = mcd_signal_oracle(&c, t, phi, &TogglingParams::ideal()).unwrap();
            prop_assert!((a - o).abs() <= 1e-9);
        }

        #[test]
        fn spectrum_laws(n in 1usize..10, seed in 0u64..10_000, t in 0.0f64..5.0, alpha in 0.1f64..1.0) {
            let c = random_hetero(n, seed);
            let s = extract_spectrum(&c, t, &PhaseGrid::default(), alpha).unwrap();
            prop_assert!((s.total() - 1.0).abs() <= 1e-9);
            prop_assert!(s.asymmetry() <= 1e-9);
            prop_assert!(s.amplitudes().iter().all(|&a| a >= 0.0));
            let direct: f64 = c.hetero().iter().map(|w| (alpha * w * t).sin().powi(2)).sum();
            let w = cluster_weights(&c, t, alpha);
            prop_assert!((hamming_weight_spread(&s).unwrap() - direct).abs() <= 1e-9);
            prop_assert!((w.mean() - direct).abs() <= 1e-9);
            prop_assert!((w.p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(w.p.iter().all(|&p| p >= 0.0));
        }
    }
}
