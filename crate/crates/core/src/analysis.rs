//! Curve fitting, OTOC reparameterization, immunity factors and level-spacing
//! statistics.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::otoc::OtocSurface;
use crate::quantum::{spin_flip_partner, CMatrix, MagnetizationSector, OperatorMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitFamily {
    /// y = A·exp(−x²/(2w²)); params [A, w].
    Gaussian,
    /// y = A·exp(−x/λ); params [A, λ].
    Exponential,
    /// y = a + b·x; params [a, b].
    Linear,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct FitResult {
    pub family: FitFamily,
    pub params: [f64; 2],
    /// Euclidean norm of the linear-space residuals.
    pub residual_norm: f64,
    pub r_squared: f64,
}

impl FitResult {
    pub fn amplitude(&self) -> f64 {
        self.params[0]
    }

    /// λ for exponential fits, w for Gaussian fits, slope for linear fits.
    /// Decay families report +∞ when the data show no decay.
    pub fn scale(&self) -> f64 {
        self.params[1]
    }

    pub fn predict(&self, x: f64) -> f64 {
        let [a, s] = self.params;
        match self.family {
            FitFamily::Exponential => a * (-x / s).exp(),
            FitFamily::Gaussian => a * (-x * x / (2.0 * s * s)).exp(),
            FitFamily::Linear => a + s * x,
        }
    }
}

fn check_xy(x: &[f64], y: &[f64], positive: bool) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch { expected: x.len(), got: y.len() });
    }
    if x.len() < 4 {
        return Err(Error::Fit(format!("need at least 4 points, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Fit("non-finite data".into()));
    }
    if positive && y.iter().any(|&v| v <= 0.0) {
        return Err(Error::Fit("data must be strictly positive".into()));
    }
    Ok(())
}

fn r_squared(y: &[f64], pred: impl Fn(usize) -> f64) -> (f64, f64) {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_res: f64 = y.iter().enumerate().map(|(i, v)| (v - pred(i)).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res == 0.0 {
        1.0
    } else {
        0.0
    };
    (ss_res.sqrt(), r2)
}

fn is_constant(y: &[f64]) -> bool {
    let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    y.iter().all(|v| (v - y[0]).abs() <= 1e-12 * scale)
}

/// Fits y = A·exp(−r·u): weighted log-linear start, then damped Gauss–Newton
/// on the linear-space residuals. Returns (A, r).
fn fit_exp_rate(u: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    let ymax = y.iter().fold(0.0f64, |m, v| m.max(*v));
    let yn: Vec<f64> = y.iter().map(|v| v / ymax).collect();
    let (a, r) = fit_exp_rate_unit(u, &yn)?;
    Ok((a * ymax, r))
}

fn fit_exp_rate_unit(u: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    // ln y = ln A − r u with weights y² (variance of ln y ≈ σ²/y²)
    let (mut sw, mut su, mut sl, mut suu, mut sul) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&ui, &yi) in u.iter().zip(y) {
        let w = yi * yi;
        let l = yi.ln();
        sw += w;
        su += w * ui;
        sl += w * l;
        suu += w * ui * ui;
        sul += w * ui * l;
    }
    let det = sw * suu - su * su;
    if !(det.abs() > 1e-300) {
        return Err(Error::Fit("singular log-linear system".into()));
    }
    let slope = (sw * sul - su * sl) / det;
    let mut a = ((sl - slope * su) / sw).exp();
    let mut r = -slope;

    let cost = |a: f64, r: f64| -> f64 { u.iter().zip(y).map(|(&ui, &yi)| (yi - a * (-r * ui).exp()).powi(2)).sum() };
    let mut current = cost(a, r);
    let mut lambda = 1e-3;
    for _ in 0..200 {
        // normal equations of the 2-parameter problem
        let (mut jaa, mut jar, mut jrr, mut ga, mut gr) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&ui, &yi) in u.iter().zip(y) {
            let e = (-r * ui).exp();
            let res = yi - a * e;
            let da = e;
            let dr = -a * ui * e;
            jaa += da * da;
            jar += da * dr;
            jrr += dr * dr;
            ga += da * res;
            gr += dr * res;
        }
        let mut improved = false;
        for _ in 0..30 {
            let m11 = jaa * (1.0 + lambda);
            let m22 = jrr * (1.0 + lambda);
            let d = m11 * m22 - jar * jar;
            if !(d.abs() > 0.0) {
                lambda *= 10.0;
                continue;
            }
            let step_a = (m22 * ga - jar * gr) / d;
            let step_r = (m11 * gr - jar * ga) / d;
            let (na, nr) = (a + step_a, r + step_r);
            let c = cost(na, nr);
            if c.is_finite() && c <= current {
                let small = step_a.abs() <= 1e-15 * a.abs() && step_r.abs() <= 1e-15 * r.abs().max(1e-300);
                a = na;
                r = nr;
                current = c;
                lambda = (lambda / 10.0).max(1e-12);
                improved = !small;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    if !(a.is_finite() && r.is_finite()) {
        return Err(Error::Fit("refinement diverged".into()));
    }
    // The cost is flat to rounding near the optimum, so finish with a secant
    // search on the stationarity condition with A eliminated.
    let best_amp = |r: f64| {
        let (num, den) = u.iter().zip(y).fold((0.0, 0.0), |(n, d), (&ui, &yi)| {
            let e = (-r * ui).exp();
            (n + yi * e, d + e * e)
        });
        num / den
    };
    let stationarity = |r: f64| {
        let amp = best_amp(r);
        u.iter()
            .zip(y)
            .map(|(&ui, &yi)| {
                let e = (-r * ui).exp();
                (yi - amp * e) * ui * e
            })
            .sum::<f64>()
    };
    let (mut r0, mut r1) = (r, r * (1.0 + 1e-6) + 1e-12);
    let (mut h0, mut h1) = (stationarity(r0), stationarity(r1));
    for _ in 0..60 {
        if h1 == h0 {
            break;
        }
        let r2 = r1 - h1 * (r1 - r0) / (h1 - h0);
        if !r2.is_finite() {
            break;
        }
        r0 = r1;
        h0 = h1;
        r1 = r2;
        h1 = stationarity(r1);
        if (r1 - r0).abs() <= 1e-15 * r1.abs() {
            break;
        }
    }
    let polished = best_amp(r1);
    if r1.is_finite() && polished.is_finite() && cost(polished, r1) <= current * (1.0 + 1e-12) {
        return Ok((polished, r1));
    }
    Ok((a, r))
}

fn decay_fit(family: FitFamily, x: &[f64], y: &[f64]) -> Result<FitResult> {
    check_xy(x, y, true)?;
    let u: Vec<f64> = match family {
        FitFamily::Gaussian => x.iter().map(|v| v * v).collect(),
        _ => x.to_vec(),
    };
    let to_scale = |r: f64| match family {
        FitFamily::Gaussian => 1.0 / (2.0 * r).sqrt(),
        _ => 1.0 / r,
    };
    let (a, r) = if is_constant(y) { (y[0], 0.0) } else { fit_exp_rate(&u, y)? };
    if r <= 0.0 {
        // no decay: the flat model is the honest answer
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let amp = if r == 0.0 { a } else { mean };
        let (residual_norm, r_squared) = r_squared(y, |_| amp);
        return Ok(FitResult { family, params: [amp, f64::INFINITY], residual_norm, r_squared });
    }
    let (residual_norm, r_squared) = r_squared(y, |i| a * (-r * u[i]).exp());
    Ok(FitResult { family, params: [a, to_scale(r)], residual_norm, r_squared })
}

/// Least squares y = A·exp(−x/λ). Constant or non-decaying data give λ = ∞.
pub fn fit_exponential(x: &[f64], y: &[f64]) -> Result<FitResult> {
    decay_fit(FitFamily::Exponential, x, y)
}

/// Least squares y = A·exp(−x²/(2w²)). Constant or non-decaying data give w = ∞.
pub fn fit_gaussian(x: &[f64], y: &[f64]) -> Result<FitResult> {
    decay_fit(FitFamily::Gaussian, x, y)
}

/// Ordinary least squares y = a + b·x.
pub fn fit_linear(x: &[f64], y: &[f64]) -> Result<FitResult> {
    check_xy(x, y, false)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("all x values coincide".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let (residual_norm, r_squared) = r_squared(y, |i| a + b * x[i]);
    Ok(FitResult { family: FitFamily::Linear, params: [a, b], residual_norm, r_squared })
}

/// Rule selecting the leading "early decay" points of a curve.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "value")]
pub enum EarlyWindow {
    /// Points before the first local minimum whose drop from y₀ is at most
    /// this fraction of the drop to that minimum.
    DecayFraction(f64),
    /// Leading points with y ≥ floor·y₀.
    Floor(f64),
    All,
}

impl Default for EarlyWindow {
    fn default() -> Self {
        EarlyWindow::DecayFraction(0.5)
    }
}

/// Index of the first local minimum (last index if the curve never turns up).
pub fn first_local_minimum(y: &[f64]) -> usize {
    (0..y.len().saturating_sub(1)).find(|&i| y[i + 1] > y[i]).unwrap_or(y.len().saturating_sub(1))
}

/// Number of leading points selected by `rule`.
pub fn early_window(y: &[f64], rule: EarlyWindow) -> usize {
    if y.is_empty() {
        return 0;
    }
    match rule {
        EarlyWindow::All => y.len(),
        EarlyWindow::Floor(f) => y.iter().take_while(|&&v| v >= f * y[0]).count(),
        EarlyWindow::DecayFraction(q) => {
            let end = first_local_minimum(y);
            let drop = y[0] - y[end];
            y[..=end].iter().take_while(|&&v| y[0] - v <= q * drop).count()
        }
    }
}

/// Spread curve on a T grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpreadCurve {
    pub t: Vec<f64>,
    pub spread: Vec<f64>,
}

/// One τ curve of F against a substituted variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub tau: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Replaces T by spread(T) on the leading window where the spread is strictly
/// increasing.
pub fn reparameterize_otoc(surface: &OtocSurface, spread: &SpreadCurve) -> Result<Vec<Curve>> {
    if spread.t.len() != surface.t_grid.len() || spread.spread.len() != spread.t.len() {
        return Err(Error::GridMismatch(format!(
            "surface has {} T points, spread curve {}",
            surface.t_grid.len(),
            spread.t.len()
        )));
    }
    for (a, b) in surface.t_grid.iter().zip(&spread.t) {
        if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(f64::MIN_POSITIVE) {
            return Err(Error::GridMismatch(format!("T values differ: {a} vs {b}")));
        }
    }
    let len = 1 + spread.spread.windows(2).take_while(|w| w[1] > w[0]).count();
    if len < 2 {
        return Err(Error::NonInjective("spread does not increase on the leading T points".into()));
    }
    Ok(surface
        .tau_grid
        .iter()
        .zip(&surface.normalized)
        .map(|(&tau, row)| Curve { tau, x: spread.spread[..len].to_vec(), y: row[..len].to_vec() })
        .collect())
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ImmunityFactor {
    pub tau: f64,
    pub kappa: f64,
    /// κ larger than the system size: the perturbation barely scrambles.
    pub unscrambled: bool,
    pub fit: FitResult,
    pub window: usize,
}

/// κ(τ) = λ of an exponential fit to each curve over its early window.
pub fn scrambling_immunity_factor(curves: &[Curve], window: EarlyWindow, n_env: usize) -> Result<Vec<ImmunityFactor>> {
    curves
        .iter()
        .map(|c| {
            let len = early_window(&c.y, window).max(4).min(c.y.len());
            let fit = fit_exponential(&c.x[..len], &c.y[..len])?;
            let kappa = fit.scale();
            Ok(ImmunityFactor { tau: c.tau, kappa, unscrambled: kappa > n_env as f64, fit, window: len })
        })
        .collect()
}

/// P(s) = (πs/2)·exp(−πs²/4).
pub fn wigner_surmise(s: f64) -> Result<f64> {
    if s < 0.0 || s.is_nan() {
        return Err(Error::InvalidArgument(format!("spacing must be >= 0, got {s}")));
    }
    let p = std::f64::consts::PI;
    Ok(p * s / 2.0 * (-p * s * s / 4.0).exp())
}

pub fn wigner_cdf(s: f64) -> f64 {
    1.0 - (-std::f64::consts::PI * s * s / 4.0).exp()
}

pub fn poisson_cdf(s: f64) -> f64 {
    1.0 - (-s).exp()
}

/// Kolmogorov–Smirnov distance between the sample and a reference CDF.
pub fn ks_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

pub const UNFOLD_DEGREE: usize = 7;
pub const EDGE_TRIM: f64 = 0.05;
pub const MIN_SECTOR_LEVELS: usize = 50;

/// Unfolded nearest-neighbour spacings of a sorted spectrum, normalized to
/// unit mean. The staircase is fitted by a degree-7 polynomial and 5% of the
/// levels at each edge are dropped.
pub fn unfold_spacings(levels: &[f64]) -> Result<Vec<f64>> {
    let n = levels.len();
    if n < UNFOLD_DEGREE + 3 {
        return Err(Error::SectorTooSmall { levels: n, need: UNFOLD_DEGREE + 3 });
    }
    let (lo, hi) = (levels[0], levels[n - 1]);
    if !(hi > lo) {
        return Err(Error::Numeric("spectrum has zero width".into()));
    }
    let scale = |e: f64| 2.0 * (e - lo) / (hi - lo) - 1.0;
    let vander = DMatrix::from_fn(n, UNFOLD_DEGREE + 1, |i, k| scale(levels[i]).powi(k as i32));
    let staircase = DVector::from_fn(n, |i, _| i as f64 + 0.5);
    let coeffs = vander
        .svd(true, true)
        .solve(&staircase, 1e-14)
        .map_err(|e| Error::Numeric(format!("unfolding fit failed: {e}")))?;
    let unfold = |e: f64| {
        let x = scale(e);
        coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    };
    let trim = (EDGE_TRIM * n as f64).floor() as usize;
    let kept: Vec<f64> = levels[trim..n - trim].iter().map(|&e| unfold(e)).collect();
    let raw: Vec<f64> = kept.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    if !(mean > 0.0) {
        return Err(Error::Numeric("unfolded spacings have non-positive mean".into()));
    }
    Ok(raw.iter().map(|s| s / mean).collect())
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SpacingHistogram {
    pub spacings: Vec<f64>,
    pub bin_edges: Vec<f64>,
    pub density: Vec<f64>,
    pub sample_size: usize,
    /// Symmetry blocks that contributed spacings.
    pub blocks: usize,
}

impl SpacingHistogram {
    pub fn from_spacings(spacings: Vec<f64>, blocks: usize) -> Self {
        let (bin_edges, density) = histogram(&spacings, 30, 3.0);
        Self { sample_size: spacings.len(), spacings, bin_edges, density, blocks }
    }

    pub fn mean(&self) -> f64 {
        self.spacings.iter().sum::<f64>() / self.spacings.len() as f64
    }

    pub fn ks_wigner(&self) -> f64 {
        ks_distance(&self.spacings, wigner_cdf)
    }

    pub fn ks_poisson(&self) -> f64 {
        ks_distance(&self.spacings, poisson_cdf)
    }
}

/// Density histogram on [0, max] with `bins` equal bins.
pub fn histogram(samples: &[f64], bins: usize, max: f64) -> (Vec<f64>, Vec<f64>) {
    let width = max / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| i as f64 * width).collect();
    let mut counts = vec![0usize; bins];
    for &s in samples {
        if s >= 0.0 && s < max {
            counts[((s / width) as usize).min(bins - 1)] += 1;
        }
    }
    let n = samples.len().max(1) as f64;
    (edges, counts.iter().map(|&c| c as f64 / (n * width)).collect())
}

fn hermitian_eigenvalues(m: CMatrix) -> Vec<f64> {
    let mut v: Vec<f64> = if m.iter().all(|z| z.im == 0.0) {
        SymmetricEigen::new(m.map(|z| z.re)).eigenvalues.iter().copied().collect()
    } else {
        SymmetricEigen::new(m).eigenvalues.iter().copied().collect()
    };
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

/// Even and odd blocks under the global flip when the sector maps to itself
/// and H commutes with the flip; otherwise `None`.
fn flip_parity_blocks(h: &CMatrix, sector: &MagnetizationSector) -> Option<(CMatrix, CMatrix)> {
    if sector.magnetization() != 0 {
        return None;
    }
    let n = sector.n_sites();
    let states = sector.states();
    let partner: Vec<usize> = states.iter().map(|&a| sector.index_of(spin_flip_partner(a, n)).unwrap()).collect();
    let scale = h.iter().fold(1.0f64, |m, z| m.max(z.norm()));
    let k = states.len();
    for c in 0..k {
        for r in 0..k {
            if (h[(r, c)] - h[(partner[r], partner[c])]).norm() > 1e-12 * scale {
                return None;
            }
        }
    }
    let reps: Vec<usize> = (0..k).filter(|&i| i < partner[i]).collect();
    let block = |sign: f64| {
        CMatrix::from_fn(reps.len(), reps.len(), |p, q| {
            let (a, b) = (reps[p], reps[q]);
            h[(a, b)] + h[(a, partner[b])] * sign
        })
    };
    Some((block(1.0), block(-1.0)))
}

/// Unfolded level spacings of an environment operator (dimension 2^n)
/// restricted to the sector with total magnetization `magnetization`.
///
/// In the M = 0 sector a flip-symmetric H splits into independent even and
/// odd blocks; each is unfolded separately and the spacings are pooled. When
/// the two blocks are exactly degenerate only one is kept.
pub fn level_spacings(h: &OperatorMatrix, magnetization: i32) -> Result<SpacingHistogram> {
    if !h.is_hermitian() {
        return Err(Error::NotHermitian { defect: h.hermitian_defect() });
    }
    let dim = h.dim();
    if !dim.is_power_of_two() {
        return Err(Error::InvalidArgument(format!("dimension {dim} is not a power of two")));
    }
    let sector = MagnetizationSector::new(dim.trailing_zeros() as usize, magnetization)?;
    if sector.len() < MIN_SECTOR_LEVELS {
        return Err(Error::SectorTooSmall { levels: sector.len(), need: MIN_SECTOR_LEVELS });
    }
    let block = sector.restrict(h.matrix())?;
    let spectra = match flip_parity_blocks(&block, &sector) {
        Some((even, odd)) => {
            let e = hermitian_eigenvalues(even);
            let o = hermitian_eigenvalues(odd);
            let width = (e[e.len() - 1] - e[0]).abs().max(1.0);
            let duplicate = e.iter().zip(&o).all(|(a, b)| (a - b).abs() <= 1e-9 * width);
            if duplicate {
                vec![e]
            } else {
                vec![e, o]
            }
        }
        None => vec![hermitian_eigenvalues(block)],
    };
    let blocks = spectra.len();
    let mut pooled = Vec::new();
    for levels in spectra {
        pooled.extend(unfold_spacings(&levels)?);
    }
    Ok(SpacingHistogram::from_spacings(pooled, blocks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{environment_operator, CouplingSet, CouplingUnits, EnvInteraction, C64};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn grid(n: usize, step: f64) -> Vec<f64> {
        (0..n).map(|i| i as f64 * step).collect()
    }

    #[test]
    fn exact_exponential_recovered() {
        let x = grid(11, 1.0);
        let y: Vec<f64> = x.iter().map(|v| (-v / 3.0).exp()).collect();
        let f = fit_exponential(&x, &y).unwrap();
        assert!((f.scale() - 3.0).abs() < 1e-9);
        assert!((f.amplitude() - 1.0).abs() < 1e-9);
        let y2: Vec<f64> = x.iter().map(|v| 2.5 * (-v / 0.7).exp()).collect();
        let f2 = fit_exponential(&x, &y2).unwrap();
        assert!((f2.scale() - 0.7).abs() < 1e-9 && (f2.amplitude() - 2.5).abs() < 1e-9);
    }

    #[test]
    fn exact_gaussian_recovered() {
        let x = grid(12, 0.25);
        let y: Vec<f64> = x.iter().map(|v| 1.7 * (-v * v / (2.0 * 0.9f64.powi(2))).exp()).collect();
        let f = fit_gaussian(&x, &y).unwrap();
        assert!((f.scale() - 0.9).abs() < 1e-9);
        assert!((f.amplitude() - 1.7).abs() < 1e-9);
    }

    #[test]
    fn constant_data_give_infinite_scale() {
        let x = grid(6, 1.0);
        let y = vec![0.8; 6];
        assert_eq!(fit_gaussian(&x, &y).unwrap().scale(), f64::INFINITY);
        let e = fit_exponential(&x, &y).unwrap();
        assert_eq!(e.scale(), f64::INFINITY);
        assert_eq!(e.amplitude(), 0.8);
        assert_eq!(e.residual_norm, 0.0);
    }

    #[test]
    fn model_selection_on_exponential_data() {
        let x = grid(15, 0.5);
        let y: Vec<f64> = x.iter().map(|v| (-v / 2.0).exp()).collect();
        let g = fit_gaussian(&x, &y).unwrap();
        let e = fit_exponential(&x, &y).unwrap();
        assert!(g.r_squared < e.r_squared);
        assert!(g.residual_norm > e.residual_norm);
    }

    #[test]
    fn fit_errors() {
        assert!(fit_exponential(&[0.0, 1.0, 2.0], &[1.0, 0.5, 0.2]).is_err());
        assert!(fit_exponential(&[0.0, 1.0, 2.0, 3.0], &[1.0, 0.5, 0.0, 0.1]).is_err());
        assert!(fit_gaussian(&[0.0, 1.0, 2.0, 3.0], &[1.0, -0.5, 0.1, 0.1]).is_err());
        assert!(fit_linear(&[1.0; 4], &[1.0, 2.0, 3.0, 4.0]).is_err());
    }

    #[test]
    fn linear_fit_exact() {
        let x = grid(5, 1.0);
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let f = fit_linear(&x, &y).unwrap();
        assert!((f.params[0] - 2.0).abs() < 1e-14 && (f.params[1] + 0.5).abs() < 1e-14);
        assert!((f.r_squared - 1.0).abs() < 1e-14);
    }

    #[test]
    fn early_window_rules() {
        let y = [1.0, 0.9, 0.7, 0.5, 0.4, 0.45, 0.3];
        assert_eq!(first_local_minimum(&y), 4);
        assert_eq!(early_window(&y, EarlyWindow::DecayFraction(0.55)), 3);
        assert_eq!(early_window(&y, EarlyWindow::Floor(0.45)), 4);
        assert_eq!(early_window(&y, EarlyWindow::All), 7);
        assert_eq!(early_window(&[1.0, 1.0, 1.0], EarlyWindow::default()), 3);
    }

    fn surface(t: Vec<f64>, taus: Vec<f64>, rows: Vec<Vec<f64>>) -> OtocSurface {
        OtocSurface {
            stderr: rows.iter().map(|r| vec![0.0; r.len()]).collect(),
            reference: vec![1.0; t.len()],
            raw: rows.clone(),
            normalized: rows,
            t_grid: t,
            tau_grid: taus,
            normalization: crate::otoc::Normalization::Pointwise,
            samples: Vec::new(),
            reduction_deviation: 0.0,
        }
    }

    #[test]
    fn reparameterize_identity_and_errors() {
        let t = grid(6, 1.0);
        let rows = vec![vec![1.0; 6], t.iter().map(|v| (-v / 2.0).exp()).collect()];
        let s = surface(t.clone(), vec![0.0, 1.0], rows.clone());
        let id = SpreadCurve { t: t.clone(), spread: t.clone() };
        let curves = reparameterize_otoc(&s, &id).unwrap();
        assert_eq!(curves[1].x, t);
        assert_eq!(curves[1].y, rows[1]);
        let flat = SpreadCurve { t: t.clone(), spread: vec![2.0; 6] };
        assert!(matches!(reparameterize_otoc(&s, &flat), Err(Error::NonInjective(_))));
        let short = SpreadCurve { t: grid(5, 1.0), spread: grid(5, 1.0) };
        assert!(matches!(reparameterize_otoc(&s, &short), Err(Error::GridMismatch(_))));
        let shifted = SpreadCurve { t: grid(6, 1.1), spread: t.clone() };
        assert!(matches!(reparameterize_otoc(&s, &shifted), Err(Error::GridMismatch(_))));
        // non-monotone tail is cut off
        let bump = SpreadCurve { t: t.clone(), spread: vec![0.0, 1.0, 2.0, 3.0, 2.5, 4.0] };
        assert_eq!(reparameterize_otoc(&s, &bump).unwrap()[0].x.len(), 4);
    }

    #[test]
    fn immunity_factor_recovers_rates() {
        let x = grid(10, 0.5);
        let taus = [0.0f64, 0.5, 1.0, 2.0];
        let curves: Vec<Curve> = taus
            .iter()
            .map(|&tau| {
                let lam = (-tau).exp();
                let y = if tau == 0.0 { vec![1.0; 10] } else { x.iter().map(|v| (-v / lam).exp()).collect() };
                Curve { tau, x: x.clone(), y }
            })
            .collect();
        let k = scrambling_immunity_factor(&curves, EarlyWindow::All, 8).unwrap();
        assert_eq!(k[0].kappa, f64::INFINITY);
        assert!(k[0].unscrambled);
        for f in &k[1..] {
            assert!((f.kappa - (-f.tau).exp()).abs() < 1e-9);
            assert!(!f.unscrambled);
        }
    }

    #[test]
    fn wigner_values() {
        assert_eq!(wigner_surmise(0.0).unwrap(), 0.0);
        let want = std::f64::consts::FRAC_PI_2 * (-std::f64::consts::FRAC_PI_4).exp();
        assert!((wigner_surmise(1.0).unwrap() - want).abs() < 1e-15);
        assert!((wigner_surmise(1.0).unwrap() - 0.7161).abs() < 1e-4);
        assert!(wigner_surmise(-0.1).is_err());
        // Simpson's rule on [0, 12]
        let n = 20_000;
        let h = 12.0 / n as f64;
        let mut acc = wigner_surmise(0.0).unwrap() + wigner_surmise(12.0).unwrap();
        for i in 1..n {
            acc += wigner_surmise(i as f64 * h).unwrap() * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        assert!((acc * h / 3.0 - 1.0).abs() < 1e-8);
    }

    #[test]
    fn picket_fence_unfolds_to_unit_spacing() {
        let levels: Vec<f64> = (0..200).map(|i| 3.0 + 0.25 * i as f64).collect();
        let s = unfold_spacings(&levels).unwrap();
        assert!(s.iter().all(|v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn uniform_levels_are_poissonian() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let mut levels: Vec<f64> = (0..2000).map(|_| rng.random_range(0.0..1.0)).collect();
        levels.sort_by(|a, b| a.total_cmp(b));
        let s = unfold_spacings(&levels).unwrap();
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        assert!((mean - 1.0).abs() < 0.02);
        assert!(ks_distance(&s, poisson_cdf) <= 0.05);
        assert!(ks_distance(&s, wigner_cdf) > 0.1);
    }

    #[test]
    fn goe_matrices_follow_wigner() {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let n = 400;
        let mut m = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v: f64 = StandardNormal.sample(&mut rng);
                let v = if i == j { v * 2f64.sqrt() } else { v };
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        let s = unfold_spacings(&ev).unwrap();
        assert!(ks_distance(&s, wigner_cdf) <= 0.08);
        assert!(ks_distance(&s, poisson_cdf) > 0.15);
    }

    #[test]
    fn ks_distance_basics() {
        assert!((ks_distance(&[0.5], |x| x) - 0.5).abs() < 1e-15);
        let u: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        assert!((ks_distance(&u, |x| x) - 0.005).abs() < 1e-12);
    }

    #[test]
    fn histogram_integrates_to_one() {
        let s = [0.1, 0.5, 0.5, 1.2, 2.9];
        let (edges, d) = histogram(&s, 30, 3.0);
        assert_eq!(edges.len(), 31);
        assert!((d.iter().sum::<f64>() * 0.1 - 1.0).abs() < 1e-12);
    }

    fn random_env(n: usize, seed: u64) -> CouplingSet {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut homo = DMatrix::zeros(n, n);
        for j in 0..n {
            for k in (j + 1)..n {
                let v: f64 = rng.random_range(-1.0..1.0);
                homo[(j, k)] = v;
                homo[(k, j)] = v;
            }
        }
        CouplingSet::new(vec![0.0; n], homo, CouplingUnits::Dimensionless).unwrap()
    }

    #[test]
    fn level_spacings_errors_and_symmetry_blocks() {
        let c = random_env(6, 2);
        let h = environment_operator(&c, EnvInteraction::Dipolar);
        assert_eq!(level_spacings(&h, 0).unwrap_err(), Error::SectorTooSmall { levels: 20, need: 50 });
        let bad = OperatorMatrix::general(CMatrix::from_element(4, 4, C64::new(0.0, 1.0))).unwrap();
        assert!(matches!(level_spacings(&bad, 0), Err(Error::NotHermitian { .. })));

        let c = random_env(10, 5);
        let h = environment_operator(&c, EnvInteraction::Dipolar);
        let hist = level_spacings(&h, 0).unwrap();
        assert_eq!(hist.blocks, 2);
        assert!((hist.mean() - 1.0).abs() < 0.02);
        assert!(hist.spacings.iter().all(|&s| s >= 0.0));
        let zz = environment_operator(&c, EnvInteraction::IsingOnly);
        assert_eq!(level_spacings(&zz, 0).unwrap().blocks, 1);
        // off-centre sector has no flip symmetry
        assert_eq!(level_spacings(&h, 2).unwrap().blocks, 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn fits_are_scale_equivariant(lam in 0.3f64..5.0, amp in 0.1f64..3.0, c in 0.01f64..100.0, noise_seed in 0u64..1000) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(noise_seed);
            let x = grid(12, 0.4);
            let y: Vec<f64> = x.iter().map(|v| amp * (-v / lam).exp() * (1.0 + 0.02 * rng.random_range(-1.0..1.0))).collect();
            let yc: Vec<f64> = y.iter().map(|v| v * c).collect();
            for fit in [fit_exponential, fit_gaussian] {
                let a = fit(&x, &y).unwrap();
                let b = fit(&x, &yc).unwrap();
                prop_assert!((b.amplitude() - c * a.amplitude()).abs() <= 1e-9 * c * a.amplitude());
                prop_assert!((b.scale() - a.scale()).abs() <= 1e-9 * a.scale(), "{:?} {:?}", a, b);
            }
        }

        #[test]
        fn unfolded_mean_is_one(seed in 0u64..1000) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut levels: Vec<f64> = (0..300).map(|_| (0..3).map(|_| rng.random_range(-1.0f64..1.0)).sum()).collect();
            levels.sort_by(|a, b| a.total_cmp(b));
            let s = unfold_spacings(&levels).unwrap();
            let mean = s.iter().sum::<f64>() / s.len() as f64;
            prop_assert!((mean - 1.0).abs() <= 0.02);
        }
    }
}
