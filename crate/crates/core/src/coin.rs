//! Classical coin game: flip k of N coins, apply m random swaps, flip the same
//! k positions back and count the coins that returned to heads.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::fit_exponential;
use crate::error::{Error, Result};
use crate::reduce::{map_indexed, pairwise_sum};

/// Trials per independently seeded chunk.
pub const TRIALS_PER_CHUNK: usize = 4096;

fn check_nk(n: usize, k: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("coin game needs N >= 2, got {n}")));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds N = {n}")));
    }
    Ok(())
}

/// Probability that a random swap exchanges a flipped with an unflipped coin:
/// 2(kN − k²)/(N² − N).
pub fn successful_swap_probability(n: usize, k: usize) -> Result<f64> {
    check_nk(n, k)?;
    let (n, k) = (n as f64, k as f64);
    Ok(2.0 * (k * n - k * k) / (n * n - n))
}

/// A_OL = (1 − (2m/N)·P_ssw)², clamped at 0 before squaring.
pub fn overlap_amplitude(n: usize, k: usize, m: usize) -> Result<f64> {
    let p = successful_swap_probability(n, k)?;
    let base = (1.0 - 2.0 * m as f64 / n as f64 * p).clamp(0.0, 1.0);
    Ok(base * base)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CoinParams {
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub trials: usize,
    pub seed: u64,
}

impl CoinParams {
    pub fn validate(&self) -> Result<()> {
        check_nk(self.n, self.k)?;
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CoinResult {
    pub params: CoinParams,
    pub analytic: f64,
    /// Squared mean matching fraction, the quantity A_OL approximates.
    pub mc: f64,
    pub stderr: f64,
    pub mean_fraction: f64,
    pub fraction_stderr: f64,
}

/// Sum of matching fractions and of their squares over one chunk.
fn run_chunk(p: &CoinParams, chunk: usize, trials: usize) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    rng.set_stream(chunk as u64);
    let mut flipped = vec![false; p.n];
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..trials {
        flipped.iter_mut().for_each(|c| *c = false);
        let chosen = index::sample(&mut rng, p.n, p.k);
        for i in chosen.iter() {
            flipped[i] = true;
        }
        for _ in 0..p.m {
            let i = rng.random_range(0..p.n);
            let mut j = rng.random_range(0..p.n - 1);
            if j >= i {
                j += 1;
            }
            flipped.swap(i, j);
        }
        for i in chosen.iter() {
            flipped[i] = !flipped[i];
        }
        let f = flipped.iter().filter(|&&c| !c).count() as f64 / p.n as f64;
        s += f;
        s2 += f * f;
    }
    (s, s2)
}

/// Monte Carlo estimate of the echo overlap. Chunk c draws from stream c of a
/// ChaCha8 generator seeded with `p.seed`, so results do not depend on the
/// thread count.
pub fn coin_monte_carlo(p: &CoinParams) -> Result<CoinResult> {
    p.validate()?;
    let chunks = p.trials.div_ceil(TRIALS_PER_CHUNK);
    let parts = map_indexed(chunks, |c| {
        let len = TRIALS_PER_CHUNK.min(p.trials - c * TRIALS_PER_CHUNK);
        run_chunk(p, c, len)
    });
    let n = p.trials as f64;
    let sum = pairwise_sum(&parts.iter().map(|x| x.0).collect::<Vec<_>>());
    let sum2 = pairwise_sum(&parts.iter().map(|x| x.1).collect::<Vec<_>>());
    let mean = sum / n;
    let var = if p.trials > 1 { ((sum2 - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
    let fraction_stderr = (var / n).sqrt();
    Ok(CoinResult {
        params: *p,
        analytic: overlap_amplitude(p.n, p.k, p.m)?,
        mc: mean * mean,
        stderr: 2.0 * mean * fraction_stderr,
        mean_fraction: mean,
        fraction_stderr,
    })
}

/// κ of an exponential fit A(k) = A₀·exp(−k/κ); ∞ when the data do not decay.
pub fn swap_immunity_factor(k: &[f64], overlap: &[f64]) -> Result<f64> {
    Ok(fit_exponential(k, overlap)?.scale())
}

/// κ(m) from the analytic overlap curve over `ks` for each m in `ms`.
pub fn analytic_swap_immunity(n: usize, ks: &[usize], ms: &[usize]) -> Result<Vec<f64>> {
    let x: Vec<f64> = ks.iter().map(|&k| k as f64).collect();
    ms.iter()
        .map(|&m| {
            let y = ks.iter().map(|&k| overlap_amplitude(n, k, m)).collect::<Result<Vec<_>>>()?;
            swap_immunity_factor(&x, &y)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn swap_probability_examples() {
        assert_eq!(successful_swap_probability(15, 0).unwrap(), 0.0);
        assert_eq!(successful_swap_probability(15, 15).unwrap(), 0.0);
        assert!((successful_swap_probability(15, 7).unwrap() - 8.0 / 15.0).abs() < 1e-15);
        assert!(successful_swap_probability(1, 0).is_err());
        assert!(successful_swap_probability(4, 5).is_err());
    }

    #[test]
    fn swap_probability_by_enumeration() {
        for n in 2..9 {
            for k in 0..=n {
                // coins 0..k flipped; count unordered pairs straddling the boundary
                let mut good = 0;
                let mut all = 0;
                for i in 0..n {
                    for j in (i + 1)..n {
                        all += 1;
                        if (i < k) != (j < k) {
                            good += 1;
                        }
                    }
                }
                let p = successful_swap_probability(n, k).unwrap();
                assert!((p - good as f64 / all as f64).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn overlap_examples() {
        assert_eq!(overlap_amplitude(15, 7, 0).unwrap(), 1.0);
        assert_eq!(overlap_amplitude(15, 0, 9).unwrap(), 1.0);
        assert_eq!(overlap_amplitude(15, 15, 9).unwrap(), 1.0);
        let want = (1.0 - 4.0 / 15.0 * 56.0 / 210.0f64).powi(2);
        assert!((overlap_amplitude(15, 7, 1).unwrap() - want).abs() < 1e-15);
        assert!((want - 0.862835).abs() < 1e-6);
        assert_eq!(overlap_amplitude(4, 2, 20).unwrap(), 0.0);
    }

    #[test]
    fn monte_carlo_edge_cases() {
        let r = coin_monte_carlo(&CoinParams { n: 15, k: 7, m: 0, trials: 500, seed: 1 }).unwrap();
        assert_eq!((r.mc, r.stderr), (1.0, 0.0));
        let r = coin_monte_carlo(&CoinParams { n: 2, k: 1, m: 1, trials: 300, seed: 1 }).unwrap();
        assert_eq!((r.mc, r.mean_fraction), (0.0, 0.0));
        assert!(coin_monte_carlo(&CoinParams { n: 5, k: 1, m: 1, trials: 0, seed: 1 }).is_err());
    }

    #[test]
    fn monte_carlo_is_deterministic_and_thread_independent() {
        let p = CoinParams { n: 15, k: 5, m: 3, trials: 10_000, seed: 9 };
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| coin_monte_carlo(&p)).unwrap();
        let b = four.install(|| coin_monte_carlo(&p)).unwrap();
        assert_eq!(a, b);
        let c = coin_monte_carlo(&CoinParams { seed: 10, ..p }).unwrap();
        assert_ne!(a.mc, c.mc);
    }

    #[test]
    fn monte_carlo_tracks_analytic_at_small_m() {
        for k in [1, 4, 7] {
            for m in [1, 2] {
                let r = coin_monte_carlo(&CoinParams { n: 15, k, m, trials: 20_000, seed: 3 }).unwrap();
                assert!((r.mc - r.analytic).abs() <= 0.02, "k={k} m={m}: {} vs {}", r.mc, r.analytic);
            }
        }
    }

    #[test]
    fn immunity_factor_examples() {
        let k: Vec<f64> = (1..=8).map(f64::from).collect();
        let y: Vec<f64> = k.iter().map(|v| (-v / 3.0).exp()).collect();
        assert!((swap_immunity_factor(&k, &y).unwrap() - 3.0).abs() < 1e-9);
        assert_eq!(swap_immunity_factor(&k, &[0.5; 8]).unwrap(), f64::INFINITY);
        assert!(swap_immunity_factor(&k, &[0.5, 0.4, 0.0, 0.1, 0.1, 0.1, 0.1, 0.1]).is_err());
        let ks: Vec<usize> = (1..=8).collect();
        let kappa = analytic_swap_immunity(15, &ks, &[6, 8]).unwrap();
        assert!(kappa[0].is_finite() && kappa[1] < kappa[0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn overlap_symmetric_under_complement(n in 2usize..40, kf in 0.0f64..=1.0, m in 0usize..20) {
            let k = ((n as f64) * kf).round() as usize;
            let a = overlap_amplitude(n, k, m).unwrap();
            let b = overlap_amplitude(n, n - k, m).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn monte_carlo_decreases_with_swaps(k in 1usize..14, m in 0usize..6, seed in 0u64..100) {
            let run = |m| coin_monte_carlo(&CoinParams { n: 15, k, m, trials: 4000, seed }).unwrap();
            let a = run(m);
            let b = run(m + 2);
            let se = (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
            prop_assert!(b.mc < a.mc + 3.0 * se);
            prop_assert!((0.0..=1.0).contains(&a.mc));
        }
    }
}
