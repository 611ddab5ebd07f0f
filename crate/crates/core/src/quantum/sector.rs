use nalgebra::DMatrix;

use super::{site_mask, spin_sign, CMatrix, CouplingSet, EnvInteraction};
use crate::error::{Error, Result};

/// Basis states of `n_sites` spins with fixed total magnetization
/// M = n_up − n_down, listed in increasing basis index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MagnetizationSector {
    n_sites: usize,
    magnetization: i32,
    states: Vec<usize>,
}

impl MagnetizationSector {
    pub fn new(n_sites: usize, magnetization: i32) -> Result<Self> {
        if n_sites == 0 || n_sites > 30 {
            return Err(Error::InvalidSystem(format!("{n_sites} sites not supported")));
        }
        let n = n_sites as i32;
        if magnetization.abs() > n || (n - magnetization) % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "magnetization {magnetization} impossible for {n_sites} spins"
            )));
        }
        let n_down = ((n - magnetization) / 2) as u32;
        let states = (0..1usize << n_sites).filter(|a| a.count_ones() == n_down).collect();
        Ok(Self { n_sites, magnetization, states })
    }

    /// Most populous sector: M = 0 for even counts, M = +1 for odd.
    pub fn central(n_sites: usize) -> Result<Self> {
        Self::new(n_sites, (n_sites % 2) as i32)
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn magnetization(&self) -> i32 {
        self.magnetization
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }

    pub fn index_of(&self, state: usize) -> Option<usize> {
        self.states.binary_search(&state).ok()
    }

    /// Every sector from M = +n down to M = −n.
    pub fn all(n_sites: usize) -> Result<Vec<Self>> {
        (0..=n_sites).map(|n_down| Self::new(n_sites, n_sites as i32 - 2 * n_down as i32)).collect()
    }

    /// Restriction of a full operator on `n_sites` spins to this sector.
    pub fn restrict(&self, m: &CMatrix) -> Result<CMatrix> {
        let dim = 1usize << self.n_sites;
        if m.nrows() != dim || m.ncols() != dim {
            return Err(Error::LengthMismatch { expected: dim, got: m.nrows() });
        }
        let k = self.len();
        Ok(CMatrix::from_fn(k, k, |r, c| m[(self.states[r], self.states[c])]))
    }
}

/// Image of a basis state under the global flip Π σX.
pub fn spin_flip_partner(state: usize, n_sites: usize) -> usize {
    state ^ ((1usize << n_sites) - 1)
}

/// Environment H_E restricted to one magnetization sector, built without the
/// full 2^N matrix.
pub fn environment_sector_hamiltonian(
    c: &CouplingSet,
    sector: &MagnetizationSector,
    interaction: EnvInteraction,
) -> Result<DMatrix<f64>> {
    let n = c.n_env();
    if sector.n_sites() != n {
        return Err(Error::LengthMismatch { expected: n, got: sector.n_sites() });
    }
    let omega = c.homo();
    let k = sector.len();
    let mut h = DMatrix::<f64>::zeros(k, k);
    for (col, &a) in sector.states().iter().enumerate() {
        for j in 0..n {
            for l in (j + 1)..n {
                let w = omega[(j, l)];
                if w == 0.0 {
                    continue;
                }
                let sj = spin_sign(a, j, n);
                let sl = spin_sign(a, l, n);
                h[(col, col)] += w * sj * sl;
                if interaction == EnvInteraction::Dipolar && sj != sl {
                    let b = a ^ site_mask(j, n) ^ site_mask(l, n);
                    let row = sector.index_of(b).expect("flip-flop conserves magnetization");
                    h[(row, col)] -= w;
                }
            }
        }
    }
    Ok(h)
}
