use super::{CMatrix, C64};
use crate::error::{Error, Result};

/// Tolerance for the hermitian tag: max|A − A†|.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Tolerance for the unitary tag: max|U†U − 1|.
pub const UNITARY_TOL: f64 = 1e-10;

/// Dense complex operator with hermitian/unitary tags.
///
/// Tags are checked on construction. Products keep the unitary tag when both
/// factors carry it; the hermitian tag survives only where it is structural.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix {
    data: CMatrix,
    hermitian: bool,
    unitary: bool,
    diagonal: bool,
}

fn is_diagonal(m: &CMatrix) -> bool {
    let n = m.nrows();
    for c in 0..n {
        for r in 0..n {
            if r != c && m[(r, c)] != C64::new(0.0, 0.0) {
                return false;
            }
        }
    }
    true
}

fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.norm()))
}

impl OperatorMatrix {
    /// Trusted constructor for builders whose structure guarantees the tags.
    pub(crate) fn from_parts(data: CMatrix, hermitian: bool, unitary: bool) -> Self {
        let diagonal = is_diagonal(&data);
        Self { data, hermitian, unitary, diagonal }
    }

    pub fn general(data: CMatrix) -> Result<Self> {
        if data.nrows() != data.ncols() {
            return Err(Error::InvalidArgument(format!(
                "operator must be square, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        Ok(Self::from_parts(data, false, false))
    }

    /// Tags `data` as hermitian; the defect scale is relative to max(1, max|A|).
    pub fn hermitian(data: CMatrix) -> Result<Self> {
        let op = Self::general(data)?;
        let defect = op.hermitian_defect();
        if defect > HERMITIAN_TOL * max_abs(&op.data).max(1.0) {
            return Err(Error::NotHermitian { defect });
        }
        Ok(Self { hermitian: true, ..op })
    }

    pub fn unitary(data: CMatrix) -> Result<Self> {
        let op = Self::general(data)?;
        let defect = op.unitary_defect();
        if defect > UNITARY_TOL {
            return Err(Error::NotUnitary { defect });
        }
        Ok(Self { unitary: true, ..op })
    }

    pub fn identity(dim: usize) -> Self {
        Self { data: CMatrix::identity(dim, dim), hermitian: true, unitary: true, diagonal: true }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.data
    }

    pub fn into_matrix(self) -> CMatrix {
        self.data
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn is_unitary(&self) -> bool {
        self.unitary
    }

    pub fn is_diagonal(&self) -> bool {
        self.diagonal
    }

    pub fn hermitian_defect(&self) -> f64 {
        let n = self.dim();
        let mut defect = 0.0f64;
        for c in 0..n {
            for r in c..n {
                defect = defect.max((self.data[(r, c)] - self.data[(c, r)].conj()).norm());
            }
        }
        defect
    }

    pub fn unitary_defect(&self) -> f64 {
        let n = self.dim();
        let prod = self.data.adjoint() * &self.data;
        let mut defect = 0.0f64;
        for c in 0..n {
            for r in 0..n {
                let target = if r == c { 1.0 } else { 0.0 };
                defect = defect.max((prod[(r, c)] - C64::new(target, 0.0)).norm());
            }
        }
        defect
    }

    pub fn adjoint(&self) -> Self {
        Self { data: self.data.adjoint(), hermitian: self.hermitian, unitary: self.unitary, diagonal: self.diagonal }
    }

    /// Matrix product. Diagonal factors scale rows or columns instead of a full GEMM.
    pub fn mul(&self, rhs: &OperatorMatrix) -> OperatorMatrix {
        let n = self.dim();
        let data = if self.diagonal {
            let mut out = rhs.data.clone();
            for r in 0..n {
                let d = self.data[(r, r)];
                out.row_mut(r).iter_mut().for_each(|v| *v *= d);
            }
            out
        } else if rhs.diagonal {
            let mut out = self.data.clone();
            for c in 0..n {
                let d = rhs.data[(c, c)];
                out.column_mut(c).iter_mut().for_each(|v| *v *= d);
            }
            out
        } else {
            &self.data * &rhs.data
        };
        let both_unitary = self.unitary && rhs.unitary;
        let diagonal = self.diagonal && rhs.diagonal;
        Self { data, hermitian: diagonal && self.hermitian && rhs.hermitian, unitary: both_unitary, diagonal }
    }

    /// U·A·U† for a unitary U.
    pub fn conjugate_by(&self, u: &OperatorMatrix) -> OperatorMatrix {
        let out = u.mul(self).mul(&u.adjoint());
        Self { hermitian: self.hermitian, unitary: self.unitary, ..out }
    }

    pub fn trace(&self) -> C64 {
        self.data.trace()
    }

    /// Tr[A·B] without forming the product.
    pub fn trace_product(&self, rhs: &OperatorMatrix) -> C64 {
        let n = self.dim();
        let mut acc = C64::new(0.0, 0.0);
        for c in 0..n {
            for r in 0..n {
                acc += self.data[(r, c)] * rhs.data[(c, r)];
            }
        }
        acc
    }

    /// [A, B] = AB − BA.
    pub fn commutator(&self, rhs: &OperatorMatrix) -> OperatorMatrix {
        let data = self.mul(rhs).data - rhs.mul(self).data;
        Self::from_parts(data, false, false)
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.data)
    }

    pub fn max_abs_diff(&self, rhs: &OperatorMatrix) -> f64 {
        max_abs(&(&self.data - &rhs.data))
    }
}
