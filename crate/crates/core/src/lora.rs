//! Low-rank adapter factor pairs.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Adapter factor pair `(B: d×r, A: r×k)` with its rank and scaling
/// numerator. The effective contribution to the weight matrix is
/// `(alpha / rank) · B · A`.
#[derive(Debug, Clone)]
pub struct LoraFactors {
    b: Matrix,
    a: Matrix,
    rank: usize,
    alpha: f64,
}

impl LoraFactors {
    /// Validates `B.cols == A.rows`, `rank ≤ min(d, k)` and `alpha > 0`.
    pub fn new(b: Matrix, a: Matrix, alpha: f64) -> Result<Self> {
        if b.cols() != a.rows() {
            return Err(Error::ShapeMismatch(format!(
                "factor inner dimensions {} vs {}",
                b.cols(),
                a.rows()
            )));
        }
        let rank = b.cols();
        let max = b.rows().min(a.cols());
        if rank > max {
            return Err(Error::RankOutOfRange { rank, max });
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidConfig {
                field: "alpha".into(),
                message: format!("must be a positive finite real, got {alpha}"),
            });
        }
        Ok(LoraFactors { b, a, rank, alpha })
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `alpha / rank`.
    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    /// Output shape `(d, k)` of the reconstructed contribution.
    pub fn out_shape(&self) -> (usize, usize) {
        (self.b.rows(), self.a.cols())
    }

    pub(crate) fn replace_parts(&self, b: Matrix, a: Matrix) -> Result<Self> {
        LoraFactors::new(b, a, self.alpha)
    }
}

/// Effective adapter contribution `(alpha / rank) · B · A`, shape d×k.
pub fn reconstruct(factors: &LoraFactors) -> Matrix {
    factors.b.matmul(&factors.a).scale(factors.scaling())
}
