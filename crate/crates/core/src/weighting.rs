//! Block-diagonal observation covariance `Q̂_ρ = blkdiag(Σ_Q, Σ_R, Σ_ρ)`.
//!
//! The blocks are covariances: the EKI update drives the residual down in the
//! `Q̂_ρ⁻¹`-weighted norm, so the precision of each block is the matching cost
//! weight (`Q`, `R`, `R_H`, `ρ`). That makes `½‖C(U)‖²_{Q̂⁻¹}` equal to the
//! augmented objective `Φ(U)`. The matrix is never densified on the hot path.

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_len, Error, Result};
use crate::problem::{check_spd, ProblemSpec};

#[derive(Debug, Clone, PartialEq)]
pub enum WeightBlock {
    /// `I_count ⊗ covariance`.
    Repeated {
        covariance: DMatrix<f64>,
        precision: DMatrix<f64>,
        count: usize,
    },
    /// `variance · I_dim`.
    ScaledIdentity { dim: usize, variance: f64 },
}

impl WeightBlock {
    /// Builds a repeated block from its covariance; the precision is its inverse.
    pub fn repeated_covariance(name: &'static str, covariance: DMatrix<f64>, count: usize) -> Result<Self> {
        check_spd(name, &covariance)?;
        let precision = spd_inverse(name, &covariance)?;
        Ok(WeightBlock::Repeated {
            covariance,
            precision,
            count,
        })
    }

    /// Builds a repeated block whose precision is the given cost weight.
    pub fn repeated_precision(name: &'static str, precision: DMatrix<f64>, count: usize) -> Result<Self> {
        check_spd(name, &precision)?;
        let covariance = spd_inverse(name, &precision)?;
        Ok(WeightBlock::Repeated {
            covariance,
            precision,
            count,
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            WeightBlock::Repeated {
                covariance, count, ..
            } => covariance.nrows() * count,
            WeightBlock::ScaledIdentity { dim, .. } => *dim,
        }
    }
}

fn spd_inverse(name: &'static str, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    a.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(Error::NotPositiveDefinite { name })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeighting {
    blocks: Vec<WeightBlock>,
    dim: usize,
}

impl BlockWeighting {
    pub fn from_blocks(blocks: Vec<WeightBlock>) -> Result<Self> {
        for b in &blocks {
            if let WeightBlock::ScaledIdentity { variance, .. } = b {
                if !(*variance > 0.0 && variance.is_finite()) {
                    return Err(Error::NotPositiveDefinite { name: "scaled identity block" });
                }
            }
        }
        let dim = blocks.iter().map(WeightBlock::dim).sum();
        Ok(BlockWeighting { blocks, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> &[WeightBlock] {
        &self.blocks
    }

    /// Dense `Q̂`; used by the direct gain path and by tests.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim, self.dim);
        let mut off = 0;
        for b in &self.blocks {
            match b {
                WeightBlock::Repeated {
                    covariance, count, ..
                } => {
                    let k = covariance.nrows();
                    for _ in 0..*count {
                        out.view_mut((off, off), (k, k)).copy_from(covariance);
                        off += k;
                    }
                }
                WeightBlock::ScaledIdentity { dim, variance } => {
                    for i in 0..*dim {
                        out[(off + i, off + i)] = *variance;
                    }
                    off += dim;
                }
            }
        }
        out
    }

    /// Adds `Q̂` to a dense `d × d` matrix in place.
    pub fn add_to(&self, target: &mut DMatrix<f64>) {
        let mut off = 0;
        for b in &self.blocks {
            match b {
                WeightBlock::Repeated {
                    covariance, count, ..
                } => {
                    let k = covariance.nrows();
                    for _ in 0..*count {
                        let mut v = target.view_mut((off, off), (k, k));
                        v += covariance;
                        off += k;
                    }
                }
                WeightBlock::ScaledIdentity { dim, variance } => {
                    for i in 0..*dim {
                        target[(off + i, off + i)] += *variance;
                    }
                    off += dim;
                }
            }
        }
    }

    /// `Q̂⁻¹ M` for a matrix with `d` rows, applied block by block.
    pub fn apply_precision(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        ensure_len("weighted matrix rows", self.dim, m.nrows())?;
        let mut out = DMatrix::zeros(m.nrows(), m.ncols());
        let mut off = 0;
        for b in &self.blocks {
            match b {
                WeightBlock::Repeated {
                    precision, count, ..
                } => {
                    let k = precision.nrows();
                    for _ in 0..*count {
                        let src = m.rows(off, k);
                        out.rows_mut(off, k).copy_from(&(precision * src));
                        off += k;
                    }
                }
                WeightBlock::ScaledIdentity { dim, variance } => {
                    let src = m.rows(off, *dim);
                    out.rows_mut(off, *dim).copy_from(&(src / *variance));
                    off += dim;
                }
            }
        }
        Ok(out)
    }

    /// `vᵀ Q̂⁻¹ v`.
    pub fn precision_norm_sq(&self, v: &[f64]) -> Result<f64> {
        ensure_len("weighted vector", self.dim, v.len())?;
        let m = DMatrix::from_column_slice(v.len(), 1, v);
        let w = self.apply_precision(&m)?;
        Ok(DVector::from_column_slice(v).dot(&w.column(0)))
    }
}

/// `Q̂_ρ` for the problem: `(I_H ⊗ Q⁻¹, I_H ⊗ R⁻¹, R_H⁻¹, (1/ρ) I_{Hq})`.
pub fn build_weighting(spec: &ProblemSpec, rho: f64) -> Result<BlockWeighting> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::param("rho", format!("penalty must be positive and finite, got {rho}")));
    }
    let dims = spec.dims();
    let w = spec.weights();
    let mut blocks = vec![
        WeightBlock::repeated_precision("Q", w.input.clone(), dims.horizon)?,
        WeightBlock::repeated_precision("R", w.state.clone(), dims.horizon)?,
        WeightBlock::repeated_precision("R_H", w.terminal.clone(), 1)?,
    ];
    if dims.constraints > 0 {
        blocks.push(WeightBlock::ScaledIdentity {
            dim: dims.stacked_constraints_len(),
            variance: 1.0 / rho,
        });
    }
    BlockWeighting::from_blocks(blocks)
}
