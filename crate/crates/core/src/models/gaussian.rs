//! Multivariate Gaussian targets with exact block full conditionals.
//!
//! Two stock constructions matter for the stress experiments: the Jacobi
//! precision `0.01·I + ones` (strong dependence, Jacobi iteration diverges)
//! and the exponential covariance `Σ_ij = exp(-φ|i-j|)` (weak dependence,
//! Jacobi iteration contracts). Conditionals are computed from the precision
//! matrix, which only needs the sub-block of the coordinates being updated.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::TargetModel;
use crate::proposal::ProposalDescriptor;
use crate::scalar::{real, EngineRng, Scalar};
use crate::state::ParameterState;
use crate::value::{CoordinateId, Value, ValueShape};

/// Gaussian target `N(mean, precision⁻¹)` partitioned into coordinate blocks.
#[derive(Debug, Clone)]
pub struct GaussianTarget<T: Scalar> {
    mean: DVector<T>,
    precision: DMatrix<T>,
    covariance: DMatrix<T>,
    blocks: Vec<Vec<usize>>,
}

impl<T: Scalar> GaussianTarget<T> {
    /// Build from a precision matrix, partitioning `0..dim` into consecutive
    /// blocks of `block_size` (the last block absorbs any remainder).
    pub fn from_precision(
        mean: DVector<T>,
        precision: DMatrix<T>,
        block_size: usize,
    ) -> Result<Self> {
        let dim = precision.nrows();
        if precision.ncols() != dim || mean.len() != dim {
            return Err(Error::InvalidConfig(
                "precision must be square and match the mean length".into(),
            ));
        }
        if (precision.clone() - precision.transpose()).norm()
            > real::<T>(1e-10) * precision.norm()
        {
            return Err(Error::NotPositiveDefinite("precision not symmetric".into()));
        }
        // Cholesky doubles as the SPD check.
        let chol = linalg::spd_cholesky(precision.clone())?;
        let covariance = linalg::symmetrize(chol.inverse());
        let blocks = consecutive_blocks(dim, block_size)?;
        Ok(GaussianTarget {
            mean,
            precision,
            covariance,
            blocks,
        })
    }

    /// Build from a covariance matrix (inverted densely).
    pub fn from_covariance(
        mean: DVector<T>,
        covariance: DMatrix<T>,
        block_size: usize,
    ) -> Result<Self> {
        let precision = linalg::symmetrize(linalg::spd_inverse(covariance)?);
        Self::from_precision(mean, precision, block_size)
    }

    /// The Jacobi stress target: precision `0.01·I + ones(dim × dim)`,
    /// zero mean.
    pub fn jacobi(dim: usize, block_size: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidConfig("jacobi target needs dim >= 2".into()));
        }
        let precision = DMatrix::from_fn(dim, dim, |i, j| {
            if i == j {
                real::<T>(1.01)
            } else {
                T::one()
            }
        });
        Self::from_precision(DVector::zeros(dim), precision, block_size)
    }

    /// Exponential-covariance target: `Σ_ij = exp(-φ|i-j|)`, zero mean,
    /// unit variance.
    pub fn exponential(dim: usize, phi: f64, block_size: usize) -> Result<Self> {
        if dim < 1 || phi <= 0.0 {
            return Err(Error::InvalidConfig(
                "exponential target needs dim >= 1 and phi > 0".into(),
            ));
        }
        let covariance = DMatrix::from_fn(dim, dim, |i, j| {
            real::<T>((-phi * i.abs_diff(j) as f64).exp())
        });
        Self::from_covariance(DVector::zeros(dim), covariance, block_size)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<T> {
        &self.mean
    }

    pub fn precision(&self) -> &DMatrix<T> {
        &self.precision
    }

    /// Analytic covariance (the inverse of the precision).
    pub fn covariance(&self) -> &DMatrix<T> {
        &self.covariance
    }

    pub fn block(&self, coord: CoordinateId) -> &[usize] {
        &self.blocks[coord.0]
    }

    /// Assemble the flat parameter vector from a state.
    pub fn flat_state(&self, state: &ParameterState<T>) -> DVector<T> {
        let mut x = DVector::zeros(self.dim());
        for (b, idx) in self.blocks.iter().enumerate() {
            match state.value(CoordinateId(b)) {
                Value::Scalar(v) => x[idx[0]] = *v,
                Value::Vector(v) => {
                    for (k, &i) in idx.iter().enumerate() {
                        x[i] = v[k];
                    }
                }
                Value::Matrix(_) => unreachable!("gaussian blocks are scalar or vector"),
            }
        }
        x
    }

    fn block_value(&self, coord: CoordinateId, v: &DVector<T>) -> Value<T> {
        let idx = self.block(coord);
        if idx.len() == 1 {
            Value::Scalar(v[0])
        } else {
            Value::Vector(v.clone())
        }
    }

    fn value_as_vector(&self, coord: CoordinateId, value: &Value<T>) -> Result<DVector<T>> {
        let idx = self.block(coord);
        match value {
            Value::Scalar(x) if idx.len() == 1 => Ok(DVector::from_element(1, *x)),
            Value::Vector(v) if v.len() == idx.len() => Ok(v.clone()),
            other => Err(Error::ShapeMismatch {
                coord,
                expected: self.shape(coord),
                got: other.shape(),
            }),
        }
    }

    /// Exact conditional of one block given the rest of the state: the mean
    /// and covariance of `x[block] | x[rest]`.
    pub fn conditional_block(
        &self,
        state: &ParameterState<T>,
        coord: CoordinateId,
    ) -> Result<(DVector<T>, DMatrix<T>)> {
        let x = self.flat_state(state);
        let (mean, cov_chol) =
            linalg::conditional_from_precision(&self.precision, &self.mean, &x, self.block(coord))?;
        Ok((mean, &cov_chol * cov_chol.transpose()))
    }
}

fn consecutive_blocks(dim: usize, block_size: usize) -> Result<Vec<Vec<usize>>> {
    if block_size == 0 {
        return Err(Error::InvalidConfig("block_size must be positive".into()));
    }
    let mut blocks = Vec::new();
    let mut at = 0;
    while at < dim {
        let end = (at + block_size).min(dim);
        blocks.push((at..end).collect());
        at = end;
    }
    Ok(blocks)
}

impl<T: Scalar> TargetModel<T> for GaussianTarget<T> {
    type Cache = ();

    fn coord_count(&self) -> usize {
        self.blocks.len()
    }

    fn shape(&self, coord: CoordinateId) -> ValueShape {
        let len = self.blocks[coord.0].len();
        if len == 1 {
            ValueShape::Scalar
        } else {
            ValueShape::Vector(len)
        }
    }

    fn initial_state(&self) -> ParameterState<T> {
        let values = self
            .blocks
            .iter()
            .map(|idx| {
                if idx.len() == 1 {
                    Value::Scalar(T::zero())
                } else {
                    Value::Vector(DVector::zeros(idx.len()))
                }
            })
            .collect();
        ParameterState::new(values)
    }

    fn init_cache(&self, _state: &ParameterState<T>) -> Self::Cache {}

    fn log_joint(&self, state: &ParameterState<T>) -> Result<T> {
        let x = self.flat_state(state);
        let diff = &x - &self.mean;
        let q = (&self.precision * &diff).dot(&diff);
        if !q.is_finite() {
            return Err(Error::SupportViolation {
                coord: CoordinateId(0),
                context: "quadratic form not finite".into(),
            });
        }
        Ok(-q / real(2.0))
    }

    fn log_joint_ratio(
        &self,
        state: &ParameterState<T>,
        _cache: &Self::Cache,
        coord: CoordinateId,
        new_value: &Value<T>,
    ) -> Result<T> {
        // Only terms touching the block change:
        //   Δ = -uᵀ Λ (x - μ) - ½ uᵀ Λ_bb u,  u = new - old on the block.
        let idx = self.block(coord);
        let new_b = self.value_as_vector(coord, new_value)?;
        let x = self.flat_state(state);
        let diff = &x - &self.mean;
        let mut u = DVector::zeros(idx.len());
        for (k, &i) in idx.iter().enumerate() {
            u[k] = new_b[k] - x[i];
        }
        let mut cross = T::zero();
        for (k, &i) in idx.iter().enumerate() {
            let mut row = T::zero();
            for j in 0..self.dim() {
                row += self.precision[(i, j)] * diff[j];
            }
            cross += u[k] * row;
        }
        let prec_bb = linalg::sub_square(&self.precision, idx);
        let quad = (&prec_bb * &u).dot(&u);
        let ratio = -cross - quad / real(2.0);
        if !ratio.is_finite() {
            return Err(Error::SupportViolation {
                coord,
                context: "log density ratio not finite".into(),
            });
        }
        Ok(ratio)
    }

    fn sample_full_conditional(
        &self,
        state: &ParameterState<T>,
        _cache: &Self::Cache,
        coord: CoordinateId,
        rng: &mut EngineRng,
    ) -> Result<(Value<T>, ProposalDescriptor<T>)> {
        let x = self.flat_state(state);
        let (mean, cov_chol) =
            linalg::conditional_from_precision(&self.precision, &self.mean, &x, self.block(coord))?;
        let draw = linalg::sample_mvn_cov_chol(&mean, &cov_chol, rng);
        let descriptor = if self.block(coord).len() == 1 {
            ProposalDescriptor::GaussianScalar {
                mean: mean[0],
                variance: cov_chol[(0, 0)] * cov_chol[(0, 0)],
            }
        } else {
            ProposalDescriptor::GaussianVector { mean, cov_chol }
        };
        Ok((self.block_value(coord, &draw), descriptor))
    }
}
