//! Matrix representation of channels and CP maps.
//!
//! A [`ChoiMatrix`] stores a map from an input space (possibly several tensor
//! factors) to an output space in the channel convention used inside process
//! matrices: the input factors come first, the output factors after them, and
//! no transposition is applied. Trace preservation reads as "tracing the
//! output factors leaves the identity on the input factors".

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::mat::{ComplexMatrix, SystemShape};

/// Channel matrix with declared input and output factor dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiMatrix {
    matrix: ComplexMatrix,
    in_dims: Vec<usize>,
    out_dims: Vec<usize>,
}

impl ChoiMatrix {
    /// Wraps a matrix on the input ⊗ output factors.
    ///
    /// Only the dimensions are checked here; positivity and trace
    /// preservation can be probed with [`ChoiMatrix::psd_violation`] and
    /// [`ChoiMatrix::trace_preservation_violation`].
    pub fn new(matrix: ComplexMatrix, in_dims: Vec<usize>, out_dims: Vec<usize>) -> Result<Self> {
        if in_dims.is_empty() || out_dims.is_empty() {
            return Err(Error::Contract(
                "channel needs at least one input and one output factor".into(),
            ));
        }
        if in_dims.contains(&0) || out_dims.contains(&0) {
            return Err(Error::Contract("channel factor dimensions must be at least 1".into()));
        }
        let d_in: usize = in_dims.iter().product();
        let d_out: usize = out_dims.iter().product();
        if !matrix.is_square() || matrix.rows() != d_in * d_out {
            return Err(Error::Contract(format!(
                "channel matrix side {} does not match {}x{} factor dimensions",
                matrix.rows(),
                d_in,
                d_out
            )));
        }
        Ok(Self {
            matrix,
            in_dims,
            out_dims,
        })
    }

    /// The identity channel on dimension `d`: sum of |jj><kk|, trace `d`.
    pub fn identity(d: usize) -> Self {
        let mut m = ComplexMatrix::zeros(d * d, d * d);
        for j in 0..d {
            for k in 0..d {
                m.set(j * d + j, k * d + k, Complex64::ONE);
            }
        }
        Self {
            matrix: m,
            in_dims: vec![d],
            out_dims: vec![d],
        }
    }

    /// Channel matrix of the unitary conjugation `X -> U X U†`.
    pub fn from_unitary(u: &ComplexMatrix) -> Result<Self> {
        if !u.is_square() {
            return Err(Error::Contract("unitary must be square".into()));
        }
        let d = u.rows();
        let m = ComplexMatrix::from_fn(d * d, d * d, |row, col| {
            let (j, o) = (row / d, row % d);
            let (k, o2) = (col / d, col % d);
            u.get(o, j) * u.get(o2, k).conj()
        });
        Self::new(m, vec![d], vec![d])
    }

    /// Channel matrix from a Kraus decomposition.
    pub fn from_kraus(
        in_dims: Vec<usize>,
        out_dims: Vec<usize>,
        kraus: &[ComplexMatrix],
    ) -> Result<Self> {
        let d_in: usize = in_dims.iter().product();
        let d_out: usize = out_dims.iter().product();
        for k in kraus {
            if k.rows() != d_out || k.cols() != d_in {
                return Err(Error::Contract(format!(
                    "Kraus operator is {}x{}, expected {}x{}",
                    k.rows(),
                    k.cols(),
                    d_out,
                    d_in
                )));
            }
        }
        let m = ComplexMatrix::from_fn(d_in * d_out, d_in * d_out, |row, col| {
            let (j, o) = (row / d_out, row % d_out);
            let (k, o2) = (col / d_out, col % d_out);
            kraus
                .iter()
                .map(|op| op.get(o, j) * op.get(o2, k).conj())
                .sum()
        });
        Self::new(m, in_dims, out_dims)
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn in_dims(&self) -> &[usize] {
        &self.in_dims
    }

    pub fn out_dims(&self) -> &[usize] {
        &self.out_dims
    }

    pub fn in_dim(&self) -> usize {
        self.in_dims.iter().product()
    }

    pub fn out_dim(&self) -> usize {
        self.out_dims.iter().product()
    }

    /// Shape of the full factor list: inputs first, then outputs.
    pub fn shape(&self) -> SystemShape {
        let mut dims = self.in_dims.clone();
        dims.extend_from_slice(&self.out_dims);
        SystemShape::new(dims).expect("validated dims")
    }

    /// Largest deviation of `Tr_out(C)` from the identity on the inputs.
    pub fn trace_preservation_violation(&self) -> Result<f64> {
        let shape = self.shape();
        let out_positions: Vec<usize> =
            (self.in_dims.len()..shape.len()).collect();
        let reduced = self.matrix.partial_trace(&shape, &out_positions)?;
        reduced.max_abs_diff(&ComplexMatrix::identity(self.in_dim()))
    }

    pub fn is_trace_preserving(&self, eps: f64) -> bool {
        self.trace_preservation_violation()
            .map(|v| v <= eps)
            .unwrap_or(false)
    }

    /// `max(0, -lambda_min)`.
    pub fn psd_violation(&self) -> Result<f64> {
        Ok((-self.matrix.min_eigenvalue()?).max(0.0))
    }

    /// Applies the channel to a state on the input space.
    pub fn apply(&self, rho: &ComplexMatrix) -> Result<ComplexMatrix> {
        let d_in = self.in_dim();
        let d_out = self.out_dim();
        if rho.rows() != d_in || rho.cols() != d_in {
            return Err(Error::Contract(format!(
                "state side {} does not match channel input {}",
                rho.rows(),
                d_in
            )));
        }
        // T(rho)[o,o'] = sum_{j,k} rho[j,k] C[(j,o),(k,o')]
        Ok(ComplexMatrix::from_fn(d_out, d_out, |o, o2| {
            let mut acc = Complex64::ZERO;
            for j in 0..d_in {
                for k in 0..d_in {
                    acc += rho.get(j, k) * self.matrix.get(j * d_out + o, k * d_out + o2);
                }
            }
            acc
        }))
    }

    /// Drops one input factor: the factor is replaced by a normalized
    /// identity and the rest becomes the marginal channel. Used to test DAG
    /// minimality by removing a single arrow from a channel.
    pub fn without_input_factor(&self, factor: usize) -> Result<ChoiMatrix> {
        if factor >= self.in_dims.len() {
            return Err(Error::Contract(format!(
                "channel has no input factor {factor}"
            )));
        }
        let d = self.in_dims[factor];
        let shape = self.shape();
        let marginal = self
            .matrix
            .partial_trace(&shape, &[factor])?
            .scale(Complex64::new(1.0 / d as f64, 0.0));
        // Rebuild as identity (x) marginal, then move the identity factor
        // from the front back to its original position.
        let id = ComplexMatrix::identity(d);
        let prod = id.kron(&marginal)?;
        let mut front_dims: Vec<usize> = vec![d];
        for (i, &di) in self.in_dims.iter().enumerate() {
            if i != factor {
                front_dims.push(di);
            }
        }
        front_dims.extend_from_slice(&self.out_dims);
        let mut perm = Vec::with_capacity(front_dims.len());
        perm.push(factor);
        let mut next = 0usize;
        for _ in 1..front_dims.len() {
            if next == factor {
                next += 1;
            }
            perm.push(next);
            next += 1;
        }
        let shape_prod = SystemShape::new(front_dims)?;
        let reordered = prod.reorder_systems(&shape_prod, &perm)?;
        ChoiMatrix::new(reordered, self.in_dims.clone(), self.out_dims.clone())
    }
}
