//! Dense complex matrices with multi-system tensor-factor bookkeeping.
//!
//! The conventions used throughout the crate are fixed here:
//!
//! * Matrices are dense, row-major, `Complex<f64>`.
//! * Kronecker products treat the **left** operand as the most significant
//!   factor: the combined basis index is `i_left * dim_right + i_right`.
//! * A square matrix over several tensor factors is described by a
//!   [`SystemShape`]; flat indices decompose into mixed-radix coordinates
//!   with factor 0 most significant.
//! * Comparisons are absolute: two matrices are equal within `eps` when the
//!   largest entrywise modulus of their difference is at most `eps`.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Dense complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    /// Creates a matrix from row-major data.
    ///
    /// Rejects empty shapes, length mismatches and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Dimension(format!(
                "matrix dimensions must be at least 1x1, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "entry count {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Dimension(format!(
                "non-finite entry at flat index {bad}"
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Zero matrix of the given shape.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::ZERO; rows * cols],
        }
    }

    /// Identity matrix of side `n`.
    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = Complex64::ONE;
        }
        m
    }

    /// Builds a matrix entry by entry; the closure must return finite values.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Diagonal matrix from the given entries.
    pub fn diagonal(diag: &[Complex64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in diag.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    /// 1x1 matrix holding a single value.
    pub fn scalar(value: Complex64) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: Complex64) {
        self.data[row * self.cols + col] = value;
    }

    /// Raw row-major entries.
    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    /// Sum of diagonal entries.
    pub fn trace(&self) -> Complex64 {
        debug_assert!(self.is_square());
        (0..self.rows).map(|i| self.get(i, i)).sum()
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i).conj())
    }

    /// Plain transpose.
    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// Entrywise complex conjugate.
    pub fn conjugate(&self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z.conj()).collect(),
        }
    }

    /// Largest modulus of `M - M†` over all entries; zero for Hermitian input.
    pub fn hermiticity_violation(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in 0..=i {
                let d = (self.get(i, j) - self.get(j, i).conj()).norm();
                if d > worst {
                    worst = d;
                }
            }
        }
        worst
    }

    /// `(M + M†) / 2`.
    pub fn hermitian_part(&self) -> Self {
        Self::from_fn(self.rows, self.cols, |i, j| {
            0.5 * (self.get(i, j) + self.get(j, i).conj())
        })
    }

    pub fn scale(&self, factor: Complex64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * factor).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(Error::Layout(format!(
                "shape mismatch in add: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    /// Dense matrix product.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Layout(format!(
                "shape mismatch in matmul: {}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == Complex64::ZERO {
                    continue;
                }
                for j in 0..other.cols {
                    let v = out.get(i, j) + a * other.get(k, j);
                    out.set(i, j, v);
                }
            }
        }
        Ok(out)
    }

    /// Largest entrywise modulus of the difference.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(Error::Layout(format!(
                "shape mismatch in comparison: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut worst = 0.0f64;
        for (a, b) in self.data.iter().zip(other.data.iter()) {
            let d = (a - b).norm();
            if d > worst {
                worst = d;
            }
        }
        Ok(worst)
    }

    /// True when the largest entrywise difference is at most `eps`.
    pub fn approx_equal(&self, other: &Self, eps: f64) -> Result<bool> {
        Ok(self.max_abs_diff(other)? <= eps)
    }

    /// Kronecker product; `self` is the more significant factor.
    pub fn kron(&self, other: &Self) -> Result<Self> {
        let rows = self
            .rows
            .checked_mul(other.rows)
            .ok_or_else(|| Error::Dimension("kron row dimension overflow".into()))?;
        let cols = self
            .cols
            .checked_mul(other.cols)
            .ok_or_else(|| Error::Dimension("kron column dimension overflow".into()))?;
        rows.checked_mul(cols)
            .ok_or_else(|| Error::Dimension("kron entry count overflow".into()))?;
        let mut out = Self::zeros(rows, cols);
        for ia in 0..self.rows {
            for ja in 0..self.cols {
                let a = self.get(ia, ja);
                if a == Complex64::ZERO {
                    continue;
                }
                for ib in 0..other.rows {
                    let r = ia * other.rows + ib;
                    let row_off = r * cols + ja * other.cols;
                    let b_off = ib * other.cols;
                    for jb in 0..other.cols {
                        out.data[row_off + jb] = a * other.data[b_off + jb];
                    }
                }
            }
        }
        Ok(out)
    }

    /// Partial trace over the factors listed in `traced`.
    ///
    /// The result lives on the remaining factors in their original relative
    /// order, implemented as a direct summation over mixed-radix coordinates.
    pub fn partial_trace(&self, shape: &SystemShape, traced: &[usize]) -> Result<Self> {
        shape.check_matches(self)?;
        let split = shape.split(traced)?;
        let kept_dim = split.kept_dim;
        let mut out = Self::zeros(kept_dim, kept_dim);
        let side = self.rows;
        for r in 0..kept_dim {
            let base_r = split.kept_offsets[r];
            for c in 0..kept_dim {
                let base_c = split.kept_offsets[c];
                let mut acc = Complex64::ZERO;
                for &t in &split.traced_offsets {
                    acc += self.data[(base_r + t) * side + (base_c + t)];
                }
                out.data[r * kept_dim + c] = acc;
            }
        }
        Ok(out)
    }

    /// Conjugates by the basis permutation that sends factor `k` to position
    /// `perm[k]`. Preserves trace, spectrum and positivity.
    pub fn reorder_systems(&self, shape: &SystemShape, perm: &[usize]) -> Result<Self> {
        shape.check_matches(self)?;
        let map = shape.permutation_index_map(perm)?;
        let side = self.rows;
        let mut out = Self::zeros(side, side);
        for r in 0..side {
            let old_r = map[r] * side;
            let row = &mut out.data[r * side..(r + 1) * side];
            for (entry, &old_c) in row.iter_mut().zip(map.iter()) {
                *entry = self.data[old_r + old_c];
            }
        }
        Ok(out)
    }
}

/// Ordered tensor-factor dimensions annotating a square matrix.
///
/// Factor 0 is the most significant index. Dimension-1 factors are legal and
/// act as no-ops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SystemShape {
    dims: Vec<usize>,
}

pub(crate) struct FactorSplit {
    pub kept_dim: usize,
    pub traced_dim: usize,
    /// Flat row offset contributed by each kept multi-index.
    pub kept_offsets: Vec<usize>,
    /// Flat row offset contributed by each traced multi-index.
    pub traced_offsets: Vec<usize>,
}

impl SystemShape {
    /// A shape from factor dimensions; every factor must be at least 1.
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Layout("factor dimensions must be at least 1".into()));
        }
        let mut total: usize = 1;
        for &d in &dims {
            total = total
                .checked_mul(d)
                .ok_or_else(|| Error::Dimension("total dimension overflow".into()))?;
        }
        Ok(Self { dims })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    /// Product of all factor dimensions.
    pub fn total_dim(&self) -> usize {
        self.dims.iter().product()
    }

    /// Row strides of each factor in the flat index.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1usize; self.dims.len()];
        for k in (0..self.dims.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * self.dims[k + 1];
        }
        strides
    }

    pub(crate) fn check_matches(&self, m: &ComplexMatrix) -> Result<()> {
        if !m.is_square() {
            return Err(Error::Layout(format!(
                "expected a square matrix, got {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        if m.rows() != self.total_dim() {
            return Err(Error::Layout(format!(
                "matrix side {} does not match shape product {}",
                m.rows(),
                self.total_dim()
            )));
        }
        Ok(())
    }

    /// Shape of the factors left after removing `traced`.
    pub fn removing(&self, traced: &[usize]) -> Result<SystemShape> {
        self.validate_factor_set(traced)?;
        let dims = self
            .dims
            .iter()
            .enumerate()
            .filter(|(k, _)| !traced.contains(k))
            .map(|(_, &d)| d)
            .collect();
        SystemShape::new(dims)
    }

    fn validate_factor_set(&self, factors: &[usize]) -> Result<()> {
        let mut seen = vec![false; self.dims.len()];
        for &k in factors {
            if k >= self.dims.len() {
                return Err(Error::Layout(format!(
                    "factor index {k} out of range for {} factors",
                    self.dims.len()
                )));
            }
            if seen[k] {
                return Err(Error::Layout(format!("factor index {k} listed twice")));
            }
            seen[k] = true;
        }
        Ok(())
    }

    /// Precomputes flat-offset tables for a kept/traced factor split.
    pub(crate) fn split(&self, traced: &[usize]) -> Result<FactorSplit> {
        self.validate_factor_set(traced)?;
        let strides = self.strides();
        let kept: Vec<usize> = (0..self.dims.len()).filter(|k| !traced.contains(k)).collect();
        let kept_dim: usize = kept.iter().map(|&k| self.dims[k]).product();
        let traced_dim: usize = traced.iter().map(|&k| self.dims[k]).product();
        Ok(FactorSplit {
            kept_dim,
            traced_dim,
            kept_offsets: Self::offsets_for(&kept, &self.dims, &strides),
            traced_offsets: Self::offsets_for_sorted(traced, &self.dims, &strides),
        })
    }

    /// Flat offsets of every multi-index over `factors`, enumerated with the
    /// listed factor order (first factor most significant).
    fn offsets_for(factors: &[usize], dims: &[usize], strides: &[usize]) -> Vec<usize> {
        let count: usize = factors.iter().map(|&k| dims[k]).product();
        let mut offsets = Vec::with_capacity(count);
        let mut coords = vec![0usize; factors.len()];
        for _ in 0..count {
            let off = coords
                .iter()
                .zip(factors.iter())
                .map(|(&c, &k)| c * strides[k])
                .sum();
            offsets.push(off);
            for pos in (0..factors.len()).rev() {
                coords[pos] += 1;
                if coords[pos] < dims[factors[pos]] {
                    break;
                }
                coords[pos] = 0;
            }
        }
        offsets
    }

    fn offsets_for_sorted(factors: &[usize], dims: &[usize], strides: &[usize]) -> Vec<usize> {
        let mut sorted: Vec<usize> = factors.to_vec();
        sorted.sort_unstable();
        Self::offsets_for(&sorted, dims, strides)
    }

    /// For each new flat index, the old flat index under the permutation
    /// sending factor `k` to position `perm[k]`.
    fn permutation_index_map(&self, perm: &[usize]) -> Result<Vec<usize>> {
        let n = self.dims.len();
        if perm.len() != n {
            return Err(Error::Layout(format!(
                "permutation length {} does not match factor count {n}",
                perm.len()
            )));
        }
        let mut inverse = vec![usize::MAX; n];
        for (k, &p) in perm.iter().enumerate() {
            if p >= n {
                return Err(Error::Layout(format!("permutation target {p} out of range")));
            }
            if inverse[p] != usize::MAX {
                return Err(Error::Layout(format!("permutation target {p} repeated")));
            }
            inverse[p] = k;
        }
        let old_strides = self.strides();
        let new_dims: Vec<usize> = (0..n).map(|p| self.dims[inverse[p]]).collect();
        let total = self.total_dim();
        let mut map = Vec::with_capacity(total);
        let mut coords = vec![0usize; n];
        for _ in 0..total {
            // coords[p] is the coordinate at new position p, which belongs to
            // old factor inverse[p].
            let old: usize = coords
                .iter()
                .enumerate()
                .map(|(p, &c)| c * old_strides[inverse[p]])
                .sum();
            map.push(old);
            for pos in (0..n).rev() {
                coords[pos] += 1;
                if coords[pos] < new_dims[pos] {
                    break;
                }
                coords[pos] = 0;
            }
        }
        Ok(map)
    }
}

pub(crate) struct ContractionTables {
    /// Flat offset of each multi-index over the listed factors, enumerated in
    /// the listed order.
    pub factor_offsets: Vec<usize>,
    /// Flat offset of each multi-index over the remaining factors, ascending.
    pub kept_offsets: Vec<usize>,
    pub kept_dim: usize,
}

impl SystemShape {
    pub(crate) fn contraction_tables(&self, factors: &[usize]) -> Result<ContractionTables> {
        self.validate_factor_set(factors)?;
        let strides = self.strides();
        let kept: Vec<usize> = (0..self.dims.len())
            .filter(|k| !factors.contains(k))
            .collect();
        let kept_dim: usize = kept.iter().map(|&k| self.dims[k]).product();
        Ok(ContractionTables {
            factor_offsets: Self::offsets_for(factors, &self.dims, &strides),
            kept_offsets: Self::offsets_for(&kept, &self.dims, &strides),
            kept_dim,
        })
    }
}

/// `Tr_factors[m · (1 ⊗ op)]` where `op` lives on the listed factors in the
/// listed order: `result[r,r'] = sum_{a,a'} m[(r,a),(r',a')] op[a',a]`.
pub(crate) fn contract_factors_with(
    m: &ComplexMatrix,
    shape: &SystemShape,
    factors: &[usize],
    op: &ComplexMatrix,
) -> Result<ComplexMatrix> {
    shape.check_matches(m)?;
    let tables = shape.contraction_tables(factors)?;
    let f_dim = tables.factor_offsets.len();
    if op.rows() != f_dim || op.cols() != f_dim {
        return Err(Error::Layout(format!(
            "operator side {} does not match contracted factor dimension {f_dim}",
            op.rows()
        )));
    }
    let side = m.rows();
    let kept = tables.kept_dim;
    let mut out = ComplexMatrix::zeros(kept, kept);
    for r in 0..kept {
        let base_r = tables.kept_offsets[r];
        for c in 0..kept {
            let base_c = tables.kept_offsets[c];
            let mut acc = Complex64::ZERO;
            for (a, &off_a) in tables.factor_offsets.iter().enumerate() {
                let row = (base_r + off_a) * side + base_c;
                for (a2, &off_a2) in tables.factor_offsets.iter().enumerate() {
                    acc += m.data()[row + off_a2] * op.get(a2, a);
                }
            }
            out.set(r, c, acc);
        }
    }
    Ok(out)
}

/// Composes two positive operators over a shared interface: the listed
/// factors of `s` are glued to the listed factors of `c` (in corresponding
/// order), Choi-style. The result lives on the remaining factors of `s`
/// followed by the remaining factors of `c`.
pub(crate) fn link_contract(
    s: &ComplexMatrix,
    s_shape: &SystemShape,
    s_factors: &[usize],
    c: &ComplexMatrix,
    c_shape: &SystemShape,
    c_factors: &[usize],
) -> Result<ComplexMatrix> {
    s_shape.check_matches(s)?;
    c_shape.check_matches(c)?;
    let st = s_shape.contraction_tables(s_factors)?;
    let ct = c_shape.contraction_tables(c_factors)?;
    if st.factor_offsets.len() != ct.factor_offsets.len() {
        return Err(Error::Layout(format!(
            "interface dimensions differ: {} vs {}",
            st.factor_offsets.len(),
            ct.factor_offsets.len()
        )));
    }
    let x_dim = st.factor_offsets.len();
    let s_side = s.rows();
    let c_side = c.rows();
    let out_dim = st.kept_dim * ct.kept_dim;
    let mut out = ComplexMatrix::zeros(out_dim, out_dim);
    for sk in 0..st.kept_dim {
        for sk2 in 0..st.kept_dim {
            for ck in 0..ct.kept_dim {
                let row = sk * ct.kept_dim + ck;
                for ck2 in 0..ct.kept_dim {
                    let mut acc = Complex64::ZERO;
                    for x in 0..x_dim {
                        let s_row = (st.kept_offsets[sk] + st.factor_offsets[x]) * s_side
                            + st.kept_offsets[sk2];
                        let c_row = (ct.factor_offsets[x] + ct.kept_offsets[ck]) * c_side
                            + ct.kept_offsets[ck2];
                        for x2 in 0..x_dim {
                            acc += s.data()[s_row + st.factor_offsets[x2]]
                                * c.data()[c_row + ct.factor_offsets[x2]];
                        }
                    }
                    out.set(row, sk2 * ct.kept_dim + ck2, acc);
                }
            }
        }
    }
    Ok(out)
}

/// Tests `1~^S ⊗ Tr_S(m) == m` within `eps`, without materializing the
/// candidate: the identity-normalized reconstruction is compared entry by
/// entry against `m`.
pub(crate) fn identity_on_factors(
    m: &ComplexMatrix,
    shape: &SystemShape,
    factors: &[usize],
    eps: f64,
) -> Result<bool> {
    shape.check_matches(m)?;
    let split = shape.split(factors)?;
    let reduced = m.partial_trace(shape, factors)?;
    let d_s = split.traced_dim as f64;
    let side = m.rows();

    // side-indexed lookup tables: flat index -> (traced part, kept part).
    let mut traced_of = vec![0u32; side];
    let mut kept_of = vec![0u32; side];
    for (ti, &toff) in split.traced_offsets.iter().enumerate() {
        for (ki, &koff) in split.kept_offsets.iter().enumerate() {
            traced_of[toff + koff] = ti as u32;
            kept_of[toff + koff] = ki as u32;
        }
    }

    let kept_dim = split.kept_dim;
    for r in 0..side {
        let row = r * side;
        let red_row = kept_of[r] as usize * kept_dim;
        for c in 0..side {
            let expected = if traced_of[r] == traced_of[c] {
                reduced.data()[red_row + kept_of[c] as usize] / d_s
            } else {
                Complex64::ZERO
            };
            if (m.data()[row + c] - expected).norm() > eps {
                return Ok(false);
            }
        }
    }
    Ok(true)
}
