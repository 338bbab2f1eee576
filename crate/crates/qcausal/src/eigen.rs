//! Hermitian spectra via Lanczos tridiagonalization.
//!
//! The matrix is symmetrized before decomposition. Run to full depth the
//! Krylov basis spans the whole space and the returned spectrum is exact (up
//! to floating point); truncated runs give extreme-eigenvalue estimates whose
//! Ritz values always lie inside the true spectral interval, which is what
//! the positive-semidefiniteness check needs on large inputs.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::mat::ComplexMatrix;

/// Fixed stream for reproducible start vectors.
const LANCZOS_SEED: u64 = 0x5179_6D2A_0E94_3C11;

impl ComplexMatrix {
    /// All eigenvalues of the Hermitian part, ascending.
    pub fn hermitian_eigenvalues(&self) -> Result<Vec<f64>> {
        if !self.is_square() {
            return Err(Error::Layout(format!(
                "eigenvalues require a square matrix, got {}x{}",
                self.rows(),
                self.cols()
            )));
        }
        let n = self.rows();
        lanczos_spectrum(self, n)
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(self.hermitian_eigenvalues()?[0])
    }
}

/// Lower bound estimate of the smallest eigenvalue using at most `steps`
/// Lanczos iterations. Exact when `steps >= side`.
pub(crate) fn min_eigenvalue_estimate(m: &ComplexMatrix, steps: usize) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::Layout("min eigenvalue requires a square matrix".into()));
    }
    let k = steps.min(m.rows()).max(1);
    Ok(lanczos_spectrum(m, k)?[0])
}

/// `y = (M x + M† x) / 2` in a single row sweep.
fn hermitian_matvec(m: &ComplexMatrix, x: &[Complex64]) -> Vec<Complex64> {
    let n = m.rows();
    let data = m.data();
    let mut upper = vec![Complex64::ZERO; n]; // M x
    let mut lower = vec![Complex64::ZERO; n]; // M† x
    for i in 0..n {
        let row = &data[i * n..(i + 1) * n];
        let xi = x[i];
        let mut acc = Complex64::ZERO;
        for (j, &mij) in row.iter().enumerate() {
            acc += mij * x[j];
            lower[j] += mij.conj() * xi;
        }
        upper[i] = acc;
    }
    upper
        .iter()
        .zip(lower.iter())
        .map(|(a, b)| 0.5 * (a + b))
        .collect()
}

fn random_unit_vector(rng: &mut ChaCha12Rng, n: usize) -> Vec<Complex64> {
    loop {
        let v: Vec<Complex64> = (0..n)
            .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        let norm: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.iter().map(|z| z / norm).collect();
        }
    }
}

fn orthogonalize(v: &mut [Complex64], basis: &[Vec<Complex64>]) {
    // Two classical Gram-Schmidt passes keep the basis orthonormal to
    // working precision.
    for _ in 0..2 {
        for b in basis {
            let overlap: Complex64 = b.iter().zip(v.iter()).map(|(bi, vi)| bi.conj() * vi).sum();
            for (vi, bi) in v.iter_mut().zip(b.iter()) {
                *vi -= overlap * bi;
            }
        }
    }
}

fn norm_of(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Runs `steps` Lanczos iterations (with restarts on breakdown) and returns
/// the ascending eigenvalues of the accumulated tridiagonal matrix.
fn lanczos_spectrum(m: &ComplexMatrix, steps: usize) -> Result<Vec<f64>> {
    let n = m.rows();
    if n == 1 {
        return Ok(vec![m.get(0, 0).re]);
    }
    let scale = m
        .data()
        .iter()
        .map(|z| z.norm())
        .fold(0.0f64, f64::max)
        .max(1e-300);
    let breakdown = 1e-13 * scale * (n as f64).sqrt();

    let mut rng = ChaCha12Rng::seed_from_u64(LANCZOS_SEED ^ (n as u64));
    let mut basis: Vec<Vec<Complex64>> = Vec::with_capacity(steps);
    let mut alphas: Vec<f64> = Vec::with_capacity(steps);
    let mut betas: Vec<f64> = Vec::with_capacity(steps); // beta[j] couples j and j+1

    let mut v = random_unit_vector(&mut rng, n);
    while basis.len() < steps {
        basis.push(v.clone());
        let mut w = hermitian_matvec(m, &v);
        let alpha: f64 = w
            .iter()
            .zip(v.iter())
            .map(|(wi, vi)| (vi.conj() * wi).re)
            .sum();
        alphas.push(alpha);
        orthogonalize(&mut w, &basis);
        if basis.len() == steps {
            break;
        }
        let beta = norm_of(&w);
        if beta <= breakdown {
            // Invariant subspace found; restart in the orthogonal complement.
            betas.push(0.0);
            let mut fresh = random_unit_vector(&mut rng, n);
            orthogonalize(&mut fresh, &basis);
            let norm = norm_of(&fresh);
            if norm <= 1e-8 {
                // Nothing orthogonal left; spectrum of the span is complete.
                break;
            }
            v = fresh.iter().map(|z| z / norm).collect();
        } else {
            betas.push(beta);
            v = w.iter().map(|z| z / beta).collect();
        }
    }
    betas.resize(alphas.len(), 0.0);
    let mut eigs = tridiagonal_eigenvalues(alphas, betas)?;
    eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(eigs)
}

/// Implicit-shift QL iteration on a symmetric tridiagonal matrix.
/// `e[i]` couples entries `i` and `i + 1`; `e[n - 1]` is ignored.
fn tridiagonal_eigenvalues(mut d: Vec<f64>, mut e: Vec<f64>) -> Result<Vec<f64>> {
    let n = d.len();
    if n == 0 {
        return Ok(vec![]);
    }
    e.push(0.0);
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 64 {
                return Err(Error::Numerical(
                    "tridiagonal QL failed to converge".into(),
                ));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let mut s = 1.0f64;
            let mut c = 1.0f64;
            let mut p = 0.0f64;
            let mut underflow = false;
            for i in (l..m).rev() {
                let mut f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                f = (d[i] - g) * s + 2.0 * c * b;
                p = s * f;
                d[i + 1] = g + p;
                g = c * f - b;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(d)
}
