//! Shift-invert Arnoldi for the complex generalized eigenproblem
//! `S w = λ M w`.
//!
//! For each shift `σ` the operator `T = (S − σM)⁻¹ M` is applied through a
//! banded LU factorization; eigenvalues `ν` of `T` map back through
//! `λ = σ + 1/ν`, so the eigenvalues nearest the shift dominate the Krylov
//! iteration. Restarts are explicit: the next start vector combines the
//! current Ritz vectors of interest. Everything is deterministic — the
//! start vector is all-ones, no randomness anywhere.

pub mod banded;
pub mod dense;

pub use banded::{banded_lu_factor, BandedLu, ComplexBandedMatrix};

use num_complex::Complex64;

use crate::assembly::ComplexSparseMatrix;
use crate::Result;
use dense::DenseMat;

/// One converged generalized eigenpair.
#[derive(Debug, Clone)]
pub struct EigenPair {
    /// Eigenvalue `λ = k²`.
    pub lambda: Complex64,
    /// Eigenvector over the matrix DOFs, unit Euclidean norm.
    pub vector: Vec<Complex64>,
    /// `‖S v − λ M v‖ / (‖S v‖ + |λ|·‖M v‖)`, recomputed on the pencil.
    pub residual: f64,
}

/// Result of one shift-invert run.
#[derive(Debug)]
pub struct ArnoldiOutcome {
    /// Converged pairs, ordered by |λ − σ|.
    pub pairs: Vec<EigenPair>,
    /// True when `nev` pairs met the tolerance.
    pub converged: bool,
    pub restarts: usize,
    /// Total applications of the shift-inverted operator.
    pub steps: usize,
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

fn axpy(alpha: Complex64, x: &[Complex64], y: &mut [Complex64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn scale(v: &mut [Complex64], f: f64) {
    for x in v.iter_mut() {
        *x *= f;
    }
}

/// Arnoldi decomposition `T V_m = V_{m+1} H̃_m` by modified Gram–Schmidt
/// with one full reorthogonalization pass.
struct ArnoldiCycle {
    basis: Vec<Vec<Complex64>>,
    h: DenseMat,
    m_eff: usize,
    breakdown: bool,
}

fn arnoldi_cycle<F>(op: &F, start: &[Complex64], m: usize) -> ArnoldiCycle
where
    F: Fn(&[Complex64]) -> Vec<Complex64>,
{
    let mut basis = Vec::with_capacity(m + 1);
    let mut v0 = start.to_vec();
    let n0 = norm(&v0);
    scale(&mut v0, 1.0 / n0);
    basis.push(v0);

    let mut h = DenseMat::zeros(m + 1);
    let mut m_eff = m;
    let mut breakdown = false;
    for j in 0..m {
        let mut w = op(&basis[j]);
        let w_scale = norm(&w);
        for i in 0..=j {
            let hij = dot(&basis[i], &w);
            axpy(-hij, &basis[i], &mut w);
            h.set(i, j, hij);
        }
        for i in 0..=j {
            let c = dot(&basis[i], &w);
            axpy(-c, &basis[i], &mut w);
            let prev = h.get(i, j);
            h.set(i, j, prev + c);
        }
        let hnext = norm(&w);
        h.set(j + 1, j, Complex64::new(hnext, 0.0));
        if hnext <= 1e-12 * w_scale.max(1e-300) {
            // Exact invariant subspace: the projected problem is already
            // complete.
            m_eff = j + 1;
            breakdown = true;
            break;
        }
        scale(&mut w, 1.0 / hnext);
        basis.push(w);
    }
    ArnoldiCycle { basis, h, m_eff, breakdown }
}

/// True pencil residual of a candidate pair.
fn pencil_residual(
    s: &ComplexSparseMatrix,
    m: &ComplexSparseMatrix,
    lambda: Complex64,
    v: &[Complex64],
) -> f64 {
    let sv = s.matvec_alloc(v);
    let mv = m.matvec_alloc(v);
    let snorm = norm(&sv);
    let mnorm = norm(&mv);
    let rnorm = sv
        .iter()
        .zip(&mv)
        .map(|(a, b)| (a - lambda * b).norm_sqr())
        .sum::<f64>()
        .sqrt();
    rnorm / (snorm + lambda.norm() * mnorm).max(1e-300)
}

/// Computes up to `nev` eigenpairs of `S w = λ M w` nearest the shift
/// `sigma`, each with pencil residual at most `tol`. The Krylov dimension
/// is `3·nev + 20` (capped by the problem size); after each cycle the
/// start vector is rebuilt from the wanted Ritz vectors. Fails with
/// [`Error::Singular`] when the shift hits an eigenvalue.
pub fn shift_invert_arnoldi(
    s: &ComplexSparseMatrix,
    m: &ComplexSparseMatrix,
    sigma: Complex64,
    nev: usize,
    tol: f64,
    max_restarts: usize,
) -> Result<ArnoldiOutcome> {
    let n = s.dim;
    assert_eq!(m.dim, n);
    if nev == 0 || n == 0 {
        return Ok(ArnoldiOutcome { pairs: vec![], converged: true, restarts: 0, steps: 0 });
    }
    let nev = nev.min(n);
    let dim = (3 * nev + 20).min(n);

    let band = ComplexBandedMatrix::from_pencil(s, m, sigma);
    let lu = banded_lu_factor(band)?;
    let op = |v: &[Complex64]| {
        let mv = m.matvec_alloc(v);
        lu.solve(&mv)
    };

    let mut start = vec![Complex64::new(1.0, 0.0); n];
    let mut steps = 0usize;
    let mut last: Vec<EigenPair> = Vec::new();
    for restart in 0..=max_restarts {
        let cycle = arnoldi_cycle(&op, &start, dim);
        steps += cycle.m_eff;
        let m_eff = cycle.m_eff;
        let mut hm = DenseMat::zeros(m_eff);
        for i in 0..m_eff {
            for j in 0..m_eff {
                hm.set(i, j, cycle.h.get(i, j));
            }
        }
        let (nus, ys) = dense::hessenberg_eig(&hm)?;
        // Largest |ν| ⇔ nearest λ to the shift.
        let mut order: Vec<usize> = (0..m_eff).collect();
        order.sort_by(|&a, &b| nus[b].norm().total_cmp(&nus[a].norm()));

        let mut wanted = Vec::new();
        for &idx in order.iter().take(nev) {
            let nu = nus[idx];
            if nu.norm() < 1e-280 {
                continue;
            }
            let lambda = sigma + nu.inv();
            let mut x = vec![Complex64::new(0.0, 0.0); n];
            for l in 0..m_eff {
                axpy(ys.get(l, idx), &cycle.basis[l], &mut x);
            }
            let xn = norm(&x);
            scale(&mut x, 1.0 / xn);
            let residual = pencil_residual(s, m, lambda, &x);
            wanted.push(EigenPair { lambda, vector: x, residual });
        }
        wanted.sort_by(|a, b| {
            (a.lambda - sigma).norm().total_cmp(&(b.lambda - sigma).norm())
        });

        let all_converged =
            wanted.len() == nev && wanted.iter().all(|p| p.residual <= tol);
        if all_converged || cycle.breakdown || restart == max_restarts {
            let converged_pairs: Vec<EigenPair> =
                wanted.iter().filter(|p| p.residual <= tol).cloned().collect();
            let converged = converged_pairs.len() == nev;
            return Ok(ArnoldiOutcome {
                pairs: converged_pairs,
                converged,
                restarts: restart,
                steps,
            });
        }

        // Restart from the span of the wanted Ritz vectors.
        let mut next = vec![Complex64::new(0.0, 0.0); n];
        for p in &wanted {
            axpy(Complex64::new(1.0, 0.0), &p.vector, &mut next);
        }
        let nn = norm(&next);
        if nn < 1e-300 {
            next = vec![Complex64::new(1.0, 0.0); n];
        }
        start = next;
        last = wanted;
    }
    // Unreachable: the loop returns on its final pass.
    let converged = last.len() == nev && last.iter().all(|p| p.residual <= tol);
    Ok(ArnoldiOutcome { pairs: last, converged, restarts: max_restarts, steps })
}

/// Merges eigenpairs found from different shifts: pairs whose eigenvalues
/// agree within `1e−6·(1 + |λ|)` are duplicates, and the one with the
/// smaller residual survives.
pub fn merge_eigenpairs(mut pairs: Vec<EigenPair>) -> Vec<EigenPair> {
    pairs.sort_by(|a, b| {
        a.lambda
            .re
            .total_cmp(&b.lambda.re)
            .then(a.lambda.im.total_cmp(&b.lambda.im))
    });
    let mut out: Vec<EigenPair> = Vec::with_capacity(pairs.len());
    for p in pairs {
        if let Some(q) = out
            .iter_mut()
            .find(|q| (q.lambda - p.lambda).norm() < 1e-6 * (1.0 + q.lambda.norm()))
        {
            if p.residual < q.residual {
                *q = p;
            }
        } else {
            out.push(p);
        }
    }
    out
}
