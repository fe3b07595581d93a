//! Complex banded LU with partial pivoting.
//!
//! Storage is row-compact and diagonal-aligned: row `i` holds columns
//! `i − kl ..= i + kl + ku` contiguously (the extra `kl` upper diagonals
//! absorb pivoting fill), so the elimination update and the backward solve
//! both run over contiguous slices. Real and imaginary parts live in
//! separate arrays to keep those inner loops autovectorizable.

use num_complex::Complex64;

use crate::assembly::ComplexSparseMatrix;
use crate::{Error, Result};

/// Square complex matrix stored by diagonals around a band.
#[derive(Debug, Clone)]
pub struct ComplexBandedMatrix {
    pub dim: usize,
    pub kl: usize,
    pub ku: usize,
    width: usize,
    re: Vec<f64>,
    im: Vec<f64>,
    /// Largest entry magnitude at construction, the scale for pivot checks.
    max_abs: f64,
}

impl ComplexBandedMatrix {
    pub fn zero(dim: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        ComplexBandedMatrix {
            dim,
            kl,
            ku,
            width,
            re: vec![0.0; dim * width],
            im: vec![0.0; dim * width],
            max_abs: 0.0,
        }
    }

    #[inline]
    fn offset(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.kl + self.ku);
        i * self.width + (j + self.kl - i)
    }

    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        let o = self.offset(i, j);
        self.re[o] = v.re;
        self.im[o] = v.im;
        self.max_abs = self.max_abs.max(v.norm());
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        if j + self.kl < i || j > i + self.kl + self.ku {
            return Complex64::new(0.0, 0.0);
        }
        let o = self.offset(i, j);
        Complex64::new(self.re[o], self.im[o])
    }

    /// Builds `S − σ M` in banded form. Both matrices share the mesh's
    /// banded sparsity; the bandwidth is taken from the actual patterns.
    pub fn from_pencil(
        s: &ComplexSparseMatrix,
        m: &ComplexSparseMatrix,
        sigma: Complex64,
    ) -> Self {
        assert_eq!(s.dim, m.dim);
        let band = |a: &ComplexSparseMatrix| {
            let mut b = 0usize;
            for i in 0..a.dim {
                for k in a.row_ptr[i]..a.row_ptr[i + 1] {
                    b = b.max((a.col_idx[k] as usize).abs_diff(i));
                }
            }
            b
        };
        let kl = band(s).max(band(m));
        let mut out = ComplexBandedMatrix::zero(s.dim, kl, kl);
        for i in 0..s.dim {
            for k in s.row_ptr[i]..s.row_ptr[i + 1] {
                let j = s.col_idx[k] as usize;
                let o = out.offset(i, j);
                out.re[o] += s.values[k].re;
                out.im[o] += s.values[k].im;
            }
            for k in m.row_ptr[i]..m.row_ptr[i + 1] {
                let j = m.col_idx[k] as usize;
                let v = sigma * m.values[k];
                let o = out.offset(i, j);
                out.re[o] -= v.re;
                out.im[o] -= v.im;
            }
        }
        out.max_abs = out
            .re
            .iter()
            .zip(&out.im)
            .map(|(&r, &c)| (r * r + c * c).sqrt())
            .fold(0.0, f64::max);
        out
    }
}

/// LU factorization of a banded matrix; multipliers stay attached to their
/// elimination column, with `ipiv` replaying the row interchanges.
#[derive(Debug)]
pub struct BandedLu {
    dim: usize,
    kl: usize,
    ku: usize,
    width: usize,
    re: Vec<f64>,
    im: Vec<f64>,
    ipiv: Vec<u32>,
}

/// Factors in place. Signals [`Error::Singular`] when a pivot falls below
/// `1e−14` times the largest entry of the input: the shift hit an
/// eigenvalue and the caller should perturb it.
pub fn banded_lu_factor(a: ComplexBandedMatrix) -> Result<BandedLu> {
    let ComplexBandedMatrix { dim, kl, ku, width, mut re, mut im, max_abs } = a;
    let tiny = 1e-14 * max_abs;
    let mut ipiv = vec![0u32; dim];

    for k in 0..dim {
        let imax = (k + kl).min(dim - 1);
        // Pivot search down column k: in row i it sits at offset k − i + kl.
        let mut p = k;
        let mut best = -1.0;
        for i in k..=imax {
            let o = i * width + (k + kl - i);
            let mag = re[o] * re[o] + im[o] * im[o];
            if mag > best {
                best = mag;
                p = i;
            }
        }
        if best.sqrt() <= tiny {
            return Err(Error::Singular {
                stage: "banded_lu_factor",
                detail: format!("pivot {:.3e} at step {k} (scale {max_abs:.3e})", best.sqrt()),
            });
        }
        ipiv[k] = p as u32;
        let jmax = (k + kl + ku).min(dim - 1);
        if p != k {
            for j in k..=jmax {
                let ok = k * width + (j + kl - k);
                let op = p * width + (j + kl - p);
                re.swap(ok, op);
                im.swap(ok, op);
            }
        }

        let od = k * width + kl;
        let pivot = Complex64::new(re[od], im[od]);
        let row_k_lo = k * width + kl + 1;
        let row_k_hi = k * width + (jmax + kl - k) + 1;
        for i in k + 1..=imax {
            let ol = i * width + (k + kl - i);
            let mult = Complex64::new(re[ol], im[ol]) / pivot;
            re[ol] = mult.re;
            im[ol] = mult.im;
            if jmax <= k {
                continue;
            }
            let row_i_lo = i * width + (k + 1 + kl - i);
            let len = row_k_hi - row_k_lo;
            // Rows k and i are disjoint; split to borrow both.
            let (head_re, tail_re) = re.split_at_mut(i * width);
            let (head_im, tail_im) = im.split_at_mut(i * width);
            let rk_re = &head_re[row_k_lo..row_k_hi];
            let rk_im = &head_im[row_k_lo..row_k_hi];
            let ri_re = &mut tail_re[row_i_lo - i * width..row_i_lo - i * width + len];
            let ri_im = &mut tail_im[row_i_lo - i * width..row_i_lo - i * width + len];
            let (mr, mi) = (mult.re, mult.im);
            for t in 0..len {
                let br = rk_re[t];
                let bi = rk_im[t];
                ri_re[t] -= mr * br - mi * bi;
                ri_im[t] -= mr * bi + mi * br;
            }
        }
    }
    Ok(BandedLu { dim, kl, ku, width, re, im, ipiv })
}

impl BandedLu {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Solves `A x = b` in place, replaying the pivoted elimination and
    /// then back-substituting through the widened upper band.
    pub fn solve_in_place(&self, b: &mut [Complex64]) {
        assert_eq!(b.len(), self.dim);
        let (n, kl, ku, w) = (self.dim, self.kl, self.ku, self.width);
        for k in 0..n {
            let p = self.ipiv[k] as usize;
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk == Complex64::new(0.0, 0.0) {
                continue;
            }
            let imax = (k + kl).min(n - 1);
            for i in k + 1..=imax {
                let o = i * w + (k + kl - i);
                let l = Complex64::new(self.re[o], self.im[o]);
                b[i] -= l * bk;
            }
        }
        for k in (0..n).rev() {
            let jmax = (k + kl + ku).min(n - 1);
            let lo = k * w + kl + 1;
            let mut acc = b[k];
            let mut sr = 0.0;
            let mut si = 0.0;
            let row_re = &self.re[lo..lo + (jmax - k)];
            let row_im = &self.im[lo..lo + (jmax - k)];
            for t in 0..jmax - k {
                let x = b[k + 1 + t];
                sr += row_re[t] * x.re - row_im[t] * x.im;
                si += row_re[t] * x.im + row_im[t] * x.re;
            }
            acc -= Complex64::new(sr, si);
            let od = k * w + kl;
            b[k] = acc / Complex64::new(self.re[od], self.im[od]);
        }
    }

    pub fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}
