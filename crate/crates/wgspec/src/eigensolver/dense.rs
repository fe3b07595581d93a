//! Dense eigensolver for the small complex Hessenberg matrices produced by
//! the Arnoldi projection: explicit single-shift QR with Givens rotations,
//! then triangular back-substitution for eigenvectors.

use num_complex::Complex64;

use crate::{Error, Result};

/// Row-major dense complex matrix.
#[derive(Debug, Clone)]
pub struct DenseMat {
    pub n: usize,
    pub a: Vec<Complex64>,
}

impl DenseMat {
    pub fn zeros(n: usize) -> Self {
        DenseMat { n, a: vec![Complex64::new(0.0, 0.0); n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.a[i * n + i] = Complex64::new(1.0, 0.0);
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.a[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        self.a[i * self.n + j] = v;
    }

    pub fn column(&self, j: usize) -> Vec<Complex64> {
        (0..self.n).map(|i| self.get(i, j)).collect()
    }
}

/// Unitary 2×2 rotation `G = [[c̄, s̄], [−s, c]]` with `G·(a, b) = (r, 0)`.
fn givens(a: Complex64, b: Complex64) -> (Complex64, Complex64) {
    let r = (a.norm_sqr() + b.norm_sqr()).sqrt();
    if r == 0.0 {
        (Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0))
    } else {
        (a / r, b / r)
    }
}

/// Applies `G` to rows `i`, `i+1` of `t`, columns `lo..hi`.
fn rotate_rows(t: &mut DenseMat, i: usize, c: Complex64, s: Complex64, lo: usize, hi: usize) {
    for j in lo..hi {
        let u = t.get(i, j);
        let v = t.get(i + 1, j);
        t.set(i, j, c.conj() * u + s.conj() * v);
        t.set(i + 1, j, -s * u + c * v);
    }
}

/// Applies `Gᴴ` to columns `j`, `j+1` of `t`, rows `lo..hi`.
fn rotate_cols(t: &mut DenseMat, j: usize, c: Complex64, s: Complex64, lo: usize, hi: usize) {
    for i in lo..hi {
        let u = t.get(i, j);
        let v = t.get(i, j + 1);
        t.set(i, j, u * c + v * s);
        t.set(i, j + 1, -u * s.conj() + v * c.conj());
    }
}

/// Eigenvalue of the trailing 2×2 block closest to its bottom-right entry.
fn wilkinson_shift(t: &DenseMat, hi: usize) -> Complex64 {
    let a = t.get(hi - 1, hi - 1);
    let b = t.get(hi - 1, hi);
    let c = t.get(hi, hi - 1);
    let d = t.get(hi, hi);
    let tr_half = 0.5 * (a + d);
    let disc = (0.25 * (a - d) * (a - d) + b * c).sqrt();
    let l1 = tr_half + disc;
    let l2 = tr_half - disc;
    if (l1 - d).norm() <= (l2 - d).norm() {
        l1
    } else {
        l2
    }
}

/// Schur decomposition `H = Z T Zᴴ` of an upper Hessenberg matrix:
/// eigenvalues on the diagonal of triangular `T`, unitary `Z` accumulated.
pub fn hessenberg_schur(h: &DenseMat) -> Result<(DenseMat, DenseMat)> {
    let n = h.n;
    let mut t = h.clone();
    let mut z = DenseMat::identity(n);
    if n == 0 {
        return Ok((t, z));
    }
    let scale: f64 = t.a.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1e-300);
    let eps = f64::EPSILON;

    let mut hi = n - 1;
    let mut iters_left = 60 * n.max(1);
    loop {
        // Deflate negligible subdiagonals.
        for i in 0..hi {
            let sub = t.get(i + 1, i).norm();
            if sub <= eps * (t.get(i, i).norm() + t.get(i + 1, i + 1).norm()).max(eps * scale) {
                t.set(i + 1, i, Complex64::new(0.0, 0.0));
            }
        }
        while hi > 0 && t.get(hi, hi - 1) == Complex64::new(0.0, 0.0) {
            hi -= 1;
        }
        if hi == 0 {
            break;
        }
        let mut lo = hi;
        while lo > 0 && t.get(lo, lo - 1) != Complex64::new(0.0, 0.0) {
            lo -= 1;
        }
        if iters_left == 0 {
            return Err(Error::NoConvergence {
                wanted: n,
                converged: n - 1 - hi,
                iterations: 60 * n,
            });
        }
        iters_left -= 1;

        // Explicit shifted QR sweep on the active block [lo, hi].
        let mu = wilkinson_shift(&t, hi);
        for i in lo..=hi {
            let d = t.get(i, i);
            t.set(i, i, d - mu);
        }
        let mut rots = Vec::with_capacity(hi - lo);
        for i in lo..hi {
            let (c, s) = givens(t.get(i, i), t.get(i + 1, i));
            rotate_rows(&mut t, i, c, s, i, n);
            t.set(i + 1, i, Complex64::new(0.0, 0.0));
            rots.push((c, s));
        }
        for (idx, &(c, s)) in rots.iter().enumerate() {
            let j = lo + idx;
            rotate_cols(&mut t, j, c, s, 0, (j + 2).min(hi + 1));
            rotate_cols(&mut z, j, c, s, 0, n);
        }
        for i in lo..=hi {
            let d = t.get(i, i);
            t.set(i, i, d + mu);
        }
    }
    Ok((t, z))
}

/// Eigenvalues and (unit-norm) eigenvectors of an upper Hessenberg matrix,
/// via its Schur form. For a defective matrix the returned vectors of a
/// repeated eigenvalue may coincide.
pub fn hessenberg_eig(h: &DenseMat) -> Result<(Vec<Complex64>, DenseMat)> {
    let n = h.n;
    let (t, z) = hessenberg_schur(h)?;
    let values: Vec<Complex64> = (0..n).map(|i| t.get(i, i)).collect();
    let tnorm: f64 = t.a.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1e-300);

    let mut vectors = DenseMat::zeros(n);
    let mut y = vec![Complex64::new(0.0, 0.0); n];
    for k in 0..n {
        let lambda = values[k];
        y[..n].fill(Complex64::new(0.0, 0.0));
        y[k] = Complex64::new(1.0, 0.0);
        for j in (0..k).rev() {
            let mut acc = Complex64::new(0.0, 0.0);
            for l in j + 1..=k {
                acc += t.get(j, l) * y[l];
            }
            let mut denom = t.get(j, j) - lambda;
            if denom.norm() < f64::EPSILON * tnorm {
                denom = Complex64::new(f64::EPSILON * tnorm, 0.0);
            }
            y[j] = -acc / denom;
        }
        // Back to the original basis: x = Z y.
        let mut norm2 = 0.0;
        for i in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for l in 0..=k {
                acc += z.get(i, l) * y[l];
            }
            vectors.set(i, k, acc);
            norm2 += acc.norm_sqr();
        }
        let inv = 1.0 / norm2.sqrt();
        for i in 0..n {
            let v = vectors.get(i, k);
            vectors.set(i, k, v * inv);
        }
    }
    Ok((values, vectors))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn matvec(h: &DenseMat, x: &[Complex64]) -> Vec<Complex64> {
        (0..h.n)
            .map(|i| (0..h.n).map(|j| h.get(i, j) * x[j]).sum())
            .collect()
    }

    fn sort_by_re(mut v: Vec<Complex64>) -> Vec<Complex64> {
        v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
        v
    }

    #[test]
    fn companion_matrix_roots() {
        // Companion of (λ−1)(λ−2)(λ−3) = λ³ − 6λ² + 11λ − 6.
        let mut h = DenseMat::zeros(3);
        h.set(0, 0, c(6.0, 0.0));
        h.set(0, 1, c(-11.0, 0.0));
        h.set(0, 2, c(6.0, 0.0));
        h.set(1, 0, c(1.0, 0.0));
        h.set(2, 1, c(1.0, 0.0));
        let (vals, vecs) = hessenberg_eig(&h).unwrap();
        let got = sort_by_re(vals.clone());
        for (g, want) in got.iter().zip([1.0, 2.0, 3.0]) {
            assert!((g - c(want, 0.0)).norm() < 1e-10, "{g} vs {want}");
        }
        for k in 0..3 {
            let x = vecs.column(k);
            let hx = matvec(&h, &x);
            let res: f64 = hx
                .iter()
                .zip(&x)
                .map(|(p, q)| (p - vals[k] * q).norm_sqr())
                .sum::<f64>()
                .sqrt();
            assert!(res < 1e-10, "residual {res:.3e}");
        }
    }

    #[test]
    fn complex_companion_roots() {
        // Roots i, −i, 2: λ³ − 2λ² + λ − 2.
        let mut h = DenseMat::zeros(3);
        h.set(0, 0, c(2.0, 0.0));
        h.set(0, 1, c(-1.0, 0.0));
        h.set(0, 2, c(2.0, 0.0));
        h.set(1, 0, c(1.0, 0.0));
        h.set(2, 1, c(1.0, 0.0));
        let (vals, _) = hessenberg_eig(&h).unwrap();
        let mut got = vals;
        got.sort_by(|a, b| a.im.total_cmp(&b.im));
        assert!((got[0] - c(0.0, -1.0)).norm() < 1e-10);
        assert!((got[1] - c(2.0, 0.0)).norm() < 1e-10);
        assert!((got[2] - c(0.0, 1.0)).norm() < 1e-10);
    }

    #[test]
    fn triangular_input_is_fixed_point() {
        let mut h = DenseMat::zeros(3);
        h.set(0, 0, c(1.0, 1.0));
        h.set(0, 1, c(4.0, 0.0));
        h.set(0, 2, c(5.0, 2.0));
        h.set(1, 1, c(2.0, -1.0));
        h.set(1, 2, c(6.0, 0.0));
        h.set(2, 2, c(3.0, 0.5));
        let (vals, _) = hessenberg_eig(&h).unwrap();
        let got = sort_by_re(vals);
        assert!((got[0] - c(1.0, 1.0)).norm() < 1e-12);
        assert!((got[1] - c(2.0, -1.0)).norm() < 1e-12);
        assert!((got[2] - c(3.0, 0.5)).norm() < 1e-12);
    }

    #[test]
    fn random_hessenberg_residuals_and_trace() {
        let n = 24;
        let mut state = 0x6a09e667f3bcc909u64;
        let mut rnd = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let mut h = DenseMat::zeros(n);
        for i in 0..n {
            for j in 0..n {
                if j + 1 >= i {
                    h.set(i, j, c(rnd(), rnd()));
                }
            }
        }
        let (vals, vecs) = hessenberg_eig(&h).unwrap();
        let trace: Complex64 = (0..n).map(|i| h.get(i, i)).sum();
        let sum: Complex64 = vals.iter().sum();
        assert!((trace - sum).norm() < 1e-10 * (1.0 + trace.norm()));
        for k in 0..n {
            let x = vecs.column(k);
            let hx = matvec(&h, &x);
            let res: f64 = hx
                .iter()
                .zip(&x)
                .map(|(p, q)| (p - vals[k] * q).norm_sqr())
                .sum::<f64>()
                .sqrt();
            assert!(res < 1e-8, "eigenpair {k}: residual {res:.3e}");
        }
    }

    #[test]
    fn schur_is_unitary_similarity() {
        let n = 12;
        let mut state = 0xb7e151628aed2a6bu64;
        let mut rnd = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let mut h = DenseMat::zeros(n);
        for i in 0..n {
            for j in 0..n {
                if j + 1 >= i {
                    h.set(i, j, c(rnd(), rnd()));
                }
            }
        }
        let (t, z) = hessenberg_schur(&h).unwrap();
        // T strictly triangular below the diagonal.
        for i in 0..n {
            for j in 0..i {
                assert_eq!(t.get(i, j), c(0.0, 0.0));
            }
        }
        // Zᴴ Z = I.
        for i in 0..n {
            for j in 0..n {
                let dot: Complex64 = (0..n).map(|l| z.get(l, i).conj() * z.get(l, j)).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - c(want, 0.0)).norm() < 1e-12);
            }
        }
        // Z T Zᴴ = H.
        for i in 0..n {
            for j in 0..n {
                let mut acc = c(0.0, 0.0);
                for l in 0..n {
                    for p in 0..n {
                        acc += z.get(i, l) * t.get(l, p) * z.get(j, p).conj();
                    }
                }
                assert!((acc - h.get(i, j)).norm() < 1e-11, "({i},{j})");
            }
        }
    }
}
