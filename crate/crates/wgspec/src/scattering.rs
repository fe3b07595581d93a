//! Scattering solves against the outgoing-scaled operator.
//!
//! For a real wavenumber away from the thresholds, the scattered field of
//! an incident lead mode is the solution of `(S − k²M) u_s = F` with the
//! classical scaling profile and the load supported on the obstacle. Its
//! modal coefficients at the section lines `x = ±L` form the scattering
//! matrices; their squared magnitudes over the propagating modes must sum
//! to one, and the defect of that identity measures the numerical error.
//! A sweep of the piston reflection coefficient `R₀₀(k)` cross-validates
//! the eigenvalue pipeline: it vanishes at reflectionless wavenumbers.

use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::assembly::{
    assemble_operator, assemble_scattering_rhs, AssembledOperator, DofMap,
};
use crate::eigensolver::{banded_lu_factor, BandedLu, ComplexBandedMatrix};
use crate::mesh::Mesh;
use crate::model::{beta_n, threshold_distance, ModalBasis, Sign, WaveguideProblem};
use crate::spectra::trace_projections;
use crate::{Error, Result};

/// Transverse modes kept beyond the propagating ones when extracting
/// scattering coefficients; the extra columns expose the evanescent
/// content at the section lines.
pub const EVANESCENT_EXTRA: usize = 5;

/// Energy-defect level above which a sweep point is flagged unreliable.
pub const DEFECT_RELIABLE: f64 = 1e-3;

/// Scattering data at one real wavenumber. With `N + 1` propagating
/// modes, the matrices hold one row per incident mode `n ≤ N` and one
/// column per extracted mode `p < N + 1 + EVANESCENT_EXTRA`.
#[derive(Debug, Clone)]
pub struct ScatteringResult {
    pub k: f64,
    /// `s_minus[n][p]`: coefficient of the left-going mode `w_p^−` in the
    /// scattered field at `x = −L` for incident `w_n^+`.
    pub s_minus: Vec<Vec<Complex64>>,
    /// `s_plus[n][p]`: coefficient of the right-going mode `w_p^+` in the
    /// scattered field at `x = +L`; the transmission matrix adds the
    /// incident wave back.
    pub s_plus: Vec<Vec<Complex64>>,
    /// Largest deviation of `Σ_p (|R_np|² + |T_np|²)` from one over the
    /// incident modes, propagating columns only.
    pub energy_defect: f64,
}

impl ScatteringResult {
    pub fn propagating_count(&self) -> usize {
        self.s_minus.len()
    }

    /// Reflection matrix `R(k)`: the propagating square block of
    /// `s_minus`.
    pub fn reflection_matrix(&self) -> Vec<Vec<Complex64>> {
        let n = self.propagating_count();
        self.s_minus.iter().map(|row| row[..n].to_vec()).collect()
    }

    /// Transmission matrix `T_np = δ_np + s⁺_np` over the propagating
    /// modes.
    pub fn transmission_matrix(&self) -> Vec<Vec<Complex64>> {
        let n = self.propagating_count();
        self.s_plus
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let mut out = row[..n].to_vec();
                out[i] += 1.0;
                out
            })
            .collect()
    }

    /// Piston reflection coefficient `R₀₀(k)`.
    pub fn r00(&self) -> Complex64 {
        self.s_minus[0][0]
    }
}

/// `max_n |Σ_{p≤N} (|s⁻_np|² + |δ_np + s⁺_np|²) − 1|` over the incident
/// rows; zero for an exact solution with real `k` and real `γ`.
pub fn energy_defect_of(s_minus: &[Vec<Complex64>], s_plus: &[Vec<Complex64>]) -> f64 {
    let n_prop = s_minus.len();
    let mut worst = 0.0f64;
    for n in 0..n_prop {
        let mut sum = 0.0;
        for p in 0..n_prop {
            let t = s_plus[n][p] + if p == n { 1.0 } else { 0.0 };
            sum += s_minus[n][p].norm_sqr() + t.norm_sqr();
        }
        worst = worst.max((sum - 1.0).abs());
    }
    worst
}

/// Modal coefficients of a field at a section line. `side` names the
/// lead: `Minus` reads the `w_p^−` coefficients at `x = −L`, `Plus` the
/// `w_p^+` coefficients at `x = +L`. Each trace projection is divided by
/// the mode's scalar envelope at the line, `(2|β_p|)^{−1/2} e^{iβ_p L}`,
/// so a field equal to `c·w_p^±` yields exactly `c`. For evanescent `p`
/// (`β_p = i|β_p|`) that division grows the coefficient by `e^{|β_p|L}`:
/// the column then reports the decaying mode's amplitude continued back
/// to `x = 0`.
pub fn extract_coefficients(
    values: &[Complex64],
    mesh: &Mesh,
    dofs: &DofMap,
    problem: &WaveguideProblem,
    k: f64,
    side: Sign,
    p_count: usize,
) -> Result<Vec<Complex64>> {
    let l = problem.pml_start;
    let x_line = match side {
        Sign::Minus => -l,
        Sign::Plus => l,
    };
    let projections = trace_projections(values, mesh, dofs, x_line, p_count)?;
    let kc = Complex64::new(k, 0.0);
    Ok(projections
        .into_iter()
        .enumerate()
        .map(|(p, proj)| {
            let beta = beta_n(kc, p);
            let scale = (2.0 * beta.norm()).sqrt();
            proj * scale * (-Complex64::i() * beta * l).exp()
        })
        .collect())
}

/// Assembled scattering operator: the wavenumber-independent forms `S`
/// and `M` of the outgoing-scaled problem, factorized anew at each `k`.
pub struct ScatteringOperator<'a> {
    problem: &'a WaveguideProblem,
    mesh: &'a Mesh,
    op: AssembledOperator,
}

impl<'a> ScatteringOperator<'a> {
    pub fn new(problem: &'a WaveguideProblem, mesh: &'a Mesh) -> Result<Self> {
        let op = assemble_operator(mesh, &problem.classical_profile())?;
        Ok(ScatteringOperator { problem, mesh, op })
    }

    pub fn dof_map(&self) -> &DofMap {
        &self.op.dof_map
    }

    fn factorize(&self, k: f64) -> Result<BandedLu> {
        let sigma = Complex64::new(k * k, 0.0);
        banded_lu_factor(ComplexBandedMatrix::from_pencil(&self.op.s, &self.op.m, sigma))
            .map_err(|e| match e {
                Error::Singular { detail, .. } => Error::Singular {
                    stage: "scattering_solve",
                    detail: format!(
                        "k = {k} coincides with a trapped mode of the discrete operator \
                         ({detail})"
                    ),
                },
                other => other,
            })
    }

    fn check_k(&self, k: f64) -> Result<usize> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::Invalid(format!(
                "scattering needs a positive real wavenumber, got {k}"
            )));
        }
        if threshold_distance(k) < 1e-9 {
            return Err(Error::Invalid(format!(
                "k = {k} sits at a mode threshold; the lead modes degenerate there"
            )));
        }
        Ok(ModalBasis::new(usize::MAX).propagating(k).end)
    }

    /// Scattered field for the incident superposition `Σ aₙ wₙ⁺`.
    pub fn solve_at(&self, k: f64, incident: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check_k(k)?;
        let lu = self.factorize(k)?;
        let rhs = assemble_scattering_rhs(self.mesh, &self.op.dof_map, k, incident)?;
        Ok(lu.solve(&rhs))
    }

    /// Full scattering data at `k`: one factorization, one solve per
    /// propagating incident mode, coefficients extracted on both sides.
    pub fn scatter_at(&self, k: f64) -> Result<ScatteringResult> {
        let n_prop = self.check_k(k)?;
        let p_count = n_prop + EVANESCENT_EXTRA;
        let lu = self.factorize(k)?;
        let mut s_minus = Vec::with_capacity(n_prop);
        let mut s_plus = Vec::with_capacity(n_prop);
        for n in 0..n_prop {
            let mut incident = vec![Complex64::new(0.0, 0.0); n_prop];
            incident[n] = Complex64::new(1.0, 0.0);
            let rhs = assemble_scattering_rhs(self.mesh, &self.op.dof_map, k, &incident)?;
            let u = lu.solve(&rhs);
            s_minus.push(extract_coefficients(
                &u,
                self.mesh,
                &self.op.dof_map,
                self.problem,
                k,
                Sign::Minus,
                p_count,
            )?);
            s_plus.push(extract_coefficients(
                &u,
                self.mesh,
                &self.op.dof_map,
                self.problem,
                k,
                Sign::Plus,
                p_count,
            )?);
        }
        let energy_defect = energy_defect_of(&s_minus, &s_plus);
        Ok(ScatteringResult { k, s_minus, s_plus, energy_defect })
    }
}

/// One-call scattering solve at a single wavenumber.
pub fn scatter(problem: &WaveguideProblem, mesh: &Mesh, k: f64) -> Result<ScatteringResult> {
    ScatteringOperator::new(problem, mesh)?.scatter_at(k)
}

/// One wavenumber of a reflection sweep. Skipped points carry a flag and
/// no values; computed points may still be flagged unreliable when the
/// energy defect exceeds [`DEFECT_RELIABLE`].
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub k: f64,
    pub r00: Option<Complex64>,
    pub energy_defect: Option<f64>,
    pub flag: Option<String>,
}

/// Sweeps `R₀₀(k)` over the given wavenumbers, factorizing per point in
/// parallel. Points within `exclusion` of a threshold or of an entry of
/// `avoid` (known trapped wavenumbers, where the solve degenerates) are
/// skipped with a flag; a singular factorization flags the point instead
/// of aborting the sweep.
pub fn sweep_r00(
    problem: &WaveguideProblem,
    mesh: &Mesh,
    ks: &[f64],
    avoid: &[f64],
    exclusion: f64,
) -> Result<Vec<SweepPoint>> {
    let op = ScatteringOperator::new(problem, mesh)?;
    ks.par_iter()
        .map(|&k| {
            let skip = |flag: &str| SweepPoint {
                k,
                r00: None,
                energy_defect: None,
                flag: Some(flag.to_string()),
            };
            if threshold_distance(k) < exclusion || !(k > 0.0) {
                return Ok(skip("threshold"));
            }
            if avoid.iter().any(|&a| (a - k).abs() < exclusion) {
                return Ok(skip("trapped"));
            }
            match op.scatter_at(k) {
                Ok(res) => {
                    let flag = (res.energy_defect > DEFECT_RELIABLE)
                        .then(|| "unreliable".to_string());
                    Ok(SweepPoint {
                        k,
                        r00: Some(res.r00()),
                        energy_defect: Some(res.energy_defect),
                        flag,
                    })
                }
                Err(Error::Singular { .. }) => Ok(skip("singular")),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Reflection and transmission of the 1D slab problem
/// `u″ + k²γ(x)u = 0` with `γ = c` on `(−a, a)` and 1 outside, for the
/// incident wave `e^{ikx}`. Solved by matching `u` and `u′` at the two
/// interfaces, so the only error is rounding. The piston scattering of a
/// full-height slab reduces to exactly this problem.
pub fn slab_oracle_r00(k: f64, c: f64, half_width: f64) -> Result<(Complex64, Complex64)> {
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::Invalid(format!("slab oracle needs k > 0, got {k}")));
    }
    if !(c > 0.0 && half_width > 0.0) {
        return Err(Error::Invalid(format!(
            "slab oracle needs c > 0 and half_width > 0, got c = {c}, half_width = {half_width}"
        )));
    }
    let a = half_width;
    let k1 = k * c.sqrt();
    let e = |t: f64| Complex64::from_polar(1.0, t);
    // Unit transmitted amplitude; march back through the slab:
    // u = A e^{ik₁x} + B e^{−ik₁x} inside, matched to t·e^{ikx} at x = a.
    let a_in = e(k * a - k1 * a) * (0.5 * (1.0 + k / k1));
    let b_in = e(k * a + k1 * a) * (0.5 * (1.0 - k / k1));
    let u = a_in * e(-k1 * a) + b_in * e(k1 * a);
    let du_ik = (a_in * e(-k1 * a) - b_in * e(k1 * a)) * (k1 / k);
    let incident = (u + du_ik) * e(k * a) * 0.5;
    let reflected = (u - du_ik) * e(-k * a) * 0.5;
    Ok((reflected / incident, incident.inv()))
}

pub const SWEEP_CSV_HEADER: &str = "k,abs_r00,re_r00,im_r00,energy_defect";

/// Writes the sweep table; skipped points keep their `k` and leave the
/// value fields empty.
pub fn write_sweep_csv(points: &[SweepPoint], out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "{SWEEP_CSV_HEADER}")?;
    for p in points {
        match (p.r00, p.energy_defect) {
            (Some(r), Some(d)) => writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                p.k,
                r.norm(),
                r.re,
                r.im,
                d
            )?,
            _ => writeln!(out, "{:.16e},,,,", p.k)?,
        }
    }
    Ok(())
}
