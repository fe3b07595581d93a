//! Spectrum pipeline for the scaled waveguide operators.
//!
//! One call assembles the chosen operator, runs shift-invert Arnoldi near
//! every requested target, merges the results, and annotates each
//! eigenvalue with its distance to the essential-spectrum branches, the
//! backscatter indicator `ρ`, and a classification. Real eigenvalues of
//! the conjugated operator split into trapped modes (`ρ ≈ 0`, no
//! propagating content at the left section) and reflectionless modes
//! (`ρ > 0`); eigenvalues hugging a branch are discretization artifacts.

use std::io::Write;

use num_complex::Complex64;

use crate::assembly::{
    assemble_norm_mass, assemble_operator, l2_norm, shape_gradients, shape_values, DofMap,
};
use crate::eigensolver::{merge_eigenpairs, shift_invert_arnoldi};
use crate::mesh::Mesh;
use crate::model::{phi_n, ModalBasis, ScalingProfile, WaveguideProblem};
use crate::{Error, Result};

/// Which scaled operator a spectrum belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    /// Outgoing scaling in both leads: complex resonances, with trapped
    /// modes as the only real eigenvalues.
    Resonance,
    /// Ingoing scaling on the left lead, outgoing on the right: trapped
    /// and reflectionless modes together form the real eigenvalues.
    Reflectionless,
}

impl OperatorKind {
    pub fn profile(self, problem: &WaveguideProblem) -> ScalingProfile {
        match self {
            OperatorKind::Resonance => problem.classical_profile(),
            OperatorKind::Reflectionless => problem.conjugated_profile(),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            OperatorKind::Resonance => "resonance",
            OperatorKind::Reflectionless => "reflectionless",
        }
    }

    pub fn from_label(s: &str) -> Option<OperatorKind> {
        match s {
            "resonance" => Some(OperatorKind::Resonance),
            "reflectionless" => Some(OperatorKind::Reflectionless),
            _ => None,
        }
    }
}

/// Verdict on one computed eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    Trapped,
    ReflectionlessMode,
    ComplexResonance,
    ComplexReflectionless,
    EssentialArtifact,
}

impl Classification {
    pub fn label(self) -> &'static str {
        match self {
            Classification::Trapped => "trapped",
            Classification::ReflectionlessMode => "reflectionless_mode",
            Classification::ComplexResonance => "complex_resonance",
            Classification::ComplexReflectionless => "complex_reflectionless",
            Classification::EssentialArtifact => "essential_artifact",
        }
    }

    pub fn from_label(s: &str) -> Option<Classification> {
        match s {
            "trapped" => Some(Classification::Trapped),
            "reflectionless_mode" => Some(Classification::ReflectionlessMode),
            "complex_resonance" => Some(Classification::ComplexResonance),
            "complex_reflectionless" => Some(Classification::ComplexReflectionless),
            "essential_artifact" => Some(Classification::EssentialArtifact),
            _ => None,
        }
    }
}

/// One annotated eigenvalue. `k = √λ` on the principal branch, so
/// `Re k ≥ 0` and the k-plane matches the physical wavenumber.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumEntry {
    pub k: Complex64,
    pub lambda: Complex64,
    pub residual: f64,
    pub ess_distance: f64,
    /// Present exactly for the real-classified, non-artifact entries.
    pub rho: Option<f64>,
    pub classification: Classification,
}

/// Output of [`compute_spectrum`]: entries sorted by `(Re k, Im k)`, the
/// matching unit-L²-norm eigenvectors, and per-shift convergence warnings.
#[derive(Debug)]
pub struct SpectrumResult {
    pub operator_kind: OperatorKind,
    pub entries: Vec<SpectrumEntry>,
    /// Eigenvectors over the operator DOFs, normalized to unit discrete
    /// L² norm over the whole computational domain; `modes[i]` belongs to
    /// `entries[i]`.
    pub modes: Vec<Vec<Complex64>>,
    pub warnings: Vec<String>,
}

/// Solver and classification knobs of one spectrum run.
#[derive(Debug, Clone)]
pub struct SpectrumParams {
    /// Eigenpairs requested per shift.
    pub nev: usize,
    /// Pencil-residual bound a pair must meet to count as converged.
    pub tol: f64,
    pub max_restarts: usize,
    /// `|Im k|` bound under which an eigenvalue counts as real.
    pub real_tol: f64,
    /// `ρ` bound separating trapped from reflectionless entries.
    pub rho_tol: f64,
    /// Entries within `artifact_scale · h² · (1 + |λ|)` of an essential
    /// branch are discretization artifacts.
    pub artifact_scale: f64,
}

impl Default for SpectrumParams {
    fn default() -> Self {
        SpectrumParams {
            nev: 8,
            tol: 1e-8,
            max_restarts: 40,
            real_tol: 5e-3,
            rho_tol: 1e-6,
            artifact_scale: 10.0,
        }
    }
}

/// Branch count that covers every branch relevant to `lambda`: rays with
/// `n > √|λ|/π + 2` start further from `λ` than the `n = 0` branch point.
pub fn default_branch_count(lambda: Complex64) -> usize {
    (lambda.norm().sqrt() / std::f64::consts::PI).ceil() as usize + 2
}

/// Euclidean distance in the λ-plane from `lambda` to the essential
/// branches `n²π² + t·e^{−2iθ}`, `t ≥ 0`, `n ≤ n_max`, plus the mirrored
/// rays `n²π² + t·e^{+2iθ}` for the conjugated operator. Each ray's
/// distance is the closed-form point-to-ray formula.
pub fn essential_distance(
    lambda: Complex64,
    theta: f64,
    kind: OperatorKind,
    n_max: usize,
) -> f64 {
    let mut angles = vec![-2.0 * theta];
    if kind == OperatorKind::Reflectionless {
        angles.push(2.0 * theta);
    }
    let mut best = f64::INFINITY;
    for n in 0..=n_max {
        let npi = n as f64 * std::f64::consts::PI;
        let w = lambda - Complex64::new(npi * npi, 0.0);
        for &angle in &angles {
            let dir = Complex64::from_polar(1.0, angle);
            let t = (w * dir.conj()).re.max(0.0);
            best = best.min((w - dir * t).norm());
        }
    }
    best
}

// Eight-point Gauss-Legendre rule on [0, 1], used for the section
// integrals: exact to degree 15, ample for quadratic traces times the
// transverse cosines on one cell.
const GAUSS8: [(f64, f64); 8] = [
    (0.019855071751231884, 0.050614268145188130),
    (0.101666761293186630, 0.111190517226687235),
    (0.237233795041835507, 0.156853322938943644),
    (0.408282678752175098, 0.181341891689180991),
    (0.591717321247824902, 0.181341891689180991),
    (0.762766204958164493, 0.156853322938943644),
    (0.898333238706813370, 0.111190517226687235),
    (0.980144928248768116, 0.050614268145188130),
];

fn vertex_column(mesh: &Mesh, x_line: f64) -> Result<usize> {
    mesh.fine_column_at(x_line, 1e-9)
        .filter(|fx| fx % 2 == 0)
        .ok_or_else(|| Error::Invalid(format!("no vertex gridline at x = {x_line}")))
}

/// Projections `∫₀¹ w(x_line, y) φ_n(y) dy` for `n < n_count`. The line
/// must be a vertex gridline, where the P2 trace is the piecewise
/// quadratic through the column's nodal values.
pub fn trace_projections(
    values: &[Complex64],
    mesh: &Mesh,
    dofs: &DofMap,
    x_line: f64,
    n_count: usize,
) -> Result<Vec<Complex64>> {
    let fx = vertex_column(mesh, x_line)?;
    let node_value = |fy: usize| -> Complex64 {
        dofs.node_to_dof[mesh.node_index(fx, fy)]
            .map_or(Complex64::new(0.0, 0.0), |d| values[d])
    };
    let mut out = vec![Complex64::new(0.0, 0.0); n_count];
    for j in 0..mesh.ny {
        let y0 = mesh.ys_fine[2 * j];
        let y1 = mesh.ys_fine[2 * j + 2];
        let len = y1 - y0;
        let (u0, um, u1) = (node_value(2 * j), node_value(2 * j + 1), node_value(2 * j + 2));
        for &(t, w) in &GAUSS8 {
            let u = u0 * ((2.0 * t - 1.0) * (t - 1.0))
                + um * (4.0 * t * (1.0 - t))
                + u1 * (t * (2.0 * t - 1.0));
            let y = y0 + t * len;
            let wq = w * len;
            for (n, acc) in out.iter_mut().enumerate() {
                *acc += u * (wq * phi_n(n, y));
            }
        }
    }
    Ok(out)
}

fn threshold_guard(k: f64) -> Result<()> {
    if crate::model::threshold_distance(k) < 1e-9 {
        return Err(Error::Invalid(format!("k = {k} sits at a mode threshold")));
    }
    Ok(())
}

/// Trace projections of a mode on the propagating transverse modes at the
/// left section `x = −L`: the incident coefficients `a_0 .. a_N` that turn
/// a reflectionless eigenmode into a scattering excitation.
pub fn incident_coefficients(
    values: &[Complex64],
    mesh: &Mesh,
    dofs: &DofMap,
    problem: &WaveguideProblem,
    k: f64,
) -> Result<Vec<Complex64>> {
    if !(k > 0.0) {
        return Err(Error::Invalid(format!("no propagating mode at k = {k}")));
    }
    threshold_guard(k)?;
    let propagating = ModalBasis::new(64).propagating(k);
    trace_projections(values, mesh, dofs, -problem.pml_start, propagating.end)
}

/// Backscatter indicator `ρ(w) = Σ_{n=0}^{N} |∫₀¹ w(−L, y) φ_n(y) dy|²`
/// over the modes propagating at real `k`. Zero exactly for trapped
/// modes; positive for reflectionless ones.
pub fn rho_indicator(
    values: &[Complex64],
    mesh: &Mesh,
    dofs: &DofMap,
    problem: &WaveguideProblem,
    k: f64,
) -> Result<f64> {
    let coeffs = incident_coefficients(values, mesh, dofs, problem, k)?;
    Ok(coeffs.iter().map(|a| a.norm_sqr()).sum())
}

/// Classification rule applied to one annotated eigenvalue: a branch
/// hugger is an artifact; otherwise a real `k` (within `real_tol`) is
/// trapped or reflectionless by its `ρ` against `rho_tol`, and a complex
/// `k` is named after the operator it came from.
pub fn classify_entry(
    kind: OperatorKind,
    k: Complex64,
    ess_distance: f64,
    artifact_tol: f64,
    rho: Option<f64>,
    real_tol: f64,
    rho_tol: f64,
) -> Classification {
    if ess_distance <= artifact_tol {
        return Classification::EssentialArtifact;
    }
    if k.im.abs() <= real_tol {
        if rho.unwrap_or(0.0) <= rho_tol {
            Classification::Trapped
        } else {
            Classification::ReflectionlessMode
        }
    } else {
        match kind {
            OperatorKind::Resonance => Classification::ComplexResonance,
            OperatorKind::Reflectionless => Classification::ComplexReflectionless,
        }
    }
}

/// Point evaluator for a P2 field given by a DOF vector; constrained
/// nodes read as zero.
pub struct FieldEvaluator<'a> {
    mesh: &'a Mesh,
    node_values: Vec<Complex64>,
}

impl<'a> FieldEvaluator<'a> {
    pub fn new(mesh: &'a Mesh, dofs: &DofMap, values: &[Complex64]) -> Self {
        FieldEvaluator { mesh, node_values: dofs.expand(values) }
    }

    /// Field value at `(x, y)`, `None` outside the domain.
    pub fn value(&self, x: f64, y: f64) -> Option<Complex64> {
        let e = self.mesh.locate(x, y)?;
        Some(self.value_and_gradient_in(e, x, y).0)
    }

    /// `(u, ∂ₓu, ∂_yu)` of element `e`'s polynomial at `(x, y)`; the point
    /// may sit on the element boundary.
    pub fn value_and_gradient_in(
        &self,
        e: usize,
        x: f64,
        y: f64,
    ) -> (Complex64, Complex64, Complex64) {
        let t = &self.mesh.triangles[e];
        let (x0, y0) = self.mesh.nodes[t.corners[0]];
        let (x1, y1) = self.mesh.nodes[t.corners[1]];
        let (x2, y2) = self.mesh.nodes[t.corners[2]];
        let (a11, a12) = (x1 - x0, x2 - x0);
        let (a21, a22) = (y1 - y0, y2 - y0);
        let det = a11 * a22 - a12 * a21;
        let (dx, dy) = (x - x0, y - y0);
        let xi = (a22 * dx - a12 * dy) / det;
        let ze = (-a21 * dx + a11 * dy) / det;
        let n = shape_values(1.0 - xi - ze, xi, ze);
        let g = shape_gradients(1.0 - xi - ze, xi, ze);
        let ids = t.node_ids();
        let zero = Complex64::new(0.0, 0.0);
        let (mut u, mut ux, mut uy) = (zero, zero, zero);
        for i in 0..6 {
            let v = self.node_values[ids[i]];
            u += v * n[i];
            ux += v * ((a22 * g[i].0 - a21 * g[i].1) / det);
            uy += v * ((-a12 * g[i].0 + a11 * g[i].1) / det);
        }
        (u, ux, uy)
    }
}

/// `∫₀¹ Im(ū ∂ₓu) dy` across the vertical line `x_line`, with `u` and its
/// derivative taken from the elements on the side `side` (+1 right, −1
/// left) of the line.
fn section_flux(
    ev: &FieldEvaluator,
    mesh: &Mesh,
    x_line: f64,
    side: f64,
) -> Result<f64> {
    let fx = vertex_column(mesh, x_line)?;
    let neighbor = if side > 0.0 {
        mesh.xs_fine.get(fx + 2)
    } else {
        fx.checked_sub(2).map(|i| &mesh.xs_fine[i])
    };
    let Some(&neighbor) = neighbor else {
        return Err(Error::Invalid(format!(
            "no elements on the requested side of x = {x_line}"
        )));
    };
    // Nudged abscissa locates the element whose closure holds the edge
    // point; the evaluation itself happens at x_line exactly.
    let xq = x_line + 1e-6 * (neighbor - x_line);
    let mut total = 0.0;
    for j in 0..mesh.ny {
        let y0 = mesh.ys_fine[2 * j];
        let y1 = mesh.ys_fine[2 * j + 2];
        let len = y1 - y0;
        for &(t, w) in &GAUSS8 {
            let y = y0 + t * len;
            let e = mesh
                .locate(xq, y)
                .ok_or_else(|| Error::Invalid(format!("point ({xq}, {y}) left the mesh")))?;
            let (u, ux, _) = ev.value_and_gradient_in(e, x_line, y);
            total += w * len * (u.conj() * ux).im;
        }
    }
    Ok(total)
}

/// Energy-flux mismatch `|∫_{Σ_L} Im(ū ∂ₓu) dy − ∫_{Σ_{−L}} Im(ū ∂ₓu) dy|`
/// between the two section lines, with each derivative taken one-sided
/// from the unscaled region. Vanishes for solutions of the physical
/// equation with real `k` and real `γ` between the sections.
pub fn flux_defect(
    values: &[Complex64],
    mesh: &Mesh,
    dofs: &DofMap,
    problem: &WaveguideProblem,
) -> Result<f64> {
    let ev = FieldEvaluator::new(mesh, dofs, values);
    let l = problem.pml_start;
    let left = section_flux(&ev, mesh, -l, 1.0)?;
    let right = section_flux(&ev, mesh, l, -1.0)?;
    Ok((right - left).abs())
}

/// Conjugation-symmetry census of one spectrum.
#[derive(Debug, Clone)]
pub struct PairingReport {
    /// `(i, j)` with `k_j ≈ conj(k_i)`; real entries pair with themselves.
    pub pairs: Vec<(usize, usize)>,
    /// Complex entries with no conjugate partner within the tolerance.
    pub unmatched: Vec<usize>,
    /// Largest `|conj(k_i) − k_j|` over the matched pairs.
    pub max_defect: f64,
}

impl PairingReport {
    pub fn passed(&self) -> bool {
        self.unmatched.is_empty()
    }
}

/// Matches every complex non-artifact entry to a conjugate partner in the
/// k-plane within `pair_tol`; entries real within `real_tol` self-pair.
/// Artifact entries stay out of the census: their branch strings pair only
/// when the shift list itself is conjugate-closed.
pub fn conjugation_pairing(
    result: &SpectrumResult,
    real_tol: f64,
    pair_tol: f64,
) -> PairingReport {
    let candidates: Vec<usize> = (0..result.entries.len())
        .filter(|&i| result.entries[i].classification != Classification::EssentialArtifact)
        .collect();
    let mut report = PairingReport { pairs: Vec::new(), unmatched: Vec::new(), max_defect: 0.0 };
    for &i in &candidates {
        let ki = result.entries[i].k;
        if ki.im.abs() <= real_tol {
            report.pairs.push((i, i));
            continue;
        }
        let best = candidates
            .iter()
            .map(|&j| ((ki.conj() - result.entries[j].k).norm(), j))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .expect("candidate list contains i itself");
        if best.0 <= pair_tol {
            report.pairs.push((i, best.1));
            report.max_defect = report.max_defect.max(best.0);
        } else {
            report.unmatched.push(i);
        }
    }
    report
}

/// Computes the spectrum of one scaled operator near the given k-plane
/// targets: one shift-invert Arnoldi run per target at `σ = k²`, merged,
/// normalized, annotated, and classified. Shifts that fail to deliver
/// `nev` converged pairs are reported in the warning list, not as errors.
pub fn compute_spectrum(
    problem: &WaveguideProblem,
    mesh: &Mesh,
    kind: OperatorKind,
    shifts: &[Complex64],
    params: &SpectrumParams,
) -> Result<SpectrumResult> {
    if shifts.is_empty() {
        return Err(Error::Invalid("spectrum computation needs at least one shift".into()));
    }
    let op = assemble_operator(mesh, &kind.profile(problem))?;
    let norm_mass = assemble_norm_mass(mesh, &op.dof_map);
    let mut warnings = Vec::new();
    let mut pool = Vec::new();
    for &k_target in shifts {
        let sigma = k_target * k_target;
        let guard = essential_distance(sigma, problem.theta, kind, default_branch_count(sigma));
        if guard < 1e-6 * (1.0 + sigma.norm()) {
            return Err(Error::Invalid(format!(
                "shift k = {k_target} lands on an essential-spectrum branch (λ = {sigma})"
            )));
        }
        let outcome =
            shift_invert_arnoldi(&op.s, &op.m, sigma, params.nev, params.tol, params.max_restarts)?;
        if !outcome.converged {
            warnings.push(format!(
                "shift k = {k_target}: {} of {} pairs converged after {} restarts",
                outcome.pairs.len(),
                params.nev,
                outcome.restarts
            ));
        }
        pool.extend(outcome.pairs);
    }

    let h = mesh.max_cell_size();
    let mut tagged = Vec::new();
    for pair in merge_eigenpairs(pool) {
        let lambda = pair.lambda;
        let mut vector = pair.vector;
        let l2 = l2_norm(&norm_mass, &vector);
        if l2 > 0.0 {
            for v in &mut vector {
                *v /= l2;
            }
        }
        let k = lambda.sqrt();
        let ess = essential_distance(lambda, problem.theta, kind, default_branch_count(lambda));
        let artifact_tol = params.artifact_scale * h * h * (1.0 + lambda.norm());
        let rho = if ess > artifact_tol && k.im.abs() <= params.real_tol {
            rho_indicator(&vector, mesh, &op.dof_map, problem, k.re).ok()
        } else {
            None
        };
        let classification =
            classify_entry(kind, k, ess, artifact_tol, rho, params.real_tol, params.rho_tol);
        let entry = SpectrumEntry {
            k,
            lambda,
            residual: pair.residual,
            ess_distance: ess,
            rho,
            classification,
        };
        tagged.push((entry, vector));
    }
    tagged.sort_by(|a, b| a.0.k.re.total_cmp(&b.0.k.re).then(a.0.k.im.total_cmp(&b.0.k.im)));
    let (entries, modes) = tagged.into_iter().unzip();
    Ok(SpectrumResult { operator_kind: kind, entries, modes, warnings })
}

pub const EIGENVALUES_CSV_HEADER: &str =
    "re_k,im_k,re_lambda,im_lambda,residual,ess_distance,rho,classification";

/// Writes the eigenvalue table; floats carry 17 significant digits and
/// round-trip exactly, absent `ρ` prints as an empty field.
pub fn write_eigenvalues_csv(
    result: &SpectrumResult,
    out: &mut dyn Write,
) -> std::io::Result<()> {
    writeln!(out, "{EIGENVALUES_CSV_HEADER}")?;
    for e in &result.entries {
        let rho = e.rho.map_or(String::new(), |r| format!("{r:.16e}"));
        writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{}",
            e.k.re,
            e.k.im,
            e.lambda.re,
            e.lambda.im,
            e.residual,
            e.ess_distance,
            rho,
            e.classification.label()
        )?;
    }
    Ok(())
}

pub fn format_eigenvalues_csv(result: &SpectrumResult) -> String {
    let mut buf = Vec::new();
    write_eigenvalues_csv(result, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("CSV output is ASCII")
}

fn parse_float(field: &str, line: usize, name: &str) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| {
        Error::Config(format!("line {line}: field {name} is not a number: {field:?}"))
    })?;
    if !v.is_finite() {
        return Err(Error::Config(format!("line {line}: field {name} is not finite")));
    }
    Ok(v)
}

/// Parses an eigenvalue table produced by [`write_eigenvalues_csv`].
/// Rejects a wrong header, a wrong field count, non-finite numbers, and
/// unknown classification labels; blank lines are skipped.
pub fn read_eigenvalues_csv(text: &str) -> Result<Vec<SpectrumEntry>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Config("empty eigenvalue table".into()))?;
    if header.trim() != EIGENVALUES_CSV_HEADER {
        return Err(Error::Config(format!("unexpected header {header:?}")));
    }
    let mut entries = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::Config(format!(
                "line {lineno}: expected 8 fields, found {}",
                fields.len()
            )));
        }
        let rho = if fields[6].trim().is_empty() {
            None
        } else {
            Some(parse_float(fields[6], lineno, "rho")?)
        };
        let classification = Classification::from_label(fields[7].trim()).ok_or_else(|| {
            Error::Config(format!("line {lineno}: unknown classification {:?}", fields[7]))
        })?;
        entries.push(SpectrumEntry {
            k: Complex64::new(
                parse_float(fields[0], lineno, "re_k")?,
                parse_float(fields[1], lineno, "im_k")?,
            ),
            lambda: Complex64::new(
                parse_float(fields[2], lineno, "re_lambda")?,
                parse_float(fields[3], lineno, "im_lambda")?,
            ),
            residual: parse_float(fields[4], lineno, "residual")?,
            ess_distance: parse_float(fields[5], lineno, "ess_distance")?,
            rho,
            classification,
        });
    }
    Ok(entries)
}

/// Writes the essential branches sampled in the k-plane: rows
/// `branch_n, side, re_k, im_k` with `side` naming the rotation sign of
/// `n²π² + t·e^{±2iθ}`.
pub fn write_branches_csv(
    theta: f64,
    kind: OperatorKind,
    k_max: f64,
    samples_per_branch: usize,
    out: &mut dyn Write,
) -> std::io::Result<()> {
    writeln!(out, "branch_n,side,re_k,im_k")?;
    let mut sides = vec![("minus", -2.0 * theta)];
    if kind == OperatorKind::Reflectionless {
        sides.push(("plus", 2.0 * theta));
    }
    let t_max = k_max * k_max;
    let mut n = 0usize;
    while (n as f64) * std::f64::consts::PI <= k_max {
        let npi = n as f64 * std::f64::consts::PI;
        for &(side, angle) in &sides {
            for s in 0..=samples_per_branch {
                let t = t_max * (s as f64) / (samples_per_branch as f64);
                let lambda =
                    Complex64::new(npi * npi, 0.0) + Complex64::from_polar(t, angle);
                let k = lambda.sqrt();
                writeln!(out, "{n},{side},{:.16e},{:.16e}", k.re, k.im)?;
            }
        }
        n += 1;
    }
    Ok(())
}

/// Samples a DOF field on a uniform grid and writes `x, y, re_u, im_u`
/// rows, the input for field pictures.
pub fn write_field_csv(
    values: &[Complex64],
    mesh: &Mesh,
    dofs: &DofMap,
    step: f64,
    out: &mut dyn Write,
) -> Result<()> {
    if !(step > 0.0) {
        return Err(Error::Invalid(format!("sampling step must be positive, got {step}")));
    }
    let ev = FieldEvaluator::new(mesh, dofs, values);
    let x_min = mesh.xs_fine[0];
    let x_max = *mesh.xs_fine.last().expect("mesh has gridlines");
    let nx = ((x_max - x_min) / step).ceil().max(1.0) as usize;
    let ny = (1.0 / step).ceil().max(1.0) as usize;
    let io = |r: std::io::Result<()>| r.map_err(|e| Error::io("field csv", e));
    io(writeln!(out, "x,y,re_u,im_u"))?;
    for i in 0..=nx {
        let x = x_min + (x_max - x_min) * (i as f64) / (nx as f64);
        for j in 0..=ny {
            let y = (j as f64) / (ny as f64);
            let u = ev.value(x, y).expect("sampling grid stays inside the domain");
            io(writeln!(out, "{x:.16e},{y:.16e},{:.16e},{:.16e}", u.re, u.im))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::DofMap;
    use crate::mesh::build_structured_mesh;
    use crate::model::{mode_field, GammaBlock, Sign};
    use std::f64::consts::{FRAC_PI_4, PI};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn sym_problem(x: f64) -> WaveguideProblem {
        WaveguideProblem::new(
            FRAC_PI_4,
            1.0,
            x,
            vec![GammaBlock { x0: -1.0, x1: 1.0, y0: 0.25, y1: 0.75, value: 5.0 }],
        )
        .unwrap()
    }

    fn empty_problem(x: f64) -> WaveguideProblem {
        WaveguideProblem::new(FRAC_PI_4, 1.0, x, vec![]).unwrap()
    }

    /// Nodal samples of a scalar function as a DOF vector.
    fn sample(mesh: &Mesh, dofs: &DofMap, f: impl Fn(f64, f64) -> Complex64) -> Vec<Complex64> {
        dofs.dof_to_node
            .iter()
            .map(|&n| {
                let (x, y) = mesh.nodes[n];
                f(x, y)
            })
            .collect()
    }

    #[test]
    fn essential_distance_closed_form_examples() {
        let theta = FRAC_PI_4;
        for kind in [OperatorKind::Resonance, OperatorKind::Reflectionless] {
            assert!(essential_distance(c(PI * PI, 0.0), theta, kind, 4) < 1e-12);
            assert!(essential_distance(c(0.0, -1.0), theta, kind, 4) < 1e-12);
            let d = essential_distance(c(1.0, 0.0), theta, kind, 4);
            assert!((d - 1.0).abs() < 1e-12, "{kind:?}: {d}");
        }
        // The mirrored ray belongs to the conjugated operator only.
        let up = c(0.0, 1.0);
        assert!(essential_distance(up, theta, OperatorKind::Reflectionless, 4) < 1e-12);
        let d = essential_distance(up, theta, OperatorKind::Resonance, 4);
        assert!((d - 1.0).abs() < 1e-12, "{d}");
    }

    #[test]
    fn essential_distance_matches_brute_force() {
        let theta = 0.6;
        let brute = |lambda: Complex64, kind: OperatorKind| -> f64 {
            let mut angles = vec![-2.0 * theta];
            if kind == OperatorKind::Reflectionless {
                angles.push(2.0 * theta);
            }
            let mut best = f64::INFINITY;
            for n in 0..=5usize {
                let npi = n as f64 * PI;
                for &a in &angles {
                    let dir = Complex64::from_polar(1.0, a);
                    for s in 0..=60_000 {
                        let t = s as f64 * 1e-3;
                        let p = c(npi * npi, 0.0) + dir * t;
                        best = best.min((lambda - p).norm());
                    }
                }
            }
            best
        };
        for &re in &[-5.0, -1.3, 0.7, 3.0, 9.0, 12.5] {
            for &im in &[-6.0, -0.4, 0.0, 0.8, 5.0] {
                let lambda = c(re, im);
                for kind in [OperatorKind::Resonance, OperatorKind::Reflectionless] {
                    let fast = essential_distance(lambda, theta, kind, 5);
                    let slow = brute(lambda, kind);
                    assert!(
                        (fast - slow).abs() <= 2e-3,
                        "{kind:?} at {lambda}: {fast} vs {slow}"
                    );
                }
            }
        }
    }

    #[test]
    fn trace_projections_integrate_quadratics_exactly() {
        let p = empty_problem(3.0);
        let mesh = build_structured_mesh(&p, 0.4).unwrap();
        let dofs = DofMap::new(&mesh);
        let v = sample(&mesh, &dofs, |_, y| c(y * y, 0.0));
        let got = trace_projections(&v, &mesh, &dofs, -1.0, 5).unwrap();
        // ∫ y² dy = 1/3 and ∫ y² √2 cos(nπy) dy = 2√2 (−1)ⁿ / (nπ)². The
        // trace is exact; the residual is the Gauss-8 error on cos(nπy)
        // over one cell, ~1e-12 at n = 4.
        assert!((got[0] - c(1.0 / 3.0, 0.0)).norm() < 1e-13);
        for n in 1..5 {
            let want = 2.0 * std::f64::consts::SQRT_2 * (-1.0f64).powi(n as i32)
                / (n as f64 * PI).powi(2);
            assert!((got[n] - c(want, 0.0)).norm() < 1e-10, "n = {n}: {}", got[n]);
        }
        // Lines off the grid and midpoint columns are rejected.
        assert!(trace_projections(&v, &mesh, &dofs, -1.001, 2).is_err());
    }

    #[test]
    fn rho_zero_on_vanishing_trace_and_modal_content() {
        let p = empty_problem(3.0);
        let mesh = build_structured_mesh(&p, 0.1).unwrap();
        let dofs = DofMap::new(&mesh);

        let v = sample(&mesh, &dofs, |x, _| c(x + 1.0, 0.0));
        assert_eq!(rho_indicator(&v, &mesh, &dofs, &p, 2.0).unwrap(), 0.0);

        // cos(πy) has no piston content and φ₁-coefficient 1/√2.
        let v = sample(&mesh, &dofs, |_, y| c((PI * y).cos(), 0.0));
        let coeffs = incident_coefficients(&v, &mesh, &dofs, &p, 4.0).unwrap();
        assert_eq!(coeffs.len(), 2);
        assert!(coeffs[0].norm() < 1e-4, "{}", coeffs[0]);
        assert!((coeffs[1] - c(std::f64::consts::FRAC_1_SQRT_2, 0.0)).norm() < 1e-3);
        let rho = rho_indicator(&v, &mesh, &dofs, &p, 4.0).unwrap();
        assert!((rho - 0.5).abs() < 2e-3, "{rho}");
        // Only the piston propagates at k = 2, and cos(πy) carries none.
        let rho = rho_indicator(&v, &mesh, &dofs, &p, 2.0).unwrap();
        assert!(rho < 1e-8, "{rho}");

        assert!(rho_indicator(&v, &mesh, &dofs, &p, PI).is_err());
        assert!(rho_indicator(&v, &mesh, &dofs, &p, -1.0).is_err());
    }

    #[test]
    fn flux_defect_plane_wave_and_negative_control() {
        let p = empty_problem(3.0);
        let mesh = build_structured_mesh(&p, 0.25).unwrap();
        let dofs = DofMap::new(&mesh);
        let k = 2.0;
        let v = sample(&mesh, &dofs, |x, y| {
            mode_field(0, Sign::Plus, c(k, 0.0), x, y).unwrap()
        });
        // Mirror symmetry of the mesh makes the two section fluxes agree
        // to rounding for the interpolated plane wave.
        let defect = flux_defect(&v, &mesh, &dofs, &p).unwrap();
        assert!(defect < 1e-10, "{defect:.3e}");
        let ev = FieldEvaluator::new(&mesh, &dofs, &v);
        let left = section_flux(&ev, &mesh, -1.0, 1.0).unwrap();
        // w₀⁺ carries flux ∫ Im(ū ∂ₓu) = k/(2k) = 1/2. Each section alone
        // sees the O(h²) one-sided derivative error of the interpolant
        // (|u‴|h²/12 ≈ 1% here); the defect above cancels it by symmetry.
        assert!((left - 0.5).abs() < 2.5e-2, "{left}");

        let mut state = 0x9e3779b97f4a7c15u64;
        let mut rnd = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let noise: Vec<Complex64> = (0..dofs.n_dofs()).map(|_| c(rnd(), rnd())).collect();
        assert!(flux_defect(&noise, &mesh, &dofs, &p).unwrap() > 1e-3);
    }

    #[test]
    fn classification_rules() {
        let real_tol = 5e-3;
        let rho_tol = 1e-6;
        let classify = |kind, k: Complex64, ess: f64, rho: Option<f64>| {
            classify_entry(kind, k, ess, 0.01, rho, real_tol, rho_tol)
        };
        let b = OperatorKind::Reflectionless;
        assert_eq!(classify(b, c(2.8, 1e-4), 1.0, Some(4.3e-9)), Classification::Trapped);
        assert_eq!(
            classify(b, c(3.3, -2e-3), 1.0, Some(0.14)),
            Classification::ReflectionlessMode
        );
        assert_eq!(
            classify(b, c(5.29, -0.13), 1.0, None),
            Classification::ComplexReflectionless
        );
        assert_eq!(
            classify(OperatorKind::Resonance, c(5.29, -0.13), 1.0, None),
            Classification::ComplexResonance
        );
        assert_eq!(
            classify(b, c(2.8, 1e-4), 0.005, Some(4.3e-9)),
            Classification::EssentialArtifact
        );
    }

    fn entry(k: Complex64, class: Classification) -> SpectrumEntry {
        SpectrumEntry {
            k,
            lambda: k * k,
            residual: 1e-10,
            ess_distance: 1.0,
            rho: None,
            classification: class,
        }
    }

    #[test]
    fn conjugation_pairing_report() {
        let mk = |entries: Vec<SpectrumEntry>| SpectrumResult {
            operator_kind: OperatorKind::Reflectionless,
            modes: vec![Vec::new(); entries.len()],
            warnings: Vec::new(),
            entries,
        };
        let paired = mk(vec![
            entry(c(2.0, 0.0), Classification::Trapped),
            entry(c(3.0, 0.1), Classification::ComplexReflectionless),
            entry(c(3.0, -0.1 + 1e-5), Classification::ComplexReflectionless),
            entry(c(9.0, 0.4), Classification::EssentialArtifact),
        ]);
        let report = conjugation_pairing(&paired, 5e-3, 1e-3);
        assert!(report.passed());
        assert_eq!(report.pairs.len(), 3);
        assert!(report.pairs.contains(&(0, 0)));
        assert!(report.pairs.contains(&(1, 2)));
        assert!(report.max_defect <= 1e-3);

        let broken = mk(vec![
            entry(c(2.0, 0.0), Classification::Trapped),
            entry(c(3.0, 0.1), Classification::ComplexReflectionless),
        ]);
        let report = conjugation_pairing(&broken, 5e-3, 1e-3);
        assert!(!report.passed());
        assert_eq!(report.unmatched, vec![1]);
    }

    #[test]
    fn empty_guide_kernel_is_the_scaled_plane_wave() {
        // With γ ≡ 1 the conjugated operator keeps real eigenvalues whose
        // eigenvectors follow e^{ik·𝒥(x)}; they are genuine spectrum (the
        // essential sector covers the real axis), not branch artifacts.
        let p = empty_problem(4.0);
        let mesh = build_structured_mesh(&p, 0.2).unwrap();
        let params = SpectrumParams { nev: 4, tol: 1e-9, ..SpectrumParams::default() };
        let result = compute_spectrum(
            &p,
            &mesh,
            OperatorKind::Reflectionless,
            &[c(2.0, 0.0)],
            &params,
        )
        .unwrap();
        assert!(result.warnings.is_empty(), "{:?}", result.warnings);

        let near = result
            .entries
            .iter()
            .position(|e| (e.k - c(2.0, 0.0)).norm() < 0.15 && e.k.im.abs() < 1e-4)
            .unwrap_or_else(|| panic!("no real eigenvalue near k = 2: {:?}", result.entries));
        let e = &result.entries[near];
        assert_eq!(e.classification, Classification::ReflectionlessMode);
        assert!(e.rho.unwrap() > 1e-3);

        // Alignment with the scaled plane wave at the computed k.
        let dofs = DofMap::new(&mesh);
        let profile = p.conjugated_profile();
        let wave = sample(&mesh, &dofs, |x, y| {
            let _ = y;
            (Complex64::i() * e.k * profile.scaled_coordinate(x)).exp()
        });
        let mode = &result.modes[near];
        let inner: Complex64 = wave.iter().zip(mode).map(|(a, b)| a.conj() * b).sum();
        let nw: f64 = wave.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let nm: f64 = mode.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let align = inner.norm() / (nw * nm);
        assert!(align > 0.99, "alignment {align}");
    }

    #[test]
    fn coarse_obstacle_spectrum_finds_trapped_and_reflectionless() {
        let p = sym_problem(6.0);
        let mesh = build_structured_mesh(&p, 0.2).unwrap();
        let params = SpectrumParams { nev: 6, tol: 1e-9, ..SpectrumParams::default() };
        let shifts = [c(0.9, 0.0), c(1.8, 0.0), c(2.4, 0.0)];
        let result = compute_spectrum(
            &p,
            &mesh,
            OperatorKind::Reflectionless,
            &shifts,
            &params,
        )
        .unwrap();

        let reals: Vec<&SpectrumEntry> = result
            .entries
            .iter()
            .filter(|e| e.k.im.abs() <= params.real_tol && e.k.re > 0.2)
            .collect();
        assert!(reals.len() >= 3, "real entries: {:?}", result.entries);
        let near = |k0: f64| {
            reals
                .iter()
                .min_by(|a, b| (a.k.re - k0).abs().total_cmp(&(b.k.re - k0).abs()))
                .copied()
                .unwrap()
        };
        // Coarse-mesh eigenvalues sit within O(h²) of the fine values.
        let tm = near(2.4);
        assert!((tm.k.re - 2.4).abs() < 0.15, "trapped at {}", tm.k);
        let rm = near(0.9);
        assert!((rm.k.re - 0.9).abs() < 0.15, "reflectionless at {}", rm.k);
        // The backscatter gap separates the two kinds by orders of
        // magnitude even on a coarse mesh.
        assert!(rm.rho.unwrap() > 0.03, "rho = {:?}", rm.rho);
        assert!(tm.rho.unwrap() < rm.rho.unwrap() * 1e-2);

        // Deterministic pipeline: a rerun reproduces the bytes.
        let again = compute_spectrum(
            &p,
            &mesh,
            OperatorKind::Reflectionless,
            &shifts,
            &params,
        )
        .unwrap();
        assert_eq!(format_eigenvalues_csv(&result), format_eigenvalues_csv(&again));
    }

    #[test]
    fn eigenvalues_csv_round_trip() {
        let result = SpectrumResult {
            operator_kind: OperatorKind::Reflectionless,
            entries: vec![
                SpectrumEntry {
                    k: c(2.4001, 3.2e-7),
                    lambda: c(5.76048, 1.536e-6),
                    residual: 3.5e-11,
                    ess_distance: 0.73,
                    rho: Some(8.0e-10),
                    classification: Classification::Trapped,
                },
                SpectrumEntry {
                    k: c(5.29, -0.13),
                    lambda: c(27.9672, -1.3754),
                    residual: 1.1e-9,
                    ess_distance: 2.1,
                    rho: None,
                    classification: Classification::ComplexReflectionless,
                },
            ],
            modes: vec![Vec::new(), Vec::new()],
            warnings: Vec::new(),
        };
        let text = format_eigenvalues_csv(&result);
        let back = read_eigenvalues_csv(&text).unwrap();
        assert_eq!(back, result.entries);

        assert!(read_eigenvalues_csv("").is_err());
        assert!(read_eigenvalues_csv("nonsense header\n").is_err());
        let bad_count = format!("{EIGENVALUES_CSV_HEADER}\n1.0,2.0,3.0\n");
        assert!(read_eigenvalues_csv(&bad_count).is_err());
        let bad_class = format!(
            "{EIGENVALUES_CSV_HEADER}\n1.0,0.0,1.0,0.0,1e-9,1.0,,mystery\n"
        );
        assert!(read_eigenvalues_csv(&bad_class).is_err());
        let bad_float = format!(
            "{EIGENVALUES_CSV_HEADER}\nNaN,0.0,1.0,0.0,1e-9,1.0,,trapped\n"
        );
        assert!(read_eigenvalues_csv(&bad_float).is_err());
    }

    #[test]
    fn branch_csv_half_planes() {
        let mut buf = Vec::new();
        write_branches_csv(FRAC_PI_4, OperatorKind::Reflectionless, 7.0, 50, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("branch_n,side,re_k,im_k"));
        let mut saw_plus = false;
        for line in lines {
            let f: Vec<&str> = line.split(',').collect();
            let im: f64 = f[3].parse().unwrap();
            match f[1] {
                "minus" => assert!(im <= 1e-12, "{line}"),
                "plus" => {
                    saw_plus = true;
                    assert!(im >= -1e-12, "{line}");
                }
                other => panic!("unknown side {other}"),
            }
        }
        assert!(saw_plus);

        let mut buf = Vec::new();
        write_branches_csv(FRAC_PI_4, OperatorKind::Resonance, 7.0, 50, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(!text.contains("plus"));
    }

    #[test]
    fn field_csv_samples_whole_domain() {
        let p = empty_problem(2.0);
        let mesh = build_structured_mesh(&p, 0.5).unwrap();
        let dofs = DofMap::new(&mesh);
        let v = sample(&mesh, &dofs, |x, y| c(x, y));
        let mut buf = Vec::new();
        write_field_csv(&v, &mesh, &dofs, 0.5, &mut buf).unwrap();
        let text = String::from_utf8(Vec::from(buf)).unwrap();
        let rows: Vec<&str> = text.lines().skip(1).collect();
        assert_eq!(rows.len(), 9 * 3);
        // Interior sample reproduces the linear field exactly.
        let mid: Vec<&str> = rows
            .iter()
            .find(|r| r.starts_with("5.0000000000000000e-1,5.0000000000000000e-1"))
            .unwrap()
            .split(',')
            .collect();
        let re: f64 = mid[2].parse().unwrap();
        assert!((re - 0.5).abs() < 1e-12);
        assert!(write_field_csv(&v, &mesh, &dofs, 0.0, &mut Vec::new()).is_err());
    }
}
