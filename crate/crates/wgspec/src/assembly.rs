//! P2 finite-element assembly of the scaled sesquilinear forms.
//!
//! For a scaling profile `α` the generalized eigenproblem reads
//! `S w = k² M w` with
//!
//! ```text
//! S(u, v) = ∫ α ∂ₓu ∂ₓv + α⁻¹ ∂_yu ∂_yv     M(u, v) = ∫ γ α⁻¹ u v
//! ```
//!
//! the weak form of the scaled equation multiplied by `α⁻¹`. The profile
//! and `γ` are constant on every element by mesh conformity, the basis is
//! real, and both matrices come out complex symmetric. Walls `y = 0, 1`
//! carry natural (Neumann) conditions; the truncation ends `x = ±X` are
//! constrained to zero by eliminating their rows and columns.

use num_complex::Complex64;

use crate::mesh::{Mesh, Region, Triangle};
use crate::model::{mode_field, ScalingProfile, Sign};
use crate::{Error, Result};

/// Compressed-row complex matrix with a structurally symmetric pattern.
#[derive(Debug, Clone)]
pub struct ComplexSparseMatrix {
    pub dim: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<u32>,
    pub values: Vec<Complex64>,
}

impl ComplexSparseMatrix {
    /// Builds CSR from unsorted (row, col, value) triplets, summing
    /// duplicates. Triplet order is normalized by a stable sort, so equal
    /// inputs produce bit-identical matrices.
    pub fn from_triplets(dim: usize, mut triplets: Vec<(u32, u32, Complex64)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; dim + 1];
        let mut col_idx = Vec::new();
        let mut values: Vec<Complex64> = Vec::new();
        let mut last = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r as usize + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..dim {
            row_ptr[i + 1] += row_ptr[i];
        }
        ComplexSparseMatrix { dim, row_ptr, col_idx, values }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[Complex64], y: &mut [Complex64]) {
        assert_eq!(x.len(), self.dim);
        assert_eq!(y.len(), self.dim);
        for i in 0..self.dim {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k] as usize];
            }
            y[i] = acc;
        }
    }

    pub fn matvec_alloc(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut y = vec![Complex64::new(0.0, 0.0); self.dim];
        self.matvec(x, &mut y);
        y
    }

    /// Entry (i, j), zero if outside the pattern.
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        match self.col_idx[lo..hi].binary_search(&(j as u32)) {
            Ok(p) => self.values[lo + p],
            Err(_) => Complex64::new(0.0, 0.0),
        }
    }

    /// Largest entry magnitude.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Coordinate-format text dump: `row col re im` per line.
    pub fn dump(&self, out: &mut dyn std::io::Write) -> std::io::Result<()> {
        for i in 0..self.dim {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let v = self.values[k];
                writeln!(out, "{i} {} {:.16e} {:.16e}", self.col_idx[k], v.re, v.im)?;
            }
        }
        Ok(())
    }

    pub fn to_dense(&self) -> Vec<Vec<Complex64>> {
        let mut a = vec![vec![Complex64::new(0.0, 0.0); self.dim]; self.dim];
        for i in 0..self.dim {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                a[i][self.col_idx[k] as usize] = self.values[k];
            }
        }
        a
    }
}

/// Mesh-node to matrix-index map with the truncation ends eliminated.
#[derive(Debug, Clone)]
pub struct DofMap {
    pub node_to_dof: Vec<Option<usize>>,
    pub dof_to_node: Vec<usize>,
}

impl DofMap {
    pub fn new(mesh: &Mesh) -> Self {
        let mut constrained = vec![false; mesh.node_count()];
        for &n in mesh.boundary.x_left.iter().chain(&mesh.boundary.x_right) {
            constrained[n] = true;
        }
        let mut node_to_dof = vec![None; mesh.node_count()];
        let mut dof_to_node = Vec::new();
        for (n, &c) in constrained.iter().enumerate() {
            if !c {
                node_to_dof[n] = Some(dof_to_node.len());
                dof_to_node.push(n);
            }
        }
        DofMap { node_to_dof, dof_to_node }
    }

    pub fn n_dofs(&self) -> usize {
        self.dof_to_node.len()
    }

    /// Scatter a DOF vector back to all mesh nodes (zeros at constraints).
    pub fn expand(&self, v: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.node_to_dof.len()];
        for (d, &n) in self.dof_to_node.iter().enumerate() {
            out[n] = v[d];
        }
        out
    }
}

/// Assembled pencil of one scaled operator.
#[derive(Debug, Clone)]
pub struct AssembledOperator {
    pub s: ComplexSparseMatrix,
    pub m: ComplexSparseMatrix,
    pub dof_map: DofMap,
}

// Degree-4 quadrature on the reference triangle: barycentric coordinates
// and weights (weights sum to 1; multiply by element area).
const QUAD_A: f64 = 0.445948490915965;
const QUAD_B: f64 = 0.091576213509771;
const QUAD_WA: f64 = 0.223381589678011;
const QUAD_WB: f64 = 0.109951743655322;
const QUADRATURE: [(f64, f64, f64, f64); 6] = [
    (1.0 - 2.0 * QUAD_A, QUAD_A, QUAD_A, QUAD_WA),
    (QUAD_A, 1.0 - 2.0 * QUAD_A, QUAD_A, QUAD_WA),
    (QUAD_A, QUAD_A, 1.0 - 2.0 * QUAD_A, QUAD_WA),
    (1.0 - 2.0 * QUAD_B, QUAD_B, QUAD_B, QUAD_WB),
    (QUAD_B, QUAD_B, 1.0 - 2.0 * QUAD_B, QUAD_WB),
    (QUAD_B, 1.0 - 2.0 * QUAD_B, QUAD_B, QUAD_WB),
];

/// Quadratic shape values at a barycentric point, in the local order
/// (3 corners, then midpoints 01, 12, 20).
pub(crate) fn shape_values(l1: f64, l2: f64, l3: f64) -> [f64; 6] {
    [
        l1 * (2.0 * l1 - 1.0),
        l2 * (2.0 * l2 - 1.0),
        l3 * (2.0 * l3 - 1.0),
        4.0 * l1 * l2,
        4.0 * l2 * l3,
        4.0 * l3 * l1,
    ]
}

/// Shape gradients with respect to the reference coordinates (ξ, ζ),
/// where `l1 = 1 − ξ − ζ`, `l2 = ξ`, `l3 = ζ`.
pub(crate) fn shape_gradients(l1: f64, l2: f64, l3: f64) -> [(f64, f64); 6] {
    [
        (1.0 - 4.0 * l1, 1.0 - 4.0 * l1),
        (4.0 * l2 - 1.0, 0.0),
        (0.0, 4.0 * l3 - 1.0),
        (4.0 * (l1 - l2), -4.0 * l2),
        (4.0 * l3, 4.0 * l2),
        (-4.0 * l3, 4.0 * (l1 - l3)),
    ]
}

/// Per-element real building blocks: `∫ ∂ₓNᵢ ∂ₓNⱼ`, `∫ ∂_yNᵢ ∂_yNⱼ`,
/// and `∫ Nᵢ Nⱼ`, exact for this rule (integrands of degree ≤ 4).
fn element_blocks(mesh: &Mesh, t: &Triangle) -> ([[f64; 6]; 6], [[f64; 6]; 6], [[f64; 6]; 6]) {
    let (x0, y0) = mesh.nodes[t.corners[0]];
    let (x1, y1) = mesh.nodes[t.corners[1]];
    let (x2, y2) = mesh.nodes[t.corners[2]];
    let (a11, a12) = (x1 - x0, x2 - x0);
    let (a21, a22) = (y1 - y0, y2 - y0);
    let det = a11 * a22 - a12 * a21;
    let area = 0.5 * det;

    let mut kxx = [[0.0; 6]; 6];
    let mut kyy = [[0.0; 6]; 6];
    let mut mass = [[0.0; 6]; 6];
    for &(l1, l2, l3, w) in &QUADRATURE {
        let n = shape_values(l1, l2, l3);
        let g = shape_gradients(l1, l2, l3);
        let mut gx = [0.0; 6];
        let mut gy = [0.0; 6];
        for i in 0..6 {
            gx[i] = (a22 * g[i].0 - a21 * g[i].1) / det;
            gy[i] = (-a12 * g[i].0 + a11 * g[i].1) / det;
        }
        let wq = w * area;
        for i in 0..6 {
            for j in 0..6 {
                // Products first, so (i, j) and (j, i) round identically
                // and the assembled matrices are symmetric bit for bit.
                kxx[i][j] += wq * (gx[i] * gx[j]);
                kyy[i][j] += wq * (gy[i] * gy[j]);
                mass[i][j] += wq * (n[i] * n[j]);
            }
        }
    }
    (kxx, kyy, mass)
}

fn profile_in_region(profile: &ScalingProfile, region: Region) -> Complex64 {
    match region {
        Region::Interior => Complex64::new(1.0, 0.0),
        Region::PmlLeft => profile.value(-profile.pml_start - 1.0),
        Region::PmlRight => profile.value(profile.pml_start + 1.0),
    }
}

fn check_profile_matches(mesh: &Mesh, profile: &ScalingProfile) -> Result<()> {
    if (mesh.pml_start - profile.pml_start).abs() > 1e-12 {
        return Err(Error::Invalid(format!(
            "mesh conforms to scaling onset {} but the profile starts at {}",
            mesh.pml_start, profile.pml_start
        )));
    }
    Ok(())
}

/// Assembles the forms over all mesh nodes, Neumann everywhere (no
/// constraint elimination). The full matrices satisfy the closed-form
/// identities `pᵀ S q = ∫ α∂ₓp∂ₓq + α⁻¹∂_yp∂_yq` for quadratic p, q.
pub fn assemble_forms(
    mesh: &Mesh,
    profile: &ScalingProfile,
) -> Result<(ComplexSparseMatrix, ComplexSparseMatrix)> {
    check_profile_matches(mesh, profile)?;
    let n = mesh.node_count();
    let mut s_trip = Vec::with_capacity(36 * mesh.triangles.len());
    let mut m_trip = Vec::with_capacity(36 * mesh.triangles.len());
    for t in &mesh.triangles {
        let alpha = profile_in_region(profile, t.region);
        let alpha_inv = alpha.inv();
        let (kxx, kyy, mass) = element_blocks(mesh, t);
        let ids = t.node_ids();
        for i in 0..6 {
            for j in 0..6 {
                let s = alpha * kxx[i][j] + alpha_inv * kyy[i][j];
                let m = alpha_inv * (t.gamma * mass[i][j]);
                s_trip.push((ids[i] as u32, ids[j] as u32, s));
                m_trip.push((ids[i] as u32, ids[j] as u32, m));
            }
        }
    }
    Ok((
        ComplexSparseMatrix::from_triplets(n, s_trip),
        ComplexSparseMatrix::from_triplets(n, m_trip),
    ))
}

/// Restriction of a full-node matrix to unconstrained DOFs.
fn restrict(a: &ComplexSparseMatrix, dofs: &DofMap) -> ComplexSparseMatrix {
    let mut triplets = Vec::with_capacity(a.nnz());
    for i in 0..a.dim {
        let Some(di) = dofs.node_to_dof[i] else { continue };
        for k in a.row_ptr[i]..a.row_ptr[i + 1] {
            if let Some(dj) = dofs.node_to_dof[a.col_idx[k] as usize] {
                triplets.push((di as u32, dj as u32, a.values[k]));
            }
        }
    }
    ComplexSparseMatrix::from_triplets(dofs.n_dofs(), triplets)
}

/// Assembles the operator pencil `(S, M)` for one scaling profile, with
/// the truncation ends `x = ±X` eliminated.
pub fn assemble_operator(mesh: &Mesh, profile: &ScalingProfile) -> Result<AssembledOperator> {
    let (s_full, m_full) = assemble_forms(mesh, profile)?;
    let dof_map = DofMap::new(mesh);
    Ok(AssembledOperator {
        s: restrict(&s_full, &dof_map),
        m: restrict(&m_full, &dof_map),
        dof_map,
    })
}

/// `γ`-weighted consistent mass over unconstrained DOFs (scaling profile
/// ignored): the discrete form of the `(γ·, ·)` inner product on `L²(Ω)`
/// that makes the unscaled problem selfadjoint, used for normalization.
pub fn assemble_norm_mass(mesh: &Mesh, dofs: &DofMap) -> ComplexSparseMatrix {
    let mut triplets = Vec::with_capacity(36 * mesh.triangles.len());
    for t in &mesh.triangles {
        let (_, _, mass) = element_blocks(mesh, t);
        let ids = t.node_ids();
        for i in 0..6 {
            for j in 0..6 {
                if let (Some(di), Some(dj)) =
                    (dofs.node_to_dof[ids[i]], dofs.node_to_dof[ids[j]])
                {
                    triplets.push((
                        di as u32,
                        dj as u32,
                        Complex64::new(t.gamma * mass[i][j], 0.0),
                    ));
                }
            }
        }
    }
    ComplexSparseMatrix::from_triplets(dofs.n_dofs(), triplets)
}

/// Discrete norm `√(vᴴ M_γ v)` with the `γ`-weighted mass `M_γ`.
pub fn l2_norm(norm_mass: &ComplexSparseMatrix, v: &[Complex64]) -> f64 {
    let mv = norm_mass.matvec_alloc(v);
    let s: Complex64 = v.iter().zip(&mv).map(|(a, b)| a.conj() * b).sum();
    s.re.max(0.0).sqrt()
}

/// Load vector of the scattering problem `(S − k²M) u_s = F`: the weak
/// form of `F = k² (γ − 1) u_inc` with the incident field
/// `u_inc = Σ aₙ wₙ⁺`. The integrand vanishes wherever `γ = 1`, so only
/// obstacle elements contribute (where the scaling profile is 1).
pub fn assemble_scattering_rhs(
    mesh: &Mesh,
    dofs: &DofMap,
    k: f64,
    incident: &[Complex64],
) -> Result<Vec<Complex64>> {
    let kc = Complex64::new(k, 0.0);
    let mut rhs = vec![Complex64::new(0.0, 0.0); dofs.n_dofs()];
    for t in &mesh.triangles {
        if t.gamma == 1.0 {
            continue;
        }
        if t.region != Region::Interior {
            return Err(Error::Invalid(
                "obstacle element inside the scaled region".into(),
            ));
        }
        let (x0, y0) = mesh.nodes[t.corners[0]];
        let (x1, y1) = mesh.nodes[t.corners[1]];
        let (x2, y2) = mesh.nodes[t.corners[2]];
        let area = 0.5 * ((x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0));
        let ids = t.node_ids();
        let factor = Complex64::new(k * k * (t.gamma - 1.0), 0.0);
        for &(l1, l2, l3, w) in &QUADRATURE {
            let xq = l1 * x0 + l2 * x1 + l3 * x2;
            let yq = l1 * y0 + l2 * y1 + l3 * y2;
            let mut ui = Complex64::new(0.0, 0.0);
            for (n, &a) in incident.iter().enumerate() {
                if a != Complex64::new(0.0, 0.0) {
                    ui += a * mode_field(n, Sign::Plus, kc, xq, yq)?;
                }
            }
            let shapes = shape_values(l1, l2, l3);
            let wq = w * area;
            for i in 0..6 {
                if let Some(di) = dofs.node_to_dof[ids[i]] {
                    rhs[di] += factor * ui * (wq * shapes[i]);
                }
            }
        }
    }
    Ok(rhs)
}

/// Antilinear mirror map on DOF vectors: `(PT v)(x, y) = conj(v(−x, y))`.
/// Defined whenever the node positions are mirror-symmetric.
pub fn apply_pt_map(v: &[Complex64], mesh: &Mesh, dofs: &DofMap) -> Result<Vec<Complex64>> {
    if !mesh.mirror_check_geometry() {
        return Err(Error::Invalid("mesh nodes are not mirror-symmetric".into()));
    }
    let mut out = vec![Complex64::new(0.0, 0.0); v.len()];
    for (d, &node) in dofs.dof_to_node.iter().enumerate() {
        let mirrored = mesh.mirror_node(node);
        let dm = dofs.node_to_dof[mirrored].expect("mirror of a free node is free");
        out[d] = v[dm].conj();
    }
    Ok(out)
}
