//! P1 assembly of the bilinear forms `a(u, v) = ∫ ∇u·∇v`, `(u, v)_H = ∫ u v`
//! and `(u, v)_Q = ∫_{Γ2} u v ds`, discrete norms, and the discrete
//! coercivity constant on the functions vanishing on Γ1.
//!
//! All integrands are polynomial, so every entry is computed exactly.

use crate::error::{check_len, Error, Result};
use crate::field::NodalField;
use crate::linalg::{solve_reduced, CgOptions, SparseSymOperator};
use crate::mesh::{BoundaryTag, Mesh};

/// Partition of the vertices into Dirichlet (on Γ1) and free nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct DofMap {
    dirichlet: Vec<usize>,
    free: Vec<usize>,
    is_free: Vec<bool>,
}

impl DofMap {
    /// Every endpoint of a Γ1 edge is Dirichlet, corners included.
    pub fn new(mesh: &Mesh) -> Self {
        let n = mesh.num_vertices();
        let mut is_free = vec![true; n];
        for e in mesh.boundary_edges() {
            if e.tag == BoundaryTag::Gamma1 {
                is_free[e.a] = false;
                is_free[e.b] = false;
            }
        }
        let dirichlet = (0..n).filter(|&i| !is_free[i]).collect();
        let free = (0..n).filter(|&i| is_free[i]).collect();
        Self { dirichlet, free, is_free }
    }

    pub fn dirichlet_nodes(&self) -> &[usize] {
        &self.dirichlet
    }

    pub fn free_nodes(&self) -> &[usize] {
        &self.free
    }

    pub fn is_free(&self, i: usize) -> bool {
        self.is_free[i]
    }

    pub fn free_mask(&self) -> &[bool] {
        &self.is_free
    }

    pub fn len(&self) -> usize {
        self.is_free.len()
    }

    pub fn is_empty(&self) -> bool {
        self.is_free.is_empty()
    }
}

fn checked_area(mesh: &Mesh, t: usize) -> Result<f64> {
    let area = mesh.triangle_area(t);
    let [a, b, c] = mesh.triangles()[t];
    let scale = mesh.h().powi(2).max(f64::MIN_POSITIVE);
    if !(area > 1e-14 * scale) {
        return Err(Error::Assembly(format!(
            "degenerate triangle {t} ({a}, {b}, {c}) with area {area:e}"
        )));
    }
    Ok(area)
}

/// Element stiffness matrix of a P1 triangle.
pub fn local_stiffness(p: [[f64; 2]; 3]) -> [[f64; 3]; 3] {
    let area2 = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    // Gradient of barycentric i is (y_j - y_k, x_k - x_j) / (2T), (i, j, k) cyclic.
    let grads: [[f64; 2]; 3] = std::array::from_fn(|i| {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        [p[j][1] - p[k][1], p[k][0] - p[j][0]]
    });
    let scale = 1.0 / (2.0 * area2);
    std::array::from_fn(|i| {
        std::array::from_fn(|j| scale * (grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1]))
    })
}

/// Element mass matrix `(T / 12) [[2,1,1],[1,2,1],[1,1,2]]`.
pub fn local_mass(area: f64) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| if i == j { area / 6.0 } else { area / 12.0 }))
}

fn triangle_points(mesh: &Mesh, t: usize) -> [[f64; 2]; 3] {
    let tri = mesh.triangles()[t];
    std::array::from_fn(|k| mesh.vertices()[tri[k]])
}

fn assemble_elementwise(
    mesh: &Mesh,
    local: impl Fn(usize, f64) -> [[f64; 3]; 3],
) -> Result<SparseSymOperator> {
    let mut triplets = Vec::with_capacity(9 * mesh.num_triangles());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let area = checked_area(mesh, t)?;
        let k = local(t, area);
        for a in 0..3 {
            for b in 0..3 {
                triplets.push((tri[a], tri[b], k[a][b]));
            }
        }
    }
    SparseSymOperator::from_triplets(mesh.num_vertices(), triplets)
}

/// `A[i][j] = a(φ_i, φ_j)`.
pub fn assemble_stiffness(mesh: &Mesh) -> Result<SparseSymOperator> {
    assemble_elementwise(mesh, |t, _| local_stiffness(triangle_points(mesh, t)))
}

/// `M_H[i][j] = (φ_i, φ_j)_H`.
pub fn assemble_mass(mesh: &Mesh) -> Result<SparseSymOperator> {
    assemble_elementwise(mesh, |_, area| local_mass(area))
}

/// Boundary mass matrix `M_Q[i][j] = ∫_{Γ2} φ_i φ_j ds`.
pub fn assemble_boundary_mass(mesh: &Mesh) -> Result<SparseSymOperator> {
    let mut triplets = Vec::new();
    for e in mesh.boundary_edges().iter().filter(|e| e.tag == BoundaryTag::Gamma2) {
        let len = mesh.edge_length(e);
        if !(len > 0.0) {
            return Err(Error::Assembly(format!("zero-length boundary edge ({}, {})", e.a, e.b)));
        }
        let (d, o) = (len / 3.0, len / 6.0);
        triplets.extend([(e.a, e.a, d), (e.b, e.b, d), (e.a, e.b, o), (e.b, e.a, o)]);
    }
    SparseSymOperator::from_triplets(mesh.num_vertices(), triplets)
}

/// `F_q[i] = ∫_{Γ2} q_h φ_i ds` with `q_h` the edgewise linear interpolant.
pub fn assemble_boundary_flux(mesh: &Mesh, q: impl Fn(f64, f64) -> f64) -> Result<Vec<f64>> {
    let mut load = vec![0.0; mesh.num_vertices()];
    for e in mesh.boundary_edges().iter().filter(|e| e.tag == BoundaryTag::Gamma2) {
        let (pa, pb) = (mesh.vertices()[e.a], mesh.vertices()[e.b]);
        let (qa, qb) = (q(pa[0], pa[1]), q(pb[0], pb[1]));
        if !qa.is_finite() || !qb.is_finite() {
            return Err(Error::NumericDomain(format!(
                "flux q is not finite on edge ({}, {})",
                e.a, e.b
            )));
        }
        let len = mesh.edge_length(e);
        load[e.a] += len / 6.0 * (2.0 * qa + qb);
        load[e.b] += len / 6.0 * (qa + 2.0 * qb);
    }
    Ok(load)
}

/// Assembled operators of one mesh level.
#[derive(Debug, Clone)]
pub struct FemSpace {
    mesh: Mesh,
    stiffness: SparseSymOperator,
    mass: SparseSymOperator,
    boundary_mass: SparseSymOperator,
    dofs: DofMap,
}

impl FemSpace {
    pub fn new(mesh: Mesh) -> Result<Self> {
        let stiffness = assemble_stiffness(&mesh)?;
        let mass = assemble_mass(&mesh)?;
        let boundary_mass = assemble_boundary_mass(&mesh)?;
        let dofs = DofMap::new(&mesh);
        Ok(Self { mesh, stiffness, mass, boundary_mass, dofs })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn stiffness(&self) -> &SparseSymOperator {
        &self.stiffness
    }

    pub fn mass(&self) -> &SparseSymOperator {
        &self.mass
    }

    pub fn boundary_mass(&self) -> &SparseSymOperator {
        &self.boundary_mass
    }

    pub fn dofs(&self) -> &DofMap {
        &self.dofs
    }

    pub fn num_vertices(&self) -> usize {
        self.mesh.num_vertices()
    }

    pub fn level(&self) -> usize {
        self.mesh.level()
    }

    /// `M_H g`, the load of `(g, ·)_H`.
    pub fn control_load(&self, g: &[f64]) -> Result<Vec<f64>> {
        self.mass.mul(g)
    }

    pub fn flux_load(&self, q: impl Fn(f64, f64) -> f64) -> Result<Vec<f64>> {
        assemble_boundary_flux(&self.mesh, q)
    }

    pub fn h_inner(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        self.mass.inner(u, v)
    }

    /// `sqrt(v^T (A + M_H) v)`.
    pub fn h1_norm(&self, v: &[f64]) -> Result<f64> {
        Ok((self.stiffness.quad(v)? + self.mass.quad(v)?).max(0.0).sqrt())
    }

    pub fn l2_norm(&self, v: &[f64]) -> Result<f64> {
        Ok(self.mass.quad(v)?.max(0.0).sqrt())
    }

    pub fn boundary_l2_norm(&self, v: &[f64]) -> Result<f64> {
        Ok(self.boundary_mass.quad(v)?.max(0.0).sqrt())
    }

    pub fn h1_distance(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        check_len(u.len(), v.len())?;
        let d: Vec<f64> = u.iter().zip(v).map(|(a, b)| a - b).collect();
        self.h1_norm(&d)
    }

    pub fn l2_distance(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        check_len(u.len(), v.len())?;
        let d: Vec<f64> = u.iter().zip(v).map(|(a, b)| a - b).collect();
        self.l2_norm(&d)
    }

    pub fn interpolate(&self, f: impl Fn(f64, f64) -> f64) -> Result<NodalField> {
        crate::mesh::interpolate(&self.mesh, f)
    }

    /// Smallest eigenvalue of `A x = λ (A + M_H) x` on the free nodes.
    pub fn coercivity_constant(&self) -> Result<f64> {
        coercivity_constant(self, 1e-10)
    }
}

/// Inverse power iteration for the smallest generalized eigenvalue
/// `λ_h = min a(v, v) / ||v||_V^2` over `v` vanishing on Γ1.
///
/// Iterates until the Rayleigh quotient changes by at most `rtol` relative.
/// The Rayleigh quotient never underestimates the minimum.
pub fn coercivity_constant(space: &FemSpace, rtol: f64) -> Result<f64> {
    let mask = space.dofs.free_mask();
    if space.dofs.free_nodes().is_empty() {
        return Err(Error::Assembly("no free nodes; V_h0 is trivial".into()));
    }
    let a = &space.stiffness;
    let m = &space.mass;
    let restrict = |v: &mut Vec<f64>| {
        for (vi, &free) in v.iter_mut().zip(mask) {
            if !free {
                *vi = 0.0;
            }
        }
    };
    let b_norm2 = |v: &[f64]| -> Result<f64> { Ok(a.quad(v)? + m.quad(v)?) };

    let mut x: Vec<f64> = mask.iter().map(|&f| if f { 1.0 } else { 0.0 }).collect();
    let s = b_norm2(&x)?.sqrt();
    x.iter_mut().for_each(|v| *v /= s);
    let mut rho_prev = f64::INFINITY;
    let cg = CgOptions { rtol: 1e-14, atol: 0.0, max_iter: 0 };
    for _ in 0..2000 {
        let mut bx = a.mul(&x)?;
        let mx = m.mul(&x)?;
        bx.iter_mut().zip(&mx).for_each(|(u, v)| *u += v);
        restrict(&mut bx);
        let mut y = x.clone();
        solve_reduced(a, &bx, mask, &mut y, cg).map_err(|e| {
            Error::Assembly(format!("restricted stiffness is singular: {e}"))
        })?;
        restrict(&mut y);
        let ay = a.quad(&y)?;
        let by = ay + m.quad(&y)?;
        if !(by > 0.0) {
            return Err(Error::Assembly("inverse iteration collapsed".into()));
        }
        let rho = ay / by;
        let s = by.sqrt();
        x = y.into_iter().map(|v| v / s).collect();
        if (rho - rho_prev).abs() <= rtol * rho {
            return Ok(rho);
        }
        rho_prev = rho;
    }
    Err(Error::Assembly(
        "coercivity inverse iteration did not settle within 2000 steps".into(),
    ))
}

/// `M_H g` assembled directly on `mesh`.
pub fn assemble_control_load(mesh: &Mesh, g: &NodalField) -> Result<Vec<f64>> {
    check_len(mesh.num_vertices(), g.len())?;
    assemble_mass(mesh)?.mul(g)
}
