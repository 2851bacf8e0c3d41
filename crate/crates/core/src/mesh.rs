//! Structured triangulations of axis-aligned rectangles.
//!
//! Vertices are numbered row-major (`index = j * (nx + 1) + i`), and every grid
//! cell is split along its lower-left to upper-right diagonal into a
//! lower-right and an upper-left triangle, both counterclockwise. Boundary
//! edges carry a [`BoundaryTag`]; whole rectangle sides are tagged `Gamma1`
//! (Dirichlet) or `Gamma2` (Neumann).

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{NodalField, StateField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Bottom,
    Right,
    Top,
    Left,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Bottom, Side::Right, Side::Top, Side::Left];

    pub fn name(self) -> &'static str {
        match self {
            Side::Bottom => "bottom",
            Side::Right => "right",
            Side::Top => "top",
            Side::Left => "left",
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bottom" => Ok(Side::Bottom),
            "right" => Ok(Side::Right),
            "top" => Ok(Side::Top),
            "left" => Ok(Side::Left),
            other => Err(Error::InvalidArgument(format!("unknown side '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundaryTag {
    /// Dirichlet portion, `u = b`.
    Gamma1,
    /// Neumann portion, `-du/dn = q`.
    Gamma2,
}

impl BoundaryTag {
    pub fn name(self) -> &'static str {
        match self {
            BoundaryTag::Gamma1 => "gamma1",
            BoundaryTag::Gamma2 => "gamma2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub const UNIT: Rect = Rect { x0: 0.0, x1: 1.0, y0: 0.0, y1: 1.0 };

    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Result<Self> {
        let r = Rect { x0, x1, y0, y1 };
        r.validate()?;
        Ok(r)
    }

    fn validate(&self) -> Result<()> {
        let all = [self.x0, self.x1, self.y0, self.y1];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericDomain(format!("rectangle {self:?}")));
        }
        if self.x1 <= self.x0 || self.y1 <= self.y0 {
            return Err(Error::InvalidArgument(format!(
                "rectangle must have positive extent, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn side_length(&self, side: Side) -> f64 {
        match side {
            Side::Bottom | Side::Top => self.width(),
            Side::Left | Side::Right => self.height(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryEdge {
    pub a: usize,
    pub b: usize,
    pub side: Side,
    pub tag: BoundaryTag,
}

/// Grid description shared by every level of a refinement family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub rect: Rect,
    pub nx: usize,
    pub ny: usize,
    pub gamma1: Vec<Side>,
}

impl Grid {
    pub fn vertex_index(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    pub fn dx(&self) -> f64 {
        self.rect.width() / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        self.rect.height() / self.ny as f64
    }

    fn point(&self, i: usize, j: usize) -> [f64; 2] {
        let r = &self.rect;
        // Interpolating between the endpoints keeps the far sides exact.
        let tx = i as f64 / self.nx as f64;
        let ty = j as f64 / self.ny as f64;
        [
            r.x0 * (1.0 - tx) + r.x1 * tx,
            r.y0 * (1.0 - ty) + r.y1 * ty,
        ]
    }

    fn tag(&self, side: Side) -> BoundaryTag {
        if self.gamma1.contains(&side) {
            BoundaryTag::Gamma1
        } else {
            BoundaryTag::Gamma2
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary_edges: Vec<BoundaryEdge>,
    h: f64,
    level: usize,
    grid: Grid,
}

/// Structured triangulation of `domain` with `nx * ny` cells.
pub fn build_rectangle_mesh(
    nx: usize,
    ny: usize,
    domain: Rect,
    gamma1_sides: &[Side],
) -> Result<Mesh> {
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidArgument(format!(
            "mesh needs at least one cell per direction, got nx={nx}, ny={ny}"
        )));
    }
    if gamma1_sides.is_empty() {
        return Err(Error::InvalidArgument(
            "gamma1 must contain at least one side (meas(Gamma1) > 0)".into(),
        ));
    }
    domain.validate()?;
    let mut gamma1 = gamma1_sides.to_vec();
    gamma1.sort();
    gamma1.dedup();
    let grid = Grid { rect: domain, nx, ny, gamma1 };
    Ok(structured(grid, 0))
}

fn structured(grid: Grid, level: usize) -> Mesh {
    let (nx, ny) = (grid.nx, grid.ny);
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push(grid.point(i, j));
        }
    }

    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let v00 = grid.vertex_index(i, j);
            let v10 = grid.vertex_index(i + 1, j);
            let v01 = grid.vertex_index(i, j + 1);
            let v11 = grid.vertex_index(i + 1, j + 1);
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
        }
    }

    // Counterclockwise around the domain: bottom, right, top, left.
    let mut boundary_edges = Vec::with_capacity(2 * (nx + ny));
    for i in 0..nx {
        boundary_edges.push(BoundaryEdge {
            a: grid.vertex_index(i, 0),
            b: grid.vertex_index(i + 1, 0),
            side: Side::Bottom,
            tag: grid.tag(Side::Bottom),
        });
    }
    for j in 0..ny {
        boundary_edges.push(BoundaryEdge {
            a: grid.vertex_index(nx, j),
            b: grid.vertex_index(nx, j + 1),
            side: Side::Right,
            tag: grid.tag(Side::Right),
        });
    }
    for i in (0..nx).rev() {
        boundary_edges.push(BoundaryEdge {
            a: grid.vertex_index(i + 1, ny),
            b: grid.vertex_index(i, ny),
            side: Side::Top,
            tag: grid.tag(Side::Top),
        });
    }
    for j in (0..ny).rev() {
        boundary_edges.push(BoundaryEdge {
            a: grid.vertex_index(0, j + 1),
            b: grid.vertex_index(0, j),
            side: Side::Left,
            tag: grid.tag(Side::Left),
        });
    }

    let mut mesh = Mesh {
        vertices,
        triangles,
        boundary_edges,
        h: 0.0,
        level,
        grid,
    };
    mesh.h = longest_side(&mesh.vertices, &mesh.triangles);
    mesh
}

fn longest_side(vertices: &[[f64; 2]], triangles: &[[usize; 3]]) -> f64 {
    let dist = |a: usize, b: usize| {
        let (p, q) = (vertices[a], vertices[b]);
        (p[0] - q[0]).hypot(p[1] - q[1])
    };
    triangles
        .iter()
        .map(|t| dist(t[0], t[1]).max(dist(t[1], t[2])).max(dist(t[2], t[0])))
        .fold(0.0, f64::max)
}

/// Red refinement: every triangle is split into four congruent children
/// through its edge midpoints.
///
/// The refined mesh is renumbered into the canonical row-major layout of the
/// `2nx x 2ny` grid, so `refine_uniform(build(n))` and `build(2n)` coincide.
pub fn refine_uniform(mesh: &Mesh) -> Result<Mesh> {
    mesh.validate()?;

    let mut vertices = mesh.vertices.clone();
    let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
    let mut mid = |a: usize, b: usize, vertices: &mut Vec<[f64; 2]>| -> usize {
        let key = (a.min(b), a.max(b));
        *midpoint.entry(key).or_insert_with(|| {
            let (p, q) = (vertices[a], vertices[b]);
            vertices.push([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]);
            vertices.len() - 1
        })
    };

    let mut triangles = Vec::with_capacity(4 * mesh.triangles.len());
    for &[a, b, c] in &mesh.triangles {
        let ab = mid(a, b, &mut vertices);
        let bc = mid(b, c, &mut vertices);
        let ca = mid(c, a, &mut vertices);
        triangles.push([a, ab, ca]);
        triangles.push([ab, b, bc]);
        triangles.push([ca, bc, c]);
        triangles.push([ab, bc, ca]);
    }
    let mut boundary_edges = Vec::with_capacity(2 * mesh.boundary_edges.len());
    for e in &mesh.boundary_edges {
        let m = mid(e.a, e.b, &mut vertices);
        boundary_edges.push(BoundaryEdge { b: m, ..*e });
        boundary_edges.push(BoundaryEdge { a: m, ..*e });
    }

    let grid = Grid {
        nx: 2 * mesh.grid.nx,
        ny: 2 * mesh.grid.ny,
        ..mesh.grid.clone()
    };
    canonicalize(grid, mesh.level + 1, &vertices, &triangles, &boundary_edges)
}

/// Maps a red-refined triangulation onto the structured numbering of `grid`,
/// checking that the topology matches the structured diagonal split.
fn canonicalize(
    grid: Grid,
    level: usize,
    vertices: &[[f64; 2]],
    triangles: &[[usize; 3]],
    boundary_edges: &[BoundaryEdge],
) -> Result<Mesh> {
    let canon = structured(grid, level);
    let g = &canon.grid;
    let snap = |p: [f64; 2]| -> Result<usize> {
        let fi = (p[0] - g.rect.x0) / g.dx();
        let fj = (p[1] - g.rect.y0) / g.dy();
        let (i, j) = (fi.round(), fj.round());
        if (fi - i).abs() > 1e-6 || (fj - j).abs() > 1e-6 || i < 0.0 || j < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "refined vertex {p:?} is off the structured grid"
            )));
        }
        let (i, j) = (i as usize, j as usize);
        if i > g.nx || j > g.ny {
            return Err(Error::InvalidArgument(format!(
                "refined vertex {p:?} lies outside the domain"
            )));
        }
        Ok(g.vertex_index(i, j))
    };
    let perm = vertices.iter().map(|&p| snap(p)).collect::<Result<Vec<_>>>()?;

    let mut expected: HashMap<[usize; 3], ()> = HashMap::new();
    for t in &canon.triangles {
        expected.insert(sorted3(*t), ());
    }
    if triangles.len() != canon.triangles.len() {
        return Err(Error::InvalidArgument("refined triangle count mismatch".into()));
    }
    for t in triangles {
        let mapped = sorted3([perm[t[0]], perm[t[1]], perm[t[2]]]);
        if expected.remove(&mapped).is_none() {
            return Err(Error::InvalidArgument(format!(
                "refined triangle {mapped:?} does not match the structured split"
            )));
        }
    }
    for e in boundary_edges {
        let (a, b) = (perm[e.a], perm[e.b]);
        let found = canon.boundary_edges.iter().any(|c| {
            c.tag == e.tag && c.side == e.side && ((c.a, c.b) == (a, b) || (c.a, c.b) == (b, a))
        });
        if !found {
            return Err(Error::InvalidArgument(format!(
                "refined boundary edge ({a}, {b}) lost its tag"
            )));
        }
    }
    Ok(canon)
}

fn sorted3(mut t: [usize; 3]) -> [usize; 3] {
    t.sort_unstable();
    t
}

/// Longest triangle side over the mesh.
pub fn mesh_size(mesh: &Mesh) -> Result<f64> {
    if mesh.triangles.is_empty() {
        return Err(Error::InvalidArgument("mesh has no triangles".into()));
    }
    Ok(longest_side(&mesh.vertices, &mesh.triangles))
}

/// Nodal P1 interpolant of `f`.
pub fn interpolate(mesh: &Mesh, f: impl Fn(f64, f64) -> f64) -> Result<StateField> {
    let values = mesh
        .vertices
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let v = f(p[0], p[1]);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NumericDomain(format!("f({}, {}) = {v} at vertex {i}", p[0], p[1])))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    NodalField::new(values, mesh.level)
}

impl Mesh {
    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Longest side of any triangle.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn domain(&self) -> Rect {
        self.grid.rect
    }

    /// Signed area of triangle `t` (positive for counterclockwise).
    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let (p, q, r) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]))
    }

    pub fn edge_length(&self, e: &BoundaryEdge) -> f64 {
        let (p, q) = (self.vertices[e.a], self.vertices[e.b]);
        (p[0] - q[0]).hypot(p[1] - q[1])
    }

    pub fn tagged_length(&self, tag: BoundaryTag) -> f64 {
        self.boundary_edges
            .iter()
            .filter(|e| e.tag == tag)
            .map(|e| self.edge_length(e))
            .sum()
    }

    /// Checks positive areas, conformity, boundary tagging and `h`.
    pub fn validate(&self) -> Result<()> {
        if self.triangles.is_empty() {
            return Err(Error::InvalidArgument("mesh has no triangles".into()));
        }
        let n = self.vertices.len();
        let mut edge_count: HashMap<(usize, usize), usize> = HashMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= n) {
                return Err(Error::InvalidArgument(format!("triangle {t} references missing vertex")));
            }
            if self.triangle_area(t) <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "triangle {t} has non-positive area {}",
                    self.triangle_area(t)
                )));
            }
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                *edge_count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let mut boundary: HashMap<(usize, usize), usize> = HashMap::new();
        for (key, count) in &edge_count {
            match count {
                1 => {
                    boundary.insert(*key, 0);
                }
                2 => {}
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "edge {key:?} shared by {count} triangles"
                    )))
                }
            }
        }
        for e in &self.boundary_edges {
            let key = (e.a.min(e.b), e.a.max(e.b));
            match boundary.get_mut(&key) {
                Some(c) => *c += 1,
                None => {
                    return Err(Error::InvalidArgument(format!(
                        "tagged edge {key:?} is not a boundary edge"
                    )))
                }
            }
        }
        if let Some((key, c)) = boundary.iter().find(|(_, &c)| c != 1) {
            return Err(Error::InvalidArgument(format!(
                "boundary edge {key:?} tagged {c} times"
            )));
        }
        if self.tagged_length(BoundaryTag::Gamma1) <= 0.0 {
            return Err(Error::InvalidArgument("meas(Gamma1) must be positive".into()));
        }
        let h = longest_side(&self.vertices, &self.triangles);
        if h != self.h {
            return Err(Error::InvalidArgument(format!("stored h {} != {h}", self.h)));
        }
        Ok(())
    }

    /// Locates `(x, y)` in the structured grid and returns the containing
    /// triangle with its barycentric coordinates.
    pub fn locate(&self, x: f64, y: f64) -> Option<(usize, [f64; 3])> {
        let g = &self.grid;
        let r = &g.rect;
        let eps = 1e-12 * r.width().max(r.height());
        if x < r.x0 - eps || x > r.x1 + eps || y < r.y0 - eps || y > r.y1 + eps {
            return None;
        }
        let fx = (x - r.x0) / g.dx();
        let fy = (y - r.y0) / g.dy();
        let i = (fx.floor().max(0.0) as usize).min(g.nx - 1);
        let j = (fy.floor().max(0.0) as usize).min(g.ny - 1);
        let (sx, sy) = (fx - i as f64, fy - j as f64);
        let cell = j * g.nx + i;
        // Lower-right triangle holds the points below the diagonal.
        let t = if sy <= sx { 2 * cell } else { 2 * cell + 1 };
        let [a, b, c] = self.triangles[t];
        let (p, q, s) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        let det = (q[0] - p[0]) * (s[1] - p[1]) - (s[0] - p[0]) * (q[1] - p[1]);
        let l1 = ((x - p[0]) * (s[1] - p[1]) - (s[0] - p[0]) * (y - p[1])) / det;
        let l2 = ((q[0] - p[0]) * (y - p[1]) - (x - p[0]) * (q[1] - p[1])) / det;
        Some((t, [1.0 - l1 - l2, l1, l2]))
    }

    /// Evaluates the P1 function with nodal values `field` at `(x, y)`.
    pub fn evaluate(&self, field: &[f64], x: f64, y: f64) -> Option<f64> {
        let (t, w) = self.locate(x, y)?;
        let tri = self.triangles[t];
        Some(w[0] * field[tri[0]] + w[1] * field[tri[1]] + w[2] * field[tri[2]])
    }

    /// Plain-text dump: a `vertices` block (`index x y`), a `triangles` block
    /// (`index v0 v1 v2`, counterclockwise) and an `edges` block
    /// (`v0 v1 side tag`).
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# level {} h {:e}", self.level, self.h)?;
        writeln!(w, "vertices {}", self.vertices.len())?;
        for (i, p) in self.vertices.iter().enumerate() {
            writeln!(w, "{i} {:e} {:e}", p[0], p[1])?;
        }
        writeln!(w, "triangles {}", self.triangles.len())?;
        for (i, t) in self.triangles.iter().enumerate() {
            writeln!(w, "{i} {} {} {}", t[0], t[1], t[2])?;
        }
        writeln!(w, "edges {}", self.boundary_edges.len())?;
        for e in &self.boundary_edges {
            writeln!(w, "{} {} {} {}", e.a, e.b, e.side, e.tag.name())?;
        }
        Ok(())
    }
}

/// Mesh sequence `base, refine(base), ...` with `count` entries.
pub fn refinement_family(base: &Mesh, count: usize) -> Result<Vec<Mesh>> {
    let mut out = Vec::with_capacity(count);
    if count == 0 {
        return Ok(out);
    }
    out.push(base.clone());
    for _ in 1..count {
        let next = refine_uniform(out.last().unwrap())?;
        out.push(next);
    }
    Ok(out)
}

/// Interpolates a field from `coarse` onto the nested mesh `fine`.
///
/// Exact for nested P1 spaces, since every fine vertex lies in a coarse
/// triangle on which the coarse field is affine.
pub fn prolongate(coarse: &Mesh, fine: &Mesh, field: &NodalField) -> Result<NodalField> {
    crate::error::check_len(coarse.num_vertices(), field.len())?;
    let (cg, fg) = (&coarse.grid, &fine.grid);
    let nested = cg.rect == fg.rect
        && cg.gamma1 == fg.gamma1
        && fg.nx % cg.nx == 0
        && fg.ny % cg.ny == 0
        && fg.nx / cg.nx == fg.ny / cg.ny
        && (fg.nx / cg.nx).is_power_of_two();
    if !nested {
        return Err(Error::InvalidArgument(format!(
            "meshes are not nested: coarse {}x{}, fine {}x{}",
            cg.nx, cg.ny, fg.nx, fg.ny
        )));
    }
    let values = fine
        .vertices
        .iter()
        .map(|p| {
            coarse
                .evaluate(field, p[0], p[1])
                .ok_or_else(|| Error::InvalidArgument(format!("vertex {p:?} outside coarse mesh")))
        })
        .collect::<Result<Vec<_>>>()?;
    NodalField::new(values, fine.level)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(n: usize, sides: &[Side]) -> Mesh {
        build_rectangle_mesh(n, n, Rect::UNIT, sides).unwrap()
    }

    #[test]
    fn single_cell_counts() {
        let m = unit(1, &[Side::Left]);
        assert_eq!(m.num_vertices(), 4);
        assert_eq!(m.num_triangles(), 2);
        assert_eq!(m.boundary_edges().len(), 4);
        let g1 = m.boundary_edges().iter().filter(|e| e.tag == BoundaryTag::Gamma1).count();
        assert_eq!(g1, 1);
        m.validate().unwrap();
    }

    #[test]
    fn two_by_two_counts() {
        let m = unit(2, &[Side::Left]);
        assert_eq!(m.num_vertices(), 9);
        assert_eq!(m.num_triangles(), 8);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(matches!(
            build_rectangle_mesh(1, 1, Rect::UNIT, &[]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            build_rectangle_mesh(0, 1, Rect::UNIT, &[Side::Left]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(Rect::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(Rect::new(0.0, f64::NAN, 0.0, 1.0).is_err());
    }

    #[test]
    fn refine_counts_and_size() {
        let m = unit(1, &[Side::Left]);
        assert_eq!(m.h(), 2f64.sqrt());
        let r = refine_uniform(&m).unwrap();
        assert_eq!(r.num_triangles(), 8);
        assert_eq!(r.level(), 1);
        assert_eq!(r.h(), 2f64.sqrt() / 2.0);
        r.validate().unwrap();
    }

    #[test]
    fn refine_matches_direct_construction() {
        let rect = Rect::new(-1.0, 2.0, 0.5, 1.5).unwrap();
        let coarse = build_rectangle_mesh(3, 2, rect, &[Side::Top, Side::Left]).unwrap();
        let fine = refine_uniform(&refine_uniform(&coarse).unwrap()).unwrap();
        let direct = build_rectangle_mesh(12, 8, rect, &[Side::Left, Side::Top]).unwrap();
        assert_eq!(fine.vertices(), direct.vertices());
        assert_eq!(fine.triangles(), direct.triangles());
        assert_eq!(fine.boundary_edges(), direct.boundary_edges());
        assert_eq!(fine.level(), 2);
    }

    #[test]
    fn mesh_size_examples() {
        assert_eq!(mesh_size(&unit(1, &[Side::Left])).unwrap(), 2f64.sqrt());
        let m4 = unit(4, &[Side::Left]);
        assert!((mesh_size(&m4).unwrap() - 2f64.sqrt() / 4.0).abs() < 1e-15);

        let mut empty = unit(1, &[Side::Left]);
        empty.triangles.clear();
        assert!(matches!(mesh_size(&empty), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn interpolation_examples() {
        let m = unit(1, &[Side::Left]);
        let c = interpolate(&m, |_, _| 3.5).unwrap();
        assert!(c.iter().all(|&v| v == 3.5));
        let x = interpolate(&m, |x, _| x).unwrap();
        for (v, p) in x.iter().zip(m.vertices()) {
            assert_eq!(*v, p[0]);
        }
        let sq = interpolate(&m, |x, _| x * x).unwrap();
        assert_eq!(sq.values(), &[0.0, 1.0, 0.0, 1.0]);
        assert!(matches!(
            interpolate(&m, |x, _| 1.0 / x),
            Err(Error::NumericDomain(_))
        ));
    }

    #[test]
    fn locate_and_evaluate_affine() {
        let m = unit(3, &[Side::Left]);
        let f = |x: f64, y: f64| 2.0 - 3.0 * x + 0.5 * y;
        let field = interpolate(&m, f).unwrap();
        for &(x, y) in &[(0.1, 0.2), (0.5, 0.5), (1.0, 1.0), (0.0, 0.0), (0.99, 0.01)] {
            let v = m.evaluate(&field, x, y).unwrap();
            assert!((v - f(x, y)).abs() < 1e-13);
        }
        assert!(m.locate(1.5, 0.0).is_none());
    }

    #[test]
    fn prolongate_rejects_non_nested() {
        let a = unit(2, &[Side::Left]);
        let b = unit(3, &[Side::Left]);
        let f = NodalField::zeros(a.num_vertices(), 0);
        assert!(matches!(prolongate(&a, &b, &f), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn export_has_all_blocks() {
        let m = unit(1, &[Side::Left]);
        let mut buf = Vec::new();
        m.write_text(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("vertices 4"));
        assert!(text.contains("triangles 2"));
        assert!(text.contains("edges 4"));
        assert!(text.contains("left gamma1"));
    }
}
