//! Curved tensor-product meshes.
//!
//! A mesh stores the `Q_k` geometry nodes of every element in the initial
//! configuration. The geometry basis is the Gauss-Lobatto tensor basis of
//! [`crate::fem`], so node ordering inside an element is lexicographic and
//! faces follow the counter-clockwise convention documented there.
//!
//! Generators build meshes from mapped blocks: each block is a smooth map of
//! the unit square subdivided into `nx x ny` elements, and coincident nodes of
//! neighbouring blocks are merged. Boundary nodes are placed by the exact
//! block map, so curved walls are interpolated at the Gauss-Lobatto points.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{HydroError, Result};
use crate::fem::{face_local_nodes, gauss_rule, reference_faces, reference_normal, Basis1D, TensorBasis};
use crate::linalg::{self, Mat3, Vec3};

/// A boundary face: local face `face` of element `elem`, with a user tag
/// (generators use 0 for the outer boundary and 1 for holes).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundaryFace {
    pub elem: usize,
    pub face: usize,
    pub tag: u32,
}

#[derive(Clone, Debug)]
pub struct Mesh {
    pub dim: usize,
    pub geom_degree: usize,
    /// Initial node coordinates, `dim` entries per node.
    pub node_coords: Vec<f64>,
    /// `(k+1)^dim` node indices per element.
    pub elem_conn: Vec<usize>,
    pub bdry_faces: Vec<BoundaryFace>,
    geom_basis: TensorBasis,
}

/// Outward unit normal and surface measure at a boundary quadrature point.
#[derive(Clone, Copy, Debug)]
pub struct FaceFrame {
    pub normal: Vec3,
    pub surf_weight: f64,
    pub phys_point: Vec3,
}

impl Mesh {
    pub fn new(
        dim: usize,
        geom_degree: usize,
        node_coords: Vec<f64>,
        elem_conn: Vec<usize>,
        bdry_faces: Vec<BoundaryFace>,
    ) -> Result<Self> {
        if !(2..=3).contains(&dim) {
            return Err(HydroError::InvalidInput(format!("unsupported dimension {dim}")));
        }
        if geom_degree == 0 {
            return Err(HydroError::InvalidInput("geometry degree must be >= 1".into()));
        }
        if node_coords.len() % dim != 0 {
            return Err(HydroError::InvalidInput("node coordinate array length".into()));
        }
        let npe = (geom_degree + 1).pow(dim as u32);
        if elem_conn.is_empty() || elem_conn.len() % npe != 0 {
            return Err(HydroError::InvalidInput("element connectivity length".into()));
        }
        let n_nodes = node_coords.len() / dim;
        if let Some(&bad) = elem_conn.iter().find(|&&a| a >= n_nodes) {
            return Err(HydroError::InvalidInput(format!("node index {bad} out of range")));
        }
        let n_elems = elem_conn.len() / npe;
        let n_faces = reference_faces(dim).len();
        let mut seen = std::collections::HashSet::new();
        for f in &bdry_faces {
            if f.elem >= n_elems || f.face >= n_faces {
                return Err(HydroError::InvalidInput(format!("boundary face {f:?} out of range")));
            }
            if !seen.insert((f.elem, f.face)) {
                return Err(HydroError::InvalidInput(format!("duplicate boundary face {f:?}")));
            }
        }
        Ok(Self {
            dim,
            geom_degree,
            node_coords,
            elem_conn,
            bdry_faces,
            geom_basis: TensorBasis::new(dim, Basis1D::lobatto(geom_degree)),
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_coords.len() / self.dim
    }

    pub fn elem_count(&self) -> usize {
        self.elem_conn.len() / self.nodes_per_elem()
    }

    pub fn nodes_per_elem(&self) -> usize {
        (self.geom_degree + 1).pow(self.dim as u32)
    }

    pub fn node(&self, a: usize) -> &[f64] {
        &self.node_coords[a * self.dim..(a + 1) * self.dim]
    }

    pub fn elem_nodes(&self, elem: usize) -> &[usize] {
        let n = self.nodes_per_elem();
        &self.elem_conn[elem * n..(elem + 1) * n]
    }

    pub fn geometry_basis(&self) -> &TensorBasis {
        &self.geom_basis
    }

    /// Physical point of `ref_point` in element `elem` for node positions `coords`.
    pub fn map_point(&self, elem: usize, ref_point: &[f64], coords: &[f64]) -> Vec3 {
        let ev = self.geom_basis.eval(ref_point);
        let d = self.dim;
        let mut x = [0.0; 3];
        for (&a, w) in self.elem_nodes(elem).iter().zip(&ev.values) {
            for i in 0..d {
                x[i] += coords[a * d + i] * w;
            }
        }
        x
    }

    /// `grad_xi x` without validity checks (`J[i][j] = dx_i / dxi_j`).
    pub fn jacobian(&self, elem: usize, ref_point: &[f64], coords: &[f64]) -> Mat3 {
        let ev = self.geom_basis.eval(ref_point);
        let d = self.dim;
        let mut jac = linalg::ZERO;
        for (&a, g) in self.elem_nodes(elem).iter().zip(&ev.grads) {
            for i in 0..d {
                let xa = coords[a * d + i];
                for j in 0..d {
                    jac[i][j] += xa * g[j];
                }
            }
        }
        jac
    }

    /// `grad_xi x` at a reference point; a nonpositive determinant is
    /// reported as [`HydroError::Tangled`].
    pub fn reference_jacobian(&self, elem: usize, ref_point: &[f64], coords: &[f64]) -> Result<Mat3> {
        let jac = self.jacobian(elem, ref_point, coords);
        let det = linalg::det(self.dim, &jac);
        if det > 0.0 {
            Ok(jac)
        } else {
            Err(HydroError::Tangled { elem, det })
        }
    }

    /// Outward normal and surface weight at a point on a reference face.
    ///
    /// `ref_point` is given in volume reference coordinates and `weight` is the
    /// reference face quadrature weight.
    pub fn face_frame(
        &self,
        elem: usize,
        face: usize,
        ref_point: &[f64],
        weight: f64,
        coords: &[f64],
    ) -> Result<FaceFrame> {
        let d = self.dim;
        let jac = self.jacobian(elem, ref_point, coords);
        let (normal, area) = physical_normal(d, &jac, face);
        let scale = linalg::frobenius(d, &jac);
        if !(area > 1e-14 * scale.powi(d as i32 - 1)) {
            return Err(HydroError::DegenerateFace { elem, face });
        }
        Ok(FaceFrame {
            normal,
            surf_weight: area * weight,
            phys_point: self.map_point(elem, ref_point, coords),
        })
    }

    /// `sum_elems int det(grad_xi x)`, i.e. the area/volume of the mesh.
    pub fn measure(&self, coords: &[f64]) -> f64 {
        let rule = gauss_rule(self.geom_degree + 2, self.dim);
        (0..self.elem_count())
            .map(|e| self.elem_measure(e, coords, &rule))
            .sum()
    }

    fn elem_measure(&self, elem: usize, coords: &[f64], rule: &crate::fem::QuadratureRule) -> f64 {
        rule.points
            .iter()
            .zip(&rule.weights)
            .map(|(p, w)| linalg::det(self.dim, &self.jacobian(elem, p, coords)) * w)
            .sum()
    }

    /// Initial measure of every element.
    pub fn elem_measures(&self) -> Vec<f64> {
        let rule = gauss_rule(self.geom_degree + 2, self.dim);
        (0..self.elem_count())
            .map(|e| self.elem_measure(e, &self.node_coords, &rule))
            .collect()
    }

    /// Check that `det(grad_xi x) > 0` at all points of a `(k+2)^d` Gauss rule.
    pub fn check_valid(&self, coords: &[f64]) -> Result<()> {
        let rule = gauss_rule(self.geom_degree + 2, self.dim);
        for e in 0..self.elem_count() {
            for p in &rule.points {
                self.reference_jacobian(e, p, coords)?;
            }
        }
        Ok(())
    }

    /// Axis-aligned bounding box of the nodes.
    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let d = self.dim;
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for a in 0..self.node_count() {
            for i in 0..d {
                lo[i] = lo[i].min(self.node_coords[a * d + i]);
                hi[i] = hi[i].max(self.node_coords[a * d + i]);
            }
        }
        for i in d..3 {
            lo[i] = 0.0;
            hi[i] = 0.0;
        }
        (lo, hi)
    }

    /// Perimeter of the bounding box in 2D; total edge length of the box in 3D.
    pub fn bounding_box_perimeter(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        let sum: f64 = (0..self.dim).map(|i| hi[i] - lo[i]).sum();
        match self.dim {
            2 => 2.0 * sum,
            _ => 4.0 * sum,
        }
    }

    /// Global node indices on a boundary face.
    pub fn face_nodes(&self, elem: usize, face: usize) -> Vec<usize> {
        let nodes = self.elem_nodes(elem);
        face_local_nodes(self.dim, self.geom_degree, face)
            .into_iter()
            .map(|l| nodes[l])
            .collect()
    }

    /// Reference-space center of a face, in volume coordinates.
    pub fn face_center(&self, face: usize) -> Vec3 {
        let (axis, side) = reference_faces(self.dim)[face];
        let mut p = [0.0; 3];
        for (i, c) in p.iter_mut().enumerate().take(self.dim) {
            *c = if i == axis { side as f64 } else { 0.5 };
        }
        p
    }

    /// Serialize to the plain-text mesh format.
    pub fn to_text(&self) -> String {
        let d = self.dim;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{} {} {} {} {}",
            d,
            self.geom_degree,
            self.node_count(),
            self.elem_count(),
            self.bdry_faces.len()
        );
        for a in 0..self.node_count() {
            let row: Vec<String> = self.node(a).iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        for e in 0..self.elem_count() {
            let row: Vec<String> = self.elem_nodes(e).iter().map(|a| a.to_string()).collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        for f in &self.bdry_faces {
            let _ = writeln!(s, "{} {} {}", f.elem, f.face, f.tag);
        }
        s
    }

    /// Parse the plain-text mesh format written by [`Mesh::to_text`].
    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: &str| HydroError::InvalidInput(format!("mesh file: {msg}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
        let header: Vec<usize> = lines
            .next()
            .ok_or_else(|| bad("missing header"))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad("header must hold five integers")))
            .collect::<Result<_>>()?;
        let [dim, deg, n_nodes, n_elems, n_bdry] = header[..] else {
            return Err(bad("header must hold five integers"));
        };
        if !(2..=3).contains(&dim) || deg == 0 {
            return Err(bad("unsupported dimension or degree"));
        }
        let mut coords = Vec::with_capacity(n_nodes * dim);
        for i in 0..n_nodes {
            let line = lines.next().ok_or_else(|| bad(&format!("missing node row {i}")))?;
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| bad(&format!("node row {i}"))))
                .collect::<Result<_>>()?;
            if row.len() != dim {
                return Err(bad(&format!("node row {i} has {} entries", row.len())));
            }
            coords.extend(row);
        }
        let npe = (deg + 1).pow(dim as u32);
        let mut conn = Vec::with_capacity(n_elems * npe);
        for e in 0..n_elems {
            let line = lines.next().ok_or_else(|| bad(&format!("missing element row {e}")))?;
            let row: Vec<usize> = line
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| bad(&format!("element row {e}"))))
                .collect::<Result<_>>()?;
            if row.len() != npe {
                return Err(bad(&format!("element row {e} has {} entries, expected {npe}", row.len())));
            }
            conn.extend(row);
        }
        let mut faces = Vec::with_capacity(n_bdry);
        for b in 0..n_bdry {
            let line = lines.next().ok_or_else(|| bad(&format!("missing boundary row {b}")))?;
            let row: Vec<usize> = line
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| bad(&format!("boundary row {b}"))))
                .collect::<Result<_>>()?;
            let (elem, face, tag) = match row[..] {
                [e, f] => (e, f, 0),
                [e, f, t] => (e, f, t),
                _ => return Err(bad(&format!("boundary row {b}"))),
            };
            faces.push(BoundaryFace {
                elem,
                face,
                tag: tag as u32,
            });
        }
        if lines.next().is_some() {
            return Err(bad("trailing data"));
        }
        Mesh::new(dim, deg, coords, conn, faces)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Unit outward normal and area factor `|cof(J) N|` of a reference face.
pub fn physical_normal(dim: usize, jac: &Mat3, face: usize) -> (Vec3, f64) {
    let cof = linalg::cofactor(dim, jac);
    let n_ref = reference_normal(dim, face);
    let v = linalg::matvec(dim, &cof, &n_ref);
    let mag = linalg::norm(dim, &v);
    let mut n = [0.0; 3];
    if mag > 0.0 {
        for i in 0..dim {
            n[i] = v[i] / mag;
        }
    }
    (n, mag)
}

type BlockMap = Box<dyn Fn(f64, f64) -> [f64; 2]>;

/// A mapped block of `nx x ny` elements.
struct Block {
    nx: usize,
    ny: usize,
    map: BlockMap,
}

struct NodeMerger {
    tol: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
    coords: Vec<f64>,
}

impl NodeMerger {
    fn new(tol: f64) -> Self {
        Self {
            tol,
            cells: HashMap::new(),
            coords: Vec::new(),
        }
    }

    fn insert(&mut self, p: [f64; 2]) -> usize {
        let key = ((p[0] / self.tol).floor() as i64, (p[1] / self.tol).floor() as i64);
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(ids) = self.cells.get(&(key.0 + dx, key.1 + dy)) {
                    for &id in ids {
                        let q = &self.coords[2 * id..2 * id + 2];
                        if (q[0] - p[0]).abs() <= self.tol && (q[1] - p[1]).abs() <= self.tol {
                            return id;
                        }
                    }
                }
            }
        }
        let id = self.coords.len() / 2;
        self.coords.extend_from_slice(&p);
        self.cells.entry(key).or_default().push(id);
        id
    }
}

/// Build a 2D mesh from mapped blocks, merging coincident nodes and tagging
/// boundary faces with `tagger(face midpoint)`.
fn assemble_blocks(blocks: &[Block], degree: usize, scale: f64, tagger: &dyn Fn(&Vec3) -> u32) -> Result<Mesh> {
    let z = Basis1D::lobatto(degree).nodes;
    let n1 = degree + 1;
    let mut merger = NodeMerger::new(1e-10 * scale);
    let mut conn = Vec::new();
    for b in blocks {
        for ey in 0..b.ny {
            for ex in 0..b.nx {
                for j in 0..n1 {
                    for i in 0..n1 {
                        let s = (ex as f64 + z[i]) / b.nx as f64;
                        let t = (ey as f64 + z[j]) / b.ny as f64;
                        conn.push(merger.insert((b.map)(s, t)));
                    }
                }
            }
        }
    }
    let coords = merger.coords;
    let npe = n1 * n1;
    let n_elems = conn.len() / npe;

    // Faces are identified by their sorted corner nodes.
    let mut count: HashMap<(usize, usize), usize> = HashMap::new();
    let face_corners = |e: usize, f: usize| -> (usize, usize) {
        let local = face_local_nodes(2, degree, f);
        let (a, b) = (conn[e * npe + local[0]], conn[e * npe + local[local.len() - 1]]);
        (a.min(b), a.max(b))
    };
    for e in 0..n_elems {
        for f in 0..4 {
            *count.entry(face_corners(e, f)).or_default() += 1;
        }
    }
    let mut faces = Vec::new();
    for e in 0..n_elems {
        for f in 0..4 {
            match count[&face_corners(e, f)] {
                1 => faces.push(BoundaryFace { elem: e, face: f, tag: 0 }),
                2 => {}
                c => {
                    return Err(HydroError::InvalidInput(format!(
                        "non-conforming mesh: face shared by {c} elements"
                    )))
                }
            }
        }
    }
    let mut mesh = Mesh::new(2, degree, coords, conn, faces)?;
    let tags: Vec<u32> = mesh
        .bdry_faces
        .iter()
        .map(|f| tagger(&mesh.map_point(f.elem, &mesh.face_center(f.face), &mesh.node_coords)))
        .collect();
    for (f, t) in mesh.bdry_faces.iter_mut().zip(tags) {
        f.tag = t;
    }
    mesh.check_valid(&mesh.node_coords)
        .map_err(|e| HydroError::InvalidInput(format!("generated mesh is invalid: {e}")))?;
    Ok(mesh)
}

fn check_counts(pairs: &[(&str, usize)], degree: usize) -> Result<()> {
    for (name, n) in pairs {
        if *n == 0 {
            return Err(HydroError::InvalidInput(format!("{name} must be >= 1")));
        }
    }
    if degree == 0 {
        return Err(HydroError::InvalidInput("geometry degree must be >= 1".into()));
    }
    Ok(())
}

/// Axis-aligned `nx x ny` mesh of the box `[lo, hi]`.
pub fn make_cartesian(nx: usize, ny: usize, lo: [f64; 2], hi: [f64; 2], geom_degree: usize) -> Result<Mesh> {
    check_counts(&[("nx", nx), ("ny", ny)], geom_degree)?;
    if !(hi[0] > lo[0] && hi[1] > lo[1]) || !lo.iter().chain(&hi).all(|v| v.is_finite()) {
        return Err(HydroError::InvalidInput(format!("degenerate bounds {lo:?} - {hi:?}")));
    }
    let (w, h) = (hi[0] - lo[0], hi[1] - lo[1]);
    let block = Block {
        nx,
        ny,
        map: Box::new(move |s, t| [lo[0] + w * s, lo[1] + h * t]),
    };
    assemble_blocks(&[block], geom_degree, w.max(h), &|_| 0)
}

/// Axis-aligned hexahedral mesh of a 3D box.
pub fn make_box(n: [usize; 3], lo: [f64; 3], hi: [f64; 3], geom_degree: usize) -> Result<Mesh> {
    check_counts(&[("nx", n[0]), ("ny", n[1]), ("nz", n[2])], geom_degree)?;
    if (0..3).any(|i| !(hi[i] > lo[i])) {
        return Err(HydroError::InvalidInput(format!("degenerate bounds {lo:?} - {hi:?}")));
    }
    let k = geom_degree;
    let z = Basis1D::lobatto(k).nodes;
    // Global structured node grid with (n k + 1) points per direction.
    let pts: Vec<usize> = n.iter().map(|&m| m * k + 1).collect();
    let coord = |axis: usize, g: usize| -> f64 {
        let (e, l) = if g == pts[axis] - 1 { (n[axis] - 1, k) } else { (g / k, g % k) };
        lo[axis] + (hi[axis] - lo[axis]) * (e as f64 + z[l]) / n[axis] as f64
    };
    let mut coords = Vec::with_capacity(pts[0] * pts[1] * pts[2] * 3);
    for gz in 0..pts[2] {
        for gy in 0..pts[1] {
            for gx in 0..pts[0] {
                coords.extend_from_slice(&[coord(0, gx), coord(1, gy), coord(2, gz)]);
            }
        }
    }
    let id = |gx: usize, gy: usize, gz: usize| gx + pts[0] * (gy + pts[1] * gz);
    let mut conn = Vec::new();
    let mut faces = Vec::new();
    for ez in 0..n[2] {
        for ey in 0..n[1] {
            for ex in 0..n[0] {
                let elem = ex + n[0] * (ey + n[1] * ez);
                for lz in 0..=k {
                    for ly in 0..=k {
                        for lx in 0..=k {
                            conn.push(id(ex * k + lx, ey * k + ly, ez * k + lz));
                        }
                    }
                }
                let e = [ex, ey, ez];
                for (f, &(axis, side)) in reference_faces(3).iter().enumerate() {
                    if (side == 0 && e[axis] == 0) || (side == 1 && e[axis] == n[axis] - 1) {
                        faces.push(BoundaryFace { elem, face: f, tag: 0 });
                    }
                }
            }
        }
    }
    Mesh::new(3, k, coords, conn, faces)
}

/// Mapped mesh of the quadrilateral with counter-clockwise `corners`.
pub fn make_trapezoid(corners: [[f64; 2]; 4], nx: usize, ny: usize, geom_degree: usize) -> Result<Mesh> {
    check_counts(&[("nx", nx), ("ny", ny)], geom_degree)?;
    for i in 0..4 {
        let (a, b, c) = (corners[i], corners[(i + 1) % 4], corners[(i + 2) % 4]);
        let cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]);
        if !(cross > 0.0) {
            return Err(HydroError::InvalidInput(format!(
                "quadrilateral {corners:?} is not convex and counter-clockwise"
            )));
        }
    }
    let [p0, p1, p2, p3] = corners;
    let scale = corners
        .iter()
        .flat_map(|p| p.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-300);
    let block = Block {
        nx,
        ny,
        map: Box::new(move |s, t| {
            let w = [(1.0 - s) * (1.0 - t), s * (1.0 - t), s * t, (1.0 - s) * t];
            [
                w[0] * p0[0] + w[1] * p1[0] + w[2] * p2[0] + w[3] * p3[0],
                w[0] * p0[1] + w[1] * p1[1] + w[2] * p2[1] + w[3] * p3[1],
            ]
        }),
    };
    assemble_blocks(&[block], geom_degree, scale, &|_| 0)
}

/// Rotate by `quarter` quarter turns, exactly.
fn rot90(p: [f64; 2], quarter: usize) -> [f64; 2] {
    match quarter % 4 {
        0 => p,
        1 => [-p[1], p[0]],
        2 => [-p[0], -p[1]],
        _ => [p[1], -p[0]],
    }
}

/// All-quadrilateral disc of `radius` centered at the origin, built from a
/// central square and four mapped annular blocks.
///
/// `n_azi` is the number of elements around the circle (a multiple of 4) and
/// `n_rad` the number of element layers in each annular block.
pub fn make_disc(n_rad: usize, n_azi: usize, radius: f64, geom_degree: usize) -> Result<Mesh> {
    check_counts(&[("n_rad", n_rad)], geom_degree)?;
    if geom_degree < 2 {
        return Err(HydroError::InvalidInput(
            "disc meshes need geometry degree >= 2 to represent the curved wall".into(),
        ));
    }
    if n_azi < 4 || n_azi % 4 != 0 {
        return Err(HydroError::InvalidInput(format!("n_azi = {n_azi} must be a positive multiple of 4")));
    }
    if !(radius > 0.0) {
        return Err(HydroError::InvalidInput("radius must be positive".into()));
    }
    let m = n_azi / 4;
    let s = radius / (2.0 * 2f64.sqrt());
    let mut blocks = vec![Block {
        nx: m,
        ny: m,
        map: Box::new(move |u, w| [-s + 2.0 * s * u, -s + 2.0 * s * w]),
    }];
    for q in 0..4 {
        blocks.push(Block {
            nx: n_rad,
            ny: m,
            map: Box::new(move |u, w| {
                let inner = [s, -s + 2.0 * s * w];
                let theta = -PI / 4.0 + FRAC_PI_2 * w;
                let outer = [radius * theta.cos(), radius * theta.sin()];
                rot90(
                    [(1.0 - u) * inner[0] + u * outer[0], (1.0 - u) * inner[1] + u * outer[1]],
                    q,
                )
            }),
        });
    }
    assemble_blocks(&blocks, geom_degree, radius, &|_| 0)
}

/// Shape of the obstacle cut out of the unit square.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HoleShape {
    Circle { radius: f64 },
    /// Square of side `side`, rotated counter-clockwise by `angle_deg`.
    RotatedSquare { side: f64, angle_deg: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HoleParams {
    pub shape: HoleShape,
    pub center: [f64; 2],
    /// Elements along each of the four sides of the outer square.
    pub n_tangential: usize,
    /// Element layers between the hole and the outer square.
    pub n_radial: usize,
}

/// Unit square with a hole; hole faces carry tag 1, outer faces tag 0.
pub fn make_square_with_hole(params: HoleParams, geom_degree: usize) -> Result<Mesh> {
    check_counts(
        &[("n_tangential", params.n_tangential), ("n_radial", params.n_radial)],
        geom_degree,
    )?;
    let c = params.center;
    // Outer corners, counter-clockwise starting below-right of the center.
    let outer = [[1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.0, 0.0]];
    let inside = |p: [f64; 2]| p[0] > 0.0 && p[0] < 1.0 && p[1] > 0.0 && p[1] < 1.0;
    if !inside(c) {
        return Err(HydroError::InvalidInput("hole center outside the unit square".into()));
    }
    let wall_gap = c[0].min(1.0 - c[0]).min(c[1]).min(1.0 - c[1]);
    let hole_extent = match params.shape {
        HoleShape::Circle { radius } => {
            if !(radius > 0.0) || geom_degree < 2 {
                return Err(HydroError::InvalidInput(
                    "circular hole needs a positive radius and geometry degree >= 2".into(),
                ));
            }
            radius
        }
        HoleShape::RotatedSquare { side, .. } => {
            if !(side > 0.0) {
                return Err(HydroError::InvalidInput("hole side must be positive".into()));
            }
            side / 2f64.sqrt()
        }
    };
    let inner_corners: Option<Vec<[f64; 2]>> = match params.shape {
        HoleShape::RotatedSquare { side, angle_deg } => {
            let h = 0.5 * side;
            let (sa, ca) = angle_deg.to_radians().sin_cos();
            let local = [[h, -h], [h, h], [-h, h], [-h, -h]];
            let pts: Vec<[f64; 2]> = local
                .iter()
                .map(|p| [c[0] + ca * p[0] - sa * p[1], c[1] + sa * p[0] + ca * p[1]])
                .collect();
            if !pts.iter().all(|&p| inside(p)) {
                return Err(HydroError::InvalidInput("hole touches the outer boundary".into()));
            }
            Some(pts)
        }
        HoleShape::Circle { radius } => {
            if radius >= wall_gap {
                return Err(HydroError::InvalidInput("hole touches the outer boundary".into()));
            }
            None
        }
    };
    let angles: Vec<f64> = outer.iter().map(|p| (p[1] - c[1]).atan2(p[0] - c[0])).collect();
    let mut blocks = Vec::new();
    for q in 0..4 {
        let (o0, o1) = (outer[q], outer[(q + 1) % 4]);
        let inner: Box<dyn Fn(f64) -> [f64; 2]> = match (&params.shape, &inner_corners) {
            (HoleShape::Circle { radius }, _) => {
                let r = *radius;
                let a0 = angles[q];
                let mut a1 = angles[(q + 1) % 4];
                if a1 < a0 {
                    a1 += 2.0 * PI;
                }
                Box::new(move |w| {
                    let th = a0 + (a1 - a0) * w;
                    [c[0] + r * th.cos(), c[1] + r * th.sin()]
                })
            }
            (_, Some(pts)) => {
                let (i0, i1) = (pts[q], pts[(q + 1) % 4]);
                Box::new(move |w| [i0[0] + (i1[0] - i0[0]) * w, i0[1] + (i1[1] - i0[1]) * w])
            }
            _ => unreachable!(),
        };
        blocks.push(Block {
            nx: params.n_radial,
            ny: params.n_tangential,
            map: Box::new(move |u, w| {
                let a = inner(w);
                let b = [o0[0] + (o1[0] - o0[0]) * w, o0[1] + (o1[1] - o0[1]) * w];
                [(1.0 - u) * a[0] + u * b[0], (1.0 - u) * a[1] + u * b[1]]
            }),
        });
    }
    let threshold = 0.5 * (hole_extent + wall_gap);
    assemble_blocks(&blocks, geom_degree, 1.0, &move |p| {
        u32::from(((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt() < threshold)
    })
}
