//! Reference-element machinery on the unit cell `[0,1]^d`.
//!
//! Kinematic fields (position, velocity) live in continuous `Q_k` with
//! Gauss-Lobatto nodes; the specific internal energy lives in discontinuous
//! `Q_{k-1}` with Gauss-Legendre nodes. Local node numbering is lexicographic
//! with the first reference coordinate running fastest.
//!
//! Face numbering, counter-clockwise in 2D:
//! - face 0: `xi_1 = 0` (bottom)
//! - face 1: `xi_0 = 1` (right)
//! - face 2: `xi_1 = 1` (top)
//! - face 3: `xi_0 = 0` (left)
//!
//! In 3D: 0 `xi_2 = 0`, 1 `xi_1 = 0`, 2 `xi_0 = 1`, 3 `xi_1 = 1`, 4 `xi_0 = 0`, 5 `xi_2 = 1`.

use crate::error::{HydroError, Result};
use crate::linalg::Vec3;
use crate::mesh::Mesh;

/// Normal axis and side (0 or 1) of each reference face.
pub fn reference_faces(dim: usize) -> &'static [(usize, usize)] {
    match dim {
        2 => &[(1, 0), (0, 1), (1, 1), (0, 0)],
        3 => &[(2, 0), (1, 0), (0, 1), (1, 1), (0, 0), (2, 1)],
        _ => panic!("unsupported dimension {dim}"),
    }
}

/// Outward unit normal of a reference face.
pub fn reference_normal(dim: usize, face: usize) -> Vec3 {
    let (axis, side) = reference_faces(dim)[face];
    let mut n = [0.0; 3];
    n[axis] = if side == 1 { 1.0 } else { -1.0 };
    n
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    // Returns (P_n(x), P_n'(x)) on [-1, 1].
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let dp = if (x * x - 1.0).abs() < 1e-300 {
        0.5 * nf * (nf + 1.0) * x.powi(n as i32 + 1)
    } else {
        nf * (x * p1 - p0) / (x * x - 1.0)
    };
    (p1, dp)
}

/// Gauss-Legendre points and weights on `[0,1]`, ascending.
pub fn gauss_legendre_1d(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut pts = vec![0.0; n];
    let mut wts = vec![0.0; n];
    for i in 0..n {
        let mut x = -(std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        pts[i] = 0.5 * (x + 1.0);
        wts[i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    // Exact midpoint for odd counts keeps symmetric rules symmetric.
    if n % 2 == 1 {
        pts[n / 2] = 0.5;
    }
    (pts, wts)
}

/// Gauss-Lobatto points and weights on `[0,1]` (`n >= 2` points, endpoints included).
pub fn gauss_lobatto_1d(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2);
    let p = n - 1;
    let pf = p as f64;
    let mut pts = vec![0.0; n];
    let mut wts = vec![0.0; n];
    pts[0] = 0.0;
    pts[p] = 1.0;
    wts[0] = 1.0 / (pf * (pf + 1.0));
    wts[p] = wts[0];
    for i in 1..p {
        // Interior nodes are roots of P_p'.
        let mut x = -(std::f64::consts::PI * i as f64 / pf).cos();
        for _ in 0..100 {
            let (pv, dp) = legendre_with_derivative(p, x);
            // (1 - x^2) P'' = 2x P' - p(p+1) P
            let d2p = (2.0 * x * dp - pf * (pf + 1.0) * pv) / (1.0 - x * x);
            let dx = dp / d2p;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (pv, _) = legendre_with_derivative(p, x);
        pts[i] = 0.5 * (x + 1.0);
        wts[i] = 1.0 / (pf * (pf + 1.0) * pv * pv);
    }
    if n % 2 == 1 {
        pts[n / 2] = 0.5;
    }
    (pts, wts)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    /// Gauss-Lobatto nodes, endpoints included.
    ClosedLobatto,
    /// Gauss-Legendre nodes, interior only.
    OpenGauss,
}

/// One-dimensional nodal Lagrange basis on `[0,1]`.
#[derive(Clone, Debug)]
pub struct Basis1D {
    pub degree: usize,
    pub nodes: Vec<f64>,
    pub kind: NodeKind,
}

impl Basis1D {
    pub fn lobatto(degree: usize) -> Self {
        assert!(degree >= 1, "closed basis needs degree >= 1");
        Self {
            degree,
            nodes: gauss_lobatto_1d(degree + 1).0,
            kind: NodeKind::ClosedLobatto,
        }
    }

    pub fn gauss(degree: usize) -> Self {
        Self {
            degree,
            nodes: gauss_legendre_1d(degree + 1).0,
            kind: NodeKind::OpenGauss,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Values and first derivatives of every basis function at `x`.
    pub fn eval(&self, x: f64, vals: &mut [f64], ders: &mut [f64]) {
        let n = self.nodes.len();
        let z = &self.nodes;
        for i in 0..n {
            let mut v = 1.0;
            let mut dv = 0.0;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let inv = 1.0 / (z[i] - z[j]);
                // Product rule on the running product.
                dv = dv * (x - z[j]) * inv + v * inv;
                v *= (x - z[j]) * inv;
            }
            vals[i] = v;
            ders[i] = dv;
        }
    }
}

/// Tensor-product basis on `[0,1]^d`.
#[derive(Clone, Debug)]
pub struct TensorBasis {
    pub dim: usize,
    pub basis_1d: Basis1D,
}

/// Values and reference gradients of a [`TensorBasis`] at one point.
#[derive(Clone, Debug, Default)]
pub struct BasisEval {
    pub values: Vec<f64>,
    pub grads: Vec<Vec3>,
}

impl TensorBasis {
    pub fn new(dim: usize, basis_1d: Basis1D) -> Self {
        assert!((1..=3).contains(&dim));
        Self { dim, basis_1d }
    }

    pub fn len(&self) -> usize {
        self.basis_1d.len().pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn eval(&self, point: &[f64]) -> BasisEval {
        let n1 = self.basis_1d.len();
        let d = self.dim;
        let mut v1 = vec![[0.0; 3]; n1];
        let mut d1 = vec![[0.0; 3]; n1];
        let mut tv = vec![0.0; n1];
        let mut td = vec![0.0; n1];
        for axis in 0..d {
            self.basis_1d.eval(point[axis], &mut tv, &mut td);
            for i in 0..n1 {
                v1[i][axis] = tv[i];
                d1[i][axis] = td[i];
            }
        }
        let n = self.len();
        let mut out = BasisEval {
            values: vec![0.0; n],
            grads: vec![[0.0; 3]; n],
        };
        for idx in 0..n {
            let mut ijk = [0usize; 3];
            let mut r = idx;
            for c in ijk.iter_mut().take(d) {
                *c = r % n1;
                r /= n1;
            }
            let mut val = 1.0;
            for axis in 0..d {
                val *= v1[ijk[axis]][axis];
            }
            out.values[idx] = val;
            for g in 0..d {
                let mut prod = 1.0;
                for axis in 0..d {
                    prod *= if axis == g {
                        d1[ijk[axis]][axis]
                    } else {
                        v1[ijk[axis]][axis]
                    };
                }
                out.grads[idx][g] = prod;
            }
        }
        out
    }

    /// Reference coordinates of the nodes, in local numbering.
    pub fn node_points(&self) -> Vec<Vec3> {
        let n1 = self.basis_1d.len();
        (0..self.len())
            .map(|idx| {
                let mut p = [0.0; 3];
                let mut r = idx;
                for c in p.iter_mut().take(self.dim) {
                    *c = self.basis_1d.nodes[r % n1];
                    r /= n1;
                }
                p
            })
            .collect()
    }
}

/// Local indices of the closed-basis nodes lying on a reference face.
pub fn face_local_nodes(dim: usize, degree: usize, face: usize) -> Vec<usize> {
    let n1 = degree + 1;
    let (axis, side) = reference_faces(dim)[face];
    let fixed = if side == 1 { degree } else { 0 };
    (0..n1.pow(dim as u32))
        .filter(|&idx| (idx / n1.pow(axis as u32)) % n1 == fixed)
        .collect()
}

/// Quadrature rule on a reference cell or face.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub dim: usize,
    pub points: Vec<Vec3>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Tensor-product Gauss-Legendre rule with `n` points per direction, exact
/// for per-direction degree up to `2n - 1`.
pub fn gauss_rule(n: usize, dim: usize) -> QuadratureRule {
    assert!(n >= 1);
    let (p1, w1) = gauss_legendre_1d(n);
    let total = n.pow(dim as u32);
    let mut points = Vec::with_capacity(total);
    let mut weights = Vec::with_capacity(total);
    for idx in 0..total {
        let mut p = [0.0; 3];
        let mut w = 1.0;
        let mut r = idx;
        for c in p.iter_mut().take(dim) {
            *c = p1[r % n];
            w *= w1[r % n];
            r /= n;
        }
        points.push(p);
        weights.push(w);
    }
    QuadratureRule {
        dim,
        points,
        weights,
    }
}

/// Gauss rule on a reference face, expressed in volume reference coordinates.
pub fn face_rule(dim: usize, n: usize, face: usize) -> QuadratureRule {
    let (axis, side) = reference_faces(dim)[face];
    let sub = gauss_rule(n, dim - 1);
    let points = sub
        .points
        .iter()
        .map(|q| {
            let mut p = [0.0; 3];
            let mut k = 0;
            for (c, slot) in p.iter_mut().enumerate().take(dim) {
                if c == axis {
                    *slot = side as f64;
                } else {
                    *slot = q[k];
                    k += 1;
                }
            }
            p
        })
        .collect();
    QuadratureRule {
        dim,
        points,
        weights: sub.weights,
    }
}

/// Continuous `Q_k` space for kinematic fields. Global scalar dofs coincide
/// with mesh nodes; vector fields are stored node-major with `d` components.
#[derive(Clone, Debug)]
pub struct KinematicSpace {
    pub dim: usize,
    pub degree: usize,
    pub basis: TensorBasis,
    pub n_dofs: usize,
    pub n_local: usize,
    pub elem_dofs: Vec<usize>,
}

impl KinematicSpace {
    pub fn dofs(&self, elem: usize) -> &[usize] {
        &self.elem_dofs[elem * self.n_local..(elem + 1) * self.n_local]
    }

    pub fn n_elems(&self) -> usize {
        self.elem_dofs.len() / self.n_local
    }

    /// Length of an interleaved vector field.
    pub fn vector_len(&self) -> usize {
        self.n_dofs * self.dim
    }

    pub fn interpolate_scalar(&self, coeffs: &[f64], elem: usize, point: &[f64]) -> f64 {
        let ev = self.basis.eval(point);
        self.dofs(elem)
            .iter()
            .zip(&ev.values)
            .map(|(&a, w)| coeffs[a] * w)
            .sum()
    }

    pub fn interpolate_vector(&self, coeffs: &[f64], elem: usize, point: &[f64]) -> Vec3 {
        let ev = self.basis.eval(point);
        let d = self.dim;
        let mut out = [0.0; 3];
        for (&a, w) in self.dofs(elem).iter().zip(&ev.values) {
            for i in 0..d {
                out[i] += coeffs[a * d + i] * w;
            }
        }
        out
    }
}

/// Discontinuous `Q_{k-1}` space for the specific internal energy.
#[derive(Clone, Debug)]
pub struct ThermodynamicSpace {
    pub dim: usize,
    pub degree: usize,
    pub basis: TensorBasis,
    pub n_dofs: usize,
    pub n_local: usize,
}

impl ThermodynamicSpace {
    pub fn dofs(&self, elem: usize) -> std::ops::Range<usize> {
        elem * self.n_local..(elem + 1) * self.n_local
    }

    pub fn interpolate(&self, coeffs: &[f64], elem: usize, point: &[f64]) -> f64 {
        let ev = self.basis.eval(point);
        coeffs[self.dofs(elem)]
            .iter()
            .zip(&ev.values)
            .map(|(c, w)| c * w)
            .sum()
    }
}

/// Build the `Q_k - Q_{k-1}` pair on an isoparametric mesh (`k` must equal
/// the mesh geometry degree).
pub fn build_spaces(mesh: &Mesh, k: usize) -> Result<(KinematicSpace, ThermodynamicSpace)> {
    if k == 0 {
        return Err(HydroError::InvalidInput(
            "kinematic degree must be at least 1".into(),
        ));
    }
    if k != mesh.geom_degree {
        return Err(HydroError::InvalidInput(format!(
            "kinematic degree {k} differs from mesh geometry degree {}",
            mesh.geom_degree
        )));
    }
    let dim = mesh.dim;
    let kin_basis = TensorBasis::new(dim, Basis1D::lobatto(k));
    let n_local = kin_basis.len();
    let kin = KinematicSpace {
        dim,
        degree: k,
        basis: kin_basis,
        n_dofs: mesh.node_count(),
        n_local,
        elem_dofs: mesh.elem_conn.clone(),
    };
    let th_basis = TensorBasis::new(dim, Basis1D::gauss(k - 1));
    let th_local = th_basis.len();
    let thermo = ThermodynamicSpace {
        dim,
        degree: k - 1,
        basis: th_basis,
        n_dofs: mesh.elem_count() * th_local,
        n_local: th_local,
    };
    Ok((kin, thermo))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::make_cartesian;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn one_point_rule() {
        let r = gauss_rule(1, 1);
        assert_eq!(r.points[0][0], 0.5);
        assert_eq!(r.weights[0], 1.0);
    }

    #[test]
    fn two_point_rule_integrates_cubic() {
        let r = gauss_rule(2, 1);
        let s: f64 = r.points.iter().zip(&r.weights).map(|(p, w)| w * p[0].powi(3)).sum();
        assert_abs_diff_eq!(s, 0.25, epsilon = 1e-15);
    }

    #[test]
    fn nine_point_rule_weights_sum_to_one() {
        let r = gauss_rule(3, 2);
        assert_eq!(r.len(), 9);
        assert_abs_diff_eq!(r.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn quadrature_exact_for_monomials() {
        for n in 1..=8 {
            let r = gauss_rule(n, 1);
            for m in 0..=(2 * n - 1) {
                let s: f64 = r.points.iter().zip(&r.weights).map(|(p, w)| w * p[0].powi(m as i32)).sum();
                assert!((s - 1.0 / (m as f64 + 1.0)).abs() < 1e-14, "n={n} m={m}");
            }
        }
    }

    #[test]
    fn lobatto_weights_and_nodes() {
        for n in 2..=7 {
            let (p, w) = gauss_lobatto_1d(n);
            assert_eq!(p[0], 0.0);
            assert_eq!(p[n - 1], 1.0);
            assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
            // Exact up to degree 2n - 3.
            for m in 0..=(2 * n - 3) {
                let s: f64 = p.iter().zip(&w).map(|(x, wi)| wi * x.powi(m as i32)).sum();
                assert!((s - 1.0 / (m as f64 + 1.0)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn q1_center_values() {
        let b = TensorBasis::new(2, Basis1D::lobatto(1));
        let ev = b.eval(&[0.5, 0.5, 0.0]);
        for v in ev.values {
            assert_abs_diff_eq!(v, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn nodal_property() {
        for deg in 1..=4 {
            for basis in [
                TensorBasis::new(2, Basis1D::lobatto(deg)),
                TensorBasis::new(2, Basis1D::gauss(deg - 1)),
                TensorBasis::new(3, Basis1D::lobatto(deg)),
            ] {
                for (j, p) in basis.node_points().iter().enumerate() {
                    let ev = basis.eval(p);
                    for (i, v) in ev.values.iter().enumerate() {
                        let expect = if i == j { 1.0 } else { 0.0 };
                        assert!((v - expect).abs() < 1e-13);
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn partition_of_unity(x in 0.0f64..1.0, y in 0.0f64..1.0, z in 0.0f64..1.0, deg in 1usize..5) {
            for basis in [
                TensorBasis::new(2, Basis1D::lobatto(deg)),
                TensorBasis::new(3, Basis1D::gauss(deg - 1)),
            ] {
                let ev = basis.eval(&[x, y, z]);
                let s: f64 = ev.values.iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
                for g in 0..basis.dim {
                    let sg: f64 = ev.grads.iter().map(|gr| gr[g]).sum();
                    prop_assert!(sg.abs() < 1e-12);
                }
            }
        }

        #[test]
        fn q2_gradient_matches_finite_differences(x in 0.05f64..0.95, y in 0.05f64..0.95) {
            let basis = TensorBasis::new(2, Basis1D::lobatto(2));
            let ev = basis.eval(&[x, y, 0.0]);
            let h = 1e-6;
            for g in 0..2 {
                let mut pp = [x, y, 0.0];
                let mut pm = [x, y, 0.0];
                pp[g] += h;
                pm[g] -= h;
                let ep = basis.eval(&pp);
                let em = basis.eval(&pm);
                for i in 0..basis.len() {
                    let fd = (ep.values[i] - em.values[i]) / (2.0 * h);
                    prop_assert!((fd - ev.grads[i][g]).abs() < 1e-7);
                }
            }
        }
    }

    #[test]
    fn face_nodes_of_q2_square() {
        assert_eq!(face_local_nodes(2, 2, 0), vec![0, 1, 2]);
        assert_eq!(face_local_nodes(2, 2, 1), vec![2, 5, 8]);
        assert_eq!(face_local_nodes(2, 2, 2), vec![6, 7, 8]);
        assert_eq!(face_local_nodes(2, 2, 3), vec![0, 3, 6]);
        assert_eq!(face_local_nodes(3, 1, 5), vec![4, 5, 6, 7]);
    }

    #[test]
    fn space_sizes() {
        let m = make_cartesian(2, 2, [0.0, 0.0], [1.0, 1.0], 1).unwrap();
        let (kin, th) = build_spaces(&m, 1).unwrap();
        assert_eq!(kin.n_dofs, 9);
        assert_eq!(th.n_dofs, 4);
        let m2 = make_cartesian(2, 2, [0.0, 0.0], [1.0, 1.0], 2).unwrap();
        let (_, th2) = build_spaces(&m2, 2).unwrap();
        assert_eq!(th2.n_dofs, 16);
        let m1 = make_cartesian(1, 1, [0.0, 0.0], [1.0, 1.0], 1).unwrap();
        let (_, th1) = build_spaces(&m1, 1).unwrap();
        assert_eq!(th1.n_dofs, 1);
        assert!(build_spaces(&m1, 0).is_err());
        assert!(build_spaces(&m1, 2).is_err());
    }

    #[test]
    fn interpolation_reproduces_polynomials() {
        let m = make_cartesian(3, 2, [0.0, 0.0], [1.5, 1.0], 2).unwrap();
        let (kin, th) = build_spaces(&m, 2).unwrap();
        let x2: Vec<f64> = (0..kin.n_dofs).map(|a| m.node(a)[0].powi(2)).collect();
        let lin: Vec<f64> = (0..kin.n_dofs).map(|a| 2.0 * m.node(a)[0] - m.node(a)[1] + 0.5).collect();
        let c = vec![3.25; th.n_dofs];
        for elem in 0..m.elem_count() {
            for p in [[0.3, 0.7, 0.0], [0.91, 0.13, 0.0]] {
                let xp = m.map_point(elem, &p, &m.node_coords);
                let v = kin.interpolate_scalar(&x2, elem, &p);
                assert!((v - xp[0] * xp[0]).abs() < 1e-13);
                let l = kin.interpolate_scalar(&lin, elem, &p);
                assert!((l - (2.0 * xp[0] - xp[1] + 0.5)).abs() < 1e-13);
                assert!((th.interpolate(&c, elem, &p) - 3.25).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn continuity_across_shared_faces() {
        use rand::{Rng, SeedableRng};
        let m = make_cartesian(3, 3, [0.0, 0.0], [1.0, 1.0], 3).unwrap();
        let (kin, _) = build_spaces(&m, 3).unwrap();
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        let coeffs: Vec<f64> = (0..kin.vector_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // Element 0 right face meets element 1 left face.
        for _ in 0..10 {
            let s: f64 = rng.gen();
            let a = kin.interpolate_vector(&coeffs, 0, &[1.0, s, 0.0]);
            let b = kin.interpolate_vector(&coeffs, 1, &[0.0, s, 0.0]);
            for i in 0..2 {
                assert!((a[i] - b[i]).abs() < 1e-12);
            }
            // Element 0 top face meets element 3 bottom face.
            let a = kin.interpolate_vector(&coeffs, 0, &[s, 1.0, 0.0]);
            let b = kin.interpolate_vector(&coeffs, 3, &[s, 0.0, 0.0]);
            for i in 0..2 {
                assert!((a[i] - b[i]).abs() < 1e-12);
            }
        }
    }
}
