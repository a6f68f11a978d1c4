//! Mass matrices and the matrix-free force operator.
//!
//! The force matrix `F` couples kinematic dofs `(a, i)` and thermodynamic
//! dofs `l`:
//!
//! ```text
//! F[(a,i), l] = (sigma_ik, phi_l d_k w_a)_Omega
//!             - <(n.sigma.n) n_i, w_a phi_l>_Gamma
//!             + <beta rho c_s (v.n), w_a n_i phi_l>_Gamma
//! ```
//!
//! with `sigma = -p I + sigma_art`. It is never stored: a force evaluation
//! caches the stress `sigma J^{-T} det(J) w` at every volume point and the
//! scalar wall coefficient at every boundary point, from which both `F g` and
//! `F^T u` follow.

use rayon::prelude::*;

use crate::error::{HydroError, Result};
use crate::fem::{build_spaces, face_local_nodes, face_rule, gauss_rule, KinematicSpace, ThermodynamicSpace};
use crate::linalg::{self, CsrMatrix, Mat3, Preconditioner, SolveStats, Vec3};
use crate::mesh::{physical_normal, Mesh};
use crate::physics::{viscosity_coefficient, IdealGas, ViscositySettings};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElemKind {
    Tensor,
    Simplex,
}

/// Inverse-inequality constant used to scale the wall penalty.
pub fn penalty_ci(k: usize, d: usize, kind: ElemKind) -> f64 {
    let (k, d) = (k as f64, d as f64);
    match kind {
        ElemKind::Tensor => (k + 1.0) * (k + 1.0),
        ElemKind::Simplex => (k + 1.0) * (k + d) / d,
    }
}

/// Default wall penalty `beta = 20 C_I`.
pub fn default_beta(k: usize, d: usize) -> f64 {
    20.0 * penalty_ci(k, d, ElemKind::Tensor)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BcMode {
    /// Nitsche-type weak slip walls on every boundary face.
    Weak,
    /// Normal velocity components eliminated at nodes of axis-aligned walls.
    StrongAxisAligned,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BcSettings {
    pub mode: BcMode,
    pub beta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MassPreconditioner {
    Jacobi,
    /// Inverse of the `d x d` block of each node.
    NodalBlock,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscretizationOptions {
    pub order: usize,
    /// Gauss points per direction; `None` means `order + 2`.
    pub quad_pts: Option<usize>,
    pub gas: IdealGas,
    pub visc: ViscositySettings,
    pub bc: BcSettings,
    pub precond: MassPreconditioner,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
}

impl DiscretizationOptions {
    pub fn new(order: usize, dim: usize) -> Self {
        Self {
            order,
            quad_pts: None,
            gas: IdealGas::default(),
            visc: ViscositySettings::default(),
            bc: BcSettings {
                mode: BcMode::Weak,
                beta: default_beta(order, dim),
            },
            precond: MassPreconditioner::NodalBlock,
            cg_tol: 1e-12,
            cg_max_iter: 1000,
        }
    }
}

/// Basis values and reference gradients at a set of quadrature points.
#[derive(Clone, Debug)]
pub struct BasisTable {
    pub points: Vec<Vec3>,
    pub weights: Vec<f64>,
    /// `kin_vals[q * n_kin + a]`
    pub kin_vals: Vec<f64>,
    pub kin_grads: Vec<Vec3>,
    /// `th_vals[q * n_th + l]`
    pub th_vals: Vec<f64>,
}

impl BasisTable {
    fn new(kin: &KinematicSpace, thermo: &ThermodynamicSpace, points: Vec<Vec3>, weights: Vec<f64>) -> Self {
        let mut kin_vals = Vec::new();
        let mut kin_grads = Vec::new();
        let mut th_vals = Vec::new();
        for p in &points {
            let ev = kin.basis.eval(p);
            kin_vals.extend(ev.values);
            kin_grads.extend(ev.grads);
            th_vals.extend(thermo.basis.eval(p).values);
        }
        Self {
            points,
            weights,
            kin_vals,
            kin_grads,
            th_vals,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Quantities frozen at initialization.
#[derive(Clone, Debug)]
pub struct QuadData {
    /// Volume points per element.
    pub n_qp: usize,
    /// `rho0 det(J0) w` at `elem * n_qp + q`.
    pub rho0_detj0_w: Vec<f64>,
    pub rho0_detj0: Vec<f64>,
    pub jac0_inv: Vec<Mat3>,
    /// Initial length scale `vol^(1/d) / k` per element.
    pub l0: Vec<f64>,
    /// Boundary points per boundary face.
    pub n_fqp: usize,
    pub face_n0: Vec<Vec3>,
    pub face_surf0_w: Vec<f64>,
    pub face_j_box: Vec<f64>,
    pub face_alpha0: Vec<f64>,
    pub face_rho0_detj0: Vec<f64>,
    pub face_jac0_inv: Vec<Mat3>,
    pub rho_max: f64,
    /// Bounding-box perimeter of the initial domain.
    pub perimeter: f64,
    pub beta: f64,
}

impl QuadData {
    pub fn total_mass(&self) -> f64 {
        self.rho0_detj0_w.iter().sum()
    }
}

/// Kinematic mass matrix with a prepared PCG solver.
#[derive(Clone, Debug)]
pub struct KinematicMassMatrix {
    /// Operator used in solves (volume + wall penalty, constraints eliminated).
    pub matrix: CsrMatrix,
    /// `(rho w_a, w_b delta_ij)` block.
    pub volume: CsrMatrix,
    /// `<alpha0 rho_max L w_a n0_i, w_b n0_j>` block on the initial walls.
    pub penalty: CsrMatrix,
    precond: Preconditioner,
    constrained: Vec<usize>,
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl KinematicMassMatrix {
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        self.solve_with_stats(rhs).map(|(x, _)| x)
    }

    pub fn solve_with_stats(&self, rhs: &[f64]) -> Result<(Vec<f64>, SolveStats)> {
        let mut b = rhs.to_vec();
        for &c in &self.constrained {
            b[c] = 0.0;
        }
        linalg::pcg(&self.matrix, &b, &self.precond, self.rel_tol, self.max_iter)
    }

    /// Unconstrained `M_V x` (volume plus penalty block).
    pub fn full_mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.volume.mul_vec(x);
        for (yi, pi) in y.iter_mut().zip(self.penalty.mul_vec(x)) {
            *yi += pi;
        }
        y
    }

    pub fn constrained_dofs(&self) -> &[usize] {
        &self.constrained
    }
}

/// Block-diagonal thermodynamic mass matrix.
#[derive(Clone, Debug)]
pub struct ThermoMassMatrix {
    pub n_local: usize,
    /// Dense row-major blocks, one per element.
    pub blocks: Vec<f64>,
    chol: Vec<f64>,
}

impl ThermoMassMatrix {
    fn new(n_local: usize, blocks: Vec<f64>) -> Result<Self> {
        let nn = n_local * n_local;
        let mut chol = blocks.clone();
        for (e, l) in chol.chunks_mut(nn).enumerate() {
            cholesky_in_place(n_local, l).map_err(|_| {
                HydroError::Numerical(format!("thermodynamic mass block of element {e} is not SPD"))
            })?;
        }
        Ok(Self { n_local, blocks, chol })
    }

    pub fn n_elems(&self) -> usize {
        self.blocks.len() / (self.n_local * self.n_local)
    }

    pub fn block(&self, elem: usize) -> &[f64] {
        let nn = self.n_local * self.n_local;
        &self.blocks[elem * nn..(elem + 1) * nn]
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n_local;
        let mut y = vec![0.0; x.len()];
        for e in 0..self.n_elems() {
            let b = self.block(e);
            for i in 0..n {
                y[e * n + i] = (0..n).map(|j| b[i * n + j] * x[e * n + j]).sum();
            }
        }
        y
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.n_local;
        let nn = n * n;
        let mut x = rhs.to_vec();
        x.par_chunks_mut(n)
            .zip(self.chol.par_chunks(nn))
            .for_each(|(xe, l)| cholesky_solve(n, l, xe));
        x
    }

    /// Column sums `sum_m M[m, l]`.
    pub fn column_sums(&self) -> Vec<f64> {
        let n = self.n_local;
        let mut s = vec![0.0; self.n_elems() * n];
        for e in 0..self.n_elems() {
            let b = self.block(e);
            for l in 0..n {
                s[e * n + l] = (0..n).map(|m| b[m * n + l]).sum();
            }
        }
        s
    }
}

fn cholesky_in_place(n: usize, a: &mut [f64]) -> std::result::Result<(), ()> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) {
            return Err(());
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
        for k in j + 1..n {
            a[j * n + k] = 0.0;
        }
    }
    Ok(())
}

fn cholesky_solve(n: usize, l: &[f64], x: &mut [f64]) {
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s -= l[i * n + k] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
}

/// Output of one force evaluation.
#[derive(Clone, Debug)]
pub struct ForceResult {
    /// `-F 1`.
    pub momentum_rhs: Vec<f64>,
    /// `sigma J^{-T} det(J) w` per volume point.
    vol_stress: Vec<Mat3>,
    /// Current unit normal and `[-(n.sigma.n) + beta rho c_s (v.n)] dS` per
    /// boundary point (empty in strong mode).
    face_coef: Vec<(Vec3, f64)>,
    /// `min_q l / (c_s + mu / (rho l))`; infinite without any wave speed.
    pub dt_est: f64,
    pub max_mu: f64,
    pub min_detj: f64,
}

/// Space pair, frozen data, mass matrices and material models of a problem.
#[derive(Clone, Debug)]
pub struct Discretization {
    pub mesh: Mesh,
    pub kin: KinematicSpace,
    pub thermo: ThermodynamicSpace,
    pub opts: DiscretizationOptions,
    pub vol_table: BasisTable,
    /// One table per reference face.
    pub face_tables: Vec<BasisTable>,
    /// Boundary faces carrying wall terms (all of them by default).
    pub wall: Vec<bool>,
    pub quad: QuadData,
    pub mass_v: KinematicMassMatrix,
    pub mass_e: ThermoMassMatrix,
    /// Initial density at the mesh nodes, for point sampling.
    pub rho0_nodes: Vec<f64>,
}

struct ElemForce {
    stress: Vec<Mat3>,
    dt: f64,
    max_mu: f64,
    min_detj: f64,
}

impl Discretization {
    /// Build spaces, frozen quadrature data and both mass matrices.
    /// `rho0` gives the initial density at a point of the initial domain.
    pub fn new(mesh: Mesh, opts: DiscretizationOptions, rho0: &dyn Fn(&Vec3) -> f64) -> Result<Self> {
        opts.visc.validate()?;
        if !(opts.bc.beta >= 0.0) || !opts.bc.beta.is_finite() {
            return Err(HydroError::InvalidInput("penalty beta must be >= 0".into()));
        }
        let (kin, thermo) = build_spaces(&mesh, opts.order)?;
        let nq = opts.quad_pts.unwrap_or(opts.order + 2);
        if nq == 0 {
            return Err(HydroError::InvalidInput("quadrature needs at least one point".into()));
        }
        let d = mesh.dim;
        let vr = gauss_rule(nq, d);
        let vol_table = BasisTable::new(&kin, &thermo, vr.points, vr.weights);
        let n_faces = crate::fem::reference_faces(d).len();
        let face_tables = (0..n_faces)
            .map(|f| {
                let r = face_rule(d, nq, f);
                BasisTable::new(&kin, &thermo, r.points, r.weights)
            })
            .collect();
        let wall = vec![true; mesh.bdry_faces.len()];
        let rho0_nodes = (0..mesh.node_count())
            .map(|a| {
                let mut p = [0.0; 3];
                p[..d].copy_from_slice(mesh.node(a));
                rho0(&p)
            })
            .collect();
        let mut disc = Self {
            rho0_nodes,
            mesh,
            kin,
            thermo,
            opts,
            vol_table,
            face_tables,
            wall,
            quad: QuadData {
                n_qp: 0,
                rho0_detj0_w: vec![],
                rho0_detj0: vec![],
                jac0_inv: vec![],
                l0: vec![],
                n_fqp: 0,
                face_n0: vec![],
                face_surf0_w: vec![],
                face_j_box: vec![],
                face_alpha0: vec![],
                face_rho0_detj0: vec![],
                face_jac0_inv: vec![],
                rho_max: 0.0,
                perimeter: 0.0,
                beta: opts.bc.beta,
            },
            mass_v: KinematicMassMatrix {
                matrix: CsrMatrix::from_pattern(&[]),
                volume: CsrMatrix::from_pattern(&[]),
                penalty: CsrMatrix::from_pattern(&[]),
                precond: Preconditioner::Jacobi(vec![]),
                constrained: vec![],
                rel_tol: opts.cg_tol,
                max_iter: opts.cg_max_iter,
            },
            mass_e: ThermoMassMatrix {
                n_local: 1,
                blocks: vec![],
                chol: vec![],
            },
        };
        disc.quad = disc.init_quad_data(rho0)?;
        disc.mass_v = disc.assemble_mass_kinematic()?;
        disc.mass_e = disc.assemble_mass_thermo()?;
        Ok(disc)
    }

    pub fn dim(&self) -> usize {
        self.mesh.dim
    }

    pub fn weak_walls(&self) -> bool {
        self.opts.bc.mode == BcMode::Weak
    }

    /// Copy the `d` coordinates of every local node of `elem` from `x`.
    fn gather_vec(&self, x: &[f64], elem: usize, out: &mut Vec<f64>) {
        let d = self.dim();
        out.clear();
        for &a in self.kin.dofs(elem) {
            out.extend_from_slice(&x[a * d..a * d + d]);
        }
    }

    fn ref_grad(&self, local: &[f64], grads: &[Vec3]) -> Mat3 {
        let d = self.dim();
        let mut m = linalg::ZERO;
        for (a, g) in grads.iter().enumerate() {
            for i in 0..d {
                let xa = local[a * d + i];
                for j in 0..d {
                    m[i][j] += xa * g[j];
                }
            }
        }
        m
    }

    fn local_value(&self, local: &[f64], vals: &[f64]) -> Vec3 {
        let d = self.dim();
        let mut p = [0.0; 3];
        for (a, w) in vals.iter().enumerate() {
            for i in 0..d {
                p[i] += local[a * d + i] * w;
            }
        }
        p
    }

    fn init_quad_data(&self, rho0: &dyn Fn(&Vec3) -> f64) -> Result<QuadData> {
        let d = self.dim();
        let k = self.opts.order;
        let nk = self.kin.n_local;
        let nq = self.vol_table.len();
        let n_elems = self.mesh.elem_count();
        let x0 = &self.mesh.node_coords;
        let mut q = QuadData {
            n_qp: nq,
            rho0_detj0_w: Vec::with_capacity(n_elems * nq),
            rho0_detj0: Vec::with_capacity(n_elems * nq),
            jac0_inv: Vec::with_capacity(n_elems * nq),
            l0: Vec::with_capacity(n_elems),
            n_fqp: 0,
            face_n0: vec![],
            face_surf0_w: vec![],
            face_j_box: vec![],
            face_alpha0: vec![],
            face_rho0_detj0: vec![],
            face_jac0_inv: vec![],
            rho_max: 0.0,
            perimeter: self.mesh.bounding_box_perimeter(),
            beta: self.opts.bc.beta,
        };
        let mut xe = Vec::new();
        let t = &self.vol_table;
        for e in 0..n_elems {
            self.gather_vec(x0, e, &mut xe);
            let mut vol = 0.0;
            for iq in 0..nq {
                let jac = self.ref_grad(&xe, &t.kin_grads[iq * nk..(iq + 1) * nk]);
                let det = linalg::det(d, &jac);
                if !(det > 0.0) {
                    return Err(HydroError::Tangled { elem: e, det });
                }
                let xp = self.local_value(&xe, &t.kin_vals[iq * nk..(iq + 1) * nk]);
                let r = rho0(&xp);
                if !(r > 0.0) || !r.is_finite() {
                    return Err(HydroError::InvalidInput(format!("initial density {r} at {xp:?}")));
                }
                q.rho_max = q.rho_max.max(r);
                q.rho0_detj0.push(r * det);
                q.rho0_detj0_w.push(r * det * t.weights[iq]);
                q.jac0_inv.push(linalg::inverse(d, &jac).expect("positive determinant"));
                vol += det * t.weights[iq];
            }
            q.l0.push(vol.powf(1.0 / d as f64) / k as f64);
        }
        if let Some(ft) = self.face_tables.first() {
            q.n_fqp = ft.len();
        }
        for bf in &self.mesh.bdry_faces {
            let ft = &self.face_tables[bf.face];
            self.gather_vec(x0, bf.elem, &mut xe);
            for iq in 0..ft.len() {
                let jac = self.ref_grad(&xe, &ft.kin_grads[iq * nk..(iq + 1) * nk]);
                let det = linalg::det(d, &jac);
                if !(det > 0.0) {
                    return Err(HydroError::Tangled { elem: bf.elem, det });
                }
                let (n0, area) = physical_normal(d, &jac, bf.face);
                if !(area > 0.0) {
                    return Err(HydroError::DegenerateFace {
                        elem: bf.elem,
                        face: bf.face,
                    });
                }
                let xp = self.local_value(&xe, &ft.kin_vals[iq * nk..(iq + 1) * nk]);
                q.face_n0.push(n0);
                q.face_surf0_w.push(area * ft.weights[iq]);
                q.face_j_box.push(det);
                q.face_alpha0.push(q.beta * q.perimeter / det.powf(1.0 / d as f64));
                q.face_rho0_detj0.push(rho0(&xp) * det);
                q.face_jac0_inv.push(linalg::inverse(d, &jac).expect("positive determinant"));
            }
        }
        Ok(q)
    }

    fn vector_pattern(&self) -> Vec<Vec<usize>> {
        let d = self.dim();
        let n = self.kin.n_dofs;
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for e in 0..self.kin.n_elems() {
            let dofs = self.kin.dofs(e);
            for &a in dofs {
                adj[a].extend_from_slice(dofs);
            }
        }
        let mut pattern = Vec::with_capacity(n * d);
        for row in adj.iter_mut() {
            row.sort_unstable();
            row.dedup();
            let cols: Vec<usize> = row.iter().flat_map(|&b| (0..d).map(move |j| b * d + j)).collect();
            for _ in 0..d {
                pattern.push(cols.clone());
            }
        }
        pattern
    }

    /// Volume block from a measure `rho det(J) w` per volume point.
    fn assemble_volume_block(&self, measure: &[f64]) -> CsrMatrix {
        let d = self.dim();
        let nk = self.kin.n_local;
        let nq = self.vol_table.len();
        let mut m = CsrMatrix::from_pattern(&self.vector_pattern());
        let mut local = vec![0.0; nk * nk];
        for e in 0..self.kin.n_elems() {
            local.iter_mut().for_each(|v| *v = 0.0);
            for iq in 0..nq {
                let w = measure[e * nq + iq];
                let vals = &self.vol_table.kin_vals[iq * nk..(iq + 1) * nk];
                for a in 0..nk {
                    for b in 0..nk {
                        local[a * nk + b] += w * vals[a] * vals[b];
                    }
                }
            }
            let dofs = self.kin.dofs(e);
            for a in 0..nk {
                for b in 0..nk {
                    for i in 0..d {
                        m.add(dofs[a] * d + i, dofs[b] * d + i, local[a * nk + b]);
                    }
                }
            }
        }
        m
    }

    /// Wall penalty block on the initial configuration, recomputed from the
    /// initial mesh geometry.
    fn assemble_penalty_block(&self) -> Result<CsrMatrix> {
        let d = self.dim();
        let nk = self.kin.n_local;
        let mut m = CsrMatrix::from_pattern(&self.vector_pattern());
        if !self.weak_walls() {
            return Ok(m);
        }
        let scale = self.quad.rho_max * self.quad.perimeter;
        for (b, bf) in self.mesh.bdry_faces.iter().enumerate() {
            if !self.wall[b] {
                continue;
            }
            let ft = &self.face_tables[bf.face];
            let local_nodes = face_local_nodes(d, self.opts.order, bf.face);
            let dofs = self.kin.dofs(bf.elem);
            for iq in 0..ft.len() {
                let fr = self.mesh.face_frame(bf.elem, bf.face, &ft.points[iq], ft.weights[iq], &self.mesh.node_coords)?;
                let jbox = linalg::det(d, &self.mesh.jacobian(bf.elem, &ft.points[iq], &self.mesh.node_coords));
                let alpha0 = self.quad.beta * self.quad.perimeter / jbox.powf(1.0 / d as f64);
                let c = alpha0 * scale * fr.surf_weight;
                let vals = &ft.kin_vals[iq * nk..(iq + 1) * nk];
                let n = fr.normal;
                for &la in &local_nodes {
                    for &lb in &local_nodes {
                        let w = c * vals[la] * vals[lb];
                        for i in 0..d {
                            for j in 0..d {
                                m.add(dofs[la] * d + i, dofs[lb] * d + j, w * n[i] * n[j]);
                            }
                        }
                    }
                }
            }
        }
        Ok(m)
    }

    /// Vector dofs fixed to zero in strong mode.
    fn strong_constraints(&self) -> Result<Vec<usize>> {
        let d = self.dim();
        let node_pts = self.kin.basis.node_points();
        let mut out = Vec::new();
        for bf in &self.mesh.bdry_faces {
            let local_nodes = face_local_nodes(d, self.opts.order, bf.face);
            let mut axis = None;
            for &l in &local_nodes {
                let fr = self.mesh.face_frame(bf.elem, bf.face, &node_pts[l], 1.0, &self.mesh.node_coords)?;
                let ax = (0..d).find(|&i| (fr.normal[i].abs() - 1.0).abs() < 1e-12);
                match (ax, axis) {
                    (Some(a), None) => axis = Some(a),
                    (Some(a), Some(b)) if a == b => {}
                    _ => {
                        return Err(HydroError::InvalidInput(format!(
                            "strong wall mode needs axis-aligned walls; face {} of element {} is not",
                            bf.face, bf.elem
                        )))
                    }
                }
            }
            let axis = axis.expect("faces have nodes");
            let dofs = self.kin.dofs(bf.elem);
            out.extend(local_nodes.iter().map(|&l| dofs[l] * d + axis));
        }
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    /// Kinematic mass matrix from the frozen quadrature data.
    pub fn assemble_mass_kinematic(&self) -> Result<KinematicMassMatrix> {
        let volume = self.assemble_volume_block(&self.quad.rho0_detj0_w);
        self.finish_mass_kinematic(volume)
    }

    fn finish_mass_kinematic(&self, volume: CsrMatrix) -> Result<KinematicMassMatrix> {
        let penalty = self.assemble_penalty_block()?;
        let mut matrix = volume.clone();
        for (v, p) in matrix.vals.iter_mut().zip(&penalty.vals) {
            *v += p;
        }
        let constrained = match self.opts.bc.mode {
            BcMode::Weak => Vec::new(),
            BcMode::StrongAxisAligned => self.strong_constraints()?,
        };
        for &c in &constrained {
            matrix.eliminate(c);
        }
        let precond = match self.opts.precond {
            MassPreconditioner::Jacobi => Preconditioner::jacobi(&matrix),
            MassPreconditioner::NodalBlock => Preconditioner::block(&matrix, self.dim())?,
        };
        Ok(KinematicMassMatrix {
            matrix,
            volume,
            penalty,
            precond,
            constrained,
            rel_tol: self.opts.cg_tol,
            max_iter: self.opts.cg_max_iter,
        })
    }

    fn thermo_blocks(&self, measure: &[f64]) -> Vec<f64> {
        let nt = self.thermo.n_local;
        let nq = self.vol_table.len();
        let mut blocks = vec![0.0; self.mesh.elem_count() * nt * nt];
        for (e, blk) in blocks.chunks_mut(nt * nt).enumerate() {
            for iq in 0..nq {
                let w = measure[e * nq + iq];
                let phi = &self.vol_table.th_vals[iq * nt..(iq + 1) * nt];
                for m in 0..nt {
                    for l in 0..nt {
                        blk[m * nt + l] += w * phi[m] * phi[l];
                    }
                }
            }
        }
        blocks
    }

    pub fn assemble_mass_thermo(&self) -> Result<ThermoMassMatrix> {
        ThermoMassMatrix::new(self.thermo.n_local, self.thermo_blocks(&self.quad.rho0_detj0_w))
    }

    /// Current density `rho0 det(J0) / det(J)` times `det(J) w` at every
    /// volume point of the configuration `x`.
    fn current_measure(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        let nk = self.kin.n_local;
        let nq = self.vol_table.len();
        let mut out = Vec::with_capacity(self.mesh.elem_count() * nq);
        let mut xe = Vec::new();
        for e in 0..self.mesh.elem_count() {
            self.gather_vec(x, e, &mut xe);
            for iq in 0..nq {
                let det = linalg::det(d, &self.ref_grad(&xe, &self.vol_table.kin_grads[iq * nk..(iq + 1) * nk]));
                if !(det > 0.0) {
                    return Err(HydroError::Tangled { elem: e, det });
                }
                let rho = self.quad.rho0_detj0[e * nq + iq] / det;
                out.push(rho * det * self.vol_table.weights[iq]);
            }
        }
        Ok(out)
    }

    /// Reassemble `M_V` on the configuration `x` using the current density
    /// and Jacobians.
    pub fn assemble_mass_kinematic_current(&self, x: &[f64]) -> Result<KinematicMassMatrix> {
        let volume = self.assemble_volume_block(&self.current_measure(x)?);
        self.finish_mass_kinematic(volume)
    }

    pub fn assemble_mass_thermo_current(&self, x: &[f64]) -> Result<ThermoMassMatrix> {
        ThermoMassMatrix::new(self.thermo.n_local, self.thermo_blocks(&self.current_measure(x)?))
    }

    pub fn solve_mass_kinematic(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        self.mass_v.solve(rhs)
    }

    pub fn solve_mass_thermo(&self, rhs: &[f64]) -> Vec<f64> {
        self.mass_e.solve(rhs)
    }

    /// Zero the constrained velocity components (strong mode only).
    pub fn apply_constraints(&self, v: &mut [f64]) {
        for &c in self.mass_v.constrained_dofs() {
            v[c] = 0.0;
        }
    }

    /// Check `det(J) > 0` at every volume quadrature point of `x`.
    pub fn check_untangled(&self, x: &[f64]) -> Result<()> {
        let d = self.dim();
        let nk = self.kin.n_local;
        let nq = self.vol_table.len();
        let bad: Option<(usize, f64)> = (0..self.mesh.elem_count())
            .into_par_iter()
            .filter_map(|el| {
                let mut xe = Vec::with_capacity(nk * d);
                self.gather_vec(x, el, &mut xe);
                (0..nq)
                    .map(|iq| linalg::det(d, &self.ref_grad(&xe, &self.vol_table.kin_grads[iq * nk..(iq + 1) * nk])))
                    .find(|det| !(*det > 0.0))
                    .map(|det| (el, det))
            })
            .min_by(|a, b| a.0.cmp(&b.0));
        if let Some((elem, det)) = bad {
            return Err(HydroError::Tangled { elem, det });
        }
        // Wall terms evaluate the Jacobian at face points too, which a curved
        // element can invert while every volume point is still fine.
        let mut xe = Vec::with_capacity(nk * d);
        for (b, bf) in self.mesh.bdry_faces.iter().enumerate() {
            if !self.wall[b] {
                continue;
            }
            let ft = &self.face_tables[bf.face];
            self.gather_vec(x, bf.elem, &mut xe);
            for iq in 0..ft.len() {
                let det = linalg::det(d, &self.ref_grad(&xe, &ft.kin_grads[iq * nk..(iq + 1) * nk]));
                if !(det > 0.0) {
                    return Err(HydroError::Tangled { elem: bf.elem, det });
                }
            }
        }
        Ok(())
    }

    /// Evaluate stresses and wall terms on the state `(x, v, e)`.
    pub fn evaluate_force(&self, x: &[f64], v: &[f64], e: &[f64]) -> Result<ForceResult> {
        let n_elems = self.mesh.elem_count();
        let elem_out: Vec<Result<ElemForce>> = (0..n_elems)
            .into_par_iter()
            .map(|el| self.element_force(el, x, v, e))
            .collect();
        let nq = self.vol_table.len();
        let mut vol_stress = Vec::with_capacity(n_elems * nq);
        let mut dt_est = f64::INFINITY;
        let mut max_mu = 0.0f64;
        let mut min_detj = f64::INFINITY;
        for r in elem_out {
            let r = r?;
            vol_stress.extend(r.stress);
            dt_est = dt_est.min(r.dt);
            max_mu = max_mu.max(r.max_mu);
            min_detj = min_detj.min(r.min_detj);
        }
        let face_coef = if self.weak_walls() {
            let faces: Vec<Result<Vec<(Vec3, f64)>>> = (0..self.mesh.bdry_faces.len())
                .into_par_iter()
                .map(|b| self.face_force(b, x, v, e))
                .collect();
            let mut out = Vec::with_capacity(self.mesh.bdry_faces.len() * self.quad.n_fqp);
            for f in faces {
                out.extend(f?);
            }
            out
        } else {
            Vec::new()
        };
        let mut force = ForceResult {
            momentum_rhs: Vec::new(),
            vol_stress,
            face_coef,
            dt_est,
            max_mu,
            min_detj,
        };
        let mut rhs = self.apply_force_impl(&force, None);
        rhs.iter_mut().for_each(|r| *r = -*r);
        force.momentum_rhs = rhs;
        Ok(force)
    }

    fn element_force(&self, el: usize, x: &[f64], v: &[f64], e: &[f64]) -> Result<ElemForce> {
        let d = self.dim();
        let nk = self.kin.n_local;
        let nt = self.thermo.n_local;
        let nq = self.vol_table.len();
        let k = self.opts.order as f64;
        let gas = &self.opts.gas;
        let t = &self.vol_table;
        let mut xe = Vec::with_capacity(nk * d);
        let mut ve = Vec::with_capacity(nk * d);
        self.gather_vec(x, el, &mut xe);
        self.gather_vec(v, el, &mut ve);
        let ee = &e[self.thermo.dofs(el)];
        if !ve.iter().chain(ee).chain(&xe).all(|v| v.is_finite()) {
            return Err(HydroError::NonFinite(format!("state of element {el}")));
        }
        let mut out = ElemForce {
            stress: Vec::with_capacity(nq),
            dt: f64::INFINITY,
            max_mu: 0.0,
            min_detj: f64::INFINITY,
        };
        for iq in 0..nq {
            let grads = &t.kin_grads[iq * nk..(iq + 1) * nk];
            let jac = self.ref_grad(&xe, grads);
            let det = linalg::det(d, &jac);
            if !(det > 0.0) {
                return Err(HydroError::Tangled { elem: el, det });
            }
            out.min_detj = out.min_detj.min(det);
            let jinv = linalg::inverse(d, &jac).expect("positive determinant");
            let qi = el * nq + iq;
            let rho = self.quad.rho0_detj0[qi] / det;
            let e_h: f64 = ee.iter().zip(&t.th_vals[iq * nt..(iq + 1) * nt]).map(|(a, b)| a * b).sum();
            let p = gas.pressure(rho, e_h)?;
            let cs = gas.sound_speed(e_h);
            let mut sigma = linalg::ZERO;
            for i in 0..d {
                sigma[i][i] = -p;
            }
            let l = linalg::min_singular_value(d, &jac) / k;
            let mut mu = 0.0;
            if self.opts.visc.enabled {
                let grad_v = linalg::matmul(d, &self.ref_grad(&ve, grads), &jinv);
                let def_grad = linalg::matmul(d, &jac, &self.quad.jac0_inv[qi]);
                let visc = viscosity_coefficient(d, rho, cs, &grad_v, &def_grad, self.quad.l0[el], &self.opts.visc);
                mu = visc.mu;
                for i in 0..d {
                    for j in 0..d {
                        sigma[i][j] += visc.sigma[i][j];
                    }
                }
            }
            out.max_mu = out.max_mu.max(mu);
            let speed = cs + mu / (rho * l);
            if speed > 0.0 {
                out.dt = out.dt.min(l / speed);
            }
            let mut s = linalg::matmul(d, &sigma, &linalg::transpose(d, &jinv));
            let scale = det * t.weights[iq];
            for row in s.iter_mut().take(d) {
                for v in row.iter_mut().take(d) {
                    *v *= scale;
                }
            }
            out.stress.push(s);
        }
        Ok(out)
    }

    fn face_force(&self, b: usize, x: &[f64], v: &[f64], e: &[f64]) -> Result<Vec<(Vec3, f64)>> {
        let d = self.dim();
        let bf = self.mesh.bdry_faces[b];
        let nfq = self.quad.n_fqp;
        if !self.wall[b] {
            return Ok(vec![([0.0; 3], 0.0); nfq]);
        }
        let nk = self.kin.n_local;
        let nt = self.thermo.n_local;
        let gas = &self.opts.gas;
        let ft = &self.face_tables[bf.face];
        let mut xe = Vec::with_capacity(nk * d);
        let mut ve = Vec::with_capacity(nk * d);
        self.gather_vec(x, bf.elem, &mut xe);
        self.gather_vec(v, bf.elem, &mut ve);
        let ee = &e[self.thermo.dofs(bf.elem)];
        let mut out = Vec::with_capacity(nfq);
        for iq in 0..nfq {
            let grads = &ft.kin_grads[iq * nk..(iq + 1) * nk];
            let jac = self.ref_grad(&xe, grads);
            let det = linalg::det(d, &jac);
            if !(det > 0.0) {
                return Err(HydroError::Tangled { elem: bf.elem, det });
            }
            let (n, area) = physical_normal(d, &jac, bf.face);
            if !(area > 0.0) {
                return Err(HydroError::DegenerateFace {
                    elem: bf.elem,
                    face: bf.face,
                });
            }
            let qi = b * nfq + iq;
            let rho = self.quad.face_rho0_detj0[qi] / det;
            let e_h: f64 = ee.iter().zip(&ft.th_vals[iq * nt..(iq + 1) * nt]).map(|(a, b)| a * b).sum();
            let p = gas.pressure(rho, e_h)?;
            let cs = gas.sound_speed(e_h);
            let mut sigma = linalg::ZERO;
            for i in 0..d {
                sigma[i][i] = -p;
            }
            if self.opts.visc.enabled {
                let jinv = linalg::inverse(d, &jac).expect("positive determinant");
                let grad_v = linalg::matmul(d, &self.ref_grad(&ve, grads), &jinv);
                let def_grad = linalg::matmul(d, &jac, &self.quad.face_jac0_inv[qi]);
                let visc = viscosity_coefficient(d, rho, cs, &grad_v, &def_grad, self.quad.l0[bf.elem], &self.opts.visc);
                for i in 0..d {
                    for j in 0..d {
                        sigma[i][j] += visc.sigma[i][j];
                    }
                }
            }
            let vh = self.local_value(&ve, &ft.kin_vals[iq * nk..(iq + 1) * nk]);
            let sn = linalg::matvec(d, &sigma, &n);
            let nsn = linalg::dot(d, &n, &sn);
            let vn = linalg::dot(d, &vh, &n);
            let c = (-nsn + self.quad.beta * rho * cs * vn) * area * ft.weights[iq];
            out.push((n, c));
        }
        Ok(out)
    }

    /// `F g` for a thermodynamic vector `g`.
    pub fn apply_force(&self, force: &ForceResult, g: &[f64]) -> Vec<f64> {
        self.apply_force_impl(force, Some(g))
    }

    fn apply_force_impl(&self, force: &ForceResult, g: Option<&[f64]>) -> Vec<f64> {
        let d = self.dim();
        let nk = self.kin.n_local;
        let nt = self.thermo.n_local;
        let nq = self.vol_table.len();
        let t = &self.vol_table;
        let g_at = |el: usize, vals: &[f64]| -> f64 {
            match g {
                Some(g) => g[self.thermo.dofs(el)].iter().zip(vals).map(|(a, b)| a * b).sum(),
                None => 1.0,
            }
        };
        let locals: Vec<Vec<f64>> = (0..self.mesh.elem_count())
            .into_par_iter()
            .map(|el| {
                let mut loc = vec![0.0; nk * d];
                for iq in 0..nq {
                    let gq = g_at(el, &t.th_vals[iq * nt..(iq + 1) * nt]);
                    let s = &force.vol_stress[el * nq + iq];
                    for (a, gr) in t.kin_grads[iq * nk..(iq + 1) * nk].iter().enumerate() {
                        for i in 0..d {
                            let mut acc = 0.0;
                            for m in 0..d {
                                acc += s[i][m] * gr[m];
                            }
                            loc[a * d + i] += gq * acc;
                        }
                    }
                }
                loc
            })
            .collect();
        let mut out = vec![0.0; self.kin.vector_len()];
        for (el, loc) in locals.iter().enumerate() {
            for (a, &dof) in self.kin.dofs(el).iter().enumerate() {
                for i in 0..d {
                    out[dof * d + i] += loc[a * d + i];
                }
            }
        }
        if !force.face_coef.is_empty() {
            let nfq = self.quad.n_fqp;
            for (b, bf) in self.mesh.bdry_faces.iter().enumerate() {
                let ft = &self.face_tables[bf.face];
                let dofs = self.kin.dofs(bf.elem);
                let local_nodes = face_local_nodes(d, self.opts.order, bf.face);
                for iq in 0..nfq {
                    let (n, c) = force.face_coef[b * nfq + iq];
                    let gq = g_at(bf.elem, &ft.th_vals[iq * nt..(iq + 1) * nt]);
                    let vals = &ft.kin_vals[iq * nk..(iq + 1) * nk];
                    for &a in &local_nodes {
                        for i in 0..d {
                            out[dofs[a] * d + i] += gq * c * n[i] * vals[a];
                        }
                    }
                }
            }
        }
        out
    }

    /// `F^T u` for a kinematic vector `u`.
    pub fn apply_force_transpose(&self, force: &ForceResult, u: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let nk = self.kin.n_local;
        let nt = self.thermo.n_local;
        let nq = self.vol_table.len();
        let t = &self.vol_table;
        let mut out = vec![0.0; self.thermo.n_dofs];
        out.par_chunks_mut(nt).enumerate().for_each(|(el, oe)| {
            let mut ue = Vec::with_capacity(nk * d);
            self.gather_vec(u, el, &mut ue);
            for iq in 0..nq {
                let gu = self.ref_grad(&ue, &t.kin_grads[iq * nk..(iq + 1) * nk]);
                let s = &force.vol_stress[el * nq + iq];
                let w = linalg::ddot(d, s, &gu);
                for (o, phi) in oe.iter_mut().zip(&t.th_vals[iq * nt..(iq + 1) * nt]) {
                    *o += phi * w;
                }
            }
        });
        if !force.face_coef.is_empty() {
            let nfq = self.quad.n_fqp;
            let mut ue = Vec::with_capacity(nk * d);
            for (b, bf) in self.mesh.bdry_faces.iter().enumerate() {
                let ft = &self.face_tables[bf.face];
                self.gather_vec(u, bf.elem, &mut ue);
                let oe = &mut out[self.thermo.dofs(bf.elem)];
                for iq in 0..nfq {
                    let (n, c) = force.face_coef[b * nfq + iq];
                    let uh = self.local_value(&ue, &ft.kin_vals[iq * nk..(iq + 1) * nk]);
                    let w = c * linalg::dot(d, &uh, &n);
                    for (o, phi) in oe.iter_mut().zip(&ft.th_vals[iq * nt..(iq + 1) * nt]) {
                        *o += phi * w;
                    }
                }
            }
        }
        out
    }
}
