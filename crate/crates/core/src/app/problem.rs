//! Problem setup: meshes, initial data and the point-blast energy deposit.

use log::{info, warn};

use super::config::{ProblemKind, RunConfig};
use crate::diagnostics::RayFan;
use crate::error::{HydroError, Result};
use crate::integrator::HydroState;
use crate::linalg::Vec3;
use crate::mesh::{self, HoleParams, HoleShape, Mesh};
use crate::operators::{default_beta, BcSettings, Discretization, DiscretizationOptions};
use crate::physics::{IdealGas, ViscositySettings};

/// A ready-to-run problem.
pub struct Problem {
    pub kind: ProblemKind,
    pub disc: Discretization,
    pub state: HydroState,
    /// Blast origin.
    pub origin: Vec3,
    /// Energy deposited in the domain.
    pub blast_energy: f64,
    /// Ray fan for the shock detector (2D only).
    pub fan: Option<RayFan>,
}

/// Build the mesh described by `cfg`.
pub fn build_mesh(cfg: &RunConfig) -> Result<Mesh> {
    let k = cfg.order;
    let n = cfg.res;
    match cfg.problem {
        ProblemKind::SedovSquare => mesh::make_cartesian(n, n, [0.0, 0.0], [1.0, 1.0], k),
        ProblemKind::SedovTrapezoid => mesh::make_trapezoid(cfg.trapezoid_corners, n, n, k),
        ProblemKind::SedovHoleCircle | ProblemKind::SedovHoleSquare => {
            let shape = if cfg.problem == ProblemKind::SedovHoleCircle {
                HoleShape::Circle {
                    radius: cfg.hole_radius,
                }
            } else {
                HoleShape::RotatedSquare {
                    side: cfg.hole_side,
                    angle_deg: cfg.hole_angle,
                }
            };
            mesh::make_square_with_hole(
                HoleParams {
                    shape,
                    center: cfg.hole_center,
                    n_tangential: n,
                    n_radial: (n / 2).max(1),
                },
                k,
            )
        }
        ProblemKind::SedovDisc => {
            let m = (n / 2).max(1);
            mesh::make_disc(m, 4 * m, cfg.disc_radius, k)
        }
        ProblemKind::SedovCube => mesh::make_box([n; 3], [0.0; 3], [1.0; 3], k),
        ProblemKind::CustomMesh => {
            let path = cfg
                .mesh_file
                .as_ref()
                .ok_or_else(|| HydroError::Config("custom_mesh needs mesh_file".into()))?;
            let m = Mesh::read(path)?;
            if m.geom_degree != k {
                return Err(HydroError::Config(format!(
                    "mesh file has geometry degree {} but order is {k}",
                    m.geom_degree
                )));
            }
            Ok(m)
        }
    }
}

pub fn discretization_options(cfg: &RunConfig, dim: usize) -> Result<DiscretizationOptions> {
    let mut opts = DiscretizationOptions::new(cfg.order, dim);
    opts.quad_pts = cfg.quad_pts;
    opts.gas = IdealGas::new(cfg.gamma)?;
    opts.visc = ViscositySettings {
        q1: cfg.q1,
        q2: cfg.q2,
        enabled: cfg.viscosity_enabled,
    };
    opts.bc = BcSettings {
        mode: cfg.bc_mode,
        beta: cfg.beta.unwrap_or_else(|| default_beta(cfg.order, dim)),
    };
    opts.precond = cfg.precond;
    Ok(opts)
}

/// Physical positions of the thermodynamic dofs.
pub fn thermo_dof_points(disc: &Discretization) -> Vec<Vec3> {
    let pts = disc.thermo.basis.node_points();
    let mesh = &disc.mesh;
    (0..mesh.elem_count())
        .flat_map(|el| pts.iter().map(move |p| mesh.map_point(el, p, &mesh.node_coords)))
        .collect()
}

/// How the point-blast energy is represented in the energy space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SedovDeposit {
    /// Nonnegative corner Bernstein function `prod (1 - xi_i)^(k-1)` (or the
    /// mirrored corner) of the mesh vertex closest to the origin, shared
    /// equally by every element meeting at that vertex.
    Corner,
    /// A single nodal dof, the one closest to the origin.
    NodalDof,
}

/// State at rest with energy `blast_energy` deposited at `origin`.
pub fn init_sedov(disc: &Discretization, blast_energy: f64, origin: &Vec3, mode: SedovDeposit) -> Result<HydroState> {
    if !(blast_energy > 0.0) || !blast_energy.is_finite() {
        return Err(HydroError::InvalidInput(format!("blast energy {blast_energy} must be positive")));
    }
    let d = disc.dim();
    let dist = |p: &Vec3| (0..d).map(|i| (p[i] - origin[i]).powi(2)).sum::<f64>().sqrt();
    let closest = |cands: &[Vec3]| {
        let mut best = (0, f64::INFINITY);
        for (i, p) in cands.iter().enumerate() {
            let r = dist(p);
            if r < best.1 {
                best = (i, r);
            }
        }
        let tol = 1e-12 * best.1.max(1e-300);
        let ties = cands.iter().filter(|p| dist(p) - best.1 <= tol).count();
        (best, ties)
    };
    let colsums = disc.mass_e.column_sums();
    let mut state = HydroState::at_rest(disc);
    match mode {
        SedovDeposit::NodalDof => {
            let ((dof, r), ties) = closest(&thermo_dof_points(disc));
            if ties > 1 {
                warn!("{ties} energy dofs are equally close to the blast origin; using dof {dof}");
            }
            state.e[dof] = blast_energy / colsums[dof];
            info!("deposited energy {blast_energy:e} at dof {dof} (r = {r:.3e})");
        }
        SedovDeposit::Corner => {
            let mesh = &disc.mesh;
            let n_corners = 1 << d;
            let corner_ref = |c: usize| {
                let mut p = [0.0; 3];
                for (i, v) in p.iter_mut().enumerate().take(d) {
                    *v = ((c >> i) & 1) as f64;
                }
                p
            };
            let corners: Vec<Vec3> = (0..mesh.elem_count())
                .flat_map(|el| (0..n_corners).map(move |c| mesh.map_point(el, &corner_ref(c), &mesh.node_coords)))
                .collect();
            let ((_, r), _) = closest(&corners);
            let tol = 1e-12 * r.max(1e-300);
            let hits: Vec<usize> = (0..corners.len()).filter(|&i| dist(&corners[i]) - r <= tol).collect();
            let m = disc.thermo.degree as i32;
            let nodes = disc.thermo.basis.node_points();
            let mut shapes = Vec::with_capacity(hits.len());
            let mut weight = 0.0;
            for &i in &hits {
                let (el, c) = (i / n_corners, i % n_corners);
                let shape: Vec<f64> = nodes
                    .iter()
                    .map(|g| {
                        (0..d)
                            .map(|j| if (c >> j) & 1 == 1 { g[j].powi(m) } else { (1.0 - g[j]).powi(m) })
                            .product()
                    })
                    .collect();
                weight += shape
                    .iter()
                    .zip(&colsums[disc.thermo.dofs(el)])
                    .map(|(b, s)| b * s)
                    .sum::<f64>();
                shapes.push((el, shape));
            }
            for (el, shape) in &shapes {
                for (e, b) in state.e[disc.thermo.dofs(*el)].iter_mut().zip(shape) {
                    *e = blast_energy * b / weight;
                }
            }
            info!("deposited energy {blast_energy:e} in {} element corner(s) at r = {r:.3e}", hits.len());
        }
    }
    Ok(state)
}

/// Ray fan covering the domain around the blast origin.
fn ray_fan(kind: ProblemKind, mesh: &Mesh, origin: &Vec3) -> Option<RayFan> {
    use std::f64::consts::{FRAC_PI_2, TAU};
    if mesh.dim != 2 {
        return None;
    }
    let r_max = (0..mesh.node_count())
        .map(|a| {
            let p = mesh.node(a);
            ((p[0] - origin[0]).powi(2) + (p[1] - origin[1]).powi(2)).sqrt()
        })
        .fold(0.0, f64::max);
    let span = match kind {
        ProblemKind::SedovDisc | ProblemKind::CustomMesh => (0.0, TAU),
        _ => (0.0, FRAC_PI_2),
    };
    Some(RayFan::new([origin[0], origin[1]], span, r_max))
}

/// Build the discretization and the initial state for `cfg`.
pub fn build_problem(cfg: &RunConfig) -> Result<Problem> {
    cfg.validate()?;
    let mesh = build_mesh(cfg)?;
    let opts = discretization_options(cfg, mesh.dim)?;
    let disc = Discretization::new(mesh, opts, &|_| 1.0)?;
    let origin = [0.0; 3];
    let blast_energy = cfg.blast_energy.unwrap_or_else(|| cfg.problem.wedge_fraction());
    let state = init_sedov(&disc, blast_energy, &origin, cfg.sedov_deposit)?;
    let fan = ray_fan(cfg.problem, &disc.mesh, &origin);
    Ok(Problem {
        kind: cfg.problem,
        disc,
        state,
        origin,
        blast_energy,
        fan,
    })
}
