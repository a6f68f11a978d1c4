//! History CSV and legacy VTK output.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use crate::diagnostics::ConservationReport;
use crate::error::Result;
use crate::integrator::HydroState;
use crate::linalg;
use crate::operators::Discretization;

pub fn history_header(dim: usize) -> String {
    let mut h = String::from("step,t,dt,ke,ke_penalty,ie,etotal,px,py");
    if dim == 3 {
        h.push_str(",pz");
    }
    h.push_str(",bviol,shock_r");
    h
}

fn num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.16e}")
    }
}

pub fn history_row(dim: usize, state: &HydroState, rep: &ConservationReport, shock_r: Option<f64>) -> String {
    let mut fields = vec![
        state.step_count.to_string(),
        num(state.t),
        num(state.dt),
        num(rep.kinetic_energy),
        num(rep.ke_penalty),
        num(rep.internal_energy),
        num(rep.total_energy),
    ];
    fields.extend(rep.momentum[..dim].iter().map(|&p| num(p)));
    fields.push(num(rep.boundary_violation));
    fields.push(num(shock_r.unwrap_or(f64::NAN)));
    fields.join(",")
}

/// Line-buffered writer for the run history.
pub struct HistoryWriter<W: Write> {
    out: W,
    dim: usize,
}

impl<W: Write> HistoryWriter<W> {
    pub fn new(mut out: W, dim: usize) -> Result<Self> {
        writeln!(out, "{}", history_header(dim))?;
        Ok(Self { out, dim })
    }

    pub fn write_row(&mut self, state: &HydroState, rep: &ConservationReport, shock_r: Option<f64>) -> Result<()> {
        writeln!(self.out, "{}", history_row(self.dim, state, rep, shock_r))?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Legacy ASCII VTK unstructured grid with each element split into `k^d`
/// linear cells. Point data: density, specific internal energy, velocity.
pub fn vtk_string(disc: &Discretization, state: &HydroState) -> String {
    let d = disc.dim();
    let k = disc.kin.degree.max(1);
    let mesh = &disc.mesh;
    let n1 = k + 1;
    let per = n1.pow(d as u32);
    let ne = mesh.elem_count();
    let lattice: Vec<[f64; 3]> = (0..per)
        .map(|i| {
            let mut p = [0.0; 3];
            let mut r = i;
            for c in p.iter_mut().take(d) {
                *c = (r % n1) as f64 / k as f64;
                r /= n1;
            }
            p
        })
        .collect();

    let mut pts = String::new();
    let mut rho = String::new();
    let mut en = String::new();
    let mut vel = String::new();
    for el in 0..ne {
        for xi in &lattice {
            let x = mesh.map_point(el, xi, &state.x);
            let _ = writeln!(pts, "{:e} {:e} {:e}", x[0], x[1], x[2]);
            let det = linalg::det(d, &mesh.jacobian(el, xi, &state.x));
            let det0 = linalg::det(d, &mesh.jacobian(el, xi, &mesh.node_coords));
            let r0 = disc.kin.interpolate_scalar(&disc.rho0_nodes, el, xi);
            let _ = writeln!(rho, "{:e}", r0 * det0 / det);
            let _ = writeln!(en, "{:e}", disc.thermo.interpolate(&state.e, el, xi));
            let v = disc.kin.interpolate_vector(&state.v, el, xi);
            let _ = writeln!(vel, "{:e} {:e} {:e}", v[0], v[1], v[2]);
        }
    }

    let n_sub = k.pow(d as u32);
    let corners: &[[usize; 3]] = if d == 2 {
        &[[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]]
    } else {
        &[
            [0, 0, 0],
            [1, 0, 0],
            [1, 1, 0],
            [0, 1, 0],
            [0, 0, 1],
            [1, 0, 1],
            [1, 1, 1],
            [0, 1, 1],
        ]
    };
    let mut cells = String::new();
    for el in 0..ne {
        for s in 0..n_sub {
            let mut base = [0usize; 3];
            let mut r = s;
            for b in base.iter_mut().take(d) {
                *b = r % k;
                r /= k;
            }
            let _ = write!(cells, "{}", corners.len());
            for c in corners {
                let mut idx = 0;
                let mut stride = 1;
                for i in 0..d {
                    idx += (base[i] + c[i]) * stride;
                    stride *= n1;
                }
                let _ = write!(cells, " {}", el * per + idx);
            }
            cells.push('\n');
        }
    }
    let n_cells = ne * n_sub;
    let cell_type = if d == 2 { 9 } else { 12 };

    let mut s = String::new();
    let _ = writeln!(s, "# vtk DataFile Version 3.0");
    let _ = writeln!(s, "hydro t = {:e}", state.t);
    let _ = writeln!(s, "ASCII\nDATASET UNSTRUCTURED_GRID");
    let _ = writeln!(s, "POINTS {} double", ne * per);
    s.push_str(&pts);
    let _ = writeln!(s, "CELLS {} {}", n_cells, n_cells * (corners.len() + 1));
    s.push_str(&cells);
    let _ = writeln!(s, "CELL_TYPES {n_cells}");
    for _ in 0..n_cells {
        let _ = writeln!(s, "{cell_type}");
    }
    let _ = writeln!(s, "POINT_DATA {}", ne * per);
    let _ = writeln!(s, "SCALARS density double 1\nLOOKUP_TABLE default");
    s.push_str(&rho);
    let _ = writeln!(s, "SCALARS energy double 1\nLOOKUP_TABLE default");
    s.push_str(&en);
    let _ = writeln!(s, "VECTORS velocity double");
    s.push_str(&vel);
    s
}

pub fn write_vtk(path: &Path, disc: &Discretization, state: &HydroState) -> Result<()> {
    std::fs::write(path, vtk_string(disc, state))?;
    Ok(())
}
