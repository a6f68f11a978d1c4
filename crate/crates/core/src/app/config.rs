//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use super::problem::SedovDeposit;
use crate::error::{HydroError, Result};
use crate::integrator::StepControls;
use crate::operators::{BcMode, MassPreconditioner};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProblemKind {
    SedovSquare,
    SedovTrapezoid,
    SedovHoleCircle,
    SedovHoleSquare,
    SedovDisc,
    SedovCube,
    CustomMesh,
}

impl ProblemKind {
    pub const ALL: [ProblemKind; 7] = [
        ProblemKind::SedovSquare,
        ProblemKind::SedovTrapezoid,
        ProblemKind::SedovHoleCircle,
        ProblemKind::SedovHoleSquare,
        ProblemKind::SedovDisc,
        ProblemKind::SedovCube,
        ProblemKind::CustomMesh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::SedovSquare => "sedov_square",
            ProblemKind::SedovTrapezoid => "sedov_trapezoid",
            ProblemKind::SedovHoleCircle => "sedov_hole_circle",
            ProblemKind::SedovHoleSquare => "sedov_hole_square",
            ProblemKind::SedovDisc => "sedov_disc",
            ProblemKind::SedovCube => "sedov_cube",
            ProblemKind::CustomMesh => "custom_mesh",
        }
    }

    /// Final time used when the configuration does not set one.
    pub fn default_t_final(self) -> f64 {
        match self {
            ProblemKind::SedovTrapezoid => 1.3,
            ProblemKind::SedovDisc => 20.0,
            _ => 0.8,
        }
    }

    /// Fraction of the full blast contained in the domain.
    pub fn wedge_fraction(self) -> f64 {
        match self {
            ProblemKind::SedovDisc | ProblemKind::CustomMesh => 1.0,
            ProblemKind::SedovCube => 0.125,
            _ => 0.25,
        }
    }
}

impl FromStr for ProblemKind {
    type Err = HydroError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| HydroError::Config(format!("unknown problem '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Vtk,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub problem: ProblemKind,
    pub order: usize,
    /// Elements per unit length / side; see the problem builders.
    pub res: usize,
    pub mesh_file: Option<PathBuf>,
    pub trapezoid_corners: [[f64; 2]; 4],
    pub disc_radius: f64,
    pub hole_center: [f64; 2],
    pub hole_radius: f64,
    pub hole_side: f64,
    pub hole_angle: f64,
    pub gamma: f64,
    pub q1: f64,
    pub q2: f64,
    pub viscosity_enabled: bool,
    pub bc_mode: BcMode,
    /// Wall penalty; `None` means `20 (k+1)^2`.
    pub beta: Option<f64>,
    /// Energy deposited in the domain; `None` means the wedge share of a
    /// unit blast.
    pub blast_energy: Option<f64>,
    pub sedov_deposit: SedovDeposit,
    pub quad_pts: Option<usize>,
    pub precond: MassPreconditioner,
    pub cfl: f64,
    pub dt_init: f64,
    pub dt_max: f64,
    pub dt_min: f64,
    pub growth: f64,
    pub shrink: f64,
    pub t_final: f64,
    pub output_every: usize,
    pub output_dir: PathBuf,
    pub formats: Vec<OutputFormat>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let c = StepControls::default();
        Self {
            problem: ProblemKind::SedovSquare,
            order: 2,
            res: 10,
            mesh_file: None,
            trapezoid_corners: [[0.0, 0.0], [1.0, 0.0], [1.0, 0.6], [0.0, 1.0]],
            disc_radius: 1.0,
            hole_center: [0.5, 0.5],
            hole_radius: 0.2,
            hole_side: 0.3,
            hole_angle: 20.0,
            gamma: 1.4,
            q1: 0.5,
            q2: 2.0,
            viscosity_enabled: true,
            bc_mode: BcMode::Weak,
            beta: None,
            blast_energy: None,
            sedov_deposit: SedovDeposit::Corner,
            quad_pts: None,
            precond: MassPreconditioner::NodalBlock,
            cfl: c.cfl,
            dt_init: c.dt_init,
            dt_max: c.dt_max,
            dt_min: c.dt_min,
            growth: c.growth,
            shrink: c.shrink,
            t_final: ProblemKind::SedovSquare.default_t_final(),
            output_every: 10,
            output_dir: PathBuf::from("output"),
            formats: vec![OutputFormat::Csv],
        }
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| HydroError::Config(format!("invalid value '{v}' for key '{key}'")))
}

fn parse_list(key: &str, v: &str, n: usize) -> Result<Vec<f64>> {
    let out: Vec<f64> = v
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| parse_num(key, t))
        .collect::<Result<_>>()?;
    if out.len() != n {
        return Err(HydroError::Config(format!("key '{key}' expects {n} numbers")));
    }
    Ok(out)
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(HydroError::Config(format!("invalid boolean '{v}' for key '{key}'"))),
    }
}

fn parse_opt<T: FromStr>(key: &str, v: &str) -> Result<Option<T>> {
    if v == "auto" {
        Ok(None)
    } else {
        parse_num(key, v).map(Some)
    }
}

impl RunConfig {
    /// Apply one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "problem" => {
                let p: ProblemKind = v.parse()?;
                if self.t_final == self.problem.default_t_final() {
                    self.t_final = p.default_t_final();
                }
                self.problem = p;
            }
            "order" => self.order = parse_num(key, v)?,
            "res" => self.res = parse_num(key, v)?,
            "mesh_file" => self.mesh_file = (!v.is_empty() && v != "none").then(|| PathBuf::from(v)),
            "trapezoid_corners" => {
                let c = parse_list(key, v, 8)?;
                for i in 0..4 {
                    self.trapezoid_corners[i] = [c[2 * i], c[2 * i + 1]];
                }
            }
            "disc_radius" => self.disc_radius = parse_num(key, v)?,
            "hole_center" => {
                let c = parse_list(key, v, 2)?;
                self.hole_center = [c[0], c[1]];
            }
            "hole_radius" => self.hole_radius = parse_num(key, v)?,
            "hole_side" => self.hole_side = parse_num(key, v)?,
            "hole_angle" => self.hole_angle = parse_num(key, v)?,
            "gamma" => self.gamma = parse_num(key, v)?,
            "q1" => self.q1 = parse_num(key, v)?,
            "q2" => self.q2 = parse_num(key, v)?,
            "viscosity_enabled" => self.viscosity_enabled = parse_bool(key, v)?,
            "bc_mode" => {
                self.bc_mode = match v {
                    "weak" => BcMode::Weak,
                    "strong_axis_aligned" => BcMode::StrongAxisAligned,
                    _ => return Err(HydroError::Config(format!("unknown bc_mode '{v}'"))),
                }
            }
            "beta" => self.beta = parse_opt(key, v)?,
            "blast_energy" => self.blast_energy = parse_opt(key, v)?,
            "sedov_deposit" => {
                self.sedov_deposit = match v {
                    "corner" => SedovDeposit::Corner,
                    "nodal" => SedovDeposit::NodalDof,
                    _ => return Err(HydroError::Config(format!("unknown sedov_deposit '{v}'"))),
                }
            }
            "quad_pts" => self.quad_pts = parse_opt(key, v)?,
            "precond" => {
                self.precond = match v {
                    "jacobi" => MassPreconditioner::Jacobi,
                    "block" => MassPreconditioner::NodalBlock,
                    _ => return Err(HydroError::Config(format!("unknown precond '{v}'"))),
                }
            }
            "cfl" => self.cfl = parse_num(key, v)?,
            "dt_init" => self.dt_init = parse_num(key, v)?,
            "dt_max" => self.dt_max = parse_num(key, v)?,
            "dt_min" => self.dt_min = parse_num(key, v)?,
            "growth" => self.growth = parse_num(key, v)?,
            "shrink" => self.shrink = parse_num(key, v)?,
            "t_final" => self.t_final = parse_num(key, v)?,
            "output_every" => self.output_every = parse_num(key, v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            "formats" => {
                let mut f = Vec::new();
                for t in v.split(',').map(str::trim).filter(|t| !t.is_empty()) {
                    let fmt = match t {
                        "csv" => OutputFormat::Csv,
                        "vtk" => OutputFormat::Vtk,
                        _ => return Err(HydroError::Config(format!("unknown output format '{t}'"))),
                    };
                    if !f.contains(&fmt) {
                        f.push(fmt);
                    }
                }
                self.formats = f;
            }
            other => return Err(HydroError::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Parse a configuration file body on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| HydroError::Config(format!("line {}: expected 'key = value'", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Canonical text form; parsing it yields the same configuration.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let opt = |o: Option<f64>| o.map_or("auto".to_string(), |v| format!("{v:?}"));
        let c = &self.trapezoid_corners;
        let lines: Vec<(&str, String)> = vec![
            ("problem", self.problem.name().to_string()),
            ("order", self.order.to_string()),
            ("res", self.res.to_string()),
            (
                "mesh_file",
                self.mesh_file.as_ref().map_or("none".to_string(), |p| p.display().to_string()),
            ),
            (
                "trapezoid_corners",
                c.iter().flatten().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" "),
            ),
            ("disc_radius", format!("{:?}", self.disc_radius)),
            ("hole_center", format!("{:?} {:?}", self.hole_center[0], self.hole_center[1])),
            ("hole_radius", format!("{:?}", self.hole_radius)),
            ("hole_side", format!("{:?}", self.hole_side)),
            ("hole_angle", format!("{:?}", self.hole_angle)),
            ("gamma", format!("{:?}", self.gamma)),
            ("q1", format!("{:?}", self.q1)),
            ("q2", format!("{:?}", self.q2)),
            ("viscosity_enabled", self.viscosity_enabled.to_string()),
            (
                "bc_mode",
                match self.bc_mode {
                    BcMode::Weak => "weak",
                    BcMode::StrongAxisAligned => "strong_axis_aligned",
                }
                .to_string(),
            ),
            ("beta", opt(self.beta)),
            ("blast_energy", opt(self.blast_energy)),
            (
                "sedov_deposit",
                match self.sedov_deposit {
                    SedovDeposit::Corner => "corner",
                    SedovDeposit::NodalDof => "nodal",
                }
                .to_string(),
            ),
            ("quad_pts", self.quad_pts.map_or("auto".to_string(), |v| v.to_string())),
            (
                "precond",
                match self.precond {
                    MassPreconditioner::Jacobi => "jacobi",
                    MassPreconditioner::NodalBlock => "block",
                }
                .to_string(),
            ),
            ("cfl", format!("{:?}", self.cfl)),
            ("dt_init", format!("{:?}", self.dt_init)),
            ("dt_max", format!("{:?}", self.dt_max)),
            ("dt_min", format!("{:?}", self.dt_min)),
            ("growth", format!("{:?}", self.growth)),
            ("shrink", format!("{:?}", self.shrink)),
            ("t_final", format!("{:?}", self.t_final)),
            ("output_every", self.output_every.to_string()),
            ("output_dir", self.output_dir.display().to_string()),
            (
                "formats",
                self.formats
                    .iter()
                    .map(|f| match f {
                        OutputFormat::Csv => "csv",
                        OutputFormat::Vtk => "vtk",
                    })
                    .collect::<Vec<_>>()
                    .join(","),
            ),
        ];
        for (k, v) in lines {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn step_controls(&self) -> StepControls {
        StepControls {
            cfl: self.cfl,
            dt_init: self.dt_init,
            dt_max: self.dt_max,
            dt_min: self.dt_min,
            growth: self.growth,
            shrink: self.shrink,
            t_final: self.t_final,
            ..StepControls::default()
        }
    }

    /// Checks that do not need the mesh.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HydroError::Config(m));
        if self.order == 0 {
            return bad("order must be >= 1".into());
        }
        if self.res == 0 {
            return bad("res must be >= 1".into());
        }
        if self.output_every == 0 {
            return bad("output_every must be >= 1".into());
        }
        if !(self.gamma > 1.0) {
            return bad(format!("gamma = {} must exceed 1", self.gamma));
        }
        if !(self.q1 >= 0.0 && self.q2 >= 0.0) {
            return bad("q1 and q2 must be >= 0".into());
        }
        if let Some(b) = self.beta {
            if !(b >= 0.0) {
                return bad("beta must be >= 0".into());
            }
        }
        if let Some(e) = self.blast_energy {
            if !(e > 0.0) {
                return bad("blast_energy must be positive".into());
            }
        }
        if self.problem == ProblemKind::CustomMesh && self.mesh_file.is_none() {
            return bad("custom_mesh needs mesh_file".into());
        }
        if self.bc_mode == BcMode::StrongAxisAligned
            && matches!(
                self.problem,
                ProblemKind::SedovDisc | ProblemKind::SedovHoleCircle | ProblemKind::SedovHoleSquare | ProblemKind::SedovTrapezoid
            )
        {
            return bad(format!(
                "bc_mode strong_axis_aligned needs axis-aligned walls; {} has others",
                self.problem.name()
            ));
        }
        self.step_controls()
            .validate()
            .map_err(|e| HydroError::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_idempotent() {
        let text = "problem = sedov_disc\norder = 3\nres = 12 # comment\nbeta = 50\nformats = vtk, csv\nhole_center = 0.4, 0.6\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.t_final, 20.0);
        assert_eq!(cfg.order, 3);
        assert_eq!(cfg.beta, Some(50.0));
        assert_eq!(cfg.formats, vec![OutputFormat::Vtk, OutputFormat::Csv]);
        let once = cfg.serialize();
        let back = RunConfig::parse(&once).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.serialize(), once);
        assert_eq!(RunConfig::parse(&RunConfig::default().serialize()).unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::parse("problem = sedov_square\nfoo = 1\n").unwrap_err();
        assert!(err.to_string().contains("'foo'"));
        assert!(RunConfig::parse("order = two").is_err());
        assert!(RunConfig::parse("no equals sign").is_err());
    }

    #[test]
    fn explicit_final_time_survives_problem_change() {
        let cfg = RunConfig::parse("t_final = 0.3\nproblem = sedov_disc\n").unwrap();
        assert_eq!(cfg.t_final, 0.3);
    }

    #[test]
    fn validation() {
        let mut cfg = RunConfig::default();
        cfg.validate().unwrap();
        cfg.bc_mode = BcMode::StrongAxisAligned;
        cfg.validate().unwrap();
        cfg.problem = ProblemKind::SedovDisc;
        assert!(cfg.validate().is_err());
        let cfg = RunConfig {
            cfl: -1.0,
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
