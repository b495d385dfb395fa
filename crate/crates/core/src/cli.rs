//! Command-line front end: argument definitions, run orchestration and exports.
//!
//! Exit codes: 0 success, 1 I/O or missing artifacts, 2 configuration,
//! 3 non-convergence, 4 failed validation.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{InitialMode, RunConfig};
use crate::error::{Error, Result};
use crate::fem::{element_energy_densities, Displacement};
use crate::mesh::{generate_pincer_mesh, tag_node_sets, NodeSets, TetMesh};
use crate::optimize::{initial_asymmetric, initial_symmetric, minimize_total, Problem, SolveReport};
use crate::penalty::{analytic_segment_penalty, discrete_segment_penalty, surface_penalty_density};
use crate::report::{append_csv, csv_row, log_line, CSV_HEADER};
use crate::validate::{check_orientation, validate, ValidationReport};
use crate::vtk::{Field, VtkGrid};

/// Environment variable holding the default output directory.
pub const OUT_ENV: &str = "SELFCONTACT_OUT";
pub const MESH_VTK: &str = "mesh.vtk";
pub const VALIDATION_CSV: &str = "validation.csv";

#[derive(Debug, Parser)]
#[command(name = "selfcontact", version, about = "Pincer benchmark with a nonlocal self-contact penalty")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct GlobalArgs {
    /// Run configuration file (`section.key = value` lines).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Mesh refinement level, overrides the config.
    #[arg(long, global = true, value_name = "N")]
    pub level: Option<u32>,
    /// elastic | symmetric | asymmetric | file
    #[arg(long, global = true, value_name = "MODE")]
    pub mode: Option<String>,
    /// Worker threads for assembly and pair loops.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Output directory, overrides the config.
    #[arg(long, global = true, value_name = "DIR", env = OUT_ENV)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the mesh, tag node sets and export it.
    Mesh,
    /// Run the elastic or penalized solve and export the result.
    Solve,
    /// Compare discrete and closed-form penalties of two parallel segments.
    Oracle(OracleArgs),
    /// Check a stored deformation for inversion, distortion and interpenetration.
    Validate {
        /// VTK file or run directory; defaults to the configured solution file.
        input: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Offset of the upper segment along the segment direction.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub shift: f64,
    /// Gap between the segments.
    #[arg(long, default_value_t = 0.0)]
    pub gap: f64,
    /// Interaction range, in (0, 1).
    #[arg(long, default_value_t = 0.5)]
    pub eps: f64,
    /// Kernel exponent.
    #[arg(long, default_value_t = 2.1)]
    pub beta: f64,
    /// Nodes per segment.
    #[arg(long, value_delimiter = ',', default_value = "8,16,32,64,128,256,512,1024")]
    pub n: Vec<usize>,
}

/// Error paired with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: Error,
}

impl Failure {
    fn io(error: Error) -> Self {
        Failure { code: 1, error }
    }
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        let code = match &error {
            Error::Io { .. } => 1,
            Error::NonFinite(_) => 3,
            _ => 2,
        };
        Failure { code, error }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

/// Result of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    NotConverged,
    ValidationFailed,
}

impl Outcome {
    pub fn code(self) -> u8 {
        match self {
            Outcome::Success => 0,
            Outcome::NotConverged => 3,
            Outcome::ValidationFailed => 4,
        }
    }
}

/// Loads the config file (or defaults) and applies command-line overrides.
pub fn resolve_config(args: &GlobalArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(level) = args.level {
        cfg.level = level;
    }
    if let Some(mode) = &args.mode {
        cfg.mode = mode.parse().map_err(Error::Config)?;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs one parsed command line, writing human-readable output to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> std::result::Result<Outcome, Failure> {
    let cfg = resolve_config(&cli.global)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.global.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    // Output is buffered so the command body can run inside the pool.
    let mut buf = Vec::new();
    let result = pool.install(|| match &cli.command {
        Command::Mesh => cmd_mesh(&cfg, &mut buf),
        Command::Solve => cmd_solve(&cfg, &mut buf),
        Command::Oracle(args) => cmd_oracle(args, &mut buf),
        Command::Validate { input } => cmd_validate(&cfg, input.as_deref(), &mut buf),
    });
    out.write_all(&buf)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(Path::new("<stdout>"), e))?;
    result
}

fn say(out: &mut dyn Write, text: std::fmt::Arguments) -> Result<()> {
    out.write_fmt(text)
        .and_then(|_| out.write_all(b"\n"))
        .map_err(|e| Error::io(Path::new("<stdout>"), e))
}

fn prepare(cfg: &RunConfig) -> Result<(TetMesh, NodeSets)> {
    let mesh = generate_pincer_mesh(cfg.level)?;
    let sets = tag_node_sets(&mesh, &cfg.dirichlet, &cfg.nonpenetration)?;
    Ok((mesh, sets))
}

fn create_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn indicator(n: usize, nodes: &[usize]) -> Field {
    let mut v = vec![0.0; n];
    for &i in nodes {
        v[i] = 1.0;
    }
    Field::Scalars(v)
}

pub fn cmd_mesh(cfg: &RunConfig, out: &mut dyn Write) -> std::result::Result<Outcome, Failure> {
    let (mesh, sets) = prepare(cfg)?;
    create_out_dir(&cfg.out_dir)?;
    let n = mesh.num_nodes();
    let mut grid = VtkGrid::new(&format!("pincer level {}", cfg.level), mesh.nodes.clone(), mesh.tets.clone());
    grid.point_data.push(("dirichlet".into(), indicator(n, &sets.dirichlet)));
    grid.point_data.push(("nonpenetration".into(), indicator(n, &sets.nonpenetration)));
    let path = cfg.out_dir.join(MESH_VTK);
    grid.write(&path)?;
    say(
        out,
        format_args!(
            "level {}: {} nodes, {} tets, {} dirichlet, {} non-penetration, h = {}",
            cfg.level,
            n,
            mesh.tets.len(),
            sets.dirichlet.len(),
            sets.nonpenetration.len(),
            mesh.h
        ),
    )?;
    say(out, format_args!("wrote {}", path.display()))?;
    Ok(Outcome::Success)
}

fn initial_state(cfg: &RunConfig, problem: &Problem) -> Result<Displacement> {
    let n = problem.mesh.num_nodes();
    match cfg.mode {
        InitialMode::Elastic => Ok(Displacement::zeros(n)),
        InitialMode::Symmetric => Ok(initial_symmetric(&problem.solve_elastic()?.0)),
        InitialMode::Asymmetric => initial_asymmetric(&problem.mesh, &problem.sets, cfg.anchor_twist),
        InitialMode::File => {
            let path = cfg.init_file.as_deref().ok_or_else(|| Error::Config("init.file not set".into()))?;
            let grid = VtkGrid::read(path)?;
            let u = grid
                .point_vectors("displacement")
                .ok_or_else(|| Error::Config(format!("{} has no displacement field", path.display())))?;
            if u.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: u.len() });
            }
            Ok(Displacement(u.to_vec()))
        }
    }
}

/// Solves per `cfg` and returns the mesh, the displacement and the report.
pub fn solve(cfg: &RunConfig, log: &mut dyn FnMut(String)) -> Result<(Problem, Displacement, SolveReport)> {
    let (mesh, sets) = prepare(cfg)?;
    let problem = Problem::assemble(mesh, cfg.material()?, cfg.body_force(), sets)?;
    if cfg.mode == InitialMode::Elastic {
        let (u, report) = problem.solve_elastic()?;
        return Ok((problem, u, report));
    }
    let init = initial_state(cfg, &problem)?;
    let sys = problem.reduce()?;
    let quad = problem.quadrature()?;
    let pen = cfg.penalty(problem.mesh.h);
    let (u, report) = minimize_total(
        &problem,
        &sys,
        &quad,
        &pen,
        &init,
        &cfg.minimize_options(),
        |entry| log(log_line(entry)),
    )?;
    Ok((problem, u, report))
}

fn solution_grid(cfg: &RunConfig, problem: &Problem, u: &Displacement) -> Result<VtkGrid> {
    let mesh = &problem.mesh;
    let n = mesh.num_nodes();
    let mut density = vec![0.0; n];
    let quad = problem.quadrature()?;
    if !quad.is_empty() {
        let pen = cfg.penalty(mesh.h);
        let d = surface_penalty_density(&quad, &quad.deformed(u), &pen)?;
        for (&i, v) in quad.np_nodes.iter().zip(d) {
            density[i] = pen.weight * v;
        }
    }
    let mut grid = VtkGrid::new(
        &format!("pincer level {} mode {}", cfg.level, cfg.mode),
        u.deformed(mesh),
        mesh.tets.clone(),
    );
    grid.point_data.push(("displacement".into(), Field::Vectors(u.0.clone())));
    grid.point_data.push(("reference".into(), Field::Vectors(mesh.nodes.clone())));
    grid.point_data.push(("penalty_density".into(), Field::Scalars(density)));
    grid.cell_data.push((
        "energy_density".into(),
        Field::Scalars(element_energy_densities(mesh, &problem.material, u)?),
    ));
    grid.cell_data.push(("det_f".into(), Field::Scalars(check_orientation(mesh, u)?.0)));
    Ok(grid)
}

pub fn cmd_solve(cfg: &RunConfig, out: &mut dyn Write) -> std::result::Result<Outcome, Failure> {
    create_out_dir(&cfg.out_dir)?;
    let log_path = cfg.log_path();
    let mut log_file = BufWriter::new(File::create(&log_path).map_err(|e| Error::io(&log_path, e))?);
    let mut log_err = None;
    let (problem, u, report) = solve(cfg, &mut |line| {
        if log_err.is_none() {
            if let Err(e) = writeln!(log_file, "{line}") {
                log_err = Some(e);
            }
        }
    })?;
    if let Some(e) = log_err {
        return Err(Error::io(&log_path, e).into());
    }
    log_file.flush().map_err(|e| Error::io(&log_path, e))?;

    let np_nodes = if cfg.mode == InitialMode::Elastic { 0 } else { problem.sets.nonpenetration.len() };
    let row = csv_row(cfg.level, problem.mesh.num_nodes(), np_nodes, &report);
    solution_grid(cfg, &problem, &u)?.write(&cfg.vtk_path())?;
    append_csv(&cfg.csv_path(), CSV_HEADER, &row)?;
    let val = validate(&problem.mesh, &u, &cfg.validation_options())?;
    append_csv(&cfg.out_dir.join(VALIDATION_CSV), ValidationReport::CSV_HEADER, &val.csv_row())?;

    let b = report.breakdown;
    say(out, format_args!("{CSV_HEADER}\n{row}"))?;
    say(
        out,
        format_args!(
            "total {:.6e}  elastic {:.6e}  penalty {:.6e}  body {:.6e}",
            b.total, b.elastic, b.penalty, b.body
        ),
    )?;
    say(
        out,
        format_args!(
            "{} after {} iterations, |g|inf {:.3e}, {:.2} s",
            report.message, report.iterations, report.gradient_norm, report.wall_time
        ),
    )?;
    say(out, format_args!("{val}"))?;
    say(out, format_args!("wrote {}", cfg.vtk_path().display()))?;
    Ok(if report.converged { Outcome::Success } else { Outcome::NotConverged })
}

pub fn cmd_oracle(args: &OracleArgs, out: &mut dyn Write) -> std::result::Result<Outcome, Failure> {
    if !(args.eps > 0.0 && args.eps < 1.0) {
        return Err(Error::Config(format!("eps must lie in (0, 1), got {}", args.eps)).into());
    }
    let exact = analytic_segment_penalty(args.shift, args.gap, args.eps, args.beta)?;
    say(out, format_args!("n,discrete,analytic,rel_error"))?;
    for &n in &args.n {
        let d = discrete_segment_penalty(n, args.shift, args.gap, args.eps, args.beta)?;
        let rel = if exact != 0.0 {
            ((d - exact) / exact).abs()
        } else if d == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        say(out, format_args!("{n},{d:e},{exact:e},{rel:e}"))?;
    }
    Ok(Outcome::Success)
}

/// Rebuilds the reference mesh and displacement stored in a solution file.
pub fn load_solution(path: &Path) -> Result<(TetMesh, Displacement)> {
    let grid = VtkGrid::read(path)?;
    let u = grid
        .point_vectors("displacement")
        .ok_or_else(|| Error::Config(format!("{} has no displacement field", path.display())))?
        .to_vec();
    if u.len() != grid.points.len() {
        return Err(Error::DimensionMismatch { expected: grid.points.len(), got: u.len() });
    }
    let reference = match grid.point_vectors("reference") {
        Some(r) => r.to_vec(),
        None => grid.points.iter().zip(&u).map(|(y, d)| y - d).collect(),
    };
    let mesh = TetMesh::from_tets(reference, grid.tets)?;
    Ok((mesh, Displacement(u)))
}

pub fn cmd_validate(cfg: &RunConfig, input: Option<&Path>, out: &mut dyn Write) -> std::result::Result<Outcome, Failure> {
    let path = match input {
        Some(p) if p.is_dir() => p.join(&cfg.vtk_name),
        Some(p) => p.to_path_buf(),
        None => cfg.vtk_path(),
    };
    if !path.is_file() {
        return Err(Failure::io(Error::Config(format!("no solution file at {}", path.display()))));
    }
    let (mesh, u) = load_solution(&path).map_err(Failure::io)?;
    let report = validate(&mesh, &u, &cfg.validation_options())?;
    say(out, format_args!("{report}"))?;
    say(out, format_args!("{}\n{}", ValidationReport::CSV_HEADER, report.csv_row()))?;
    Ok(if report.passed() { Outcome::Success } else { Outcome::ValidationFailed })
}
