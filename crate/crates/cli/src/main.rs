//! `certrom` command line: full solves, error studies, POD spectra and
//! nominal or robust magnet design.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use certrom::affine::{build_benchmark, AffineModel};
use certrom::certification::Certifier;
use certrom::config::{Backend, RunConfig};
use certrom::design::{
    initial_point, optimize_design, run_algorithm1, run_error_study, study::training_snapshots, tensor_grid,
    DesignMode, DesignProblem, FullBackend, OutputBackend, OutputOracle,
};
use certrom::fem::{extend_vector, Mesh};
use certrom::pod::{compute_pod_with_factor, RankSelection};
use certrom::robust::UncertaintySet;
use certrom::sensitivity::solve_state;
use certrom::Error;
use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Parser, Debug)]
#[command(
    name = "certrom",
    version,
    about = "Certified reduced-order models for magnet design"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML experiment file; defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// nominal, robust-lin or robust-quad.
    #[arg(long, global = true)]
    mode: Option<DesignMode>,

    /// full or rom.
    #[arg(long, global = true)]
    backend: Option<Backend>,

    #[arg(long, global = true)]
    mesh_level: Option<u32>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Full-order state and output at `solve.p`, `solve.phi`.
    Solve,
    /// Certified bounds against true errors over the test grid.
    ErrorStudy,
    /// Design optimisation with the chosen mode and backend.
    Optimize,
    /// POD spectrum of the training snapshots and projection errors.
    PodStudy,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::ErrorStudy => "error-study",
            Command::Optimize => "optimize",
            Command::PodStudy => "pod-study",
        }
    }
}

enum Failure {
    Usage(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Parse { .. } => Failure::Usage(e.to_string()),
            other => Failure::Numerical(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(|e| match e {
            Error::Parse { line, message } => Failure::Usage(format!("{}: line {line}: {message}", path.display())),
            other => Failure::Usage(format!("{}: {other}", path.display())),
        })?,
        None => RunConfig::default(),
    };
    if let Some(m) = cli.mode {
        cfg.optimization.mode = m;
    }
    if let Some(b) = cli.backend {
        cfg.optimization.backend = b;
    }
    if let Some(l) = cli.mesh_level {
        cfg.geometry.mesh_level = l;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = load_config(cli)?;
    std::fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| Failure::Usage(format!("cannot create {}: {e}", cfg.output_dir.display())))?;
    let start = Instant::now();
    let (model, mesh) = build_benchmark(&cfg.geometry)?;
    eprintln!("mesh level {}: {} unknowns", cfg.geometry.mesh_level, model.dim());
    match cli.command {
        Command::Solve => solve(&cfg, &model, &mesh)?,
        Command::ErrorStudy => error_study(&cfg, &model)?,
        Command::Optimize => optimize(&cfg, &model)?,
        Command::PodStudy => pod_study(&cfg, &model)?,
    }
    eprintln!("{} finished in {:.2?}", cli.command.name(), start.elapsed());
    Ok(())
}

fn header(cfg: &RunConfig, verb: &str, units: &str) -> String {
    format!(
        "# certrom {verb}\n# config_hash: {}\n# seed: {}\n# mesh_level: {}\n# units: {units}\n",
        cfg.hash(),
        cfg.seed,
        cfg.geometry.mesh_level
    )
}

fn write(cfg: &RunConfig, name: &str, contents: &str) -> Result<PathBuf, Failure> {
    let path = cfg.output_dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Failure::Numerical(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

fn e(v: f64) -> String {
    format!("{v:.14e}")
}

fn solve(cfg: &RunConfig, model: &AffineModel, mesh: &Mesh) -> Result<(), Failure> {
    let p = cfg.solve_point();
    let phi = &cfg.solve.phi;
    let u = solve_state(model, &p, phi, cfg.optimization.solve_tol)?;
    let e0 = model.output.dot(&u);
    let physical = cfg.geometry.physical_mesh(mesh, &p)?;
    let nodal = extend_vector(&u, mesh);

    let mut field = header(cfg, "solve", "x, y in length units of the box; u in field units");
    field.push_str("node,x,y,u\n");
    for (i, node) in physical.nodes().iter().enumerate() {
        let _ = writeln!(field, "{i},{},{},{}", e(node[0]), e(node[1]), e(nodal[i]));
    }
    write(cfg, "solution.csv", &field)?;

    let mut out = header(cfg, "solve", "p in length units; phi in degrees; e0 in output units");
    out.push_str("p1,p2,p3,phi,e0\n");
    let _ = writeln!(out, "{},{},{},{},{}", e(p[0]), e(p[1]), e(p[2]), e(phi[0]), e(e0));
    let path = write(cfg, "output.csv", &out)?;
    println!("E0 = {}", e(e0));
    println!("wrote {}", path.display());
    Ok(())
}

fn error_study(cfg: &RunConfig, model: &AffineModel) -> Result<(), Failure> {
    let certifier = Certifier::new(model)?;
    let s = &cfg.study;
    let study = run_error_study(
        model,
        &certifier,
        &tensor_grid(&s.train),
        &tensor_grid(&s.test),
        &s.phi,
        &s.ells,
        cfg.optimization.solve_tol,
    )?;
    let mut csv = header(
        cfg,
        "error-study",
        "errors and bounds in the W norm; order 0 state, 1 max over design gradients, 2 second angle derivative",
    );
    csv.push_str(&study.to_csv());
    let path = write(cfg, "error_study.csv", &csv)?;
    println!(
        "{} snapshots, rank {}, {} basis sizes, {} bound violations",
        study.snapshots,
        study.rank,
        study.rows.len(),
        study.total_violations()
    );
    println!("wrote {}", path.display());
    if study.total_violations() > 0 {
        return Err(Failure::Numerical("error bound below the true error".into()));
    }
    Ok(())
}

fn pod_study(cfg: &RunConfig, model: &AffineModel) -> Result<(), Failure> {
    let certifier = Certifier::new(model)?;
    let s = &cfg.study;
    let tol = cfg.optimization.solve_tol;
    let snapshots = training_snapshots(model, &tensor_grid(&s.train), &s.phi, tol)?;
    let pod = compute_pod_with_factor(&snapshots, certifier.w_factor(), RankSelection::Full)?;
    let w = certifier.w();
    let wu: Vec<_> = snapshots.columns().iter().map(|u| w.mul_vec(u)).collect();

    let mut csv = header(cfg, "pod-study", "eigenvalues and energies in the squared W norm");
    csv.push_str("ell,eigenvalue,tail_energy,projection_error\n");
    for ell in 1..=pod.len() {
        let psi = pod.psi().columns(0, ell);
        let mut lhs = 0.0;
        for (j, u) in snapshots.columns().iter().enumerate() {
            let r = u - psi * psi.tr_mul(&wu[j]);
            lhs += snapshots.weights()[j] * r.dot(&w.mul_vec(&r));
        }
        let _ = writeln!(
            csv,
            "{ell},{},{},{}",
            e(pod.eigenvalues()[ell - 1]),
            e(pod.tail_energy(ell)),
            e(lhs)
        );
    }
    let path = write(cfg, "pod_spectrum.csv", &csv)?;
    println!("wrote {}", path.display());

    // projection quality at random admissible parameters
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let admissible = &model.admissible;
    let mut rows = header(cfg, "pod-study", "relative W-norm projection error of the state");
    rows.push_str("p1,p2,p3,relative_error\n");
    let mut drawn = 0;
    while drawn < 8 {
        let p: Vec<f64> = (0..3)
            .map(|i| rng.gen_range(admissible.lower[i]..admissible.upper[i]))
            .collect();
        if !admissible.contains(&p) {
            continue;
        }
        drawn += 1;
        let u = solve_state(model, &p, &s.phi, tol)?;
        let wu = w.mul_vec(&u);
        let r = &u - pod.psi() * pod.psi().tr_mul(&wu);
        let rel = (r.dot(&w.mul_vec(&r)) / u.dot(&wu)).sqrt();
        let _ = writeln!(rows, "{},{},{},{}", e(p[0]), e(p[1]), e(p[2]), e(rel));
    }
    let path = write(cfg, "pod_random.csv", &rows)?;
    println!("rank {} of {} snapshots", pod.len(), snapshots.len());
    println!("wrote {}", path.display());
    Ok(())
}

fn optimize(cfg: &RunConfig, model: &AffineModel) -> Result<(), Failure> {
    let mode = cfg.optimization.mode;
    let backend = cfg.optimization.backend;
    let tol = cfg.optimization.solve_tol;
    let x0 = initial_point(model);
    let p0 = model.reference.clone();
    let target = OutputOracle::new(model, &p0, tol)?.eval(&cfg.optimization.nominal_angle);
    let problem = cfg.design_problem(target, mode)?;
    let tag = format!("{mode}_{backend}");

    let (p, xi, iterations, full_solves, reduced_solves, converged) = match backend {
        Backend::Full => {
            let sol = optimize_design(&problem, FullBackend::new(model, tol), &x0, &cfg.design_options())?;
            let mut csv = header(
                cfg,
                "optimize",
                "objective in area units plus penalty; kkt and violation absolute",
            );
            csv.push_str(&sol.history_csv);
            write(cfg, &format!("history_{tag}.csv"), &csv)?;
            if !sol.converged {
                eprintln!("warning: optimizer stopped with status {}", sol.status);
            }
            (sol.p, sol.xi, sol.iterations, sol.backend.solves(), 0, sol.converged)
        }
        Backend::Rom => {
            let certifier = Certifier::new(model)?;
            let r = run_algorithm1(model, &certifier, &problem, &x0, &cfg.loop_options())?;
            let mut csv = header(
                cfg,
                "optimize",
                "p in length units; outputs in output units; volume in area units; delta_u in the W norm",
            );
            csv.push_str(&r.trace.to_csv());
            write(cfg, &format!("trace_{tag}.csv"), &csv)?;
            if !r.trace.converged {
                eprintln!("warning: outer loop hit max_outer = {}", cfg.optimization.max_outer);
            }
            let xi = r.x[3];
            (
                r.p,
                xi,
                r.trace.rows.len(),
                r.trace.full_solves,
                r.trace.reduced_solves,
                r.trace.converged,
            )
        }
    };

    let oracle = OutputOracle::new(model, &p, tol)?;
    let e_nominal = oracle.eval(&cfg.optimization.nominal_angle);
    let set = UncertaintySet::new(
        cfg.uncertainty.nominal.clone(),
        cfg.uncertainty.scaling.clone(),
        problem.uncertainty.norm,
    )?;
    let worst = oracle.worst_case(&set, cfg.uncertainty.grid_points)?;
    let v0 = DesignProblem::volume(&p0);
    let v = DesignProblem::volume(&p);

    let mut csv = header(
        cfg,
        "optimize",
        "volume in area units; volume_change in percent of the initial volume; outputs in output units; phi in degrees",
    );
    csv.push_str(
        "mode,backend,volume,volume_change,p1,p2,p3,xi,target,e0_nominal,e0_worst_case,phi_worst,\
         iterations,full_solves,reduced_solves,converged\n",
    );
    let _ = writeln!(
        csv,
        "{mode},{backend},{},{},{},{},{},{},{},{},{},{},{iterations},{full_solves},{reduced_solves},{converged}",
        e(v),
        e(100.0 * (v - v0) / v0),
        e(p[0]),
        e(p[1]),
        e(p[2]),
        e(xi),
        e(target),
        e(e_nominal),
        e(worst.value),
        e(worst.argmax[0]),
    );
    let path = write(cfg, &format!("summary_{tag}.csv"), &csv)?;
    println!(
        "{mode} ({backend}): volume {v:.6} ({:+.2}%), p = ({:.6}, {:.6}, {:.6})",
        100.0 * (v - v0) / v0,
        p[0],
        p[1],
        p[2]
    );
    println!(
        "target {target:.6}, E0 {e_nominal:.6}, worst case {:.6} at phi = {:.3}",
        worst.value, worst.argmax[0]
    );
    println!("full solves {full_solves}, reduced solves {reduced_solves}");
    println!("wrote {}", path.display());
    if !converged {
        return Err(Failure::Numerical("optimization did not converge".into()));
    }
    Ok(())
}
