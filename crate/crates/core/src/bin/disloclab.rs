//! Command-line driver for the dislocation laboratory: cell problems,
//! lattice self-energies, body assembly, energy minimization, scaling
//! sweeps, and the Gamma-limit experiments.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::Vector2;
use serde_json::json;

use disloclab::assembly::{approximate_measure, build_implant, deviation_report};
use disloclab::cell::{
    extrapolate_izero, fit_izero_form, solve_cell, CellResolution, CellResult,
};
use disloclab::density::EnergyDensity;
use disloclab::experiments::config::Config;
use disloclab::experiments::{
    cell_convergence_sweep, compactness_diagnostic, limit_field, recovery_sequence,
    single_scaling_sweep,
};
use disloclab::geometry::{BurgersVector, ModelManifold};
use disloclab::io::{
    write_csv, write_json_report, write_mesh_text, write_positions_csv, write_q_binary,
};
use disloclab::lattice::{certify_cutoff, sigma, verify_sigma_properties, QuadForm2};
use disloclab::solve::{minimize, Configuration, ImplantedBody, MinimizeOutcome};

#[derive(Parser)]
#[command(name = "disloclab", version, about = "Edge-dislocation numerical laboratory")]
struct Cli {
    /// Experiment configuration file (JSON)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for reports and artifacts
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Seed for randomized suites
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker thread count (default: all cores)
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Verify acceptance-style invariants and exit 4 on violation
    #[arg(long, global = true)]
    check: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the quadratic cell problem over a delta ladder
    Cell(CellArgs),
    /// Lattice self-energy: values, property suite, cutoff certificate
    Sigma,
    /// Assemble a multi-dislocation body for one regime step
    Build(BuildArgs),
    /// Minimize the elastic energy of a body artifact or model manifold
    Minimize(MinimizeArgs),
    /// Single-dislocation energy scaling sweep and cell convergence sweep
    SweepScaling(SweepArgs),
    /// Full Gamma-limit recovery experiment over the configured ladder
    GammaLimit,
    /// Compactness, deviation and rigidity diagnostics on the finest step
    Diagnose,
}

#[derive(Args)]
struct CellArgs {
    /// Burgers vector as "vx,vy"
    #[arg(long, default_value = "1,0")]
    burgers: String,
    /// Comma-separated delta ladder
    #[arg(long, default_value = "1e-2,3e-3,1e-3")]
    deltas: String,
    #[arg(long, default_value_t = 16)]
    radial_per_decade: usize,
    #[arg(long, default_value_t = 64)]
    angular: usize,
}

#[derive(Args)]
struct BuildArgs {
    /// Index into the configured epsilon ladder
    #[arg(long, default_value_t = 0)]
    step: usize,
}

#[derive(Args)]
struct MinimizeArgs {
    /// Directory holding body_mesh.txt and body_q.bin from `build`
    #[arg(long)]
    body: Option<PathBuf>,
    /// Model-manifold Burgers vector "vx,vy" (alternative to --body)
    #[arg(long)]
    burgers: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    r_outer: f64,
    #[arg(long, default_value_t = 16)]
    radial_per_decade: usize,
    #[arg(long, default_value_t = 48)]
    angular: usize,
}

#[derive(Args)]
struct SweepArgs {
    /// Burgers direction as "vx,vy"
    #[arg(long, default_value = "1,0")]
    direction: String,
    /// Comma-separated magnitude ladder
    #[arg(long, default_value = "1e-3,3e-3,1e-2")]
    magnitudes: String,
    #[arg(long, default_value_t = 1.0)]
    r_outer: f64,
    #[arg(long, default_value_t = 12)]
    radial_per_decade: usize,
    #[arg(long, default_value_t = 40)]
    angular: usize,
    /// Also run the cell convergence sweep at this delta
    #[arg(long)]
    cell_delta: Option<f64>,
}

enum CliError {
    /// exit 2: configuration or input problem
    Config(String),
    /// exit 3: numerical failure
    Numeric(String),
    /// exit 4: acceptance check failed in --check mode
    Check(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Check(_) => 4,
        }
    }
    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Numeric(m) | CliError::Check(m) => m,
        }
    }
}

fn config_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Config(e.to_string())
}

fn numeric_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Numeric(e.to_string())
}

fn parse_vector(text: &str, flag: &str) -> Result<Vector2<f64>, CliError> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 2 {
        return Err(CliError::Config(format!("{flag}: expected \"vx,vy\", got {text:?}")));
    }
    let x = parts[0].trim().parse().map_err(|e| CliError::Config(format!("{flag}: {e}")))?;
    let y = parts[1].trim().parse().map_err(|e| CliError::Config(format!("{flag}: {e}")))?;
    Ok(Vector2::new(x, y))
}

fn parse_ladder(text: &str, flag: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|s| s.trim().parse().map_err(|e| CliError::Config(format!("{flag}: {e}"))))
        .collect()
}

fn load_config(cli: &Cli) -> Result<Config, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required for this subcommand".into()))?;
    Config::load(path).map_err(config_err)
}

/// Fit the quadratic self-energy form I0 from cell-problem ladders over
/// three directions. This is the bridge from the cell module to the
/// lattice program and the measure approximation.
fn fit_iquad(density: &EnergyDensity) -> Result<QuadForm2, CliError> {
    let quad = density.hessian_at_identity();
    let dirs = [
        Vector2::new(1.0, 0.0),
        Vector2::new(0.0, 1.0),
        Vector2::new(std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2),
    ];
    let res = CellResolution { radial_per_decade: 8, angular: 32 };
    let mut samples = Vec::new();
    for v in dirs {
        let ladder: Result<Vec<CellResult>, _> = [1e-2, 3e-3, 1e-3]
            .iter()
            .map(|&d| solve_cell(v, d, &quad, res).map(|(r, _)| r))
            .collect();
        let fit = extrapolate_izero(&ladder.map_err(numeric_err)?).map_err(numeric_err)?;
        samples.push((v, fit.izero));
    }
    fit_izero_form(&samples).map_err(numeric_err)
}

fn cell_json(r: &CellResult) -> serde_json::Value {
    json!({
        "delta": r.delta,
        "value": r.value_delta,
        "mesh_resolution": r.mesh_resolution,
        "residuals": {
            "galerkin": r.residuals.galerkin,
            "max_triangle_circulation": r.residuals.max_triangle_circulation,
        },
    })
}

fn run_cell(cli: &Cli, args: &CellArgs) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    let density = cfg.density();
    let quad = density.hessian_at_identity();
    let v = parse_vector(&args.burgers, "--burgers")?;
    let deltas = parse_ladder(&args.deltas, "--deltas")?;
    let res = CellResolution { radial_per_decade: args.radial_per_decade, angular: args.angular };

    let mut results = Vec::new();
    let mut field = None;
    for &d in &deltas {
        let (r, f) = solve_cell(v, d, &quad, res).map_err(numeric_err)?;
        results.push(r);
        field = Some(f);
    }
    let fit = extrapolate_izero(&results).map_err(numeric_err)?;

    let report = json!({
        "burgers": [v[0], v[1]],
        "rows": results.iter().map(cell_json).collect::<Vec<_>>(),
        "extrapolation": {
            "izero": fit.izero,
            "slope": fit.slope,
            "residual": fit.residual,
            "monotone": fit.monotone,
        },
    });
    write_json_report(&cli.out.join("cell.json"), &report).map_err(numeric_err)?;

    // strain field samples at element centroids of the finest ladder point
    if let Some(f) = field {
        let rows: Vec<Vec<f64>> = (0..f.mesh.n_triangles())
            .map(|t| {
                let c = f.mesh.centroid(t);
                let b = f.eval(t, c);
                vec![c[0], c[1], b[(0, 0)], b[(0, 1)], b[(1, 0)], b[(1, 1)]]
            })
            .collect();
        write_csv(
            &cli.out.join("cell_field.csv"),
            &["x", "y", "b11", "b12", "b21", "b22"],
            &rows,
        )
        .map_err(numeric_err)?;
    }

    if cli.check && !fit.monotone {
        return Err(CliError::Check("cell ladder values are not monotone in delta".into()));
    }
    println!("cell: izero = {} (fit residual {})", fit.izero, fit.residual);
    Ok(())
}

fn run_sigma(cli: &Cli) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    let density = cfg.density();
    let iquad = fit_iquad(&density)?;
    let lattice = cfg.lattice(&iquad);

    let probes = [
        Vector2::new(1.0, 0.0),
        Vector2::new(0.0, 1.0),
        Vector2::new(1.0, 1.0),
        Vector2::new(-2.0, 1.0),
    ];
    let mut values = Vec::new();
    for v in probes {
        let s = sigma(&lattice, &iquad, v).map_err(numeric_err)?;
        values.push(json!({
            "v": [v[0], v[1]],
            "value": s.value,
            "decomposition": s.decomposition
                .iter()
                .map(|(u, w)| json!({"generator": [u[0], u[1]], "weight": w}))
                .collect::<Vec<_>>(),
        }));
    }
    let suite = verify_sigma_properties(&lattice, &iquad, 1000, cli.seed).map_err(numeric_err)?;
    let cutoff_change = certify_cutoff(&lattice, &iquad, &probes).map_err(numeric_err)?;

    let report = json!({
        "cutoff_k": lattice.cutoff_k,
        "values": values,
        "properties": {
            "samples": suite.samples,
            "max_homogeneity_violation": suite.max_homogeneity_violation,
            "max_convexity_violation": suite.max_convexity_violation,
            "max_upper_bound_violation": suite.max_upper_bound_violation,
            "pass": suite.pass(),
        },
        "cutoff_doubling_relative_change": cutoff_change,
    });
    write_json_report(&cli.out.join("sigma.json"), &report).map_err(numeric_err)?;

    if cli.check && (!suite.pass() || cutoff_change > 1e-9) {
        return Err(CliError::Check(format!(
            "self-energy certificate failed: suite pass = {}, cutoff change = {}",
            suite.pass(),
            cutoff_change
        )));
    }
    println!("sigma: {} probes, suite pass = {}", probes.len(), suite.pass());
    Ok(())
}

fn deviation_json(body: &disloclab::assembly::AssembledBody) -> Result<serde_json::Value, CliError> {
    let dev = deviation_report(body).map_err(numeric_err)?;
    Ok(json!({
        "near_field_max": dev.near_field_max,
        "near_field_constant": dev.near_field_constant,
        "far_field_max": dev.far_field_max,
        "far_field_constant": dev.far_field_constant,
        "integral": dev.integral,
        "integral_bound": dev.integral_bound,
        "h_minus_one_sq": dev.h_minus_one_sq,
        "bilipschitz": [dev.bilipschitz.0, dev.bilipschitz.1],
    }))
}

fn run_build(cli: &Cli, args: &BuildArgs) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    if args.step >= cfg.regime.eps.len() {
        return Err(CliError::Config(format!(
            "--step {} out of range for a {}-point ladder",
            args.step,
            cfg.regime.eps.len()
        )));
    }
    let density = cfg.density();
    let iquad = fit_iquad(&density)?;
    let lattice = cfg.lattice(&iquad);
    let omega = cfg.polygon();
    let target = cfg.measure_target();
    let eps = cfg.regime.eps[args.step];
    let n_eps = cfg.regime.n_eps(args.step);

    let measure =
        approximate_measure(&target, &omega, n_eps, eps, &lattice, &iquad).map_err(numeric_err)?;
    let h = (measure.smear_radius / 2.0).min(1.0 / 16.0);
    let body = build_implant(&measure, h).map_err(numeric_err)?;

    write_mesh_text(&cli.out.join("body_mesh.txt"), &body.mesh).map_err(numeric_err)?;
    write_q_binary(&cli.out.join("body_q.bin"), &body.q_elems).map_err(numeric_err)?;
    let report = json!({
        "eps": eps,
        "n_eps": n_eps,
        "atoms": measure.atoms.len(),
        "smear_radius": measure.smear_radius,
        "mesh": {"vertices": body.mesh.n_vertices(), "triangles": body.mesh.n_triangles()},
        "min_det": body.min_det,
        "deviation": deviation_json(&body)?,
    });
    write_json_report(&cli.out.join("build.json"), &report).map_err(numeric_err)?;
    if cli.check && body.min_det <= 0.0 {
        return Err(CliError::Check(format!("implant determinant {} <= 0", body.min_det)));
    }
    println!(
        "build: {} atoms, {} triangles, min det Q = {}",
        measure.atoms.len(),
        body.mesh.n_triangles(),
        body.min_det
    );
    Ok(())
}

fn minimize_outputs(cli: &Cli, out: &MinimizeOutcome) -> Result<(), CliError> {
    write_positions_csv(&cli.out.join("positions.csv"), &out.configuration.positions)
        .map_err(numeric_err)?;
    let trace: Vec<Vec<f64>> =
        out.energy_trace.iter().enumerate().map(|(i, e)| vec![i as f64, *e]).collect();
    write_csv(&cli.out.join("trace.csv"), &["iteration", "energy"], &trace)
        .map_err(numeric_err)?;
    let report = json!({
        "total": out.breakdown.total,
        "per_region": out.breakdown.per_region,
        "distortion": out.breakdown.distortion,
        "iterations": out.iterations,
    });
    write_json_report(&cli.out.join("minimize.json"), &report).map_err(numeric_err)
}

fn run_minimize(cli: &Cli, args: &MinimizeArgs) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    let density = cfg.density();
    let tol = cfg.tolerances();

    let (body, init) = match (&args.body, &args.burgers) {
        (Some(dir), None) => {
            let mesh = disloclab::io::read_mesh_text(&dir.join("body_mesh.txt"))
                .map_err(config_err)?;
            let q = disloclab::io::read_q_binary(&dir.join("body_q.bin")).map_err(config_err)?;
            if q.len() != mesh.triangles.len() {
                return Err(CliError::Config(format!(
                    "frame array has {} elements for {} triangles",
                    q.len(),
                    mesh.triangles.len()
                )));
            }
            let regions = vec![disloclab::solve::Region::Far; q.len()];
            let body = ImplantedBody { mesh, q_elems: q, regions };
            let init = Configuration::identity(&body);
            (body, init)
        }
        (None, Some(text)) => {
            let v = parse_vector(text, "--burgers")?;
            let m = ModelManifold::new(BurgersVector(v), args.r_outer).map_err(config_err)?;
            let decades = (args.r_outer / v.norm()).log10().max(0.5);
            let n_r = ((args.radial_per_decade as f64 * decades).ceil() as usize).max(4);
            let body = ImplantedBody::from_manifold(&m, n_r, args.angular).map_err(numeric_err)?;
            let init = Configuration::volterra(&body, &m);
            (body, init)
        }
        _ => {
            return Err(CliError::Config(
                "pass exactly one of --body <dir> or --burgers <vx,vy>".into(),
            ))
        }
    };
    let out = minimize(&body, &density, init, tol).map_err(numeric_err)?;
    minimize_outputs(cli, &out)?;
    println!("minimize: energy {} after {} iterations", out.breakdown.total, out.iterations);
    Ok(())
}

fn run_sweep(cli: &Cli, args: &SweepArgs) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    let density = cfg.density();
    let dir = parse_vector(&args.direction, "--direction")?;
    let mags = parse_ladder(&args.magnitudes, "--magnitudes")?;
    let report = single_scaling_sweep(
        dir,
        &mags,
        args.r_outer,
        &density,
        args.radial_per_decade,
        args.angular,
    )
    .map_err(numeric_err)?;
    write_json_report(&cli.out.join("scaling.json"), &report).map_err(numeric_err)?;
    let rows: Vec<Vec<f64>> = report
        .rows
        .iter()
        .map(|r| vec![r.magnitude, r.energy, r.log_factor, r.iterations as f64])
        .collect();
    write_csv(
        &cli.out.join("scaling.csv"),
        &["magnitude", "energy", "log_factor", "iterations"],
        &rows,
    )
    .map_err(numeric_err)?;

    if let Some(delta) = args.cell_delta {
        let res =
            CellResolution { radial_per_decade: args.radial_per_decade, angular: args.angular };
        let sweep =
            cell_convergence_sweep(dir, delta, args.r_outer, &cfg.regime.eps, &density, res)
                .map_err(numeric_err)?;
        write_json_report(&cli.out.join("cell_sweep.json"), &sweep).map_err(numeric_err)?;
        let rows: Vec<Vec<f64>> = sweep
            .rows
            .iter()
            .map(|r| vec![r.eps, r.minimized, r.ansatz, r.gap])
            .collect();
        write_csv(&cli.out.join("cell_sweep.csv"), &["eps", "minimized", "ansatz", "gap"], &rows)
            .map_err(numeric_err)?;
    }

    if cli.check && report.poor_fit {
        return Err(CliError::Check(format!("scaling fit residual {}", report.residual)));
    }
    println!(
        "sweep-scaling: kappa = {} (oracle {}), residual {}",
        report.kappa, report.oracle_kappa, report.residual
    );
    Ok(())
}

fn run_gamma(cli: &Cli) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    let density = cfg.density();
    let iquad = fit_iquad(&density)?;
    let lattice = cfg.lattice(&iquad);
    let omega = cfg.polygon();
    let target = cfg.measure_target();
    let (report, _) =
        recovery_sequence(&omega, &target, &cfg.regime, &lattice, &iquad, &density, false)
            .map_err(numeric_err)?;

    write_json_report(&cli.out.join("gamma.json"), &report).map_err(numeric_err)?;
    let rows: Vec<Vec<f64>> = report
        .rows
        .iter()
        .map(|r| vec![r.eps, r.e_self, r.e_elastic, r.e_total, r.lower, r.upper, r.gap_to_limit])
        .collect();
    write_csv(
        &cli.out.join("gamma.csv"),
        &["eps", "e_self", "e_elastic", "e_total", "lower", "upper", "gap_to_limit"],
        &rows,
    )
    .map_err(numeric_err)?;

    if cli.check {
        for r in &report.rows {
            let sum = r.e_self + r.e_elastic;
            if (sum - r.e_total).abs() > 1e-12 * r.e_total.abs().max(1e-30) {
                return Err(CliError::Check(format!(
                    "energy partition violated at eps {}: {} + {} != {}",
                    r.eps, r.e_self, r.e_elastic, r.e_total
                )));
            }
            if r.lower > r.e_total * (1.0 + 1e-12) || r.e_total > r.upper * (1.0 + 1e-12) {
                return Err(CliError::Check(format!(
                    "sandwich violated at eps {}: lower {} total {} upper {}",
                    r.eps, r.lower, r.e_total, r.upper
                )));
            }
        }
    }
    let gap = report.rows.last().map(|r| r.gap_to_limit).unwrap_or(0.0);
    println!(
        "gamma-limit: final gap to limit {} ({})",
        gap,
        if report.gap_flagged { "flagged" } else { "ok" }
    );
    Ok(())
}

fn run_diagnose(cli: &Cli) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    let density = cfg.density();
    let iquad = fit_iquad(&density)?;
    let lattice = cfg.lattice(&iquad);
    let omega = cfg.polygon();
    let target = cfg.measure_target();
    let (report, steps) =
        recovery_sequence(&omega, &target, &cfg.regime, &lattice, &iquad, &density, true)
            .map_err(numeric_err)?;
    let last = steps.len().checked_sub(1).ok_or_else(|| {
        CliError::Config("ladder produced no defected steps to diagnose".into())
    })?;
    let idx = cfg.regime.eps.len() - 1;
    let field = limit_field(&omega, &target, 1.0 / 32.0).map_err(numeric_err)?;
    let (limit, comp) = compactness_diagnostic(
        &steps[last],
        &target,
        cfg.regime.label(idx),
        cfg.regime.n_eps(idx),
        &field,
        32,
    );
    let fjm = disloclab::solve::uniform_fjm_probe(4, 0.02, 50, cli.seed, 1.0)
        .map_err(numeric_err)?;
    let out = json!({
        "eps": steps[last].eps,
        "regime": cfg.regime.label(idx),
        "curl_target": limit.curl_target,
        "rotation": [
            [limit.rotation[(0, 0)], limit.rotation[(0, 1)]],
            [limit.rotation[(1, 0)], limit.rotation[(1, 1)]],
        ],
        "compactness": {
            "curl_residuals": comp.curl_residuals,
            "j_recovery_error": comp.j_recovery_error,
            "burgers_square_mass": comp.burgers_square_mass,
        },
        "fjm_probe_max_ratio": fjm,
        "gap_flagged": report.gap_flagged,
    });
    write_json_report(&cli.out.join("diagnose.json"), &out).map_err(numeric_err)?;
    println!(
        "diagnose: J recovery error {}, worst FJM ratio {}",
        comp.j_recovery_error, fjm
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(config_err)?;
    }
    std::fs::create_dir_all(&cli.out).map_err(numeric_err)?;
    match &cli.command {
        Command::Cell(a) => run_cell(cli, a),
        Command::Sigma => run_sigma(cli),
        Command::Build(a) => run_build(cli, a),
        Command::Minimize(a) => run_minimize(cli, a),
        Command::SweepScaling(a) => run_sweep(cli, a),
        Command::GammaLimit => run_gamma(cli),
        Command::Diagnose => run_diagnose(cli),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
