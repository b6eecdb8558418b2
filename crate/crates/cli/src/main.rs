//! Command-line runner: simulate, trajectory, converge, scaling, weakcheck.

mod rundir;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rvm1d5::confinement::ConfinementProfile;
use rvm1d5::harness::{
    convergence_study, reflection_scaling_study, scaling_sample_states, ExperimentPlan,
};
use rvm1d5::pic::{run, SimulationConfig};
use rvm1d5::trajectory::{
    integrate, reflection_time_ode, reflection_time_quadrature, PhasePoint, Species,
    SyntheticFields, ZeroFields,
};
use rvm1d5::weakform::{
    maxwell_weak_residuals, vlasov_weak_residual, xi_extra_term, SpaceTestFunction, TestFunction,
};
use serde::Serialize;
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::time::Instant;

#[derive(Parser)]
#[command(
    name = "rvm1d5",
    version,
    about = "1.5D Vlasov-Maxwell mirror/specular solver"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation described by a TOML config into an output directory.
    Simulate(SimulateArgs),
    /// Integrate a single layer trajectory and report its reflection.
    Trajectory(TrajectoryArgs),
    /// Run the mirror-vs-specular N ladder described by a plan file.
    Converge(ConvergeArgs),
    /// Measure the perturbed-reflection scalings over an N ladder.
    Scaling(ScalingArgs),
    /// Evaluate weak-form residuals of recorded run directories.
    Weakcheck(WeakcheckArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Force fixed-order (bit-reproducible) reductions regardless of config.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args)]
struct TrajectoryArgs {
    /// Use the model system (no internal fields).
    #[arg(long, default_value_t = true)]
    model: bool,
    /// Use smooth synthetic internal fields instead of the model system.
    #[arg(long)]
    synthetic: bool,
    #[arg(long = "N")]
    n: u32,
    #[arg(long, allow_hyphen_values = true)]
    x: f64,
    /// Momentum components "v1,v2".
    #[arg(long, allow_hyphen_values = true)]
    v: String,
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    #[arg(long, default_value = "ion")]
    species: String,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 0.0)]
    t0: f64,
    /// Write the integrated path as CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ConvergeArgs {
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScalingArgs {
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated ladder, e.g. 16,32,64,128.
    #[arg(long, default_value = "16,32,64,128,256,512,1024")]
    n_list: String,
    #[arg(long, default_value = "ion")]
    species: String,
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
}

#[derive(Args)]
struct WeakcheckArgs {
    /// One or more run directories (several give the xi ladder).
    #[arg(long, required = true, num_args = 1..)]
    run: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_species(s: &str) -> Result<Species> {
    match s {
        "ion" => Ok(Species::Ion),
        "electron" => Ok(Species::Electron),
        other => bail!("unknown species `{other}` (expected ion or electron)"),
    }
}

/// Strict config parsing: unknown keys are rejected with the offending name.
fn parse_config(path: &PathBuf) -> Result<SimulationConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let config: SimulationConfig = toml::from_str(&text).context("parsing config")?;
    config.validate().map_err(|e| anyhow::anyhow!("{e}"))?;
    Ok(config)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let mut config = parse_config(&args.config)?;
    if args.deterministic {
        config.deterministic = true;
    }
    let start = Instant::now();
    let output = run(&config).map_err(|e| anyhow::anyhow!("{e}"))?;
    let manifest = rundir::write_run(&args.out, &output, start.elapsed().as_secs_f64())?;
    println!(
        "{}",
        serde_json::json!({
            "out": args.out,
            "steps": (output.t_final / output.dt).round() as u64,
            "snapshots": output.times.len(),
            "t_final": output.t_final,
            "config_hash": manifest.config_hash,
        })
    );
    Ok(())
}

#[derive(Serialize)]
struct ReflectionJson {
    t_star: f64,
    /// Signed t* - t (negative when the crossing lies in the past).
    dt: f64,
    dt_abs: f64,
    x: f64,
    v1: f64,
    v2: f64,
    steps: usize,
    residual: f64,
    quadrature_dt: Option<f64>,
}

fn cmd_trajectory(args: &TrajectoryArgs) -> Result<()> {
    let profile = ConfinementProfile::singular(args.alpha).map_err(|e| anyhow::anyhow!("{e}"))?;
    let species = parse_species(&args.species)?;
    let (v1, v2) = {
        let parts: Vec<&str> = args.v.split(',').map(str::trim).collect();
        if parts.len() != 2 {
            bail!("--v expects `v1,v2`");
        }
        (parts[0].parse::<f64>()?, parts[1].parse::<f64>()?)
    };
    let p = PhasePoint::new(args.x, v1, v2);
    let synthetic = SyntheticFields::unit();
    let fields: &dyn rvm1d5::trajectory::FieldSampler = if args.synthetic {
        &synthetic
    } else {
        &ZeroFields
    };

    let refl = reflection_time_ode(&p, args.t0, fields, &profile, args.n, species, args.tol)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let quadrature_dt = if args.synthetic {
        None
    } else {
        reflection_time_quadrature(args.x, v1, v2, &profile, args.n, species).ok()
    };

    if let Some(csv) = &args.csv {
        let path = integrate(
            &p,
            args.t0,
            refl.t_star,
            fields,
            &profile,
            args.n,
            species,
            args.tol,
        )
        .map_err(|e| anyhow::anyhow!("{e}"))?;
        let mut s = String::from("t,x,v1,v2,speed,Phi,psi_ext\n");
        for sample in &path {
            writeln!(
                s,
                "{},{},{},{},{},{},{}",
                sample.t,
                sample.point.x,
                sample.point.v1,
                sample.point.v2,
                sample.point.speed(),
                sample.phi,
                profile.psiext(args.n, sample.point.x)
            )?;
        }
        fs::write(csv, s)?;
    }

    let q = refl.point_at_tstar;
    println!(
        "{}",
        serde_json::to_string_pretty(&ReflectionJson {
            t_star: refl.t_star,
            dt: refl.t_star - args.t0,
            dt_abs: (refl.t_star - args.t0).abs(),
            x: q.x,
            v1: q.v1,
            v2: q.v2,
            steps: refl.steps,
            residual: refl.residual,
            quadrature_dt,
        })?
    );
    Ok(())
}

fn cmd_converge(args: &ConvergeArgs) -> Result<()> {
    let text = fs::read_to_string(&args.plan)
        .with_context(|| format!("reading {}", args.plan.display()))?;
    let plan: ExperimentPlan = toml::from_str(&text).context("parsing plan")?;
    plan.validate().map_err(|e| anyhow::anyhow!("{e}"))?;
    let report = convergence_study(&plan).map_err(|e| anyhow::anyhow!("{e}"))?;
    fs::create_dir_all(&args.out)?;
    fs::write(
        args.out.join("convergence_report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    println!(
        "{}",
        serde_json::json!({
            "out": args.out.join("convergence_report.json"),
            "field_gap_slope": report.field_gap_fit.slope,
            "xi_slope": report.xi_fit.slope,
            "worst_gap_ratio": report.worst_gap_ratio,
        })
    );
    Ok(())
}

fn cmd_scaling(args: &ScalingArgs) -> Result<()> {
    let species = parse_species(&args.species)?;
    let n_list: Vec<u32> = args
        .n_list
        .split(',')
        .map(|s| s.trim().parse::<u32>().map_err(Into::into))
        .collect::<Result<_>>()?;
    let states = scaling_sample_states();
    let table = reflection_scaling_study(&n_list, &states, species, args.tol)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    fs::create_dir_all(&args.out)?;

    let mut s = String::from("n,dt_abs,dx_gap,dv1_gap,dv2_gap,det_gap,offdiag\n");
    for r in &table.rows {
        writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.n, r.dt_abs, r.dx_gap, r.dv1_gap, r.dv2_gap, r.det_gap, r.offdiag
        )?;
    }
    fs::write(args.out.join("scaling_table.csv"), s)?;

    let mut s = String::from("quantity,slope,intercept,r_squared\n");
    for (name, fit) in [
        ("dt", table.dt_fit),
        ("dx", table.dx_fit),
        ("dv1", table.dv1_fit),
        ("dv2", table.dv2_fit),
        ("det", table.det_fit),
        ("offdiag", table.offdiag_fit),
    ] {
        writeln!(
            s,
            "{name},{},{},{}",
            fit.slope, fit.intercept, fit.r_squared
        )?;
    }
    fs::write(args.out.join("scaling_slopes.csv"), s)?;
    println!(
        "{}",
        serde_json::json!({
            "out": args.out,
            "dt_slope": table.dt_fit.slope,
            "dx_slope": table.dx_fit.slope,
        })
    );
    Ok(())
}

fn cmd_weakcheck(args: &WeakcheckArgs) -> Result<()> {
    fs::create_dir_all(&args.out)?;
    let mut xi_rows = Vec::new();
    let mut report = serde_json::Map::new();
    for dir in &args.run {
        let output = rundir::read_run(dir)?;
        let t_final = output.t_final;
        let mut entry = serde_json::Map::new();

        if output.config.output.particles {
            let mode = output.config.mode;
            let mut vlasov = Vec::new();
            for (i, alpha) in TestFunction::canonical_panel(t_final).iter().enumerate() {
                let r = vlasov_weak_residual(&output, alpha, mode, Species::Ion)
                    .map_err(|e| anyhow::anyhow!("{e}"))?;
                vlasov.push(serde_json::json!({
                    "alpha": i,
                    "residual": r.residual,
                    "scale": r.scale,
                }));
            }
            entry.insert("vlasov".into(), vlasov.into());
        }

        let phis = SpaceTestFunction::maxwell_panel(t_final);
        let rm = maxwell_weak_residuals(&output, &phis).map_err(|e| anyhow::anyhow!("{e}"))?;
        entry.insert("maxwell".into(), serde_json::json!(rm));

        if output.layer_samples.is_some() && output.config.mode.is_confined() {
            let profile = output
                .config
                .profile
                .build()
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            let alpha = TestFunction::xi_panel(t_final)[0];
            let xi = xi_extra_term(&output, &profile, output.config.n, &alpha, Species::Ion)
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            entry.insert("xi".into(), serde_json::json!(xi));
            xi_rows.push((output.config.n, xi));
        }
        report.insert(dir.display().to_string(), entry.into());
    }
    fs::write(
        args.out.join("weak_residuals.json"),
        serde_json::to_string_pretty(&serde_json::Value::Object(report))?,
    )?;
    if !xi_rows.is_empty() {
        xi_rows.sort_by_key(|r| r.0);
        let mut s = String::from("n,xi\n");
        for (n, xi) in &xi_rows {
            writeln!(s, "{n},{xi}")?;
        }
        fs::write(args.out.join("xi_ladder.csv"), s)?;
    }
    println!(
        "{}",
        serde_json::json!({ "out": args.out.join("weak_residuals.json") })
    );
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Trajectory(a) => cmd_trajectory(a),
        Command::Converge(a) => cmd_converge(a),
        Command::Scaling(a) => cmd_scaling(a),
        Command::Weakcheck(a) => cmd_weakcheck(a),
    };
    if let Err(e) = result {
        eprintln!("{}", serde_json::json!({ "error": format!("{e:#}") }));
        std::process::exit(1);
    }
}
