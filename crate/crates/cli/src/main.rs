//! Command-line driver: verification campaigns, prescribed-curvature
//! solves, diagnostics, and report merging.
//!
//! Exit codes: 0 all checks passed; 1 a counterexample or check failure was
//! found (and reported); 2 usage or configuration error; 3 runtime failure
//! (non-convergence, sampling exhaustion, solver breakdown).

mod config;

use clap::{Args, Parser, Subcommand};
use config::Overlay;
use garding::concavity::{self, VerifyParams};
use garding::cone;
use garding::diagnostics;
use garding::error::Error;
use garding::geometry::{build_grid, shape_data, RadialGraph, StarBody};
use garding::report::{merge_reports_csv, strip_elapsed, to_json_pretty, write_json, RunEnvelope};
use garding::solver::{self, JacobianMode, PrescribedRhs, SolverOpts};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Parser)]
#[command(name = "garding", version, about = "Garding cone algebra, concavity verification and prescribed-curvature solves")]
struct Cli {
    /// Flat key-value config file; flags override its entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for reports and artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for campaign loops (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Randomized verification of the concavity inequality.
    VerifyConcavity(VerifyConcavityArgs),
    /// Cone inequality suite on sampled admissible vectors.
    VerifyCone(VerifyConeArgs),
    /// Dump admissible samples as CSV.
    Sample(SampleArgs),
    /// Solve the prescribed curvature equation on a radial graph.
    Solve(SolveArgs),
    /// Test-function diagnostics on a built-in body or a stored graph.
    Diagnose(DiagnoseArgs),
    /// Merge campaign JSON reports into one CSV summary.
    Report(ReportArgs),
}

#[derive(Args)]
struct VerifyConcavityArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long = "f-max")]
    f_max: Option<f64>,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated multiplicities cycled over trials.
    #[arg(long = "multiplicity-schedule")]
    multiplicity_schedule: Option<String>,
    /// Sample just inside the threshold instead (exploration mode).
    #[arg(long = "explore-below-k0")]
    explore_below_k0: bool,
}

#[derive(Args)]
struct VerifyConeArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    /// Number of samples to draw.
    #[arg(long)]
    count: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Force the smallest entry below -T (requires k = n-1).
    #[arg(long = "force-negative-min")]
    force_negative_min: Option<f64>,
    /// Force a bitwise-equal top block of this size.
    #[arg(long)]
    multiplicity: Option<usize>,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long = "max-iter")]
    max_iter: Option<usize>,
    /// Right-hand side selector: constant:<c>,
    /// axis-perturbed:<base>,<amp>[,<axis>] or
    /// normal-perturbed:<base>,<amp>[,<axis>].
    #[arg(long)]
    rhs: Option<String>,
    /// Radius of the round initial guess.
    #[arg(long)]
    r0: Option<f64>,
    /// Enable the homotopy from the matched constant data.
    #[arg(long)]
    homotopy: bool,
    /// Jacobian assembly: colored (default) or dense.
    #[arg(long)]
    jacobian: Option<String>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    resolution: Option<usize>,
    /// Built-in body: sphere:<r>, ellipsoid:<a,b,..>,
    /// offset-sphere:<r,cx,cy,..>.
    #[arg(long)]
    body: Option<String>,
    /// Load a graph CSV instead of sampling a built-in body.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Exponent of the support-function term.
    #[arg(long = "n-param")]
    n_param: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Enables the case split against the threshold for this bound.
    #[arg(long = "f-max")]
    f_max: Option<f64>,
}

#[derive(Args)]
struct ReportArgs {
    /// Campaign JSON files to merge.
    inputs: Vec<PathBuf>,
    /// Summary CSV path (appended to if it exists).
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn main() {
    let argv: Vec<String> = std::env::args().collect();
    std::process::exit(run(argv));
}

fn run(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Some(w) = cli.workers {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
    }
    match dispatch(&cli, argv) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Domain(_) | Error::Parse(_) => 2,
                _ => 3,
            }
        }
    }
}

fn dispatch(cli: &Cli, argv: Vec<String>) -> Result<i32, Error> {
    let overlay = Overlay::load(cli.config.as_deref())?;
    let out_dir = cli
        .out
        .clone()
        .or_else(|| overlay.eff_opt::<PathBuf>(None, "out").ok().flatten())
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out_dir)?;
    let started = Instant::now();

    match &cli.command {
        Command::VerifyConcavity(args) => {
            let n = overlay.eff(args.n, "n", 3usize)?;
            let f_max = overlay.eff(args.f_max, "f-max", 7.0)?;
            let trials = overlay.eff(args.trials, "trials", 100_000u64)?;
            let seed = overlay.eff(args.seed, "seed", 42u64)?;
            let schedule_raw =
                overlay.eff_opt(args.multiplicity_schedule.clone(), "multiplicity-schedule")?;
            let explore = overlay.eff_switch(args.explore_below_k0, "explore-below-k0")?;
            let mut params = VerifyParams::new(n, f_max, trials, seed);
            params.explore_below_threshold = explore;
            if let Some(raw) = schedule_raw {
                params.multiplicity_schedule = parse_schedule(&raw)?;
            }
            let report = concavity::verify(&params)?;
            let violations = report.violations.len();
            if violations > 0 {
                let mut csv = Vec::new();
                concavity::write_trials_csv(&mut csv, n, &report.violations)?;
                std::fs::write(out_dir.join("counterexamples.csv"), csv)?;
            }
            emit(
                &out_dir.join("concavity-campaign.json"),
                "concavity-campaign",
                argv,
                &overlay,
                report,
                started,
            )?;
            Ok(if violations > 0 { 1 } else { 0 })
        }
        Command::VerifyCone(args) => {
            let n = overlay.eff(args.n, "n", 3usize)?;
            let k = overlay.eff(args.k, "k", n.saturating_sub(1).max(1))?;
            let trials = overlay.eff(args.trials, "trials", 10_000u64)?;
            let seed = overlay.eff(args.seed, "seed", 42u64)?;
            let report = cone::check_cone_inequalities(n, k, trials, seed)?;
            let failed = report.negative_part_violations > 0
                || report.deleted_positivity_violations > 0
                || !(report.cnk_estimate > 0.0);
            emit(
                &out_dir.join("cone-campaign.json"),
                "cone-campaign",
                argv,
                &overlay,
                report,
                started,
            )?;
            Ok(if failed { 1 } else { 0 })
        }
        Command::Sample(args) => {
            let n = overlay.eff(args.n, "n", 3usize)?;
            let k = overlay.eff(args.k, "k", n.saturating_sub(1).max(1))?;
            let count = overlay.eff(args.count, "count", 10u64)?;
            let seed = overlay.eff(args.seed, "seed", 42u64)?;
            let opts = cone::SampleOpts {
                force_negative_min: overlay.eff_opt(args.force_negative_min, "force-negative-min")?,
                multiplicity: overlay.eff_opt(args.multiplicity, "multiplicity")?,
                ..Default::default()
            };
            let mut lambdas = Vec::new();
            for i in 0..count {
                lambdas.push(cone::sample_gamma(n, k, &opts, garding::derive_seed(seed, i))?.lambda);
            }
            let mut csv = Vec::new();
            cone::write_samples_csv(&mut csv, &lambdas)?;
            std::fs::write(out_dir.join("samples.csv"), csv)?;
            Ok(0)
        }
        Command::Solve(args) => {
            let n = overlay.eff(args.n, "n", 3usize)?;
            let k = overlay.eff(args.k, "k", n.saturating_sub(1).max(1))?;
            let resolution = overlay.eff(args.resolution, "resolution", 16usize)?;
            let tol = overlay.eff(args.tol, "tol", 1e-9)?;
            let max_iter = overlay.eff(args.max_iter, "max-iter", 50usize)?;
            let rhs_spec = overlay.eff(args.rhs.clone(), "rhs", "constant:0.75".to_string())?;
            let r0 = overlay.eff(args.r0, "r0", 1.5f64)?;
            let homotopy = overlay.eff_switch(args.homotopy, "homotopy")?;
            let jacobian = overlay.eff(args.jacobian.clone(), "jacobian", "colored".to_string())?;

            let rhs = PrescribedRhs::parse(&rhs_spec, n, k)?;
            let grid = build_grid(n, resolution)?;
            let initial = RadialGraph::constant(grid, r0)?;
            let opts = SolverOpts {
                k: Some(k),
                tol,
                max_iter,
                homotopy,
                jacobian: match jacobian.as_str() {
                    "colored" => JacobianMode::ColoredSparse,
                    "dense" => JacobianMode::DenseColumns,
                    other => {
                        return Err(Error::Parse(format!(
                            "jacobian must be colored or dense, got `{other}`"
                        )))
                    }
                },
                ..Default::default()
            };
            let result = solver::solve(&rhs, &initial, &opts)?;
            let mut graph_csv = Vec::new();
            result.graph.write_csv(&mut graph_csv)?;
            std::fs::write(out_dir.join("graph.csv"), graph_csv)?;
            let payload = SolvePayload {
                n,
                k,
                resolution,
                tol,
                max_iter,
                rhs: rhs_spec,
                r0,
                homotopy,
                iterations: result.iterations,
                residual_max: result.residual_max,
                kappa_max: result.kappa_max,
                admissible: result.admissible,
                estimate: result.estimate_report,
            };
            emit(
                &out_dir.join("solve.json"),
                "solve",
                argv,
                &overlay,
                payload,
                started,
            )?;
            Ok(0)
        }
        Command::Diagnose(args) => {
            let n_param = overlay.eff(args.n_param, "n-param", 5.0)?;
            let alpha = overlay.eff(args.alpha, "alpha", 0.1)?;
            let f_max = overlay.eff_opt(args.f_max, "f-max")?;
            let graph = match overlay.eff_opt(args.graph.clone(), "graph")? {
                Some(path) => {
                    let file = std::fs::File::open(path)?;
                    RadialGraph::read_csv(std::io::BufReader::new(file))?
                }
                None => {
                    let n = overlay.eff(args.n, "n", 2usize)?;
                    let resolution = overlay.eff(args.resolution, "resolution", 16usize)?;
                    let body_spec =
                        overlay.eff(args.body.clone(), "body", "sphere:2".to_string())?;
                    let body = parse_body(&body_spec, n)?;
                    RadialGraph::from_body(build_grid(n, resolution)?, &body)?
                }
            };
            let shape = shape_data(&graph)?;
            let report = diagnostics::diagnose(&shape, n_param, alpha, f_max)?;
            emit(
                &out_dir.join("diagnostics.json"),
                "diagnostics",
                argv,
                &overlay,
                report,
                started,
            )?;
            Ok(0)
        }
        Command::Report(args) => {
            if args.inputs.is_empty() {
                return Err(Error::Parse("report needs at least one input JSON".into()));
            }
            let mut values = Vec::new();
            for path in &args.inputs {
                let text = std::fs::read_to_string(path)?;
                values.push(serde_json::from_str(&text)?);
            }
            let csv_path = args
                .csv
                .clone()
                .unwrap_or_else(|| out_dir.join("summary.csv"));
            let existing = std::fs::read_to_string(&csv_path).ok();
            let merged = merge_reports_csv(&values, existing.as_deref())?;
            std::fs::write(&csv_path, merged)?;
            Ok(0)
        }
    }
}

#[derive(Serialize)]
struct SolvePayload {
    n: usize,
    k: usize,
    resolution: usize,
    tol: f64,
    max_iter: usize,
    rhs: String,
    r0: f64,
    homotopy: bool,
    iterations: usize,
    residual_max: f64,
    kappa_max: f64,
    admissible: bool,
    estimate: solver::EstimateReport,
}

fn emit<T: Serialize>(
    path: &Path,
    kind: &str,
    argv: Vec<String>,
    overlay: &Overlay,
    payload: T,
    started: Instant,
) -> Result<(), Error> {
    let envelope = RunEnvelope {
        kind: kind.to_string(),
        argv,
        config_text: overlay.text.clone(),
        payload,
        elapsed_seconds: started.elapsed().as_secs_f64(),
    };
    write_json(path, &envelope)?;
    // one line to stdout so campaigns are scriptable without jq
    let text = to_json_pretty(&envelope)?;
    println!(
        "{kind}: wrote {} ({} report bytes)",
        path.display(),
        strip_elapsed(&text).len()
    );
    Ok(())
}

fn parse_schedule(raw: &str) -> Result<Vec<usize>, Error> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| Error::Parse(format!("bad multiplicity `{s}`: {e}")))
        })
        .collect()
}

fn parse_body(spec: &str, n: usize) -> Result<StarBody, Error> {
    let (name, args) = spec
        .split_once(':')
        .ok_or_else(|| Error::Parse(format!("body selector `{spec}` needs name:params")))?;
    let nums: Vec<f64> = args
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("bad body parameter `{s}`: {e}")))
        })
        .collect::<Result<_, _>>()?;
    match name {
        "sphere" => {
            if nums.len() != 1 {
                return Err(Error::Parse("sphere takes one radius".into()));
            }
            Ok(StarBody::Sphere { radius: nums[0] })
        }
        "ellipsoid" => {
            if nums.len() != n + 1 {
                return Err(Error::Parse(format!(
                    "ellipsoid takes {} semi-axes for n = {n}",
                    n + 1
                )));
            }
            Ok(StarBody::ellipsoid(&nums))
        }
        "offset-sphere" => {
            if nums.len() != n + 2 {
                return Err(Error::Parse(format!(
                    "offset-sphere takes radius plus {} center coordinates",
                    n + 1
                )));
            }
            Ok(StarBody::OffsetSphere {
                radius: nums[0],
                center: nums[1..].to_vec(),
            })
        }
        other => Err(Error::Parse(format!("unknown body `{other}`"))),
    }
}
