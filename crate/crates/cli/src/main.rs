use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::{json, Value};

use eqmeasure::dynamics::{self, EvolveOptions, Trajectory};
use eqmeasure::fekete;
use eqmeasure::polycore::{ExternalField, RealPolynomial};
use eqmeasure::quartic::{self, QuarticField};
use eqmeasure::Complex64;

#[derive(Parser)]
#[command(name = "eqmeasure", version, about = "Equilibrium measures in polynomial external fields")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve the support in t; writes trajectory.csv and events.json.
    Evolve {
        #[command(flatten)]
        field: FieldArgs,
        #[command(flatten)]
        run: RunArgs,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Scenario and critical configurations of a quartic field.
    Classify {
        #[command(flatten)]
        field: FieldArgs,
    },
    /// Scaling fit and Robin-derivative jump at one event.
    Probe {
        #[command(flatten)]
        field: FieldArgs,
        #[command(flatten)]
        run: RunArgs,
        /// Index of the event in the trajectory.
        #[arg(long, default_value_t = 0)]
        event: usize,
    },
    /// Weighted Fekete points compared against the equilibrium measure.
    Fekete {
        #[command(flatten)]
        field: FieldArgs,
        /// Mass of the measure.
        #[arg(long, default_value_t = 1.0)]
        t: f64,
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 1e-3)]
        t_start: f64,
        #[arg(long, default_value_t = 1e-9)]
        rtol: f64,
        /// Optional CSV file for the points.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classification over the grid α = 1 + i·y, y evenly spaced.
    Sweep {
        #[arg(long, default_value_t = 0.05)]
        im_min: f64,
        #[arg(long, default_value_t = 0.5)]
        im_max: f64,
        #[arg(long, default_value_t = 10)]
        steps: usize,
        /// Also evolve each field to --t-end and list the detected events.
        #[arg(long)]
        evolve: bool,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 4)]
        workers: usize,
    },
}

#[derive(Args)]
struct FieldArgs {
    /// Field JSON `{"m": .., "couplings": [..]}` given inline or as a file path.
    #[arg(long, conflicts_with_all = ["alpha", "beta"])]
    field: Option<String>,
    /// Critical point α of a quartic with φ' = x(x − α)(x − β), as `re,im`.
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<String>,
    /// Second critical point; defaults to conj α.
    #[arg(long, allow_hyphen_values = true)]
    beta: Option<String>,
}

#[derive(Args, Clone, Copy)]
struct RunArgs {
    #[arg(long, default_value_t = 1e-3)]
    t_start: f64,
    #[arg(long, default_value_t = 4.0)]
    t_end: f64,
    #[arg(long, default_value_t = 1e-9)]
    rtol: f64,
}

impl RunArgs {
    fn options(&self) -> EvolveOptions {
        EvolveOptions {
            rtol: self.rtol,
            ..EvolveOptions::default()
        }
    }
}

#[derive(Deserialize)]
struct FieldJson {
    m: usize,
    couplings: Vec<f64>,
}

/// Resolved field with the factor `κ` used to normalise a full coefficient
/// list (`κ = 1` when the couplings were already normalised).
struct ResolvedField {
    field: ExternalField,
    quartic: Option<QuarticField>,
    kappa: f64,
}

fn parse_complex(s: &str) -> Result<Complex64> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let re = parts[0].parse::<f64>().with_context(|| format!("bad number in {s:?}"))?;
    let im = match parts.len() {
        1 => 0.0,
        2 => parts[1].parse::<f64>().with_context(|| format!("bad number in {s:?}"))?,
        _ => bail!("complex numbers are written re,im; got {s:?}"),
    };
    Ok(Complex64::new(re, im))
}

fn resolve(args: &FieldArgs) -> Result<ResolvedField> {
    if let Some(alpha) = &args.alpha {
        let a = parse_complex(alpha)?;
        let b = match &args.beta {
            Some(b) => parse_complex(b)?,
            None => a.conj(),
        };
        let q = QuarticField::new(a, b)?;
        return Ok(ResolvedField {
            field: q.field(),
            quartic: Some(q),
            kappa: 1.0,
        });
    }
    let Some(spec) = &args.field else {
        bail!("give either --field or --alpha");
    };
    let text = if spec.trim_start().starts_with('{') {
        spec.clone()
    } else {
        fs::read_to_string(spec).with_context(|| format!("reading {spec}"))?
    };
    let fj: FieldJson = serde_json::from_str(&text).context("parsing field JSON")?;
    let (field, kappa) = if fj.couplings.len() == 2 * fj.m {
        let mut c = vec![0.0];
        c.extend(&fj.couplings);
        ExternalField::from_polynomial(&RealPolynomial::new(c))?
    } else if fj.couplings.len() + 1 == 2 * fj.m {
        (ExternalField::new(fj.couplings)?, 1.0)
    } else {
        bail!("m = {} needs 2m − 1 or 2m couplings, got {}", fj.m, fj.couplings.len());
    };
    let quartic = if field.m() == 2 {
        QuarticField::from_field(&field).ok()
    } else {
        None
    };
    Ok(ResolvedField { field, quartic, kappa })
}

fn field_json(r: &ResolvedField) -> Value {
    json!({ "m": r.field.m(), "couplings": r.field.couplings(), "kappa": r.kappa })
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn run_evolve(field: &ExternalField, run: RunArgs) -> Result<Trajectory> {
    Ok(dynamics::evolve(field, run.t_start, run.t_end, run.options())?)
}

fn cmd_evolve(args: &FieldArgs, run: RunArgs, out: &Path) -> Result<Value> {
    let r = resolve(args)?;
    let traj = run_evolve(&r.field, run)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let csv_path = out.join("trajectory.csv");
    let events_path = out.join("events.json");
    let f = File::create(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?;
    dynamics::write_trajectory_csv(&traj, BufWriter::new(f))?;
    write_json(&events_path, &dynamics::events_json(&traj))?;
    Ok(json!({
        "field": field_json(&r),
        "states": traj.states.len(),
        "events": traj.events.iter().map(|e| e.kind).collect::<Vec<_>>(),
        "trajectory": csv_path,
        "events_file": events_path,
    }))
}

fn cmd_classify(args: &FieldArgs) -> Result<Value> {
    let r = resolve(args)?;
    let q = match r.quartic {
        Some(q) => q,
        None => QuarticField::from_field(&r.field)?,
    };
    classify_report(&q)
}

fn classify_report(q: &QuarticField) -> Result<Value> {
    let scenario = quartic::classify(q)?;
    let configs = match quartic::quadruple_points(q) {
        Ok(c) => serde_json::to_value(c)?,
        Err(_) => json!([]),
    };
    Ok(json!({
        "alpha": [q.alpha().re, q.alpha().im],
        "beta": [q.beta().re, q.beta().im],
        "affine": q.affine(),
        "slope": q.slope(),
        "scenario": scenario,
        "critical_configurations": configs,
    }))
}

fn cmd_probe(args: &FieldArgs, run: RunArgs, idx: usize) -> Result<Value> {
    let r = resolve(args)?;
    let traj = run_evolve(&r.field, run)?;
    let ev = traj
        .events
        .get(idx)
        .ok_or_else(|| anyhow!("event {idx} requested, trajectory has {}", traj.events.len()))?;
    let fit = dynamics::scaling_probe(&traj, idx)?;
    let jump = dynamics::robin_derivative_jump(&traj, idx)?;
    Ok(json!({
        "field": field_json(&r),
        "event": ev,
        "scaling": fit,
        "robin_derivative": jump,
    }))
}

fn cmd_fekete(args: &FieldArgs, t: f64, n: usize, t_start: f64, rtol: f64, out: Option<&Path>) -> Result<Value> {
    let r = resolve(args)?;
    let run = RunArgs { t_start, t_end: t, rtol };
    let traj = run_evolve(&r.field, run)?;
    let state = traj.states.last().ok_or_else(|| anyhow!("empty trajectory"))?;
    let pts = fekete::fekete_points_from_state(state, n)?;
    let distance = fekete::compare_to_equilibrium(&pts, state);
    if let Some(p) = out {
        let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
        fekete::write_points_csv(&pts, BufWriter::new(f))?;
    }
    Ok(json!({
        "field": field_json(&r),
        "t": state.t,
        "n": n,
        "distance": distance,
        "energy": pts.energy,
        "stationarity": pts.stationarity,
        "newton_steps": pts.energy_history.len() - 1,
    }))
}

fn sweep_point(y: f64, evolve: bool, run: RunArgs) -> Value {
    let mut v = json!({ "alpha": [1.0, y] });
    let q = match QuarticField::new(Complex64::new(1.0, y), Complex64::new(1.0, -y)) {
        Ok(q) => q,
        Err(e) => {
            v["error"] = error_json(&e.into());
            return v;
        }
    };
    match quartic::classify(&q) {
        Ok(s) => v["scenario"] = json!(s),
        Err(e) => v["error"] = error_json(&e.into()),
    }
    if evolve {
        match run_evolve(&q.field(), run) {
            Ok(traj) => {
                v["events"] = json!(traj
                    .events
                    .iter()
                    .map(|e| json!({ "kind": e.kind, "T": e.time }))
                    .collect::<Vec<_>>())
            }
            Err(e) => v["evolve_error"] = error_json(&e),
        }
    }
    v
}

fn cmd_sweep(im_min: f64, im_max: f64, steps: usize, evolve: bool, run: RunArgs, workers: usize) -> Result<Value> {
    if steps == 0 || !(im_max >= im_min) || im_min <= 0.0 {
        bail!("need steps ≥ 1 and 0 < im_min ≤ im_max");
    }
    let ys: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                im_min
            } else {
                im_min + (im_max - im_min) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let workers = workers.clamp(1, steps);
    let mut results: Vec<Option<Value>> = vec![None; steps];
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let ys = &ys;
                scope.spawn(move || {
                    (w..ys.len())
                        .step_by(workers)
                        .map(|i| (i, sweep_point(ys[i], evolve, run)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, v) in h.join().expect("sweep worker panicked") {
                results[i] = Some(v);
            }
        }
    });
    Ok(json!({ "grid": results }))
}

fn error_json(e: &anyhow::Error) -> Value {
    match e.downcast_ref::<eqmeasure::Error>() {
        Some(core) => json!({ "error": core.kind(), "message": core.to_string() }),
        None => json!({ "error": "Usage", "message": format!("{e:#}") }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Command::Evolve { field, run, out } => cmd_evolve(field, *run, out),
        Command::Classify { field } => cmd_classify(field),
        Command::Probe { field, run, event } => cmd_probe(field, *run, *event),
        Command::Fekete { field, t, n, t_start, rtol, out } => {
            cmd_fekete(field, *t, *n, *t_start, *rtol, out.as_deref())
        }
        Command::Sweep { im_min, im_max, steps, evolve, run, workers } => {
            cmd_sweep(*im_min, *im_max, *steps, *evolve, *run, *workers)
        }
    };
    match result {
        Ok(v) => {
            // a closed pipe downstream is not an error of the run
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&v).expect("serializable"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::FAILURE
        }
    }
}
