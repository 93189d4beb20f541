//! Command-line front end: argument parsing, experiment dispatch and manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::constants;
use crate::decomposition::{hyperbolic_elliptic_split, pointwise_bound_report, x_norm, z_norm, LPLadder};
use crate::error::{Error, Result};
use crate::illposed::{growth_exponent_fit, interaction_report};
use crate::io::{
    config_hash, read_field, read_run, snapshot_name, write_csv, write_field, write_manifest, EvolveParams, Experiment,
    ExperimentConfig, IllposedParams, InitialCondition, Manifest, NormsParams, ScatterParams, SymbolsParams,
    WavepacketParams,
};
use crate::normalform::{scattering_profile, SCATTER_DELTA};
use crate::solver::{default_dt, evolve, gaussian_datum, SolverConfig, BLOWUP_THRESHOLD, WRAP_THRESHOLD};
use crate::spectral::dispersive_sup;
use crate::symbols::{m_depth, m_inverse_depth, omega, phase_Phi, resonance_lower_bound_check, Depth};
use crate::wavepacket::{decay_fit, gamma_test, reconstruct_ux, sampled_ux, PacketSpec, GAMMA_STEP};
use crate::{Field, Grid};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_PROPERTY: i32 = 4;

/// Width and carrier of the built-in Gaussian datum.
pub const GAUSSIAN_WIDTH: f64 = 4.0;
pub const GAUSSIAN_K0: f64 = 1.5;

/// Allowed gap between the fitted and predicted growth exponents.
pub const SLOPE_TOLERANCE: f64 = 0.1;

/// Window and accepted range for the linear dispersive decay exponent.
pub const DECAY_WINDOW: (f64, f64) = (10.0, 100.0);
pub const DECAY_RANGE: (f64, f64) = (-1.15, -0.85);

#[derive(Parser, Debug)]
#[command(name = "ccwave", version, about = "Pseudospectral experiments for the Camassa-Choi equations")]
pub struct Cli {
    /// Worker threads (the stepping loop is sequential; recorded in the manifest).
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long = "out", default_value = ".")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run any experiment from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Dump symbol tables.
    Symbols {
        /// Depth, a positive number or "inf".
        #[arg(long, default_value = "1")]
        h: String,
    },
    Evolve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the norms of a snapshot as JSON.
    Norms {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        t: f64,
    },
    Wavepacket {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        v: Vec<f64>,
        #[arg(long, default_value_t = 0.0)]
        vy: f64,
        #[arg(long, default_value = "gamma.csv")]
        out: PathBuf,
    },
    Scatter {
        #[arg(long)]
        run: PathBuf,
        /// Pull back with the linear flow only.
        #[arg(long)]
        linear: bool,
        #[arg(long, default_value = "scatter.csv")]
        out: PathBuf,
    },
    Illposed {
        #[arg(long)]
        p: f64,
        #[arg(long, default_value_t = 2.0)]
        q: f64,
        #[arg(long)]
        eps: f64,
        #[arg(long = "N", value_delimiter = ',', required = true)]
        big_n: Vec<f64>,
        #[arg(long, default_value_t = 1.0)]
        t: f64,
        #[arg(long, default_value = "growth.csv")]
        out: PathBuf,
    },
}

/// What an experiment reports back besides its files.
struct Outcome {
    outputs: Vec<PathBuf>,
    constants: Vec<(&'static str, f64)>,
    results: BTreeMap<String, Value>,
    /// Non-success status with its exit code.
    failure: Option<(i32, String)>,
}

impl Outcome {
    fn new(constants: Vec<(&'static str, f64)>) -> Outcome {
        Outcome { outputs: Vec::new(), constants, results: BTreeMap::new(), failure: None }
    }

    fn result(&mut self, key: &str, v: impl Serialize) {
        self.results.insert(key.to_string(), serde_json::to_value(v).unwrap_or(Value::Null));
    }
}

struct Ctx {
    threads: usize,
    seed: u64,
    /// Directory relative paths in the config resolve against.
    base: PathBuf,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Io(_) | Error::Format(_) => EXIT_CONFIG,
        Error::Domain(_) | Error::BlowUp { .. } | Error::Accuracy { .. } | Error::Resource(_) => EXIT_NUMERICAL,
    }
}

pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    let mut ctx = Ctx { threads: cli.threads.max(1), seed: cli.seed, base: PathBuf::from(".") };
    let (cfg, dir) = match cli.command {
        Command::Run { config } => {
            ctx.base = parent_of(&config);
            let cfg = ExperimentConfig::load(&config)?;
            ctx.seed = if cfg.raw.get("seed").is_some() { cfg.seed } else { cli.seed };
            (cfg, cli.out_dir)
        }
        Command::Evolve { config, out } => {
            ctx.base = parent_of(&config);
            (load_as(&config, "evolve")?, out.unwrap_or(cli.out_dir))
        }
        Command::Symbols { h } => {
            let h = match h.parse::<f64>() {
                Ok(x) if x.is_finite() => json!(x),
                _ => Value::String(h),
            };
            (from_value(json!({"experiment": "symbols", "h": h}))?, cli.out_dir)
        }
        Command::Norms { input, t } => {
            (from_value(json!({"experiment": "norms", "in": input, "t": t}))?, cli.out_dir)
        }
        Command::Wavepacket { run, v, vy, out } => {
            let dir = csv_dir(&cli.out_dir, &out);
            let cfg = from_value(json!({"experiment": "wavepacket", "run": run, "v": v, "vy": vy}))?;
            return run_experiment(&cfg, &ctx, &dir, Some(&cli.out_dir.join(&out)));
        }
        Command::Scatter { run, linear, out } => {
            let dir = csv_dir(&cli.out_dir, &out);
            let cfg = from_value(json!({"experiment": "scatter", "run": run, "linear": linear}))?;
            return run_experiment(&cfg, &ctx, &dir, Some(&cli.out_dir.join(&out)));
        }
        Command::Illposed { p, q, eps, big_n, t, out } => {
            let dir = csv_dir(&cli.out_dir, &out);
            let p = if p.is_infinite() { json!("inf") } else { json!(p) };
            let q = if q.is_infinite() { json!("inf") } else { json!(q) };
            let cfg = from_value(json!({"experiment": "illposed", "p": p, "q": q, "eps": eps, "N": big_n, "t": t}))?;
            return run_experiment(&cfg, &ctx, &dir, Some(&cli.out_dir.join(&out)));
        }
    };
    run_experiment(&cfg, &ctx, &dir, None)
}

fn parent_of(p: &Path) -> PathBuf {
    p.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."))
}

fn csv_dir(out_dir: &Path, file: &Path) -> PathBuf {
    parent_of(&out_dir.join(file))
}

fn from_value(v: Value) -> Result<ExperimentConfig> {
    ExperimentConfig::from_json(&v.to_string())
}

/// Loads a config, filling in `experiment` when the file omits it.
fn load_as(path: &Path, name: &str) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut v: Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
    match v.as_object_mut() {
        Some(m) => {
            let given = m.entry("experiment").or_insert_with(|| Value::String(name.into()));
            if given != name {
                return Err(Error::Config(format!("expected an {name} config, got {given}")));
            }
        }
        None => return Err(Error::Config("config must be a JSON object".into())),
    }
    from_value(v)
}

/// Runs one experiment, writes `manifest.json` into `dir` and returns the exit code.
pub fn run_config(cfg: &ExperimentConfig, dir: &Path, threads: usize, base: &Path) -> Result<i32> {
    let ctx = Ctx { threads, seed: cfg.seed, base: base.to_path_buf() };
    run_experiment(cfg, &ctx, dir, None)
}

fn run_experiment(cfg: &ExperimentConfig, ctx: &Ctx, dir: &Path, csv: Option<&Path>) -> Result<i32> {
    fs::create_dir_all(dir)?;
    let (name, outcome) = match &cfg.experiment {
        Experiment::Evolve(p) => ("evolve", run_evolve(p, ctx, dir, false)?),
        Experiment::LinearDecay(p) => ("linear_decay", run_evolve(p, ctx, dir, true)?),
        Experiment::Wavepacket(p) => ("wavepacket", run_wavepacket(p, ctx, &csv_or(csv, dir, "gamma.csv"))?),
        Experiment::Scatter(p) => ("scatter", run_scatter(p, ctx, &csv_or(csv, dir, "scatter.csv"))?),
        Experiment::Illposed(p) => ("illposed", run_illposed(p, ctx, &csv_or(csv, dir, "growth.csv"))?),
        Experiment::Norms(p) => ("norms", run_norms(p, ctx)?),
        Experiment::Symbols(p) => ("symbols", run_symbols(p, ctx, dir)?),
    };
    let (code, status) = match &outcome.failure {
        None => (EXIT_OK, "ok".to_string()),
        Some((c, s)) => (*c, s.clone()),
    };
    let manifest = Manifest {
        experiment: name.into(),
        config_hash: config_hash(&cfg.raw),
        config: cfg.raw.clone(),
        code_version: env!("CARGO_PKG_VERSION").into(),
        seed: ctx.seed,
        threads: ctx.threads,
        outputs: outcome
            .outputs
            .iter()
            .map(|p| p.strip_prefix(dir).unwrap_or(p).display().to_string())
            .collect(),
        constants: outcome.constants.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        status: status.clone(),
        results: outcome.results,
    };
    write_manifest(dir, &manifest)?;
    if code != EXIT_OK {
        eprintln!("{name}: {status}");
    }
    Ok(code)
}

fn csv_or(csv: Option<&Path>, dir: &Path, default: &str) -> PathBuf {
    csv.map(Path::to_path_buf).unwrap_or_else(|| dir.join(default))
}

fn resolve(ctx: &Ctx, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        ctx.base.join(p)
    }
}

fn initial_field(p: &EvolveParams, ctx: &Ctx, h: Depth) -> Result<Field> {
    let grid = Grid::new(p.nx, p.ny, p.lx, p.ly)?;
    match p.ic {
        InitialCondition::Gaussian => Ok(gaussian_datum(&grid, h, p.amplitude, GAUSSIAN_WIDTH, GAUSSIAN_K0)),
        InitialCondition::File => {
            let path = resolve(ctx, p.ic_file.as_deref().unwrap_or_default());
            let mut f = read_field(&path)?;
            if f.grid != grid {
                return Err(Error::Config(format!("{} does not match the configured grid", path.display())));
            }
            f.h = h;
            let mut f = f.fourier().scale(p.amplitude);
            f.pin_zero_modes();
            Ok(f)
        }
    }
}

#[derive(Serialize)]
struct DecayRow {
    t: f64,
    dispersive_sup: f64,
}

fn run_evolve(p: &EvolveParams, ctx: &Ctx, dir: &Path, linear: bool) -> Result<Outcome> {
    let h = p.h.depth()?;
    let u0 = initial_field(p, ctx, h)?;
    let dt = p.dt.unwrap_or_else(|| default_dt(&u0.grid, h));
    let mut cfg = SolverConfig::new(dt, p.t_end, h);
    cfg.snapshot_every = p.snapshot_every;
    cfg.nonlinear = !linear;
    let mut out = Outcome::new(vec![("blowup_threshold", BLOWUP_THRESHOLD), ("wrap_threshold", WRAP_THRESHOLD)]);
    let mut written = Vec::new();
    let mut decay = Vec::new();
    let mut io_err: Option<Error> = None;
    let res = evolve(&u0, &cfg, &mut |u, _| {
        if io_err.is_some() {
            return;
        }
        let path = dir.join(snapshot_name(written.len()));
        match write_field(&path, u) {
            Ok(()) => written.push(path),
            Err(e) => io_err = Some(e),
        }
        if linear {
            decay.push(DecayRow { t: u.t, dispersive_sup: dispersive_sup(u) });
        }
    });
    if let Some(e) = io_err {
        return Err(e);
    }
    let res = match res {
        Ok(r) => r,
        Err(e @ Error::BlowUp { .. }) => {
            out.outputs = written;
            out.failure = Some((EXIT_NUMERICAL, e.to_string()));
            return Ok(out);
        }
        Err(e) => return Err(e),
    };
    let diag = dir.join("diagnostics.csv");
    write_csv(&diag, &res.records)?;
    out.outputs = written;
    out.outputs.push(diag);
    out.result("steps", res.steps);
    out.result("dt", res.dt_used);
    out.result("wrapped", res.wrapped);
    if let (Some(a), Some(b)) = (res.records.first(), res.records.last()) {
        out.result("mass_drift", (b.mass - a.mass).abs());
        out.result("energy_drift", (b.energy - a.energy).abs());
        let pre: Vec<_> = res.records.iter().filter(|r| r.t > 0.0 && r.outside_mass_fraction <= WRAP_THRESHOLD).collect();
        if let Ok(f) = decay_fit(&pre.iter().map(|r| r.t).collect::<Vec<_>>(), &pre.iter().map(|r| r.sup_ux).collect::<Vec<_>>()) {
            out.result("sup_ux_fit", f);
        }
    }
    if linear {
        let path = dir.join("decay.csv");
        write_csv(&path, &decay)?;
        out.outputs.push(path);
        let win: Vec<&DecayRow> = decay.iter().filter(|r| r.t >= DECAY_WINDOW.0 && r.t <= DECAY_WINDOW.1).collect();
        if let Ok(f) = decay_fit(&win.iter().map(|r| r.t).collect::<Vec<_>>(), &win.iter().map(|r| r.dispersive_sup).collect::<Vec<_>>()) {
            if !(f.slope >= DECAY_RANGE.0 && f.slope <= DECAY_RANGE.1) {
                out.failure = Some((EXIT_PROPERTY, format!("dispersive decay exponent {:.3} outside [{}, {}]", f.slope, DECAY_RANGE.0, DECAY_RANGE.1)));
            }
            out.result("dispersive_fit", f);
        }
    }
    if res.wrapped && out.failure.is_none() {
        out.failure = Some((EXIT_NUMERICAL, "wrap-around: outside mass fraction exceeded the threshold".into()));
    }
    Ok(out)
}

#[derive(Serialize)]
struct GammaRow {
    t: f64,
    v: f64,
    vy: f64,
    re_gamma: f64,
    im_gamma: f64,
    reconstructed_ux: f64,
    sampled_ux: f64,
}

fn run_wavepacket(p: &WavepacketParams, ctx: &Ctx, csv: &Path) -> Result<Outcome> {
    let run = read_run(&resolve(ctx, &p.run))?;
    let mut out = Outcome::new(vec![("gamma_step", GAMMA_STEP)]);
    let mut rows = Vec::new();
    let mut skipped = 0usize;
    for (_, u) in &run {
        for &v in &p.v {
            let spec = match PacketSpec::new(u.t, v, p.vy, u.h) {
                Ok(s) => s,
                Err(Error::Domain(_)) => {
                    skipped += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let g = gamma_test(u, &spec)?;
            rows.push(GammaRow {
                t: u.t,
                v,
                vy: p.vy,
                re_gamma: g.re,
                im_gamma: g.im,
                reconstructed_ux: reconstruct_ux(g, &spec)?,
                sampled_ux: sampled_ux(u, &spec),
            });
        }
    }
    write_csv(csv, &rows)?;
    out.outputs.push(csv.to_path_buf());
    out.result("rows", rows.len());
    out.result("skipped_outside_sigma", skipped);
    Ok(out)
}

#[derive(Serialize)]
struct ScatterCsvRow {
    t: f64,
    cauchy_diff: Option<f64>,
    corr_norm: f64,
    pullback_mass: f64,
}

fn run_scatter(p: &ScatterParams, ctx: &Ctx, csv: &Path) -> Result<Outcome> {
    let run = read_run(&resolve(ctx, &p.run))?;
    let u0 = run
        .iter()
        .find(|(_, f)| f.t == 0.0)
        .map(|(_, f)| f.clone())
        .ok_or_else(|| Error::Config("scatter needs a snapshot at t = 0".into()))?;
    let mut snaps: Vec<Field> = Vec::new();
    for (_, f) in &run {
        let ok = match snaps.last() {
            None => f.t >= 1.0,
            Some(last) => f.t >= std::f64::consts::SQRT_2 * last.t * (1.0 - 1e-12),
        };
        if ok {
            snaps.push(f.clone());
        }
    }
    if snaps.len() < 2 {
        return Err(Error::Config("scatter needs two snapshots with t >= 1 a factor 2^(1/2) apart".into()));
    }
    let prof = scattering_profile(&u0, &snaps, !p.linear)?;
    let rows: Vec<ScatterCsvRow> = prof
        .rows
        .iter()
        .map(|r| ScatterCsvRow { t: r.t, cauchy_diff: r.cauchy_diff, corr_norm: r.corr_norm, pullback_mass: r.pullback_mass })
        .collect();
    write_csv(csv, &rows)?;
    let mut out = Outcome::new(vec![
        ("scatter_delta", SCATTER_DELTA),
        ("scatter_correction", constants::SCATTER_CORRECTION),
        ("energy_nf_bound", constants::ENERGY_NF_BOUND),
    ]);
    out.outputs.push(csv.to_path_buf());
    out.result("mass_ratio", prof.mass_ratio);
    out.result("monotone", prof.monotone);
    out.result("times", snaps.iter().map(|f| f.t).collect::<Vec<_>>());
    if !prof.monotone {
        out.failure = Some((EXIT_PROPERTY, "Cauchy differences are not strictly decreasing".into()));
    }
    Ok(out)
}

fn run_illposed(p: &IllposedParams, ctx: &Ctx, csv: &Path) -> Result<Outcome> {
    let fit = growth_exponent_fit(p.p, p.q, &p.big_n, p.eps, p.t)?;
    write_csv(csv, &fit.rows)?;
    let mut out = Outcome::new(vec![("high_low_resonance", constants::HIGH_LOW_RESONANCE), ("slope_tolerance", SLOPE_TOLERANCE)]);
    out.outputs.push(csv.to_path_buf());
    let inter: Vec<_> = p.big_n.iter().map(|&n| interaction_report(n, p.eps, p.t, 10_000, ctx.seed)).collect();
    out.result("slope", fit.slope);
    out.result("input_slope", fit.input_slope);
    out.result("predicted", fit.predicted);
    out.result("high_measure_ratios", &fit.high_measure_ratios);
    out.result("low_measure_ratios", &fit.low_measure_ratios);
    out.result("interaction", inter);
    if (fit.slope - fit.predicted).abs() > SLOPE_TOLERANCE {
        out.failure = Some((
            EXIT_PROPERTY,
            format!("growth exponent {:.3} differs from {:.3} by more than {SLOPE_TOLERANCE}", fit.slope, fit.predicted),
        ));
    }
    Ok(out)
}

fn run_norms(p: &NormsParams, ctx: &Ctx) -> Result<Outcome> {
    let u = read_field(&resolve(ctx, &p.input))?;
    let mass = u.mass();
    let z3 = z_norm(&u, 3)?;
    let z4 = z_norm(&u, 4)?;
    let x = x_norm(&u, p.t, u.h)?;
    let ratios = if p.t >= 1.0 {
        let ladder = LPLadder::for_grid(&u.grid, 1.0)?;
        let split = hyperbolic_elliptic_split(&u, p.t, &ladder)?;
        let r = pointwise_bound_report(&u, p.t, &split)?;
        json!({
            "hyp": r.hyp, "hyp_x": r.hyp_x, "ell": r.ell, "ell_x": r.ell_x, "elliptic_gain": r.elliptic_gain,
        })
    } else {
        Value::Null
    };
    let report = json!({"mass": mass, "Z3": z3, "Z4": z4, "X": x, "bound_ratios": ratios});
    println!("{}", serde_json::to_string_pretty(&report).map_err(|e| Error::Format(e.to_string()))?);
    let mut out = Outcome::new(Vec::new());
    out.result("report", report);
    Ok(out)
}

#[derive(Serialize)]
struct XiRow {
    xi: f64,
    m: f64,
    omega_x_axis: f64,
}

#[derive(Serialize)]
#[allow(non_snake_case)]
struct VRow {
    v: f64,
    m_inverse: f64,
    Phi: f64,
}

fn run_symbols(p: &SymbolsParams, ctx: &Ctx, dir: &Path) -> Result<Outcome> {
    let h = p.h.depth()?;
    let n = p.points;
    let mut xs = Vec::with_capacity(n);
    for k in 0..n {
        let xi = -p.xi_max + 2.0 * p.xi_max * k as f64 / (n - 1) as f64;
        if xi == 0.0 {
            continue;
        }
        xs.push(XiRow { xi, m: m_depth(h, xi), omega_x_axis: omega(h, xi, 0.0)? });
    }
    let (a, b) = (p.v_range[0].ln(), p.v_range[1].ln());
    let mut vs = Vec::with_capacity(n);
    for k in 0..n {
        let v = (a + (b - a) * k as f64 / (n - 1) as f64).exp();
        vs.push(VRow { v, m_inverse: m_inverse_depth(h, v)?, Phi: phase_Phi(h, v)? });
    }
    let (fx, fv) = (dir.join("symbols_xi.csv"), dir.join("symbols_v.csv"));
    write_csv(&fx, &xs)?;
    write_csv(&fv, &vs)?;
    let mut out = Outcome::new(Vec::new());
    out.outputs = vec![fx, fv];
    if !h.is_infinite() {
        out.result("resonance_lower_bound", resonance_lower_bound_check(h, 10_000, ctx.seed)?);
    }
    Ok(out)
}
