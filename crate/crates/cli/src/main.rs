use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::Serialize;
use sha2::{Digest, Sha256};

use pegmfg::analysis::{ar1_half_life, decompose_flows, sweep, SweepAxis, SweepMetric};
use pegmfg::calibration::{
    calibrate, default_free_parameters, fit_window, model_path, out_of_sample_eval, path_errors, segment_regimes,
    CalibrationResult, CalibrationSpec, DeSettings, FreeParameter, OutOfSample, SegmentOptions,
};
use pegmfg::data::{bar_length, parse_klines, to_mispricing, ColumnMap, ObservedSeries, ParseOptions};
use pegmfg::export;
use pegmfg::{solve_mfe, ModelParams};

#[derive(Parser)]
#[command(name = "pegmfg", version, about = "Stablecoin de-peg mean-field game toolkit")]
struct Cli {
    /// Output directory.
    #[arg(long, global = true, env = "PEGMFG_OUT_DIR", default_value = "pegmfg-out")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the equilibrium and write the trace and convergence diagnostics.
    Simulate(ModelArgs),
    /// Segment an observed episode and fit each regime.
    Calibrate(CalibrateArgs),
    /// Half-life or flow decomposition of a trace or kline file.
    Analyze(AnalyzeArgs),
    /// Half-life over a two-parameter grid.
    Sweep(SweepArgs),
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// TOML parameter file; the built-in baseline when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override, e.g. `market.lambda0[2]=3.0` or `kappa_p=4`. Repeatable.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Kline CSV file.
    #[arg(long)]
    data: PathBuf,
    /// The first row is a header.
    #[arg(long)]
    header: bool,
    /// Column positions, e.g. `open_time=0,close=4`.
    #[arg(long)]
    columns: Option<String>,
    /// Resampling step in minutes; defaults to the model step `sim.dt`.
    #[arg(long)]
    resample_minutes: Option<u64>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0.005)]
    depeg_threshold: f64,
    #[arg(long, default_value_t = 0.001)]
    stable_band: f64,
    /// Consecutive resampled bars inside the band that mark the re-peg.
    #[arg(long, default_value_t = 60)]
    stable_run: usize,
    /// Free parameter `PATH:LO:HI`, repeatable; the default set when absent.
    #[arg(long = "free", value_name = "PATH:LO:HI")]
    free: Vec<String>,
    #[arg(long)]
    population: Option<usize>,
    #[arg(long, default_value_t = 100)]
    generations: usize,
    #[arg(long, default_value_t = 0.8)]
    mutation: f64,
    #[arg(long, default_value_t = 0.9)]
    crossover: f64,
    #[arg(long, default_value_t = 1)]
    de_seed: u64,
    #[arg(long, default_value_t = 0.0)]
    loss_tolerance: f64,
    /// Train fractions for the out-of-sample table, e.g. `0.7,0.8,0.9`.
    #[arg(long, value_delimiter = ',')]
    splits: Vec<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Halflife,
    Decompose,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Trace CSV from `simulate`, or a kline file (half-life only).
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    mode: Mode,
    /// Step length in hours for the trace; klines use their own resolution.
    #[arg(long, default_value_t = 1.0)]
    dt: f64,
    /// Fail when the AR(1) fit is not mean-reverting.
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    header: bool,
    #[arg(long)]
    resample_minutes: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// `NAME:START:END:COUNT`.
    #[arg(long)]
    axis1: String,
    /// `NAME:START:END:COUNT`; a single baseline cell when absent.
    #[arg(long)]
    axis2: Option<String>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Serialize)]
struct InputDigest {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    argv: Vec<String>,
    params: Option<&'a ModelParams>,
    seed: Option<u64>,
    version: &'static str,
    inputs: Vec<InputDigest>,
    outputs: Vec<String>,
    wall_time_seconds: f64,
}

/// Collects the files a command writes so the manifest can list them.
struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text)
    }

    fn finish(mut self, command: &str, params: Option<&ModelParams>, inputs: &[&Path], start: Instant) -> Result<()> {
        let inputs = inputs.iter().map(|p| digest(p)).collect::<Result<Vec<_>>>()?;
        let mut outputs = self.written.clone();
        outputs.push("manifest.json".into());
        let manifest = RunManifest {
            command,
            argv: std::env::args().collect(),
            params,
            seed: params.map(|p| p.sim.seed),
            version: env!("CARGO_PKG_VERSION"),
            inputs,
            outputs,
            wall_time_seconds: start.elapsed().as_secs_f64(),
        };
        self.json("manifest.json", &manifest)
    }
}

fn digest(path: &Path) -> Result<InputDigest> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

enum Outcome {
    Done,
    NotConverged,
}

fn load_params(args: &ModelArgs) -> Result<ModelParams> {
    let mut params = match &args.config {
        Some(path) => ModelParams::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => ModelParams::baseline(),
    };
    for o in &args.overrides {
        params.apply_override(o).with_context(|| format!("override `{o}`"))?;
    }
    let report = params.validate();
    if !report.is_ok() {
        bail!("invalid parameters:\n{report}");
    }
    Ok(params)
}

fn config_inputs(args: &ModelArgs) -> Vec<&Path> {
    args.config.iter().map(PathBuf::as_path).collect()
}

fn simulate(out_dir: &Path, args: &ModelArgs) -> Result<Outcome> {
    let start = Instant::now();
    let params = load_params(args)?;
    let eq = solve_mfe(&params)?;
    let mut out = Outputs::new(out_dir)?;
    out.write("trace.csv", export::trace_csv(&eq.mean_field, &eq.trace))?;
    out.write("diagnostics.csv", export::diagnostics_csv(&eq.diagnostics))?;
    out.write("params.toml", params.to_toml_string()?)?;
    out.finish("simulate", Some(&params), &config_inputs(args), start)?;
    if let Some(f) = &eq.failure {
        warn!("{f}");
    }
    if eq.converged {
        info!("converged in {} iterations", eq.iterations);
        Ok(Outcome::Done)
    } else {
        eprintln!(
            "equilibrium did not converge after {} iterations (max_exploit {:.3e}, mf_distance {:.3e})",
            eq.iterations,
            eq.last().map_or(f64::NAN, |d| d.max_exploit),
            eq.last().map_or(f64::NAN, |d| d.mf_distance)
        );
        Ok(Outcome::NotConverged)
    }
}

/// Resamples to `resample_ms`, or keeps the native bar length when `None`.
fn load_series(path: &Path, header: bool, columns: Option<&str>, resample_ms: Option<i64>) -> Result<ObservedSeries> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let opts = ParseOptions {
        has_header: header,
        columns: columns.map(ColumnMap::parse).transpose()?.unwrap_or_default(),
        strict: false,
    };
    let parsed = parse_klines(BufReader::new(file), &opts)?;
    for r in &parsed.rejected {
        warn!("{}:{}: {}", path.display(), r.line, r.reason);
    }
    if parsed.records.is_empty() {
        bail!("no usable rows in {}", path.display());
    }
    let step = match resample_ms {
        Some(ms) => ms,
        None => bar_length(&parsed.records).context("need at least two bars to infer the bar length")?,
    };
    let series = to_mispricing(&parsed.records, step)?;
    if series.gaps.missing_bars() > 0 {
        warn!(
            "{} missing bars forward-filled in {} gaps",
            series.gaps.missing_bars(),
            series.gaps.gaps.len()
        );
    }
    Ok(series)
}

#[derive(Serialize)]
struct RegimeFit<'a> {
    regime: &'a str,
    first: usize,
    last: usize,
    first_timestamp_ms: i64,
    last_timestamp_ms: i64,
    rmse: f64,
    result: CalibrationResult,
}

#[derive(Serialize)]
struct CalibrationReport<'a> {
    free_parameters: &'a [FreeParameter],
    de: DeSettings,
    regimes: Vec<RegimeFit<'a>>,
    pooled_rmse: f64,
    skipped: Vec<String>,
}

fn calibrate_cmd(out_dir: &Path, args: &CalibrateArgs) -> Result<Outcome> {
    let start = Instant::now();
    let params = load_params(&args.model)?;
    let resample_ms = match args.data.resample_minutes {
        Some(m) => m as i64 * 60_000,
        None => (params.sim.dt * 3_600_000.0).round() as i64,
    };
    let series = load_series(&args.data.data, args.data.header, args.data.columns.as_deref(), Some(resample_ms))?;
    let seg_opts = SegmentOptions {
        depeg_threshold: args.depeg_threshold,
        stable_band: args.stable_band,
        stable_run: args.stable_run,
    };
    let seg = segment_regimes(&series.mispricing, &seg_opts)?;

    let free = if args.free.is_empty() {
        default_free_parameters(&params)
    } else {
        args.free.iter().map(|s| FreeParameter::parse(s)).collect::<pegmfg::Result<Vec<_>>>()?
    };
    let de = DeSettings {
        population: args.population,
        mutation: args.mutation,
        crossover: args.crossover,
        generations: args.generations,
        seed: args.de_seed,
        loss_tolerance: args.loss_tolerance,
    };

    let mut out = Outputs::new(out_dir)?;
    let mut regimes = Vec::new();
    let mut skipped = Vec::new();
    let (mut pooled_se, mut pooled_n) = (0.0, 0usize);
    for (name, range) in seg.phases() {
        if range.len() < 3 {
            skipped.push(format!("{name}: {} bars is too short to fit", range.len()));
            continue;
        }
        let (fixed, obs) = fit_window(&params, &series, range);
        let spec = CalibrationSpec {
            free: free.clone(),
            fixed,
            de,
        };
        info!("fitting {name} over bars {}..={}", range.first, range.last);
        let result = calibrate(&spec, &obs)?;
        let model = model_path(&result.theta_star).unwrap_or_default();
        let rmse = path_errors(&model, &obs, 0..usize::MAX).map_or(f64::NAN, |(mse, _)| mse.sqrt());
        if rmse.is_finite() {
            pooled_se += rmse * rmse * obs.len() as f64;
            pooled_n += obs.len();
        }
        out.write(&format!("fit_{name}.csv"), export::fit_csv(&model, &obs.mispricing))?;
        regimes.push(RegimeFit {
            regime: name,
            first: range.first,
            last: range.last,
            first_timestamp_ms: series.timestamps[range.first],
            last_timestamp_ms: series.timestamps[range.last],
            rmse,
            result,
        });
    }
    let report = CalibrationReport {
        free_parameters: &free,
        de,
        regimes,
        pooled_rmse: if pooled_n > 0 { (pooled_se / pooled_n as f64).sqrt() } else { f64::NAN },
        skipped,
    };
    out.json("segmentation.json", &seg)?;
    out.json("calibration.json", &report)?;

    if !args.splits.is_empty() {
        let event = pegmfg::calibration::IndexRange {
            first: seg.start,
            last: seg.end,
        };
        let (fixed, obs) = fit_window(&params, &series, event);
        let spec = CalibrationSpec {
            free: free.clone(),
            fixed,
            de,
        };
        let mut table = String::from("split,n_train,n_test,train_rmse,test_rmse,train_mae,test_mae\n");
        let mut fits: Vec<OutOfSample> = Vec::new();
        for &split in &args.splits {
            let r = out_of_sample_eval(&spec, &obs, split)?;
            table.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                split,
                r.n_train,
                r.n_test,
                export::num(r.train_rmse),
                export::num(r.test_rmse),
                export::num(r.train_mae),
                export::num(r.test_mae)
            ));
            fits.push(r);
        }
        out.write("out_of_sample.csv", table)?;
        out.json("out_of_sample.json", &fits)?;
    }

    let mut inputs = config_inputs(&args.model);
    inputs.push(&args.data.data);
    out.finish("calibrate", Some(&params), &inputs, start)?;
    Ok(Outcome::Done)
}

#[derive(Serialize)]
struct HalfLifeReport {
    rho: f64,
    half_life_steps: Option<f64>,
    half_life_hours: Option<f64>,
    n_obs: usize,
    valid: bool,
}

#[derive(Serialize)]
struct DecompositionSummary {
    primary_total: f64,
    secondary_total: f64,
    secondary_share: Option<f64>,
}

fn is_trace(path: &Path) -> Result<bool> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.starts_with("t,m,sigma"))
}

fn analyze(out_dir: &Path, args: &AnalyzeArgs) -> Result<Outcome> {
    let start = Instant::now();
    let trace = is_trace(&args.input)?;
    let mut out = Outputs::new(out_dir)?;
    match args.mode {
        Mode::Halflife => {
            let (series, dt) = if trace {
                let mf = export::read_trace(&fs::read_to_string(&args.input)?)?;
                (mf.m, args.dt)
            } else {
                let resample = args.resample_minutes.map(|m| m as i64 * 60_000);
                let s = load_series(&args.input, args.header, None, resample)?;
                let dt = s.resolution_hours();
                (s.mispricing, dt)
            };
            let hl = ar1_half_life(&series)?;
            out.json(
                "halflife.json",
                &HalfLifeReport {
                    rho: hl.rho,
                    half_life_steps: hl.half_life,
                    half_life_hours: hl.half_life_hours(dt),
                    n_obs: hl.n_obs,
                    valid: hl.valid,
                },
            )?;
            if !hl.valid {
                if args.strict {
                    out.finish("analyze", None, &[&args.input], start)?;
                    bail!("AR(1) fit is not mean-reverting (rho = {})", hl.rho);
                }
                warn!("AR(1) fit is not mean-reverting (rho = {})", hl.rho);
            }
        }
        Mode::Decompose => {
            if !trace {
                bail!("flow decomposition needs a trace file written by `simulate`");
            }
            let mf = export::read_trace(&fs::read_to_string(&args.input)?)?;
            let d = decompose_flows(&mf, args.dt);
            out.write("decomposition.csv", export::decomposition_csv(&d))?;
            out.json(
                "decomposition.json",
                &DecompositionSummary {
                    primary_total: d.primary_total,
                    secondary_total: d.secondary_total,
                    secondary_share: d.secondary_share(),
                },
            )?;
        }
    }
    out.finish("analyze", None, &[&args.input], start)?;
    Ok(Outcome::Done)
}

fn sweep_cmd(out_dir: &Path, args: &SweepArgs) -> Result<Outcome> {
    let start = Instant::now();
    let params = load_params(&args.model)?;
    let axis1 = SweepAxis::parse(&args.axis1)?;
    let axis2 = match &args.axis2 {
        Some(s) => SweepAxis::parse(s)?,
        None => SweepAxis::new("lambda_scale", vec![1.0]),
    };
    let grid = sweep(&params, &axis1, &axis2, SweepMetric::HalfLife, args.workers)?;
    let mut out = Outputs::new(out_dir)?;
    out.write("sweep.csv", export::sweep_csv(&grid))?;
    out.finish("sweep", Some(&params), &config_inputs(&args.model), start)?;
    Ok(Outcome::Done)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Simulate(a) => simulate(&cli.out_dir, a),
        Command::Calibrate(a) => calibrate_cmd(&cli.out_dir, a),
        Command::Analyze(a) => analyze(&cli.out_dir, a),
        Command::Sweep(a) => sweep_cmd(&cli.out_dir, a),
    };
    match result {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
