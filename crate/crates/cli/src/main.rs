//! `hdmr` command-line front end.

mod bench;
mod manifest;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use hdmr_core::dataset::header_names;
use hdmr_core::fitting::relative_error_values;
use hdmr_core::separated::{fit_separated, AnyModel, SeparatedConfig, SpatialBasis};
use hdmr_core::testbed::DiffusionGenerator;
use hdmr_core::{
    fit_hdmr, glars_select, split, BasisConfig, DiffusionConfig, FitConfig, HdmrError, NoiseModel, RobustConfig,
    SampleMode, SampleSet, SelectionConfig, Surrogate,
};
use serde::{Deserialize, Serialize};

use manifest::RunManifest;

#[derive(Parser, Debug, Clone, Serialize, Deserialize)]
#[command(name = "hdmr", version, about = "Sparse HDMR surrogates from scattered samples")]
pub struct Cli {
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "HDMR_THREADS")]
    pub threads: Option<usize>,
    /// Run manifest location.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub cmd: Command,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
pub enum Command {
    /// Select and fit a surrogate.
    Fit(FitArgs),
    /// Evaluate a model at the points of a CSV file.
    Predict(PredictArgs),
    /// Mean, variance and Sobol indices of a model.
    Stats(StatsArgs),
    /// Sample the stochastic diffusion test problem.
    GenDiffusion(GenArgs),
    /// Convergence and scaling tables.
    Bench(BenchArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitMode {
    Dense,
    Separated,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpatialChoice {
    Hat,
    Legendre,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct FitArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = FitMode::Dense)]
    pub mode: FitMode,
    /// Maximum total polynomial order of the fitted modes.
    #[arg(long, default_value_t = 6)]
    pub no: usize,
    /// Maximum interaction order.
    #[arg(long, default_value_t = 3)]
    pub ninter: usize,
    /// Highest order stored as dense coefficients; higher orders use CP.
    #[arg(long, default_value_t = 3)]
    pub npc: usize,
    /// Polynomial order of the selection dictionary.
    #[arg(long, default_value_t = 4)]
    pub nolars: usize,
    /// CP rank of high-order modes.
    #[arg(long, default_value_t = 3)]
    pub nr: usize,
    #[arg(long, default_value_t = 100)]
    pub max_groups: usize,
    #[arg(long)]
    pub hierarchical: bool,
    #[arg(long, default_value_t = 0.0)]
    pub ridge: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of samples held out for the stopping rule.
    #[arg(long, default_value_t = 0.2)]
    pub val_frac: f64,
    /// Fraction of samples held out to report the test error.
    #[arg(long, default_value_t = 0.0)]
    pub test_frac: f64,
    /// Germ interval of the polynomial basis.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub xi_lo: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub xi_hi: f64,
    /// Weighted total least squares under the noise model below.
    #[arg(long)]
    pub robust: bool,
    /// Coordinate noise standard deviation.
    #[arg(long, default_value_t = 0.0)]
    pub noise_s: f64,
    /// Relative value noise standard deviation.
    #[arg(long, default_value_t = 0.0)]
    pub noise_su: f64,
    /// Maximum separated rank.
    #[arg(long, default_value_t = 3)]
    pub rank: usize,
    /// Spatial functions per coordinate.
    #[arg(long, default_value_t = 32)]
    pub cardx: usize,
    #[arg(long, value_enum, default_value_t = SpatialChoice::Hat)]
    pub spatial: SpatialChoice,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub x_lo: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub x_hi: f64,
    #[arg(long)]
    pub joint_update: bool,
    /// Per-pass (dense) or per-rank (separated) diagnostics CSV.
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
    /// Selection path CSV (dense mode).
    #[arg(long)]
    pub path_csv: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// CSV with x*, xi* columns and an optional u column.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct StatsArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// JSON summary; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub sobol_csv: Option<PathBuf>,
    #[arg(long)]
    pub total_csv: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub nq: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub nd_nu: usize,
    #[arg(long, default_value_t = 5)]
    pub nd_f: usize,
    /// Sample at uniform random locations instead of the probe.
    #[arg(long)]
    pub scattered: bool,
    #[arg(long, default_value_t = 0.5)]
    pub x_star: f64,
    #[arg(long, default_value_t = 512)]
    pub mx: usize,
    #[arg(long, default_value_t = 400)]
    pub mk: usize,
    #[arg(long, default_value_t = 0.7)]
    pub sigma_nu: f64,
    #[arg(long, default_value_t = 0.7)]
    pub sigma_f: f64,
    #[arg(long, default_value_t = 0.3)]
    pub lc_nu: f64,
    #[arg(long, default_value_t = 0.3)]
    pub lc_f: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub nu0: f64,
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    pub f0: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub u_minus: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub u_plus: f64,
    /// KL spectrum of the diffusivity field as CSV.
    #[arg(long)]
    pub spectrum_nu: Option<PathBuf>,
    /// KL spectrum of the source field as CSV.
    #[arg(long)]
    pub spectrum_f: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[command(group(ArgGroup::new("table").required(true).args(["scaling", "convergence"])))]
pub struct BenchArgs {
    /// Runtime against dictionary cardinality and Nd.
    #[arg(long)]
    pub scaling: bool,
    /// Test error against the number of samples on the diffusion problem.
    #[arg(long)]
    pub convergence: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "500,1000,3000")]
    pub nq_list: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    #[arg(long, default_value_t = 10_000)]
    pub ntest: usize,
    #[arg(long, default_value_t = 8)]
    pub no: usize,
    /// Samples for the scaling table.
    #[arg(long, default_value_t = 1000)]
    pub nq: usize,
    /// Base dimension for the scaling table.
    #[arg(long, default_value_t = 40)]
    pub nd: usize,
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// Manifest of the run to reproduce.
    #[arg(long = "from")]
    pub from: PathBuf,
}

/// Failure classes with their exit codes.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Fit(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Fit(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Data(m) | CliError::Fit(m) => m,
        }
    }
}

impl From<HdmrError> for CliError {
    fn from(e: HdmrError) -> Self {
        if e.is_config_error() {
            CliError::Config(e.to_string())
        } else if e.is_data_error() {
            CliError::Data(e.to_string())
        } else {
            CliError::Fit(e.to_string())
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

/// Shared state of one invocation: stage timings and touched files.
pub struct Run {
    pub manifest: RunManifest,
    stage_start: Instant,
}

impl Run {
    fn new(argv: Vec<String>, cli: &Cli) -> Self {
        Run {
            manifest: RunManifest::new(argv, cli),
            stage_start: Instant::now(),
        }
    }

    /// Closes the current stage under `name`.
    pub fn stage(&mut self, name: &str) {
        let secs = self.stage_start.elapsed().as_secs_f64();
        self.manifest.timings.push((name.to_string(), secs));
        self.stage_start = Instant::now();
    }

    pub fn input(&mut self, p: &Path) {
        self.manifest.inputs.push(p.to_path_buf());
    }

    pub fn output(&mut self, p: &Path) {
        self.manifest.outputs.push(p.to_path_buf());
    }
}

fn bounds_check(lo: f64, hi: f64, what: &str) -> CliResult<()> {
    if !(lo < hi) {
        return Err(CliError::Config(format!("{what}: lower bound {lo} must be below upper bound {hi}")));
    }
    Ok(())
}

fn cmd_fit(a: &FitArgs, run: &mut Run) -> CliResult<()> {
    if !(0.0..1.0).contains(&a.val_frac) || !(0.0..1.0).contains(&a.test_frac) || a.val_frac + a.test_frac >= 1.0 {
        return Err(CliError::Config("val-frac and test-frac must be in [0, 1) with a sum below 1".into()));
    }
    bounds_check(a.xi_lo, a.xi_hi, "germ interval")?;
    let basis = BasisConfig::legendre(a.xi_lo, a.xi_hi, a.no)?;
    let robust = if a.robust {
        Some(RobustConfig::new(NoiseModel::new(a.noise_s, a.noise_su, a.xi_lo, a.xi_hi)?))
    } else {
        None
    };
    let sel = SelectionConfig {
        no_lars: a.nolars,
        n_inter: a.ninter,
        max_groups: a.max_groups,
        hierarchical: a.hierarchical,
        ..Default::default()
    };
    let fit = FitConfig {
        no: a.no,
        n_pc: a.npc,
        n_inter: a.ninter,
        nr: a.nr,
        ridge: a.ridge,
        seed: a.seed,
        robust,
        ..Default::default()
    };
    run.input(&a.input);
    let data = SampleSet::read_csv(std::io::BufReader::new(File::open(&a.input).map_err(|e| io_err(&a.input, e))?))?;
    sel.validate(data.nd())?;
    fit.validate(data.nd())?;
    let n = data.len();
    let n_test = (a.test_frac * n as f64).round() as usize;
    let n_val = (a.val_frac * n as f64).round() as usize;
    let n_train = n.saturating_sub(n_test + n_val);
    let (train, val, test) = split(&data, n_train, n_val, n_test, a.seed)?;
    run.stage("load");

    let (model, train_pred) = match a.mode {
        FitMode::Dense => {
            let path = glars_select(&train, &sel, &basis)?;
            run.stage("select");
            let (model, diag) = fit_hdmr(&train, &val, &path, &fit, &basis)?;
            run.stage("fit");
            for w in &diag.warnings {
                log::warn!("{w}");
            }
            if let Some(p) = &a.diagnostics {
                diag.write_csv(create(p)?)?;
                run.output(p);
            }
            if let Some(p) = &a.path_csv {
                path.write_csv(create(p)?)?;
                run.output(p);
            }
            let pred = model.predict_set(&train)?;
            (AnyModel::Hdmr(model), pred)
        }
        FitMode::Separated => {
            if data.ndx() == 0 {
                return Err(CliError::Data("separated mode needs spatial x columns".into()));
            }
            bounds_check(a.x_lo, a.x_hi, "spatial interval")?;
            let (lo, hi) = (vec![a.x_lo; data.ndx()], vec![a.x_hi; data.ndx()]);
            let spatial = match a.spatial {
                SpatialChoice::Hat => SpatialBasis::hat(a.cardx, lo, hi)?,
                SpatialChoice::Legendre => SpatialBasis::legendre(a.cardx, lo, hi)?,
            };
            let sep = SeparatedConfig {
                lambda_max: a.rank,
                joint_update: a.joint_update,
                ..Default::default()
            };
            let (model, diag) = fit_separated(&train, &val, &spatial, &sel, &fit, &basis, &sep)?;
            run.stage("fit");
            for w in &diag.warnings {
                log::warn!("{w}");
            }
            if let Some(p) = &a.diagnostics {
                diag.write_csv(create(p)?)?;
                run.output(p);
            }
            let pred = model.predict_set(&train)?;
            (AnyModel::Separated(model), pred)
        }
    };
    std::fs::write(&a.out, model.to_json()?).map_err(|e| io_err(&a.out, e))?;
    run.output(&a.out);
    report_eps("train_eps", relative_error_values(&train_pred, train.u()));
    if !test.is_empty() {
        report_eps("test_eps", relative_error_values(&model.predict_set(&test)?, test.u()));
    }
    run.stage("write");
    Ok(())
}

fn report_eps(label: &str, eps: hdmr_core::Result<f64>) {
    match eps {
        Ok(e) => println!("{label} {e:e}"),
        Err(e) => println!("{label} undefined ({e})"),
    }
}

fn cmd_predict(a: &PredictArgs, run: &mut Run) -> CliResult<()> {
    run.input(&a.model);
    run.input(&a.input);
    let model = AnyModel::load(&a.model)?;
    let file = File::open(&a.input).map_err(|e| io_err(&a.input, e))?;
    let (points, _) = SampleSet::read_points_csv(std::io::BufReader::new(file))?;
    run.stage("load");
    let pred = model.predict_set(&points)?;
    run.stage("predict");
    let mut w = create(&a.out)?;
    let mut header = header_names(points.ndx(), points.nd());
    header.pop();
    header.push("u_hat".into());
    writeln!(w, "{}", header.join(",")).map_err(|e| io_err(&a.out, e))?;
    for (q, p) in pred.iter().enumerate() {
        let row: Vec<String> = points
            .x_row(q)
            .iter()
            .chain(points.xi_row(q))
            .chain(std::iter::once(p))
            .map(|v| v.to_string())
            .collect();
        writeln!(w, "{}", row.join(",")).map_err(|e| io_err(&a.out, e))?;
    }
    w.flush().map_err(|e| io_err(&a.out, e))?;
    run.output(&a.out);
    run.stage("write");
    Ok(())
}

#[derive(Serialize)]
struct SobolRow {
    group: String,
    index: f64,
}

#[derive(Serialize)]
struct StatsDoc {
    mean: f64,
    variance: f64,
    sobol: Vec<SobolRow>,
    total: Vec<f64>,
}

fn cmd_stats(a: &StatsArgs, run: &mut Run) -> CliResult<()> {
    run.input(&a.model);
    let model = match AnyModel::load(&a.model)? {
        AnyModel::Hdmr(m) => m,
        AnyModel::Separated(_) => {
            return Err(CliError::Data("statistics are available for HDMR models only".into()));
        }
    };
    run.stage("load");
    let variance = model.variance();
    let (sobol, total) = if variance > 0.0 {
        let s = model
            .sobol_indices()?
            .into_iter()
            .map(|(g, index)| SobolRow {
                group: g.to_string(),
                index,
            })
            .collect();
        (s, model.total_sobol()?)
    } else {
        log::warn!("model variance is zero; Sobol indices are undefined");
        (Vec::new(), Vec::new())
    };
    let doc = StatsDoc {
        mean: model.mean(),
        variance,
        sobol,
        total,
    };
    run.stage("stats");
    let text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Fit(e.to_string()))?;
    match &a.out {
        Some(p) => {
            std::fs::write(p, &text).map_err(|e| io_err(p, e))?;
            run.output(p);
        }
        None => println!("{text}"),
    }
    if let Some(p) = &a.sobol_csv {
        let mut w = create(p)?;
        writeln!(w, "group,index").map_err(|e| io_err(p, e))?;
        for r in &doc.sobol {
            writeln!(w, "{},{}", r.group, r.index).map_err(|e| io_err(p, e))?;
        }
        w.flush().map_err(|e| io_err(p, e))?;
        run.output(p);
    }
    if let Some(p) = &a.total_csv {
        let mut w = create(p)?;
        writeln!(w, "dim,total_index").map_err(|e| io_err(p, e))?;
        for (i, t) in doc.total.iter().enumerate() {
            writeln!(w, "{},{}", i + 1, t).map_err(|e| io_err(p, e))?;
        }
        w.flush().map_err(|e| io_err(p, e))?;
        run.output(p);
    }
    Ok(())
}

fn cmd_gen(a: &GenArgs, run: &mut Run) -> CliResult<()> {
    let cfg = DiffusionConfig {
        nd_nu: a.nd_nu,
        nd_f: a.nd_f,
        sigma_nu: a.sigma_nu,
        sigma_f: a.sigma_f,
        lc_nu: a.lc_nu,
        lc_f: a.lc_f,
        nu0: a.nu0,
        f0: a.f0,
        u_minus: a.u_minus,
        u_plus: a.u_plus,
        m_x: a.mx,
        m_k: a.mk,
        domain: (0.0, 1.0),
    };
    let gen = DiffusionGenerator::new(&cfg)?;
    run.stage("spectrum");
    let mode = if a.scattered {
        SampleMode::Scattered
    } else {
        SampleMode::Point { x: a.x_star }
    };
    let set = gen.generate(a.nq, a.seed, mode)?;
    run.stage("solve");
    set.write_csv(create(&a.out)?)?;
    run.output(&a.out);
    if let Some(p) = &a.spectrum_nu {
        gen.nu_field.write_spectrum_csv(create(p)?)?;
        run.output(p);
    }
    if let Some(p) = &a.spectrum_f {
        gen.f_field.write_spectrum_csv(create(p)?)?;
        run.output(p);
    }
    run.stage("write");
    Ok(())
}

fn cmd_replay(a: &ReplayArgs) -> CliResult<()> {
    let m = RunManifest::load(&a.from)?;
    let cli = Cli::try_parse_from(std::iter::once("hdmr".to_string()).chain(m.argv.iter().cloned()))
        .map_err(|e| CliError::Config(format!("manifest arguments do not parse: {e}")))?;
    if matches!(cli.cmd, Command::Replay(_)) {
        return Err(CliError::Config("a replay manifest cannot be replayed".into()));
    }
    execute(m.argv.clone(), cli)
}

fn default_manifest(cli: &Cli) -> PathBuf {
    let primary = match &cli.cmd {
        Command::Fit(a) => Some(a.out.clone()),
        Command::Predict(a) => Some(a.out.clone()),
        Command::Stats(a) => a.out.clone(),
        Command::GenDiffusion(a) => Some(a.out.clone()),
        Command::Bench(a) => Some(a.out.clone()),
        Command::Replay(_) => None,
    };
    match primary {
        Some(p) => {
            let mut s = p.into_os_string();
            s.push(".manifest.json");
            PathBuf::from(s)
        }
        None => PathBuf::from(format!("hdmr-{}.manifest.json", manifest::command_name(&cli.cmd))),
    }
}

fn execute(argv: Vec<String>, cli: Cli) -> CliResult<()> {
    if let Command::Replay(a) = &cli.cmd {
        return cmd_replay(a);
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("thread count must be at least 1".into()));
        }
        // the global pool can only be set once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let mut run = Run::new(argv, &cli);
    let result = match &cli.cmd {
        Command::Fit(a) => cmd_fit(a, &mut run),
        Command::Predict(a) => cmd_predict(a, &mut run),
        Command::Stats(a) => cmd_stats(a, &mut run),
        Command::GenDiffusion(a) => cmd_gen(a, &mut run),
        Command::Bench(a) => bench::cmd_bench(a, &mut run),
        Command::Replay(_) => unreachable!(),
    };
    run.manifest.exit_code = result.as_ref().map_or_else(|e| e.code(), |_| 0);
    run.manifest.error = result.as_ref().err().map(|e| e.message().to_string());
    let path = cli.manifest.clone().unwrap_or_else(|| default_manifest(&cli));
    if let Err(e) = run.manifest.save(&path) {
        log::warn!("could not write manifest {}: {e}", path.display());
    }
    result
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = Cli::parse();
    match execute(argv, cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
