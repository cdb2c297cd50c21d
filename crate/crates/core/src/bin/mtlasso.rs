use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mtlasso::bench::{run_benchmark, run_path, run_solver, write_csv, RunLimits, RunRecord, SolverKind};
use mtlasso::io::{load_libsvm, load_school_layout, school_sizes, write_libsvm};
use mtlasso::synthetic::{generate_synthetic, SyntheticSpec};
use mtlasso::{Error, MultiTaskProblem, Result};

#[derive(Parser, Debug)]
#[command(name = "mtlasso", version, about = "l1,inf-constrained multi-task Lasso solvers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Solve one radius with one solver.
    Solve,
    /// Solve a grid of radii with warm starts.
    Path,
    /// Run every (solver, radius, tolerance) cell and write a CSV report.
    Bench,
    /// Write a synthetic instance in LIBSVM format.
    Gen,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Libsvm,
    School,
    Synthetic,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        <Self as ValueEnum>::from_str(s, true).map_err(|_| Error::InvalidInput(format!("unknown format `{s}`")))
    }
}

/// Command-line options. Unset options fall back to the config file, then to defaults.
#[derive(Args, Debug, Default)]
struct Opts {
    /// Solver (repeatable for `bench`): as-ssnpal, ssnpal, as-admm, admm.
    #[arg(long, global = true, value_parser = parse_solver)]
    solver: Vec<SolverKind>,
    /// Ball radius (repeatable).
    #[arg(long, global = true)]
    gamma: Vec<f64>,
    /// Stopping tolerance on the relative KKT residual (repeatable for `bench`).
    #[arg(long, global = true)]
    tol: Vec<f64>,
    /// Sieving bound on the proximal residual; defaults to the tolerance.
    #[arg(long, global = true)]
    eps: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Synthetic scale: 20 i tasks of 128 samples and 36 features.
    #[arg(long = "scale-i", global = true)]
    scale_i: Option<usize>,
    #[arg(long = "max-iter", global = true)]
    max_iter: Option<usize>,
    #[arg(long = "time-limit-s", global = true)]
    time_limit_s: Option<f64>,
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Number of tasks for LIBSVM data.
    #[arg(long, global = true)]
    tasks: Option<usize>,
    /// Scale LIBSVM rows and the response to unit norm.
    #[arg(long, global = true)]
    normalize: bool,
    /// Feature dimension for LIBSVM data (default: largest index seen).
    #[arg(long, global = true)]
    features: Option<usize>,
    /// Comma-separated task sizes for School-style tables.
    #[arg(long, global = true)]
    sizes: Option<String>,
    #[arg(long = "design-stddev", global = true)]
    design_stddev: Option<f64>,
    /// Output path (CSV report, or LIBSVM data for `gen`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for `bench`.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// File of `key = value` lines using the long option names.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

fn parse_solver(s: &str) -> std::result::Result<SolverKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn read_config(path: &Path) -> Result<HashMap<String, String>> {
    let text = std::fs::read_to_string(path)?;
    let mut map = HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Parse { line: idx + 1, msg: format!("expected key = value, got `{line}`") });
        };
        map.insert(k.trim().replace('_', "-"), v.trim().to_string());
    }
    Ok(map)
}

/// Merged settings.
struct Settings {
    solvers: Vec<SolverKind>,
    gammas: Vec<f64>,
    tols: Vec<f64>,
    eps: Option<f64>,
    seed: u64,
    scale_i: usize,
    max_iter: Option<usize>,
    time_limit: Duration,
    data: Option<PathBuf>,
    format: Format,
    tasks: usize,
    normalize: bool,
    features: Option<usize>,
    sizes: Option<Vec<usize>>,
    design_stddev: Option<f64>,
    out: Option<PathBuf>,
    jobs: usize,
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::InvalidInput(format!("config: bad value `{v}` for `{key}`")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse_value(key, s)).collect()
}

impl Settings {
    fn resolve(opts: Opts) -> Result<Self> {
        let cfg = match &opts.config {
            Some(p) => read_config(p)?,
            None => HashMap::new(),
        };
        let known = [
            "solver", "gamma", "tol", "eps", "seed", "scale-i", "max-iter", "time-limit-s", "data", "format", "tasks",
            "normalize", "features", "sizes", "design-stddev", "out", "jobs",
        ];
        if let Some(k) = cfg.keys().find(|k| !known.contains(&k.as_str())) {
            return Err(Error::InvalidInput(format!("config: unknown key `{k}`")));
        }
        let get = |k: &str| cfg.get(k).map(String::as_str);

        fn pick<T>(cli: Option<T>, cfg: Option<Result<T>>, default: T) -> Result<T> {
            match (cli, cfg) {
                (Some(v), _) => Ok(v),
                (None, Some(v)) => v,
                (None, None) => Ok(default),
            }
        }
        fn pick_list<T>(cli: Vec<T>, cfg: Option<Result<Vec<T>>>, default: Vec<T>) -> Result<Vec<T>> {
            pick((!cli.is_empty()).then_some(cli), cfg, default)
        }
        fn opt<T>(cli: Option<T>, cfg: Option<Result<T>>) -> Result<Option<T>> {
            match (cli, cfg) {
                (Some(v), _) => Ok(Some(v)),
                (None, Some(v)) => v.map(Some),
                (None, None) => Ok(None),
            }
        }

        let time_limit_s = pick(opts.time_limit_s, get("time-limit-s").map(|v| parse_value("time-limit-s", v)), 7200.0)?;
        if time_limit_s.is_nan() || time_limit_s <= 0.0 {
            return Err(Error::InvalidInput("time limit must be positive".into()));
        }
        let sizes = match opts.sizes {
            Some(s) => Some(parse_list("sizes", &s)?),
            None => get("sizes").map(|v| parse_list("sizes", v)).transpose()?,
        };
        Ok(Self {
            solvers: pick_list(opts.solver, get("solver").map(|v| parse_list("solver", v)), vec![SolverKind::AsSsnpal])?,
            gammas: pick_list(opts.gamma, get("gamma").map(|v| parse_list("gamma", v)), vec![0.01, 0.03, 0.05])?,
            tols: pick_list(opts.tol, get("tol").map(|v| parse_list("tol", v)), vec![1e-6])?,
            eps: opt(opts.eps, get("eps").map(|v| parse_value("eps", v)))?,
            seed: pick(opts.seed, get("seed").map(|v| parse_value("seed", v)), 0)?,
            scale_i: pick(opts.scale_i, get("scale-i").map(|v| parse_value("scale-i", v)), 1)?,
            max_iter: opt(opts.max_iter, get("max-iter").map(|v| parse_value("max-iter", v)))?,
            time_limit: Duration::from_secs_f64(time_limit_s),
            data: opt(opts.data, get("data").map(|v| Ok(PathBuf::from(v))))?,
            format: pick(opts.format, get("format").map(|v| parse_value("format", v)), Format::Synthetic)?,
            tasks: pick(opts.tasks, get("tasks").map(|v| parse_value("tasks", v)), 20)?,
            normalize: opts.normalize || get("normalize").map(|v| parse_value("normalize", v)).transpose()?.unwrap_or(false),
            features: opt(opts.features, get("features").map(|v| parse_value("features", v)))?,
            sizes,
            design_stddev: opt(opts.design_stddev, get("design-stddev").map(|v| parse_value("design-stddev", v)))?,
            out: opt(opts.out, get("out").map(|v| Ok(PathBuf::from(v))))?,
            jobs: pick(opts.jobs, get("jobs").map(|v| parse_value("jobs", v)), 1)?,
        })
    }

    fn limits(&self) -> RunLimits {
        RunLimits { max_iter: self.max_iter, time_limit: self.time_limit, eps: self.eps }
    }

    fn synthetic_spec(&self) -> SyntheticSpec {
        let mut spec = SyntheticSpec::new(self.scale_i, self.seed);
        if let Some(s) = self.design_stddev {
            spec.design_stddev = s;
        }
        spec
    }

    /// Loads the problem and a short dataset label.
    fn problem(&self) -> Result<(MultiTaskProblem, String)> {
        let need_data = || self.data.clone().ok_or_else(|| Error::InvalidInput("--data is required for this format".into()));
        match self.format {
            Format::Synthetic => {
                let (p, _) = generate_synthetic(&self.synthetic_spec())?;
                Ok((p, format!("synthetic-i{}-s{}", self.scale_i, self.seed)))
            }
            Format::Libsvm => {
                let path = need_data()?;
                let p = load_libsvm(&path, self.tasks, self.normalize, self.features)?;
                Ok((p, label(&path)))
            }
            Format::School => {
                let path = need_data()?;
                let sizes = self.sizes.clone().unwrap_or_else(school_sizes);
                Ok((load_school_layout(&path, &sizes)?, label(&path)))
            }
        }
    }
}

fn label(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn print_records(records: &[RunRecord]) {
    println!("{:<10} {:>8} {:>8} {:>9} {:>10} {:>6} {:>6} {:>6} {:>6}  status", "solver", "gamma", "tol", "time_s", "r_kkt", "outer", "inner", "rounds", "active");
    for r in records {
        println!(
            "{:<10} {:>8} {:>8.0e} {:>9.3} {:>10.3e} {:>6} {:>6} {:>6} {:>6}  {}",
            r.solver.as_str(),
            r.gamma,
            r.tol,
            r.time_s,
            r.r_kkt,
            r.outer_iters,
            r.inner_iters,
            r.sieve_rounds,
            r.active_size,
            r.status
        );
    }
}

fn emit(records: &[RunRecord], out: Option<&Path>) -> Result<bool> {
    print_records(records);
    if let Some(path) = out {
        write_csv(records, BufWriter::new(File::create(path)?))?;
    }
    Ok(records.iter().all(|r| r.status.is_converged()))
}

fn run(cli: Cli) -> Result<bool> {
    let command = cli.command;
    let s = Settings::resolve(cli.opts)?;
    match command {
        Command::Gen => {
            let (p, _) = generate_synthetic(&s.synthetic_spec())?;
            match &s.out {
                Some(path) => write_libsvm(&p, BufWriter::new(File::create(path)?))?,
                None => write_libsvm(&p, io::stdout().lock())?,
            }
            eprintln!("m = {}, d = {}, n = {}", p.m(), p.d(), p.n());
            Ok(true)
        }
        Command::Solve => {
            let (p, name) = s.problem()?;
            let out = run_solver(&name, &p, s.solvers[0], s.gammas[0], s.tols[0], &s.limits())?;
            emit(&[out.record], s.out.as_deref())
        }
        Command::Path => {
            let (p, name) = s.problem()?;
            let outs = run_path(&name, &p, s.solvers[0], &s.gammas, s.tols[0], &s.limits())?;
            let records: Vec<RunRecord> = outs.into_iter().map(|o| o.record).collect();
            emit(&records, s.out.as_deref())
        }
        Command::Bench => {
            let (p, name) = s.problem()?;
            let records = run_benchmark(&name, &p, &s.gammas, &s.tols, &s.solvers, &s.limits(), s.jobs.max(1))?;
            emit(&records, s.out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            let _ = writeln!(io::stderr(), "error: {e}");
            ExitCode::from(2)
        }
    }
}
