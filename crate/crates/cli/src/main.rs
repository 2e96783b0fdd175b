use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use tucker_opt::solvers::{InitialStep, StoppingRules, TramVariant};
use tucker_opt::{ConeBasisChoice, SampleSet, Shape, TuckerRank};
use tucker_opt_cli::*;

#[derive(Parser)]
#[command(name = "tucker-opt", version, about = "Low-rank Tucker tensor completion experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random low-rank tensor, sample it and run a solver.
    Synthetic(SyntheticArgs),
    /// Complete a tensor from a sample file.
    Complete(CompleteArgs),
    /// Run GRAP on the instance whose iterates converge to a non-stationary
    /// point.
    Apocalypse(ApocalypseArgs),
    /// Summarize a trace file.
    Report { trace: PathBuf },
}

/// Comma-separated per-mode values; a single value applies to every mode.
fn expand(v: &[usize], d: usize, what: &str) -> Result<Vec<usize>> {
    match v.len() {
        1 => Ok(vec![v[0]; d]),
        n if n == d => Ok(v.to_vec()),
        n => bail!("{what} has {n} entries for an order-{d} tensor"),
    }
}

#[derive(Args, Clone)]
struct SolverArgs {
    #[arg(long, value_enum, default_value = "grap")]
    solver: SolverKind,
    /// Rank bound r.
    #[arg(long, value_delimiter = ',', required = true)]
    rank: Vec<usize>,
    /// Rank of the random starting point (defaults to r).
    #[arg(long, value_delimiter = ',')]
    init_rank: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-12)]
    train_tol: f64,
    #[arg(long, default_value_t = 1e-8)]
    rel_change_tol: f64,
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
    /// Wall-clock budget in seconds.
    #[arg(long)]
    time_budget: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    omega: f64,
    #[arg(long, default_value_t = 0.5)]
    ls_rho: f64,
    #[arg(long, default_value_t = 1e-4)]
    ls_a: f64,
    #[arg(long, default_value_t = 1e-10)]
    ls_s_min: f64,
    /// Constant initial stepsize instead of the exact quadratic one.
    #[arg(long)]
    step: Option<f64>,
    /// Basis for the rank-increasing directions: `leading` or `random`.
    #[arg(long, default_value = "leading")]
    basis: String,
    #[arg(long, default_value_t = 0.1)]
    eps_r0: f64,
    #[arg(long, default_value_t = 0.5)]
    rho_r: f64,
    #[arg(long, default_value_t = 0.01)]
    delta: f64,
    #[arg(long, default_value_t = 0.5)]
    rho_1: f64,
    /// Rank increment per mode.
    #[arg(long, value_delimiter = ',')]
    ell: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0.01)]
    eps_1: f64,
    #[arg(long, default_value_t = 0.5)]
    eps_2: f64,
    #[arg(long, default_value_t = 5)]
    inner_max_iters: usize,
    /// Follow the published TRAM loop instead of the practical variant.
    #[arg(long)]
    tram_paper: bool,
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

impl SolverArgs {
    fn apply(&self, cfg: &mut ExperimentConfig, d: usize) -> Result<()> {
        cfg.rank = expand(&self.rank, d, "--rank")?;
        cfg.init_rank = match &self.init_rank {
            Some(r) => expand(r, d, "--init-rank")?,
            None => cfg.rank.clone(),
        };
        cfg.solver = self.solver;
        cfg.seed = self.seed;
        cfg.stops = StoppingRules {
            train_tol: self.train_tol,
            rel_change_tol: self.rel_change_tol,
            max_iters: self.max_iters,
            time_budget: self.time_budget,
        };
        let ls = &mut cfg.grap.line_search;
        ls.rho = self.ls_rho;
        ls.a = self.ls_a;
        ls.s_min = self.ls_s_min;
        if let Some(s) = self.step {
            ls.initial = InitialStep::Constant(s);
        }
        cfg.grap.omega = self.omega;
        cfg.grap.choice = match self.basis.as_str() {
            "leading" => ConeBasisChoice::LeadingSingular,
            "random" => ConeBasisChoice::RandomComplement(derive_seed(self.seed, STREAM_BASIS)),
            other => bail!("unknown basis {other:?}; expected leading or random"),
        };
        let t = &mut cfg.tram;
        t.line_search = cfg.grap.line_search;
        t.choice = cfg.grap.choice;
        t.eps_r0 = self.eps_r0;
        t.rho_r = self.rho_r;
        t.delta = self.delta;
        t.rho_1 = self.rho_1;
        t.ell = self.ell.as_ref().map(|e| expand(e, d, "--ell").map(TuckerRank)).transpose()?;
        t.eps_1 = self.eps_1;
        t.eps_2 = self.eps_2;
        t.inner_max_iters = self.inner_max_iters;
        t.variant = if self.tram_paper { TramVariant::Paper } else { TramVariant::PracticalFlowchart };
        Ok(())
    }
}

#[derive(Args)]
struct SyntheticArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    shape: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    true_rank: Vec<usize>,
    /// Sampling rate; training and test sets each get round(p N) entries.
    #[arg(long)]
    p: f64,
    /// Writes the training samples here.
    #[arg(long)]
    samples_out: Option<PathBuf>,
    /// Writes the test samples here.
    #[arg(long)]
    test_out: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct CompleteArgs {
    /// Training samples in the text format.
    #[arg(long)]
    samples_in: PathBuf,
    /// Held-out samples for the test error.
    #[arg(long)]
    test_in: Option<PathBuf>,
    /// Expected shape; the sample headers must agree with it.
    #[arg(long, value_delimiter = ',')]
    shape: Option<Vec<usize>>,
    /// Writes the completed tensor's values at the test indices here.
    #[arg(long)]
    samples_out: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct ApocalypseArgs {
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 0.3)]
    alpha: f64,
    #[arg(long, default_value_t = 30)]
    iters: usize,
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

fn print_json(v: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn synthetic(a: SyntheticArgs) -> Result<()> {
    let d = a.shape.len();
    let true_rank = expand(&a.true_rank, d, "--true-rank")?;
    let mut cfg = ExperimentConfig::new(a.shape.clone(), true_rank, vec![1; d], a.p, 0, SolverKind::Grap);
    a.solver.apply(&mut cfg, d)?;
    let prob = build_problem(&cfg)?;
    if let Some(p) = &a.samples_out {
        prob.train.save(p).with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(p) = &a.test_out {
        prob.test.save(p).with_context(|| format!("writing {}", p.display()))?;
    }
    let out = solve_completion(&cfg, &prob.train, Some(&prob.test), &prob.x0)?;
    if let Some(p) = &a.solver.trace_out {
        save_trace(p, "synthetic", &cfg, &out)?;
    }
    print_json(&Summary::from_output(&out))
}

fn load(path: &Path) -> Result<SampleSet> {
    SampleSet::load(path).with_context(|| format!("reading {}", path.display()))
}

fn complete(a: CompleteArgs) -> Result<()> {
    let train = load(&a.samples_in)?;
    let dims = train.shape().dims().to_vec();
    if let Some(s) = &a.shape {
        check_shape(&train, s, &a.samples_in.display().to_string())?;
    }
    let test = a.test_in.as_deref().map(load).transpose()?;
    if let (Some(t), Some(path)) = (&test, &a.test_in) {
        check_shape(t, &dims, &path.display().to_string())?;
    }
    let d = dims.len();
    let mut cfg = ExperimentConfig::new(dims.clone(), vec![1; d], vec![1; d], 1.0, 0, SolverKind::Grap);
    a.solver.apply(&mut cfg, d)?;
    cfg.true_rank = cfg.rank.clone();
    cfg.p = train.len() as f64 / Shape::new(dims.clone())?.numel() as f64;
    cfg.validate()?;
    let shape = Shape::new(dims)?;
    let x0 = gen_synthetic(&shape, &TuckerRank(cfg.init_rank.clone()), derive_seed(cfg.seed, STREAM_INIT))?;
    let out = solve_completion(&cfg, &train, test.as_ref(), &x0)?;
    if let Some(p) = &a.solver.trace_out {
        save_trace(p, "complete", &cfg, &out)?;
    }
    if let Some(p) = &a.samples_out {
        let at = test.as_ref().unwrap_or(&train);
        at.with_values(at.sample(&out.x)).save(p).with_context(|| format!("writing {}", p.display()))?;
    }
    print_json(&Summary::from_output(&out))
}

#[derive(Serialize)]
struct ApocalypseReport {
    iterations: usize,
    /// Largest distance between an iterate and the closed-form sequence.
    max_deviation: f64,
    approx_cone_measure: f64,
    riemannian_gradient_norm: f64,
    ambient_gradient_norm: f64,
}

fn apocalypse(a: ApocalypseArgs) -> Result<()> {
    let cfg = ApocalypseConfig { n: a.n, alpha: a.alpha, iters: a.iters };
    let run = run_apocalypse(&cfg)?;
    let max_deviation = apocalypse_deviation(&cfg, &run)?;
    if let Some(p) = &a.trace_out {
        save_trace(p, "apocalypse", &cfg, &run.output)?;
    }
    let s = &run.final_stationarity;
    print_json(&ApocalypseReport {
        iterations: run.output.trace.iterations(),
        max_deviation,
        approx_cone_measure: s.approx_cone,
        riemannian_gradient_norm: s.riemannian,
        ambient_gradient_norm: s.ambient,
    })
}

fn report(path: PathBuf) -> Result<()> {
    let f = std::fs::File::open(&path).with_context(|| format!("reading {}", path.display()))?;
    let lines = read_trace(std::io::BufReader::new(f))?;
    match lines.last() {
        Some(TraceLine::Summary(s)) => print_json(s),
        _ => bail!("{}: trace has no summary line", path.display()),
    }
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Command::Synthetic(a) => synthetic(a),
        Command::Complete(a) => complete(a),
        Command::Apocalypse(a) => apocalypse(a),
        Command::Report { trace } => report(trace),
    }
}
