//! Experiment driver: synthetic data, sample splits, solver runs and trace
//! files.
//!
//! Randomness comes from `ChaCha8Rng::seed_from_u64`; normals use the
//! ziggurat `StandardNormal` of rand_distr. Every stream (data, samples,
//! initial guess) is derived from the run seed with [`derive_seed`].

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use tucker_opt::geometry::{stationarity, ConeBasisChoice, StationaritySnapshot};
use tucker_opt::matkernels::orthonormalize;
use tucker_opt::objectives::sampled_relative_error;
use tucker_opt::solvers::{
    grap_solve, rfgrap_solve, rgd_fixed_rank, tram_solve, GrapConfig, InitialStep, LineSearchConfig,
    RunOptions, SolverOutput, StoppingRules, TraceEvent, TraceRecord, TramConfig,
};
use tucker_opt::tenalg::outer_rank1;
use tucker_opt::{
    CompletionObjective, DenseLeastSquares, DenseTensor, Matrix, Objective, SampleSet, Shape, TuckerRank,
    TuckerTensor,
};

pub const TRACE_FORMAT_VERSION: u32 = 1;

/// Independent sub-seed for a named stream.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub const STREAM_DATA: u64 = 1;
pub const STREAM_SAMPLES: u64 = 2;
pub const STREAM_INIT: u64 = 3;
pub const STREAM_BASIS: u64 = 4;

/// Tucker tensor with a standard normal core and factors obtained by
/// orthonormalizing standard normal matrices.
pub fn gen_synthetic(shape: &Shape, r: &TuckerRank, seed: u64) -> Result<TuckerTensor> {
    r.validate_for(shape)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let core_shape = Shape::new(r.dims().to_vec())?;
    let core_data: Vec<f64> = (0..core_shape.numel()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let core = DenseTensor::new(core_shape, core_data)?;
    let mut factors = Vec::with_capacity(shape.order());
    for (&n, &rk) in shape.dims().iter().zip(r.dims()) {
        let g = Matrix::from_fn(n, rk, |_, _| StandardNormal.sample(&mut rng));
        factors.push(orthonormalize(&g)?);
    }
    Ok(TuckerTensor::new(core, factors)?)
}

/// 0-based multi-indices, one per sample.
pub type Indices = Vec<Vec<usize>>;

/// Disjoint training and test index sets, each of size `round(p * N)`,
/// drawn uniformly without replacement (0-based, sorted).
pub fn gen_samples(shape: &Shape, p: f64, seed: u64) -> Result<(Indices, Indices)> {
    if !(p > 0.0 && p <= 1.0) {
        bail!("sampling rate {p} outside (0, 1]");
    }
    let total = shape.numel();
    let m = (p * total as f64).round() as usize;
    if 2 * m > total {
        bail!("two disjoint sets of {m} samples do not fit in {total} entries");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = rand::seq::index::sample(&mut rng, total, 2 * m).into_vec();
    let mut omega: Indices = picked[..m].iter().map(|&l| shape.multi_index(l)).collect();
    let mut gamma: Indices = picked[m..].iter().map(|&l| shape.multi_index(l)).collect();
    omega.sort();
    gamma.sort();
    Ok((omega, gamma))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Grap,
    Rfgrap,
    /// Fixed-rank Riemannian gradient descent at the initial rank.
    Rgd,
    Tram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub shape: Vec<usize>,
    pub true_rank: Vec<usize>,
    /// Rank bound `r`.
    pub rank: Vec<usize>,
    pub init_rank: Vec<usize>,
    pub p: f64,
    pub seed: u64,
    pub solver: SolverKind,
    pub stops: StoppingRules,
    pub grap: GrapConfig,
    pub tram: TramConfig,
}

impl ExperimentConfig {
    pub fn new(
        shape: Vec<usize>,
        true_rank: Vec<usize>,
        rank: Vec<usize>,
        p: f64,
        seed: u64,
        solver: SolverKind,
    ) -> Self {
        ExperimentConfig {
            init_rank: rank.clone(),
            shape,
            true_rank,
            rank,
            p,
            seed,
            solver,
            stops: StoppingRules::default(),
            grap: GrapConfig::default(),
            tram: TramConfig::default(),
        }
    }

    /// `init_rank <= rank <= shape`, `true_rank <= shape`, `p` in `(0, 1]`.
    pub fn validate(&self) -> Result<()> {
        let shape = Shape::new(self.shape.clone())?;
        let r = TuckerRank(self.rank.clone());
        r.validate_for(&shape)?;
        TuckerRank(self.true_rank.clone()).validate_for(&shape)?;
        let init = TuckerRank(self.init_rank.clone());
        init.validate_for(&shape)?;
        if !init.le(&r) {
            bail!("initial rank {init} exceeds the rank bound {r}");
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            bail!("sampling rate {} outside (0, 1]", self.p);
        }
        Ok(())
    }
}

/// Data for one synthetic completion problem.
pub struct Problem {
    pub truth: TuckerTensor,
    pub train: SampleSet,
    pub test: SampleSet,
    pub x0: TuckerTensor,
}

pub fn build_problem(cfg: &ExperimentConfig) -> Result<Problem> {
    cfg.validate()?;
    let shape = Shape::new(cfg.shape.clone())?;
    let truth =
        gen_synthetic(&shape, &TuckerRank(cfg.true_rank.clone()), derive_seed(cfg.seed, STREAM_DATA))?;
    let (omega, gamma) = gen_samples(&shape, cfg.p, derive_seed(cfg.seed, STREAM_SAMPLES))?;
    let train = SampleSet::from_tucker(&truth, omega)?;
    let test = SampleSet::from_tucker(&truth, gamma)?;
    let x0 = gen_synthetic(&shape, &TuckerRank(cfg.init_rank.clone()), derive_seed(cfg.seed, STREAM_INIT))?;
    Ok(Problem { truth, train, test, x0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub stop: String,
    pub iterations: usize,
    pub f: f64,
    pub train_error: f64,
    pub test_error: Option<f64>,
    pub rank: Vec<usize>,
    pub hosvd_truncations: usize,
    /// Count of each non-`none` trace event.
    pub events: BTreeMap<String, usize>,
    pub elapsed: f64,
}

impl Summary {
    pub fn from_output(out: &SolverOutput) -> Self {
        let last = out.trace.last();
        let mut events = BTreeMap::new();
        for r in &out.trace.records {
            if r.event != TraceEvent::None {
                let tag = serde_json::to_value(r.event).expect("serializable");
                *events.entry(tag.as_str().unwrap_or_default().to_string()).or_insert(0) += 1;
            }
        }
        Summary {
            stop: out.trace.stop.tag().to_string(),
            iterations: out.trace.iterations(),
            f: last.f,
            train_error: last.train_error,
            test_error: last.test_error,
            rank: last.rank.clone(),
            hosvd_truncations: out.trace.total_hosvd_truncations(),
            events,
            elapsed: last.elapsed,
        }
    }
}

/// Runs the configured solver on a completion problem with the test error
/// recorded at every iteration.
pub fn solve_completion(
    cfg: &ExperimentConfig,
    train: &SampleSet,
    test: Option<&SampleSet>,
    x0: &TuckerTensor,
) -> Result<SolverOutput> {
    let obj = CompletionObjective::new(train.clone())?;
    if let Some(t) = test {
        sampled_relative_error(t, x0)?;
    }
    let test_fn =
        test.map(|t| move |x: &TuckerTensor| sampled_relative_error(t, x).expect("nonzero test values"));
    let opts = RunOptions {
        stops: cfg.stops,
        record_iterates: false,
        test_error: test_fn.as_ref().map(|f| f as &(dyn Fn(&TuckerTensor) -> f64 + Sync)),
    };
    let r = TuckerRank(cfg.rank.clone());
    let out = match cfg.solver {
        SolverKind::Grap => grap_solve(&obj, x0, &r, &cfg.grap, &opts)?,
        SolverKind::Rfgrap => rfgrap_solve(&obj, x0, &r, &cfg.grap, &opts)?,
        SolverKind::Rgd => {
            let max = cfg.stops.max_iters;
            rgd_fixed_rank(&obj, x0, 0.0, cfg.tram.delta, max, &cfg.tram.line_search, &opts)?.0
        }
        SolverKind::Tram => tram_solve(&obj, x0, &r, &cfg.tram, &opts)?,
    };
    Ok(out)
}

/// Fails when a sample file's shape header disagrees with the configured
/// shape.
pub fn check_shape(samples: &SampleSet, expected: &[usize], what: &str) -> Result<()> {
    if samples.shape().dims() != expected {
        bail!(
            "{what}: shape header {:?} does not match the configured shape {expected:?}",
            samples.shape().dims()
        );
    }
    Ok(())
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(Problem, SolverOutput)> {
    let prob = build_problem(cfg)?;
    let out = solve_completion(cfg, &prob.train, Some(&prob.test), &prob.x0)?;
    Ok((prob, out))
}

/// One line of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TraceLine {
    Header { version: u32, tool_version: String, command: String, config: serde_json::Value },
    Iter(TraceRecord),
    Summary(Summary),
}

pub fn write_trace<W: Write>(
    mut w: W,
    command: &str,
    config: &impl Serialize,
    out: &SolverOutput,
) -> Result<()> {
    let header = TraceLine::Header {
        version: TRACE_FORMAT_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        config: serde_json::to_value(config)?,
    };
    writeln!(w, "{}", serde_json::to_string(&header)?)?;
    for r in &out.trace.records {
        writeln!(w, "{}", serde_json::to_string(&TraceLine::Iter(r.clone()))?)?;
    }
    writeln!(w, "{}", serde_json::to_string(&TraceLine::Summary(Summary::from_output(out)))?)?;
    Ok(())
}

pub fn save_trace(path: &Path, command: &str, config: &impl Serialize, out: &SolverOutput) -> Result<()> {
    let f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = std::io::BufWriter::new(f);
    write_trace(&mut w, command, config, out)?;
    w.flush()?;
    Ok(())
}

pub fn read_trace<R: BufRead>(r: R) -> Result<Vec<TraceLine>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("trace line {}", i + 1))?);
    }
    Ok(out)
}

/// `A = e1 o e1 o e1 + e3 o e3 o e3` and `X0 = e1 o e1 o e1 + e2 o e2 o e2`
/// in `R^{n x n x n}`.
pub fn apocalypse_instance(n: usize) -> Result<(DenseTensor, TuckerTensor)> {
    if n < 3 {
        bail!("the instance needs n >= 3");
    }
    let e = |i: usize| {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        v
    };
    let (e1, e3) = (e(0), e(2));
    let mut a = outer_rank1(&[&e1, &e1, &e1])?;
    a.axpy(1.0, &outer_rank1(&[&e3, &e3, &e3])?)?;
    let core = DenseTensor::from_fn(Shape::new(vec![2, 2, 2])?, |i| {
        if i[0] == i[1] && i[1] == i[2] {
            1.0
        } else {
            0.0
        }
    });
    let u = Matrix::from_fn(n, 2, |i, j| if i == j { 1.0 } else { 0.0 });
    let x0 = TuckerTensor::new(core, vec![u.clone(), u.clone(), u])?;
    Ok((a, x0))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApocalypseConfig {
    pub n: usize,
    pub alpha: f64,
    pub iters: usize,
}

pub struct ApocalypseRun {
    pub output: SolverOutput,
    pub target: DenseTensor,
    pub final_stationarity: StationaritySnapshot,
}

/// GRAP with the constant step `alpha` on `f = 1/2 ||X - A||^2`, for which
/// the iterates are `e1 o e1 o e1 + (1 - alpha)^t e2 o e2 o e2`.
pub fn run_apocalypse(cfg: &ApocalypseConfig) -> Result<ApocalypseRun> {
    let (a, x0) = apocalypse_instance(cfg.n)?;
    let obj = DenseLeastSquares::with_scale(a.clone(), 0.5);
    let r = TuckerRank::uniform(3, 2);
    let grap = GrapConfig {
        line_search: LineSearchConfig { initial: InitialStep::Constant(cfg.alpha), ..Default::default() },
        ..Default::default()
    };
    let opts = RunOptions {
        stops: StoppingRules { train_tol: 0.0, rel_change_tol: 0.0, max_iters: cfg.iters, time_budget: None },
        record_iterates: true,
        test_error: None,
    };
    let output = grap_solve(&obj, &x0, &r, &grap, &opts)?;
    let (_, g) = obj.evaluate(&output.x)?;
    let final_stationarity = stationarity(&output.x, &g, &r, ConeBasisChoice::LeadingSingular)?;
    Ok(ApocalypseRun { output, target: a, final_stationarity })
}

/// Largest Frobenius distance between the recorded iterates and
/// `e1 o e1 o e1 + (1 - alpha)^t e2 o e2 o e2`.
pub fn apocalypse_deviation(cfg: &ApocalypseConfig, run: &ApocalypseRun) -> Result<f64> {
    let (_, x0) = apocalypse_instance(cfg.n)?;
    let mut worst = 0.0f64;
    for (t, x) in run.output.iterates.iter().enumerate() {
        let mut core = x0.core().clone();
        core.set(&[1, 1, 1], (1.0 - cfg.alpha).powi(t as i32));
        let want = TuckerTensor::new(core, x0.factors().to_vec())?.to_dense();
        worst = worst.max(x.to_dense().sub(&want)?.fro_norm());
    }
    Ok(worst)
}
