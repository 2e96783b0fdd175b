//! Line search, stopping rules, iteration traces and the three solvers:
//! GRAP, retraction-free GRAP and the rank-adaptive TRAM.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tucker::TuckerTensor;

mod grap;
mod tram;

pub use grap::{grap_solve, rfgrap_solve, GrapConfig};
pub use tram::{
    rank_decrease, rank_increase, rgd_fixed_rank, tram_solve, RgdStatus, TramConfig, TramVariant,
};

/// Core-singular-value tolerance used for the rank recorded in traces.
pub const TRACE_RANK_TOL: f64 = 1e-8;

/// Tolerance for dropping numerically zero core directions between steps.
pub const REVEAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InitialStep {
    /// Exact minimizer of the quadratic objective along the direction.
    ExactQuadratic,
    Constant(f64),
    /// Previous accepted step (1 on the first iteration).
    PreviousStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSearchConfig {
    pub rho: f64,
    pub a: f64,
    pub s_min: f64,
    pub initial: InitialStep,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        LineSearchConfig { rho: 0.5, a: 1e-4, s_min: 1e-10, initial: InitialStep::ExactQuadratic }
    }
}

#[derive(Debug)]
pub struct Accepted<T> {
    pub value: T,
    pub f: f64,
    pub step: f64,
    pub backtracks: usize,
}

#[derive(Debug)]
pub enum LineSearchOutcome<T> {
    Accepted(Accepted<T>),
    /// The step fell to `s_min` without satisfying the Armijo condition.
    Failed {
        step: f64,
        backtracks: usize,
    },
}

/// Backtracking on `s = rho^l s0` until
/// `f0 - f(cand(s)) >= s * a * slope`, where `slope = <-grad f, g>`.
pub fn armijo<T>(
    f0: f64,
    slope: f64,
    s0: f64,
    cfg: &LineSearchConfig,
    mut cand: impl FnMut(f64) -> Result<(T, f64)>,
) -> Result<LineSearchOutcome<T>> {
    let mut s = s0;
    let mut backtracks = 0;
    loop {
        if !(s > cfg.s_min) {
            return Ok(LineSearchOutcome::Failed { step: s, backtracks });
        }
        let (value, f) = cand(s)?;
        if f0 - f >= s * cfg.a * slope {
            return Ok(LineSearchOutcome::Accepted(Accepted { value, f, step: s, backtracks }));
        }
        s *= cfg.rho;
        backtracks += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingRules {
    pub train_tol: f64,
    pub rel_change_tol: f64,
    pub max_iters: usize,
    /// Wall-clock budget in seconds, checked after every iteration.
    pub time_budget: Option<f64>,
}

impl Default for StoppingRules {
    fn default() -> Self {
        StoppingRules { train_tol: 1e-12, rel_change_tol: 1e-8, max_iters: 500, time_budget: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    TrainTol,
    RelChange,
    MaxIters,
    TimeBudget,
    LineSearchFailed,
    Stationary,
    RankStalled,
}

impl StopReason {
    pub fn tag(&self) -> &'static str {
        match self {
            StopReason::TrainTol => "train_tol",
            StopReason::RelChange => "rel_change",
            StopReason::MaxIters => "max_iters",
            StopReason::TimeBudget => "time_budget",
            StopReason::LineSearchFailed => "line_search_failed",
            StopReason::Stationary => "stationary",
            StopReason::RankStalled => "rank_stalled",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceEvent {
    None,
    Restart,
    RankDecrease,
    RankIncrease,
    TightenEpsR,
    DeficiencyDetected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub f: f64,
    pub train_error: f64,
    pub test_error: Option<f64>,
    /// Stored rank of the iterate.
    pub rank: Vec<usize>,
    /// Rank from the core singular values at [`TRACE_RANK_TOL`].
    pub exact_rank: Vec<usize>,
    pub step: f64,
    pub backtracks: usize,
    /// HOSVD truncations performed in this iteration, rejected trials
    /// included.
    pub hosvd_truncations: usize,
    pub event: TraceEvent,
    /// Seconds since the solver started; excluded from determinism checks.
    pub elapsed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverTrace {
    pub records: Vec<TraceRecord>,
    pub stop: StopReason,
}

impl SolverTrace {
    pub fn last(&self) -> &TraceRecord {
        self.records.last().expect("trace has the initial record")
    }

    /// Iterations taken (records after the initial one).
    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn total_hosvd_truncations(&self) -> usize {
        self.records.iter().map(|r| r.hosvd_truncations).sum()
    }

    /// One JSON object per line.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("serializable"));
            out.push('\n');
        }
        out
    }
}

pub type TestErrorFn<'a> = &'a (dyn Fn(&TuckerTensor) -> f64 + Sync);

#[derive(Clone, Copy, Default)]
pub struct RunOptions<'a> {
    pub stops: StoppingRules,
    pub record_iterates: bool,
    pub test_error: Option<TestErrorFn<'a>>,
}

#[derive(Debug, Clone)]
pub struct SolverOutput {
    pub x: TuckerTensor,
    pub trace: SolverTrace,
    /// Every recorded iterate, when requested.
    pub iterates: Vec<TuckerTensor>,
}

/// Per-iteration bookkeeping shared by the solvers.
pub(crate) struct Recorder<'a> {
    opts: RunOptions<'a>,
    start: Instant,
    records: Vec<TraceRecord>,
    iterates: Vec<TuckerTensor>,
    last_moved_error: Option<f64>,
}

pub(crate) struct Step {
    pub step: f64,
    pub backtracks: usize,
    pub hosvd_truncations: usize,
    pub event: TraceEvent,
    /// Whether the iterate changed (events that only adjust parameters do
    /// not count towards the relative-change rule).
    pub moved: bool,
}

impl Step {
    pub fn event(event: TraceEvent) -> Self {
        Step { step: 0.0, backtracks: 0, hosvd_truncations: 0, event, moved: false }
    }
}

impl<'a> Recorder<'a> {
    pub fn new(opts: &RunOptions<'a>) -> Self {
        Recorder {
            opts: *opts,
            start: Instant::now(),
            records: Vec::new(),
            iterates: Vec::new(),
            last_moved_error: None,
        }
    }

    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    /// Appends a record and applies the stopping rules in the order
    /// train tolerance, relative change, iteration cap, time budget.
    pub fn record(&mut self, x: &TuckerTensor, f: f64, train_error: f64, st: Step) -> Option<StopReason> {
        let exact_rank = x.exact_rank(TRACE_RANK_TOL).0;
        let rec = TraceRecord {
            iter: self.records.len(),
            f,
            train_error,
            test_error: self.opts.test_error.map(|t| t(x)),
            rank: x.rank().0,
            exact_rank,
            step: st.step,
            backtracks: st.backtracks,
            hosvd_truncations: st.hosvd_truncations,
            event: st.event,
            elapsed: self.start.elapsed().as_secs_f64(),
        };
        self.records.push(rec);
        if self.opts.record_iterates {
            self.iterates.push(x.clone());
        }
        let s = &self.opts.stops;
        if train_error <= s.train_tol {
            return Some(StopReason::TrainTol);
        }
        if st.moved || self.records.len() == 1 {
            if let Some(prev) = self.last_moved_error {
                if prev > 0.0 && ((prev - train_error) / prev).abs() < s.rel_change_tol {
                    return Some(StopReason::RelChange);
                }
            }
            self.last_moved_error = Some(train_error);
        }
        if self.iterations() >= s.max_iters {
            return Some(StopReason::MaxIters);
        }
        if let Some(b) = s.time_budget {
            if self.start.elapsed().as_secs_f64() >= b {
                return Some(StopReason::TimeBudget);
            }
        }
        None
    }

    pub fn finish(self, x: TuckerTensor, stop: StopReason) -> SolverOutput {
        SolverOutput { x, trace: SolverTrace { records: self.records, stop }, iterates: self.iterates }
    }
}
