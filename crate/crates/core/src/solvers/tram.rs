//! TRAM: fixed-rank Riemannian line search interleaved with rank decrease
//! (on detected deficiency) and rank increase along a normal direction.

use serde::{Deserialize, Serialize};

use super::grap::{initial_step, prepare_start, settle};
use super::{
    armijo, Accepted, LineSearchConfig, LineSearchOutcome, Recorder, RunOptions, SolverOutput, Step,
    StopReason, TraceEvent,
};
use crate::error::{Error, Result};
use crate::geometry::{
    normal_increase_direction, proj_tangent_space, retract_hosvd, Ambient, ConeBasisChoice,
};
use crate::objectives::Objective;
use crate::tucker::{hosvd_tucker, TuckerRank, TuckerTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TramVariant {
    /// Restarts along `-grad f` when the Riemannian gradient is small
    /// relative to the Euclidean one, and requires both increase tests.
    Paper,
    /// Increases rank on the normal-size test alone and otherwise tightens
    /// the inner tolerance.
    PracticalFlowchart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TramConfig {
    pub line_search: LineSearchConfig,
    pub choice: ConeBasisChoice,
    pub eps_r0: f64,
    pub rho_r: f64,
    pub delta: f64,
    pub rho_1: f64,
    /// Rank increment; `None` means one per mode.
    pub ell: Option<TuckerRank>,
    pub eps_1: f64,
    pub eps_2: f64,
    pub inner_max_iters: usize,
    pub variant: TramVariant,
}

impl Default for TramConfig {
    fn default() -> Self {
        TramConfig {
            line_search: LineSearchConfig::default(),
            choice: ConeBasisChoice::default(),
            eps_r0: 0.1,
            rho_r: 0.5,
            delta: 0.01,
            rho_1: 0.5,
            ell: None,
            eps_1: 0.01,
            eps_2: 0.5,
            inner_max_iters: 5,
            variant: TramVariant::PracticalFlowchart,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RgdStatus {
    /// `min_k sigma_min / sigma_max` of the core unfoldings fell to `delta`.
    Deficient,
    /// Riemannian gradient norm at most `eps_r`.
    Stationary,
    /// Inner iteration budget used up.
    Budget,
    LineSearchFailed,
    /// A global stopping rule fired.
    Stopped(StopReason),
}

struct State<G> {
    x: TuckerTensor,
    f: f64,
    g: G,
    prev_step: f64,
    tnorm: f64,
}

#[allow(clippy::too_many_arguments)]
fn rgd_inner<O: Objective>(
    obj: &O,
    st: &mut State<O::Grad>,
    eps_r: f64,
    delta: f64,
    inner_max: usize,
    ls: &LineSearchConfig,
    rec: &mut Recorder,
    detect: bool,
) -> Result<RgdStatus> {
    let mut i = 0;
    loop {
        if detect && st.x.min_core_sigma_ratio() <= delta {
            return Ok(RgdStatus::Deficient);
        }
        let t = proj_tangent_space(&st.x, &st.g)?;
        let tn = t.norm(&st.x);
        st.tnorm = tn;
        if tn <= eps_r {
            return Ok(RgdStatus::Stationary);
        }
        if i >= inner_max {
            return Ok(RgdStatus::Budget);
        }
        let rank = st.x.rank();
        let dir = t.into_cone(&st.x);
        let x = &st.x;
        let g = &st.g;
        let mut truncations = 0;
        let s0 = initial_step(ls.initial, st.prev_step, || obj.exact_step(x, &dir.low_rank_form(x), g))?;
        let out = armijo(st.f, tn * tn, s0, ls, |s| {
            truncations += 1;
            let c = retract_hosvd(x, &dir, s, &rank)?;
            let (fc, gc) = obj.evaluate(&c)?;
            Ok(((c, gc), fc))
        })?;
        let a = match out {
            LineSearchOutcome::Accepted(a) => a,
            LineSearchOutcome::Failed { .. } => return Ok(RgdStatus::LineSearchFailed),
        };
        let ((c, gc), fc) = (a.value, a.f);
        (st.x, st.f, st.g) = settle(obj, c, fc, gc)?;
        st.prev_step = a.step;
        let step = Step {
            step: a.step,
            backtracks: a.backtracks,
            hosvd_truncations: truncations,
            event: TraceEvent::None,
            moved: true,
        };
        if let Some(stop) = rec.record(&st.x, st.f, obj.train_error(st.f), step) {
            return Ok(RgdStatus::Stopped(stop));
        }
        i += 1;
    }
}

/// Riemannian gradient descent on the fixed-rank manifold through `x0`,
/// stopping on rank deficiency, `eps_r`-stationarity or the inner budget.
pub fn rgd_fixed_rank<O: Objective>(
    obj: &O,
    x0: &TuckerTensor,
    eps_r: f64,
    delta: f64,
    inner_max_iters: usize,
    ls: &LineSearchConfig,
    opts: &RunOptions,
) -> Result<(SolverOutput, RgdStatus)> {
    let x = prepare_start(x0, &x0.rank())?;
    let (f, g) = obj.evaluate(&x)?;
    let mut rec = Recorder::new(opts);
    let mut st = State { x, f, g, prev_step: 1.0, tnorm: f64::NAN };
    if let Some(stop) = rec.record(&st.x, st.f, obj.train_error(st.f), Step::event(TraceEvent::None)) {
        return Ok((rec.finish(st.x, stop), RgdStatus::Stopped(stop)));
    }
    let status = rgd_inner(obj, &mut st, eps_r, delta, inner_max_iters, ls, &mut rec, true)?;
    let stop = match status {
        RgdStatus::Stopped(s) => s,
        RgdStatus::LineSearchFailed => StopReason::LineSearchFailed,
        RgdStatus::Stationary => StopReason::Stationary,
        RgdStatus::Deficient => StopReason::RankStalled,
        RgdStatus::Budget => StopReason::MaxIters,
    };
    Ok((rec.finish(st.x, stop), status))
}

/// Result of [`rank_decrease`].
#[derive(Debug, Clone)]
pub struct RankDecrease {
    pub x: TuckerTensor,
    pub f: f64,
    pub truncations: usize,
}

/// Truncates each mode to `#{sigma_i >= delta * sigma_1}` core directions
/// (at least one), shrinking `delta` by `rho_1` until the objective does not
/// increase. Returns `x` unchanged once the count equals the current rank.
pub fn rank_decrease<O: Objective>(
    obj: &O,
    x: &TuckerTensor,
    f: f64,
    delta: f64,
    rho_1: f64,
) -> Result<RankDecrease> {
    let sig: Vec<Vec<f64>> = (0..x.order()).map(|k| x.core_singular_values(k)).collect::<Result<_>>()?;
    let mut dl = delta;
    let mut truncations = 0;
    loop {
        let rhat =
            TuckerRank(sig.iter().map(|s| s.iter().filter(|&&v| v >= dl * s[0]).count().max(1)).collect());
        if rhat == x.rank() || dl < 1e-300 {
            return Ok(RankDecrease { x: x.clone(), f, truncations });
        }
        truncations += 1;
        let xh = hosvd_tucker(x, &rhat)?;
        let fh = obj.value(&xh)?;
        if fh <= f {
            return Ok(RankDecrease { x: xh, f: fh, truncations });
        }
        dl *= rho_1;
    }
}

/// Armijo search along the normal direction; `X + s N` is assembled with
/// factors `[U_k U_{k,1}]` and a block-diagonal core, so no truncation is
/// needed.
#[allow(clippy::too_many_arguments)]
pub fn rank_increase<O: Objective>(
    obj: &O,
    x: &TuckerTensor,
    f: f64,
    neg_grad: &O::Grad,
    ell: &TuckerRank,
    r: &TuckerRank,
    ls: &LineSearchConfig,
    choice: ConeBasisChoice,
) -> Result<LineSearchOutcome<(TuckerTensor, O::Grad)>> {
    let n = normal_increase_direction(x, neg_grad, ell, r, choice)?;
    let nn = n.norm();
    if nn == 0.0 {
        return Err(Error::RankIncreaseIneffective);
    }
    let s0 = initial_step(ls.initial, 1.0, || obj.exact_step(x, &n.low_rank_form(), neg_grad))?;
    armijo(f, nn * nn, s0, ls, |s| {
        let c = n.merged(x, s);
        let (fc, gc) = obj.evaluate(&c)?;
        Ok(((c, gc), fc))
    })
}

/// TRAM on `M_{<= r}`.
pub fn tram_solve<O: Objective>(
    obj: &O,
    x0: &TuckerTensor,
    r: &TuckerRank,
    cfg: &TramConfig,
    opts: &RunOptions,
) -> Result<SolverOutput> {
    let x = prepare_start(x0, r)?;
    let (f, g) = obj.evaluate(&x)?;
    let mut rec = Recorder::new(opts);
    let mut st = State { x, f, g, prev_step: 1.0, tnorm: f64::NAN };
    if let Some(stop) = rec.record(&st.x, st.f, obj.train_error(st.f), Step::event(TraceEvent::None)) {
        return Ok(rec.finish(st.x, stop));
    }
    let ell = cfg.ell.clone().unwrap_or_else(|| TuckerRank::uniform(r.order(), 1));
    let ls = cfg.line_search;
    let mut eps_r = cfg.eps_r0;
    // Set after a rejected decrease: the next inner run skips the deficiency
    // test so the flowchart's return to line search cannot loop in place.
    let mut detect = true;
    loop {
        let status = rgd_inner(obj, &mut st, eps_r, cfg.delta, cfg.inner_max_iters, &ls, &mut rec, detect)?;
        detect = true;
        let (event, stepinfo) = match status {
            RgdStatus::Stopped(stop) => return Ok(rec.finish(st.x, stop)),
            RgdStatus::LineSearchFailed => return Ok(rec.finish(st.x, StopReason::LineSearchFailed)),
            RgdStatus::Deficient => {
                let dec = rank_decrease(obj, &st.x, st.f, cfg.delta, cfg.rho_1)?;
                if dec.x.rank() == st.x.rank() {
                    let s = Step {
                        hosvd_truncations: dec.truncations,
                        ..Step::event(TraceEvent::DeficiencyDetected)
                    };
                    if cfg.variant == TramVariant::Paper {
                        rec.record(&st.x, st.f, obj.train_error(st.f), s);
                        return Ok(rec.finish(st.x, StopReason::RankStalled));
                    }
                    detect = false;
                    if let Some(stop) = rec.record(&st.x, st.f, obj.train_error(st.f), s) {
                        return Ok(rec.finish(st.x, stop));
                    }
                    continue;
                }
                let (fx, gx) = obj.evaluate(&dec.x)?;
                debug_assert_eq!(fx, dec.f);
                st.x = dec.x;
                st.f = fx;
                st.g = gx;
                (
                    TraceEvent::RankDecrease,
                    Step {
                        hosvd_truncations: dec.truncations,
                        moved: true,
                        ..Step::event(TraceEvent::RankDecrease)
                    },
                )
            }
            RgdStatus::Stationary | RgdStatus::Budget => {
                if st.x.rank() == *r {
                    eps_r *= cfg.rho_r;
                    (TraceEvent::TightenEpsR, Step::event(TraceEvent::TightenEpsR))
                } else {
                    match outer_step(obj, &mut st, r, &ell, cfg)? {
                        Some(step) => (step.event, step),
                        None => {
                            eps_r *= cfg.rho_r;
                            (TraceEvent::TightenEpsR, Step::event(TraceEvent::TightenEpsR))
                        }
                    }
                }
            }
        };
        debug_assert_eq!(event, stepinfo.event);
        if let Some(stop) = rec.record(&st.x, st.f, obj.train_error(st.f), stepinfo) {
            return Ok(rec.finish(st.x, stop));
        }
    }
}

/// Rank increase or restart at an `eps_r`-stationary point below the bound.
/// `None` means neither applies and the inner tolerance should be tightened.
fn outer_step<O: Objective>(
    obj: &O,
    st: &mut State<O::Grad>,
    r: &TuckerRank,
    ell: &TuckerRank,
    cfg: &TramConfig,
) -> Result<Option<Step>> {
    let ls = cfg.line_search;
    let tn = st.tnorm;
    let gn = st.g.fro_norm();
    let n = normal_increase_direction(&st.x, &st.g, ell, r, cfg.choice)?;
    let second = match cfg.variant {
        TramVariant::Paper => cfg.eps_2 * gn <= tn,
        TramVariant::PracticalFlowchart => true,
    };
    if n.norm() > 0.0 && n.norm() >= cfg.eps_1 * tn && second {
        match rank_increase(obj, &st.x, st.f, &st.g, ell, r, &ls, cfg.choice) {
            Ok(LineSearchOutcome::Accepted(Accepted { value: (c, gc), f, step, backtracks })) => {
                // An increase that the next inner run would flag as deficient
                // only feeds a decrease/increase cycle; tighten instead.
                if cfg.variant == TramVariant::PracticalFlowchart && c.min_core_sigma_ratio() <= cfg.delta {
                    return Ok(None);
                }
                (st.x, st.f, st.g) = settle(obj, c, f, gc)?;
                return Ok(Some(Step {
                    step,
                    backtracks,
                    hosvd_truncations: 0,
                    event: TraceEvent::RankIncrease,
                    moved: true,
                }));
            }
            Ok(LineSearchOutcome::Failed { .. }) | Err(Error::RankIncreaseIneffective) => return Ok(None),
            Err(e) => return Err(e),
        }
    }
    if cfg.variant == TramVariant::Paper && cfg.eps_2 * gn > tn {
        let s0 = initial_step(ls.initial, st.prev_step, || obj.exact_step_neg_grad(&st.g))?;
        let mut truncations = 0;
        let (x, g) = (&st.x, &st.g);
        let out = armijo(st.f, gn * gn, s0, &ls, |s| {
            truncations += 1;
            let c = g.retract_sum(x, s, r)?;
            let (fc, gc) = obj.evaluate(&c)?;
            Ok(((c, gc), fc))
        })?;
        if let LineSearchOutcome::Accepted(a) = out {
            let ((c, gc), fc) = (a.value, a.f);
            (st.x, st.f, st.g) = settle(obj, c, fc, gc)?;
            st.prev_step = a.step;
            return Ok(Some(Step {
                step: a.step,
                backtracks: a.backtracks,
                hosvd_truncations: truncations,
                event: TraceEvent::Restart,
                moved: true,
            }));
        }
    }
    Ok(None)
}
