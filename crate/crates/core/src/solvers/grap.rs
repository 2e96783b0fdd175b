//! GRAP: projected line search along the approximate cone projection with
//! HOSVD retraction, and its retraction-free variant that moves along a
//! single partial projection.

use serde::{Deserialize, Serialize};

use super::{
    armijo, InitialStep, LineSearchConfig, LineSearchOutcome, Recorder, RunOptions, SolverOutput, Step,
    StopReason, TraceEvent, REVEAL_TOL,
};
use crate::error::{Error, Result};
use crate::geometry::{
    approx_proj_cone, argmax_block, partial_projections, retract_hosvd, Ambient, ConeBasisChoice,
    TangentConeElement,
};
use crate::matkernels::qr_thin;
use crate::objectives::Objective;
use crate::tenalg::{DenseTensor, Shape};
use crate::tucker::{concat_cols, embed_add, TuckerRank, TuckerTensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrapConfig {
    /// Angle-condition constant; a restart along `-grad f` is taken when the
    /// projected direction is shorter than `omega` times the stationarity
    /// measure.
    pub omega: f64,
    pub line_search: LineSearchConfig,
    pub choice: ConeBasisChoice,
}

impl Default for GrapConfig {
    fn default() -> Self {
        GrapConfig {
            omega: 0.1,
            line_search: LineSearchConfig::default(),
            choice: ConeBasisChoice::default(),
        }
    }
}

pub(crate) fn initial_step(
    policy: InitialStep,
    prev: f64,
    exact: impl FnOnce() -> Result<f64>,
) -> Result<f64> {
    match policy {
        InitialStep::Constant(c) => Ok(c),
        InitialStep::PreviousStep => Ok(prev),
        InitialStep::ExactQuadratic => match exact() {
            Ok(s) => Ok(s),
            Err(Error::ZeroDirection) => Ok(1.0),
            Err(e) => Err(e),
        },
    }
}

pub(crate) fn prepare_start(x0: &TuckerTensor, r: &TuckerRank) -> Result<TuckerTensor> {
    r.validate_for(&x0.shape())?;
    let x = x0.rank_revealed(REVEAL_TOL);
    if !x.rank().le(r) {
        return Err(Error::InvalidRank(format!("initial rank {} exceeds bound {r}", x.rank())));
    }
    if x.core().fro_norm() == 0.0 {
        return Err(Error::ZeroBasePoint);
    }
    Ok(x)
}

/// Drops numerically zero directions from an accepted candidate and
/// re-evaluates only if the representation changed.
pub(crate) fn settle<O: Objective>(
    obj: &O,
    cand: TuckerTensor,
    f: f64,
    g: O::Grad,
) -> Result<(TuckerTensor, f64, O::Grad)> {
    let revealed = cand.rank_revealed(REVEAL_TOL);
    if revealed.rank() == cand.rank() {
        return Ok((cand, f, g));
    }
    let (f2, g2) = obj.evaluate(&revealed)?;
    Ok((revealed, f2, g2))
}

/// GRAP on `M_{<= r}`.
pub fn grap_solve<O: Objective>(
    obj: &O,
    x0: &TuckerTensor,
    r: &TuckerRank,
    cfg: &GrapConfig,
    opts: &RunOptions,
) -> Result<SolverOutput> {
    let mut x = prepare_start(x0, r)?;
    let (mut f, mut g) = obj.evaluate(&x)?;
    let mut rec = Recorder::new(opts);
    if let Some(stop) = rec.record(&x, f, obj.train_error(f), Step::event(TraceEvent::None)) {
        return Ok(rec.finish(x, stop));
    }
    let ls = cfg.line_search;
    let mut prev_step = 1.0;
    loop {
        let full = x.rank() == *r;
        let dir = approx_proj_cone(&x, &g, r, cfg.choice)?;
        let gn = dir.norm(&x);
        let measure = if full { gn } else { g.fro_norm() };
        if measure == 0.0 {
            return Ok(rec.finish(x, StopReason::Stationary));
        }
        let restart = !full && gn < cfg.omega * measure;
        let mut truncations = 0;
        let outcome = if !restart {
            let s0 = initial_step(ls.initial, prev_step, || obj.exact_step(&x, &dir.low_rank_form(&x), &g))?;
            armijo(f, gn * gn, s0, &ls, |s| {
                truncations += 1;
                let c = retract_hosvd(&x, &dir, s, r)?;
                let (fc, gc) = obj.evaluate(&c)?;
                Ok(((c, gc), fc))
            })?
        } else {
            let gnorm = g.fro_norm();
            let s0 = initial_step(ls.initial, prev_step, || obj.exact_step_neg_grad(&g))?;
            armijo(f, gnorm * gnorm, s0, &ls, |s| {
                truncations += 1;
                let c = g.retract_sum(&x, s, r)?;
                let (fc, gc) = obj.evaluate(&c)?;
                Ok(((c, gc), fc))
            })?
        };
        let a = match outcome {
            LineSearchOutcome::Accepted(a) => a,
            LineSearchOutcome::Failed { .. } => return Ok(rec.finish(x, StopReason::LineSearchFailed)),
        };
        let ((c, gc), fc) = (a.value, a.f);
        (x, f, g) = settle(obj, c, fc, gc)?;
        prev_step = a.step;
        let st = Step {
            step: a.step,
            backtracks: a.backtracks,
            hosvd_truncations: truncations,
            event: if restart { TraceEvent::Restart } else { TraceEvent::None },
            moved: true,
        };
        if let Some(stop) = rec.record(&x, f, obj.train_error(f), st) {
            return Ok(rec.finish(x, stop));
        }
    }
}

/// `X + s P_k` without truncation: the core block keeps the factors
/// `[U_k U1_k]`, a factor block re-orthonormalizes one factor.
pub(crate) fn block_step(x: &TuckerTensor, block: &TangentConeElement, k: usize, s: f64) -> TuckerTensor {
    let d = x.order();
    if k == 0 {
        let mut core = DenseTensor::zeros(Shape::new(block.bound.dims().to_vec()).expect("positive"));
        embed_add(&mut core, x.core(), &vec![0; d], 1.0);
        core.axpy(s, &block.c).expect("bound-shaped core");
        let factors = (0..d).map(|j| concat_cols(&[x.factor(j), &block.u1[j]])).collect();
        TuckerTensor::from_parts(core, factors)
    } else {
        let m = k - 1;
        let moved = x.factor(m) + &block.y[m] * s;
        let (q, r) = qr_thin(&moved);
        let core = x.core().mode_product(m, &r).expect("valid mode");
        let mut factors = x.factors().to_vec();
        factors[m] = q;
        TuckerTensor::from_parts(core, factors)
    }
}

/// Retraction-free GRAP: each non-restart step moves along the largest
/// partial projection and never truncates.
pub fn rfgrap_solve<O: Objective>(
    obj: &O,
    x0: &TuckerTensor,
    r: &TuckerRank,
    cfg: &GrapConfig,
    opts: &RunOptions,
) -> Result<SolverOutput> {
    let mut x = prepare_start(x0, r)?;
    let (mut f, mut g) = obj.evaluate(&x)?;
    let mut rec = Recorder::new(opts);
    if let Some(stop) = rec.record(&x, f, obj.train_error(f), Step::event(TraceEvent::None)) {
        return Ok(rec.finish(x, stop));
    }
    let ls = cfg.line_search;
    let mut prev_step = 1.0;
    loop {
        let full = x.rank() == *r;
        let blocks = partial_projections(&x, &g, r, cfg.choice)?;
        let (k, best) = argmax_block(&x, &blocks);
        let measure =
            if full { blocks.iter().map(|b| b.norm(&x).powi(2)).sum::<f64>().sqrt() } else { g.fro_norm() };
        if measure == 0.0 {
            return Ok(rec.finish(x, StopReason::Stationary));
        }
        let restart = best < cfg.omega * measure;
        let mut truncations = 0;
        let outcome = if !restart {
            let blk = &blocks[k];
            let s0 = initial_step(ls.initial, prev_step, || obj.exact_step(&x, &blk.low_rank_form(&x), &g))?;
            armijo(f, best * best, s0, &ls, |s| {
                let c = block_step(&x, blk, k, s);
                let (fc, gc) = obj.evaluate(&c)?;
                Ok(((c, gc), fc))
            })?
        } else {
            let gnorm = g.fro_norm();
            let s0 = initial_step(ls.initial, prev_step, || obj.exact_step_neg_grad(&g))?;
            armijo(f, gnorm * gnorm, s0, &ls, |s| {
                truncations += 1;
                let c = g.retract_sum(&x, s, r)?;
                let (fc, gc) = obj.evaluate(&c)?;
                Ok(((c, gc), fc))
            })?
        };
        let a = match outcome {
            LineSearchOutcome::Accepted(a) => a,
            LineSearchOutcome::Failed { .. } => return Ok(rec.finish(x, StopReason::LineSearchFailed)),
        };
        let ((c, gc), fc) = (a.value, a.f);
        (x, f, g) = settle(obj, c, fc, gc)?;
        prev_step = a.step;
        let st = Step {
            step: a.step,
            backtracks: a.backtracks,
            hosvd_truncations: truncations,
            event: if restart { TraceEvent::Restart } else { TraceEvent::None },
            moved: true,
        };
        if let Some(stop) = rec.record(&x, f, obj.train_error(f), st) {
            return Ok(rec.finish(x, stop));
        }
    }
}
